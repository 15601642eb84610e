"""Directed co-purchase statistics and the final complementarity graph.

Counts are taken over ordered within-user pairs (earlier purchase i, later
purchase j) at most ``kappa`` steps apart, each pair weighted by a decreasing
function of the gap. The item-level and category-level counts are
row-normalized, mixed with weight ``alpha`` on the category side, and
multiplied entrywise with the projected item graph.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .dataset import InteractionLog
from .errors import ConfigError, DimensionMismatch
from .sparse import canonical, row_ids

STEPS = "steps"
DAYS = "days"

TIES_SEQUENCE = "sequence"
TIES_BIDIRECTIONAL = "bidirectional"

SECONDS_PER_DAY = 86400

AGGREGATIONS = ("inv", "inv2", "exp", "const", "linear", "invlog", "gauss")


@dataclass(frozen=True)
class AggregationFunction:
    """Weight given to a later purchase ``delta`` steps after the query purchase.

    ``inv`` (1/delta) is the default; ``exp`` and ``gauss`` decay with
    ``scale``; ``linear`` falls from 1 at delta=1 to 1/kappa at delta=kappa.
    """

    kind: str = "inv"
    scale: float = 1.0

    def __post_init__(self):
        if self.kind not in AGGREGATIONS:
            raise ConfigError(f"unknown aggregation {self.kind!r}; choose from {AGGREGATIONS}")
        if not self.scale > 0:
            raise ConfigError("aggregation scale must be positive")

    def weight(self, delta, kappa: int):
        d = np.asarray(delta, dtype=np.float64)
        if self.kind == "inv":
            return 1.0 / d
        if self.kind == "inv2":
            return 1.0 / (d * d)
        if self.kind == "exp":
            return np.exp(-(d - 1.0) / self.scale)
        if self.kind == "const":
            return np.ones_like(d)
        if self.kind == "linear":
            return (kappa + 1.0 - d) / kappa
        if self.kind == "invlog":
            return 1.0 / np.log2(d + 1.0)
        return np.exp(-0.5 * ((d - 1.0) / self.scale) ** 2)

    def to_dict(self):
        return {"kind": self.kind, "scale": self.scale}

    @classmethod
    def from_dict(cls, d):
        return cls(d["kind"], d.get("scale", 1.0))


@dataclass(frozen=True)
class DirectionalityParams:
    kappa: int = 4
    alpha: float = 1.0
    aggregation: AggregationFunction = AggregationFunction()
    delta_mode: str = STEPS
    tie_mode: str = TIES_SEQUENCE

    def __post_init__(self):
        _check_kappa(self.kappa)
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"alpha must lie in [0, 1], got {self.alpha}")
        _check_modes(self.delta_mode, self.tie_mode)


def _check_kappa(kappa):
    if isinstance(kappa, bool) or int(kappa) != kappa or kappa < 1:
        raise ConfigError(f"kappa must be a positive integer, got {kappa!r}")


def _check_modes(delta_mode, tie_mode):
    if delta_mode not in (STEPS, DAYS):
        raise ConfigError(f"unknown delta mode {delta_mode!r}")
    if tie_mode not in (TIES_SEQUENCE, TIES_BIDIRECTIONAL):
        raise ConfigError(f"unknown tie mode {tie_mode!r}")


def ordered_pairs(log: InteractionLog, kappa: int, agg: AggregationFunction,
                  delta_mode: str = STEPS, tie_mode: str = TIES_SEQUENCE):
    """Weighted ``(earlier_item, later_item, weight)`` arrays over all in-window pairs.

    In ``steps`` mode the gap is the distance in sequence positions; in
    ``days`` mode it is ``1 + floor(seconds / 86400)`` so same-day pairs get
    gap 1. Pairs of the same item are skipped. With ``bidirectional`` ties,
    a pair sharing a timestamp contributes gap 1 in both directions instead
    of following the sequence order.
    """
    _check_kappa(kappa)
    _check_modes(delta_mode, tie_mode)
    user, item, ts = log.user, log.item, log.timestamp
    src, dst, wts = [], [], []
    d = 0
    while True:
        d += 1
        if d >= len(user):
            break
        same = user[:-d] == user[d:]
        if delta_mode == STEPS:
            if d > kappa:
                break
            gap = np.full(same.shape, d, dtype=np.int64)
        else:
            gap = 1 + (ts[d:] - ts[:-d]) // SECONDS_PER_DAY
            same &= gap <= kappa
        if not same.any():
            break  # gaps only grow with d, so no later offset qualifies either
        keep = same & (item[:-d] != item[d:])
        a, b, g = item[:-d][keep], item[d:][keep], gap[keep]
        if tie_mode == TIES_BIDIRECTIONAL:
            tie = ts[:-d][keep] == ts[d:][keep]
            g = np.where(tie, 1, g)
            src.append(b[tie])
            dst.append(a[tie])
            wts.append(agg.weight(np.ones(int(tie.sum())), kappa))
        src.append(a)
        dst.append(b)
        wts.append(agg.weight(g, kappa))
    if not src:
        empty = np.zeros(0, dtype=np.int64)
        return empty, empty, np.zeros(0)
    return np.concatenate(src), np.concatenate(dst), np.concatenate(wts)


def _count_matrix(rows, cols, weights, n):
    return canonical(sp.coo_matrix((weights, (rows, cols)), shape=(n, n)))


def item_co_counts(log: InteractionLog, kappa: int, agg: AggregationFunction | None = None,
                   delta_mode: str = STEPS, tie_mode: str = TIES_SEQUENCE) -> sp.csr_matrix:
    """|V| x |V| gap-weighted counts of item j following item i within ``kappa``."""
    agg = agg or AggregationFunction()
    a, b, w = ordered_pairs(log, kappa, agg, delta_mode, tie_mode)
    return _count_matrix(a, b, w, log.n_items)


def category_co_counts(log: InteractionLog, kappa: int, agg: AggregationFunction | None = None,
                       delta_mode: str = STEPS, tie_mode: str = TIES_SEQUENCE) -> sp.csr_matrix:
    """Same pair stream as :func:`item_co_counts`, mapped to category indices.

    Two distinct items of one category count on the diagonal.
    """
    agg = agg or AggregationFunction()
    a, b, w = ordered_pairs(log, kappa, agg, delta_mode, tie_mode)
    cat = log.item_category
    return _count_matrix(cat[a], cat[b], w, log.n_categories)


def row_normalize(m) -> sp.csr_matrix:
    m = canonical(m)
    sums = np.asarray(m.sum(axis=1)).ravel()
    counts = np.diff(m.indptr)
    m.data = m.data / np.repeat(sums, counts)
    return m


def lift_category_matrix(cc_norm, item_category, pattern) -> sp.csr_matrix:
    """Evaluate ``cc_norm[cat(i), cat(j)]`` on the nonzero pattern of ``pattern``.

    Items with an out-of-range category fall back to the unknown category 0.
    """
    pattern = canonical(pattern)
    cats = np.asarray(item_category, dtype=np.int64)
    n_cat = cc_norm.shape[0]
    cats = np.where((cats >= 0) & (cats < n_cat), cats, 0)
    rows = row_ids(pattern)
    ci, cj = cats[rows], cats[pattern.indices]
    if n_cat * n_cat <= 25_000_000:
        vals = cc_norm.toarray()[ci, cj]
    else:
        vals = np.asarray(sp.csr_matrix(cc_norm)[ci, cj]).ravel()
    out = sp.csr_matrix((vals, pattern.indices.copy(), pattern.indptr.copy()),
                        shape=pattern.shape)
    out.eliminate_zeros()
    return out


def combine(w_v, ci_norm, cc_lifted, alpha: float) -> sp.csr_matrix:
    """``w_v * ((1 - alpha) * ci_norm + alpha * cc_lifted)`` entrywise."""
    if not 0.0 <= alpha <= 1.0:
        raise ConfigError(f"alpha must lie in [0, 1], got {alpha}")
    if not (w_v.shape == ci_norm.shape == cc_lifted.shape) or w_v.shape[0] != w_v.shape[1]:
        raise DimensionMismatch(
            f"combine needs equal square shapes: {w_v.shape}, {ci_norm.shape}, {cc_lifted.shape}")
    if alpha == 0.0:
        mix = canonical(ci_norm)
    elif alpha == 1.0:
        mix = canonical(cc_lifted)
    else:
        mix = canonical((1.0 - alpha) * canonical(ci_norm) + alpha * canonical(cc_lifted))
    return canonical(canonical(w_v).multiply(mix))
