"""Ranking metrics, protocol-aware evaluation, grid search and ablations."""

from __future__ import annotations

import io
import itertools
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .dataset import (
    RANDOM,
    SEQUENTIAL,
    DatasetSplit,
    InteractionLog,
    SplitSpec,
    k_core_filter,
    shuffle_timestamp_ties,
    split,
)
from .directionality import AGGREGATIONS, AggregationFunction
from .errors import ConfigError, CopgraphError, UnknownItemError
from .model import (
    AffinityIndex,
    ComplementarityModel,
    EmbeddingTable,
    ModelBuilder,
    ModelParams,
    build_model,
    recommend,
    recommend_cold_start,
)

logger = logging.getLogger(__name__)

PROTOCOL_SEQUENTIAL = "sequential"
PROTOCOL_GRAPH = "graph"
_PROTOCOL_SPLIT = {PROTOCOL_SEQUENTIAL: SEQUENTIAL, PROTOCOL_GRAPH: RANDOM}


def recall_at_k(ranked, targets, k: int) -> float:
    targets = set(targets)
    if not targets:
        raise ValueError("recall needs at least one target")
    return len(targets.intersection(ranked[:k])) / len(targets)


def ndcg_at_k(ranked, targets, k: int) -> float:
    """Binary-relevance NDCG with the ideal DCG truncated at ``min(k, |targets|)``."""
    targets = set(targets)
    if not targets:
        raise ValueError("ndcg needs at least one target")
    dcg = sum(1.0 / math.log2(p + 2) for p, item in enumerate(ranked[:k]) if item in targets)
    idcg = sum(1.0 / math.log2(p + 2) for p in range(min(k, len(targets))))
    return dcg / idcg


@dataclass(frozen=True)
class EvalConfig:
    cutoffs: tuple = (5, 10)
    protocol: str = PROTOCOL_SEQUENTIAL

    def __post_init__(self):
        cut = tuple(int(c) for c in self.cutoffs)
        if not cut or any(c < 1 for c in cut) or list(cut) != sorted(set(cut)):
            raise ConfigError("cutoffs must be distinct positive integers in ascending order")
        object.__setattr__(self, "cutoffs", cut)
        if self.protocol not in _PROTOCOL_SPLIT:
            raise ConfigError(f"unknown protocol {self.protocol!r}")

    def split_spec(self, seed: int = 0) -> SplitSpec:
        return SplitSpec(mode=_PROTOCOL_SPLIT[self.protocol], seed=seed)


@dataclass
class EvalReport:
    recall: dict
    ndcg: dict
    n_evaluated: int
    n_skipped: int
    params: ModelParams | None = None

    def metric(self, name: str) -> float:
        """Look up ``"ndcg@5"`` style names."""
        kind, _, k = name.lower().partition("@")
        table = {"ndcg": self.ndcg, "recall": self.recall}.get(kind)
        if table is None or not k.isdigit() or int(k) not in table:
            raise ConfigError(f"unknown metric {name!r}")
        return table[int(k)]

    def summary(self) -> str:
        lines = [f"recall@{k}={v:.6f}" for k, v in self.recall.items()]
        lines += [f"ndcg@{k}={v:.6f}" for k, v in self.ndcg.items()]
        lines += [f"n_evaluated={self.n_evaluated}", f"n_skipped={self.n_skipped}"]
        if self.params is not None:
            p = self.params
            lines += [f"alpha={p.alpha}", f"lambda={p.lam}", f"kappa={p.kappa}"]
        return "\n".join(lines) + "\n"


def mean_report(reports, params=None) -> EvalReport:
    reports = list(reports)
    ks = reports[0].recall.keys()
    return EvalReport(
        {k: float(np.mean([r.recall[k] for r in reports])) for k in ks},
        {k: float(np.mean([r.ndcg[k] for r in reports])) for k in ks},
        int(round(np.mean([r.n_evaluated for r in reports]))),
        int(round(np.mean([r.n_skipped for r in reports]))),
        params,
    )


def _score(rank_fn, items, targets: dict, queries: dict, cutoffs):
    """Per-user metric rows; a user whose query the ranker rejects scores 0."""
    kmax = max(cutoffs)
    rows = {}
    for u in sorted(targets):
        target_ids = [items[t] for t in targets[u]]
        try:
            ranked = rank_fn(items[queries[u]], kmax)
        except UnknownItemError:
            ranked = None
        if ranked is None:
            rows[u] = (np.zeros(len(cutoffs)), np.zeros(len(cutoffs)), False)
            continue
        rows[u] = (np.array([recall_at_k(ranked, target_ids, k) for k in cutoffs]),
                   np.array([ndcg_at_k(ranked, target_ids, k) for k in cutoffs]), True)
    return rows


def _report(rows: dict, cutoffs, params=None, users=None) -> EvalReport:
    users = sorted(rows) if users is None else users
    if users:
        rec = np.mean([rows[u][0] for u in users], axis=0)
        nd = np.mean([rows[u][1] for u in users], axis=0)
    else:
        rec = nd = np.zeros(len(cutoffs))
    n_skip = sum(1 for u in users if not rows[u][2])
    return EvalReport({k: float(v) for k, v in zip(cutoffs, rec)},
                      {k: float(v) for k, v in zip(cutoffs, nd)},
                      len(users) - n_skip, n_skip, params)


def _check_protocol(split_: DatasetSplit, config: EvalConfig):
    if _PROTOCOL_SPLIT[config.protocol] != split_.mode:
        raise ConfigError(f"protocol {config.protocol!r} does not match a {split_.mode!r} split")


def evaluate_ranker(rank_fn, split_: DatasetSplit, config: EvalConfig,
                    part: str = "test", params=None) -> EvalReport:
    """Evaluate any ``rank_fn(query_id, k) -> [item_id, ...]``.

    ``rank_fn`` may raise :class:`UnknownItemError`; such users score 0 and
    are counted in ``n_skipped``.
    """
    _check_protocol(split_, config)
    targets, queries = split_.targets(part)
    rows = _score(rank_fn, split_.log.item_ids, targets, queries, config.cutoffs)
    return _report(rows, config.cutoffs, params)


def model_ranker(model: ComplementarityModel):
    return lambda query, k: [iid for iid, _ in recommend(model, query, k)]


def evaluate(model: ComplementarityModel, split_: DatasetSplit, config: EvalConfig,
             part: str = "test") -> EvalReport:
    """Macro-averaged Recall@k / NDCG@k of ``model`` on one split part.

    The model must come from the split's training events (train+validation
    when scoring the test part).
    """
    return evaluate_ranker(model_ranker(model), split_, config, part, model.params)


def popularity_ranker(log: InteractionLog):
    """Baseline ranking every item by interaction count, ignoring the query."""
    counts = np.bincount(log.item, minlength=log.n_items)
    order = np.lexsort((np.arange(log.n_items), -counts))
    order = order[counts[order] > 0]
    ranked = [log.item_ids[i] for i in order]

    def rank(query, k):
        return [iid for iid in ranked[:k + 1] if iid != query][:k]

    return rank


@dataclass(frozen=True)
class GridSpec:
    alphas: tuple = tuple(round(0.1 * i, 1) for i in range(11))
    lambdas: tuple = (1, 2, 3, 4, 5, 6)
    kappas: tuple = (1, 2, 3, 4, 5, 8)
    objective: str = "ndcg@5"

    def __post_init__(self):
        if not (self.alphas and self.lambdas and self.kappas):
            raise ConfigError("grids must be non-empty")
        for a in self.alphas:
            if not 0.0 <= a <= 1.0:
                raise ConfigError(f"alpha {a} outside [0, 1]")
        for v in (*self.lambdas, *self.kappas):
            if int(v) != v or v < 1:
                raise ConfigError(f"lambda/kappa grid value {v} is not a positive integer")

    def points(self):
        for lam, kappa, alpha in itertools.product(sorted(self.lambdas), sorted(self.kappas),
                                                   sorted(self.alphas)):
            yield int(lam), int(kappa), float(alpha)


@dataclass
class GridPoint:
    params: ModelParams
    report: EvalReport | None = None
    error: str | None = None


@dataclass
class GridResult:
    best: ModelParams
    points: list
    objective: str
    model: ComplementarityModel | None = None
    test_report: EvalReport | None = None

    def objective_values(self):
        return [p.report.metric(self.objective) if p.report else float("nan") for p in self.points]


def grid_search(log: InteractionLog, grid: GridSpec, config: EvalConfig,
                base: ModelParams | None = None, seed: int = 0, workers: int = 1,
                split_: DatasetSplit | None = None) -> GridResult:
    """Tune (alpha, lambda, kappa) on validation targets, then refit on train+validation.

    Ties on the objective go to the smaller lambda, then kappa, then alpha.
    A failing grid point is recorded with its error; only an all-failing grid
    raises.
    """
    base = base or ModelParams()
    if split_ is None:
        split_ = split(log, config.split_spec(seed))
    _check_protocol(split_, config)
    builder = ModelBuilder(split_.train)
    points = [GridPoint(base.replace(alpha=a, lam=lam, kappa=kap)) for lam, kap, a in grid.points()]

    def run(point):
        try:
            model = builder.build(point.params)
            point.report = evaluate(model, split_, config, "validation")
        except CopgraphError as exc:
            point.error = f"{type(exc).__name__}: {exc}"
            logger.warning("grid point %s failed: %s", point.params, exc)
        return point

    # Warm the per-lambda and per-kappa caches serially, then mix in parallel.
    for lam in sorted({p.params.lam for p in points}):
        try:
            builder.walk_matrix(lam, base.pruning)
        except CopgraphError:
            pass
    for kap in sorted({p.params.kappa for p in points}):
        builder.co_counts(base.replace(kappa=kap))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(run, points))
    else:
        for p in points:
            run(p)

    ok = [p for p in points if p.report is not None]
    if not ok:
        raise ConfigError("every grid point failed: " + (points[0].error or ""))
    best = min(ok, key=lambda p: (-p.report.metric(grid.objective),
                                  p.params.lam, p.params.kappa, p.params.alpha))
    model = build_model(split_.train_valid, best.params)
    test_report = evaluate(model, split_, config, "test")
    return GridResult(best.params, points, grid.objective, model, test_report)


@dataclass
class AblationRow:
    label: str
    value: object
    report: EvalReport
    per_seed: list = field(default_factory=list)


ABLATIONS = ("aggregation", "lambda", "kcore", "tie_shuffle")


def _fit_and_score(log, params, config, seed):
    sp_ = split(log, config.split_spec(seed))
    model = build_model(sp_.train_valid, params)
    return evaluate(model, sp_, config, "test")


def ablation_sweep(kind: str, log: InteractionLog, params: ModelParams, config: EvalConfig,
                   values=None, seeds=(0, 1, 2, 3, 4), split_seed: int = 0) -> list:
    """Vary one factor with everything else held at ``params``; score the test part.

    ``kcore`` expects an unfiltered ``log`` and applies each threshold to it.
    ``tie_shuffle`` returns the original order, one row per seed, and a mean row.
    """
    kind = kind.lower().replace("-", "_")
    rows = []
    if kind == "aggregation":
        for name in values or AGGREGATIONS:
            p = params.replace(aggregation=AggregationFunction(name))
            rows.append(AblationRow("aggregation", name, _fit_and_score(log, p, config, split_seed)))
    elif kind == "lambda":
        for lam in values or range(1, 9):
            p = params.replace(lam=int(lam))
            rows.append(AblationRow("lambda", int(lam), _fit_and_score(log, p, config, split_seed)))
    elif kind == "kcore":
        for n in values or range(1, 11):
            p = params.replace(min_core=int(n))
            filtered = k_core_filter(log, int(n))
            rows.append(AblationRow("kcore", int(n), _fit_and_score(filtered, p, config, split_seed)))
    elif kind == "tie_shuffle":
        rows.append(AblationRow("tie_shuffle", "original", _fit_and_score(log, params, config, split_seed)))
        per_seed = []
        for s in seeds:
            rep = _fit_and_score(shuffle_timestamp_ties(log, s), params, config, split_seed)
            per_seed.append(rep)
            rows.append(AblationRow("tie_shuffle", f"seed={s}", rep))
        rows.append(AblationRow("tie_shuffle", "mean", mean_report(per_seed, params), per_seed))
    else:
        raise ConfigError(f"unknown ablation {kind!r}; choose from {ABLATIONS}")
    return rows


@dataclass
class ColdStartReport:
    cold_rate: float
    cutoff: int
    plain: dict
    affinity: dict
    n_cold_users: int
    n_warm_users: int

    def summary(self) -> str:
        out = [f"cold_rate={self.cold_rate}", f"cutoff={self.cutoff}",
               f"n_warm_users={self.n_warm_users}", f"n_cold_users={self.n_cold_users}"]
        for name, table in (("plain", self.plain), ("affinity", self.affinity)):
            out += [f"{name}.{grp}.ndcg@{self.cutoff}={v:.6f}" for grp, v in table.items()]
        return "\n".join(out) + "\n"


def cold_start_eval(log: InteractionLog, params: ModelParams, embeddings: EmbeddingTable,
                    cold_rate: float, seed: int = 0, cutoff: int = 5,
                    train_fraction: float = 0.9) -> ColdStartReport:
    """Item cold-start replication: hide a fraction of items from training.

    Each user's events are split at random into train and test by
    ``train_fraction``; ``cold_rate`` of the catalog is then removed from
    train. The query is the item preceding the user's earliest test event, and
    a user counts as cold when that query is a hidden item. Two rankers are
    scored: the plain model, and the model with the embedding-similarity
    fallback for queries it does not know.
    """
    if not 0.0 < cold_rate < 1.0:
        raise ConfigError("cold_rate must be in (0, 1)")
    rng = np.random.default_rng(seed)
    n_cold = max(1, int(round(cold_rate * log.n_items)))
    cold = np.zeros(log.n_items, dtype=bool)
    cold[rng.choice(log.n_items, n_cold, replace=False)] = True

    is_test = np.zeros(log.n_events, dtype=bool)
    targets, queries = {}, {}
    ptr = log.indptr
    for u in range(log.n_users):
        lo, hi = int(ptr[u]), int(ptr[u + 1])
        n = hi - lo
        n_train = math.floor(train_fraction * n + 1e-9)
        if n_train < 1 or n_train == n:
            continue
        pos = np.sort(rng.permutation(n)[n_train:])
        is_test[lo + pos] = True
        with_pred = pos[pos > 0]
        if len(with_pred):
            seq = log.item[lo:hi]
            targets[u] = tuple(dict.fromkeys(int(i) for i in seq[pos]))
            queries[u] = int(seq[with_pred[0] - 1])
    train = log.subset(~is_test & ~cold[log.item])
    model = build_model(train, params)
    index = AffinityIndex(model, embeddings)
    items = log.item_ids

    def plain(query, k):
        return [iid for iid, _ in recommend(model, query, k)]

    cat_of = {items[i]: log.category_ids[c] for i, c in enumerate(log.item_category)}

    def with_affinity(query, k):
        if query in model:
            return plain(query, k)
        return [iid for iid, _ in recommend_cold_start(
            model, query, cat_of[query], embeddings, k, index)]

    cold_users = [u for u in sorted(targets) if cold[queries[u]]]
    warm_users = [u for u in sorted(targets) if not cold[queries[u]]]
    tables = {}
    for name, fn in (("plain", plain), ("affinity", with_affinity)):
        rows = _score(fn, items, targets, queries, (cutoff,))
        tables[name] = {
            grp: _report(rows, (cutoff,), users=us).ndcg[cutoff]
            for grp, us in (("all", sorted(targets)), ("warm", warm_users), ("cold", cold_users))
        }
    return ColdStartReport(cold_rate, cutoff, tables["plain"], tables["affinity"],
                           len(cold_users), len(warm_users))


def report_table(rows, cutoffs) -> str:
    """TSV with one line per (label, value, report) row."""
    buf = io.StringIO()
    head = ["label", "value", "alpha", "lambda", "kappa"]
    head += [f"recall@{k}" for k in cutoffs] + [f"ndcg@{k}" for k in cutoffs]
    head += ["n_evaluated", "n_skipped"]
    buf.write("\t".join(head) + "\n")
    for label, value, rep in rows:
        p = rep.params
        cells = [str(label), str(value)]
        cells += [str(p.alpha), str(p.lam), str(p.kappa)] if p else ["", "", ""]
        cells += [f"{rep.recall[k]:.6f}" for k in cutoffs] + [f"{rep.ndcg[k]:.6f}" for k in cutoffs]
        cells += [str(rep.n_evaluated), str(rep.n_skipped)]
        buf.write("\t".join(cells) + "\n")
    return buf.getvalue()
