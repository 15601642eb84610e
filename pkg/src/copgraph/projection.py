"""One-mode projection of the user-item bipartite graph onto items.

The pipeline is: binary incidence -> row-stochastic user->item and
item->user transition matrices -> two-step item->item walk under a uniform
start prior -> symmetrized adjacency -> its lambda-th power.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .dataset import InteractionLog
from .errors import ConfigError, ContractViolation, DimensionMismatch, EmptyDatasetError
from .sparse import canonical, threshold, top_m_per_row

NONE = "none"
TOP_M = "top_m"
EPSILON = "epsilon"


@dataclass(frozen=True)
class PruningPolicy:
    """Sparsity control applied after every product inside :func:`matrix_power`."""

    mode: str = TOP_M
    m: int | None = 500
    epsilon: float | None = None

    def __post_init__(self):
        if self.mode == TOP_M:
            if self.m is None or self.m < 1 or self.epsilon is not None:
                raise ConfigError("top_m pruning needs a positive m and no epsilon")
        elif self.mode == EPSILON:
            if self.epsilon is None or self.epsilon <= 0 or self.m is not None:
                raise ConfigError("epsilon pruning needs a positive epsilon and no m")
        elif self.mode == NONE:
            if self.m is not None or self.epsilon is not None:
                raise ConfigError("policy 'none' takes no parameters")
        else:
            raise ConfigError(f"unknown pruning mode {self.mode!r}")

    @classmethod
    def none(cls):
        return cls(NONE, None, None)

    @classmethod
    def top_m(cls, m: int = 500):
        return cls(TOP_M, m, None)

    @classmethod
    def threshold(cls, epsilon: float):
        return cls(EPSILON, None, epsilon)

    def apply(self, m: sp.csr_matrix) -> sp.csr_matrix:
        if self.mode == TOP_M:
            return top_m_per_row(m, self.m)
        if self.mode == EPSILON:
            return threshold(m, self.epsilon)
        return m

    def to_dict(self):
        return {"mode": self.mode, "m": self.m, "epsilon": self.epsilon}

    @classmethod
    def from_dict(cls, d):
        return cls(d["mode"], d.get("m"), d.get("epsilon"))


@dataclass(frozen=True, eq=False)
class BipartiteGraph:
    """Unweighted user-item graph; ``incidence`` is the binary |U| x |V| matrix."""

    incidence: sp.csr_matrix

    @property
    def n_users(self) -> int:
        return self.incidence.shape[0]

    @property
    def n_items(self) -> int:
        return self.incidence.shape[1]

    @property
    def user_adj(self) -> list:
        m = self.incidence
        return [m.indices[m.indptr[u]:m.indptr[u + 1]].tolist() for u in range(m.shape[0])]

    @property
    def item_adj(self) -> list:
        m = canonical(self.incidence.T)
        return [m.indices[m.indptr[v]:m.indptr[v + 1]].tolist() for v in range(m.shape[0])]

    def user_degree(self) -> np.ndarray:
        return np.diff(self.incidence.indptr)

    def item_degree(self) -> np.ndarray:
        return np.bincount(self.incidence.indices, minlength=self.n_items)


def build_bipartite(log: InteractionLog) -> BipartiteGraph:
    """Binary incidence: repeated purchases of one item collapse to a single edge."""
    if log.n_events == 0:
        raise EmptyDatasetError("cannot build a bipartite graph from an empty log")
    m = sp.csr_matrix((np.ones(log.n_events), (log.user, log.item)),
                      shape=(log.n_users, log.n_items))
    m.sum_duplicates()
    m.data[:] = 1.0
    m.sort_indices()
    return BipartiteGraph(m)


def _row_stochastic(m: sp.csr_matrix, what: str) -> sp.csr_matrix:
    deg = np.diff(m.indptr)
    if (deg == 0).any():
        bad = int(np.flatnonzero(deg == 0)[0])
        raise ContractViolation(f"{what} {bad} has degree 0; filter the log first")
    out = m.copy()
    out.data = out.data / np.repeat(deg, deg).astype(np.float64)
    return out


def transition_matrices(g: BipartiteGraph) -> tuple[sp.csr_matrix, sp.csr_matrix]:
    """Return ``(P_UV, P_VU)``: one-step walk probabilities user->item and item->user."""
    p_uv = _row_stochastic(g.incidence, "user")
    p_vu = _row_stochastic(canonical(g.incidence.T), "item")
    return p_uv, p_vu


def two_step_item_matrix(p_vu, p_uv, n_items: int) -> sp.csr_matrix:
    """Probability of an item->user->item walk, with the start item drawn uniformly."""
    if p_vu.shape[1] != p_uv.shape[0]:
        raise DimensionMismatch(f"inner dimensions differ: {p_vu.shape} x {p_uv.shape}")
    if p_vu.shape[0] != n_items or p_uv.shape[1] != n_items:
        raise DimensionMismatch(f"expected {n_items} items, got {p_vu.shape} x {p_uv.shape}")
    return canonical((p_vu @ p_uv) / n_items)


def symmetrize(q) -> sp.csr_matrix:
    if q.shape[0] != q.shape[1]:
        raise DimensionMismatch(f"symmetrize needs a square matrix, got {q.shape}")
    q = canonical(q)
    return canonical(q + q.T)


def _product(a: sp.csr_matrix, b: sp.csr_matrix, policy: PruningPolicy,
             block_rows: int = 2048) -> sp.csr_matrix:
    # Row blocks bound the unpruned fill-in held in memory at once.
    if policy.mode == NONE or a.shape[0] <= block_rows:
        return policy.apply(canonical(a @ b))
    blocks = [policy.apply(canonical(a[lo:lo + block_rows] @ b))
              for lo in range(0, a.shape[0], block_rows)]
    return canonical(sp.vstack(blocks, format="csr"))


def product_count(lam: int) -> int:
    """Sparse products used by :func:`matrix_power` for exponent ``lam``."""
    return lam.bit_length() - 1 + bin(lam).count("1") - 1


def matrix_power(a, lam: int, policy: PruningPolicy | None = None) -> sp.csr_matrix:
    """``a`` raised to ``lam`` by left-to-right binary exponentiation.

    ``policy`` (default: top 500 per row) is applied after every product.
    """
    if policy is None:
        policy = PruningPolicy()
    if isinstance(lam, bool) or int(lam) != lam or lam < 1:
        raise ConfigError(f"lambda must be a positive integer, got {lam!r}")
    lam = int(lam)
    if a.shape[0] != a.shape[1]:
        raise DimensionMismatch(f"matrix power needs a square matrix, got {a.shape}")
    base = canonical(a)
    result = base
    for bit in bin(lam)[3:]:
        result = _product(result, result, policy)
        if bit == "1":
            result = _product(result, base, policy)
    if lam == 1:
        result = policy.apply(result)
    return result


def projected_item_graph(log: InteractionLog) -> sp.csr_matrix:
    """Symmetrized two-step item adjacency of a compacted log."""
    g = build_bipartite(log)
    p_uv, p_vu = transition_matrices(g)
    return symmetrize(two_step_item_matrix(p_vu, p_uv, g.n_items))
