"""Small CSR helpers: canonical form and per-row pruning."""

import numpy as np
import scipy.sparse as sp


def canonical(m) -> sp.csr_matrix:
    """Return ``m`` as float64 CSR with sorted indices and no stored zeros."""
    m = sp.csr_matrix(m, dtype=np.float64, copy=True)
    m.sum_duplicates()
    m.eliminate_zeros()
    m.sort_indices()
    return m


def row_ids(m: sp.csr_matrix) -> np.ndarray:
    return np.repeat(np.arange(m.shape[0]), np.diff(m.indptr))


def top_m_per_row(m: sp.csr_matrix, M: int) -> sp.csr_matrix:
    """Keep the ``M`` largest entries of every row; ties keep the lower column."""
    counts = np.diff(m.indptr)
    if counts.size == 0 or counts.max() <= M:
        return m
    rows = row_ids(m)
    order = np.lexsort((m.indices, -m.data, rows))
    rank = np.arange(len(order)) - m.indptr[rows[order]]
    kept = np.sort(order[rank < M])  # original layout is row-major with sorted columns
    out = sp.csr_matrix((m.data[kept], m.indices[kept],
                         np.concatenate(([0], np.cumsum(np.minimum(counts, M))))),
                        shape=m.shape)
    out.has_sorted_indices = True
    return out


def threshold(m: sp.csr_matrix, epsilon: float) -> sp.csr_matrix:
    m = m.copy()
    m.data[m.data < epsilon] = 0.0
    m.eliminate_zeros()
    return m


def triplets(m: sp.csr_matrix):
    """``(rows, cols, values)`` in row-major order."""
    m = canonical(m)
    return row_ids(m), m.indices.astype(np.int64), m.data.copy()
