"""Model assembly, top-k retrieval, cold-start fallback and the model file format."""

from __future__ import annotations

import hashlib
import json
import logging
import struct
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .dataset import InteractionLog
from .directionality import (
    STEPS,
    TIES_SEQUENCE,
    AggregationFunction,
    DirectionalityParams,
    category_co_counts,
    combine,
    item_co_counts,
    lift_category_matrix,
    row_normalize,
)
from .errors import (
    ChecksumError,
    ConfigError,
    MissingEmbeddingError,
    ModelFormatError,
    ParseError,
    TruncatedFileError,
    UnknownItemError,
    VersionError,
)
from .projection import PruningPolicy, matrix_power, projected_item_graph
from .sparse import canonical, triplets

logger = logging.getLogger(__name__)

MAGIC = b"CPG1"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sHHQ")
_CHECKSUM_SIZE = 32


@dataclass(frozen=True)
class ModelParams:
    alpha: float = 1.0
    lam: int = 4
    kappa: int = 4
    aggregation: AggregationFunction = AggregationFunction()
    pruning: PruningPolicy = PruningPolicy()
    min_core: int = 5
    delta_mode: str = STEPS
    tie_mode: str = TIES_SEQUENCE

    def __post_init__(self):
        DirectionalityParams(self.kappa, self.alpha, self.aggregation,
                             self.delta_mode, self.tie_mode)
        if isinstance(self.lam, bool) or int(self.lam) != self.lam or self.lam < 1:
            raise ConfigError(f"lambda must be a positive integer, got {self.lam!r}")
        if self.min_core < 1:
            raise ConfigError("min_core must be >= 1")

    def to_dict(self):
        return {
            "alpha": self.alpha, "lambda": self.lam, "kappa": self.kappa,
            "aggregation": self.aggregation.to_dict(), "pruning": self.pruning.to_dict(),
            "min_core": self.min_core, "delta_mode": self.delta_mode,
            "tie_mode": self.tie_mode,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            alpha=float(d["alpha"]), lam=int(d["lambda"]), kappa=int(d["kappa"]),
            aggregation=AggregationFunction.from_dict(d["aggregation"]),
            pruning=PruningPolicy.from_dict(d["pruning"]),
            min_core=int(d["min_core"]), delta_mode=d["delta_mode"], tie_mode=d["tie_mode"],
        )

    def replace(self, **changes) -> "ModelParams":
        from dataclasses import replace
        return replace(self, **changes)


@dataclass(frozen=True, eq=False)
class ComplementarityModel:
    """Directed item graph ``W``; row i holds the complement scores of item i."""

    W: sp.csr_matrix
    item_ids: tuple
    category_ids: tuple
    item_category: np.ndarray
    params: ModelParams
    fingerprint: str = ""

    @property
    def n_items(self) -> int:
        return len(self.item_ids)

    @cached_property
    def index(self) -> dict:
        return {iid: i for i, iid in enumerate(self.item_ids)}

    def __contains__(self, item_id) -> bool:
        return item_id in self.index

    def category_of(self, item_id) -> str:
        return self.category_ids[self.item_category[self.index[item_id]]]

    def recommend(self, query, k: int) -> list:
        return recommend(self, query, k)

    def __eq__(self, other):
        if not isinstance(other, ComplementarityModel):
            return NotImplemented
        return (
            self.item_ids == other.item_ids
            and self.category_ids == other.category_ids
            and np.array_equal(self.item_category, other.item_category)
            and self.params == other.params
            and self.fingerprint == other.fingerprint
            and self.W.shape == other.W.shape
            and all(np.array_equal(x, y) for x, y in zip(triplets(self.W), triplets(other.W)))
        )

    __hash__ = None


def fingerprint(log: InteractionLog, params: ModelParams) -> str:
    h = hashlib.sha256()
    for arr in (log.user, log.item, log.timestamp, log.item_category):
        h.update(np.ascontiguousarray(arr, dtype="<i8").tobytes())
    for table in (log.user_ids, log.item_ids, log.category_ids):
        h.update(json.dumps(table).encode())
    h.update(json.dumps(params.to_dict(), sort_keys=True).encode())
    return h.hexdigest()


class ModelBuilder:
    """Builds models for many parameter settings over one training log.

    The projected graph, its powers and the co-count matrices are cached, so a
    grid search pays for each lambda and each kappa once.
    """

    def __init__(self, log: InteractionLog):
        self.log = log.compact()
        self._p_vv = None
        self._powers = {}
        self._counts = {}

    @property
    def projected(self) -> sp.csr_matrix:
        if self._p_vv is None:
            self._p_vv = projected_item_graph(self.log)
        return self._p_vv

    def walk_matrix(self, lam: int, pruning: PruningPolicy) -> sp.csr_matrix:
        key = (lam, pruning)
        if key not in self._powers:
            logger.info("raising projected graph to power %d", lam)
            self._powers[key] = matrix_power(self.projected, lam, pruning)
        return self._powers[key]

    def co_counts(self, params: ModelParams):
        key = (params.kappa, params.aggregation, params.delta_mode, params.tie_mode)
        if key not in self._counts:
            args = (self.log, params.kappa, params.aggregation, params.delta_mode, params.tie_mode)
            self._counts[key] = (row_normalize(item_co_counts(*args)),
                                 row_normalize(category_co_counts(*args)))
        return self._counts[key]

    def build(self, params: ModelParams) -> ComplementarityModel:
        w_v = self.walk_matrix(params.lam, params.pruning)
        ci, cc = self.co_counts(params)
        lifted = lift_category_matrix(cc, self.log.item_category, w_v)
        W = combine(w_v, ci, lifted, params.alpha)
        return ComplementarityModel(W, self.log.item_ids, self.log.category_ids,
                                    self.log.item_category.copy(), params,
                                    fingerprint(self.log, params))


def build_model(log: InteractionLog, params: ModelParams | None = None) -> ComplementarityModel:
    """Build the complementarity graph from a (training-only) interaction log."""
    return ModelBuilder(log).build(params or ModelParams())


def recommend(model: ComplementarityModel, query, k: int) -> list:
    """Top-``k`` ``(item_id, score)`` off-diagonal entries of the query's row.

    Scores descend; equal scores are ordered by ascending item index.
    """
    if k < 1:
        raise ConfigError("k must be positive")
    try:
        q = model.index[query]
    except KeyError:
        raise UnknownItemError(f"item {query!r} is not in the model") from None
    W = model.W
    lo, hi = W.indptr[q], W.indptr[q + 1]
    cols, vals = W.indices[lo:hi], W.data[lo:hi]
    mask = cols != q
    cols, vals = cols[mask], vals[mask]
    order = np.lexsort((cols, -vals))[:k]
    return [(model.item_ids[c], float(v)) for c, v in zip(cols[order], vals[order])]


@dataclass(frozen=True, eq=False)
class EmbeddingTable:
    dim: int
    vectors: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.dim < 1:
            raise ConfigError("embedding dimension must be positive")
        for key, vec in self.vectors.items():
            if len(vec) != self.dim:
                raise ConfigError(f"embedding for {key!r} has length {len(vec)}, expected {self.dim}")
            if np.isnan(vec).any():
                raise ConfigError(f"embedding for {key!r} contains NaN")

    def __contains__(self, item_id):
        return item_id in self.vectors

    def __getitem__(self, item_id):
        try:
            return self.vectors[item_id]
        except KeyError:
            raise MissingEmbeddingError(f"no embedding for item {item_id!r}") from None


def load_embeddings(path) -> EmbeddingTable:
    """Read ``dim D`` then one ``item_id v1 ... vD`` line per item."""
    vectors = {}
    with open(path, encoding="utf-8") as fh:
        head = fh.readline().split()
        if len(head) != 2 or head[0] != "dim":
            raise ParseError("embedding file must start with 'dim D'", 1)
        try:
            dim = int(head[1])
        except ValueError:
            raise ParseError(f"bad dimension {head[1]!r}", 1) from None
        for line, text in enumerate(fh, start=2):
            parts = text.split()
            if not parts:
                continue
            if len(parts) != dim + 1:
                raise ParseError(f"expected {dim} values, got {len(parts) - 1}", line)
            try:
                vectors[parts[0]] = np.array(parts[1:], dtype=np.float64)
            except ValueError:
                raise ParseError("non-numeric embedding value", line) from None
    return EmbeddingTable(dim, vectors)


def save_embeddings(table: EmbeddingTable, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"dim {table.dim}\n")
        for key, vec in table.vectors.items():
            fh.write(key + " " + " ".join(repr(float(x)) for x in vec) + "\n")


class AffinityIndex:
    """Nearest warm item by cosine similarity, optionally within one category."""

    def __init__(self, model: ComplementarityModel, embeddings: EmbeddingTable):
        warm = [i for i, iid in enumerate(model.item_ids) if iid in embeddings]
        self.model = model
        self.embeddings = embeddings
        self.items = np.asarray(warm, dtype=np.int64)
        if len(warm):
            mat = np.stack([embeddings.vectors[model.item_ids[i]] for i in warm])
        else:
            mat = np.zeros((0, embeddings.dim))
        self.unit = _unit_rows(mat)
        self.categories = np.asarray(model.item_category)[self.items]

    def proxy(self, query, category=None):
        """Warm item id most similar to ``query`` (``None`` when nothing is warm)."""
        if len(self.items) == 0:
            return None
        q = _unit_rows(self.embeddings[query][None, :])[0]
        candidates = np.arange(len(self.items))
        if category is not None and category in self.model.category_ids:
            cat_index = self.model.category_ids.index(category)
            same = np.flatnonzero(self.categories == cat_index)
            if len(same):
                candidates = same
        sims = self.unit[candidates] @ q
        best = candidates[int(np.argmax(sims))]
        return self.model.item_ids[self.items[best]]


def _unit_rows(mat):
    norms = np.linalg.norm(mat, axis=1, keepdims=True)
    safe = np.where(norms > 0, norms, 1.0)
    return np.where(norms > 0, mat / safe, 0.0)


def recommend_cold_start(model: ComplementarityModel, query, query_category,
                         embeddings: EmbeddingTable, k: int, index: AffinityIndex | None = None) -> list:
    """Recommend for an item unseen in training via its most similar warm item.

    The search is restricted to warm items of ``query_category`` when that
    category has any; otherwise all warm items are searched. The proxy's row
    is returned unchanged.
    """
    if query not in embeddings:
        raise MissingEmbeddingError(f"no embedding for cold item {query!r}")
    if model.n_items == 0:
        return []
    index = index or AffinityIndex(model, embeddings)
    proxy = index.proxy(query, query_category)
    if proxy is None:
        return []
    return [(iid, s) for iid, s in recommend(model, proxy, k + 1) if iid != query][:k]


def _pack_strings(strings) -> bytes:
    out = [struct.pack("<I", len(strings))]
    for s in strings:
        raw = s.encode("utf-8")
        out.append(struct.pack("<I", len(raw)))
        out.append(raw)
    return b"".join(out)


def _pack_blob(raw: bytes) -> bytes:
    return struct.pack("<I", len(raw)) + raw


def model_to_bytes(model: ComplementarityModel) -> bytes:
    rows, cols, vals = triplets(model.W)
    body = b"".join([
        _pack_strings(model.item_ids),
        _pack_strings(model.category_ids),
        np.asarray(model.item_category, dtype="<u4").tobytes(),
        _pack_blob(json.dumps(model.params.to_dict(), sort_keys=True).encode()),
        _pack_blob(model.fingerprint.encode("ascii")),
        struct.pack("<Q", len(vals)),
        rows.astype("<u4").tobytes(),
        cols.astype("<u4").tobytes(),
        vals.astype("<f8").tobytes(),
    ])
    total = _HEADER.size + len(body) + _CHECKSUM_SIZE
    head = _HEADER.pack(MAGIC, FORMAT_VERSION, 0, total)
    digest = hashlib.sha256(head + body).digest()
    return head + body + digest


def save_model(model: ComplementarityModel, path):
    Path(path).write_bytes(model_to_bytes(model))


class _Reader:
    def __init__(self, buf: bytes, pos: int, end: int):
        self.buf, self.pos, self.end = buf, pos, end

    def take(self, n: int) -> bytes:
        if self.pos + n > self.end:
            raise TruncatedFileError("model body ends early")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self):
        return struct.unpack("<I", self.take(4))[0]

    def u64(self):
        return struct.unpack("<Q", self.take(8))[0]

    def strings(self):
        return tuple(self.take(self.u32()).decode("utf-8") for _ in range(self.u32()))

    def array(self, dtype, n):
        dt = np.dtype(dtype)
        return np.frombuffer(self.take(dt.itemsize * n), dtype=dt)


def model_from_bytes(buf: bytes) -> ComplementarityModel:
    if len(buf) < _HEADER.size:
        if MAGIC.startswith(buf[:4]) or buf[:4] == MAGIC:
            raise TruncatedFileError(f"file has only {len(buf)} bytes")
        raise ModelFormatError("not a copgraph model file")
    magic, version, _, total = _HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise ModelFormatError("not a copgraph model file")
    if version != FORMAT_VERSION:
        raise VersionError(f"model format version {version}; this build reads version {FORMAT_VERSION}")
    if len(buf) < total:
        raise TruncatedFileError(f"file has {len(buf)} of {total} bytes")
    if len(buf) > total:
        raise ModelFormatError(f"{len(buf) - total} trailing bytes after model")
    end = total - _CHECKSUM_SIZE
    if hashlib.sha256(buf[:end]).digest() != buf[end:]:
        raise ChecksumError("model checksum mismatch")
    r = _Reader(buf, _HEADER.size, end)
    item_ids = r.strings()
    category_ids = r.strings()
    item_category = r.array("<u4", len(item_ids)).astype(np.int64)
    params = ModelParams.from_dict(json.loads(r.take(r.u32())))
    fp = r.take(r.u32()).decode("ascii")
    nnz = r.u64()
    rows = r.array("<u4", nnz).astype(np.int64)
    cols = r.array("<u4", nnz).astype(np.int64)
    vals = r.array("<f8", nnz).astype(np.float64)
    n = len(item_ids)
    W = canonical(sp.csr_matrix((vals, (rows, cols)), shape=(n, n)))
    return ComplementarityModel(W, item_ids, category_ids, item_category, params, fp)


def load_model(path) -> ComplementarityModel:
    return model_from_bytes(Path(path).read_bytes())
