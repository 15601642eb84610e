import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from copgraph import (
    AggregationFunction,
    EmbeddingTable,
    ModelParams,
    PruningPolicy,
    build_model,
    load_embeddings,
    load_model,
    recommend,
    recommend_cold_start,
    save_model,
)
from copgraph.errors import (
    ChecksumError,
    ConfigError,
    MissingEmbeddingError,
    ModelFormatError,
    TruncatedFileError,
    UnknownItemError,
    VersionError,
)
from copgraph.model import AffinityIndex, ComplementarityModel, ModelBuilder, model_from_bytes, model_to_bytes
from copgraph.synthetic import synthetic_log

from conftest import make_log, random_log


def hand_model(rows, item_ids=("a", "b", "c", "d"), cats=None):
    n = len(item_ids)
    W = sp.csr_matrix((n, n))
    if rows:
        r, c, v = zip(*rows)
        W = sp.csr_matrix((v, (r, c)), shape=(n, n))
    cats = np.zeros(n, dtype=np.int64) if cats is None else np.asarray(cats)
    return ComplementarityModel(W, tuple(item_ids), ("", "X", "Y"), cats, ModelParams())


def test_two_users_directed():
    log = make_log({"u1": ["a", "b"], "u2": ["a", "b"]})
    m = build_model(log, ModelParams(alpha=0.0, lam=2, kappa=2))
    i = m.index
    assert m.W[i["a"], i["b"]] > 0 and m.W[i["b"], i["a"]] == 0


def test_single_user_closed_form():
    # Q = [[.25, .25], [.25, .25]], P_VV = 2Q, normalized C_I row a = [0, 1].
    log = make_log({"u": ["a", "b"]})
    m = build_model(log, ModelParams(alpha=0.0, lam=1, kappa=1))
    assert m.W[0, 1] == 0.5
    assert m.W.nnz == 1


def test_builder_matches_fresh_builds(rng):
    log = random_log(rng, n_users=30, n_items=15, max_len=12)
    builder = ModelBuilder(log)
    for params in (ModelParams(alpha=0.3, lam=2, kappa=3), ModelParams(alpha=0.7, lam=3, kappa=1)):
        a, b = builder.build(params), build_model(log, params)
        assert a == b


def test_model_weights_positive_and_square(rng):
    m = build_model(random_log(rng, n_users=40), ModelParams(alpha=0.5, lam=3, kappa=3))
    assert m.W.shape == (m.n_items, m.n_items)
    assert np.all(m.W.data > 0)


def test_recommend_argmax_and_short_rows():
    m = hand_model([(0, 1, 0.5), (0, 2, 0.2)])
    assert recommend(m, "a", 1) == [("b", 0.5)]
    assert recommend(m, "a", 10) == [("b", 0.5), ("c", 0.2)]
    assert recommend(m, "d", 3) == []


def test_recommend_tie_break_and_self_mask():
    m = hand_model([(1, 3, 0.4), (1, 0, 0.4), (1, 1, 9.0), (1, 2, 0.4)])
    assert [x for x, _ in recommend(m, "b", 3)] == ["a", "c", "d"]


def test_recommend_unknown():
    with pytest.raises(UnknownItemError):
        recommend(hand_model([]), "zzz", 3)
    with pytest.raises(ConfigError):
        recommend(hand_model([]), "a", 0)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 8))
def test_recommend_properties(seed, k):
    rng = np.random.default_rng(seed)
    log = random_log(rng, n_users=25, n_items=10)
    m = build_model(log, ModelParams(alpha=float(rng.random()), lam=2, kappa=2))
    for item in m.item_ids:
        recs = recommend(m, item, k)
        assert item not in [x for x, _ in recs]
        scores = [s for _, s in recs]
        assert scores == sorted(scores, reverse=True)
        assert len(recs) <= k


@pytest.fixture
def small_model(rng):
    return build_model(random_log(rng, n_users=20, n_items=8), ModelParams(alpha=0.4, lam=2, kappa=2))


def test_save_load_roundtrip(tmp_path, small_model):
    path = tmp_path / "m.cpg"
    save_model(small_model, path)
    loaded = load_model(path)
    assert loaded == small_model
    assert loaded.params == small_model.params
    assert np.array_equal(loaded.W.toarray(), small_model.W.toarray())


def test_three_item_roundtrip(tmp_path):
    m = hand_model([(0, 1, 0.5), (2, 0, 0.125)], item_ids=("x", "y", "z"), cats=[1, 2, 0])
    save_model(m, tmp_path / "m.cpg")
    assert load_model(tmp_path / "m.cpg") == m


def test_corrupted_byte_is_checksum_failure(small_model):
    raw = bytearray(model_to_bytes(small_model))
    raw[len(raw) // 2] ^= 0xFF
    with pytest.raises(ChecksumError):
        model_from_bytes(bytes(raw))


def test_newer_version_is_version_error(small_model):
    raw = bytearray(model_to_bytes(small_model))
    raw[4] = 2
    with pytest.raises(VersionError):
        model_from_bytes(bytes(raw))


def test_truncated_file(small_model):
    raw = model_to_bytes(small_model)
    for cut in (3, 10, len(raw) // 2, len(raw) - 1):
        with pytest.raises(TruncatedFileError):
            model_from_bytes(raw[:cut])


def test_not_a_model():
    with pytest.raises(ModelFormatError):
        model_from_bytes(b"PK\x03\x04 definitely not a model file")


def test_serialization_deterministic(rng):
    log = random_log(rng, n_users=30)
    params = ModelParams(alpha=0.5, lam=3, kappa=2)
    assert model_to_bytes(build_model(log, params)) == model_to_bytes(build_model(log, params))


def test_params_roundtrip():
    p = ModelParams(0.25, 3, 2, AggregationFunction("exp", 2.0), PruningPolicy.threshold(1e-6), 7,
                    "days", "bidirectional")
    assert ModelParams.from_dict(p.to_dict()) == p
    with pytest.raises(ConfigError):
        ModelParams(lam=0)


def test_embedding_file_roundtrip(tmp_path):
    path = tmp_path / "emb.txt"
    path.write_text("dim 3\nx 1 0 0\ny 0 1 0.5\n")
    table = load_embeddings(path)
    assert table.dim == 3 and np.allclose(table["y"], [0, 1, 0.5])
    with pytest.raises(MissingEmbeddingError):
        table["q"]
    bad = tmp_path / "bad.txt"
    bad.write_text("dim 3\nx 1 0\n")
    with pytest.raises(Exception, match="line 2"):
        load_embeddings(bad)
    with pytest.raises(ConfigError):
        EmbeddingTable(2, {"x": np.array([np.nan, 1.0])})


def cold_setup():
    m = hand_model([(0, 1, 0.5), (0, 2, 0.3), (2, 3, 0.9), (3, 0, 0.1)], cats=[1, 1, 2, 2])
    emb = EmbeddingTable(2, {
        "a": np.array([1.0, 0.0]), "b": np.array([0.0, 1.0]),
        "c": np.array([0.7, 0.7]), "d": np.array([-1.0, 0.0]),
        "new": np.array([1.0, 0.0]), "odd": np.array([0.0, 0.0]),
    })
    return m, emb


def test_cold_start_exact_match_inherits_row():
    m, emb = cold_setup()
    assert recommend_cold_start(m, "new", "X", emb, 5) == recommend(m, "a", 5)


def test_cold_start_category_restriction_and_fallback():
    m, emb = cold_setup()
    # within category Y the nearest to [1, 0] is c
    assert recommend_cold_start(m, "new", "Y", emb, 5) == recommend(m, "c", 5)
    # an unseen category falls back to the global nearest neighbour, a
    assert recommend_cold_start(m, "new", "Z", emb, 5) == recommend(m, "a", 5)
    assert AffinityIndex(m, emb).proxy("odd", "X") == "a"


def test_cold_start_errors_and_empty():
    m, emb = cold_setup()
    with pytest.raises(MissingEmbeddingError):
        recommend_cold_start(m, "ghost", "X", emb, 3)
    empty = ComplementarityModel(sp.csr_matrix((0, 0)), (), ("",), np.zeros(0, dtype=np.int64), ModelParams())
    assert recommend_cold_start(empty, "new", "X", emb, 3) == []


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.01, 100), st.floats(0.01, 100))
def test_proxy_scale_invariant(seed, s1, s2):
    rng = np.random.default_rng(seed)
    m = hand_model([], item_ids=tuple(f"i{k}" for k in range(6)), cats=[1, 1, 1, 2, 2, 2])
    vecs = {f"i{k}": rng.normal(size=4) for k in range(6)}
    vecs["q"] = rng.normal(size=4)
    base = AffinityIndex(m, EmbeddingTable(4, vecs))
    scaled = AffinityIndex(m, EmbeddingTable(4, {k: v * (s1 if k == "q" else s2) for k, v in vecs.items()}))
    for cat in ("X", "Y", None):
        assert base.proxy("q", cat) == scaled.proxy("q", cat)


def test_synthetic_generator_deterministic():
    a, ea = synthetic_log(n_users=20, seed=4)
    b, eb = synthetic_log(n_users=20, seed=4)
    assert a.to_records() == b.to_records()
    assert all(np.array_equal(ea[k], eb[k]) for k in ea.vectors)
