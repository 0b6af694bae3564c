import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from actionvocab.encoders import (EncodedDataset, EncodingError, encode, encode_dataset,
                                  encoding_dims, fisher_raw, power_normalize, vocab_dims)
from actionvocab.features import ComponentLayout
from actionvocab.sampler import FeaturePool
from actionvocab.vocabulary import JOINT, GmmModel, fit_vocabularies
from helpers import random_vocab

L3 = ComponentLayout((("a", 4), ("b", 6), ("c", 5)))


def brute_assign(Z, C):
    return np.array([int(np.argmin([np.sum((z - c) ** 2) for c in C])) for z in Z])


def fisher_oracle(gmm, Z):
    """Per-feature loops straight from the gradient definitions."""
    K, d = gmm.means.shape
    n = len(Z)
    g_mu, g_sig = np.zeros((K, d)), np.zeros((K, d))
    for x in Z:
        logp = []
        for k in range(K):
            v = gmm.variances[k]
            logp.append(np.log(gmm.weights[k]) - 0.5 * np.sum(np.log(2 * np.pi * v))
                        - 0.5 * np.sum((x - gmm.means[k]) ** 2 / v))
        logp = np.array(logp)
        gamma = np.exp(logp - logp.max())
        gamma /= gamma.sum()
        for k in range(K):
            u = (x - gmm.means[k]) / np.sqrt(gmm.variances[k])
            g_mu[k] += gamma[k] * u
            g_sig[k] += gamma[k] * (u * u - 1)
    w = gmm.weights[:, None]
    return np.concatenate([(g_mu / (n * np.sqrt(w))).ravel(),
                           (g_sig / (n * np.sqrt(2 * w))).ravel()])


# -- dimensions -------------------------------------------------------------------

def test_reference_dimensions():
    assert encoding_dims("fisher", "2a", 128, 6) == 2 * 24 * 128 * 5 == 30_720
    assert encoding_dims("bof_per_category", "2b", 32, 6) == 192
    assert encoding_dims("vlad", "2a", 64) == 24 * 64 * 5 == 7_680
    assert encoding_dims("bof", "2a", 256) == 1280


@pytest.mark.parametrize("method", ["bof", "bof_per_category", "vlad", "fisher"])
@pytest.mark.parametrize("scheme", ["2a", "2b"])
@pytest.mark.parametrize("K,C", [(1, 2), (3, 2), (5, 4)])
def test_actual_length_matches_formula(method, scheme, K, C, rng):
    kind = {"bof_per_category": "bof"}.get(method, method)
    vs = random_vocab(kind, scheme, K, L3, C, method == "bof_per_category", pca_dims=3)
    blocks = 3 if scheme == "2a" else 1
    expected = {"bof": K * blocks, "bof_per_category": K * C * blocks,
                "vlad": 3 * 3 * K, "fisher": 2 * 3 * 3 * K}[method]
    v = encode(rng.normal(size=(20, 15)), vs, method)
    assert v.D == expected == vocab_dims(vs) == encoding_dims(method, scheme, K, C, 3, 3)


def test_full_size_fisher_vector(rng):
    layout = ComponentLayout.default()
    vs = random_vocab("fisher", "2a", 128, layout, pca_dims=24)
    v = encode(rng.normal(size=(50, 426)), vs)
    assert v.D == 30_720
    assert np.linalg.norm(v.vector) == pytest.approx(1.0, abs=1e-10)


# -- BoF -------------------------------------------------------------------------------

def test_single_feature_histogram(rng):
    vs = random_vocab("bof", "2a", 4, L3)
    v = encode(rng.normal(size=(1, 15)), vs).vector
    blocks = v.reshape(3, 4)
    # one hit per component: each block is one-hot before the joint L1, 1/3 after
    assert np.all(np.sort(blocks, axis=1) == [0, 0, 0, 1 / 3])
    assert v.sum() == pytest.approx(1.0, abs=1e-15)


def test_features_at_centroids_give_uniform_histogram():
    vs = random_vocab("bof", "2b", 5, L3)
    X = np.repeat(vs.codebooks[(JOINT, None)].centroids, 3, axis=0)
    np.testing.assert_allclose(encode(X, vs).vector, np.full(5, 0.2), atol=1e-15)


def test_hard_assignment_matches_exhaustive_search(rng):
    vs = random_vocab("bof", "2a", 7, L3)
    X = rng.normal(size=(1000, 15))
    v = encode(X, vs).vector.reshape(3, 7)
    for b, (name, sl) in enumerate(L3.slices().items()):
        lab = brute_assign(X[:, sl], vs.codebooks[(name, None)].centroids)
        hist = np.bincount(lab, minlength=7) / 1000 / 3
        np.testing.assert_allclose(v[b], hist, atol=1e-15)


def test_per_category_universal_codebook(rng):
    vs = random_vocab("bof", "2b", 3, L3, class_count=2, per_category=True)
    X = rng.normal(size=(40, 15))
    C = np.vstack([vs.codebooks[(JOINT, 0)].centroids, vs.codebooks[(JOINT, 1)].centroids])
    expected = np.bincount(brute_assign(X, C), minlength=6) / 40
    np.testing.assert_allclose(encode(X, vs).vector, expected, atol=1e-15)


# -- VLAD ------------------------------------------------------------------------------

def test_vlad_zero_residuals_flagged():
    vs = random_vocab("vlad", "2b", 3, L3, pca_dims=2)
    # pick features whose projections sit exactly on centroids: solve back through PCA
    Z = vs.codebooks[(JOINT, None)].centroids
    X = np.hstack([vs.pcas[n].inverse_transform(Z[:, 2 * i:2 * i + 2])
                   for i, n in enumerate(L3.names)])
    e = encode(X, vs)
    assert e.empty and np.abs(e.vector).max() < 1e-12


def test_vlad_single_feature_single_cluster(rng):
    vs = random_vocab("vlad", "2b", 1, L3, pca_dims=2)
    f = rng.normal(size=(1, 15))
    Z = np.hstack([vs.pcas[n].transform(f[:, L3.slices()[n]]) for n in L3.names])[0]
    r = Z - vs.codebooks[(JOINT, None)].centroids[0]
    np.testing.assert_allclose(encode(f, vs).vector, r / np.linalg.norm(r), atol=1e-12)


def test_vlad_matches_loop_oracle(rng):
    vs = random_vocab("vlad", "2a", 4, L3, pca_dims=3)
    X = rng.normal(size=(60, 15))
    blocks = []
    for name in L3.names:
        Z = vs.pcas[name].transform(X[:, L3.slices()[name]])
        C = vs.codebooks[(name, None)].centroids
        acc = np.zeros_like(C)
        for z, k in zip(Z, brute_assign(Z, C)):
            acc[k] += z - C[k]
        b = acc.ravel()
        blocks.append(b / np.linalg.norm(b))
    v = np.concatenate(blocks)
    np.testing.assert_allclose(encode(X, vs).vector, v / np.linalg.norm(v), atol=1e-12)


# -- Fisher ----------------------------------------------------------------------------

def test_fisher_raw_matches_loop_oracle(rng):
    g = GmmModel(np.array([0.2, 0.5, 0.3]), rng.normal(size=(3, 4)),
                 rng.uniform(0.3, 2, size=(3, 4)))
    Z = rng.normal(size=(25, 4))
    np.testing.assert_allclose(fisher_raw(g, Z), fisher_oracle(g, Z), rtol=1e-9, atol=1e-12)


def test_fisher_gradient_shrinks_like_root_n():
    rng = np.random.default_rng(8)
    g = GmmModel(np.array([0.3, 0.7]), np.array([[0.0, 0.0], [4.0, 1.0]]),
                 np.array([[1.0, 0.5], [2.0, 1.0]]))
    sizes = [1_000, 4_000, 16_000, 64_000]
    norms = []
    for n in sizes:
        reps = [np.linalg.norm(fisher_raw(g, g.sample(n, rng))) for _ in range(20)]
        norms.append(np.mean(reps))
    slope = np.polyfit(np.log(sizes), np.log(norms), 1)[0]
    assert slope == pytest.approx(-0.5, abs=0.1)


def test_power_normalization_of_non_negatives(rng):
    v = rng.uniform(0, 5, size=50)
    np.testing.assert_array_equal(power_normalize(v), np.sqrt(v))
    w = rng.normal(size=50)
    np.testing.assert_allclose(power_normalize(w), np.sign(w) * np.sqrt(np.abs(w)))


def test_fisher_against_independent_pipeline(rng):
    vs = random_vocab("fisher", "2a", 3, L3, pca_dims=2)
    X = rng.normal(size=(30, 15))
    blocks = []
    for name in L3.names:
        Z = vs.pcas[name].transform(X[:, L3.slices()[name]])
        b = fisher_oracle(vs.gmms[(name, None)], Z)
        b = np.sign(b) * np.sqrt(np.abs(b))
        blocks.append(b / np.linalg.norm(b))
    v = np.concatenate(blocks)
    np.testing.assert_allclose(encode(X, vs).vector, v / np.linalg.norm(v), atol=1e-10)


# -- general contracts -------------------------------------------------------------------

@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10 ** 6), st.integers(1, 40), st.sampled_from(["bof", "vlad", "fisher"]),
       st.sampled_from(["2a", "2b"]))
def test_norms_and_order_invariance(seed, n, kind, scheme):
    r = np.random.default_rng(seed)
    vs = random_vocab(kind, scheme, 3, L3, pca_dims=2, seed=seed % 97)
    X = r.normal(size=(n, 15)) * 3
    v = encode(X, vs).vector
    if kind == "bof":
        assert v.sum() == pytest.approx(1.0, abs=1e-12) and np.all(v >= 0)
    else:
        assert np.linalg.norm(v) == pytest.approx(1.0, abs=1e-10)
    np.testing.assert_allclose(encode(X[r.permutation(n)], vs).vector, v, atol=1e-12)


@pytest.mark.parametrize("kind", ["bof", "vlad", "fisher"])
def test_empty_video_is_flagged(kind):
    vs = random_vocab(kind, "2a", 2, L3, pca_dims=2)
    e = encode(np.empty((0, 15)), vs)
    assert e.empty and not e.vector.any() and e.D == vocab_dims(vs)


def test_wrong_width_and_wrong_vocabulary(rng):
    vs = random_vocab("bof", "2a", 2, L3)
    with pytest.raises(EncodingError):
        encode(rng.normal(size=(3, 14)), vs)
    with pytest.raises(EncodingError):
        encode(rng.normal(size=(3, 15)), vs, "fisher")


# -- datasets --------------------------------------------------------------------------

@pytest.fixture(scope="module")
def fitted(tiny_dataset):
    from actionvocab.features import load_video
    m = tiny_dataset
    rows = np.vstack([load_video(m, v) for v in m.videos])
    labels = np.repeat([v.class_label for v in m.videos], [v.feature_count for v in m.videos])
    pool = FeaturePool(rows, np.zeros(len(rows)), labels, m.class_count)
    return {kind: fit_vocabularies(pool, 3, "2a", kind=kind, pca_dims=3, restarts=1,
                                   layout=m.layout) for kind in ("bof", "vlad", "fisher")}


@pytest.mark.parametrize("kind", ["bof", "vlad", "fisher"])
def test_encode_dataset_consistency(tiny_dataset, fitted, kind, tmp_path):
    from actionvocab.features import load_video
    m = tiny_dataset
    enc = encode_dataset(m, fitted[kind], chunk_rows=7)
    assert enc.X.shape == (18, vocab_dims(fitted[kind]))
    assert list(enc.labels) == [v.class_label for v in m.videos]
    for row, v in zip(enc.X, m.videos):
        np.testing.assert_array_equal(row, encode(load_video(m, v), fitted[kind]).vector)
    again = encode_dataset(m, fitted[kind])
    assert again.X.tobytes() == enc.X.tobytes()
    enc.save(tmp_path / "e")
    back = EncodedDataset.load(tmp_path / "e")
    assert back.X.tobytes() == enc.X.tobytes() and back.video_ids == enc.video_ids
    assert (back.method, back.scheme, back.K) == (enc.method, "2a", 3)
