import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import linalg

from nerfgan.camera import Pose, PosePrior
from nerfgan.config import TrainingConfig
from nerfgan.data import make_synthetic_dataset
from nerfgan.errors import ConfigurationError, EvaluationError
from nerfgan.features import PooledFeatureExtractor
from nerfgan.metrics import (PSNR_CAP, MetricReport, ShapeClassifier, circular_correlation, evaluate,
                             extract, fid, inception_score, kid, psnr)
from nerfgan.training import new_state


# ---- PSNR --------------------------------------------------------------------

def test_psnr_cases():
    a = torch.rand(4, 4, 3)
    assert psnr(a, a) == PSNR_CAP
    assert psnr(torch.ones(4, 4, 3), torch.zeros(4, 4, 3)) == 0.0
    assert abs(psnr(torch.full((4, 4, 3), 0.5), torch.zeros(4, 4, 3)) - 10 * math.log10(4)) < 1e-12


def test_psnr_shape_mismatch():
    with pytest.raises(ConfigurationError):
        psnr(torch.zeros(2, 2), torch.zeros(2, 3))


# ---- FID ---------------------------------------------------------------------

def fid_oracle(mu1, cov1, mu2, cov2):
    """Closed-form Frechet distance using scipy's general matrix square root."""
    root = linalg.sqrtm(cov1 @ cov2).real
    return float(((mu1 - mu2) ** 2).sum() + np.trace(cov1 + cov2 - 2 * root))


def test_fid_identical_sets():
    x = np.random.default_rng(0).normal(size=(200, 8))
    assert fid(x, x) < 1e-6


def test_fid_one_dimensional_mean_shift():
    base = np.array([[0.0], [1.0], [2.0], [5.0]])
    assert fid(base, base + 3.0) == pytest.approx(9.0, abs=1e-12)


def test_fid_matches_moment_plug_in_oracle():
    rng = np.random.default_rng(1)
    a = rng.normal(size=(500, 3)) @ np.array([[1.0, 0.3, 0.0], [0.0, 0.8, 0.2], [0.1, 0.0, 1.5]])
    b = rng.normal(size=(400, 3)) * [0.5, 1.2, 0.9] + [0.3, -0.2, 1.0]
    expected = fid_oracle(a.mean(0), np.cov(a, rowvar=False), b.mean(0), np.cov(b, rowvar=False))
    assert fid(a, b) == pytest.approx(expected, rel=1e-8)


def test_fid_estimate_close_to_population_value():
    rng = np.random.default_rng(2)
    cov_a = np.diag([1.0, 2.0, 0.5])
    cov_b = np.array([[1.0, 0.4, 0.0], [0.4, 1.0, 0.0], [0.0, 0.0, 1.0]])
    mu_b = np.array([1.0, 0.0, -0.5])
    truth = fid_oracle(np.zeros(3), cov_a, mu_b, cov_b)
    n = 20_000
    a = rng.multivariate_normal(np.zeros(3), cov_a, size=n)
    b = rng.multivariate_normal(mu_b, cov_b, size=n)
    # sampling error of the plug-in estimate is O(D / sqrt(n)) here
    assert abs(fid(a, b) - truth) < 0.05


def test_fid_symmetric_and_rotation_invariant():
    rng = np.random.default_rng(3)
    a, b = rng.normal(size=(100, 5)), rng.normal(size=(120, 5)) * 1.5 + 0.2
    assert abs(fid(a, b) - fid(b, a)) < 1e-8
    q, _ = np.linalg.qr(rng.normal(size=(5, 5)))
    assert abs(fid(a @ q, b @ q) - fid(a, b)) < 1e-6


def test_fid_rejects_tiny_or_bad_inputs():
    with pytest.raises(ConfigurationError):
        fid(np.zeros((1, 3)), np.zeros((5, 3)))
    with pytest.raises(ConfigurationError):
        fid(np.full((3, 2), np.nan), np.zeros((5, 2)))
    with pytest.raises(ConfigurationError):
        fid(np.zeros((3, 2)), np.zeros((5, 3)))


# ---- KID ---------------------------------------------------------------------

def kid_oracle(a, b):
    """Unbiased MMD^2 by explicit double sums over sample pairs, times 100."""
    d = a.shape[1]

    def k(x, y):
        return (sum(x[i] * y[i] for i in range(d)) / d + 1.0) ** 3

    n, m = len(a), len(b)
    saa = sum(k(a[i], a[j]) for i in range(n) for j in range(n) if i != j) / (n * (n - 1))
    sbb = sum(k(b[i], b[j]) for i in range(m) for j in range(m) if i != j) / (m * (m - 1))
    sab = sum(k(a[i], b[j]) for i in range(n) for j in range(m)) / (n * m)
    return 100.0 * (saa + sbb - 2 * sab)


@pytest.mark.parametrize("n,d", [(2, 1), (5, 3), (8, 4)])
def test_kid_matches_double_sum_oracle(n, d):
    rng = np.random.default_rng(n * 10 + d)
    a, b = rng.normal(size=(n, d)), rng.normal(size=(n, d)) + 0.5
    assert abs(kid(a, b) - kid_oracle(a, b)) < 1e-12


def test_kid_unequal_sizes_match_oracle():
    rng = np.random.default_rng(9)
    a, b = rng.normal(size=(4, 2)), rng.normal(size=(7, 2))
    assert abs(kid(a, b) - kid_oracle(a, b)) < 1e-12


def test_kid_centered_on_disjoint_halves():
    rng = np.random.default_rng(4)
    x = rng.normal(size=(2000, 8))
    value = kid(x[:1000], x[1000:])
    boot = []
    for _ in range(30):
        idx = rng.permutation(2000)
        boot.append(kid(x[idx[:1000]], x[idx[1000:]]))
    assert abs(value) < 3 * np.std(boot) + 1e-12


def test_kid_detects_shift():
    rng = np.random.default_rng(5)
    assert kid(rng.normal(size=(300, 4)), rng.normal(size=(300, 4)) + 1.0) > 1.0


# ---- IS ----------------------------------------------------------------------

def is_oracle(p):
    n, c = p.shape
    marginal = [sum(p[i, j] for i in range(n)) / n for j in range(c)]
    kl = 0.0
    for i in range(n):
        for j in range(c):
            if p[i, j] > 0:
                kl += p[i, j] * math.log(p[i, j] / marginal[j])
    return math.exp(kl / n)


def test_inception_score_closed_forms():
    assert inception_score(np.full((10, 4), 0.25)) == pytest.approx(1.0, abs=1e-12)
    assert inception_score(np.eye(5)) == pytest.approx(5.0, abs=1e-12)


def test_inception_score_matches_double_loop_oracle():
    rng = np.random.default_rng(6)
    p = rng.dirichlet(np.ones(6) * 0.7, size=40)
    assert abs(inception_score(p) - is_oracle(p)) < 1e-10


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2 ** 16), c=st.integers(2, 8), n=st.integers(1, 30))
def test_inception_score_within_bounds(seed, c, n):
    p = np.random.default_rng(seed).dirichlet(np.ones(c) * 0.3, size=n)
    value = inception_score(p)
    assert 1.0 - 1e-9 <= value <= c + 1e-9


def test_inception_score_rejects_invalid_rows():
    with pytest.raises(ConfigurationError):
        inception_score(np.array([[0.6, 0.6]]))


# ---- circular correlation ----------------------------------------------------

def test_circular_correlation_properties():
    rng = np.random.default_rng(7)
    a = rng.vonmises(0.7, 4.0, size=200) % (2 * np.pi)
    assert circular_correlation(a, a) == pytest.approx(1.0)
    assert circular_correlation(a, (a + 2.0) % (2 * np.pi)) == pytest.approx(1.0)
    assert circular_correlation(a, -a) == pytest.approx(-1.0)
    assert abs(circular_correlation(a, rng.uniform(0, 2 * np.pi, 200))) < 0.3


# ---- reports and harness -----------------------------------------------------

def test_metric_report_rejects_non_finite():
    with pytest.raises(EvaluationError):
        MetricReport("fid", float("nan"), 2, 2, "x", 0)


def tiny_config():
    return TrainingConfig(z_dim=4, mapping_layers=1, mapping_width=16, field_layers=2, field_width=16,
                          conv_widths=(8, 16), resolution=8, samples_per_ray=6)


@pytest.fixture(scope="module")
def toy_data():
    cfg = tiny_config()
    return make_synthetic_dataset(24, 1, cfg.prior, 8, seed=0, radius=cfg.radius, fov=cfg.fov)


def test_real_set_against_itself(toy_data):
    ext = PooledFeatureExtractor()
    feats = extract(ext, toy_data.images)
    assert fid(feats, extract(ext, toy_data.images.clone())) < 1e-6
    assert abs(kid(feats, feats)) < 0.05 * abs(kid(feats, feats + 1.0))


@pytest.mark.parametrize("mode", ["conditional", "unconditional"])
def test_evaluate_is_deterministic(toy_data, mode):
    state = new_state(tiny_config())
    a = evaluate(state, mode, toy_data, n_samples=6, seed=3)
    b = evaluate(state, mode, toy_data, n_samples=6, seed=3)
    assert [r.to_dict() for r in a] == [r.to_dict() for r in b]
    names = {r.name for r in a}
    assert {"fid", "kid", "is"} <= names
    assert ("psnr" in names) == (mode == "conditional")
    assert all(r.extractor for r in a)


def test_evaluate_rejects_bad_arguments(toy_data):
    state = new_state(tiny_config())
    with pytest.raises(ConfigurationError):
        evaluate(state, "sideways", toy_data)
    with pytest.raises(ConfigurationError):
        evaluate(state, "conditional", toy_data, n_samples=1)


def test_shape_classifier_beats_chance():
    prior = PosePrior("gaussian", Pose(1.1, math.pi / 4), (0.1, 0.35))
    data = make_synthetic_dataset(150, 1, prior, 32, seed=1, fov=0.5)
    train, test = data.split(50)
    ext = PooledFeatureExtractor()
    clf = ShapeClassifier(ext, 3).fit(train.images, [g["label"] for g in train.hidden_ground_truth()])
    acc = clf.accuracy(test.images, [g["label"] for g in test.hidden_ground_truth()])
    assert acc > 0.5
    p = clf.probabilities(test.images)
    assert np.allclose(p.sum(1), 1.0)
