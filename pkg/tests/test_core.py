import math
import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st

from altdesign.core import (
    ENTROPY,
    PSE,
    SE,
    SI,
    TV,
    Compatibility,
    ConjugateNormalModel,
    Design,
    ExpectedLossEstimate,
    ModelPair,
    efficiency,
    mc_external_loss,
    mc_internal_loss,
    snis_posterior_moments,
    split_budget,
)
from altdesign.errors import (
    AllWeightsDegenerate,
    DimensionMismatch,
    DomainError,
    IncompatibleLoss,
    NonFiniteValue,
    UnsupportedLossForModel,
)
from altdesign.michaelis import MmFittedModel
from altdesign.numerics import RandomStream

DESIGN = Design.on_interval([0.2, 0.5, 0.9, 1.0])


def normal_loglik(noise_var):
    def f(y, theta, _):
        return -0.5 * np.sum((y[None, :] - theta) ** 2, axis=1) / noise_var
    return f


# -- Design ------------------------------------------------------------------


def test_design_rejects_out_of_bounds():
    with pytest.raises(DomainError):
        Design([[1.5]], [[0, 1]])
    with pytest.raises(DimensionMismatch):
        Design(np.zeros((3, 2)), [[0, 1]])
    with pytest.raises(NonFiniteValue):
        Design([[np.nan]], [[0, 1]])


def test_design_is_immutable_and_hashable():
    d = Design.on_interval([0.1, 0.2])
    assert d == Design.on_interval([0.1, 0.2])
    assert hash(d) == hash(Design.on_interval([0.1, 0.2]))
    with pytest.raises(ValueError):
        d.points[0, 0] = 0.5
    assert d.with_value(0, 0, 0.3).points[0, 0] == 0.3
    assert d.points[0, 0] == 0.1


# -- SNIS ----------------------------------------------------------------------


def test_snis_uniform_weights():
    theta = np.random.default_rng(0).standard_normal((50, 2))
    m = snis_posterior_moments(theta, lambda y, t, _: np.zeros(len(t)), np.zeros(3))
    np.testing.assert_allclose(m.mean, theta.mean(axis=0), atol=1e-14)
    assert m.ess == pytest.approx(50.0)


def test_snis_conjugate_normal_mean():
    rng = np.random.default_rng(1)
    prior_var, noise_var = 2.0, 1.0
    y = np.array([0.8, 1.3, 0.4])
    theta = math.sqrt(prior_var) * rng.standard_normal(20_000)
    m = snis_posterior_moments(theta, normal_loglik(noise_var), y)
    post_var = 1.0 / (1.0 / prior_var + y.size / noise_var)
    post_mean = post_var * y.sum() / noise_var
    mc_se = math.sqrt(post_var / m.ess)
    assert abs(m.mean[0] - post_mean) < 3 * mc_se
    assert m.covariance[0, 0] == pytest.approx(post_var, rel=0.1)


def test_snis_dominant_weight():
    theta = np.arange(10.0)
    logw = np.zeros(10)
    logw[7] = 1000.0
    m = snis_posterior_moments(theta, lambda y, t, _: logw, np.zeros(1))
    assert m.mean[0] == 7.0
    assert m.ess == pytest.approx(1.0)


def test_snis_degenerate_and_nonfinite():
    theta = np.arange(4.0)
    with pytest.raises(AllWeightsDegenerate):
        snis_posterior_moments(theta, lambda y, t, _: np.full(4, -np.inf), np.zeros(1))
    with pytest.raises(NonFiniteValue):
        snis_posterior_moments(theta, lambda y, t, _: np.array([0.0, np.nan, 0, 0]), np.zeros(1))
    # a single finite weight is a valid (if poor) estimate
    m = snis_posterior_moments(theta, lambda y, t, _: np.array([-np.inf, -np.inf, 0.0, -np.inf]), np.zeros(1))
    assert m.mean[0] == 2.0


@given(st.lists(st.floats(-50, 50), min_size=2, max_size=30), st.floats(-1e3, 1e3))
def test_snis_shift_invariance(logw, shift):
    logw = np.array(logw)
    theta = np.linspace(-1, 1, logw.size)
    a = snis_posterior_moments(theta, lambda y, t, _: logw, np.zeros(1))
    b = snis_posterior_moments(theta, lambda y, t, _: logw + shift, np.zeros(1))
    assert a.mean[0] == pytest.approx(b.mean[0], abs=1e-9)
    assert 1.0 - 1e-9 <= a.ess <= logw.size + 1e-9


# -- nested Monte Carlo -------------------------------------------------------


def test_internal_se_matches_conjugate_risk():
    model = ConjugateNormalModel(prior_var=2.0, noise_var=0.5)
    pair = ModelPair(model, model)
    est = mc_internal_loss(pair, SE, DESIGN, 2000, 2000, RandomStream(11))
    assert abs(est.value - model.posterior_variance(DESIGN)) < 3 * est.mc_standard_error


def test_internal_tv_matches_internal_se():
    model = ConjugateNormalModel(prior_var=2.0, noise_var=0.5)
    pair = ModelPair(model, model)
    se = mc_internal_loss(pair, SE, DESIGN, 2000, 2000, RandomStream(12))
    tv = mc_internal_loss(pair, TV, DESIGN, 2000, 2000, RandomStream(12))
    assert abs(se.value - tv.value) < 3 * math.hypot(se.mc_standard_error, tv.mc_standard_error)


def test_internal_si_matches_entropy():
    model = ConjugateNormalModel(prior_var=2.0, noise_var=0.5)
    pair = ModelPair(model, model)
    si = mc_internal_loss(pair, SI, DESIGN, 4000, 2, RandomStream(13))
    ent = mc_internal_loss(pair, ENTROPY, DESIGN, 4000, 2, RandomStream(13))
    exact = 0.5 * math.log(2 * math.pi * math.e * model.posterior_variance(DESIGN))
    assert abs(si.value - exact) < 3 * si.mc_standard_error
    assert ent.value == pytest.approx(exact, abs=1e-12)


def test_single_outer_sample_is_degenerate():
    model = ConjugateNormalModel()
    pair = ModelPair(model, model)
    est = mc_internal_loss(pair, SE, DESIGN, 1, 500, RandomStream(5))
    assert est.degenerate and est.mc_standard_error == 0.0
    assert est.value == est.losses[0]


def test_identical_models_external_equals_internal():
    model = ConjugateNormalModel(prior_var=3.0)
    pair = ModelPair(model, model)
    ext = mc_external_loss(pair, SE, DESIGN, 1000, 1000, RandomStream(21))
    inn = mc_internal_loss(pair, SE, DESIGN, 1000, 1000, RandomStream(21))
    assert abs(ext.value - inn.value) <= 3 * ext.mc_standard_error
    assert ext.value == inn.value


def test_external_never_better_than_designer_internal():
    fitted = ConjugateNormalModel(prior_var=0.5)
    designer = ConjugateNormalModel(prior_var=4.0)
    for seed in range(5):
        df = mc_external_loss(ModelPair(fitted, designer), SE, DESIGN, 1000, 1000, RandomStream(seed))
        dd = mc_internal_loss(ModelPair(designer, designer), SE, DESIGN, 1000, 1000, RandomStream(seed))
        assert df.value + 3 * df.mc_standard_error >= dd.value - 3 * dd.mc_standard_error


def test_standard_error_shrinks_with_outer_samples():
    model = ConjugateNormalModel(prior_var=2.0)
    pair = ModelPair(model, model)
    small = mc_internal_loss(pair, SE, DESIGN, 250, 400, RandomStream(3))
    large = mc_internal_loss(pair, SE, DESIGN, 4000, 400, RandomStream(3))
    ratio = small.mc_standard_error / large.mc_standard_error
    assert 2.5 < ratio < 6.5  # sqrt(16) = 4


def test_estimates_are_deterministic():
    model = ConjugateNormalModel()
    pair = ModelPair(model, model)
    a = mc_internal_loss(pair, SE, DESIGN, 300, 300, RandomStream(9))
    b = mc_internal_loss(pair, SE, DESIGN, 300, 300, RandomStream(9))
    assert a.value == b.value and a.mc_standard_error == b.mc_standard_error


def test_loss_support_checks():
    mm = MmFittedModel()
    pair = ModelPair(mm, mm)
    d = Design.on_interval([0.1, 0.5, 1.0])
    with pytest.raises(UnsupportedLossForModel):
        mc_internal_loss(pair, SI, d, 10, 10, RandomStream(0))
    with pytest.raises(UnsupportedLossForModel):
        mc_internal_loss(pair, PSE, d, 10, 10, RandomStream(0))
    model = ConjugateNormalModel()
    with pytest.raises(IncompatibleLoss):
        mc_external_loss(ModelPair(model, model, Compatibility.PARTIAL), SE, DESIGN, 10, 10, RandomStream(0))


def test_disjoint_squared_error_reduces_to_trace_variance():
    model = ConjugateNormalModel(prior_var=2.0)
    designer = ConjugateNormalModel(prior_var=5.0)
    se = mc_external_loss(ModelPair(model, designer, "disjoint"), SE, DESIGN, 300, 300, RandomStream(4))
    tv = mc_external_loss(ModelPair(model, designer, "disjoint"), TV, DESIGN, 300, 300, RandomStream(4))
    assert se.value == tv.value


def test_low_ess_warning():
    model = ConjugateNormalModel(prior_var=100.0, noise_var=1e-4)
    pair = ModelPair(model, model)
    with warnings.catch_warnings(record=True) as w:
        warnings.simplefilter("always")
        est = mc_internal_loss(pair, SE, DESIGN, 20, 1000, RandomStream(1))
    assert est.low_ess_count > 0
    assert any(issubclass(x.category, RuntimeWarning) for x in w)


def test_from_losses_rejects_nonfinite():
    with pytest.raises(NonFiniteValue):
        ExpectedLossEstimate.from_losses([1.0, np.inf], 0, 0)


def test_split_budget():
    assert split_budget(4_000_000) == (2000, 2000)
    B, inner = split_budget(10**6, "quadratic")
    assert inner == 100 and B == 10_000


# -- efficiency ---------------------------------------------------------------


def test_efficiency_examples():
    assert efficiency(3.0, 3.0) == 100.0
    assert efficiency(1.0, 2.0) == 50.0
    assert efficiency(0.0, 10 * math.log(1 / 0.85), scale="log", p=10) == pytest.approx(85.0, abs=1e-10)
    with pytest.raises(DomainError):
        efficiency(0.0, 1.0, scale="log")
