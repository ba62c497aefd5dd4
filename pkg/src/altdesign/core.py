"""Designs, loss functions and nested Monte Carlo expected-loss estimators.

A *model* is any object exposing the sampling/likelihood hooks documented on
:class:`Model`. Parameters travel as dicts of arrays whose leading axis
indexes draws, so every estimator here is vectorised over the outer and
inner Monte Carlo samples.

Random-number layout for an estimator called with stream ``s``:

* ``s.child(0)`` outer prior draws (designer for external, fitted for internal)
* ``s.child(1)`` outer responses
* ``s.child(2)`` inner fitted-prior draws, shared by every outer sample

With identical fitted and designer models the internal and external
estimators therefore consume identical draws.
"""

from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import (
    AllWeightsDegenerate,
    DimensionMismatch,
    DomainError,
    IncompatibleLoss,
    NonFiniteValue,
    UnsupportedLossForModel,
)
from .numerics import RandomStream

CHUNK = 512
LOW_ESS_FRACTION = 0.01
LOG_WEIGHT_FLOOR = -700.0


# ---------------------------------------------------------------------------
# Designs and losses
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Design:
    """An ``n x k`` matrix of treatment-level combinations with column bounds."""

    points: np.ndarray
    bounds: np.ndarray

    def __post_init__(self):
        pts = np.array(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        bnds = np.array(self.bounds, dtype=float).reshape(-1, 2)
        if pts.ndim != 2 or pts.shape[0] < 1 or pts.shape[1] < 1:
            raise DimensionMismatch(f"design points must be n x k with n, k >= 1, got {pts.shape}")
        if bnds.shape[0] != pts.shape[1]:
            raise DimensionMismatch("one [lo, hi] bound pair is needed per design column")
        if np.any(bnds[:, 1] <= bnds[:, 0]):
            raise DomainError("every bound needs lo < hi")
        if not np.all(np.isfinite(pts)):
            raise NonFiniteValue("design has non-finite entries")
        span = bnds[:, 1] - bnds[:, 0]
        slack = 1e-12 * span
        if np.any(pts < bnds[:, 0] - slack) or np.any(pts > bnds[:, 1] + slack):
            raise DomainError("design point outside its column bounds")
        pts.setflags(write=False)
        bnds.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "bounds", bnds)

    @classmethod
    def on_interval(cls, x, lo=0.0, hi=1.0):
        return cls(np.asarray(x, dtype=float).reshape(-1, 1), [[lo, hi]])

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def k(self) -> int:
        return self.points.shape[1]

    def with_value(self, i, j, value) -> "Design":
        pts = self.points.copy()
        pts[i, j] = value
        return replace(self, points=pts)

    def permuted(self, order) -> "Design":
        return replace(self, points=self.points[np.asarray(order)])

    def __eq__(self, other):
        return (
            isinstance(other, Design)
            and np.array_equal(self.points, other.points)
            and np.array_equal(self.bounds, other.bounds)
        )

    def __hash__(self):
        return hash((self.points.tobytes(), self.bounds.tobytes()))


class LossKind(str, enum.Enum):
    SELF_INFORMATION = "SI"
    SQUARED_ERROR = "SE"
    ENTROPY = "E"
    TRACE_VARIANCE = "TV"
    PREDICTIVE_SQUARED_ERROR = "PSE"


_ROLES = {
    LossKind.SELF_INFORMATION: "generator",
    LossKind.SQUARED_ERROR: "generator",
    LossKind.ENTROPY: "composite",
    LossKind.TRACE_VARIANCE: "composite",
    LossKind.PREDICTIVE_SQUARED_ERROR: "generator",
}

# generator -> composite obtained by taking its fitted-posterior expectation
COMPOSITE_OF = {
    LossKind.SELF_INFORMATION: LossKind.ENTROPY,
    LossKind.SQUARED_ERROR: LossKind.TRACE_VARIANCE,
}


@dataclass(frozen=True)
class LossSpec:
    kind: LossKind

    def __post_init__(self):
        object.__setattr__(self, "kind", LossKind(self.kind))

    @property
    def role(self) -> str:
        return _ROLES[self.kind]


SI = LossSpec(LossKind.SELF_INFORMATION)
SE = LossSpec(LossKind.SQUARED_ERROR)
ENTROPY = LossSpec(LossKind.ENTROPY)
TV = LossSpec(LossKind.TRACE_VARIANCE)
PSE = LossSpec(LossKind.PREDICTIVE_SQUARED_ERROR)


# ---------------------------------------------------------------------------
# Models
# ---------------------------------------------------------------------------


class Model:
    """Hooks a fitted or designer model provides to the estimators.

    Subclasses implement:

    ``sample_prior(design, rng, size) -> dict``
        Parameter draws; arrays with leading axis ``size``.
    ``interest(params) -> (size, p)``
        The parameters of interest extracted from a draw dict.
    ``sample_response(design, params, rng) -> (size, n)``
        One response vector per parameter draw.
    ``loglik_matrix(design, Y, params) -> (len(Y), size)``
        Log-likelihood of every response row under every parameter draw.
        Only needed when the model is used as the fitted model.

    Optionally, when the posterior is available in closed form:

    ``posterior_logpdf(design, Y, beta) -> (len(Y),)`` and
    ``posterior_entropy(design, Y) -> (len(Y),)``.
    """

    interest_dim: int = 1

    def sample_prior(self, design, rng, size):
        raise NotImplementedError

    def interest(self, params):
        return np.asarray(params["beta"]).reshape(len(params["beta"]), -1)

    def sample_response(self, design, params, rng):
        raise NotImplementedError

    def loglik_matrix(self, design, Y, params):
        raise NotImplementedError

    @property
    def has_closed_posterior(self) -> bool:
        return type(self).posterior_logpdf is not Model.posterior_logpdf

    def posterior_logpdf(self, design, Y, beta):
        raise UnsupportedLossForModel(f"{type(self).__name__} has no closed-form posterior")

    def posterior_entropy(self, design, Y):
        raise UnsupportedLossForModel(f"{type(self).__name__} has no closed-form posterior")


class Compatibility(str, enum.Enum):
    DISJOINT = "disjoint"
    COMPATIBLE = "compatible"
    PARTIAL = "partial"


@dataclass(frozen=True)
class ModelPair:
    fitted: Model
    designer: Model
    compatibility: Compatibility = Compatibility.COMPATIBLE

    def __post_init__(self):
        object.__setattr__(self, "compatibility", Compatibility(self.compatibility))
        if (
            self.compatibility is Compatibility.COMPATIBLE
            and self.fitted.interest_dim != self.designer.interest_dim
        ):
            raise DimensionMismatch("compatible models must share the interest-parameter dimension")


class ConjugateNormalModel(Model):
    """Scalar-parameter normal regression with known noise variance.

    ``y_i ~ N(x_i * beta, noise_var)`` with ``beta ~ N(prior_mean, prior_var)``
    and ``x`` the first design column. The posterior is normal, so every loss
    has a closed form; used as the reference model for estimator checks.
    """

    interest_dim = 1

    def __init__(self, prior_mean=0.0, prior_var=1.0, noise_var=1.0):
        if prior_var <= 0 or noise_var <= 0:
            raise DomainError("variances must be positive")
        self.prior_mean = float(prior_mean)
        self.prior_var = float(prior_var)
        self.noise_var = float(noise_var)

    def _x(self, design):
        return design.points[:, 0]

    def sample_prior(self, design, rng, size):
        beta = self.prior_mean + math.sqrt(self.prior_var) * rng.standard_normal(size)
        return {"beta": beta}

    def sample_response(self, design, params, rng):
        x = self._x(design)
        beta = np.asarray(params["beta"])
        noise = math.sqrt(self.noise_var) * rng.standard_normal((beta.size, x.size))
        return beta[:, None] * x[None, :] + noise

    def loglik_matrix(self, design, Y, params):
        x = self._x(design)
        beta = np.asarray(params["beta"])
        n = x.size
        yy = np.einsum("bi,bi->b", Y, Y)
        xy = Y @ x
        quad = yy[:, None] - 2.0 * xy[:, None] * beta[None, :] + (x @ x) * beta[None, :] ** 2
        return -0.5 * n * math.log(2 * math.pi * self.noise_var) - 0.5 * quad / self.noise_var

    def posterior_variance(self, design):
        x = self._x(design)
        return 1.0 / (1.0 / self.prior_var + (x @ x) / self.noise_var)

    def posterior_mean(self, design, Y):
        v = self.posterior_variance(design)
        return v * (self.prior_mean / self.prior_var + (np.atleast_2d(Y) @ self._x(design)) / self.noise_var)

    def posterior_logpdf(self, design, Y, beta):
        v = self.posterior_variance(design)
        m = self.posterior_mean(design, Y)
        b = np.asarray(beta).reshape(-1)
        return -0.5 * math.log(2 * math.pi * v) - 0.5 * (b - m) ** 2 / v

    def posterior_entropy(self, design, Y):
        v = self.posterior_variance(design)
        return np.full(len(np.atleast_2d(Y)), 0.5 * math.log(2 * math.pi * math.e * v))


# ---------------------------------------------------------------------------
# Self-normalised importance sampling
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SnisMoments:
    mean: np.ndarray
    second_moment: np.ndarray
    ess: float

    @property
    def covariance(self):
        return self.second_moment - np.outer(self.mean, self.mean)


def _normalised_weights(logw):
    logw = np.asarray(logw, dtype=float)
    # NaN and +inf both propagate to the row maximum
    top = np.max(logw, axis=-1, keepdims=True)
    if np.any(np.isnan(top)) or np.any(top == np.inf):
        raise NonFiniteValue("log-likelihood evaluated to NaN or +inf")
    if np.any(top == -np.inf):
        bad = np.where(top.reshape(-1) == -np.inf)[0]
        raise AllWeightsDegenerate(f"no finite log-weight for response(s) {bad[:5].tolist()}", ess=0.0)
    w = np.subtract(logw, top)
    # exp() is very slow on the denormal range; weights below e^-700 of the
    # largest are invisible in every double-precision sum anyway
    np.maximum(w, LOG_WEIGHT_FLOOR, out=w)
    np.exp(w, out=w)
    w /= w.sum(axis=-1, keepdims=True)
    ess = 1.0 / np.einsum("...j,...j->...", w, w)
    return w, ess


def snis_posterior_moments(theta, log_lik, y, nuisance=None) -> SnisMoments:
    """Posterior mean and second moment of ``theta`` given one response ``y``.

    Parameters
    ----------
    theta : array (B_inner, p) or (B_inner,)
        Draws of the interest parameters from the fitted prior.
    log_lik : callable
        ``log_lik(y, theta, nuisance)`` returning the ``B_inner`` fitted
        log-likelihood values.
    y : array (n,)
    nuisance : array, optional
        Matching nuisance-parameter draws, passed through to ``log_lik``.

    Weights are formed in log space after subtracting their maximum.
    """
    theta = np.asarray(theta, dtype=float)
    if theta.ndim == 1:
        theta = theta[:, None]
    if theta.shape[0] < 2:
        raise DomainError("need at least two prior draws")
    logw = np.asarray(log_lik(y, theta, nuisance), dtype=float).reshape(-1)
    if logw.shape[0] != theta.shape[0]:
        raise DimensionMismatch("log_lik must return one value per prior draw")
    w, ess = _normalised_weights(logw)
    mean = w @ theta
    second = np.einsum("j,ja,jb->ab", w, theta, theta)
    return SnisMoments(mean, second, float(ess))


# ---------------------------------------------------------------------------
# Expected-loss estimators
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ExpectedLossEstimate:
    """Monte Carlo estimate of an expected loss.

    ``mc_standard_error`` is the sample standard deviation of the per-outer
    losses over ``sqrt(B)``; it is reported as 0 with ``degenerate=True``
    when ``B == 1``.
    """

    value: float
    mc_standard_error: float
    outer_samples: int
    inner_samples: int
    root_seed: int
    degenerate: bool = False
    min_ess: float = float("nan")
    low_ess_count: int = 0
    losses: np.ndarray | None = field(default=None, repr=False, compare=False)

    @classmethod
    def from_losses(cls, losses, inner, seed, **extra):
        losses = np.asarray(losses, dtype=float)
        if not np.all(np.isfinite(losses)):
            raise NonFiniteValue("per-sample loss is not finite")
        B = losses.size
        value = float(np.sum(losses) / B)
        if B > 1:
            se = float(np.std(losses, ddof=1) / math.sqrt(B))
        else:
            se = 0.0
        return cls(value, se, B, inner, seed, degenerate=B == 1, losses=losses, **extra)

    def __float__(self):
        return self.value


def split_budget(total, coupling="equal"):
    """Outer/inner sample sizes ``(B, B_inner)`` for a budget ``B * B_inner``.

    ``"equal"`` gives ``B = B_inner``; ``"quadratic"`` gives ``B ~ B_inner**2``.
    """
    if total < 1:
        raise DomainError("budget must be positive")
    if coupling == "equal":
        inner = int(round(math.sqrt(total)))
    elif coupling == "quadratic":
        inner = int(round(total ** (1.0 / 3.0)))
    else:
        raise DomainError(f"unknown coupling {coupling!r}")
    inner = max(inner, 1)
    return max(int(round(total / inner)), 1), inner


def _check_loss(pair, loss):
    kind = loss.kind
    if kind is LossKind.PREDICTIVE_SQUARED_ERROR:
        raise UnsupportedLossForModel("predictive squared error needs a model-specific estimator")
    if kind in (LossKind.SELF_INFORMATION, LossKind.ENTROPY) and not pair.fitted.has_closed_posterior:
        raise UnsupportedLossForModel(
            f"{kind.name} loss needs a closed-form fitted posterior; {type(pair.fitted).__name__} has none"
        )
    if kind in (LossKind.SQUARED_ERROR, LossKind.SELF_INFORMATION) and pair.compatibility is Compatibility.PARTIAL:
        raise IncompatibleLoss(
            "generator loss under partially shared parameters needs the conditional fitted posterior "
            "of the fitted-only parameters"
        )


def _per_sample_losses(pair, loss, design, beta_true, Y, inner_params, inner_beta):
    """Loss for each outer sample, processed in fixed-size chunks."""
    kind = loss.kind
    disjoint = pair.compatibility is Compatibility.DISJOINT
    fitted = pair.fitted
    B = Y.shape[0]
    out = np.empty(B)
    min_ess = np.inf
    low = 0
    if kind in (LossKind.SELF_INFORMATION, LossKind.ENTROPY):
        if kind is LossKind.ENTROPY or disjoint:
            out[:] = fitted.posterior_entropy(design, Y)
        else:
            out[:] = -fitted.posterior_logpdf(design, Y, beta_true)
        return out, float("nan"), 0
    sq = np.einsum("ja,ja->j", inner_beta, inner_beta)
    for start in range(0, B, CHUNK):
        stop = min(start + CHUNK, B)
        logw = fitted.loglik_matrix(design, Y[start:stop], inner_params)
        w, ess = _normalised_weights(logw)
        mean = w @ inner_beta
        min_ess = min(min_ess, float(np.min(ess)))
        low += int(np.sum(ess < LOW_ESS_FRACTION * inner_beta.shape[0]))
        if kind is LossKind.TRACE_VARIANCE or disjoint:
            out[start:stop] = w @ sq - np.einsum("ba,ba->b", mean, mean)
        else:
            diff = beta_true[start:stop] - mean
            out[start:stop] = np.einsum("ba,ba->b", diff, diff)
    return out, min_ess, low


def _estimate(pair, loss, design, B, B_inner, stream, outer_model):
    if B < 1 or B_inner < 2:
        raise DomainError("need B >= 1 and B_inner >= 2")
    loss = loss if isinstance(loss, LossSpec) else LossSpec(loss)
    _check_loss(pair, loss)
    params = outer_model.sample_prior(design, stream.child(0).generator(), B)
    Y = outer_model.sample_response(design, params, stream.child(1).generator())
    beta_true = outer_model.interest(params)
    needs_inner = loss.kind in (LossKind.SQUARED_ERROR, LossKind.TRACE_VARIANCE)
    if needs_inner:
        inner_params = pair.fitted.sample_prior(design, stream.child(2).generator(), B_inner)
        inner_beta = pair.fitted.interest(inner_params)
    else:
        inner_params = inner_beta = None
    losses, min_ess, low = _per_sample_losses(pair, loss, design, beta_true, Y, inner_params, inner_beta)
    if low:
        warnings.warn(
            f"{low} of {B} responses had effective sample size below {LOW_ESS_FRACTION:.0%} of B_inner",
            RuntimeWarning,
            stacklevel=3,
        )
    return ExpectedLossEstimate.from_losses(
        losses, B_inner if needs_inner else 0, stream.root_seed, min_ess=min_ess, low_ess_count=low
    )


def mc_internal_loss(pair: ModelPair, loss, design: Design, B: int, B_inner: int, stream: RandomStream):
    """Internal expected loss: parameters and responses drawn from the fitted model."""
    internal = ModelPair(pair.fitted, pair.fitted, Compatibility.COMPATIBLE)
    return _estimate(internal, loss, design, B, B_inner, stream, pair.fitted)


def mc_external_loss(pair: ModelPair, loss, design: Design, B: int, B_inner: int, stream: RandomStream):
    """External expected loss: outer draws from the designer, inner posterior from the fitted model.

    For disjoint pairs a generator loss is averaged over the fitted posterior
    of the fitted-only parameters, so squared error reduces to the trace of
    the fitted posterior variance and self-information to the entropy.
    """
    return _estimate(pair, loss, design, B, B_inner, stream, pair.designer)


def efficiency(reference_loss, candidate_loss, scale="ratio", p=None) -> float:
    """Efficiency (in percent) of a candidate design relative to a reference.

    ``scale="log"`` is for objectives on a log-determinant scale and needs the
    parameter count ``p``; ``scale="ratio"`` divides the losses directly.
    """
    if scale == "log":
        if p is None or p < 1:
            raise DomainError("log-scale efficiency needs p >= 1")
        return 100.0 * math.exp((reference_loss - candidate_loss) / p)
    if scale == "ratio":
        if not candidate_loss > 0:
            raise DomainError("ratio efficiency needs a positive candidate loss")
        return 100.0 * reference_loss / candidate_loss
    raise DomainError(f"unknown efficiency scale {scale!r}")
