"""Conjugate normal linear fitted model against moment and full-treatment designers.

The fitted model is ``y ~ N(X gamma, sigma^2 I)`` with a normal-inverse-gamma
prior. Self-information objectives are reported up to an additive,
design-independent constant.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations
from typing import Callable

import numpy as np
from scipy import linalg as sla
from scipy import special

from .core import Design, Model
from .errors import DegreesOfFreedomError, DimensionMismatch, DomainError, NotPositiveDefinite
from .numerics import InverseGamma, cholesky_logdet, f_quantile

RANK_RTOL = 1e-10


@dataclass(frozen=True)
class NigPrior:
    """``gamma | sigma^2 ~ N(mu, sigma^2 V)``, ``sigma^2 ~ IG(a/2, b/2)``.

    With ``noninformative=True`` the prior precision ``V^{-1}`` is zero and
    ``mu``/``V`` are ignored.
    """

    mu: np.ndarray | None = None
    V: np.ndarray | None = None
    a: float = 0.0
    b: float = 0.0
    noninformative: bool = False

    def __post_init__(self):
        if self.noninformative:
            return
        if self.mu is None or self.V is None:
            raise DomainError("an informative prior needs mu and V")
        mu = np.asarray(self.mu, dtype=float).reshape(-1)
        V = np.atleast_2d(np.asarray(self.V, dtype=float))
        if V.shape != (mu.size, mu.size):
            raise DimensionMismatch("V must be p x p with p = len(mu)")
        cholesky_logdet(V)
        if not self.a > 0:
            raise DomainError("an informative prior needs a > 0")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "V", V)

    def mean_vector(self, p):
        return np.zeros(p) if self.noninformative else self.mu

    def precision(self, p):
        return np.zeros((p, p)) if self.noninformative else np.linalg.inv(self.V)


@dataclass(frozen=True)
class NigPosterior:
    mu_hat: np.ndarray
    V_hat: np.ndarray
    a_hat: float
    b_hat: float


def _posterior_precision(X, prior):
    p = X.shape[1]
    return X.T @ X + prior.precision(p)


def _spd_or_raise(A):
    """Factor ``A`` without jitter; near-singular input raises."""
    try:
        L = np.linalg.cholesky(A)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite("matrix is singular or indefinite") from exc
    d = np.diag(L)
    if d.min() ** 2 <= RANK_RTOL * max(np.max(np.diag(A)), np.finfo(float).tiny):
        raise NotPositiveDefinite("matrix is numerically singular")
    return L


def posterior_scale_matrix(X, prior):
    """``V_hat = (X^T X + V^{-1})^{-1}`` and its log-determinant."""
    L = _spd_or_raise(_posterior_precision(X, prior))
    Linv = sla.solve_triangular(L, np.eye(L.shape[0]), lower=True)
    return Linv.T @ Linv, -2.0 * float(np.sum(np.log(np.diag(L))))


def sigma_f_inverse(X, prior):
    """``(I + X V X^T)^{-1} = I - X V_hat X^T``; equals ``I - H_X`` when noninformative."""
    V_hat, _ = posterior_scale_matrix(X, prior)
    return np.eye(X.shape[0]) - X @ V_hat @ X.T


def nig_posterior(X, y, prior: NigPrior) -> NigPosterior:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).reshape(-1)
    n, p = X.shape
    if y.size != n:
        raise DimensionMismatch("y must have one entry per row of X")
    V_hat, _ = posterior_scale_matrix(X, prior)
    mu = prior.mean_vector(p)
    mu_hat = V_hat @ (X.T @ y + prior.precision(p) @ mu)
    r = y - X @ mu
    S = np.eye(n) - X @ V_hat @ X.T
    return NigPosterior(mu_hat, V_hat, prior.a + n, float(prior.b + r @ S @ r))


# ---------------------------------------------------------------------------
# Fitted and designer models
# ---------------------------------------------------------------------------


def second_order_model_matrix(design: Design) -> np.ndarray:
    """Intercept, linear, pure quadratic and pairwise interaction columns."""
    x = design.points
    k = x.shape[1]
    cols = [np.ones(x.shape[0])]
    cols += [x[:, j] for j in range(k)]
    cols += [x[:, j] ** 2 for j in range(k)]
    cols += [x[:, i] * x[:, j] for i, j in combinations(range(k), 2)]
    return np.column_stack(cols)


def first_order_model_matrix(design: Design) -> np.ndarray:
    return np.column_stack([np.ones(design.n), design.points])


class LinearFittedModel(Model):
    """Normal linear regression with a conjugate NIG prior.

    Also usable as a generative model inside the nested Monte Carlo
    estimators when the prior is informative.
    """

    def __init__(self, model_matrix: Callable[[Design], np.ndarray], prior: NigPrior):
        self.model_matrix = model_matrix
        self.prior = prior

    @property
    def interest_dim(self):
        return None if self.prior.noninformative else self.prior.mu.size

    def X(self, design):
        return np.atleast_2d(np.asarray(self.model_matrix(design), dtype=float))

    def posterior(self, design, y):
        return nig_posterior(self.X(design), y, self.prior)

    # -- generative hooks --------------------------------------------------

    def sample_prior(self, design, rng, size):
        if self.prior.noninformative:
            raise DomainError("cannot sample from a noninformative prior")
        sigma2 = InverseGamma(self.prior.a, self.prior.b).draw(rng, size)
        L = np.linalg.cholesky(self.prior.V)
        z = rng.standard_normal((size, self.prior.mu.size))
        gamma = self.prior.mu + np.sqrt(sigma2)[:, None] * (z @ L.T)
        return {"beta": gamma, "sigma2": sigma2}

    def sample_response(self, design, params, rng):
        X = self.X(design)
        mean = params["beta"] @ X.T
        return mean + np.sqrt(params["sigma2"])[:, None] * rng.standard_normal(mean.shape)

    def loglik_matrix(self, design, Y, params):
        X = self.X(design)
        M = params["beta"] @ X.T
        s2 = params["sigma2"]
        n = X.shape[0]
        quad = (
            np.einsum("bi,bi->b", Y, Y)[:, None] - 2.0 * (Y @ M.T) + np.einsum("ji,ji->j", M, M)[None, :]
        )
        return -0.5 * n * np.log(2 * math.pi * s2)[None, :] - 0.5 * quad / s2[None, :]

    def posterior_logpdf(self, design, Y, beta):
        """Log-density of the multivariate-t fitted posterior at ``beta``."""
        X = self.X(design)
        Y = np.atleast_2d(Y)
        beta = np.atleast_2d(beta)
        out = np.empty(len(Y))
        for i, (y, g) in enumerate(zip(Y, beta)):
            post = nig_posterior(X, y, self.prior)
            out[i] = _mvt_logpdf(g, post.mu_hat, post.b_hat * post.V_hat / post.a_hat, post.a_hat)
        return out

    def posterior_entropy(self, design, Y):
        X = self.X(design)
        Y = np.atleast_2d(Y)
        V_hat, logdet = posterior_scale_matrix(X, self.prior)
        p = X.shape[1]
        a_hat = self.prior.a + X.shape[0]
        S = sigma_f_inverse(X, self.prior)
        R = Y - (X @ self.prior.mean_vector(p))[None, :]
        b_hat = self.prior.b + np.einsum("bi,ij,bj->b", R, S, R)
        return _mvt_entropy_const(p, a_hat) + 0.5 * logdet + 0.5 * p * np.log(b_hat / a_hat)


def _mvt_logpdf(x, mean, scale, dof):
    p = mean.size
    f = cholesky_logdet(scale)
    r = x - mean
    q = r @ f.solve(r)
    return (
        special.gammaln((dof + p) / 2) - special.gammaln(dof / 2) - 0.5 * p * math.log(dof * math.pi)
        - 0.5 * f.log_det - 0.5 * (dof + p) * math.log1p(q / dof)
    )


def _mvt_entropy_const(p, dof):
    """Entropy of a standard multivariate t with ``dof`` degrees of freedom."""
    return (
        special.gammaln(dof / 2) + 0.5 * p * math.log(dof * math.pi) - special.gammaln((dof + p) / 2)
        + 0.5 * (dof + p) * (special.digamma((dof + p) / 2) - special.digamma(dof / 2))
    )


@dataclass(frozen=True)
class MomentDesigner:
    """Designer model known only through its response mean and covariance."""

    mean_builder: Callable[[Design], np.ndarray]
    cov_builder: Callable[[Design], np.ndarray]

    def moments(self, design):
        m = np.asarray(self.mean_builder(design), dtype=float).reshape(-1)
        S = np.atleast_2d(np.asarray(self.cov_builder(design), dtype=float))
        if m.size != design.n or S.shape != (design.n, design.n):
            raise DimensionMismatch("designer moments do not match the run count")
        return m, S


@dataclass(frozen=True)
class TreatmentStructure:
    Z: np.ndarray
    q: int
    d: int
    replication: np.ndarray
    labels: np.ndarray


def treatment_structure(design: Design, tol: float = 1e-9) -> TreatmentStructure:
    """Group runs whose rows agree within ``tol`` (max-norm) into treatments.

    Treatments are numbered in order of first appearance.
    """
    if tol < 0:
        raise DomainError("tol must be nonnegative")
    x = design.points
    n = x.shape[0]
    close = np.max(np.abs(x[:, None, :] - x[None, :, :]), axis=2) <= tol
    labels = np.full(n, -1)
    q = 0
    for i in range(n):
        if labels[i] >= 0:
            continue
        members = close[i] & (labels < 0)
        labels[members] = q
        q += 1
    Z = np.zeros((n, q))
    Z[np.arange(n), labels] = 1.0
    reps = Z.sum(axis=0).astype(int)
    return TreatmentStructure(Z, q, n - q, reps, labels)


class FullTreatmentDesigner(Model):
    """Each unique treatment has its own mean: ``y ~ N(Z tau, sigma^2 I)``.

    ``tau_j | sigma^2 ~ N(mu_j, kappa sigma^2 / r_j)`` (so ``V_D = kappa (Z^T Z)^{-1}``)
    and ``sigma^2 ~ IG(a/2, b/2)``. ``kappa=None`` means ``kappa = n``, the
    unit-information choice.
    """

    def __init__(self, kappa=None, a=6.0, b=4.0, mu=None, duplicate_tolerance=1e-9):
        if kappa is not None and not kappa > 0:
            raise DomainError("kappa must be positive")
        self.kappa = kappa
        self.a = float(a)
        self.b = float(b)
        self.mu = mu
        self.duplicate_tolerance = duplicate_tolerance

    def kappa_for(self, design):
        return float(design.n if self.kappa is None else self.kappa)

    def structure(self, design):
        return treatment_structure(design, self.duplicate_tolerance)

    def _mu(self, q):
        return np.zeros(q) if self.mu is None else np.broadcast_to(np.asarray(self.mu, dtype=float), (q,))

    def moments(self, design):
        if self.a <= 2:
            raise DegreesOfFreedomError("designer response variance needs a_D > 2")
        ts = self.structure(design)
        HZ = ts.Z @ np.diag(1.0 / ts.replication) @ ts.Z.T
        m = ts.Z @ self._mu(ts.q)
        S = self.b / (self.a - 2.0) * (np.eye(design.n) + self.kappa_for(design) * HZ)
        return m, S

    def as_moment_designer(self):
        return MomentDesigner(lambda d: self.moments(d)[0], lambda d: self.moments(d)[1])

    # -- generative hooks --------------------------------------------------

    @property
    def interest_dim(self):
        return None

    def sample_prior(self, design, rng, size):
        ts = self.structure(design)
        sigma2 = InverseGamma(self.a, self.b).draw(rng, size)
        sd = np.sqrt(self.kappa_for(design) * sigma2[:, None] / ts.replication[None, :])
        tau = self._mu(ts.q)[None, :] + sd * rng.standard_normal((size, ts.q))
        return {"beta": tau, "sigma2": sigma2}

    def sample_response(self, design, params, rng):
        Z = self.structure(design).Z
        mean = params["beta"] @ Z.T
        return mean + np.sqrt(params["sigma2"])[:, None] * rng.standard_normal(mean.shape)


# ---------------------------------------------------------------------------
# Closed-form expected losses
# ---------------------------------------------------------------------------


def expected_bhat(design, fitted: LinearFittedModel, designer) -> float:
    """Designer expectation of the fitted posterior scale ``b_hat``."""
    X = fitted.X(design)
    m, S_D = designer.moments(design)
    Sinv = sigma_f_inverse(X, fitted.prior)
    r = m - X @ fitted.prior.mean_vector(X.shape[1])
    return float(fitted.prior.b + r @ Sinv @ r + np.sum(S_D * Sinv))


def external_loss_closed(kind, design: Design, fitted: LinearFittedModel, designer) -> float:
    """External expected self-information (``"SI"``) or squared error (``"SE"``) loss.

    SI uses ``E(log b_hat) ~ log E(b_hat)`` and omits its additive constant,
    which makes it an upper bound (up to that constant) on the exact value.
    """
    X = fitted.X(design)
    n, p = X.shape
    V_hat, logdet = posterior_scale_matrix(X, fitted.prior)
    eb = expected_bhat(design, fitted, designer)
    if kind == "SE":
        a_hat = fitted.prior.a + n
        if a_hat <= 2:
            raise DegreesOfFreedomError("squared-error loss needs a_hat > 2")
        return eb / (a_hat - 2.0) * float(np.trace(V_hat))
    if kind == "SI":
        return 0.5 * logdet + 0.5 * p * math.log(eb)
    raise DomainError(f"unknown loss kind {kind!r}")


def internal_loss_closed(kind, design: Design, fitted: LinearFittedModel) -> float:
    X = fitted.X(design)
    V_hat, logdet = posterior_scale_matrix(X, fitted.prior)
    if kind == "SE":
        if fitted.prior.a <= 2:
            raise DegreesOfFreedomError("squared-error loss needs a_F > 2")
        return fitted.prior.b / (fitted.prior.a - 2.0) * float(np.trace(V_hat))
    if kind == "SI":
        return 0.5 * logdet
    raise DomainError(f"unknown loss kind {kind!r}")


def expected_bhat_fulltreatment(design: Design, kappa, b_D, a_D, p, tol=1e-9) -> float:
    """``E(b_hat)`` under a full-treatment designer and a noninformative fitted prior."""
    if a_D <= 2:
        raise DegreesOfFreedomError("needs a_D > 2")
    d = treatment_structure(design, tol).d
    n = design.n
    return b_D / (a_D - 2.0) * ((1.0 + kappa) * (n - p) - kappa * d)


def hat_trace(design: Design, model_matrix, tol=1e-9) -> float:
    """``tr(H_X H_Z)`` for the fitted and full-treatment projection matrices."""
    X = np.asarray(model_matrix(design), dtype=float)
    ts = treatment_structure(design, tol)
    HX = X @ np.linalg.solve(X.T @ X, X.T)
    HZ = ts.Z @ np.diag(1.0 / ts.replication) @ ts.Z.T
    return float(np.sum(HX * HZ.T))


def sample_bhat(design, fitted: LinearFittedModel, designer: Model, size, stream) -> np.ndarray:
    """Draws of ``b_hat`` with responses generated from ``designer``."""
    X = fitted.X(design)
    params = designer.sample_prior(design, stream.child(0).generator(), size)
    Y = designer.sample_response(design, params, stream.child(1).generator())
    R = Y - (X @ fitted.prior.mean_vector(X.shape[1]))[None, :]
    S = sigma_f_inverse(X, fitted.prior)
    return fitted.prior.b + np.einsum("bi,ij,bj->b", R, S, R)


# ---------------------------------------------------------------------------
# Design criteria
# ---------------------------------------------------------------------------

OBJECTIVE_KINDS = ("DE", "AE", "D", "A", "DP", "AP")
LOG_SCALE_KINDS = ("DE", "D", "DP")


def objective(kind, design: Design, model_matrix=second_order_model_matrix, kappa=None, alpha=None, tol=1e-9):
    """Design criterion value; ``+inf`` marks an inadmissible design.

    ``DE``/``AE`` are the external self-information/squared-error objectives
    under the full-treatment designer with noninformative priors, ``D``/``A``
    their internal counterparts and ``DP``/``AP`` the pure-error-adjusted
    criteria, which need ``alpha``.
    """
    if kind not in OBJECTIVE_KINDS:
        raise DomainError(f"unknown objective {kind!r}")
    if kind in ("DP", "AP") and alpha is None:
        raise DomainError("DP/AP objectives need alpha")
    X = np.asarray(model_matrix(design), dtype=float)
    n, p = X.shape
    try:
        L = _spd_or_raise(X.T @ X)
    except NotPositiveDefinite:
        return math.inf
    logdet = 2.0 * float(np.sum(np.log(np.diag(L))))
    if kind == "D":
        return -logdet
    Linv = sla.solve_triangular(L, np.eye(p), lower=True)
    trinv = float(np.sum(Linv * Linv))
    if kind == "A":
        return trinv
    d = treatment_structure(design, tol).d
    if kind in ("DE", "AE"):
        k = float(n if kappa is None else kappa)
        bracket = (1.0 + k) * (n - p) - k * d
        if bracket <= 0:
            return math.inf
        return p * math.log(bracket) - logdet if kind == "DE" else bracket * trinv
    if d < 1:
        return math.inf
    if kind == "DP":
        return p * math.log(f_quantile(p, d, 1.0 - alpha)) - logdet
    return f_quantile(1, d, 1.0 - alpha) * trinv


def efficiency_scale(kind):
    return "log" if kind in LOG_SCALE_KINDS else "ratio"
