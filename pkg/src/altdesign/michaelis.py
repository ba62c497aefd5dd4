"""Michaelis-Menten kinetics with a Gaussian-process discrepancy designer.

The fitted model is ``y_i = eta(theta, x_i) + e_i`` with iid normal errors.
The designer adds a zero-mean discrepancy with Matérn(5/2) correlation, so
responses are ``N(eta(theta, x), sigma2 * (I + rho * C))``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .asymptotic import sandwich_from_matrices
from .core import (
    SE,
    TV,
    Compatibility,
    Design,
    ExpectedLossEstimate,
    Model,
    ModelPair,
    mc_external_loss,
    mc_internal_loss,
)
from .errors import DomainError
from .numerics import Exponential, RandomStream, Uniform, batched_cholesky, cholesky_logdet, matern52

SCALE_L = 400.0
LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class MmParams:
    theta1: float
    theta2: float
    L: float = SCALE_L

    def __post_init__(self):
        if not (self.theta1 > 0 and self.theta2 > 0 and self.L > 0):
            raise DomainError("theta1, theta2 and L must be positive")


def _check_x(x):
    x = np.asarray(x, dtype=float)
    if np.any(x < 0) or np.any(x > 1):
        raise DomainError("concentrations must lie in [0, 1]")
    return x


def mm_eta(params: MmParams, x):
    x = _check_x(x)
    xl = x * params.L
    out = params.theta1 * xl / (xl + params.theta2)
    return float(out) if out.ndim == 0 else out


def mm_eta_grad(params: MmParams, x):
    """Gradient of the mean response with respect to ``(theta1, theta2)``.

    Returns shape ``(2,)`` for scalar ``x`` and ``(len(x), 2)`` otherwise.
    """
    x = _check_x(x)
    xl = x * params.L
    denom = xl + params.theta2
    g = np.stack([xl / denom, -params.theta1 * xl / denom**2], axis=-1)
    return g


def eta_batch(theta, x, L=SCALE_L):
    """Mean responses for many parameter rows: ``theta (S, 2)``, ``x (n,)`` -> ``(S, n)``."""
    theta = np.atleast_2d(theta)
    xl = np.asarray(x, dtype=float)[None, :] * L
    return theta[:, :1] * xl / (xl + theta[:, 1:2])


def grad_batch(theta, x, L=SCALE_L):
    """Gradients ``(S, n, 2)``."""
    theta = np.atleast_2d(theta)
    xl = np.asarray(x, dtype=float)[None, :] * L
    denom = xl + theta[:, 1:2]
    return np.stack([xl / denom, -theta[:, :1] * xl / denom**2], axis=-1)


def correlation_matrix(x, alpha):
    x = np.asarray(x, dtype=float).reshape(-1)
    return matern52(np.abs(x[:, None] - x[None, :]), alpha)


def designer_covariance(sigma2, rho, alpha, design: Design):
    """``sigma2 * (I + rho * C)`` with Matérn(5/2) correlation ``C``."""
    if not (sigma2 > 0 and rho >= 0 and alpha > 0):
        raise DomainError("need sigma2 > 0, rho >= 0, alpha > 0")
    x = design.points[:, 0]
    cov = sigma2 * (np.eye(x.size) + rho * correlation_matrix(x, alpha))
    cholesky_logdet(cov)
    return cov


def _mvn_logpdf(y, mean, cov):
    fac = cholesky_logdet(cov)
    r = np.asarray(y, dtype=float) - mean
    return -0.5 * (r.size * LOG_2PI + fac.log_det + float(r @ fac.solve(r)))


def loglik(model, y, params, design: Design):
    """Exact log-density of one response vector.

    ``model`` is ``"fitted"`` (``params``: theta1, theta2, sigma2) or
    ``"designer"`` (additionally rho, alpha).
    """
    x = design.points[:, 0]
    theta = MmParams(params["theta1"], params["theta2"], params.get("L", SCALE_L))
    mean = mm_eta(theta, x)
    if model == "fitted":
        cov = params["sigma2"] * np.eye(x.size)
    elif model == "designer":
        cov = designer_covariance(params["sigma2"], params["rho"], params["alpha"], design)
    else:
        raise DomainError(f"unknown model {model!r}")
    return _mvn_logpdf(y, mean, cov)


@dataclass(frozen=True)
class MmPriors:
    """Prior settings shared by the fitted and designer models.

    ``alpha_rate`` is the rate of the exponential prior on the Matérn range.
    """

    theta_low: float = 20.0
    theta_high: float = 200.0
    sigma2_rate: float = 1.0
    rho_rate: float = 1.0
    alpha_rate: float = 5.0
    L: float = SCALE_L

    def validate(self):
        for dist in (self.theta, Exponential(self.sigma2_rate), Exponential(self.rho_rate),
                     Exponential(self.alpha_rate)):
            dist.validate()
        if not self.L > 0:
            raise DomainError("L must be positive")

    @property
    def theta(self):
        return Uniform(self.theta_low, self.theta_high)

    @property
    def sigma2_mean(self):
        return 1.0 / self.sigma2_rate

    @property
    def rho_mean(self):
        return 1.0 / self.rho_rate

    def sample_theta(self, rng, size):
        return self.theta.draw(rng, (size, 2))


class MmFittedModel(Model):
    interest_dim = 2

    def __init__(self, priors: MmPriors | None = None):
        self.priors = priors or MmPriors()
        self.priors.validate()

    def sample_prior(self, design, rng, size):
        theta = self.priors.sample_theta(rng, size)
        sigma2 = Exponential(self.priors.sigma2_rate).draw(rng, size)
        return {"theta": theta, "sigma2": sigma2}

    def interest(self, params):
        return params["theta"]

    def mean(self, design, params):
        return eta_batch(params["theta"], design.points[:, 0], self.priors.L)

    def sample_response(self, design, params, rng):
        mu = self.mean(design, params)
        return mu + np.sqrt(params["sigma2"])[:, None] * rng.standard_normal(mu.shape)

    def loglik_matrix(self, design, Y, params):
        mu = self.mean(design, params)
        s2 = params["sigma2"]
        n = mu.shape[1]
        a = -0.5 / s2
        const = -0.5 * n * (LOG_2PI + np.log(s2)) + a * np.einsum("si,si->s", mu, mu)
        # a_s * ||y_b - mu_s||^2 + const_s expanded so the cross term is one matmul
        out = Y @ (mu * (-2.0 * a)[:, None]).T
        out += np.einsum("bi,bi->b", Y, Y)[:, None] * a[None, :]
        out += const[None, :]
        return out


class GpDiscrepancyDesigner(Model):
    interest_dim = 2

    def __init__(self, priors: MmPriors | None = None, chunk: int = 1024):
        self.priors = priors or MmPriors()
        self.priors.validate()
        self.chunk = chunk

    def sample_prior(self, design, rng, size):
        p = self.priors
        theta = p.sample_theta(rng, size)
        sigma2 = Exponential(p.sigma2_rate).draw(rng, size)
        rho = Exponential(p.rho_rate).draw(rng, size)
        alpha = Exponential(p.alpha_rate).draw(rng, size)
        return {"theta": theta, "sigma2": sigma2, "rho": rho, "alpha": alpha}

    def interest(self, params):
        return params["theta"]

    def sample_response(self, design, params, rng):
        x = design.points[:, 0]
        mu = eta_batch(params["theta"], x, self.priors.L)
        z = rng.standard_normal(mu.shape)
        dist = np.abs(x[:, None] - x[None, :])
        eye = np.eye(x.size)
        out = np.empty_like(mu)
        for start in range(0, mu.shape[0], self.chunk):
            sl = slice(start, start + self.chunk)
            alpha = params["alpha"][sl]
            C = matern52(dist[None, :, :], alpha[:, None, None])
            cov = eye + params["rho"][sl, None, None] * C
            L = batched_cholesky(cov)
            out[sl] = mu[sl] + np.sqrt(params["sigma2"][sl])[:, None] * np.einsum("bij,bj->bi", L, z[sl])
        return out


def mm_pair(priors: MmPriors | None = None) -> ModelPair:
    priors = priors or MmPriors()
    return ModelPair(MmFittedModel(priors), GpDiscrepancyDesigner(priors), Compatibility.COMPATIBLE)


MM_KINDS = ("ext-SE", "ext-TV", "int-SE")


def mm_objectives(kind, design: Design, B, B_inner, stream: RandomStream,
                  priors: MmPriors | None = None) -> ExpectedLossEstimate:
    """Nested Monte Carlo expected loss for the interest parameters ``theta``."""
    pair = mm_pair(priors)
    if kind == "ext-SE":
        return mc_external_loss(pair, SE, design, B, B_inner, stream)
    if kind == "ext-TV":
        return mc_external_loss(pair, TV, design, B, B_inner, stream)
    if kind == "int-SE":
        return mc_internal_loss(pair, SE, design, B, B_inner, stream)
    raise DomainError(f"unknown objective {kind!r}; expected one of {MM_KINDS}")


# ---------------------------------------------------------------------------
# Large-sample approximations
# ---------------------------------------------------------------------------


def kl_objective(theta, design: Design, sigma2, rho, L=SCALE_L):
    """``t -> E[log fitted density at t]`` with responses from the designer.

    ``t = (theta1, theta2, sigma2)``; the discrepancy range drops out because
    the correlation has unit diagonal.
    """
    x = design.points[:, 0]
    n = x.size
    eta0 = eta_batch(np.asarray(theta, dtype=float), x, L)[0]
    noise = n * sigma2 * (1.0 + rho)

    def d(t):
        t = np.asarray(t, dtype=float)
        if t[2] <= 0 or t[1] <= -x.min() * L:
            return -math.inf
        r = eta0 - eta_batch(t[:2], x, L)[0]
        return -0.5 * n * (LOG_2PI + math.log(t[2])) - (r @ r + noise) / (2.0 * t[2])

    return d


def gradient_information(theta, x, L=SCALE_L):
    """``sum_i grad eta grad eta^T`` at one parameter value."""
    G = grad_batch(np.asarray(theta, dtype=float), x, L)[0]
    return G.T @ G


def mm_sandwich(theta, design: Design, sigma2, rho, alpha, L=SCALE_L):
    """Sandwich matrices at the KL projection for fixed designer hyperparameters.

    Parameters are ordered ``(sigma2, theta1, theta2)`` so the fitted-only
    noise variance forms the leading block. Expectations are exact normal
    moments under the designer covariance.
    """
    x = design.points[:, 0]
    n = x.size
    cov = designer_covariance(sigma2, rho, alpha, design)
    s2t = float(np.trace(cov)) / n
    G = grad_batch(np.asarray(theta, dtype=float), x, L)[0]
    info = np.zeros((3, 3))
    info[0, 0] = n / (2.0 * s2t**2)
    info[1:, 1:] = G.T @ G / s2t
    outer = np.zeros((3, 3))
    outer[0, 0] = 2.0 * float(np.sum(cov * cov)) / (4.0 * s2t**4)
    outer[1:, 1:] = G.T @ cov @ G / s2t**2
    return sandwich_from_matrices(info, outer, p_gamma=1), s2t


def _trace_inv_2x2(M):
    det = M[..., 0, 0] * M[..., 1, 1] - M[..., 0, 1] * M[..., 1, 0]
    tr = M[..., 0, 0] + M[..., 1, 1]
    scale = np.maximum(np.abs(M[..., 0, 0] * M[..., 1, 1]), 1e-300)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(det > 1e-12 * scale, tr / det, np.inf)
    return out


def mm_asymptotic(kind, design: Design, B, stream: RandomStream, priors: MmPriors | None = None) -> float:
    """Prior average of the approximate trace-variance / squared-error loss.

    ``"eq19"`` scales by the designer noise ``sigma0^2 (1 + rho0)`` and
    ``"eq20"`` by the fitted prior mean noise variance. Both use the same
    parameter draws, so their ratio is design independent. Designs without
    two distinct positive concentrations return ``inf``.
    """
    priors = priors or MmPriors()
    if kind == "eq19":
        scale = priors.sigma2_mean * (1.0 + priors.rho_mean)
    elif kind == "eq20":
        scale = priors.sigma2_mean
    else:
        raise DomainError(f"unknown kind {kind!r}")
    x = design.points[:, 0]
    theta = priors.sample_theta(stream.generator(), B)
    G = grad_batch(theta, x, priors.L)
    M = np.einsum("sia,sib->sab", G, G)
    tr = _trace_inv_2x2(M)
    if not np.all(np.isfinite(tr)):
        return math.inf
    return float(scale * np.mean(tr))
