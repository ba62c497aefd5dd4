"""Large-sample approximations to external expected losses.

The fitted posterior is approximated by a normal centred at the fitted-model
MLE with precision ``I_tilde``; the MLE itself is approximately normal about
the KL projection ``beta_tilde`` with sandwich covariance
``K_tilde = I^-1 J I^-1``. Parameters are ordered ``beta = (gamma, theta)``
with the fitted-only block ``gamma`` first.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize

from .core import ExpectedLossEstimate
from .errors import DimensionMismatch, DomainError, NonFiniteObjective, NonFiniteValue
from .numerics import RandomStream, cholesky_logdet

FORMS = ("gen-SI", "gen-SE", "comp-entropy", "comp-TV", "internal-D", "internal-A")


@dataclass(frozen=True)
class KlProjection:
    beta_tilde: np.ndarray
    objective_value: float
    converged: bool
    iterations: int


def kl_project(d_evaluator, start, tolerance=1e-8, max_iter=20000, positive=()):
    """Maximise ``d_evaluator(t)`` with Nelder-Mead.

    Coordinates listed in ``positive`` are optimised on the log scale. After
    the first run the simplex is rebuilt around the best point and the search
    restarted once, which guards against premature collapse. The returned
    point is never worse than ``start``.
    """
    start = np.asarray(start, dtype=float).reshape(-1)
    positive = np.zeros(start.size, dtype=bool) if len(positive) == 0 else _mask(positive, start.size)
    if np.any(start[positive] <= 0):
        raise DomainError("positive coordinates must start above zero")
    d0 = float(d_evaluator(start))
    if not math.isfinite(d0):
        raise NonFiniteValue("objective is not finite at the starting point")

    def to_t(u):
        t = u.copy()
        t[positive] = np.exp(u[positive])
        return t

    def neg(u):
        val = float(d_evaluator(to_t(u)))
        return -val if math.isfinite(val) else math.inf

    u = start.copy()
    u[positive] = np.log(start[positive])
    opts = {"xatol": tolerance, "fatol": 0.0, "maxiter": max_iter, "maxfev": 4 * max_iter}
    iterations = 0
    converged = False
    for _ in range(2):
        res = optimize.minimize(neg, u, method="Nelder-Mead", options=dict(opts, adaptive=u.size > 2))
        iterations += int(res.nit)
        converged = bool(res.success)
        u = res.x
    t = to_t(u)
    value = float(d_evaluator(t))
    if not value >= d0:
        return KlProjection(start, d0, False, iterations)
    return KlProjection(t, value, converged, iterations)


def _mask(index, size):
    m = np.zeros(size, dtype=bool)
    m[np.asarray(index, dtype=int)] = True
    return m


@dataclass(frozen=True)
class SandwichMatrices:
    I_tilde: np.ndarray
    J_tilde: np.ndarray
    K_tilde: np.ndarray
    T_theta: np.ndarray
    S_theta: np.ndarray
    p_gamma: int

    @property
    def p(self) -> int:
        return self.I_tilde.shape[0]

    @property
    def p_theta(self) -> int:
        return self.p - self.p_gamma

    def _block(self, M, rows, cols):
        g = self.p_gamma
        sl = {"g": slice(0, g), "t": slice(g, None)}
        return M[sl[rows], sl[cols]]

    @property
    def I_gg(self):
        return self._block(self.I_tilde, "g", "g")

    @property
    def I_gt(self):
        return self._block(self.I_tilde, "g", "t")

    @property
    def I_tt(self):
        return self._block(self.I_tilde, "t", "t")

    @property
    def K_tt(self):
        return self._block(self.K_tilde, "t", "t")

    @property
    def P2(self):
        """Regression of ``gamma`` on ``theta`` under the approximate posterior."""
        if self.p_gamma == 0:
            return np.zeros((0, self.p_theta))
        return cholesky_logdet(self.I_gg).solve(self.I_gt)


def _symmetric(M, name):
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise DimensionMismatch(f"{name} must be square")
    scale = max(np.max(np.abs(M)), 1e-300)
    if np.max(np.abs(M - M.T)) > 1e-8 * scale:
        raise DomainError(f"{name} is not symmetric")
    return 0.5 * (M + M.T)


def sandwich_from_matrices(I_tilde, J_tilde, p_gamma=0) -> SandwichMatrices:
    I_tilde = _symmetric(I_tilde, "I_tilde")
    J_tilde = _symmetric(J_tilde, "J_tilde")
    p = I_tilde.shape[0]
    if J_tilde.shape != I_tilde.shape:
        raise DimensionMismatch("I_tilde and J_tilde differ in shape")
    if not 0 <= p_gamma < p:
        raise DimensionMismatch("need 0 <= p_gamma < p")
    fac = cholesky_logdet(I_tilde)
    # K = I^-1 J I^-1 from two solves
    K = fac.solve(fac.solve(J_tilde).T)
    K = 0.5 * (K + K.T)
    g = p_gamma
    I_tt = I_tilde[g:, g:]
    if g:
        gfac = cholesky_logdet(I_tilde[:g, :g])
        P2 = gfac.solve(I_tilde[:g, g:])
        schur = I_tt - I_tilde[g:, :g] @ P2
        S = np.eye(p - g) + P2.T @ P2
    else:
        schur = I_tt
        S = np.eye(p)
    T = cholesky_logdet(0.5 * (schur + schur.T)).inverse()
    return SandwichMatrices(I_tilde, J_tilde, K, 0.5 * (T + T.T), S, g)


def sandwich(second_deriv, score_outer, theta_tilde, p_gamma=0) -> SandwichMatrices:
    """Sandwich matrices at the KL projection.

    ``second_deriv(t)`` returns minus the expected Hessian of the fitted
    log-likelihood and ``score_outer(t)`` the expected outer product of its
    score, both under the designer model.
    """
    t = np.asarray(theta_tilde, dtype=float)
    return sandwich_from_matrices(second_deriv(t), score_outer(t), p_gamma)


def _n_si(p):
    return 0.5 * p * math.log(2.0 * math.pi)


def table2_objective(form, theta, theta_tilde, mats: SandwichMatrices, information=None) -> float:
    """Approximate loss at the interest parameters ``theta``.

    ``form`` is one of ``FORMS``. The internal forms use ``information``
    (the fitted-model Fisher information) when given, otherwise
    ``mats.I_tilde``.
    """
    if form not in FORMS:
        raise DomainError(f"unknown form {form!r}; expected one of {FORMS}")
    p = mats.p
    if form in ("internal-D", "internal-A"):
        info = mats.I_tilde if information is None else _symmetric(information, "information")
        if info.shape != (p, p):
            raise DimensionMismatch("information has the wrong shape")
        fac = cholesky_logdet(info)
        if form == "internal-D":
            return _n_si(p) - 0.5 * fac.log_det + 0.5 * p
        return float(np.trace(fac.inverse()))
    fac = cholesky_logdet(mats.I_tilde)
    if form == "comp-entropy":
        return _n_si(p) - 0.5 * fac.log_det + 0.5 * p
    tr_inv = float(np.trace(fac.inverse()))
    if form == "comp-TV":
        return tr_inv
    theta = np.asarray(theta, dtype=float).reshape(-1)
    theta_tilde = np.asarray(theta_tilde, dtype=float).reshape(-1)
    if theta.size != mats.p_theta or theta_tilde.size != mats.p_theta:
        raise DimensionMismatch(f"theta must have length {mats.p_theta}")
    bias = theta - theta_tilde
    if form == "gen-SI":
        tfac = cholesky_logdet(mats.T_theta)
        quad = float(bias @ tfac.solve(bias))
        gap = float(np.trace(tfac.solve(mats.K_tt)))
        return _n_si(p) - 0.5 * fac.log_det + 0.5 * quad + 0.5 * gap + 0.5 * mats.p_gamma
    # gen-SE
    S = mats.S_theta
    return tr_inv + float(bias @ S @ bias) + float(np.trace(S @ (mats.K_tt - mats.T_theta)))


def approx_expected_loss(prior_sampler, objective_at_theta, B, stream: RandomStream) -> ExpectedLossEstimate:
    """Prior expectation of an approximate loss by plain Monte Carlo.

    ``prior_sampler(rng, B)`` returns ``B`` draws (rows). If every draw is
    identical the prior is a point mass and the objective is evaluated once.
    """
    if B < 1:
        raise DomainError("B must be positive")
    draws = np.asarray(prior_sampler(stream.generator(), B), dtype=float)
    draws = draws.reshape(B, -1)
    if np.all(draws == draws[0]):
        value = float(objective_at_theta(draws[0]))
        if not math.isfinite(value):
            raise NonFiniteObjective("approximate loss is not finite", theta=draws[0])
        return ExpectedLossEstimate(value, 0.0, B, 0, stream.root_seed, degenerate=True,
                                    losses=np.full(B, value))
    losses = np.empty(B)
    for b, th in enumerate(draws):
        losses[b] = objective_at_theta(th)
        if not math.isfinite(losses[b]):
            raise NonFiniteObjective("approximate loss is not finite", theta=th)
    return ExpectedLossEstimate.from_losses(losses, 0, stream.root_seed)
