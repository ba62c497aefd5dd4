"""Numerical foundations: SPD factorisation, distributions, quadrature.

Everything here is a pure function of its inputs. Random draws come from
:class:`RandomStream`, a counter-based (Philox) stream addressed by a root
seed and a tuple of integer indices, so any substream can be regenerated
without replaying the others.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg as sla
from scipy import special

from .errors import DimensionMismatch, DomainError, NonFiniteValue, NotPositiveDefinite

JITTER_SCALE = 1e-10
SYMMETRY_RTOL = 1e-10


# ---------------------------------------------------------------------------
# Dense SPD kernels
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SpdFactor:
    """Lower Cholesky factor ``L`` of an SPD matrix with ``L @ L.T == A``.

    ``jitter`` records the diagonal shift that was needed (0.0 normally).
    """

    lower: np.ndarray
    log_det: float
    jitter: float = 0.0

    @property
    def dimension(self) -> int:
        return self.lower.shape[0]

    def solve(self, b):
        return sla.cho_solve((self.lower, True), b, check_finite=False)

    def inverse(self):
        return self.solve(np.eye(self.dimension))

    def reconstruct(self):
        return self.lower @ self.lower.T


def _check_square_symmetric(A):
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1] or A.shape[0] < 1:
        raise DimensionMismatch(f"expected a non-empty square matrix, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise NonFiniteValue("matrix has non-finite entries")
    scale = max(np.max(np.abs(A)), np.finfo(float).tiny)
    if np.max(np.abs(A - A.T)) > SYMMETRY_RTOL * scale:
        raise DomainError("matrix is not symmetric")
    return A


def cholesky_logdet(A) -> SpdFactor:
    """Cholesky factor and log-determinant of a symmetric positive-definite matrix.

    On failure a single jitter of ``1e-10 * mean(diag(A))`` is added to the
    diagonal and the factorisation retried; a second failure raises
    :class:`NotPositiveDefinite`.
    """
    A = _check_square_symmetric(A)
    jitter = 0.0
    try:
        L = np.linalg.cholesky(A)
    except np.linalg.LinAlgError:
        jitter = JITTER_SCALE * float(np.mean(np.diag(A)))
        if not jitter > 0:
            raise NotPositiveDefinite("matrix has nonpositive mean diagonal")
        try:
            L = np.linalg.cholesky(A + jitter * np.eye(A.shape[0]))
        except np.linalg.LinAlgError as exc:
            raise NotPositiveDefinite("matrix is not positive definite after jitter") from exc
    diag = np.diag(L)
    if np.any(diag <= 0):
        raise NotPositiveDefinite("nonpositive pivot")
    return SpdFactor(L, float(2.0 * np.sum(np.log(diag))), jitter)


def batched_cholesky(A):
    """Cholesky factors of a stack ``(..., n, n)`` of SPD matrices.

    Applies the same one-shot jitter policy as :func:`cholesky_logdet`, but
    only to the members of the stack whose factorisation failed.
    """
    A = np.asarray(A, dtype=float)
    try:
        return np.linalg.cholesky(A)
    except np.linalg.LinAlgError:
        pass
    flat = A.reshape((-1,) + A.shape[-2:])
    out = np.empty_like(flat)
    for i, Ai in enumerate(flat):
        out[i] = cholesky_logdet(Ai).lower
    return out.reshape(A.shape)


def trace_inverse(A) -> float:
    """``tr(A^{-1})`` for SPD ``A`` using ``p`` triangular solves."""
    factor = cholesky_logdet(A)
    Linv = sla.solve_triangular(factor.lower, np.eye(factor.dimension), lower=True)
    # tr(A^-1) = ||L^-1||_F^2
    return float(np.sum(Linv * Linv))


# ---------------------------------------------------------------------------
# Special functions
# ---------------------------------------------------------------------------


def f_cdf(x, d1, d2):
    """CDF of the F(d1, d2) distribution via the regularised incomplete beta."""
    x = np.asarray(x, dtype=float)
    z = np.where(x > 0, d1 * x / (d1 * x + d2), 0.0)
    return special.betainc(d1 / 2.0, d2 / 2.0, z)


def f_quantile(d1, d2, prob) -> float:
    """Quantile of the F(d1, d2) distribution.

    Inverts the regularised incomplete beta function and polishes the root
    with a few Newton steps on the CDF.
    """
    if not (0.0 < prob < 1.0):
        raise DomainError(f"probability must lie in (0, 1), got {prob}")
    if d1 <= 0 or d2 < 1:
        raise DomainError(f"invalid degrees of freedom ({d1}, {d2})")
    a, b = d1 / 2.0, d2 / 2.0
    z = special.betaincinv(a, b, prob)
    q = d2 * z / (d1 * (1.0 - z))
    for _ in range(3):
        resid = float(f_cdf(q, d1, d2)) - prob
        if abs(resid) < 1e-14:
            break
        dens = _f_pdf(q, d1, d2)
        if not dens > 0:
            break
        q = max(q - resid / dens, q / 2)
    return float(q)


def _f_pdf(x, d1, d2):
    if x <= 0:
        return 0.0
    logp = (
        0.5 * d1 * np.log(d1) + 0.5 * d2 * np.log(d2) + (0.5 * d1 - 1) * np.log(x)
        - 0.5 * (d1 + d2) * np.log(d1 * x + d2) - special.betaln(d1 / 2.0, d2 / 2.0)
    )
    return float(np.exp(logp))


def matern52(distance, alpha):
    """Matérn(5/2) correlation ``(1 + d/a + d^2/(3a^2)) exp(-d/a)``."""
    if np.any(np.asarray(alpha) <= 0):
        raise DomainError("alpha must be positive")
    r = np.asarray(distance, dtype=float) / alpha
    out = (1.0 + r + r * r / 3.0) * np.exp(-r)
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# Random streams and distributions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RandomStream:
    """Index-addressable random stream.

    ``RandomStream(seed).child(3, 1)`` always yields the same draws, and
    siblings with different indices are statistically independent.
    """

    root_seed: int
    path: tuple = ()

    def __post_init__(self):
        if not (0 <= int(self.root_seed) < 2**64):
            raise DomainError("root_seed must be an unsigned 64-bit integer")

    @property
    def stream_index(self) -> int:
        return self.path[-1] if self.path else 0

    def child(self, *indices) -> "RandomStream":
        return RandomStream(self.root_seed, self.path + tuple(int(i) for i in indices))

    def generator(self) -> np.random.Generator:
        seq = np.random.SeedSequence(int(self.root_seed), spawn_key=self.path)
        return np.random.Generator(np.random.Philox(seq))


@dataclass(frozen=True)
class Uniform:
    low: float
    high: float

    def validate(self):
        if not self.high > self.low:
            raise DomainError("uniform requires high > low")

    def draw(self, rng, size):
        return rng.uniform(self.low, self.high, size)

    @property
    def mean(self):
        return 0.5 * (self.low + self.high)

    @property
    def variance(self):
        return (self.high - self.low) ** 2 / 12.0


@dataclass(frozen=True)
class Exponential:
    """Exponential distribution parameterised by its rate (mean ``1/rate``)."""

    rate: float = 1.0

    def validate(self):
        if not self.rate > 0:
            raise DomainError("exponential rate must be positive")

    def draw(self, rng, size):
        return rng.exponential(1.0 / self.rate, size)

    @property
    def mean(self):
        return 1.0 / self.rate


@dataclass(frozen=True)
class InverseGamma:
    """``IG(a/2, b/2)``: density proportional to ``x^(-a/2-1) exp(-b/(2x))``.

    ``a`` and ``b`` are the degrees and scale hyperparameters of the
    normal-inverse-gamma family; the mean is ``b/(a-2)`` for ``a > 2``.
    """

    a: float
    b: float

    def validate(self):
        if not (self.a > 0 and self.b > 0):
            raise DomainError("inverse-gamma needs a > 0 and b > 0")

    def draw(self, rng, size):
        return (self.b / 2.0) / rng.gamma(self.a / 2.0, 1.0, size)

    @property
    def mean(self):
        if self.a <= 2:
            return np.inf
        return self.b / (self.a - 2.0)


@dataclass(frozen=True)
class Normal:
    mean: float
    var: float

    def validate(self):
        if not self.var > 0:
            raise DomainError("normal variance must be positive")

    def draw(self, rng, size):
        return self.mean + np.sqrt(self.var) * rng.standard_normal(size)


@dataclass(frozen=True)
class MultivariateNormal:
    mean: np.ndarray
    factor: SpdFactor

    def validate(self):
        if np.shape(self.mean) != (self.factor.dimension,):
            raise DomainError("mean and factor dimensions differ")

    def draw(self, rng, size):
        z = rng.standard_normal((size, self.factor.dimension))
        return np.asarray(self.mean) + z @ self.factor.lower.T


def sample(dist, stream: RandomStream, count: int):
    """Draw ``count`` values from ``dist`` using ``stream``."""
    if count < 0:
        raise DomainError("count must be nonnegative")
    dist.validate()
    return dist.draw(stream.generator(), count)


# ---------------------------------------------------------------------------
# Quadrature
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class QuadratureRule:
    """Nodes in ``[0, 1]`` and positive weights summing to one."""

    nodes: np.ndarray
    weights: np.ndarray = field(repr=False)

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        weights = np.asarray(self.weights, dtype=float)
        if nodes.shape != weights.shape or nodes.ndim != 1:
            raise DimensionMismatch("nodes and weights must be 1-D of equal length")
        if np.any(np.diff(nodes) <= 0) or nodes[0] < 0 or nodes[-1] > 1:
            raise DomainError("nodes must be strictly increasing in [0, 1]")
        if np.any(weights <= 0) or abs(weights.sum() - 1.0) > 1e-12:
            raise DomainError("weights must be positive and sum to one")


def gauss_legendre(n: int = 32) -> QuadratureRule:
    x, w = np.polynomial.legendre.leggauss(n)
    w = 0.5 * w
    return QuadratureRule(0.5 * (x + 1.0), w / w.sum())


def integrate_unit(f, rule: QuadratureRule | None = None) -> float:
    """``sum_i w_i f(x_i)`` over the unit interval."""
    rule = rule or gauss_legendre()
    values = np.asarray(f(rule.nodes), dtype=float)
    if values.shape == ():
        values = np.full_like(rule.nodes, float(values))
    if not np.all(np.isfinite(values)):
        raise NonFiniteValue("integrand is not finite at every node")
    return float(values @ rule.weights)
