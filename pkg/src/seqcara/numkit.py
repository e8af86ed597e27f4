"""Small dense symmetric linear algebra, chi-square quantiles and seeded variates.

Matrices handled here are tiny (at most ``pK x pK``), so the routines work on
nested Python lists and keep a fixed operation order.  The compiled trial kernel
mirrors the same loops, which is what lets both backends agree bit for bit.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import special

__all__ = [
    "InvalidInputError",
    "NotPositiveDefiniteError",
    "MixtureNormalSpec",
    "RngStream",
    "stream_id_for",
    "sym_eig_extremes",
    "sym_eigenvalues",
    "invert_spd",
    "log_det_spd",
    "chi_square_quantile",
    "draw_mixture_normal",
    "draw_bernoulli",
    "draw_categorical",
]

JACOBI_TOL = 1e-14
JACOBI_MAX_SWEEPS = 100
_MASK64 = (1 << 64) - 1


class InvalidInputError(ValueError):
    """Raised when an argument violates a documented precondition."""


class NotPositiveDefiniteError(ArithmeticError):
    """Cholesky factorisation hit a non-positive pivot."""

    def __init__(self, pivot: int):
        super().__init__(f"matrix is not positive definite (pivot {pivot})")
        self.pivot = pivot


# ---------------------------------------------------------------------------
# list-based kernels (shared operation order with _kernel.pyx)
# ---------------------------------------------------------------------------

def _jacobi_eigenvalues(a: list[list[float]]) -> list[float]:
    """Cyclic Jacobi sweeps on a copy of ``a``; returns the diagonal."""
    d = len(a)
    m = [row[:] for row in a]
    norm = 0.0
    for i in range(d):
        for j in range(d):
            norm += m[i][j] * m[i][j]
    norm = math.sqrt(norm)
    for _ in range(JACOBI_MAX_SWEEPS):
        off = 0.0
        for i in range(d):
            for j in range(d):
                if i != j:
                    off += m[i][j] * m[i][j]
        off = math.sqrt(off)
        if off <= JACOBI_TOL * norm:
            break
        for p in range(d - 1):
            for q in range(p + 1, d):
                apq = m[p][q]
                if apq == 0.0:
                    continue
                tau = (m[q][q] - m[p][p]) / (2.0 * apq)
                if tau >= 0.0:
                    t = 1.0 / (tau + math.sqrt(1.0 + tau * tau))
                else:
                    t = -1.0 / (-tau + math.sqrt(1.0 + tau * tau))
                c = 1.0 / math.sqrt(1.0 + t * t)
                s = t * c
                for k in range(d):
                    akp = m[k][p]
                    akq = m[k][q]
                    m[k][p] = c * akp - s * akq
                    m[k][q] = s * akp + c * akq
                for k in range(d):
                    apk = m[p][k]
                    aqk = m[q][k]
                    m[p][k] = c * apk - s * aqk
                    m[q][k] = s * apk + c * aqk
                m[p][q] = 0.0
                m[q][p] = 0.0
    return [m[i][i] for i in range(d)]


def _eig_extremes(a: list[list[float]]) -> tuple[float, float]:
    ev = _jacobi_eigenvalues(a)
    lo = ev[0]
    hi = ev[0]
    for v in ev[1:]:
        if v < lo:
            lo = v
        if v > hi:
            hi = v
    return lo, hi


def _cholesky(a: list[list[float]]) -> list[list[float]]:
    d = len(a)
    low = [[0.0] * d for _ in range(d)]
    for j in range(d):
        s = a[j][j]
        for k in range(j):
            s -= low[j][k] * low[j][k]
        if not s > 0.0:
            raise NotPositiveDefiniteError(j)
        ljj = math.sqrt(s)
        low[j][j] = ljj
        for i in range(j + 1, d):
            s = a[i][j]
            for k in range(j):
                s -= low[i][k] * low[j][k]
            low[i][j] = s / ljj
    return low


def _invert_spd(a: list[list[float]]) -> list[list[float]]:
    d = len(a)
    low = _cholesky(a)
    linv = [[0.0] * d for _ in range(d)]
    for i in range(d):
        linv[i][i] = 1.0 / low[i][i]
        for j in range(i):
            s = 0.0
            for k in range(j, i):
                s += low[i][k] * linv[k][j]
            linv[i][j] = -s / low[i][i]
    out = [[0.0] * d for _ in range(d)]
    for i in range(d):
        for j in range(i + 1):
            s = 0.0
            for k in range(i, d):
                s += linv[k][i] * linv[k][j]
            out[i][j] = s
            out[j][i] = s
    return out


def _log_det_spd(a: list[list[float]]) -> float:
    try:
        low = _cholesky(a)
    except NotPositiveDefiniteError:
        return -math.inf
    s = 0.0
    for i in range(len(a)):
        s += math.log(low[i][i])
    return 2.0 * s


# ---------------------------------------------------------------------------
# public array API
# ---------------------------------------------------------------------------

def _as_symmetric(A) -> list[list[float]]:
    arr = np.asarray(A, dtype=float)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1] or arr.shape[0] < 1:
        raise InvalidInputError(f"expected a non-empty square matrix, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError("matrix has non-finite entries")
    if not np.array_equal(arr, arr.T):
        raise InvalidInputError("matrix is not symmetric")
    return arr.tolist()


def sym_eigenvalues(A) -> np.ndarray:
    """All eigenvalues of a small symmetric matrix, ascending."""
    return np.sort(np.array(_jacobi_eigenvalues(_as_symmetric(A))))


def sym_eig_extremes(A) -> tuple[float, float]:
    """Smallest and largest eigenvalue of a symmetric matrix.

    >>> sym_eig_extremes([[2.0, 1.0], [1.0, 2.0]])
    (0.9999999999999998, 2.9999999999999996)
    """
    return _eig_extremes(_as_symmetric(A))


def invert_spd(A) -> np.ndarray:
    """Inverse of a symmetric positive definite matrix via Cholesky.

    Raises NotPositiveDefiniteError carrying the failing pivot index.
    """
    return np.array(_invert_spd(_as_symmetric(A)))


def log_det_spd(A) -> float:
    """``log det A`` for SPD ``A``; ``-inf`` when the factorisation fails."""
    return _log_det_spd(_as_symmetric(A))


def chi_square_quantile(alpha: float, dof: int) -> float:
    """Upper-tail chi-square critical value ``C**2`` with ``P(chi2(dof) >= C**2) = alpha``."""
    if not 0.0 < alpha < 1.0:
        raise InvalidInputError(f"alpha must lie in (0, 1), got {alpha}")
    if int(dof) != dof or dof < 1:
        raise InvalidInputError(f"dof must be a positive integer, got {dof}")
    # chdtri inverts the regularized upper incomplete gamma Q(dof/2, x/2)
    return float(special.chdtri(int(dof), alpha))


# ---------------------------------------------------------------------------
# random streams
# ---------------------------------------------------------------------------

def stream_id_for(scenario: int, replication: int) -> int:
    """Deterministic stream id for replication ``replication`` of scenario ``scenario``."""
    if scenario < 0 or replication < 0 or replication >= 1 << 32:
        raise InvalidInputError("scenario and replication must be non-negative (replication < 2**32)")
    return ((scenario << 32) | replication) & _MASK64


class RngStream:
    """Seeded PCG64 stream addressed by ``(seed, stream_id)``.

    Every variate is built from ``uniform()``, which reads the bit generator's
    ``next_double``; the compiled kernel reads the same function through the
    bit generator capsule, so both backends consume identical numbers.
    """

    def __init__(self, seed: int, stream_id: int = 0):
        for name, value in (("seed", seed), ("stream_id", stream_id)):
            if int(value) != value or not 0 <= value <= _MASK64:
                raise InvalidInputError(f"{name} must be a 64-bit unsigned integer, got {value}")
        self.seed = int(seed)
        self.stream_id = int(stream_id)
        seq = np.random.SeedSequence(self.seed, spawn_key=(self.stream_id,))
        self.bit_generator = np.random.PCG64(seq)
        self._gen = np.random.Generator(self.bit_generator)

    def __repr__(self):
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id})"

    def uniform(self) -> float:
        return self._gen.random()

    def normal(self) -> float:
        # Box-Muller, one variate per pair of uniforms
        u1 = self._gen.random()
        u2 = self._gen.random()
        return math.sqrt(-2.0 * math.log(1.0 - u1)) * math.cos(2.0 * math.pi * u2)


@dataclass(frozen=True)
class MixtureNormalSpec:
    """Finite mixture of normals; ``components`` holds ``(mean, sd, weight)``."""

    components: tuple[tuple[float, float, float], ...]

    def __post_init__(self):
        comps = tuple((float(m), float(s), float(w)) for m, s, w in self.components)
        if not comps:
            raise InvalidInputError("mixture needs at least one component")
        for m, s, w in comps:
            if not (math.isfinite(m) and math.isfinite(s)) or s <= 0.0:
                raise InvalidInputError(f"component ({m}, {s}, {w}) needs finite mean and sd > 0")
            if not 0.0 <= w <= 1.0:
                raise InvalidInputError(f"component weight {w} is not a probability")
        if abs(math.fsum(w for _, _, w in comps) - 1.0) > 1e-12:
            raise InvalidInputError("mixture weights must sum to 1")
        object.__setattr__(self, "components", comps)

    @property
    def means(self) -> tuple[float, ...]:
        return tuple(c[0] for c in self.components)

    @property
    def sds(self) -> tuple[float, ...]:
        return tuple(c[1] for c in self.components)

    @property
    def cumulative_weights(self) -> tuple[float, ...]:
        out, acc = [], 0.0
        for _, _, w in self.components:
            acc += w
            out.append(acc)
        return tuple(out)

    @property
    def mean(self) -> float:
        return math.fsum(w * m for m, _, w in self.components)

    @property
    def variance(self) -> float:
        mu = self.mean
        return math.fsum(w * (s * s + (m - mu) ** 2) for m, s, w in self.components)


def _pick(cumulative: Sequence[float], u: float) -> int:
    last = len(cumulative) - 1
    for k in range(last):
        if u < cumulative[k]:
            return k
    return last


def draw_mixture_normal(spec: MixtureNormalSpec, rng: RngStream) -> float:
    """One draw: pick a component by weight, then a normal variate from it."""
    k = _pick(spec.cumulative_weights, rng.uniform())
    mean, sd, _ = spec.components[k]
    return mean + sd * rng.normal()


def draw_bernoulli(p: float, rng: RngStream) -> int:
    if not 0.0 <= p <= 1.0:
        raise InvalidInputError(f"probability {p} outside [0, 1]")
    return 1 if rng.uniform() < p else 0


def draw_categorical(p: Sequence[float], rng: RngStream) -> int:
    """Index ``k`` drawn with probability ``p[k]``."""
    probs = [float(v) for v in p]
    if not probs or any(not v >= 0.0 for v in probs) or abs(math.fsum(probs) - 1.0) > 1e-9:
        raise InvalidInputError(f"{p!r} is not a probability vector")
    cumulative, acc = [], 0.0
    for v in probs:
        acc += v
        cumulative.append(acc)
    return _pick(cumulative, rng.uniform())
