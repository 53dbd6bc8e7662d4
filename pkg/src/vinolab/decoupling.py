"""Exponential sums on the twisted cubic and Monte Carlo L^p moments.

F(x) = sum_J a_J e(x . gamma(t_J)), with e(s) = exp(2 pi i s) and one
frequency per interval J of length h = 1/K, K = round(R^alpha).  Moments are
normalised averages over the cube [-R, R]^3 (or against the weight
(1 + |x|/R)^{-300}), so the norm of a single term is |a_J|.

For the default centres t_J = (J + 1/2) h, |F| is periodic with period 1/h
in x1 and 1/h^2 in x2 and peaks (|F| = |sum a_J|) on that lattice near
x3 = 0.  The Monte Carlo sampler mixes uniform points with Cauchy bumps on
those peaks and reweights by the exact mixture density, so it remains
unbiased for any coefficients while resolving the peaks that dominate
high moments.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np

from .errors import DomainError, InsufficientSamples
from .geometry import gamma
from .report import Report

MIN_SAMPLES = 1000
TRILINEAR_BLOCKS = ((0.0, 1 / 6), (1 / 3, 1 / 2), (2 / 3, 1.0))
_CHUNK = 1 << 16


def e(s):
    return np.exp(2j * np.pi * np.asarray(s))


# --------------------------------------------------------------------------
# Exponential sums
# --------------------------------------------------------------------------

@dataclass
class ExpSum:
    R: float
    alpha: float
    coeffs: np.ndarray
    t: np.ndarray                  # curve parameter of each frequency
    centered: bool = True          # t_J = (J + 1/2) h exactly

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=complex).reshape(-1)
        self.t = np.asarray(self.t, dtype=float).reshape(-1)
        if len(self.coeffs) != len(self.t):
            raise DomainError("one coefficient per frequency")

    @property
    def K(self) -> int:
        return len(self.coeffs)

    @property
    def h(self) -> float:
        return 1.0 / self.K

    @property
    def freqs(self) -> np.ndarray:
        return gamma(self.t)

    @property
    def intervals(self) -> np.ndarray:
        k = np.arange(self.K)
        return np.column_stack([k * self.h, (k + 1) * self.h])

    def with_coeffs(self, coeffs) -> "ExpSum":
        return ExpSum(self.R, self.alpha, coeffs, self.t.copy(), self.centered)

    def block(self, lo: float, hi: float) -> np.ndarray:
        """Indices of the terms with frequency parameter in [lo, hi]."""
        return np.flatnonzero((self.t >= lo - 1e-12) & (self.t <= hi + 1e-12))

    def to_dict(self) -> dict:
        return {"R": self.R, "alpha": self.alpha, "K": self.K, "t": self.t.tolist(),
                "coeffs_re": self.coeffs.real.tolist(), "coeffs_im": self.coeffs.imag.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "ExpSum":
        c = np.asarray(d["coeffs_re"]) + 1j * np.asarray(d["coeffs_im"])
        K = int(d["K"])
        t = np.asarray(d["t"], dtype=float)
        centered = bool(np.allclose(t, (np.arange(K) + 0.5) / K, rtol=0, atol=1e-15))
        return cls(float(d["R"]), float(d["alpha"]), c, t, centered)


def cap_count(R: float, alpha: float) -> int:
    """Number of intervals: R^alpha rounded to the nearest integer."""
    if not R >= 1:
        raise DomainError("R must be at least 1")
    if not 0 <= alpha <= 1:
        raise DomainError("alpha must lie in [0, 1]")
    return max(1, int(round(R**alpha)))


def make_exp_sum(R: float, alpha: float = 0.5, coeffs="ones", seed: Optional[int] = None,
                 jitter: float = 0.0, rng=None) -> ExpSum:
    """Sum with one frequency per interval of length 1/round(R^alpha).

    ``coeffs`` is an array, ``"ones"`` or ``"random"`` (unimodular, uniform
    phases).  ``jitter`` moves each frequency parameter by up to
    ``jitter / R`` inside its interval.
    """
    K = cap_count(R, alpha)
    rng = np.random.default_rng(seed) if rng is None else rng
    if isinstance(coeffs, str):
        if coeffs == "ones":
            a = np.ones(K, dtype=complex)
        elif coeffs == "random":
            a = e(rng.random(K))
        else:
            raise DomainError(f"unknown coefficient rule {coeffs}")
    else:
        a = np.asarray(coeffs, dtype=complex)
        if len(a) != K:
            raise DomainError(f"need {K} coefficients, got {len(a)}")
    t = (np.arange(K) + 0.5) / K
    if jitter:
        t = t + rng.uniform(-1, 1, K) * min(jitter / R, 0.5 / K)
    return ExpSum(float(R), float(alpha), a, t, centered=not jitter)


def _eval_recurrence(t0, h, coeffs, x):
    """Sum_j c_j e(x . gamma(t0 + j h)) via finite differences of the cubic phase."""
    x1, x2, x3 = x[:, 0], x[:, 1], x[:, 2]
    a = x1 * t0 + x2 * t0**2 + x3 * t0**3
    b = h * (x1 + 2 * x2 * t0 + 3 * x3 * t0**2)
    c = h**2 * (x2 + 3 * x3 * t0)
    d = h**3 * x3
    frac = lambda v: v - np.floor(v)
    E = e(frac(a))
    D1 = e(frac(b + c + d))
    D2 = e(frac(2 * c + 6 * d))
    D3 = e(frac(6 * d))
    out = np.zeros((coeffs.shape[0], len(x)), dtype=complex)
    for j in range(coeffs.shape[1]):
        cj = coeffs[:, j]
        nz = np.flatnonzero(cj)
        if len(nz):
            out[nz] += cj[nz, None] * E
        E *= D1
        D1 *= D2
        D2 *= D3
    return out


def eval_exp_sum(s: ExpSum, points, groups: Optional[Sequence] = None) -> np.ndarray:
    """F at the given points; with ``groups`` (index arrays) one row per partial sum."""
    x = np.atleast_2d(np.asarray(points, dtype=float))
    if not np.all(np.isfinite(x)):
        raise DomainError("points must be finite")
    G = [np.arange(s.K)] if groups is None else [np.asarray(g) for g in groups]
    C = np.zeros((len(G), s.K), dtype=complex)
    for i, g in enumerate(G):
        C[i, g] = s.coeffs[g]
    out = np.empty((len(G), len(x)), dtype=complex)
    for lo in range(0, len(x), _CHUNK):
        xs = x[lo:lo + _CHUNK]
        if s.centered:
            out[:, lo:lo + _CHUNK] = _eval_recurrence(s.t[0], s.h, C, xs)
        else:
            out[:, lo:lo + _CHUNK] = C @ e((xs @ s.freqs.T).T % 1.0)
    return out[0] if groups is None else out


# --------------------------------------------------------------------------
# Samplers
# --------------------------------------------------------------------------

class _Axis:
    """Truncated Cauchy bumps at the multiples of ``period`` inside [-R, R]."""

    def __init__(self, R: float, period: float, scale: float):
        self.R, self.P, self.s = R, period, scale
        if period >= 2 * R:
            c = np.zeros(1)
        else:
            k = int(np.floor(R / period + 1e-12))
            c = np.arange(-k, k + 1) * period
        mids = (c[1:] + c[:-1]) / 2
        self.lo = np.concatenate([[-R], mids])
        self.hi = np.concatenate([mids, [R]])
        self.c = c
        cdf = lambda v, c0: 0.5 + np.arctan((v - c0) / scale) / np.pi
        self.F_lo, self.F_hi = cdf(self.lo, c), cdf(self.hi, c)

    def sample(self, n, rng):
        i = rng.integers(0, len(self.c), n)
        u = rng.uniform(self.F_lo[i], self.F_hi[i])
        x = self.c[i] + self.s * np.tan(np.pi * (u - 0.5))
        return np.clip(x, self.lo[i], self.hi[i])

    def density(self, x):
        i = np.clip(np.searchsorted(self.hi, x, side="left"), 0, len(self.c) - 1)
        z = self.F_hi[i] - self.F_lo[i]
        return (self.s / np.pi) / (self.s**2 + (x - self.c[i]) ** 2) / z / len(self.c)


def _mixture_points(R, h, n, rng, lam=0.5, scale=1.0):
    """Points in [-R, R]^3 and their weights (uniform density / mixture density)."""
    axes = [_Axis(R, 1 / h, scale), _Axis(R, 1 / h**2, scale), _Axis(R, np.inf, scale)]
    nu = rng.binomial(n, lam)
    xu = rng.uniform(-R, R, size=(nu, 3))
    xb = np.column_stack([ax.sample(n - nu, rng) for ax in axes])
    x = np.vstack([xu, xb])
    vol = (2 * R) ** 3
    qb = np.prod([ax.density(x[:, k]) for k, ax in enumerate(axes)], axis=0)
    w = (1 / vol) / (lam / vol + (1 - lam) * qb)
    perm = rng.permutation(n)
    return x[perm], w[perm]


def _weighted_points(R, n, rng):
    """Points with density proportional to (1 + |x|/R)^{-300}."""
    u = rng.beta(3, 297, n)
    rad = R * u / (1 - u)
    d = rng.normal(size=(n, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    return d * rad[:, None], np.ones(n)


@dataclass
class MomentEstimate:
    p: float
    R: float
    estimate: float          # (normalised average of |F|^p)^(1/p)
    stderr: float
    samples: int
    sampler: str
    seed: Optional[int] = None
    alpha: Optional[float] = None
    mean_power: float = float("nan")

    def row(self) -> dict:
        return {"p": self.p, "R": self.R, "alpha": self.alpha, "estimate": self.estimate,
                "stderr": self.stderr, "samples": self.samples, "seed": self.seed}


def _batch_stats(y, batches):
    n = len(y)
    b = max(2, min(batches, n // 50))
    means = np.array([chunk.mean() for chunk in np.array_split(y, b)])
    return float(y.mean()), float(means.std(ddof=1) / np.sqrt(b))


def _sample(s: ExpSum, R, samples, rng, sampler, weighted, importance):
    if sampler == "lattice":
        raise AssertionError
    if samples < MIN_SAMPLES:
        raise InsufficientSamples(f"need at least {MIN_SAMPLES} samples, got {samples}")
    if weighted:
        return _weighted_points(R, samples, rng)
    if importance:
        return _mixture_points(R, s.h, samples, rng)
    return rng.uniform(-R, R, size=(samples, 3)), np.ones(samples)


def lattice_points(s: ExpSum, grid: Optional[Sequence[int]] = None, p: float = 2):
    """Uniform grid over one period cell (2/h, 4/h^2, 8/h^3) of F.

    Requires the centred frequency layout.  The default grid
    (2K ceil(p/2), 1, 1) separates all frequencies, so the p = 2 moment is
    exact; other p are exact only for sums with K <= 2.
    """
    if not s.centered:
        raise DomainError("lattice sampler needs commensurate (centred) frequencies")
    if grid is None:
        grid = (2 * s.K * max(1, int(np.ceil(p / 2))) + 1, 1, 1)
    grid = tuple(int(g) for g in grid)
    periods = (2 / s.h, 4 / s.h**2, 8 / s.h**3)
    axes = [np.arange(g) * P / g for g, P in zip(grid, periods)]
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)


def lp_moments(s: ExpSum, ps: Sequence[float], R: Optional[float] = None, sampler: str = "monte-carlo",
               samples: int = 100_000, seed: Optional[int] = 0, *, weighted: bool = False,
               importance: bool = True, batches: int = 20, grid=None, rng=None) -> dict:
    """Moment estimates for several p from one set of sample points."""
    R = s.R if R is None else float(R)
    ps = [float(p) for p in ps]
    if any(not p >= 1 for p in ps):
        raise DomainError("p must be at least 1")
    nz = np.flatnonzero(s.coeffs)
    if len(nz) <= 1:
        # a single plane wave has constant modulus
        amp = float(np.abs(s.coeffs[nz[0]])) if len(nz) else 0.0
        return {p: MomentEstimate(p, R, amp, 0.0, 0, sampler, seed, s.alpha, amp**p) for p in ps}
    if sampler == "lattice":
        x = lattice_points(s, grid, max(ps))
        v = np.abs(eval_exp_sum(s, x))
        out = {}
        for p in ps:
            m = float(np.mean(v**p))
            out[p] = MomentEstimate(p, R, m ** (1 / p), 0.0, len(x), sampler, seed, s.alpha, m)
        return out
    if sampler != "monte-carlo":
        raise DomainError(f"unknown sampler {sampler}")
    rng = np.random.default_rng(seed) if rng is None else rng
    x, w = _sample(s, R, samples, rng, sampler, weighted, importance)
    v = np.abs(eval_exp_sum(s, x))
    name = "weighted" if weighted else sampler
    return {p: _estimate(w * v**p, p, R, samples, name, seed, s.alpha, batches) for p in ps}


def _estimate(y, p, R, samples, name, seed, alpha, batches) -> MomentEstimate:
    m, se = _batch_stats(y, batches)
    M = m ** (1 / p)
    return MomentEstimate(p, R, M, M * se / (p * m) if m > 0 else 0.0, samples, name, seed, alpha, m)


def lp_moment(s: ExpSum, p: float, R: Optional[float] = None, sampler: str = "monte-carlo",
              samples: int = 100_000, seed: Optional[int] = 0, **kw) -> MomentEstimate:
    return lp_moments(s, [p], R, sampler, samples, seed, **kw)[float(p)]


# --------------------------------------------------------------------------
# Decoupling ratios
# --------------------------------------------------------------------------

@dataclass
class RatioEstimate:
    ratio: float
    stderr: float
    p: float
    R: float
    alpha: float
    moment: MomentEstimate
    extra: dict = field(default_factory=dict)


def _rhs(s: ExpSum, p: float, R: float, alpha: float, idx=None) -> float:
    a = np.abs(s.coeffs if idx is None else s.coeffs[idx])
    if not np.any(a > 0):
        raise DomainError("all coefficients vanish")
    return R ** (alpha * (0.5 - 1 / p)) * float(np.sum(a**p)) ** (1 / p)


def decoupling_ratios(s: ExpSum, ps: Sequence[float], R: Optional[float] = None,
                      alpha: Optional[float] = None, **kw) -> dict:
    R = s.R if R is None else float(R)
    alpha = s.alpha if alpha is None else float(alpha)
    denom = {p: _rhs(s, p, R, alpha) for p in ps}
    mom = lp_moments(s, ps, R, **kw)
    return {p: RatioEstimate(m.estimate / denom[p], m.stderr / denom[p], p, R, alpha, m)
            for p, m in mom.items()}


def decoupling_ratio(s: ExpSum, p: float, R: Optional[float] = None, alpha: Optional[float] = None,
                     **kw) -> RatioEstimate:
    """||F||_p / (R^{alpha(1/2 - 1/p)} (sum |a_J|^p)^{1/p}) with normalised norms."""
    return decoupling_ratios(s, [float(p)], R, alpha, **kw)[float(p)]


def trilinear_ratio(s: ExpSum, p: float, R: Optional[float] = None, samples: int = 100_000,
                    seed: Optional[int] = 0, *, importance: bool = True, batches: int = 20,
                    rng=None) -> RatioEstimate:
    """||(F1 F2 F3)^{1/3}||_p over the decoupling denominator of the whole sum.

    F1, F2, F3 are the parts of F with frequency parameter in [0, 1/6],
    [1/3, 1/2] and [2/3, 1].  ``extra['block_ratios']`` holds the linear
    ratio of each part (against its own coefficients), computed on the same
    sample points.
    """
    R = s.R if R is None else float(R)
    p = float(p)
    groups = [s.block(lo, hi) for lo, hi in TRILINEAR_BLOCKS]
    if any(len(g) == 0 or not np.any(s.coeffs[g]) for g in groups):
        raise DomainError("every block needs a nonzero coefficient")
    denom = _rhs(s, p, R, s.alpha)
    block_den = [_rhs(s, p, R, s.alpha, g) for g in groups]
    if all(np.count_nonzero(s.coeffs[g]) == 1 for g in groups):
        amps = [float(np.abs(s.coeffs[g][np.flatnonzero(s.coeffs[g])[0]])) for g in groups]
        tri = float(np.prod(amps)) ** (1 / 3)
        mom = MomentEstimate(p, R, tri, 0.0, 0, "exact", seed, s.alpha, tri**p)
        return RatioEstimate(tri / denom, 0.0, p, R, s.alpha, mom,
                             {"block_ratios": [a / d for a, d in zip(amps, block_den)]})
    rng = np.random.default_rng(seed) if rng is None else rng
    x, w = _sample(s, R, samples, rng, "monte-carlo", False, importance)
    F = np.abs(eval_exp_sum(s, x, groups))
    y = w * np.prod(F, axis=0) ** (p / 3)
    mom = _estimate(y, p, R, samples, "monte-carlo", seed, s.alpha, batches)
    blocks = [float(np.mean(w * F[i] ** p)) ** (1 / p) / block_den[i] for i in range(3)]
    return RatioEstimate(mom.estimate / denom, mom.stderr / denom, p, R, s.alpha, mom,
                         {"block_ratios": blocks})


def fit_slope(logR, logD) -> float:
    """Least-squares slope of log D against log R."""
    logR, logD = np.asarray(logR, float), np.asarray(logD, float)
    if len(logR) < 2:
        raise DomainError("need at least two scales")
    return float(np.polyfit(logR, logD, 1)[0])


def decoupling_slope(log2_R: Sequence[int], p_list: Sequence[float], coeffs: str = "random",
                     alpha: float = 0.5, trials: int = 1, samples: int = 1_000_000, seed: int = 0,
                     first_trial: int = 0) -> Report:
    """log D against log R, one row per (trial, R, p), and per-trial slopes."""
    rows = []
    for t in range(first_trial, first_trial + trials):
        for k in log2_R:
            R = 2.0**k
            rng = np.random.default_rng([int(seed), int(t), int(k)])
            s = make_exp_sum(R, alpha, coeffs, rng=rng)
            est = decoupling_ratios(s, p_list, samples=samples, rng=rng)
            for p in p_list:
                r = est[float(p)]
                rows.append({"trial": t, "R": R, "log2_R": int(k), "p": float(p), "alpha": alpha,
                             "coeffs": coeffs, "ratio": r.ratio, "stderr": r.stderr,
                             "samples": samples, "seed": seed})
    return Report("decoupling-slope", rows, slope_summary(rows))


def slope_summary(rows) -> dict:
    out = {}
    for p in sorted({r["p"] for r in rows}):
        slopes = []
        for t in sorted({r["trial"] for r in rows}):
            rr = [r for r in rows if r["p"] == p and r["trial"] == t]
            if len(rr) >= 2:
                slopes.append(fit_slope([np.log(r["R"]) for r in rr], [np.log(r["ratio"]) for r in rr]))
        out[f"p={p:g}"] = {"median_slope": float(np.median(slopes)) if slopes else None,
                           "slopes": slopes}
    return out


def flat_decoupling_check(L: int, p: float, trials: int = 10, seed: int = 0, m: int = 8,
                          first_trial: int = 0) -> Report:
    """Flat decoupling in a one-dimensional periodic model.

    F = sum_{k < L m} c_k e(k x) on the circle with Gaussian c_k; the blocks
    are L runs of m consecutive frequencies.  Rows record
    ||F||_p / (L^{1-2/p} (sum_i ||F_i||_p^p)^{1/p}).
    """
    if L < 1:
        raise DomainError("L must be at least 1")
    if not p >= 2:
        raise DomainError("p must be at least 2")
    n = 1 << int(np.ceil(np.log2(max(8, 2 * (p + 1) * L * m))))
    rows = []
    for t in range(first_trial, first_trial + trials):
        rng = np.random.default_rng([int(seed), int(t)])
        c = rng.normal(size=L * m) + 1j * rng.normal(size=L * m)
        spec = np.zeros((L + 1, n), dtype=complex)
        spec[0, :L * m] = c
        for i in range(L):
            spec[i + 1, i * m:(i + 1) * m] = c[i * m:(i + 1) * m]
        vals = np.fft.ifft(spec, axis=1) * n
        norms = np.mean(np.abs(vals) ** p, axis=1) ** (1 / p)
        rhs = L ** (1 - 2 / p) * float(np.sum(norms[1:] ** p)) ** (1 / p)
        rows.append({"trial": t, "L": L, "p": p, "m": m, "lhs": float(norms[0]), "rhs": rhs,
                     "ratio": float(norms[0] / rhs), "seed": seed})
    return Report("flat-decoupling", rows, {"max_ratio": max(r["ratio"] for r in rows)})


# --------------------------------------------------------------------------
# Exponents
# --------------------------------------------------------------------------

def sigma_pd(p: float, d: int) -> float:
    """min over 2 <= k <= d of 1/k + (k^2 - k - 2) / (2 k p)."""
    if d < 2:
        raise DomainError("d must be at least 2")
    if not p >= 2:
        raise DomainError("p must be at least 2")
    if np.isinf(p):
        return min(1 / k for k in range(2, d + 1))
    return min(1 / k + (k * k - k - 2) / (2 * k * p) for k in range(2, d + 1))


def critical_p_bound(d: int):
    """min over 5 <= k <= d of 2 (k^2 - 2k - 2) / (k - 4); infinite when d < 5."""
    if d < 2:
        raise DomainError("d must be at least 2")
    if d < 5:
        return float("inf")
    return float(min(Fraction(2 * (k * k - 2 * k - 2), k - 4) for k in range(5, d + 1)))
