"""Dyadic decomposition of the frequency plank union into small-plank layers.

The union Omega is the set of sheared planks ``|T_{1,c} w| <= (R^{-1/3}, R^{-2/3}, R^{-1})``
over the left endpoints c of a partition of [0, 1] into intervals of length
R^{-1/3}.  For dyadic sigma the family CP_sigma consists of the small planks
Theta(sigma, s') with s' = k R^{-1/3}/sigma in [0, 1); layer sigma is
CP_sigma's union minus CP_{sigma/2}'s union.  Because the s' grids nest,
the layers are disjoint and exhaust Omega (CP_1 *is* the partition).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, NotInUnion
from .geometry import shear_map

LEMMA_FACTOR = 49.0


def covering_curve(seed, s):
    """Points (x, y + 2 s x, z + 3 s y + 3 s^2 x) traced by a seed as s varies."""
    seed = np.asarray(seed, dtype=float)
    x, y, z = seed[..., 0], seed[..., 1], seed[..., 2]
    s = np.asarray(s, dtype=float)
    return np.stack([x + 0 * s, y + 2 * s * x, z + 3 * s * y + 3 * s**2 * x], axis=-1)


def dyadic_sigmas(R: float) -> list[float]:
    """Dyadic sigma in [R^{-1/3}, 1], smallest first."""
    if not R > 1:
        raise DomainError("R must exceed 1")
    lo = R ** (-1 / 3)
    out = []
    s = 1.0
    while s >= lo * (1 - 1e-12):
        out.append(s)
        s /= 2
    return out[::-1]


def _grid(step: float) -> np.ndarray:
    k = int(np.floor(1 / step + 1e-9))
    s = np.arange(k + 1) * step
    return s[s < 1 - 1e-12]


@dataclass(frozen=True)
class SmallPlankFamily:
    R: float
    sigma: float
    s: np.ndarray            # centres s' of the planks
    half: np.ndarray         # (R^{-1/3} sigma^2, R^{-2/3} sigma, R^{-1})

    @property
    def spacing(self) -> float:
        return self.R ** (-1 / 3) / self.sigma

    def __len__(self):
        return len(self.s)

    def local(self, w) -> np.ndarray:
        """Sheared coordinates of each point against each plank: shape (n, k, 3)."""
        w = np.atleast_2d(np.asarray(w, dtype=float))
        s = self.s[None, :]
        w1, w2, w3 = w[:, 0:1], w[:, 1:2], w[:, 2:3]
        u1 = np.broadcast_to(w1, (w.shape[0], len(self.s)))
        u2 = w2 - 2 * s * w1
        u3 = w3 - 3 * s * w2 + 3 * s**2 * w1
        return np.stack([u1, u2, u3], axis=-1)

    def dilation_needed(self, w) -> np.ndarray:
        """Smallest lambda with w in lambda*Theta, per point and plank."""
        return np.max(np.abs(self.local(w)) / self.half, axis=-1)

    def contains(self, w, factor: float = 1.0) -> np.ndarray:
        return self.dilation_needed(w) <= factor * (1 + 1e-12)


def build_cp_family(R: float, sigma: float) -> SmallPlankFamily:
    lo = R ** (-1 / 3)
    if not (lo * (1 - 1e-12) <= sigma <= 1):
        raise DomainError(f"sigma={sigma} outside [R^(-1/3), 1]")
    log = np.log2(sigma)
    if abs(log - round(log)) > 1e-9:
        raise DomainError(f"sigma={sigma} is not dyadic")
    half = np.array([lo * sigma**2, lo**2 * sigma, 1 / R])
    return SmallPlankFamily(float(R), float(sigma), _grid(lo / sigma), half)


def partition_params(R: float) -> np.ndarray:
    """Left endpoints c of the base partition (same as the CP_1 centres)."""
    return _grid(R ** (-1 / 3))


@dataclass
class Classification:
    sigma: np.ndarray          # layer of each point (nan if outside Omega)
    index: np.ndarray          # plank of CP_sigma containing the point (-1 if none)
    multiplicity: np.ndarray   # number of planks in CP_sigma whose 49-dilate holds the point
    families: dict = field(repr=False, default_factory=dict)


def classify_points(w, R: float, factor: float = LEMMA_FACTOR) -> Classification:
    w = np.atleast_2d(np.asarray(w, dtype=float))
    n = w.shape[0]
    sigmas = dyadic_sigmas(R)
    fams = {s: build_cp_family(R, s) for s in sigmas}
    layer = np.full(n, np.nan)
    index = np.full(n, -1, dtype=np.int64)
    mult = np.zeros(n, dtype=np.int64)
    for s in sigmas:  # smallest first: first hit is the layer
        todo = np.isnan(layer)
        if not todo.any():
            break
        fam = fams[s]
        lam = fam.dilation_needed(w[todo])
        inside = lam <= 1 + 1e-12
        hit = inside.any(axis=1)
        ids = np.flatnonzero(todo)[hit]
        layer[ids] = s
        # among the planks containing the point, report the most central one
        index[ids] = np.argmin(np.where(inside[hit], lam[hit], np.inf), axis=1)
        mult[ids] = (lam[hit] <= factor * (1 + 1e-12)).sum(axis=1)
    return Classification(layer, index, mult, fams)


def classify_point(w, R: float):
    """(sigma, plank index, multiplicity) of one frequency point."""
    cl = classify_points(np.asarray(w, dtype=float)[None, :], R)
    if np.isnan(cl.sigma[0]):
        raise NotInUnion(f"{w} lies outside the plank union")
    return float(cl.sigma[0]), int(cl.index[0]), int(cl.multiplicity[0])


def sample_union(R: float, n: int, rng: np.random.Generator):
    """Uniform points of a uniformly chosen base plank; returns (points, c)."""
    cs = partition_params(R)
    c = cs[rng.integers(0, len(cs), size=n)]
    h = np.array([R ** (-1 / 3), R ** (-2 / 3), 1 / R])
    u = rng.uniform(-1, 1, size=(n, 3)) * h
    # T_{1,-c} undoes the shear
    w = covering_curve(u, c)
    return w, c


@dataclass
class PartitionReport:
    R: float
    sigma_layers: dict
    max_multiplicity: int
    violations: int
    coverage: float
    needed_factor: float
    multiplicity_hist: dict
    samples: int
    seed: int

    def to_dict(self) -> dict:
        return {
            "R": self.R,
            "sigma_layers": {repr(float(k)): int(v) for k, v in self.sigma_layers.items()},
            "max_multiplicity": int(self.max_multiplicity),
            "violations": int(self.violations),
            "coverage": float(self.coverage),
            "needed_factor": float(self.needed_factor),
            "multiplicity_hist": {str(k): int(v) for k, v in self.multiplicity_hist.items()},
            "samples": int(self.samples),
            "seed": int(self.seed),
        }


def verify_partition_lemmas(R: float, samples: int, seed: int,
                            factor: float = LEMMA_FACTOR, chunk: int = 20000) -> PartitionReport:
    """Sample the union and check the layer/association containment and multiplicity.

    For a point w of base plank c lying in layer sigma, every Theta(sigma, s')
    with |c - s'| <= R^{-1/3}/sigma must hold w in its ``factor``-dilate.
    ``needed_factor`` is the smallest dilation that would have sufficed.
    """
    if samples <= 0:
        raise DomainError("need a positive sample count")
    rng = np.random.default_rng(seed)
    base = build_cp_family(R, 1.0)
    layers: dict = {s: 0 for s in dyadic_sigmas(R)}
    hist: dict = {}
    violations = 0
    covered = 0
    needed = 0.0
    max_mult = 0
    done = 0
    while done < samples:
        m = min(chunk, samples - done)
        w, c = sample_union(R, m, rng)
        covered += int(base.contains(w).any(axis=1).sum())
        cl = classify_points(w, R, factor)
        for s in layers:
            sel = cl.sigma == s
            if not sel.any():
                continue
            layers[s] += int(sel.sum())
            fam = cl.families[s]
            assoc = np.abs(c[sel][:, None] - fam.s[None, :]) <= fam.spacing * (1 + 1e-12)
            lam = fam.dilation_needed(w[sel])
            lam_assoc = np.where(assoc, lam, 0.0)
            needed = max(needed, float(lam_assoc.max()))
            violations += int((lam_assoc > factor * (1 + 1e-12)).sum())
        max_mult = max(max_mult, int(cl.multiplicity.max()))
        for k, v in zip(*np.unique(cl.multiplicity, return_counts=True)):
            hist[int(k)] = hist.get(int(k), 0) + int(v)
        done += m
    return PartitionReport(float(R), layers, max_mult, violations, covered / samples,
                           needed, dict(sorted(hist.items())), samples, seed)


def equivariance_shear(s: float):
    """The frequency shear T_{1,-s}, which moves Theta(sigma, 0) to Theta(sigma, s)."""
    return shear_map(1.0, -s)
