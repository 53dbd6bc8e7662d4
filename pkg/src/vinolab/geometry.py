"""Frenet frames, shear maps and oriented boxes along the twisted cubic t -> (t, t^2, t^3).

Boxes come in two forms.  A *rectangular* box has an orthonormal frame and
``dims`` are full edge lengths.  A *slab* box is the literal set
``{x : |M (x - center)|_k <= dims_k}`` for a 3x3 matrix ``M``; here ``dims``
are half-widths, which is how the sheared planks and origin tubes are
written.  Duality keeps the form and inverts ``dims`` in both cases, so
``dims * dual.dims == 1`` always.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import DomainError


def gamma(t):
    t = np.asarray(t, dtype=float)
    return np.stack([t, t**2, t**3], axis=-1)


# --------------------------------------------------------------------------
# Frenet frame
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Frame:
    c: float
    t: np.ndarray
    n: np.ndarray
    b: np.ndarray

    @property
    def matrix(self) -> np.ndarray:
        """Rows (t, n, b)."""
        return np.vstack([self.t, self.n, self.b])


def _raw_frame(c):
    c = np.asarray(c, dtype=float)
    one = np.ones_like(c)
    t = np.stack([one, 2 * c, 3 * c**2], axis=-1)
    b = np.stack([3 * c**2, -3 * c, one], axis=-1)
    # b x t, expanded exactly
    n = np.stack([-9 * c**3 - 2 * c, 1 - 9 * c**4, 6 * c**3 + 3 * c], axis=-1)
    return t, n, b


def frenet_frames(cs) -> np.ndarray:
    """Vectorised frames: array of shape (k, 3, 3), rows (t, n, b) per parameter."""
    t, n, b = _raw_frame(np.atleast_1d(cs))
    out = np.stack([t, n, b], axis=-2)
    return out / np.linalg.norm(out, axis=-1, keepdims=True)


def frenet_frame(c: float) -> Frame:
    """Unit tangent, normal and binormal of the twisted cubic at parameter ``c``."""
    if not np.isfinite(c):
        raise DomainError(f"parameter must be finite, got {c}")
    m = frenet_frames(float(c))[0]
    return Frame(float(c), m[0], m[1], m[2])


def approximate_normal(c: float) -> np.ndarray:
    """Unnormalised closed-form normal (-2c-9c^3, 1-c^4, 3c+6c^3).

    Close to the true normal for small ``c`` only: its dot product with the
    raw tangent (1, 2c, 3c^2) is 16 c^5.  Kept for comparison checks.
    """
    return np.array([-2 * c - 9 * c**3, 1 - c**4, 3 * c + 6 * c**3])


# --------------------------------------------------------------------------
# Shear maps
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ShearMap:
    """Frequency-side rescaling T and its spatial dual A = T^{-T}."""

    sigma: float
    c: float
    matrix: np.ndarray
    dual: np.ndarray
    shift: np.ndarray

    @property
    def det(self) -> float:
        return self.sigma ** -6

    @property
    def dual_det(self) -> float:
        return self.sigma**6

    def apply(self, w):
        return np.asarray(w, dtype=float) @ self.matrix.T

    def apply_affine(self, w):
        """Affine version sending gamma(c + sigma*u) to gamma(u)."""
        return self.apply(w) + self.shift

    def apply_dual(self, x):
        return np.asarray(x, dtype=float) @ self.dual.T

    def inverse_matrix(self) -> np.ndarray:
        s, c = self.sigma, self.c
        return np.array([[s, 0, 0], [2 * c * s, s**2, 0], [3 * c**2 * s, 3 * c * s**2, s**3]])


def shear_map(sigma: float, c: float) -> ShearMap:
    if not sigma > 0:
        raise DomainError(f"sigma must be positive, got {sigma}")
    s, c = float(sigma), float(c)
    T = np.array([
        [1 / s, 0.0, 0.0],
        [-2 * c / s**2, 1 / s**2, 0.0],
        [3 * c**2 / s**3, -3 * c / s**3, 1 / s**3],
    ])
    A = np.array([
        [s, 2 * c * s, 3 * c**2 * s],
        [0.0, s**2, 3 * c * s**2],
        [0.0, 0.0, s**3],
    ])
    shift = np.array([-c / s, c**2 / s**2, -(c**3) / s**3])
    return ShearMap(s, c, T, A, shift)


# --------------------------------------------------------------------------
# Boxes
# --------------------------------------------------------------------------

class Role(str, Enum):
    FREQ_PLANK = "freq_plank"        # theta
    SPATIAL_PLANK = "spatial_plank"  # P
    TUBE = "tube"                    # T
    PLATE = "plate"                  # S, and W at delta = R^{-1/2}
    SMALL_PLANK = "small_plank"      # Theta(sigma, s)
    FAT_PLATE = "fat_plate"          # Pi
    BOX_B = "box_B"
    BOX_SIGMA = "box_Sigma"
    BOX_TAU = "box_tau"
    BOX_LAMBDA = "box_Lambda"
    BOX_U = "box_U"
    PLATE_PHI = "plate_Phi"
    CUBE_DELTA = "cube_Delta"
    CUBE_Q = "cube_Q"
    CUBE_q = "cube_q"
    GENERIC = "generic"


_CUBES = {Role.CUBE_DELTA: 1 / 2, Role.CUBE_Q: 2 / 3, Role.CUBE_q: 1 / 3}


def role_dims(role: Role, scale: float, sigma: Optional[float] = None) -> np.ndarray:
    """Nominal dimensions (d1, d2, d3) of a role.

    ``scale`` is R for every role except PLATE, where it is delta.
    """
    role = Role(role)
    if not scale > 0:
        raise DomainError(f"scale must be positive, got {scale}")
    R = float(scale)
    r = lambda e: R**e
    if role == Role.FREQ_PLANK:
        return np.array([r(-1 / 3), r(-2 / 3), 1 / R])
    if role == Role.SPATIAL_PLANK:
        return np.array([r(1 / 3), r(2 / 3), R])
    if role == Role.TUBE:
        return np.array([r(2 / 3), r(2 / 3), R])
    if role == Role.PLATE:
        d = R
        if not d <= 1:
            raise DomainError("plate scale is delta and must be <= 1")
        return np.array([1 / d, d**-2, d**-2])
    if role == Role.SMALL_PLANK:
        if sigma is None or not 0 < sigma <= 1:
            raise DomainError("small plank needs 0 < sigma <= 1")
        return np.array([r(-1 / 3) * sigma**2, r(-2 / 3) * sigma, 1 / R])
    if role == Role.FAT_PLATE:
        return np.array([r(2 / 3), R, R])
    if role == Role.BOX_B:
        return np.array([r(2 / 3), r(5 / 6), R])
    if role == Role.BOX_SIGMA:
        return np.array([r(1 / 2), r(5 / 6), R])
    if role == Role.BOX_TAU:
        return np.array([r(1 / 2), r(2 / 3), R])
    if role == Role.BOX_LAMBDA:
        return np.array([r(1 / 2), r(2 / 3), r(5 / 6)])
    if role == Role.BOX_U:
        if sigma is None or not sigma > 0:
            raise DomainError("U box needs sigma > 0")
        if sigma >= r(-1 / 6):
            return np.array([r(2 / 3), r(2 / 3) / sigma, R])
        return np.array([r(1 / 3) / sigma**2, r(2 / 3) / sigma, R])
    if role == Role.PLATE_PHI:
        return np.array([r(1 / 2), r(2 / 3), r(2 / 3)])
    if role in _CUBES:
        return np.full(3, r(_CUBES[role]))
    raise DomainError(f"role {role} has no nominal dimensions")


@dataclass(frozen=True, eq=False)
class OrientedBox:
    center: np.ndarray
    frame: np.ndarray            # rows: directions naming d1, d2, d3
    dims: np.ndarray
    role: Role = Role.GENERIC
    interval: Optional[tuple] = None
    slab: Optional[np.ndarray] = None
    meta: dict = field(default_factory=dict)

    @property
    def is_rectangular(self) -> bool:
        return self.slab is None

    @property
    def matrix(self) -> np.ndarray:
        return self.frame if self.slab is None else self.slab

    @property
    def half_widths(self) -> np.ndarray:
        return self.dims / 2 if self.slab is None else self.dims

    @property
    def volume(self) -> float:
        if self.slab is None:
            return float(np.prod(self.dims))
        return float(np.prod(2 * self.dims) / abs(np.linalg.det(self.slab)))

    def halfspaces(self):
        """(A, b) with the box equal to {x : A x <= b}."""
        M, h = self.matrix, self.half_widths
        off = M @ self.center
        A = np.vstack([M, -M])
        b = np.concatenate([h + off, h - off])
        return A, b

    def vertices(self) -> np.ndarray:
        signs = np.array([[i, j, k] for i in (-1, 1) for j in (-1, 1) for k in (-1, 1)], float)
        Minv = np.linalg.inv(self.matrix)
        return self.center + (signs * self.half_widths) @ Minv.T

    def local(self, x) -> np.ndarray:
        """Coordinates M (x - center); the box is |local| <= half_widths."""
        return (np.asarray(x, dtype=float) - self.center) @ self.matrix.T

    def contains(self, x, scale: float = 1.0, rtol: float = 1e-12) -> np.ndarray:
        u = np.abs(self.local(x))
        h = scale * self.half_widths
        return np.all(u <= h * (1 + rtol), axis=-1)

    def scaled(self, factor: float) -> "OrientedBox":
        """Dilate about the center."""
        return replace(self, dims=self.dims * factor)

    def translated(self, v) -> "OrientedBox":
        return replace(self, center=self.center + np.asarray(v, dtype=float))

    def transformed(self, L) -> "OrientedBox":
        """Image under the linear map x -> L x (always returned in slab form)."""
        L = np.asarray(L, dtype=float)
        M = self.matrix @ np.linalg.inv(L)
        return replace(self, center=L @ self.center, slab=M, dims=self.half_widths.copy())

    def aabb(self):
        v = self.vertices()
        return v.min(axis=0), v.max(axis=0)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        u = rng.uniform(-1, 1, size=(n, 3)) * self.half_widths
        return self.center + u @ np.linalg.inv(self.matrix).T

    def to_record(self) -> dict:
        """JSON record: centre, axes (rows), full edge lengths, role, interval."""
        if self.slab is None:
            axes, lengths = self.frame, self.dims
        else:
            # edge vectors of the parallelepiped, normalised
            E = np.linalg.inv(self.slab).T
            norms = np.linalg.norm(E, axis=1)
            axes, lengths = E / norms[:, None], 2 * self.dims * norms
        return {"center": [float(v) for v in self.center],
                "axes": [[float(v) for v in row] for row in axes],
                "lengths": [float(v) for v in lengths],
                "role": self.role.value,
                "interval": None if self.interval is None else [float(v) for v in self.interval]}


def _interval_param(interval) -> tuple:
    if interval is None:
        return None, 0.0
    if np.isscalar(interval):
        return (float(interval), float(interval)), float(interval)
    a, b = (float(v) for v in interval)
    if b < a:
        raise DomainError(f"bad interval {interval}")
    return (a, b), a


def make_box(role, interval=None, scale: float = 1.0, center=(0.0, 0.0, 0.0), *,
             sigma: Optional[float] = None, s: Optional[float] = None,
             dims: Optional[Sequence[float]] = None, form: str = "rect") -> OrientedBox:
    """Build a box of the given role.

    The frame is taken at the left endpoint of ``interval``.  ``form='slab'``
    gives the sheared sets: frequency planks ``|T_{1,c} w| <= dims``, small
    planks ``Theta(sigma, s)``, and origin tubes or plates ``|A_{1,c} x| <= dims``.
    Cubes are axis aligned.
    """
    role = Role(role)
    center = np.asarray(center, dtype=float)
    iv, c = _interval_param(interval)
    if role == Role.SMALL_PLANK:
        if s is None:
            s = c
        d = role_dims(role, scale, sigma)
        return OrientedBox(center, frenet_frame(s).matrix, d, role, iv, shear_map(1.0, s).matrix,
                           {"sigma": sigma, "s": s, "scale": scale})
    if dims is not None:
        d = np.asarray(dims, dtype=float)
    else:
        d = role_dims(role, scale, sigma)
    if np.any(d <= 0):
        raise DomainError("dimensions must be positive")
    if role in _CUBES or (role == Role.GENERIC and interval is None):
        return OrientedBox(center, np.eye(3), d, role, iv, None, {"scale": scale})
    frame = frenet_frame(c).matrix
    meta = {"scale": scale, "c": c}
    if sigma is not None:
        meta["sigma"] = sigma
    if form == "rect":
        return OrientedBox(center, frame, d, role, iv, None, meta)
    if form != "slab":
        raise DomainError(f"unknown form {form}")
    if role == Role.FREQ_PLANK:
        M = shear_map(1.0, c).matrix
    elif role in (Role.TUBE, Role.PLATE, Role.SPATIAL_PLANK):
        M = shear_map(1.0, c).dual
    else:
        raise DomainError(f"no slab form for role {role}")
    return OrientedBox(center, frame, d, role, iv, M, meta)


_DUAL_ROLE = {
    Role.SPATIAL_PLANK: Role.FREQ_PLANK,
    Role.FREQ_PLANK: Role.SPATIAL_PLANK,
    Role.TUBE: Role.FREQ_PLANK,
}


def dual_box(box: OrientedBox) -> OrientedBox:
    """Origin-centred dual: same orientation, reciprocal dimensions."""
    M = box.matrix
    if box.slab is None:
        Md = None
    else:
        Md = np.linalg.inv(M).T
    role = _DUAL_ROLE.get(box.role, Role.GENERIC)
    meta = dict(box.meta)
    meta["dual_of"] = box.role.value
    return OrientedBox(np.zeros(3), box.frame, 1.0 / box.dims, role, box.interval, Md, meta)


# --------------------------------------------------------------------------
# Convex polytopes
# --------------------------------------------------------------------------

EMPTY_RTOL = 1e-12


@dataclass
class ConvexPolytope:
    """{x : A x <= b}, clipped to the axis-aligned ``bound`` = (lo, hi)."""

    A: np.ndarray
    b: np.ndarray
    bound: Optional[tuple] = None

    def contains(self, x, rtol: float = 1e-9) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        scale = np.abs(self.b) + np.abs(self.A).sum(axis=1) * (np.abs(x).max() if x.size else 1.0)
        return np.all(x @ self.A.T <= self.b + rtol * scale, axis=-1)

    def faces(self):
        if self.bound is None:
            raise DomainError("polytope has no bounding cube; volume undefined")
        return _clip(self.A, self.b, *self.bound)

    def vertices(self) -> np.ndarray:
        faces = self.faces()
        if not faces:
            return np.zeros((0, 3))
        return _dedup(np.vstack(faces))

    def volume(self) -> float:
        return polytope_volume(self)

    def with_halfspaces(self, A, b) -> "ConvexPolytope":
        return ConvexPolytope(np.vstack([self.A, A]), np.concatenate([self.b, b]), self.bound)


def intersect_boxes(boxes: Iterable[OrientedBox]) -> ConvexPolytope:
    boxes = list(boxes)
    if not boxes:
        raise DomainError("need at least one box")
    As, bs = zip(*(bx.halfspaces() for bx in boxes))
    lo, hi = boxes[0].aabb()
    for bx in boxes[1:]:
        l2, h2 = bx.aabb()
        lo, hi = np.maximum(lo, l2), np.minimum(hi, h2)
    return ConvexPolytope(np.vstack(As), np.concatenate(bs), (lo, hi))


def polytope_volume(p: ConvexPolytope) -> float:
    """Exact volume by clipping the bounding cube and fanning faces into tetrahedra.

    Volumes below 1e-12 of the bounding-cube volume are reported as 0.
    """
    if p.bound is None:
        raise DomainError("polytope has no bounding cube; volume undefined")
    lo, hi = (np.asarray(v, dtype=float) for v in p.bound)
    if np.any(hi <= lo):
        return 0.0
    faces = _clip(p.A, p.b, lo, hi)
    vol = _faces_volume(faces)
    if vol <= EMPTY_RTOL * float(np.prod(hi - lo)):
        return 0.0
    return vol


def _cube_faces(lo, hi):
    x0, y0, z0 = lo
    x1, y1, z1 = hi
    v = np.array([[x0, y0, z0], [x1, y0, z0], [x1, y1, z0], [x0, y1, z0],
                  [x0, y0, z1], [x1, y0, z1], [x1, y1, z1], [x0, y1, z1]])
    idx = [[0, 3, 2, 1], [4, 5, 6, 7], [0, 1, 5, 4], [2, 3, 7, 6], [1, 2, 6, 5], [0, 4, 7, 3]]
    return [v[i] for i in idx]


def _dedup(pts: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    if len(pts) == 0:
        return pts
    scale = max(np.abs(pts).max(), 1.0)
    key = np.round(pts / (tol * scale)).astype(np.int64)
    _, first = np.unique(key, axis=0, return_index=True)
    return pts[np.sort(first)]


def _clip(A, b, lo, hi):
    """Clip the box [lo, hi] by each half-space a.x <= b; returns face polygons."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    shift = (lo + hi) / 2
    size = float(np.max(hi - lo))
    # work in centred coordinates
    faces = clip_faces(_cube_faces(lo - shift, hi - shift), A, b - A @ shift, size)
    return [f + shift for f in faces]


def clip_faces(faces, A, b, size: float):
    """Clip a convex polyhedron, given by its face polygons, by half-spaces A x <= b."""
    eps = 1e-12 * size
    for a, beta in zip(A, b):
        norm = np.linalg.norm(a)
        if norm == 0:
            if beta < 0:
                return []
            continue
        a, beta = a / norm, beta / norm
        new_faces = []
        cap = []
        cut = False
        for f in faces:
            d = f @ a - beta
            if np.all(d <= eps):
                new_faces.append(f)
                cap.extend(f[np.abs(d) <= eps])
                continue
            cut = True
            if np.all(d >= -eps):
                cap.extend(f[np.abs(d) <= eps])
                continue
            out = []
            m = len(f)
            for i in range(m):
                p, q = f[i], f[(i + 1) % m]
                dp, dq = d[i], d[(i + 1) % m]
                if dp <= eps:
                    out.append(p)
                    if abs(dp) <= eps:
                        cap.append(p)
                if (dp < -eps and dq > eps) or (dp > eps and dq < -eps):
                    x = p + (q - p) * (dp / (dp - dq))
                    out.append(x)
                    cap.append(x)
            if len(out) >= 3:
                new_faces.append(np.array(out))
        if not cut:
            continue
        faces = new_faces
        if not faces:
            return []
        if len(cap) >= 3:
            poly = _order_polygon(_dedup(np.array(cap)), a)
            if len(poly) >= 3:
                faces.append(poly)
    return faces


def faces_volume(faces) -> float:
    return _faces_volume(faces)


def _order_polygon(pts: np.ndarray, normal: np.ndarray) -> np.ndarray:
    if len(pts) < 3:
        return pts
    ctr = pts.mean(axis=0)
    u = pts[0] - ctr
    if np.linalg.norm(u) == 0:
        u = np.cross(normal, [1.0, 0, 0])
        if np.linalg.norm(u) < 1e-6:
            u = np.cross(normal, [0, 1.0, 0])
    u = u / np.linalg.norm(u)
    v = np.cross(normal, u)
    ang = np.arctan2((pts - ctr) @ v, (pts - ctr) @ u)
    return pts[np.argsort(ang)]


def _faces_volume(faces) -> float:
    if len(faces) < 4:
        return 0.0
    allv = np.vstack(faces)
    p0 = allv.mean(axis=0)
    vol = 0.0
    for f in faces:
        if len(f) < 3:
            continue
        a = f[0] - p0
        bvec = f[1:-1] - p0
        cvec = f[2:] - p0
        vol += np.abs(np.einsum("j,ij->i", a, np.cross(bvec, cvec))).sum()
    return vol / 6.0


def almost_rectangular(p: ConvexPolytope, box: OrientedBox, factor: float = 8.0):
    """Compare a polytope with a model box.

    Returns (ok, volume_ratio): volume within factor**2 of the box, the box
    shrunk by ``factor`` inside the polytope and the polytope inside the box
    grown by ``factor``.
    """
    vol = polytope_volume(p)
    ratio = vol / box.volume if box.volume > 0 else np.inf
    inner = p.contains(box.scaled(1 / factor).vertices()).all()
    outer = box.scaled(factor).contains(p.vertices(), rtol=1e-9).all() if vol > 0 else False
    ok = bool(inner and outer and 1 / factor**2 <= ratio <= factor**2)
    return ok, ratio
