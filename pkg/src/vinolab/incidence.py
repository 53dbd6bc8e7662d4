"""Families of tubes, plates and planks; rich-cube counting; incidence and L^4 checks.

Boxes of one direction sit on a lattice of slots with the box's own
dimensions (at most one box per slot), in the Frenet frame of the left
endpoint of the direction interval.  Container boxes used by the spacing
caps (plates S, boxes B, tubes T, boxes Sigma and tau) are lattices in the
same frame; a box belongs to the container holding its centre.

Grid cubes are half-open: a cube is counted as meeting a closed box when the
closed cube shrunk by ``side * 2**-32`` on its upper faces meets it.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .errors import DomainError, InfeasibleCaps, UseMonteCarlo
from .geometry import (EMPTY_RTOL, OrientedBox, Role, _clip, clip_faces, faces_volume,
                       frenet_frames, almost_rectangular, intersect_boxes, make_box,
                       role_dims)
from .partition import dyadic_sigmas
from .report import Report, caps_label, envelope_fit

MODES = ("uniform-random", "bush", "plany", "grid")
FAMILY_ROLES = (Role.TUBE, Role.PLATE, Role.SPATIAL_PLANK)
HALF_OPEN = 2.0**-32
# number of maps {1..4} -> S onto a set S of size k
SURJECTIONS = {1: 1, 2: 14, 3: 36, 4: 24}
EXACT_L4_MAX = 32


# --------------------------------------------------------------------------
# Scales attached to a role
# --------------------------------------------------------------------------

def interval_length(role: Role, scale: float) -> float:
    return scale if Role(role) == Role.PLATE else scale ** (-1 / 3)


def ambient_half(role: Role, scale: float) -> float:
    """Half side H of the ambient cube [-H, H]^3."""
    return scale**-2 if Role(role) == Role.PLATE else float(scale)


def default_cube_side(role: Role, scale: float) -> float:
    role = Role(role)
    if role == Role.PLATE:
        return 1 / scale
    if role == Role.TUBE:
        return scale ** (2 / 3)
    return scale ** (1 / 3)


def envelope_log(role: Role, scale: float) -> float:
    """The logarithm entering the polylog envelope: log R, or log 1/delta for plates."""
    return float(np.log(1 / scale if Role(role) == Role.PLATE else scale))


def direction_params(role: Role, scale: float) -> np.ndarray:
    step = interval_length(role, scale)
    k = int(np.ceil(1 / step - 1e-9))
    return np.arange(k) * step


def _containers(role: Role, scale: float, caps: dict):
    """(name, dims or None for 'per direction', cap) for every declared cap."""
    R = scale
    out = []
    if role == Role.TUBE:
        if "N" in caps:
            out.append(("N", np.array([R ** (2 / 3), R, R]), caps["N"]))
        if "N1" in caps:
            out.append(("N1", role_dims(Role.BOX_B, R), caps["N1"]))
    elif role == Role.PLATE:
        if "N" in caps:
            out.append(("N", None, caps["N"]))
    else:
        if "M" in caps:
            out.append(("M", None, caps["M"]))
        if "N" in caps:
            out.append(("N", role_dims(Role.TUBE, R), caps["N"]))
    return out


def _validate_caps(role: Role, scale: float, caps: dict) -> dict:
    caps = {k: v for k, v in (caps or {}).items() if v is not None}
    for k, v in caps.items():
        if k not in ("N", "N1", "M", "Z1"):
            raise DomainError(f"unknown cap {k}")
        if not (v >= 1 and float(v).is_integer()):
            raise InfeasibleCaps(f"cap {k}={v} must be a positive integer")
        caps[k] = int(v)
    if role == Role.TUBE:
        if "N1" in caps and "N" in caps and caps["N1"] > caps["N"]:
            raise InfeasibleCaps(f"cap N1={caps['N1']} exceeds N={caps['N']}")
        if "M" in caps or "Z1" in caps:
            raise DomainError("tube families take caps N and N1 only")
    elif role == Role.PLATE:
        if set(caps) - {"N"}:
            raise DomainError("plate families take cap N only")
    elif "Z1" in caps:
        if "M" in caps or "N" not in caps:
            raise DomainError("structured plank families take caps N and Z1")
        top = scale ** (1 / 6) * (1 + 1e-9)
        for k in ("N", "Z1"):
            if caps[k] > top:
                raise InfeasibleCaps(f"cap {k}={caps[k]} exceeds R^(1/6)={scale ** (1 / 6):g}")
    return caps


# --------------------------------------------------------------------------
# Families
# --------------------------------------------------------------------------

@dataclass(eq=False)
class BoxFamily:
    role: Role
    scale: float
    params: np.ndarray          # left endpoints c of the direction intervals
    direction: np.ndarray       # (n,) index into params
    centers: np.ndarray         # (n, 3)
    dims: np.ndarray            # full edge lengths
    caps: dict = field(default_factory=dict)
    mode: str = "given"
    seed: Optional[int] = None
    density: Optional[float] = None
    ambient: Optional[float] = None
    labels: dict = field(default_factory=dict)   # optional container ids per box

    def __post_init__(self):
        self.role = Role(self.role)
        self.params = np.asarray(self.params, dtype=float)
        self.direction = np.asarray(self.direction, dtype=np.int64).reshape(-1)
        self.centers = np.asarray(self.centers, dtype=float).reshape(-1, 3)
        self.dims = np.asarray(self.dims, dtype=float)
        if self.ambient is None:
            self.ambient = ambient_half(self.role, self.scale)
        if len(self.direction) != len(self.centers):
            raise DomainError("direction and centers disagree in length")
        worst = self.cap_violation()
        if worst is not None:
            raise InfeasibleCaps(f"declared cap {worst} violated")

    def __len__(self):
        return len(self.centers)

    @property
    def step(self) -> float:
        return interval_length(self.role, self.scale)

    @property
    def frames(self) -> np.ndarray:
        return frenet_frames(self.params)

    def box_frames(self) -> np.ndarray:
        return self.frames[self.direction]

    def box(self, i: int) -> OrientedBox:
        d = int(self.direction[i])
        c = float(self.params[d])
        return OrientedBox(self.centers[i].copy(), self.frames[d], self.dims.copy(), self.role,
                           (c, c + self.step), None, {"scale": self.scale, "c": c})

    def boxes(self) -> list:
        return [self.box(i) for i in range(len(self))]

    def by_interval(self) -> dict:
        return {float(self.params[d]): np.flatnonzero(self.direction == d)
                for d in np.unique(self.direction)}

    def subset(self, mask) -> "BoxFamily":
        idx = np.flatnonzero(np.asarray(mask)) if np.asarray(mask).dtype == bool else np.asarray(mask)
        labels = {k: v[idx] for k, v in self.labels.items()}
        return replace(self, direction=self.direction[idx], centers=self.centers[idx], labels=labels)

    def translated(self, v) -> "BoxFamily":
        v = np.asarray(v, dtype=float)
        return replace(self, centers=self.centers + v, ambient=self.ambient + float(np.abs(v).max()),
                       caps={}, labels={})

    def local_centers(self) -> np.ndarray:
        """Centre coordinates in each box's own frame."""
        return np.einsum("nij,nj->ni", self.box_frames(), self.centers)

    def container_counts(self) -> dict:
        """Max number of boxes per container, for each declared cap."""
        out = {}
        if len(self) == 0:
            return {name: 0 for name, _, _ in _containers(self.role, self.scale, self.caps)}
        loc = self.local_centers()
        for name, cdims, _ in _containers(self.role, self.scale, self.caps):
            if cdims is None:
                key = self.direction[:, None]
            else:
                key = np.column_stack([self.direction, np.floor(loc / cdims + 1e-9).astype(np.int64)])
            _, cnt = np.unique(key, axis=0, return_counts=True)
            out[name] = int(cnt.max())
        return out

    def cap_violation(self) -> Optional[str]:
        if not self.caps or "Z1" in self.caps:
            return None
        counts = self.container_counts()
        for name, _, cap in _containers(self.role, self.scale, self.caps):
            if counts.get(name, 0) > cap:
                return name
        return None

    def is_separated(self) -> bool:
        """Boxes of one direction overlap at most on their boundaries."""
        for d in np.unique(self.direction):
            sel = np.flatnonzero(self.direction == d)
            if len(sel) < 2:
                continue
            loc = self.centers[sel] @ self.frames[d].T / self.dims
            diff = np.abs(loc[:, None, :] - loc[None, :, :]).max(axis=-1)
            np.fill_diagonal(diff, np.inf)
            if diff.min() < 1 - 1e-9:
                return False
        return True

    def to_records(self) -> list:
        return [self.box(i).to_record() for i in range(len(self))]


def _slot_range(lo: float, hi: float, d: float) -> np.ndarray:
    """Slot indices i whose centre (i + 1/2) d lies in [lo, hi)."""
    a = int(np.ceil(lo / d - 0.5 - 1e-9))
    b = int(np.ceil(hi / d - 0.5 - 1e-9))
    return np.arange(a, b)


def _admissible_slots(frame: np.ndarray, dims: np.ndarray, H: float) -> np.ndarray:
    """Slot indices (m, 3) whose centres lie in the closed cube [-H, H]^3."""
    ext = np.abs(frame).sum(axis=1) * H
    axes = [np.arange(int(np.floor(-e / d - 0.5)), int(np.ceil(e / d - 0.5)) + 1)
            for e, d in zip(ext, dims)]
    idx = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    centers = ((idx + 0.5) * dims) @ frame
    ok = np.all(np.abs(centers) <= H * (1 + 1e-12), axis=1)
    return idx[ok]


def _children(parent_idx, parent_dims, child_dims):
    """Child slot indices whose centres fall in the given parent slot."""
    axes = [_slot_range(i * P, (i + 1) * P, c) for i, P, c in zip(parent_idx, parent_dims, child_dims)]
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)


def _mode_filter(mode, idx, dims, frame, rng, focus, cube_side, density):
    """Candidate slots for a mode, in the order they are offered."""
    centers = ((idx + 0.5) * dims) @ frame
    if mode == "uniform-random":
        return idx
    if mode == "plany":
        return idx[np.abs((centers - focus["point"]) @ focus["normal"]) <= focus["width"]]
    if mode == "grid":
        m = max(1, int(round(1 / density)))
        return idx[np.mod(idx.sum(axis=1), m) == 0]
    raise DomainError(f"unknown mode {mode}")


def generate_family(role, scale: float, caps: Optional[dict] = None, density: float = 0.1,
                    mode: str = "uniform-random", seed: int = 0, *,
                    focus: Optional[Sequence[float]] = None, rng=None) -> BoxFamily:
    """Random or structured family satisfying the declared spacing caps.

    ``uniform-random`` offers every admissible slot in random order and keeps a
    Binomial(#slots, density) number of them, skipping placements that would
    break a cap; ``plany`` does the same among slots near a random plane;
    ``bush`` puts one box per direction (kept with probability ``density``)
    centred at ``focus`` (default the origin); ``grid`` takes the slots with
    index sum divisible by round(1/density), dropping cap violations.
    Plank families with caps {N, Z1} are built top-down: Sigma boxes, then
    Z1 tau boxes per Sigma, then N planks per tau.
    """
    role = Role(role)
    if role not in FAMILY_ROLES:
        raise DomainError(f"families are tubes, plates or spatial planks, not {role}")
    if mode not in MODES:
        raise DomainError(f"unknown mode {mode}")
    if not 0 < density <= 1:
        raise DomainError("density must lie in (0, 1]")
    caps = _validate_caps(role, scale, caps or {})
    rng = np.random.default_rng(seed) if rng is None else rng
    params = direction_params(role, scale)
    frames = frenet_frames(params)
    dims = role_dims(role, scale)
    H = ambient_half(role, scale)
    focus = np.zeros(3) if focus is None else np.asarray(focus, dtype=float)
    common = dict(role=role, scale=float(scale), params=params, dims=dims, caps=caps, mode=mode,
                  seed=seed, density=float(density))

    if mode == "bush":
        keep = rng.random(len(params)) < density if density < 1 else np.ones(len(params), bool)
        d = np.flatnonzero(keep)
        return BoxFamily(direction=d, centers=np.tile(focus, (len(d), 1)), **common)

    plane = None
    if mode == "plany":
        normal = rng.normal(size=3)
        plane = {"point": rng.uniform(-H / 4, H / 4, size=3), "normal": normal / np.linalg.norm(normal),
                 "width": float(dims.max())}
    side = default_cube_side(role, scale)

    if "Z1" in caps:
        return _structured_planks(rng, mode, plane, side, density, frames, common, H)

    conts = _containers(role, scale, caps)
    cand_dir, cand_idx = [], []
    for k, F in enumerate(frames):
        idx = _mode_filter(mode, _admissible_slots(F, dims, H), dims, F, rng, plane, side, density)
        cand_dir.append(np.full(len(idx), k))
        cand_idx.append(idx)
    cand_dir = np.concatenate(cand_dir)
    cand_idx = np.concatenate(cand_idx).reshape(-1, 3)
    n = len(cand_dir)
    if mode == "grid":
        order = np.arange(n)
        target = n
    else:
        order = rng.permutation(n)
        target = int(rng.binomial(n, density)) if n else 0
    local = (cand_idx + 0.5) * dims
    keys = []
    for name, cdims, cap in conts:
        if cdims is None:
            keys.append(cand_dir[:, None])
        else:
            keys.append(np.column_stack([cand_dir, np.floor(local / cdims + 1e-9).astype(np.int64)]))
    used = [dict() for _ in conts]
    rejected = {name: 0 for name, _, _ in conts}
    chosen = []
    for j in order:
        if len(chosen) >= target:
            break
        ok = True
        for ci, (name, _, cap) in enumerate(conts):
            key = tuple(keys[ci][j])
            if used[ci].get(key, 0) >= cap:
                rejected[name] += 1
                ok = False
                break
        if not ok:
            continue
        for ci in range(len(conts)):
            key = tuple(keys[ci][j])
            used[ci][key] = used[ci].get(key, 0) + 1
        chosen.append(j)
    if mode != "grid" and len(chosen) < target:
        binding = max(rejected, key=rejected.get) if rejected else "density"
        raise InfeasibleCaps(f"density {density} needs {target} boxes but cap {binding} "
                             f"allows only {len(chosen)}")
    chosen = np.array(sorted(chosen), dtype=np.int64)
    d = cand_dir[chosen] if len(chosen) else np.zeros(0, np.int64)
    centers = np.einsum("ni,nij->nj", local[chosen], frames[d]) if len(chosen) else np.zeros((0, 3))
    return BoxFamily(direction=d, centers=centers, **common)


def _structured_planks(rng, mode, plane, side, density, frames, common, H):
    R = common["scale"]
    N, Z1 = common["caps"]["N"], common["caps"]["Z1"]
    dS, dT, dP = role_dims(Role.BOX_SIGMA, R), role_dims(Role.BOX_TAU, R), common["dims"]
    cand = []
    for k, F in enumerate(frames):
        idx = _mode_filter(mode, _admissible_slots(F, dS, H), dS, F, rng, plane, side, density)
        cand.extend((k, tuple(i)) for i in idx)
    n = len(cand)
    order = rng.permutation(n) if mode != "grid" else np.arange(n)
    target = n if mode == "grid" else int(rng.binomial(n, density))
    direction, centers, sig_id, tau_id = [], [], [], []
    got = 0
    for j in order:
        if got >= target:
            break
        k, sidx = cand[j]
        F = frames[k]
        picks = []
        taus = _children(sidx, dS, dT)
        for t in rng.permutation(len(taus)):
            planks = _children(taus[t], dT, dP)
            pc = ((planks + 0.5) * dP) @ F
            planks = planks[np.all(np.abs(pc) <= H * (1 + 1e-12), axis=1)]
            if len(planks) >= N:
                picks.append(planks[rng.choice(len(planks), N, replace=False)])
            if len(picks) == Z1:
                break
        if len(picks) < Z1:
            continue  # this Sigma cannot host Z1 full tau boxes; resample
        for t, pl in enumerate(picks):
            for p in pl:
                direction.append(k)
                centers.append(((p + 0.5) * dP) @ F)
                sig_id.append(got)
                tau_id.append(got * Z1 + t)
        got += 1
    if mode != "grid" and got < target:
        raise InfeasibleCaps(f"density {density} needs {target} Sigma boxes with Z1={Z1} heavy tau "
                             f"but only {got} fit (binding cap Z1)")
    labels = {"sigma": np.array(sig_id, dtype=np.int64), "tau": np.array(tau_id, dtype=np.int64)}
    return BoxFamily(direction=np.array(direction, dtype=np.int64),
                     centers=np.array(centers).reshape(-1, 3), labels=labels, **common)


def structure_counts(family: BoxFamily) -> dict:
    """Planks per tau and heavy tau per Sigma, recomputed from the geometry."""
    R = family.scale
    loc = family.local_centers()
    out = {}
    for name, d in (("tau", role_dims(Role.BOX_TAU, R)), ("sigma", role_dims(Role.BOX_SIGMA, R))):
        key = np.column_stack([family.direction, np.floor(loc / d + 1e-9).astype(np.int64)])
        out[name] = np.unique(key, axis=0, return_inverse=True)[1].reshape(-1)
    per_tau = np.bincount(out["tau"])
    taus_in_sigma = np.unique(np.column_stack([out["sigma"], out["tau"]]), axis=0)[:, 0]
    per_sigma = np.bincount(taus_in_sigma)
    return {"planks_per_tau": per_tau, "tau_per_sigma": per_sigma}


# --------------------------------------------------------------------------
# Rich cubes
# --------------------------------------------------------------------------

def _unit_rows(V, tiny=1e-9):
    n = np.linalg.norm(V, axis=1)
    keep = n > tiny
    return V[keep] / n[keep, None]


def _sat_axes(M: np.ndarray) -> np.ndarray:
    """Separating axes between the parallelepiped {|M(x-c)| <= h} and an axis-aligned cube."""
    E = np.linalg.inv(M).T          # rows: edge directions
    eye = np.eye(3)
    cross = np.cross(eye[:, None, :], E[None, :, :]).reshape(-1, 3)
    return np.vstack([eye, _unit_rows(M), _unit_rows(cross)])


def _radii(M, h, L, hc):
    """Projection radii onto the rows of L: parallelepiped plus cube of half side hc."""
    Einv = np.linalg.inv(M)          # x - c = Einv u with |u_k| <= h_k
    return np.abs(L @ Einv) @ h + hc * np.abs(L).sum(axis=1)


def _box_arrays(family):
    """(centers, matrices M, half widths h) for a family or a list of boxes."""
    if isinstance(family, BoxFamily):
        n = len(family)
        return family.centers, family.box_frames(), np.tile(family.dims / 2, (n, 1))
    boxes = list(family)
    if not boxes:
        return np.zeros((0, 3)), np.zeros((0, 3, 3)), np.zeros((0, 3))
    return (np.array([b.center for b in boxes]), np.array([b.matrix for b in boxes]),
            np.array([b.half_widths for b in boxes]))


def _grid_size(H: float, side: float) -> int:
    g = 2 * H / side
    G = int(round(g))
    if G < 1 or abs(g - G) > 1e-9 * max(1.0, g):
        raise DomainError(f"cube side {side} does not divide [-{H}, {H}]")
    return G


def _box_cells(c, M, h, lo, s, G) -> np.ndarray:
    """Flat ids of the grid cubes meeting one box, by sweeping columns along one axis."""
    hc = s * (1 - HALF_OPEN) / 2
    Einv = np.linalg.inv(M)
    ext = np.abs(Einv) @ h
    L = _sat_axes(M)
    RL = _radii(M, h, L, hc)
    ax = int(np.argmax(ext))
    a, b = [i for i in range(3) if i != ax]
    rng_ = []
    for i in (a, b):
        k0 = int(np.ceil((c[i] - ext[i] - 2 * hc - lo) / s))
        k1 = int(np.floor((c[i] + ext[i] - lo) / s))
        rng_.append(np.arange(max(k0, 0), min(k1, G - 1) + 1))
    if len(rng_[0]) == 0 or len(rng_[1]) == 0:
        return np.zeros(0, np.int64)
    ka, kb = (v.reshape(-1) for v in np.meshgrid(*rng_, indexing="ij"))
    qa, qb = lo + ka * s + hc, lo + kb * s + hc
    zlo = np.full(len(ka), -np.inf)
    zhi = np.full(len(ka), np.inf)
    alive = np.ones(len(ka), bool)
    for Lk, r in zip(L, RL):
        A = Lk[a] * (c[a] - qa) + Lk[b] * (c[b] - qb)
        lz = Lk[ax]
        if lz == 0:
            alive &= np.abs(A) <= r
            continue
        t1, t2 = (r - A) / lz, (-r - A) / lz
        zlo = np.maximum(zlo, c[ax] - np.maximum(t1, t2))
        zhi = np.minimum(zhi, c[ax] - np.minimum(t1, t2))
    k0 = np.ceil((zlo - lo - hc) / s)
    k1 = np.floor((zhi - lo - hc) / s)
    k0 = np.maximum(k0, 0)
    k1 = np.minimum(k1, G - 1)
    alive &= k1 >= k0
    if not alive.any():
        return np.zeros(0, np.int64)
    ka, kb, k0, k1 = ka[alive], kb[alive], k0[alive].astype(np.int64), k1[alive].astype(np.int64)
    cnt = k1 - k0 + 1
    start = np.repeat(k0 - np.concatenate([[0], np.cumsum(cnt)[:-1]]), cnt)
    kz = np.arange(cnt.sum()) + start
    kk = np.empty((3, len(kz)), dtype=np.int64)
    kk[a] = np.repeat(ka, cnt)
    kk[b] = np.repeat(kb, cnt)
    kk[ax] = kz
    return (kk[0] * G + kk[1]) * G + kk[2]


@dataclass
class RichCubes:
    """Per-cube incidence counts on the grid of side ``cube_side`` over [-H, H]^3."""

    cube_side: float
    ambient: float
    grid: int
    cells: np.ndarray        # flat ids of cubes met by at least one box
    richness: np.ndarray     # number of boxes meeting each of those cubes

    def count(self, r) -> int:
        return int(np.sum(self.richness >= r))

    def counts(self, rs) -> np.ndarray:
        rich = np.sort(self.richness)
        return len(rich) - np.searchsorted(rich, np.asarray(rs), side="left")

    @property
    def max_richness(self) -> int:
        return int(self.richness.max()) if len(self.richness) else 0

    def cubes(self, r) -> np.ndarray:
        """Lower corners of the r-rich cubes."""
        ids = self.cells[self.richness >= r]
        G = self.grid
        k = np.stack([ids // (G * G), (ids // G) % G, ids % G], axis=1)
        return -self.ambient + k * self.cube_side

    def histogram(self) -> dict:
        v, c = np.unique(self.richness, return_counts=True)
        return {int(a): int(b) for a, b in zip(v, c)}


def cube_richness(family, cube_side: Optional[float] = None, ambient: Optional[float] = None) -> RichCubes:
    """Exact incidence count of every grid cube met by the family."""
    if cube_side is None:
        if not isinstance(family, BoxFamily):
            raise DomainError("cube side required for a plain box list")
        cube_side = default_cube_side(family.role, family.scale)
    if ambient is None:
        if not isinstance(family, BoxFamily):
            raise DomainError("ambient half side required for a plain box list")
        ambient = family.ambient
    G = _grid_size(ambient, cube_side)
    C, Ms, hs = _box_arrays(family)
    parts = [_box_cells(c, M, h, -ambient, cube_side, G) for c, M, h in zip(C, Ms, hs)]
    if not parts:
        return RichCubes(cube_side, ambient, G, np.zeros(0, np.int64), np.zeros(0, np.int64))
    cells, rich = np.unique(np.concatenate(parts), return_counts=True)
    return RichCubes(float(cube_side), float(ambient), G, cells, rich)


def count_rich_cubes(family, cube_side: Optional[float] = None, r=1, ambient: Optional[float] = None):
    """|Q_r| for one threshold, or an array of counts for a sequence of thresholds."""
    rc = cube_richness(family, cube_side, ambient)
    if np.ndim(r) == 0:
        return rc.count(r)
    return rc.counts(r)


def brute_force_richness(family, cube_side: float, ambient: float) -> np.ndarray:
    """Incidence count of every grid cube by direct separating-axis tests (dense G^3 array)."""
    G = _grid_size(ambient, cube_side)
    hc = cube_side * (1 - HALF_OPEN) / 2
    k = np.arange(G)
    q = np.stack(np.meshgrid(k, k, k, indexing="ij"), axis=-1).reshape(-1, 3) * cube_side - ambient + hc
    out = np.zeros(len(q), dtype=np.int64)
    C, Ms, hs = _box_arrays(family)
    for c, M, h in zip(C, Ms, hs):
        L = _sat_axes(M)
        sep = np.abs((c - q) @ L.T) > _radii(M, h, L, hc)
        out += ~sep.any(axis=1)
    return out.reshape(G, G, G)


def boxes_overlap(p: OrientedBox, q: OrientedBox) -> bool:
    """Closed intersection test for two parallelepipeds (slab or rectangular)."""
    Mp, Mq = p.matrix, q.matrix
    Ep, Eq = np.linalg.inv(Mp).T, np.linalg.inv(Mq).T
    cross = np.cross(Ep[:, None, :], Eq[None, :, :]).reshape(-1, 3)
    L = np.vstack([_unit_rows(Mp), _unit_rows(Mq), _unit_rows(cross)])
    rp = np.abs(L @ np.linalg.inv(Mp)) @ p.half_widths
    rq = np.abs(L @ np.linalg.inv(Mq)) @ q.half_widths
    gap = np.abs(L @ (p.center - q.center))
    return bool(np.all(gap <= (rp + rq) * (1 + 1e-12)))


# --------------------------------------------------------------------------
# L^4 sums of plank indicators
# --------------------------------------------------------------------------

@dataclass
class L4Result:
    l4: float          # integral of (sum 1_P)^4
    l1: float          # integral of sum 1_P
    stderr: float
    method: str
    n_boxes: int
    samples: int = 0

    @property
    def ratio(self) -> float:
        return self.l4 / self.l1 if self.l1 > 0 else 0.0


def _family_boxes(family):
    return family.boxes() if isinstance(family, BoxFamily) else list(family)


def _exact_l4(boxes) -> float:
    if not boxes:
        return 0.0
    vols = np.array([b.volume for b in boxes])
    lo_hi = [b.aabb() for b in boxes]
    hs = [b.halfspaces() for b in boxes]
    size = max(float(np.max(h - l)) for l, h in lo_hi)
    n = len(boxes)
    lo = np.array([l for l, _ in lo_hi])
    hi = np.array([h for _, h in lo_hi])
    # pairwise bounding-box overlap
    near = np.all((lo[:, None, :] <= hi[None, :, :]) & (lo[None, :, :] <= hi[:, None, :]), axis=-1)
    total = float(vols.sum())

    def grow(faces, members, depth, tol):
        nonlocal total
        last = members[-1]
        for j in range(last + 1, n):
            if not all(near[m, j] for m in members):
                continue
            f = clip_faces(faces, *hs[j], size)
            vol = faces_volume(f)
            if vol <= tol:
                continue
            total += SURJECTIONS[depth + 1] * vol
            if depth + 1 < 4:
                grow(f, members + [j], depth + 1, tol)

    for i in range(n):
        faces = _clip(*hs[i], *lo_hi[i])
        grow(faces, [i], 1, EMPTY_RTOL * vols[i])
    return total


def _point_counts(boxes, x) -> np.ndarray:
    f = np.zeros(len(x))
    for b in boxes:
        f += b.contains(x, rtol=0.0)
    return f


def l4_plank_sum(family, method: str = "exact", samples: int = 200_000, seed: int = 0,
                 delta: Optional[float] = None) -> L4Result:
    """Integrals of (sum 1_P)^4 and sum 1_P over a plank family.

    ``exact`` expands the fourth power over distinct subsets of at most four
    planks (weighted by the number of 4-tuples covering each subset) and
    clips their intersections; it refuses families with 1/delta above 32.
    ``monte-carlo`` samples uniformly inside each plank and averages
    (sum 1_P)^3, so the estimate is stratified by plank.
    """
    boxes = _family_boxes(family)
    if delta is None:
        if isinstance(family, BoxFamily):
            delta = family.scale ** (-1 / 3)
        elif boxes:
            delta = float(boxes[0].dims[0] / boxes[0].dims[1])
    l1 = float(sum(b.volume for b in boxes))
    if method == "exact":
        if delta is not None and 1 / delta > EXACT_L4_MAX * (1 + 1e-9):
            raise UseMonteCarlo(f"exact L4 limited to 1/delta <= {EXACT_L4_MAX}")
        return L4Result(_exact_l4(boxes), l1, 0.0, "exact", len(boxes))
    if method != "monte-carlo":
        raise DomainError(f"unknown method {method}")
    if not boxes:
        return L4Result(0.0, 0.0, 0.0, method, 0, samples)
    rng = np.random.default_rng(seed)
    per = max(2, samples // len(boxes))
    est, var = 0.0, 0.0
    for b in boxes:
        x = b.sample(per, rng)
        f3 = _point_counts(boxes, x) ** 3
        est += b.volume * f3.mean()
        var += b.volume**2 * f3.var(ddof=1) / per
    return L4Result(float(est), l1, float(np.sqrt(var)), method, len(boxes), per * len(boxes))


def origin_planks(delta: float, params=None) -> list:
    """Origin-centred (1/delta, 1/delta^2, 1/delta^3) planks, one per interval of length delta."""
    R = delta**-3
    if params is None:
        params = np.arange(int(round(1 / delta))) * delta
    return [make_box(Role.SPATIAL_PLANK, (c, c + delta), R) for c in params]


def triple_volume(delta: float, d2: float, d3: float) -> float:
    """|P_0 cap P_{D2} cap P_{D3}| for origin-centred planks with offsets D2 >= D3."""
    bs = origin_planks(delta, [0.0, d2, d3])
    return intersect_boxes(bs).volume()


def triple_volume_model(delta: float, d2: float, d3: float) -> float:
    return (1 / delta) * (1 / delta) / (d2 + delta) * (1 / delta) / ((d3 + delta) * (d2 - d3 + delta))


# --------------------------------------------------------------------------
# Incidence checks
# --------------------------------------------------------------------------

def _trial_rng(seed: int, trial: int):
    return np.random.default_rng([int(seed), int(trial)])


def _dyadic_upto(top: float) -> list:
    out, r = [], 1
    while r <= top * (1 + 1e-9):
        out.append(r)
        r *= 2
    return out


def _row(theorem, scale, caps, r, count, bound, trial, trials, seed, env, **extra):
    ratio = count / bound if bound > 0 else np.inf
    row = {"theorem": theorem, "R_or_delta": float(scale), "caps": caps_label(caps), "r": r,
           "count": int(count), "bound": float(bound), "ratio": float(ratio), "trials": int(trials),
           "seed": int(seed), "trial": int(trial), "envelope": float(env),
           "within_envelope": bool(count <= bound * env)}
    row.update(extra)
    return row


def _summarize(rows, log_scale: float) -> dict:
    out = {}
    for th in sorted({r["theorem"] for r in rows}):
        rr = [r for r in rows if r["theorem"] == th]
        mx = max(r["ratio"] for r in rr)
        C, g = envelope_fit(mx, log_scale)
        out[th] = {"max_ratio": mx, "C": C, "gamma": g, "rows": len(rr),
                   "all_within_envelope": all(r["within_envelope"] for r in rr)}
    return out


def tube_scale_search(family: BoxFamily, r: float) -> dict:
    """Exhaustive dyadic search for (sigma, M_sigma) in the tube incidence theorem.

    M_sigma is the largest number of tubes with directions in one interval J
    of length R^{-1/3}/sigma inside one U_sigma box of J's lattice.  Among the
    sigma whose r-bound is met up to (log R)^2, the one with the smallest
    |Q_r| bound is returned.
    """
    R = family.scale
    logR = np.log(R)
    N1 = family.caps.get("N1", family.caps.get("N", np.inf))
    N = family.caps.get("N", np.inf)
    best = None
    for sigma in dyadic_sigmas(R):
        J = R ** (-1 / 3) / sigma
        nJ = max(1, int(round(1 / J)))
        jidx = np.minimum((family.params[family.direction] / J + 1e-9).astype(np.int64), nJ - 1)
        Fs = frenet_frames(np.arange(nJ) * J)
        U = role_dims(Role.BOX_U, R, sigma)
        loc = np.einsum("nij,nj->ni", Fs[jidx], family.centers)
        key = np.column_stack([jidx, np.floor(loc / U).astype(np.int64)])
        M = int(np.unique(key, axis=0, return_counts=True)[1].max()) if len(family) else 0
        small = sigma >= R ** (-1 / 6) * (1 - 1e-9)
        if small:
            qb = len(family) * M * sigma * R ** (1 / 3) / r**2
            rb = R ** (1 / 3) * M * sigma**2
            mb = sigma**-1 * min(N1, sigma**-1)
        else:
            qb = len(family) * M * sigma**3 * R ** (2 / 3) / r**2
            rb = R ** (2 / 3) * M * sigma**4
            mb = sigma**-3 * R ** (-1 / 3) * min(N1 / sigma * R ** (-1 / 6), N)
        cand = {"sigma": sigma, "M_sigma": M, "bound": qb, "r_bound": rb, "M_bound": mb,
                "r_ok": bool(r <= rb * logR**2)}
        key_ = (not cand["r_ok"], qb)
        if best is None or key_ < best[0]:
            best = (key_, cand)
    return best[1]


def verify_tube_incidence(R: float, caps: dict, r_grid=None, trials: int = 1, seed: int = 0,
                          density: float = 0.1, mode: str = "uniform-random",
                          first_trial: int = 0) -> Report:
    """Rich (R^{2/3})-cube counts of random tube families against the tube bounds.

    Rows per (trial, r): the plate-spacing bound |T| N R^{1/3} / r^2, the
    box-spacing bound |T| N1 R^{1/3} / r^2 for r >= N1 R^{1/6}, the bilinear
    baseline |T|^2 / r^2 and the best dyadic scale found by search.
    """
    if not 2**6 * (1 - 1e-9) <= R <= 2**18 * (1 + 1e-9):
        raise DomainError("R must lie in [2^6, 2^18]")
    caps = dict(caps)
    caps.setdefault("N1", caps.get("N"))
    r_grid = list(r_grid) if r_grid is not None else _dyadic_upto(R ** (1 / 3))
    env = envelope_log(Role.TUBE, R) ** 6
    rows = []
    for t in range(first_trial, first_trial + trials):
        fam = generate_family(Role.TUBE, R, caps, density, mode, seed, rng=_trial_rng(seed, t))
        rc = cube_richness(fam)
        n, N, N1 = len(fam), caps["N"], caps["N1"]
        for r in r_grid:
            q = rc.count(r)
            rows.append(_row("tube-plate-spacing", R, caps, r, q, n * N * R ** (1 / 3) / r**2,
                             t, trials, seed, env, family_size=n))
            if r >= N1 * R ** (1 / 6) * (1 - 1e-9):
                rows.append(_row("tube-box-spacing", R, caps, r, q, n * N1 * R ** (1 / 3) / r**2,
                                 t, trials, seed, env, family_size=n))
            rows.append(_row("tube-bilinear-baseline", R, caps, r, q, max(n, 1) ** 2 / r**2,
                             t, trials, seed, env, family_size=n))
            s = tube_scale_search(fam, r)
            rows.append(_row("tube-scale-search", R, caps, r, q, s["bound"], t, trials, seed, env,
                             family_size=n, sigma=s["sigma"], M_sigma=s["M_sigma"],
                             M_ratio=s["M_sigma"] / s["M_bound"] if s["M_bound"] > 0 else np.inf))
    return Report("tube-incidence", rows, _summarize(rows, envelope_log(Role.TUBE, R)))


def verify_plate_kakeya(delta: float, N: int, r_grid=None, trials: int = 1, mode: str = "both",
                        seed: int = 0, density: float = 0.01, family_mode: str = "uniform-random",
                        first_trial: int = 0) -> Report:
    """Rich (1/delta)-cube counts of plate families against the L2 and L4 plate bounds."""
    if mode not in ("L2", "L4", "both"):
        raise DomainError("mode is L2, L4 or both")
    if not 0 < delta < 1:
        raise DomainError("delta must lie in (0, 1)")
    cross = np.sqrt(N / delta)
    r_grid = list(r_grid) if r_grid is not None else sorted(
        set(_dyadic_upto(4 * cross)) | {int(np.ceil(2 * cross))})
    env = envelope_log(Role.PLATE, delta) ** 6
    caps = {"N": N}
    rows = []
    for t in range(first_trial, first_trial + trials):
        fam = generate_family(Role.PLATE, delta, caps, density, family_mode, seed, rng=_trial_rng(seed, t))
        rc = cube_richness(fam)
        n = len(fam)
        for r in r_grid:
            q = rc.count(r)
            b2 = n * N * delta**-2 / r**2
            b4 = n * N**2 * delta**-3 / r**4
            extra = dict(family_size=n, l4_beats_l2=bool(b4 < b2), above_crossover=bool(r >= 2 * cross))
            if mode in ("L2", "both"):
                rows.append(_row("plate-l2", delta, caps, r, q, b2, t, trials, seed, env, **extra))
            if mode in ("L4", "both"):
                rows.append(_row("plate-l4", delta, caps, r, q, b4, t, trials, seed, env, **extra))
    summary = _summarize(rows, envelope_log(Role.PLATE, delta))
    summary["crossover_r"] = float(cross)
    summary["l4_beats_l2_above_2x_crossover"] = all(
        r["l4_beats_l2"] for r in rows if r["above_crossover"])
    return Report("plate-kakeya", rows, summary)


def verify_plank_incidence(R: float, N: int, Z1: int, r_grid=None, trials: int = 1, seed: int = 0,
                           density: float = 0.01, mode: str = "uniform-random",
                           first_trial: int = 0) -> Report:
    """Rich (R^{1/3})-cube counts of structured plank families against |P| N^5 Z1 R^2 / r^7."""
    caps = {"N": N, "Z1": Z1}
    r_grid = list(r_grid) if r_grid is not None else _dyadic_upto(R ** (1 / 3))
    env = envelope_log(Role.SPATIAL_PLANK, R) ** 6
    rows = []
    monotone = True
    for t in range(first_trial, first_trial + trials):
        fam = generate_family(Role.SPATIAL_PLANK, R, caps, density, mode, seed, rng=_trial_rng(seed, t))
        rc = cube_richness(fam)
        qs = rc.counts(r_grid)
        monotone &= bool(np.all(np.diff(qs[np.argsort(r_grid)]) <= 0))
        for r, q in zip(r_grid, qs):
            rows.append(_row("plank-spacing", R, caps, r, q, len(fam) * N**5 * Z1 * R**2 / r**7,
                             t, trials, seed, env, family_size=len(fam)))
    summary = _summarize(rows, envelope_log(Role.SPATIAL_PLANK, R))
    summary["monotone"] = monotone
    return Report("plank-incidence", rows, summary)


BAND = 64.0


def _shape_row(lemma, sigma, a, boxes, model) -> dict:
    """Intersection of boxes against a model box: volume band and rectangularity."""
    p = intersect_boxes(boxes)
    rect, ratio = almost_rectangular(p, model)
    outer = float(np.max(np.abs(model.local(p.vertices())) / model.half_widths))
    return {"lemma": lemma, "sigma": sigma, "J_left": a, "slack": None, "volume_ratio": float(ratio),
            "band_ok": bool(1 / BAND <= ratio <= BAND), "rectangular": bool(rect), "outer_factor": outer}


def _vertex_slack(boxes, container: OrientedBox) -> float:
    v = np.vstack([b.vertices() for b in boxes])
    return float(np.max(np.abs(container.local(v)) / container.half_widths))


def verify_union_lemmas(R: float, sigma_grid=None) -> Report:
    """Containment and intersection shape of origin-centred tubes, planks and plates.

    For each sigma and each interval J at the two ends of [0, 1]: tubes over
    J (|J| = R^{-1/3}/sigma) inside U_sigma, planks over J (|J| = sigma)
    inside (R sigma^2, R sigma, R) with their intersection close to
    (R^{1/3}, R^{1/3}/sigma, R^{1/3}/sigma^2), and plates at delta = 4^{-k}
    nearest R^{-1/3}.  ``slack`` is the dilation of the container needed.
    """
    sigmas = list(sigma_grid) if sigma_grid is not None else dyadic_sigmas(R)
    lo = R ** (-1 / 3)
    rows = []
    for sigma in sigmas:
        # tubes
        J = lo / sigma
        for a in sorted({0.0, max(0.0, 1 - J)}):
            tubes = [make_box(Role.TUBE, (c, c + lo), R) for c in a + np.arange(int(round(J / lo))) * lo]
            U = make_box(Role.BOX_U, (a, a + J), R, sigma=sigma)
            rows.append({"lemma": "tube-union", "sigma": sigma, "J_left": a, "slack": _vertex_slack(tubes, U),
                         "volume_ratio": None,
                         "branch": "small-angle" if sigma >= R ** (-1 / 6) * (1 - 1e-9) else "large-angle"})
        # planks
        k = max(1, int(round(sigma / lo)))
        for a in sorted({0.0, max(0.0, 1 - sigma)}):
            planks = [make_box(Role.SPATIAL_PLANK, (c, c + lo), R) for c in a + np.arange(k) * lo]
            big = make_box(Role.GENERIC, (a, a + sigma), R, dims=(R * sigma**2, R * sigma, R))
            rows.append({"lemma": "plank-union", "sigma": sigma, "J_left": a,
                         "slack": _vertex_slack(planks, big), "volume_ratio": None})
            model = make_box(Role.GENERIC, (a, a + sigma), R,
                             dims=(R ** (1 / 3), R ** (1 / 3) / sigma, R ** (1 / 3) / sigma**2))
            rows.append(_shape_row("plank-intersection", sigma, a, planks, model))
    # plates
    delta = 4.0 ** -max(1, round(np.log(R ** (1 / 3)) / np.log(4)))
    for sigma in [s for s in _dyadic_desc(1.0, delta)]:
        for a in sorted({0.0, max(0.0, 1 - sigma)}):
            plates = [make_box(Role.PLATE, (c, c + delta), delta)
                      for c in a + np.arange(max(1, int(round(sigma / delta)))) * delta]
            fat = make_box(Role.GENERIC, (a, a + sigma), delta,
                           dims=(delta**-2 * sigma, delta**-2, delta**-2))
            rows.append({"lemma": "plate-union", "sigma": sigma, "J_left": a, "delta": delta,
                         "slack": _vertex_slack(plates, fat), "volume_ratio": None})
    J = np.sqrt(delta)
    for a in sorted({0.0, 1 - J}):
        plates = [make_box(Role.PLATE, (c, c + delta), delta)
                  for c in a + np.arange(int(round(J / delta))) * delta]
        model = make_box(Role.GENERIC, (a, a + J), delta, dims=(1 / delta, delta**-1.5, delta**-2))
        row = _shape_row("plate-intersection", float(J), float(a), plates, model)
        row["delta"] = delta
        rows.append(row)
    slacks = [r["slack"] for r in rows if r["slack"] is not None]
    shapes = [r for r in rows if r["slack"] is None]
    summary = {"worst_slack": max(slacks), "slack_ok": max(slacks) <= 10,
               "intersection_band_ok": all(r["band_ok"] for r in shapes),
               "intersection_rectangular_at_0": all(r["rectangular"] for r in shapes if r["J_left"] == 0),
               "intersection_rectangular_all": all(r["rectangular"] for r in shapes),
               "worst_intersection_outer": max(r["outer_factor"] for r in shapes),
               "worst_by_lemma": {l: max(r["slack"] for r in rows if r["lemma"] == l)
                                  for l in ("tube-union", "plank-union", "plate-union")}}
    return Report("union-lemmas", rows, summary)


def _dyadic_desc(top: float, bottom: float) -> list:
    out, s = [], top
    while s >= bottom * (1 - 1e-9):
        out.append(s)
        s /= 2
    return out
