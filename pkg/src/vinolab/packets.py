"""Wave packets at scales R^{-1/2} (plates) and R^{-1/3} (planks) and the
two pigeonholing sequences over them.

Plates W live in the Frenet frame of the left endpoint of their interval J
(length R^{-1/2}) with dims (R^{1/2}, R, R); planks P live in the frame of
their interval I (length R^{-1/3}) with dims (R^{1/3}, R^{2/3}, R).  The
fat plates Pi_I (R^{2/3}, R, R), the boxes Sigma (R^{1/2}, R^{5/6}, R) and
tau (R^{1/2}, R^{2/3}, R) are nested lattices in the frame of I anchored at
(-R, -R, -R); a packet belongs to the cell containing its centre.  Nesting
needs R^{1/6} to be an integer.

Dyadic classes: heights, n, X, m, A, N, Z1, Z2 use the upper end (a count
c is in class 2^k when 2^{k-1} < c <= 2^k); l and Y use the lower end
(2^k <= c < 2^{k+1}).  With these conventions lY <= mX holds exactly.
"""

from __future__ import annotations

import warnings
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import DomainError
from .geometry import frenet_frames, gamma
from .report import Report

FIRST = ("w", "n", "X", "m", "l", "Y")
SECOND = ("A", "N", "Z1", "Z2")
AUXILIARY = ("E1", "E2", "M1", "M2", "U1", "U2", "M_sigma", "sigma")
HEIGHT_FLOOR = 1e-12
PROP84_C = 4.0


def upper_class(c):
    """Smallest power of two >= c (c > 0)."""
    return 2.0 ** np.ceil(np.log2(np.asarray(c, dtype=float)) - 1e-12)


def lower_class(c):
    """Largest power of two <= c (c >= 1)."""
    return 2.0 ** np.floor(np.log2(np.asarray(c, dtype=float)) + 1e-12)


def _is_pow2(v) -> bool:
    return v > 0 and abs(np.log2(v) - round(np.log2(v))) < 1e-12


# --------------------------------------------------------------------------
# Window profile
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Profile:
    """Separable window: 1 on |u| <= 1 - taper, cosine down to 1/2 at |u| = 1,
    then |u|^{-decay}/2 (u is the local coordinate over the half width)."""

    decay: float = 20.0
    taper: float = 0.25

    def __call__(self, u):
        a = np.abs(np.asarray(u, dtype=float))
        core = 1 - self.taper
        rc = 0.75 + 0.25 * np.cos(np.pi * np.clip(a - core, 0, None) / self.taper)
        with np.errstate(divide="ignore"):
            tail = 0.5 * np.where(a > 1, a, 1.0) ** (-self.decay)
        return np.where(a <= 1, rc, tail)

    def window(self, local):
        return np.prod(self(local), axis=-1)

    def lp_mass(self, p: float, n: int = 20001) -> float:
        """Integral over the real line of profile(u)^p (per unit half width)."""
        u = np.linspace(0, 1, n)
        inner = np.trapezoid(self(u) ** p, u)
        tail = 0.5**p / (p * self.decay - 1)
        return 2 * (inner + tail)


# --------------------------------------------------------------------------
# Ensembles
# --------------------------------------------------------------------------

def _scales(R: float):
    s = R ** (1 / 6)
    if R < 64 or abs(s - round(s)) > 1e-9:
        raise DomainError("R must be a sixth power of an integer >= 2")
    return int(round(s))


@dataclass
class PacketEnsemble:
    R: float
    plate_J: np.ndarray = field(default_factory=lambda: np.zeros(0, int))
    plate_center: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    plate_amp: np.ndarray = field(default_factory=lambda: np.zeros(0, complex))
    plank_I: np.ndarray = field(default_factory=lambda: np.zeros(0, int))
    plank_center: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    plank_amp: np.ndarray = field(default_factory=lambda: np.zeros(0, complex))
    params: Optional[dict] = None          # filled by pigeonhole_analysis
    aux: dict = field(default_factory=lambda: {k: None for k in AUXILIARY})
    planted: Optional[dict] = None         # fixtures record what they planted

    def __post_init__(self):
        self.s = _scales(self.R)
        self.plate_J = np.asarray(self.plate_J, int).reshape(-1)
        self.plate_center = np.asarray(self.plate_center, float).reshape(-1, 3)
        self.plate_amp = np.asarray(self.plate_amp, complex).reshape(-1)
        self.plank_I = np.asarray(self.plank_I, int).reshape(-1)
        self.plank_center = np.asarray(self.plank_center, float).reshape(-1, 3)
        self.plank_amp = np.asarray(self.plank_amp, complex).reshape(-1)
        if not (len(self.plate_J) == len(self.plate_center) == len(self.plate_amp)):
            raise DomainError("plate arrays differ in length")
        if not (len(self.plank_I) == len(self.plank_center) == len(self.plank_amp)):
            raise DomainError("plank arrays differ in length")
        if np.any((self.plate_J < 0) | (self.plate_J >= self.n_J)):
            raise DomainError("plate interval index out of range")
        if np.any((self.plank_I < 0) | (self.plank_I >= self.n_I)):
            raise DomainError("plank interval index out of range")

    # scales ---------------------------------------------------------------
    @property
    def n_J(self) -> int:
        return self.s**3

    @property
    def n_I(self) -> int:
        return self.s**2

    def I_of_J(self, J):
        return np.asarray(J) // self.s

    def plate_dims(self):
        s = self.s
        return np.array([s**3, s**6, s**6], float)

    def plank_dims(self):
        s = self.s
        return np.array([s**2, s**4, s**6], float)

    def cell_dims(self, kind: str):
        s = self.s
        return {"Pi": np.array([s**4, s**6, s**6], float),
                "Sigma": np.array([s**3, s**5, s**6], float),
                "tau": np.array([s**3, s**4, s**6], float)}[kind]

    def carriers(self, kind: str, idx):
        """Frequency of the packets: curve point at the interval centre."""
        L = 1 / self.n_J if kind == "plate" else 1 / self.n_I
        return gamma((np.asarray(idx) + 0.5) * L)

    def frames(self, kind: str, idx):
        L = 1 / self.n_J if kind == "plate" else 1 / self.n_I
        return frenet_frames(np.asarray(idx) * L)

    def cell(self, kind: str, I, centers):
        """Integer cell index (per axis) of each centre in the lattice of I."""
        F = self.frames("plank", I)
        u = np.einsum("kij,kj->ki", F, np.asarray(centers, float).reshape(-1, 3))
        return np.floor((u + self.R) / self.cell_dims(kind)).astype(int)

    @property
    def size(self):
        return len(self.plate_J), len(self.plank_I)

    def to_dict(self) -> dict:
        return {"R": self.R,
                "plates": {"J": self.plate_J.tolist(), "center": self.plate_center.tolist(),
                           "amp_re": self.plate_amp.real.tolist(), "amp_im": self.plate_amp.imag.tolist()},
                "planks": {"I": self.plank_I.tolist(), "center": self.plank_center.tolist(),
                           "amp_re": self.plank_amp.real.tolist(), "amp_im": self.plank_amp.imag.tolist()},
                "params": self.params, "aux": self.aux, "planted": self.planted}

    @classmethod
    def from_dict(cls, d: dict) -> "PacketEnsemble":
        pl, pk = d["plates"], d["planks"]
        return cls(d["R"], pl["J"], pl["center"], np.asarray(pl["amp_re"]) + 1j * np.asarray(pl["amp_im"]),
                   pk["I"], pk["center"], np.asarray(pk["amp_re"]) + 1j * np.asarray(pk["amp_im"]),
                   d.get("params"), d.get("aux") or {k: None for k in AUXILIARY}, d.get("planted"))


# --------------------------------------------------------------------------
# Synthesis
# --------------------------------------------------------------------------

class PacketField:
    """F(x) = sum_W A_W chi_W(x) e(x . xi_W); linear in the amplitudes."""

    def __init__(self, centers, frames, dims, carriers, amps, profile: Profile):
        self.centers = np.asarray(centers, float).reshape(-1, 3)
        self.frames = np.asarray(frames, float).reshape(-1, 3, 3)
        self.half = np.asarray(dims, float) / 2
        self.carriers = np.asarray(carriers, float).reshape(-1, 3)
        self.amps = np.asarray(amps, complex).reshape(-1)
        self.profile = profile

    def __len__(self):
        return len(self.amps)

    def packet(self, k, x):
        x = np.atleast_2d(np.asarray(x, float))
        loc = (x - self.centers[k]) @ self.frames[k].T / self.half
        return self.amps[k] * self.profile.window(loc) * np.exp(2j * np.pi * ((x @ self.carriers[k]) % 1.0))

    def __call__(self, x):
        x = np.atleast_2d(np.asarray(x, float))
        out = np.zeros(len(x), complex)
        for k in np.flatnonzero(self.amps):
            out += self.packet(k, x)
        return out

    def lp_norm_packet(self, k, p: float) -> float:
        """Exact ||F_W||_p (un-normalised) from the separable profile."""
        vol = float(np.prod(self.half))
        return abs(self.amps[k]) * (vol * self.profile.lp_mass(p) ** 3) ** (1 / p)


def synthesize_from_packets(ens: PacketEnsemble, profile: Optional[Profile] = None, kind: str = "plate",
                            select=None) -> PacketField:
    """Evaluator for the plate (or plank) packets of an ensemble."""
    profile = profile or Profile()
    if kind == "plate":
        idx, C, amp, dims = ens.plate_J, ens.plate_center, ens.plate_amp, ens.plate_dims()
    elif kind == "plank":
        idx, C, amp, dims = ens.plank_I, ens.plank_center, ens.plank_amp, ens.plank_dims()
    else:
        raise DomainError(f"unknown packet kind {kind}")
    sel = np.arange(len(idx)) if select is None else np.asarray(select, int)
    if np.any(np.abs(C[sel]) > ens.R * (1 + 1e-12)):
        raise DomainError("packet centres must lie in [-R, R]^3")
    # carriers are tied to the interval, so a conflict can only be a repeated packet
    keys = Counter((int(idx[k]), *np.round(C[k], 9)) for k in sel)
    if any(v > 1 for v in keys.values()):
        warnings.warn("repeated packets (same interval and centre) are summed", RuntimeWarning)
    return PacketField(C[sel], ens.frames(kind, idx[sel]), dims, ens.carriers(kind, idx[sel]), amp[sel], profile)


# --------------------------------------------------------------------------
# Construction
# --------------------------------------------------------------------------

def build_fixture(R: float = 2.0**12, n: int = 1, X: int = 1, m: int = 1, Y: int = 1,
                  N: int = 1, Z1: int = 1, Z2: int = 1, w: float = 1.0, A: float = 1.0,
                  I: int = 0, seed: Optional[int] = None) -> PacketEnsemble:
    """Ensemble whose analysis returns exactly the planted parameters.

    One interval I with m heavy J; Y fat plates, J_i contributing to
    Pi_{(iX + k) mod Y} (k < X) with n stacked plates in each, so every fat
    plate has l = mX / Y contributors.  Each fat plate holds Z2 boxes Sigma,
    each with Z1 boxes tau, each with N planks.  With ``seed`` the packet
    phases are random, otherwise all amplitudes are real.
    """
    s = _scales(R)
    for name, v in dict(n=n, X=X, m=m, Y=Y, N=N, Z1=Z1, Z2=Z2, w=w, A=A).items():
        if not _is_pow2(v):
            raise DomainError(f"{name} must be a power of two")
    if X > Y or (m * X) % Y:
        raise DomainError("need X <= Y and Y | mX")
    if m > s or n > s or N > s or Z1 > s or Y > 2 * s**2 or Z2 > n * s or not 0 <= I < s**2:
        raise DomainError("planted parameters exceed the lattice capacity")
    l = m * X // Y
    ens = PacketEnsemble(R)
    rng = np.random.default_rng(seed)
    phase = (lambda k: np.exp(2j * np.pi * rng.random(k))) if seed is not None else (lambda k: np.ones(k))
    FI = ens.frames("plank", [I])[0]
    dPi, dSig, dtau = ens.cell_dims("Pi"), ens.cell_dims("Sigma"), ens.cell_dims("tau")
    pd, kd = ens.plate_dims(), ens.plank_dims()
    to_world = lambda u: np.asarray(u) @ FI               # I-frame -> ambient
    lo = lambda k: -R + k * dPi[0]                          # left t-edge of fat plate k
    Pi_nb = np.array([R / 2, R / 2]) - R                    # centre of cell (0, 0) in n, b
    plates, planks = [], []
    for i in range(m):
        J = I * s + i
        for k in range(X):
            y = (i * X + k) % Y
            for q in range(n):
                u = np.array([lo(y) + (q + 0.5) * pd[0], *(Pi_nb + [0, 0])])
                plates.append((J, to_world(u)))
    for y in range(Y):
        for z in range(Z2):
            st, sn = z % n, z // n                          # Sigma cells sit on the plate stack
            for a in range(Z1):
                for b in range(N):
                    u = np.array([lo(y) + st * dSig[0] + (b + 0.5) * kd[0],
                                  -R + sn * dSig[1] + a * dtau[1] + kd[1] / 2,
                                  -R + kd[2] / 2])
                    planks.append(to_world(u))
    ens.plate_J = np.array([p[0] for p in plates], int)
    ens.plate_center = np.array([p[1] for p in plates])
    ens.plate_amp = w * phase(len(plates))
    ens.plank_I = np.full(len(planks), I, int)
    ens.plank_center = np.array(planks).reshape(-1, 3)
    ens.plank_amp = A * phase(len(planks))
    ens.planted = {"w": float(w), "n": n, "X": X, "m": m, "l": l, "Y": Y,
                   "A": float(A), "N": N, "Z1": Z1, "Z2": Z2}
    return ens


def random_ensemble(R: float = 2.0**12, plates: int = 200, planks: int = 200, seed: int = 0,
                    octaves: int = 6, spread: float = 0.5, rng=None) -> PacketEnsemble:
    """Random centres in [-spread R, spread R]^3, log-uniform heights, random phases.

    Intervals are drawn from a few I so that the heavy classes are populated.
    """
    ens = PacketEnsemble(R)
    rng = np.random.default_rng(seed) if rng is None else rng
    s = ens.s
    Is = rng.choice(ens.n_I, size=min(ens.n_I, 3), replace=False)
    amp = lambda k: 2.0 ** rng.uniform(-octaves, 0, k) * np.exp(2j * np.pi * rng.random(k))
    ens.plate_J = rng.choice(Is, plates) * s + rng.integers(0, s, plates)
    ens.plate_center = rng.uniform(-spread * R, spread * R, (plates, 3))
    ens.plate_amp = amp(plates)
    ens.plank_I = rng.choice(Is, planks)
    ens.plank_center = rng.uniform(-spread * R, spread * R, (planks, 3))
    ens.plank_amp = amp(planks)
    return ens


# --------------------------------------------------------------------------
# Pigeonholing
# --------------------------------------------------------------------------

def _first_sequence(ens: PacketEnsemble):
    """Collections keyed by (w, n, X, m, l, Y) -> (plate indices, heavy Pi)."""
    amp = np.abs(ens.plate_amp)
    keep = amp >= HEIGHT_FLOOR * amp.max()
    wcls = np.where(keep, upper_class(np.where(keep, amp, 1.0)), 0.0)
    I_of = ens.I_of_J(ens.plate_J)
    Pi = ens.cell("Pi", I_of, ens.plate_center)
    Pi_key = [(int(I_of[k]), *map(int, Pi[k])) for k in range(len(amp))]
    out = {}
    for w in sorted(set(wcls[keep].tolist())):
        idx = np.flatnonzero(wcls == w)
        by_J_Pi = defaultdict(list)
        for k in idx:
            by_J_Pi[(int(ens.plate_J[k]), Pi_key[k])].append(k)
        # heavy J for each (n, X): the Pi of class n, X = their class
        heavy = defaultdict(dict)                    # (n, X) -> J -> {Pi: plates}
        perJ = defaultdict(lambda: defaultdict(dict))
        for (J, P), ks in by_J_Pi.items():
            perJ[J][float(upper_class(len(ks)))][P] = ks
        for J, classes in perJ.items():
            for n, pis in classes.items():
                heavy[(n, float(upper_class(len(pis))))][J] = pis
        for (n, X), Js in heavy.items():
            byI = defaultdict(list)
            for J in Js:
                byI[J // ens.s].append(J)
            byIm = defaultdict(list)
            for I, jl in byI.items():
                byIm[float(upper_class(len(jl)))].append(I)
            for m, Is in byIm.items():
                for I in Is:
                    contrib = Counter(P for J in byI[I] for P in Js[J])
                    byl = defaultdict(list)
                    for P, c in contrib.items():
                        byl[float(lower_class(c))].append(P)
                    for l, pis in byl.items():
                        Y = float(lower_class(len(pis)))
                        sel = set(pis)
                        ks = [k for J in byI[I] for P, kk in Js[J].items() if P in sel for k in kk]
                        key = (float(w), n, X, m, l, Y)
                        entry = out.setdefault(key, ([], set()))
                        entry[0].extend(ks)
                        entry[1].update(sel)
    return {k: (np.array(sorted(v[0]), int), v[1]) for k, v in out.items()}


def _second_sequence(ens: PacketEnsemble, heavy_Pi: set):
    """Collections keyed by (A, N, Z1, Z2) -> plank indices."""
    if len(ens.plank_I) == 0:
        return {}
    amp = np.abs(ens.plank_amp)
    keep = amp >= HEIGHT_FLOOR * amp.max()
    Pi = ens.cell("Pi", ens.plank_I, ens.plank_center)
    Sg = ens.cell("Sigma", ens.plank_I, ens.plank_center)
    ta = ens.cell("tau", ens.plank_I, ens.plank_center)
    key = lambda k, c: (int(ens.plank_I[k]), *map(int, c[k]))
    inside = np.array([keep[k] and key(k, Pi) in heavy_Pi for k in range(len(amp))], bool)
    if not inside.any():
        return {}
    Acls = upper_class(np.where(inside, amp, 1.0))
    out = {}
    for A in sorted(set(Acls[inside].tolist())):
        idx = np.flatnonzero(inside & (Acls == A))
        by_tau = defaultdict(list)
        for k in idx:
            by_tau[key(k, ta)].append(k)
        byN = defaultdict(list)
        for t, ks in by_tau.items():
            byN[float(upper_class(len(ks)))].append(t)
        for N, taus in byN.items():
            by_sig = defaultdict(list)
            for t in taus:
                k0 = by_tau[t][0]
                by_sig[key(k0, Sg)].append(t)
            byZ1 = defaultdict(list)
            for sg, tl in by_sig.items():
                byZ1[float(upper_class(len(tl)))].append(sg)
            for Z1, sigs in byZ1.items():
                by_pi = defaultdict(list)
                for sg in sigs:
                    k0 = by_tau[by_sig[sg][0]][0]
                    by_pi[key(k0, Pi)].append(sg)
                for P, sl in by_pi.items():
                    Z2 = float(upper_class(len(sl)))
                    ks = [k for sg in sl for t in by_sig[sg] for k in by_tau[t]]
                    out.setdefault((float(A), N, Z1, Z2), []).extend(ks)
    return {k: np.array(sorted(v), int) for k, v in out.items()}


def _mass(amps, idx, p=10):
    return float(np.sum(np.abs(amps[idx]) ** p))


def pigeonhole_analysis(ens: PacketEnsemble, R: Optional[float] = None) -> PacketEnsemble:
    """Populate ``ens.params`` with the dominant collection of both sequences.

    The dominant collection maximises the sum of |amplitude|^10 over its
    surviving packets (ties broken by the parameter tuple).  All collections
    are kept in ``params['collections']`` / ``params['plank_collections']``.
    """
    if R is not None and R != ens.R:
        raise DomainError("R does not match the ensemble")
    if len(ens.plate_J) == 0 and len(ens.plank_I) == 0:
        raise DomainError("empty ensemble")
    first = _first_sequence(ens) if len(ens.plate_J) else {}
    params: dict = {k: None for k in FIRST + SECOND}
    colls, pcolls = [], []
    if first:
        for key, (ks, pis) in first.items():
            w, n, X, m, l, Y = key
            if l * Y > m * X:
                raise AssertionError(f"lY <= mX violated for {key}")
            colls.append({"params": dict(zip(FIRST, key)), "plates": ks.tolist(),
                          "heavy_Pi": sorted(pis), "mass": _mass(ens.plate_amp, ks)})
        colls.sort(key=lambda c: (-c["mass"], tuple(c["params"].values())))
        params.update(colls[0]["params"])
        heavy_Pi = {tuple(p) for p in colls[0]["heavy_Pi"]}
        second = _second_sequence(ens, heavy_Pi)
        for key, ks in second.items():
            pcolls.append({"params": dict(zip(SECOND, key)), "planks": ks.tolist(),
                           "mass": _mass(ens.plank_amp, ks)})
        pcolls.sort(key=lambda c: (-c["mass"], tuple(c["params"].values())))
        if pcolls:
            params.update(pcolls[0]["params"])
    for k in ("n", "X", "m", "l", "Y", "N", "Z1", "Z2"):
        if params[k] is not None:
            params[k] = int(params[k])
    params["collections"] = colls
    params["plank_collections"] = pcolls
    ens.params = params
    return ens


def parameters(ens: PacketEnsemble) -> dict:
    """The dominant (w, n, X, m, l, Y, A, N, Z1, Z2) without the collections."""
    if ens.params is None:
        raise DomainError("ensemble has not been analysed")
    return {k: ens.params[k] for k in FIRST + SECOND}


# --------------------------------------------------------------------------
# Packet-height bound
# --------------------------------------------------------------------------

def prop84_bounds(R, w, n, l, N, Z1, Z2) -> dict:
    return {"l2-orthogonality": w * l**0.5 * R ** (1 / 12) / N**0.5,
            "l4-small-cap": w * l**0.25 * R ** (1 / 8) / (N * Z1) ** 0.25,
            "l2-l6": w * l**0.5 * n ** (1 / 6) * R ** (1 / 12) / (N * Z1 * Z2) ** (1 / 6)}


def prop84_check(ens: PacketEnsemble, R: Optional[float] = None, C: float = PROP84_C,
                 samples: int = 64, seed: int = 0, profile: Optional[Profile] = None) -> Report:
    """Measured plank heights against the three-branch bound.

    For each surviving plank P of interval I, A_P is the root mean square,
    over uniform points of P, of g_I = sum of the surviving plates with
    J inside I.  Rows hold A_P; the summary compares the median and the
    maximum of A_P with min(branches).
    """
    if ens.params is None or any(ens.params.get(k) is None for k in ("w", "n", "l", "N", "Z1", "Z2")):
        raise DomainError("ensemble lacks pigeonholing parameters")
    if R is not None and R != ens.R:
        raise DomainError("R does not match the ensemble")
    p = ens.params
    plates = np.asarray(p["collections"][0]["plates"], int)
    planks = np.asarray(p["plank_collections"][0]["planks"], int)
    bounds = prop84_bounds(ens.R, p["w"], p["n"], p["l"], p["N"], p["Z1"], p["Z2"])
    branch = min(bounds, key=bounds.get)
    bound = bounds[branch]
    rng = np.random.default_rng(seed)
    dims = ens.plank_dims()
    fields = {}
    rows = []
    for k in planks:
        I = int(ens.plank_I[k])
        if I not in fields:
            sel = plates[ens.I_of_J(ens.plate_J[plates]) == I]
            fields[I] = synthesize_from_packets(ens, profile, "plate", sel)
        F = ens.frames("plank", [I])[0]
        u = rng.uniform(-0.5, 0.5, (samples, 3)) * dims
        x = ens.plank_center[k] + u @ F
        AP = float(np.sqrt(np.mean(np.abs(fields[I](x)) ** 2)))
        rows.append({"plank": int(k), "I": I, "A_P": AP, "bound": bound, "ratio": AP / bound})
    A_med = float(np.median([r["A_P"] for r in rows])) if rows else 0.0
    A_max = max((r["A_P"] for r in rows), default=0.0)
    summary = {"R": ens.R, **{k: p[k] for k in FIRST + SECOND}, "bounds": bounds, "binding": branch,
               "A_median": A_med, "A_max": A_max, "ratio": A_med / bound, "max_ratio": A_max / bound,
               "C": C, "passes": A_med <= C * bound}
    return Report("prop84", rows, summary)
