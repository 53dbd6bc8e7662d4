"""Experiment registry: each experiment runs a verifier and turns its rows into
a summary and a list of named acceptance checks.

Summaries are computed from rows alone, so merged reports recompute them.
Trial-based experiments produce rows one trial at a time; a row never
depends on how many trials were requested.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import decoupling as dc
from . import packets as pk
from .geometry import frenet_frames, make_box, dual_box, Role, shear_map
from .incidence import (brute_force_richness, cube_richness, generate_family, l4_plank_sum,
                        origin_planks, triple_volume, triple_volume_model, verify_plank_incidence,
                        verify_plate_kakeya, verify_tube_incidence, verify_union_lemmas)
from .partition import verify_partition_lemmas
from .report import envelope_fit

# key -> (type, default); types: int, float, str, bool, "ints", "floats", "strs"
COMMON = {"seed": (int, 0), "trials": (int, 1), "first_trial": (int, 0)}


@dataclass
class Experiment:
    id: str
    module: str
    statement: str
    keys: dict
    run: Callable                       # (cfg, trial) -> rows, or (cfg) -> rows
    summarize: Callable                 # (rows, cfg) -> dict
    accept: Callable                    # (summary, cfg) -> {check: bool}
    per_trial: bool = True
    scale_keys: tuple = ()              # keys whose values must be dyadic
    inverse_scale_keys: tuple = ()      # keys whose reciprocals must be dyadic
    defaults: dict = field(init=False)

    def __post_init__(self):
        self.defaults = {k: v for k, (_, v) in {**COMMON, **self.keys}.items()}


REGISTRY: dict = {}


def register(exp: Experiment) -> Experiment:
    REGISTRY[exp.id] = exp
    return exp


def _rng(cfg, trial, *extra):
    return np.random.default_rng([int(cfg["seed"]), int(trial), *map(int, extra)])


def _max(rows, key, default=0.0):
    vals = [r[key] for r in rows if r.get(key) is not None]
    return max(vals) if vals else default


# --------------------------------------------------------------------------
# geometry
# --------------------------------------------------------------------------

def _geometry_trial(cfg, trial):
    rng = _rng(cfg, trial)
    n = cfg["cases"]
    c = rng.uniform(-1, 2, n)
    F = frenet_frames(c)
    ortho = np.abs(np.einsum("kij,klj->kil", F, F) - np.eye(3)).max(axis=(1, 2))
    roles = [Role.TUBE, Role.PLATE, Role.SPATIAL_PLANK, Role.FREQ_PLANK]
    dual_err, pair_err = np.empty(n), np.empty(n)
    for k in range(n):
        role = roles[k % len(roles)]
        scale = 2.0 ** rng.integers(6, 19) if role != Role.PLATE else 2.0 ** -rng.integers(2, 7)
        a = rng.uniform(0, 0.9)
        b = make_box(role, (a, a + 0.05), scale, form="slab" if k % 2 else "rect")
        d = dual_box(b)
        dual_err[k] = np.abs(b.dims * d.dims - 1).max()
        S = shear_map(2.0 ** -rng.integers(0, 10), rng.uniform(0, 1))
        w, x = rng.normal(size=3), rng.normal(size=3)
        lhs = float(S.apply(w) @ S.apply_dual(x))
        pair_err[k] = abs(lhs - w @ x) / max(1.0, np.abs(w).sum() * np.abs(x).sum())
    return [{"trial": trial, "seed": cfg["seed"], "check": name, "cases": n,
             "max_error": float(v.max()), "tolerance": tol}
            for name, v, tol in (("frenet-orthonormality", ortho, 1e-12),
                                 ("dual-dimension-product", dual_err, 1e-12),
                                 ("shear-duality-pairing", pair_err, 1e-10))]


register(Experiment(
    "geometry-exactness", "geometry", "Frenet frames, dual boxes and shear maps are exact",
    {"cases": (int, 1000)}, _geometry_trial,
    lambda rows, cfg: {r["check"]: max(x["max_error"] for x in rows if x["check"] == r["check"])
                       for r in rows},
    lambda s, cfg: {"frenet-orthonormality": s["frenet-orthonormality"] <= 1e-12,
                    "dual-dimension-product": s["dual-dimension-product"] <= 1e-12,
                    "shear-duality-pairing": s["shear-duality-pairing"] <= 1e-10}))


# --------------------------------------------------------------------------
# partition
# --------------------------------------------------------------------------

def _partition_run(cfg):
    rows = []
    for R in cfg["R"]:
        rep = verify_partition_lemmas(float(R), cfg["samples"], cfg["seed"]).to_dict()
        rows.append({"R": float(R), "samples": rep["samples"], "seed": rep["seed"],
                     "violations": rep["violations"], "max_multiplicity": rep["max_multiplicity"],
                     "needed_factor": rep["needed_factor"], "coverage": rep["coverage"]})
    return rows


def _partition_summary(rows, cfg):
    mult = [r["max_multiplicity"] for r in rows]
    return {"violations": int(sum(r["violations"] for r in rows)),
            "max_needed_factor": _max(rows, "needed_factor"),
            "multiplicity_by_R": {repr(r["R"]): r["max_multiplicity"] for r in rows},
            "multiplicity_spread": int(max(mult) - min(mult)) if mult else 0}


register(Experiment(
    "partition-lemmas", "partition", "layer partition of the curve neighbourhood and bounded overlap",
    {"R": ("floats", [512.0]), "samples": (int, 100_000), "multiplicity_tolerance": (int, 1)},
    _partition_run, _partition_summary,
    lambda s, cfg: {"no-violations": s["violations"] == 0,
                    "multiplicity-stable": s["multiplicity_spread"] <= cfg["multiplicity_tolerance"]},
    per_trial=False, scale_keys=("R",)))


# --------------------------------------------------------------------------
# incidence
# --------------------------------------------------------------------------

def _incidence_summary(rows, cfg):
    out = {}
    for th in sorted({r["theorem"] for r in rows}):
        rr = [r for r in rows if r["theorem"] == th]
        mx = max(r["ratio"] for r in rr)
        C, g = envelope_fit(mx, rr[0]["envelope"] ** (1 / 6))
        out[th] = {"max_ratio": mx, "C": C, "gamma": g, "rows": len(rr),
                   "all_within_envelope": all(r["within_envelope"] for r in rr)}
    return out


def _caps(cfg, *names):
    return {k: cfg[k] for k in names}


register(Experiment(
    "tube-incidence", "incidence", "rich cubes of spaced tube families",
    {"R": (float, 4096.0), "N": (float, 4.0), "N1": (float, 4.0), "density": (float, 0.1),
     "mode": (str, "uniform-random")},
    lambda cfg, t: verify_tube_incidence(cfg["R"], _caps(cfg, "N", "N1"), trials=1, seed=cfg["seed"],
                                         density=cfg["density"], mode=cfg["mode"], first_trial=t).rows,
    _incidence_summary,
    lambda s, cfg: {f"{th}-within-envelope": v["all_within_envelope"] for th, v in s.items()},
    scale_keys=("R",)))


def _plate_summary(rows, cfg):
    s = _incidence_summary(rows, cfg)
    s["l4_beats_l2_above_2x_crossover"] = all(r["l4_beats_l2"] for r in rows if r["above_crossover"])
    return s


register(Experiment(
    "plate-kakeya", "incidence", "rich cubes of spaced plate families, L2 and L4 bounds",
    {"delta": (float, 1 / 16), "N": (int, 2), "density": (float, 0.01), "mode": (str, "both"),
     "family_mode": (str, "uniform-random")},
    lambda cfg, t: verify_plate_kakeya(cfg["delta"], cfg["N"], trials=1, mode=cfg["mode"], seed=cfg["seed"],
                                       density=cfg["density"], family_mode=cfg["family_mode"],
                                       first_trial=t).rows,
    _plate_summary,
    lambda s, cfg: {**{f"{th}-within-envelope": v["all_within_envelope"]
                       for th, v in s.items() if isinstance(v, dict)},
                    "l4-beats-l2": s["l4_beats_l2_above_2x_crossover"]},
    inverse_scale_keys=("delta",)))


def _plank_summary(rows, cfg):
    s = _incidence_summary(rows, cfg)
    mono = True
    for t in sorted({r["trial"] for r in rows}):
        rr = sorted((r for r in rows if r["trial"] == t), key=lambda r: r["r"])
        mono &= all(a["count"] >= b["count"] for a, b in zip(rr, rr[1:]))
    s["monotone"] = bool(mono)
    return s


register(Experiment(
    "plank-incidence", "incidence", "rich cubes of structured plank families",
    {"R": (float, 4096.0), "N": (int, 2), "Z1": (int, 2), "density": (float, 0.01),
     "mode": (str, "uniform-random")},
    lambda cfg, t: verify_plank_incidence(cfg["R"], cfg["N"], cfg["Z1"], trials=1, seed=cfg["seed"],
                                          density=cfg["density"], mode=cfg["mode"], first_trial=t).rows,
    _plank_summary,
    lambda s, cfg: {"plank-spacing-within-envelope": s["plank-spacing"]["all_within_envelope"],
                    "monotone": s["monotone"]},
    scale_keys=("R",)))


def _union_run(cfg):
    return [dict(r, R=float(R)) for R in cfg["R"] for r in verify_union_lemmas(float(R)).rows]


def _union_summary(rows, cfg):
    slack = [r["slack"] for r in rows if r["slack"] is not None]
    shape = [r for r in rows if r["slack"] is None]
    return {"worst_slack": max(slack), "band_ok": all(r["band_ok"] for r in shape),
            "rectangular_at_0": all(r["rectangular"] for r in shape if r["J_left"] == 0),
            "rectangular_all": all(r["rectangular"] for r in shape),
            "worst_outer_factor": max(r["outer_factor"] for r in shape)}


register(Experiment(
    "union-lemmas", "incidence", "unions of thin boxes lie in fat boxes; intersections are boxes",
    {"R": ("floats", [4096.0]), "max_slack": (float, 10.0)},
    _union_run, _union_summary,
    lambda s, cfg: {"slack": s["worst_slack"] <= cfg["max_slack"], "volume-band": s["band_ok"],
                    "rectangular-at-origin": s["rectangular_at_0"]},
    per_trial=False, scale_keys=("R",)))


def _triple_run(cfg):
    rows = []
    for delta in cfg["delta"]:
        ds = [2.0**-k for k in range(0, int(round(-np.log2(delta))) + 1)]
        for d2 in ds:
            for d3 in ds:
                if d3 > d2 or d2 + delta > 1 + 1e-12:
                    continue
                v = triple_volume(delta, d2, d3)
                m = triple_volume_model(delta, d2, d3)
                rows.append({"delta": delta, "D2": d2, "D3": d3, "volume": v, "model": m, "ratio": v / m})
    return rows


register(Experiment(
    "triple-volume", "incidence", "volume of three-plank intersections",
    {"delta": ("floats", [1 / 8, 1 / 16, 1 / 32]), "band": (float, 64.0)},
    _triple_run,
    lambda rows, cfg: {"min_ratio": min(r["ratio"] for r in rows), "max_ratio": max(r["ratio"] for r in rows),
                       "cases": len(rows)},
    lambda s, cfg: {"band": 1 / cfg["band"] <= s["min_ratio"] and s["max_ratio"] <= cfg["band"]},
    per_trial=False, inverse_scale_keys=("delta",)))


def _l4_run(cfg):
    rows = []
    for delta in cfg["delta"]:
        res = l4_plank_sum(origin_planks(delta), method=cfg["method"], samples=cfg["samples"],
                           seed=cfg["seed"], delta=delta)
        rows.append({"delta": delta, "method": res.method, "l4": res.l4, "l1": res.l1,
                     "stderr": res.stderr, "n_planks": res.n_boxes, "ratio": res.ratio,
                     "normalized": res.ratio / np.log(1 / delta) ** 2, "seed": cfg["seed"]})
    return rows


def _l4_summary(rows, cfg):
    rr = sorted(rows, key=lambda r: -r["delta"])
    C0 = rr[0]["normalized"]
    return {"C0": C0, "max_normalized": max(r["normalized"] for r in rr),
            "worst_over_C0": max(r["normalized"] for r in rr) / C0,
            "finite": all(np.isfinite(r["ratio"]) for r in rr)}


register(Experiment(
    "l4-planks", "incidence", "L4 norm of a full plank family against log^2",
    {"delta": ("floats", [1 / 8]), "method": (str, "exact"), "samples": (int, 200_000),
     "max_growth": (float, 2.0)},
    _l4_run, _l4_summary,
    lambda s, cfg: {"finite": s["finite"], "growth": s["worst_over_C0"] <= cfg["max_growth"]},
    per_trial=False, inverse_scale_keys=("delta",)))


def _oracle_trial(cfg, t):
    rng = _rng(cfg, t)
    role = [Role.TUBE, Role.PLATE, Role.SPATIAL_PLANK][t % 3]
    if role == Role.PLATE:
        fam = generate_family(role, cfg["delta"], {"N": 4}, 0.05, seed=cfg["seed"], rng=rng)
    elif role == Role.TUBE:
        fam = generate_family(role, cfg["R"], {"N": 4, "N1": 4}, 0.2, seed=cfg["seed"], rng=rng)
    else:
        fam = generate_family(role, cfg["R"], {"M": 16, "N": 16}, 0.01, seed=cfg["seed"], rng=rng)
    rc = cube_richness(fam)
    brute = brute_force_richness(fam, rc.cube_side, rc.ambient)
    fast = np.zeros_like(brute)
    if len(rc.cells):
        np.add.at(fast.reshape(-1), rc.cells, rc.richness)
    return [{"trial": t, "seed": cfg["seed"], "role": role.value, "boxes": len(fam),
             "max_richness": int(brute.max()) if brute.size else 0,
             "mismatched_cubes": int(np.count_nonzero(fast != brute))}]


register(Experiment(
    "counting-oracle", "incidence", "fast rich-cube count equals a dense overlap scan",
    {"R": (float, 64.0), "delta": (float, 0.25)},
    _oracle_trial,
    lambda rows, cfg: {"families": len(rows), "mismatched_cubes": sum(r["mismatched_cubes"] for r in rows)},
    lambda s, cfg: {"exact": s["mismatched_cubes"] == 0},
    scale_keys=("R",), inverse_scale_keys=("delta",)))


# --------------------------------------------------------------------------
# decoupling
# --------------------------------------------------------------------------

def _slope_trial(cfg, t):
    k = [int(round(np.log2(R))) for R in cfg["R"]]
    return dc.decoupling_slope(k, cfg["p"], cfg["coeffs"], cfg["alpha"], trials=1,
                               samples=cfg["samples"], seed=cfg["seed"], first_trial=t).rows


def _slope_accept(s, cfg):
    ps = sorted(cfg["p"])
    out = {}
    lo = s[f"p={ps[0]:g}"]["median_slope"]
    if cfg["max_slope"] >= 0:
        out[f"slope-p{ps[0]:g}"] = lo <= cfg["max_slope"]
    if cfg["min_gap"] >= 0 and len(ps) > 1:
        out[f"gap-p{ps[-1]:g}"] = s[f"p={ps[-1]:g}"]["median_slope"] - lo >= cfg["min_gap"]
    return out


register(Experiment(
    "decoupling-slope", "decoupling", "growth of the small cap decoupling constant with R",
    {"R": ("floats", [2.0**k for k in range(8, 17)]), "p": ("floats", [10.0, 14.0]),
     "alpha": (float, 0.5), "coeffs": (str, "random"), "samples": (int, 1_000_000),
     "max_slope": (float, 0.05), "min_gap": (float, -1.0)},
    _slope_trial, lambda rows, cfg: dc.slope_summary(rows), _slope_accept, scale_keys=("R",)))


def _trilinear_trial(cfg, t):
    rng = _rng(cfg, t)
    s = dc.make_exp_sum(cfg["R"], cfg["alpha"], "random", rng=rng)
    s = s.with_coeffs(s.coeffs * rng.uniform(0.5, 1.5, s.K))
    est = dc.trilinear_ratio(s, cfg["p"], samples=cfg["samples"], rng=rng)
    lin = dc.decoupling_ratio(s, cfg["p"], samples=cfg["samples"], rng=rng)
    bmax = max(est.extra["block_ratios"])
    return [{"trial": t, "seed": cfg["seed"], "R": cfg["R"], "p": cfg["p"], "trilinear": est.ratio,
             "stderr": est.stderr, "linear": lin.ratio, "max_block": bmax,
             "holder_ok": bool(est.ratio <= bmax * (1 + 1e-12))}]


register(Experiment(
    "trilinear", "decoupling", "trilinear against linear decoupling ratios",
    {"R": (float, 4096.0), "alpha": (float, 0.5), "p": (float, 10.0), "samples": (int, 20_000),
     "max_excess": (float, 4.0)},
    _trilinear_trial,
    lambda rows, cfg: {"holder_ok": all(r["holder_ok"] for r in rows),
                       "max_tri_over_linear": max(r["trilinear"] / r["linear"] for r in rows)},
    lambda s, cfg: {"holder": s["holder_ok"], "below-linear": s["max_tri_over_linear"] <= cfg["max_excess"]},
    scale_keys=("R",)))


register(Experiment(
    "flat-decoupling", "decoupling", "flat decoupling for block partitions",
    {"L": (int, 16), "p": (float, 10.0), "m": (int, 8), "max_ratio": (float, 4.0)},
    lambda cfg, t: dc.flat_decoupling_check(cfg["L"], cfg["p"], trials=1, seed=cfg["seed"], m=cfg["m"],
                                            first_trial=t).rows,
    lambda rows, cfg: {"max_ratio": max(r["ratio"] for r in rows)},
    lambda s, cfg: {"bounded": s["max_ratio"] <= cfg["max_ratio"]}))


def _exponent_run(cfg):
    rows = [{"quantity": "sigma_pd", "p": p, "d": d, "value": dc.sigma_pd(p, d)}
            for d in cfg["d"] for p in cfg["p"]]
    rows += [{"quantity": "critical_p_bound", "p": None, "d": d, "value": dc.critical_p_bound(d)}
             for d in cfg["d"]]
    return rows


def _exponent_summary(rows, cfg):
    pick = lambda q, d, p=None: next((r["value"] for r in rows if r["quantity"] == q and r["d"] == d
                                      and (p is None or r["p"] == p)), None)
    return {"sigma_10_3": pick("sigma_pd", 3, 10.0), "critical_7": pick("critical_p_bound", 7)}


register(Experiment(
    "exponents", "decoupling", "sharpness exponents and critical exponent bound",
    {"p": ("floats", [4.0, 6.0, 10.0, 14.0]), "d": ("ints", [2, 3, 4, 5, 6, 7, 8])},
    _exponent_run, _exponent_summary,
    lambda s, cfg: {"sigma-10-3": s["sigma_10_3"] is None or abs(s["sigma_10_3"] - 0.4) <= 1e-12,
                    "critical-7": s["critical_7"] is None or s["critical_7"] == 22},
    per_trial=False))


FIXTURES = (
    dict(n=4, X=2, m=2, Y=2), dict(n=4, X=2, m=2, Y=4), dict(n=1, X=1, m=1, Y=1),
    dict(n=2, X=4, m=4, Y=8, N=2, Z1=2, Z2=4), dict(n=4, X=1, m=4, Y=1, N=4, Z1=1, Z2=1),
    dict(n=4, X=4, m=4, Y=4, N=4, Z1=4, Z2=16), dict(n=2, X=2, m=1, Y=2, N=1, Z1=4, Z2=8),
    dict(n=1, X=8, m=2, Y=16, N=2, Z1=1, Z2=2), dict(n=4, X=2, m=4, Y=8, N=4, Z1=2, Z2=2, w=0.5, A=0.25),
    dict(n=2, X=1, m=2, Y=2, N=2, Z1=2, Z2=1),
)


def _pigeon_trial(cfg, t):
    rows = []
    if t < len(FIXTURES):
        ens = pk.build_fixture(cfg["R"], seed=int(cfg["seed"]) + t, **FIXTURES[t])
        kind = "fixture"
    else:
        ens = pk.random_ensemble(cfg["R"], cfg["plates"], cfg["planks"], rng=_rng(cfg, t))
        kind = "random"
    pk.pigeonhole_analysis(ens)
    got = pk.parameters(ens)
    lY_ok = all(c["params"]["l"] * c["params"]["Y"] <= c["params"]["m"] * c["params"]["X"]
                for c in ens.params["collections"])
    row = {"trial": t, "seed": cfg["seed"], "kind": kind, **{k: got[k] for k in pk.FIRST + pk.SECOND},
           "lY_le_mX": lY_ok, "planted_match": None, "ratio": None, "binding": None}
    if kind == "fixture":
        row["planted_match"] = all(got[k] == ens.planted[k] for k in ens.planted)
    if got["N"] is not None:
        rep = pk.prop84_check(ens, seed=int(cfg["seed"]) + t)
        row.update(ratio=rep.summary["ratio"], max_ratio=rep.summary["max_ratio"],
                   binding=rep.summary["binding"])
    rows.append(row)
    return rows


def _pigeon_summary(rows, cfg):
    fx = [r for r in rows if r["kind"] == "fixture"]
    rnd = [r for r in rows if r["kind"] == "random"]
    C = max((r["ratio"] for r in fx if r["ratio"] is not None), default=0.0)
    return {"fixtures": len(fx), "fixtures_exact": all(r["planted_match"] for r in fx),
            "random": len(rnd), "lY_le_mX": all(r["lY_le_mX"] for r in rows),
            "fitted_C": C,
            "random_within_C": all(r["ratio"] is None or r["ratio"] <= max(C, 1e-300) for r in rnd),
            "binding": sorted({r["binding"] for r in rows if r["binding"]})}


register(Experiment(
    "pigeonholing", "decoupling", "two pigeonholing sequences and the plank height bound",
    {"R": (float, 4096.0), "plates": (int, 200), "planks": (int, 200), "max_C": (float, pk.PROP84_C)},
    _pigeon_trial, _pigeon_summary,
    lambda s, cfg: {"fixtures-exact": s["fixtures_exact"], "lY-le-mX": s["lY_le_mX"],
                    "fitted-C": s["fitted_C"] <= cfg["max_C"], "random-within-C": s["random_within_C"]},
    scale_keys=("R",)))
