"""Configuration, execution and persistence of experiments.

Config files are flat ``key = value`` text (``#`` starts a comment); list
values are comma separated.  Values are typed by the experiment's key table
and checked with a JSON schema, so errors name the failing field.
"""

from __future__ import annotations

import csv
import io
import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from importlib import resources
from pathlib import Path
from typing import Optional

import jsonschema
import numpy as np

from .errors import ConfigError, MergeError
from .experiments import COMMON, REGISTRY
from .report import clean

OUT_ENV = "VINOLAB_OUT"
DEFAULT_OUT = "vinolab-out"
RESERVED = ("experiment", "out", "threads")

_JSON_TYPES = {int: {"type": "integer"}, float: {"type": "number"}, str: {"type": "string"},
               bool: {"type": "boolean"},
               "ints": {"type": "array", "items": {"type": "integer"}, "minItems": 1},
               "floats": {"type": "array", "items": {"type": "number"}, "minItems": 1},
               "strs": {"type": "array", "items": {"type": "string"}, "minItems": 1}}


def list_experiments() -> list:
    """Catalogue of experiments: id, module, statement checked and config keys."""
    return [{"id": e.id, "module": e.module, "statement": e.statement,
             "per_trial": e.per_trial, "keys": dict(e.defaults)} for e in REGISTRY.values()]


def get_experiment(exp_id: str):
    if exp_id not in REGISTRY:
        raise ConfigError(f"experiment: unknown id {exp_id!r} (known: {', '.join(sorted(REGISTRY))})")
    return REGISTRY[exp_id]


def config_schema(exp_id: str) -> dict:
    exp = get_experiment(exp_id)
    props = {k: _JSON_TYPES[t] for k, (t, _) in {**COMMON, **exp.keys}.items()}
    props["seed"] = {"type": "integer", "minimum": 0}
    props["trials"] = {"type": "integer", "minimum": 1}
    props["first_trial"] = {"type": "integer", "minimum": 0}
    return {"type": "object", "properties": props, "additionalProperties": False}


def _coerce(key, typ, raw):
    if not isinstance(raw, str):
        if typ in ("ints", "floats", "strs") and not isinstance(raw, (list, tuple)):
            raw = [raw]
        if typ == "floats":
            return [float(v) if isinstance(v, (int, float)) and not isinstance(v, bool) else v for v in raw]
        if typ is float and isinstance(raw, int) and not isinstance(raw, bool):
            return float(raw)
        return list(raw) if isinstance(raw, tuple) else raw
    s = raw.strip()
    try:
        if typ is bool:
            if s.lower() in ("1", "true", "yes", "on"):
                return True
            if s.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(s)
        if typ is int:
            return int(s)
        if typ is float:
            return _number(s)
        if typ is str:
            return s
        parts = [p.strip() for p in s.split(",") if p.strip()]
        conv = {"ints": int, "floats": _number, "strs": str}[typ]
        return [conv(p) for p in parts]
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {getattr(typ, '__name__', typ)}") from None


def _number(s: str) -> float:
    if "/" in s:
        a, b = s.split("/", 1)
        return float(a) / float(b)
    if "^" in s:
        a, b = s.split("^", 1)
        return float(a) ** float(b)
    return float(s)


def parse_config_text(text: str) -> dict:
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected key = value")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def load_config(path=None, overrides: Optional[dict] = None, experiment: Optional[str] = None) -> dict:
    """Typed, validated config: file keys, then overrides, then defaults."""
    raw = parse_config_text(Path(path).read_text()) if path else {}
    raw.update({k: v for k, v in (overrides or {}).items() if v is not None})
    exp_id = raw.pop("experiment", None) if experiment is None else experiment
    raw.pop("experiment", None)
    if not exp_id:
        raise ConfigError("experiment: missing")
    exp = get_experiment(exp_id)
    meta = {k: raw.pop(k) for k in RESERVED if k in raw}
    types = {k: t for k, (t, _) in {**COMMON, **exp.keys}.items()}
    cfg = dict(exp.defaults)
    for k, v in raw.items():
        if k not in types:
            raise ConfigError(f"{k}: unknown key for experiment {exp_id}")
        cfg[k] = _coerce(k, types[k], v)
    try:
        jsonschema.validate(cfg, config_schema(exp_id))
    except jsonschema.ValidationError as err:
        field = ".".join(str(p) for p in err.absolute_path) or "config"
        raise ConfigError(f"{field}: {err.message}") from None
    _check_dyadic(exp, cfg)
    cfg["experiment"] = exp_id
    if "threads" in meta:
        cfg["threads"] = int(_coerce("threads", int, meta["threads"]))
    if "out" in meta:
        cfg["out"] = str(meta["out"])
    return cfg


def _is_dyadic(v: float) -> bool:
    if not v > 0:
        return False
    k = np.log2(v)
    return abs(k - round(k)) < 1e-12


def _check_dyadic(exp, cfg):
    for keys, inv in ((exp.scale_keys, False), (exp.inverse_scale_keys, True)):
        for k in keys:
            vals = cfg[k] if isinstance(cfg[k], list) else [cfg[k]]
            for v in vals:
                if not _is_dyadic(v) or (inv and not v < 1) or (not inv and not v >= 1):
                    raise ConfigError(f"{k}: {v!r} is not a dyadic scale")


# --------------------------------------------------------------------------
# Running
# --------------------------------------------------------------------------

def _params(cfg: dict) -> dict:
    return {k: v for k, v in cfg.items() if k not in ("out", "threads")}


def run(cfg: dict, write: bool = True) -> dict:
    """Execute an experiment; returns the report and (optionally) writes JSON and CSV."""
    if "experiment" not in cfg:
        raise ConfigError("experiment: missing")
    exp = get_experiment(cfg["experiment"])
    p = _params(cfg)
    start = time.perf_counter()
    if exp.per_trial:
        trials = range(p["first_trial"], p["first_trial"] + p["trials"])
        threads = max(1, int(cfg.get("threads", 1)))
        if threads > 1:
            with ThreadPoolExecutor(threads) as pool:
                parts = list(pool.map(lambda t: exp.run(p, t), trials))
        else:
            parts = [exp.run(p, t) for t in trials]
        rows = [r for part in parts for r in part]          # fixed trial order
    else:
        rows = exp.run(p)
    rows = clean(rows)
    report = _assemble(exp, p, rows)
    report["wall_clock_s"] = round(time.perf_counter() - start, 3)
    if write:
        report["files"] = write_report(report, cfg.get("out"))
    return report


def _assemble(exp, cfg, rows) -> dict:
    summary = clean(exp.summarize(rows, cfg))
    checks = {k: bool(v) for k, v in exp.accept(summary, cfg).items()}
    return {"experiment": exp.id, "config": clean(cfg), "rows": rows, "summary": summary,
            "acceptance": checks, "passed": all(checks.values())}


def output_dir(out=None) -> Path:
    return Path(out or os.environ.get(OUT_ENV) or DEFAULT_OUT)


def report_stem(report: dict) -> str:
    c = report["config"]
    stem = f"{report['experiment']}-seed{c['seed']}"
    if c.get("first_trial", 0) or c.get("trials", 1) != 1:
        stem += f"-t{c.get('first_trial', 0)}-{c.get('trials', 1)}"
    return stem


def write_report(report: dict, out=None) -> dict:
    d = output_dir(out)
    d.mkdir(parents=True, exist_ok=True)
    stem = report_stem(report)
    jp, cp = d / f"{stem}.json", d / f"{stem}.csv"
    body = {k: v for k, v in report.items() if k != "files"}
    validate_report(body)
    jp.write_text(json.dumps(body, indent=2) + "\n")
    cp.write_text(rows_to_csv(report["rows"]), newline="")
    return {"json": str(jp), "csv": str(cp)}


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (dict, list)):
        return json.dumps(v, sort_keys=True)
    return str(v)


def rows_to_csv(rows: list) -> str:
    """CSV with columns in first-appearance order; floats written with repr."""
    cols = []
    for r in rows:
        for k in r:
            if k not in cols:
                cols.append(k)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for r in rows:
        w.writerow([_cell(r.get(k)) for k in cols])
    return buf.getvalue()


def report_schema() -> dict:
    return json.loads(resources.files("vinolab").joinpath("schemas/report.schema.json").read_text())


def validate_report(report: dict) -> None:
    jsonschema.validate(report, report_schema())


def load_report(path) -> dict:
    rep = json.loads(Path(path).read_text())
    validate_report(rep)
    return rep


def merge_reports(paths, out=None, write: bool = False) -> dict:
    """Concatenate rows of reports of one experiment and recompute the summary."""
    paths = list(paths)
    if not paths:
        raise MergeError("nothing to merge")
    reps = [load_report(p) for p in paths]
    ids = {r["experiment"] for r in reps}
    if len(ids) != 1:
        raise MergeError(f"mixed experiments: {sorted(ids)}")
    exp = get_experiment(ids.pop())
    cfg = dict(reps[0]["config"])
    if exp.per_trial:
        firsts = [r["config"]["first_trial"] for r in reps]
        cfg["first_trial"] = min(firsts)
        cfg["trials"] = sum(r["config"]["trials"] for r in reps)
        reps = [r for _, r in sorted(zip(firsts, reps), key=lambda x: x[0])]
    rows = [row for r in reps for row in r["rows"]]
    report = _assemble(exp, cfg, rows)
    report["wall_clock_s"] = round(sum(r.get("wall_clock_s", 0.0) for r in reps), 3)
    if write:
        report["files"] = write_report(report, out)
    return report
