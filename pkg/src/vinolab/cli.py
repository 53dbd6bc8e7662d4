"""Command line entry point: ``vinolab <module> --experiment ID [options]``."""

from __future__ import annotations

import json
import sys

import click

from . import harness
from .errors import ConfigError, DomainError, InfeasibleCaps, MergeError, UseMonteCarlo

DEFAULTS = {"geometry": "geometry-exactness", "partition": "partition-lemmas",
            "incidence": "tube-incidence", "decoupling": "decoupling-slope"}


def _ids(module):
    return sorted(e["id"] for e in harness.list_experiments() if e["module"] == module)


def _parse_sets(values):
    out = {}
    for v in values:
        if "=" not in v:
            raise click.BadParameter(f"expected key=value, got {v!r}", param_hint="--set")
        k, x = v.split("=", 1)
        out[k.strip()] = x.strip()
    return out


def _emit(report, fmt):
    if fmt == "csv":
        click.echo(harness.rows_to_csv(report["rows"]), nl=False)
    else:
        body = {k: report[k] for k in ("experiment", "summary", "acceptance", "passed", "files") if k in report}
        click.echo(json.dumps(body, indent=2))


def _execute(module, experiment, config, seed, out, trials, threads, fmt, sets):
    exp_id = experiment or DEFAULTS[module]
    if exp_id not in _ids(module):
        raise click.UsageError(f"experiment {exp_id!r} is not a {module} experiment "
                               f"(choose from {', '.join(_ids(module))})")
    overrides = _parse_sets(sets)
    overrides.update({"seed": seed, "trials": trials, "out": out, "threads": threads})
    try:
        cfg = harness.load_config(config, overrides, experiment=exp_id)
        report = harness.run(cfg)
    except ConfigError as err:
        click.echo(f"config error: {err}", err=True)
        sys.exit(2)
    except (DomainError, InfeasibleCaps, UseMonteCarlo) as err:
        click.echo(f"{type(err).__name__}: {err}", err=True)
        sys.exit(3)
    _emit(report, fmt)
    sys.exit(0 if report["passed"] else 1)


def _module_command(module):
    @click.option("--experiment", "-e", default=None, help=f"Experiment id ({', '.join(_ids(module))}).")
    @click.option("--config", "-c", type=click.Path(exists=True, dir_okay=False), default=None,
                  help="key = value config file.")
    @click.option("--seed", type=int, default=None, help="Override the config seed.")
    @click.option("--out", type=click.Path(file_okay=False), default=None,
                  help=f"Output directory (default ${harness.OUT_ENV} or ./{harness.DEFAULT_OUT}).")
    @click.option("--trials", type=int, default=None, help="Override the number of trials.")
    @click.option("--threads", type=int, default=None, help="Worker threads over trials.")
    @click.option("--format", "fmt", type=click.Choice(["json", "csv"]), default="json",
                  help="What to print on stdout.")
    @click.option("--set", "sets", multiple=True, metavar="KEY=VALUE", help="Override any config key.")
    def cmd(**kw):
        _execute(module, **kw)

    cmd.__doc__ = f"Run a {module} experiment; exit status 0 iff its acceptance checks pass."
    return click.command(module)(cmd)


@click.group()
@click.version_option(package_name="artifact")
def main():
    """Numerical checks for small cap decoupling on the twisted cubic."""


for _m in DEFAULTS:
    main.add_command(_module_command(_m))


@main.command("report")
@click.argument("paths", nargs=-1, type=click.Path(exists=True, dir_okay=False))
@click.option("--list", "list_", is_flag=True, help="Print the experiment catalogue.")
@click.option("--out", type=click.Path(file_okay=False), default=None, help="Where to write a merged report.")
@click.option("--format", "fmt", type=click.Choice(["json", "csv"]), default="json")
def report_cmd(paths, list_, out, fmt):
    """List experiments, or merge saved reports of one experiment."""
    if list_:
        for e in harness.list_experiments():
            click.echo(f"{e['id']:20s} {e['module']:11s} {e['statement']}")
        return
    try:
        rep = harness.merge_reports(paths, out=out, write=out is not None)
    except MergeError as err:
        click.echo(f"merge error: {err}", err=True)
        sys.exit(2)
    _emit(rep, fmt)
    sys.exit(0 if rep["passed"] else 1)


if __name__ == "__main__":
    main()
