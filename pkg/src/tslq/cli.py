"""Command-line runner: ``tslq run|verify|sweep --config PATH``.

Exit status is 0 on success, 1 on a runtime failure (including failed
assertion-grade checks) and 2 on an invalid configuration.
"""

from __future__ import annotations

import argparse
import functools
import hashlib
import io
import json
import logging
import platform
import sys
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .analysis import fit_regret_exponent, theory_bound_report
from .config import Scenario, build_scenario, load_raw, parse_checks
from .env import replicate, write_summary_csv
from .errors import AllRunsFailed, ConfigInvalid, TslqError
from .rls import ConfidenceParams
from .verify import run_checks

log = logging.getLogger("tslq")

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2


class _Outputs:
    """Collects output files so the manifest can record their digests."""

    def __init__(self, root: Path):
        self.root = root
        self.files: dict[str, str] = {}
        root.mkdir(parents=True, exist_ok=True)

    def write(self, name: str, text: str) -> None:
        data = text.encode()
        (self.root / name).write_bytes(data)
        self.files[name] = hashlib.sha256(data).hexdigest()

    def manifest(self, command: str, sc: Scenario) -> None:
        body = {
            "command": command,
            "config": sc.raw,
            "config_sha256": sc.config_hash(),
            "seed": sc.run["seed"],
            "versions": {"tslq": __version__, "python": platform.python_version(),
                         "numpy": np.__version__, "scipy": scipy.__version__},
            "outputs": dict(sorted(self.files.items())),
        }
        (self.root / "manifest.json").write_text(json.dumps(body, indent=2, sort_keys=True) + "\n")


def _summary_text(summaries) -> str:
    buf = io.StringIO()
    write_summary_csv(summaries, buf)
    return buf.getvalue()


def _rollout_kw(sc: Scenario) -> dict:
    return {"lam": sc.lam, "blowup": sc.raw["guards"]["blowup"]}


def cmd_run(sc: Scenario, out: _Outputs) -> int:
    run = sc.run
    T, reps = run["T"], run["replications"]
    tau = sc.tau(T)
    log.info("run: %s, T=%d, tau=%d, %d replication(s)", sc.factory.algorithm, T, tau, reps)
    summaries, traces = replicate(
        sc.env, functools.partial(sc.factory, T, tau), T, reps, base_seed=run["seed"],
        jobs=run["jobs"], keep_traces=True, **_rollout_kw(sc),
    )
    if run["save_traces"]:
        for s, tr in zip(summaries, traces):
            if tr is not None:
                out.write(f"trace_{s.index}.csv", tr.to_csv())
    out.write("summary.csv", _summary_text(summaries))

    n, d = sc.theta_star.n, sc.theta_star.d
    conf = ConfidenceParams(sc.delta, sc.admissible.S, n, d, T, sc.raw["learner"]["L"])
    ok = [s for s in summaries if s.ok]
    lines = [f"algorithm {sc.factory.algorithm}  T={T}  tau={tau}  J*={sc.env.J_star!r}",
             f"replications ok {len(ok)}/{len(summaries)}"]
    if ok:
        lines.append(f"mean regret {float(np.mean([s.regret for s in ok]))!r}")
    for s, tr in zip(summaries, traces):
        if tr is None:
            lines.append(f"replication {s.index} (seed {s.seed}) failed: {s.error}")
            continue
        rep = theory_bound_report(tr, sc.theta_star, sc.cost, conf, sc.admissible, tau)
        lines.append(f"replication {s.index} (seed {s.seed}) regret {s.regret!r} "
                     f"K={s.K} K_det={s.K_det} K_len={s.K_len}")
        lines.append(rep.to_text())
    out.write("report.txt", "\n".join(lines) + "\n")
    out.manifest("run", sc)
    return EXIT_OK if len(ok) == len(summaries) else EXIT_RUNTIME


def cmd_sweep(sc: Scenario, out: _Outputs) -> int:
    run = sc.run
    horizons = run["horizons"]
    if horizons is None:
        raise ConfigInvalid("sweep needs run.horizons")
    log.info("sweep: %s over %s, %d replications", sc.factory.algorithm, horizons, run["replications"])
    try:
        fit, per_T = fit_regret_exponent(
            sc.env, sc.factory, horizons, tau_rule=sc.tau, replications=run["replications"],
            base_seed=run["seed"], jobs=run["jobs"], return_summaries=True,
        )
    except AllRunsFailed as exc:
        log.error("%s", exc)
        return EXIT_RUNTIME
    buf = io.StringIO()
    fit.to_csv(buf)
    out.write("scaling.csv", buf.getvalue())
    buf = io.StringIO()
    buf.write("T,")
    header = True
    for T, summaries in zip(horizons, per_T):
        text = _summary_text(summaries).splitlines()
        if header:
            buf.write(text[0] + "\n")
            header = False
        for row in text[1:]:
            buf.write(f"{T},{row}\n")
    out.write("summary.csv", buf.getvalue())
    lines = [f"algorithm {sc.factory.algorithm}  horizons {list(horizons)}  replications {run['replications']}",
             f"slope {fit.slope!r}  95% CI [{fit.slope_ci[0]!r}, {fit.slope_ci[1]!r}]  intercept {fit.intercept!r}",
             "T  tau  ok  mean_regret  ci_lo  ci_hi  mean/T^(2/3)"]
    for T, m, lo, hi, k, r in zip(horizons, fit.means, fit.ci_lo, fit.ci_hi, fit.n_ok, fit.ratio_T23):
        lines.append(f"{T} {sc.tau(T)} {k} {m!r} {lo!r} {hi!r} {r!r}")
    out.write("report.txt", "\n".join(lines) + "\n")
    out.manifest("sweep", sc)
    failed = sum(not s.ok for group in per_T for s in group)
    return EXIT_OK if failed == 0 else EXIT_RUNTIME


def cmd_verify(sc: Scenario, out: _Outputs) -> int:
    groups = sc.verify["checks"]
    log.info("verify: %s", ", ".join(groups))
    results = run_checks(sc, groups, seed=sc.run["seed"], log=log.info)
    lines = [r.line() for r in results]
    failed = [r for r in results if r.assertion and not r.passed]
    lines.append(f"{len(results) - len(failed)}/{len(results)} checks passed"
                 + (f"; failed: {', '.join(f'{r.group}/{r.name}' for r in failed)}" if failed else ""))
    out.write("report.txt", "\n".join(lines) + "\n")
    out.manifest("verify", sc)
    return EXIT_RUNTIME if failed else EXIT_OK


COMMANDS = {"run": cmd_run, "verify": cmd_verify, "sweep": cmd_sweep}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tslq", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_ in (("run", "single rollout or replication batch"),
                        ("verify", "numerical verification suite"),
                        ("sweep", "regret scaling over run.horizons")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", required=True, help="YAML config or a manifest.json from a previous run")
        p.add_argument("--seed", type=int, help="override run.seed")
        p.add_argument("--out", help="override run.out")
        p.add_argument("--jobs", type=int, help="override run.jobs")
        p.add_argument("--checks", help="comma-separated verify groups (verify only)")
        p.add_argument("-q", "--quiet", action="store_true")
    return parser


def _section(raw: dict, name: str) -> dict:
    if raw.get(name) is None:
        raw[name] = {}
    return raw[name]


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        raw = load_raw(args.config)
        if not isinstance(raw, dict):
            raise ConfigInvalid("config must be a mapping of sections")
        for key, value in (("seed", args.seed), ("out", args.out), ("jobs", args.jobs)):
            if value is not None:
                _section(raw, "run")[key] = value
        if args.checks is not None:
            if args.command != "verify":
                raise ConfigInvalid("--checks only applies to verify")
            _section(raw, "verify")["checks"] = parse_checks(args.checks)
        sc = build_scenario(raw)
    except ConfigInvalid as exc:
        print(f"error: invalid config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return COMMANDS[args.command](sc, _Outputs(Path(sc.run["out"])))
    except ConfigInvalid as exc:
        print(f"error: invalid config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (TslqError, ArithmeticError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


__all__ = ["main", "build_parser"]
