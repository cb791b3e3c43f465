"""Experiment driver: analyze, simulate, cross-validate, sweep, trace.

Configuration is a flat JSON document (see ``SystemConfig.from_dict``) or
one of the named presets, overridable with repeated ``--set key=value``
flags.  Every run writes a ``manifest.json`` (config echo, seed, package
versions) next to its CSV outputs.

CSV schemas are stable and pinned by tests:

* analyze.csv:  sweep, value, then ``AnalysisReport.CSV_COLUMNS``
* simulate.csv: sweep, value, then ``SimReport.CSV_COLUMNS``
* validate.csv: see ``VALIDATE_COLUMNS``

Per-IoD vectors are packed into single semicolon-separated columns so the
column count does not depend on the device count.

Exit codes: 0 success, 1 validation failure, 2 usage or config error,
3 solver non-convergence.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from .metrics import AnalysisReport, analyze
from .numerics import ToleranceConfig
from .presets import PRESET_NAMES, preset, scaled
from .simulator import MODES, SimReport, SimState, run, step
from .solver import profile_for, solve_coupled
from .system import PolicyKind, SystemConfig

ANALYZE_COLUMNS = ("sweep", "value") + AnalysisReport.CSV_COLUMNS
SIMULATE_COLUMNS = ("sweep", "value") + SimReport.CSV_COLUMNS
VALIDATE_COLUMNS = (
    "sweep", "value", "policy", "outage_analysis", "outage_sim", "outage_sigma",
    "throughput_analysis", "throughput_sim", "throughput_sigma", "result",
)

SWEEPS = ("rate", "hap-power", "num-iods")

_POLICY_BY_NAME = {p.value: p for p in PolicyKind}
_POLICY_ALIASES = {
    "to": PolicyKind.THROUGHPUT, "fo": PolicyKind.FAIRNESS,
    "rr": PolicyKind.ROUND_ROBIN, "rs": PolicyKind.RANDOM,
    "all": None,
}


class UsageError(Exception):
    """Bad flags or config; mapped to exit code 2."""


@dataclass(frozen=True)
class ExperimentSpec:
    """Everything one subcommand run needs, resolved from the CLI flags."""

    base: SystemConfig
    sweep: str                      # one of SWEEPS, or "none"
    grid: tuple[float, ...]
    policies: tuple[PolicyKind, ...]
    blocks: int
    seed: int
    mode: str
    rr_skip_empty: bool
    out_dir: Path
    workers: int
    preset_name: str | None = None
    overrides: dict = field(default_factory=dict)
    random_ties: bool = False
    damping: float = 0.5

    def __post_init__(self):
        if not self.grid:
            raise UsageError("sweep grid is empty")
        if list(self.grid) != sorted(self.grid):
            raise UsageError("sweep grid must be sorted ascending")
        if not self.policies:
            raise UsageError("no policies selected")
        if self.sweep not in SWEEPS + ("none",):
            raise UsageError(f"unknown sweep variable {self.sweep!r}")

    def config_at(self, value: float) -> SystemConfig:
        """Materialize the configuration for one grid point."""
        if self.sweep == "none":
            return self.base
        if self.sweep == "rate":
            return self.base.with_overrides(rate_req=float(value))
        if self.sweep == "hap-power":
            return self.base.with_overrides(hap_power=float(value))
        L = int(value)
        if self.preset_name is not None:
            cfg = preset(self.preset_name, num_iods=L)
            keep = {
                k: getattr(self.base, k)
                for k in (
                    "hap_power", "noise_power", "conversion_eff", "battery_capacity",
                    "num_levels", "max_wait", "rician_factor", "si_gain",
                    "block_duration", "rate_req", "pathloss_exp",
                )
            }
            return cfg.with_overrides(**keep)
        if L > len(self.base.distances):
            raise UsageError(
                f"cannot sweep to {L} IoDs: config file lists "
                f"{len(self.base.distances)} distances"
            )
        return self.base.with_overrides(
            num_iods=L, distances=self.base.distances[:L]
        )

    def point_seed(self, index: int, policy: PolicyKind) -> int:
        """Deterministic per-(grid point, policy) seed, worker-order free."""
        codes = {p: n for n, p in enumerate(PolicyKind)}
        ss = np.random.SeedSequence(entropy=(self.seed, index, codes[policy]))
        return int(ss.generate_state(1, np.uint64)[0])


# ---------------------------------------------------------------------------
# manifest and CSV plumbing


def write_manifest(spec: ExperimentSpec, command: str) -> None:
    spec.out_dir.mkdir(parents=True, exist_ok=True)
    doc = {
        "command": command,
        "package_version": __version__,
        "config": spec.base.to_dict(),
        "preset": spec.preset_name,
        "overrides": spec.overrides,
        "sweep": spec.sweep,
        "grid": list(spec.grid),
        "policies": [p.value for p in spec.policies],
        "blocks": spec.blocks,
        "seed": spec.seed,
        "mode": spec.mode,
        "rr_skip_empty": spec.rr_skip_empty,
        "random_ties": spec.random_ties,
        "damping": spec.damping,
        "versions": _versions(),
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S"),
    }
    with open(spec.out_dir / "manifest.json", "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)


def _versions() -> dict:
    import numba
    import scipy

    return {
        "python": sys.version.split()[0],
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "numba": numba.__version__,
    }


def _write_csv(path: Path, header, rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


# ---------------------------------------------------------------------------
# subcommand cores (return rows; shell functions handle I/O and exit codes)


def cmd_analyze(spec: ExperimentSpec) -> tuple[list[list[str]], bool]:
    """Analytical rows for every (grid point, policy); flags non-convergence."""
    bad = [p for p in spec.policies if not p.analyzable]
    if bad:
        raise UsageError(
            f"analyze covers the two analyzable policies; remove {[p.value for p in bad]}"
        )
    rows = []
    all_converged = True
    for value in spec.grid:
        cfg = spec.config_at(value)
        for policy in spec.policies:
            sol = solve_coupled(cfg, policy, ToleranceConfig(), damping=spec.damping)
            rep = analyze(cfg, policy, sol, profile_for(cfg, sol)) if sol.converged \
                else _unconverged_report(policy, sol)
            all_converged &= sol.converged
            rows.append([spec.sweep, f"{value:.10g}"] + rep.to_csv_row())
    return rows, all_converged


def _unconverged_report(policy: PolicyKind, sol) -> AnalysisReport:
    nan = float("nan")
    L = sol.distributions.shape[0]
    return AnalysisReport(
        policy=policy, outage_idle=nan, outage_per_iod=(nan,) * L,
        outage_total=nan, throughput=nan, access_probs=(nan,) * L,
        fairness=nan, fairness_raw=nan, charging_rounds=(nan,) * L,
        converged=False, iterations=sol.iterations_used,
        residual=sol.final_residual,
    )


def _simulate_point(args) -> list[str]:
    spec, index, value, policy = args
    cfg = spec.config_at(value)
    rep = run(
        cfg, policy, spec.blocks, mode=spec.mode,
        seed=spec.point_seed(index, policy),
        rr_skip_empty=spec.rr_skip_empty,
        random_ties=spec.random_ties,
    )
    return [spec.sweep, f"{value:.10g}"] + rep.to_csv_row()


def cmd_simulate(spec: ExperimentSpec) -> list[list[str]]:
    """Monte Carlo rows for every (grid point, policy), grid-ordered."""
    tasks = [
        (spec, i, value, policy)
        for i, value in enumerate(spec.grid)
        for policy in spec.policies
    ]
    if spec.workers > 1:
        with ProcessPoolExecutor(max_workers=spec.workers) as pool:
            rows = list(pool.map(_simulate_point, tasks))
    else:
        rows = [_simulate_point(t) for t in tasks]
    return rows


def cmd_validate(spec: ExperimentSpec) -> tuple[list[list[str]], bool, bool]:
    """Per-point analysis-vs-simulation comparison at 3 batch standard errors."""
    bad = [p for p in spec.policies if not p.analyzable]
    if bad:
        raise UsageError("validate compares analyzable policies only")
    rows = []
    all_pass = True
    all_converged = True
    for i, value in enumerate(spec.grid):
        cfg = spec.config_at(value)
        for policy in spec.policies:
            sol = solve_coupled(cfg, policy, ToleranceConfig(), damping=spec.damping)
            all_converged &= sol.converged
            if not sol.converged:
                rows.append([spec.sweep, f"{value:.10g}", policy.value]
                            + ["nan"] * 6 + ["UNCONVERGED"])
                all_pass = False
                continue
            rep = analyze(cfg, policy, sol, profile_for(cfg, sol))
            sim = run(
                cfg, policy, spec.blocks, mode=spec.mode,
                seed=spec.point_seed(i, policy),
            )
            sig_out = sim.outage_se_batch
            sig_thr = cfg.rate_req * sig_out * cfg.block_duration
            ok = (
                abs(rep.outage_total - sim.outage_rate) <= 3 * sig_out
                and abs(rep.throughput - sim.throughput_est) <= 3 * sig_thr
            )
            all_pass &= ok
            rows.append([
                spec.sweep, f"{value:.10g}", policy.value,
                f"{rep.outage_total:.10g}", f"{sim.outage_rate:.10g}", f"{sig_out:.6g}",
                f"{rep.throughput:.10g}", f"{sim.throughput_est:.10g}", f"{sig_thr:.6g}",
                "PASS" if ok else "FAIL",
            ])
    return rows, all_pass, all_converged


def cmd_trace(spec: ExperimentSpec) -> list[list[str]]:
    """Per-block trace of one policy through the reference stepper."""
    if spec.blocks > 100_000:
        raise UsageError("trace is for short runs; keep --blocks <= 100000")
    policy = spec.policies[0]
    cfg = spec.base
    state = SimState.fresh(cfg, spec.point_seed(0, policy))
    rows = []
    for t in range(spec.blocks):
        energies = (
            list(cfg.energy_levels[state.levels])
            if spec.mode == "discretized"
            else list(state.residual)
        )
        waits = list(state.waits)
        _, out = step(
            cfg, state, policy, mode=spec.mode, rr_skip_empty=spec.rr_skip_empty
        )
        rows.append(
            [str(t), "" if out.selected is None else str(out.selected),
             str(int(out.success)), str(int(out.outage))]
            + [f"{e:.10g}" for e in energies]
            + [str(w) for w in waits]
        )
    return rows


# ---------------------------------------------------------------------------
# argument parsing


def _parse_policies(text: str) -> tuple[PolicyKind, ...]:
    names = [t.strip().lower() for t in text.split(",") if t.strip()]
    if any(n == "all" for n in names):
        return tuple(PolicyKind)
    out = []
    for n in names:
        if n in _POLICY_ALIASES and _POLICY_ALIASES[n] is not None:
            out.append(_POLICY_ALIASES[n])
        elif n in _POLICY_BY_NAME:
            out.append(_POLICY_BY_NAME[n])
        else:
            raise UsageError(f"unknown policy {n!r}")
    return tuple(dict.fromkeys(out))


def _parse_grid(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(t) for t in text.split(",") if t.strip())
    except ValueError as exc:
        raise UsageError(f"bad grid: {exc}") from exc


def _parse_set(pairs: list[str]) -> dict:
    out = {}
    for pair in pairs or []:
        if "=" not in pair:
            raise UsageError(f"--set expects key=value, got {pair!r}")
        key, val = pair.split("=", 1)
        if key == "distances_m":
            out[key] = [float(v) for v in val.split(";")]
        elif key in ("num_iods", "num_levels", "max_wait"):
            out[key] = int(val)
        else:
            out[key] = float(val)
    return out


def _load_config(args) -> tuple[SystemConfig, str | None, dict]:
    overrides = _parse_set(args.set)
    if args.config:
        with open(args.config) as fh:
            doc = json.load(fh)
        doc.update(overrides)
        return SystemConfig.from_dict(doc), None, overrides
    cfg = preset(args.preset)
    if overrides:
        doc = cfg.to_dict()
        doc.update(overrides)
        cfg = SystemConfig.from_dict(doc)
    return cfg, args.preset, overrides


def _build_spec(args, policies_default="all") -> ExperimentSpec:
    cfg, preset_name, overrides = _load_config(args)
    if getattr(args, "scale", False):
        cfg = scaled(
            cfg, num_levels=args.scale_levels, max_wait=args.scale_wait,
            num_iods=args.scale_iods,
        )
    sweep = getattr(args, "sweep", None) or "none"
    if sweep != "none" and args.grid is None:
        raise UsageError("--sweep needs --grid")
    if sweep == "none":
        grid = (0.0,)
    else:
        grid = _parse_grid(args.grid)
    policies = _parse_policies(args.policy or policies_default)
    return ExperimentSpec(
        base=cfg,
        sweep=sweep,
        grid=grid,
        policies=policies,
        blocks=args.blocks,
        seed=args.seed,
        mode=args.mode,
        rr_skip_empty=getattr(args, "rr_skip_empty", False),
        out_dir=Path(args.out),
        workers=getattr(args, "workers", 1),
        preset_name=preset_name,
        overrides=overrides,
        random_ties=getattr(args, "random_ties", False),
        damping=getattr(args, "damping", 0.5),
    )


def _common_flags(p: argparse.ArgumentParser, blocks_default: int):
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--preset", default="s1", choices=PRESET_NAMES)
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a flat config key (repeatable)")
    p.add_argument("--policy", help="comma list: throughput,fairness,round-robin,random,all")
    p.add_argument("--sweep", choices=SWEEPS)
    p.add_argument("--grid", help="comma-separated sweep values")
    p.add_argument("--blocks", type=int, default=blocks_default)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mode", default="discretized", choices=MODES)
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--rr-skip-empty", action="store_true",
                   help="round robin skips empty batteries instead of idling")
    p.add_argument("--random-ties", action="store_true",
                   help="break exact selection ties uniformly instead of by "
                        "lowest index (the saturation behavior of the "
                        "published fairness figures)")
    p.add_argument("--damping", type=float, default=0.5,
                   help="fixed-point relaxation factor for the analysis; "
                        "1.0 is the plain iteration, smaller values keep "
                        "strongly coupled regimes convergent")


def _add_scale_flags(p: argparse.ArgumentParser, default_on: bool):
    p.add_argument("--scale", action=argparse.BooleanOptionalAction, default=default_on,
                   help="shrink to validation size (K=50, M=10, L=3 by default)")
    p.add_argument("--scale-levels", type=int, default=50)
    p.add_argument("--scale-wait", type=int, default=10)
    p.add_argument("--scale-iods", type=int, default=3)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="wpiot",
        description="Scheduling analysis and Monte Carlo simulation for a "
                    "full-duplex wireless-powered IoT uplink.",
    )
    ap.add_argument("--version", action="version", version=f"wpiot {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze", help="closed-form metrics over a sweep grid")
    _common_flags(p, blocks_default=0)
    _add_scale_flags(p, default_on=False)

    p = sub.add_parser("simulate", help="Monte Carlo metrics over a sweep grid")
    _common_flags(p, blocks_default=1_000_000)
    _add_scale_flags(p, default_on=False)

    p = sub.add_parser("validate", help="analysis vs simulation at 3 sigma")
    _common_flags(p, blocks_default=10_000_000)
    _add_scale_flags(p, default_on=True)
    p.add_argument(
        "--hap-power", type=float, default=0.004,
        help="HAP power (W); the default sits where the decoupled analysis "
             "is accurate to within Monte Carlo noise (see README)",
    )

    p = sub.add_parser("sweep-ph", help="fairness-vs-power experiment (both CSVs)")
    _common_flags(p, blocks_default=1_000_000)
    _add_scale_flags(p, default_on=True)

    p = sub.add_parser("trace", help="per-block trace through the reference stepper")
    _common_flags(p, blocks_default=200)

    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "analyze":
            spec = _build_spec(args, policies_default="throughput,fairness")
            rows, converged = cmd_analyze(spec)
            write_manifest(spec, "analyze")
            _write_csv(spec.out_dir / "analyze.csv", ANALYZE_COLUMNS, rows)
            print(f"wrote {spec.out_dir / 'analyze.csv'} ({len(rows)} rows)")
            return 0 if converged else 3

        if args.command == "simulate":
            spec = _build_spec(args)
            if spec.blocks < 1:
                raise UsageError("simulate needs --blocks >= 1")
            rows = cmd_simulate(spec)
            write_manifest(spec, "simulate")
            _write_csv(spec.out_dir / "simulate.csv", SIMULATE_COLUMNS, rows)
            print(f"wrote {spec.out_dir / 'simulate.csv'} ({len(rows)} rows)")
            return 0

        if args.command == "validate":
            sets = list(args.set or [])
            sets.append(f"hap_power_w={args.hap_power}")
            args.set = sets
            spec = _build_spec(args, policies_default="throughput,fairness")
            if spec.sweep == "none":
                spec = replace(spec, sweep="rate", grid=(1.0, 1.5, 2.0, 2.5, 3.0))
            rows, ok, converged = cmd_validate(spec)
            write_manifest(spec, "validate")
            _write_csv(spec.out_dir / "validate.csv", VALIDATE_COLUMNS, rows)
            for row in rows:
                print(" ".join(row))
            if not converged:
                return 3
            return 0 if ok else 1

        if args.command == "sweep-ph":
            spec = _build_spec(args)
            if spec.sweep == "none":
                grid = tuple(float(f"{v:.10g}") for v in np.logspace(-3, 1, 17))
                spec = replace(spec, sweep="hap-power", grid=grid)
            ana_spec = replace(
                spec,
                policies=tuple(p for p in spec.policies if p.analyzable)
                or (PolicyKind.THROUGHPUT, PolicyKind.FAIRNESS),
            )
            rows_a, converged = cmd_analyze(ana_spec)
            rows_s = cmd_simulate(spec)
            write_manifest(spec, "sweep-ph")
            _write_csv(spec.out_dir / "analyze.csv", ANALYZE_COLUMNS, rows_a)
            _write_csv(spec.out_dir / "simulate.csv", SIMULATE_COLUMNS, rows_s)
            print(f"wrote {spec.out_dir / 'analyze.csv'} and simulate.csv")
            return 0 if converged else 3

        if args.command == "trace":
            spec = _build_spec(args, policies_default="throughput")
            rows = cmd_trace(spec)
            write_manifest(spec, "trace")
            L = spec.base.num_iods
            header = (
                ["block", "selected", "success", "outage"]
                + [f"energy_{i}" for i in range(L)]
                + [f"wait_{i}" for i in range(L)]
            )
            _write_csv(spec.out_dir / "trace.csv", header, rows)
            print(f"wrote {spec.out_dir / 'trace.csv'} ({len(rows)} rows)")
            return 0

        raise UsageError(f"unknown command {args.command!r}")
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError, json.JSONDecodeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
