"""Render the six report figures from wpiot CSV outputs.

Strictly a CSV-to-figure transform: nothing is recomputed. Analytical
rows become solid lines, simulation rows become markers with error bars,
following the usual convention of overlaying Monte Carlo points on
analytical curves. Inputs are the ``analyze.csv`` / ``simulate.csv``
schemas written by the wpiot CLI; the loader tells them apart by header.

Figures:

* fig3 / fig4 - average throughput versus rate requirement (s1 / s2)
* fig5 / fig6 - average throughput versus device count (equal / stepped
  distances)
* fig7 / fig8 - fairness index versus HAP power, log axis (s1 / s2)

Each run reports a geometry hash of everything actually drawn (all line
and collection vertices, rounded to 10 significant digits), which is what
the regression tests pin against golden references.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
from dataclasses import dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)


class SchemaError(Exception):
    """The input CSV does not match the documented schema."""


ANALYZE_MARKER_COLUMNS = {"outage_total", "charging_rounds", "iterations"}
SIMULATE_MARKER_COLUMNS = {"outage_rate", "tx_counts", "blocks"}

FIGURES = {
    "fig3": dict(sweep="rate", ycol="throughput", xlabel="rate requirement (bits/s/Hz)",
                 ylabel="average throughput (bits/s/Hz)", logx=False,
                 title="Average throughput vs rate, setup s1"),
    "fig4": dict(sweep="rate", ycol="throughput", xlabel="rate requirement (bits/s/Hz)",
                 ylabel="average throughput (bits/s/Hz)", logx=False,
                 title="Average throughput vs rate, setup s2"),
    "fig5": dict(sweep="num-iods", ycol="throughput", xlabel="number of devices",
                 ylabel="average throughput (bits/s/Hz)", logx=False,
                 title="Average throughput vs device count, equal distances"),
    "fig6": dict(sweep="num-iods", ycol="throughput", xlabel="number of devices",
                 ylabel="average throughput (bits/s/Hz)", logx=False,
                 title="Average throughput vs device count, stepped distances"),
    "fig7": dict(sweep="hap-power", ycol="fairness", xlabel="HAP power (W)",
                 ylabel="fairness index", logx=True,
                 title="Fairness vs HAP power, setup s1"),
    "fig8": dict(sweep="hap-power", ycol="fairness", xlabel="HAP power (W)",
                 ylabel="fairness index", logx=True,
                 title="Fairness vs HAP power, setup s2"),
}

POLICY_STYLE = {
    "throughput": ("tab:blue", "o"),
    "fairness": ("tab:orange", "s"),
    "round-robin": ("tab:green", "^"),
    "random": ("tab:red", "D"),
}

# simulation column holding the 1-sigma (batch) error of the plotted metric
SIM_ERR_FOR = {"throughput_est": "throughput_se_batch"}


@dataclass(frozen=True)
class FigureSpec:
    figure: str
    inputs: tuple[Path, ...]
    out: Path
    xlim: tuple[float, float] | None = None
    ylim: tuple[float, float] | None = None

    def __post_init__(self):
        if self.figure not in FIGURES:
            raise SchemaError(f"unknown figure {self.figure!r}; choose from {sorted(FIGURES)}")
        if not self.inputs:
            raise SchemaError("at least one input CSV is required")


def load_table(path: Path) -> tuple[str, list[dict]]:
    """Read one CSV and classify it as analysis or simulation output."""
    try:
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
    except OSError as exc:
        raise SchemaError(f"cannot read {path}: {exc}") from exc
    if not rows:
        raise SchemaError(f"{path} holds no data rows")
    header = set(rows[0].keys())
    if not {"sweep", "value", "policy"} <= header:
        raise SchemaError(f"{path} lacks the sweep/value/policy columns")
    if ANALYZE_MARKER_COLUMNS <= header:
        return "analysis", rows
    if SIMULATE_MARKER_COLUMNS <= header:
        return "simulation", rows
    raise SchemaError(
        f"{path} matches neither the analyze.csv nor the simulate.csv schema"
    )


def _column(row: dict, name: str, path_hint: str) -> float:
    if name not in row or row[name] == "":
        raise SchemaError(f"{path_hint}: missing column {name!r}")
    try:
        return float(row[name])
    except ValueError as exc:
        raise SchemaError(f"{path_hint}: column {name!r} is not numeric") from exc


def collect_curves(spec: FigureSpec) -> dict[tuple[str, str], dict]:
    """One curve per (source, policy): sorted x, y, and optional y-error."""
    fig = FIGURES[spec.figure]
    want_sweep = fig["sweep"]
    curves: dict[tuple[str, str], dict] = {}
    for path in spec.inputs:
        source, rows = load_table(path)
        ycol = fig["ycol"] if source == "analysis" else _sim_ycol(fig["ycol"])
        errcol = SIM_ERR_FOR.get(ycol) if source == "simulation" else None
        for row in rows:
            if row["sweep"] != want_sweep:
                raise SchemaError(
                    f"{path}: figure {spec.figure} needs a {want_sweep!r} sweep, "
                    f"found {row['sweep']!r}"
                )
            if source == "analysis" and row.get("converged") == "0":
                continue
            key = (source, row["policy"])
            entry = curves.setdefault(key, {"x": [], "y": [], "yerr": []})
            entry["x"].append(_column(row, "value", str(path)))
            entry["y"].append(_column(row, ycol, str(path)))
            if errcol is not None:
                entry["yerr"].append(_column(row, errcol, str(path)))
    if not curves:
        raise SchemaError("inputs produced no plottable rows")
    for entry in curves.values():
        order = sorted(range(len(entry["x"])), key=entry["x"].__getitem__)
        entry["x"] = [entry["x"][i] for i in order]
        entry["y"] = [entry["y"][i] for i in order]
        entry["yerr"] = [entry["yerr"][i] for i in order] if entry["yerr"] else None
    return curves


def _sim_ycol(analysis_col: str) -> str:
    return {"throughput": "throughput_est", "fairness": "fairness"}[analysis_col]


def figure_geometry_hash(fig) -> str:
    """Hash of every drawn vertex, stable across backends and versions."""
    payload = []
    for ax in fig.get_axes():
        for line in ax.get_lines():
            x, y = line.get_data()
            payload.append([_round_list(x), _round_list(y)])
        for coll in ax.collections:
            segs = getattr(coll, "get_segments", lambda: [])()
            payload.append([[_round_list(s[:, 0]), _round_list(s[:, 1])] for s in segs])
    blob = json.dumps(payload, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def _round_list(vals) -> list[float]:
    return [float(f"{float(v):.10g}") for v in vals]


def render(spec: FigureSpec) -> tuple[Path, str]:
    """Write the figure and return (path, geometry hash)."""
    meta = FIGURES[spec.figure]
    curves = collect_curves(spec)
    fig, ax = plt.subplots(figsize=(6.4, 4.4))
    try:
        for (source, policy), data in sorted(curves.items()):
            color, marker = POLICY_STYLE.get(policy, ("tab:gray", "x"))
            label = f"{policy} ({source})"
            if source == "analysis":
                ax.plot(data["x"], data["y"], "-", color=color, label=label)
            else:
                ax.errorbar(
                    data["x"], data["y"],
                    yerr=data["yerr"] if data["yerr"] else None,
                    fmt=marker, color=color, markerfacecolor="none",
                    linestyle="none", capsize=3, label=label,
                )
        if meta["logx"]:
            ax.set_xscale("log")
        if spec.xlim:
            ax.set_xlim(*spec.xlim)
        if spec.ylim:
            ax.set_ylim(*spec.ylim)
        ax.set_xlabel(meta["xlabel"])
        ax.set_ylabel(meta["ylabel"])
        ax.set_title(meta["title"])
        ax.grid(True, alpha=0.3)
        ax.legend(fontsize=8)
        digest = figure_geometry_hash(fig)
        spec.out.parent.mkdir(parents=True, exist_ok=True)
        fig.savefig(spec.out, dpi=150)
    finally:
        plt.close(fig)
    return spec.out, digest


def _parse_range(text: str | None):
    if text is None:
        return None
    parts = text.split(",")
    if len(parts) != 2:
        raise SchemaError(f"ranges are lo,hi pairs, got {text!r}")
    return float(parts[0]), float(parts[1])


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(
        prog="wpiot-figure",
        description="Render one report figure from wpiot CSV outputs.",
    )
    ap.add_argument("--figure", required=True, choices=sorted(FIGURES))
    ap.add_argument("--input", action="append", required=True,
                    help="analyze.csv or simulate.csv (repeatable; kind is "
                         "detected from the header)")
    ap.add_argument("--out", required=True, help="output image path (.png/.svg/.pdf)")
    ap.add_argument("--xlim", help="x axis range lo,hi")
    ap.add_argument("--ylim", help="y axis range lo,hi")
    args = ap.parse_args(argv)
    try:
        spec = FigureSpec(
            figure=args.figure,
            inputs=tuple(Path(p) for p in args.input),
            out=Path(args.out),
            xlim=_parse_range(args.xlim),
            ylim=_parse_range(args.ylim),
        )
        out, digest = render(spec)
    except SchemaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(f"wrote {out} geometry {digest}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
