"""Render figure analogues from switchback's CSV artifacts.

A pure view layer: nothing is recomputed, every plotted array is a column
of an input CSV.  Regime-curve figures draw each per-regime curve dotted
and the chain-switched value solid, matching the reference visual
convention; chain figures draw the regime as a step function.

Invocation:
    switchback-render --kind chain --in out/chain.csv --out fig1.png
    switchback-render --kind regime-curves --in out/fig_p.csv out/fig_y.csv --out fig2.png
    switchback-render --all out/ --out-dir figs/
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
from dataclasses import dataclass, field

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

KINDS = ("chain", "regime-curves", "strategy", "state")

REGIME_COLORS = ("red", "blue", "green", "purple", "orange")


class SchemaMismatch(Exception):
    """Input CSV does not match the documented artifact schema."""


@dataclass(frozen=True)
class FigureSpec:
    kind: str
    inputs: tuple[str, ...]
    output: str
    title: str = ""


@dataclass
class PlottedData:
    """What actually went on the axes, for pixel-independent verification."""

    panels: list[dict[str, np.ndarray]] = field(default_factory=list)


def read_csv_columns(path: str) -> dict[str, np.ndarray]:
    try:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            rows = list(reader)
    except OSError as exc:
        raise SchemaMismatch(f"cannot read {path}: {exc}") from exc
    if len(rows) < 2:
        raise SchemaMismatch(f"{path}: need a header row and at least one data row")
    header = rows[0]
    if len(header) < 2 or header[0] != "t":
        raise SchemaMismatch(f"{path}: first column must be 't'")
    data = np.empty((len(rows) - 1, len(header)))
    for r, row in enumerate(rows[1:]):
        if len(row) != len(header):
            raise SchemaMismatch(f"{path}: row {r + 2} has {len(row)} cells, "
                                 f"expected {len(header)}")
        try:
            data[r] = [float(c) for c in row]
        except ValueError as exc:
            raise SchemaMismatch(f"{path}: row {r + 2}: {exc}") from exc
    return {name: data[:, j].copy() for j, name in enumerate(header)}


def _plot_chain(ax, cols: dict[str, np.ndarray], label: str) -> dict[str, np.ndarray]:
    if "regime" not in cols:
        raise SchemaMismatch("chain figure needs a 'regime' column")
    t, regime = cols["t"], cols["regime"]
    ax.step(t, regime, where="post", color="black", linewidth=1.2)
    states = sorted(set(int(v) for v in regime))
    lo = min(states + [1])
    hi = max(states + [2])
    ax.set_yticks(range(lo, hi + 1))
    ax.set_ylim(lo - 0.25, hi + 0.25)
    ax.set_xlabel("t")
    ax.set_ylabel(label or "regime")
    return {"t": t, "regime": regime}


def _plot_regime_curves(ax, cols: dict[str, np.ndarray],
                        label: str) -> dict[str, np.ndarray]:
    names = [c for c in cols if c != "t"]
    path_cols = [c for c in names if c.endswith("_path")]
    if len(path_cols) != 1:
        raise SchemaMismatch("regime-curve figure needs exactly one *_path column")
    curve_cols = [c for c in names if c not in path_cols]
    if not curve_cols:
        raise SchemaMismatch("regime-curve figure needs per-regime columns")
    t = cols["t"]
    plotted = {"t": t}
    for j, name in enumerate(curve_cols):
        color = REGIME_COLORS[j % len(REGIME_COLORS)]
        ax.plot(t, cols[name], linestyle=":", color=color, linewidth=1.4,
                label=f"regime {name.rsplit('_', 1)[-1]}")
        plotted[name] = cols[name]
    ax.plot(t, cols[path_cols[0]], color="black", linewidth=1.0,
            label="switched")
    plotted[path_cols[0]] = cols[path_cols[0]]
    ax.set_xlabel("t")
    ax.set_ylabel(label)
    ax.legend(fontsize=8)
    return plotted


def _plot_state(ax, cols: dict[str, np.ndarray], label: str) -> dict[str, np.ndarray]:
    names = [c for c in cols if c != "t"]
    if not names:
        raise SchemaMismatch("state figure needs at least one value column")
    t = cols["t"]
    plotted = {"t": t}
    styles = ["-", "--", "-.", ":"]
    for j, name in enumerate(names):
        ax.plot(t, cols[name], styles[j % len(styles)], linewidth=1.0,
                label=name)
        plotted[name] = cols[name]
    ax.set_xlabel("t")
    ax.set_ylabel(label or names[0])
    if len(names) > 1:
        ax.legend(fontsize=8)
    return plotted


def build_figure(spec: FigureSpec):
    """Figure plus the exact arrays that were drawn (for verification)."""
    if spec.kind not in KINDS:
        raise SchemaMismatch(f"unknown figure kind {spec.kind!r}")
    n_panels = len(spec.inputs)
    if n_panels not in (1, 2):
        raise SchemaMismatch("one or two input CSVs per figure")
    fig, axes = plt.subplots(1, n_panels, figsize=(6.0 * n_panels, 4.0))
    if n_panels == 1:
        axes = [axes]
    plotted = PlottedData()
    for ax, path in zip(axes, spec.inputs):
        cols = read_csv_columns(path)
        label = os.path.splitext(os.path.basename(path))[0]
        if spec.kind == "chain":
            plotted.panels.append(_plot_chain(ax, cols, label))
        elif spec.kind in ("regime-curves", "strategy"):
            plotted.panels.append(_plot_regime_curves(ax, cols, label))
        else:
            plotted.panels.append(_plot_state(ax, cols, label))
    if spec.title:
        fig.suptitle(spec.title)
    fig.tight_layout()
    return fig, plotted


def render(spec: FigureSpec) -> PlottedData:
    fig, plotted = build_figure(spec)
    fig.savefig(spec.output, dpi=120)
    plt.close(fig)
    return plotted


STANDARD_FIGURES = (
    ("fig1_chain.png", "chain", ("chain.csv",), "chain path"),
    ("fig2_adjoints.png", "regime-curves", ("fig_p.csv", "fig_y.csv"),
     "adjoint values per regime and along the chain"),
    ("fig3_followers.png", "strategy", ("fig_uF1.csv", "fig_uF2.csv"),
     "follower strategies"),
    ("fig4_leader.png", "strategy", ("fig_uL.csv",), "leader strategy"),
    ("fig5_state.png", "state", ("fig_x.csv",), "state path"),
)


def render_all(in_dir: str, out_dir: str) -> list[tuple[str, PlottedData]]:
    """The five standard figures from a pricing-mode simulate run."""
    os.makedirs(out_dir, exist_ok=True)
    results = []
    for out_name, kind, ins, title in STANDARD_FIGURES:
        spec = FigureSpec(kind=kind,
                          inputs=tuple(os.path.join(in_dir, f) for f in ins),
                          output=os.path.join(out_dir, out_name), title=title)
        results.append((out_name, render(spec)))
    return results


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="switchback-render",
                                 description=__doc__.splitlines()[0])
    ap.add_argument("--kind", choices=KINDS)
    ap.add_argument("--in", dest="inputs", nargs="+", help="input CSV file(s)")
    ap.add_argument("--out", help="output PNG path")
    ap.add_argument("--all", dest="all_dir",
                    help="directory of a pricing simulate run; renders the "
                         "five standard figures")
    ap.add_argument("--out-dir", default="figs")
    args = ap.parse_args(argv)
    try:
        if args.all_dir:
            for name, _ in render_all(args.all_dir, args.out_dir):
                print(f"wrote {os.path.join(args.out_dir, name)}")
            return 0
        if not (args.kind and args.inputs and args.out):
            ap.error("--kind/--in/--out are required unless --all is given")
        render(FigureSpec(kind=args.kind, inputs=tuple(args.inputs),
                          output=args.out))
        print(f"wrote {args.out}")
        return 0
    except SchemaMismatch as exc:
        print(f"schema error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
