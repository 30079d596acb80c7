"""Command-line entry point.

Subcommands: ``check`` (assumption report), ``solve`` (CSV grids),
``simulate`` (trajectories, figure sources, cost summary), ``verify``
(property-test battery).  Exit codes: 0 success, 1 verification failure,
2 input error, 3 solver failure.  Outputs are byte-identical for identical
(config, seed); all floats carry 17 significant digits.
"""

from __future__ import annotations

import argparse
import importlib.resources
import json
import os
import sys

import numpy as np

from . import follower, leader, simulate, strategies
from .chains import chain_stream, sample_chain
from .errors import ProblemFormatError, SwitchbackError
from .grids import RegimeGrid, format_float, grid_to_csv, solve_linear_regime_bsde
from .model import (ProblemSpec, check_assumptions, load_problem, report_as_dict,
                    required_checks)

EXIT_OK = 0
EXIT_VERIFY = 1
EXIT_INPUT = 2
EXIT_SOLVER = 3


def resolve_problem(path: str) -> str:
    """Literal path, or the name of a bundled problem (pricing, zero)."""
    if os.path.exists(path):
        return path
    name = os.path.basename(path)
    if not name.endswith(".json"):
        name += ".json"
    bundled = importlib.resources.files("switchback") / "data" / name
    if bundled.is_file():
        return str(bundled)
    raise ProblemFormatError(f"problem file not found: {path}")


def _write_csv(path: str, header: str, rows: list[str]) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write(header + "\n")
        if rows:
            fh.write("\n".join(rows) + "\n")


# ---------------------------------------------------------------------------
# solve pipelines per mode
# ---------------------------------------------------------------------------

def solve_pricing(spec: ProblemSpec, scheme: str):
    """Decoupled adjoint pair of the pricing reduction."""
    fc, lc = spec.follower_cost, spec.leader_cost
    zero_src = np.zeros((spec.N + 1, spec.m))
    p, _ = solve_linear_regime_bsde(spec.dynamics.A, zero_src, fc.G_F_bar,
                                    spec.generator, (spec.T, spec.N), scheme)
    y, _ = solve_linear_regime_bsde(spec.dynamics.A, zero_src,
                                    lc.G_L_bar - fc.G_F_bar,
                                    spec.generator, (spec.T, spec.N), scheme)
    return p, y


def solve_followers(spec: ProblemSpec, scheme: str, tol_invert: float,
                    u_L: np.ndarray | None = None):
    pf = follower.solve_PF(spec, scheme, tol_invert)
    pf = follower.solve_PFbar(spec, pf, scheme, tol_invert)
    coeffs = follower.feedback_coeffs(spec, pf, tol_invert)
    if u_L is None:
        u_L = np.zeros((spec.N + 1, spec.m, spec.m0))
    phi, phi_M = follower.solve_phi(spec, coeffs, u_L, scheme)
    return pf, coeffs, phi, phi_M, u_L


def solve_stackelberg(spec: ProblemSpec, scheme: str, tol_invert: float):
    aug = leader.build_augmented(spec, tol_invert)
    lr = leader.solve_leader(spec, aug, scheme)
    return aug, lr.P_L, lr.P_L_bar, lr.tau, lr.tau_M


def build_profile(spec: ProblemSpec, mode: str, scheme: str, tol_invert: float):
    """Strategy profile plus whatever grids the simulator needs."""
    if mode == "pricing":
        p, y = solve_pricing(spec, scheme)
        prof = strategies.pricing_strategies(spec, p, y)
        return prof, {"p": p, "y": y}
    if mode == "followers":
        pf, coeffs, phi, _, u_L = solve_followers(spec, scheme, tol_invert)
        prof = strategies.follower_feedback(spec, coeffs, phi, u_L)
        return prof, {"P_F": pf.P_F, "P_F_bar": pf.P_F_bar, "phi": phi,
                      "coeffs": coeffs}
    if mode == "stackelberg":
        aug, P_L, P_L_bar, tau, _ = solve_stackelberg(spec, scheme, tol_invert)
        gains = leader.leader_feedback(spec, aug, P_L, P_L_bar, tau)
        prof = strategies.stackelberg_profile(spec, aug, P_L, P_L_bar, tau, gains)
        layer = simulate.LeaderLayer(B1=aug.B1, P_L=P_L, P_L_bar=P_L_bar, tau=tau)
        return prof, {"P_L": P_L, "P_L_bar": P_L_bar, "tau": tau,
                      "aug": aug, "layer": layer}
    raise ProblemFormatError(f"unknown mode {mode!r}")


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_check(args) -> int:
    spec = load_problem(resolve_problem(args.problem), steps=args.steps)
    report = check_assumptions(spec, tol_invert=args.tol_invert)
    payload = report_as_dict(report)
    required = required_checks(args.mode)
    payload["mode"] = args.mode
    payload["required"] = list(required)
    ok = report.holds(required)
    payload["ok"] = ok
    for name, value in payload["checks"].items():
        mark = "required" if name in required else "info"
        print(f"{name:>18}: {'true' if value else 'false'}  [{mark}]")
    c = payload["constants"]
    print("constants: " + ", ".join(f"{k}={format_float(v)}"
                                    for k, v in c.items() if k != "degenerate"))
    print(f"mode {args.mode}: {'OK' if ok else 'REQUIREMENTS NOT MET'}")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "assumptions.json"), "w") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
    return EXIT_OK if ok else EXIT_VERIFY


def cmd_solve(args) -> int:
    spec = load_problem(resolve_problem(args.problem), steps=args.steps)
    os.makedirs(args.out, exist_ok=True)

    def emit(name: str, grid: RegimeGrid):
        grid_to_csv(grid, os.path.join(args.out, name + ".csv"))
        print(f"wrote {os.path.join(args.out, name + '.csv')}")

    if args.mode == "pricing":
        p, y = solve_pricing(spec, args.scheme)
        emit("p", p)
        emit("y", y)
    elif args.mode == "followers":
        pf, coeffs, phi, _, _ = solve_followers(spec, args.scheme, args.tol_invert)
        emit("P_F", pf.P_F)
        emit("P_F_bar", pf.P_F_bar)
        emit("phi", phi)
        env = follower.envelope(spec)
        emit("envelope_plus", env.plus)
        emit("envelope_minus", env.minus)
    else:
        pf, coeffs, phi, _, _ = solve_followers(spec, args.scheme, args.tol_invert)
        emit("P_F", pf.P_F)
        emit("P_F_bar", pf.P_F_bar)
        emit("phi", phi)
        _, P_L, P_L_bar, tau, _ = solve_stackelberg(spec, args.scheme,
                                                    args.tol_invert)
        emit("P_L", P_L)
        emit("P_L_bar", P_L_bar)
        emit("tau", tau)
    return EXIT_OK


def _fig_csv(path: str, t: np.ndarray, per_regime: np.ndarray,
             along_path: np.ndarray, prefix: str) -> None:
    m = per_regime.shape[1]
    header = "t," + ",".join(f"{prefix}_{i + 1}" for i in range(m)) + f",{prefix}_path"
    rows = []
    for k in range(len(t)):
        vals = [format_float(per_regime[k, i]) for i in range(m)]
        rows.append(format_float(t[k]) + "," + ",".join(vals) + ","
                    + format_float(along_path[k]))
    _write_csv(path, header, rows)


def cmd_simulate(args) -> int:
    spec = load_problem(resolve_problem(args.problem), steps=args.steps)
    profile, grids = build_profile(spec, args.mode, args.scheme, args.tol_invert)
    os.makedirs(args.out, exist_ok=True)
    res = simulate.simulate_paths(
        spec, profile, args.paths, args.seed,
        leader_layer=grids.get("layer"), record=1, keep_state=False,
        quadrature=args.quadrature,
    )
    rec = res.records[0]
    t = rec.t

    _write_csv(os.path.join(args.out, "chain.csv"), "t,regime",
               [f"{format_float(t[k])},{rec.regimes[k]}" for k in range(len(t))])

    u_cols = ([f"u_L_{j + 1}" for j in range(spec.m0)]
              + [f"u_F1_{j + 1}" for j in range(spec.m1)]
              + [f"u_F2_{j + 1}" for j in range(spec.m2)])
    header = "t,regime,x,x_hat," + ",".join(u_cols)
    rows = []
    for k in range(len(t)):
        vals = [format_float(t[k]), str(rec.regimes[k]),
                format_float(rec.x[k]), format_float(rec.x_hat[k])]
        vals += [format_float(v) for v in rec.u_L[k]]
        vals += [format_float(v) for v in rec.u_F[k]]
        rows.append(",".join(vals))
    _write_csv(os.path.join(args.out, "trajectory.csv"), header, rows)

    jf, jl = res.estimate_J_F(), res.estimate_J_L()
    _write_csv(os.path.join(args.out, "costs.csv"), "player,mean,se,n,seed",
               [f"J_F,{format_float(jf.mean)},{format_float(jf.se)},{jf.n},{jf.seed}",
                f"J_L,{format_float(jl.mean)},{format_float(jl.se)},{jl.n},{jl.seed}"])

    if args.mode == "pricing" and spec.m0 == spec.m1 == spec.m2 == 1:
        ridx = rec.regimes - 1
        p, y = grids["p"], grids["y"]
        _fig_csv(os.path.join(args.out, "fig_p.csv"), t, p.values,
                 p.values[np.arange(len(t)), ridx], "p")
        _fig_csv(os.path.join(args.out, "fig_y.csv"), t, y.values,
                 y.values[np.arange(len(t)), ridx], "y")
        off = profile.follower_offset
        _fig_csv(os.path.join(args.out, "fig_uF1.csv"), t, off[:, :, 0],
                 rec.u_F[:, 0], "u")
        _fig_csv(os.path.join(args.out, "fig_uF2.csv"), t, off[:, :, 1],
                 rec.u_F[:, 1], "u")
        _fig_csv(os.path.join(args.out, "fig_uL.csv"), t,
                 profile.leader_offset[:, :, 0], rec.u_L[:, 0], "u")
        _write_csv(os.path.join(args.out, "fig_x.csv"), "t,x,x_hat",
                   [f"{format_float(t[k])},{format_float(rec.x[k])},"
                    f"{format_float(rec.x_hat[k])}" for k in range(len(t))])

    print(f"simulated {args.paths} paths: "
          f"J_F = {jf.mean:.6g} (se {jf.se:.2g}), "
          f"J_L = {jl.mean:.6g} (se {jl.se:.2g})")
    return EXIT_OK


def cmd_verify(args) -> int:
    spec = load_problem(resolve_problem(args.problem), steps=args.steps)
    report = check_assumptions(spec, tol_invert=args.tol_invert)
    results: list[tuple[str, bool, str]] = []
    pert_rows: list[str] = []

    def add(name: str, ok: bool, detail: str):
        results.append((name, ok, detail))
        print(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")

    def collect_rows(check: str, rep) -> None:
        for r in rep.rows:
            pert_rows.append(
                f"{check},{r.player},{r.direction},{format_float(r.eps)},"
                f"{format_float(r.mean_diff)},{format_float(r.se)},"
                f"{format_float(r.upsilon)},{int(r.ok)}")

    # envelope bound on the follower weight
    try:
        pf = follower.solve_PF(spec, args.scheme, args.tol_invert)
        env = follower.envelope(spec)
        chk = follower.check_envelope(pf.P_F, env)
        add("envelope", chk.ok,
            f"worst margin {chk.worst_margin:.3e} at t={chk.t:.3g}, "
            f"regime {chk.regime}")
    except SwitchbackError as exc:
        add("envelope", False, str(exc))

    # cross-solver agreement of the leader weight
    if report.L3:
        aug = leader.build_augmented(spec, args.tol_invert)
        P_L = leader.solve_PL(spec, aug, args.scheme)
        stacked = leader.solve_PL_blockform(spec, aug, args.scheme)
        worst = 0.0
        for i in range(1, spec.m + 1):
            worst = max(worst, float(np.max(np.abs(
                leader.extract_block_regime(stacked, i) - P_L.values[:, i - 1]))))
        add("cross-solver", worst <= 1e-8, f"max deviation {worst:.3e}")
    else:
        add("cross-solver", True, "skipped (L3 not satisfied)")

    # saddle point and leader optimality
    profile, grids = build_profile(spec, args.mode, args.scheme, args.tol_invert)
    if profile.state_dim == 1:
        sad = simulate.saddle_test(spec, profile, n=args.paths, seed=args.seed)
        collect_rows("saddle", sad)
        add("saddle", sad.all_ok,
            f"{sum(r.ok for r in sad.rows)}/{len(sad.rows)} inequalities inside "
            f"3-SE bands")
        led = simulate.leader_test(spec, profile, n=args.paths, seed=args.seed)
        collect_rows("leader", led)
        quad_ok = all(v <= 0.25 for v in led.quad_spread.values()) \
            if args.mode == "pricing" else True
        add("leader", led.all_ok and quad_ok,
            f"{sum(r.ok for r in led.rows)}/{len(led.rows)} inequalities, "
            f"quad spread {max(led.quad_spread.values(), default=0.0):.3g}")
    else:
        add("saddle", True, "skipped (stackelberg profile is state-coupled)")
        add("leader", True, "skipped (stackelberg profile is state-coupled)")

    # adjoint residual decay under grid refinement (scalar-state layer;
    # in stackelberg mode the follower layer is checked against u_L = 0)
    try:
        from .model import regrid
        res_mode = "followers" if args.mode == "stackelberg" else args.mode
        stats = []
        for Nk in (spec.N // 2, spec.N):
            s2 = regrid(spec, Nk)
            prof2, g2 = build_profile(s2, res_mode, args.scheme, args.tol_invert)
            if res_mode == "pricing":
                zero = RegimeGrid(values=np.zeros((Nk + 1, spec.m)), T=spec.T, N=Nk)
                stats.append(simulate.hamiltonian_residual(
                    s2, prof2, zero, zero, g2["p"], n=min(args.paths, 2000),
                    seed=args.seed))
            else:
                stats.append(simulate.hamiltonian_residual(
                    s2, prof2, g2["P_F"], g2["P_F_bar"], g2["phi"],
                    n=min(args.paths, 2000), seed=args.seed))
        ratio = stats[0].terminal_mean / max(stats[1].terminal_mean, 1e-300)
        ok = 1.6 <= ratio <= 2.4 or stats[1].terminal_mean < 1e-12
        add("hamiltonian", ok,
            f"terminal residual {stats[1].terminal_mean:.3e}, "
            f"halving ratio {ratio:.2f}")
    except SwitchbackError as exc:
        add("hamiltonian", False, str(exc))

    # martingale property of the compensated jump counts
    mart = simulate.martingale_residual_means(
        spec.generator, 1, spec.T, max(args.paths, 10000), args.seed)
    mart_ok = all(abs(est.mean) <= simulate.SE_BAND * est.se or est.se == 0.0
                  for est in mart.values())
    worst_pair = max(mart.items(),
                     key=lambda kv: abs(kv[1].mean) - simulate.SE_BAND * kv[1].se)
    add("martingale", mart_ok,
        f"worst pair {worst_pair[0]}: mean {worst_pair[1].mean:.3e} "
        f"(se {worst_pair[1].se:.3e})")

    # conditional-mean filter against a frozen chain ensemble
    chain = sample_chain(spec.generator, 1, spec.T, chain_stream(args.seed, 0))
    rows = simulate.filter_consistency(spec, profile, chain,
                                       n=min(args.paths, 10000), seed=args.seed,
                                       leader_layer=grids.get("layer"))
    add("filter", all(r.ok for r in rows),
        f"{sum(r.ok for r in rows)}/{len(rows)} checkpoints inside 3-SE bands")

    ok = all(r[1] for r in results)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        _write_csv(os.path.join(args.out, "verify_summary.csv"),
                   "check,ok,detail",
                   [f"{n},{int(o)},\"{d}\"" for n, o, d in results])
        _write_csv(os.path.join(args.out, "perturbations.csv"),
                   "check,player,direction,eps,mean_diff,se,upsilon,ok",
                   pert_rows)
    print(f"verify: {'ALL PASS' if ok else 'FAILURES PRESENT'}")
    return EXIT_OK if ok else EXIT_VERIFY


def make_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="switchback",
        description="Regime-switching LQ Stackelberg game solver",
    )
    sub = ap.add_subparsers(dest="command", required=True)
    for name, fn in (("check", cmd_check), ("solve", cmd_solve),
                     ("simulate", cmd_simulate), ("verify", cmd_verify)):
        p = sub.add_parser(name)
        p.add_argument("--problem", default="pricing.json",
                       help="problem JSON path or bundled name")
        p.add_argument("--out", default="out" if name != "check" else None,
                       help="output directory for CSV/JSON artifacts")
        p.add_argument("--seed", type=int, default=20240901)
        p.add_argument("--paths", type=int, default=2000)
        p.add_argument("--steps", type=int, default=None,
                       help="override the problem grid")
        p.add_argument("--mode", default="pricing",
                       choices=("followers", "stackelberg", "pricing"))
        p.add_argument("--scheme", default="rk4", choices=("rk4", "euler"))
        p.add_argument("--tol-invert", dest="tol_invert", type=float,
                       default=1e-10)
        p.add_argument("--quadrature", default="left",
                       choices=("left", "trapezoid"))
        p.set_defaults(fn=fn)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = make_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ProblemFormatError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except SwitchbackError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
