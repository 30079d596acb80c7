"""Euler-Maruyama closed-loop simulation, Monte Carlo cost estimation, and
the numerical verification battery (saddle point, leader optimality,
adjoint-consistency residuals, filter and martingale checks).

Conventions
-----------
Per step k the regime is the left limit at t_k; controls and coefficients are
evaluated there (piecewise-constant from the left).  The conditional-mean
filter is advanced by its exact ODE given the chain: chain-conditional
expectation of the state equation kills the Brownian term and replaces the
state by the filter inside the affine feedback.  Running costs use
left-Riemann quadrature to match the Euler scheme (trapezoid behind a flag).

In pricing mode the terminal costs are linear in the terminal filter value
and enter unhalved, so that the solved adjoints are exactly the
first-order-condition multipliers: the followers' terminal weight is
bar_G_F, and the leader's is bar_G_L - bar_G_F.  The leader's weight nets
out the terminal transfer of the zero-sum follower pair; it is the objective
whose unique minimizer the leader adjoint (terminal bar_G_L - bar_G_F)
characterizes, and the one under which leader deviations are purely
quadratic.

Every ensemble reduction sums with math.fsum, so estimates are invariant
under path-order permutation and independent of any parallel scheduling of
the paths themselves.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .chains import (ChainPath, Generator, brownian_stream, chain_stream,
                     martingale_ledger, project_to_grid, sample_chain)
from .errors import GridMismatch
from .grids import RegimeGrid
from .model import ProblemSpec
from .strategies import StrategyProfile

EPS_DEFAULT = (0.05, 0.1, 0.2)
SE_BAND = 3.0


@dataclass(frozen=True)
class MCEstimate:
    mean: float
    se: float
    n: int
    seed: int


def mc_estimate(values: np.ndarray, seed: int = 0) -> MCEstimate:
    n = len(values)
    mean = math.fsum(values) / n
    if n > 1:
        var = math.fsum((v - mean) ** 2 for v in values) / (n - 1)
        se = math.sqrt(var / n)
    else:
        se = 0.0
    return MCEstimate(mean=mean, se=se, n=n, seed=seed)


@dataclass(frozen=True)
class PathRecord:
    """Full trajectory of one path (scalar state component)."""

    t: np.ndarray
    regimes: np.ndarray
    x: np.ndarray
    x_hat: np.ndarray
    u_L: np.ndarray
    u_F: np.ndarray
    terminal_regime: int


@dataclass
class EnsembleResult:
    J_F: np.ndarray
    J_L: np.ndarray
    terminal_regimes: np.ndarray
    records: list[PathRecord]
    checkpoint_x: np.ndarray | None
    seed: int
    x_matrix: np.ndarray | None = None
    xh_matrix: np.ndarray | None = None
    X_full: np.ndarray | None = None
    Xh_full: np.ndarray | None = None
    grid_states: np.ndarray | None = None
    chains: list[ChainPath] | None = None
    dW: np.ndarray | None = None

    def estimate_J_F(self) -> MCEstimate:
        return mc_estimate(self.J_F, self.seed)

    def estimate_J_L(self) -> MCEstimate:
        return mc_estimate(self.J_L, self.seed)


@dataclass(frozen=True)
class LeaderLayer:
    """Grids needed to drive the stacked dynamics in full-Stackelberg mode."""

    B1: np.ndarray          # (N+1, m, 2, 2)
    P_L: RegimeGrid
    P_L_bar: RegimeGrid
    tau: RegimeGrid


def _draw_chains(spec: ProblemSpec, n: int, seed: int,
                 fixed_chain: ChainPath | None) -> tuple[list[ChainPath], np.ndarray]:
    chains = []
    grid_states = np.empty((n, spec.N + 1), dtype=np.int64)
    proj = None
    for p in range(n):
        if fixed_chain is not None:
            ch = fixed_chain
            if proj is None:
                proj = project_to_grid(ch, spec.N, spec.T)
            grid_states[p] = proj
        else:
            ch = sample_chain(spec.generator, 1, spec.T, chain_stream(seed, p))
            grid_states[p] = project_to_grid(ch, spec.N, spec.T)
        chains.append(ch)
    return chains, grid_states


def _draw_noise(spec: ProblemSpec, n: int, seed: int) -> np.ndarray:
    dt = spec.dt
    dW = np.empty((n, spec.N))
    for p in range(n):
        dW[p] = brownian_stream(seed, p).normal(0.0, math.sqrt(dt), spec.N)
    return dW


@dataclass(frozen=True)
class SimCache:
    """Frozen chain/noise draws for common-random-number reruns."""

    seed: int
    chains: list[ChainPath]
    grid_states: np.ndarray
    dW: np.ndarray


def make_sim_cache(spec: ProblemSpec, n: int, seed: int,
                   fixed_chain: ChainPath | None = None) -> SimCache:
    chains, grid_states = _draw_chains(spec, n, seed, fixed_chain)
    return SimCache(seed=seed, chains=chains, grid_states=grid_states,
                    dW=_draw_noise(spec, n, seed))


def _run_offsets_only(spec: ProblemSpec, profile: StrategyProfile, n: int,
                      seed: int, chains: list[ChainPath],
                      grid_states: np.ndarray, dW: np.ndarray, record: int,
                      keep_state: bool,
                      checkpoints: tuple[int, ...] = ()) -> EnsembleResult:
    """Scalar-state fast path for pure regime-time control tables.

    With no state feedback, every control-dependent drift/diffusion/cost
    term is a per-(node, regime) table, so the step only gathers scalar
    coefficient fields.  Left-Riemann quadrature; same output contract as
    simulate_paths.
    """
    N, dt = spec.N, spec.dt
    dyn, fc, lc = spec.dynamics, spec.follower_cost, spec.leader_cost
    r0 = grid_states - 1
    uF_tab, uL_tab = profile.follower_offset, profile.leader_offset

    drift_const = (
        np.einsum("kid,kid->ki", dyn.B_L, uL_tab)
        + np.einsum("kif,kif->ki", spec.B_F, uF_tab) + dyn.b
    )
    diff_const = (
        np.einsum("kid,kid->ki", dyn.D_L, uL_tab)
        + np.einsum("kif,kif->ki", spec.D_F, uF_tab) + dyn.sigma
    )
    uRuF = np.einsum("kif,kifg,kig->ki", uF_tab, spec.R_F, uF_tab)
    uRuL = np.einsum("kid,kide,kie->ki", uL_tab, lc.R_L, uL_tab)
    A, Ab = dyn.A, dyn.A_bar
    C, Cb = dyn.C, dyn.C_bar

    x = np.full(n, spec.x0)
    xh = np.full(n, spec.x0)
    J_F = np.zeros(n)
    J_L = np.zeros(n)
    n_keep = n if keep_state else record
    x_store = np.empty((n_keep, N + 1)) if n_keep else None
    xh_store = np.empty((n_keep, N + 1)) if n_keep else None
    cp_x = np.empty((len(checkpoints), n)) if checkpoints else None

    for k in range(N + 1):
        r = r0[:, k]
        if n_keep:
            x_store[:, k] = x[:n_keep]
            xh_store[:, k] = xh[:n_keep]
        if checkpoints and k in checkpoints:
            cp_x[checkpoints.index(k), :] = x
        if k == N:
            break
        J_F += (0.5 * dt) * (fc.Q_F[k, r] * x * x
                             + fc.Q_F_bar[k, r] * xh * xh + uRuF[k, r])
        J_L += (0.5 * dt) * (lc.Q_L[k, r] * x * x
                             + lc.Q_L_bar[k, r] * xh * xh + uRuL[k, r])
        a = A[k, r]
        ab = Ab[k, r]
        drift = a * x + ab * xh + drift_const[k, r]
        diff = C[k, r] * x + Cb[k, r] * xh + diff_const[k, r]
        drift_h = (a + ab) * xh + drift_const[k, r]
        x = x + drift * dt + diff * dW[:, k]
        xh = xh + drift_h * dt

    term_r = np.array([ch.state_at(spec.T) for ch in chains], dtype=np.int64)
    tr = term_r - 1
    if profile.mode == "pricing":
        J_F += fc.G_F_bar[tr] * xh
        J_L += (lc.G_L_bar[tr] - fc.G_F_bar[tr]) * xh
    else:
        J_F += 0.5 * (fc.G_F[tr] * x ** 2 + fc.G_F_bar[tr] * xh ** 2)
        J_L += 0.5 * (lc.G_L[tr] * x ** 2 + lc.G_L_bar[tr] * xh ** 2)

    records = []
    if record:
        t = spec.t_nodes
        nodes = np.arange(N + 1)
        for p in range(record):
            records.append(PathRecord(
                t=t, regimes=grid_states[p].copy(),
                x=x_store[p].copy(), x_hat=xh_store[p].copy(),
                u_L=uL_tab[nodes, r0[p]], u_F=uF_tab[nodes, r0[p]],
                terminal_regime=int(term_r[p]),
            ))
    res = EnsembleResult(J_F=J_F, J_L=J_L, terminal_regimes=term_r,
                         records=records, checkpoint_x=cp_x, seed=seed)
    if keep_state:
        res.x_matrix = x_store
        res.xh_matrix = xh_store
        res.grid_states = grid_states
        res.chains = chains
        res.dW = dW
    return res


def simulate_paths(spec: ProblemSpec, profile: StrategyProfile, n: int, seed: int,
                   fixed_chain: ChainPath | None = None,
                   leader_layer: LeaderLayer | None = None,
                   record: int = 0,
                   checkpoints: tuple[int, ...] = (),
                   quadrature: str = "left",
                   keep_state: bool = False,
                   cache: SimCache | None = None) -> EnsembleResult:
    """Simulate n closed-loop paths and accumulate both cost functionals.

    Path k uses chain stream (0, k) and Brownian stream (1, k) of ``seed``,
    so ensembles of different sizes share their leading paths and perturbed
    reruns pair by common random numbers.  ``fixed_chain`` freezes one chain
    for every path (filter-consistency studies); ``record`` keeps full
    trajectories for that many leading paths; ``keep_state`` retains the
    (x, x_hat) matrices, grid regimes, chains and noise for post-processing.
    """
    if profile.N != spec.N or abs(profile.T - spec.T) > 1e-12 or profile.m != spec.m:
        raise GridMismatch("strategy grid does not match the problem grid")
    if profile.mode == "stackelberg" and leader_layer is None:
        raise ValueError("stackelberg mode needs the leader layer grids")
    if quadrature not in ("left", "trapezoid"):
        raise ValueError(f"unknown quadrature {quadrature!r}")

    N, dt = spec.N, spec.dt
    sd = profile.state_dim
    dyn, fc, lc = spec.dynamics, spec.follower_cost, spec.leader_cost
    if cache is not None:
        if cache.seed != seed or len(cache.chains) != n:
            raise ValueError("cache does not match (n, seed)")
        chains, grid_states, dW = cache.chains, cache.grid_states, cache.dW
    else:
        chains, grid_states = _draw_chains(spec, n, seed, fixed_chain)
        dW = _draw_noise(spec, n, seed)
    r0 = grid_states - 1

    offsets_only = (
        sd == 1
        and not np.any(profile.follower_K)
        and not np.any(profile.follower_K_hat)
        and not np.any(profile.leader_K)
        and not np.any(profile.leader_K_hat)
    )
    if offsets_only and quadrature == "left":
        return _run_offsets_only(spec, profile, n, seed, chains, grid_states,
                                 dW, record, keep_state, checkpoints)

    X = np.zeros((n, sd))
    X[:, 0] = spec.x0
    X_hat = X.copy()
    J_F = np.zeros(n)
    J_L = np.zeros(n)

    BF, DF, RF = spec.B_F, spec.D_F, spec.R_F
    pricing = profile.mode == "pricing"
    trapezoid = quadrature == "trapezoid"

    n_keep = n if keep_state else record
    x_store = np.empty((n_keep, N + 1)) if n_keep else None
    xh_store = np.empty((n_keep, N + 1)) if n_keep else None
    X_store = np.empty((n_keep, N + 1, sd)) if (n_keep and sd > 1) else None
    Xh_store = np.empty((n_keep, N + 1, sd)) if (n_keep and sd > 1) else None
    cp_x = np.empty((len(checkpoints), n)) if checkpoints else None
    rec_uL = np.empty((record, N + 1, spec.m0)) if record else None
    rec_uF = np.empty((record, N + 1, spec.mF)) if record else None

    for k in range(N + 1):
        r = r0[:, k]
        regs = grid_states[:, k]
        uF = profile.follower_control(k, regs, X, X_hat)
        uL = profile.leader_control(k, regs, X, X_hat)
        x = X[:, 0]
        xh = X_hat[:, 0]

        if n_keep:
            x_store[:, k] = x[:n_keep]
            xh_store[:, k] = xh[:n_keep]
            if X_store is not None:
                X_store[:, k] = X[:n_keep]
                Xh_store[:, k] = X_hat[:n_keep]
        if record:
            rec_uL[:, k] = uL[:record]
            rec_uF[:, k] = uF[:record]
        if checkpoints and k in checkpoints:
            cp_x[checkpoints.index(k), :] = x

        uRu_F = np.einsum("nf,nfg,ng->n", uF, RF[k, r], uF)
        uRu_L = np.einsum("nf,nfg,ng->n", uL, lc.R_L[k, r], uL)
        f_run = 0.5 * (fc.Q_F[k, r] * x ** 2 + fc.Q_F_bar[k, r] * xh ** 2 + uRu_F)
        l_run = 0.5 * (lc.Q_L[k, r] * x ** 2 + lc.Q_L_bar[k, r] * xh ** 2 + uRu_L)
        if k < N:
            w = 0.5 * dt if (trapezoid and k == 0) else dt
            J_F += w * f_run
            J_L += w * l_run
        elif trapezoid:
            J_F += 0.5 * dt * f_run
            J_L += 0.5 * dt * l_run
        if k == N:
            break

        uF_h = profile.follower_control(k, regs, X_hat, X_hat)
        uL_h = profile.leader_control(k, regs, X_hat, X_hat)
        if sd == 1:
            drift = (
                dyn.A[k, r] * x + dyn.A_bar[k, r] * xh
                + np.einsum("nd,nd->n", dyn.B_L[k, r], uL)
                + np.einsum("nf,nf->n", BF[k, r], uF)
                + dyn.b[k, r]
            )
            diff = (
                dyn.C[k, r] * x + dyn.C_bar[k, r] * xh
                + np.einsum("nd,nd->n", dyn.D_L[k, r], uL)
                + np.einsum("nf,nf->n", DF[k, r], uF)
                + dyn.sigma[k, r]
            )
            drift_h = (
                (dyn.A[k, r] + dyn.A_bar[k, r]) * xh
                + np.einsum("nd,nd->n", dyn.B_L[k, r], uL_h)
                + np.einsum("nf,nf->n", BF[k, r], uF_h)
                + dyn.b[k, r]
            )
            X = X + (drift * dt + diff * dW[:, k])[:, None]
            X_hat = X_hat + (drift_h * dt)[:, None]
        else:
            ll = leader_layer
            Y = (
                np.einsum("nab,nb->na", ll.P_L.values[k, r], X)
                + np.einsum("nab,nb->na", ll.P_L_bar.values[k, r], X_hat)
                + ll.tau.values[k, r]
            )
            Y_hat = (
                np.einsum("nab,nb->na",
                          ll.P_L.values[k, r] + ll.P_L_bar.values[k, r], X_hat)
                + ll.tau.values[k, r]
            )
            A = dyn.A[k, r][:, None]
            Ab = dyn.A_bar[k, r][:, None]
            Eb = np.zeros((n, 2))
            Eb[:, 0] = dyn.b[k, r]
            Es = np.zeros((n, 2))
            Es[:, 0] = dyn.sigma[k, r]
            drift2 = A * X + Ab * X_hat + np.einsum("nab,nb->na", ll.B1[k, r], Y) + Eb
            diff2 = dyn.C[k, r][:, None] * X + Es
            drift2_h = ((A + Ab) * X_hat
                        + np.einsum("nab,nb->na", ll.B1[k, r], Y_hat) + Eb)
            X = X + drift2 * dt + diff2 * dW[:, k][:, None]
            X_hat = X_hat + drift2_h * dt

    term_r = np.array([ch.state_at(spec.T) for ch in chains], dtype=np.int64)
    tr = term_r - 1
    xN = X[:, 0]
    xhN = X_hat[:, 0]
    if pricing:
        J_F += fc.G_F_bar[tr] * xhN
        J_L += (lc.G_L_bar[tr] - fc.G_F_bar[tr]) * xhN
    else:
        J_F += 0.5 * (fc.G_F[tr] * xN ** 2 + fc.G_F_bar[tr] * xhN ** 2)
        J_L += 0.5 * (lc.G_L[tr] * xN ** 2 + lc.G_L_bar[tr] * xhN ** 2)

    records = []
    if record:
        t = spec.t_nodes
        for p in range(record):
            records.append(PathRecord(
                t=t, regimes=grid_states[p].copy(),
                x=x_store[p].copy(), x_hat=xh_store[p].copy(),
                u_L=rec_uL[p].copy(), u_F=rec_uF[p].copy(),
                terminal_regime=int(term_r[p]),
            ))
    res = EnsembleResult(J_F=J_F, J_L=J_L, terminal_regimes=term_r,
                         records=records, checkpoint_x=cp_x, seed=seed)
    if keep_state:
        res.x_matrix = x_store
        res.xh_matrix = xh_store
        res.X_full = X_store
        res.Xh_full = Xh_store
        res.grid_states = grid_states
        res.chains = chains
        res.dW = dW
    return res


# ---------------------------------------------------------------------------
# Perturbation tests (common random numbers)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PerturbationRow:
    player: str
    direction: str
    eps: float
    mean_diff: float
    se: float
    upsilon: float
    ok: bool


@dataclass(frozen=True)
class PerturbationReport:
    rows: list[PerturbationRow]
    quad_spread: dict[str, float] = field(default_factory=dict)

    @property
    def all_ok(self) -> bool:
        return all(r.ok for r in self.rows)


def default_directions(spec: ProblemSpec) -> dict[str, np.ndarray]:
    """Constant +/-1 fields and the regime-1 indicator."""
    shape = (spec.N + 1, spec.m)
    ind = np.zeros(shape)
    ind[:, 0] = 1.0
    return {
        "const+1": np.ones(shape),
        "const-1": -np.ones(shape),
        "regime1": ind,
    }


def _paired_diff(base: np.ndarray, pert: np.ndarray, seed: int) -> MCEstimate:
    return mc_estimate(pert - base, seed)


def saddle_test(spec: ProblemSpec, profile: StrategyProfile,
                directions: dict[str, np.ndarray] | None = None,
                eps_grid: tuple[float, ...] = EPS_DEFAULT,
                n: int = 20000, seed: int = 0) -> PerturbationReport:
    """Two-sided saddle inequality on unilateral follower deviations.

    For every direction and epsilon, the perturbed run shares the baseline's
    chain and Brownian streams; per-path cost differences are averaged with
    a 3-standard-error acceptance band: follower-1 deviations must not
    lower the cost, follower-2 deviations must not raise it.  The scaled
    second difference 2*diff/eps^2 estimates the deviation curvature, whose
    sign is positive for follower 1 and negative for follower 2.
    """
    dirs = directions if directions is not None else default_directions(spec)
    cache = make_sim_cache(spec, n, seed)
    base = simulate_paths(spec, profile, n, seed, cache=cache)
    rows = []
    for player, sign in (("F1", +1.0), ("F2", -1.0)):
        for name, d in dirs.items():
            for eps in eps_grid:
                pert = profile.shifted(player, d, eps)
                res = simulate_paths(spec, pert, n, seed, cache=cache)
                est = _paired_diff(base.J_F, res.J_F, seed)
                ok = (est.mean >= -SE_BAND * est.se if sign > 0
                      else est.mean <= SE_BAND * est.se)
                ups = 2.0 * est.mean / eps ** 2 if eps else 0.0
                rows.append(PerturbationRow(player, name, eps, est.mean,
                                            est.se, ups, bool(ok)))
    return PerturbationReport(rows=rows)


def leader_test(spec: ProblemSpec, profile: StrategyProfile,
                directions: dict[str, np.ndarray] | None = None,
                eps_grid: tuple[float, ...] = EPS_DEFAULT,
                n: int = 20000, seed: int = 0,
                responder=None) -> PerturbationReport:
    """Leader optimality against regime-deterministic control deviations.

    ``responder(u_L_grid) -> StrategyProfile`` rebuilds the followers'
    response to a perturbed leader grid; by default the followers' controls
    are left unchanged, which is exact in pricing mode (the response does
    not depend on u_L there).  Paired differences must be >= -3 SE, and the
    quadratic spread max |diff/eps^2 - mean| / mean over the eps grid is
    reported per direction (the first-order term vanishes at the optimum,
    leaving a pure control-cost quadratic).
    """
    dirs = directions if directions is not None else default_directions(spec)
    cache = make_sim_cache(spec, n, seed)
    base = simulate_paths(spec, profile, n, seed, cache=cache)
    rows = []
    spread = {}
    for name, d in dirs.items():
        ratios = []
        for eps in eps_grid:
            if responder is None:
                pert = profile.shifted("L", d, eps)
            else:
                u_L = profile.leader_offset + eps * d[:, :, None]
                pert = responder(u_L)
            res = simulate_paths(spec, pert, n, seed, cache=cache)
            est = _paired_diff(base.J_L, res.J_L, seed)
            ok = est.mean >= -SE_BAND * est.se
            ups = 2.0 * est.mean / eps ** 2 if eps else 0.0
            if eps:
                ratios.append(est.mean / eps ** 2)
            rows.append(PerturbationRow("L", name, eps, est.mean,
                                        est.se, ups, bool(ok)))
        if ratios:
            rbar = math.fsum(ratios) / len(ratios)
            spread[name] = (max(abs(r - rbar) for r in ratios) / abs(rbar)
                            if rbar != 0.0 else math.inf)
    return PerturbationReport(rows=rows, quad_spread=spread)


# ---------------------------------------------------------------------------
# Adjoint-consistency (Hamiltonian) residuals
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ResidualStats:
    terminal_mean: float
    terminal_max: float
    step_mean: float
    step_max: float
    n: int
    N: int


def hamiltonian_residual(spec: ProblemSpec, profile: StrategyProfile,
                         P_F: RegimeGrid, P_F_bar: RegimeGrid, phi: RegimeGrid,
                         n: int = 1000, seed: int = 0) -> ResidualStats:
    """Consistency of the affine adjoint representation along Euler paths.

    The adjoint is reconstructed as p_k = P_F x_k + P_F_bar x_hat_k + phi
    and its Brownian integrand from the diffusion loading of the state.
    Two residuals are reported: (a) the terminal gap after integrating the
    adjoint equation forward along each path from the reconstructed p_0,
    driving it with the reconstructed integrands; (b) the one-step drift
    residual of the reconstructed p.  Chain jumps enter at node level: the
    jump integrand is evaluated at the first node after the jump, the only
    point where the Euler path knows the state (an interior jump state
    would carry irreducible Brownian-bridge noise of order sqrt(dt)), and
    the compensator runs at rate lambda_ij off the left node.  Both
    residuals shrink at first order in the step size.
    """
    res = simulate_paths(spec, profile, n, seed, keep_state=True)
    x, xh = res.x_matrix, res.xh_matrix
    gs = res.grid_states
    r0 = gs - 1
    N, dt = spec.N, spec.dt
    dyn, fc = spec.dynamics, spec.follower_cost
    pricing = profile.mode == "pricing"

    P = P_F.values
    Pb = P_F_bar.values
    ph = phi.values
    rates = spec.generator.rates

    # reconstructed p, p_hat on nodes
    p_rec = np.empty((n, N + 1))
    ph_rec = np.empty((n, N + 1))
    for k in range(N + 1):
        r = r0[:, k]
        p_rec[:, k] = P[k, r] * x[:, k] + Pb[k, r] * xh[:, k] + ph[k, r]
        ph_rec[:, k] = (P[k, r] + Pb[k, r]) * xh[:, k] + ph[k, r]

    # reconstructed q and the drift of the adjoint equation, per node
    def node_terms(k: int):
        r = r0[:, k]
        regs = gs[:, k]
        uF = profile.follower_control(k, regs, x[:, k][:, None], xh[:, k][:, None])
        uL = profile.leader_control(k, regs, x[:, k][:, None], xh[:, k][:, None])
        uF_h = profile.follower_control(k, regs, xh[:, k][:, None], xh[:, k][:, None])
        uL_h = profile.leader_control(k, regs, xh[:, k][:, None], xh[:, k][:, None])
        diff = (
            dyn.C[k, r] * x[:, k] + dyn.C_bar[k, r] * xh[:, k]
            + np.einsum("nd,nd->n", dyn.D_L[k, r], uL)
            + np.einsum("nf,nf->n", spec.D_F[k, r], uF)
            + dyn.sigma[k, r]
        )
        diff_h = (
            (dyn.C[k, r] + dyn.C_bar[k, r]) * xh[:, k]
            + np.einsum("nd,nd->n", dyn.D_L[k, r], uL_h)
            + np.einsum("nf,nf->n", spec.D_F[k, r], uF_h)
            + dyn.sigma[k, r]
        )
        q = P[k, r] * diff
        q_h = P[k, r] * diff_h
        return r, q, q_h

    # jump-integrand compensator sum_j lambda_ij k_ij at each node
    def compensator(k: int, p_states: np.ndarray) -> np.ndarray:
        r = r0[:, k]
        # k_ij needs the would-be value of p in every regime j
        out = np.zeros(len(r))
        for j in range(spec.m):
            pj = P[k, j] * x[:, k] + Pb[k, j] * xh[:, k] + ph[k, j]
            lam = rates[r, j]
            out += lam * (pj - p_states)
        return out

    step_abs = []

    p_fwd = p_rec[:, 0].copy()
    for k in range(N):
        r, q, q_h = node_terms(k)
        drift_fwd = (
            dyn.A[k, r] * p_fwd + dyn.A_bar[k, r] * ph_rec[:, k]
            + dyn.C[k, r] * q + dyn.C_bar[k, r] * q_h
            + fc.Q_F[k, r] * x[:, k] + fc.Q_F_bar[k, r] * xh[:, k]
        )
        drift_rec = (
            dyn.A[k, r] * p_rec[:, k] + dyn.A_bar[k, r] * ph_rec[:, k]
            + dyn.C[k, r] * q + dyn.C_bar[k, r] * q_h
            + fc.Q_F[k, r] * x[:, k] + fc.Q_F_bar[k, r] * xh[:, k]
        )
        comp = compensator(k, p_rec[:, k])
        dWk = res.dW[:, k]
        # node-level jump increment of the reconstructed process
        r_next = r0[:, k + 1]
        jump = (
            (P[k + 1, r_next] - P[k + 1, r]) * x[:, k + 1]
            + (Pb[k + 1, r_next] - Pb[k + 1, r]) * xh[:, k + 1]
            + (ph[k + 1, r_next] - ph[k + 1, r])
        )
        p_fwd = p_fwd - drift_fwd * dt + q * dWk - comp * dt + jump
        step = (p_rec[:, k + 1] - p_rec[:, k] + drift_rec * dt - q * dWk
                + comp * dt - jump)
        step_abs.append(np.abs(step))

    tr = res.terminal_regimes - 1
    if pricing:
        target = fc.G_F_bar[tr]
    else:
        target = fc.G_F[tr] * x[:, N] + fc.G_F_bar[tr] * xh[:, N]
    term_resid = np.abs(p_fwd - target)
    step_mat = np.stack(step_abs, axis=1)
    return ResidualStats(
        terminal_mean=float(np.mean(term_resid)),
        terminal_max=float(np.max(term_resid)),
        step_mean=float(np.mean(step_mat)),
        step_max=float(np.max(step_mat)),
        n=n, N=N,
    )


# ---------------------------------------------------------------------------
# Filter and martingale checks
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FilterCheckRow:
    k: int
    ensemble_mean: float
    se: float
    filter_value: float
    ok: bool


def filter_consistency(spec: ProblemSpec, profile: StrategyProfile,
                       chain: ChainPath, n: int = 10000, seed: int = 0,
                       n_checkpoints: int = 10,
                       leader_layer: LeaderLayer | None = None
                       ) -> list[FilterCheckRow]:
    """Ensemble mean over one frozen chain vs the per-path filter ODE."""
    cps = tuple(int(round(j * spec.N / n_checkpoints))
                for j in range(1, n_checkpoints + 1))
    res = simulate_paths(spec, profile, n, seed, fixed_chain=chain,
                         checkpoints=cps, keep_state=True,
                         leader_layer=leader_layer)
    rows = []
    for idx, k in enumerate(cps):
        est = mc_estimate(res.checkpoint_x[idx], seed)
        xh = float(res.xh_matrix[0, k])
        ok = abs(est.mean - xh) <= SE_BAND * est.se
        rows.append(FilterCheckRow(k=k, ensemble_mean=est.mean, se=est.se,
                                   filter_value=xh, ok=bool(ok)))
    return rows


def martingale_residual_means(gen: Generator, i0: int, T: float, n: int,
                              seed: int) -> dict[tuple[int, int], MCEstimate]:
    """Sample means of the compensated jump counts M_ij(T) over n chains."""
    m = gen.m
    vals = {(i, j): np.empty(n) for i in range(1, m + 1)
            for j in range(1, m + 1) if i != j}
    for p in range(n):
        ch = sample_chain(gen, i0, T, chain_stream(seed, p))
        led = martingale_ledger(ch, gen, T)
        resid = led.residuals
        for (i, j) in vals:
            vals[(i, j)][p] = resid[i - 1, j - 1]
    return {key: mc_estimate(v, seed) for key, v in vals.items()}
