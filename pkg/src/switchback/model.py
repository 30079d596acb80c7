"""Problem specification: dynamics and cost data per (time, regime).

All coefficients are deterministic functions of time and regime, stored on
one uniform grid of N+1 nodes over [0, T] (linear interpolation between
nodes).  This keeps every backward equation in the library Markovian.

JSON schema (see also README): top-level keys ``generator``, ``horizon``,
``steps``, ``dims``, ``x0``, ``dynamics``, ``follower_cost``, ``leader_cost``.
``dynamics`` / ``*_cost`` are lists with one object per regime.  Each entry is
either constant in time (a scalar, or one vector/matrix of the entity's
natural shape) or time-varying (a list of N+1 such values).  Scalars are
accepted wherever the natural shape is 1x1.  Terminal weights (G_*) carry no
time axis.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .chains import Generator, validate_generator
from .errors import ProblemFormatError

TOL_INVERT = 1e-10
TOL_SYM = 1e-12


@dataclass(frozen=True)
class DynamicsCoefficients:
    """Drift/diffusion loadings of the scalar state, per (node, regime)."""

    A: np.ndarray          # (N+1, m)
    A_bar: np.ndarray      # (N+1, m)
    C: np.ndarray          # (N+1, m)
    C_bar: np.ndarray      # (N+1, m)
    B_L: np.ndarray        # (N+1, m, m0)
    B_F1: np.ndarray       # (N+1, m, m1)
    B_F2: np.ndarray       # (N+1, m, m2)
    D_L: np.ndarray        # (N+1, m, m0)
    D_F1: np.ndarray       # (N+1, m, m1)
    D_F2: np.ndarray       # (N+1, m, m2)
    b: np.ndarray          # (N+1, m)
    sigma: np.ndarray      # (N+1, m)


@dataclass(frozen=True)
class FollowerCost:
    Q_F: np.ndarray        # (N+1, m)
    Q_F_bar: np.ndarray    # (N+1, m)
    R_F1: np.ndarray       # (N+1, m, m1, m1)
    R_F2: np.ndarray       # (N+1, m, m2, m2)
    S_F: np.ndarray        # (N+1, m, m1, m2)
    G_F: np.ndarray        # (m,)
    G_F_bar: np.ndarray    # (m,)


@dataclass(frozen=True)
class LeaderCost:
    Q_L: np.ndarray        # (N+1, m)
    Q_L_bar: np.ndarray    # (N+1, m)
    R_L: np.ndarray        # (N+1, m, m0, m0)
    G_L: np.ndarray        # (m,)
    G_L_bar: np.ndarray    # (m,)


@dataclass(frozen=True)
class ProblemSpec:
    """Immutable problem data; safe to share across threads."""

    generator: Generator
    T: float
    N: int
    m0: int
    m1: int
    m2: int
    x0: float
    dynamics: DynamicsCoefficients
    follower_cost: FollowerCost
    leader_cost: LeaderCost

    @property
    def m(self) -> int:
        return self.generator.m

    @property
    def mF(self) -> int:
        return self.m1 + self.m2

    @property
    def dt(self) -> float:
        return self.T / self.N

    @property
    def t_nodes(self) -> np.ndarray:
        return np.arange(self.N + 1) * self.dt

    # stacked follower blocks, built once on first use
    @property
    def B_F(self) -> np.ndarray:
        """(N+1, m, m1+m2) row [B_F1, B_F2]."""
        return np.concatenate([self.dynamics.B_F1, self.dynamics.B_F2], axis=2)

    @property
    def D_F(self) -> np.ndarray:
        return np.concatenate([self.dynamics.D_F1, self.dynamics.D_F2], axis=2)

    @property
    def R_F(self) -> np.ndarray:
        """(N+1, m, mF, mF) block [[R_F1, S_F], [S_F^T, R_F2]]."""
        fc = self.follower_cost
        top = np.concatenate([fc.R_F1, fc.S_F], axis=3)
        bot = np.concatenate([np.swapaxes(fc.S_F, 2, 3), fc.R_F2], axis=3)
        return np.concatenate([top, bot], axis=2)


# ---------------------------------------------------------------------------
# JSON parsing
# ---------------------------------------------------------------------------

_DYN_SCALARS = ("A", "A_bar", "C", "C_bar", "b", "sigma")
_DYN_VECTORS = {"B_L": "m0", "B_F1": "m1", "B_F2": "m2",
                "D_L": "m0", "D_F1": "m1", "D_F2": "m2"}
_FC_SCALARS = ("Q_F", "Q_F_bar")
_FC_MATRICES = {"R_F1": ("m1", "m1"), "R_F2": ("m2", "m2"), "S_F": ("m1", "m2")}
_FC_TERMINAL = ("G_F", "G_F_bar")
_LC_SCALARS = ("Q_L", "Q_L_bar")
_LC_MATRICES = {"R_L": ("m0", "m0")}
_LC_TERMINAL = ("G_L", "G_L_bar")


def _depth(x) -> int:
    d = 0
    while isinstance(x, (list, tuple)):
        if len(x) == 0:
            raise ProblemFormatError("empty array in problem file")
        x = x[0]
        d += 1
    return d


def _parse_entry(raw, name: str, shape: tuple[int, ...], N: int) -> np.ndarray:
    """Parse one coefficient entry into shape (N+1, *shape).

    A scalar, or a single array of the natural shape, is constant in time;
    a list of N+1 such values is time-varying.
    """
    rank = len(shape)
    try:
        if np.isscalar(raw):
            if rank > 0 and any(s != 1 for s in shape):
                raise ProblemFormatError(
                    f"{name}: scalar given but shape {shape} expected"
                )
            return np.full((N + 1,) + shape, float(raw))
        d = _depth(raw)
        arr = np.asarray(raw, dtype=float)
    except ProblemFormatError:
        raise
    except Exception as exc:
        raise ProblemFormatError(f"{name}: cannot parse value ({exc})") from exc
    if d == rank:
        if arr.shape != shape:
            raise ProblemFormatError(f"{name}: shape {arr.shape} != {shape}")
        return np.broadcast_to(arr, (N + 1,) + shape).copy()
    if d == rank + 1:
        if arr.shape != (N + 1,) + shape:
            raise ProblemFormatError(
                f"{name}: time-varying entry must have {N + 1} values of "
                f"shape {shape}, got {arr.shape}"
            )
        return arr
    raise ProblemFormatError(f"{name}: nesting depth {d} not understood")


def _regime_objects(data, key: str, m: int) -> list[dict]:
    objs = data.get(key)
    if not isinstance(objs, list) or len(objs) != m:
        raise ProblemFormatError(f"{key}: expected a list of {m} regime objects")
    for o in objs:
        if not isinstance(o, dict):
            raise ProblemFormatError(f"{key}: entries must be objects")
    return objs


def _stack(objs: list[dict], name: str, shape: tuple[int, ...], N: int,
           default: float | None = 0.0) -> np.ndarray:
    per_regime = []
    for i, obj in enumerate(objs):
        if name not in obj:
            if default is None:
                raise ProblemFormatError(f"regime {i + 1}: missing {name}")
            raw = default
        else:
            raw = obj[name]
        per_regime.append(_parse_entry(raw, f"{name}[regime {i + 1}]", shape, N))
    return np.stack(per_regime, axis=1)


def _terminal(objs: list[dict], name: str) -> np.ndarray:
    vals = []
    for i, obj in enumerate(objs):
        v = obj.get(name, 0.0)
        if not np.isscalar(v):
            raise ProblemFormatError(f"{name}[regime {i + 1}]: must be a scalar")
        vals.append(float(v))
    return np.asarray(vals)


def load_problem(source, steps: int | None = None) -> ProblemSpec:
    """Build a ProblemSpec from a JSON file path, JSON string, or dict.

    ``steps`` overrides the file's grid; time-varying entries are linearly
    re-interpolated onto the new grid.
    """
    if isinstance(source, dict):
        data = source
    else:
        text = None
        try:
            with open(source) as fh:
                text = fh.read()
        except OSError:
            if isinstance(source, str) and source.lstrip().startswith("{"):
                text = source
            else:
                raise ProblemFormatError(f"cannot read problem file {source!r}")
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ProblemFormatError(f"invalid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ProblemFormatError("problem file must contain a JSON object")

    for key in ("generator", "horizon", "steps", "dims", "x0",
                "dynamics", "follower_cost", "leader_cost"):
        if key not in data:
            raise ProblemFormatError(f"missing top-level key {key!r}")

    gen = validate_generator(data["generator"])
    m = gen.m
    T = float(data["horizon"])
    if not (T > 0 and math.isfinite(T)):
        raise ProblemFormatError("horizon must be positive and finite")
    N_file = int(data["steps"])
    if N_file < 1:
        raise ProblemFormatError("steps must be >= 1")
    dims = data["dims"]
    try:
        m0, m1, m2 = int(dims["leader"]), int(dims["follower1"]), int(dims["follower2"])
    except (KeyError, TypeError) as exc:
        raise ProblemFormatError("dims must give leader/follower1/follower2") from exc
    if min(m0, m1, m2) < 1:
        raise ProblemFormatError("control dimensions must be >= 1")
    x0 = float(data["x0"])

    sizes = {"m0": m0, "m1": m1, "m2": m2}
    N = N_file

    dyn_objs = _regime_objects(data, "dynamics", m)
    fc_objs = _regime_objects(data, "follower_cost", m)
    lc_objs = _regime_objects(data, "leader_cost", m)

    dyn_fields: dict[str, np.ndarray] = {}
    for name in _DYN_SCALARS:
        dyn_fields[name] = _stack(dyn_objs, name, (), N)
    for name, dim in _DYN_VECTORS.items():
        dyn_fields[name] = _stack(dyn_objs, name, (sizes[dim],), N)

    fc_fields: dict[str, np.ndarray] = {}
    for name in _FC_SCALARS:
        fc_fields[name] = _stack(fc_objs, name, (), N)
    for name, (d1, d2) in _FC_MATRICES.items():
        default = 0.0 if name == "S_F" else None
        fc_fields[name] = _stack(fc_objs, name, (sizes[d1], sizes[d2]), N, default)
    for name in _FC_TERMINAL:
        fc_fields[name] = _terminal(fc_objs, name)

    lc_fields: dict[str, np.ndarray] = {}
    for name in _LC_SCALARS:
        lc_fields[name] = _stack(lc_objs, name, (), N)
    for name, (d1, d2) in _LC_MATRICES.items():
        lc_fields[name] = _stack(lc_objs, name, (sizes[d1], sizes[d2]), N, None)
    for name in _LC_TERMINAL:
        lc_fields[name] = _terminal(lc_objs, name)

    spec = ProblemSpec(
        generator=gen, T=T, N=N, m0=m0, m1=m1, m2=m2, x0=x0,
        dynamics=DynamicsCoefficients(**dyn_fields),
        follower_cost=FollowerCost(**fc_fields),
        leader_cost=LeaderCost(**lc_fields),
    )
    if steps is not None and steps != N:
        spec = regrid(spec, steps)
    _check_finite(spec)
    return spec


def _resample(arr: np.ndarray, N_new: int) -> np.ndarray:
    N_old = arr.shape[0] - 1
    if N_old == N_new:
        return arr
    s_old = np.arange(N_old + 1) / N_old
    s_new = np.arange(N_new + 1) / N_new
    flat = arr.reshape(N_old + 1, -1)
    out = np.empty((N_new + 1, flat.shape[1]))
    for c in range(flat.shape[1]):
        out[:, c] = np.interp(s_new, s_old, flat[:, c])
    return out.reshape((N_new + 1,) + arr.shape[1:])


def regrid(spec: ProblemSpec, N_new: int) -> ProblemSpec:
    """Same problem on a new uniform grid (linear re-interpolation)."""
    if N_new < 1:
        raise ProblemFormatError("steps must be >= 1")

    def conv(obj):
        fields = {}
        for name, val in vars(obj).items():
            fields[name] = _resample(val, N_new) if val.ndim >= 2 else val
        return type(obj)(**fields)

    return ProblemSpec(
        generator=spec.generator, T=spec.T, N=N_new,
        m0=spec.m0, m1=spec.m1, m2=spec.m2, x0=spec.x0,
        dynamics=conv(spec.dynamics),
        follower_cost=conv(spec.follower_cost),
        leader_cost=conv(spec.leader_cost),
    )


def _check_finite(spec: ProblemSpec) -> None:
    for obj in (spec.dynamics, spec.follower_cost, spec.leader_cost):
        for name, val in vars(obj).items():
            if not np.all(np.isfinite(val)):
                raise ProblemFormatError(f"{name} contains non-finite entries")


# ---------------------------------------------------------------------------
# Bound constants and the resulting envelope scale
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BoundConstants:
    """Tight grid maxima feeding the follower-Riccati a-priori bounds.

    rho_bar = c1*m*rho / (2*c3*(e^{c1 m T} - 1)) whenever c1, c3 > 0; both
    rho and rho_bar are continued by their c1 -> 0 limits, where
    (e^{c1 m T} - 1)/(c1 m) -> T.  ``degenerate`` marks that limit branch.
    """

    q0: float
    g0: float
    c1: float
    c2_bar_1: float
    c2_bar_2: float
    c3: float
    rho: float
    rho_bar: float
    degenerate: bool = False

    @property
    def c2_bar(self) -> float:
        return max(self.c2_bar_1, self.c2_bar_2)


def derive_constants(spec: ProblemSpec) -> BoundConstants:
    """Scan the coefficient grids for the bounding constants.

    q0 = max |Q_F|, g0 = max |G_F|, c1 = max 2|A| + C^2 + sum_j |lambda_ij|,
    c2_bar_k = max eigenvalue of D_Fk^T D_Fk (= |D_Fk|^2 for a row),
    c3 = max (B_Fk + D_Fk C)(B_Fk + D_Fk C)^T over followers k.
    """
    dyn, fc = spec.dynamics, spec.follower_cost
    q0 = float(np.max(np.abs(fc.Q_F)))
    g0 = float(np.max(np.abs(fc.G_F)))
    lam = np.abs(spec.generator.rates).sum(axis=1)
    c1 = float(np.max(2.0 * np.abs(dyn.A) + dyn.C ** 2 + lam[None, :]))
    c2_bar_1 = float(np.max(np.sum(dyn.D_F1 ** 2, axis=2)))
    c2_bar_2 = float(np.max(np.sum(dyn.D_F2 ** 2, axis=2)))
    c3 = 0.0
    for D, B in ((dyn.D_F1, dyn.B_F1), (dyn.D_F2, dyn.B_F2)):
        bc = B + D * dyn.C[:, :, None]
        c3 = max(c3, float(np.max(np.sum(bc ** 2, axis=2))))
    m, T = spec.m, spec.T
    if c1 > 0.0:
        eoc = (math.exp(c1 * m * T) - 1.0) / (c1 * m)
        growth = math.exp(c1 * m * T)
        degenerate = False
    else:
        eoc = T
        growth = 1.0
        degenerate = True
    s = q0 * eoc + g0 * growth
    rho = 4.0 * c3 * eoc * s
    rho_bar = 2.0 * s
    return BoundConstants(q0=q0, g0=g0, c1=c1, c2_bar_1=c2_bar_1,
                          c2_bar_2=c2_bar_2, c3=c3, rho=rho, rho_bar=rho_bar,
                          degenerate=degenerate)


# ---------------------------------------------------------------------------
# Assumption checks
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AssumptionReport:
    """Outcome of the structural checks; never raises, only reports.

    ``diagnostics`` maps a check name to (worst time, worst regime, value).
    Solvers consult only the checks they require; see required_checks().
    """

    F2: bool
    F3: bool
    F4: bool
    F5: bool
    L1: bool
    L2: bool
    L3: bool
    pricing_structure: bool
    constants: BoundConstants
    underline_c2: float
    diagnostics: dict[str, tuple[float, int, float]] = field(default_factory=dict)

    def holds(self, names: tuple[str, ...]) -> bool:
        return all(getattr(self, n) for n in names)


MODE_CHECKS = {
    "pricing": ("F2", "L1", "L3", "pricing_structure"),
    "followers": ("F2", "F3", "F4", "F5"),
    "stackelberg": ("F2", "F3", "L1", "L2", "L3"),
}


def required_checks(mode: str) -> tuple[str, ...]:
    try:
        return MODE_CHECKS[mode]
    except KeyError:
        raise ValueError(f"unknown mode {mode!r}")


def _sv_margin(mat: np.ndarray) -> float:
    """Smallest singular value relative to the matrix max-norm."""
    scale = float(np.max(np.abs(mat)))
    if scale == 0.0 or not np.isfinite(scale):
        return 0.0
    return float(np.linalg.svd(mat, compute_uv=False)[-1]) / scale


def _worst_grid(vals: np.ndarray, t_nodes: np.ndarray, largest: bool = False):
    """(t, regime, value) of the extreme entry of a (N+1, m) field."""
    idx = np.argmax(vals) if largest else np.argmin(vals)
    k, i = np.unravel_index(idx, vals.shape)
    return (float(t_nodes[k]), int(i) + 1, float(vals[k, i]))


def check_assumptions(spec: ProblemSpec,
                      tol_invert: float = TOL_INVERT,
                      tol_sym: float = TOL_SYM) -> AssumptionReport:
    """Evaluate (F2)-(F5), (L1)-(L3) and the pricing structural zeros.

    Pure function of the spec; failures are reported, not raised.  F4 is
    reported false with underline_c2 = 0 whenever D_F vanishes, even though
    the pricing example relies on (F3)-type sign conditions instead.
    """
    dyn, fc, lc = spec.dynamics, spec.follower_cost, spec.leader_cost
    t_nodes = spec.t_nodes
    Np1, m = spec.N + 1, spec.m
    diag: dict[str, tuple[float, int, float]] = {}
    consts = derive_constants(spec)

    RF = spec.R_F
    BF = spec.B_F
    DF = spec.D_F

    # F2: assembled R_F invertible everywhere
    margins = np.empty((Np1, m))
    for k in range(Np1):
        for i in range(m):
            margins[k, i] = _sv_margin(RF[k, i])
    f2 = bool(np.min(margins) > tol_invert)
    diag["F2"] = _worst_grid(margins, t_nodes)

    # F3: sign conditions, vanishing mean-field weights, B^T D symmetry
    rf_inv_ok = True
    bfr_min = np.inf
    dfr_min = np.inf
    sym_err = 0.0
    for k in range(Np1):
        for i in range(m):
            try:
                rinv = np.linalg.inv(RF[k, i])
            except np.linalg.LinAlgError:
                rf_inv_ok = False
                continue
            bfr_min = min(bfr_min, float(BF[k, i] @ rinv @ BF[k, i]))
            dfr_min = min(dfr_min, float(DF[k, i] @ rinv @ DF[k, i]))
            bd = np.outer(BF[k, i], DF[k, i])
            sym_err = max(sym_err, float(np.max(np.abs(bd - bd.T))))
    scale = max(1.0, float(np.max(np.abs(BF))) * max(1.0, float(np.max(np.abs(DF)))))
    f3 = (
        rf_inv_ok
        and np.all(fc.Q_F >= 0.0)
        and np.all(fc.G_F >= 0.0)
        and np.all(fc.Q_F_bar == 0.0)
        and np.all(fc.G_F_bar == 0.0)
        and bfr_min >= -tol_sym * scale
        and dfr_min >= -tol_sym * scale
        and sym_err <= tol_sym * scale
    )
    diag["F3"] = (0.0, 0, float(min(bfr_min, dfr_min)))

    # F4: uniform nondegeneracy of D_Fj^T D_Fj (rank-1 for row vectors, so
    # it can only hold for scalar follower controls)
    c2_lo = np.inf
    for D, mj in ((dyn.D_F1, spec.m1), (dyn.D_F2, spec.m2)):
        if mj > 1:
            c2_lo = 0.0
        c2_lo = min(c2_lo, float(np.min(np.sum(D ** 2, axis=2))))
    underline_c2 = max(0.0, 0.0 if not np.isfinite(c2_lo) else c2_lo)
    f4 = underline_c2 > 0.0

    # F5: R_F1 >= (rho + rho_bar c2_bar) I and -R_F2 >= the same
    thresh = consts.rho + consts.rho_bar * consts.c2_bar_2
    f5_margin = np.inf
    for k in range(Np1):
        for i in range(m):
            e1 = np.linalg.eigvalsh(fc.R_F1[k, i])[0]
            e2 = np.linalg.eigvalsh(-fc.R_F2[k, i])[0]
            f5_margin = min(f5_margin, e1 - thresh, e2 - thresh)
    f5 = bool(f5_margin >= -tol_sym)
    diag["F5"] = (0.0, 0, float(f5_margin))

    # L1: leader sign conditions with R_L positive definite
    rl_margin = np.inf
    for k in range(Np1):
        for i in range(m):
            ev = np.linalg.eigvalsh(lc.R_L[k, i])[0]
            rl_margin = min(rl_margin, ev / max(1.0, np.max(np.abs(lc.R_L[k, i]))))
    l1 = (
        np.all(lc.Q_L >= 0.0)
        and np.all(lc.Q_L_bar >= 0.0)
        and np.all(lc.G_L >= 0.0)
        and np.all(lc.G_L_bar >= 0.0)
        and rl_margin > tol_invert
    )
    diag["L1"] = (0.0, 0, float(rl_margin))

    # L2: B_L^T D_L symmetric
    l2_err = 0.0
    for k in range(Np1):
        for i in range(m):
            bd = np.outer(dyn.B_L[k, i], dyn.D_L[k, i])
            l2_err = max(l2_err, float(np.max(np.abs(bd - bd.T))))
    l2 = l2_err <= tol_sym * max(1.0, float(np.max(np.abs(dyn.B_L))))

    # L3: structural zeros plus nondegenerate B_L and B_F R_F^-1 B_F^T
    zeros_ok = (
        np.all(dyn.C_bar == 0.0)
        and np.all(dyn.D_L == 0.0)
        and np.all(dyn.D_F1 == 0.0)
        and np.all(dyn.D_F2 == 0.0)
    )
    bl_min = float(np.min(np.sum(dyn.B_L ** 2, axis=2)))
    bfr_abs_min = np.inf
    if rf_inv_ok:
        for k in range(Np1):
            for i in range(m):
                v = float(BF[k, i] @ np.linalg.solve(RF[k, i], BF[k, i]))
                bfr_abs_min = min(bfr_abs_min, abs(v))
    else:
        bfr_abs_min = 0.0
    l3 = bool(zeros_ok and bl_min > 0.0 and bfr_abs_min > 0.0)
    diag["L3"] = (0.0, 0, float(bfr_abs_min))

    # pricing reduction: state equation keeps only A, B-rows and sigma;
    # running costs keep only the control weights; terminal weights enter
    # linearly through the bar-G coefficients
    pricing = bool(
        np.all(dyn.A_bar == 0.0)
        and np.all(dyn.C == 0.0)
        and np.all(dyn.C_bar == 0.0)
        and np.all(dyn.D_L == 0.0)
        and np.all(dyn.D_F1 == 0.0)
        and np.all(dyn.D_F2 == 0.0)
        and np.all(dyn.b == 0.0)
        and np.all(fc.Q_F == 0.0)
        and np.all(fc.Q_F_bar == 0.0)
        and np.all(fc.S_F == 0.0)
        and np.all(fc.G_F == 0.0)
        and np.all(lc.Q_L == 0.0)
        and np.all(lc.Q_L_bar == 0.0)
        and np.all(lc.G_L == 0.0)
        and np.all(fc.G_F_bar >= 0.0)
        and np.all(lc.G_L_bar >= 0.0)
        and _rf_signs_ok(fc, tol_invert)
    )

    return AssumptionReport(
        F2=f2, F3=bool(f3), F4=bool(f4), F5=f5, L1=bool(l1), L2=bool(l2),
        L3=l3, pricing_structure=pricing, constants=consts,
        underline_c2=underline_c2, diagnostics=diag,
    )


def _rf_signs_ok(fc: FollowerCost, tol: float) -> bool:
    """R_F1 positive definite, R_F2 negative definite at every node."""
    for k in range(fc.R_F1.shape[0]):
        for i in range(fc.R_F1.shape[1]):
            if np.linalg.eigvalsh(fc.R_F1[k, i])[0] <= tol:
                return False
            if np.linalg.eigvalsh(fc.R_F2[k, i])[-1] >= -tol:
                return False
    return True


def report_as_dict(report: AssumptionReport) -> dict[str, Any]:
    """JSON-friendly rendering of an AssumptionReport."""
    c = report.constants
    return {
        "checks": {k: getattr(report, k) for k in
                   ("F2", "F3", "F4", "F5", "L1", "L2", "L3",
                    "pricing_structure")},
        "constants": {
            "q0": c.q0, "g0": c.g0, "c1": c.c1,
            "c2_bar_1": c.c2_bar_1, "c2_bar_2": c.c2_bar_2, "c3": c.c3,
            "rho": c.rho, "rho_bar": c.rho_bar, "degenerate": c.degenerate,
        },
        "underline_c2": report.underline_c2,
        "diagnostics": {k: list(v) for k, v in report.diagnostics.items()},
    }
