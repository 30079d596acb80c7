"""Backward integration of regime-coupled ODE systems on a uniform grid.

Every backward equation in this library reduces, under regime-deterministic
coefficients, to a deterministic system indexed by regime: the Markov chain
enters only through the coupling term sum_j lambda_ij [v(t,j) - v(t,i)].
The stacked system in R^{m*d} is integrated with classical RK4 from T down
to 0 (explicit Euler available for figure parity), with coefficient values
between nodes obtained by linear interpolation.

Brownian integrands of the underlying BSDEs vanish identically in this
reduction and are not stored; jump integrands v(t,j) - v(t,i) are
reconstructed from the solved grid when martingale bookkeeping needs them.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .chains import Generator
from .errors import NonFiniteDerivative

BLOWUP_NORM = 1e12

FLOAT_FMT = "{:.17g}"


def format_float(x: float) -> str:
    return FLOAT_FMT.format(float(x))


def interp_time(values: np.ndarray, T: float, t: float) -> np.ndarray:
    """Linear interpolation along axis 0 of a (N+1, ...) node array."""
    N = values.shape[0] - 1
    s = t / T * N
    if s <= 0.0:
        return values[0]
    if s >= N:
        return values[N]
    k = int(s)
    w = s - k
    if w == 0.0:
        return values[k]
    return (1.0 - w) * values[k] + w * values[k + 1]


@dataclass(frozen=True)
class RegimeGrid:
    """Node values of a per-regime quantity: shape (N+1, m, *component dims)."""

    values: np.ndarray
    T: float
    N: int

    def __post_init__(self):
        self.values.setflags(write=False)

    @property
    def m(self) -> int:
        return self.values.shape[1]

    @property
    def t_nodes(self) -> np.ndarray:
        return np.arange(self.N + 1) * (self.T / self.N)

    def at(self, k: int, regime: int) -> np.ndarray:
        """Value at grid index k for 1-based regime."""
        return self.values[k, regime - 1]

    def interp(self, t: float) -> np.ndarray:
        """All-regime slice at time t by linear interpolation."""
        return interp_time(self.values, self.T, t)

    def jump_integrand(self) -> "JumpIntegrand":
        diff = self.values[:, None, :, ...] - self.values[:, :, None, ...]
        return JumpIntegrand(values=diff, T=self.T, N=self.N)


@dataclass(frozen=True)
class JumpIntegrand:
    """Differences v(t,j) - v(t,i) per regime pair: shape (N+1, m, m, ...)."""

    values: np.ndarray
    T: float
    N: int

    def __post_init__(self):
        self.values.setflags(write=False)

    def at(self, k: int, i: int, j: int) -> np.ndarray:
        return self.values[k, i - 1, j - 1]


def markov_coupling(rates: np.ndarray, v: np.ndarray) -> np.ndarray:
    """sum_j lambda_ij [v(j) - v(i)] per regime; equals rates @ v by row sums."""
    return np.einsum("ij,j...->i...", rates, v)


def integrate_backward(
    rhs: Callable[[float, np.ndarray], np.ndarray],
    terminal: np.ndarray,
    grid: tuple[float, int],
    scheme: str = "rk4",
) -> RegimeGrid:
    """Integrate dv/dt = rhs(t, v) from v(T) = terminal back to t = 0.

    ``rhs`` receives the full regime slice (m, *dims) and returns the time
    derivative of the same shape.  Step size is T/N; RK4 half-steps land on
    mid-node times, where coefficient grids are linearly interpolated by the
    callers.  Raises NonFiniteDerivative with the escape time if the state
    turns non-finite or its max-norm exceeds 1e12.
    """
    T, N = grid
    if scheme not in ("rk4", "euler"):
        raise ValueError(f"unknown scheme {scheme!r}")
    h = T / N
    v = np.array(terminal, dtype=float)
    out = np.empty((N + 1,) + v.shape)
    out[N] = v
    for k in range(N, 0, -1):
        t = k * h
        if scheme == "rk4":
            f1 = rhs(t, v)
            f2 = rhs(t - 0.5 * h, v - 0.5 * h * f1)
            f3 = rhs(t - 0.5 * h, v - 0.5 * h * f2)
            f4 = rhs(t - h, v - h * f3)
            v = v - (h / 6.0) * (f1 + 2.0 * f2 + 2.0 * f3 + f4)
        else:
            v = v - h * rhs(t, v)
        if not np.all(np.isfinite(v)) or np.max(np.abs(v)) > BLOWUP_NORM:
            raise NonFiniteDerivative(t - h)
        out[k - 1] = v
    return RegimeGrid(values=out, T=T, N=N)


def solve_linear_regime_bsde(
    F: np.ndarray,
    h: np.ndarray,
    terminal: np.ndarray,
    gen: Generator,
    grid: tuple[float, int],
    scheme: str = "rk4",
) -> tuple[RegimeGrid, JumpIntegrand]:
    """Solve v'(t,i) + F(t,i) v(t,i) + sum_j lambda_ij [v(t,j)-v(t,i)] + h(t,i) = 0.

    ``F`` has node shape (N+1, m) for scalar systems or (N+1, m, d, d) for
    vector ones; ``h`` is (N+1, m) or (N+1, m, d); ``terminal`` is the
    per-regime value g(i).  Under regime-deterministic data the Brownian
    integrand is identically zero; the returned JumpIntegrand holds
    v(t,j) - v(t,i).
    """
    T, N = grid
    F = np.asarray(F, dtype=float)
    h_src = np.asarray(h, dtype=float)
    rates = gen.rates
    vector = F.ndim == 4

    def rhs(t: float, v: np.ndarray) -> np.ndarray:
        Ft = interp_time(F, T, t)
        ht = interp_time(h_src, T, t)
        if vector:
            lin = np.einsum("iab,ib->ia", Ft, v)
        else:
            lin = Ft * v
        return -(lin + markov_coupling(rates, v) + ht)

    sol = integrate_backward(rhs, np.asarray(terminal, dtype=float), (T, N), scheme)
    return sol, sol.jump_integrand()


def grid_to_csv(grid: RegimeGrid, path) -> None:
    """Write a RegimeGrid as CSV: t, regime, component indices, value.

    Scalar grids use columns (t, regime, value); vectors add ``comp``;
    matrices add (row, col).  Floats carry 17 significant digits so reruns
    are byte-identical.
    """
    comp_shape = grid.values.shape[2:]
    if len(comp_shape) == 0:
        header = "t,regime,value"
    elif len(comp_shape) == 1:
        header = "t,regime,comp,value"
    elif len(comp_shape) == 2:
        header = "t,regime,row,col,value"
    else:
        raise ValueError("grids with >2 component dims are not exported")
    lines = [header]
    t_nodes = grid.t_nodes
    for k in range(grid.N + 1):
        ts = format_float(t_nodes[k])
        for i in range(grid.m):
            v = grid.values[k, i]
            if len(comp_shape) == 0:
                lines.append(f"{ts},{i + 1},{format_float(v)}")
            elif len(comp_shape) == 1:
                for c in range(comp_shape[0]):
                    lines.append(f"{ts},{i + 1},{c + 1},{format_float(v[c])}")
            else:
                for r in range(comp_shape[0]):
                    for c in range(comp_shape[1]):
                        lines.append(
                            f"{ts},{i + 1},{r + 1},{c + 1},{format_float(v[r, c])}"
                        )
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
