"""Mollified fractional MHD on the periodic box.

Solves

    du/dt + A^alpha u = P(J_n B . grad B - J_n u . grad u),   u(0) = J_n u0
    dB/dt + A^beta  B = P(J_n B . grad u - J_n u . grad B),   B(0) = J_n B0

where A is the Stokes operator (|k|^2 per mode) and J_n = n (n + A)^-1.  Two
routes are provided: Picard iteration of the Duhamel integral equations on a
short horizon, and an integrating-factor Runge-Kutta stepper for long runs.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .solenoidal import (GridMismatch, SolenoidalField, WaveGrid, _norm_sq, _project,
                         advect_physical, gradient_coeffs)
from .spectral_core import FractionalExponent


class NonContraction(RuntimeError):
    pass


class MaxIters(RuntimeError):
    pass


class CflViolation(RuntimeError):
    pass


class LedgerViolation(RuntimeError):
    def __init__(self, msg, s=None, t=None):
        super().__init__(msg)
        self.s, self.t = s, t


@dataclass(frozen=True)
class SolverParams:
    alpha: float = 1.0
    beta: float = 1.0
    n: int = 16
    dt: float = 1e-3
    T: float = 1.0
    picard_tol: float = 1e-10
    picard_max_iters: int = 60
    duhamel_substeps: int = 64

    def __post_init__(self):
        for name in ("alpha", "beta"):
            v = FractionalExponent(getattr(self, name))
            if v <= 0.75:
                raise ValueError(f"{name}={v} must exceed 3/4")
        if int(self.n) != self.n or self.n < 1:
            raise ValueError("mollifier index n must be a positive integer")
        if not (0 < self.dt < self.T):
            raise ValueError("need 0 < dt < T")
        if self.picard_tol <= 0 or self.picard_max_iters < 1 or self.duhamel_substeps < 1:
            raise ValueError("invalid Picard settings")

    @property
    def n_steps(self) -> int:
        return max(1, round(self.T / self.dt))


@dataclass
class MhdState:
    t: float
    u: SolenoidalField
    B: SolenoidalField

    def __post_init__(self):
        if self.u.grid != self.B.grid:
            raise GridMismatch("u and B live on different grids")
        if self.t < 0:
            raise ValueError("time must be nonnegative")

    @property
    def grid(self) -> WaveGrid:
        return self.u.grid

    def energy(self) -> float:
        return self.u.norm_sq() + self.B.norm_sq()


class _Symbols:
    """Per-mode multipliers for one grid and parameter set."""

    def __init__(self, grid: WaveGrid, alpha: float, beta: float, n: int):
        self.grid = grid
        k2 = grid.k2
        pos = np.where(k2 > 0, k2, 1.0)
        self.mu_u = np.where(k2 > 0, np.exp(alpha * np.log(pos)), 0.0)
        self.mu_B = np.where(k2 > 0, np.exp(beta * np.log(pos)), 0.0)
        self.J = n / (n + k2)

    def decay(self, t):
        return np.exp(-t * self.mu_u), np.exp(-t * self.mu_B)

    def dissipation(self, uh, Bh) -> float:
        """2 (||A^(alpha/2) u||^2 + ||A^(beta/2) B||^2)."""
        g = self.grid
        return 2 * (_norm_sq(g, uh * np.sqrt(self.mu_u)) + _norm_sq(g, Bh * np.sqrt(self.mu_B)))


def _nonlinear(grid: WaveGrid, J: np.ndarray, uh: np.ndarray, Bh: np.ndarray):
    """Coefficients of P(J B.grad B - J u.grad u) and P(J B.grad u - J u.grad B)."""
    stack = np.concatenate([
        J * uh, J * Bh,
        gradient_coeffs(grid, uh).reshape(9, *grid.shape),
        gradient_coeffs(grid, Bh).reshape(9, *grid.shape),
    ])
    phys = grid.to_physical(stack)
    Ju, JB = phys[0:3], phys[3:6]
    gu = phys[6:15].reshape(3, 3, *phys.shape[1:])
    gB = phys[15:24].reshape(3, 3, *phys.shape[1:])
    du = advect_physical(JB, gB) - advect_physical(Ju, gu)
    dB = advect_physical(JB, gu) - advect_physical(Ju, gB)
    spec = grid.to_spectral(np.concatenate([du, dB])) * grid.dealias_mask
    return _project(grid, spec[:3]), _project(grid, spec[3:])


def rhs_nonlinear(state: MhdState, n: int):
    """Projected, mollified nonlinear terms (du, dB) for ``state``."""
    g = state.grid
    J = n / (n + g.k2)
    du, dB = _nonlinear(g, J, state.u.coeffs, state.B.coeffs)
    return SolenoidalField(g, du, validate=False), SolenoidalField(g, dB, validate=False)


def _grad_norm_sq(grid, c):
    return _norm_sq(grid, c * np.sqrt(grid.k2))


# --- time stepping -----------------------------------------------------------

class IntegratingFactorStepper:
    """Second-order Runge-Kutta under the exact linear propagator.

    With E = exp(-dt A^kappa) and N the nonlinear term::

        y1    = E (y0 + dt N(y0))
        y_new = E y0 + dt/2 (E N(y0) + N(y1))

    The linear part is integrated exactly, so only the convective CFL limits dt.
    """

    def __init__(self, grid: WaveGrid, params: SolverParams, nonlinear: bool = True,
                 energy_rtol: float | None = None):
        self.grid, self.params, self.nonlinear = grid, params, nonlinear
        self.sym = _Symbols(grid, params.alpha, params.beta, params.n)
        self.Eu, self.EB = self.sym.decay(params.dt)
        dt = params.dt
        self.energy_rtol = 10 * dt * dt if energy_rtol is None else energy_rtol

    def _N(self, uh, Bh):
        return _nonlinear(self.grid, self.sym.J, uh, Bh)

    def advance(self, uh, Bh):
        dt = self.params.dt
        if not self.nonlinear:
            return self.Eu * uh, self.EB * Bh
        nu0, nB0 = self._N(uh, Bh)
        u1 = self.Eu * (uh + dt * nu0)
        B1 = self.EB * (Bh + dt * nB0)
        nu1, nB1 = self._N(u1, B1)
        u = self.Eu * uh + 0.5 * dt * (self.Eu * nu0 + nu1)
        B = self.EB * Bh + 0.5 * dt * (self.EB * nB0 + nB1)
        return u, B

    def step(self, uh, Bh):
        g = self.grid
        e0 = _norm_sq(g, uh) + _norm_sq(g, Bh)
        u, B = self.advance(uh, Bh)
        e1 = _norm_sq(g, u) + _norm_sq(g, B)
        if e1 > e0 * (1 + self.energy_rtol):
            raise CflViolation(
                f"step amplified energy by {e1 / e0 - 1:.3e} (> {self.energy_rtol:.3e}); "
                f"reduce dt")
        return u, B


def step_integrate(state: MhdState, params: SolverParams, nonlinear: bool = True) -> MhdState:
    """Advance ``state`` by one ``params.dt``."""
    stepper = IntegratingFactorStepper(state.grid, params, nonlinear)
    u, B = stepper.step(state.u.coeffs, state.B.coeffs)
    g = state.grid
    return MhdState(state.t + params.dt, SolenoidalField(g, u, validate=False),
                    SolenoidalField(g, B, validate=False))


def suggest_dt(state: MhdState, params: SolverParams, cfl: float = 0.5) -> float:
    """Time step from the dealiased k_max and the current field amplitude."""
    g = state.grid
    kmax = g.k_max_dealiased
    lin = 0.5 * kmax ** (-2 * min(params.alpha, params.beta))
    amp = float(np.max(np.sqrt(np.sum(state.u.physical() ** 2, axis=0)))
                + np.max(np.sqrt(np.sum(state.B.physical() ** 2, axis=0))))
    if amp == 0:
        return lin
    return min(lin, cfl / (kmax * amp))


# --- energy ledger -----------------------------------------------------------

@dataclass
class EnergyLedger:
    t: list = field(default_factory=list)
    energy_u: list = field(default_factory=list)
    energy_B: list = field(default_factory=list)
    dissipation_cum: list = field(default_factory=list)
    c_led: float = 0.0
    dt: float = 0.0

    def append(self, t, eu, eb, diss):
        if self.t and t <= self.t[-1]:
            raise ValueError("ledger times must increase")
        self.t.append(float(t))
        self.energy_u.append(float(eu))
        self.energy_B.append(float(eb))
        self.dissipation_cum.append(float(diss))

    def arrays(self):
        return (np.array(self.t), np.array(self.energy_u), np.array(self.energy_B),
                np.array(self.dissipation_cum))

    @property
    def total_energy(self) -> np.ndarray:
        return np.array(self.energy_u) + np.array(self.energy_B)

    def norm(self) -> np.ndarray:
        """||(u, B)(t)||, the root of the summed squared L^2 norms."""
        return np.sqrt(self.total_energy)

    def slack(self, elapsed):
        return self.c_led * self.dt * elapsed

    def check(self, rounding: float = 1e-13):
        """Energy inequality between every pair of rows s < t.

        ``E(t) + D(t) - E(s) - D(s) <= c_led dt (t - s)``, with D the cumulative
        dissipation.  Since the slack is linear in t - s this is a running
        minimum test on ``E + D - c_led dt t``.
        """
        t, eu, eb, d = self.arrays()
        if t.size < 2:
            return
        F = eu + eb + d
        G = F - self.c_led * self.dt * t
        tol = rounding * max(F[0], 1e-300)
        run_min = np.minimum.accumulate(G)
        bad = np.nonzero(G[1:] > run_min[:-1] + tol)[0]
        if bad.size:
            i = bad[0] + 1
            j = int(np.argmin(G[:i]))
            raise LedgerViolation(
                f"energy inequality fails between s={t[j]:g} and t={t[i]:g} "
                f"by {G[i] - G[j]:.3e}", t[j], t[i])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "energy_u", "energy_B", "dissipation_cum"])
        for row in zip(self.t, self.energy_u, self.energy_B, self.dissipation_cum):
            w.writerow([repr(x) for x in row])
        return buf.getvalue()


class Trajectory:
    """Snapshots recorded during a run, looked up by nearest stored time."""

    def __init__(self, grid: WaveGrid):
        self.grid = grid
        self.times: list[float] = []
        self._u: list[np.ndarray] = []
        self._B: list[np.ndarray] = []

    def record(self, t, uh, Bh):
        self.times.append(float(t))
        self._u.append(uh.copy())
        self._B.append(Bh.copy())

    def __len__(self):
        return len(self.times)

    def at(self, t: float) -> MhdState:
        if not self.times:
            raise LookupError("no snapshots recorded")
        i = int(np.argmin(np.abs(np.array(self.times) - t)))
        g = self.grid
        return MhdState(self.times[i], SolenoidalField(g, self._u[i], validate=False),
                        SolenoidalField(g, self._B[i], validate=False))

    def norms(self) -> np.ndarray:
        g = self.grid
        return np.array([math.sqrt(_norm_sq(g, u) + _norm_sq(g, b))
                         for u, b in zip(self._u, self._B)])


def default_ledger_constant(sym: _Symbols, dt: float, uh, Bh) -> float:
    """Slack rate for the trapezoidal dissipation against the exact propagator.

    For one mode with rate ``mu`` and energy ``e`` the exact factor removes
    ``(1 - exp(-2 dt mu)) e`` while the trapezoid books ``dt mu (1 + exp(-2 dt
    mu)) e``; the excess is at most ``(2/3) (dt mu)^3 e``.  Summed over the
    initial data this gives ``(2/3) dt^2 sum mu^3 e`` per unit time.  The
    additional ``E(0)`` term, i.e. ``E(0) dt`` per unit time, covers the
    O(dt^2) energy error of the explicit nonlinear stage.  The slack over an
    interval is ``c_led * dt * elapsed``.
    """
    g = sym.grid
    e0 = _norm_sq(g, uh) + _norm_sq(g, Bh)
    if e0 == 0:
        return 0.0
    m3 = _norm_sq(g, uh * sym.mu_u ** 1.5) + _norm_sq(g, Bh * sym.mu_B ** 1.5)
    return (2.0 / 3.0) * dt * m3 + e0


def run_with_ledger(u0: SolenoidalField, B0: SolenoidalField, params: SolverParams,
                    nonlinear: bool = True, record_every: int = 1,
                    snapshot_every: int | None = None, c_led: float | None = None,
                    check: bool = True, stepper: IntegratingFactorStepper | None = None):
    """Integrate from the mollified data to ``params.T`` recording the ledger.

    Returns ``(ledger, trajectory)``.  Raises :class:`LedgerViolation` when the
    energy inequality fails beyond the declared slack or when the mollifier
    increases the initial L^2 norm.
    """
    if u0.grid != B0.grid:
        raise GridMismatch("u0 and B0 live on different grids")
    g = u0.grid
    st = stepper or IntegratingFactorStepper(g, params, nonlinear)
    sym = st.sym
    uh, Bh = sym.J * u0.coeffs, sym.J * B0.coeffs
    if _norm_sq(g, uh) > u0.norm_sq() or _norm_sq(g, Bh) > B0.norm_sq():
        raise LedgerViolation("mollified initial data has larger L^2 norm")
    ledger = EnergyLedger(dt=params.dt)
    ledger.c_led = (default_ledger_constant(sym, params.dt, uh, Bh) if c_led is None
                    else c_led)
    traj = Trajectory(g)
    diss_rate = sym.dissipation(uh, Bh)
    cum = 0.0
    ledger.append(0.0, _norm_sq(g, uh), _norm_sq(g, Bh), 0.0)
    if snapshot_every:
        traj.record(0.0, uh, Bh)
    for i in range(1, params.n_steps + 1):
        uh, Bh = st.step(uh, Bh)
        rate = sym.dissipation(uh, Bh)
        cum += 0.5 * params.dt * (diss_rate + rate)
        diss_rate = rate
        t = i * params.dt
        if i % record_every == 0 or i == params.n_steps:
            ledger.append(t, _norm_sq(g, uh), _norm_sq(g, Bh), cum)
        if snapshot_every and (i % snapshot_every == 0 or i == params.n_steps):
            traj.record(t, uh, Bh)
    if check:
        ledger.check()
    return ledger, traj


# --- Picard iteration on the integral equations --------------------------------

@dataclass
class PicardHistory:
    deltas: list = field(default_factory=list)     # X_T distance between iterates
    factors: list = field(default_factory=list)    # deltas[m] / deltas[m-1]
    converged: bool = False
    times: np.ndarray | None = None

    @property
    def iterations(self) -> int:
        return len(self.deltas)


def _phi1(z):
    """(1 - exp(-z)) / z, continuous at 0."""
    out = np.ones_like(z)
    nz = z > 0
    out[nz] = -np.expm1(-z[nz]) / z[nz]
    return out


def _xt_distance(grid, U1, B1, U2, B2) -> float:
    worst = 0.0
    for du, dB in zip(U1 - U2, B1 - B2):
        l2 = math.sqrt(_norm_sq(grid, du) + _norm_sq(grid, dB))
        h1 = math.sqrt(_grad_norm_sq(grid, du) + _grad_norm_sq(grid, dB))
        worst = max(worst, l2 + h1)
    return worst


def picard_solve(u0: SolenoidalField, B0: SolenoidalField, params: SolverParams,
                 nonlinear: bool = True):
    """Fixed point of the Duhamel map on [0, T] by successive substitution.

    Time is sampled at ``duhamel_substeps + 1`` equispaced nodes.  On each
    subinterval the source is frozen at the mean of its end values and
    integrated exactly against the kernel ``exp(-(t - s) A^kappa)``.  The
    distance between iterates is the sampled X_T norm
    ``max_t ||(du, dB)|| + ||grad (du, dB)||``.

    Returns ``(state_at_T, history)``.
    """
    if u0.grid != B0.grid:
        raise GridMismatch("u0 and B0 live on different grids")
    g = u0.grid
    M = params.duhamel_substeps
    h = params.T / M
    times = np.arange(M + 1) * h
    sym = _Symbols(g, params.alpha, params.beta, params.n)
    Ju0, JB0 = sym.J * u0.coeffs, sym.J * B0.coeffs
    free_u = np.exp(-times[:, None, None, None, None] * sym.mu_u) * Ju0
    free_B = np.exp(-times[:, None, None, None, None] * sym.mu_B) * JB0
    Eu, EB = sym.decay(h)
    wu, wB = h * _phi1(h * sym.mu_u), h * _phi1(h * sym.mu_B)

    U, Bs = free_u.copy(), free_B.copy()
    hist = PicardHistory(times=times)
    above = 0
    for m in range(1, params.picard_max_iters + 1):
        if nonlinear:
            src = [_nonlinear(g, sym.J, U[j], Bs[j]) for j in range(M + 1)]
            Du = np.zeros_like(U)
            DB = np.zeros_like(Bs)
            for j in range(M):
                Du[j + 1] = Eu * Du[j] + wu * 0.5 * (src[j][0] + src[j + 1][0])
                DB[j + 1] = EB * DB[j] + wB * 0.5 * (src[j][1] + src[j + 1][1])
            U_new, B_new = free_u + Du, free_B + DB
        else:
            U_new, B_new = free_u.copy(), free_B.copy()
        delta = _xt_distance(g, U_new, B_new, U, Bs)
        hist.deltas.append(delta)
        if len(hist.deltas) > 1:
            prev = hist.deltas[-2]
            factor = delta / prev if prev > 0 else 0.0
            hist.factors.append(factor)
            above = above + 1 if factor > 1 else 0
        U, Bs = U_new, B_new
        if delta < params.picard_tol:
            hist.converged = True
            break
        if above >= 3:
            raise NonContraction(
                f"contraction factor above 1 for 3 iterations (last {hist.factors[-1]:.3g}); "
                f"shorten T")
    else:
        raise MaxIters(f"no convergence in {params.picard_max_iters} iterations "
                       f"(last delta {hist.deltas[-1]:.3e})")
    state = MhdState(params.T, SolenoidalField(g, U[-1], validate=False),
                     SolenoidalField(g, Bs[-1], validate=False))
    hist.trajectory = (U, Bs)
    return state, hist
