"""Divergence-free vector fields on the periodic box [0, L)^3.

Fields are stored as normalised Fourier coefficients
``u_hat(k) = N^-3 sum_x u(x) exp(-i k.x)`` in the real-FFT layout
``(3, N, N, N//2 + 1)``; the modes with negative last index are implied by
``u_hat(-k) = conj(u_hat(k))``.  The Stokes operator is ``-Laplacian``
restricted to solenoidal fields, so its eigenvalue on mode ``k`` is ``|k|^2``.
"""
from __future__ import annotations

import io
import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.fft as sfft

from .spectral_core import DiscreteMeasure, FractionalExponent

DIV_TOL = 1e-12
REAL_TOL = 1e-12


class GridMismatch(ValueError):
    pass


class InvariantError(ValueError):
    """A coefficient array is not a valid real, mean-free solenoidal field."""


@dataclass(frozen=True)
class WaveGrid:
    N: int
    L: float = 2 * math.pi
    dealias_fraction: float = 2.0 / 3.0

    def __post_init__(self):
        if self.N < 4 or self.N % 2:
            raise ValueError(f"N must be even and >= 4, got {self.N}")
        if not self.L > 0:
            raise ValueError("box side must be positive")
        if not (0 < self.dealias_fraction <= 1):
            raise ValueError("dealias_fraction must lie in (0, 1]")

    @property
    def shape(self):
        return (self.N, self.N, self.N // 2 + 1)

    @property
    def dk(self) -> float:
        return 2 * math.pi / self.L

    @property
    def volume(self) -> float:
        return self.L ** 3

    @cached_property
    def index(self):
        """Signed integer mode indices (ix, iy, iz), broadcastable to ``shape``."""
        N = self.N
        ix = np.fft.fftfreq(N, 1.0 / N).astype(int)
        iz = np.arange(N // 2 + 1)
        return ix[:, None, None], ix[None, :, None], iz[None, None, :]

    @cached_property
    def k(self) -> np.ndarray:
        ix, iy, iz = self.index
        return self.dk * np.stack(np.broadcast_arrays(ix, iy, iz)).astype(float)

    @cached_property
    def mode_number(self) -> np.ndarray:
        """Integer |n|^2 with k = dk * n."""
        ix, iy, iz = self.index
        return ix ** 2 + iy ** 2 + iz ** 2

    @cached_property
    def k2(self) -> np.ndarray:
        return self.dk ** 2 * self.mode_number.astype(float)

    @cached_property
    def inv_k2(self) -> np.ndarray:
        out = np.zeros(self.shape)
        nz = self.k2 > 0
        out[nz] = 1.0 / self.k2[nz]
        return out

    @cached_property
    def dealias_mask(self) -> np.ndarray:
        cut = self.dealias_fraction * self.N / 2
        ix, iy, iz = self.index
        return (abs(ix) <= cut) & (abs(iy) <= cut) & (iz <= cut)

    @cached_property
    def nyquist_free(self) -> np.ndarray:
        """False on modes with an index equal to -N/2 (no well-defined derivative sign)."""
        h = self.N // 2
        ix, iy, iz = self.index
        return (abs(ix) < h) & (abs(iy) < h) & (iz < h)

    @cached_property
    def k_max_dealiased(self) -> float:
        return float(np.sqrt(self.k2[self.dealias_mask].max()))

    @cached_property
    def pair_weight(self) -> np.ndarray:
        """Multiplicity of each stored mode (2 when its conjugate is implied)."""
        w = np.full(self.shape, 2.0)
        w[..., 0] = 1.0
        w[..., -1] = 1.0
        return w

    @cached_property
    def conj_partner(self):
        """Index arrays mapping (i, j) -> (-i, -j) inside a fixed z-plane."""
        neg = (-np.arange(self.N)) % self.N
        return neg[:, None], neg[None, :]

    # transforms (stacked arrays, trailing three axes are spatial)
    def to_physical(self, c: np.ndarray) -> np.ndarray:
        return sfft.irfftn(c, s=(self.N,) * 3, axes=(-3, -2, -1), norm="forward")

    def to_spectral(self, u: np.ndarray) -> np.ndarray:
        return sfft.rfftn(u, axes=(-3, -2, -1), norm="forward")

    def cell_volume(self) -> float:
        return (self.L / self.N) ** 3


def _inner(grid: WaveGrid, a: np.ndarray, b: np.ndarray) -> float:
    return grid.volume * float(np.sum(grid.pair_weight * (a * b.conj()).real))


def _norm_sq(grid: WaveGrid, a: np.ndarray) -> float:
    return grid.volume * float(np.sum(grid.pair_weight * (a.real ** 2 + a.imag ** 2)))


def _project(grid: WaveGrid, c: np.ndarray) -> np.ndarray:
    kdotc = np.einsum("i...,i...->...", grid.k, c)
    out = (c - grid.k * (kdotc * grid.inv_k2)) * grid.nyquist_free
    out[:, 0, 0, 0] = 0.0
    return out


def _hermitian_defect(grid: WaveGrid, c: np.ndarray) -> float:
    pi, pj = grid.conj_partner
    worst = 0.0
    for plane in (0, -1):
        s = c[..., plane]
        worst = max(worst, float(np.max(np.abs(s - np.conj(s[:, pi, pj])), initial=0.0)))
    return worst


def _hermitian_fix(grid: WaveGrid, c: np.ndarray) -> np.ndarray:
    """Make the z = 0 and z = N/2 planes conjugate-symmetric by copying one half."""
    out = c.copy()
    ix, iy, _ = grid.index
    ix, iy = np.broadcast_arrays(ix[:, :, 0], iy[:, :, 0])
    keep = (iy > 0) | ((iy == 0) & (ix > 0))
    N = grid.N
    selfconj = ((ix % (N // 2)) == 0) & ((iy % (N // 2)) == 0)
    pi, pj = grid.conj_partner
    for plane in (0, -1):
        s = out[..., plane]
        partner = np.conj(s[:, pi, pj])
        s = np.where(keep, s, partner)
        s = np.where(selfconj, s.real, s)
        out[..., plane] = s
    return out


class SolenoidalField:
    """Real, mean-free, divergence-free periodic vector field."""

    __slots__ = ("grid", "coeffs")

    def __init__(self, grid: WaveGrid, coeffs: np.ndarray, validate: bool = True):
        coeffs = np.asarray(coeffs, dtype=complex)
        if coeffs.shape != (3,) + grid.shape:
            raise ValueError(f"coefficient array shape {coeffs.shape} != {(3,) + grid.shape}")
        self.grid = grid
        self.coeffs = coeffs
        if validate:
            self.check()

    @classmethod
    def zeros(cls, grid: WaveGrid) -> "SolenoidalField":
        return cls(grid, np.zeros((3,) + grid.shape, complex), validate=False)

    @classmethod
    def from_physical(cls, grid: WaveGrid, u: np.ndarray) -> "SolenoidalField":
        """Leray-project a real physical-space field of shape (3, N, N, N)."""
        return cls(grid, _project(grid, grid.to_spectral(np.asarray(u, float))))

    def check(self):
        c, g = self.coeffs, self.grid
        scale = float(np.max(np.abs(c), initial=0.0))
        if scale == 0.0:
            return
        if not np.all(np.isfinite(c)):
            raise InvariantError("non-finite coefficients")
        if np.max(np.abs(c[:, 0, 0, 0])) > REAL_TOL * scale:
            raise InvariantError("nonzero mean mode")
        if _hermitian_defect(g, c) > REAL_TOL * scale:
            raise InvariantError("coefficients are not conjugate-symmetric")
        if divergence_defect(self) > DIV_TOL:
            raise InvariantError("field is not divergence-free")

    def physical(self) -> np.ndarray:
        return self.grid.to_physical(self.coeffs)

    def full_coeffs(self) -> np.ndarray:
        """Expand to the full (3, N, N, N) coefficient array."""
        N, Nh = self.grid.N, self.grid.N // 2 + 1
        full = np.empty((3, N, N, N), complex)
        full[..., :Nh] = self.coeffs
        pi, pj = self.grid.conj_partner
        for l in range(Nh, N):
            full[..., l] = np.conj(self.coeffs[..., N - l][:, pi, pj])
        return full

    def inner(self, other: "SolenoidalField") -> float:
        _same_grid(self, other)
        return _inner(self.grid, self.coeffs, other.coeffs)

    def norm_sq(self) -> float:
        return _norm_sq(self.grid, self.coeffs)

    def norm(self) -> float:
        return math.sqrt(self.norm_sq())

    def _wrap(self, c):
        return SolenoidalField(self.grid, c, validate=False)

    def __add__(self, other):
        _same_grid(self, other)
        return self._wrap(self.coeffs + other.coeffs)

    def __sub__(self, other):
        _same_grid(self, other)
        return self._wrap(self.coeffs - other.coeffs)

    def __mul__(self, a: float):
        return self._wrap(float(a) * self.coeffs)

    __rmul__ = __mul__

    def __neg__(self):
        return self._wrap(-self.coeffs)

    def __repr__(self):
        return f"SolenoidalField(N={self.grid.N}, L={self.grid.L:g}, norm={self.norm():.6g})"


def _same_grid(*fields):
    g = fields[0].grid
    for f in fields[1:]:
        if f.grid != g:
            raise GridMismatch("fields live on different grids")


def divergence_defect(f: SolenoidalField) -> float:
    """max_k |k.u(k)| / (|k| |u(k)|) over modes carrying mass."""
    c, g = f.coeffs, f.grid
    amp = np.sqrt(np.sum(np.abs(c) ** 2, axis=0))
    kdotc = np.abs(np.einsum("i...,i...->...", g.k, c))
    live = (amp > 1e-300) & (g.k2 > 0)
    if not np.any(live):
        return 0.0
    return float(np.max(kdotc[live] / (np.sqrt(g.k2[live]) * amp[live])))


def leray_project(raw: np.ndarray, grid: WaveGrid) -> SolenoidalField:
    """Orthogonal projection onto divergence-free, mean-free fields.

    ``raw`` is a conjugate-symmetric coefficient map, either the full
    (3, N, N, N) array or the real-FFT half ``(3,) + grid.shape``; the mean
    mode is discarded.
    """
    raw = np.asarray(raw, dtype=complex)
    N = grid.N
    if raw.shape == (3, N, N, N):
        neg = (-np.arange(N)) % N
        partner = np.conj(raw[:, neg][:, :, neg][:, :, :, neg])
        if np.max(np.abs(raw - partner), initial=0.0) > REAL_TOL * max(
                np.max(np.abs(raw), initial=0.0), 1e-300):
            raise InvariantError("raw coefficients are not conjugate-symmetric")
        raw = raw[..., : N // 2 + 1]
    elif raw.shape == (3,) + grid.shape:
        if _hermitian_defect(grid, raw) > REAL_TOL * max(np.max(np.abs(raw), initial=0.0),
                                                          1e-300):
            raise InvariantError("raw coefficients are not conjugate-symmetric")
    else:
        raise ValueError(f"unexpected coefficient shape {raw.shape}")
    return SolenoidalField(grid, _project(grid, raw))


def gradient_coeffs(grid: WaveGrid, c: np.ndarray) -> np.ndarray:
    """Coefficients of d_j c_i, shape (3 [i], 3 [j], ...)."""
    return 1j * c[:, None] * grid.k[None, :]


def advect_physical(a: np.ndarray, grad_b: np.ndarray) -> np.ndarray:
    """(a . nabla) b in physical space, given a and the physical gradient of b."""
    return np.einsum("j...,ij...->i...", a, grad_b)


def convective_term(u: SolenoidalField, v: SolenoidalField) -> SolenoidalField:
    """P(u . nabla v), pseudo-spectral with the dealiasing mask applied."""
    _same_grid(u, v)
    g = u.grid
    phys = g.to_physical(np.concatenate([u.coeffs[None], gradient_coeffs(g, v.coeffs)])
                         .reshape(12, *g.shape))
    prod = advect_physical(phys[:3], phys[3:].reshape(3, 3, *phys.shape[1:]))
    c = g.to_spectral(prod) * g.dealias_mask
    return SolenoidalField(g, _project(g, c), validate=False)


def lp_norm(f: SolenoidalField, p: float) -> float:
    """(int |f|^p dx)^(1/p) by physical-grid quadrature; p = inf gives the grid max."""
    mag = np.sqrt(np.sum(f.physical() ** 2, axis=0))
    if math.isinf(p):
        return float(mag.max())
    if p < 1:
        raise ValueError("p must be >= 1")
    m = float(mag.max())
    if m == 0.0:
        return 0.0
    # scale out the max so large p does not overflow
    return m * float(np.sum((mag / m) ** p) * f.grid.cell_volume()) ** (1.0 / p)


def fractional_sobolev_norm(f: SolenoidalField, kappa) -> float:
    """||A^(kappa/2) f||: sqrt(L^3 sum |k|^(2 kappa) |u(k)|^2)."""
    kappa = float(kappa)
    if kappa < 0:
        raise ValueError("kappa must be nonnegative")
    g = f.grid
    mult = np.where(g.k2 > 0, g.k2, 1.0) ** (kappa / 2)
    return math.sqrt(_norm_sq(g, f.coeffs * mult))


@dataclass
class InterpolationReport:
    kappa: float
    ratio: float | None          # None when the field is zero
    lp4: float = 0.0
    l2: float = 0.0
    sobolev: float = 0.0

    @property
    def skipped(self) -> bool:
        return self.ratio is None


def audit_interpolation(f: SolenoidalField, kappa) -> InterpolationReport:
    """||f||_4 / (||f||_2^(1 - 3/(4k)) ||A^(k/2) f||^(3/(4k))) for 3/4 < k <= 1."""
    kappa = FractionalExponent(kappa)
    if kappa <= 0.75:
        raise ValueError("interpolation audit needs kappa > 3/4")
    l2 = f.norm()
    if l2 == 0.0:
        return InterpolationReport(kappa, None)
    l4 = lp_norm(f, 4)
    hs = fractional_sobolev_norm(f, kappa)
    theta = 3.0 / (4.0 * kappa)
    return InterpolationReport(kappa, l4 / (l2 ** (1 - theta) * hs ** theta), l4, l2, hs)


def random_solenoidal(grid: WaveGrid, seed: int, spectral_slope: float = 0.0,
                      k_cutoff: float = math.inf, energy: float | None = None,
                      shell_mass: dict | None = None) -> SolenoidalField:
    """Random divergence-free field with prescribed amplitude spectrum.

    Uses numpy's ``default_rng`` (PCG64) so the coefficients are reproducible
    across platforms.  Each retained mode gets a random complex orientation
    orthogonal to k with ``|u(k)| ~ |k|**spectral_slope``; only modes with
    ``|k| <= k_cutoff`` inside the dealiasing mask are populated.

    ``shell_mass`` maps an integer shell number ``|n|^2`` (k = dk * n) to the
    total L^2 mass wanted on that shell, overriding the power law.  ``energy``
    rescales the result to the given squared L^2 norm.
    """
    rng = np.random.default_rng(seed)
    shape = (3,) + grid.shape
    z = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    z = _project(grid, z)
    amp = np.sqrt(np.sum(np.abs(z) ** 2, axis=0))
    support = grid.dealias_mask & (grid.k2 > 0) & (grid.k2 <= k_cutoff ** 2) & (amp > 0)
    unit = np.where(support, z / np.where(amp > 0, amp, 1.0), 0.0)
    if shell_mass is None:
        mag = np.where(support, np.where(grid.k2 > 0, grid.k2, 1.0) ** (spectral_slope / 2), 0.0)
    else:
        mag = np.zeros(grid.shape)
        m = grid.mode_number
        for shell, mass in shell_mass.items():
            sel = support & (m == shell)
            count = float(np.sum(grid.pair_weight[sel]))
            if count > 0 and mass > 0:
                mag[sel] = math.sqrt(mass / (grid.volume * count))
    c = _hermitian_fix(grid, unit * mag)
    f = leray_project(c, grid)
    if energy is not None:
        e = f.norm_sq()
        if e > 0:
            f = SolenoidalField(grid, f.coeffs * math.sqrt(energy / e), validate=False)
    return f


def single_mode(grid: WaveGrid, n: tuple, direction, amplitude: float = 1.0) -> SolenoidalField:
    """amplitude * cos(k.x) * e for k = dk * n (direction must be orthogonal to n)."""
    e = np.asarray(direction, float)
    if abs(float(np.dot(e, n))) > 1e-14 * np.linalg.norm(e) * np.linalg.norm(n):
        raise ValueError("direction must be orthogonal to the wavevector")
    x = np.arange(grid.N) * grid.L / grid.N
    X = np.meshgrid(x, x, x, indexing="ij")
    phase = grid.dk * sum(ni * Xi for ni, Xi in zip(n, X))
    return SolenoidalField.from_physical(grid, amplitude * np.cos(phase)[None] * e[:, None, None, None])


def field_spectral_measure(f: SolenoidalField) -> DiscreteMeasure:
    """Spectral measure of the Stokes operator for ``f``: shell masses at |k|^2."""
    g = f.grid
    dens = g.volume * g.pair_weight * np.sum(np.abs(f.coeffs) ** 2, axis=0)
    m = g.mode_number.ravel()
    mass = np.bincount(m, weights=dens.ravel())
    shells = np.nonzero(mass > 0)[0]
    shells = shells[shells > 0]
    return DiscreteMeasure(g.dk ** 2 * shells, mass[shells])


# --- text format -------------------------------------------------------------

_COLUMNS = ["kx", "ky", "kz", "re_ux", "im_ux", "re_uy", "im_uy", "re_uz", "im_uz"]


def dump_field(f: SolenoidalField) -> str:
    """Rows ``kx,ky,kz,re_ux,im_ux,...`` (integer mode indices) for nonzero modes."""
    g = f.grid
    full = f.full_coeffs()
    idx = np.fft.fftfreq(g.N, 1.0 / g.N).astype(int)
    buf = io.StringIO()
    buf.write(f"# N={g.N} L={g.L!r} dealias_fraction={g.dealias_fraction!r}\n")
    buf.write(",".join(_COLUMNS) + "\n")
    live = np.argwhere(np.any(full != 0, axis=0))
    for i, j, l in live:
        v = full[:, i, j, l]
        vals = ",".join(f"{x:.17g}" for c in v for x in (c.real, c.imag))
        buf.write(f"{idx[i]},{idx[j]},{idx[l]},{vals}\n")
    return buf.getvalue()


def load_field(text: str) -> SolenoidalField:
    lines = text.splitlines()
    meta = dict(tok.split("=") for tok in lines[0].lstrip("# ").split())
    grid = WaveGrid(int(meta["N"]), float(meta["L"]), float(meta["dealias_fraction"]))
    if lines[1].strip().split(",") != _COLUMNS:
        raise ValueError("unexpected field table header")
    N = grid.N
    full = np.zeros((3, N, N, N), complex)
    for ln in lines[2:]:
        if not ln.strip():
            continue
        parts = ln.split(",")
        i, j, l = (int(p) % N for p in parts[:3])
        v = np.array(parts[3:], dtype=float)
        full[:, i, j, l] = v[0::2] + 1j * v[1::2]
    if np.max(np.abs(full[:, 0, 0, 0])) > 0:
        raise InvariantError("stored field has a mean mode")
    c = full[..., : N // 2 + 1]
    # conjugate symmetry of the full map, then the usual invariants
    neg = (-np.arange(N)) % N
    partner = np.conj(full[:, neg][:, :, neg][:, :, :, neg])
    if np.max(np.abs(full - partner), initial=0.0) > REAL_TOL * max(
            np.max(np.abs(full), initial=0.0), 1e-300):
        raise InvariantError("stored field is not conjugate-symmetric")
    return SolenoidalField(grid, c)
