"""Functional calculus for a positive self-adjoint operator.

The operator is only seen through the spectral measure ``d||E_lambda w||^2``
of a fixed element ``w``.  Norms such as ``||A^k e^{-tA^k} w||`` are then
integrals of a scalar multiplier against that measure, evaluated either as a
finite sum (:class:`DiscreteMeasure`) or by Gauss-Legendre quadrature on
logarithmically spaced panels (:class:`ContinuousMeasure`).
"""
from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import optimize


class DomainError(ValueError):
    pass


class QuadratureError(RuntimeError):
    """Panel doubling changed an integral by more than the tolerance."""


class FractionalExponent(float):
    """A float restricted to (0, 1]."""

    def __new__(cls, value):
        v = float(value)
        if not (0.0 < v <= 1.0) or math.isnan(v):
            raise DomainError(f"fractional exponent {value!r} not in (0, 1]")
        return super().__new__(cls, v)


def _positive(lam):
    lam = np.asarray(lam, dtype=float)
    if np.any(~(lam > 0)):
        raise DomainError("spectral parameter must be positive")
    return lam


def fractional_power_multiplier(kappa, lam):
    """lambda**kappa, evaluated as exp(kappa*log(lambda))."""
    kappa = FractionalExponent(kappa)
    lam = _positive(lam)
    out = np.exp(kappa * np.log(lam))
    return float(out) if out.ndim == 0 else out


def semigroup_multiplier(kappa, t, lam):
    """exp(-t * lambda**kappa)."""
    kappa = FractionalExponent(kappa)
    if t < 0:
        raise DomainError(f"semigroup time must be nonnegative, got {t}")
    lam = _positive(lam)
    out = np.exp(-t * np.exp(kappa * np.log(lam)))
    return float(out) if out.ndim == 0 else out


def mollifier_multiplier(n, lam):
    """n / (n + lambda), the symbol of n (n + A)^{-1}."""
    if int(n) != n or n < 1:
        raise DomainError(f"mollifier index must be a positive integer, got {n}")
    lam = _positive(lam)
    out = n / (n + lam)
    return float(out) if out.ndim == 0 else out


class SpectralMeasure:
    """Base class; subclasses provide quadrature ``nodes()``."""

    kind: str = ""

    def nodes(self) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    @property
    def total_mass(self) -> float:
        return weighted_norm_sq(self, lambda lam: np.ones_like(lam))


@dataclass(frozen=True, eq=False)
class DiscreteMeasure(SpectralMeasure):
    """Point masses ``weights[j]`` at eigenvalues ``lambdas[j]``."""

    lambdas: np.ndarray
    weights: np.ndarray
    kind = "discrete"

    def __post_init__(self):
        lam = np.array(self.lambdas, dtype=float).ravel()
        w = np.array(self.weights, dtype=float).ravel()
        if lam.shape != w.shape:
            raise ValueError("lambdas and weights differ in length")
        if np.any(~(lam > 0)):
            raise DomainError("eigenvalues must be positive")
        if np.any(~(w >= 0)) or not np.all(np.isfinite(w)):
            raise DomainError("weights must be finite and nonnegative")
        lam.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "lambdas", lam)
        object.__setattr__(self, "weights", w)

    def nodes(self):
        return self.lambdas, self.weights


def _gauss_panels(lo, hi, panels, order):
    edges = np.geomspace(lo, hi, panels + 1)
    x, w = np.polynomial.legendre.leggauss(order)
    a, b = edges[:-1, None], edges[1:, None]
    lam = 0.5 * (b - a) * x + 0.5 * (b + a)
    wt = 0.5 * (b - a) * w
    return lam.ravel(), wt.ravel()


@dataclass(frozen=True, eq=False)
class ContinuousMeasure(SpectralMeasure):
    """Absolutely continuous measure ``density(lambda) dlambda`` on (0, lam_max].

    The head ``(0, lam_min)`` is dropped; use :meth:`for_horizon` to pick
    ``lam_min`` so the dropped mass is negligible at the largest time of
    interest.
    """

    density: Callable[[np.ndarray], np.ndarray]
    lam_max: float = 1.0
    lam_min: float = 1e-30
    panels_per_decade: int = 4
    order: int = 20
    rtol: float = 1e-10
    kind = "continuous"

    def __post_init__(self):
        if not (0 < self.lam_min < self.lam_max):
            raise DomainError("need 0 < lam_min < lam_max")

    @property
    def panels(self) -> int:
        decades = math.log10(self.lam_max / self.lam_min)
        return max(1, math.ceil(decades * self.panels_per_decade))

    def nodes(self):
        lam, w = _gauss_panels(self.lam_min, self.lam_max, self.panels, self.order)
        rho = np.asarray(self.density(lam), dtype=float)
        if np.any(~(rho >= 0)):
            raise DomainError("density must be nonnegative")
        return lam, w * rho

    def refined(self) -> "ContinuousMeasure":
        return ContinuousMeasure(self.density, self.lam_max, self.lam_min,
                                 2 * self.panels_per_decade, self.order, self.rtol)

    def head_mass(self, lam_min: float | None = None) -> float:
        """Mass on (0, lam_min), extrapolating the local power law of the density."""
        lo = self.lam_min if lam_min is None else lam_min
        r0, r1 = (float(self.density(np.array([x]))[0]) for x in (lo, 10 * lo))
        if r0 <= 0:
            return 0.0
        if r1 <= 0:
            return math.inf
        a = math.log10(r1 / r0)
        if a <= -1:
            return math.inf
        return lo * r0 / (a + 1)

    @classmethod
    def for_horizon(cls, density, lam_max, kappa, t_max, rel=1e-12, **kw):
        """Lower cutoff with head mass below ``rel`` times the norm at ``t_max``."""
        lam_min = 1e-3 * lam_max
        while True:
            m = cls(density, lam_max, lam_min, **kw)
            value = weighted_norm_sq(m, lambda lam: semigroup_multiplier(kappa, t_max, lam))
            if m.head_mass() <= rel * value or lam_min < 1e-300:
                return m
            lam_min *= 1e-2


def weighted_norm_sq(measure: SpectralMeasure, multiplier) -> float:
    """Integral of ``multiplier(lambda)**2`` against the measure."""
    lam, w = measure.nodes()
    if lam.size == 0:
        return 0.0
    val = float(np.sum(w * np.asarray(multiplier(lam), dtype=float) ** 2))
    if isinstance(measure, ContinuousMeasure):
        lam2, w2 = measure.refined().nodes()
        val2 = float(np.sum(w2 * np.asarray(multiplier(lam2), dtype=float) ** 2))
        scale = float(np.sum(w2))
        if abs(val2 - val) > measure.rtol * abs(val2) + 1e-15 * scale:
            raise QuadratureError(
                f"panel doubling moved integral from {val!r} to {val2!r}")
        return val2
    return val


# --- smoothing audit ---------------------------------------------------------

def gradient_smoothing_constant(kappa) -> float:
    """sup_{x>0} x**(1/(2 kappa)) * exp(-x), found by 1-D maximisation.

    This is the sharp per-mode constant C in ``||A^{1/2} e^{-tA^k} w|| <=
    C t^{-1/(2k)} ||w||``.
    """
    kappa = FractionalExponent(kappa)
    m = 1.0 / (2.0 * kappa)
    res = optimize.minimize_scalar(lambda x: -(m * math.log(x) - x),
                                   bounds=(1e-8, 50.0), method="bounded",
                                   options={"xatol": 1e-12})
    return math.exp(-res.fun)


@dataclass
class SmoothingAudit:
    kappa: float
    ratios: dict = field(default_factory=dict)      # bound name -> max ratio
    violations: list = field(default_factory=list)  # (bound, t, ratio)

    @property
    def passed(self) -> bool:
        return not self.violations


def audit_smoothing_bounds(measure: SpectralMeasure, kappa, t_grid: Sequence[float],
                           grad_rtol: float = 1e-12) -> SmoothingAudit:
    """Check the three semigroup bounds on every t of ``t_grid``.

    Ratios are ``lhs/rhs`` of
    (a) ``||A^k e^{-tA^k} w|| <= t^{-1} ||w||``,
    (b) ``||e^{-tA^k} w|| <= ||w||`` and
    (c) ``||A^{1/2} e^{-tA^k} w|| <= C t^{-1/(2k)} ||w||``.
    (a) and (b) are compared without tolerance; (c) uses a numerically
    maximised constant and allows ``grad_rtol``.
    """
    kappa = FractionalExponent(kappa)
    t_grid = [float(t) for t in t_grid]
    if not t_grid or min(t_grid) <= 0:
        raise DomainError("t_grid must be nonempty with positive entries")
    C = gradient_smoothing_constant(kappa)
    mass = weighted_norm_sq(measure, lambda lam: np.ones_like(lam))
    report = SmoothingAudit(kappa, {"analytic": 0.0, "contraction": 0.0, "gradient": 0.0})
    if mass == 0:
        return report
    for t in t_grid:
        va = weighted_norm_sq(measure, lambda lam: fractional_power_multiplier(kappa, lam)
                              * semigroup_multiplier(kappa, t, lam))
        vb = weighted_norm_sq(measure, lambda lam: semigroup_multiplier(kappa, t, lam))
        vc = weighted_norm_sq(measure, lambda lam: np.sqrt(lam)
                              * semigroup_multiplier(kappa, t, lam))
        checks = (
            ("analytic", t * t * va, mass, 0.0),
            ("contraction", vb, mass, 0.0),
            ("gradient", vc * t ** (1.0 / kappa), C * C * mass, grad_rtol),
        )
        for name, lhs, rhs, tol in checks:
            ratio = math.sqrt(lhs / rhs)
            report.ratios[name] = max(report.ratios[name], ratio)
            if lhs > rhs * (1 + tol):
                report.violations.append((name, t, ratio))
    return report


# --- text format -------------------------------------------------------------

class TabulatedDensity:
    """Density given at sample points, interpolated linearly in log-log."""

    def __init__(self, lambdas, values):
        self.lambdas = np.asarray(lambdas, dtype=float)
        self.values = np.asarray(values, dtype=float)
        if np.any(np.diff(self.lambdas) <= 0) or np.any(self.values <= 0):
            raise ValueError("tabulated density needs increasing lambda and positive values")

    def __call__(self, lam):
        lam = np.asarray(lam, dtype=float)
        x, y = np.log(self.lambdas), np.log(self.values)
        lx = np.log(lam)
        out = np.interp(lx, x, y)
        # power-law extrapolation below the first sample
        slope = (y[1] - y[0]) / (x[1] - x[0]) if x.size > 1 else 0.0
        low = lx < x[0]
        out[low] = y[0] + slope * (lx[low] - x[0])
        return np.exp(out)


def dump_measure(measure: SpectralMeasure) -> str:
    """Serialise as ``kind`` header then ``lambda,weight`` / ``lambda,density`` rows."""
    buf = io.StringIO()
    buf.write(measure.kind + "\n")
    if isinstance(measure, DiscreteMeasure):
        lam, val = measure.lambdas, measure.weights
    else:
        lam = np.geomspace(measure.lam_min, measure.lam_max,
                           max(2, 8 * measure.panels + 1))
        val = np.asarray(measure.density(lam), dtype=float)
    for a, b in zip(lam, val):
        buf.write(f"{a:.17g},{b:.17g}\n")
    return buf.getvalue()


def load_measure(text: str) -> SpectralMeasure:
    lines = [ln.strip() for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
    if not lines:
        raise ValueError("empty measure table")
    kind = lines[0].lower()
    rows = np.array([[float(v) for v in ln.split(",")] for ln in lines[1:]]).reshape(-1, 2)
    if kind == "discrete":
        return DiscreteMeasure(rows[:, 0], rows[:, 1])
    if kind == "continuous":
        return ContinuousMeasure(TabulatedDensity(rows[:, 0], rows[:, 1]),
                                 lam_max=rows[-1, 0], lam_min=rows[0, 0])
    raise ValueError(f"unknown measure kind {lines[0]!r}")
