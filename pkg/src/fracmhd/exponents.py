"""Decay-exponent arithmetic for the bootstrap argument.

Starting from the baseline rate ``1/(4 alpha)`` the nonlinear decay exponent
is upgraded step by step through the affine maps ``a_n``, ``b_n``, ``c_n``
until it reaches the rate of the linear semigroup.  Everything here works on
``fractions.Fraction`` (exact) or ``float`` (fast path); floats handed to the
exact routines are converted with ``Fraction(x)``, which is lossless.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from fractions import Fraction
from numbers import Rational
from typing import Union

Number = Union[Fraction, float]

HALF = Fraction(1, 2)
THREE_QUARTERS = Fraction(3, 4)


class NoTermination(RuntimeError):
    """Raised on request when the recursion never reaches the target exponent."""


def as_exact(x) -> Fraction:
    """Exact rational for ints, Fractions, decimal strings and floats."""
    if isinstance(x, Fraction):
        return x
    if isinstance(x, (Rational, str)):
        return Fraction(x)
    return Fraction(float(x))


def _coerce(*xs, exact: bool):
    if exact:
        return tuple(as_exact(x) for x in xs)
    return tuple(float(x) for x in xs)


def _check_admissible(alpha, beta):
    for name, v in (("alpha", alpha), ("beta", beta)):
        if not (THREE_QUARTERS < v <= 1):
            raise ValueError(f"{name}={v} outside (3/4, 1]")


def holder_exponents(alpha, beta, exact: bool = True):
    """Conjugate exponents p, q, r used in the Hoelder step.

    ``1/p = 1 - 3/(4 alpha)``, ``1/q = 1 - 3/(4 beta)`` and
    ``1/r = 1 - 3/(8 alpha) - 3/(8 beta)``.
    """
    alpha, beta = _coerce(alpha, beta, exact=exact)
    if alpha <= THREE_QUARTERS or beta <= THREE_QUARTERS:
        raise ValueError("Hoelder exponents need alpha, beta > 3/4 (p = inf at 3/4)")
    p = 1 / (1 - 3 / (4 * alpha))
    q = 1 / (1 - 3 / (4 * beta))
    r = 1 / (1 - 3 / (8 * alpha) - 3 / (8 * beta))
    return p, q, r


def branch_values(gamma_n, alpha, beta, exact: bool = True):
    """Raw affine maps (a_n, b_n, c_n) without any range check."""
    gamma_n, alpha, beta = _coerce(gamma_n, alpha, beta, exact=exact)
    a = (5 / (4 * alpha) - 1) + gamma_n * (2 - 3 / (2 * alpha))
    # 2/(4 alpha) kept unreduced to mirror the t-power it comes from
    b = (2 / (4 * alpha) + 3 / (4 * beta) - 1) + gamma_n * (2 - 3 / (2 * beta))
    c = (3 / (8 * alpha) + 7 / (8 * beta) - 1) + gamma_n * (
        2 - 3 / (4 * alpha) - 3 / (4 * beta)
    )
    return a, b, c


def bootstrap_step(gamma_n, alpha, beta, exact: bool = True, strict: bool = True):
    """One bootstrap step: the candidate exponents (a_n, b_n, c_n).

    With ``strict`` the current exponent must satisfy ``0 < gamma_n < 1/2``,
    which is where the time integrals in the Hoelder estimate converge.
    """
    if strict and not (0 < gamma_n < HALF):
        raise ValueError(f"gamma_n={gamma_n} outside (0, 1/2)")
    return branch_values(gamma_n, alpha, beta, exact=exact)


def selected_branch(alpha, beta) -> str:
    """'c' when 1/alpha > 1/beta, otherwise 'a'."""
    return "c" if 1 / as_exact(alpha) - 1 / as_exact(beta) > 0 else "a"


@dataclass
class OrderingReport:
    differences: tuple          # (a-b, a-c, b-c) computed directly
    predicted: tuple            # closed-form factorised differences
    max_identity_error: float
    ordering: str               # 'decreasing', 'increasing' or 'equal'
    ordering_holds: bool
    minimum_branch: str

    @property
    def passed(self) -> bool:
        return self.ordering_holds and self.max_identity_error <= 1e-12


def ordering_audit(gamma_n, alpha, beta, exact: bool = True) -> OrderingReport:
    a, b, c = bootstrap_step(gamma_n, alpha, beta, exact=exact)
    g, al, be = _coerce(gamma_n, alpha, beta, exact=exact)
    d = Fraction(3, 4) * (1 / al - 1 / be) if exact else 0.75 * (1 / al - 1 / be)
    predicted = (d * (1 - 2 * g), d * (Fraction(7, 6) - g if exact else 7 / 6 - g),
                 d * (Fraction(1, 6) + g if exact else 1 / 6 + g))
    direct = (a - b, a - c, b - c)
    err = max(abs(float(x - y)) for x, y in zip(direct, predicted))
    if d > 0:
        ordering, holds = "decreasing", a >= b >= c
    elif d < 0:
        ordering, holds = "increasing", a <= b <= c
    else:
        ordering, holds = "equal", (a == b == c) if exact else err <= 1e-12
    vals = {"a": a, "b": b, "c": c}
    return OrderingReport(direct, predicted, err, ordering, holds, min(vals, key=vals.get))


@dataclass
class BootstrapInput:
    """Parameters of a bootstrap run.

    ``gamma`` may sit on the excluded endpoint 1/2 with ``max(alpha, beta) = 1``;
    that case is kept runnable (``admissible`` is False) because its
    non-termination is the expected boundary behaviour.
    """

    alpha: Number
    beta: Number
    gamma: Number
    max_steps: int = 200

    def __post_init__(self):
        _check_admissible(as_exact(self.alpha), as_exact(self.beta))
        g = as_exact(self.gamma)
        if not (0 < g <= HALF):
            raise ValueError(f"gamma={self.gamma} outside (0, 1/2]")
        if self.max_steps < 1:
            raise ValueError("max_steps must be positive")

    @property
    def admissible(self) -> bool:
        g = as_exact(self.gamma)
        if max(as_exact(self.alpha), as_exact(self.beta)) == 1:
            return g < HALF
        return True


@dataclass
class BootstrapStep:
    n: int
    gamma_n: Number
    a_n: Number
    b_n: Number
    c_n: Number
    branch: str

    @property
    def next_gamma(self):
        return self.c_n if self.branch == "c" else self.a_n


@dataclass
class ExponentTrace:
    gamma_1: Number
    target: Number
    steps: list = field(default_factory=list)
    n0: int | None = None       # first n with gamma_{n+1} >= target; 0 if immediate
    terminated: bool = False
    limit: Number | None = None
    branch: str = "a"

    @property
    def gammas(self) -> list:
        """gamma_1, gamma_2, ... as produced by the recursion."""
        return [self.gamma_1] + [s.next_gamma for s in self.steps]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["n", "gamma_n", "a_n", "b_n", "c_n", "branch"])
        for s in self.steps:
            w.writerow([s.n] + [repr(float(v)) for v in (s.gamma_n, s.a_n, s.b_n, s.c_n)]
                       + [s.branch])
        n0 = "" if self.n0 is None else self.n0
        buf.write(f"# limit={float(self.limit)!r} n0={n0} terminated={self.terminated}\n")
        return buf.getvalue()


def run_bootstrap(inp: BootstrapInput, exact: bool = True, raise_on_stall: bool = False
                  ) -> ExponentTrace:
    """Iterate the bootstrap recursion until the target exponent is reached."""
    alpha, beta, gamma = _coerce(inp.alpha, inp.beta, inp.gamma, exact=exact)
    branch = selected_branch(alpha, beta)
    gamma_1 = 1 / (4 * alpha)
    trace = ExponentTrace(gamma_1=gamma_1, target=gamma, branch=branch,
                          limit=closed_form_limit(alpha, beta, exact=exact)[0])
    if gamma <= gamma_1:
        trace.n0, trace.terminated = 0, True
        return trace
    g = gamma_1
    for n in range(1, inp.max_steps + 1):
        a, b, c = bootstrap_step(g, alpha, beta, exact=exact)
        step = BootstrapStep(n, g, a, b, c, branch)
        trace.steps.append(step)
        g = step.next_gamma
        if g >= gamma:
            trace.n0, trace.terminated = n, True
            return trace
    if raise_on_stall:
        raise NoTermination(f"gamma_n stalled below {gamma} after {inp.max_steps} steps")
    return trace


def closed_form_limit(alpha, beta, exact: bool = True):
    """Fixed point of the selected affine map.

    Returns ``(limit, branch, classification)`` where classification is
    ``'=1/2'`` or ``'>1/2'``.
    """
    alpha, beta = _coerce(alpha, beta, exact=exact)
    _check_admissible(as_exact(alpha), as_exact(beta))
    branch = selected_branch(alpha, beta)
    if branch == "a":
        limit = (5 - 4 * alpha) / (6 - 4 * alpha)
    else:
        limit = (3 / (8 * alpha) + 7 / (8 * beta) - 1) / (3 / (4 * alpha) + 3 / (4 * beta) - 1)
    if exact:
        cls = "=1/2" if limit == HALF else (">1/2" if limit > HALF else "<1/2")
    else:
        cls = "=1/2" if abs(limit - 0.5) <= 1e-15 else (">1/2" if limit > 0.5 else "<1/2")
    return limit, branch, cls


def explicit_partial_sum(alpha, beta, n: int, exact: bool = True):
    """gamma_{n+1} written as a truncated geometric series.

    ``gamma_{n+1} = A * sum_{m<n} s**m + gamma_1 * s**n`` with intercept ``A``
    and slope ``s`` of the selected branch.
    """
    alpha, beta = _coerce(alpha, beta, exact=exact)
    if selected_branch(alpha, beta) == "a":
        A, s = 5 / (4 * alpha) - 1, 2 - 3 / (2 * alpha)
    else:
        A = 3 / (8 * alpha) + 7 / (8 * beta) - 1
        s = 2 - 3 / (4 * alpha) - 3 / (4 * beta)
    gamma_1 = 1 / (4 * alpha)
    total, power = 0 * s, 1 + 0 * s
    for _ in range(n):
        total += power
        power *= s
    return A * total + gamma_1 * power


def recursive_gamma(alpha, beta, n: int, exact: bool = True):
    """gamma_{n+1} by direct iteration of the selected map (no range checks)."""
    alpha, beta = _coerce(alpha, beta, exact=exact)
    branch = selected_branch(alpha, beta)
    g = 1 / (4 * alpha)
    for _ in range(n):
        a, _b, c = branch_values(g, alpha, beta, exact=exact)
        g = c if branch == "c" else a
    return g


@dataclass
class O1Report:
    margins: tuple
    passed: bool


def inequality_audit_o1(alpha, beta, exact: bool = True) -> O1Report:
    """Margins of the three exponent comparisons against 1/(4 alpha).

    Each margin is ``lhs - 1/(4 alpha)`` for the lhs values
    ``5/(4a) - 1``, ``1/(2a) + 3/(4b) - 1`` and ``3/(8a) + 7/(8b) - 1``.
    """
    alpha, beta = _coerce(alpha, beta, exact=exact)
    base = 1 / (4 * alpha)
    margins = (
        5 / (4 * alpha) - 1 - base,
        1 / (2 * alpha) + 3 / (4 * beta) - 1 - base,
        3 / (8 * alpha) + 7 / (8 * beta) - 1 - base,
    )
    return O1Report(margins, all(m >= 0 for m in margins))
