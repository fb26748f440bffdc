"""Walk the decay-exponent bootstrap in exact arithmetic.

Starting from gamma_1 = 1/(4 alpha) the exponent is pushed up by the affine
branch map until it reaches the target gamma.  The fixed point of that map
decides which targets are reachable at all.
"""
from fractions import Fraction as F

from fracmhd.exponents import (BootstrapInput, closed_form_limit, inequality_audit_o1,
                               run_bootstrap)

cases = [(F(1), F(1), F(49, 100)), (F(9, 10), F(1), F(45, 100)),
         (F(4, 5), F(9, 10), F(1, 2)), (F(1), F(1), F(1, 2))]

for alpha, beta, gamma in cases:
    limit, branch, cls = closed_form_limit(alpha, beta)
    trace = run_bootstrap(BootstrapInput(alpha, beta, gamma))
    print(f"alpha={alpha} beta={beta} gamma={gamma}: branch {branch}, limit {limit} "
          f"({float(limit):.4f}, {cls})")
    if trace.terminated:
        print(f"  reached gamma after n0={trace.n0} steps: "
              + ", ".join(f"{float(g):.4f}" for g in trace.gammas))
    else:
        print(f"  stalled below gamma after {len(trace.steps)} steps "
              f"(last {float(trace.gammas[-1]):.15f})")

# At alpha = beta = 1 the three comparisons against 1/(4 alpha) are all tight.
print("o1 margins at (1, 1):", [str(m) for m in inequality_audit_o1(F(1), F(1)).margins])
print("o1 margins at (9/10, 19/20):",
      [str(m) for m in inequality_audit_o1(F(9, 10), F(19, 20)).margins])
print()
print(run_bootstrap(BootstrapInput(F(9, 10), F(1), F(45, 100))).to_csv())
