"""Short-time solution two ways: Picard on the integral equations and time stepping.

The Picard iterates contract geometrically on a short horizon and land on the
same state as the integrating-factor stepper.  Blowing the data up by 100x
breaks the contraction.
"""
import math

from fracmhd.mild_solver import (IntegratingFactorStepper, NonContraction, SolverParams,
                                 picard_solve)
from fracmhd.solenoidal import SolenoidalField, WaveGrid, random_solenoidal

g = WaveGrid(8)
u = random_solenoidal(g, 3, k_cutoff=2.5, energy=1.0) * 10
B = random_solenoidal(g, 4, k_cutoff=2.5, energy=1.0) * 10
p = SolverParams(alpha=0.9, beta=0.85, n=4, dt=1e-3, T=0.1, duhamel_substeps=64)

state, hist = picard_solve(u, B, p)
print("Picard deltas :", " ".join(f"{d:.2e}" for d in hist.deltas))
print("factors       :", " ".join(f"{f:.4f}" for f in hist.factors))

stp = IntegratingFactorStepper(g, p)
uh, Bh = stp.sym.J * u.coeffs, stp.sym.J * B.coeffs
for _ in range(p.n_steps):
    uh, Bh = stp.step(uh, Bh)
diff = math.sqrt((state.u - SolenoidalField(g, uh)).norm_sq()
                 + (state.B - SolenoidalField(g, Bh)).norm_sq())
print(f"|Picard - stepper| / |state| = {diff / math.sqrt(state.energy()):.2e}")

try:
    picard_solve(u * 100, B * 100, SolverParams(n=4, dt=1e-3, T=0.5, duhamel_substeps=32))
except NonContraction as e:
    print("large data:", e)
