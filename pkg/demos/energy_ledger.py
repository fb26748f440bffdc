"""Energy inequality along a mollified nonlinear run.

E(t) + 2 int_s^t dissipation never exceeds E(s) beyond the declared slack,
for every pair of ledger rows.  Larger mollifier index n lets more energy
through the initial smoothing but never more than the raw data carry.
"""
from fracmhd.mild_solver import SolverParams, run_with_ledger
from fracmhd.solenoidal import WaveGrid, random_solenoidal

g = WaveGrid(16)
u0 = random_solenoidal(g, 1, spectral_slope=-1, k_cutoff=3, energy=9.0)
B0 = random_solenoidal(g, 2, spectral_slope=-1, k_cutoff=3, energy=9.0)
e_raw = u0.norm_sq() + B0.norm_sq()

for n in (1, 4, 16, 64):
    led, _ = run_with_ledger(u0, B0, SolverParams(n=n, dt=1e-3, T=2.0), record_every=100)
    E = led.total_energy
    drop = E[0] - E[-1]
    print(f"n={n:3d}: E(0)/E_raw={E[0] / e_raw:.3f}  E(T)/E(0)={E[-1] / E[0]:.2e}  "
          f"dissipation/drop={led.dissipation_cum[-1] / drop:.6f}  c_led={led.c_led:.3g}")

print()
print("\n".join(led.to_csv().splitlines()[:6]))
