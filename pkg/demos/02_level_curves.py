"""
Reading conductivity and thickness off level curves
===================================================

One measured impedance fixes Re, Im, |.| and the phase of F. Each is a curve
in the (pi2, pi3) plane; where they cross is the plate.
"""

import math

from dimect import forward as fw
from dimect import inversion as inv

probe = fw.DEFAULT_PROBE
grid = fw.compute_f_grid(probe)  # about ten seconds
plate = fw.PlateSpec(18e6, 2e-3)

###############################################################################
# A single frequency.

omega = 2 * math.pi * 1650
dz = fw.mutual_impedance_delta(probe, plate, omega)
pi1 = fw.to_pi1(dz, omega, probe)
for curve in inv.level_curves(grid, pi1, omega):
    print(f"{curve.functional:>5} = {curve.level:+.5f}: {len(curve.segments)} branch(es)")

rec = inv.estimate_single_frequency(dz, omega, probe, grid)
print("region", rec.region.label, "sigma", rec.sigma_hat / 1e6, "MS/m", "dh", rec.dh_hat * 1e3, "mm")

###############################################################################
# Several frequencies. In the (sigma, dh) plane all the curves meet at the
# same point, which is what makes averaging over frequency meaningful.

records = []
for f in (650, 1150, 1650, 2150, 2650):
    w = 2 * math.pi * f
    records.append(inv.estimate_single_frequency(fw.mutual_impedance_delta(probe, plate, w), w, probe, grid))
fused = inv.fuse_multi_frequency(records)
print(f"fused: {fused.sigma / 1e6:.4f} MS/m, {fused.dh * 1e3:.4f} mm from {fused.n} frequencies")

###############################################################################
# Where thickness can be read at all. Above pi2*pi3 = 3 the field no longer
# reaches the far side of the plate.

# one line per pi2 value, columns are pi3 = 20, 1, 0.05
for row in inv.region_table([1, 10, 100], [20, 1, 0.05]):
    print(" ".join(row))
