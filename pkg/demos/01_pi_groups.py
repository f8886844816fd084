"""
Dimensionless groups of a coil-over-plate problem
=================================================

Derive the groups, then check numerically that two very different probes
see the same dimensionless response.
"""

import math
from dataclasses import replace

from dimect import dimensions as dm
from dimect import forward as fw

###############################################################################
# A series RLC circuit first. The third group comes out as omega*R*C; asking
# for its reciprocal gives the familiar 1/(omega R C).

rlc = dm.rlc_system()
print(dm.format_groups(rlc, dm.derive_pi_groups(rlc, dm.RLC_RECIPROCAL_PRESENTATION)))

###############################################################################
# The probe problem, repeating on nu0, omega and D. The conductivity group is
# shown as D over the skin depth.

ect = dm.ect_system()
print("repeating set valid:", dm.check_repeating_set(ect).ok)
print(dm.format_groups(ect, dm.derive_pi_groups(ect, dm.ECT_SKIN_DEPTH_PRESENTATION)))

###############################################################################
# Same (pi2, pi3), different worlds: the bundled probe on an aluminium-like
# plate, and a probe three times larger with other turn counts on a much
# poorer conductor.

pi2, pi3 = 8.9, 0.085
small = fw.DEFAULT_PROBE
large = replace(small.scaled(3.0), N1=40, N2=90)
for probe, sigma in ((small, 35e6), (large, 1.2e6)):
    omega = fw.omega_for_pi2(pi2, sigma, probe.D)
    dz = fw.mutual_impedance_delta(probe, fw.PlateSpec(sigma, pi3 * probe.D), omega)
    print(f"D = {probe.D * 1e3:6.2f} mm  f = {omega / (2 * math.pi):9.2f} Hz  "
          f"dZ = {dz:.4e}  pi1 = {fw.to_pi1(dz, omega, probe):.10f}")
