"""Field regions and array geometry.

Walks through the basic geometric objects: half-wavelength rectangular
arrays, the reactive/radiative/far-field boundaries, and the roll/pitch/yaw
attitude algebra that places mobile-array antennas in space.
"""

import numpy as np

from nearfield_pae import (
    EulerAngles,
    Pose,
    fresnel_distance,
    half_wavelength_ura,
    ms_antenna_global_position,
    ms_local_antenna_position,
    rayleigh_distance,
    rotation_basis,
    wavelength,
)

f_hz = 28e9
lam = wavelength(f_hz)
print(f"carrier {f_hz / 1e9:.0f} GHz -> wavelength {lam * 1000:.3f} mm")

bs = half_wavelength_ura(32, 32, f_hz)
print(f"\nbase-station array: {bs.nx} x {bs.ny} elements, "
      f"{bs.size_x * 100:.1f} cm per side, diagonal {bs.largest_dimension * 100:.1f} cm")

d_f = fresnel_distance(bs.largest_dimension, lam)
d_r = rayleigh_distance(bs.largest_dimension, lam)
print(f"reactive boundary (Fresnel): {d_f:.2f} m")
print(f"near/far boundary (Rayleigh): {d_r:.2f} m")
print("anything between those distances sees a measurably curved wavefront.")

# the classic textbook example: a 0.5 m aperture at 4 mm wavelength
print(f"\n0.5 m aperture at 4 mm wavelength: Fresnel "
      f"{fresnel_distance(0.5, 0.004):.2f} m, Rayleigh "
      f"{rayleigh_distance(0.5, 0.004):.0f} m")

# a mobile array posed somewhere in the near field
ms = half_wavelength_ura(16, 16, f_hz)
pose = Pose(np.array([1.0, 2.0, 6.0]), EulerAngles(roll=0.4, pitch=-0.2, yaw=1.1))
basis = rotation_basis(pose.attitude)
print(f"\nmobile array {ms.nx} x {ms.ny} at {pose.position}, local axes:")
print(f"  e_x = {np.round(basis.ex, 4)}")
print(f"  e_y = {np.round(basis.ey, 4)}")

corner = ms_local_antenna_position(ms, 1, 1, lam)
center = ms_local_antenna_position(ms, 8, 8, lam)
print(f"\ncorner antenna local offset {np.round(corner * 100, 2)} cm "
      f"-> global {np.round(ms_antenna_global_position(pose, corner), 4)}")
print(f"near-center antenna local offset {np.round(center * 100, 2)} cm "
      f"-> global {np.round(ms_antenna_global_position(pose, center), 4)}")
