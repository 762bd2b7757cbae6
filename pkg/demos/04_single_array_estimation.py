"""End-to-end estimation of one mobile array's position and attitude.

Simulates the exact spherical-wavefront signal received by a 32x32 array
from a 16x16 mobile array six-ish meters away, then runs the partitioned
message-passing estimator and compares against the truth.
"""

import numpy as np

from nearfield_pae import desk_scale_scenario, draw_poses, run, simulate_received, uniform_partition
from nearfield_pae.geometry import rotation_basis

scenario = desk_scale_scenario(tx_power_dbm=20.0)
plan = uniform_partition(scenario.bs, 4, 4, scenario.lam)
rng = np.random.default_rng(42)

poses = draw_poses(scenario, rng)
truth = poses[0]
print(f"true position: {np.round(truth.position, 4)} "
      f"(range {np.linalg.norm(truth.position):.2f} m)")
print(f"true attitude: roll {truth.attitude.roll:+.3f}, "
      f"pitch {truth.attitude.pitch:+.3f}, yaw {truth.attitude.yaw:+.3f} rad")

signal = simulate_received(scenario, rng, poses)
print(f"\nreceived {signal.n_antennas} x {signal.n_slots} samples "
      f"({len(scenario.pattern)} activated antennas, one per slot)")

estimate = run(signal, scenario, plan)[0]
print(f"\nestimated position: {np.round(estimate.position, 4)}")
print(f"estimated attitude: roll {estimate.attitude.roll:+.3f}, "
      f"pitch {estimate.attitude.pitch:+.3f}, yaw {estimate.attitude.yaw:+.3f} rad")

pos_err = np.linalg.norm(estimate.position - truth.position)
r_true = rotation_basis(truth.attitude).matrix
nmse = np.sum((r_true - estimate.basis.matrix) ** 2) / 2
print(f"\nposition error: {pos_err * 100:.1f} cm")
print(f"attitude error (normalized Frobenius): {nmse:.4f}")
print(f"position std from the Laplace fit: "
      f"{np.round(np.sqrt(np.diag(estimate.cov_position)), 3)} m")
print("\n(the range direction carries most of the uncertainty: a 23 cm "
      "aperture triangulates depth at several meters only weakly)")
