"""Error lower bound and the far-field benchmark on one scene.

Computes the misspecification-aware estimation-error bound for a fixed
scene, then compares the partitioned estimator and the far-field two-stage
baseline against it over a handful of noise realizations.
"""

import numpy as np

from nearfield_pae import (
    compute_bound,
    desk_scale_scenario,
    draw_poses,
    run,
    run_baseline,
    simulate_received,
    uniform_partition,
)

scenario = desk_scale_scenario(tx_power_dbm=20.0)
plan = uniform_partition(scenario.bs, 4, 4, scenario.lam)
poses = draw_poses(scenario, np.random.default_rng(7))

bound = compute_bound(poses, scenario, plan)
print(f"scene range: {np.linalg.norm(poses[0].position):.2f} m")
print(f"bound on position RMSE: {bound.position_rmse_bound * 100:.1f} cm")
print(f"bound on attitude RMSE: {bound.attitude_rmse_bound:.3f} rad")
print(f"pseudotrue position offset (model bias): "
      f"{bound.bias_position * 1000:.2f} mm")
print("(the bias equals lam*sqrt(2)/4 for even-sized subarrays: the "
      "reference antenna sits a quarter wavelength off the centroid)")

partitioned_sq, base_sq = [], []
for trial in range(6):
    rng = np.random.default_rng(100 + trial)
    signal = simulate_received(scenario, rng, poses)
    a = run(signal, scenario, plan)[0]
    b = run_baseline(signal, scenario)[0]
    partitioned_sq.append(np.sum((a.position - poses[0].position) ** 2))
    base_sq.append(np.sum((b.position - poses[0].position) ** 2))

print(f"\nover 6 noise draws at 20 dBm:")
print(f"  partitioned estimator RMSE: {np.sqrt(np.mean(partitioned_sq)) * 100:.1f} cm "
      f"(bound {bound.position_rmse_bound * 100:.1f} cm)")
print(f"  far-field baseline RMSE:    {np.sqrt(np.mean(base_sq)) * 100:.1f} cm")
print("\nnote: at this compact scale the scene is only mildly near-field "
      "for the full aperture, so the whole-array baseline keeps nearly "
      "unbiased directions and rides parallax to a range fix -- the "
      "dramatic baseline collapse requires the deep near field of much "
      "larger apertures.")
