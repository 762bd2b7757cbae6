"""Iterative message-passing estimator for multi-array position and
attitude recovery.

One iteration alternates two stages over a partitioned BS array:

1. *Angle stage*: for every (subarray, slot), convert the current Gaussian
   antenna-position messages into von Mises priors over the direction
   cosines, run the multi-source line-spectral estimator on the snapshot,
   and keep the extrinsic (data-only) part of each posterior.
2. *Fusion stage*: for every (MS, slot), fit a Gaussian to the composite
   of all subarrays' extrinsic cosine beliefs (Laplace), then solve a
   leave-one-slot-out MAP for the MS pose, linearize the rigid-body
   constraint to push pose beliefs back to antenna positions, and combine
   with leave-one-subarray-out composites to form the next iteration's
   antenna-position messages.

After the final iteration the pose of each MS is the MAP point of the
all-slots objective.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .aoa import (
    AoaOptions,
    SourcePrior,
    SubarraySnapshot,
    estimate_aoa_posteriors,
    extrinsic_from_posterior,
    match_components,
)
from .channel import ReceivedSignal, ScenarioConfig, extract_subarray
from .circular import (
    GaOptions,
    GaussianBelief,
    gaussian_product,
    gaussian_to_vm,
    laplace_fit,
)
from .geometry import (
    EulerAngles,
    Pose,
    RotationBasis,
    canonicalize_euler,
    euler_from_rotation,
    rotation_basis,
    rotation_basis_derivatives,
    rotation_matrix_from_theta,
)
from .partition import PartitionPlan

_KAPPA_FLOOR = 1e-12


@dataclass(frozen=True)
class EstimatorConfig:
    """Estimator controls.

    ``iterations = None`` resolves to one pass for a single MS and five
    for multiple MSs. ``coeff_prior_var = None`` resolves to the nominal
    link budget at ``nominal_range``. Position and attitude priors default
    to non-informative values.
    """

    iterations: int | None = None
    sigma_ini: float = 1e3
    coeff_prior_var: float | None = None
    position_prior_std: float = 1e3
    attitude_prior_chi: tuple = (0.0, 0.0, 0.0)
    attitude_prior_kappa: tuple = (1e-6, 1e-6, 1e-6)
    nominal_range: float | None = None
    # few plain-gradient steps; the curvature polish inside laplace_fit
    # does the heavy lifting on these smooth objectives
    ga: GaOptions = GaOptions(max_iter=8)
    aoa: AoaOptions = AoaOptions()

    def resolve(self, scenario: ScenarioConfig) -> "EstimatorConfig":
        """Fill in scenario-dependent defaults."""
        iters = self.iterations
        if iters is None:
            iters = 1 if scenario.num_ms == 1 else 5
        r_nom = self.nominal_range
        if r_nom is None:
            r_nom = scenario.nominal_range
        var = self.coeff_prior_var
        if var is None:
            beta = float(np.mean(scenario.antenna_gains))
            amp = math.sqrt(scenario.tx_power_w) * beta * scenario.lam / (
                4.0 * math.pi * r_nom
            )
            var = max(amp * amp, 1e-300)
        return replace(
            self,
            iterations=int(iters),
            coeff_prior_var=float(var),
            nominal_range=float(r_nom),
        )


@dataclass
class MessageState:
    """All message parameters, indexed (subarray, MS, slot) or (MS, slot)."""

    prior_mean: np.ndarray  # (M, K, T, 3)
    prior_cov: np.ndarray  # (M, K, T, 3, 3)
    ext_chi: np.ndarray  # (M, K, T, 2)
    ext_kappa: np.ndarray  # (M, K, T, 2)
    coeff_mag: np.ndarray  # (M, K, T)
    fused_mean: np.ndarray  # (K, T, 3)
    fused_cov: np.ndarray  # (K, T, 3, 3)
    fused_ok: np.ndarray  # (K, T) bool
    pose_mean: np.ndarray  # (K, T, 6)
    pose_cov_p: np.ndarray  # (K, T, 3, 3)
    pose_cov_theta: np.ndarray  # (K, T, 3, 3)
    eta_mean: np.ndarray  # (K, T, 3)
    eta_cov: np.ndarray  # (K, T, 3, 3)
    iteration: int = 0
    have_pose: bool = False
    flags: list = field(default_factory=list)

    @property
    def shape(self) -> tuple:
        return self.prior_mean.shape[:3]


def init_messages(m_count: int, k_count: int, t_count: int, cfg: EstimatorConfig) -> MessageState:
    """Initial antenna-position messages: mean [0, 0, 1], covariance
    sigma_ini^2 I, identically for every (subarray, MS, slot)."""
    if cfg.sigma_ini <= 0:
        raise ValueError("sigma_ini must be positive")
    mean = np.zeros((m_count, k_count, t_count, 3))
    mean[..., 2] = 1.0
    cov = np.zeros((m_count, k_count, t_count, 3, 3))
    cov[...] = cfg.sigma_ini**2 * np.eye(3)
    return MessageState(
        prior_mean=mean,
        prior_cov=cov,
        ext_chi=np.zeros((m_count, k_count, t_count, 2)),
        ext_kappa=np.zeros((m_count, k_count, t_count, 2)),
        coeff_mag=np.zeros((m_count, k_count, t_count)),
        fused_mean=np.zeros((k_count, t_count, 3)),
        fused_cov=np.tile(np.eye(3), (k_count, t_count, 1, 1)),
        fused_ok=np.zeros((k_count, t_count), dtype=bool),
        pose_mean=np.zeros((k_count, t_count, 6)),
        pose_cov_p=np.tile(np.eye(3), (k_count, t_count, 1, 1)),
        pose_cov_theta=np.tile(np.eye(3), (k_count, t_count, 1, 1)),
        eta_mean=np.zeros((k_count, t_count, 3)),
        eta_cov=np.tile(np.eye(3), (k_count, t_count, 1, 1)),
    )


# ---------------------------------------------------------------------------
# composite cosine-belief objective (the position-space likelihood message)


def composite_vm_value(p: np.ndarray, refs: np.ndarray, chis: np.ndarray, kappas: np.ndarray) -> float:
    """Sum over subarrays/axes of kappa * cos(pi * phi_axis(p) - chi)."""
    diff = np.asarray(p, dtype=float)[None, :] - refs
    r = np.linalg.norm(diff, axis=1)
    phi = diff[:, :2] / r[:, None]
    return float(np.sum(kappas * np.cos(np.pi * phi - chis)))


def composite_vm_grad(p: np.ndarray, refs: np.ndarray, chis: np.ndarray, kappas: np.ndarray) -> np.ndarray:
    """Analytic gradient of `composite_vm_value` w.r.t. the position."""
    diff = np.asarray(p, dtype=float)[None, :] - refs
    r = np.linalg.norm(diff, axis=1)
    u = diff / r[:, None]
    phi = u[:, :2]
    s = kappas * np.sin(np.pi * phi - chis)  # (M, 2)
    grad = np.zeros(3)
    for axis in range(2):
        e = np.zeros(3)
        e[axis] = 1.0
        dphi = (e[None, :] - phi[:, axis : axis + 1] * u) / r[:, None]
        grad -= np.pi * np.sum(s[:, axis : axis + 1] * dphi, axis=0)
    return grad


def back_projected_direction(chi: np.ndarray) -> np.ndarray:
    """Unit direction (front half-space) from a pair of extrinsic mean
    angles over the scaled cosines."""
    phi = np.asarray(chi, dtype=float) / np.pi
    sq = float(phi @ phi)
    if sq > 1.0:
        phi = phi / math.sqrt(sq)
        sq = 1.0
    return np.array([phi[0], phi[1], math.sqrt(max(0.0, 1.0 - sq))])


def triangulate_init(
    refs: np.ndarray, chis: np.ndarray, kappas: np.ndarray, nominal_range: float
) -> np.ndarray:
    """Coarse position fix from back-projected subarray rays.

    Uses the least-squares intersection of the rays from the two most
    widely separated informative subarrays; with a single subarray the
    fix is placed at the nominal range along its ray.
    """
    strength = kappas.sum(axis=1)
    usable = np.flatnonzero(strength > _KAPPA_FLOOR)
    if usable.size == 0:
        return np.array([0.0, 0.0, nominal_range])
    dirs = np.array([back_projected_direction(chis[m]) for m in usable])
    if usable.size == 1:
        return refs[usable[0]] + nominal_range * dirs[0]
    # most widely separated pair of reference antennas
    sub_refs = refs[usable]
    d2 = np.sum((sub_refs[:, None, :] - sub_refs[None, :, :]) ** 2, axis=2)
    a, b = np.unravel_index(int(np.argmax(d2)), d2.shape)
    mat = np.zeros((3, 3))
    rhs = np.zeros(3)
    for idx in (a, b):
        proj = np.eye(3) - np.outer(dirs[idx], dirs[idx])
        mat += proj
        rhs += proj @ sub_refs[idx]
    try:
        p = np.linalg.solve(mat + 1e-12 * np.eye(3), rhs)
    except np.linalg.LinAlgError:
        p = None
    if p is None or not np.all(np.isfinite(p)) or np.linalg.norm(p) > 100.0 * nominal_range:
        center = sub_refs[[a, b]].mean(axis=0)
        mean_dir = dirs[[a, b]].mean(axis=0)
        mean_dir /= max(np.linalg.norm(mean_dir), 1e-12)
        return center + nominal_range * mean_dir
    return p


def fuse_antenna_position(
    state: MessageState, k: int, t: int, plan: PartitionPlan, cfg: EstimatorConfig
):
    """Laplace-fit the product of all subarrays' cosine beliefs for one
    activated antenna; returns (belief, ok, flags)."""
    refs = plan.reference_positions()
    chis = state.ext_chi[:, k, t, :]
    kappas = state.ext_kappa[:, k, t, :]
    if np.all(kappas <= _KAPPA_FLOOR):
        init = state.prior_mean[0, k, t]
        belief = GaussianBelief(init, cfg.sigma_ini**2 * np.eye(3))
        return belief, False, ["flat_composite"]
    if state.iteration > 0 and state.fused_ok[k, t]:
        init = state.fused_mean[k, t]
    else:
        init = triangulate_init(refs, chis, kappas, cfg.nominal_range)
    fit = laplace_fit(
        lambda p: composite_vm_value(p, refs, chis, kappas),
        init,
        grad=lambda p: composite_vm_grad(p, refs, chis, kappas),
        opts=cfg.ga,
    )
    flags = []
    if not fit.converged:
        flags.append("fusion_nonconverged")
    if fit.regularized:
        flags.append("fusion_regularized")
    if np.linalg.norm(fit.mean) > 50.0 * cfg.nominal_range:
        # a flat or conflicting composite let the ascent run away; keep the
        # initialization with a non-informative covariance instead
        belief = GaussianBelief(init, cfg.sigma_ini**2 * np.eye(3))
        return belief, False, flags + ["fusion_diverged"]
    return GaussianBelief(fit.mean, fit.cov), fit.converged, flags


# ---------------------------------------------------------------------------
# pose objective (leave-one-out messages and the final MAP share it)


@dataclass(frozen=True)
class PosePrior:
    """Gaussian position prior (zero mean) and per-axis von Mises attitude
    priors with the doubled-angle pitch convention."""

    position_std: float
    chi: np.ndarray
    kappa: np.ndarray

    def log_pdf_terms(self, p: np.ndarray, theta: np.ndarray) -> float:
        val = -0.5 * float(p @ p) / self.position_std**2
        val += self.kappa[0] * math.cos(theta[0] - self.chi[0])
        val += self.kappa[1] * math.cos(2.0 * theta[1] - self.chi[1])
        val += self.kappa[2] * math.cos(theta[2] - self.chi[2])
        return val

    def grad_terms(self, p: np.ndarray, theta: np.ndarray):
        gp = -p / self.position_std**2
        gt = np.array(
            [
                -self.kappa[0] * math.sin(theta[0] - self.chi[0]),
                -2.0 * self.kappa[1] * math.sin(2.0 * theta[1] - self.chi[1]),
                -self.kappa[2] * math.sin(theta[2] - self.chi[2]),
            ]
        )
        return gp, gt


def pose_objective(
    x: np.ndarray,
    obs_means: np.ndarray,
    obs_weights: np.ndarray,
    q_locals: np.ndarray,
    prior: PosePrior,
) -> float:
    """log posterior of (position, attitude) given Gaussian antenna-position
    observations: sum of quadratic residual terms plus the priors."""
    p, theta = x[:3], x[3:]
    basis = rotation_matrix_from_theta(theta)
    val = 0.0
    for i in range(obs_means.shape[0]):
        e = obs_means[i] - p - basis @ q_locals[i]
        val -= 0.5 * float(e @ obs_weights[i] @ e)
    return val + prior.log_pdf_terms(p, theta)


def pose_gradient(
    x: np.ndarray,
    obs_means: np.ndarray,
    obs_weights: np.ndarray,
    q_locals: np.ndarray,
    prior: PosePrior,
) -> np.ndarray:
    """Analytic gradient of `pose_objective`."""
    p, theta = x[:3], x[3:]
    basis = rotation_matrix_from_theta(theta)
    dbasis = rotation_basis_derivatives(theta)
    grad = np.zeros(6)
    for i in range(obs_means.shape[0]):
        we = obs_weights[i] @ (obs_means[i] - p - basis @ q_locals[i])
        grad[:3] += we
        for axis in range(3):
            grad[3 + axis] += float((dbasis[axis] @ q_locals[i]) @ we)
    gp, gt = prior.grad_terms(p, theta)
    grad[:3] += gp
    grad[3:] += gt
    return grad


def procrustes_pose(obs_means: np.ndarray, q_locals: np.ndarray) -> np.ndarray:
    """Closed-form pose fit: orthogonal alignment of the planar antenna
    layout to the observed positions (unweighted)."""
    n = obs_means.shape[0]
    q3 = np.zeros((n, 3))
    q3[:, :2] = q_locals
    if n == 0:
        return np.zeros(6)
    if n == 1:
        x = np.zeros(6)
        x[:3] = obs_means[0] - q3[0]
        return x
    qc = q3 - q3.mean(axis=0)
    yc = obs_means - obs_means.mean(axis=0)
    h = qc.T @ yc
    u, _, vt = np.linalg.svd(h)
    v = vt.T
    d = np.sign(np.linalg.det(v @ u.T))
    r3 = v @ np.diag([1.0, 1.0, d]) @ u.T
    p = obs_means.mean(axis=0) - r3 @ q3.mean(axis=0)
    angles = euler_from_rotation(r3)
    return np.concatenate([p, angles.as_array()])


def update_pose_messages(
    state: MessageState, k: int, q_locals: np.ndarray, cfg: EstimatorConfig
):
    """Leave-one-slot-out MAP pose messages for MS ``k``.

    For each slot t, the pose is fit to the fused antenna positions of the
    other slots; covariance blocks come from the 6x6 Laplace fit. Results
    are written into the state. Returns accumulated flags.
    """
    t_count = state.fused_mean.shape[1]
    prior = PosePrior(
        cfg.position_prior_std,
        np.asarray(cfg.attitude_prior_chi, dtype=float),
        np.asarray(cfg.attitude_prior_kappa, dtype=float),
    )
    weights = np.zeros((t_count, 3, 3))
    for t in range(t_count):
        weights[t] = np.linalg.inv(state.fused_cov[k, t])
    flags = []
    for t in range(t_count):
        idx = [tt for tt in range(t_count) if tt != t and state.fused_ok[k, tt]]
        if not idx:
            idx = [tt for tt in range(t_count) if tt != t]
        obs = state.fused_mean[k, idx]
        w = weights[idx]
        q = q_locals[idx]
        if state.have_pose:
            init = state.pose_mean[k, t]
        else:
            init = procrustes_pose(obs, q)
        fit = laplace_fit(
            lambda x: pose_objective(x, obs, w, q, prior),
            init,
            grad=lambda x: pose_gradient(x, obs, w, q, prior),
            opts=cfg.ga,
        )
        state.pose_mean[k, t] = fit.mean
        state.pose_cov_p[k, t] = fit.cov[:3, :3]
        state.pose_cov_theta[k, t] = fit.cov[3:, 3:]
        if not fit.converged:
            flags.append(f"pose_nonconverged_k{k}t{t}")
        if fit.regularized:
            flags.append(f"pose_regularized_k{k}t{t}")
        vals = np.linalg.eigvalsh(fit.cov)
        if vals[-1] > 1e12 * max(vals[0], 1e-300):
            # an unobservable pose direction (e.g. rotation about a
            # collinear antenna pattern) survives only through the prior
            flags.append(f"pose_near_singular_k{k}t{t}")
    return flags


def project_pose_to_antennas(
    state: MessageState, k: int, t: int, q_local: np.ndarray
) -> GaussianBelief:
    """Push a pose belief through the rigid-body constraint via first-order
    linearization of the rotation in the attitude."""
    pose = state.pose_mean[k, t]
    basis = rotation_matrix_from_theta(pose[3:])
    mean = pose[:3] + basis @ q_local
    dbasis = rotation_basis_derivatives(pose[3:])
    q_mat = np.stack([dbasis[axis] @ q_local for axis in range(3)], axis=1)
    cov = state.pose_cov_p[k, t] + q_mat @ state.pose_cov_theta[k, t] @ q_mat.T
    return GaussianBelief(mean, 0.5 * (cov + cov.T))


def feedback_messages(
    state: MessageState, m: int, k: int, t: int, plan: PartitionPlan, cfg: EstimatorConfig
):
    """Next-iteration antenna-position message for subarray ``m``: the
    pose-projected belief combined (information form) with the Laplace fit
    of the leave-subarray-m-out composite cosine belief."""
    eta = GaussianBelief(state.eta_mean[k, t], state.eta_cov[k, t])
    m_count = state.shape[0]
    if m_count == 1:
        return eta, []
    keep = [mm for mm in range(m_count) if mm != m]
    refs = plan.reference_positions()[keep]
    chis = state.ext_chi[keep, k, t, :]
    kappas = state.ext_kappa[keep, k, t, :]
    if np.all(kappas <= _KAPPA_FLOOR):
        return eta, ["gamma_flat"]
    fit = laplace_fit(
        lambda p: composite_vm_value(p, refs, chis, kappas),
        state.fused_mean[k, t],
        grad=lambda p: composite_vm_grad(p, refs, chis, kappas),
        opts=cfg.ga,
    )
    if fit.regularized:
        return eta, ["gamma_indefinite_dropped"]
    return gaussian_product(eta, fit.belief), []


# ---------------------------------------------------------------------------
# angle stage


def _relabel_first_iteration(posts_by_mt, plan: PartitionPlan, k_count: int):
    """Associate per-(subarray, slot) posterior components with MS labels.

    Applies only when priors carry no information: the subarray whose
    reference antenna is nearest the array center anchors the labels at
    slot 1 (descending amplitude magnitude); its other slots are matched
    to slot 1, and every other subarray is matched to the anchor's labels
    for the same slot, by optimal assignment on circular distance.
    """
    refs = plan.reference_positions()
    anchor = int(np.argmin(np.linalg.norm(refs, axis=1)))
    t_count = len(posts_by_mt[anchor])

    def chi_matrix(posts):
        return np.array([p.pair.as_arrays()[0] for p in posts])

    labeled = [[None] * t_count for _ in range(len(posts_by_mt))]
    order = sorted(
        range(k_count),
        key=lambda kk: -abs(posts_by_mt[anchor][0][kk].coeff_mean),
    )
    labeled[anchor][0] = [posts_by_mt[anchor][0][kk] for kk in order]
    for t in range(1, t_count):
        ref_chi = chi_matrix(labeled[anchor][0])
        perm = match_components(ref_chi, chi_matrix(posts_by_mt[anchor][t]))
        labeled[anchor][t] = [posts_by_mt[anchor][t][j] for j in perm]
    for m in range(len(posts_by_mt)):
        if m == anchor:
            continue
        for t in range(t_count):
            ref_chi = chi_matrix(labeled[anchor][t])
            perm = match_components(ref_chi, chi_matrix(posts_by_mt[m][t]))
            labeled[m][t] = [posts_by_mt[m][t][j] for j in perm]
    return labeled


def aoa_module_pass(
    state: MessageState,
    signal: ReceivedSignal,
    plan: PartitionPlan,
    scenario: ScenarioConfig,
    cfg: EstimatorConfig,
):
    """Run the line-spectral stage on every (subarray, slot) and store the
    extrinsic cosine beliefs."""
    m_count, k_count, t_count = state.shape
    refs = plan.reference_positions()
    posts_by_mt = [[None] * t_count for _ in range(m_count)]
    priors_by_mt = [[None] * t_count for _ in range(m_count)]
    flags = []
    for m in range(m_count):
        for t in range(t_count):
            snapshot = SubarraySnapshot(
                extract_subarray(signal, plan, m + 1, t),
                scenario.noise_power_w,
                k_count,
            )
            priors = []
            for k in range(k_count):
                pair = gaussian_to_vm(
                    GaussianBelief(
                        state.prior_mean[m, k, t], state.prior_cov[m, k, t]
                    ),
                    refs[m],
                )
                priors.append(SourcePrior(pair, cfg.coeff_prior_var))
            posts_by_mt[m][t] = estimate_aoa_posteriors(snapshot, priors, cfg.aoa)
            priors_by_mt[m][t] = priors
    if state.iteration == 0 and k_count > 1:
        posts_by_mt = _relabel_first_iteration(posts_by_mt, plan, k_count)
    for m in range(m_count):
        for t in range(t_count):
            exts = extrinsic_from_posterior(posts_by_mt[m][t], priors_by_mt[m][t])
            for k in range(k_count):
                chi, kappa = exts[k].as_arrays()
                state.ext_chi[m, k, t] = chi
                state.ext_kappa[m, k, t] = kappa
                state.coeff_mag[m, k, t] = abs(posts_by_mt[m][t][k].coeff_mean)
                if any(posts_by_mt[m][t][k].curvature_fallback):
                    flags.append(f"aoa_curvature_m{m}k{k}t{t}")
    return flags


# ---------------------------------------------------------------------------
# final output


@dataclass
class PoseEstimate:
    """Estimated pose of one MS with Laplace covariance diagnostics."""

    position: np.ndarray
    attitude: EulerAngles
    basis: RotationBasis
    cov_position: np.ndarray
    cov_attitude: np.ndarray
    converged: bool = True
    flags: tuple = ()

    @property
    def pose(self) -> Pose:
        return Pose(self.position, self.attitude)


def final_map(
    state: MessageState, q_locals: np.ndarray, cfg: EstimatorConfig
) -> list:
    """All-slots MAP pose per MS, seeded by the better of the closed-form
    alignment fit and the last pose message."""
    k_count, t_count = state.fused_mean.shape[:2]
    prior = PosePrior(
        cfg.position_prior_std,
        np.asarray(cfg.attitude_prior_chi, dtype=float),
        np.asarray(cfg.attitude_prior_kappa, dtype=float),
    )
    out = []
    for k in range(k_count):
        obs = state.fused_mean[k]
        w = np.array([np.linalg.inv(state.fused_cov[k, t]) for t in range(t_count)])
        inits = [procrustes_pose(obs, q_locals)]
        if state.have_pose:
            inits.append(state.pose_mean[k, 0].copy())
        scores = [pose_objective(x, obs, w, q_locals, prior) for x in inits]
        init = inits[int(np.argmax(scores))]
        fit = laplace_fit(
            lambda x: pose_objective(x, obs, w, q_locals, prior),
            init,
            grad=lambda x: pose_gradient(x, obs, w, q_locals, prior),
            opts=cfg.ga,
        )
        attitude = canonicalize_euler(fit.mean[3:])
        flags = []
        if not fit.converged:
            flags.append("final_map_nonconverged")
        if fit.regularized:
            flags.append("final_map_regularized")
        out.append(
            PoseEstimate(
                position=fit.mean[:3],
                attitude=attitude,
                basis=rotation_basis(attitude),
                cov_position=fit.cov[:3, :3],
                cov_attitude=fit.cov[3:, 3:],
                converged=fit.converged,
                flags=tuple(flags),
            )
        )
    return out


def run(
    signal: ReceivedSignal,
    scenario: ScenarioConfig,
    plan: PartitionPlan,
    cfg: EstimatorConfig | None = None,
) -> list:
    """Full estimation pass: iterate angle and fusion stages, then output
    the MAP pose of every MS. Deterministic given (signal, config)."""
    cfg = (cfg or EstimatorConfig()).resolve(scenario)
    m_count = plan.n_subarrays
    k_count = scenario.num_ms
    t_count = scenario.n_slots
    if signal.samples.shape != (scenario.bs.n_antennas, t_count):
        raise ValueError(
            f"signal shape {signal.samples.shape} does not match scenario "
            f"({scenario.bs.n_antennas}, {t_count})"
        )
    q_locals = scenario.pattern.local_positions(scenario.ms, scenario.lam)
    state = init_messages(m_count, k_count, t_count, cfg)
    for iteration in range(cfg.iterations):
        state.iteration = iteration
        state.flags += aoa_module_pass(state, signal, plan, scenario, cfg)
        for k in range(k_count):
            for t in range(t_count):
                belief, ok, flags = fuse_antenna_position(state, k, t, plan, cfg)
                state.fused_mean[k, t] = belief.mean
                state.fused_cov[k, t] = belief.cov
                state.fused_ok[k, t] = ok
                state.flags += flags
        for k in range(k_count):
            state.flags += update_pose_messages(state, k, q_locals, cfg)
        state.have_pose = True
        for k in range(k_count):
            for t in range(t_count):
                eta = project_pose_to_antennas(state, k, t, q_locals[t])
                state.eta_mean[k, t] = eta.mean
                state.eta_cov[k, t] = eta.cov
        if iteration < cfg.iterations - 1:
            for m in range(m_count):
                for k in range(k_count):
                    for t in range(t_count):
                        belief, flags = feedback_messages(state, m, k, t, plan, cfg)
                        state.prior_mean[m, k, t] = belief.mean
                        state.prior_cov[m, k, t] = belief.cov
                        state.flags += flags
    return final_map(state, q_locals, cfg)
