"""Per-subarray multi-source 2-D direction-cosine estimation with von
Mises priors.

Each subarray snapshot follows a line-spectral model: a sum of K planar
phase ramps (one per source) in the two direction cosines, with unknown
complex amplitudes. Estimation is variational coordinate ascent with the
amplitude marginalized under its Gaussian prior: for fixed other sources,
the profiled objective in one source's cosines is::

    F(phi) = v / sigma_w^4 * |<steer(phi), residual>|^2 + log prior(phi)

with ``v`` the amplitude's posterior variance. Amplitude updates and
ascent steps on F both increase the joint MAP objective, so sweeps are
monotone. Posterior concentrations come from the negated curvature of F
at its maximizers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .circular import VmPair, VonMises, vm_extrinsic


@dataclass
class SubarraySnapshot:
    """One subarray's received block in one slot plus its noise level."""

    samples: np.ndarray  # (nx, ny) complex
    noise_power: float
    source_count: int

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=np.complex128)
        if s.ndim != 2:
            raise ValueError(f"snapshot must be 2-D, got shape {s.shape}")
        if self.noise_power <= 0:
            raise ValueError("noise power must be positive")
        if self.source_count < 1:
            raise ValueError("need at least one source")
        self.samples = s


@dataclass(frozen=True)
class SourcePrior:
    """Direction-cosine prior for one source plus its amplitude prior
    variance."""

    pair: VmPair
    coeff_prior_var: float

    def __post_init__(self):
        if self.coeff_prior_var <= 0:
            raise ValueError("amplitude prior variance must be positive")


@dataclass
class AoaPosterior:
    """Posterior belief for one source: per-axis von Mises over the scaled
    cosines, plus the amplitude's Gaussian posterior (diagnostic)."""

    pair: VmPair
    coeff_mean: complex
    coeff_var: float
    curvature_fallback: tuple = (False, False)

    @property
    def cosines(self) -> np.ndarray:
        """Point estimate of (phi_x, phi_y) from the posterior means."""
        return np.array([self.pair.vx.chi, self.pair.vy.chi]) / math.pi


@dataclass(frozen=True)
class AoaOptions:
    max_sweeps: int = 20
    move_tol: float = 1e-6
    pad_factor: int = 4
    grad_tol: float = 1e-8
    step_tol: float = 3e-8
    max_ascent: int = 40
    max_backtracks: int = 50


def _wrap_cosine(phi: float) -> float:
    """Wrap a direction cosine to [-1, 1) (the angle pi*phi has period 2)."""
    return float(np.mod(phi + 1.0, 2.0) - 1.0)


class _SteeringWorkspace:
    """Cached index ramps for one snapshot size."""

    def __init__(self, nx: int, ny: int):
        self.nx, self.ny = nx, ny
        self.ix = np.arange(1, nx + 1, dtype=float)
        self.jy = np.arange(1, ny + 1, dtype=float)
        self.n = nx * ny

    def steering(self, phi) -> np.ndarray:
        ax = np.exp(1j * np.pi * phi[0] * self.ix)
        ay = np.exp(1j * np.pi * phi[1] * self.jy)
        return ax[:, None] * ay[None, :]

    def projections(self, resid: np.ndarray, phi):
        """g, dg/dphi (2,), and the 2x2 Hessian of g at phi, where
        g = <steer(phi), resid> = sum conj(steer) * resid."""
        cx = np.exp(-1j * np.pi * phi[0] * self.ix)
        cy = np.exp(-1j * np.pi * phi[1] * self.jy)
        rx = resid @ cy  # (nx,)
        g = cx @ rx
        dx = -1j * np.pi * self.ix * cx
        ddx = (-1j * np.pi * self.ix) ** 2 * cx
        gy = cx @ resid  # (ny,)
        dy = -1j * np.pi * self.jy * cy
        ddy = (-1j * np.pi * self.jy) ** 2 * cy
        g_x = dx @ rx
        g_y = gy @ dy
        g_xx = ddx @ rx
        g_yy = gy @ ddy
        g_xy = (dx @ resid) @ dy
        return g, np.array([g_x, g_y]), np.array([[g_xx, g_xy], [g_xy, g_yy]])


def _objective(ws, resid, phi, chi, kappa, weight):
    g, dg, ddg = ws.projections(resid, phi)
    ang = np.pi * np.asarray(phi) - chi
    f = weight * (g.real**2 + g.imag**2) + float(np.sum(kappa * np.cos(ang)))
    grad = 2.0 * weight * np.real(np.conj(g) * dg) - np.pi * kappa * np.sin(ang)
    hess = 2.0 * weight * np.real(np.outer(np.conj(dg), dg) + np.conj(g) * ddg)
    hess = hess - np.diag(np.pi**2 * kappa * np.cos(ang))
    return f, grad, 0.5 * (hess + hess.T)


def _ascend(ws, resid, phi0, chi, kappa, weight, opts: AoaOptions):
    """Maximize F from phi0 with curvature-aware backtracking ascent."""
    phi = np.asarray(phi0, dtype=float).copy()
    f, grad, hess = _objective(ws, resid, phi, chi, kappa, weight)
    for _ in range(opts.max_ascent):
        gnorm = np.linalg.norm(grad)
        if gnorm < opts.grad_tol * max(1.0, abs(f)):
            break
        # Newton direction when the curvature is usable, gradient otherwise
        vals, vecs = np.linalg.eigh(hess)
        if np.all(vals < 0):
            direction = vecs @ ((vecs.T @ grad) / -vals)
        else:
            direction = grad / max(gnorm, 1e-300)
        slope = float(grad @ direction)
        if slope <= 0:
            direction, slope = grad, float(grad @ grad)
        step, accepted = 1.0, False
        for _ in range(opts.max_backtracks):
            cand = phi + step * direction
            f_new, g_new, h_new = _objective(ws, resid, cand, chi, kappa, weight)
            if np.isfinite(f_new) and f_new >= f + 1e-4 * step * slope:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            break
        moved = float(np.linalg.norm(step * direction))
        phi, f, grad, hess = cand, f_new, g_new, h_new
        if moved < opts.step_tol:
            break
    return phi, f, grad, hess


def _periodogram_init(ws, resid, chi, kappa, weight, pad_factor):
    """Prior-weighted zero-padded periodogram peak over the cosine grid."""
    gx = pad_factor * ws.nx
    gy = pad_factor * ws.ny
    x = np.zeros((gx, gy), dtype=np.complex128)
    signs = np.outer((-1.0) ** ws.ix, (-1.0) ** ws.jy)
    x[1 : ws.nx + 1, 1 : ws.ny + 1] = resid * signs
    g_grid = np.fft.fft2(x)
    phi_x = -1.0 + 2.0 * np.arange(gx) / gx
    phi_y = -1.0 + 2.0 * np.arange(gy) / gy
    p = weight * np.abs(g_grid) ** 2
    p += (kappa[0] * np.cos(np.pi * phi_x - chi[0]))[:, None]
    p += (kappa[1] * np.cos(np.pi * phi_y - chi[1]))[None, :]
    i1, i2 = np.unravel_index(int(np.argmax(p)), p.shape)
    return np.array([phi_x[i1], phi_y[i2]])


def estimate_aoa_posteriors(
    snapshot: SubarraySnapshot,
    priors,
    opts: AoaOptions = AoaOptions(),
    diagnostics: bool = False,
):
    """Joint posterior estimation for all sources in one snapshot.

    Sources are initialized sequentially (most concentrated prior first)
    at the peak of the prior-weighted periodogram of the running residual,
    then refined by coordinate-ascent sweeps until no cosine moves more
    than ``move_tol``. Returns posteriors in prior order; when
    ``diagnostics`` is set, also returns the joint-objective trace (one
    value per sweep, non-decreasing).
    """
    priors = list(priors)
    k_count = snapshot.source_count
    if len(priors) != k_count:
        raise ValueError(f"expected {k_count} priors, got {len(priors)}")
    y = snapshot.samples
    ws = _SteeringWorkspace(*y.shape)
    sigw2 = snapshot.noise_power

    chi_arr = np.array([p.pair.as_arrays()[0] for p in priors])  # (K, 2)
    kap_arr = np.array([p.pair.as_arrays()[1] for p in priors])  # (K, 2)
    post_var = np.array(
        [1.0 / (ws.n / sigw2 + 1.0 / p.coeff_prior_var) for p in priors]
    )
    weights = post_var / sigw2**2

    # processing order depends only on prior values (not list positions),
    # so permuting the prior list permutes the outputs identically
    order = sorted(
        range(k_count),
        key=lambda k: (
            -float(np.sum(kap_arr[k])),
            float(chi_arr[k, 0]),
            float(chi_arr[k, 1]),
        ),
    )
    phis = np.zeros((k_count, 2))
    coeffs = np.zeros(k_count, dtype=np.complex128)

    def _coeff_update(k, resid):
        g, _, _ = ws.projections(resid, phis[k])
        return post_var[k] / sigw2 * g

    resid = y.copy()
    for k in order:
        phis[k] = _periodogram_init(
            ws, resid, chi_arr[k], kap_arr[k], weights[k], opts.pad_factor
        )
        phis[k], _, _, _ = _ascend(
            ws, resid, phis[k], chi_arr[k], kap_arr[k], weights[k], opts
        )
        coeffs[k] = _coeff_update(k, resid)
        resid = resid - coeffs[k] * ws.steering(phis[k])

    def _joint_objective():
        model = sum(coeffs[k] * ws.steering(phis[k]) for k in range(k_count))
        val = -float(np.sum(np.abs(y - model) ** 2)) / sigw2
        for k in range(k_count):
            val -= abs(coeffs[k]) ** 2 / priors[k].coeff_prior_var
            ang = np.pi * phis[k] - chi_arr[k]
            val += float(np.sum(kap_arr[k] * np.cos(ang)))
        return val

    trace = [_joint_objective()] if diagnostics else None
    for _ in range(opts.max_sweeps):
        max_move = 0.0
        for k in order:
            others = sum(
                coeffs[kk] * ws.steering(phis[kk]) for kk in range(k_count) if kk != k
            )
            resid_k = y - others if k_count > 1 else y
            coeffs[k] = _coeff_update(k, resid_k)
            new_phi, _, _, _ = _ascend(
                ws, resid_k, phis[k], chi_arr[k], kap_arr[k], weights[k], opts
            )
            max_move = max(max_move, float(np.max(np.abs(new_phi - phis[k]))))
            phis[k] = new_phi
            coeffs[k] = _coeff_update(k, resid_k)
        if diagnostics:
            trace.append(_joint_objective())
        if max_move < opts.move_tol:
            break

    posteriors = []
    for k in range(k_count):
        others = sum(
            coeffs[kk] * ws.steering(phis[kk]) for kk in range(k_count) if kk != k
        )
        resid_k = y - others if k_count > 1 else y
        _, _, hess = _objective(
            ws, resid_k, phis[k], chi_arr[k], kap_arr[k], weights[k]
        )
        comps, fallback = [], []
        for axis in range(2):
            curv = hess[axis, axis]
            if curv < 0:
                kappa_post = -curv / np.pi**2
                fallback.append(False)
            else:
                kappa_post = float(kap_arr[k, axis])
                fallback.append(True)
            comps.append(
                VonMises(np.pi * _wrap_cosine(phis[k, axis]), kappa_post)
            )
        posteriors.append(
            AoaPosterior(
                pair=VmPair(comps[0], comps[1]),
                coeff_mean=complex(_coeff_update(k, resid_k)),
                coeff_var=float(post_var[k]),
                curvature_fallback=tuple(fallback),
            )
        )
    if diagnostics:
        return posteriors, np.array(trace)
    return posteriors


def extrinsic_from_posterior(posteriors, priors):
    """Per source, per axis: remove the prior's contribution from the
    posterior, leaving the data-only (extrinsic) belief."""
    if len(posteriors) != len(priors):
        raise ValueError("posterior and prior lists must have equal length")
    out = []
    for post, pri in zip(posteriors, priors):
        out.append(
            VmPair(
                vm_extrinsic(post.pair.vx, pri.pair.vx),
                vm_extrinsic(post.pair.vy, pri.pair.vy),
            )
        )
    return out


def match_components(reference: np.ndarray, candidates: np.ndarray) -> np.ndarray:
    """Permutation aligning candidate angle pairs to reference pairs by
    minimal summed circular distance (optimal assignment).

    Both inputs are (K, 2) arrays of angles; returns ``perm`` such that
    ``candidates[perm[i]]`` corresponds to ``reference[i]``.
    """
    from scipy.optimize import linear_sum_assignment

    ref = np.asarray(reference, dtype=float)
    cand = np.asarray(candidates, dtype=float)
    if ref.shape != cand.shape:
        raise ValueError("reference and candidate shapes differ")
    diff = ref[:, None, :] - cand[None, :, :]
    diff = np.abs(np.mod(diff + np.pi, 2.0 * np.pi) - np.pi)
    cost = diff.sum(axis=2)
    rows, cols = linear_sum_assignment(cost)
    perm = np.empty(ref.shape[0], dtype=int)
    perm[rows] = cols
    return perm
