"""Estimation mathematics for distributed max aggregation.

Pure, deterministic functions: covariance-intersection fusion of Gaussian
estimates, omega optimization, ramp-weighted combination of a local
observation with a global estimate, and the moment-matching quadrature that
keeps the combined result Gaussian.  No protocol or network awareness.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

try:
    from numba import njit
except ImportError:  # pragma: no cover - exercised only without numba
    njit = None

_SQRT_2PI = math.sqrt(2.0 * math.pi)
_SYMMETRY_TOL = 1e-12


@dataclass(slots=True)
class GaussianEstimate:
    """A (mean, covariance) estimate of the aggregate being tracked.

    Scalar estimates (the max-aggregation case) use plain floats; vector
    estimates use a length-d mean array and a d x d SPD covariance matrix.
    Instances are treated as immutable everywhere: they are shared freely
    between node states and in-flight messages and must never be mutated.
    """

    mean: float | np.ndarray
    cov: float | np.ndarray

    def __post_init__(self):
        if isinstance(self.mean, (int, float)):
            self.mean = float(self.mean)
            self.cov = float(self.cov)
            if not (math.isfinite(self.mean) and math.isfinite(self.cov)):
                raise ValueError("estimate entries must be finite")
            if not self.cov > 0.0:
                raise ValueError(f"scalar covariance must be > 0, got {self.cov}")
            return
        mean = np.asarray(self.mean, dtype=float)
        cov = np.asarray(self.cov, dtype=float)
        if mean.ndim != 1 or cov.shape != (mean.size, mean.size):
            raise ValueError(
                f"mean must be a vector and cov {mean.size}x{mean.size}, "
                f"got shapes {mean.shape} and {cov.shape}"
            )
        if not (np.isfinite(mean).all() and np.isfinite(cov).all()):
            raise ValueError("estimate entries must be finite")
        if np.abs(cov - cov.T).max() > _SYMMETRY_TOL:
            raise ValueError("covariance must be symmetric")
        if np.linalg.eigvalsh(cov).min() <= 0.0:
            raise ValueError("covariance must be positive definite")
        self.mean = mean
        self.cov = cov

    @property
    def dim(self) -> int:
        return 1 if isinstance(self.mean, float) else self.mean.size


@dataclass(frozen=True, slots=True)
class FusionParams:
    """Discretization knobs for omega search and quadrature."""

    omega_grid_points: int = 101
    quadrature_points: int = 2048
    support_sigmas: float = 6.0
    numeric_tolerance: float = 1e-9

    def __post_init__(self):
        if self.omega_grid_points < 3:
            raise ValueError("omega_grid_points must be >= 3")
        if self.quadrature_points < 64:
            raise ValueError("quadrature_points must be >= 64")
        if self.support_sigmas < 3.0:
            raise ValueError("support_sigmas must be >= 3")
        if self.numeric_tolerance <= 0.0:
            raise ValueError("numeric_tolerance must be > 0")


DEFAULT_PARAMS = FusionParams()


def _scalar(est: GaussianEstimate) -> tuple[float, float]:
    """Extract (mean, variance) from a scalar estimate in either form."""
    if isinstance(est.mean, float):
        return est.mean, est.cov
    if est.mean.size != 1:
        raise ValueError("operation requires scalar (d=1) estimates")
    return float(est.mean[0]), float(est.cov[0, 0])


def ci_fuse(a: GaussianEstimate, b: GaussianEstimate, omega: float) -> GaussianEstimate:
    """Covariance-intersection fusion of two estimates at blend weight omega.

    Information matrices are blended as omega * inv(P_AA) + (1-omega) * inv(P_BB);
    the fused mean is the information-weighted combination.  The endpoints
    omega=1 and omega=0 return a and b unchanged.
    """
    if a.dim != b.dim:
        raise ValueError(f"dimension mismatch: {a.dim} vs {b.dim}")
    if not 0.0 <= omega <= 1.0:
        raise ValueError(f"omega must lie in [0, 1], got {omega}")
    if omega == 1.0:
        return a
    if omega == 0.0:
        return b
    if isinstance(a.mean, float) and isinstance(b.mean, float):
        info = omega / a.cov + (1.0 - omega) / b.cov
        cov = 1.0 / info
        mean = cov * (omega * a.mean / a.cov + (1.0 - omega) * b.mean / b.cov)
        return GaussianEstimate(mean, cov)
    inv_a = np.linalg.inv(a.cov)
    inv_b = np.linalg.inv(b.cov)
    info = omega * inv_a + (1.0 - omega) * inv_b
    cov = np.linalg.inv(info)
    cov = 0.5 * (cov + cov.T)
    mean = cov @ (omega * inv_a @ a.mean + (1.0 - omega) * inv_b @ b.mean)
    return GaussianEstimate(mean, cov)


def _omega_objective(inv_a: np.ndarray, inv_b: np.ndarray, omega: float, objective: str) -> float:
    blend = omega * inv_a + (1.0 - omega) * inv_b
    if objective == "det":
        # det(P_CC) = 1 / det(blend); minimizing it maximizes det(blend).
        return -np.linalg.det(blend)
    return float(np.trace(np.linalg.inv(blend)))


def optimal_omega(
    a: GaussianEstimate,
    b: GaussianEstimate,
    params: FusionParams = DEFAULT_PARAMS,
    objective: str = "det",
) -> float:
    """Blend weight minimizing the chosen size measure of the fused covariance.

    Grid scan over omega followed by golden-section refinement to 1e-6.
    For scalar estimates the minimizer is an endpoint: 1 when a is tighter
    than b, 0 when b is tighter.  An exact variance tie leaves the
    objective flat, so the weight selecting the higher mean is returned;
    a max-tracking aggregate must not discard the larger of two equally
    trustworthy values.
    """
    if a.dim != b.dim:
        raise ValueError(f"dimension mismatch: {a.dim} vs {b.dim}")
    if objective not in ("det", "trace"):
        raise ValueError(f"objective must be 'det' or 'trace', got {objective!r}")
    if a.dim == 1:
        ma, va = _scalar(a)
        mb, vb = _scalar(b)
        if va == vb:
            return 1.0 if ma >= mb else 0.0
        return 1.0 if va < vb else 0.0
    inv_a = np.linalg.inv(a.cov)
    inv_b = np.linalg.inv(b.cov)
    grid = np.linspace(0.0, 1.0, params.omega_grid_points)
    values = [_omega_objective(inv_a, inv_b, w, objective) for w in grid]
    best = int(np.argmin(values))
    lo = grid[max(best - 1, 0)]
    hi = grid[min(best + 1, len(grid) - 1)]
    # Golden-section search on the bracketing interval.
    inv_phi = (math.sqrt(5.0) - 1.0) / 2.0
    x1 = hi - inv_phi * (hi - lo)
    x2 = lo + inv_phi * (hi - lo)
    f1 = _omega_objective(inv_a, inv_b, x1, objective)
    f2 = _omega_objective(inv_a, inv_b, x2, objective)
    while hi - lo > 1e-6:
        if f1 <= f2:
            hi, x2, f2 = x2, x1, f1
            x1 = hi - inv_phi * (hi - lo)
            f1 = _omega_objective(inv_a, inv_b, x1, objective)
        else:
            lo, x1, f1 = x1, x2, f2
            x2 = lo + inv_phi * (hi - lo)
            f2 = _omega_objective(inv_a, inv_b, x2, objective)
    # The refined midpoint can sit a hair inside the interval when the true
    # minimizer is a boundary; keep whichever candidate actually wins.
    candidates = (0.5 * (lo + hi), float(grid[best]), 0.0, 1.0)
    return min(candidates, key=lambda w: _omega_objective(inv_a, inv_b, w, objective))


def fuse_global(
    a: GaussianEstimate,
    b: GaussianEstimate,
    params: FusionParams = DEFAULT_PARAMS,
    objective: str = "det",
) -> GaussianEstimate:
    """Fuse two global estimates at the optimal blend weight.

    Scalar fast path: the optimum is an endpoint, so the input with the
    smaller variance is returned exactly.  An exact variance tie keeps
    the higher-mean input, matching optimal_omega's tie rule.
    """
    if isinstance(a.mean, float) and isinstance(b.mean, float):
        if a.cov == b.cov:
            return a if a.mean >= b.mean else b
        return a if a.cov < b.cov else b
    return ci_fuse(a, b, optimal_omega(a, b, params, objective))


def weight_w1(x: float, mu1: float, sigma1: float) -> float:
    """Ramp weight for the rising-local case: 0 at mu1 - 3*sigma1, 1 at mu1 + 3*sigma1."""
    if sigma1 <= 0.0:
        raise ValueError("sigma1 must be > 0")
    lo = mu1 - 3.0 * sigma1
    hi = mu1 + 3.0 * sigma1
    t = (x - lo) / (hi - lo)
    return min(1.0, max(0.0, t))


def weight_w2(x: float, mu1: float, sigma1: float, mu2: float, sigma2: float) -> float:
    """Ramp weight favoring the higher-mean distribution.

    Zero at/below max(mu1 - 3*sigma1, mu2 - 3*sigma2), one above
    max(mu1 + 3*sigma1, mu2 + 3*sigma2), linear in between.
    """
    if sigma1 <= 0.0 or sigma2 <= 0.0:
        raise ValueError("sigmas must be > 0")
    lo = max(mu1 - 3.0 * sigma1, mu2 - 3.0 * sigma2)
    hi = max(mu1 + 3.0 * sigma1, mu2 + 3.0 * sigma2)
    t = (x - lo) / (hi - lo)
    return min(1.0, max(0.0, t))


def _mixture_moments_impl(mu_u, sig_u, mu_r, sig_r, ramp_lo, ramp_hi, support_sigmas, n_points):
    """Trapezoid mass/mean/variance of f(x) = u(x) + ramp(x)*r(x).

    u is the unit-weighted Gaussian density, r the ramp-discounted one; both
    are zeroed outside [mu +/- support_sigmas*sigma] and the ramp is clipped
    linear between ramp_lo and ramp_hi.  Integration runs over the union of
    the two truncated supports.
    """
    lo_u = mu_u - support_sigmas * sig_u
    hi_u = mu_u + support_sigmas * sig_u
    lo_r = mu_r - support_sigmas * sig_r
    hi_r = mu_r + support_sigmas * sig_r
    lo = min(lo_u, lo_r)
    hi = max(hi_u, hi_r)
    dx = (hi - lo) / (n_points - 1)
    norm_u = 1.0 / (sig_u * _SQRT_2PI)
    norm_r = 1.0 / (sig_r * _SQRT_2PI)
    ramp_span = ramp_hi - ramp_lo
    m0 = 0.0
    m1 = 0.0
    m2 = 0.0
    for i in range(n_points):
        x = lo + i * dx
        f = 0.0
        if lo_u <= x <= hi_u:
            z = (x - mu_u) / sig_u
            f = norm_u * math.exp(-0.5 * z * z)
        if lo_r <= x <= hi_r:
            w = (x - ramp_lo) / ramp_span
            if w > 0.0:
                if w > 1.0:
                    w = 1.0
                z = (x - mu_r) / sig_r
                f += w * norm_r * math.exp(-0.5 * z * z)
        step = dx if 0 < i < n_points - 1 else 0.5 * dx
        m0 += f * step
        m1 += f * x * step
        m2 += f * x * x * step
    if m0 <= 0.0:
        return 0.0, 0.0, 0.0
    mean = m1 / m0
    var = m2 / m0 - mean * mean
    return m0, mean, var


_mixture_moments_pure = _mixture_moments_impl
if njit is not None:
    _mixture_moments = njit(cache=True)(_mixture_moments_impl)
else:  # pragma: no cover - exercised only without numba
    _mixture_moments = _mixture_moments_pure


def combine_local_scalar(
    mu_l: float,
    var_l: float,
    mu_g: float,
    var_g: float,
    prev_local_mean: float | None,
    sharp_fall_threshold: float,
    params: FusionParams = DEFAULT_PARAMS,
) -> tuple[float, float]:
    """Float fast path of combine_local; returns the moment-matched (mean, var)."""
    if mu_l == mu_g and var_l == var_g:
        # Identical densities: any weighted sum of the two is the density
        # itself, so the combination preserves the common estimate exactly
        # rather than picking up the ramp's quadrature tilt.
        return mu_l, var_l
    sig_l = math.sqrt(var_l)
    sig_g = math.sqrt(var_g)
    rising = mu_l > mu_g
    sharp_fall = (
        prev_local_mean is not None
        and abs(prev_local_mean - mu_g) <= sharp_fall_threshold * sig_g
    )
    if rising or sharp_fall:
        # Rising local (or a tracked maximum falling): the local density
        # keeps unit weight and the global is discounted by the ramp
        # centred on the local moments.
        ramp_lo = mu_l - 3.0 * sig_l
        ramp_hi = mu_l + 3.0 * sig_l
        unit_mu, unit_sig = mu_l, sig_l
        ramped_mu, ramped_sig = mu_g, sig_g
    else:
        # Global mean is the larger: it keeps unit weight and the local is
        # discounted by the joint ramp, so the retained estimate stays
        # anchored to the higher of the two (the max-tracking bias).
        ramp_lo = max(mu_l - 3.0 * sig_l, mu_g - 3.0 * sig_g)
        ramp_hi = max(mu_l + 3.0 * sig_l, mu_g + 3.0 * sig_g)
        unit_mu, unit_sig = mu_g, sig_g
        ramped_mu, ramped_sig = mu_l, sig_l
    mass, mean, var = _mixture_moments(
        unit_mu, unit_sig, ramped_mu, ramped_sig, ramp_lo, ramp_hi,
        params.support_sigmas, params.quadrature_points,
    )
    if mass < params.numeric_tolerance:
        raise ValueError(
            "degenerate quadrature: combined density mass is numerically zero "
            "(non-overlapping or pathologically narrow inputs)"
        )
    if var <= 0.0:
        raise ValueError("degenerate quadrature: combined variance is not positive")
    return mean, var


def combine_local(
    local: GaussianEstimate,
    global_est: GaussianEstimate,
    prev_local_mean: float | None = None,
    sharp_fall_threshold: float = 1.0,
    params: FusionParams = DEFAULT_PARAMS,
) -> GaussianEstimate:
    """Combine a local observation with the current global estimate.

    The two densities are summed with the higher-mean one at unit weight and
    the other discounted by a clipped linear ramp, then the normalized
    mixture is moment-matched back to a Gaussian.  When the local mean
    exceeds the global mean the ramp is w1, parameterized by the local
    moments, and it discounts the global; otherwise the ramp is w2, spanning
    both distributions, and it discounts the local so the estimate stays
    anchored to the higher mean.  Exception: when the previous local
    measurement tracked the global estimate within sharp_fall_threshold
    global sigmas, the w1 form is used even for a smaller local mean - the
    node's own sensor was the maximum, so a falling maximum must be followed
    downward rather than held up.
    """
    if sharp_fall_threshold < 0.0:
        raise ValueError("sharp_fall_threshold must be >= 0")
    mu_l, var_l = _scalar(local)
    mu_g, var_g = _scalar(global_est)
    mean, var = combine_local_scalar(
        mu_l, var_l, mu_g, var_g, prev_local_mean, sharp_fall_threshold, params
    )
    return GaussianEstimate(mean, var)


def deviation_sigmas(a: GaussianEstimate, b: GaussianEstimate) -> float:
    """Absolute mean difference in units of the reference estimate's sigma.

    b is the reference (own) estimate supplying the scale.
    """
    mu_a, _ = _scalar(a)
    mu_b, var_b = _scalar(b)
    sigma_b = math.sqrt(var_b)
    if sigma_b <= 0.0:
        raise ValueError("reference estimate has zero sigma")
    return abs(mu_a - mu_b) / sigma_b
