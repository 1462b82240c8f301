"""Pair potentials and their position-dependent mollifications.

A pair potential V acts on the displacement r = x_i - x_j of a particle
pair.  Shipped families:

* ``free``            V = 0 (transport only)
* ``harmonic``        V(r) = k |r|^2 / 2
* ``repulsive_power`` V(r) = k / |r|^a, singular and confining at r = 0
* ``gaussian_well``   V(r) = -D exp(-|r|^2 / (2 w^2)), bounded below
* ``piecewise_radial``V(r) = radial, linear slopes with a jump in dV/d|r|

The singular families are regularized by averaging V over a ball whose
radius shrinks near the singularity,

    V_n(x) = (average of V over the ball of radius 2^-n alpha(x) at x),

with alpha(x) <= min(1, |x|/2) so the averaging ball never contains the
origin.  The average uses a C^2 polynomial kernel and is computed with a
ball-adapted product quadrature (Gauss-Legendre in radius, uniform or
Gauss-Legendre in angle) that integrates the kernel itself exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import DomainError, QuadratureError, SingularityError
from .estimates import MCEstimate
from .rng import rng_for

SMOOTH = "smooth"
L1_SINGULAR_GRADIENT = "l1_singular_gradient"
CONFINING_AT_ZERO = "confining_at_zero"

_CLASSES = (SMOOTH, L1_SINGULAR_GRADIENT, CONFINING_AT_ZERO)


@dataclass(frozen=True)
class PairPotential:
    """A radial pair potential on displacements in R^d.

    `lower_bound_constant` is a C >= 0 with V(r) >= -C (1 + |r|^2) for
    all r; energy estimates use it.  `singularity_class` declares how the
    potential behaves at r = 0 and selects which verification routes are
    meaningful for it.
    """

    kind: str
    d: int
    singularity_class: str
    lower_bound_constant: float
    strength: float = 1.0
    exponent: float = 1.0
    width: float = 1.0
    jump_radius: float = 1.0
    slope_inner: float = 0.0
    slope_outer: float = 0.0

    def __post_init__(self):
        if self.d < 1:
            raise DomainError(f"dimension must be >= 1, got {self.d}")
        if self.singularity_class not in _CLASSES:
            raise DomainError(f"unknown singularity class {self.singularity_class!r}")
        if self.lower_bound_constant < 0:
            raise DomainError("lower_bound_constant must be >= 0")

    @property
    def is_singular(self) -> bool:
        return self.singularity_class != SMOOTH

    def describe(self) -> str:
        if self.kind == "free":
            return f"free(d={self.d})"
        if self.kind == "harmonic":
            return f"harmonic(k={self.strength:g},d={self.d})"
        if self.kind == "repulsive_power":
            return f"repulsive_power(a={self.exponent:g},k={self.strength:g},d={self.d})"
        if self.kind == "gaussian_well":
            return f"gaussian_well(D={self.strength:g},w={self.width:g},d={self.d})"
        if self.kind == "piecewise_radial":
            return (
                f"piecewise_radial(r0={self.jump_radius:g},"
                f"s_in={self.slope_inner:g},s_out={self.slope_outer:g},d={self.d})"
            )
        return self.kind

    # -- vectorized evaluation over (..., d) displacement arrays --------

    def value_batch(self, r: np.ndarray) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        if r.shape[-1] != self.d:
            raise DomainError(f"expected last axis {self.d}, got shape {r.shape}")
        rad = np.sqrt(np.sum(r * r, axis=-1))
        if self.kind == "free":
            return np.zeros_like(rad)
        if self.kind == "harmonic":
            return 0.5 * self.strength * rad * rad
        if self.kind == "repulsive_power":
            with np.errstate(divide="ignore"):
                return self.strength * rad ** (-self.exponent)
        if self.kind == "gaussian_well":
            return -self.strength * np.exp(-rad * rad / (2.0 * self.width**2))
        if self.kind == "piecewise_radial":
            r0 = self.jump_radius
            return self.slope_inner * np.minimum(rad, r0) + self.slope_outer * np.maximum(
                rad - r0, 0.0
            )
        raise DomainError(f"unknown potential kind {self.kind!r}")

    def gradient_batch(self, r: np.ndarray) -> np.ndarray:
        """grad V at each displacement; rows at exactly r = 0 return 0.

        Callers integrating dynamics must detect coincidences via the
        pair-distance threshold, not via the values returned here.
        """
        r = np.asarray(r, dtype=float)
        if r.shape[-1] != self.d:
            raise DomainError(f"expected last axis {self.d}, got shape {r.shape}")
        rad = np.sqrt(np.sum(r * r, axis=-1))
        safe = np.where(rad > 0.0, rad, 1.0)
        if self.kind == "free":
            return np.zeros_like(r)
        if self.kind == "harmonic":
            return self.strength * r
        if self.kind == "repulsive_power":
            a = self.exponent
            coef = -self.strength * a * safe ** (-a - 2.0)
            return np.where(rad[..., None] > 0.0, coef[..., None] * r, 0.0)
        if self.kind == "gaussian_well":
            w2 = self.width**2
            coef = (self.strength / w2) * np.exp(-rad * rad / (2.0 * w2))
            return coef[..., None] * r
        if self.kind == "piecewise_radial":
            # inner slope applies on the closed ball |r| <= r0
            slope = np.where(rad <= self.jump_radius, self.slope_inner, self.slope_outer)
            coef = slope / safe
            return np.where(rad[..., None] > 0.0, coef[..., None] * r, 0.0)
        raise DomainError(f"unknown potential kind {self.kind!r}")

    def value(self, r) -> float:
        r = np.asarray(r, dtype=float).reshape(self.d)
        if self.is_singular and float(np.dot(r, r)) == 0.0:
            raise SingularityError(f"{self.describe()} evaluated at r = 0")
        return float(self.value_batch(r))

    def gradient(self, r) -> np.ndarray:
        r = np.asarray(r, dtype=float).reshape(self.d)
        if self.is_singular and float(np.dot(r, r)) == 0.0:
            raise SingularityError(f"{self.describe()} gradient at r = 0")
        return self.gradient_batch(r)


def free_potential(d: int) -> PairPotential:
    return PairPotential(kind="free", d=d, singularity_class=SMOOTH, lower_bound_constant=0.0)


def harmonic(d: int, strength: float = 1.0) -> PairPotential:
    if strength <= 0:
        raise DomainError("harmonic strength must be positive")
    return PairPotential(
        kind="harmonic",
        d=d,
        singularity_class=SMOOTH,
        lower_bound_constant=0.0,
        strength=strength,
    )


def repulsive_power(
    d: int, exponent: float, strength: float = 1.0, singularity_class: str | None = None
) -> PairPotential:
    """V(r) = strength / |r|^exponent.

    Declared class defaults to l1_singular_gradient when the gradient is
    locally integrable (exponent < d - 1) and confining_at_zero otherwise;
    an explicit l1 declaration with exponent >= d - 1 is rejected.
    """
    if exponent <= 0 or strength <= 0:
        raise DomainError("repulsive_power needs positive exponent and strength")
    if singularity_class is None:
        singularity_class = (
            L1_SINGULAR_GRADIENT if exponent < d - 1 else CONFINING_AT_ZERO
        )
    if singularity_class == SMOOTH:
        raise DomainError("repulsive_power is singular at r = 0")
    if singularity_class == L1_SINGULAR_GRADIENT and exponent >= d - 1:
        raise DomainError(
            f"gradient of |r|^-{exponent:g} is not locally integrable in d={d}"
        )
    return PairPotential(
        kind="repulsive_power",
        d=d,
        singularity_class=singularity_class,
        lower_bound_constant=0.0,
        strength=strength,
        exponent=exponent,
    )


def gaussian_well(d: int, depth: float = 1.0, width: float = 1.0) -> PairPotential:
    if depth <= 0 or width <= 0:
        raise DomainError("gaussian_well needs positive depth and width")
    return PairPotential(
        kind="gaussian_well",
        d=d,
        singularity_class=SMOOTH,
        lower_bound_constant=depth,
        strength=depth,
        width=width,
    )


def piecewise_radial(
    d: int, jump_radius: float, slope_inner: float, slope_outer: float
) -> PairPotential:
    """Radial potential with piecewise constant dV/d|r| jumping at jump_radius."""
    if jump_radius <= 0:
        raise DomainError("jump_radius must be positive")
    if slope_inner == slope_outer:
        raise DomainError("slopes must differ, otherwise use a smooth family")
    # V >= -M |r| with M = max drop rate, and -M|r| >= -(M/2)(1 + |r|^2)
    m = max(0.0, -slope_inner, -slope_outer)
    return PairPotential(
        kind="piecewise_radial",
        d=d,
        singularity_class=L1_SINGULAR_GRADIENT,
        lower_bound_constant=m / 2.0,
        jump_radius=jump_radius,
        slope_inner=slope_inner,
        slope_outer=slope_outer,
    )


# ---------------------------------------------------------------------------
# mollification machinery


@dataclass(frozen=True)
class MollifierKernel:
    """Radial averaging kernel rho(z) = c (1 - |z|^2)^q on the unit ball.

    The normalization c is analytic: c = Gamma(d/2 + q + 1) /
    (pi^(d/2) Gamma(q + 1)), making the kernel a probability density.
    q >= 2 keeps the kernel C^1 across the ball boundary.
    """

    d: int
    power: int = 3

    def __post_init__(self):
        if self.d < 1:
            raise DomainError("kernel dimension must be >= 1")
        if self.power < 2:
            raise DomainError("kernel power must be >= 2 for a C^1 kernel")

    @property
    def normalization(self) -> float:
        q = self.power
        return math.gamma(self.d / 2.0 + q + 1.0) / (
            math.pi ** (self.d / 2.0) * math.gamma(q + 1.0)
        )

    def profile(self, z: np.ndarray) -> np.ndarray:
        """Kernel values at points z of shape (..., d) inside the unit ball."""
        z = np.asarray(z, dtype=float)
        s = 1.0 - np.sum(z * z, axis=-1)
        return self.normalization * np.where(s > 0.0, s, 0.0) ** self.power

    def mass_error(self, radial_order: int = 16, angular_order: int = 16) -> float:
        """|quadrature mass - 1| of the kernel; an internal consistency probe."""
        z, w = ball_nodes(self.d, radial_order, angular_order)
        return abs(float(np.sum(w * self.profile(z))) - 1.0)


@dataclass(frozen=True)
class ShrinkFunction:
    """Averaging-radius profile alpha(x) = min(cap, slope * |x|).

    Constraints cap <= 1 and slope <= 1/2 guarantee alpha(x) <= min(1, |x|/2),
    so the ball of radius 2^-n alpha(x) around x stays away from the origin
    for every level n >= 0.
    """

    cap: float = 1.0
    slope: float = 0.5

    def __post_init__(self):
        if not (0.0 < self.cap <= 1.0):
            raise DomainError("shrink cap must lie in (0, 1]")
        if not (0.0 < self.slope <= 0.5):
            raise DomainError("shrink slope must lie in (0, 1/2]")

    def __call__(self, radii) -> np.ndarray:
        radii = np.asarray(radii, dtype=float)
        return np.minimum(self.cap, self.slope * radii)


@lru_cache(maxsize=64)
def ball_nodes(d: int, radial_order: int, angular_order: int):
    """Product quadrature nodes and weights for the unit ball in R^d.

    Gauss-Legendre in radius (with the r^(d-1) jacobian folded into the
    weights) crossed with an exact angular rule: midpoint-offset uniform
    angles in d = 2, Gauss-Legendre in cos(theta) times uniform azimuth in
    d = 3.  Returns (nodes, weights) with nodes of shape (Q, d); weights
    sum to the ball volume.
    """
    x, w = np.polynomial.legendre.leggauss(radial_order)
    r = 0.5 * (x + 1.0)
    wr = 0.5 * w * r ** (d - 1)
    if d == 1:
        z = np.concatenate([-r, r])[:, None]
        wt = np.concatenate([wr, wr])
    elif d == 2:
        theta = 2.0 * math.pi * (np.arange(angular_order) + 0.5) / angular_order
        wa = 2.0 * math.pi / angular_order
        dirs = np.stack([np.cos(theta), np.sin(theta)], axis=1)
        z = (r[:, None, None] * dirs[None, :, :]).reshape(-1, 2)
        wt = (wr[:, None] * wa * np.ones(angular_order)[None, :]).reshape(-1)
    elif d == 3:
        c, wc = np.polynomial.legendre.leggauss(angular_order)
        phi = 2.0 * math.pi * (np.arange(angular_order) + 0.5) / angular_order
        wp = 2.0 * math.pi / angular_order
        s = np.sqrt(1.0 - c * c)
        dirs = np.stack(
            [
                s[:, None] * np.cos(phi)[None, :],
                s[:, None] * np.sin(phi)[None, :],
                np.broadcast_to(c[:, None], (angular_order, angular_order)),
            ],
            axis=2,
        ).reshape(-1, 3)
        wd = (wc[:, None] * wp * np.ones(angular_order)[None, :]).reshape(-1)
        z = (r[:, None, None] * dirs[None, :, :]).reshape(-1, 3)
        wt = (wr[:, None] * wd[None, :]).reshape(-1)
    else:
        raise DomainError(f"ball quadrature implemented for d in (1, 2, 3), got {d}")
    z.setflags(write=False)
    wt.setflags(write=False)
    return z, wt


def _ball_average(
    potential: PairPotential,
    kernel: MollifierKernel,
    centers: np.ndarray,
    radii_eps: np.ndarray,
    radial_order: int,
    angular_order: int,
    max_block: int = 1 << 22,
) -> np.ndarray:
    """Kernel-weighted average of V over balls B(center_i, eps_i), vectorized.

    Self-normalizes by the quadrature mass of the kernel so tiny rule-level
    mass defects cancel instead of biasing the average.
    """
    z, w = ball_nodes(potential.d, radial_order, angular_order)
    rho_w = w * kernel.profile(z)
    den = float(np.sum(rho_w))
    m, q = centers.shape[0], z.shape[0]
    out = np.empty(m)
    rows = max(1, max_block // max(q, 1))
    for lo in range(0, m, rows):
        hi = min(lo + rows, m)
        pts = centers[lo:hi, None, :] + radii_eps[lo:hi, None, None] * z[None, :, :]
        vals = potential.value_batch(pts.reshape(-1, potential.d)).reshape(hi - lo, q)
        out[lo:hi] = vals @ rho_w / den
    return out


def mollified_potential(
    potential: PairPotential,
    kernel: MollifierKernel,
    shrink: ShrinkFunction,
    level: int,
    r,
    refine_tol: float = 1e-8,
    max_refinements: int = 3,
) -> float:
    """V_level(r): average of V over the ball of radius 2^-level * alpha(r).

    The quadrature order doubles until two successive estimates agree to
    refine_tol; failure to converge within max_refinements doublings raises
    QuadratureError.
    """
    if level < 0:
        raise DomainError("mollification level must be >= 0")
    if kernel.d != potential.d:
        raise DomainError("kernel dimension does not match potential")
    x = np.asarray(r, dtype=float).reshape(potential.d)
    rad = float(np.linalg.norm(x))
    eps = float(2.0 ** (-level) * shrink(rad))
    if eps == 0.0:
        if potential.is_singular:
            raise SingularityError("mollification radius vanishes at r = 0")
        return potential.value(x)
    order = 8
    prev = None
    for _ in range(max_refinements + 1):
        cur = float(
            _ball_average(potential, kernel, x[None, :], np.array([eps]), order, order)[0]
        )
        if prev is not None and abs(cur - prev) < refine_tol:
            return cur
        prev = cur
        order *= 2
    raise QuadratureError(
        f"ball average did not converge to {refine_tol:g} at {potential.describe()}, "
        f"level {level}, |r|={rad:g}"
    )


def mollified_gradient(
    potential: PairPotential,
    kernel: MollifierKernel,
    shrink: ShrinkFunction,
    level: int,
    r,
) -> np.ndarray:
    """Central finite difference of the mollified potential.

    Step h = 2^-level * alpha(r) / 16 ties the difference to the local
    averaging radius, so the relative truncation error is level-uniform.
    """
    x = np.asarray(r, dtype=float).reshape(potential.d)
    rad = float(np.linalg.norm(x))
    eps = float(2.0 ** (-level) * shrink(rad))
    if eps == 0.0:
        raise SingularityError("mollified gradient undefined at r = 0")
    h = eps / 16.0
    out = np.empty(potential.d)
    for k in range(potential.d):
        xp, xm = x.copy(), x.copy()
        xp[k] += h
        xm[k] -= h
        fp = mollified_potential(potential, kernel, shrink, level, xp)
        fm = mollified_potential(potential, kernel, shrink, level, xm)
        out[k] = (fp - fm) / (2.0 * h)
    return out


class MollifiedPotential:
    """Batch-evaluable mollified potential V_level with the PairPotential interface.

    Uses a fixed quadrature order chosen once (the shipped default is
    already exact for the kernel and spectrally accurate for the shipped
    families; `validate_order` measures the residual refinement gap).
    Gradients are central finite differences with step eps(x)/16.
    """

    def __init__(
        self,
        base: PairPotential,
        kernel: MollifierKernel,
        shrink: ShrinkFunction,
        level: int,
        radial_order: int = 8,
        angular_order: int = 8,
    ):
        if kernel.d != base.d:
            raise DomainError("kernel dimension does not match potential")
        if level < 0:
            raise DomainError("mollification level must be >= 0")
        self.base = base
        self.kernel = kernel
        self.shrink = shrink
        self.level = int(level)
        self.radial_order = radial_order
        self.angular_order = angular_order
        self.d = base.d
        self.kind = f"mollified({base.kind}, level={level})"
        self.singularity_class = base.singularity_class
        self.lower_bound_constant = base.lower_bound_constant
        self.is_singular = base.is_singular

    def describe(self) -> str:
        return f"mollified[{self.base.describe()}, n={self.level}]"

    def _eps(self, radii: np.ndarray) -> np.ndarray:
        return 2.0 ** (-self.level) * self.shrink(radii)

    def value_batch(self, r: np.ndarray) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        flat = r.reshape(-1, self.d)
        rad = np.sqrt(np.sum(flat * flat, axis=-1))
        eps = self._eps(rad)
        out = np.empty(flat.shape[0])
        pos = eps > 0.0
        if np.any(pos):
            out[pos] = _ball_average(
                self.base, self.kernel, flat[pos], eps[pos], self.radial_order, self.angular_order
            )
        if np.any(~pos):
            out[~pos] = self.base.value_batch(flat[~pos])
        return out.reshape(r.shape[:-1])

    def gradient_batch(self, r: np.ndarray) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        flat = r.reshape(-1, self.d)
        rad = np.sqrt(np.sum(flat * flat, axis=-1))
        h = self._eps(rad) / 16.0
        safe_h = np.where(h > 0.0, h, 1.0)
        m, d = flat.shape
        # displaced points (m, 2d, d): +h e_k then -h e_k for each axis k
        disp = np.repeat(flat[:, None, :], 2 * d, axis=1)
        for k in range(d):
            disp[:, 2 * k, k] += safe_h
            disp[:, 2 * k + 1, k] -= safe_h
        vals = self.value_batch(disp.reshape(-1, d)).reshape(m, 2 * d)
        grad = (vals[:, 0::2] - vals[:, 1::2]) / (2.0 * safe_h[:, None])
        grad = np.where(h[:, None] > 0.0, grad, 0.0)
        return grad.reshape(r.shape)

    def value(self, r) -> float:
        x = np.asarray(r, dtype=float).reshape(self.d)
        if self.is_singular and float(np.dot(x, x)) == 0.0:
            raise SingularityError("mollified value at r = 0")
        return float(self.value_batch(x))

    def gradient(self, r) -> np.ndarray:
        x = np.asarray(r, dtype=float).reshape(self.d)
        if self.is_singular and float(np.dot(x, x)) == 0.0:
            raise SingularityError("mollified gradient at r = 0")
        return self.gradient_batch(x)

    def validate_order(self, r, refine_tol: float = 1e-8) -> float:
        """Gap between this order and the doubled order at displacement r."""
        x = np.asarray(r, dtype=float).reshape(self.d)
        rad = np.array([float(np.linalg.norm(x))])
        eps = self._eps(rad)
        a = _ball_average(self.base, self.kernel, x[None, :], eps, self.radial_order, self.angular_order)
        b = _ball_average(
            self.base, self.kernel, x[None, :], eps, 2 * self.radial_order, 2 * self.angular_order
        )
        gap = abs(float(a[0]) - float(b[0]))
        if gap >= refine_tol:
            raise QuadratureError(
                f"order {self.radial_order} not converged at |r|={rad[0]:g} (gap {gap:g})"
            )
        return gap


def gradient_l1_error(
    potential: PairPotential,
    kernel: MollifierKernel,
    shrink: ShrinkFunction,
    level: int,
    r_inner: float,
    r_outer: float,
    n_samples: int,
    seed: int,
) -> MCEstimate:
    """Monte Carlo estimate of int_annulus |grad V_level - grad V| dr.

    The annulus r_inner <= |r| <= r_outer must exclude the origin.  The
    sample points depend on (seed, annulus, n_samples) but not on the
    level, so estimates across levels share randomness and their ordering
    is meaningful at fixed seed.
    """
    if not (0.0 < r_inner < r_outer):
        raise DomainError("annulus must satisfy 0 < r_inner < r_outer")
    d = potential.d
    rng = rng_for(seed, f"gradient-l1-annulus/{r_inner:g}/{r_outer:g}/{n_samples}")
    dirs = rng.normal(size=(n_samples, d))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    u = rng.random(n_samples)
    radii = (r_inner**d + u * (r_outer**d - r_inner**d)) ** (1.0 / d)
    pts = radii[:, None] * dirs
    vol = (
        math.pi ** (d / 2.0) / math.gamma(d / 2.0 + 1.0) * (r_outer**d - r_inner**d)
    )
    moll = MollifiedPotential(potential, kernel, shrink, level)
    diff = moll.gradient_batch(pts) - potential.gradient_batch(pts)
    err = np.sqrt(np.sum(diff * diff, axis=-1))
    return MCEstimate.from_samples(err, weights=vol / n_samples)
