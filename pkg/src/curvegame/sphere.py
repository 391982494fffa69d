"""Spherical caps, cap intersections, and averages on S^{N-1} for N in {2, 3}.

A cap is the set {v in S^{N-1} : <v, axis> >= -theta} with theta in [0, 1);
for theta >= 0 it contains at least a half sphere.  Players pick caps whose
measure exceeds the half sphere by the margin delta_eps(eps) = sqrt(eps), and
the corresponding threshold theta_eps makes that margin exact.  The
intersection of two such caps (a band, for opposed axes) always has measure
at least 2*delta_eps.

Closed forms used throughout:

    N=2:  sigma(S^1) = 2*pi,  cap measure = pi + 2*arcsin(theta)
    N=3:  sigma(S^2) = 4*pi,  cap measure = 2*pi*(1 + theta)

In N=3 the surface measure factorizes as d(sigma) = d(phi) d(t) in cylinder
coordinates (azimuth phi, height t), which every quadrature here relies on.

Scalar functions integrated over regions are called with an (m, N) array of
unit vectors and must return an (m,) array.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import (
    DegenerateRegionError,
    InvalidParameterError,
    SamplingFailureError,
)

TWO_PI = 2.0 * math.pi

# Axes nearer to (anti)parallel than this are treated as exactly aligned;
# 1 - |cos| ~ 1e-12 corresponds to an angle of ~1.4e-6 rad.
_ALIGNED_TOL = 1e-12

_REJECTION_ATTEMPT_BOUND = 10 ** 6


def sphere_measure(N: int) -> float:
    """Total surface measure of S^{N-1}."""
    _check_dim(N)
    return TWO_PI if N == 2 else 2.0 * TWO_PI


def delta_eps(eps: float) -> float:
    """Measure margin above the half sphere for step size eps: sqrt(eps)."""
    if not eps > 0.0:
        raise InvalidParameterError(f"eps must be positive, got {eps}")
    return math.sqrt(eps)


def cap_measure(theta: float, N: int) -> float:
    """Surface measure of the cap {v : <v, e> >= -theta} for any unit e.

    Parameters
    ----------
    theta : float in [-1, 1]
        Threshold; 0 gives the half sphere, 1 the full sphere, negative
        values caps smaller than a half sphere.
    N : {2, 3}
    """
    _check_dim(N)
    if not -1.0 <= theta <= 1.0:
        raise InvalidParameterError(f"theta must lie in [-1, 1], got {theta}")
    if N == 2:
        return math.pi + 2.0 * math.asin(theta)
    return TWO_PI * (1.0 + theta)


def theta_from_delta(delta: float, N: int) -> float:
    """Invert cap_measure: threshold whose cap exceeds the half sphere by delta.

    Exact inverses: theta = sin(delta/2) for N=2, theta = delta/(2*pi) for N=3.
    """
    _check_dim(N)
    if not 0.0 <= delta < 0.5 * sphere_measure(N):
        raise InvalidParameterError(
            f"delta must lie in [0, {0.5 * sphere_measure(N)}), got {delta}"
        )
    if N == 2:
        return math.sin(0.5 * delta)
    return delta / TWO_PI


@lru_cache(maxsize=256)
def theta_eps(eps: float, N: int) -> float:
    """Cap threshold for a game step: theta_from_delta(delta_eps(eps), N)."""
    return theta_from_delta(delta_eps(eps), N)


def constant_C(N: int) -> float:
    """Game payoff constant K: half the equator average of v_1 squared."""
    _check_dim(N)
    axis = np.zeros(N)
    axis[-1] = 1.0
    return 0.5 * equator_average(axis, lambda v: v[:, 0] ** 2, N)


def unit_vector(v) -> np.ndarray:
    """Normalized copy of v; rejects vectors too short to carry a direction."""
    v = np.asarray(v, dtype=float)
    n = float(np.linalg.norm(v))
    if n < 1e-12:
        raise InvalidParameterError("cannot normalize a (near) zero vector")
    return v / n


@dataclass(frozen=True)
class Cap:
    """The set {v in S^{N-1} : <v, axis> >= -theta}, theta in [0, 1].

    Game-admissible caps use theta in [0, 1); theta = 1 denotes the full
    sphere, kept representable because full-sphere regions are useful test
    fixtures.  The axis is normalized at construction so the stored direction
    is a unit vector to within 1e-12 regardless of the input's length.
    """

    axis: np.ndarray
    theta: float

    def __post_init__(self):
        # Inline of unit_vector: caps are built once per game round, so the
        # already-normalized common case skips the divide and the copy.
        arr = np.asarray(self.axis, dtype=float)
        n2 = float(arr @ arr)
        if n2 < 1e-24:
            raise InvalidParameterError("cannot normalize a (near) zero vector")
        if abs(n2 - 1.0) > 1e-12:
            arr = arr / math.sqrt(n2)
        object.__setattr__(self, "axis", arr)
        if not 0.0 <= self.theta <= 1.0 + 1e-15:
            raise InvalidParameterError(f"cap theta must lie in [0, 1], got {self.theta}")
        object.__setattr__(self, "theta", float(min(self.theta, 1.0)))

    @property
    def dim(self) -> int:
        return self.axis.shape[0]

    @property
    def measure(self) -> float:
        return cap_measure(self.theta, self.dim)

    def contains(self, v):
        """Membership; a single vector gives a bool, a batch gives a mask."""
        v = np.asarray(v, dtype=float)
        if v.ndim == 1:
            return bool(float(v @ self.axis) >= -self.theta)
        return v @ self.axis >= -self.theta


def game_cap(axis, eps: float) -> Cap:
    """Admissible cap for a game step: measure = half sphere + delta_eps."""
    axis = np.asarray(axis, dtype=float)
    return Cap(axis, theta_eps(eps, axis.shape[0]))


@lru_cache(maxsize=64)
def _leggauss(order: int):
    x, w = np.polynomial.legendre.leggauss(order)
    # Exact +/- symmetry of nodes and weights, so odd integrands cancel to
    # rounding level instead of eigensolver level.
    x = 0.5 * (x - x[::-1])
    w = 0.5 * (w + w[::-1])
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def _orthobasis(axis: np.ndarray):
    """Deterministic orthonormal pair spanning the plane orthogonal to axis."""
    k = int(np.argmin(np.abs(axis)))
    e = np.zeros(3)
    e[k] = 1.0
    u = np.cross(axis, e)
    u /= np.linalg.norm(u)
    w = np.cross(axis, u)
    return u, w


# Panel kinds for the N=3 height decomposition.
_FULL, _PARTIAL = 0, 1


@dataclass(frozen=True)
class CapIntersection:
    """Intersection of two caps, with quadrature, sampling and membership.

    For N=2 the region decomposes into at most two circular arcs with known
    endpoint angles.  For N=3 membership is the conjunction of the two cap
    inequalities; integration works in the frame whose pole is cap_a's axis,
    where cap_a restricts the height t and cap_b cuts each height circle to
    an analytically known azimuth arc.
    """

    cap_a: Cap
    cap_b: Cap
    dim: int = field(init=False)

    def __post_init__(self):
        if self.cap_a.dim != self.cap_b.dim:
            raise InvalidParameterError("caps live on spheres of different dimension")
        object.__setattr__(self, "dim", self.cap_a.dim)
        _check_dim(self.dim)

    # -- shared surface --------------------------------------------------

    @property
    def measure(self) -> float:
        if self.dim == 2:
            return float(sum(e - s for s, e in self.arcs()))
        return self._measure3()

    @property
    def is_empty(self) -> bool:
        return self.measure <= 1e-14

    def contains(self, v):
        """Membership; a single vector gives a bool, a batch gives a mask."""
        v = np.asarray(v, dtype=float)
        if v.ndim == 1:
            a, b = self.cap_a, self.cap_b
            return bool(
                float(v @ a.axis) >= -a.theta and float(v @ b.axis) >= -b.theta
            )
        return self.cap_a.contains(v) & self.cap_b.contains(v)

    def average(self, f, order: int = 32) -> float:
        nodes, weights = self.quadrature(order)
        total = float(np.sum(weights))
        if total <= 1e-14:
            raise DegenerateRegionError("cap intersection has ~zero measure")
        return float(np.sum(weights * np.asarray(f(nodes), dtype=float)) / total)

    def quadrature(self, order: int = 32):
        """Nodes (m, N) and positive weights (m,) with sum ~ the region measure."""
        if self.dim == 2:
            return self._quadrature2(order)
        return self._quadrature3(order)

    def sample(self, rng, attempt_bound: int = _REJECTION_ATTEMPT_BOUND) -> np.ndarray:
        if self.dim == 2:
            return self._sample2(rng)
        return self._sample3(rng, attempt_bound)

    # -- N = 2: explicit arcs ---------------------------------------------

    def arcs(self):
        """Arc decomposition [(start, end), ...] with end > start, 0 to 2 arcs."""
        if self.dim != 2:
            raise InvalidParameterError("arcs are defined for the circle only")
        a1 = math.atan2(self.cap_a.axis[1], self.cap_a.axis[0])
        a2 = math.atan2(self.cap_b.axis[1], self.cap_b.axis[0])
        w1 = math.acos(-self.cap_a.theta)
        w2 = math.acos(-self.cap_b.theta)
        out = []
        for shift in (-TWO_PI, 0.0, TWO_PI):
            s = max(a1 - w1, a2 - w2 + shift)
            e = min(a1 + w1, a2 + w2 + shift)
            if e - s > 1e-14:
                out.append((s, e))
        return out

    def _quadrature2(self, order: int):
        xg, wg = _leggauss(order)
        angles = []
        weights = []
        for s, e in self.arcs():
            mid, half = 0.5 * (s + e), 0.5 * (e - s)
            angles.append(mid + half * xg)
            weights.append(half * wg)
        if not angles:
            return np.zeros((0, 2)), np.zeros(0)
        phi = np.concatenate(angles)
        w = np.concatenate(weights)
        return np.stack([np.cos(phi), np.sin(phi)], axis=1), w

    def _sample2(self, rng) -> np.ndarray:
        arcs = self.arcs()
        total = sum(e - s for s, e in arcs)
        if total <= 1e-14:
            raise DegenerateRegionError("cannot sample a ~zero measure region")
        # Single uniform draw: pick the arc and the angle within it at once.
        u = rng.random() * total
        for s, e in arcs:
            if u <= e - s:
                phi = s + u
                return np.array([math.cos(phi), math.sin(phi)])
            u -= e - s
        phi = arcs[-1][1]  # u landed on the far endpoint by rounding
        return np.array([math.cos(phi), math.sin(phi)])

    # -- N = 3: height panels ----------------------------------------------

    def _frame3(self):
        pole = self.cap_a.axis
        b3 = float(np.dot(pole, self.cap_b.axis))
        rho = math.sqrt(max(0.0, 1.0 - b3 * b3))
        e1, e2 = _orthobasis(pole)
        if 1.0 - abs(b3) < _ALIGNED_TOL:
            psi = 0.0
        else:
            psi = math.atan2(
                float(np.dot(self.cap_b.axis, e2)),
                float(np.dot(self.cap_b.axis, e1)),
            )
        return pole, e1, e2, b3, rho, psi

    def _panels3(self):
        """Height intervals [(lo, hi, kind), ...] over which cap_b is a full
        circle or an analytic azimuth arc; empty intervals are dropped."""
        tA, tB = self.cap_a.theta, self.cap_b.theta
        _, _, _, b3, rho, _ = self._frame3()
        lo = -tA
        if 1.0 - abs(b3) < _ALIGNED_TOL:
            if b3 > 0.0:
                return [(-min(tA, tB), 1.0, _FULL)]
            return [(lo, tB, _FULL)] if tB - lo > 1e-14 else []
        disc = rho * math.sqrt(max(0.0, 1.0 - tB * tB))
        roots = (-tB * b3 - disc, -tB * b3 + disc)
        cuts = sorted({lo, 1.0} | {r for r in roots if lo < r < 1.0})
        panels = []
        for s, e in zip(cuts[:-1], cuts[1:]):
            if e - s <= 1e-14:
                continue
            tm = 0.5 * (s + e)
            c = (-tB - tm * b3) / (math.sqrt(1.0 - tm * tm) * rho)
            if c >= 1.0:
                continue  # cap_b misses this height range entirely
            panels.append((s, e, _FULL if c <= -1.0 else _PARTIAL))
        return panels

    def _arc_halfwidth3(self, t: np.ndarray) -> np.ndarray:
        """Azimuth half width of cap_b's slice at heights t (partial panels)."""
        tB = self.cap_b.theta
        _, _, _, b3, rho, _ = self._frame3()
        c = (-tB - t * b3) / (np.sqrt(np.maximum(1.0 - t * t, 1e-300)) * rho)
        return np.arccos(np.clip(c, -1.0, 1.0))

    def _measure3(self) -> float:
        total = 0.0
        xg, wg = _leggauss(64)
        for s, e, kind in self._panels3():
            if kind == _FULL:
                total += TWO_PI * (e - s)
            else:
                t = 0.5 * (s + e) + 0.5 * (e - s) * xg
                total += float(np.sum(0.5 * (e - s) * wg * 2.0 * self._arc_halfwidth3(t)))
        return total

    def _quadrature3(self, order: int):
        pole, e1, e2, _, _, psi = self._frame3()
        xg, wg = _leggauss(order)
        nphi_full = 2 * order
        phi_full = TWO_PI * np.arange(nphi_full) / nphi_full
        ts, phis, ws = [], [], []
        for s, e, kind in self._panels3():
            t = 0.5 * (s + e) + 0.5 * (e - s) * xg
            wt = 0.5 * (e - s) * wg
            if kind == _FULL:
                ts.append(np.repeat(t, nphi_full))
                phis.append(np.tile(phi_full, order))
                ws.append(np.repeat(wt * (TWO_PI / nphi_full), nphi_full))
            else:
                half = self._arc_halfwidth3(t)
                # Per height, Gauss-Legendre across the azimuth arc.
                phis.append((psi + half[:, None] * xg[None, :]).ravel())
                ts.append(np.repeat(t, order))
                ws.append(((wt * half)[:, None] * wg[None, :]).ravel())
        if not ts:
            return np.zeros((0, 3)), np.zeros(0)
        t = np.concatenate(ts)
        phi = np.concatenate(phis)
        w = np.concatenate(ws)
        s = np.sqrt(np.maximum(0.0, 1.0 - t * t))
        nodes = (
            (s * np.cos(phi))[:, None] * e1[None, :]
            + (s * np.sin(phi))[:, None] * e2[None, :]
            + t[:, None] * pole[None, :]
        )
        return nodes, w

    def _sample3(self, rng, attempt_bound: int) -> np.ndarray:
        if self.is_empty:
            raise DegenerateRegionError("cannot sample a ~zero measure region")
        # Rejection from the uniform sphere with a plain membership test.
        chunk = 256
        attempts = 0
        while attempts < attempt_bound:
            g = rng.normal(size=(chunk, 3))
            g /= np.linalg.norm(g, axis=1, keepdims=True)
            ok = self.contains(g)
            attempts += chunk
            idx = np.nonzero(ok)[0]
            if idx.size:
                return g[idx[0]]
        raise SamplingFailureError(
            f"no accepted sample in {attempt_bound} attempts; region nearly degenerate"
        )


def intersect_caps(a: Cap, b: Cap) -> CapIntersection:
    """Intersection region of two caps; empty regions are representable."""
    return CapIntersection(a, b)


def region_average(region: CapIntersection, f, order: int = 32) -> float:
    """Average (1/sigma(region)) * integral of f over the region.

    N=2 uses Gauss-Legendre per arc in angle; N=3 a product rule in
    (azimuth, height) restricted to the region, with weights summing to the
    region measure.  f takes an (m, N) array of unit vectors.
    """
    return region.average(f, order)


def equator_average(axis, f, N: int, order: int = 64) -> float:
    """Average of f over {v : <v, axis> = 0}.

    For N=2 this is the two-point average over the unit vectors orthogonal to
    the axis; for N=3 the average over the great circle, by the trapezoid rule
    (spectrally accurate on the periodic circle).
    """
    _check_dim(N)
    axis = unit_vector(axis)
    if N == 2:
        p = np.array([-axis[1], axis[0]])
        pts = np.stack([p, -p])
        return float(np.mean(np.asarray(f(pts), dtype=float)))
    e1, e2 = _orthobasis(axis)
    phi = TWO_PI * np.arange(order) / order
    pts = np.cos(phi)[:, None] * e1[None, :] + np.sin(phi)[:, None] * e2[None, :]
    return float(np.mean(np.asarray(f(pts), dtype=float)))


def sample_uniform(region: CapIntersection, rng,
                   attempt_bound: int = _REJECTION_ATTEMPT_BOUND) -> np.ndarray:
    """Uniform draw from the region: exact arc inversion on the circle,
    rejection from uniform sphere samples on S^2."""
    return region.sample(rng, attempt_bound)


def circle_axes(M: int) -> np.ndarray:
    """M equispaced unit vectors on the circle, first one at angle 0."""
    if M < 1:
        raise InvalidParameterError("need at least one axis")
    ang = TWO_PI * np.arange(M) / M
    return np.stack([np.cos(ang), np.sin(ang)], axis=1)


def fibonacci_axes(M: int) -> np.ndarray:
    """M roughly uniformly spread unit vectors on S^2 (Fibonacci lattice)."""
    if M < 1:
        raise InvalidParameterError("need at least one axis")
    i = np.arange(M, dtype=float)
    z = 1.0 - (2.0 * i + 1.0) / M
    s = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    golden = math.pi * (3.0 - math.sqrt(5.0))
    phi = golden * i
    return np.stack([s * np.cos(phi), s * np.sin(phi), z], axis=1)


def _check_dim(N: int):
    if N not in (2, 3):
        raise InvalidParameterError(f"dimension must be 2 or 3, got {N}")
