"""Grid discretization and monotone value iteration for the game value function.

The value function u^eps satisfies a dynamic programming principle: at every
point x of the domain,

    u(x) = max_a min_b  avg_{A(a) cap B(b)} u(x + eps v) dsigma(v)  +  eps^2 K,

where A, B are eps-game caps drawn from a fixed finite axis family, and u = 0
outside the domain.  This module discretizes u on a uniform grid, evaluates the
right-hand side with a quadrature grid on the sphere that is shared by all cap
pairs, and iterates from w = 0.

Monotonicity of the iteration is preserved exactly in floating point: every
update is composed of non-negatively weighted sums of field values (accumulated
in a fixed order, with partial sums organized as a binary block tree so no
subtraction ever occurs), minima, maxima, division by a positive constant, and
addition of a constant.  All of these are monotone under IEEE round-to-nearest,
so w_{n+1} >= w_n holds bit-for-bit, not just approximately.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

from . import sphere
from .errors import (
    InvalidParameterError,
    NonConvergenceError,
    OutOfBoundsError,
)

TWO_PI = 2.0 * math.pi

# Monotone iterates stay below the explicit quadratic supersolution only for
# eps below this threshold; value_iteration refuses larger eps.
SUPERSOLUTION_EPS_MAX = 0.5

# Interpolation weights within this distance of a node snap to the node, so
# grid points reproduce their stored values exactly.
_SNAP = 1e-9


# ---------------------------------------------------------------------------
# domains


@dataclass(frozen=True)
class Ball:
    """Open ball {|x - center| < radius}."""

    center: tuple
    radius: float

    def __post_init__(self):
        c = np.asarray(self.center, dtype=float)
        if c.ndim != 1 or c.size not in (2, 3):
            raise InvalidParameterError("ball center must be a 2- or 3-vector")
        if not self.radius > 0:
            raise InvalidParameterError("ball radius must be positive")
        object.__setattr__(self, "center", tuple(float(v) for v in c))

    @property
    def dim(self) -> int:
        return len(self.center)

    def contains(self, points):
        p = np.asarray(points, dtype=float)
        if p.ndim == 1:
            d = 0.0
            for v, c in zip(p, self.center):
                d += (float(v) - c) ** 2
            return d < self.radius**2
        d = p - np.asarray(self.center)
        return np.einsum("ij,ij->i", d, d) < self.radius**2

    def bounds(self):
        c = np.asarray(self.center)
        r = self.radius
        return c - r, c + r

    def support_radius(self, z) -> float:
        """max over boundary points y of |y - z|."""
        z = np.asarray(z, dtype=float)
        return float(np.linalg.norm(z - np.asarray(self.center)) + self.radius)

    def as_dict(self) -> dict:
        return {"shape": "ball", "center": list(self.center), "radius": self.radius}


@dataclass(frozen=True)
class Ellipse:
    """Open axis-aligned ellipse {sum ((x_i - c_i)/s_i)^2 < 1}."""

    center: tuple
    semi_axes: tuple

    def __post_init__(self):
        c = np.asarray(self.center, dtype=float)
        s = np.asarray(self.semi_axes, dtype=float)
        if c.shape != s.shape or c.ndim != 1 or c.size not in (2, 3):
            raise InvalidParameterError("center and semi_axes must be matching 2- or 3-vectors")
        if not np.all(s > 0):
            raise InvalidParameterError("semi-axes must be positive")
        object.__setattr__(self, "center", tuple(float(v) for v in c))
        object.__setattr__(self, "semi_axes", tuple(float(v) for v in s))

    @property
    def dim(self) -> int:
        return len(self.center)

    def contains(self, points):
        p = np.asarray(points, dtype=float)
        if p.ndim == 1:
            d = 0.0
            for v, c, s in zip(p, self.center, self.semi_axes):
                d += ((float(v) - c) / s) ** 2
            return d < 1.0
        d = (p - np.asarray(self.center)) / np.asarray(self.semi_axes)
        return np.einsum("ij,ij->i", d, d) < 1.0

    def bounds(self):
        c = np.asarray(self.center)
        s = np.asarray(self.semi_axes)
        return c - s, c + s

    def support_radius(self, z) -> float:
        z = np.asarray(z, dtype=float)
        return float(np.linalg.norm(z - np.asarray(self.center)) + max(self.semi_axes))

    def as_dict(self) -> dict:
        return {
            "shape": "ellipse",
            "center": list(self.center),
            "semi_axes": list(self.semi_axes),
        }


def domain_from_dict(d: dict):
    shape = d.get("shape")
    if shape == "ball":
        return Ball(center=tuple(d["center"]), radius=float(d["radius"]))
    if shape == "ellipse":
        return Ellipse(center=tuple(d["center"]), semi_axes=tuple(d["semi_axes"]))
    raise InvalidParameterError(f"unknown domain shape {shape!r}")


def unit_ball(dim: int) -> Ball:
    return Ball(center=(0.0,) * dim, radius=1.0)


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class SolverConfig:
    """Parameters of the discretized game operator.

    Fields left as None are resolved against the domain dimension by
    resolve_config.  grid_h must not exceed eps, otherwise one game step
    cannot cross a grid cell and the scheme degenerates.
    """

    eps: float
    K: float | None = None
    axis_count: int | None = None
    quad_order: int | None = None
    tol_iter: float | None = None
    max_iter: int = 100_000
    grid_h: float | None = None


def resolve_config(cfg: SolverConfig, dim: int) -> SolverConfig:
    """Fill defaults and validate; returns a fully concrete config."""
    if dim not in (2, 3):
        raise InvalidParameterError("dimension must be 2 or 3")
    if not (cfg.eps > 0 and math.isfinite(cfg.eps)):
        raise InvalidParameterError("eps must be positive and finite")
    # raises if delta_eps(eps) is inadmissible for this dimension
    sphere.theta_eps(cfg.eps, dim)
    K = sphere.constant_C(dim) if cfg.K is None else float(cfg.K)
    if not K > 0:
        raise InvalidParameterError("K must be positive")
    M = (64 if dim == 2 else 128) if cfg.axis_count is None else int(cfg.axis_count)
    if M < 8:
        raise InvalidParameterError("axis_count must be at least 8")
    order = (1024 if dim == 2 else 64) if cfg.quad_order is None else int(cfg.quad_order)
    if order < 16:
        raise InvalidParameterError("quad_order must be at least 16")
    tol = cfg.eps**2 * 1e-3 if cfg.tol_iter is None else float(cfg.tol_iter)
    if not tol > 0:
        raise InvalidParameterError("tol_iter must be positive")
    h = cfg.eps / 2.0 if cfg.grid_h is None else float(cfg.grid_h)
    if not 0 < h <= cfg.eps:
        raise InvalidParameterError("grid_h must satisfy 0 < grid_h <= eps")
    if cfg.max_iter < 1:
        raise InvalidParameterError("max_iter must be at least 1")
    return replace(
        cfg, K=K, axis_count=M, quad_order=order, tol_iter=tol, grid_h=h
    )


def config_as_dict(cfg: SolverConfig) -> dict:
    return {
        "eps": cfg.eps,
        "K": cfg.K,
        "axis_count": cfg.axis_count,
        "quad_order": cfg.quad_order,
        "tol_iter": cfg.tol_iter,
        "max_iter": cfg.max_iter,
        "grid_h": cfg.grid_h,
    }


# ---------------------------------------------------------------------------
# value field


class ValueField:
    """Scalar field on a uniform grid over a box containing the domain.

    values[i, j(, k)] is the field at node lo + (i, j(, k)) * h.  Nodes outside
    the open domain always hold 0 (extension by zero).
    """

    def __init__(self, domain, lo, h: float, values: np.ndarray,
                 iterations: int | None = None,
                 final_increment: float | None = None):
        self.domain = domain
        self.lo = np.asarray(lo, dtype=float)
        self.h = float(h)
        self.values = np.asarray(values, dtype=float)
        self.iterations = iterations
        self.final_increment = final_increment
        if self.values.ndim != domain.dim:
            raise InvalidParameterError("values rank must match domain dimension")
        nodes = self.node_points()
        self.interior_mask = domain.contains(nodes).reshape(self.values.shape)

    @property
    def shape(self) -> tuple:
        return self.values.shape

    @property
    def box(self):
        hi = self.lo + (np.asarray(self.shape) - 1) * self.h
        return self.lo.copy(), hi

    def grid_axes(self) -> list:
        return [self.lo[a] + self.h * np.arange(n) for a, n in enumerate(self.shape)]

    def node_points(self) -> np.ndarray:
        """All node coordinates, row-major, shape (prod(shape), dim)."""
        mesh = np.meshgrid(*self.grid_axes(), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def interior_points(self) -> np.ndarray:
        return self.node_points()[self.interior_mask.ravel()]

    def copy_with(self, values: np.ndarray) -> "ValueField":
        return ValueField(self.domain, self.lo, self.h, values,
                          iterations=self.iterations,
                          final_increment=self.final_increment)


def make_grid(domain, eps: float, h: float):
    """Box grid centered on the domain with an (eps + 2h) collar.

    The collar guarantees that every interpolation stencil of x + eps*v stays
    inside the node array for any x in the domain and unit v.
    """
    lo_d, hi_d = domain.bounds()
    c = np.asarray(domain.center, dtype=float)
    margin = eps + 2.0 * h
    half = np.ceil(((hi_d - lo_d) / 2.0 + margin) / h).astype(int)
    lo = c - half * h
    shape = tuple(int(2 * n + 1) for n in half)
    return lo, shape


def empty_field(domain, cfg: SolverConfig) -> ValueField:
    cfg = resolve_config(cfg, domain.dim)
    lo, shape = make_grid(domain, cfg.eps, cfg.grid_h)
    return ValueField(domain, lo, cfg.grid_h, np.zeros(shape))


def field_from_function(domain, cfg: SolverConfig, fn: Callable) -> ValueField:
    """Sample fn on the grid, zeroed outside the domain.

    fn takes an (m, dim) array and returns (m,) values.
    """
    f = empty_field(domain, cfg)
    pts = f.node_points()
    vals = np.asarray(fn(pts), dtype=float).reshape(f.shape)
    vals = np.where(f.interior_mask, vals, 0.0)
    return f.copy_with(vals)


def _snap(t: np.ndarray) -> np.ndarray:
    t = np.where(t < _SNAP, 0.0, t)
    return np.where(t > 1.0 - _SNAP, 1.0, t)


def _multilinear(values: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Multilinear interpolation at grid coordinates g, shape (m, dim)."""
    shape = values.shape
    dim = len(shape)
    i0 = np.floor(g).astype(np.int64)
    for a in range(dim):
        np.clip(i0[:, a], 0, shape[a] - 2, out=i0[:, a])
    t = _snap(np.clip(g - i0, 0.0, 1.0))
    flat = values.ravel()
    strides = np.array([int(np.prod(shape[a + 1:], dtype=np.int64)) for a in range(dim)])
    base = i0 @ strides
    out = np.zeros(g.shape[0])
    for corner in range(1 << dim):
        offs = 0
        w = np.ones(g.shape[0])
        for a in range(dim):
            if corner >> a & 1:
                offs += strides[a]
                w = w * t[:, a]
            else:
                w = w * (1.0 - t[:, a])
        out += w * flat[base + offs]
    return out


def interpolate(field: ValueField, p):
    """Field value at p: 0 outside the domain, multilinear inside.

    Accepts a single point or an (m, dim) batch.  Raises OutOfBoundsError for
    points beyond the grid box.
    """
    arr = np.asarray(p, dtype=float)
    single = arr.ndim == 1
    pts = np.atleast_2d(arr)
    if pts.shape[1] != field.domain.dim:
        raise InvalidParameterError("point dimension does not match the field")
    lo, hi = field.box
    if np.any(pts < lo - 1e-12) or np.any(pts > hi + 1e-12):
        raise OutOfBoundsError("point outside the grid box")
    vals = _multilinear(field.values, (pts - lo) / field.h)
    out = np.where(field.domain.contains(pts), vals, 0.0)
    return float(out[0]) if single else out


# ---------------------------------------------------------------------------
# shared-grid averaging kernels


def _segment_blocks(c0: int, c1: int) -> list:
    """Decompose half-open [c0, c1) into binary tree blocks (level, index)."""
    out = []
    level = 0
    while c0 < c1:
        if c0 & 1:
            out.append((level, c0))
            c0 += 1
        if c1 & 1:
            c1 -= 1
            out.append((level, c1))
        c0 >>= 1
        c1 >>= 1
        level += 1
    return out


class _CircleBellman:
    """max-min of cap-pair averages from samples on a shared circle grid.

    The circle is split into Q equal cells centered at angles 2*pi*q/Q.  An arc
    integral is the cell width times (sum of fully covered cell values, taken
    from a binary block tree of partial sums, plus fractional coverage of the
    two end cells).  Every term is a non-negative multiple of a sample, so the
    map V -> result is monotone exactly in floating point.
    """

    def __init__(self, theta: float, M: int, Q: int):
        self.theta = theta
        self.M = M
        self.Q = Q
        self.dphi = TWO_PI / Q
        phis = self.dphi * np.arange(Q)
        self.nodes = np.stack([np.cos(phis), np.sin(phis)], axis=-1)
        w = math.acos(-theta)
        self.pairs = []  # per separation k: list over i of (ends, blocks, 1/coverage)
        for k in range(M // 2 + 1):
            a_half = w - math.pi * k / M
            b_half = w - math.pi + math.pi * k / M
            rows = []
            for i in range(M):
                mid = TWO_PI * i / M + math.pi * k / M
                arcs = [(mid - a_half, mid + a_half)]
                if b_half > 1e-14:
                    arcs.append((mid + math.pi - b_half, mid + math.pi + b_half))
                ends: list = []
                blocks: list = []
                coverage = 0.0
                for a, b in arcs:
                    coverage += self._decompose(a, b, ends, blocks)
                rows.append((ends, blocks, 1.0 / coverage))
            self.pairs.append(rows)

    def _decompose(self, a: float, b: float, ends: list, blocks: list) -> float:
        """Register arc [a, b]; returns its total cell coverage (width/dphi)."""
        ua = a / self.dphi + 0.5
        ub = b / self.dphi + 0.5
        fa, fb = math.floor(ua), math.floor(ub)
        if fa == fb:
            cov = max(ub - ua, 0.0)
            ends.append((fa % self.Q, cov))
            return cov
        ca = max(1.0 - (ua - fa), 0.0)
        cb = max(ub - fb, 0.0)
        ends.append((fa % self.Q, ca))
        ends.append((fb % self.Q, cb))
        count = fb - fa - 1
        if count <= 0:
            return ca + cb
        s = (fa + 1) % self.Q
        segs = [(s, s + count)] if s + count <= self.Q else [(s, self.Q), (0, s + count - self.Q)]
        for c0, c1 in segs:
            blocks.extend(_segment_blocks(c0, c1))
        return ca + cb + count

    def _tree(self, V: np.ndarray) -> list:
        levels = [V]
        cur = V
        while cur.shape[0] > 1:
            n = cur.shape[0]
            nxt = cur[0 : n - n % 2 : 2] + cur[1::2]
            if n % 2:
                nxt = np.concatenate([nxt, cur[n - 1 :]])
            levels.append(nxt)
            cur = nxt
        return levels

    def reduce(self, V: np.ndarray) -> np.ndarray:
        """V: (Q, m) samples; returns (m,) max_i min_j of pair averages."""
        m = V.shape[1]
        tree = self._tree(V)
        min_over_b = np.full((self.M, m), np.inf)
        acc = np.empty(m)
        for k, rows in enumerate(self.pairs):
            band = np.empty((self.M, m))
            for i, (ends, blocks, scale) in enumerate(rows):
                acc.fill(0.0)
                for level, idx in blocks:
                    acc += tree[level][idx]
                for cell, cov in ends:
                    acc += cov * V[cell]
                band[i] = acc * scale
            np.minimum(min_over_b, band, out=min_over_b)
            if k:
                np.minimum(min_over_b, np.roll(band, k, axis=0), out=min_over_b)
        return min_over_b.max(axis=0)


class _SphereBellman:
    """max-min of cap-pair averages on a shared product grid over S^2.

    Heights use Gauss-Legendre nodes, azimuths a uniform grid; the area element
    is the product of the two weights.  Cap membership is fractional near the
    cap edge (linear ramp across one cell) so that averages vary smoothly as
    caps rotate; weights stay in [0, 1], keeping the reduction monotone.
    """

    def __init__(self, theta: float, axes: np.ndarray, order: int):
        self.theta = theta
        self.axes = axes
        M = axes.shape[0]
        self.M = M
        xt, wt = np.polynomial.legendre.leggauss(order)
        nphi = order
        phis = TWO_PI * np.arange(nphi) / nphi
        t = np.repeat(xt, nphi)
        wq = np.repeat(wt, nphi) * (TWO_PI / nphi)
        s = np.sqrt(np.clip(1.0 - t**2, 0.0, None))
        cphi = np.tile(np.cos(phis), order)
        sphi = np.tile(np.sin(phis), order)
        self.nodes = np.stack([s * cphi, s * sphi, t], axis=-1)
        self.weights = wq
        # local cell extents for the fractional membership ramp
        dv_dt = np.stack(
            [
                np.where(s > 1e-12, -t * cphi / np.where(s > 1e-12, s, 1.0), 0.0),
                np.where(s > 1e-12, -t * sphi / np.where(s > 1e-12, s, 1.0), 0.0),
                np.ones_like(t),
            ],
            axis=-1,
        )
        dv_dphi = np.stack([-s * sphi, s * cphi, np.zeros_like(t)], axis=-1)
        dots = self.nodes @ axes.T  # (Q3, M)
        span = (
            np.abs(dv_dt @ axes.T) * np.repeat(wt, nphi)[:, None]
            + np.abs(dv_dphi @ axes.T) * (TWO_PI / nphi)
        )
        np.clip(span, 1e-15, None, out=span)
        member = np.clip((dots + theta) / span + 0.5, 0.0, 1.0)
        self.member = np.ascontiguousarray(member.T)  # (M, Q3)
        wm = self.member * wq[None, :]
        self.denom = np.einsum("iq,jq->ij", wm, self.member, optimize=False)
        if not np.all(self.denom > 1e-12):
            raise InvalidParameterError("degenerate cap pair on the quadrature grid")

    def reduce(self, V: np.ndarray) -> np.ndarray:
        """V: (Q3, m) samples; returns (m,) max_i min_j of pair averages."""
        m = V.shape[1]
        out = np.empty(m)
        wV = V * self.weights[:, None]  # (Q3, m)
        chunk = max(1, int(2e6 // (self.M * V.shape[0])) or 1)
        for s in range(0, m, chunk):
            w = wV[:, s : s + chunk]  # (Q3, c)
            part = self.member[:, :, None] * w[None, :, :]  # (M, Q3, c)
            num = np.einsum("iqc,jq->ijc", part, self.member, optimize=False)
            avg = num / self.denom[:, :, None]
            out[s : s + chunk] = avg.min(axis=1).max(axis=0)
        return out


# ---------------------------------------------------------------------------
# the operator


class _Kernel:
    """One Bellman sweep over all interior grid nodes of a field."""

    def __init__(self, domain, cfg: SolverConfig, proto: ValueField):
        self.domain = domain
        self.cfg = cfg
        dim = domain.dim
        theta = sphere.theta_eps(cfg.eps, dim)
        if dim == 2:
            self.bellman = _CircleBellman(theta, cfg.axis_count, cfg.quad_order)
        else:
            axes = sphere.fibonacci_axes(cfg.axis_count)
            self.bellman = _SphereBellman(theta, axes, cfg.quad_order)
        self.proto = proto
        self.int_flat = np.flatnonzero(proto.interior_mask.ravel())
        pts = proto.node_points()[self.int_flat]
        self.n_interior = pts.shape[0]
        shape = proto.shape
        Q = self.bellman.nodes.shape[0]
        steps = cfg.eps * self.bellman.nodes / proto.h  # (Q, dim), grid units
        fi = np.floor(steps).astype(np.int64)
        t = _snap(steps - fi)
        ncor = 1 << dim
        weights = np.ones((Q, ncor))
        for corner in range(ncor):
            for a in range(dim):
                if corner >> a & 1:
                    weights[:, corner] *= t[:, a]
                else:
                    weights[:, corner] *= 1.0 - t[:, a]
        self.fi = fi
        self.corner_weights = weights
        # interior nodes sit at least pad cells from every box face, so the
        # stencil of x + eps v is always inside the inner window below
        pad = int(math.ceil(cfg.eps / proto.h)) + 1
        gnode = np.rint((pts - proto.lo) / proto.h).astype(np.int64)
        if np.any(gnode < pad) or np.any(gnode >= np.asarray(shape) - pad):
            raise InvalidParameterError("grid collar too small for eps step")
        self.pad = pad
        inner_shape = tuple(n - 2 * pad for n in shape)
        self.inner_shape = inner_shape
        inner_strides = np.array(
            [int(np.prod(inner_shape[a + 1:], dtype=np.int64)) for a in range(dim)]
        )
        self.inner_flat = (gnode - pad) @ inner_strides
        sample_pts = pts[None, :, :] + cfg.eps * self.bellman.nodes[:, None, :]
        flat = sample_pts.reshape(-1, dim)
        self.inside = self.domain.contains(flat).reshape(Q, self.n_interior)

    def sample_field(self, values: np.ndarray) -> np.ndarray:
        """V[q, x] = field at node x + eps v_q (0 outside the domain)."""
        Q = self.fi.shape[0]
        dim = values.ndim
        pad = self.pad
        shape = values.shape
        V = np.empty((Q, self.n_interior))
        for q in range(Q):
            acc = None
            for corner in range(self.corner_weights.shape[1]):
                wgt = self.corner_weights[q, corner]
                if wgt == 0.0:
                    continue
                window = tuple(
                    slice(pad + self.fi[q, a] + (corner >> a & 1),
                          shape[a] - pad + self.fi[q, a] + (corner >> a & 1))
                    for a in range(dim)
                )
                term = wgt * values[window]
                acc = term if acc is None else acc + term
            samples = acc.reshape(-1)[self.inner_flat]
            V[q] = np.where(self.inside[q], samples, 0.0)
        return V

    def sweep(self, values: np.ndarray) -> np.ndarray:
        """Interior Bellman right-hand sides, shape (n_interior,)."""
        V = self.sample_field(values)
        return self.bellman.reduce(V) + self.cfg.eps**2 * self.cfg.K


def _bellman_core(field: ValueField, pts: np.ndarray, cfg: SolverConfig) -> np.ndarray:
    """RHS at arbitrary interior points via the public interpolant."""
    dim = field.domain.dim
    theta = sphere.theta_eps(cfg.eps, dim)
    if dim == 2:
        bell = _CircleBellman(theta, cfg.axis_count, cfg.quad_order)
    else:
        bell = _SphereBellman(theta, sphere.fibonacci_axes(cfg.axis_count), cfg.quad_order)
    out = np.empty(pts.shape[0])
    for r in range(pts.shape[0]):
        samples = interpolate(field, pts[r] + cfg.eps * bell.nodes)
        out[r] = bell.reduce(samples[:, None])[0]
    return out + cfg.eps**2 * cfg.K


def bellman_rhs(field: ValueField, x, cfg: SolverConfig) -> float:
    """One application of the game operator at x.

    max over Paul's axes of the min over Carol's axes of the average of the
    field over the cap intersection at x, plus the running payoff eps^2 K.
    Points outside the domain return 0 (the game has already ended there).
    """
    cfg = resolve_config(cfg, field.domain.dim)
    x = np.asarray(x, dtype=float)
    if x.shape != (field.domain.dim,):
        raise InvalidParameterError("x must be a point of the field's dimension")
    if not field.domain.contains(x):
        return 0.0
    return float(_bellman_core(field, x[None, :], cfg)[0])


def value_iteration(domain, cfg: SolverConfig, start: ValueField | None = None,
                    monitor: Callable | None = None) -> ValueField:
    """Iterate the game operator from w = 0 until the sup increment drops
    below tol_iter.

    Returns the converged field with .iterations and .final_increment set.
    Raises NonConvergenceError (carrying the last iterate) if max_iter sweeps
    do not reach tol_iter.  The iteration is monotone by construction and this
    is checked on every sweep.
    """
    cfg = resolve_config(cfg, domain.dim)
    if cfg.eps > SUPERSOLUTION_EPS_MAX:
        raise InvalidParameterError(
            f"eps must be at most {SUPERSOLUTION_EPS_MAX} for a convergent iteration"
        )
    field = empty_field(domain, cfg) if start is None else start
    kernel = _Kernel(domain, cfg, field)
    vals = field.values.copy()
    flat = vals.ravel()
    interior = kernel.int_flat
    cur = flat[interior].copy()
    increment = math.inf
    for n in range(1, cfg.max_iter + 1):
        new = kernel.sweep(vals)
        if not np.all(new >= cur):
            raise AssertionError("value iteration lost monotonicity")
        increment = float(np.max(new - cur))
        cur = new
        vals = np.zeros_like(vals)
        vals.ravel()[interior] = new
        if monitor is not None:
            monitor(n, increment)
        if increment < cfg.tol_iter:
            return ValueField(domain, field.lo, field.h, vals,
                              iterations=n, final_increment=increment)
    last = ValueField(domain, field.lo, field.h, vals,
                      iterations=cfg.max_iter, final_increment=increment)
    raise NonConvergenceError(
        f"value iteration did not reach tol_iter={cfg.tol_iter} "
        f"in {cfg.max_iter} sweeps (last increment {increment})",
        field=last, increment=increment, iterations=cfg.max_iter,
    )


def dpp_residual(field: ValueField, cfg: SolverConfig) -> float:
    """sup over interior nodes of |field - bellman_rhs(field)|."""
    cfg = resolve_config(cfg, field.domain.dim)
    kernel = _Kernel(field.domain, cfg, field)
    rhs = kernel.sweep(field.values)
    cur = field.values.ravel()[kernel.int_flat]
    return float(np.max(np.abs(cur - rhs))) if cur.size else 0.0


def check_dpp_supersolution(field: ValueField, cfg: SolverConfig,
                            slack: float = 1e-9) -> tuple:
    """Whether field >= bellman_rhs(field) - slack at every interior node.

    Returns (ok, worst), where worst is the largest violation
    max(rhs - field) over interior nodes (negative when the field is a strict
    supersolution).  Nodes outside the domain must be >= 0; they are stored as
    0 so this holds by construction, but it is checked anyway.
    """
    cfg = resolve_config(cfg, field.domain.dim)
    if not np.all(field.values[~field.interior_mask] >= 0.0):
        return False, math.inf
    kernel = _Kernel(field.domain, cfg, field)
    rhs = kernel.sweep(field.values)
    cur = field.values.ravel()[kernel.int_flat]
    if cur.size == 0:
        return True, -math.inf
    worst = float(np.max(rhs - cur))
    return worst <= slack, worst


# ---------------------------------------------------------------------------
# serialization


def _fmt(x: float) -> str:
    return "%.17g" % x


def _fmt_list(xs: Iterable[float]) -> str:
    return "[" + ", ".join(_fmt(float(x)) for x in xs) + "]"


def save_field(field: ValueField, path, cfg: SolverConfig | None = None,
               extra: dict | None = None) -> None:
    """Write a field as a JSON header plus a CSV of node values.

    path gets the header; the values go to path with a .values.csv suffix,
    row-major, one grid row per line, floats formatted to round-trip exactly.
    Output bytes depend only on the field and header content.
    """
    path = Path(path)
    values_name = path.stem + ".values.csv"
    lo, hi = field.box
    header: dict = {
        "format": "valuefield/1",
        "domain": field.domain.as_dict(),
        "grid_h": field.h,
        "box_lo": list(map(float, lo)),
        "box_hi": list(map(float, hi)),
        "grid_shape": list(field.shape),
        "values_file": values_name,
    }
    if field.iterations is not None:
        header["iterations"] = field.iterations
    if field.final_increment is not None:
        header["final_increment"] = field.final_increment
    if cfg is not None:
        header["config"] = config_as_dict(cfg)
    if extra:
        header.update(extra)
    path.write_text(dumps_compact(header) + "\n")
    rows = field.values.reshape(-1, field.shape[-1])
    lines = [",".join(_fmt(v) for v in row) for row in rows]
    (path.parent / values_name).write_text("\n".join(lines) + "\n")


def load_field(path) -> tuple:
    """Read a field written by save_field; returns (field, header)."""
    path = Path(path)
    header = json.loads(path.read_text())
    if header.get("format") != "valuefield/1":
        raise InvalidParameterError("not a value field file")
    domain = domain_from_dict(header["domain"])
    shape = tuple(header["grid_shape"])
    raw = (path.parent / header["values_file"]).read_text().strip()
    vals = np.array(
        [[float(v) for v in line.split(",")] for line in raw.splitlines()]
    ).reshape(shape)
    field = ValueField(
        domain, np.asarray(header["box_lo"], dtype=float), float(header["grid_h"]),
        vals,
        iterations=header.get("iterations"),
        final_increment=header.get("final_increment"),
    )
    return field, header


def dumps_compact(obj) -> str:
    """JSON with floats printed as %.17g so output is reproducible."""
    if isinstance(obj, dict):
        parts = []
        for k, v in obj.items():
            if not isinstance(k, str):
                # coerce like the stdlib so float-keyed tables stay valid JSON
                k = repr(float(k)) if isinstance(k, (float, np.floating)) else str(k)
            parts.append(f"{json.dumps(k)}: {dumps_compact(v)}")
        return "{" + ", ".join(parts) + "}"
    if isinstance(obj, (list, tuple)):
        return "[" + ", ".join(dumps_compact(v) for v in obj) + "]"
    if isinstance(obj, bool) or obj is None:
        return json.dumps(obj)
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return _fmt(float(obj))
    return json.dumps(obj)
