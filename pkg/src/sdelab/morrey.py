"""Mixed norms, normalized and Morrey norms on parabolic cylinders.

All computations act on a :class:`GridFunction`, a cell-centred sample of a
space-time function on a box, and use the midpoint rule: a cell belongs to
the cylinder ``C_rho(t, x) = [t, t + rho^2) x B_rho(x)`` when its centre does.
Infinite exponents are maxima over cells.

Two integration orders are supported::

    time_outer   ( int ( int |f|^p dx )^(q/p) dt )^(1/q)
    space_outer  ( int ( int |f|^q dt )^(p/q) dx )^(1/p)

The bracket order picks ``time_outer`` when ``p > q`` and ``space_outer``
otherwise.  Normalized norms divide by the norm of 1 over the same cells, so
they are power means and do not depend on cell volumes.

Morrey norms are suprema of ``rho^beta`` times the normalized norm over a
declared search family; every reported value is a lower bound for the true
supremum, and the maximizing cylinder is returned with it.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import ndimage, optimize, special
from scipy.signal import fftconvolve

from .fields import VectorField, ScalarField, eval_drift, eval_scalar, singular_mask
from .reports import digest

INF = math.inf


class NormError(ValueError):
    pass


def _exp(v) -> float:
    v = float(v)
    if not (v > 1.0 or v == INF or v == 1.0):
        raise NormError(f"exponent must be >= 1 or inf, got {v}")
    return v


@dataclass(frozen=True)
class MixedNormSpec:
    """Exponents ``q`` (time) and ``p`` (space), integration order and Morrey weight.

    ``order`` is ``time_outer``, ``space_outer`` or ``bracket``; ``rho_max``
    caps cylinder radii (``inf`` for the homogeneous space).
    """

    q: float
    p: float
    order: str = "bracket"
    beta: float = 0.0
    rho_max: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "q", _exp(self.q))
        object.__setattr__(self, "p", _exp(self.p))
        if self.order not in ("time_outer", "space_outer", "bracket"):
            raise NormError(f"unknown order {self.order!r}")
        if self.beta < 0:
            raise NormError("beta must be nonnegative")
        if not self.rho_max > 0:
            raise NormError("rho_max must be positive")

    @property
    def resolved(self) -> str:
        if self.order != "bracket":
            return self.order
        return "time_outer" if self.p > self.q else "space_outer"

    def replace(self, **kw) -> "MixedNormSpec":
        return dataclasses.replace(self, **kw)

    def to_dict(self) -> dict:
        return {"q": self.q, "p": self.p, "order": self.order, "resolved": self.resolved,
                "beta": self.beta, "rho_max": self.rho_max}


@dataclass(frozen=True)
class Cylinder:
    """``[t, t + rho^2) x B_rho(x)``."""

    t: float
    x: tuple
    rho: float

    def __post_init__(self):
        object.__setattr__(self, "x", tuple(float(v) for v in self.x))
        if not self.rho > 0:
            raise NormError("cylinder radius must be positive")

    @property
    def d(self) -> int:
        return len(self.x)

    @property
    def volume(self) -> float:
        d = self.d
        ball = math.pi ** (d / 2) / math.gamma(d / 2 + 1) * self.rho ** d
        return self.rho ** 2 * ball

    def contains(self, t, x) -> np.ndarray:
        x = np.asarray(x, float)
        inb = np.sum((x - np.asarray(self.x)) ** 2, axis=-1) < self.rho ** 2
        t = np.asarray(t, float)
        return inb & (t >= self.t) & (t < self.t + self.rho ** 2)

    def to_dict(self) -> dict:
        return {"t": self.t, "x": list(self.x), "rho": self.rho}


def _centers(lo, hi, n):
    h = (hi - lo) / n
    c = lo + h * (np.arange(n) + 0.5)
    c[np.abs(c) < 1e-9 * h] = 0.0  # snap round-off so symmetric grids hit 0 exactly
    return c


@dataclass(frozen=True, eq=False)
class GridFunction:
    """Cell values on ``[t_lo, t_hi) x prod [x_lo_i, x_hi_i)``.

    ``values`` has shape ``(n_t, n_1, ..., n_d)``.  A ``static`` function does
    not depend on time; it carries a single time cell and every time window
    fits.
    """

    values: np.ndarray
    t_lo: float
    t_hi: float
    x_lo: tuple
    x_hi: tuple
    static: bool = False
    provenance: str = "raw"

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "x_lo", tuple(float(a) for a in self.x_lo))
        object.__setattr__(self, "x_hi", tuple(float(a) for a in self.x_hi))
        if v.ndim != 1 + len(self.x_lo) or len(self.x_lo) != len(self.x_hi):
            raise NormError("values shape does not match the box dimension")
        if not np.all(np.isfinite(v)):
            raise NormError("grid values must be finite")
        if self.static and v.shape[0] != 1:
            raise NormError("a static grid has exactly one time cell")
        if not self.t_hi > self.t_lo or any(b <= a for a, b in zip(self.x_lo, self.x_hi)):
            raise NormError("empty grid box")

    @classmethod
    def from_field(cls, f, *, t_range=(0.0, 1.0), x_lo=None, x_hi=None, n_t: int = 16,
                   n_x: int = 64, static: bool = False) -> "GridFunction":
        """Sample ``|f|`` (Euclidean norm for drifts) at cell centres.

        A cell whose centre lies on a declared singular set is sampled at its
        centre shifted by half a cell diagonal.
        """
        d = f.dim
        x_lo = tuple([-1.0] * d) if x_lo is None else tuple(x_lo)
        x_hi = tuple([1.0] * d) if x_hi is None else tuple(x_hi)
        n_ts = 1 if static else n_t
        tc = _centers(t_range[0], t_range[1], n_ts)
        axes = [_centers(x_lo[i], x_hi[i], n_x) for i in range(d)]
        grids = np.meshgrid(tc, *axes, indexing="ij")
        t = grids[0]
        x = np.stack(grids[1:], axis=-1)
        sing = singular_mask(f, t, x)
        if np.any(sing):
            half = 0.5 * np.array([(x_hi[i] - x_lo[i]) / n_x for i in range(d)])
            x = np.where(sing[..., None], x + half, x)
            dt = (t_range[1] - t_range[0]) / n_ts
            t = np.where(sing & singular_mask(f, t, x), t + 0.5 * dt, t)
        if isinstance(f, VectorField):
            vals = np.sqrt(np.sum(eval_drift(f, t, x, check=False) ** 2, axis=-1))
        else:
            vals = np.abs(eval_scalar(f, t, x, check=False))
        return cls(vals, float(t_range[0]), float(t_range[1]), x_lo, x_hi, static,
                   f"{f.kind}:{f.fingerprint()}")

    @property
    def d(self) -> int:
        return len(self.x_lo)

    @property
    def shape(self):
        return self.values.shape

    @property
    def dt(self) -> float:
        return (self.t_hi - self.t_lo) / self.values.shape[0]

    @property
    def dx(self) -> np.ndarray:
        n = np.array(self.values.shape[1:], float)
        return (np.array(self.x_hi) - np.array(self.x_lo)) / n

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.dx)) * (1.0 if self.static else self.dt)

    def t_centers(self) -> np.ndarray:
        return _centers(self.t_lo, self.t_hi, self.values.shape[0])

    def x_centers(self, axis: int) -> np.ndarray:
        return _centers(self.x_lo[axis], self.x_hi[axis], self.values.shape[1 + axis])

    def with_values(self, values) -> "GridFunction":
        return dataclasses.replace(self, values=values, provenance=f"derived:{self.provenance}")

    def fingerprint(self) -> str:
        return digest({"shape": list(self.values.shape), "t": [self.t_lo, self.t_hi],
                       "x_lo": list(self.x_lo), "x_hi": list(self.x_hi),
                       "static": self.static, "provenance": self.provenance,
                       "values": digest(np.round(self.values, 12).ravel()[::max(1, self.values.size // 4096)])})


@dataclass(frozen=True)
class TightnessTriple:
    mu: float
    q: float
    p: float

    @property
    def nu(self) -> float:
        return 1.0 - self.mu / self.p - 1.0 / self.q

    @property
    def tight(self) -> bool:
        return self.nu >= -1e-12

    def to_dict(self) -> dict:
        return {"mu": self.mu, "q": self.q, "p": self.p, "nu": self.nu, "tight": self.tight}


def tightness(mu, q, p) -> TightnessTriple:
    """Tightness exponent ``nu = 1 - mu/p - 1/q``; properly tight iff ``nu >= 0``."""
    return TightnessTriple(float(mu), float(q), float(p))


# ---------------------------------------------------------------------------
# single-cylinder norms

def _region_cells(f: GridFunction, region: Cylinder):
    if region.d != f.d:
        raise NormError("cylinder and grid dimensions differ")
    tol = 1e-9
    for i in range(f.d):
        if (region.x[i] - region.rho < f.x_lo[i] - tol * f.dx[i]
                or region.x[i] + region.rho > f.x_hi[i] + tol * f.dx[i]):
            raise NormError("cylinder leaves the grid in space")
    if f.static:
        tidx = np.array([0])
    else:
        if region.t < f.t_lo - tol * f.dt or region.t + region.rho ** 2 > f.t_hi + tol * f.dt:
            raise NormError("cylinder leaves the grid in time")
        tc = f.t_centers()
        tidx = np.nonzero((tc >= region.t) & (tc < region.t + region.rho ** 2))[0]
    axes = [f.x_centers(i) for i in range(f.d)]
    grids = np.meshgrid(*axes, indexing="ij")
    r2 = sum((g - region.x[i]) ** 2 for i, g in enumerate(grids))
    smask = r2 < region.rho ** 2
    if tidx.size == 0 or not np.any(smask):
        raise NormError("cylinder contains no cell centre; refine the grid")
    return tidx, smask


def _pnorm(a, p, axis, w):
    # (sum w |a|^p)^(1/p), or max for p = inf
    if p == INF:
        return np.max(a, axis=axis)
    return (w * np.sum(a ** p, axis=axis)) ** (1.0 / p)


def _norm_cells(f: GridFunction, spec: MixedNormSpec, region: Cylinder, values=None):
    tidx, smask = _region_cells(f, region)
    vals = np.abs(f.values if values is None else values)
    block = vals[tidx][:, smask]  # (n_t, n_cells)
    dV = float(np.prod(f.dx))
    dt = region.rho ** 2 if f.static else f.dt
    q, p = spec.q, spec.p
    if spec.resolved == "time_outer":
        inner = _pnorm(block, p, 1, dV)
        return float(_pnorm(inner, q, 0, dt)), block.shape
    inner = _pnorm(block, q, 0, dt)
    return float(_pnorm(inner, p, 0, dV)), block.shape


def _check_sign(f: GridFunction, nonneg: bool):
    if nonneg and np.any(f.values < 0):
        raise NormError("negative values in a grid flagged nonnegative")


def mixed_norm(f: GridFunction, spec: MixedNormSpec, region: Cylinder, *,
               nonnegative: bool = False) -> float:
    """Midpoint-rule mixed norm of ``f`` over the cells of ``region``."""
    _check_sign(f, nonnegative)
    return _norm_cells(f, spec, region)[0]


def normalized_norm(f: GridFunction, spec: MixedNormSpec, region: Cylinder, *,
                    nonnegative: bool = False) -> float:
    """``mixed_norm(f) / mixed_norm(1)`` over the same cells."""
    _check_sign(f, nonnegative)
    val, (nt, nc) = _norm_cells(f, spec, region)
    dV = float(np.prod(f.dx))
    dt = region.rho ** 2 if f.static else f.dt
    one = (1.0 if spec.q == INF else (nt * dt) ** (1 / spec.q)) * \
          (1.0 if spec.p == INF else (nc * dV) ** (1 / spec.p))
    return val / one


# ---------------------------------------------------------------------------
# all anchors at one radius

def _ball_kernel(dx, rho):
    half = [int(math.floor(rho / h - 1e-12)) for h in dx]
    axes = [np.arange(-k, k + 1) * h for k, h in zip(half, dx)]
    grids = np.meshgrid(*axes, indexing="ij")
    r2 = sum(g * g for g in grids)
    return r2 < rho * rho, half


def _window(a, m, q, axis=0):
    # mean of a^q (or max) over windows of m consecutive cells along axis, valid part
    n = a.shape[axis]
    if m > n:
        return None
    if q == INF:
        return np.lib.stride_tricks.sliding_window_view(a, m, axis=axis).max(axis=-1)
    c = np.cumsum(a ** q, axis=axis)
    c = np.concatenate([np.zeros_like(np.take(c, [0], axis=axis)), c], axis=axis)
    s = np.take(c, np.arange(m, n + 1), axis=axis) - np.take(c, np.arange(0, n - m + 1), axis=axis)
    return np.maximum(s, 0.0) / m


def _ball_mean(a, kernel, p):
    # mean of a^p (or max) over the ball kernel around every cell, valid part
    if any(a.shape[i + 1] < kernel.shape[i] for i in range(kernel.ndim)):
        return None
    if p == INF:
        fp = kernel[None]
        out = ndimage.maximum_filter(a, footprint=fp, mode="constant", cval=0.0)
        sl = (slice(None),) + tuple(slice(k // 2, a.shape[i + 1] - k // 2)
                                    for i, k in enumerate(kernel.shape))
        return out[sl]
    k = kernel.astype(float)[None]
    s = fftconvolve(a ** p, k, mode="valid", axes=tuple(range(1, a.ndim)))
    return np.maximum(s, 0.0) / kernel.sum()


def normalized_all(f: GridFunction, spec: MixedNormSpec, rho: float):
    """Normalized norm of every cylinder of radius ``rho`` anchored at a cell.

    Anchors are cell centres in space and cell lower edges in time, limited to
    cylinders that fit in the grid.  Returns ``(values, t_index0, x_index0)``
    where ``values[i, j...]`` belongs to the anchor at time cell
    ``t_index0 + i`` and spatial cell ``x_index0 + j``; ``None`` if no
    cylinder fits.
    """
    a = np.abs(f.values)
    kernel, half = _ball_kernel(f.dx, rho)
    if f.static:
        m = 1
    else:
        m = int(round(rho * rho / f.dt))
        if m < 1:
            return None
    q, p = spec.q, spec.p
    if spec.resolved == "time_outer":
        s = _ball_mean(a, kernel, p)
        if s is None:
            return None
        s = s if p == INF else s ** (1 / p)
        w = _window(s, m, q)
        if w is None:
            return None
        vals = w if q == INF else w ** (1 / q)
    else:
        w = _window(a, m, q)
        if w is None:
            return None
        w = w if q == INF else w ** (1 / q)
        s = _ball_mean(w, kernel, p)
        if s is None:
            return None
        vals = s if p == INF else s ** (1 / p)
    return vals, 0, np.array(half)


# ---------------------------------------------------------------------------
# Morrey norm

@dataclass(frozen=True)
class SearchPolicy:
    """Declared cylinder family for Morrey suprema.

    Radii ``rho_max 2^-j`` for ``j = 0..levels`` (radii spanning fewer than
    ``min_cells`` cells are skipped); every cell-anchored cylinder that fits
    the grid; then, if ``refine``, the ``3^(d+1)`` half-cell anchor offsets
    around the running argmax and a golden-section pass over the radius.
    """

    levels: int = 8
    min_cells: float = 3.0
    refine: bool = True

    def to_dict(self):
        return dataclasses.asdict(self)


@dataclass
class NormReport:
    value: float
    argmax: Cylinder | None
    spec: MixedNormSpec
    grid_fingerprint: str
    ladder: list = field(default_factory=list)  # (rho, best weighted value)

    def to_dict(self) -> dict:
        return {"value": self.value,
                "argmax_cylinder": None if self.argmax is None else self.argmax.to_dict(),
                "spec": self.spec.to_dict(), "grid_fingerprint": self.grid_fingerprint,
                "ladder": [list(r) for r in self.ladder]}


def _anchor(f: GridFunction, idx_t, idx_x) -> tuple[float, tuple]:
    t = f.t_lo if f.static else f.t_lo + idx_t * f.dt
    x = tuple(float(f.x_centers(i)[j]) for i, j in enumerate(idx_x))
    return t, x


def _safe_norm(f, spec, cyl):
    try:
        return normalized_norm(f, spec, cyl)
    except NormError:
        return -INF


def morrey_norm(f: GridFunction, spec: MixedNormSpec,
                search: SearchPolicy = SearchPolicy()) -> NormReport:
    """Sup of ``rho^beta`` times the normalized norm over the search family."""
    best, arg = -INF, None
    ladder = []
    cell = float(np.min(f.dx))
    radii = [spec.rho_max * 2.0 ** -j for j in range(search.levels + 1)]
    if spec.rho_max == INF:
        raise NormError("rho_max = inf needs an explicit finite cap for a grid search")
    for rho in radii:
        if rho < search.min_cells * cell:
            continue
        out = normalized_all(f, spec, rho)
        if out is None:
            continue
        vals, _, half = out
        flat = int(np.argmax(vals))
        pos = np.unravel_index(flat, vals.shape)
        v = float(vals[pos]) * rho ** spec.beta
        ladder.append((rho, v))
        if v > best:
            best = v
            t, x = _anchor(f, pos[0], np.array(pos[1:]) + half)
            arg = Cylinder(t, x, rho)
    if arg is None:
        raise NormError("empty search family: no cylinder of the ladder fits the grid")
    if search.refine:
        best, arg = _refine(f, spec, best, arg, radii)
    return NormReport(best, arg, spec, f.fingerprint(), ladder)


def _refine(f, spec, best, arg, radii):
    d = f.d
    offs = np.array(np.meshgrid(*([[-0.5, 0.0, 0.5]] * (d + 1)), indexing="ij")).reshape(d + 1, -1).T
    for o in offs:
        t = arg.t + (0.0 if f.static else o[0] * f.dt)
        x = tuple(np.asarray(arg.x) + o[1:] * f.dx)
        c = Cylinder(t, x, arg.rho)
        v = _safe_norm(f, spec, c) * c.rho ** spec.beta
        if v > best:
            best, arg = v, c
    lo = max(arg.rho / 2, min(radii))
    hi = min(arg.rho * 2, spec.rho_max)
    if hi > lo:
        def neg(lr):
            return -_safe_norm(f, spec, Cylinder(arg.t, arg.x, math.exp(lr))) * math.exp(lr) ** spec.beta
        res = optimize.minimize_scalar(neg, bounds=(math.log(lo), math.log(hi)), method="bounded",
                                       options={"xatol": 1e-3, "maxiter": 40})
        if -res.fun > best:
            best, arg = float(-res.fun), Cylinder(arg.t, arg.x, math.exp(res.x))
    return best, arg


# ---------------------------------------------------------------------------
# admissibility constant of a drift

@dataclass(frozen=True)
class HatBConfig:
    """Sampling used by :func:`hat_b`, in units of the level radius ``r``.

    At level ``r`` the drift is sampled on ``[t_c, t_c + window_t r^2) x
    (x_c + [-window_x r, window_x r]^d)`` with ``cells_t`` time cells and
    ``cells_x`` cells per spatial axis, for each focus point ``(t_c, x_c)``.
    """

    cells_t: int = 16
    cells_x: int = 32
    window_t: float = 2.0
    window_x: float = 2.0
    levels: int = 8
    focus: tuple = ((0.0, None),)


def _level_grid(b: VectorField, r: float, focus, cfg: HatBConfig) -> GridFunction:
    t_c, x_c = focus
    x_c = np.zeros(b.dim) if x_c is None else np.asarray(x_c, float)
    lo = tuple(x_c - cfg.window_x * r)
    hi = tuple(x_c + cfg.window_x * r)
    return GridFunction.from_field(b, t_range=(t_c, t_c + cfg.window_t * r * r), x_lo=lo, x_hi=hi,
                                   n_t=cfg.cells_t, n_x=cfg.cells_x)


def hat_b(b: VectorField, spec: MixedNormSpec, rho_b: float,
          cfg: HatBConfig = HatBConfig()) -> NormReport:
    """``sup_{r <= rho_b} r`` times the normalized norm of ``|b|``.

    Level ``j`` uses radius ``r = rho_b 2^-j`` on a grid whose extent and
    resolution scale with ``r`` (see :class:`HatBConfig`), so that
    ``hat_b(parabolic_dilate(b, c), rho) == hat_b(b, c rho)`` holds exactly
    up to round-off.
    """
    best, arg, ladder = -INF, None, []
    for j in range(cfg.levels + 1):
        r = rho_b * 2.0 ** -j
        for focus in cfg.focus:
            g = _level_grid(b, r, focus, cfg)
            out = normalized_all(g, spec.replace(beta=1.0), r)
            if out is None:
                continue
            vals, _, half = out
            pos = np.unravel_index(int(np.argmax(vals)), vals.shape)
            v = r * float(vals[pos])
            ladder.append((r, v))
            if v > best:
                best = v
                t, x = _anchor(g, pos[0], np.array(pos[1:]) + half)
                arg = Cylinder(t, x, r)
    if arg is None:
        raise NormError("hat_b search family is empty")
    return NormReport(best, arg, spec.replace(beta=1.0, rho_max=rho_b),
                      digest({"field": b.to_dict(), "cfg": dataclasses.asdict(cfg)}), ladder)


def level_profile(report: NormReport) -> tuple[np.ndarray, np.ndarray]:
    """Best weighted value per ladder radius (max over foci), ordered by radius."""
    acc: dict = {}
    for r, v in report.ladder:
        acc[r] = max(acc.get(r, -INF), v)
    rs = np.array(sorted(acc))
    return rs, np.array([acc[r] for r in rs])


# ---------------------------------------------------------------------------
# maximal function

def maximal_function(f: GridFunction, beta: float = 0.0, levels: int | None = None) -> GridFunction:
    """Dyadic parabolic maximal function.

    At level ``l`` the grid is partitioned into boxes of ``2^l`` cells per
    spatial axis and ``4^l`` time cells (one for static grids); each cell
    takes the largest over levels of ``side^beta`` times its box average.
    Boxes cut by the grid edge average over the cells they contain.
    """
    if np.any(f.values < 0):
        raise NormError("maximal function needs a nonnegative input")
    v = f.values
    n_x = min(v.shape[1:])
    top = int(math.floor(math.log2(n_x))) if levels is None else levels
    out = v.copy()
    side0 = float(np.min(f.dx))
    for lev in range(1, top + 1):
        sx = 2 ** lev
        st = 1 if f.static else min(4 ** lev, v.shape[0])
        sizes = (st,) + (sx,) * f.d
        avg = _block_average(v, sizes)
        out = np.maximum(out, avg * (side0 * sx) ** beta)
    if beta:
        out = np.maximum(out, v * side0 ** beta)
    return f.with_values(out)


def _block_average(v, sizes):
    pads = [(0, (-n) % s) for n, s in zip(v.shape, sizes)]
    vp = np.pad(v, pads, constant_values=0.0)
    cnt = np.pad(np.ones_like(v), pads, constant_values=0.0)
    shape = []
    for n, s in zip(vp.shape, sizes):
        shape += [n // s, s]
    ax = tuple(range(1, 2 * v.ndim, 2))
    sums = vp.reshape(shape).sum(axis=ax)
    cnts = cnt.reshape(shape).sum(axis=ax)
    avg = sums / cnts
    for i, s in enumerate(sizes):
        avg = np.repeat(avg, s, axis=i)
    return avg[tuple(slice(0, n) for n in v.shape)]


# ---------------------------------------------------------------------------
# heat potentials

def _lag_weights(a, lam, s0, s1):
    # int_{s0}^{s1} s^(a-1) exp(-lam s) ds for arrays lam >= 0
    out = np.empty_like(lam)
    small = lam * s1 < 1e-10
    out[small] = (s1 ** a - s0 ** a) / a
    lg = lam[~small]
    g = special.gamma(a)
    out[~small] = g * (special.gammainc(a, lg * s1) - special.gammainc(a, lg * s0)) / lg ** a
    return out


def heat_potential(f: GridFunction, alpha: float, k: float) -> GridFunction:
    """``P_{alpha,k} f(t, x)`` at cell centres.

    With ``p(s, r) = s^-((d+2-alpha)/2) exp(-r^2/(k s))`` the space integral is
    a Gaussian convolution, applied exactly in Fourier space on a zero-padded
    grid; the time integral is exact for ``f`` piecewise constant in time::

        P f(t_i) = (pi k)^(d/2) sum_m int_{S_m} s^(alpha/2-1) G_{ks/2} * f_{i+m} ds

    where ``S_0 = [0, dt/2)`` and ``S_m = [(m-1/2) dt, (m+1/2) dt)``.

    ``f`` is treated as zero outside the grid.
    """
    if not alpha > 0:
        raise NormError("alpha must be positive")
    if not k > 0:
        raise NormError("k must be positive")
    if f.static:
        raise NormError("heat potential needs a time-dependent, compactly supported input")
    v = f.values
    n_t = v.shape[0]
    d = f.d
    spatial = v.shape[1:]
    padded = tuple(2 * n for n in spatial)
    fh = np.fft.rfftn(v, s=padded, axes=tuple(range(1, d + 1)))
    freqs = [2 * np.pi * np.fft.fftfreq(n, h) for n, h in zip(padded[:-1], f.dx[:-1])]
    freqs.append(2 * np.pi * np.fft.rfftfreq(padded[-1], f.dx[-1]))
    kk = np.meshgrid(*freqs, indexing="ij")
    lam = k * sum(g * g for g in kk) / 4.0
    a = alpha / 2.0
    dt = f.dt
    out = np.zeros_like(fh)
    for m in range(n_t):
        w = _lag_weights(a, lam, max(m - 0.5, 0.0) * dt, (m + 0.5) * dt)
        out[: n_t - m] += w[None] * fh[m:]
    res = np.fft.irfftn(out, s=padded, axes=tuple(range(1, d + 1)))
    res = res[(slice(None),) + tuple(slice(0, n) for n in spatial)]
    return f.with_values((math.pi * k) ** (d / 2) * res)


def heat_potential_composition_constant(alpha: float, beta: float, k: float, d: int) -> float:
    """Closed-form ``c`` with ``P_{alpha,k} P_{beta,k} = c P_{alpha+beta,k}``."""
    a, b = alpha / 2, beta / 2
    return (math.pi * k) ** (d / 2) * special.beta(a, b)
