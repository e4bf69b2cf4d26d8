"""Green's function densities and their integrability/doubling properties.

:func:`green_histogram` estimates the density of the Green measure
``G(Gamma) = E int_0^inf e^{-lam t} 1_Gamma(t, x_t) dt`` on a space-time grid
by histogramming Euler-Maruyama states.  Each step at grid time ``t_k``
deposits ``h e^{-lam t_k}`` in the cell containing ``(t_k, x_k)``, and the
per-cell standard error is exact (per-path sums are formed before squaring).

:func:`analytic_green_bm` is the Brownian oracle.  With ``h=None`` it returns
cell averages of ``e^{-lam t} (2 pi s^2 t)^{-d/2} exp(-|x|^2 / (2 s^2 t))``;
with the step ``h`` of a Monte Carlo run it reproduces the left-endpoint time
layout of :func:`green_histogram` exactly, so the two agree in expectation.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import special

from . import sde
from .morrey import Cylinder, GridFunction, MixedNormSpec, normalized_norm
from .reports import digest, dumps, write_curve


class GreenError(ValueError):
    pass


@dataclass(frozen=True)
class GreenGridSpec:
    """Cells of ``[0, t_max) x prod [x_lo, x_hi)`` relative to the start ``(t0, x0)``."""

    t_max: float = 1.0
    n_t: int = 8
    x_lo: tuple = (-2.0, -2.0)
    x_hi: tuple = (2.0, 2.0)
    n_x: int = 16

    def __post_init__(self):
        object.__setattr__(self, "x_lo", tuple(map(float, self.x_lo)))
        object.__setattr__(self, "x_hi", tuple(map(float, self.x_hi)))
        if self.n_t < 1 or self.n_x < 1 or not self.t_max > 0:
            raise GreenError("empty grid")

    @property
    def d(self) -> int:
        return len(self.x_lo)

    @property
    def dt(self) -> float:
        return self.t_max / self.n_t

    @property
    def dx(self) -> np.ndarray:
        return (np.array(self.x_hi) - np.array(self.x_lo)) / self.n_x

    @property
    def shape(self) -> tuple:
        return (self.n_t,) + (self.n_x,) * self.d

    def refined(self) -> "GreenGridSpec":
        return dataclasses.replace(self, n_t=2 * self.n_t, n_x=2 * self.n_x)


@dataclass
class GreenGrid:
    lam: float
    grid: GreenGridSpec
    density: np.ndarray  # shape (n_t, n_x, ..., n_x)
    std_error: np.ndarray | None = None
    n_paths: int = 0
    fingerprint: dict = field(default_factory=dict)

    @property
    def cell_volume(self) -> float:
        return self.grid.dt * float(np.prod(self.grid.dx))

    @property
    def mass(self) -> float:
        return float(self.density.sum() * self.cell_volume)

    def marginal(self) -> np.ndarray:
        """Spatial marginal ``g(x) = sum_t G(t, x) dt``."""
        return self.density.sum(axis=0) * self.grid.dt

    def as_grid_function(self) -> GridFunction:
        g = self.grid
        return GridFunction(self.density, 0.0, g.t_max, g.x_lo, g.x_hi, provenance="green")

    def marginal_grid(self) -> GridFunction:
        g = self.grid
        return GridFunction(self.marginal()[None], 0.0, 1.0, g.x_lo, g.x_hi, static=True,
                            provenance="green-marginal")

    def summary(self) -> dict:
        g = self.grid
        return {"lam": self.lam, "mass": self.mass, "n_paths": self.n_paths,
                "grid": dataclasses.asdict(g), "fingerprint": self.fingerprint}

    def write_csv(self, path) -> None:
        g = self.grid
        tc = (np.arange(g.n_t) + 0.5) * g.dt
        axes = [g.x_lo[i] + (np.arange(g.n_x) + 0.5) * g.dx[i] for i in range(g.d)]
        mesh = np.meshgrid(tc, *axes, indexing="ij")
        cols = [m.ravel() for m in mesh] + [self.density.ravel()]
        header = ["t"] + [f"x{i}" for i in range(g.d)] + ["G"]
        if self.std_error is not None:
            cols.append(self.std_error.ravel())
            header.append("std_error")
        write_curve(path, header, zip(*cols))

    def write_json(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(dumps(self.summary()))


class _Histogram:
    def __init__(self, spec: sde.SimSpec, grid: GreenGridSpec, lam: float):
        self.spec, self.grid, self.lam = spec, grid, lam
        self.n_space = grid.n_x ** grid.d
        self.partial: dict = {}  # chunk -> (sum, sum of squares); reduced in chunk order
        self.buf: dict = {}
        self.cur: dict = {}

    def _flush(self, chunk):
        parts = self.buf.pop(chunk, None)
        if not parts:
            return
        keys = np.concatenate([p[0] for p in parts])
        w = np.concatenate([p[1] for p in parts])
        uniq, inv = np.unique(keys, return_inverse=True)
        sums = np.bincount(inv, weights=w)
        size = self.grid.n_t * self.n_space
        cell = uniq % size
        if chunk not in self.partial:
            self.partial[chunk] = (np.zeros(size), np.zeros(size))
        s1, s2 = self.partial[chunk]
        np.add.at(s1, cell, sums)
        np.add.at(s2, cell, sums * sums)

    def totals(self):
        size = self.grid.n_t * self.n_space
        s1, s2 = np.zeros(size), np.zeros(size)
        for c in sorted(self.partial):
            s1 += self.partial[c][0]
            s2 += self.partial[c][1]
        return s1, s2

    def observe(self, k, t, x, idx, chunk):
        g, spec = self.grid, self.spec
        rel = t - spec.t0
        it = int(math.floor(rel / g.dt + 1e-9))
        if self.cur.get(chunk) != it:
            self._flush(chunk)
            self.cur[chunk] = it
        if k == spec.n_steps or it >= g.n_t:
            self._flush(chunk)
            return None
        cx = np.floor((x - np.asarray(g.x_lo)) / g.dx).astype(np.int64)
        ok = np.all((cx >= 0) & (cx < g.n_x), axis=1)
        if np.any(ok):
            flat = np.ravel_multi_index(tuple(cx[ok].T), (g.n_x,) * g.d)
            total = g.n_t * self.n_space
            keys = idx[ok].astype(np.int64) * total + it * self.n_space + flat
            w = np.full(keys.size, spec.h * math.exp(-self.lam * rel))
            self.buf.setdefault(chunk, []).append((keys, w))
        return None


def green_histogram(spec: sde.SimSpec, lam: float, grid: GreenGridSpec, *,
                    threads: int = 1) -> GreenGrid:
    """Histogram estimate of the Green density on ``grid`` (times relative to ``t0``)."""
    if not lam > 0:
        raise GreenError("lambda must be positive")
    if grid.d != spec.d:
        raise GreenError("grid dimension differs from the process dimension")
    s = spec.replace(horizon=grid.t_max)
    obs = _Histogram(s, grid, lam)
    stats = sde.run(s, obs, threads=threads)
    n = s.n_paths
    vol = grid.dt * float(np.prod(grid.dx))
    s1, s2 = obs.totals()
    mean = s1 / n
    var = np.maximum(s2 / n - mean * mean, 0.0) * n / max(n - 1, 1)
    se = np.sqrt(var / n) / vol
    return GreenGrid(lam, grid, (mean / vol).reshape(grid.shape), se.reshape(grid.shape), n,
                     s.fingerprint(lam=lam, diverged=int(np.count_nonzero(stats.diverged))))


def _space_prob(grid: GreenGridSpec, var: float, x0) -> np.ndarray:
    # P(x0 + sqrt(var) Z in cell) as a product over axes
    out = None
    for i in range(grid.d):
        edges = grid.x_lo[i] + np.arange(grid.n_x + 1) * grid.dx[i] - x0[i]
        if var > 0:
            c = 0.5 * special.erfc(-edges / math.sqrt(2 * var))
            p = np.diff(c)
        else:
            p = ((edges[:-1] <= 0) & (edges[1:] > 0)).astype(float)
        out = p if out is None else np.multiply.outer(out, p)
    return out


def analytic_green_bm(lam: float, grid: GreenGridSpec, *, h: float | None = None,
                      scale: float = 1.0, x0=None, n_quad: int = 64) -> GreenGrid:
    """Brownian (``scale * w``) Green density on ``grid``.

    ``h=None``: cell averages of the continuous kernel, Gauss-Legendre in
    time (``n_quad`` nodes per cell, graded towards ``t = 0`` in the first
    cell) and exact error functions in space.  ``h`` given: the left-endpoint
    sum over grid times ``k h`` used by the Monte Carlo histogram.
    """
    if not lam > 0:
        raise GreenError("lambda must be positive")
    x0 = np.zeros(grid.d) if x0 is None else np.asarray(x0, float)
    vol = grid.dt * float(np.prod(grid.dx))
    dens = np.zeros(grid.shape)
    s2 = scale * scale
    if h is not None:
        n_steps = int(math.ceil(grid.t_max / h - 1e-9))
        for k in range(n_steps):
            t = k * h
            it = int(math.floor(t / grid.dt + 1e-9))
            if it >= grid.n_t:
                break
            dens[it] += h * math.exp(-lam * t) * _space_prob(grid, s2 * t, x0)
        return GreenGrid(lam, grid, dens / vol, None, 0, {"oracle": "left-endpoint", "h": h})
    u, w = np.polynomial.legendre.leggauss(n_quad)
    for it in range(grid.n_t):
        a, b = it * grid.dt, (it + 1) * grid.dt
        if it == 0:
            # t = a + (b - a) v^2 clusters nodes near the singular start
            v = 0.5 * (u + 1)
            ts = a + (b - a) * v * v
            ws = 0.5 * w * (b - a) * 2 * v
        else:
            ts = 0.5 * (b - a) * u + 0.5 * (a + b)
            ws = 0.5 * (b - a) * w
        for t, wt in zip(ts, ws):
            dens[it] += wt * math.exp(-lam * t) * _space_prob(grid, s2 * t, x0)
    return GreenGrid(lam, grid, dens / vol, None, 0, {"oracle": "quadrature", "n_quad": n_quad})


# ---------------------------------------------------------------------------
# property scans

@dataclass
class ScanReport:
    value: float
    table: list
    argmax: dict | None
    excluded: int = 0

    def to_dict(self):
        return dataclasses.asdict(self)


def dyadic_cylinders(grid: GreenGridSpec, n: int = 100, t_min: float = 0.0,
                     radii: Sequence[float] | None = None) -> list[Cylinder]:
    """Deterministic cylinder family with ``C_{2r}`` inside the grid.

    Radii halve from a quarter of the smallest box half-width; anchors lie on
    a lattice of spacing ``r`` in space and ``r^2`` in time, scanned from
    coarse to fine until ``n`` cylinders are collected.
    """
    half = 0.5 * min(np.array(grid.x_hi) - np.array(grid.x_lo))
    radii = [half / 4 * 2.0 ** -j for j in range(6)] if radii is None else list(radii)
    out = []
    for r in radii:
        R = 2 * r
        axes = []
        for i in range(grid.d):
            lo, hi = grid.x_lo[i] + R, grid.x_hi[i] - R
            axes.append(np.arange(lo, hi + 1e-12, r) if hi >= lo else np.array([]))
        ts = np.arange(t_min, grid.t_max - R * R + 1e-12, r * r)
        if any(a.size == 0 for a in axes) or ts.size == 0:
            continue
        for t in ts:
            for x in np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, grid.d):
                out.append(Cylinder(float(t), tuple(x), r))
                if len(out) >= n:
                    return out
    return out


def reverse_holder_scan(G: GreenGrid, p: float, family: Sequence[Cylinder]) -> ScanReport:
    """``sup_C (avg_C G^{p'})^{1/p'} / avg_{2C} G`` with ``p' = p/(p-1)`` and ``2C = C_{2r}``."""
    if not p > 1:
        raise GreenError("p must exceed 1")
    pc = p / (p - 1)
    gf = G.as_grid_function()
    num_spec, den_spec = MixedNormSpec(pc, pc), MixedNormSpec(1.0, 1.0)
    table, best, arg, excl = [], -math.inf, None, 0
    for c in family:
        big = Cylinder(c.t, c.x, 2 * c.rho)
        try:
            num = normalized_norm(gf, num_spec, c)
            den = normalized_norm(gf, den_spec, big)
        except ValueError:
            excl += 1
            continue
        if den <= 0:
            excl += 1
            continue
        r = num / den
        table.append({"cylinder": c.to_dict(), "ratio": r})
        if r > best:
            best, arg = r, c.to_dict()
    if not table:
        raise GreenError("no admissible cylinder in the family")
    return ScanReport(best, table, arg, excl)


def ball_family(grid: GreenGridSpec, center=None, radii: Sequence[float] | None = None,
                offsets: int = 3) -> list[tuple]:
    """Balls ``(center, r)`` around ``center`` (default origin) with ``2B`` in the grid."""
    d = grid.d
    c0 = np.zeros(d) if center is None else np.asarray(center, float)
    half = 0.5 * min(np.array(grid.x_hi) - np.array(grid.x_lo))
    radii = [half / 4 * 2.0 ** -j for j in range(4)] if radii is None else radii
    out = []
    for r in radii:
        for o in np.linspace(-r, r, offsets):
            c = c0.copy()
            c[0] += o
            if np.all(c - 2 * r >= np.array(grid.x_lo)) and np.all(c + 2 * r <= np.array(grid.x_hi)):
                out.append((tuple(c), float(r)))
    return out


def doubling_scan(g: GridFunction, balls: Sequence[tuple]) -> ScanReport:
    """``sup_B g(2B) / g(B)`` with masses ``|B| avg_B g`` and exact ball volumes."""
    d = g.d
    spec = MixedNormSpec(1.0, 1.0)
    table, best, arg, excl = [], -math.inf, None, 0
    for c, r in balls:
        try:
            small = normalized_norm(g, spec, Cylinder(g.t_lo, c, r))
            big = normalized_norm(g, spec, Cylinder(g.t_lo, c, 2 * r))
        except ValueError:
            excl += 1
            continue
        if small <= 0:
            excl += 1
            continue
        ratio = 2.0 ** d * big / small
        table.append({"center": list(c), "r": r, "ratio": ratio})
        if ratio > best:
            best, arg = ratio, {"center": list(c), "r": r}
    if not table:
        raise GreenError("no admissible ball")
    return ScanReport(best, table, arg, excl)


@dataclass
class AInftyReport:
    mu_hat: float
    N_hat: float
    violations: int
    samples: list

    def to_dict(self):
        return dataclasses.asdict(self)


def random_subsets(g: GridFunction, center, r: float, n: int, seed: int,
                   kind: str = "cells") -> list[np.ndarray]:
    """Random masks of cells inside ``B_r(center)``: random unions of cells or sub-balls."""
    rng = np.random.default_rng(seed)
    axes = [g.x_centers(i) for i in range(g.d)]
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), -1)
    inside = np.sum((mesh - np.asarray(center)) ** 2, axis=-1) < r * r
    out = []
    for _ in range(n):
        if kind == "cells":
            frac = rng.uniform(0.05, 1.0)
            m = inside & (rng.uniform(size=inside.shape) < frac)
        else:
            c = np.asarray(center) + rng.uniform(-r / 2, r / 2, size=g.d)
            rr = rng.uniform(0.1, 0.5) * r
            m = inside & (np.sum((mesh - c) ** 2, axis=-1) < rr * rr)
        if not np.any(m):
            m = inside.copy()
        out.append(m)
    return out


def a_infty_check(g: GridFunction, center, r: float, subsets: Sequence[np.ndarray],
                  mu_grid: Sequence[float] = tuple(np.linspace(0.25, 8.0, 32))) -> AInftyReport:
    """Fit ``(mu, N)`` with ``N g(Gamma)/g(B) >= (|Gamma|/|B|)^mu`` on every sample.

    For each ``mu`` on the grid the smallest admissible ``N`` is the maximum
    over samples; ``mu_hat`` minimizes that ``N``.  Sets are unions of cells,
    so volume fractions are cell-count fractions.
    """
    axes = [g.x_centers(i) for i in range(g.d)]
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), -1)
    ball = np.sum((mesh - np.asarray(center)) ** 2, axis=-1) < r * r
    vals = g.values[0]
    gB = float(vals[ball].sum())
    nB = int(ball.sum())
    if gB <= 0:
        raise GreenError("zero mass on the reference ball")
    rows = []
    for m in subsets:
        m = m & ball
        rows.append((float(vals[m].sum()) / gB, m.sum() / nB))
    rg = np.array([a for a, _ in rows])
    rv = np.array([b for _, b in rows])
    pos = rg > 0
    best_mu, best_N = float("nan"), math.inf
    for mu in mu_grid:
        N = float(np.max(rv[pos] ** mu / rg[pos])) if np.any(pos) else math.inf
        if N < best_N - 1e-15:
            best_mu, best_N = float(mu), N
    viol = int(np.count_nonzero(best_N * rg * (1 + 1e-12) < rv ** best_mu))
    return AInftyReport(best_mu, best_N, viol, [{"g_ratio": float(a), "vol_ratio": float(b)}
                                                 for a, b in rows])


@dataclass
class NegativePowerReport:
    value: float
    zero_cells: int
    cells: int
    volume: float

    def to_dict(self):
        return dataclasses.asdict(self)


def negative_power_integral(G: GreenGrid, mu: float, region: Cylinder, eps: float) -> NegativePowerReport:
    """``int G^{-mu}`` over cells of ``region`` with time ``>= region.t + eps`` and ``G > 0``."""
    if mu < 0:
        raise GreenError("mu must be nonnegative")
    if not eps > 0:
        raise GreenError("eps must be positive")
    g = G.grid
    tc = (np.arange(g.n_t) + 0.5) * g.dt
    axes = [g.x_lo[i] + (np.arange(g.n_x) + 0.5) * g.dx[i] for i in range(g.d)]
    mesh = np.meshgrid(tc, *axes, indexing="ij")
    r2 = sum((mesh[i + 1] - region.x[i]) ** 2 for i in range(g.d))
    inside = (r2 < region.rho ** 2) & (mesh[0] >= region.t + eps) & (mesh[0] < region.t + region.rho ** 2)
    dens = G.density[inside]
    pos = dens > 0
    vol = G.cell_volume
    val = float(np.sum(dens[pos] ** (-mu)) * vol) if mu > 0 else float(inside.sum() * vol)
    return NegativePowerReport(val, int(np.count_nonzero(~pos)), int(inside.sum()),
                               float(inside.sum() * vol))
