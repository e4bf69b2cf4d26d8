"""Wiener-chaos terms for constant-diffusion, zero-drift generators.

With ``T_{t,s} f = f * N(0, a (s - t))`` and
``Q^k_{t,s} f = sigma^{ik} D_i T_{t,s} f``, the chaos term of order ``m`` is::

    S_m = sum_{k_1..k_m} int_{t0 > t_1 > ... > t_m > 0}
              [T_{0,t_m} Q^{k_m}_{t_m,t_{m-1}} ... Q^{k_1}_{t_1,t0} f (x0)]^2 dt

and ``V = T_{0,t0} f^2 (x0) - (T_{0,t0} f (x0))^2`` is the variance of
``f(x0 + w_{t0})``.  ``V - sum_{j<=m} S_j`` is the chaos remainder; it
vanishes for all large ``m`` exactly when ``f(x_{t0})`` is measurable with
respect to the driving noise.

Everything runs on one square grid centred at ``x0`` so that evaluation at
``x0`` is a grid node: ``T`` is a separable convolution with a sampled,
normalized Gaussian kernel (``f`` extended by zero), ``D_i`` a centred
difference.  The simplex integral uses collapsed coordinates
``t_j = t_{j-1} u_j`` with Gauss-Legendre nodes in ``v`` and
``u = 1 - (1 - v)^2``, which concentrates nodes where consecutive times
coincide.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import ndimage

from .fields import MatrixField, ScalarField, eval_scalar, eval_sigma, nonzero_columns, singular_mask
from .reports import dumps, write_curve


class ChaosError(ValueError):
    pass


@dataclass(frozen=True)
class ChaosGrid:
    """``n`` nodes per axis, spacing ``2 half_width / n``, node ``n // 2`` at ``center``."""

    center: tuple
    half_width: float
    n: int = 128

    @property
    def d(self) -> int:
        return len(self.center)

    @property
    def dx(self) -> float:
        return 2.0 * self.half_width / self.n

    def axis(self, i: int) -> np.ndarray:
        return self.center[i] + (np.arange(self.n) - self.n // 2) * self.dx

    def points(self) -> np.ndarray:
        mesh = np.meshgrid(*[self.axis(i) for i in range(self.d)], indexing="ij")
        return np.stack(mesh, -1)

    @property
    def origin_index(self) -> tuple:
        return (self.n // 2,) * self.d

    @classmethod
    def default(cls, x0, t0: float, n: int = 128, pad: float = 6.0) -> "ChaosGrid":
        x0 = tuple(map(float, x0))
        return cls(x0, pad * math.sqrt(t0) + float(np.linalg.norm(x0)), n)


class SemigroupEngine:
    """Heat semigroup of a constant diffusion matrix ``a`` on a :class:`ChaosGrid`."""

    def __init__(self, grid: ChaosGrid, a=None):
        self.grid = grid
        d = grid.d
        self.a = np.eye(d) if a is None else np.asarray(a, float)
        if self.a.shape != (d, d) or not np.allclose(self.a, self.a.T):
            raise ChaosError("a must be a symmetric d x d matrix")
        if np.min(np.linalg.eigvalsh(self.a)) <= 0:
            raise ChaosError("a must be positive definite")
        self.diagonal = np.allclose(self.a, np.diag(np.diag(self.a)))
        self._cache: dict = {}

    def _kernel_1d(self, var: float) -> np.ndarray:
        key = ("1d", round(var, 15))
        k = self._cache.get(key)
        if k is None:
            dx = self.grid.dx
            half = max(1, int(math.ceil(8 * math.sqrt(var) / dx)))
            half = min(half, self.grid.n)
            z = np.arange(-half, half + 1) * dx
            k = np.exp(-z * z / (2 * var)) if var > 0 else (z == 0).astype(float)
            k /= k.sum()
            self._cache[key] = k
        return k

    def apply(self, values: np.ndarray, tau: float) -> np.ndarray:
        """``T`` over a time gap ``tau >= 0``."""
        if tau < 0:
            raise ChaosError("T_{t,s} needs s >= t")
        if tau == 0:
            return values.copy()
        if self.diagonal:
            out = values
            for i in range(self.grid.d):
                out = ndimage.convolve1d(out, self._kernel_1d(self.a[i, i] * tau), axis=i,
                                         mode="constant", cval=0.0)
            return out
        return ndimage.convolve(values, self._kernel_nd(tau), mode="constant", cval=0.0)

    def _kernel_nd(self, tau):
        dx = self.grid.dx
        cov = self.a * tau
        half = max(1, int(math.ceil(8 * math.sqrt(np.max(np.diag(cov))) / dx)))
        z = np.arange(-half, half + 1) * dx
        mesh = np.stack(np.meshgrid(*([z] * self.grid.d), indexing="ij"), -1)
        inv = np.linalg.inv(cov)
        k = np.exp(-0.5 * np.einsum("...i,ij,...j->...", mesh, inv, mesh))
        return k / k.sum()

    def at_center(self, values: np.ndarray, tau: float) -> float:
        """``T`` over ``tau`` evaluated at the grid centre only."""
        if tau == 0:
            return float(values[self.grid.origin_index])
        c = self.grid.n // 2
        if self.diagonal:
            out = values
            for i in range(self.grid.d):
                k = self._kernel_1d(self.a[i, i] * tau)
                h = k.size // 2
                lo, hi = c - h, c + h + 1
                kk = k[max(0, -lo): k.size - max(0, hi - self.grid.n)]
                sl = np.take(out, np.arange(max(lo, 0), min(hi, self.grid.n)), axis=0)
                out = np.tensordot(kk, sl, axes=(0, 0))
            return float(out)
        return float(self.apply(values, tau)[self.grid.origin_index])

    def gradient(self, values: np.ndarray) -> np.ndarray:
        """Centred differences, one-sided at the edges; shape ``(d,) + grid``."""
        return np.stack(np.gradient(values, self.grid.dx), 0) if self.grid.d > 1 else \
            np.gradient(values, self.grid.dx)[None]


def _grid_values(f, grid: ChaosGrid, t: float = 0.0) -> np.ndarray:
    if isinstance(f, np.ndarray):
        if f.shape != (grid.n,) * grid.d:
            raise ChaosError("array does not match the chaos grid")
        return np.asarray(f, float)
    pts = grid.points()
    sing = singular_mask(f, t, pts)
    v = eval_scalar(f, t, pts, check=False)
    return np.where(sing, 0.0, v)


def apply_T(engine: SemigroupEngine, f, t: float, s: float) -> np.ndarray:
    """``T_{t,s} f`` on the engine grid."""
    if s < t:
        raise ChaosError("T_{t,s} needs s >= t")
    return engine.apply(_grid_values(f, engine.grid), s - t)


class _SigmaCache:
    def __init__(self, sigma: MatrixField, grid: ChaosGrid):
        self.values = eval_sigma(sigma, 0.0, grid.points())  # (..., d, d1)
        self.columns = nonzero_columns(sigma)


def apply_Q(engine: SemigroupEngine, k: int, f, t: float, s: float, sigma: MatrixField,
            _sig: _SigmaCache | None = None) -> np.ndarray:
    """``Q^k_{t,s} f = sigma^{ik} D_i T_{t,s} f`` for ``s > t``."""
    if not s > t:
        raise ChaosError("Q_{t,s} needs s > t")
    sig = _sig or _SigmaCache(sigma, engine.grid)
    grad = engine.gradient(apply_T(engine, f, t, s))
    return np.einsum("i...,...i->...", grad, sig.values[..., :, k])


def variance_oracle(engine: SemigroupEngine, f, t0: float) -> float:
    """``T_{0,t0}(f^2)(x0) - (T_{0,t0} f (x0))^2`` at the grid centre."""
    v = _grid_values(f, engine.grid)
    m1 = engine.at_center(v, t0)
    m2 = engine.at_center(v * v, t0)
    return m2 - m1 * m1


@dataclass(frozen=True)
class SimplexRule:
    """Tensor Gauss-Legendre rule on the time simplex in collapsed coordinates."""

    nodes: int = 8
    gap_floor: float = 1e-3  # relative to t0
    max_chains: int = 200_000

    def level(self):
        v, w = np.polynomial.legendre.leggauss(self.nodes)
        v = 0.5 * (v + 1)
        w = 0.5 * w
        u = 1 - (1 - v) ** 2
        return u, w * 2 * (1 - v)


@dataclass
class ChaosTermTable:
    t0: float
    x0: tuple
    V: float
    S: list
    remainder: list
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"t0": self.t0, "x0": list(self.x0), "V": self.V, "S": list(self.S),
                "remainder": list(self.remainder), "config": self.config}

    def write_json(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(dumps(self.to_dict()))

    def write_csv(self, path) -> None:
        rows = [(m + 1, s, r, r / self.V if self.V else float("nan"))
                for m, (s, r) in enumerate(zip(self.S, self.remainder))]
        write_curve(path, ["m", "S", "remainder", "relative_remainder"], rows)


def chaos_terms(f, x0, t0: float, m_max: int = 3, sigma: MatrixField | None = None, *,
                a=None, rule: SimplexRule = SimplexRule(), grid: ChaosGrid | None = None) -> ChaosTermTable:
    """Chaos terms ``S_1..S_{m_max}``, the variance and remainders at ``(t0, x0)``.

    ``sigma`` defaults to the identity; ``a`` (default ``sigma sigma^T`` at the
    grid centre, which must be constant) drives the semigroup.
    """
    x0 = tuple(map(float, x0))
    d = len(x0)
    if not t0 > 0:
        raise ChaosError("t0 must be positive")
    if m_max < 1:
        raise ChaosError("m_max must be >= 1")
    sigma = MatrixField("identity", d) if sigma is None else sigma
    grid = ChaosGrid.default(x0, t0) if grid is None else grid
    if a is None:
        s0 = eval_sigma(sigma, 0.0, np.asarray(x0)[None])[0]
        a = s0 @ s0.T
    eng = SemigroupEngine(grid, a)
    sig = _SigmaCache(sigma, grid)
    cols = sig.columns
    u, w = rule.level()
    n_chains = sum((len(cols) * rule.nodes) ** m for m in range(1, m_max + 1))
    if n_chains > rule.max_chains:
        raise ChaosError(f"simplex budget exceeded: {n_chains} operator chains "
                         f"(max {rule.max_chains}); lower nodes or m_max")
    fv = _grid_values(f, grid)
    V = variance_oracle(eng, fv, t0)
    floor = rule.gap_floor * t0
    S = [0.0] * m_max

    # depth-first over levels: (current function, current time, accumulated weight)
    def descend(g, t_prev, weight, level):
        for ui, wi in zip(u, w):
            t_new = t_prev * ui
            gap = max(t_prev - t_new, floor)
            wt = weight * wi * t_prev
            smooth = eng.gradient(eng.apply(g, gap))
            for k in cols:
                h = np.einsum("i...,...i->...", smooth, sig.values[..., :, k])
                val = eng.at_center(h, t_new)
                S[level] += wt * val * val
                if level + 1 < m_max:
                    descend(h, t_new, wt, level + 1)

    descend(fv, t0, 1.0, 0)
    rem, acc = [], 0.0
    for s in S:
        acc += s
        rem.append(V - acc)
    cfg = {"sigma": sigma.to_dict(), "a": np.asarray(a).tolist(), "grid_n": grid.n,
           "half_width": grid.half_width, "nodes": rule.nodes, "gap_floor": rule.gap_floor,
           "m_max": m_max}
    return ChaosTermTable(t0, x0, V, S, rem, cfg)


def default_bump(d: int = 2) -> ScalarField:
    """Fixed non-radial test function: a Gaussian bump off the origin."""
    return ScalarField("gaussian_bump", d, {"center": [1.0] + [0.0] * (d - 1), "width": 1.0})


@dataclass
class RotationReport:
    t0: float
    m_max: int
    rows: list  # one dict per (sigma, x0)

    def ratio(self, sigma: str, x0) -> list:
        for r in self.rows:
            if r["sigma"] == sigma and tuple(r["x0"]) == tuple(map(float, x0)):
                return r["relative_remainder"]
        raise KeyError((sigma, x0))

    def to_dict(self):
        return dataclasses.asdict(self)


def rotation_experiment(x0_list: Sequence, t0: float = 1.0, m_max: int = 3, f=None, *,
                        rule: SimplexRule = SimplexRule(), n: int = 128) -> RotationReport:
    """Relative remainders ``remainder_m / V`` for the rotation pair and the identity control."""
    f = default_bump(2) if f is None else f
    rows = []
    for name, sigma in (("rotation_sigma", MatrixField("rotation_sigma", 2)),
                        ("identity", MatrixField("identity", 2))):
        for x0 in x0_list:
            x0 = tuple(map(float, x0))
            tab = chaos_terms(f, x0, t0, m_max, sigma, a=np.eye(2), rule=rule,
                              grid=ChaosGrid.default(x0, t0, n))
            rel = [r / tab.V for r in tab.remainder]
            rows.append({"sigma": name, "x0": list(x0), "V": tab.V, "S": tab.S,
                         "remainder": tab.remainder, "relative_remainder": rel})
    return RotationReport(t0, m_max, rows)
