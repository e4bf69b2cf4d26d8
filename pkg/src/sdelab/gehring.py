"""Dyadic parabolic boxes, stopping times and the reverse-Hoelder self-improvement.

Boxes of level ``n`` tile ``D0 = [0, 4) x [-1, 1)^d`` with time side
``4^-n`` and space side ``2^-n``.  A dilate ``mu D`` of
``D = [S, S + T) x Q`` keeps the lower base: ``[S, S + mu^2 T) x mu Q``.
Functions are stored as cell values at a fixed depth ``N`` and every
integral is an exact cell sum at that depth.

Two cell layouts are used:

* ``BoxFunction`` holds ``g`` on ``D0`` with all level averages, for the
  stopping-time and covering machinery.
* ``CellField`` holds ``f`` on ``2 D0 = [0, 16) x [-2, 2)^d`` for the
  reverse-Hoelder constant and the exponent search.  A static field has a
  single time slab and time averages are trivial.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .reports import dumps, write_curve


class GehringError(ValueError):
    pass


def nu(d: int) -> float:
    return 2.0 ** (-d - 2)


@dataclass(frozen=True, order=True)
class DyadicBox:
    """``[k0 4^-n, (k0+1) 4^-n) x prod [k_i 2^-n, (k_i+1) 2^-n)``."""

    n: int
    k: tuple

    def __post_init__(self):
        if self.n < 0:
            raise GehringError("level must be >= 0")
        if not 0 <= self.k[0] < 4 ** (self.n + 1):
            raise GehringError(f"time index {self.k[0]} outside D0 at level {self.n}")
        for ki in self.k[1:]:
            if not -(2 ** self.n) <= ki < 2 ** self.n:
                raise GehringError(f"space index {ki} outside D0 at level {self.n}")

    @property
    def d(self) -> int:
        return len(self.k) - 1

    @property
    def size(self) -> float:
        return 2.0 ** -self.n

    @property
    def volume(self) -> float:
        return self.size ** (self.d + 2)

    def extent(self, mu: float = 1.0, reflect: bool = False) -> tuple:
        """``(t_lo, t_hi, x_lo, x_hi)`` of ``mu D`` (with its reflection in the lower base)."""
        s = self.size
        T = s * s
        S = self.k[0] * T
        c = (np.asarray(self.k[1:], float) + 0.5) * s
        half = 0.5 * mu * s
        t_lo = S - mu * mu * T if reflect else S
        return t_lo, S + mu * mu * T, c - half, c + half

    def contains_point(self, t, x) -> bool:
        t_lo, t_hi, lo, hi = self.extent()
        return t_lo <= t < t_hi and bool(np.all((lo <= x) & (x < hi)))

    def fits_in_D0(self, mu: float) -> bool:
        t_lo, t_hi, lo, hi = self.extent(mu)
        return t_lo >= 0 and t_hi <= 4 and bool(np.all(lo >= -1)) and bool(np.all(hi <= 1))

    def cell_slices(self, depth: int, mu: float = 1.0, reflect: bool = False) -> tuple | None:
        """Index slices of the dilate on the depth-``depth`` grid of ``D0``, clipped; ``None`` if empty."""
        t_lo, t_hi, lo, hi = self.extent(mu, reflect)
        ct = 4.0 ** -depth
        cx = 2.0 ** -depth
        nt, nx = 4 * 4 ** depth, 2 * 2 ** depth
        out = [slice(max(0, int(math.floor(t_lo / ct + 1e-9))), min(nt, int(math.ceil(t_hi / ct - 1e-9))))]
        for a, b in zip(lo, hi):
            out.append(slice(max(0, int(math.floor((a + 1) / cx + 1e-9))),
                             min(nx, int(math.ceil((b + 1) / cx - 1e-9)))))
        if any(s.stop <= s.start for s in out):
            return None
        return tuple(out)

    def to_list(self) -> list:
        return [self.n, *map(int, self.k)]


def _intervals_overlap(a_lo, a_hi, b_lo, b_hi):
    return (a_lo < b_hi) & (b_lo < a_hi)


def phi_weight(t, x) -> np.ndarray:
    """``[(4 - t)^(1/2) ^ min_i (1 - |x^i|)]^(d + 2)`` on ``D0``, zero outside."""
    t = np.asarray(t, float)
    x = np.asarray(x, float)
    d = x.shape[-1]
    r = np.minimum(np.sqrt(np.clip(4 - t, 0, None)), np.min(1 - np.abs(x), axis=-1))
    return np.clip(r, 0, None) ** (d + 2)


def d0_cell_centers(d: int, depth: int):
    """Cell centres of the depth grid on ``D0``: ``(t (nt,), x (nx,))`` per axis."""
    ct, cx = 4.0 ** -depth, 2.0 ** -depth
    t = (np.arange(4 * 4 ** depth) + 0.5) * ct
    x = -1 + (np.arange(2 * 2 ** depth) + 0.5) * cx
    return t, x


def sample_d0(func: Callable, d: int, depth: int) -> np.ndarray:
    """``func(t, x)`` at the depth cell centres of ``D0``; shape ``(nt,) + (nx,) * d``."""
    t, x = d0_cell_centers(d, depth)
    mesh = np.meshgrid(t, *([x] * d), indexing="ij")
    return np.asarray(func(mesh[0], np.stack(mesh[1:], -1)), float)


class BoxFunction:
    """Cell values of ``g >= 0`` on ``D0`` at depth ``N`` with all level averages ``g_|n``."""

    def __init__(self, values, depth: int):
        values = np.asarray(values, float)
        d = values.ndim - 1
        if d < 1:
            raise GehringError("need at least one space dimension")
        want = (4 * 4 ** depth,) + (2 * 2 ** depth,) * d
        if values.shape != want:
            raise GehringError(f"cell array shape {values.shape} != {want} for depth {depth}")
        if not np.all(np.isfinite(values)) or np.any(values < 0):
            raise GehringError("cell values must be finite and nonnegative")
        self.d = d
        self.depth = depth
        self.levels = [None] * (depth + 1)
        self.levels[depth] = values
        for n in range(depth - 1, -1, -1):
            child = self.levels[n + 1]
            shape = [child.shape[0] // 4, 4]
            for s in child.shape[1:]:
                shape += [s // 2, 2]
            self.levels[n] = child.reshape(shape).mean(axis=tuple(range(1, 2 * (d + 1), 2)))
        bound = 2.0 ** (d + 2)
        for n in range(1, depth + 1):
            up = self.upsample(self.levels[n - 1], n)
            if np.any(self.levels[n] > bound * up * (1 + 1e-12) + 1e-300):
                raise GehringError(f"level {n} exceeds 2^(d+2) times level {n - 1}")

    @property
    def values(self) -> np.ndarray:
        return self.levels[self.depth]

    @property
    def cell_volume(self) -> float:
        return 2.0 ** (-self.depth * (self.d + 2))

    def upsample(self, arr, to_level: int) -> np.ndarray:
        """Broadcast a level array down to ``to_level`` resolution."""
        from_level = int(round(math.log(arr.shape[0] / 4, 4)))
        r = to_level - from_level
        out = np.repeat(arr, 4 ** r, axis=0)
        for i in range(1, self.d + 1):
            out = np.repeat(out, 2 ** r, axis=i)
        return out

    def at_cells(self, n: int) -> np.ndarray:
        return self.upsample(self.levels[n], self.depth)

    def integral(self, mask=None) -> float:
        v = self.values if mask is None else self.values * mask
        return float(v.sum() * self.cell_volume)


def build_box_function(values, depth: int) -> BoxFunction:
    return BoxFunction(values, depth)


def _box_fits(n: int, d: int, mu: float = 3.0) -> np.ndarray:
    """Boolean array over level-``n`` boxes: ``mu D`` inside ``D0``."""
    s = 2.0 ** -n
    k0 = np.arange(4 * 4 ** n)
    ki = np.arange(-(2 ** n), 2 ** n)
    ok_t = k0 * s * s + mu * mu * s * s <= 4 + 1e-12
    c = (ki + 0.5) * s
    ok_x = (c - 0.5 * mu * s >= -1 - 1e-12) & (c + 0.5 * mu * s <= 1 + 1e-12)
    out = ok_t
    for _ in range(d):
        out = np.multiply.outer(out, ok_x)
    return out


def gamma_stop(d: int, depth: int) -> np.ndarray:
    """Per-cell least ``n`` with ``3 Gamma_n`` inside ``D0``; ``depth + 1`` if unresolved."""
    shape = (4 * 4 ** depth,) + (2 * 2 ** depth,) * d
    gam = np.full(shape, depth + 1, dtype=np.int64)
    for n in range(depth, -1, -1):
        fits = _box_fits(n, d)
        r = depth - n
        up = np.repeat(fits, 4 ** r, axis=0)
        for i in range(1, d + 1):
            up = np.repeat(up, 2 ** r, axis=i)
        gam[up] = n
    return gam


def gamma_of_box(box: DyadicBox) -> int | None:
    """``gamma`` on a box, when it is constant there (``None`` if it varies)."""
    n = 0
    while True:
        anc = _ancestor(box, n)
        if anc.fits_in_D0(3.0):
            return n if n <= box.n else None
        if n >= box.n:
            return None
        n += 1


def _ancestor(box: DyadicBox, n: int) -> DyadicBox:
    r = box.n - n
    return DyadicBox(n, (box.k[0] // 4 ** r,) + tuple(ki // 2 ** r for ki in box.k[1:]))


@dataclass
class SelectionResult:
    lam: float
    d: int
    depth: int
    boxes: list                  # maximal stopped boxes, DyadicBox
    averages: list               # g average on each
    selected: list = field(default_factory=list)   # greedy subfamily
    stopped_measure: float = 0.0
    selected_measure: float = 0.0
    cover_violations: int = -1
    covering_constant: float = 0.0
    g_bar: float = 0.0
    tau: np.ndarray | None = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {"lambda": self.lam, "d": self.d, "depth": self.depth, "g_bar": self.g_bar,
                "boxes": [b.to_list() for b in self.boxes], "averages": self.averages,
                "selected": [b.to_list() for b in self.selected],
                "stopped_measure": self.stopped_measure, "selected_measure": self.selected_measure,
                "cover_violations": self.cover_violations, "covering_constant": self.covering_constant}

    def write_json(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(dumps(self.to_dict()))


def g_bar(g: BoxFunction, gamma: np.ndarray | None = None) -> float:
    """``max g_|gamma`` over resolved cells."""
    gam = gamma_stop(g.d, g.depth) if gamma is None else gamma
    best = 0.0
    for n in range(g.depth + 1):
        m = gam == n
        if m.any():
            best = max(best, float(g.at_cells(n)[m].max()))
    return best


def tau_lambda_decompose(g: BoxFunction, lam: float, *, check_bar: bool = True) -> SelectionResult:
    """Maximal boxes of ``{tau_lambda < inf}`` with ``tau_lambda = inf{m >= gamma: g_|m > lambda}``."""
    gam = gamma_stop(g.d, g.depth)
    gb = g_bar(g, gam)
    if check_bar and not lam > gb:
        raise GehringError(f"lambda={lam} must exceed g_bar={gb}")
    inf = g.depth + 1
    tau = np.full(gam.shape, inf, dtype=np.int64)
    for m in range(g.depth + 1):
        hit = (tau == inf) & (gam <= m) & (g.at_cells(m) > lam)
        tau[hit] = m
    boxes, avgs = [], []
    bound = lam / nu(g.d)
    for m in range(g.depth + 1):
        on = tau == m
        if not on.any():
            continue
        shape = [on.shape[0] // 4 ** (g.depth - m), 4 ** (g.depth - m)]
        for s in on.shape[1:]:
            shape += [s // 2 ** (g.depth - m), 2 ** (g.depth - m)]
        blk = on.reshape(shape)
        axes = tuple(range(1, 2 * (g.d + 1), 2))
        full, anyv = blk.all(axis=axes), blk.any(axis=axes)
        if np.any(full != anyv):
            raise GehringError(f"tau_lambda is not constant on level-{m} boxes")
        for idx in np.argwhere(full):
            k = (int(idx[0]),) + tuple(int(i) - 2 ** m for i in idx[1:])
            avg = float(g.levels[m][tuple(idx)])
            if not (avg > lam and avg <= bound * (1 + 1e-12)):
                raise GehringError(f"box {(m,) + k} average {avg} outside (lambda, lambda/nu]")
            boxes.append(DyadicBox(m, k))
            avgs.append(avg)
    res = SelectionResult(lam, g.d, g.depth, boxes, avgs, g_bar=gb, tau=tau)
    res.stopped_measure = float((tau < inf).sum()) * g.cell_volume
    return res


def greedy_select(res: SelectionResult) -> SelectionResult:
    """Largest-first selection with pairwise disjoint doubles, then the cover check."""
    order = sorted(range(len(res.boxes)), key=lambda i: (res.boxes[i].n, res.boxes[i].k))
    sel_lo, sel_hi, selected = [], [], []
    for i in order:
        b = res.boxes[i]
        t_lo, t_hi, lo, hi = b.extent(2.0)
        lo_i = np.concatenate([[t_lo], lo])
        hi_i = np.concatenate([[t_hi], hi])
        if sel_lo:
            L, H = np.asarray(sel_lo), np.asarray(sel_hi)
            hit = np.all(_intervals_overlap(lo_i, hi_i, L, H), axis=1)
            if hit.any():
                continue
        sel_lo.append(lo_i)
        sel_hi.append(hi_i)
        selected.append(b)
    d = res.d
    const = 2.0 * 5.0 ** (d + 2)
    shape = res.tau.shape
    covered = np.zeros(shape, bool)
    for b in selected:
        t_lo, t_hi, lo, hi = b.extent(5.0, reflect=True)
        vol = (t_hi - t_lo) * float(np.prod(hi - lo))
        if vol > const * b.volume * (1 + 1e-12):
            raise GehringError(f"cover of {b.to_list()} too large")
        sl = b.cell_slices(res.depth, 5.0, reflect=True)
        if sl is not None:
            covered[sl] = True
    stopped = res.tau < res.depth + 1
    res.selected = selected
    res.selected_measure = float(sum(b.volume for b in selected))
    res.cover_violations = int(np.count_nonzero(stopped & ~covered))
    res.covering_constant = const
    return res


@dataclass
class WeakTypeCheck:
    lam: float
    lhs: float            # nu / lambda * int g 1{g > lambda}
    stopped_measure: float
    selected_measure: float
    covering_constant: float
    cover_violations: int

    @property
    def weak_ok(self) -> bool:
        return self.lhs <= self.stopped_measure * (1 + 1e-12)

    @property
    def covering_ok(self) -> bool:
        return self.stopped_measure <= self.covering_constant * self.selected_measure * (1 + 1e-12)

    def row(self):
        return [self.lam, self.lhs, self.stopped_measure, self.selected_measure,
                self.covering_constant, self.cover_violations, int(self.weak_ok), int(self.covering_ok)]


def weak_type_check(g: BoxFunction, lam: float) -> WeakTypeCheck:
    res = greedy_select(tau_lambda_decompose(g, lam))
    lhs = nu(g.d) / lam * g.integral(g.values > lam)
    return WeakTypeCheck(lam, lhs, res.stopped_measure, res.selected_measure,
                         res.covering_constant, res.cover_violations)


def write_checks_csv(path, checks: Sequence[WeakTypeCheck]) -> None:
    write_curve(path, ["lambda", "weak_lhs", "stopped_measure", "selected_measure",
                       "covering_constant", "cover_violations", "weak_ok", "covering_ok"],
                [c.row() for c in checks])


# reverse-Hoelder machinery on 2 D0


@dataclass
class CellField:
    """Cell values of ``f >= 0`` on ``2 D0 = [0, 16) x [-2, 2)^d`` at depth ``N``."""

    values: np.ndarray
    depth: int
    static: bool = False

    def __post_init__(self):
        v = np.asarray(self.values, float)
        d = v.ndim - 1
        nt = 1 if self.static else 16 * 4 ** self.depth
        want = (nt,) + (4 * 2 ** self.depth,) * d
        if v.shape != want:
            raise GehringError(f"cell array shape {v.shape} != {want}")
        if not np.all(np.isfinite(v)) or np.any(v < 0):
            raise GehringError("cell values must be finite and nonnegative")
        self.values = v

    @property
    def d(self) -> int:
        return self.values.ndim - 1

    @classmethod
    def sample(cls, func: Callable, d: int, depth: int, static: bool = False) -> "CellField":
        cx = 2.0 ** -depth
        x = -2 + (np.arange(4 * 2 ** depth) + 0.5) * cx
        t = np.array([0.0]) if static else (np.arange(16 * 4 ** depth) + 0.5) * 4.0 ** -depth
        mesh = np.meshgrid(t, *([x] * d), indexing="ij")
        return cls(np.asarray(func(mesh[0], np.stack(mesh[1:], -1)), float), depth, static)

    def _sat(self, power: float) -> np.ndarray:
        v = self.values ** power if power != 1 else self.values
        sat = np.zeros(tuple(s + 1 for s in v.shape))
        sat[tuple(slice(1, None) for _ in v.shape)] = v
        for ax in range(v.ndim):
            np.cumsum(sat, axis=ax, out=sat)
        return sat

    def lattice_means(self, power: float, m: int, mu: float) -> np.ndarray:
        """Means of ``f^power`` over ``mu D`` for every level-``m`` box ``D`` of ``D0``."""
        N = self.depth
        s_cells = 2 ** (N - m)          # space side of D in cells
        k0 = np.arange(4 * 4 ** m)
        ki = np.arange(-(2 ** m), 2 ** m)
        if self.static:
            t_lo, t_hi = np.array([0]), np.array([1])
        else:
            T = 4 ** (N - m)
            t_lo = k0 * T
            t_hi = t_lo + int(round(mu * mu)) * T
        c2 = (2 * ki + 1) * s_cells + 4 * 2 ** N   # twice the centre index on the 2D0 grid
        half2 = int(round(mu * s_cells))
        if (mu * s_cells) % 0.5 or (c2[0] - half2) % 2:
            raise GehringError(f"dilate {mu} of level {m} not aligned at depth {N}")
        x_lo, x_hi = (c2 - half2) // 2, (c2 + half2) // 2
        sat = self._sat(power)
        los = [t_lo] + [x_lo] * self.d
        his = [t_hi] + [x_hi] * self.d
        tot = 0.0
        for corner in itertools.product((0, 1), repeat=self.d + 1):
            idx = [his[a] if c else los[a] for a, c in enumerate(corner)]
            sign = (-1) ** (self.d + 1 - sum(corner))
            tot = tot + sign * sat[np.ix_(*idx)]
        counts = np.ones(1)
        for a in range(self.d + 1):
            counts = np.multiply.outer(counts, his[a] - los[a])
        return tot / counts.reshape(tot.shape)

    def region_mean(self, power: float, t_range, x_range) -> float:
        N = self.depth
        v = self.values ** power
        if self.static:
            ts = slice(0, 1)
        else:
            ts = slice(int(round(t_range[0] * 4 ** N)), int(round(t_range[1] * 4 ** N)))
        xs = slice(int(round((x_range[0] + 2) * 2 ** N)), int(round((x_range[1] + 2) * 2 ** N)))
        if xs.stop <= xs.start or ts.stop <= ts.start:
            raise GehringError(f"region not resolved at depth {N}")
        return float(v[(ts,) + (xs,) * self.d].mean())


@dataclass
class ReverseHolderReport:
    A: float
    argmax: list            # [n, k0, k1..kd] of the worst box
    p: float
    depth: int
    per_level: list         # max ratio per level

    def to_dict(self):
        return {"A": self.A, "argmax": self.argmax, "p": self.p, "depth": self.depth,
                "per_level": self.per_level}


def _ratios(f: CellField, p: float, m: int) -> np.ndarray:
    num = f.lattice_means(p, m, 1.0) ** (1 / p)
    den = f.lattice_means(1.0, m, 2.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.where(den > 0, num / np.where(den > 0, den, 1), np.where(num > 0, np.inf, 1.0))
    return r


def reverse_holder_constant(f: CellField, p: float) -> ReverseHolderReport:
    """``max_D (mean_D f^p)^(1/p) / mean_{2D} f`` over dyadic ``D`` in ``D0`` of levels ``< depth``."""
    if not p >= 1:
        raise GehringError("p must be >= 1")
    best, arg, per = -np.inf, None, []
    for m in range(f.depth):
        r = _ratios(f, p, m)
        i = np.unravel_index(int(np.argmax(r)), r.shape)
        per.append(float(r[i]))
        if r[i] > best:
            best = float(r[i])
            k0 = int(i[0])
            arg = [m, k0] + [int(j) - 2 ** m for j in i[1:]]
    return ReverseHolderReport(best, arg, p, f.depth, per)


def theory_q(p: float, B: float, N3: float = 1.0) -> float:
    """``p (1 + alpha)`` with the largest ``alpha <= 1`` such that
    ``N3 alpha / (alpha + 1 - 1/p) B^(2p) <= 1/2``."""
    if not (p > 1 and B >= 1 and N3 > 0):
        raise GehringError("need p > 1, B >= 1, N3 > 0")
    denom = 2 * N3 * B ** (2 * p) - 1
    alpha = 1.0 if denom <= 0 else min(1.0, (1 - 1 / p) / denom)
    return p * (1 + alpha)


def coarsen(f: CellField) -> CellField:
    """Block-average ``f`` one dyadic level up."""
    v = f.values
    shape = [v.shape[0] if f.static else v.shape[0] // 4, 1 if f.static else 4]
    for s in v.shape[1:]:
        shape += [s // 2, 2]
    out = v.reshape(shape).mean(axis=tuple(range(1, 2 * v.ndim, 2)))
    return CellField(out, f.depth - 1, f.static)


D1 = ((0.0, 1.0), (-0.5, 0.5))
D0_DOUBLE = ((0.0, 16.0), (-2.0, 2.0))


def lq_ratio(f: CellField, q: float, A: float) -> float:
    """``(mean_{D1} f^q)^(1/q) / (A mean_{2 D0} f)``."""
    num = f.region_mean(q, *D1) ** (1 / q)
    den = f.region_mean(1.0, *D0_DOUBLE)
    return num / (A * den)


@dataclass
class ExponentReport:
    p: float
    A: float
    B: float
    theory_q: float
    theory_sweep: dict          # N3 -> q
    empirical_q: float
    N_hat: float
    stability: list             # (q, increment ratio of the resolution ladder)
    violations: list            # boxes breaking the reverse-Hoelder hypothesis
    tol: float

    def to_dict(self):
        return {k: getattr(self, k) for k in ("p", "A", "B", "theory_q", "theory_sweep", "empirical_q",
                                              "N_hat", "stability", "violations", "tol")}

    def write_csv(self, path) -> None:
        write_curve(path, ["q", "increment_ratio"], self.stability)


def hypothesis_violations(f: CellField, p: float, A: float, rtol: float = 1e-9) -> list:
    out = []
    for m in range(f.depth):
        r = _ratios(f, p, m)
        for i in np.argwhere(r > A * (1 + rtol)):
            out.append([m, int(i[0])] + [int(j) - 2 ** m for j in i[1:]] + [float(r[tuple(i)])])
    return out


def improved_exponent(f: CellField, p: float, A: float, B: float | None = None, *,
                      N3: float = 1.0, sweep=(1.0, 4.0, 16.0), q_max: float = 16.0,
                      tol: float = 0.05, iters: int = 30) -> ExponentReport:
    """Theoretical and empirical improved exponents for ``f`` satisfying the dyadic reverse-Hoelder bound.

    The empirical exponent is the largest ``q`` in ``[p, q_max]`` whose
    ``L_q(D1)`` integral converges geometrically along the resolution
    ladder.  With ``I_n`` the integral of the level-``n`` block averages and
    ``dI_n = I_n - I_{n-1}``, the rate ``dI_{N-2} / dI_{N-3}`` must stay below
    ``1 - tol``.  Those levels keep at least four samples per block side, so
    the block averages resolve the local integral.
    """
    B = A if B is None else B
    if B < A:
        raise GehringError("need B >= A")
    if f.depth < 5:
        # the coarsest ladder level N - 4 must still resolve D1
        raise GehringError("need depth >= 5 for the resolution ladder")
    bad = hypothesis_violations(f, p, A)
    if bad:
        b = bad[0]
        raise GehringError(f"reverse-Hoelder bound fails on box level {b[0]} k={b[1:-1]}: "
                           f"ratio {b[-1]:.6g} > A={A:.6g}")
    ladder_fields = [f]
    for _ in range(4):
        ladder_fields.append(coarsen(ladder_fields[-1]))
    ladder_fields = ladder_fields[2:]   # levels N-2, N-3, N-4

    def rate(q):
        I = [g.region_mean(q, *D1) for g in ladder_fields]
        d1, d0 = I[0] - I[1], I[1] - I[2]
        scale = 1e-12 * max(I[0], 1e-300)
        if abs(d0) <= scale:
            return 0.0 if abs(d1) <= scale else np.inf
        return d1 / d0

    def ok(q):
        return rate(q) < 1 - tol

    stability = [(float(q), float(rate(q))) for q in np.linspace(p, q_max, 15)]
    if ok(q_max):
        q_emp = q_max
    elif not ok(p):
        q_emp = p
    else:
        lo, hi = p, q_max
        for _ in range(iters):
            mid = 0.5 * (lo + hi)
            if ok(mid):
                lo = mid
            else:
                hi = mid
        q_emp = lo
    return ExponentReport(p, A, B, theory_q(p, B, N3), {str(n): theory_q(p, B, n) for n in sweep},
                          q_emp, lq_ratio(f, q_emp, A), stability, [], tol)


def power_field(a: float, d: int, depth: int) -> CellField:
    """Static ``|x|^-a`` on ``2 D0``."""
    return CellField.sample(lambda t, x: np.linalg.norm(x, axis=-1) ** (-a), d, depth, static=True)


def random_box_function(seed: int, d: int = 1, depth: int = 4, p: float = 2.0,
                        spread: float = 1.5) -> BoxFunction:
    """``phi f^p`` with log-normal cell values ``f`` smoothed over a few cells."""
    rng = np.random.default_rng([seed, 0x6E4])
    shape = (4 * 4 ** depth,) + (2 * 2 ** depth,) * d
    f = np.exp(spread * rng.standard_normal(shape))
    return BoxFunction(sample_d0(phi_weight, d, depth) * f ** p, depth)
