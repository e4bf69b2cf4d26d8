"""Euler-Maruyama simulation of dx = sigma(t, x) dw + b(t, x) dt.

Gaussian increments come from counter-based Philox streams keyed by
``(seed, path, step)`` (see :mod:`sdelab.rng`), so the increment of path
``i`` at step ``k`` does not depend on ``n_paths``, on the chunking, on which
other paths are still active, or on the number of worker threads.

Nothing here stores full trajectories by default.  Estimators attach an
*observer* to :func:`run`; it sees the state of every active path at every
grid time and may retire paths (exit, hit, ...).  A :class:`PathBatch` can be
replayed bit-exactly from its spec.
"""

from __future__ import annotations

import dataclasses
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np

from .fields import MatrixField, VectorField, eval_drift, eval_sigma, singular_mask
from .reports import EstimateReport, digest
from .rng import normals, uniforms

CHUNK = 16384


class SimulationError(ValueError):
    pass


@dataclass(frozen=True)
class DriftPolicy:
    """How singular drifts are tamed inside the stepper.

    ``cap_displacement`` clips the per-step drift displacement at
    ``kappa_cap * sqrt(h)``; ``floor_radius`` evaluates point singularities at
    radius ``max(|x|, r_floor)`` (hyperplane singularities at distance
    ``r_floor``).  Points exactly on the singular set get zero drift under
    every mode and are counted.
    """

    mode: str = "cap_displacement"
    kappa_cap: float = 4.0
    r_floor: float = 1e-3

    def __post_init__(self):
        if self.mode not in ("cap_displacement", "floor_radius", "none"):
            raise SimulationError(f"unknown drift policy {self.mode!r}")

    def to_dict(self):
        return dataclasses.asdict(self)


@dataclass(frozen=True)
class SimSpec:
    sigma: MatrixField
    drift: VectorField
    x0: tuple
    t0: float = 0.0
    horizon: float = 1.0
    h: float = 1e-2
    n_paths: int = 1000
    seed: int = 0
    policy: DriftPolicy = field(default_factory=DriftPolicy)

    def __post_init__(self):
        object.__setattr__(self, "x0", tuple(float(v) for v in self.x0))
        if not self.h > 0:
            raise SimulationError("h must be positive")
        if self.horizon < self.h:
            raise SimulationError("horizon must be at least one step")
        if self.n_paths < 1:
            raise SimulationError("n_paths must be >= 1")
        if len(self.x0) != self.sigma.dim or self.drift.dim != self.sigma.dim:
            raise SimulationError("sigma, drift and x0 dimensions disagree")

    @property
    def d(self) -> int:
        return self.sigma.dim

    @property
    def d1(self) -> int:
        return self.sigma.dim1

    @property
    def n_steps(self) -> int:
        return int(math.ceil(self.horizon / self.h - 1e-9))

    def replace(self, **changes) -> "SimSpec":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return {"sigma": self.sigma.to_dict(), "drift": self.drift.to_dict(),
                "x0": list(self.x0), "t0": self.t0, "horizon": self.horizon, "h": self.h,
                "n_paths": self.n_paths, "seed": self.seed, "policy": self.policy.to_dict()}

    def fingerprint(self, **extra) -> dict:
        fp = {"spec": digest(self.to_dict()), "h": self.h, "seed": self.seed,
              "n_paths": self.n_paths, "policy": self.policy.mode}
        fp.update(extra)
        return fp


def _floor_points(drift: VectorField, x: np.ndarray, r_floor: float) -> np.ndarray:
    from .fields import _DRIFTS

    sset = _DRIFTS[drift.kind].singular_set
    if "x=0" in sset:
        r = np.sqrt(np.einsum("...i,...i->...", x, x))
        scale = np.where((r > 0) & (r < r_floor), r_floor / np.where(r > 0, r, 1.0), 1.0)
        return x * scale[..., None]
    if "x^1=0" in sset:
        x = x.copy()
        x1 = x[..., 0]
        x[..., 0] = np.where((x1 != 0) & (np.abs(x1) < r_floor), np.sign(x1) * r_floor, x1)
        return x
    return x


class Stepper:
    def __init__(self, spec: SimSpec):
        self.spec = spec
        self.sqh = math.sqrt(spec.h)
        s = spec.sigma
        self._const_sigma = None
        if s.kind == "identity" and "_dilation" not in s.params:
            self._const_sigma = float(s.p("scale", 1.0))
        self._zero_drift = spec.drift.kind == "zero"
        self.n_capped = 0
        self.n_singular = 0

    def drift(self, t: float, x: np.ndarray) -> np.ndarray:
        """Policy-adjusted drift at ``(t, x)``; singular points give zero."""
        spec = self.spec
        if self._zero_drift:
            return np.zeros_like(x)
        pol = spec.policy
        xe = _floor_points(spec.drift, x, pol.r_floor) if pol.mode == "floor_radius" else x
        sing = singular_mask(spec.drift, t, xe)
        b = eval_drift(spec.drift, t, xe, check=False)
        if np.any(sing):
            self.n_singular += int(np.count_nonzero(sing))
            b[sing] = 0.0
        return b

    def step(self, t: float, x: np.ndarray, xi: np.ndarray) -> np.ndarray:
        spec = self.spec
        if self._const_sigma is not None:
            noise = (self._const_sigma * self.sqh) * xi
        else:
            sig = eval_sigma(spec.sigma, t, x)
            noise = self.sqh * np.einsum("nik,nk->ni", sig, xi)
        if self._zero_drift:
            return x + noise
        disp = self.drift(t, x) * spec.h
        if spec.policy.mode == "cap_displacement":
            cap = spec.policy.kappa_cap * self.sqh
            mag = np.sqrt(np.einsum("ni,ni->n", disp, disp))
            over = mag > cap
            if np.any(over):
                self.n_capped += int(np.count_nonzero(over))
                disp[over] *= (cap / mag[over])[:, None]
        return x + noise + disp


class Observer(Protocol):
    def observe(self, k: int, t: float, x: np.ndarray, idx: np.ndarray, chunk: int):
        """Inspect active paths at grid time ``t``; may return a retire mask."""


@dataclass
class RunStats:
    n_capped: int = 0
    n_singular: int = 0
    diverged: np.ndarray | None = None  # bool per path
    diverged_step: np.ndarray | None = None

    def to_dict(self):
        return {"n_capped": self.n_capped, "n_singular": self.n_singular,
                "n_diverged": int(np.count_nonzero(self.diverged)) if self.diverged is not None else 0}


def _starts(spec: SimSpec, starts) -> np.ndarray:
    if starts is None:
        return np.broadcast_to(np.asarray(spec.x0, float), (spec.n_paths, spec.d))
    s = np.asarray(starts, dtype=float)
    if s.shape != (spec.n_paths, spec.d):
        raise SimulationError(f"starts must have shape {(spec.n_paths, spec.d)}")
    return s


def run(spec: SimSpec, observer: Observer, *, starts=None, threads: int = 1) -> RunStats:
    """Drive all paths through the grid, feeding ``observer`` at every grid time.

    ``starts`` optionally gives a per-path initial state.  Results are
    independent of ``threads``: chunk boundaries are fixed and observers write
    only to their own chunk's slots.
    """
    x_start = _starts(spec, starts)
    n = spec.n_paths
    chunks = [(c, lo, min(lo + CHUNK, n)) for c, lo in enumerate(range(0, n, CHUNK))]
    diverged = np.zeros(n, dtype=bool)
    div_step = np.full(n, -1, dtype=np.int64)

    def work(job):
        cid, lo, hi = job
        stepper = Stepper(spec)
        idx = np.arange(lo, hi)
        x = np.array(x_start[lo:hi], dtype=float)
        for k in range(spec.n_steps + 1):
            t = spec.t0 + k * spec.h
            stop = observer.observe(k, t, x, idx, cid)
            if stop is not None and np.any(stop):
                keep = ~np.asarray(stop, dtype=bool)
                idx, x = idx[keep], x[keep]
            if k == spec.n_steps or idx.size == 0:
                break
            xi = normals(spec.seed, k, idx, spec.d1)
            x = stepper.step(t, x, xi)
            bad = ~np.all(np.isfinite(x), axis=1)
            if np.any(bad):
                diverged[idx[bad]] = True
                div_step[idx[bad]] = k + 1
                idx, x = idx[~bad], x[~bad]
                if idx.size == 0:
                    break
        return stepper.n_capped, stepper.n_singular

    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            counts = list(ex.map(work, chunks))
    else:
        counts = [work(j) for j in chunks]
    return RunStats(sum(c[0] for c in counts), sum(c[1] for c in counts), diverged, div_step)


# ---------------------------------------------------------------------------
# domains

@dataclass(frozen=True)
class Ball:
    """Open ball B_r(center)."""

    center: tuple
    radius: float

    def contains(self, t, x):
        c = np.asarray(self.center, float)
        return np.sum((x - c) ** 2, axis=-1) < self.radius ** 2

    def boundary(self, t, x):
        """Distance to the sphere and the outward unit normal."""
        v = x - np.asarray(self.center, float)
        r = np.sqrt(np.sum(v * v, axis=-1))
        nrm = v / np.where(r > 0, r, 1.0)[..., None]
        return self.radius - r, nrm


@dataclass(frozen=True)
class ClosedBall:
    center: tuple
    radius: float

    def contains(self, t, x):
        c = np.asarray(self.center, float)
        return np.sum((x - c) ** 2, axis=-1) <= self.radius ** 2


@dataclass(frozen=True)
class Cylinder:
    """Parabolic cylinder [t, t + rho^2) x B_rho(center)."""

    t: float
    center: tuple
    radius: float

    def contains(self, t, x):
        inside = Ball(self.center, self.radius).contains(t, x)
        return inside & (t >= self.t) & (t < self.t + self.radius ** 2)

    @property
    def lid(self) -> float:
        return self.t + self.radius ** 2

    def boundary(self, t, x):
        return Ball(self.center, self.radius).boundary(t, x)


@dataclass(frozen=True)
class Complement:
    inner: object

    def contains(self, t, x):
        return ~self.inner.contains(t, x)


@dataclass(frozen=True)
class HalfSpace:
    """{x : x[axis] < level} (or >= level when ``upper``)."""

    axis: int = 0
    level: float = 0.0
    upper: bool = False

    def contains(self, t, x):
        v = x[..., self.axis]
        return v >= self.level if self.upper else v < self.level


@dataclass
class ExitRecord:
    """Per-path first-exit (or first-hit) bookkeeping.

    ``step`` is the first grid index whose state is outside the domain (or in
    the target set); censored paths carry ``step = n_steps`` and
    ``censored = True``.  Overshoot is not interpolated.  With bridge
    detection a path may also be retired at a grid index where it is still
    inside, when the Brownian bridge between the last two states crossed.
    """

    step: np.ndarray
    time: np.ndarray
    state: np.ndarray
    censored: np.ndarray
    capped: np.ndarray
    diverged: np.ndarray

    @property
    def elapsed(self) -> np.ndarray:
        return self.time


class _FirstEvent:
    def __init__(self, spec: SimSpec, test, lid=None, bridge=None):
        n = spec.n_paths
        self.test = test
        self.lid = lid
        self.spec = spec
        self.bridge = bridge
        self.step = np.full(n, spec.n_steps, dtype=np.int64)
        self.state = np.full((n, spec.d), np.nan)
        self.censored = np.ones(n, dtype=bool)
        self.capped = np.zeros(n, dtype=bool)
        if bridge is not None:
            self.prev_dist = np.zeros(n)
            self.prev_ann = np.ones(n)

    def _crossed(self, k, t, x, idx, hit):
        # both endpoints inside: the bridge left with prob exp(-2 d0 d1 / (a_nn h))
        dist, nrm = self.bridge(t, x)
        crossed = np.zeros_like(hit)
        if k > 0:
            d0, a0 = self.prev_dist[idx], self.prev_ann[idx]
            p = np.exp(-2.0 * np.maximum(d0, 0) * np.maximum(dist, 0) / (a0 * self.spec.h))
            u = uniforms(self.spec.seed, k, idx)[:, 0]
            crossed = ~hit & (u < p)
        self.prev_dist[idx] = dist
        sg = self.spec.sigma
        if sg.kind == "identity" and "_dilation" not in sg.params:
            self.prev_ann[idx] = float(sg.p("scale", 1.0)) ** 2
        else:
            proj = np.einsum("ni,nik->nk", nrm, eval_sigma(sg, t, x))
            self.prev_ann[idx] = np.maximum(np.sum(proj * proj, axis=1), 1e-300)
        return crossed

    def observe(self, k, t, x, idx, chunk):
        hit = self.test(t, x)
        if self.bridge is not None:
            hit = hit | self._crossed(k, t, x, idx, hit)
        if k == self.spec.n_steps:
            self.state[idx] = x
        if np.any(hit):
            j = idx[hit]
            self.step[j] = k
            self.state[j] = x[hit]
            self.censored[j] = False
            if self.lid is not None:
                self.capped[j] = t >= self.lid - 1e-12
        return hit

    def record(self, stats: RunStats) -> ExitRecord:
        time = self.step * self.spec.h
        return ExitRecord(self.step, time, self.state, self.censored & ~stats.diverged,
                          self.capped, stats.diverged.copy())


@dataclass
class PathBatch:
    """A seeded ensemble; trajectories are stored every ``stride`` steps if requested."""

    spec: SimSpec
    starts: np.ndarray | None = None
    states: np.ndarray | None = None
    stride: int = 0
    stats: RunStats | None = None

    def replay(self, observer: Observer, threads: int = 1) -> RunStats:
        return run(self.spec, observer, starts=self.starts, threads=threads)

    @property
    def fingerprint(self) -> dict:
        fp = self.spec.fingerprint()
        if self.starts is not None:
            fp["starts"] = digest(np.asarray(self.starts).tolist())
        return fp


class _Recorder:
    def __init__(self, spec, stride):
        self.stride = stride
        n_rec = spec.n_steps // stride + 1
        self.states = np.full((spec.n_paths, n_rec, spec.d), np.nan)

    def observe(self, k, t, x, idx, chunk):
        if k % self.stride == 0:
            self.states[idx, k // self.stride] = x
        return None


def simulate(spec: SimSpec, *, starts=None, store_stride: int | None = 1,
             threads: int = 1) -> PathBatch:
    """Simulate ``spec``; store states every ``store_stride`` steps (None: none)."""
    if store_stride:
        rec = _Recorder(spec, store_stride)
        stats = run(spec, rec, starts=starts, threads=threads)
        return PathBatch(spec, None if starts is None else np.asarray(starts, float),
                         rec.states, store_stride, stats)

    return PathBatch(spec, None if starts is None else np.asarray(starts, float))


def first_exit(batch: PathBatch, domain, threads: int = 1,
               boundary: str = "grid") -> ExitRecord:
    """First grid index at which each path is outside ``domain``.

    ``boundary="bridge"`` also retires a path between grid times when the
    Brownian bridge joining two inside states crosses the boundary (domains
    exposing ``boundary``).  This removes the O(sqrt h) overshoot bias of pure
    grid monitoring.
    """
    if boundary not in ("grid", "bridge"):
        raise SimulationError(f"unknown boundary mode {boundary!r}")
    lid = getattr(domain, "lid", None)
    bridge = getattr(domain, "boundary", None) if boundary == "bridge" else None
    obs = _FirstEvent(batch.spec, lambda t, x: ~domain.contains(t, x), lid, bridge)
    stats = batch.replay(obs, threads)
    return obs.record(stats)


def hitting_time(batch: PathBatch, closed_set, threads: int = 1) -> ExitRecord:
    """First grid index at which each path lies in ``closed_set``."""
    obs = _FirstEvent(batch.spec, lambda t, x: closed_set.contains(t, x))
    stats = batch.replay(obs, threads)
    return obs.record(stats)


def hit_before_exit(batch: PathBatch, target, domain, threads: int = 1) -> np.ndarray:
    """Boolean per path: enters ``target`` before leaving ``domain``."""
    spec = batch.spec
    out = np.zeros(spec.n_paths, dtype=bool)

    class _Obs:
        def observe(self, k, t, x, idx, chunk):
            hit = target.contains(t, x)
            out[idx[hit]] = True
            return hit | ~domain.contains(t, x)

    batch.replay(_Obs(), threads)
    return out


# ---------------------------------------------------------------------------
# path functionals and refinement

def _power_integral(t0, t1, alpha):
    if alpha == 1.0:
        return np.log(t1 / t0)
    return (t1 ** (1 - alpha) - np.where(t0 > 0, t0, 0.0) ** (1 - alpha)) / (1 - alpha)


class FunctionalObserver:
    """Accumulate a registered path functional for every path.

    Registered names: ``drift_integral`` (sum of h |b(t_k, x_k)|),
    ``weighted_singular`` (sum over steps of the exact time integral of
    s^-alpha times |x_k|^-beta), ``sup_norm`` (max |x_k - x_0|^power) and
    ``occupation`` (time spent in a ball).  Integrals use the left endpoint
    in space; a term whose state sits on a singular set is dropped and
    counted.
    """

    NAMES = ("drift_integral", "weighted_singular", "sup_norm", "occupation")

    def __init__(self, spec: SimSpec, functional: dict, starts=None, until=None):
        name = functional["name"]
        if name not in self.NAMES:
            raise SimulationError(f"unknown functional {name!r}")
        self.name = name
        self.params = functional
        self.spec = spec
        self.until = until
        self.values = np.zeros(spec.n_paths)
        self.start = _starts(spec, starts)
        self.n_singular = 0

    def observe(self, k, t, x, idx, chunk):
        spec = self.spec
        stop = None
        if self.until is not None:
            stop = ~self.until.contains(t, x)
        last = k == spec.n_steps
        live = np.ones(len(idx), dtype=bool) if stop is None else ~stop
        if self.name == "sup_norm":
            p = float(self.params.get("power", 1.0))
            r = np.sqrt(np.sum((x - self.start[idx]) ** 2, axis=1)) ** p
            self.values[idx] = np.maximum(self.values[idx], r)
            return stop
        if last:
            return stop
        h = spec.h
        if self.name == "drift_integral":
            pol = spec.policy
            xe = _floor_points(spec.drift, x, pol.r_floor) if pol.mode == "floor_radius" else x
            sing = singular_mask(spec.drift, t, xe)
            b = eval_drift(spec.drift, t, xe, check=False)
            mag = np.sqrt(np.sum(b * b, axis=1))
            mag[sing] = 0.0
            self.n_singular += int(np.count_nonzero(sing & live))
            inc = h * mag
        elif self.name == "weighted_singular":
            a = float(self.params.get("alpha", 0.5))
            beta = float(self.params.get("beta", 0.5))
            r = np.sqrt(np.sum(x * x, axis=1))
            floor = float(self.params.get("r_floor", 0.0))
            if spec.policy.mode == "floor_radius":
                floor = max(floor, spec.policy.r_floor)
            r = np.maximum(r, floor)
            sing = r == 0
            tw = _power_integral(t, t + h, a) if t >= 0 else 0.0
            inc = np.where(sing, 0.0, tw / np.where(sing, 1.0, r) ** beta)
            self.n_singular += int(np.count_nonzero(sing & live))
        else:
            c = np.asarray(self.params.get("center", [0.0] * spec.d), float)
            rad = float(self.params.get("radius", 1.0))
            inc = h * (np.sum((x - c) ** 2, axis=1) < rad * rad)
        self.values[idx] += np.where(live, inc, 0.0)
        return stop


def path_functional(spec: SimSpec, functional: dict, *, starts=None, until=None,
                    threads: int = 1) -> tuple[np.ndarray, RunStats, int]:
    obs = FunctionalObserver(spec, functional, starts, until)
    stats = run(spec, obs, starts=starts, threads=threads)
    return obs.values, stats, obs.n_singular


def refine_study(spec: SimSpec, functional: dict, h_ladder: Sequence[float], *,
                 threads: int = 1) -> list[EstimateReport]:
    """One report per step size; every rung uses the same seed."""
    if len(h_ladder) == 0:
        raise SimulationError("h ladder is empty")
    out = []
    for h in h_ladder:
        s = spec.replace(h=float(h))
        vals, stats, nsing = path_functional(s, functional, threads=threads)
        ok = ~stats.diverged
        out.append(EstimateReport.from_samples(
            vals[ok], s.fingerprint(functional=functional["name"]),
            diverged=int(np.count_nonzero(~ok)),
            n_capped=stats.n_capped, n_singular=nsing))
    return out


# ---------------------------------------------------------------------------
# exports

def export_summary_csv(path, record: ExitRecord, functionals: dict | None = None) -> None:
    """CSV with path_id, exit_time, censored, exit_x... and optional functional columns."""
    from .reports import write_curve

    d = record.state.shape[1]
    names = sorted(functionals or {})
    header = ["path_id", "exit_time", "censored"] + [f"exit_x{i}" for i in range(d)] + names
    rows = []
    for i in range(record.step.size):
        rows.append([i, float(record.time[i]), int(record.censored[i])]
                    + [float(v) for v in record.state[i]]
                    + [float(functionals[n][i]) for n in names])
    write_curve(path, header, rows)


TRAJ_MAGIC = b"SDELTRJ1"


def export_trajectories(path, batch: PathBatch) -> None:
    """Flat binary layout: magic, int64 (n_paths, n_rec, d, stride), float64 h,
    then row-major float64 states[path, record, coord]."""
    if batch.states is None:
        raise SimulationError("batch was simulated without stored states")
    n, m, d = batch.states.shape
    with open(path, "wb") as fh:
        fh.write(TRAJ_MAGIC)
        fh.write(np.array([n, m, d, batch.stride], dtype="<i8").tobytes())
        fh.write(np.array([batch.spec.h], dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(batch.states, dtype="<f8").tobytes())


def load_trajectories(path) -> tuple[np.ndarray, float, int]:
    with open(path, "rb") as fh:
        if fh.read(8) != TRAJ_MAGIC:
            raise SimulationError("not a trajectory dump")
        n, m, d, stride = np.frombuffer(fh.read(32), dtype="<i8")
        h = float(np.frombuffer(fh.read(8), dtype="<f8")[0])
        states = np.frombuffer(fh.read(), dtype="<f8").reshape(int(n), int(m), int(d))
    return states.copy(), h, int(stride)
