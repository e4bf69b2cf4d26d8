"""Monte Carlo estimators for potentials, exit times, occupation and hitting.

Every estimator runs seeded Euler-Maruyama batches from :mod:`sdelab.sde`
and returns :class:`~sdelab.reports.EstimateReport` records (or small curve
records) carrying the configuration fingerprint.  Time integrals along paths
use the left endpoint of each step and stop at the first grid time outside
the stopping domain, so no integrand is sampled outside the domain.

Constants appearing in the estimates (``N``, the exit probability floor, the
occupation exponent, ...) are always fitted and reported, never assumed.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import special

from . import sde
from .fields import ScalarField, eval_drift, eval_scalar, singular_mask
from .morrey import Cylinder as NormCylinder, GridFunction, MixedNormSpec, normalized_norm
from .reports import EstimateReport, digest, loglog_slope, write_curve


class EstimatorError(ValueError):
    pass


def _scalar_eval(f, t, x):
    if callable(f) and not isinstance(f, ScalarField):
        return np.asarray(f(t, x), float)
    sing = singular_mask(f, t, x)
    v = eval_scalar(f, t, x, check=False)
    return np.where(sing, 0.0, v)


class _Integrals:
    """Accumulate ``sum_k w_k e^{-lam (t_k - t0)} f_i(t_k, x_k)`` until ``stop`` is left.

    Without a window the weights are trapezoidal (``h/2`` at both ends of the
    horizon), which removes the ``h f(t0, x0) / 2`` start-up bias of a left
    Riemann sum; with a window they are ``h`` on grid times inside it.
    """

    def __init__(self, spec: sde.SimSpec, fs, lam: float, stop, window=None):
        self.spec = spec
        self.fs = list(fs)
        self.lam = lam
        self.stop = stop
        self.window = window
        self.values = np.zeros((len(self.fs), spec.n_paths))

    def observe(self, k, t, x, idx, chunk):
        inside = np.ones(len(idx), bool) if self.stop is None else self.stop.contains(t, x)
        n = self.spec.n_steps
        if self.window is None:
            w = self.spec.h * (0.5 if k in (0, n) else 1.0)
        elif k < n and self.window[0] <= t < self.window[1]:
            w = self.spec.h
        else:
            w = 0.0
        if w:
            w *= math.exp(-self.lam * (t - self.spec.t0))
            xi, ii = x[inside], idx[inside]
            if ii.size:
                for j, f in enumerate(self.fs):
                    self.values[j, ii] += w * _scalar_eval(f, t, xi)
        return ~inside


def potentials(spec: sde.SimSpec, fs: Sequence, lam: float = 0.0, stop=None, *,
               starts=None, window=None, threads: int = 1) -> list[EstimateReport]:
    """Coupled estimates of ``E int_0^stop e^{-lam s} f(t0 + s, x_s) ds`` for each ``f``.

    ``stop`` is a domain from :mod:`sdelab.sde` (``None``: the horizon).
    All functions share the same paths, so linear combinations are exact.
    ``window`` optionally restricts integration to grid times in ``[a, b)``.
    """
    if lam < 0:
        raise EstimatorError("lambda must be nonnegative")
    obs = _Integrals(spec, fs, lam, stop, window)
    stats = sde.run(spec, obs, starts=starts, threads=threads)
    ok = ~stats.diverged
    fp = spec.fingerprint(lam=lam, stop=type(stop).__name__ if stop is not None else "horizon")
    return [EstimateReport.from_samples(obs.values[j, ok], fp, int(np.count_nonzero(~ok)),
                                        n_capped=stats.n_capped)
            for j in range(len(obs.fs))]


def potential(spec: sde.SimSpec, f, lam: float = 0.0, stop=None, *, starts=None,
              threads: int = 1) -> EstimateReport:
    """``E int_0^stop e^{-lam s} f(t0 + s, x_s) ds`` with left-endpoint quadrature."""
    return potentials(spec, [f], lam, stop, starts=starts, threads=threads)[0]


def yukawa_potential_bm(f: ScalarField, x0, lam: float, scale: float = 1.0) -> float:
    """Resolvent potential of Brownian motion ``scale * w`` in d = 3 by quadrature.

    Uses the kernel ``G(r) = exp(-sqrt(2 lam) r / s) / (2 pi s^2 r)`` and the
    exact spherical average of ball indicators and Gaussian bumps.
    """
    from scipy import integrate

    if f.dim != 3:
        raise EstimatorError("the Yukawa oracle is three-dimensional")
    if not lam > 0:
        raise EstimatorError("lambda must be positive")
    k = math.sqrt(2 * lam) / scale
    x0 = np.asarray(x0, float)
    c = np.asarray(f.p("center", [0.0] * 3), float)
    D = float(np.linalg.norm(c - x0))

    def kern(r):
        return math.exp(-k * r) / (2 * math.pi * scale ** 2 * r)

    if f.kind == "ball_indicator":
        a = float(f.p("radius", 1.0))

        def shell(r):
            # area of the sphere |y - x0| = r inside B_a(c)
            if D == 0:
                return 4 * math.pi * r * r if r < a else 0.0
            if r <= a - D:
                return 4 * math.pi * r * r
            if r >= a + D or r <= D - a:
                return 0.0
            cos = (r * r + D * D - a * a) / (2 * r * D)
            return 2 * math.pi * r * r * (1 - cos)

        lo, hi = max(D - a, 0.0), D + a
        pts = [p for p in (a - D,) if lo < p < hi]
        val, _ = integrate.quad(lambda r: kern(r) * shell(r), lo, hi, points=pts or None,
                                limit=200, epsabs=1e-12, epsrel=1e-10)
        return val
    if f.kind == "gaussian_bump":
        w = float(f.p("width", 1.0))
        amp = float(f.p("amplitude", 1.0))

        def shell(r):
            z = r * D / (w * w)
            base = math.exp(-((r - D) ** 2) / (2 * w * w))
            avg = base * (-math.expm1(-2 * z)) / (2 * z) if z > 0 else math.exp(-r * r / (2 * w * w))
            return 4 * math.pi * r * r * amp * avg

        hi = D + 12 * w
        val, _ = integrate.quad(lambda r: kern(r) * shell(r), 0.0, hi, points=[D] if D > 0 else None,
                                limit=200, epsabs=1e-12, epsrel=1e-10)
        return val
    raise EstimatorError(f"no Yukawa oracle for {f.kind!r}")


# ---------------------------------------------------------------------------
# Aleksandrov-type ratio

def random_indicator_family(d: int, rho: float, n: int, seed: int, t0: float = 0.0,
                            x0=None, n_bumps: int = 0) -> list[ScalarField]:
    """Indicators of random boxes inside ``C_rho(t0, x0)`` plus optional bumps."""
    rng = np.random.default_rng(seed)
    x0 = np.zeros(d) if x0 is None else np.asarray(x0, float)
    out = []
    half = rho / math.sqrt(d)
    for _ in range(n):
        a = rng.uniform(-half, half, size=(2, d))
        lo_x, hi_x = np.minimum(a[0], a[1]), np.maximum(a[0], a[1])
        hi_x = np.maximum(hi_x, lo_x + 0.05 * rho)
        s = np.sort(rng.uniform(0, rho * rho, size=2))
        s[1] = max(s[1], s[0] + 0.02 * rho * rho)
        lo = [t0 + s[0]] + list(x0 + lo_x)
        hi = [t0 + s[1]] + list(x0 + hi_x)
        out.append(ScalarField("box_indicator", d, {"lo": lo, "hi": hi}))
    for _ in range(n_bumps):
        c = x0 + rng.uniform(-rho / 2, rho / 2, size=d)
        out.append(ScalarField("gaussian_bump", d, {"center": list(c), "width": rho / 4}))
    return out


@dataclass
class RatioReport:
    value: float
    ratios: list
    std_errors: list
    argmax: int
    fingerprint: dict

    def to_dict(self):
        return dataclasses.asdict(self)


def aleksandrov_ratio(spec: sde.SimSpec, family: Sequence[ScalarField], rho: float,
                      norm: MixedNormSpec, *, n_t: int = 16, n_x: int = 32,
                      threads: int = 1) -> RatioReport:
    """``sup_f E int_0^{tau_rho} f ds / (rho^2 normalized_norm(f, C_rho))``.

    Paths start at ``(t0, x0)``; ``tau_rho`` is the exit time from
    ``C_rho(t0, x0)``, so it never exceeds ``rho^2``.
    """
    if len(family) == 0:
        raise EstimatorError("empty test-function family")
    s = spec.replace(horizon=rho * rho + spec.h)
    dom = sde.Cylinder(s.t0, s.x0, rho)
    reps = potentials(s, family, 0.0, dom, threads=threads)
    cyl = NormCylinder(s.t0, s.x0, rho)
    x0 = np.asarray(s.x0)
    ratios, errs = [], []
    for f, r in zip(family, reps):
        g = GridFunction.from_field(f, t_range=(s.t0, s.t0 + rho * rho), x_lo=x0 - rho,
                                    x_hi=x0 + rho, n_t=n_t, n_x=n_x)
        nn = normalized_norm(g, norm, cyl)
        if nn <= 0:
            ratios.append(0.0)
            errs.append(0.0)
            continue
        ratios.append(r.value / (rho * rho * nn))
        errs.append(r.std_error / (rho * rho * nn))
    j = int(np.argmax(ratios))
    return RatioReport(float(ratios[j]), ratios, errs, j,
                       s.fingerprint(rho=rho, norm=norm.to_dict(), family=len(family)))


# ---------------------------------------------------------------------------
# moderated drift

@dataclass
class AnchorReport:
    value: float
    std_error: float
    anchors: list
    estimates: list
    std_errors: list
    fingerprint: dict

    def to_dict(self):
        return dataclasses.asdict(self)


def moderated_drift(spec: sde.SimSpec, rho: float, anchors: Sequence, *,
                    threads: int = 1) -> AnchorReport:
    """``sup`` over anchors ``(t, x, y)`` of ``rho^-1 E int_0^{tau_rho(y)} |b| ds``.

    ``tau_rho(y)`` is the exit time from ``C_rho(t, y)`` of the path started
    at ``(t, x)``.  Each anchor is an independent sub-experiment seeded with
    ``seed + anchor index``.
    """
    if len(anchors) == 0:
        raise EstimatorError("no anchors")
    est, errs = [], []
    for i, (t, x, y) in enumerate(anchors):
        s = spec.replace(t0=float(t), x0=tuple(x), horizon=rho * rho + spec.h, seed=spec.seed + i)
        dom = sde.Cylinder(float(t), tuple(y), rho)
        vals, stats, _ = sde.path_functional(s, {"name": "drift_integral"}, until=dom,
                                             threads=threads)
        r = EstimateReport.from_samples(vals[~stats.diverged])
        est.append(r.value / rho)
        errs.append(r.std_error / rho)
    j = int(np.argmax(est))
    return AnchorReport(est[j], errs[j], [[float(a[0]), list(a[1]), list(a[2])] for a in anchors],
                        est, errs, spec.fingerprint(rho=rho))


# ---------------------------------------------------------------------------
# exit-time tails and Laplace transforms

@dataclass
class TailReport:
    """Survival curve ``P(tau' > T)`` with a log-linear fit.

    Only ladder points with at least ``min_count`` surviving paths enter the
    fit; ``rate`` is minus the fitted slope and ``N_hat`` the fitted prefactor.
    """

    T: list
    survival: list
    std_errors: list
    counts: list
    rate: float
    N_hat: float
    r2: float
    fitted_points: int
    mean_exit: EstimateReport
    p0_hat: float
    small_time: dict = field(default_factory=dict)
    fingerprint: dict = field(default_factory=dict)

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["mean_exit"] = self.mean_exit.to_dict()
        return d

    def write_csv(self, path):
        write_curve(path, ["T", "survival", "std_error", "count"],
                    zip(self.T, self.survival, self.std_errors, self.counts))


def exit_tail(spec: sde.SimSpec, rho: float, T_ladder: Sequence[float], *,
              small_ladder: Sequence[float] | None = None, min_count: int = 10,
              boundary: str = "bridge", threads: int = 1) -> TailReport:
    """Exit of ``B_rho(x0)``: survival curve, mean exit time and tail fits.

    The horizon of ``spec`` should exceed the ladder; paths still inside at
    the horizon are censored and count as survivors for every ladder time.
    ``p0_hat = 1 - P(tau' >= rho^2)``; the small-time fit regresses
    ``log P(tau' <= s)`` on ``rho^2 / s`` and reports ``c = -slope``.
    """
    batch = sde.simulate(spec, store_stride=None)
    rec = sde.first_exit(batch, sde.Ball(spec.x0, rho), threads=threads, boundary=boundary)
    ok = ~rec.diverged
    tau = np.where(rec.censored, np.inf, rec.time)[ok]
    n = tau.size
    if n == 0 or np.all(np.isinf(tau)):
        raise EstimatorError("every path is censored or diverged")
    Ts = [float(T) for T in T_ladder]
    counts = [int(np.count_nonzero(tau > T)) for T in Ts]
    surv = [c / n for c in counts]
    errs = [math.sqrt(p * (1 - p) / n) for p in surv]
    use = [i for i, c in enumerate(counts) if c >= min_count]
    if len(use) >= 2:
        x = np.array([Ts[i] for i in use])
        y = np.log([surv[i] for i in use])
        A = np.vstack([x, np.ones_like(x)]).T
        coef, *_ = np.linalg.lstsq(A, y, rcond=None)
        resid = y - A @ coef
        ss = np.sum((y - y.mean()) ** 2)
        r2 = float(1 - np.sum(resid ** 2) / ss) if ss > 0 else 1.0
        rate, N_hat = float(-coef[0]), float(math.exp(coef[1]))
    else:
        rate, N_hat, r2 = float("nan"), float("nan"), float("nan")
    finite = tau[np.isfinite(tau)]
    mean = EstimateReport.from_samples(finite, spec.fingerprint(rho=rho),
                                       int(np.count_nonzero(~ok)),
                                       censored=int(n - finite.size))
    p0 = 1.0 - float(np.count_nonzero(tau >= rho * rho)) / n
    small = {}
    if small_ladder:
        ss_ = [float(s) for s in small_ladder]
        cnt = [int(np.count_nonzero(tau <= s)) for s in ss_]
        small = {"s": ss_, "probability": [c / n for c in cnt], "counts": cnt}
        u = [i for i, c in enumerate(cnt) if c >= min_count]
        if len(u) >= 2:
            x = np.array([rho * rho / ss_[i] for i in u])
            y = np.log([cnt[i] / n for i in u])
            coef = np.polyfit(x, y, 1)
            small.update({"c_hat": float(-coef[0]), "C_hat": float(math.exp(coef[1]))})
    return TailReport(Ts, surv, errs, counts, rate, N_hat, r2, len(use), mean, p0, small,
                      spec.fingerprint(rho=rho, boundary=boundary))


@dataclass
class LaplaceReport:
    lam: list
    value: list
    std_errors: list
    envelope: list  # -log(value) / sqrt(lam)
    plateau: float
    fingerprint: dict

    def to_dict(self):
        return dataclasses.asdict(self)


def laplace_exit(spec: sde.SimSpec, rho: float, lams: Sequence[float], *,
                 boundary: str = "bridge", threads: int = 1) -> LaplaceReport:
    """``E exp(-lam tau_rho)`` with ``tau_rho = rho^2 ^ tau'_rho`` from ``C_rho(t0, x0)``."""
    s = spec.replace(horizon=rho * rho + spec.h)
    batch = sde.simulate(s, store_stride=None)
    rec = sde.first_exit(batch, sde.Cylinder(s.t0, s.x0, rho), threads=threads, boundary=boundary)
    ok = ~rec.diverged
    tau = np.minimum(np.where(rec.censored, rho * rho, rec.time), rho * rho)[ok]
    vals, errs, env = [], [], []
    for lam in lams:
        e = np.exp(-float(lam) * tau)
        r = EstimateReport.from_samples(e)
        vals.append(1.0 if lam == 0 else r.value)
        errs.append(0.0 if lam == 0 else r.std_error)
        env.append(float("nan") if lam == 0 else -math.log(r.value) / math.sqrt(lam))
    fin = [v for v in env if np.isfinite(v)]
    return LaplaceReport([float(v) for v in lams], vals, errs, env,
                         float(fin[-1]) if fin else float("nan"),
                         s.fingerprint(rho=rho, boundary=boundary))


# ---------------------------------------------------------------------------
# occupation and hitting

def _ball_starts(spec: sde.SimSpec, center, radius: float) -> np.ndarray:
    # uniform points of B_radius(center), reproducible from the SimSpec seed
    rng = np.random.default_rng([spec.seed, 0x0CC])
    d = spec.d
    g = rng.standard_normal((spec.n_paths, d))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    r = radius * rng.uniform(size=spec.n_paths) ** (1.0 / d)
    return np.asarray(center, float) + g * r[:, None]


def cylinder_fraction(gamma, R: float, s: float, y, n_t: int = 8, n_x: int = 64) -> float:
    """``|Gamma ^ C_R(s, y)| / |C_R|`` by midpoint quadrature."""
    y = np.asarray(y, float)
    g = GridFunction.from_field(gamma, t_range=(s, s + R * R), x_lo=y - R, x_hi=y + R,
                                n_t=n_t, n_x=n_x)
    return normalized_norm(g, MixedNormSpec(1.0, 1.0, "space_outer"), NormCylinder(s, y, R))


def centered_ball_family(y, R: float, qs: Sequence[float]) -> list[ScalarField]:
    """Time-independent balls ``B_r(y)`` with ``(r/R)^d = q``."""
    y = list(map(float, y))
    d = len(y)
    return [ScalarField("ball_indicator", d, {"center": y, "radius": R * q ** (1.0 / d)}) for q in qs]


@dataclass
class OccupationReport:
    q: list
    occupation: list
    std_errors: list
    gamma_hat: float
    r2: float
    fingerprint: dict

    def to_dict(self):
        return dataclasses.asdict(self)


def occupation_experiment(spec: sde.SimSpec, R: float, kappa: float, gammas: Sequence,
                          s: float, y=None, *, eta_window: float = 1.0,
                          threads: int = 1) -> OccupationReport:
    """Time spent in ``Gamma ^ C_R(s, y)`` before leaving ``B_R(y)``.

    Paths start at time ``s - eta_window R^2`` at uniform points of
    ``B_{kappa R}(y)``; the horizon is ``s + R^2``.  Across the family the
    slope of ``log(occupation / R^2)`` against ``log q`` is ``gamma_hat``.
    """
    y = np.zeros(spec.d) if y is None else np.asarray(y, float)
    t_start = s - eta_window * R * R
    sp = spec.replace(t0=t_start, x0=tuple(y), horizon=(s + R * R) - t_start)
    starts = _ball_starts(sp, y, kappa * R)
    reps = potentials(sp, gammas, 0.0, sde.Ball(tuple(y), R), starts=starts,
                      window=(s, s + R * R), threads=threads)
    qs = [cylinder_fraction(g, R, s, y) for g in gammas]
    occ = [r.value for r in reps]
    pos = [i for i, v in enumerate(occ) if v > 0 and qs[i] > 0]
    if len(pos) >= 2:
        slope, _, r2 = loglog_slope([qs[i] for i in pos], [occ[i] / R ** 2 for i in pos])
    else:
        slope, r2 = float("nan"), float("nan")
    return OccupationReport(qs, occ, [r.std_error for r in reps], slope, r2,
                            sp.fingerprint(R=R, kappa=kappa, s=s))


class SpaceTimeSet:
    """Closed set ``{(t, x): t in [t_lo, t_hi], x in closed ball}`` or indicator-defined."""

    def __init__(self, t_lo: float, t_hi: float, center=None, radius: float | None = None,
                 indicator: ScalarField | None = None):
        self.t_lo, self.t_hi = t_lo, t_hi
        self.center, self.radius, self.indicator = center, radius, indicator

    def contains(self, t, x):
        ok = (t >= self.t_lo) & (t <= self.t_hi)
        if not ok:
            return np.zeros(x.shape[0], bool)
        if self.indicator is not None:
            return _scalar_eval(self.indicator, t, x) > 0
        c = np.asarray(self.center, float)
        return np.sum((x - c) ** 2, axis=1) <= self.radius ** 2


def hitting_experiment(spec: sde.SimSpec, R: float, kappa: float, targets: Sequence,
                       s: float, y=None, *, threads: int = 1) -> list[EstimateReport]:
    """``P(hit Gamma before leaving [s - R^2, s + R^2) x B_R(y))`` per target.

    Paths start at time ``s - R^2`` uniformly in ``B_{kappa R}(y)``.  All
    targets share the same paths, so the estimates are monotone under set
    inclusion.
    """
    y = np.zeros(spec.d) if y is None else np.asarray(y, float)
    sp = spec.replace(t0=s - R * R, x0=tuple(y), horizon=2 * R * R)
    starts = _ball_starts(sp, y, kappa * R)
    batch = sde.simulate(sp, starts=starts, store_stride=None)
    dom = sde.Ball(tuple(y), R)
    out = []
    for g in targets:
        hit = sde.hit_before_exit(batch, g, dom, threads=threads)
        out.append(EstimateReport.from_samples(hit.astype(float), sp.fingerprint(R=R, s=s)))
    return out


# ---------------------------------------------------------------------------
# Harnack ratio and caloric oscillation

def _is_bm(spec: sde.SimSpec) -> bool:
    return (spec.sigma.kind == "identity" and spec.drift.kind == "zero"
            and "_dilation" not in spec.sigma.params)


def _bm_scale(spec) -> float:
    return float(spec.sigma.p("scale", 1.0))


def _heat_bump(f: ScalarField, var: float, x) -> np.ndarray:
    # E f(x + sqrt(var) Z) for a Gaussian bump or a constant
    if f.kind == "constant":
        return np.full(np.asarray(x).shape[:-1], float(f.p("value", 1.0)))
    if f.kind != "gaussian_bump":
        raise EstimatorError(f"no heat-kernel formula for {f.kind!r}")
    c = np.asarray(f.p("center", [0.0] * f.dim), float)
    w2 = float(f.p("width", 1.0)) ** 2
    a = float(f.p("amplitude", 1.0))
    s2 = w2 + var
    return a * (w2 / s2) ** (f.dim / 2) * np.exp(-np.sum((x - c) ** 2, axis=-1) / (2 * s2))


def caloric_values(spec: sde.SimSpec, f: ScalarField, T: float, points, *,
                   n_mc: int | None = None, threads: int = 1):
    """``u(t, x) = E_{t,x} f(x_T)`` at space-time ``points``; analytic for Brownian motion.

    Returns ``(values, std_errors)``.
    """
    pts = [(float(t), np.asarray(x, float)) for t, x in points]
    if _is_bm(spec) and f.kind in ("gaussian_bump", "constant", "halfspace_indicator"):
        s2 = _bm_scale(spec) ** 2
        vals = []
        for t, x in pts:
            var = s2 * (T - t)
            if f.kind == "halfspace_indicator":
                off = float(f.p("offset", 0.0))
                vals.append(0.5 * special.erfc(-(x[0] - off) / math.sqrt(2 * var)) if var > 0
                            else float(x[0] > off))
            else:
                vals.append(float(_heat_bump(f, var, x[None])[0]))
        return np.array(vals), np.zeros(len(vals))
    n = n_mc or spec.n_paths
    vals, errs = [], []
    for i, (t, x) in enumerate(pts):
        sp = spec.replace(t0=t, x0=tuple(x), horizon=T - t, n_paths=n)
        obs = _Terminal(sp, f)
        stats = sde.run(sp, obs, threads=threads)
        r = EstimateReport.from_samples(obs.values[~stats.diverged])
        vals.append(r.value)
        errs.append(r.std_error)
    return np.array(vals), np.array(errs)


class _Terminal:
    def __init__(self, spec, f):
        self.spec, self.f = spec, f
        self.values = np.zeros(spec.n_paths)

    def observe(self, k, t, x, idx, chunk):
        if k == self.spec.n_steps:
            self.values[idx] = _scalar_eval(self.f, t, x)
        return None


@dataclass
class HarnackReport:
    value: float
    per_basis: list
    excluded: int
    argmax: dict
    fingerprint: dict

    def to_dict(self):
        return dataclasses.asdict(self)


def bump_basis(d: int, centers: Sequence, width: float) -> list[ScalarField]:
    return [ScalarField("gaussian_bump", d, {"center": list(map(float, c)), "width": width})
            for c in centers]


def harnack_ratio(spec: sde.SimSpec, R: float, basis: Sequence[ScalarField], *,
                  T: float | None = None, n_probe: int = 9, origin=None,
                  threads: int = 1) -> HarnackReport:
    """``sup`` over the basis and ``|x - origin| <= R/2`` of ``u(R^2, origin) / u(0, x)``.

    ``u(t, x) = E_{t,x} f(x_T)`` with ``T = 2 R^2`` by default; probes ``x``
    are a ``n_probe``-per-axis lattice of the ball.  Probes with ``u(0, x) = 0``
    are excluded and counted.
    """
    d = spec.d
    T = 2 * R * R if T is None else T
    o = np.zeros(d) if origin is None else np.asarray(origin, float)
    axis = np.linspace(-R / 2, R / 2, n_probe)
    lat = np.stack(np.meshgrid(*([axis] * d), indexing="ij"), -1).reshape(-1, d)
    lat = o + lat[np.sum(lat ** 2, axis=1) <= (R / 2) ** 2 + 1e-12]
    best, arg, excluded, per = -math.inf, {}, 0, []
    for j, f in enumerate(basis):
        top, _ = caloric_values(spec, f, T, [(R * R, o)], threads=threads)
        low, _ = caloric_values(spec, f, T, [(0.0, x) for x in lat], threads=threads)
        good = low > 0
        excluded += int(np.count_nonzero(~good))
        if not np.any(good):
            per.append(float("nan"))
            continue
        ratio = top[0] / low[good]
        i = int(np.argmax(ratio))
        per.append(float(ratio[i]))
        if ratio[i] > best:
            best = float(ratio[i])
            arg = {"basis": j, "x": lat[good][i].tolist()}
    return HarnackReport(best, per, excluded, arg, spec.fingerprint(R=R, T=T))


@dataclass
class OscillationReport:
    radii: list
    oscillation: list
    alpha_hat: float
    r2: float
    fingerprint: dict

    def to_dict(self):
        return dataclasses.asdict(self)


def caloric_oscillation(spec: sde.SimSpec, f: ScalarField, radii: Sequence[float], *,
                        T: float = 1.0, n_sphere: int = 8, n_times: int = 3,
                        origin=None, threads: int = 1) -> OscillationReport:
    """Oscillation of ``u(t, x) = E_{t,x} f(x_T)`` over ``C_r(0, origin)`` and its decay exponent.

    ``u`` is probed at ``n_times`` times in ``[0, r^2)`` and, at each, on the
    centre plus ``n_sphere`` points of the sphere ``|x| = r`` (fewer in
    d = 1).  ``alpha_hat`` is the slope of ``log osc`` against ``log r``.
    """
    d = spec.d
    o = np.zeros(d) if origin is None else np.asarray(origin, float)
    if d == 1:
        dirs = np.array([[1.0], [-1.0]])
    else:
        ang = 2 * math.pi * np.arange(n_sphere) / n_sphere
        dirs = np.zeros((n_sphere, d))
        dirs[:, 0], dirs[:, 1] = np.cos(ang), np.sin(ang)
    osc = []
    for r in radii:
        pts = []
        for tt in np.linspace(0.0, r * r, n_times, endpoint=False):
            pts.append((tt, o))
            pts += [(tt, o + r * u) for u in dirs]
        v, _ = caloric_values(spec, f, T, pts, threads=threads)
        osc.append(float(v.max() - v.min()))
    pos = [i for i, w in enumerate(osc) if w > 0]
    if len(pos) >= 2:
        a, _, r2 = loglog_slope([radii[i] for i in pos], [osc[i] for i in pos])
    else:
        a, r2 = float("nan"), float("nan")
    return OscillationReport([float(r) for r in radii], osc, a, r2, spec.fingerprint(T=T))


# ---------------------------------------------------------------------------
# resolvent norms

@dataclass
class ResolventReport:
    lam: list
    ratio: list
    slope: float
    r2: float
    fingerprint: dict

    def to_dict(self):
        return dataclasses.asdict(self)


def resolvent_norm_scan(spec: sde.SimSpec, f: ScalarField, lams: Sequence[float],
                        norm: MixedNormSpec, *, half_width: float = 1.0, n_anchor: int = 9,
                        paths_per_anchor: int = 400, horizon_factor: float = 12.0,
                        threads: int = 1) -> ResolventReport:
    """``||R_lam f|| / ||f||`` over the spatial box ``x0 + [-w, w]^d``.

    ``R_lam f(x) = E_x int_0^inf e^{-lam s} f(x_s) ds`` (time-independent
    coefficients assumed) is estimated on an anchor lattice with
    ``paths_per_anchor`` paths each; both functions are treated as static
    grid functions over the box and normed with the spatial exponent of
    ``norm`` (the time exponent is immaterial for static grids).
    """
    d = spec.d
    x0 = np.asarray(spec.x0, float)
    axis = np.linspace(-half_width, half_width, n_anchor, endpoint=False) + half_width / n_anchor
    lat = np.stack(np.meshgrid(*([axis] * d), indexing="ij"), -1).reshape(-1, d) + x0
    starts = np.repeat(lat, paths_per_anchor, axis=0)
    fvals = _scalar_eval(f, spec.t0, lat).reshape((1,) + (n_anchor,) * d)
    gf = GridFunction(np.abs(fvals), spec.t0, spec.t0 + 1, tuple(x0 - half_width),
                      tuple(x0 + half_width), static=True)
    cyl = NormCylinder(spec.t0, tuple(x0), half_width)
    nf = normalized_norm(gf, norm, cyl)
    ratios = []
    for lam in lams:
        sp = spec.replace(n_paths=lat.shape[0] * paths_per_anchor,
                          horizon=horizon_factor / float(lam))
        obs = _Integrals(sp, [f], float(lam), None)
        stats = sde.run(sp, obs, starts=starts, threads=threads)
        v = np.where(stats.diverged, 0.0, obs.values[0]).reshape(lat.shape[0], paths_per_anchor)
        rf = v.mean(axis=1).reshape((1,) + (n_anchor,) * d)
        ratios.append(normalized_norm(gf.with_values(np.abs(rf)), norm, cyl) / nf)
    slope, _, r2 = loglog_slope(lams, ratios)
    return ResolventReport([float(v) for v in lams], ratios, slope, r2,
                           spec.fingerprint(half_width=half_width, n_anchor=n_anchor))


# ---------------------------------------------------------------------------
# fitted constants

@dataclass
class RegularityConstants:
    """Empirical surrogates of the regularity constants, with fit diagnostics.

    ``sb0_hat`` is a drift-size threshold below which the estimates stay
    stable, ``sp0_hat`` the exit probability floor ``1 - P(tau' >= rho^2)``,
    ``gamma_hat`` the occupation exponent and ``d0_hat`` the integrability
    exponent of the Green function.
    """

    sb0_hat: float | None = None
    sp0_hat: float | None = None
    gamma_hat: float | None = None
    d0_hat: float | None = None
    diagnostics: dict = field(default_factory=dict)

    def violations(self, d: int) -> list[str]:
        out = []
        if self.sp0_hat is not None and not 0 < self.sp0_hat < 1:
            out.append("sp0_hat outside (0, 1)")
        if self.gamma_hat is not None and not 0 < self.gamma_hat <= 1:
            out.append("gamma_hat outside (0, 1]")
        if self.d0_hat is not None and not d / 2 < self.d0_hat < d:
            out.append("d0_hat outside (d/2, d)")
        return out

    def to_dict(self):
        return dataclasses.asdict(self)


def d0_from_integrability(s_max: float) -> float:
    """Exponent ``d0`` with ``d0/(d0-1) = s_max``, the largest stable Green integrability."""
    if not s_max > 1:
        raise EstimatorError("integrability exponent must exceed 1")
    return s_max / (s_max - 1)
