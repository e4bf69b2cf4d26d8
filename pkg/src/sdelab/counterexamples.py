"""Refinement diagnostics for drifts without solutions or without uniqueness.

Nonexistence is observed through path functionals that every solution
keeps finite: under mesh refinement their Monte Carlo means grow without
bound.  Nonuniqueness is observed through the split between paths started
just right and just left of the origin, which persists as the offset
shrinks.  Verdicts are pure functions of the stored ladders.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .fields import MatrixField, VectorField
from .reports import dumps, loglog_slope, write_curve
from .sde import DriftPolicy, SimSpec, path_functional, run


class DiagnosticError(ValueError):
    pass


@dataclass
class DiagnosticVerdict:
    """``ladder`` rows are ``(parameter, value, std_error)``."""

    kind: str                  # divergence | gap | invariance | threshold
    ladder: list
    trend: dict
    passed: bool
    criterion: dict
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "ladder": self.ladder, "trend": self.trend,
                "passed": self.passed, "criterion": self.criterion, "extra": self.extra}

    def write_json(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(dumps(self.to_dict()))

    def write_csv(self, path) -> None:
        write_curve(path, ["parameter", "value", "std_error"], self.ladder)


def refinement_trend(hs, values) -> dict:
    """Halving ratios, increments and fitted growth laws of a refinement ladder."""
    hs = np.asarray(hs, float)
    v = np.asarray(values, float)
    order = np.argsort(-hs)
    hs, v = hs[order], v[order]
    ratios = (v[1:] / v[:-1]).tolist() if np.all(v[:-1] > 0) else []
    incr = np.diff(v).tolist()
    out = {"ratios": ratios, "increments": incr}
    if len(v) >= 2 and np.all(v > 0):
        slope, _, r2 = loglog_slope(1 / hs, v)
        out["power_exponent"] = slope
        out["power_r2"] = r2
        A = np.vstack([np.log2(1 / hs), np.ones_like(hs)]).T
        coef, *_ = np.linalg.lstsq(A, v, rcond=None)
        out["per_halving_increment"] = float(coef[0])
    if len(incr) >= 2 and incr[-2] != 0:
        out["increment_ratio"] = incr[-1] / incr[-2]
    return out


def divergence_fires(ratios, min_ratio: float = 1.5, rungs: int = 4) -> bool:
    """Every one of the last ``rungs`` halving ratios reaches ``min_ratio``."""
    r = list(ratios)
    return len(r) >= rungs and all(x >= min_ratio for x in r[-rungs:])


def bounded(ratios, max_ratio: float = 1.1, rungs: int = 2) -> bool:
    r = list(ratios)
    return len(r) >= rungs and all(x <= max_ratio for x in r[-rungs:])


def _ladder(spec: SimSpec, functional: dict, h_ladder, threads) -> list:
    rows = []
    for h in sorted(map(float, h_ladder), reverse=True):
        vals, stats, _ = path_functional(spec.replace(h=h), functional, threads=threads)
        ok = ~stats.diverged
        v = vals[ok]
        rows.append([h, float(v.mean()), float(v.std(ddof=1) / math.sqrt(max(v.size, 1)))])
    return rows


def nonexistence_diagnostic(alpha: float = 0.5, beta: float = 0.5, h_ladder: Sequence[float] = (),
                            T: float = 1.0, *, d: int = 2, eps: float = 1.0, n_paths: int = 10000,
                            seed: int = 0, control: bool = False, min_ratio: float = 1.5,
                            rungs: int = 4, policy: DriftPolicy = DriftPolicy(),
                            threads: int = 1) -> DiagnosticVerdict:
    """Ladder of ``E int_0^T s^-alpha |x_s|^-beta ds`` from the origin under the attracting drift.

    ``control=True`` replaces the drift by zero.  The diagnostic fires when
    every one of the last ``rungs`` halving ratios reaches ``min_ratio``.
    """
    if abs(alpha + beta - 1) > 1e-12:
        raise DiagnosticError("need alpha + beta = 1")
    if len(h_ladder) < rungs + 1:
        raise DiagnosticError(f"need at least {rungs + 1} step sizes")
    drift = VectorField("zero", d) if control else \
        VectorField("example_3_22_1", d, {"alpha": alpha, "beta": beta, "eps": eps})
    spec = SimSpec(MatrixField("identity", d), drift, (0.0,) * d, horizon=T, h=max(h_ladder),
                   n_paths=n_paths, seed=seed, policy=policy)
    rows = _ladder(spec, {"name": "weighted_singular", "alpha": alpha, "beta": beta}, h_ladder, threads)
    trend = refinement_trend([r[0] for r in rows], [r[1] for r in rows])
    fired = divergence_fires(trend["ratios"], min_ratio, rungs)
    return DiagnosticVerdict("divergence", rows, trend, fired,
                             {"min_ratio": min_ratio, "rungs": rungs},
                             {"alpha": alpha, "beta": beta, "eps": eps, "d": d, "T": T,
                              "control": control, "spec": spec.to_dict()})


def eps_time_scale(eps: float, alpha: float) -> float:
    """``c`` with ``eps = c^alpha``: the parabolic dilation by ``c`` maps eps to one."""
    return eps ** (1.0 / alpha)


def eps_invariance(eps_list: Sequence[float] = (0.25, 1.0), alpha: float = 0.5,
                   h_ladder: Sequence[float] = (), T: float = 1.0, **kw) -> DiagnosticVerdict:
    """Run the nonexistence diagnostic per ``eps`` on the dilated time window.

    With ``c = eps^(1/alpha)`` the map ``x_t -> x_{c^2 t} / c`` takes the
    eps-problem on ``[0, c^2 T]`` with step ``c^2 h`` to the eps = 1 problem
    on ``[0, T]`` with step ``h``, path by path under a shared seed.  The
    functional picks up the constant factor ``c^(1 - alpha)``, so
    ``rescaled`` ladders coincide and the halving ratios are identical.
    The verdict passes when all divergence verdicts agree.
    """
    rows, verdicts, rescaled = [], {}, {}
    for eps in eps_list:
        c = eps_time_scale(eps, alpha)
        if c * c * T > 1 + 1e-12:
            raise DiagnosticError("the drift switches off at t = 1, so the dilation needs c^2 T <= 1")
        v = nonexistence_diagnostic(alpha, 1 - alpha, [h * c * c for h in h_ladder], T * c * c,
                                    eps=eps, **kw)
        verdicts[str(eps)] = v.to_dict()
        rescaled[str(eps)] = [r[1] / c ** (1 - alpha) for r in v.ladder]
        rows.append([eps, float(v.passed), float(v.trend.get("per_halving_increment", np.nan))])
    flags = {v["passed"] for v in verdicts.values()}
    return DiagnosticVerdict("invariance", rows, {"rescaled": rescaled}, len(flags) == 1,
                             {"agree": True}, {"verdicts": verdicts})


class _SideObserver:
    """Running min and max of ``x^1`` over grid times ``t_start < t <= t_end``.

    ``snapshots`` records the running min at the listed times.
    """

    def __init__(self, n, t_start, t_end, offset=None, snapshots=()):
        self.lo = np.full(n, np.inf)
        self.hi = np.full(n, -np.inf)
        self.t_start = t_start
        self.t_end = t_end
        self.offset = offset   # callable t -> added curve
        self.snap_t = sorted(snapshots)
        self.snaps = {s: np.full(n, np.inf) for s in self.snap_t}

    def observe(self, k, t, x, idx, chunk):
        if k == 0:
            return None
        if t > self.t_end + 1e-12:
            return np.ones(len(idx), dtype=bool)
        v = x[:, 0] + (0.0 if self.offset is None else self.offset(t - self.t_start))
        self.lo[idx] = np.minimum(self.lo[idx], v)
        self.hi[idx] = np.maximum(self.hi[idx], v)
        for s in self.snap_t:
            if t - self.t_start <= s + 1e-12:
                self.snaps[s][idx] = self.lo[idx]
        return None


def pilot_t0(q: float = 1.5, target: float = 0.75, ladder=(1.0, 0.5, 0.2, 0.1, 0.05, 0.02), *,
             h: float = 1e-3, n_paths: int = 20000, seed: int = 0,
             threads: int = 1) -> tuple[float, list]:
    """Largest ``t0`` in ``ladder`` with ``P(inf_{0<t<=t0} (q/(q-1) t^(1-1/q) + w_t) >= 0)``
    above ``target`` by two std errors.  One grid run serves the whole ladder."""
    t_max = max(ladder)
    spec = SimSpec(MatrixField("identity", 1), VectorField("zero", 1), (0.0,), horizon=t_max,
                   h=h, n_paths=n_paths, seed=seed)
    k = q / (q - 1)
    obs = _SideObserver(n_paths, 0.0, t_max, lambda t: k * t ** (1 - 1 / q), snapshots=ladder)
    run(spec, obs, threads=threads)
    rows, best = [], None
    for t0 in sorted(ladder, reverse=True):
        p = float(np.mean(obs.snaps[t0] >= 0))
        se = math.sqrt(p * (1 - p) / n_paths)
        rows.append([t0, p, se])
        if best is None and p - 2 * se >= target:
            best = t0
    if best is None:
        raise DiagnosticError(f"no t0 in {ladder} reaches event probability {target}")
    return best, rows


def side_probabilities(q: float, delta: float, t0: float, *, control: bool = False, h: float = 1e-3,
                       n_paths: int = 20000, seed: int = 0, mirror: bool = False,
                       threads: int = 1) -> dict:
    """``p_plus = P(inf_{0<t<=t0} x^1 >= 0 | x^1_0 = delta)`` and ``p_minus`` from ``-delta``.

    ``mirror=True`` drives both with negated noise.  Also reports the
    probabilities of staying nonpositive.  The clock starts at ``t = h``: the
    drift blows up at ``t = 0`` and a left-point step from zero would drop
    its integral ``q/(q-1) h^(1-1/q)`` over the first step entirely.
    """
    drift = VectorField("zero", 1) if control else VectorField("example_3_22_2", 1, {"q": q})
    sigma = MatrixField("identity", 1, {"scale": -1.0 if mirror else 1.0})
    out = {}
    for name, x0 in (("plus", delta), ("minus", -delta)):
        spec = SimSpec(sigma, drift, (x0,), t0=h, horizon=t0, h=h, n_paths=n_paths, seed=seed)
        obs = _SideObserver(n_paths, h, h + t0)
        run(spec, obs, threads=threads)
        out[f"p_{name}"] = float(np.mean(obs.lo >= 0))
        out[f"stay_nonpositive_{name}"] = float(np.mean(obs.hi <= 0))
    out["n_paths"] = n_paths
    return out


def nonuniqueness_gap(q: float = 1.5, delta_ladder: Sequence[float] = (1e-1, 3e-2, 1e-2, 3e-3, 1e-3),
                      t0: float | None = None, *, control: bool = False, h: float = 1e-3,
                      n_paths: int = 20000, seed: int = 0, min_gap: float = 0.45,
                      threads: int = 1) -> DiagnosticVerdict:
    """Gap ``p_plus - p_minus`` extrapolated linearly in ``delta`` to zero.

    Passes when the extrapolated gap minus three standard errors reaches
    ``min_gap``.  Without ``t0`` a pilot run sizes it first.
    """
    if not 1 < q < 2:
        raise DiagnosticError("need q in (1, 2)")
    pilot = None
    if t0 is None:
        t0, pilot = pilot_t0(q, h=h, n_paths=n_paths, seed=seed + 1, threads=threads)
    rows, detail = [], []
    for delta in delta_ladder:
        sp = side_probabilities(q, delta, t0, control=control, h=h, n_paths=n_paths, seed=seed,
                                threads=threads)
        gap = sp["p_plus"] - sp["p_minus"]
        var = (sp["p_plus"] * (1 - sp["p_plus"]) + sp["p_minus"] * (1 - sp["p_minus"])) / n_paths
        rows.append([float(delta), gap, math.sqrt(var)])
        detail.append(sp)
    x = np.array([r[0] for r in rows])
    y = np.array([r[1] for r in rows])
    se = np.maximum(np.array([r[2] for r in rows]), 1.0 / n_paths)
    W = 1 / se ** 2
    X = np.vstack([np.ones_like(x), x]).T
    cov = np.linalg.inv(X.T @ (X * W[:, None]))
    coef = cov @ (X.T @ (W * y))
    g0, g0_se = float(coef[0]), float(math.sqrt(cov[0, 0]))
    passed = g0 - 3 * g0_se >= min_gap
    return DiagnosticVerdict("gap", rows, {"gap_at_zero": g0, "gap_se": g0_se, "slope": float(coef[1])},
                             passed, {"min_gap": min_gap, "sigmas": 3},
                             {"q": q, "t0": t0, "h": h, "control": control, "pilot": pilot,
                              "sides": detail})


def radial_drift_threshold(eps_ladder: Sequence[float] = (1.0, 0.05), h_ladder: Sequence[float] = (),
                           T: float = 1.0, *, eps_small: float = 0.05, n_paths: int = 5000,
                           seed: int = 0, max_ratio: float = 1.1, min_ratio: float = 1.5,
                           policy: DriftPolicy = DriftPolicy(), threads: int = 1) -> DiagnosticVerdict:
    """Ladder of ``E int_0^T |b(x_s)| ds`` for ``b = -eps d x / |x|^2``, ``sigma = sqrt2 I``, ``d = 3``.

    Each eps is classified ``bounded`` (last two halving ratios at most
    ``max_ratio``), ``divergent`` (last four at least ``min_ratio``) or
    ``growing`` (neither).  The verdict passes when every eps at most
    ``eps_small`` is bounded and every larger eps is not.
    """
    d = 3
    rows, per = [], {}
    for eps in eps_ladder:
        if eps == 0:
            drift = VectorField("zero", d)
        else:
            drift = VectorField("example_12_21_01", d, {"c": eps * d})
        spec = SimSpec(MatrixField("identity", d, {"scale": math.sqrt(2)}), drift, (0.0,) * d,
                       horizon=T, h=max(h_ladder), n_paths=n_paths, seed=seed, policy=policy)
        lad = _ladder(spec, {"name": "drift_integral"}, h_ladder, threads)
        vals = [r[1] for r in lad]
        trend = refinement_trend([r[0] for r in lad], vals) if all(v > 0 for v in vals) else \
            {"ratios": [], "increments": np.diff(vals).tolist()}
        if all(v == 0 for v in vals) or bounded(trend["ratios"], max_ratio):
            label = "bounded"
        elif divergence_fires(trend["ratios"], min_ratio):
            label = "divergent"
        else:
            label = "growing"
        per[str(eps)] = {"ladder": lad, "trend": trend, "label": label}
        rows.extend([[eps, r[0], r[1], r[2]] for r in lad])
    ok = all((per[str(e)]["label"] == "bounded") == (e <= eps_small) for e in eps_ladder)
    return DiagnosticVerdict("threshold", rows, {k: v["label"] for k, v in per.items()}, ok,
                             {"eps_small": eps_small, "max_ratio": max_ratio, "min_ratio": min_ratio},
                             {"per_eps": per})
