"""Command-line entry point: ``sdelab run <subcommand> --config cfg.json``.

Every run writes ``report.json`` (and CSV curves when the operation emits
ladders) to the output directory.  The report's ``payload`` is a pure
function of the config; wall-clock data lives under ``meta``.

Exit codes: 0 success, 2 a diagnostic or tolerance check failed, 1 error.
``SDELAB_THREADS`` and ``SDELAB_OUT_DIR`` override the thread budget and
output directory when the flags are absent.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import jsonschema
import numpy as np

from . import chaos, counterexamples, estimators, fields, gehring, green, morrey, sde
from .reports import digest, dumps, write_curve

# ---------------------------------------------------------------------------
# schema fragments

NUM = {"type": "number"}
POS = {"type": "number", "exclusiveMinimum": 0}
NONNEG = {"type": "number", "minimum": 0}
INT1 = {"type": "integer", "minimum": 1}
SEED = {"type": "integer", "minimum": 0}
EXPONENT = {"anyOf": [{"type": "number", "minimum": 1}, {"enum": ["inf"]}]}
VEC = {"type": "array", "items": NUM, "minItems": 1}
POS_LIST = {"type": "array", "items": POS, "minItems": 1}
FIELD = {"type": "object", "required": ["kind", "dim"], "additionalProperties": False,
         "properties": {"kind": {"type": "string"}, "dim": INT1, "params": {"type": "object"}}}
NORM = {"type": "object", "required": ["q", "p"], "additionalProperties": False,
        "properties": {"q": EXPONENT, "p": EXPONENT,
                       "order": {"enum": ["time_outer", "space_outer", "bracket"]},
                       "beta": NONNEG,
                       "rho_max": {"anyOf": [POS, {"enum": ["inf"]}]}}}
POLICY = {"type": "object", "additionalProperties": False,
          "properties": {"mode": {"enum": ["cap_displacement", "floor_radius", "none"]},
                         "kappa_cap": POS, "r_floor": POS}}
SIM = {"type": "object", "required": ["sigma", "drift", "x0"], "additionalProperties": False,
       "properties": {"sigma": FIELD, "drift": FIELD, "x0": VEC, "t0": NUM, "horizon": POS,
                      "h": POS, "n_paths": INT1, "seed": SEED, "policy": POLICY}}
GRID = {"type": "object", "additionalProperties": False,
        "properties": {"t_range": {"type": "array", "items": NUM, "minItems": 2, "maxItems": 2},
                       "x_lo": VEC, "x_hi": VEC, "n_t": INT1, "n_x": INT1,
                       "static": {"type": "boolean"}}}
CYL = {"type": "object", "required": ["t", "x", "rho"], "additionalProperties": False,
       "properties": {"t": NUM, "x": VEC, "rho": POS}}


class ConfigError(ValueError):
    pass


def _inf(v):
    return math.inf if v == "inf" else v


def make_field(desc: dict):
    cats = {r["kind"]: r["category"] for r in fields.catalog()}
    kind = desc["kind"]
    cls = {"drift": fields.VectorField, "sigma": fields.MatrixField,
           "scalar": fields.ScalarField}.get(cats.get(kind))
    if cls is None:
        raise ConfigError(f"unknown field kind {kind!r}")
    return cls.from_dict(desc)


def make_sim(desc: dict) -> sde.SimSpec:
    kw = {k: v for k, v in desc.items() if k not in ("sigma", "drift", "policy")}
    kw["x0"] = tuple(desc["x0"])
    return sde.SimSpec(make_field(desc["sigma"]), make_field(desc["drift"]),
                       policy=sde.DriftPolicy(**desc.get("policy", {})), **kw)


def make_norm(desc: dict) -> morrey.MixedNormSpec:
    kw = dict(desc)
    for k in ("q", "p", "rho_max"):
        if k in kw:
            kw[k] = _inf(kw[k])
    return morrey.MixedNormSpec(**kw)


def _rel(a, b):
    return abs(a - b) / abs(b) if b else abs(a - b)


@dataclass
class Outcome:
    payload: dict
    passed: bool | None = None
    curves: tuple = ()   # (file name, header, rows)
    batch: object = None  # stored paths for the trajectory dump


@dataclass
class Command:
    properties: dict
    required: tuple
    handler: Callable
    help: str

    @property
    def schema(self) -> dict:
        props = dict(self.properties)
        props["subcommand"] = {"type": "string"}
        props["threads"] = INT1
        return {"type": "object", "properties": props, "required": list(self.required),
                "additionalProperties": False}


COMMANDS: dict[str, Command] = {}


def command(name, properties, required=(), help=""):
    def deco(fn):
        COMMANDS[name] = Command(properties, tuple(required), fn, help or (fn.__doc__ or "").strip())
        return fn
    return deco


# ---------------------------------------------------------------------------
# morrey

@command("tightness", {"mu": NUM, "q": EXPONENT, "p": EXPONENT}, ["mu", "q", "p"])
def _tightness(cfg, threads):
    """Tightness exponent nu = 1 - mu/p - 1/q."""
    t = morrey.tightness(cfg["mu"], _inf(cfg["q"]), _inf(cfg["p"]))
    return Outcome({"nu": t.nu, "tight": t.tight})


@command("morrey-norm", {"field": FIELD, "grid": GRID, "spec": NORM, "region": CYL,
                         "search": {"type": "object"},
                         "expect": {"type": "object", "properties": {
                             "value": NUM, "rtol": POS, "target": {"enum": ["morrey", "normalized"]}}}},
         ["field", "spec"])
def _morrey_norm(cfg, threads):
    """Morrey norm of a catalog field, optionally the normalized norm on one cylinder."""
    f = make_field(cfg["field"])
    g = cfg.get("grid", {})
    gf = morrey.GridFunction.from_field(f, t_range=tuple(g.get("t_range", (0.0, 1.0))),
                                        x_lo=g.get("x_lo"), x_hi=g.get("x_hi"),
                                        n_t=g.get("n_t", 16), n_x=g.get("n_x", 64),
                                        static=g.get("static", False))
    spec = make_norm(cfg["spec"])
    rep = morrey.morrey_norm(gf, spec, morrey.SearchPolicy(**cfg.get("search", {})))
    out = {"value": rep.value, "report": rep.to_dict()}
    if "region" in cfg:
        r = cfg["region"]
        out["normalized"] = morrey.normalized_norm(gf, spec, morrey.Cylinder(r["t"], tuple(r["x"]), r["rho"]))
    passed = None
    if "expect" in cfg:
        e = cfg["expect"]
        got = out["normalized"] if e.get("target") == "normalized" else out["value"]
        out["relative_error"] = _rel(got, e["value"])
        passed = out["relative_error"] <= e.get("rtol", 0.01)
    return Outcome(out, passed, (("ladder.csv", ["rho", "value"], rep.ladder),))


HATB = {"type": "object", "additionalProperties": False,
        "properties": {"cells_t": INT1, "cells_x": INT1, "window_t": POS, "window_x": POS,
                       "levels": {"type": "integer", "minimum": 0}, "focus": {"type": "array"}}}


@command("hat-b", {"drifts": {"type": "array", "items": FIELD, "minItems": 1}, "spec": NORM,
                   "rho_b": POS, "cfg": HATB, "dilations": POS_LIST, "rtol": POS},
         ["drifts", "spec", "rho_b"])
def _hat_b(cfg, threads):
    """hat_b per drift, with the dilation covariance check for each factor c."""
    spec = make_norm(cfg["spec"])
    hc = dict(cfg.get("cfg", {}))
    if "focus" in hc:
        hc["focus"] = tuple((float(t), None if x is None else tuple(x)) for t, x in hc["focus"])
    hcfg = morrey.HatBConfig(**hc)
    rho = cfg["rho_b"]
    rows, table, ok = [], [], True
    for desc in cfg["drifts"]:
        b = make_field(desc)
        base = morrey.hat_b(b, spec, rho, hcfg)
        entry = {"drift": desc, "hat_b": base.value, "ladder": base.ladder, "dilations": []}
        for c in cfg.get("dilations", []):
            lhs = morrey.hat_b(fields.parabolic_dilate(b, c), spec, rho, hcfg).value
            rhs = morrey.hat_b(b, spec, c * rho, hcfg).value
            rel = _rel(lhs, rhs)
            ok &= rel <= cfg.get("rtol", 0.03)
            entry["dilations"].append({"c": c, "dilated": lhs, "rescaled": rhs, "relative_error": rel})
            rows.append([desc["kind"], c, lhs, rhs, rel])
        table.append(entry)
    passed = ok if cfg.get("dilations") else None
    return Outcome({"drifts": table}, passed,
                   (("dilation.csv", ["drift", "c", "dilated", "rescaled", "relative_error"], rows),))


# ---------------------------------------------------------------------------
# sde and estimators

@command("exit-mean", {"sim": SIM, "radius": POS, "T_ladder": POS_LIST, "small_ladder": POS_LIST,
                       "boundary": {"enum": ["grid", "bridge"]}, "min_count": INT1,
                       "expect": {"type": "object", "properties": {
                           "mean": NUM, "rtol": POS, "min_r2": NUM}}},
         ["sim", "radius"])
def _exit_mean(cfg, threads):
    """Mean exit time and survival tail from a ball around x0."""
    spec = make_sim(cfg["sim"])
    rep = estimators.exit_tail(spec, cfg["radius"], cfg.get("T_ladder", [0.5, 1.0, 1.5, 2.0, 2.5, 3.0]),
                               small_ladder=cfg.get("small_ladder"), min_count=cfg.get("min_count", 10),
                               boundary=cfg.get("boundary", "bridge"), threads=threads)
    out = rep.to_dict()
    passed = None
    if "expect" in cfg:
        e = cfg["expect"]
        checks = []
        if "mean" in e:
            out["relative_error"] = _rel(rep.mean_exit.value, e["mean"])
            checks.append(out["relative_error"] <= e.get("rtol", 0.02))
        if "min_r2" in e:
            checks.append(rep.r2 >= e["min_r2"])
        passed = all(checks)
    return Outcome(out, passed, (("survival.csv", ["T", "survival", "std_error", "count"],
                                  list(zip(rep.T, rep.survival, rep.std_errors, rep.counts))),))


COMMANDS["exit-tail"] = COMMANDS["exit-mean"]


@command("simulate", {"sim": SIM, "stride": INT1}, ["sim"])
def _simulate(cfg, threads):
    """Simulate and dump trajectories in the binary layout."""
    spec = make_sim(cfg["sim"])
    batch = sde.simulate(spec, store_stride=cfg.get("stride", 1), threads=threads)
    final = batch.states[:, -1]
    div = batch.stats.diverged
    return Outcome({"fingerprint": spec.fingerprint(), "final_mean": final.mean(axis=0),
                    "final_std": final.std(axis=0), "records": int(batch.states.shape[1]),
                    "diverged": 0 if div is None else int(div.sum())}, batch=batch)


@command("potential-yukawa", {"sim": SIM, "lam": POS, "functions": {"type": "array", "items": FIELD,
                                                                   "minItems": 1},
                              "z_max": POS}, ["sim", "lam", "functions"])
def _potential_yukawa(cfg, threads):
    """Resolvent potentials of d=3 Brownian motion against the Yukawa-kernel quadrature."""
    spec = make_sim(cfg["sim"])
    fs = [make_field(f) for f in cfg["functions"]]
    lam = cfg["lam"]
    reps = estimators.potentials(spec, fs, lam, threads=threads)
    scale = float(spec.sigma.p("scale", 1.0))
    rows = []
    for f, r in zip(fs, reps):
        oracle = estimators.yukawa_potential_bm(f, spec.x0, lam, scale)
        z = (r.value - oracle) / r.std_error
        rows.append([f.kind, r.value, r.std_error, oracle, z])
    zmax = max(abs(r[-1]) for r in rows)
    return Outcome({"rows": rows, "max_abs_z": zmax, "functions": cfg["functions"],
                    "fingerprint": spec.fingerprint(lam=lam)},
                   zmax <= cfg.get("z_max", 3.0),
                   (("potentials.csv", ["kind", "mc", "std_error", "oracle", "z"], rows),))


@command("moderated-drift", {"sim": SIM, "rho": POS, "anchors": {"type": "array", "minItems": 1}},
         ["sim", "rho", "anchors"])
def _moderated(cfg, threads):
    """Moderated drift over a list of anchors (t, x, y)."""
    spec = make_sim(cfg["sim"])
    anchors = [(a[0], tuple(a[1]), tuple(a[2])) for a in cfg["anchors"]]
    return Outcome(estimators.moderated_drift(spec, cfg["rho"], anchors, threads=threads).to_dict())


@command("laplace-exit", {"sim": SIM, "rho": POS, "lams": POS_LIST}, ["sim", "rho", "lams"])
def _laplace(cfg, threads):
    """Laplace transform of the cylinder exit time."""
    rep = estimators.laplace_exit(make_sim(cfg["sim"]), cfg["rho"], cfg["lams"], threads=threads)
    return Outcome(rep.to_dict(), None, (("laplace.csv", ["lam", "value", "std_error", "envelope"],
                                          list(zip(rep.lam, rep.value, rep.std_errors, rep.envelope))),))


@command("aleksandrov", {"sim": SIM, "rho": POS, "spec": NORM, "n_family": INT1, "seed": SEED,
                         "n_bumps": {"type": "integer", "minimum": 0}}, ["sim", "rho", "spec"])
def _aleksandrov(cfg, threads):
    """Potential over normalized norm for a random indicator family."""
    spec = make_sim(cfg["sim"])
    fam = estimators.random_indicator_family(spec.d, cfg["rho"], cfg.get("n_family", 8),
                                             cfg.get("seed", 0), spec.t0, spec.x0,
                                             cfg.get("n_bumps", 0))
    return Outcome(estimators.aleksandrov_ratio(spec, fam, cfg["rho"], make_norm(cfg["spec"]),
                                                threads=threads).to_dict())


@command("occupation", {"sim": SIM, "R": POS, "kappa": POS, "qs": POS_LIST, "s": NUM, "y": VEC},
         ["sim", "R", "kappa", "qs", "s"])
def _occupation(cfg, threads):
    """Occupation of centred balls of relative volume q and the fitted exponent."""
    spec = make_sim(cfg["sim"])
    y = cfg.get("y", list(spec.x0))
    fam = estimators.centered_ball_family(y, cfg["R"], cfg["qs"])
    rep = estimators.occupation_experiment(spec, cfg["R"], cfg["kappa"], fam, cfg["s"], y, threads=threads)
    return Outcome(rep.to_dict(), None, (("occupation.csv", ["q", "occupation", "std_error"],
                                          list(zip(rep.q, rep.occupation, rep.std_errors))),))


@command("harnack", {"sim": SIM, "R": POS, "centers": {"type": "array"}, "width": POS, "T": POS,
                     "n_probe": INT1}, ["sim", "R", "centers", "width"])
def _harnack(cfg, threads):
    """Harnack ratio over a bump basis."""
    spec = make_sim(cfg["sim"])
    basis = estimators.bump_basis(spec.d, cfg["centers"], cfg["width"])
    return Outcome(estimators.harnack_ratio(spec, cfg["R"], basis, T=cfg.get("T"),
                                            n_probe=cfg.get("n_probe", 9), threads=threads).to_dict())


@command("oscillation", {"sim": SIM, "f": FIELD, "radii": POS_LIST, "T": POS}, ["sim", "f", "radii"])
def _oscillation(cfg, threads):
    """Oscillation decay of a caloric function."""
    rep = estimators.caloric_oscillation(make_sim(cfg["sim"]), make_field(cfg["f"]), cfg["radii"],
                                         T=cfg.get("T", 1.0), threads=threads)
    return Outcome(rep.to_dict(), None, (("oscillation.csv", ["radius", "oscillation"],
                                          list(zip(rep.radii, rep.oscillation))),))


@command("resolvent-scan", {"sim": SIM, "f": FIELD, "lams": POS_LIST, "spec": NORM, "half_width": POS,
                            "n_anchor": INT1, "paths_per_anchor": INT1}, ["sim", "f", "lams", "spec"])
def _resolvent(cfg, threads):
    """Resolvent norm ratio against lambda and its log-log slope."""
    rep = estimators.resolvent_norm_scan(make_sim(cfg["sim"]), make_field(cfg["f"]), cfg["lams"],
                                         make_norm(cfg["spec"]), half_width=cfg.get("half_width", 1.0),
                                         n_anchor=cfg.get("n_anchor", 9),
                                         paths_per_anchor=cfg.get("paths_per_anchor", 400), threads=threads)
    return Outcome(rep.to_dict(), None, (("resolvent.csv", ["lam", "ratio"], list(zip(rep.lam, rep.ratio))),))


# ---------------------------------------------------------------------------
# green

GGRID = {"type": "object", "additionalProperties": False,
         "properties": {"t_max": POS, "n_t": INT1, "x_lo": VEC, "x_hi": VEC, "n_x": INT1}}


def interior_mask(shape, rings: int = 2, t_skip: int = 1) -> np.ndarray:
    """Cells with time index >= ``t_skip`` and at least ``rings`` cells from the spatial edge."""
    m = np.zeros(shape, bool)
    sl = (slice(t_skip, None),) + tuple(slice(rings, n - rings) for n in shape[1:])
    m[sl] = True
    return m


@command("green", {"sim": SIM, "lam": POS, "grid": GGRID, "z_max": POS, "rh_p": POS, "rh_n": INT1,
                   "rh_tol": POS, "mu": NONNEG, "eps": POS, "region": CYL},
         ["sim", "lam", "grid"])
def _green(cfg, threads):
    """Monte Carlo Green density against the analytic Brownian kernel, plus the structural scans."""
    spec = make_sim(cfg["sim"])
    gs = green.GreenGridSpec(**{k: tuple(v) if isinstance(v, list) else v for k, v in cfg["grid"].items()})
    lam = cfg["lam"]
    G = green.green_histogram(spec, lam, gs, threads=threads)
    scale = float(spec.sigma.p("scale", 1.0))
    A = green.analytic_green_bm(lam, gs, h=spec.h, scale=scale, x0=spec.x0)
    se = np.where(G.std_error > 0, G.std_error, np.inf)
    z = (G.density - A.density) / se
    inner = interior_mask(gs.shape)
    z_in = float(np.max(np.abs(z[inner])))
    z_all = float(np.max(np.abs(z[np.isfinite(z)])))
    # reverse-Hoelder stability under one refinement, on the same cylinders
    p = cfg.get("rh_p", 3.0)
    fam = green.dyadic_cylinders(gs, cfg.get("rh_n", 100))
    rh = green.reverse_holder_scan(G, p, fam)
    G2 = green.green_histogram(spec, lam, gs.refined(), threads=threads)
    rh2 = green.reverse_holder_scan(G2, p, fam)
    rh_rel = _rel(rh2.value, rh.value)
    # doubling: a constant density gives exactly 2^d
    const = morrey.GridFunction(np.ones((1,) + (gs.n_x,) * gs.d), 0.0, 1.0, gs.x_lo, gs.x_hi, static=True)
    balls = green.ball_family(gs)
    dbl_const = green.doubling_scan(const, balls).value
    dbl = green.doubling_scan(G.marginal_grid(), balls).value
    reg = cfg.get("region", {"t": 0.0, "x": [0.0] * gs.d, "rho": 1.0})
    neg = green.negative_power_integral(G, cfg.get("mu", 0.2),
                                        morrey.Cylinder(reg["t"], tuple(reg["x"]), reg["rho"]),
                                        cfg.get("eps", 0.05))
    checks = {"interior_z": z_in <= cfg.get("z_max", 4.0),
              "reverse_holder_finite": bool(np.isfinite(rh.value) and np.isfinite(rh2.value)),
              "reverse_holder_stable": rh_rel <= cfg.get("rh_tol", 0.1),
              "doubling_constant_exact": abs(dbl_const - 2.0 ** gs.d) <= 1e-9 * 2.0 ** gs.d,
              "negative_power_finite": bool(np.isfinite(neg.value)) and neg.zero_cells == 0}
    out = {"max_abs_z_interior": z_in, "max_abs_z_all": z_all, "mass": G.mass,
           "reverse_holder": rh.value, "reverse_holder_refined": rh2.value, "reverse_holder_rel": rh_rel,
           "doubling_constant": dbl_const, "doubling_marginal": dbl, "negative_power": neg.to_dict(),
           "checks": checks, "fingerprint": G.fingerprint}
    rows = [[i, float(G.density.flat[i]), float(G.std_error.flat[i]), float(A.density.flat[i]),
             float(z.flat[i])] for i in range(G.density.size)]
    return Outcome(out, all(checks.values()),
                   (("green_cells.csv", ["cell", "mc", "std_error", "analytic", "z"], rows),))


# ---------------------------------------------------------------------------
# chaos

@command("chaos-terms", {"f": FIELD, "x0": VEC, "t0": POS, "m_max": INT1, "sigma": FIELD,
                         "nodes": INT1, "n": INT1,
                         "expect": {"type": "object", "properties": {
                             "V": NUM, "S": {"type": "array", "items": NUM}, "rtol": POS,
                             "remainder_atol": NONNEG}}},
         ["f", "x0", "t0"])
def _chaos_terms(cfg, threads):
    """Chaos terms S_1..S_m, variance and remainders at (t0, x0)."""
    f = make_field(cfg["f"])
    sigma = make_field(cfg["sigma"]) if "sigma" in cfg else None
    x0 = tuple(cfg["x0"])
    tab = chaos.chaos_terms(f, x0, cfg["t0"], cfg.get("m_max", 3), sigma,
                            rule=chaos.SimplexRule(nodes=cfg.get("nodes", 8)),
                            grid=chaos.ChaosGrid.default(x0, cfg["t0"], cfg.get("n", 128)))
    out = tab.to_dict()
    passed = None
    if "expect" in cfg:
        e = cfg["expect"]
        rtol = e.get("rtol", 1e-3)
        checks = []
        if "V" in e:
            checks.append(_rel(tab.V, e["V"]) <= rtol)
        for got, want in zip(tab.S, e.get("S", [])):
            checks.append(_rel(got, want) <= rtol)
        if "remainder_atol" in e:
            checks.append(abs(tab.remainder[len(e.get("S", [])) - 1]) <= e["remainder_atol"] * max(abs(tab.V), 1))
        out["checks"] = checks
        passed = all(checks)
    rows = [[m + 1, s, r] for m, (s, r) in enumerate(zip(tab.S, tab.remainder))]
    return Outcome(out, passed, (("chaos.csv", ["m", "S", "remainder"], rows),))


@command("chaos-rotation", {"x0_list": {"type": "array", "items": VEC, "minItems": 2}, "t0": POS,
                            "m_max": INT1, "f": FIELD, "nodes": INT1, "n": INT1, "min_factor": POS,
                            "max_control_spread": POS}, ["x0_list"])
def _chaos_rotation(cfg, threads):
    """Relative chaos remainders for the rotation diffusion and the identity control."""
    f = make_field(cfg["f"]) if "f" in cfg else None
    rep = chaos.rotation_experiment(cfg["x0_list"], cfg.get("t0", 1.0), cfg.get("m_max", 3), f,
                                    rule=chaos.SimplexRule(nodes=cfg.get("nodes", 8)), n=cfg.get("n", 128))
    a, b = cfg["x0_list"][0], cfg["x0_list"][1]
    rot_a, rot_b = rep.ratio("rotation_sigma", a)[-1], rep.ratio("rotation_sigma", b)[-1]
    ctl = [rep.ratio("identity", x) for x in cfg["x0_list"]]
    decreasing = all(all(r[i + 1] < r[i] for i in range(len(r) - 1)) for r in ctl)
    finals = [r[-1] for r in ctl]
    spread = max(finals) / min(finals) if min(finals) > 0 else math.inf
    factor = rot_a / rot_b if rot_b > 0 else math.inf
    passed = factor >= cfg.get("min_factor", 2.0) and decreasing and \
        spread <= cfg.get("max_control_spread", 2.0)
    out = rep.to_dict()
    out.update({"factor": factor, "control_decreasing": decreasing, "control_spread": spread})
    rows = [[r["sigma"], *r["x0"], m + 1, v] for r in rep.rows for m, v in enumerate(r["relative_remainder"])]
    header = ["sigma"] + [f"x{i}" for i in range(len(a))] + ["m", "relative_remainder"]
    return Outcome(out, passed, (("rotation.csv", header, rows),))


# ---------------------------------------------------------------------------
# gehring

@command("gehring-reverse-holder", {"f": FIELD, "p": {"type": "number", "exclusiveMinimum": 1},
                                    "depth": INT1, "check_depth": INT1, "B": POS, "N3": POS,
                                    "static": {"type": "boolean"}, "A_rtol": POS,
                                    "q_range": {"type": "array", "items": NUM, "minItems": 2, "maxItems": 2}},
         ["f", "p", "depth"])
def _gehring_rh(cfg, threads):
    """Dyadic reverse-Hoelder constant, its depth stability and the improved exponents."""
    f = make_field(cfg["f"])
    static = cfg.get("static", True)

    def cells(depth):
        return gehring.CellField.sample(lambda t, x: np.abs(fields.eval_scalar(f, t, x, check=False)),
                                        f.dim, depth, static)

    c = cells(cfg["depth"])
    p = cfg["p"]
    rh = gehring.reverse_holder_constant(c, p)
    out = {"reverse_holder": rh.to_dict()}
    checks = {}
    if "check_depth" in cfg:
        rh2 = gehring.reverse_holder_constant(cells(cfg["check_depth"]), p)
        out["reverse_holder_check"] = rh2.to_dict()
        out["A_relative_change"] = _rel(rh2.A, rh.A)
        checks["A_stable"] = out["A_relative_change"] <= cfg.get("A_rtol", 0.05)
    ex = gehring.improved_exponent(c, p, rh.A, cfg.get("B"), N3=cfg.get("N3", 1.0))
    out["exponent"] = ex.to_dict()
    if "q_range" in cfg:
        lo, hi = cfg["q_range"]
        checks["q_in_range"] = lo <= ex.empirical_q <= hi
    out["checks"] = checks
    return Outcome(out, all(checks.values()) if checks else None,
                   (("exponent_ladder.csv", ["q", "increment_ratio"], ex.stability),))


@command("gehring-weak-type", {"seeds": INT1, "d": INT1, "depth": INT1, "p": POS,
                               "multipliers": POS_LIST, "spread": POS}, [])
def _gehring_weak(cfg, threads):
    """Weak-type and covering inequalities over randomized box functions."""
    checks, rows = [], []
    for s in range(cfg.get("seeds", 50)):
        g = gehring.random_box_function(s, cfg.get("d", 1), cfg.get("depth", 4), cfg.get("p", 2.0),
                                        cfg.get("spread", 1.5))
        gb = gehring.g_bar(g)
        for m in cfg.get("multipliers", [1.25, 2.0, 4.0, 8.0]):
            c = gehring.weak_type_check(g, gb * m)
            checks.append(c)
            rows.append([s, m] + c.row())
    weak_bad = sum(not c.weak_ok for c in checks)
    cover_bad = sum((not c.covering_ok) or c.cover_violations > 0 for c in checks)
    return Outcome({"cases": len(checks), "weak_violations": weak_bad, "covering_violations": cover_bad,
                    "nonempty_cases": sum(c.stopped_measure > 0 for c in checks)},
                   weak_bad == 0 and cover_bad == 0,
                   (("weak_type.csv", ["seed", "multiplier", "lambda", "weak_lhs", "stopped_measure",
                                       "selected_measure", "covering_constant", "cover_violations",
                                       "weak_ok", "covering_ok"], rows),))


# ---------------------------------------------------------------------------
# counterexamples

@command("nonexistence", {"alpha": POS, "beta": POS, "h_ladder": POS_LIST, "T": POS, "d": INT1,
                          "eps": POS, "n_paths": INT1, "seed": SEED, "control": {"type": "boolean"},
                          "min_ratio": POS, "rungs": INT1, "policy": POLICY},
         ["h_ladder"])
def _nonexistence(cfg, threads):
    """Refinement ladder of the singular functional; fires on sustained growth."""
    kw = {k: cfg[k] for k in ("T", "d", "eps", "n_paths", "seed", "control", "min_ratio", "rungs") if k in cfg}
    if "policy" in cfg:
        kw["policy"] = sde.DriftPolicy(**cfg["policy"])
    v = counterexamples.nonexistence_diagnostic(cfg.get("alpha", 0.5), cfg.get("beta", 0.5),
                                                cfg["h_ladder"], threads=threads, **kw)
    want = not cfg.get("control", False)
    return Outcome(v.to_dict(), v.passed == want, (("ladder.csv", ["h", "value", "std_error"], v.ladder),))


@command("nonuniqueness", {"q": POS, "delta_ladder": POS_LIST, "t0": POS, "control": {"type": "boolean"},
                           "h": POS, "n_paths": INT1, "seed": SEED, "min_gap": POS, "control_tol": POS},
         [])
def _nonuniqueness(cfg, threads):
    """Split between starts at +delta and -delta as delta shrinks."""
    kw = {k: cfg[k] for k in ("control", "h", "n_paths", "seed", "min_gap") if k in cfg}
    v = counterexamples.nonuniqueness_gap(cfg.get("q", 1.5), cfg.get("delta_ladder", (1e-1, 1e-2, 1e-3)),
                                          cfg.get("t0"), threads=threads, **kw)
    if cfg.get("control", False):
        passed = abs(v.trend["gap_at_zero"]) <= cfg.get("control_tol", 0.02)
    else:
        passed = v.passed
    return Outcome(v.to_dict(), passed, (("gap.csv", ["delta", "gap", "std_error"], v.ladder),))


@command("radial-threshold", {"eps_ladder": POS_LIST, "h_ladder": POS_LIST, "T": POS, "eps_small": POS,
                              "n_paths": INT1, "seed": SEED, "max_ratio": POS, "min_ratio": POS},
         ["h_ladder"])
def _radial(cfg, threads):
    """Bounded versus growing drift integrals for the radial drift family."""
    kw = {k: cfg[k] for k in ("T", "eps_small", "n_paths", "seed", "max_ratio", "min_ratio") if k in cfg}
    v = counterexamples.radial_drift_threshold(cfg.get("eps_ladder", (1.0, 0.05)), cfg["h_ladder"],
                                               threads=threads, **kw)
    return Outcome(v.to_dict(), v.passed, (("ladder.csv", ["eps", "h", "value", "std_error"], v.ladder),))


# ---------------------------------------------------------------------------
# driver

def _pointer(err: jsonschema.ValidationError) -> str:
    path = ".".join(str(p) for p in err.absolute_path)
    return path or "<root>"


def load_config(path, name: str) -> dict:
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    if cfg.get("subcommand", name) != name:
        raise ConfigError(f"config is for {cfg['subcommand']!r}, not {name!r}")
    validate(cfg, name)
    return cfg


def validate(cfg: dict, name: str) -> None:
    cmd = COMMANDS[name]
    err = jsonschema.exceptions.best_match(jsonschema.Draft202012Validator(cmd.schema).iter_errors(cfg))
    if err is not None:
        raise ConfigError(f"invalid config at `{_pointer(err)}`: {err.message}")


def execute(name: str, cfg: dict, threads: int = 1) -> tuple[dict, Outcome]:
    """Run one subcommand; returns the report dict and the raw outcome."""
    t0 = time.perf_counter()
    res = COMMANDS[name].handler(cfg, threads)
    report = {"subcommand": name, "config": cfg, "config_digest": digest(cfg),
              "payload": res.payload, "passed": res.passed,
              "meta": {"wall_seconds": time.perf_counter() - t0, "threads": threads}}
    return report, res


def payload_digest(report: dict) -> str:
    return digest({k: v for k, v in report.items() if k != "meta"})


def write_outputs(report: dict, res: Outcome, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "report.json").write_text(dumps(report))
    for fname, header, rows in res.curves:
        write_curve(out_dir / fname, header, rows)
    if res.batch is not None:
        sde.export_trajectories(out_dir / "trajectories.bin", res.batch)


def list_catalog(stream=None) -> int:
    stream = stream or sys.stdout
    rows = fields.catalog()
    w = max(len(r["kind"]) for r in rows)
    for r in rows:
        params = ", ".join(f"{k}={v}" for k, v in sorted(r["defaults"].items()))
        stream.write(f"{r['category']:<7} {r['kind']:<{w}}  [{params}]  {r['citation']}\n")
    stream.write(f"{len(rows)} entries\n")
    return 0


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="sdelab")
    sub = ap.add_subparsers(dest="cmd", required=True)
    r = sub.add_parser("run", help="run one experiment from a JSON config")
    r.add_argument("subcommand", choices=sorted(COMMANDS))
    r.add_argument("--config", required=True)
    r.add_argument("--out-dir", default=None)
    r.add_argument("--threads", type=int, default=None)
    sub.add_parser("list-catalog", help="print the field catalog")
    sub.add_parser("list-commands", help="print the experiment subcommands")
    args = ap.parse_args(argv)
    if args.cmd == "list-catalog":
        return list_catalog()
    if args.cmd == "list-commands":
        for k in sorted(COMMANDS):
            print(f"{k:<24} {COMMANDS[k].help.splitlines()[0] if COMMANDS[k].help else ''}")
        return 0
    threads = args.threads or int(os.environ.get("SDELAB_THREADS", 0)) or os.cpu_count() or 1
    out_dir = Path(args.out_dir or os.environ.get("SDELAB_OUT_DIR", "out") or "out")
    try:
        cfg = load_config(args.config, args.subcommand)
        report, res = execute(args.subcommand, cfg, cfg.get("threads", threads))
        write_outputs(report, res, out_dir)
    except (ConfigError, ValueError, KeyError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    status = "pass" if res.passed else ("fail" if res.passed is False else "done")
    print(f"{args.subcommand}: {status} -> {out_dir / 'report.json'}")
    return 2 if res.passed is False else 0


if __name__ == "__main__":
    sys.exit(main())
