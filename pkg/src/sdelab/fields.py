"""Closed-form space-time fields: drifts, diffusion matrices and test functions.

Every field is a frozen descriptor ``(kind, dim, params)``; evaluation is
dispatched on ``kind`` through a registry.  Descriptors round-trip through
JSON so experiment configs never carry closures.

Evaluators are vectorized: ``x`` has shape ``(..., d)`` and ``t`` broadcasts
against ``x.shape[:-1]``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Any, Callable, Mapping

import numpy as np


class SingularityError(ValueError):
    """Raised when a field is evaluated on its declared singular set."""


class FieldError(ValueError):
    pass


def _freeze(params: Mapping[str, Any] | None) -> Mapping[str, Any]:
    out = {}
    for k, v in dict(params or {}).items():
        if isinstance(v, np.ndarray):
            v = v.tolist()
        if isinstance(v, list):
            v = tuple(tuple(r) if isinstance(r, list) else r for r in v)
        out[k] = v
    return MappingProxyType(out)


def _thaw(v):
    if isinstance(v, tuple):
        return [_thaw(u) for u in v]
    return v


@dataclass(frozen=True)
class SpaceTimePoint:
    t: float
    x: tuple

    def __post_init__(self):
        x = tuple(float(v) for v in np.atleast_1d(self.x))
        if len(x) < 1:
            raise FieldError("point must have d >= 1")
        if not (math.isfinite(self.t) and all(math.isfinite(v) for v in x)):
            raise FieldError("point components must be finite")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "t", float(self.t))

    @property
    def d(self) -> int:
        return len(self.x)


@dataclass(frozen=True)
class _Field:
    kind: str
    dim: int
    params: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "params", _freeze(self.params))
        if self.kind not in self._registry():
            raise FieldError(f"unknown {type(self).__name__} kind {self.kind!r}")
        if self.dim < 1:
            raise FieldError("dim must be >= 1")

    @classmethod
    def _registry(cls) -> dict:
        raise NotImplementedError

    def p(self, name, default=None):
        return self.params.get(name, default)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "dim": self.dim,
                "params": {k: _thaw(v) for k, v in self.params.items()}}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]):
        try:
            return cls(kind=data["kind"], dim=int(data["dim"]),
                       params=data.get("params", {}))
        except KeyError as exc:
            raise FieldError(f"field descriptor missing key {exc.args[0]!r}") from None

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def fingerprint(self) -> str:
        return self.to_json()


class VectorField(_Field):
    @classmethod
    def _registry(cls):
        return _DRIFTS


class MatrixField(_Field):
    @classmethod
    def _registry(cls):
        return _SIGMAS

    @property
    def dim1(self) -> int:
        return _SIGMAS[self.kind].dim1(self)

    @property
    def ellipticity(self) -> float:
        return _SIGMAS[self.kind].delta(self)


class ScalarField(_Field):
    @classmethod
    def _registry(cls):
        return _SCALARS

    @property
    def nonnegative(self) -> bool:
        return _SCALARS[self.kind].nonneg(self)


# ---------------------------------------------------------------------------
# helpers

def _prep(t, x, dim):
    x = np.asarray(x, dtype=float)
    if x.ndim == 0 or x.shape[-1] != dim:
        raise FieldError(f"expected points with last axis {dim}, got shape {x.shape}")
    t = np.broadcast_to(np.asarray(t, dtype=float), x.shape[:-1])
    return t, x


def _norm(x):
    return np.sqrt(np.einsum("...i,...i->...", x, x))


@dataclass(frozen=True)
class _Entry:
    fn: Callable
    singular: Callable | None = None  # (t, x, field) -> bool mask
    citation: str = ""
    defaults: Mapping[str, Any] = field(default_factory=dict)
    singular_set: str = "none"
    dim1: Callable = lambda f: f.dim
    delta: Callable = lambda f: 1.0
    nonneg: Callable = lambda f: False


def _eval(entry: _Entry, f: _Field, t, x, *, check=True):
    t, x = _prep(t, x, f.dim)
    dil = f.p("_dilation")
    amp = 1.0
    if dil is not None:
        c = float(dil)
        t = c * c * t
        x = c * x
        amp = c if isinstance(f, VectorField) else 1.0
    if check and entry.singular is not None:
        mask = entry.singular(t, x, f)
        if np.any(mask):
            raise SingularityError(
                f"{f.kind} evaluated on its singular set ({entry.singular_set})")
    with np.errstate(divide="ignore", invalid="ignore"):
        out = entry.fn(t, x, f)
    return amp * out if amp != 1.0 else out


def singular_mask(f: _Field, t, x) -> np.ndarray:
    """Boolean mask of points lying on the singular set of ``f``."""
    entry = f._registry()[f.kind]
    t, x = _prep(t, x, f.dim)
    dil = f.p("_dilation")
    if dil is not None:
        c = float(dil)
        t, x = c * c * t, c * x
    if entry.singular is None:
        return np.zeros(x.shape[:-1], dtype=bool)
    return np.asarray(entry.singular(t, x, f), dtype=bool)


# ---------------------------------------------------------------------------
# drifts

def _origin(t, x, f):
    return _norm(x) == 0.0


def _origin_or_t0(t, x, f):
    return (_norm(x) == 0.0) | (t == 0.0)


def _zero(t, x, f):
    return np.zeros_like(x)


def _constant(t, x, f):
    v = np.asarray(f.p("v"), dtype=float)
    return np.broadcast_to(v, x.shape).copy()


def _radial(t, x, f):
    c = float(f.p("c", f.dim))
    r2 = np.einsum("...i,...i->...", x, x)
    return -c * x / r2[..., None]


def _ex_3_22_1(t, x, f):
    a = float(f.p("alpha", 0.5))
    b = float(f.p("beta", 0.5))
    eps = float(f.p("eps", 1.0))
    r = _norm(x)
    on = (r > 0) & (t > 0) & (t <= 1)
    mag = np.where(on, eps / (np.where(on, t, 1.0) ** a * np.where(on, r, 1.0) ** (b + 1)), 0.0)
    return -mag[..., None] * x


def _ex_3_22_2(t, x, f):
    q = float(f.p("q", 1.5))
    on = (t > 0) & (t <= 1) & (np.abs(x[..., 0]) <= 1)
    out = np.zeros_like(x)
    out[..., 0] = np.where(on, np.where(on, t, 1.0) ** (-1.0 / q), 0.0) * np.sign(x[..., 0])
    return out


def _ex_3_22_2_singular(t, x, f):
    return t == 0.0


def _rem_1_28_1(t, x, f):
    # |b| = c / (|x|^g (|x| + sqrt t)^(1-g)), directed toward the origin;
    # t = 0 uses the t -> 0+ limit, t < 0 gives zero.
    g = float(f.p("gamma", 0.8))
    c = float(f.p("c", 1.0))
    r = _norm(x)
    st = np.sqrt(np.maximum(t, 0.0))
    mag = c / (r ** g * (r + st) ** (1.0 - g))
    mag = np.where(t >= 0, mag, 0.0)
    return -(mag / r)[..., None] * x


def _ex_5_23_1(t, x, f):
    a = float(f.p("alpha", 0.9))
    r = x[..., 0]
    on = (np.abs(r) < 1) & (r != 0)
    out = np.zeros_like(x)
    out[..., 0] = -np.where(on, np.abs(np.where(on, r, 1.0)) ** (-a), 0.0) * np.sign(r)
    return out


def _ex_5_23_1_singular(t, x, f):
    return x[..., 0] == 0.0


def _smooth_bump(t, x, f):
    v = np.asarray(f.p("v", [1.0] + [0.0] * (f.dim - 1)), dtype=float)
    c = np.asarray(f.p("center", [0.0] * f.dim), dtype=float)
    w = float(f.p("width", 1.0))
    g = np.exp(-np.sum((x - c) ** 2, axis=-1) / (2 * w * w))
    return g[..., None] * v


def _sine(t, x, f):
    a = float(f.p("amplitude", 1.0))
    k = float(f.p("wavenumber", 1.0))
    return a * np.sin(k * x)


_DRIFTS: dict[str, _Entry] = {
    "zero": _Entry(_zero, citation="b = 0"),
    "constant": _Entry(_constant, citation="b = v (bounded smooth test drift)",
                       defaults={"v": [1.0]}),
    "example_12_21_01": _Entry(
        _radial, _origin, singular_set="point x=0",
        citation="radial b(x) = -c x/|x|^2; no solution from 0 when c = d, sigma = sqrt2 I",
        defaults={"c": "d"}),
    "example_3_22_1": _Entry(
        _ex_3_22_1, _origin_or_t0, singular_set="point x=0 and hyperplane t=0",
        citation="b = -t^-alpha |x|^-beta x/|x| 1{0<|x|, t<=1}, alpha+beta=1; no solution from 0",
        defaults={"alpha": 0.5, "beta": 0.5, "eps": 1.0}),
    "example_3_22_2": _Entry(
        _ex_3_22_2, _ex_3_22_2_singular, singular_set="hyperplane t=0",
        citation="b^1 = t^(-1/q) 1{0<t<=1, |x^1|<=1} sign x^1; no weak uniqueness from 0",
        defaults={"q": 1.5}),
    "remark_1_28_1": _Entry(
        _rem_1_28_1, _origin, singular_set="point x=0",
        citation="|b| = c/(|x|^gamma (|x|+sqrt t)^(1-gamma)) 1{t>0}, directed to the origin",
        defaults={"gamma": 0.8, "c": 1.0}),
    "example_5_23_1": _Entry(
        _ex_5_23_1, _ex_5_23_1_singular, singular_set="hyperplane x^1=0",
        citation="b^1 = -|x^1|^-alpha 1{|x^1|<1} sign x^1; moderated drift vanishes at small scales",
        defaults={"alpha": 0.9}),
    "smooth_bump": _Entry(_smooth_bump, citation="bounded smooth test drift v exp(-|x-c|^2/2w^2)",
                          defaults={"v": "e1", "center": 0, "width": 1.0}),
    "sine": _Entry(_sine, citation="bounded smooth test drift a sin(k x)",
                   defaults={"amplitude": 1.0, "wavenumber": 1.0}),
}


def eval_drift(field: VectorField, t, x, *, check: bool = True) -> np.ndarray:
    """Evaluate a drift.

    Raises :class:`SingularityError` if any point is on the singular set and
    ``check`` is true.
    """
    return _eval(_DRIFTS[field.kind], field, t, x, check=check)


# ---------------------------------------------------------------------------
# diffusions

def _identity(t, x, f):
    s = float(f.p("scale", 1.0))
    eye = s * np.eye(f.dim)
    return np.broadcast_to(eye, x.shape[:-1] + (f.dim, f.dim)).copy()


def _rotation(t, x, f):
    if f.dim != 2:
        raise FieldError("rotation_sigma requires d = 2")
    r = _norm(x)
    out = np.empty(x.shape[:-1] + (2, 2))
    zero = r == 0
    rs = np.where(zero, 1.0, r)
    u = x[..., 0] / rs
    v = x[..., 1] / rs
    # column 1: x/|x|, column 2: x*/|x| with x* = (-x2, x1)
    out[..., 0, 0] = np.where(zero, 1.0, u)
    out[..., 1, 0] = np.where(zero, 0.0, v)
    out[..., 0, 1] = np.where(zero, 0.0, -v)
    out[..., 1, 1] = np.where(zero, 1.0, u)
    return out


def _block_6_3_4(t, x, f):
    if f.dim != 3:
        raise FieldError("eq_6_3_4 requires d = 3")
    a = float(f.p("alpha", 1.0))
    b = float(f.p("beta", 0.0))
    zero_val = float(f.p("zero_over_zero", 3 ** -0.5))
    r = _norm(x)
    zero = r == 0
    unit = np.where(zero[..., None], zero_val, x / np.where(zero, 1.0, r)[..., None])
    out = np.zeros(x.shape[:-1] + (3, 12))
    for i in range(3):
        out[..., i, i] = a
        out[..., i, 3 + 3 * i:6 + 3 * i] = b * unit
    return out


def _cutoff(r):
    inside = r < 0.5
    s = np.where(inside, 2 * r, 0.0)
    return np.where(inside, np.exp(1.0 - 1.0 / (1.0 - s * s)), 0.0)


def _log_osc(t, x, f):
    amp = float(f.p("amplitude", 1.0))
    sym = np.asarray(f.p("zeta_matrix", np.eye(f.dim).tolist()), dtype=float)
    r = _norm(x)
    nz = (r > 0) & (r != 1.0)
    rr = np.where(nz, r, 0.5)
    osc = np.where(nz, np.sin(np.log(np.abs(np.log(rr)))), 0.0) * _cutoff(r)
    out = 2.0 * np.eye(f.dim) + amp * osc[..., None, None] * sym
    return out


def _log_osc_delta(f):
    amp = float(f.p("amplitude", 1.0))
    sym = np.asarray(f.p("zeta_matrix", np.eye(f.dim).tolist()), dtype=float)
    s = amp * float(np.max(np.abs(np.linalg.eigvalsh(sym))))
    lo, hi = (2 - s) ** 2, (2 + s) ** 2
    return min(lo, 1.0 / hi)


_SIGMAS: dict[str, _Entry] = {
    "identity": _Entry(_identity, citation="sigma = s I", defaults={"scale": 1.0},
                       delta=lambda f: min(f.p("scale", 1.0) ** 2, f.p("scale", 1.0) ** -2)),
    "rotation_sigma": _Entry(
        _rotation, citation="sigma^1 = x/|x|, sigma^2 = x*/|x|, sigma(0) = I; a = I, no strong solution from 0"),
    "eq_6_3_4": _Entry(
        _block_6_3_4, citation="d=3, d1=12: [alpha I, (beta/|x|) blockdiag(x^T, x^T, x^T)], 0/0 := 3^-1/2",
        defaults={"alpha": 1.0, "beta": 0.0},
        dim1=lambda f: 12,
        delta=lambda f: min(f.p("alpha", 1.0) ** 2 + f.p("beta", 0.0) ** 2,
                            1.0 / (f.p("alpha", 1.0) ** 2 + f.p("beta", 0.0) ** 2))),
    "log_oscillating": _Entry(
        _log_osc, citation="sigma = 2I + 1{x!=0} zeta(x) sin(ln|ln|x||), zeta a smooth cutoff on |x|<1/2",
        defaults={"amplitude": 1.0, "zeta_matrix": "I"},
        delta=_log_osc_delta),
}


def eval_sigma(field: MatrixField, t, x) -> np.ndarray:
    """Evaluate sigma; returns shape ``(..., d, d1)``."""
    out = _eval(_SIGMAS[field.kind], field, t, x, check=False)
    if out.shape[-2:] != (field.dim, field.dim1):
        raise FieldError("sigma has inconsistent dimensions")
    return out


def eval_a(field: MatrixField, t, x) -> np.ndarray:
    s = eval_sigma(field, t, x)
    return np.einsum("...ik,...jk->...ij", s, s)


def nonzero_columns(field: MatrixField) -> list[int]:
    """Columns of sigma that are not identically zero (symbolic pre-pass)."""
    if field.kind == "eq_6_3_4":
        cols = []
        if field.p("alpha", 1.0) != 0:
            cols += [0, 1, 2]
        if field.p("beta", 0.0) != 0:
            cols += list(range(3, 12))
        return cols
    if field.kind == "identity" and field.p("scale", 1.0) == 0:
        return []
    return list(range(field.dim1))


# ---------------------------------------------------------------------------
# scalar test functions

def _s_const(t, x, f):
    return np.full(x.shape[:-1], float(f.p("value", 1.0)))


def _s_ball(t, x, f):
    c = np.asarray(f.p("center", [0.0] * f.dim), dtype=float)
    r = float(f.p("radius", 1.0))
    return (np.sum((x - c) ** 2, axis=-1) < r * r).astype(float)


def _s_box(t, x, f):
    lo = np.asarray(f.p("lo"), dtype=float)
    hi = np.asarray(f.p("hi"), dtype=float)
    inside = np.all((x >= lo[1:]) & (x < hi[1:]), axis=-1) & (t >= lo[0]) & (t < hi[0])
    return inside.astype(float)


def _s_gauss(t, x, f):
    c = np.asarray(f.p("center", [0.0] * f.dim), dtype=float)
    w = float(f.p("width", 1.0))
    a = float(f.p("amplitude", 1.0))
    return a * np.exp(-np.sum((x - c) ** 2, axis=-1) / (2 * w * w))


def _s_power(t, x, f):
    return _norm(x) ** (-float(f.p("a", 1.0)))


def _s_monomial(t, x, f):
    e = f.p("exponents", [1] + [0] * (f.dim - 1))
    out = np.ones(x.shape[:-1])
    for i, k in enumerate(e):
        if k:
            out = out * x[..., i] ** int(k)
    return out


def _s_halfspace(t, x, f):
    return (x[..., 0] > float(f.p("offset", 0.0))).astype(float)


_SCALARS: dict[str, _Entry] = {
    "constant": _Entry(_s_const, nonneg=lambda f: f.p("value", 1.0) >= 0, citation="f = value",
                        defaults={"value": 1.0}),
    "ball_indicator": _Entry(_s_ball, nonneg=lambda f: True, citation="indicator of |x-c| < r",
                              defaults={"center": 0, "radius": 1.0}),
    "box_indicator": _Entry(_s_box, nonneg=lambda f: True,
                            citation="indicator of [lo0,hi0) x prod [lo_i,hi_i)"),
    "gaussian_bump": _Entry(_s_gauss, nonneg=lambda f: f.p("amplitude", 1.0) >= 0,
                             citation="a exp(-|x-c|^2/2w^2)",
                             defaults={"center": 0, "width": 1.0, "amplitude": 1.0}),
    "inverse_power": _Entry(_s_power, _origin, singular_set="point x=0",
                            nonneg=lambda f: True, citation="|x|^-a", defaults={"a": 1.0}),
    "monomial": _Entry(_s_monomial, citation="prod (x^i)^e_i", defaults={"exponents": "e1"}),
    "halfspace_indicator": _Entry(_s_halfspace, nonneg=lambda f: True, citation="indicator of x^1 > offset",
                                   defaults={"offset": 0.0}),
}


def eval_scalar(field: ScalarField, t, x, *, check: bool = True) -> np.ndarray:
    return _eval(_SCALARS[field.kind], field, t, x, check=check)


# ---------------------------------------------------------------------------
# dilation

def parabolic_dilate(field: _Field, c: float):
    """Return the parabolic dilation of ``field`` by ``c``.

    Drifts map to ``c b(c^2 t, c x)``; diffusions and scalars to
    ``sigma(c^2 t, c x)``.  Dilations compose multiplicatively.
    """
    if not c > 0:
        raise FieldError("dilation factor must be positive")
    params = {k: _thaw(v) for k, v in field.params.items()}
    params["_dilation"] = float(params.get("_dilation", 1.0)) * float(c)
    return type(field)(kind=field.kind, dim=field.dim, params=params)


def catalog() -> list[dict]:
    """Every catalog entry with its category, defaults and citation."""
    rows = []
    for cat, reg in (("drift", _DRIFTS), ("sigma", _SIGMAS), ("scalar", _SCALARS)):
        for kind, e in reg.items():
            rows.append({"category": cat, "kind": kind, "defaults": dict(e.defaults),
                         "singular_set": e.singular_set, "citation": e.citation})
    return rows
