"""Forward-mode differentiation with dual numbers, and a finite-difference oracle.

A :class:`Dual` carries a value array of shape ``S`` and a tangent array of
shape ``(k,) + S``: ``k`` independent directional derivatives travel through
the computation together.  ``k = 1`` is the textbook dual number.

Only the operations the projection chain needs are supported: addition,
subtraction, multiplication, division, negation, sine, cosine, and the
absolute value used by the MAE reductions.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import projection_loss as pl
from .errors import CalibrationError, InvalidParams, NonFiniteGradient


class NonDifferentiablePoint(CalibrationError, ArithmeticError):
    """An absolute-value argument is exactly zero with a non-zero tangent."""


def _lift(deriv: np.ndarray, ndim: int) -> np.ndarray:
    # insert unit axes after the tangent axis so numpy right-aligned broadcasting
    # lines the value axes up
    extra = ndim - (deriv.ndim - 1)
    if extra <= 0:
        return deriv
    return deriv.reshape(deriv.shape[:1] + (1,) * extra + deriv.shape[1:])


class Dual:
    __slots__ = ("value", "deriv")

    def __init__(self, value, deriv):
        value = np.asarray(value, dtype=float)
        deriv = np.asarray(deriv, dtype=float)
        if deriv.ndim == value.ndim:
            deriv = deriv[None]
        full = (deriv.shape[0],) + value.shape
        if deriv.shape != full:
            deriv = np.broadcast_to(_lift(deriv, value.ndim), full)
        self.value = value
        self.deriv = deriv

    @classmethod
    def variable(cls, x) -> Dual:
        x = np.asarray(x, dtype=float)
        return cls(x, np.ones_like(x))

    @classmethod
    def seeded(cls, values, directions=None) -> list[Dual]:
        """One dual per entry of ``values``; entry ``directions[i]`` gets a one-hot tangent.

        ``directions`` defaults to every entry, giving ``k = len(values)``.
        Entries not in ``directions`` get a zero tangent.
        """
        values = np.asarray(values, dtype=float)
        if directions is None:
            directions = range(len(values))
        directions = list(directions)
        k = len(directions)
        out = []
        for i, v in enumerate(values):
            t = np.zeros(k)
            if i in directions:
                t[directions.index(i)] = 1.0
            out.append(cls(v, t))
        return out

    @property
    def ntangents(self) -> int:
        return self.deriv.shape[0]

    def __repr__(self) -> str:
        return f"Dual({self.value!r}, {self.deriv!r})"

    # arithmetic ------------------------------------------------------------

    def _binary(self, other, op):
        if isinstance(other, Dual):
            return op(self.value, self.deriv, other.value, other.deriv)
        return op(self.value, self.deriv, np.asarray(other, dtype=float), None)

    def __add__(self, other):
        return self._binary(other, _add)

    def __radd__(self, other):
        return self + other

    def __sub__(self, other):
        return self._binary(other, _sub)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        return self._binary(other, _mul)

    def __rmul__(self, other):
        return self * other

    def __truediv__(self, other):
        return self._binary(other, _div)

    def __rtruediv__(self, other):
        other = np.asarray(other, dtype=float)
        return _div(other, None, self.value, self.deriv)

    def __neg__(self):
        return Dual(-self.value, -self.deriv)

    def __pos__(self):
        return self

    def sin(self) -> Dual:
        return Dual(np.sin(self.value), np.cos(self.value) * self.deriv)

    def cos(self) -> Dual:
        return Dual(np.cos(self.value), -np.sin(self.value) * self.deriv)

    def __abs__(self) -> Dual:
        return Dual(np.abs(self.value), np.sign(self.value) * self.deriv)

    # reductions ------------------------------------------------------------

    def _tangent_axis(self, axis):
        if axis is None:
            return tuple(range(1, self.deriv.ndim))
        return axis + 1 if axis >= 0 else axis

    def sum(self, axis=None) -> Dual:
        return Dual(self.value.sum(axis=axis), self.deriv.sum(axis=self._tangent_axis(axis)))

    def mean(self, axis=None) -> Dual:
        return Dual(self.value.mean(axis=axis), self.deriv.mean(axis=self._tangent_axis(axis)))

    def __getitem__(self, idx) -> Dual:
        if not isinstance(idx, tuple):
            idx = (idx,)
        return Dual(self.value[idx], self.deriv[(slice(None),) + idx])

    # numpy interop ----------------------------------------------------------

    _UFUNCS = {
        np.add: lambda a, b: a + b,
        np.subtract: lambda a, b: a - b,
        np.multiply: lambda a, b: a * b,
        np.true_divide: lambda a, b: a / b,
        np.negative: lambda a: -a,
        np.positive: lambda a: a,
        np.sin: lambda a: a.sin(),
        np.cos: lambda a: a.cos(),
        np.absolute: abs,
    }

    def __array_ufunc__(self, ufunc, method, *inputs, **kwargs):
        fn = self._UFUNCS.get(ufunc)
        if method != "__call__" or fn is None or kwargs:
            return NotImplemented
        if len(inputs) == 2 and not isinstance(inputs[0], Dual):
            a, b = inputs
            if ufunc is np.subtract:
                return (-b) + a
            if ufunc is np.true_divide:
                return b.__rtruediv__(a)
            return fn(b, a)
        return fn(*inputs)


def _add(av, ad, bv, bd):
    v = av + bv
    if bd is None:
        return Dual(v, _lift(ad, v.ndim))
    return Dual(v, _lift(ad, v.ndim) + _lift(bd, v.ndim))


def _sub(av, ad, bv, bd):
    v = av - bv
    if bd is None:
        return Dual(v, _lift(ad, v.ndim))
    return Dual(v, _lift(ad, v.ndim) - _lift(bd, v.ndim))


def _mul(av, ad, bv, bd):
    v = av * bv
    if bd is None:
        return Dual(v, _lift(ad, v.ndim) * bv)
    return Dual(v, _lift(ad, v.ndim) * bv + av * _lift(bd, v.ndim))


def _div(av, ad, bv, bd):
    if np.any(bv == 0):
        raise ZeroDivisionError("dual division by zero")
    v = av / bv
    if bd is None:
        return Dual(v, _lift(ad, v.ndim) / bv)
    num = -av * _lift(bd, v.ndim)
    if ad is not None:
        num = _lift(ad, v.ndim) * bv + num
    return Dual(v, num / (bv * bv))


# a tangent below this fraction of the largest tangent in its direction is rounding noise
TANGENT_NOISE = 1e-8


def abs_with_kinks(x) -> tuple:
    """|x| with subgradient 0 at exact zeros, plus per-direction kink evidence.

    Returns ``(|x|, kink_tangent, max_tangent)`` where, per direction,
    ``kink_tangent`` is the largest |tangent| found at an exactly-zero element
    and ``max_tangent`` the largest |tangent| overall.  Zero elements whose
    tangent is also zero are locally constant and are not kinks.  For plain
    floats the two evidence arrays are None.
    """
    if not isinstance(x, Dual):
        return np.abs(x), None, None
    mag = np.abs(x.deriv).reshape(x.deriv.shape[0], -1)
    at_zero = np.where((x.value == 0).reshape(-1), mag, 0.0)
    return abs(x), at_zero.max(axis=1, initial=0.0), mag.max(axis=1, initial=0.0)


def _kink_flags(evidence) -> np.ndarray | None:
    if not evidence:
        return None
    kink = np.max([e[0] for e in evidence], axis=0)
    scale = np.max([e[1] for e in evidence], axis=0)
    return kink > TANGENT_NOISE * scale


# --- gradients of the projection loss -------------------------------------


@dataclass(frozen=True)
class Gradient13:
    """dL/d(omega) in the fixed 13-entry order.

    ``kinks[i]`` is true when entry ``i`` was evaluated at an MAE kink; its
    value is then a subgradient with 0 chosen at the kink.
    """

    values: np.ndarray
    kinks: np.ndarray
    loss: float

    @property
    def flagged(self) -> bool:
        return bool(np.any(self.kinks))

    def __getitem__(self, key) -> float:
        if isinstance(key, str):
            key = pl.INDEX[key]
        return float(self.values[key])


LOSS_MODES = ("plain", "disentangled", "weighted")


def _dual_hybrid(j, true_value, pred_value):
    mask = np.zeros((pl.N_CAMERA, 1), dtype=bool)
    mask[j, 0] = True
    if not isinstance(pred_value, Dual):
        return np.where(mask, pred_value, true_value)
    value = np.where(mask, pred_value.value, true_value)
    deriv = np.where(mask[None], pred_value.deriv[:, None, None], 0.0)
    return Dual(value, deriv)


def _loss_graph(t, pred, pix, mode, alphas, point_terms, absfn):
    trig = (np.cos, np.sin)
    if mode == "plain":
        return pl.plain_graph(t, pred, pix, trig, absfn)
    hybrid = _dual_hybrid if isinstance(pred[0], Dual) else pl._float_hybrid
    camera, points = pl.disentangled_graph(t, pred, pix, trig, absfn, hybrid, point_terms)
    if mode == "disentangled":
        alphas = np.ones(pl.N_PARAMS)
    return pl.weighted_total(camera, points, alphas)


def _resolve(mode, weights):
    if mode not in LOSS_MODES:
        raise InvalidParams(f"unknown loss mode {mode!r}; choose from {LOSS_MODES}")
    if mode == "weighted":
        if weights is None:
            raise InvalidParams("weighted mode needs weights")
        if not isinstance(weights, pl.AdaptiveWeights):
            weights = pl.AdaptiveWeights(weights)
        return weights.alphas
    return None


def loss_value(omega_true, omega_pred, pixels, mode="disentangled", weights=None,
               point_terms=True) -> float:
    """Scalar loss selected by ``mode``, evaluated in plain floating point."""
    alphas = _resolve(mode, weights)
    t, p = pl.as_vector(omega_true), pl.as_vector(omega_pred)
    pix = pl.as_pixel_array(pixels)
    pl.check_camera_slice(t, pix)
    pl.check_camera_slice(p, pix)
    return float(_loss_graph(t, p, pix, mode, alphas, point_terms, np.abs))


def grad_cpl(omega_true, omega_pred, pixels, mode="disentangled", weights=None,
             point_terms=True, directions=None, sequential=False, strict=False) -> Gradient13:
    """Exact derivative of the selected loss with respect to each entry of ``omega_pred``.

    Each entry listed in ``directions`` (default: all 13) gets its own seeded
    tangent.  By default the tangents are propagated together in one vectorized
    sweep; ``sequential=True`` runs one single-tangent pass per entry instead.
    Entries not in ``directions`` are reported as 0.

    At an MAE kink the subgradient 0 is used and the entry is flagged in
    ``kinks``; with ``strict=True`` a kink raises NonDifferentiablePoint.
    """
    alphas = _resolve(mode, weights)
    t, p = pl.as_vector(omega_true), pl.as_vector(omega_pred)
    pix = pl.as_pixel_array(pixels)
    pl.check_camera_slice(t, pix)
    pl.check_camera_slice(p, pix)
    dirs = list(range(pl.N_PARAMS)) if directions is None else sorted(directions)

    evidence = []

    def absfn(x):
        out, kink, scale = abs_with_kinks(x)
        if kink is not None:
            evidence.append((kink, scale))
        return out

    values = np.zeros(pl.N_PARAMS)
    kinks = np.zeros(pl.N_PARAMS, dtype=bool)
    passes = [[i] for i in dirs] if sequential else [dirs]
    loss = None
    for group in passes:
        if not group:
            continue
        evidence.clear()
        pred = Dual.seeded(p, group)
        out = _loss_graph(t, pred, pix, mode, alphas, point_terms, absfn)
        if isinstance(out, Dual):
            values[group] = out.deriv
            loss = float(out.value)
        else:
            loss = float(out)
        flags = _kink_flags(evidence)
        if flags is not None:
            kinks[group] |= flags
    if loss is None:
        loss = float(_loss_graph(t, p, pix, mode, alphas, point_terms, np.abs))
    if not np.all(np.isfinite(values)):
        raise NonFiniteGradient(f"non-finite gradient: {values.tolist()}")
    if strict and kinks.any():
        names = [pl.NAMES[i] for i in np.flatnonzero(kinks)]
        raise NonDifferentiablePoint(f"MAE kink in directions {names}")
    return Gradient13(values=values, kinks=kinks, loss=loss)


def central_difference(f: Callable[[np.ndarray], float], x, h) -> np.ndarray:
    """Central-difference gradient of scalar ``f`` at ``x`` with per-entry steps ``h``."""
    x = np.asarray(x, dtype=float)
    h = np.broadcast_to(np.asarray(h, dtype=float), x.shape)
    if np.any(h <= 0):
        raise InvalidParams("finite-difference step must be > 0")
    g = np.empty_like(x)
    for i in range(x.size):
        xp, xm = x.copy(), x.copy()
        xp[i] += h[i]
        xm[i] -= h[i]
        g[i] = (f(xp) - f(xm)) / (xp[i] - xm[i])
    return g


def finite_difference_grad(omega_true, omega_pred, pixels, h: float = 1e-6, mode="disentangled",
                           weights=None, point_terms=True, scaled=True) -> Gradient13:
    """Central differences of the float loss; the verification oracle for :func:`grad_cpl`.

    With ``scaled=True`` entry ``i`` uses step ``h * max(1, |omega_i|)``.
    """
    if not h > 0:
        raise InvalidParams(f"finite-difference step must be > 0, got {h}")
    p = pl.as_vector(omega_pred)
    steps = h * np.maximum(1.0, np.abs(p)) if scaled else np.full(pl.N_PARAMS, h)

    def f(x):
        return loss_value(omega_true, x, pixels, mode, weights, point_terms)

    values = central_difference(f, p, steps)
    return Gradient13(values=values, kinks=np.zeros(pl.N_PARAMS, dtype=bool), loss=f(p))


def kink_margin(omega_true, omega_pred, pixels, h: float = 1e-6, mode="disentangled",
                point_terms=True) -> float:
    """How far the MAE arguments sit from their kinks, in units of the finite-difference step.

    For every absolute-value argument ``a`` and direction ``i`` this is
    ``|a| / (|da/dw_i| * h_i)`` with ``h_i = h * max(1, |w_i|)``; the minimum is
    returned.  A central difference straddles a kink only when the value is
    below 1.  Rounding-noise tangents (see ``TANGENT_NOISE``) are ignored.
    """
    t, p = pl.as_vector(omega_true), pl.as_vector(omega_pred)
    pix = pl.as_pixel_array(pixels)
    steps = h * np.maximum(1.0, np.abs(p))
    args = []

    def absfn(x):
        if isinstance(x, Dual):
            args.append((x.value.reshape(-1), x.deriv.reshape(x.deriv.shape[0], -1)))
        return abs(x)

    alphas = np.ones(pl.N_PARAMS) if mode == "weighted" else None
    _loss_graph(t, Dual.seeded(p), pix, mode, alphas, point_terms, absfn)
    if not args:
        return np.inf
    scale = np.max([np.abs(d).max(axis=1) for _, d in args], axis=0)
    smallest = np.inf
    for value, deriv in args:
        tangent = np.abs(deriv)
        live = tangent > TANGENT_NOISE * scale[:, None]
        reach = tangent * steps[:, None]
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(live, np.abs(value)[None, :] / reach, np.inf)
        smallest = min(smallest, float(ratio.min()))
    return smallest


def random_smooth_config(rng: np.random.Generator, n_pixels: int = 10, margin: float = 100.0,
                         frac: float = 0.2):
    """Random (omega_true, omega_pred, pixels) whose MAE arguments are at least
    ``margin`` finite-difference reaches away from any kink.

    Pixels carry per-point disparities, so the ``d`` entry acts as a scale.
    """
    while True:
        truth = np.array([
            rng.uniform(300, 1500), rng.uniform(300, 1500), rng.uniform(200, 800), rng.uniform(150, 600),
            rng.uniform(0.1, 1.0), rng.uniform(0.5, 2.0), rng.uniform(-0.5, 0.5),
            *rng.uniform(-5, 5, 3), *rng.uniform(-20, 20, 3),
        ])
        pred = truth * rng.uniform(1 - frac, 1 + frac, pl.N_PARAMS)
        pred[pl.THETA] = truth[pl.THETA] + rng.uniform(-0.1, 0.1)
        pred[10:] = truth[10:] + rng.uniform(-1, 1, 3)
        pixels = np.column_stack([
            rng.uniform(0, 1280, n_pixels), rng.uniform(0, 960, n_pixels), rng.uniform(1, 100, n_pixels),
        ])
        if min(kink_margin(truth, pred, pixels), kink_margin(truth, pred, pixels, mode="plain")) >= margin:
            return truth, pred, pixels


def relative_error(a, b, floor: float = 1e-3) -> float:
    """Max over entries of ``|a - b| / max(|a|, |b|, floor * max(|a|, |b|)_inf)``.

    The floor keeps exactly-zero gradient entries (e.g. sign-cancelling MAE
    sums) from turning finite-difference rounding noise into a relative error
    of 1; entries above ``floor`` times the largest entry are compared purely
    relatively.
    """
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    scale = max(np.max(np.abs(a), initial=0.0), np.max(np.abs(b), initial=0.0))
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor * scale)
    diff = np.abs(a - b)
    rel = np.divide(diff, denom, out=np.zeros_like(diff), where=denom > 0)
    return float(rel.max()) if rel.size else 0.0
