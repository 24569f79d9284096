"""Camera projection loss: plain, disentangled and weighted forms, plus NMAE.

All losses are world-space reconstruction errors in meters.  The parameter
vector has 13 entries in a fixed order (``NAMES``).  Its ``d`` entry is a
disparity *scale*: each pixel carries its own stored disparity ``d_obs`` and
the effective disparity is ``d * d_obs``.  Pixels given as bare ``(u, v)``
pairs use ``d_obs = 1``, which recovers the single-point formulation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .camera_model import (
    CameraParams,
    ImageObservation,
    WorldPoint,
    project_to_world,
    rotate_translate,
    stereo_to_camera,
)
from .errors import (
    DisparityZeroOrNegative,
    EmptyPixelSet,
    InvalidParams,
    LengthMismatch,
    NonPositiveWeight,
    ZeroDenominator,
)

NAMES = ("f_x", "f_y", "u_0", "v_0", "b", "d", "theta_p", "t_x", "t_y", "t_z", "X", "Y", "Z")
CAMERA_NAMES = NAMES[:10]
# column order of the NMAE report tables
TABLE_ORDER = ("f_x", "f_y", "u_0", "v_0", "b", "d", "t_x", "t_y", "t_z", "theta_p")
INDEX = {name: i for i, name in enumerate(NAMES)}
N_PARAMS = 13
N_CAMERA = 10
THETA = INDEX["theta_p"]


@dataclass(frozen=True)
class ParamVector13:
    values: tuple

    def __post_init__(self) -> None:
        vals = tuple(float(v) for v in self.values)
        if len(vals) != N_PARAMS:
            raise InvalidParams(f"expected {N_PARAMS} entries, got {len(vals)}")
        object.__setattr__(self, "values", vals)

    @classmethod
    def from_parts(cls, params: CameraParams, d: float, point: WorldPoint) -> ParamVector13:
        k, e = params.intrinsics, params.extrinsics
        return cls(
            (k.f_x, k.f_y, k.u_0, k.v_0, params.rig.b, d, e.theta_p, e.t_x, e.t_y, e.t_z,
             point.X, point.Y, point.Z)
        )

    @classmethod
    def from_mapping(cls, mapping) -> ParamVector13:
        return cls(tuple(mapping[n] for n in NAMES))

    def to_parts(self) -> tuple[CameraParams, float, WorldPoint]:
        v = self.values
        params = CameraParams.from_values(*v[:5], v[6], v[7], v[8], v[9])
        return params, v[5], WorldPoint(*v[10:])

    def as_array(self) -> np.ndarray:
        return np.array(self.values)

    def as_dict(self) -> dict[str, float]:
        return dict(zip(NAMES, self.values))

    def replace(self, **changes: float) -> ParamVector13:
        vals = list(self.values)
        for name, value in changes.items():
            vals[INDEX[name]] = value
        return ParamVector13(tuple(vals))

    def __getitem__(self, key):
        if isinstance(key, str):
            key = INDEX[key]
        return self.values[key]

    def __len__(self) -> int:
        return N_PARAMS


def as_vector(omega) -> np.ndarray:
    if isinstance(omega, ParamVector13):
        return omega.as_array()
    arr = np.asarray(omega, dtype=float)
    if arr.shape != (N_PARAMS,):
        raise InvalidParams(f"parameter vector must have shape (13,), got {arr.shape}")
    return arr


def as_pixel_array(pixels) -> np.ndarray:
    """Pixels -> (n, 3) array of (u, v, d_obs)."""
    if isinstance(pixels, np.ndarray):
        arr = np.asarray(pixels, dtype=float)
    else:
        rows = []
        for p in pixels:
            if isinstance(p, ImageObservation):
                rows.append((p.u, p.v, p.d))
            elif len(p) == 2:
                rows.append((p[0], p[1], 1.0))
            else:
                rows.append((p[0], p[1], p[2]))
        arr = np.array(rows, dtype=float)
    if arr.size == 0:
        raise EmptyPixelSet("pixel set is empty")
    if arr.ndim != 2 or arr.shape[1] not in (2, 3):
        raise InvalidParams(f"pixels must be (n, 2) or (n, 3), got shape {arr.shape}")
    if arr.shape[1] == 2:
        arr = np.column_stack([arr, np.ones(len(arr))])
    return arr


def check_camera_slice(vec: np.ndarray, pix: np.ndarray) -> None:
    """Raise if the camera entries of ``vec`` violate the model invariants."""
    f_x, f_y, u_0, v_0, b, d = vec[:6]
    if not np.all(np.isfinite(vec)):
        raise InvalidParams("parameter vector contains non-finite entries")
    if f_x <= 0 or f_y <= 0:
        raise InvalidParams(f"focal lengths must be positive, got f_x={f_x}, f_y={f_y}")
    if u_0 < 0 or v_0 < 0:
        raise InvalidParams(f"principal point must be non-negative, got ({u_0}, {v_0})")
    if b <= 0:
        raise InvalidParams(f"baseline must be positive, got {b}")
    if not np.all(d * pix[:, 2] > 0):
        raise DisparityZeroOrNegative("effective disparity must be > 0 for every pixel")


# --- generic graph --------------------------------------------------------
# These helpers take "columns": floats, numpy arrays or dual numbers.  They only
# use arithmetic operators and the supplied trig/abs callables, so the same code
# produces loss values and (through diff.Dual) their derivatives.


def _world(cols, pix):
    f_x, f_y, u_0, v_0, b, d, cos_t, sin_t, t_x, t_y, t_z = cols
    u, v, d_obs = pix[:, 0], pix[:, 1], pix[:, 2]
    x, y, z = stereo_to_camera(f_x, f_y, u_0, v_0, b, d * d_obs, u, v)
    return rotate_translate(cos_t, sin_t, t_x, t_y, t_z, x, y, z)


def _columns(vec, cos_t, sin_t):
    return (vec[0], vec[1], vec[2], vec[3], vec[4], vec[5], cos_t, sin_t, vec[7], vec[8], vec[9])


def _point_error(true_xyz, other_xyz, absfn):
    ax = absfn(other_xyz[0] - true_xyz[0])
    ay = absfn(other_xyz[1] - true_xyz[1])
    az = absfn(other_xyz[2] - true_xyz[2])
    return (ax + ay + az) / 3.0


def plain_graph(true_vec, pred, pix, trig, absfn):
    """Mean over pixels of the 3-component MAE between true and predicted reconstructions."""
    cos, sin = trig
    t = np.cos(true_vec[THETA]), np.sin(true_vec[THETA])
    true_xyz = _world(_columns(true_vec, *t), pix)
    pred_xyz = _world(_columns(pred, cos(pred[THETA]), sin(pred[THETA])), pix)
    return _point_error(true_xyz, pred_xyz, absfn).mean(axis=-1)


def disentangled_graph(true_vec, pred, pix, trig, absfn, hybrid, point_terms=True):
    """Per-parameter loss terms.

    Returns ``(camera_terms, point_terms)``: an array-like of 10 terms, one per
    hybrid that takes a single camera entry from ``pred``, and a list of the 3
    X/Y/Z terms (zeros when ``point_terms`` is false).

    ``hybrid(j, true_value, pred_value)`` must return a (10, 1) column whose row
    ``j`` is ``pred_value`` and whose other rows are ``true_value``.
    """
    cos, sin = trig
    cos_true, sin_true = np.cos(true_vec[THETA]), np.sin(true_vec[THETA])
    true_xyz = _world(_columns(true_vec, cos_true, sin_true), pix)

    cols = [hybrid(j, true_vec[j], pred[j]) for j in range(6)]
    cols.append(hybrid(THETA, cos_true, cos(pred[THETA])))
    cols.append(hybrid(THETA, sin_true, sin(pred[THETA])))
    cols.extend(hybrid(j, true_vec[j], pred[j]) for j in (7, 8, 9))
    hyb_xyz = _world(cols, pix)
    camera = _point_error(true_xyz, hyb_xyz, absfn).mean(axis=-1)

    if point_terms:
        points = [absfn(pred[10 + c] - true_vec[10 + c]) / 3.0 for c in range(3)]
    else:
        points = [0.0, 0.0, 0.0]
    return camera, points


def weighted_total(camera_terms, point_terms, alphas) -> object:
    """Sum of alpha_i * L_i over all 13 terms, divided by 13.

    Summation order is fixed: the 10 camera terms, then X, Y, Z.
    """
    total = (camera_terms * alphas[:N_CAMERA]).sum()
    for c in range(3):
        total = total + point_terms[c] * alphas[N_CAMERA + c]
    return total / N_PARAMS


def _float_hybrid(j, true_value, pred_value):
    col = np.full((N_CAMERA, 1), true_value, dtype=float)
    col[j, 0] = pred_value
    return col


_FLOAT_TRIG = (np.cos, np.sin)


# --- public API -----------------------------------------------------------


def reconstruct(omega, pixel) -> WorldPoint:
    """World point for one pixel under the camera entries of ``omega``.

    The X/Y/Z entries of ``omega`` are not used.
    """
    vec = as_vector(omega)
    pix = as_pixel_array([pixel])
    check_camera_slice(vec, pix)
    params = CameraParams.from_values(*vec[:5], vec[6], vec[7], vec[8], vec[9])
    u, v, d_obs = pix[0]
    return project_to_world(params, ImageObservation(float(u), float(v), float(vec[5] * d_obs)))


def reconstruct_many(omega, pixels) -> np.ndarray:
    """Vectorized :func:`reconstruct`; returns an (n, 3) array."""
    vec = as_vector(omega)
    pix = as_pixel_array(pixels)
    check_camera_slice(vec, pix)
    X, Y, Z = _world(_columns(vec, np.cos(vec[THETA]), np.sin(vec[THETA])), pix)
    return np.column_stack([X, Y, Z])


def cpl(omega_true, omega_pred, pixels) -> float:
    t, p = as_vector(omega_true), as_vector(omega_pred)
    pix = as_pixel_array(pixels)
    check_camera_slice(t, pix)
    check_camera_slice(p, pix)
    return float(plain_graph(t, p, pix, _FLOAT_TRIG, np.abs))


@dataclass(frozen=True)
class LossBreakdown:
    terms: np.ndarray
    aggregate: float
    weighting: str = "uniform"

    def __post_init__(self) -> None:
        terms = np.asarray(self.terms, dtype=float)
        if terms.shape != (N_PARAMS,):
            raise InvalidParams(f"breakdown needs 13 terms, got shape {terms.shape}")
        if np.any(terms < 0):
            raise InvalidParams("loss terms must be non-negative")
        terms.setflags(write=False)
        object.__setattr__(self, "terms", terms)

    def __getitem__(self, name: str) -> float:
        return float(self.terms[INDEX[name]])

    def as_dict(self) -> dict[str, float]:
        return {name: float(v) for name, v in zip(NAMES, self.terms)}


@dataclass(frozen=True)
class AdaptiveWeights:
    alphas: np.ndarray

    def __post_init__(self) -> None:
        a = np.asarray(self.alphas, dtype=float)
        if a.shape != (N_PARAMS,):
            raise InvalidParams(f"need 13 weights, got shape {a.shape}")
        if not np.all(np.isfinite(a)) or np.any(a <= 0):
            raise NonPositiveWeight(f"all weights must be finite and > 0, got {a.tolist()}")
        if abs(a.sum() - N_PARAMS) > 1e-9:
            raise InvalidParams(f"weights must sum to 13, got {a.sum()!r}")
        a.setflags(write=False)
        object.__setattr__(self, "alphas", a)

    @classmethod
    def uniform(cls) -> AdaptiveWeights:
        return cls(np.ones(N_PARAMS))

    @classmethod
    def normalized(cls, raw) -> AdaptiveWeights:
        raw = np.asarray(raw, dtype=float)
        if not np.all(np.isfinite(raw)) or np.any(raw <= 0):
            raise NonPositiveWeight(f"all weights must be finite and > 0, got {raw.tolist()}")
        return cls(raw * (N_PARAMS / raw.sum()))


def cpl_disentangled(omega_true, omega_pred, pixels, point_terms: bool = True) -> LossBreakdown:
    """Per-parameter loss terms and their 13-way mean.

    With ``point_terms=False`` the X/Y/Z terms are defined as zero; this is the
    10-parameter mode used by the estimator.
    """
    t, p = as_vector(omega_true), as_vector(omega_pred)
    pix = as_pixel_array(pixels)
    check_camera_slice(t, pix)
    check_camera_slice(p, pix)
    camera, points = disentangled_graph(t, p, pix, _FLOAT_TRIG, np.abs, _float_hybrid, point_terms)
    terms = np.concatenate([camera, np.asarray(points, dtype=float)])
    aggregate = float(weighted_total(camera, points, np.ones(N_PARAMS)))
    return LossBreakdown(terms, aggregate, "uniform")


def cpl_weighted(breakdown: LossBreakdown, weights: AdaptiveWeights) -> float:
    if not isinstance(weights, AdaptiveWeights):
        weights = AdaptiveWeights(weights)
    terms = breakdown.terms
    return float(weighted_total(terms[:N_CAMERA], list(terms[N_CAMERA:]), weights.alphas))


def nmae(y_true: Sequence[float], y_pred: Sequence[float]) -> float:
    """Mean absolute error normalized by the mean magnitude of the targets."""
    yt = np.asarray(y_true, dtype=float).ravel()
    yp = np.asarray(y_pred, dtype=float).ravel()
    if yt.shape != yp.shape:
        raise LengthMismatch(f"length mismatch: {yt.size} targets vs {yp.size} predictions")
    if yt.size == 0:
        raise LengthMismatch("nmae needs at least one value")
    denom = np.mean(np.abs(yt))
    if denom == 0:
        raise ZeroDenominator("mean |y_true| is zero")
    return float(np.mean(np.abs(yt - yp)) / denom)


def nmae_per_parameter(truth: ParamVector13, estimate: ParamVector13,
                       names: Iterable[str] = TABLE_ORDER) -> dict[str, float]:
    """Per-parameter NMAE (NaN where the true value is zero)."""
    out = {}
    for name in names:
        try:
            out[name] = nmae([truth[name]], [estimate[name]])
        except ZeroDenominator:
            out[name] = math.nan
    return out
