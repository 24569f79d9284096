"""Recover camera parameters by minimizing the disentangled projection loss with Adam.

Each optimized entry is moved in units of ``max(1, |initial value|)`` so one
learning rate suits pixel-valued focal lengths and radian-valued pitch alike.
Each free entry only influences its own disentangled term, so every entry
keeps its own learning rate, halved whenever that term plateaus.  The run stops
early once the aggregate loss stops improving.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import projection_loss as pl
from .diff import grad_cpl
from .errors import CalibrationError, DivergenceDetected, InvalidParams, NonFiniteGradient
from .scene_gen import Dataset

log = logging.getLogger(__name__)

RESULT_SCHEMA = "cplcalib-result/1"
WEIGHTING_MODES = ("uniform", "adaptive")


@dataclass(frozen=True)
class EstimatorConfig:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    max_iterations: int = 5000
    batch_size: int = 16
    early_stop_patience: int = 50
    early_stop_rel_tol: float = 1e-10
    lr_decay_factor: float = 0.5
    lr_decay_patience: int = 10
    min_learning_rate: float = 1e-12
    weighting_mode: str = "uniform"
    ema_decay: float = 0.99
    weight_eps: float = 1e-8
    burn_in: int = 10
    divergence_factor: float = 1e6
    fixed: tuple = ("b",)
    point_terms: bool = False
    seed: int = 0

    def __post_init__(self) -> None:
        if not self.learning_rate > 0:
            raise InvalidParams(f"learning_rate must be > 0, got {self.learning_rate}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise InvalidParams(f"betas must lie in [0, 1), got {self.beta1}, {self.beta2}")
        if self.early_stop_patience < 1 or self.lr_decay_patience < 1:
            raise InvalidParams("patience values must be >= 1")
        if self.max_iterations < 0 or self.batch_size < 1:
            raise InvalidParams("max_iterations must be >= 0 and batch_size >= 1")
        if not 0 < self.lr_decay_factor <= 1:
            raise InvalidParams(f"lr_decay_factor must lie in (0, 1], got {self.lr_decay_factor}")
        if self.weighting_mode not in WEIGHTING_MODES:
            raise InvalidParams(f"weighting_mode must be one of {WEIGHTING_MODES}")
        unknown = set(self.fixed) - set(pl.NAMES)
        if unknown:
            raise InvalidParams(f"unknown parameter names in fixed: {sorted(unknown)}")
        object.__setattr__(self, "fixed", tuple(self.fixed))

    def free_indices(self) -> list[int]:
        n = pl.N_PARAMS if self.point_terms else pl.N_CAMERA
        return [i for i in range(n) if pl.NAMES[i] not in self.fixed]


# --- Adam -------------------------------------------------------------------


@dataclass(frozen=True)
class AdamState:
    params: np.ndarray
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros_like(cls, params) -> AdamState:
        p = np.array(params, dtype=float)
        return cls(p, np.zeros_like(p), np.zeros_like(p), 0)


def adam_step(state: AdamState, gradient, lr: float = 1e-3, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> AdamState:
    g = np.asarray(getattr(gradient, "values", gradient), dtype=float)
    if g.shape != state.params.shape:
        raise InvalidParams(f"gradient shape {g.shape} does not match parameters {state.params.shape}")
    if not np.all(np.isfinite(g)):
        raise NonFiniteGradient(f"non-finite gradient {g.tolist()}")
    t = state.t + 1
    m = beta1 * state.m + (1.0 - beta1) * g
    v = beta2 * state.v + (1.0 - beta2) * (g * g)
    m_hat = m / (1.0 - beta1**t)
    v_hat = v / (1.0 - beta2**t)
    params = state.params - lr * m_hat / (np.sqrt(v_hat) + eps)
    return AdamState(params, m, v, t)


# --- adaptive weights -------------------------------------------------------


@dataclass
class WeightState:
    """Running state for inverse-EMA loss balancing.

    Terms outside ``active`` (fixed or unused parameters) keep weight 1.
    """

    active: np.ndarray
    decay: float = 0.99
    eps: float = 1e-8
    burn_in: int = 10
    ema: np.ndarray | None = None
    updates: int = 0

    @classmethod
    def for_indices(cls, indices, **kwargs) -> WeightState:
        active = np.zeros(pl.N_PARAMS, dtype=bool)
        active[list(indices)] = True
        return cls(active=active, **kwargs)


def update_adaptive_weights(state: WeightState, breakdown: pl.LossBreakdown) -> pl.AdaptiveWeights:
    """Fold ``breakdown`` into the running averages (in place) and return the new weights."""
    terms = np.asarray(breakdown.terms, dtype=float)
    if state.ema is None:
        state.ema = terms.copy()
    else:
        state.ema = state.decay * state.ema + (1.0 - state.decay) * terms
    state.updates += 1
    if state.updates <= state.burn_in or not state.active.any():
        return pl.AdaptiveWeights.uniform()
    raw = 1.0 / (state.ema[state.active] + state.eps)
    alphas = np.ones(pl.N_PARAMS)
    alphas[state.active] = raw * (state.active.sum() / raw.sum())
    return pl.AdaptiveWeights(alphas)


# --- estimation -------------------------------------------------------------


@dataclass
class EstimateResult:
    omega_hat: pl.ParamVector13
    breakdown: pl.LossBreakdown
    nmae: dict
    iterations: int
    converged: bool
    loss_trace: list
    best_trace: list
    stop_reason: str
    final_learning_rate: float
    kink_steps: int = 0
    weights: pl.AdaptiveWeights = field(default_factory=pl.AdaptiveWeights.uniform)
    # adaptive mode only: per iteration after burn-in, (alpha_i * ema_i) over active terms
    balance_trace: list = field(default_factory=list)

    @property
    def final_loss(self) -> float:
        return self.breakdown.aggregate

    def to_json(self, config: EstimatorConfig | None = None, extra: dict | None = None) -> dict:
        out = {
            "schema_version": RESULT_SCHEMA,
            "omega_hat": self.omega_hat.as_dict(),
            "breakdown": self.breakdown.as_dict(),
            "aggregate_loss": self.breakdown.aggregate,
            "nmae": {k: (None if math.isnan(v) else v) for k, v in self.nmae.items()},
            "iterations": self.iterations,
            "converged": self.converged,
            "stop_reason": self.stop_reason,
            "final_learning_rate": self.final_learning_rate,
            "kink_steps": self.kink_steps,
            "weights": dict(zip(pl.NAMES, map(float, self.weights.alphas))),
            "loss_trace": list(map(float, self.loss_trace)),
        }
        if config is not None:
            cfg = dict(config.__dict__)
            cfg["fixed"] = list(cfg["fixed"])
            out["config"] = cfg
        if extra:
            out.update(extra)
        return out


def perturbed_init(truth: pl.ParamVector13, frac: float, rng: np.random.Generator,
                   fixed=("b",), angle_delta: float = 0.1) -> pl.ParamVector13:
    """Multiply each camera entry by U(1-frac, 1+frac); pitch gets an additive U(-0.1, 0.1) rad.

    Entries named in ``fixed`` and the X/Y/Z entries keep their true values.
    """
    vals = truth.as_array()
    for i, name in enumerate(pl.CAMERA_NAMES):
        if name == "theta_p":
            delta = rng.uniform(-angle_delta, angle_delta)
            if name not in fixed:
                vals[i] += delta
        else:
            factor = rng.uniform(1.0 - frac, 1.0 + frac)
            if name not in fixed:
                vals[i] *= factor
    return pl.ParamVector13(tuple(vals))


def _batches(rng: np.random.Generator, n: int, size: int):
    while True:
        order = rng.permutation(n)
        for start in range(0, n, size):
            yield order[start:start + size]


def estimate(dataset: Dataset, init, cfg: EstimatorConfig = EstimatorConfig()) -> EstimateResult:
    if len(dataset) == 0:
        raise InvalidParams("dataset is empty")
    truth = dataset.truth()
    t = truth.as_array()
    init_vec = pl.as_vector(init)
    obs = dataset.observations
    pl.check_camera_slice(init_vec, obs)

    free = cfg.free_indices()
    fixed_mask = np.array([n in cfg.fixed for n in pl.NAMES])
    if np.any(init_vec[fixed_mask] != t[fixed_mask]):
        log.info("fixed entries differ from ground truth; they stay at their initial values")
    scale = np.maximum(1.0, np.abs(init_vec[free]))
    adaptive = cfg.weighting_mode == "adaptive"
    wstate = WeightState.for_indices(free, decay=cfg.ema_decay, eps=cfg.weight_eps, burn_in=cfg.burn_in)
    weights = pl.AdaptiveWeights.uniform()

    def breakdown_at(vec):
        return pl.cpl_disentangled(t, vec, obs, point_terms=cfg.point_terms)

    omega = init_vec.copy()
    bd = breakdown_at(omega)
    loss0 = bd.aggregate
    best, best_omega, best_bd = loss0, omega.copy(), bd
    loss_trace, best_trace, balance = [loss0], [loss0], []

    def result(iterations, converged, reason, lr, kinks):
        nm = pl.nmae_per_parameter(truth, pl.ParamVector13(tuple(best_omega)))
        return EstimateResult(
            omega_hat=pl.ParamVector13(tuple(best_omega)), breakdown=best_bd, nmae=nm,
            iterations=iterations, converged=converged, loss_trace=loss_trace, best_trace=best_trace,
            stop_reason=reason, final_learning_rate=lr, kink_steps=kinks, weights=weights,
            balance_trace=balance,
        )

    if loss0 == 0.0:
        return result(0, True, "zero-loss", cfg.learning_rate, 0)

    rng = np.random.default_rng(cfg.seed)
    batches = _batches(rng, len(obs), cfg.batch_size)
    state = AdamState.zeros_like(np.zeros(len(free)))
    lr = np.full(len(free), cfg.learning_rate)
    term_best = bd.terms[free].copy()
    term_stall = np.zeros(len(free), dtype=int)
    stall = kink_steps = 0
    mode = "weighted" if adaptive else "disentangled"
    iteration = 0
    reason = "max-iterations"
    for iteration in range(1, cfg.max_iterations + 1):
        batch = obs[next(batches)]
        g = grad_cpl(t, omega, batch, mode=mode, weights=weights if adaptive else None,
                     point_terms=cfg.point_terms, directions=free)
        kink_steps += g.flagged
        state = adam_step(state, g.values[free] * scale, lr, cfg.beta1, cfg.beta2, cfg.eps)
        omega = init_vec.copy()
        omega[free] = init_vec[free] + scale * state.params
        try:
            bd = breakdown_at(omega)
        except CalibrationError as exc:
            raise DivergenceDetected(f"iteration {iteration}: parameters left the valid region ({exc})") from exc
        loss = bd.aggregate
        loss_trace.append(loss)
        if not loss <= cfg.divergence_factor * loss0:
            raise DivergenceDetected(f"iteration {iteration}: loss {loss:.3e} exceeds "
                                     f"{cfg.divergence_factor:g} x initial loss {loss0:.3e}")
        if adaptive:
            weights = update_adaptive_weights(wstate, bd)
            if wstate.updates == wstate.burn_in + 1:
                # the objective changes from uniform to adaptive weighting; stale
                # second moments would throttle the down-weighted terms
                state = AdamState(state.params, np.zeros(len(free)), np.zeros(len(free)), 0)
            if wstate.updates > wstate.burn_in:
                balance.append((weights.alphas * wstate.ema)[wstate.active].tolist())

        terms = bd.terms[free]
        improved = terms < term_best * (1.0 - cfg.early_stop_rel_tol)
        term_best = np.where(improved, terms, term_best)
        term_stall = np.where(improved, 0, term_stall + 1)
        decay = term_stall >= cfg.lr_decay_patience
        lr = np.where(decay, np.maximum(lr * cfg.lr_decay_factor, cfg.min_learning_rate), lr)
        term_stall[decay] = 0

        if loss < best * (1.0 - cfg.early_stop_rel_tol):
            best, best_omega, best_bd = loss, omega.copy(), bd
            stall = 0
        else:
            stall += 1
        best_trace.append(best)
        if best == 0.0:
            reason = "zero-loss"
            break
        if stall >= cfg.early_stop_patience:
            reason = "early-stop"
            break
    if kink_steps:
        log.debug("%d of %d steps evaluated at an MAE kink", kink_steps, iteration)
    return result(iteration, reason != "max-iterations", reason, float(lr.max()), kink_steps)


def estimate_many(dataset: Dataset, cfg: EstimatorConfig, seeds, frac: float = 0.2) -> list[EstimateResult]:
    """Independent recovery runs from perturbed starts, one per seed."""
    out = []
    truth = dataset.truth()
    for seed in seeds:
        rng = np.random.default_rng(seed)
        init = perturbed_init(truth, frac, rng, fixed=cfg.fixed)
        out.append(estimate(dataset, init, replace(cfg, seed=seed)))
    return out
