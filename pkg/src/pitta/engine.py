"""Online adaptation loop: PI-TTA objective, entropy-only baseline, source-only.

Each step predicts with the current parameters, updates the running
physics state from the adapted input representation, builds the objective
and (every ``update_interval`` steps) takes one SGD step on the adaptable
normalization parameters.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import losses, tape
from .backbone import Backbone, ForwardOutput, forward, sgd_step

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PittaConfig:
    lambda_temp: float = 1.0
    lambda_grav: float = 1.0
    lambda_spec: float = 1.0
    lambda_dir: float = 0.1
    lambda_se: float = 0.1
    alpha_g: float = 0.9
    alpha_r: float = 0.9
    alpha_s: float = 0.9
    tau_g: float = 0.1
    kappa_c: float = 10.0
    tau_c: float = 0.6
    kappa_h: float = 10.0
    tau_h: float | None = None  # None -> 0.5 * log(num_classes)
    epsilon: float = 1e-8
    eta: float = 1e-3
    update_interval: int | None = 1  # None: never update
    gamma_spec_mode: str = "constant-one"
    reliable_var: float | None = None  # None -> 2 * tau_g
    g_ref_warmup_norm: float = 0.5

    def __post_init__(self):
        for name in ("lambda_temp", "lambda_grav", "lambda_spec", "lambda_dir", "lambda_se", "eta"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        for name in ("alpha_g", "alpha_r", "alpha_s"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.tau_g <= 0 or self.epsilon <= 0:
            raise ValueError("tau_g and epsilon must be positive")
        if self.update_interval is not None and self.update_interval < 1:
            raise ValueError("update_interval must be a positive integer or None")
        if self.gamma_spec_mode not in ("constant-one", "entropy-weighted"):
            raise ValueError(f"unknown gamma_spec_mode {self.gamma_spec_mode!r}")

    def tau_h_for(self, num_classes: int) -> float:
        return 0.5 * math.log(num_classes) if self.tau_h is None else self.tau_h

    @property
    def reliable_threshold(self) -> float:
        return 2 * self.tau_g if self.reliable_var is None else self.reliable_var

    def is_update_step(self, step: int) -> bool:
        return self.update_interval is not None and step % self.update_interval == 0

    def without_physics(self) -> "PittaConfig":
        return replace(self, lambda_temp=0.0, lambda_grav=0.0, lambda_spec=0.0)


@dataclass
class AdaptState:
    g_hat: np.ndarray
    g_ref: np.ndarray
    p_ref: np.ndarray | None
    ref_gamma: np.ndarray  # input-norm affine at adaptation start, for the g back-map
    ref_beta: np.ndarray
    z_hist: tuple = ()  # up to two previous batch-mean embeddings, newest first
    prev_argmax: int | None = None
    step: int = 0

    @classmethod
    def initial(cls, model: Backbone) -> "AdaptState":
        return cls(np.zeros(3), np.zeros(3), None,
                   model.params["in_norm.gamma"][:3].copy(),
                   model.params["in_norm.beta"][:3].copy())

    def copy(self) -> "AdaptState":
        return replace(self, g_hat=self.g_hat.copy(), g_ref=self.g_ref.copy(),
                       p_ref=None if self.p_ref is None else self.p_ref.copy())


@dataclass
class LossBreakdown:
    l_stat: float = 0.0
    l_grav: float = 0.0
    l_temp: float = 0.0
    l_spec: float = 0.0
    lambda_temp: float = 0.0
    lambda_grav_t: float = 0.0
    lambda_spec_t: float = 0.0
    w_t_mean: float = 0.0
    total: float = 0.0

    def recompose(self) -> float:
        return (self.l_stat + self.lambda_temp * self.l_temp
                + self.lambda_grav_t * self.l_grav + self.lambda_spec_t * self.l_spec)


@dataclass
class Physics:
    """Per-step physics quantities; Var fields stay attached to the tape."""

    a_bar: tape.Var
    g_hat: tape.Var
    v_t: float
    P_t: tape.Var
    reliable: bool
    g_ref: np.ndarray
    p_ref: np.ndarray
    spectral_entropy: float


@dataclass
class StepResult:
    predictions: np.ndarray
    breakdown: LossBreakdown
    state: AdaptState
    model: Backbone
    updated: bool = False
    grads: dict | None = None
    event: str | None = None
    physics: Physics | None = field(default=None, repr=False)
    mean_entropy: float = 0.0
    probs: np.ndarray | None = field(default=None, repr=False)
    z_mean: np.ndarray | None = field(default=None, repr=False)


# ---------------------------------------------------------------------------
# state updates


def adapted_acceleration(out: ForwardOutput, state: AdaptState) -> tape.Var:
    """First three psi channels mapped back to input g units.

    Inverts the input normalization with the batch statistics actually used
    and the affine recorded at adaptation start, so at the start the map is
    the identity and drift of the adapted affine shows up in g units.
    """
    mean, std = out.psi_stats
    psi_acc = tape.getitem(out.psi, (Ellipsis, slice(0, 3)))
    scale = std[..., :3] / state.ref_gamma
    return (psi_acc - state.ref_beta) * scale + mean[..., :3]


def gravity_state_update(out: ForwardOutput, state: AdaptState, cfg: PittaConfig):
    """Returns (g_hat Var, a_bar Var, v_t)."""
    acc = adapted_acceleration(out, state)
    a_bar = tape.mean(acc, axis=(0, 1))
    g_hat = cfg.alpha_g * state.g_hat + (1 - cfg.alpha_g) * a_bar
    v_t = float(np.mean(acc.value.var(axis=(0, 1))))
    return g_hat, a_bar, v_t


def observe_physics(out: ForwardOutput, state: AdaptState, cfg: PittaConfig) -> Physics:
    g_hat, a_bar, v_t = gravity_state_update(out, state, cfg)
    reliable = v_t <= cfg.reliable_threshold
    g_ref = losses.g_ref_update(state.g_ref, g_hat.value, cfg.alpha_r, cfg.epsilon, reliable)
    P_t = losses.psd(out.psi, cfg.epsilon)
    p_prev = state.p_ref if state.p_ref is not None else np.full(P_t.shape, 1.0 / P_t.shape[0])
    p_ref = losses.p_ref_update(p_prev, P_t.value, cfg.alpha_s)
    se = float(losses.spectral_entropy(P_t.value, cfg.epsilon).value)
    return Physics(a_bar, g_hat, v_t, P_t, reliable, g_ref, p_ref, se)


def spectral_step(P_t, state: AdaptState, cfg: PittaConfig, mean_entropy: float = 0.0,
                  num_classes: int = 2):
    """Returns (loss Var, p_ref_new, lambda_spec_t); the loss uses the updated reference."""
    p_prev = state.p_ref if state.p_ref is not None else np.full(tape.as_var(P_t).shape, 1.0 / tape.as_var(P_t).shape[0])
    p_ref = losses.p_ref_update(p_prev, tape.as_var(P_t).value, cfg.alpha_s)
    loss = losses.spectral_loss(P_t, p_ref, cfg.lambda_se, cfg.epsilon)
    lam = cfg.lambda_spec * losses.spectral_gamma(cfg.gamma_spec_mode, mean_entropy, num_classes)
    return loss, p_ref, lam


def _dominant(pred: np.ndarray) -> int:
    return int(np.argmax(np.bincount(pred)))


def _next_state(state: AdaptState, phys: Physics, z_mean: np.ndarray, pred: np.ndarray) -> AdaptState:
    hist = (z_mean,) + tuple(state.z_hist[:1])
    return replace(state, g_hat=phys.g_hat.value.copy(), g_ref=phys.g_ref, p_ref=phys.p_ref,
                   z_hist=hist, prev_argmax=_dominant(pred), step=state.step + 1)


# ---------------------------------------------------------------------------
# objective


@dataclass
class Objective:
    total: tape.Var
    breakdown: LossBreakdown


@dataclass(frozen=True)
class Gates:
    lambda_grav_t: float
    lambda_spec_t: float
    w_t_mean: float


def compute_gates(out: ForwardOutput, state: AdaptState, phys: Physics, cfg: PittaConfig) -> Gates:
    probs = out.probs.value
    K = probs.shape[-1]
    H = losses.row_entropy(probs)
    flipped = np.zeros(len(probs), dtype=bool)
    if state.prev_argmax is not None:
        flipped = np.argmax(probs, axis=1) != state.prev_argmax
    w = losses.temporal_gate(probs.max(axis=1), H, flipped, cfg.kappa_c, cfg.tau_c,
                             cfg.kappa_h, cfg.tau_h_for(K))
    lam_grav = losses.gravity_gate(phys.v_t, cfg.lambda_grav, cfg.tau_g)
    lam_spec = cfg.lambda_spec * losses.spectral_gamma(cfg.gamma_spec_mode, float(H.mean()), K)
    return Gates(lam_grav, lam_spec, float(w.mean()))


def pitta_objective(out: ForwardOutput, state: AdaptState, phys: Physics, cfg: PittaConfig,
                    gates: Gates | None = None) -> Objective:
    """Combined loss. Gates and references are constants w.r.t. the parameters."""
    if gates is None:
        gates = compute_gates(out, state, phys, cfg)
    l_stat = losses.entropy_loss(out.probs, out.log_probs)
    z_mean = tape.mean(out.z, axis=0)
    z1 = state.z_hist[0] if len(state.z_hist) > 0 else None
    z2 = state.z_hist[1] if len(state.z_hist) > 1 else None
    l_temp = losses.temporal_loss(z_mean, z1, z2, gates.w_t_mean)
    l_grav = losses.gravity_loss(phys.g_hat, phys.g_ref, cfg.lambda_dir, cfg.epsilon,
                                 cfg.g_ref_warmup_norm)
    l_spec = losses.spectral_loss(phys.P_t, phys.p_ref, cfg.lambda_se, cfg.epsilon)

    total = l_stat
    # zero-weight terms stay off the tape so the objective reduces exactly
    for lam, term in ((cfg.lambda_temp, l_temp), (gates.lambda_grav_t, l_grav),
                      (gates.lambda_spec_t, l_spec)):
        if lam != 0.0:
            total = total + lam * term
    bd = LossBreakdown(float(l_stat.value), float(l_grav.value), float(l_temp.value),
                       float(l_spec.value), cfg.lambda_temp, gates.lambda_grav_t,
                       gates.lambda_spec_t, gates.w_t_mean, float(total.value))
    return Objective(total, bd)


def frozen_objective(state: AdaptState, cfg: PittaConfig, phys0: Physics, gates: Gates,
                     term: str = "total"):
    """Loss function of the forward output with gates and references pinned.

    This is the function whose gradient a step actually follows; ``term``
    selects one component ("stat", "grav", "temp", "spec") or the total.
    """
    def loss_fn(out, _state=None):
        g_hat, a_bar, v_t = gravity_state_update(out, state, cfg)
        P_t = losses.psd(out.psi, cfg.epsilon)
        phys = replace(phys0, g_hat=g_hat, a_bar=a_bar, P_t=P_t)
        if term == "stat":
            return losses.entropy_loss(out.probs, out.log_probs)
        if term == "grav":
            return losses.gravity_loss(g_hat, phys0.g_ref, cfg.lambda_dir, cfg.epsilon,
                                       cfg.g_ref_warmup_norm)
        if term == "temp":
            z1 = state.z_hist[0] if len(state.z_hist) > 0 else None
            z2 = state.z_hist[1] if len(state.z_hist) > 1 else None
            return losses.temporal_loss(tape.mean(out.z, axis=0), z1, z2, gates.w_t_mean)
        if term == "spec":
            return losses.spectral_loss(P_t, phys0.p_ref, cfg.lambda_se, cfg.epsilon)
        return pitta_objective(out, state, phys, cfg, gates).total

    return loss_fn


# ---------------------------------------------------------------------------
# steps


def _finish(model, out, state, cfg, objective, phys, apply_update, update_step):
    pred = out.predictions
    probs = out.probs.value
    z_mean = out.z.value.mean(axis=0)
    mean_H = float(losses.row_entropy(probs).mean())
    result = StepResult(pred, objective.breakdown if objective else LossBreakdown(), state, model,
                        physics=phys, mean_entropy=mean_H, probs=probs, z_mean=z_mean)
    if objective is not None and not np.isfinite(objective.breakdown.total):
        log.warning("step %d: non-finite loss, update skipped and state rolled back", state.step)
        result.state = replace(state.copy(), step=state.step + 1)
        result.event = "non-finite-loss"
        return result
    result.state = _next_state(state, phys, z_mean, pred)
    if objective is None or not update_step:
        return result
    tape.backward(objective.total)
    grads = {k: (np.zeros_like(model.params[k]) if out.leaves[k].grad is None
                 else out.leaves[k].grad) for k in model.adaptable_names}
    result.grads = grads
    if apply_update:
        result.updated = sgd_step(model, grads, cfg.eta)
        if not result.updated:
            result.event = "non-finite-grad"
    return result


def pitta_step(model: Backbone, batch, state: AdaptState, cfg: PittaConfig,
               apply_update: bool = True) -> StepResult:
    """One online step: predict, update physics state, adapt (every K steps).

    Predictions come from the parameters before this step's update. With
    ``apply_update=False`` the gradient is returned in ``grads`` but not applied.
    """
    out = forward(model, batch, "train", update_running=model.config.adapt_running_stats)
    phys = observe_physics(out, state, cfg)
    objective = pitta_objective(out, state, phys, cfg)
    return _finish(model, out, state, cfg, objective, phys, apply_update,
                   cfg.is_update_step(state.step))


def tent_step(model: Backbone, batch, cfg: PittaConfig, state: AdaptState | None = None,
              apply_update: bool = True) -> StepResult:
    """Entropy-only adaptation on the same parameters and schedule.

    ``state`` only tracks the physics diagnostics; it never enters the loss.
    """
    if state is None:
        state = AdaptState.initial(model)
    out = forward(model, batch, "train", update_running=model.config.adapt_running_stats)
    phys = observe_physics(out, state, cfg)
    l_stat = losses.entropy_loss(out.probs, out.log_probs)
    v = float(l_stat.value)
    objective = Objective(l_stat, LossBreakdown(l_stat=v, total=v))
    return _finish(model, out, state, cfg, objective, phys, apply_update,
                   cfg.is_update_step(state.step))


def source_only_step(model: Backbone, batch, state: AdaptState, cfg: PittaConfig) -> StepResult:
    out = forward(model, batch, "train")
    phys = observe_physics(out, state, cfg)
    return _finish(model, out, state, cfg, None, phys, False, False)


def run_step(method: str, model, batch, state, cfg, apply_update: bool = True) -> StepResult:
    if method == "pitta":
        return pitta_step(model, batch, state, cfg, apply_update)
    if method == "tent":
        return tent_step(model, batch, cfg, state, apply_update)
    if method == "source-only":
        return source_only_step(model, batch, state, cfg)
    raise ValueError(f"unknown method {method!r}")
