"""Loss terms and gates of the physics-informed objective.

Every loss accepts arrays or tape ``Var`` inputs and returns a ``Var`` so it
can sit inside a differentiated objective; gates and EMA updates work on
plain arrays and are never differentiated.
"""
from __future__ import annotations

import logging

import numpy as np

from . import tape
from .tape import Var, as_var

log = logging.getLogger(__name__)

BAND_LO = 0.9
BAND_HI = 1.1


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    return np.exp(-np.logaddexp(0.0, -x))


# ---------------------------------------------------------------------------
# statistical term


def entropy_loss(probs, log_probs=None) -> Var:
    """Batch mean of H(p) = -sum_c p_c log p_c, with 0 log 0 = 0."""
    probs = as_var(probs)
    if np.any(probs.value < 0):
        raise ValueError("probabilities must be nonnegative")
    if log_probs is None:
        log_probs = tape.log(probs + (probs.value == 0).astype(np.float64))
    h = -tape.sum(probs * log_probs, axis=-1)
    return tape.mean(h)


def row_entropy(probs: np.ndarray) -> np.ndarray:
    p = np.asarray(probs, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        return -np.sum(np.where(p > 0, p * np.log(np.where(p > 0, p, 1.0)), 0.0), axis=-1)


# ---------------------------------------------------------------------------
# gravity consistency


def project_band(u, eps: float = 1e-8, lo: float = BAND_LO, hi: float = BAND_HI) -> np.ndarray:
    """Radial projection of a 3-vector onto the shell lo <= |u| <= hi."""
    u = np.asarray(u, dtype=np.float64)
    n = np.linalg.norm(u)
    if n < lo:
        return lo * u / (n + eps)
    if n > hi:
        return hi * u / (n + eps)
    return u.copy()


def band_distance_sq(g, eps: float = 1e-8) -> Var:
    """|g - project_band(g)|^2, differentiable piecewise in g."""
    g = as_var(g)
    n_val = float(np.linalg.norm(g.value))
    if BAND_LO <= n_val <= BAND_HI:
        return tape.mul(tape.sum(g), 0.0)
    n = tape.sqrt(tape.sum(tape.square(g)))
    target = BAND_LO if n_val < BAND_LO else BAND_HI
    scale = 1.0 - target / (n + eps)
    return tape.sum(tape.square(g * scale))


def gravity_loss(g_hat, g_ref, lambda_dir: float, eps: float = 1e-8,
                 warmup_norm: float = 0.5) -> Var:
    g_hat = as_var(g_hat)
    g_ref = np.asarray(g_ref, dtype=np.float64)
    loss = band_distance_sq(g_hat, eps)
    if lambda_dir > 0 and np.linalg.norm(g_ref) >= warmup_norm:
        n = tape.sqrt(tape.sum(tape.square(g_hat)))
        cos = tape.sum(g_hat * g_ref) / (n + eps)
        loss = loss + lambda_dir * (1.0 - cos)
    return loss


def gravity_gate(v_t: float, lambda_grav: float, tau_g: float) -> float:
    if v_t < 0:
        raise ValueError("variance must be nonnegative")
    return float(lambda_grav * np.exp(-v_t / tau_g))


def g_ref_update(g_ref, g_hat, alpha_r: float, eps: float = 1e-8, reliable: bool = True) -> np.ndarray:
    g_ref = np.asarray(g_ref, dtype=np.float64)
    if not reliable:
        return g_ref.copy()
    g_hat = np.asarray(g_hat, dtype=np.float64)
    return alpha_r * g_ref + (1 - alpha_r) * g_hat / (np.linalg.norm(g_hat) + eps)


# ---------------------------------------------------------------------------
# temporal continuity


def temporal_gate(c_t, H_t, flipped, kappa_c: float, tau_c: float, kappa_h: float,
                  tau_h: float) -> np.ndarray:
    c_t = np.asarray(c_t, dtype=np.float64)
    H_t = np.asarray(H_t, dtype=np.float64)
    keep = 1.0 - np.asarray(flipped, dtype=np.float64)
    return sigmoid(kappa_c * (c_t - tau_c)) * sigmoid(kappa_h * (tau_h - H_t)) * keep


def temporal_loss(z_t, z_prev, z_prev2, w_t: float) -> Var:
    """w_t * |z_t - 2 z_{t-1} + z_{t-2}|^2; zero until two past embeddings exist."""
    z_t = as_var(z_t)
    if z_prev is None or z_prev2 is None:
        return tape.mul(tape.sum(z_t), 0.0)
    d2 = z_t - 2.0 * np.asarray(z_prev) + np.asarray(z_prev2)
    return w_t * tape.sum(tape.square(d2))


# ---------------------------------------------------------------------------
# spectral stability


def psd(psi, eps: float = 1e-8) -> Var:
    """Normalized channel- and batch-aggregated power over bins 1..floor(T/2).

    ``psi`` has shape (B, T, C) or (T, C). Zero total power yields the
    uniform distribution (logged as degenerate).
    """
    psi = as_var(psi)
    if psi.value.ndim == 2:
        psi = tape.reshape(psi, (1,) + psi.shape)
    T = psi.shape[1]
    if T < 4:
        raise ValueError("spectrum needs at least 4 time steps")
    power = tape.sum(tape.power_spectrum(psi, axis=1), axis=(0, 2))
    total = float(power.value.sum())
    if not total > eps * eps:
        log.info("degenerate spectrum: zero non-DC power")
        F = T // 2
        return Var(np.full(F, 1.0 / F))
    return power / tape.sum(power)


def kl_smoothed(P, Q, eps: float) -> Var:
    P, Q = as_var(P), as_var(Q)
    return tape.sum(P * (tape.log(P + eps) - tape.log(Q + eps)))


def js_divergence(P, Q, eps: float = 1e-8) -> Var:
    P, Q = as_var(P), as_var(Q)
    if P.shape != Q.shape:
        raise ValueError(f"length mismatch {P.shape} vs {Q.shape}")
    M = 0.5 * (P + Q)
    return 0.5 * kl_smoothed(P, M, eps) + 0.5 * kl_smoothed(Q, M, eps)


def spectral_entropy(P, eps: float = 1e-8) -> Var:
    P = as_var(P)
    return -tape.sum(P * tape.log(P + eps))


def spectral_loss(P_t, p_ref, lambda_se: float, eps: float = 1e-8) -> Var:
    """JS(P_t, P_ref) + lambda_se * (SE(P_t) - SE(P_ref))^2 with P_ref constant."""
    p_ref = np.asarray(p_ref, dtype=np.float64)
    loss = js_divergence(P_t, p_ref, eps)
    if lambda_se > 0:
        se_ref = float(spectral_entropy(p_ref, eps).value)
        loss = loss + lambda_se * tape.square(spectral_entropy(P_t, eps) - se_ref)
    return loss


def p_ref_update(p_ref, P_t, alpha_s: float) -> np.ndarray:
    return alpha_s * np.asarray(p_ref, dtype=np.float64) + (1 - alpha_s) * np.asarray(P_t)


def spectral_gamma(mode: str, mean_entropy: float, num_classes: int) -> float:
    if mode == "constant-one":
        return 1.0
    if mode == "entropy-weighted":
        return float(np.exp(-mean_entropy / np.log(num_classes)))
    raise ValueError(f"unknown gamma_spec_mode {mode!r}")
