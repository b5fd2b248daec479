"""Central finite-difference verification of the hand-derived backward pass."""

from __future__ import annotations

import time

import numpy as np

from .encoder import EncoderParams, encode, encode_backward, encoder_init

DEFAULT_STEP = 1e-4


def _probe_value(params: EncoderParams, frames: np.ndarray, g: np.ndarray) -> float:
    embedding, _ = encode(params, frames)
    return float(g @ embedding)


def finite_difference_grads(
    params: EncoderParams, frames: np.ndarray, g: np.ndarray, step: float = DEFAULT_STEP
) -> EncoderParams:
    """Numeric gradient of ``g . encode(params, frames)`` per parameter.

    Perturbs each scalar in place by +-step (restoring it afterwards) and
    accumulates centered differences in float64.
    """
    grads = params.zeros_like()
    for (_, arr), (_, gout) in zip(params.named_arrays(), grads.named_arrays()):
        flat = arr.reshape(-1)
        gflat = gout.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            plus = _probe_value(params, frames, g)
            flat[i] = orig - step
            minus = _probe_value(params, frames, g)
            flat[i] = orig
            gflat[i] = (plus - minus) / (2.0 * step)
    return grads


def max_relative_error(analytic: EncoderParams, numeric: EncoderParams) -> float:
    worst = 0.0
    for (_, a), (_, n) in zip(analytic.named_arrays(), numeric.named_arrays()):
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-8)
        worst = max(worst, float(np.max(np.abs(a - n) / denom)) if a.size else 0.0)
    return worst


def run_gradcheck(
    seed: int = 7,
    layer_counts: tuple[int, ...] = (0, 1, 2),
    d_in: int = 4,
    embed_dim: int = 8,
    ffn_dim: int = 16,
    pool_hidden_dim: int = 8,
    seq_len: int = 3,
    step: float = DEFAULT_STEP,
) -> dict:
    """Check every parameter gradient for each requested TTE depth.

    Returns per-depth max relative errors plus the overall worst case and
    wall time.
    """
    t0 = time.perf_counter()
    per_depth = {}
    for n_layers in layer_counts:
        params = encoder_init(
            d_in=d_in,
            embed_dim=embed_dim,
            ffn_dim=ffn_dim,
            pool_hidden_dim=pool_hidden_dim,
            n_tte_layers=n_layers,
            seq_len=seq_len,
            seed=seed + n_layers,
        )
        rng = np.random.default_rng(seed * 1000 + n_layers)
        frames = rng.normal(size=(seq_len, d_in))
        g = rng.normal(size=embed_dim)
        _, cache = encode(params, frames)
        analytic = encode_backward(params, cache, g)
        numeric = finite_difference_grads(params, frames, g, step=step)
        per_depth[n_layers] = max_relative_error(analytic, numeric)
    return {
        "per_depth": per_depth,
        "max_rel_error": max(per_depth.values()),
        "elapsed_s": time.perf_counter() - t0,
    }
