"""Reverse-process sampling: unconditional, mask-conditioned, autoregressive.

Conditioning is replacement-based inpainting: after every reverse step the
conditioned entries are overwritten with a forward-noised copy of the known
clean values at the new noise level, so that at the clean boundary they equal
the knowns exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import model as M
from . import schedule as S
from .core import (
    CAT_SLICE,
    DatasetConfig,
    detokenize_layout,
    detokenize_segments,
    encode_category,
    tokenize_layout,
    PAD_CATEGORY,
    TOKEN_DIM,
)


@dataclass(frozen=True)
class ConditionMask:
    """Per-entry boolean mask (True = entry is given) plus the known values."""

    mask: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        mask = np.asarray(self.mask, dtype=bool)
        values = np.asarray(self.values, dtype=np.float64)
        if mask.shape != values.shape:
            raise ValueError(f"mask shape {mask.shape} != values shape {values.shape}")
        # category bits of a token are conditioned together or not at all
        cat = mask[..., CAT_SLICE]
        if np.any(cat.any(axis=-1) & ~cat.all(axis=-1)):
            raise ValueError("category entries must be masked together per token")
        object.__setattr__(self, "mask", mask)
        object.__setattr__(self, "values", values)

    @property
    def empty(self) -> bool:
        return not self.mask.any()


@dataclass
class Trajectory:
    """(t, token matrix) snapshots, strictly decreasing t; last one is the sample."""

    snapshots: list = field(default_factory=list)

    def __len__(self):
        return len(self.snapshots)


def mask_from_layout(layout, cfg: DatasetConfig, kind: str) -> ConditionMask:
    """Build a 'cate' or 'cate_size' mask from a reference layout.

    Category conditioning fixes the category code of every token (PAD rows
    included, which also pins the element count); 'cate_size' additionally
    fixes the h and w entries.
    """
    tokens = tokenize_layout(layout, cfg)
    mask = np.zeros_like(tokens, dtype=bool)
    mask[:, CAT_SLICE] = True
    if kind == "cate_size":
        mask[:, 2] = True
        mask[:, 3] = True
    elif kind != "cate":
        raise ValueError(f"unknown mask kind {kind!r}")
    return ConditionMask(mask=mask, values=tokens)


def apply_condition(xt, cond: ConditionMask, t, sched: S.Schedule, rng):
    """Overwrite conditioned entries with the knowns noised to level t.

    t = -1 denotes the clean boundary: the knowns are copied verbatim.
    """
    xt = np.asarray(xt, dtype=np.float64)
    if cond is None or cond.empty:
        return xt
    if t < 0:
        noised = cond.values
    else:
        noised = S.q_sample(cond.values, t, rng.standard_normal(cond.values.shape), sched)
    out = xt.copy()
    m = np.broadcast_to(cond.mask, xt.shape)
    out[m] = np.broadcast_to(noised, xt.shape)[m]
    return out


def sample_tokens(predictor, sched: S.Schedule, shape, rng, method="ddpm",
                  eta=0.0, cond: ConditionMask | None = None,
                  capture_stride: int | None = None):
    """Drive the reverse process from x_T ~ N(0, I) down to a clean sample.

    predictor(x, t) must return the predicted noise for the whole batch; it
    may also return a VariancePrediction to supply a learned variance to the
    DDPM step. Returns (x0, trajectory-or-None).
    """
    T = sched.T
    x = rng.standard_normal(shape)
    x = apply_condition(x, cond, T - 1, sched, rng)
    traj = Trajectory() if capture_stride else None
    for t in range(T - 1, -1, -1):
        steps_done = T - 1 - t
        if traj is not None and steps_done % capture_stride == 0:
            traj.snapshots.append((t, x.copy()))
        pred = predictor(x, t)
        if isinstance(pred, M.VariancePrediction):
            eps_hat, var_coef = pred.eps_hat, pred.var_coef
        else:
            eps_hat, var_coef = pred, None
        if method == "ddpm":
            x = S.ddpm_step(x, eps_hat, t, sched, rng, var_pred=var_coef)
        elif method == "ddim":
            x = S.ddim_step(x, eps_hat, t, t - 1, eta, sched, rng)
        else:
            raise ValueError(f"unknown sampling method {method!r}")
        x = apply_condition(x, cond, t - 1, sched, rng)
    if traj is not None:
        traj.snapshots.append((-1, x.copy()))
    return x, traj


def _detok(batch, data_cfg: DatasetConfig):
    if data_cfg.mode == "segment":
        return [detokenize_segments(m, data_cfg) for m in batch]
    return [detokenize_layout(m, data_cfg) for m in batch]


def _check_compat(params, cfg: M.ModelConfig, data_cfg: DatasetConfig):
    if cfg.n_max != data_cfg.n_max:
        raise ValueError(
            f"model n_max {cfg.n_max} != dataset n_max {data_cfg.n_max}"
        )
    if "pos" not in params or params["pos"].shape[0] != cfg.n_positions:
        raise ValueError("parameters do not match the model config")


def sample_nonar(params, cfg: M.ModelConfig, sched: S.Schedule,
                 data_cfg: DatasetConfig, n_samples: int, seed: int,
                 mask: ConditionMask | None = None, method="ddpm", eta=0.0,
                 capture_stride: int | None = None):
    """Generate n_samples layouts (or segment sets) with the one-pass model.

    Each sample owns its own rng stream (seed xor sample index). Returns
    (items, token matrices, trajectories-or-None).
    """
    _check_compat(params, cfg, data_cfg)
    shape = (cfg.n_max, cfg.token_dim)
    outs, trajs = [], []
    for i in range(n_samples):
        rng = np.random.default_rng(seed ^ i)

        def predictor(x, t):
            pred = M.forward_nonar(params, cfg, x[None], np.array([t]))
            if pred.var_coef is not None:
                return M.VariancePrediction(pred.eps_hat[0], pred.var_coef[0])
            return pred.eps_hat[0]

        x0, traj = sample_tokens(
            predictor, sched, shape, rng, method=method, eta=eta, cond=mask,
            capture_stride=capture_stride,
        )
        outs.append(x0)
        trajs.append(traj)
    tokens = np.stack(outs)
    items = _detok(tokens, data_cfg)
    return items, tokens, (trajs if capture_stride else None)


def ar_predictor(params, cfg: M.ModelConfig):
    """Assemble eps_hat token by token, per the autoregressive sampling loop."""

    def predictor(x, t):
        noise_rows = []
        for i in range(cfg.n_max):
            prefix = (
                np.stack(noise_rows, axis=0)
                if noise_rows
                else np.zeros((0, cfg.token_dim), dtype=x.dtype)
            )
            noise_rows.append(
                np.asarray(M.forward_ar(params, cfg, x, prefix, t), dtype=np.float64)
            )
        return np.stack(noise_rows, axis=0)

    return predictor


def sample_ar(params, cfg: M.ModelConfig, sched: S.Schedule,
              data_cfg: DatasetConfig, n_samples: int, seed: int,
              mask: ConditionMask | None = None, method="ddim", eta=0.0,
              capture_stride: int | None = None):
    """Autoregressive sampling: per diffusion step, generate each token's
    noise prediction conditioned on the previously generated ones, then take
    one (DDIM by default) reverse step."""
    if not cfg.ar_mode:
        raise M.UnsupportedModeError("sample_ar requires an ar_mode model")
    _check_compat(params, cfg, data_cfg)
    shape = (cfg.n_max, cfg.token_dim)
    predictor = ar_predictor(params, cfg)
    outs, trajs = [], []
    for i in range(n_samples):
        rng = np.random.default_rng(seed ^ i)
        x0, traj = sample_tokens(
            predictor, sched, shape, rng, method=method, eta=eta, cond=mask,
            capture_stride=capture_stride,
        )
        outs.append(x0)
        trajs.append(traj)
    tokens = np.stack(outs)
    items = _detok(tokens, data_cfg)
    return items, tokens, (trajs if capture_stride else None)
