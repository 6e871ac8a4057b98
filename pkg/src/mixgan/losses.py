"""Least-squares adversarial losses, L1 reconstruction and the Adam update.

Losses take torch tensors (numpy arrays are converted) and return a scalar
tensor, so gradients flow back into whatever produced the scores.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from .exceptions import ArgumentError, NonFiniteError, ShapeError

DEFAULT_LAMBDA = 10.0


def _scores(s, name):
    if not isinstance(s, torch.Tensor):
        s = torch.as_tensor(np.asarray(s, dtype=np.float64))
    if s.numel() == 0:
        raise ArgumentError(f"{name} is empty")
    return s


def lsgan_disc_loss(real_scores, fake_scores) -> torch.Tensor:
    """``mean((real - 1)^2) + mean(fake^2)``."""
    real = _scores(real_scores, "real_scores")
    fake = _scores(fake_scores, "fake_scores")
    return ((real - 1.0) ** 2).mean() + (fake ** 2).mean()


def lsgan_gen_loss(fake_scores) -> torch.Tensor:
    """``mean((fake - 1)^2)``: the generator aims for the real label."""
    fake = _scores(fake_scores, "fake_scores")
    return ((fake - 1.0) ** 2).mean()


def encoder_adv_loss(latent_scores) -> torch.Tensor:
    """Encoder side of the latent game; same form as :func:`lsgan_gen_loss`."""
    return lsgan_gen_loss(_scores(latent_scores, "latent_scores"))


def l1_reconstruction(x, x_hat) -> torch.Tensor:
    """Mean absolute element-wise difference."""
    if not isinstance(x, torch.Tensor):
        x = torch.as_tensor(np.asarray(x, dtype=np.float64))
    if not isinstance(x_hat, torch.Tensor):
        x_hat = torch.as_tensor(np.asarray(x_hat, dtype=np.float64))
    if x.shape != x_hat.shape:
        raise ShapeError(f"shape mismatch: {tuple(x.shape)} vs {tuple(x_hat.shape)}")
    if x.numel() == 0:
        raise ArgumentError("empty reconstruction pair")
    return (x - x_hat).abs().mean()


def content_loss(latent_scores, x, x_hat, lam=DEFAULT_LAMBDA) -> torch.Tensor:
    """Encoder/decoder objective: adversarial term plus ``lam`` times L1."""
    return encoder_adv_loss(latent_scores) + lam * l1_reconstruction(x, x_hat)


# --------------------------------------------------------------------- Adam


@dataclass
class AdamState:
    step: int = 0
    exp_avg: dict = field(default_factory=dict)
    exp_avg_sq: dict = field(default_factory=dict)


def adam_step(params, grads, state: AdamState, lr=2e-4, betas=(0.5, 0.999), eps=1e-8) -> AdamState:
    """One bias-corrected Adam update, in place on ``params``.

    ``params`` and ``grads`` are dicts keyed by parameter name. Moments are
    created lazily on the first step. Raises :class:`NonFiniteError` naming
    the first offending parameter before anything is modified.
    """
    beta1, beta2 = betas
    if set(params) != set(grads):
        raise ShapeError("params and grads must share the same names")
    for name, g in grads.items():
        if g.shape != params[name].shape:
            raise ShapeError(f"{name}: gradient shape {tuple(g.shape)} != {tuple(params[name].shape)}")
        if not torch.isfinite(g).all():
            raise NonFiniteError(f"non-finite gradient in {name}")
    state.step += 1
    t = state.step
    bias1 = 1.0 - beta1 ** t
    bias2 = 1.0 - beta2 ** t
    with torch.no_grad():
        for name, p in params.items():
            g = grads[name]
            m = state.exp_avg.get(name)
            if m is None:
                m = state.exp_avg[name] = torch.zeros_like(p)
                state.exp_avg_sq[name] = torch.zeros_like(p)
            v = state.exp_avg_sq[name]
            m.mul_(beta1).add_(g, alpha=1.0 - beta1)
            v.mul_(beta2).addcmul_(g, g, value=1.0 - beta2)
            denom = (v / bias2).sqrt_().add_(eps)
            p.addcdiv_(m, denom, value=-lr / bias1)
    return state


class Adam:
    """Adam over the named parameters of one or more modules."""

    def __init__(self, named_params, lr=2e-4, betas=(0.5, 0.999), eps=1e-8):
        self.params = dict(named_params)
        if not self.params:
            raise ArgumentError("Adam needs at least one parameter")
        if lr <= 0:
            raise ArgumentError(f"lr must be positive, got {lr}")
        self.lr, self.betas, self.eps = lr, tuple(betas), eps
        self.state = AdamState()

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def step(self):
        grads = {
            name: p.grad if p.grad is not None else torch.zeros_like(p)
            for name, p in self.params.items()
        }
        adam_step(self.params, grads, self.state, self.lr, self.betas, self.eps)

    def state_arrays(self) -> dict:
        """Moment buffers keyed ``m/<name>`` and ``v/<name>`` (only once stepped)."""
        out = {}
        for name in self.params:
            if name in self.state.exp_avg:
                out[f"m/{name}"] = self.state.exp_avg[name]
                out[f"v/{name}"] = self.state.exp_avg_sq[name]
        return out

    def load_state_arrays(self, step: int, arrays: dict):
        self.state = AdamState(step=int(step))
        for name, p in self.params.items():
            if f"m/{name}" in arrays:
                self.state.exp_avg[name] = torch.as_tensor(arrays[f"m/{name}"], dtype=p.dtype).clone()
                self.state.exp_avg_sq[name] = torch.as_tensor(arrays[f"v/{name}"], dtype=p.dtype).clone()
