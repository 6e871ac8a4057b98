"""Two-stage training.

Stage ``content`` fits the adversarial autoencoder (encoder, content decoder,
latent discriminator). Stage ``mixture`` starts from a content checkpoint
and fits the mixture decoder (and, unless frozen, the content decoder)
against the patch discriminator on style images.

All randomness during training comes from numpy generators reseeded per
epoch from ``(seed, stage, epoch)``, so a run resumed at epoch ``k`` replays
exactly the batches and prior samples an uninterrupted run would draw.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, replace

import numpy as np
import torch

from .checkpoint import ModelCheckpoint
from .exceptions import ArgumentError, NonFiniteError
from .losses import DEFAULT_LAMBDA, Adam, encoder_adv_loss, l1_reconstruction, lsgan_disc_loss, lsgan_gen_loss
from .nets import ArchSpec, init_params
from .validation import check_images

logger = logging.getLogger(__name__)

DEFAULT_EPOCHS = {"content": 100, "mixture": 300}
_STAGE_STREAM = {"content": 1, "mixture": 2}


@dataclass(frozen=True)
class TrainConfig:
    stage: str = "content"
    epochs: int | None = None
    batch_size: int = 64
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    eps: float = 1e-8
    lam: float = DEFAULT_LAMBDA
    seed: int = 0
    freeze_content_decoder: bool = False
    d_steps_per_g_step: int = 1
    log_every: int = 50

    def __post_init__(self):
        if self.stage not in DEFAULT_EPOCHS:
            raise ArgumentError(f"stage must be 'content' or 'mixture', got {self.stage!r}")
        if self.epochs is None:
            object.__setattr__(self, "epochs", DEFAULT_EPOCHS[self.stage])
        if self.epochs < 1:
            raise ArgumentError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 2:
            raise ArgumentError(f"batch_size must be >= 2 for batch norm, got {self.batch_size}")
        if self.lr <= 0 or self.eps <= 0 or self.lam < 0:
            raise ArgumentError("lr and eps must be positive, lam non-negative")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ArgumentError("betas must lie in (0, 1)")
        if self.d_steps_per_g_step < 1:
            raise ArgumentError("d_steps_per_g_step must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d) -> "TrainConfig":
        return cls(**d)


def epoch_rng(seed, stage, epoch) -> np.random.Generator:
    return np.random.default_rng([int(seed), _STAGE_STREAM[stage], int(epoch)])


def steps_per_epoch(n, batch_size) -> int:
    steps = n // batch_size
    if steps < 1:
        raise ArgumentError(f"dataset of {n} images is smaller than one batch of {batch_size}")
    return steps


def _finite(value, name):
    if not torch.isfinite(value):
        raise NonFiniteError(f"non-finite {name} loss")


class TrainingAborted(NonFiniteError):
    """Training hit a non-finite value; ``checkpoint`` is the last good epoch."""

    def __init__(self, message, checkpoint):
        super().__init__(message)
        self.checkpoint = checkpoint


def _make_optimizer(modules, config):
    named = [
        (f"{prefix}.{name}", p)
        for prefix, module in modules
        for name, p in module.named_parameters()
    ]
    return Adam(named, lr=config.lr, betas=(config.beta1, config.beta2), eps=config.eps)


def _snapshot(nets, optimizers, stage, epoch, configs, history, seed) -> ModelCheckpoint:
    ckpt = ModelCheckpoint.from_nets(
        nets,
        stage=stage,
        epoch=epoch,
        configs={k: dict(v) for k, v in configs.items()},
        rng={"kind": "numpy-seedsequence", "entropy": [int(seed), _STAGE_STREAM[stage], int(epoch)]},
        history=[list(row) for row in history],
    )
    for name, opt in optimizers.items():
        ckpt.store_optimizer(name, opt)
    return ckpt


def _run_epochs(stage, config, nets, optimizers, start, configs, history, step_fn, n):
    bs = config.batch_size
    steps = steps_per_epoch(n, bs)
    last_good = _snapshot(nets, optimizers, stage, start, configs, history, config.seed)
    for epoch in range(start, config.epochs):
        rng = epoch_rng(config.seed, stage, epoch)
        order = rng.permutation(n)
        try:
            for step in range(steps):
                idx = np.sort(order[step * bs:(step + 1) * bs])
                losses = step_fn(idx, rng)
                for name, value in losses.items():
                    history.append([epoch, step, name, value])
                if config.log_every and step % config.log_every == 0:
                    logger.info(
                        "%s epoch %d step %d %s", stage, epoch, step,
                        " ".join(f"{k}={v:.4f}" for k, v in losses.items()),
                    )
        except NonFiniteError as exc:
            raise TrainingAborted(f"{stage} epoch {epoch}: {exc}", last_good) from exc
        last_good = _snapshot(nets, optimizers, stage, epoch + 1, configs, history, config.seed)
    return last_good


def train_content_stage(config: TrainConfig, content_data, arch: ArchSpec | None = None, resume=None):
    """Fit the adversarial autoencoder on single-channel content images.

    Pass ``resume`` (a content-stage checkpoint with ``epoch < config.epochs``)
    to continue an interrupted run; the result is bit-identical to training
    without interruption.
    """
    if config.stage != "content":
        config = replace(config, stage="content")
    if resume is not None:
        resume.require_stage("content")
        arch = resume.arch
        nets = resume.build_nets()
        start, history = resume.epoch, [list(r) for r in resume.history]
    else:
        arch = arch or ArchSpec(image_size=int(np.asarray(getattr(content_data, "data", content_data)).shape[-1]))
        nets = init_params(arch, config.seed)
        start, history = 0, []
    x_all = torch.from_numpy(
        np.ascontiguousarray(check_images(content_data, channels=arch.content_channels, size=arch.image_size))
    )

    enc, dec, dz = nets.encoder, nets.content_decoder, nets.latent_disc
    for m in (enc, dec, dz):
        m.train()
    optimizers = {
        "latent_disc": _make_optimizer([("latent_disc", dz)], config),
        "autoencoder": _make_optimizer([("encoder", enc), ("content_decoder", dec)], config),
    }
    if resume is not None:
        for name, opt in optimizers.items():
            resume.load_optimizer(name, opt)
    configs = {"content": config.to_dict()}

    def step_fn(idx, rng):
        x = x_all[idx]
        z_fake = enc(x)
        for _ in range(config.d_steps_per_g_step):
            z_prior = torch.from_numpy(rng.standard_normal((len(idx), arch.latent_dim)).astype(np.float32))
            d_loss = lsgan_disc_loss(dz(z_prior), dz(z_fake.detach()))
            _finite(d_loss, "latent discriminator")
            optimizers["latent_disc"].zero_grad()
            d_loss.backward()
            optimizers["latent_disc"].step()
        x_hat, _ = dec(z_fake)
        adv = encoder_adv_loss(dz(z_fake))
        rec = l1_reconstruction(x, x_hat)
        loss = adv + config.lam * rec
        _finite(loss, "content")
        optimizers["autoencoder"].zero_grad()
        loss.backward()
        optimizers["autoencoder"].step()
        return {"d_z": d_loss.item(), "adversarial": adv.item(), "reconstruction": rec.item()}

    return _run_epochs("content", config, nets, optimizers, start, configs, history, step_fn, len(x_all))


def train_mixture_stage(config: TrainConfig, content_ckpt: ModelCheckpoint, style_data, resume=None):
    """Fit the mixture generator against the patch discriminator on style images.

    Encoder and latent discriminator are carried over untouched. With
    ``freeze_content_decoder`` the content decoder stays in inference mode
    and its parameters and running statistics are left byte-identical.
    """
    if config.stage != "mixture":
        config = replace(config, stage="mixture")
    if resume is not None:
        resume.require_stage("mixture")
        base = resume
        start, history = resume.epoch, [list(r) for r in resume.history]
    else:
        content_ckpt.require_stage("content")
        base = content_ckpt
        start, history = 0, [list(r) for r in content_ckpt.history]
    arch = base.arch
    nets = base.build_nets()
    y_all = torch.from_numpy(
        np.ascontiguousarray(check_images(style_data, channels=arch.style_channels, size=arch.image_size))
    )

    gc, gm, dp = nets.content_decoder, nets.mixture_decoder, nets.patch_disc
    for m in (nets.encoder, nets.latent_disc):
        m.eval()
        m.requires_grad_(False)
    gm.train()
    dp.train()
    gen_modules = [("mixture_decoder", gm)]
    if config.freeze_content_decoder:
        gc.eval()
        gc.requires_grad_(False)
    else:
        gc.train()
        gen_modules.append(("content_decoder", gc))
    optimizers = {
        "patch_disc": _make_optimizer([("patch_disc", dp)], config),
        "mixture_gen": _make_optimizer(gen_modules, config),
    }
    # content-stage moments are kept in the checkpoint for reference
    carried = {name: base for name in ("latent_disc", "autoencoder")}
    if resume is not None:
        for name, opt in optimizers.items():
            resume.load_optimizer(name, opt)
    configs = dict(base.configs)
    configs["mixture"] = config.to_dict()

    def step_fn(idx, rng):
        y = y_all[idx]
        z = torch.from_numpy(rng.standard_normal((len(idx), arch.latent_dim)).astype(np.float32))
        _, feats = gc(z)
        fake = gm(feats)
        for _ in range(config.d_steps_per_g_step):
            d_loss = lsgan_disc_loss(dp(y), dp(fake.detach()))
            _finite(d_loss, "patch discriminator")
            optimizers["patch_disc"].zero_grad()
            d_loss.backward()
            optimizers["patch_disc"].step()
        g_loss = lsgan_gen_loss(dp(fake))
        _finite(g_loss, "mixture generator")
        optimizers["mixture_gen"].zero_grad()
        g_loss.backward()
        optimizers["mixture_gen"].step()
        return {"d_p": d_loss.item(), "g_adv": g_loss.item()}

    ckpt = _run_epochs("mixture", config, nets, optimizers, start, configs, history, step_fn, len(y_all))
    for name, source in carried.items():
        for key, value in source.arrays.items():
            if key.startswith(f"adam/{name}/"):
                ckpt.arrays[key] = value.copy()
        step_key = f"adam/{name}/step"
        if step_key in source.int_state:
            ckpt.int_state[step_key] = source.int_state[step_key]
    return ckpt


def loss_series(history, name) -> np.ndarray:
    return np.array([row[3] for row in history if row[2] == name])


def epoch_means(history, name) -> np.ndarray:
    rows = [(row[0], row[3]) for row in history if row[2] == name]
    if not rows:
        return np.array([])
    epochs = sorted({e for e, _ in rows})
    return np.array([np.mean([v for e, v in rows if e == k]) for k in epochs])
