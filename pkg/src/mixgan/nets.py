"""The five networks: encoder, content decoder, mixture decoder and both discriminators.

The content decoder exposes its intermediate activations as a coarse-to-fine
feature pyramid; the mixture decoder consumes that pyramid level by level,
fusing each level with its own running activation.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
import torch
from torch import nn

from .exceptions import ArgumentError, ShapeError
from .validation import check_images, check_latent

NET_NAMES = ("encoder", "content_decoder", "mixture_decoder", "latent_disc", "patch_disc")
FUSIONS = ("concat", "add")


@dataclass(frozen=True)
class ArchSpec:
    """Architecture hyperparameters shared by all five networks.

    ``patch_layers`` is the number of stride-2 convolutions in the patch
    discriminator; ``None`` picks ``log2(image_size) - 2`` so the receptive
    field of every score stays smaller than the image.
    """

    image_size: int = 32
    content_channels: int = 1
    style_channels: int = 3
    latent_dim: int = 64
    base_width: int = 32
    fusion: str = "concat"
    fc_widths: tuple = (256, 512)
    latent_disc_width: int = 256
    patch_width: int | None = None
    patch_layers: int | None = None

    def __post_init__(self):
        size = self.image_size
        if not isinstance(size, int) or size < 16 or size & (size - 1):
            raise ArgumentError(f"image_size must be a power of two >= 16, got {size!r}")
        if self.latent_dim < 2:
            raise ArgumentError(f"latent_dim must be >= 2, got {self.latent_dim}")
        if self.base_width < 8:
            raise ArgumentError(f"base_width must be >= 8, got {self.base_width}")
        if self.fusion not in FUSIONS:
            raise ArgumentError(f"fusion must be one of {FUSIONS}, got {self.fusion!r}")
        if self.content_channels not in (1, 3) or self.style_channels not in (1, 3):
            raise ArgumentError("channel counts must be 1 or 3")
        object.__setattr__(self, "fc_widths", tuple(int(w) for w in self.fc_widths))
        if len(self.fc_widths) != 2:
            raise ArgumentError(f"fc_widths needs two entries, got {self.fc_widths}")
        if self.patch_layers is not None and not 1 <= self.patch_layers < int(math.log2(size)):
            raise ArgumentError(f"patch_layers={self.patch_layers} incompatible with image_size {size}")

    @property
    def seed_size(self) -> int:
        """Spatial size of the coarsest pyramid level."""
        return self.image_size // 8

    @property
    def pyramid_sizes(self) -> tuple:
        s = self.seed_size
        return (s, 2 * s, 4 * s, 8 * s)

    @property
    def pyramid_channels(self) -> tuple:
        w = self.base_width
        return (4 * w, 2 * w, w, self.content_channels)

    @property
    def n_patch_layers(self) -> int:
        return self.patch_layers or int(math.log2(self.image_size)) - 2

    @property
    def patch_map_size(self) -> int:
        return self.image_size >> self.n_patch_layers

    @property
    def patch_receptive_field(self) -> int:
        kernels = [4] * self.n_patch_layers + [1]
        strides = [2] * self.n_patch_layers + [1]
        return receptive_field(kernels, strides)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["fc_widths"] = list(self.fc_widths)
        return d

    @classmethod
    def from_dict(cls, d) -> "ArchSpec":
        return cls(**d)


def receptive_field(kernels, strides) -> int:
    """Receptive field (in input pixels) of one output unit of a conv stack."""
    rf, jump = 1, 1
    for k, s in zip(kernels, strides):
        rf += (k - 1) * jump
        jump *= s
    return rf


def _up(cin, cout):
    return nn.ConvTranspose2d(cin, cout, kernel_size=4, stride=2, padding=1)


def _down(cin, cout):
    return nn.Conv2d(cin, cout, kernel_size=4, stride=2, padding=1)


class Encoder(nn.Module):
    """Mirror image of the content decoder: three stride-2 convs, three FC layers."""

    def __init__(self, arch: ArchSpec):
        super().__init__()
        self.arch = arch
        w, s = arch.base_width, arch.seed_size
        fc0, fc1 = arch.fc_widths
        act = lambda: nn.LeakyReLU(0.2)
        self.conv = nn.Sequential(
            _down(arch.content_channels, w), act(),
            _down(w, 2 * w), nn.BatchNorm2d(2 * w), act(),
            _down(2 * w, 4 * w), nn.BatchNorm2d(4 * w), act(),
        )
        self.fc = nn.Sequential(
            nn.Linear(4 * w * s * s, fc1), nn.BatchNorm1d(fc1), act(),
            nn.Linear(fc1, fc0), nn.BatchNorm1d(fc0), act(),
            nn.Linear(fc0, arch.latent_dim),
        )

    def forward(self, x):
        return self.fc(self.conv(x).flatten(1))


class ContentDecoder(nn.Module):
    """Three FC layers then three transposed convs; returns the image and its pyramid.

    The pyramid holds the FC block output followed by the post-activation
    output of each transposed conv, so its last level is the image itself.
    """

    def __init__(self, arch: ArchSpec):
        super().__init__()
        self.arch = arch
        w, s = arch.base_width, arch.seed_size
        fc0, fc1 = arch.fc_widths
        self.fc = nn.Sequential(
            nn.Linear(arch.latent_dim, fc0), nn.BatchNorm1d(fc0), nn.ReLU(),
            nn.Linear(fc0, fc1), nn.BatchNorm1d(fc1), nn.ReLU(),
            nn.Linear(fc1, 4 * w * s * s), nn.BatchNorm1d(4 * w * s * s), nn.ReLU(),
        )
        self.up1 = nn.Sequential(_up(4 * w, 2 * w), nn.BatchNorm2d(2 * w), nn.ReLU())
        self.up2 = nn.Sequential(_up(2 * w, w), nn.BatchNorm2d(w), nn.ReLU())
        self.up3 = nn.Sequential(_up(w, arch.content_channels), nn.Tanh())

    def forward(self, z):
        s = self.arch.seed_size
        h0 = self.fc(z).view(z.shape[0], 4 * self.arch.base_width, s, s)
        h1 = self.up1(h0)
        h2 = self.up2(h1)
        x_hat = self.up3(h2)
        return x_hat, [h0, h1, h2, x_hat]


class MixtureDecoder(nn.Module):
    """Three transposed-conv stages plus one extra conv, tanh output.

    Stage ``i`` reads ``fuse(previous_output, feats[i])``; the first stage
    reads the coarsest feature alone and the extra conv fuses in the
    full-resolution level. Under ``add`` a single-channel level is
    broadcast across channels.
    """

    def __init__(self, arch: ArchSpec):
        super().__init__()
        self.arch = arch
        w = arch.base_width
        grow = 2 if arch.fusion == "concat" else 1
        self.up1 = nn.Sequential(_up(4 * w, 2 * w), nn.BatchNorm2d(2 * w), nn.ReLU())
        self.up2 = nn.Sequential(_up(2 * w * grow, w), nn.BatchNorm2d(w), nn.ReLU())
        self.up3 = nn.Sequential(_up(w * grow, w), nn.BatchNorm2d(w), nn.ReLU())
        last = w + arch.content_channels if arch.fusion == "concat" else w
        self.out = nn.Sequential(nn.Conv2d(last, arch.style_channels, 3, 1, 1), nn.Tanh())

    def _fuse(self, h, feat):
        if self.arch.fusion == "concat":
            return torch.cat([h, feat], dim=1)
        return h + feat

    def forward(self, feats):
        h0, h1, h2, h3 = feats
        h = self.up1(h0)
        h = self.up2(self._fuse(h, h1))
        h = self.up3(self._fuse(h, h2))
        return self.out(self._fuse(h, h3))


class LatentDiscriminator(nn.Module):
    def __init__(self, arch: ArchSpec):
        super().__init__()
        self.arch = arch
        w = arch.latent_disc_width
        self.net = nn.Sequential(
            nn.Linear(arch.latent_dim, w), nn.LeakyReLU(0.2),
            nn.Linear(w, w), nn.LeakyReLU(0.2),
            nn.Linear(w, 1),
        )

    def forward(self, z):
        return self.net(z).squeeze(1)


class PatchDiscriminator(nn.Module):
    """Stride-2 conv stack ending in a 1x1 conv; one raw score per patch."""

    def __init__(self, arch: ArchSpec):
        super().__init__()
        self.arch = arch
        w = arch.patch_width or arch.base_width
        layers = [_down(arch.style_channels, w), nn.LeakyReLU(0.2)]
        for _ in range(arch.n_patch_layers - 1):
            layers += [_down(w, 2 * w), nn.BatchNorm2d(2 * w), nn.LeakyReLU(0.2)]
            w *= 2
        layers.append(nn.Conv2d(w, 1, kernel_size=1))
        self.net = nn.Sequential(*layers)

    def forward(self, img):
        return self.net(img)


class MixganNets(nn.Module):
    """Container holding all five networks built from one :class:`ArchSpec`."""

    def __init__(self, arch: ArchSpec):
        super().__init__()
        self.arch = arch
        self.encoder = Encoder(arch)
        self.content_decoder = ContentDecoder(arch)
        self.mixture_decoder = MixtureDecoder(arch)
        self.latent_disc = LatentDiscriminator(arch)
        self.patch_disc = PatchDiscriminator(arch)

    def net(self, name) -> nn.Module:
        if name not in NET_NAMES:
            raise ArgumentError(f"unknown network {name!r}")
        return getattr(self, name)

    def generate(self, z):
        """Full mixture generator: content decoder pyramid through the mixture decoder."""
        _, feats = self.content_decoder(z)
        return self.mixture_decoder(feats)


def _init_module(module: nn.Module, generator: torch.Generator):
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d, nn.Linear)):
            nn.init.normal_(m.weight, 0.0, 0.02, generator=generator)
            nn.init.zeros_(m.bias)
        elif isinstance(m, (nn.BatchNorm1d, nn.BatchNorm2d)):
            nn.init.ones_(m.weight)
            nn.init.zeros_(m.bias)


def init_params(arch: ArchSpec, seed: int) -> MixganNets:
    """Build all five networks with N(0, 0.02) weights, deterministically per seed."""
    nets = MixganNets(arch)
    for i, name in enumerate(NET_NAMES):
        g = torch.Generator().manual_seed(int(seed) * 1000 + i)
        _init_module(nets.net(name), g)
    return nets


# ------------------------------------------------ inference-mode forwards


def _arch_of(module) -> ArchSpec:
    arch = getattr(module, "arch", None)
    if arch is None:
        raise ArgumentError(f"{type(module).__name__} carries no ArchSpec")
    return arch


def _param_dtype(module):
    return next(module.parameters()).dtype


def _as_tensor(x, module):
    return torch.as_tensor(np.asarray(x), dtype=_param_dtype(module))


@torch.no_grad()
def _eval(module, fn):
    was_training = module.training
    module.eval()
    try:
        return fn()
    finally:
        module.train(was_training)


def encoder_forward(encoder: Encoder, x) -> np.ndarray:
    arch = _arch_of(encoder)
    x = check_images(x, channels=arch.content_channels, size=arch.image_size)
    return _eval(encoder, lambda: encoder(_as_tensor(x, encoder)).numpy())


def content_decoder_forward(decoder: ContentDecoder, z):
    """Returns ``(images, feats)`` with feats ordered coarse to fine."""
    arch = _arch_of(decoder)
    z = check_latent(z, arch.latent_dim)

    def run():
        img, feats = decoder(_as_tensor(z, decoder))
        return img.numpy(), [f.numpy() for f in feats]

    return _eval(decoder, run)


def check_pyramid(feats, arch: ArchSpec) -> list:
    if len(feats) != 4:
        raise ShapeError(f"feature pyramid needs 4 levels, got {len(feats)}")
    n = None
    for level, (f, c, s) in enumerate(zip(feats, arch.pyramid_channels, arch.pyramid_sizes)):
        f = np.asarray(f.detach() if isinstance(f, torch.Tensor) else f)
        if f.ndim != 4 or f.shape[1:] != (c, s, s):
            raise ShapeError(f"pyramid level {level} has shape {f.shape}, expected (n, {c}, {s}, {s})")
        if n is not None and f.shape[0] != n:
            raise ShapeError("pyramid levels disagree on batch size")
        n = f.shape[0]
    return feats


def mixture_decoder_forward(decoder: MixtureDecoder, feats) -> np.ndarray:
    arch = _arch_of(decoder)
    check_pyramid(feats, arch)
    return _eval(decoder, lambda: decoder([_as_tensor(f, decoder) for f in feats]).numpy())


def latent_disc_forward(disc: LatentDiscriminator, z) -> np.ndarray:
    z = check_latent(z, _arch_of(disc).latent_dim)
    return _eval(disc, lambda: disc(_as_tensor(z, disc)).numpy())


def patch_disc_forward(disc: PatchDiscriminator, img) -> np.ndarray:
    arch = _arch_of(disc)
    img = check_images(img, channels=arch.style_channels, size=arch.image_size)
    return _eval(disc, lambda: disc(_as_tensor(img, disc)).numpy())
