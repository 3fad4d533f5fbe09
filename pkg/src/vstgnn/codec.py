"""U-Net style image encoder g(.) and decoder u(.) around a linear embedding.

The encoder is a contracting path of double-conv stages with 2x max-pooling,
a bottleneck double-conv (conv, batch norm, ReLU, twice), then flatten + linear projection to ``P`` features.
The decoder inverts that: linear expansion back to the bottleneck volume,
transposed-conv upsampling stages, 1x1 head and sigmoid onto [0, 1].

Skip connections are only meaningful when encoder features for the *same*
image exist, i.e. autoencoder pretraining. The forecasting path decodes a
predicted future embedding and runs with skips off.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import torch
from torch import nn

from vstgnn.errors import ShapeError, ValidationError


@dataclass(frozen=True)
class CodecConfig:
    depth: int = 4
    base_channels: int = 32
    embedding_size: int = 256
    input_resolution: tuple[int, int] = (128, 128)
    skip_connections: bool = False
    channels: int = 1

    def __post_init__(self):
        object.__setattr__(self, "input_resolution", tuple(int(v) for v in self.input_resolution))
        if self.depth < 0 or self.base_channels < 1 or self.embedding_size < 1 or self.channels < 1:
            raise ValidationError(f"invalid codec config {self}")
        h, w = self.input_resolution
        step = 2 ** self.depth
        if h % step or w % step:
            raise ValidationError(f"resolution {h}x{w} not divisible by 2^depth={step}")

    def stage_channels(self, level: int) -> int:
        return self.base_channels * 2 ** level

    @property
    def bottleneck_shape(self) -> tuple[int, int, int]:
        h, w = self.input_resolution
        if self.depth == 0:
            return self.channels, h, w
        step = 2 ** self.depth
        return self.stage_channels(self.depth), h // step, w // step

    def to_dict(self) -> dict:
        return asdict(self)


class DoubleConv(nn.Sequential):
    """(conv 3x3 -> BatchNorm -> ReLU) x 2.

    The norm keeps the ReLUs alive when the decoder is fed from a linear
    expansion. Per-image norms (group/instance/layer) are avoided on purpose:
    they divide out each image's brightness, which is the outage signal.
    """

    def __init__(self, c_in: int, c_out: int):
        super().__init__(
            nn.Conv2d(c_in, c_out, 3, padding=1),
            nn.BatchNorm2d(c_out),
            nn.ReLU(inplace=True),
            nn.Conv2d(c_out, c_out, 3, padding=1),
            nn.BatchNorm2d(c_out),
            nn.ReLU(inplace=True),
        )


class ImageEncoder(nn.Module):
    def __init__(self, config: CodecConfig):
        super().__init__()
        self.config = config
        c = config.channels
        self.down = nn.ModuleList()
        for level in range(config.depth):
            self.down.append(DoubleConv(c, config.stage_channels(level)))
            c = config.stage_channels(level)
        self.pool = nn.MaxPool2d(2)
        self.bottleneck = DoubleConv(c, config.stage_channels(config.depth)) if config.depth else nn.Identity()
        cb, hb, wb = config.bottleneck_shape
        self.proj = nn.Linear(cb * hb * wb, config.embedding_size)

    def forward(self, x: torch.Tensor, return_skips: bool = False):
        skips = []
        for block in self.down:
            x = block(x)
            skips.append(x)
            x = self.pool(x)
        x = self.bottleneck(x)
        v = self.proj(x.flatten(1))
        return (v, skips) if return_skips else v


class ImageDecoder(nn.Module):
    def __init__(self, config: CodecConfig):
        super().__init__()
        self.config = config
        cb, hb, wb = config.bottleneck_shape
        self.expand = nn.Linear(config.embedding_size, cb * hb * wb)
        self.up = nn.ModuleList()
        self.conv = nn.ModuleList()
        for level in reversed(range(config.depth)):
            ch = config.stage_channels(level)
            self.up.append(nn.ConvTranspose2d(config.stage_channels(level + 1), ch, 2, stride=2))
            self.conv.append(DoubleConv(2 * ch if config.skip_connections else ch, ch))
        self.head = nn.Conv2d(config.base_channels, config.channels, 1) if config.depth else nn.Identity()

    def forward(self, v: torch.Tensor, skips: list[torch.Tensor] | None = None) -> torch.Tensor:
        if self.config.skip_connections and skips is None:
            raise ShapeError("decoder built with skip connections needs encoder skips")
        x = self.expand(v).view(v.shape[0], *self.config.bottleneck_shape)
        for i, (up, conv) in enumerate(zip(self.up, self.conv)):
            x = up(x)
            if self.config.skip_connections:
                x = torch.cat([skips[-1 - i], x], dim=1)
            x = conv(x)
        return torch.sigmoid(self.head(x))


class VisualCodec(nn.Module):
    """Paired encoder/decoder with shape checking at both ends."""

    def __init__(self, config: CodecConfig):
        super().__init__()
        self.config = config
        self.encoder = ImageEncoder(config)
        self.decoder = ImageDecoder(config)

    def encode(self, images: torch.Tensor, return_skips: bool = False):
        """(N, C, H, W) images in [0, 1] -> (N, P) embeddings."""
        expected = (self.config.channels, *self.config.input_resolution)
        if images.dim() != 4 or tuple(images.shape[1:]) != expected:
            raise ShapeError(f"encoder expects (N, {expected[0]}, {expected[1]}, {expected[2]}), "
                             f"got {tuple(images.shape)}")
        if images.shape[0] == 0:
            empty = images.new_zeros((0, self.config.embedding_size))
            return (empty, []) if return_skips else empty
        return self.encoder(images, return_skips=return_skips)

    def decode(self, embeddings: torch.Tensor, skips: list[torch.Tensor] | None = None) -> torch.Tensor:
        """(N, P) embeddings -> (N, C, H, W) images in [0, 1]."""
        if embeddings.dim() != 2 or embeddings.shape[1] != self.config.embedding_size:
            raise ShapeError(f"decoder expects (N, {self.config.embedding_size}), "
                             f"got {tuple(embeddings.shape)}")
        if embeddings.shape[0] == 0:
            return embeddings.new_zeros((0, self.config.channels, *self.config.input_resolution))
        return self.decoder(embeddings, skips)

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        """Autoencoder round trip; uses skips when the config enables them."""
        if self.config.skip_connections:
            v, skips = self.encode(images, return_skips=True)
            return self.decode(v, skips)
        return self.decode(self.encode(images))


def count_parameters(config: CodecConfig, part: str = "encoder") -> int:
    """Exact learnable parameter count of ``encoder``, ``decoder`` or ``codec``.

    Built on the meta device, so nothing is allocated.
    """
    with torch.device("meta"):
        modules = {"encoder": ImageEncoder, "decoder": ImageDecoder}
        if part == "codec":
            return sum(count_parameters(config, p) for p in modules)
        if part not in modules:
            raise ValidationError(f"part must be encoder, decoder or codec, got {part!r}")
        net = modules[part](config)
    return sum(p.numel() for p in net.parameters() if p.requires_grad)
