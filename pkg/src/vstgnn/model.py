"""End-to-end forecaster: encode images, add time, propagate on the graph, decode."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
import torch
from torch import nn

from vstgnn.codec import CodecConfig, VisualCodec
from vstgnn.errors import ConfigError, ShapeError
from vstgnn.stgnn import STGNN, StgnnConfig
from vstgnn.temporal import Time2Vec, concat_embeddings


@dataclass(frozen=True)
class ModelConfig:
    codec: CodecConfig
    stgnn: StgnnConfig
    time_embedding_size: int = 64

    def __post_init__(self):
        if self.codec.skip_connections:
            raise ConfigError("forecasting path cannot use codec skip connections")
        if self.stgnn.input_width != self.codec.embedding_size + self.time_embedding_size:
            raise ConfigError(f"st-GNN input width {self.stgnn.input_width} != P + K = "
                              f"{self.codec.embedding_size} + {self.time_embedding_size}")
        if self.stgnn.output_width != self.codec.embedding_size:
            raise ConfigError("st-GNN output width must equal the image embedding size")

    @classmethod
    def create(cls, num_nodes: int, *, codec: Mapping | CodecConfig | None = None,
               stgnn: Mapping | None = None, time_embedding_size: int = 64,
               horizon: int = 1) -> "ModelConfig":
        codec = codec if isinstance(codec, CodecConfig) else CodecConfig(**dict(codec or {}))
        st = dict(stgnn or {})
        st.setdefault("horizon", horizon)
        st_cfg = StgnnConfig(num_nodes=num_nodes,
                             input_width=codec.embedding_size + time_embedding_size,
                             output_width=codec.embedding_size, **st)
        return cls(codec, st_cfg, time_embedding_size)

    def to_dict(self) -> dict:
        return {"codec": self.codec.to_dict(), "stgnn": self.stgnn.to_dict(),
                "time_embedding_size": self.time_embedding_size}

    @classmethod
    def from_dict(cls, d: Mapping) -> "ModelConfig":
        return cls(CodecConfig(**d["codec"]), StgnnConfig(**d["stgnn"]), d["time_embedding_size"])

    def with_horizon(self, horizon: int) -> "ModelConfig":
        return dataclasses.replace(self, stgnn=dataclasses.replace(self.stgnn, horizon=horizon))


class VSTGNN(nn.Module):
    """f = u . h . concat(g(X), tau): (B, V, S, C, H, W) -> (B, V, T, C, H, W)."""

    def __init__(self, config: ModelConfig, static_supports: Sequence[np.ndarray] = ()):
        super().__init__()
        self.config = config
        self.codec = VisualCodec(config.codec)
        self.time2vec = Time2Vec(config.time_embedding_size)
        self.stgnn = STGNN(config.stgnn, static_supports)

    def forward(self, x: torch.Tensor, t: torch.Tensor) -> torch.Tensor:
        if x.dim() != 6:
            raise ShapeError(f"expected (B, V, S, C, H, W), got {tuple(x.shape)}")
        B, V, S = x.shape[:3]
        T = self.config.stgnn.horizon
        v = self.codec.encode(x.reshape(B * V * S, *x.shape[3:])).view(B, V, S, -1)
        z = concat_embeddings(v, self.time2vec(t))
        future = self.stgnn(z)  # (B, V, T, P)
        images = self.codec.decode(future.reshape(B * V * T, -1))
        return images.view(B, V, T, *images.shape[1:])
