"""Graph WaveNet style spatiotemporal core h(.).

Gated dilated temporal convolutions interleaved with diffusion graph
convolutions over static transition matrices plus a learned adaptive
adjacency. A skip accumulator feeds a 1x1-conv head that emits all ``T``
future embeddings at once.

Internal layout follows the usual (batch, channels, nodes, time) convention.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from vstgnn.errors import ConfigError, ShapeError


def adaptive_adjacency(e1: torch.Tensor, e2: torch.Tensor) -> torch.Tensor:
    """``softmax(relu(E1 @ E2.T), dim=1)``; each row sums to one."""
    if not (torch.isfinite(e1).all() and torch.isfinite(e2).all()):
        raise FloatingPointError("adaptive adjacency node embeddings contain NaN or Inf")
    return torch.softmax(F.relu(e1 @ e2.T), dim=1)


def diffusion_conv(x: torch.Tensor, supports: Sequence[torch.Tensor], diffusion_steps: int,
                   weights: Sequence[torch.Tensor], bias: torch.Tensor | None = None) -> torch.Tensor:
    """Sum over supports ``s`` and hops ``k`` of ``(P_s^k x) W_{s,k}``.

    ``x`` is ``(..., V, F)``. ``weights`` holds ``1 + len(supports) * diffusion_steps``
    matrices of shape ``(F, F')``: the zero-hop term first, then for each support
    its hops ``1..diffusion_steps`` in order.
    """
    n_terms = 1 + len(supports) * diffusion_steps
    if len(weights) != n_terms:
        raise ConfigError(f"expected {n_terms} weight matrices for {len(supports)} supports x "
                          f"{diffusion_steps} steps, got {len(weights)}")
    out = x @ weights[0]
    i = 1
    for p in supports:
        h = x
        for _ in range(diffusion_steps):
            h = p @ h
            out = out + h @ weights[i]
            i += 1
    if bias is not None:
        out = out + bias
    return out


class DiffusionConv(nn.Module):
    def __init__(self, c_in: int, c_out: int, num_supports: int, diffusion_steps: int):
        super().__init__()
        self.diffusion_steps = diffusion_steps
        n_terms = 1 + num_supports * diffusion_steps
        self.weight = nn.Parameter(torch.empty(n_terms, c_in, c_out))
        self.bias = nn.Parameter(torch.empty(c_out))
        bound = 1.0 / np.sqrt(c_in * n_terms)
        nn.init.uniform_(self.weight, -bound, bound)
        nn.init.uniform_(self.bias, -bound, bound)

    def forward(self, x: torch.Tensor, supports: list[torch.Tensor]) -> torch.Tensor:
        # (B, C, V, L) -> (B, L, V, C) so the node axis sits where P @ x expects it
        h = x.permute(0, 3, 2, 1)
        h = diffusion_conv(h, supports, self.diffusion_steps, list(self.weight), self.bias)
        return h.permute(0, 3, 2, 1)


@dataclass(frozen=True)
class StgnnConfig:
    num_nodes: int
    input_width: int = 320
    output_width: int = 256
    horizon: int = 1
    dilations: tuple[int, ...] = (1, 2, 1, 2, 1, 2, 1, 2)
    kernel_size: int = 2
    residual_channels: int = 32
    dilation_channels: int = 32
    skip_channels: int = 128
    end_channels: int = 256
    diffusion_steps: int = 2
    node_embedding_size: int = 10
    num_static_supports: int = 2
    adaptive: bool = True

    def __post_init__(self):
        object.__setattr__(self, "dilations", tuple(int(d) for d in self.dilations))
        if self.horizon < 1:
            raise ConfigError("horizon T must be >= 1")
        if not self.adaptive and self.num_static_supports == 0:
            raise ConfigError("need at least one support: enable adaptive or pass static supports")

    @property
    def layers(self) -> int:
        return len(self.dilations)

    @property
    def receptive_field(self) -> int:
        return 1 + (self.kernel_size - 1) * sum(self.dilations)

    def to_dict(self) -> dict:
        return asdict(self)


class STGNN(nn.Module):
    """Maps combined embeddings (B, V, S, Z) to future embeddings (B, V, T, P)."""

    def __init__(self, config: StgnnConfig, static_supports: Sequence[np.ndarray | torch.Tensor] = ()):
        super().__init__()
        self.config = config
        if len(static_supports) != config.num_static_supports:
            raise ConfigError(f"config declares {config.num_static_supports} static supports, "
                              f"got {len(static_supports)}")
        for i, s in enumerate(static_supports):
            s = torch.tensor(np.array(s), dtype=torch.float32)
            if s.shape != (config.num_nodes, config.num_nodes):
                raise ShapeError(f"support {i} has shape {tuple(s.shape)}, expected "
                                 f"({config.num_nodes}, {config.num_nodes})")
            self.register_buffer(f"support_{i}", s)
        if config.adaptive:
            self.node_emb1 = nn.Parameter(torch.randn(config.num_nodes, config.node_embedding_size))
            self.node_emb2 = nn.Parameter(torch.randn(config.num_nodes, config.node_embedding_size))
        n_supports = config.num_static_supports + int(config.adaptive)
        rc, dc, sc = config.residual_channels, config.dilation_channels, config.skip_channels
        self.start_conv = nn.Conv2d(config.input_width, rc, 1)
        self.filter_convs = nn.ModuleList()
        self.gate_convs = nn.ModuleList()
        self.skip_convs = nn.ModuleList()
        self.gconvs = nn.ModuleList()
        for d in config.dilations:
            self.filter_convs.append(nn.Conv2d(rc, dc, (1, config.kernel_size), dilation=(1, d)))
            self.gate_convs.append(nn.Conv2d(rc, dc, (1, config.kernel_size), dilation=(1, d)))
            self.skip_convs.append(nn.Conv2d(dc, sc, 1))
            self.gconvs.append(DiffusionConv(dc, rc, n_supports, config.diffusion_steps))
        self.end_conv_1 = nn.Conv2d(sc, config.end_channels, 1)
        self.end_conv_2 = nn.Conv2d(config.end_channels, config.horizon * config.output_width, 1)

    def static_supports(self) -> list[torch.Tensor]:
        return [getattr(self, f"support_{i}") for i in range(self.config.num_static_supports)]

    def adjacency(self) -> torch.Tensor | None:
        if not self.config.adaptive:
            return None
        return adaptive_adjacency(self.node_emb1, self.node_emb2)

    def supports(self, dtype: torch.dtype) -> list[torch.Tensor]:
        out = [s.to(dtype) for s in self.static_supports()]
        if self.config.adaptive:
            out.append(self.adjacency().to(dtype))
        return out

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        cfg = self.config
        unbatched = z.dim() == 3
        if unbatched:
            z = z.unsqueeze(0)
        if z.dim() != 4 or z.shape[1] != cfg.num_nodes or z.shape[3] != cfg.input_width:
            raise ShapeError(f"st-GNN expects (B, {cfg.num_nodes}, S, {cfg.input_width}), "
                             f"got {tuple(z.shape)}")
        x = z.permute(0, 3, 1, 2)  # (B, Z, V, S)
        if x.shape[3] < cfg.receptive_field:
            x = F.pad(x, (cfg.receptive_field - x.shape[3], 0))
        x = self.start_conv(x)
        supports = self.supports(x.dtype)
        skip = None
        for filt, gate, skip_conv, gconv in zip(self.filter_convs, self.gate_convs,
                                                self.skip_convs, self.gconvs):
            residual = x
            h = torch.tanh(filt(x)) * torch.sigmoid(gate(x))
            s = skip_conv(h)
            skip = s if skip is None else s + skip[..., -s.shape[3]:]
            x = gconv(h, supports) + residual[..., -h.shape[3]:]
        # The last layer's residual output x is never read (only its skip is),
        # so that layer's graph conv gets no gradient, as in Graph WaveNet.
        out = F.relu(skip[..., -1:])
        out = self.end_conv_2(F.relu(self.end_conv_1(out)))  # (B, T*P, V, 1)
        out = out[..., 0].view(out.shape[0], cfg.horizon, cfg.output_width, cfg.num_nodes)
        out = out.permute(0, 3, 1, 2)  # (B, V, T, P)
        return out[0] if unbatched else out
