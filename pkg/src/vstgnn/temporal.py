"""Time2Vec time embedding and its concatenation with image embeddings."""

from __future__ import annotations

import torch
from torch import nn

from vstgnn.errors import ShapeError, ValidationError


def time2vec(t, omega: torch.Tensor, phi: torch.Tensor) -> torch.Tensor:
    """Embed time coordinates ``t`` (any shape) into ``(*t.shape, K)``.

    Component 0 is linear, ``omega[0] * t + phi[0]``; components ``1..K-1`` are
    ``sin(omega[i] * t + phi[i])``.
    """
    omega = torch.as_tensor(omega)
    phi = torch.as_tensor(phi, dtype=omega.dtype)
    if omega.dim() != 1 or omega.shape != phi.shape:
        raise ShapeError(f"omega and phi must be equal-length vectors, got {tuple(omega.shape)}, "
                         f"{tuple(phi.shape)}")
    if omega.numel() == 0:
        raise ValidationError("time embedding size K must be >= 1")
    t = torch.as_tensor(t, dtype=omega.dtype)
    arg = t[..., None] * omega + phi
    return torch.cat([arg[..., :1], torch.sin(arg[..., 1:])], dim=-1)


class Time2Vec(nn.Module):
    def __init__(self, size: int = 64):
        super().__init__()
        if size < 1:
            raise ValidationError("time embedding size K must be >= 1")
        self.size = size
        self.omega = nn.Parameter(torch.rand(size))
        self.phi = nn.Parameter(torch.rand(size))

    def forward(self, t: torch.Tensor) -> torch.Tensor:
        return time2vec(t, self.omega, self.phi)


def concat_embeddings(v: torch.Tensor, tau: torch.Tensor) -> torch.Tensor:
    """Append the per-step time embedding to every node's image embedding.

    ``v`` is ``(..., V, S, P)``; ``tau`` is ``(..., S, K)`` with matching leading
    batch dims (or none). Result is ``(..., V, S, P + K)``.
    """
    if v.dim() < 3 or tau.dim() < 2:
        raise ShapeError(f"expected v (..., V, S, P) and tau (..., S, K), got {tuple(v.shape)}, "
                         f"{tuple(tau.shape)}")
    if v.shape[-2] != tau.shape[-2]:
        raise ShapeError(f"step count mismatch: v has {v.shape[-2]}, tau has {tau.shape[-2]}")
    tau = tau.to(v.dtype).unsqueeze(-3).expand(*v.shape[:-1], tau.shape[-1])
    return torch.cat([v, tau], dim=-1)
