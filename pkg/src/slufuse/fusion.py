"""Fusing intent-branch and slot-branch features.

``mlb_fuse`` evaluates ``l`` rank-k bilinear forms per position,
``f_i = 1^T (U_i^T x * V_i^T y) + b_i``, which equals ``x^T (U_i V_i^T) y + b_i``
without ever materializing the m x n matrix.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numcore as nc
from .layers import glorot
from .numcore import ShapeError, Tensor


@dataclass
class MlbParams:
    u: Tensor  # (l, m, k)
    v: Tensor  # (l, n, k)
    b: Tensor  # (l,)

    def __post_init__(self):
        l, m, k = self.u.shape
        l2, n, k2 = self.v.shape
        if (l, k) != (l2, k2) or self.b.shape != (l,):
            raise ShapeError(f"MLB factor shapes disagree: U{self.u.shape} V{self.v.shape} "
                             f"b{self.b.shape}")

    @classmethod
    def init(cls, rng: np.random.Generator, m: int, n: int, rank: int, out: int) -> MlbParams:
        if not rank < min(m, n):
            raise ValueError(f"MLB rank {rank} must be below min(m, n) = {min(m, n)}")
        return cls(nc.parameter(glorot(rng, (out, m, rank), m, rank)),
                   nc.parameter(glorot(rng, (out, n, rank), n, rank)),
                   nc.parameter(np.zeros(out)))

    @property
    def dims(self) -> tuple[int, int, int, int]:
        """(m, n, k, l)"""
        l, m, k = self.u.shape
        return m, self.v.shape[1], k, l

    @property
    def num_parameters(self) -> int:
        m, n, k, l = self.dims
        return l * (m + n) * k + l

    def named(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.U": self.u, f"{prefix}.V": self.v, f"{prefix}.b": self.b}


def full_bilinear_parameters(m: int, n: int, out: int) -> int:
    return out * (m * n + 1)


def mlb_fuse(x: Tensor, y: Tensor, p: MlbParams) -> Tensor:
    """Position-wise low-rank bilinear fusion of (..., m) and (..., n) into (..., l)."""
    m, n, k, l = p.dims
    if x.shape[-1] != m or y.shape[-1] != n:
        raise ShapeError(f"mlb_fuse: inputs {x.shape}, {y.shape} vs expected m={m}, n={n}")
    if x.shape[:-1] != y.shape[:-1]:
        raise ShapeError(f"mlb_fuse: leading shapes differ, {x.shape} vs {y.shape}")
    lead = x.shape[:-1]
    rows = int(np.prod(lead, dtype=np.int64))
    # (l, m, k) -> (m, l*k) so one matmul projects onto every U_i at once
    u_flat = nc.reshape(nc.transpose(p.u, (1, 0, 2)), (m, l * k))
    v_flat = nc.reshape(nc.transpose(p.v, (1, 0, 2)), (n, l * k))
    xu = nc.matmul(nc.reshape(x, (rows, m)), u_flat)
    yv = nc.matmul(nc.reshape(y, (rows, n)), v_flat)
    joint = nc.sum(nc.reshape(nc.hadamard(xu, yv), (rows, l, k)), axis=2)
    fused = nc.add(joint, nc.expand(p.b, 0, rows))
    return nc.reshape(fused, lead + (l,))


def dense_add(x: Tensor, y: Tensor) -> Tensor:
    if x.shape != y.shape:
        raise ShapeError(f"dense_add: shape mismatch {x.shape} vs {y.shape}")
    return nc.add(x, y)


def broadcast_intent(v: Tensor, length: int) -> Tensor:
    """Replicate a (B, d) utterance vector at every position: (B, length, d)."""
    if length < 1:
        raise ValueError("length must be >= 1")
    if v.ndim != 2:
        raise ShapeError(f"broadcast_intent expects (batch, d), got {v.shape}")
    return nc.expand(v, 1, length)
