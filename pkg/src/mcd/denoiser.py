"""Small bidirectional transformer that predicts clean tokens from masked input."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F


@dataclass(frozen=True)
class DenoiserConfig:
    vocab_extended: int = 28
    context: int = 64
    width: int = 64
    depth: int = 2
    heads: int = 2
    ff_mult: int = 4
    init_std: float = 0.02

    def __post_init__(self):
        if self.vocab_extended < 3:
            raise ValueError("need at least two clean tokens plus the mask")
        if self.width % self.heads:
            raise ValueError(f"width {self.width} not divisible by heads {self.heads}")

    @property
    def mask_id(self) -> int:
        return self.vocab_extended - 1

    @property
    def n_classes(self) -> int:
        return self.vocab_extended - 1

    def as_dict(self) -> dict:
        return asdict(self)


class Block(nn.Module):
    def __init__(self, cfg: DenoiserConfig):
        super().__init__()
        d = cfg.width
        self.heads = cfg.heads
        self.ln1 = nn.LayerNorm(d)
        self.qkv = nn.Linear(d, 3 * d)
        self.proj = nn.Linear(d, d)
        self.ln2 = nn.LayerNorm(d)
        self.ff_in = nn.Linear(d, cfg.ff_mult * d)
        self.ff_out = nn.Linear(cfg.ff_mult * d, d)

    def forward(self, h: torch.Tensor) -> torch.Tensor:
        B, L, d = h.shape
        q, k, v = self.qkv(self.ln1(h)).split(d, dim=-1)
        hd = d // self.heads
        q, k, v = (x.view(B, L, self.heads, hd).transpose(1, 2) for x in (q, k, v))
        att = torch.softmax(q @ k.transpose(-2, -1) / math.sqrt(hd), dim=-1)
        y = (att @ v).transpose(1, 2).reshape(B, L, d)
        h = h + self.proj(y)
        return h + self.ff_out(F.gelu(self.ff_in(self.ln2(h))))


class Denoiser(nn.Module):
    """Token + position embeddings, ``depth`` attention blocks, a clean-token head.

    The head has ``K - 1`` outputs, so the mask id has an input embedding
    but can never be predicted.
    """

    def __init__(self, cfg: DenoiserConfig, seed: int | None = None):
        super().__init__()
        self.cfg = cfg
        self.tok = nn.Embedding(cfg.vocab_extended, cfg.width)
        self.pos = nn.Embedding(cfg.context, cfg.width)
        self.blocks = nn.ModuleList(Block(cfg) for _ in range(cfg.depth))
        self.ln_f = nn.LayerNorm(cfg.width)
        self.head = nn.Linear(cfg.width, cfg.n_classes)
        self.reset_parameters(seed)

    def reset_parameters(self, seed: int | None = None) -> None:
        gen = torch.Generator().manual_seed(0 if seed is None else seed)
        with torch.no_grad():
            for name, p in self.named_parameters():
                if name.endswith("bias"):
                    p.zero_()
                elif ".ln" in name or name.startswith("ln_f"):
                    p.fill_(1.0)
                elif name.endswith(("qkv.weight", "proj.weight")):
                    # attention projections: Xavier-uniform
                    bound = math.sqrt(6.0 / (p.shape[0] + p.shape[1]))
                    p.copy_((torch.rand(p.shape, generator=gen, dtype=p.dtype) * 2 - 1) * bound)
                else:
                    p.copy_(torch.randn(p.shape, generator=gen, dtype=p.dtype) * self.cfg.init_std)

    def forward(self, z) -> torch.Tensor:
        z = torch.as_tensor(z, dtype=torch.long)
        if z.ndim == 1:
            z = z[None]
        if z.shape[-1] != self.cfg.context:
            raise ValueError(f"sequence length {z.shape[-1]} != context {self.cfg.context}")
        if z.numel() and (int(z.min()) < 0 or int(z.max()) >= self.cfg.vocab_extended):
            raise ValueError(f"token ids must lie in [0, {self.cfg.vocab_extended - 1}]")
        h = self.tok(z) + self.pos.weight[None]
        for blk in self.blocks:
            h = blk(h)
        return self.head(self.ln_f(h))

    def n_parameters(self) -> int:
        return sum(p.numel() for p in self.parameters())

    def all_finite(self) -> bool:
        return all(bool(torch.isfinite(p).all()) for p in self.parameters())


def log_probs(logits: torch.Tensor) -> torch.Tensor:
    return torch.log_softmax(logits, dim=-1)


def predict_proba(model, z, dtype=torch.float64) -> np.ndarray:
    """Clean-token probabilities as a float64 array ``(B, L, K - 1)``.

    ``model`` may be a :class:`Denoiser` or any callable returning logits.
    """
    if isinstance(model, nn.Module):
        with torch.no_grad():
            logits = model(np.asarray(z))
    else:
        logits = model(np.asarray(z))
    logits = torch.as_tensor(logits).to(dtype)
    return torch.softmax(logits, dim=-1).numpy()


def param_digest(model: nn.Module) -> str:
    import hashlib

    h = hashlib.sha256()
    for name, p in model.state_dict().items():
        h.update(name.encode())
        h.update(p.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()
