"""Vision/text encoders behind the guidance losses.

The built-in encoder ("toy") is a small vision transformer with
deterministically seeded weights: a patch-embedding convolution whose stride
is set from the session handshake (a smaller stride yields overlapping
patches and a finer token grid), sinusoidal positions, two encoder blocks,
per-patch token features from the final block, and a 512-d global image
embedding. It carries no pretrained semantics but is differentiable,
deterministic, and fast, which is what desk-scale runs and the protocol
tests need.

Model ids other than "toy" are treated as Hugging Face CLIP checkpoints and
require locally available weights.
"""

from __future__ import annotations

import hashlib
import math

import numpy as np
import torch
import torch.nn as nn

EMBED_DIM = 512
TOKEN_DIM = 64

# canonical input normalization for the built-in encoder
TOY_MEAN = 0.5
TOY_STD = 0.25


class EncoderError(Exception):
    pass


def _sinusoidal_positions(n_positions: int, dim: int) -> torch.Tensor:
    pos = torch.arange(n_positions, dtype=torch.float32).unsqueeze(1)
    i = torch.arange(0, dim, 2, dtype=torch.float32)
    angles = pos / torch.pow(10000.0, i / dim)
    out = torch.zeros(n_positions, dim)
    out[:, 0::2] = torch.sin(angles)
    out[:, 1::2] = torch.cos(angles[:, : dim // 2])
    return out


class _Block(nn.Module):
    def __init__(self, dim, heads):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = nn.MultiheadAttention(dim, heads, batch_first=True)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = nn.Sequential(nn.Linear(dim, 2 * dim), nn.GELU(), nn.Linear(2 * dim, dim))

    def forward(self, x):
        h = self.norm1(x)
        x = x + self.attn(h, h, h, need_weights=False)[0]
        x = x + self.mlp(self.norm2(x))
        return x


class ToyEncoder(nn.Module):
    """Deterministic-weight ViT-style encoder over grayscale-replicated RGB."""

    def __init__(self, resolution: int, patch_size: int, stride: int, seed: int = 1234):
        super().__init__()
        if (resolution - patch_size) % stride != 0:
            raise EncoderError(
                f"stride {stride} must divide resolution - patch_size "
                f"({resolution} - {patch_size})"
            )
        self.resolution = resolution
        self.patch_size = patch_size
        self.stride = stride
        self.grid = (resolution - patch_size) // stride + 1

        # weights are a pure function of the seed so restarts agree bit-for-bit
        torch.manual_seed(seed)
        self.patch_embed = nn.Conv2d(3, TOKEN_DIM, kernel_size=patch_size, stride=stride)
        self.register_buffer("positions", _sinusoidal_positions(self.grid**2, TOKEN_DIM))
        self.blocks = nn.ModuleList([_Block(TOKEN_DIM, 4) for _ in range(2)])
        self.final_norm = nn.LayerNorm(TOKEN_DIM)
        self.head = nn.Linear(TOKEN_DIM, EMBED_DIM)
        self.eval()

    def forward(self, images: torch.Tensor):
        """images: (B, H, W) grayscale in [0, 1].

        Returns (embedding (B, 512) unit-norm, tokens (B, grid^2, TOKEN_DIM)).
        """
        x = images.unsqueeze(1).repeat(1, 3, 1, 1)  # grayscale -> RGB
        x = (x - TOY_MEAN) / TOY_STD
        tok = self.patch_embed(x)  # (B, d, grid, grid)
        tok = tok.flatten(2).transpose(1, 2) + self.positions
        for block in self.blocks:
            tok = block(tok)
        tok = self.final_norm(tok)
        emb = self.head(tok.mean(dim=1))
        emb = emb / emb.norm(dim=-1, keepdim=True).clamp_min(1e-12)
        return emb, tok

    def embed_text(self, prompt: str) -> torch.Tensor:
        """Deterministic unit vector derived from the prompt text."""
        digest = hashlib.sha256(prompt.encode("utf-8")).digest()
        seed = int.from_bytes(digest[:8], "little")
        rng = np.random.default_rng(seed)
        v = rng.standard_normal(EMBED_DIM)
        v /= np.linalg.norm(v)
        return torch.from_numpy(v.astype(np.float32))


class HFClipEncoder(nn.Module):
    """Wrapper over a Hugging Face CLIP checkpoint with a reduced-stride
    patch embedding (position embeddings bicubically resized to the finer
    token grid). Requires the weights to be available locally."""

    def __init__(self, model_id: str, resolution: int, patch_size: int, stride: int):
        super().__init__()
        try:
            from transformers import CLIPModel, CLIPProcessor
        except ImportError as exc:
            raise EncoderError(f"transformers not installed: {exc}")
        try:
            self.model = CLIPModel.from_pretrained(model_id, local_files_only=True)
            self.processor = CLIPProcessor.from_pretrained(model_id, local_files_only=True)
        except Exception as exc:
            raise EncoderError(f"cannot load model {model_id!r} locally: {exc}")
        self.model.eval()
        self.resolution = resolution
        self.patch_size = patch_size
        self.stride = stride
        self.grid = (resolution - patch_size) // stride + 1
        vision = self.model.vision_model.embeddings
        if vision.patch_embedding.kernel_size[0] != patch_size:
            raise EncoderError(
                f"model patch size {vision.patch_embedding.kernel_size[0]} != "
                f"handshake patch size {patch_size}"
            )
        vision.patch_embedding.stride = (stride, stride)
        self._resize_positions(vision)
        image_mean = torch.tensor(self.processor.image_processor.image_mean)
        image_std = torch.tensor(self.processor.image_processor.image_std)
        self.register_buffer("mean", image_mean.view(1, 3, 1, 1))
        self.register_buffer("std", image_std.view(1, 3, 1, 1))

    def _resize_positions(self, vision):
        weight = vision.position_embedding.weight.data
        cls_pos, grid_pos = weight[:1], weight[1:]
        old = int(math.sqrt(len(grid_pos)))
        resized = torch.nn.functional.interpolate(
            grid_pos.T.reshape(1, -1, old, old),
            size=(self.grid, self.grid),
            mode="bicubic",
            align_corners=False,
        )
        new_weight = torch.cat([cls_pos, resized.reshape(-1, self.grid**2).T], dim=0)
        vision.position_embedding = nn.Embedding.from_pretrained(new_weight, freeze=True)
        vision.register_buffer(
            "position_ids", torch.arange(self.grid**2 + 1).unsqueeze(0), persistent=False
        )
        vision.num_positions = self.grid**2 + 1

    def forward(self, images: torch.Tensor):
        x = images.unsqueeze(1).repeat(1, 3, 1, 1)
        x = (x - self.mean) / self.std
        out = self.model.vision_model(pixel_values=x, output_hidden_states=False)
        tokens = out.last_hidden_state[:, 1:, :]  # final block, grid tokens
        emb = self.model.visual_projection(out.pooler_output)
        emb = emb / emb.norm(dim=-1, keepdim=True).clamp_min(1e-12)
        return emb, tokens

    def embed_text(self, prompt: str) -> torch.Tensor:
        inputs = self.processor(text=[prompt], return_tensors="pt", padding=True)
        with torch.no_grad():
            emb = self.model.get_text_features(**inputs)[0]
        return emb / emb.norm().clamp_min(1e-12)


def build_encoder(model_id: str, resolution: int, patch_size: int, stride: int):
    if model_id == "toy":
        return ToyEncoder(resolution, patch_size, stride)
    return HFClipEncoder(model_id, resolution, patch_size, stride)
