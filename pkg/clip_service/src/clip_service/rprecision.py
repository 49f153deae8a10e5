"""Retrieval precision over rendered meshes: for each prompt, rank all meshes
by mean render-embedding cosine similarity; the score is the fraction of
prompts whose own mesh ranks first."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import torch

from .encoders import build_encoder


def read_pgm(path) -> np.ndarray:
    """Minimal binary (P5) PGM reader returning intensities in [0, 1]."""
    data = Path(path).read_bytes()
    if not data.startswith(b"P5"):
        raise ValueError(f"{path}: not a binary PGM")
    fields = []
    pos = 2
    while len(fields) < 3:
        while pos < len(data) and data[pos] in b" \t\r\n":
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos] not in b"\r\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and data[pos] not in b" \t\r\n":
            pos += 1
        fields.append(int(data[start:pos]))
    pos += 1  # single whitespace after maxval
    width, height, maxval = fields
    pixels = np.frombuffer(data, dtype=np.uint8, count=width * height, offset=pos)
    return pixels.reshape(height, width).astype(np.float64) / maxval


def load_prompts(path):
    """Lines of ``mesh_id<TAB>prompt``; blank lines and # comments skipped."""
    pairs = []
    for raw in Path(path).read_text().splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        mesh_id, _, prompt = line.partition("\t")
        if not prompt:
            raise ValueError(f"bad prompt line (need mesh_id<TAB>prompt): {raw!r}")
        pairs.append((mesh_id.strip(), prompt.strip()))
    return pairs


def eval_rprecision(renders_dir, prompts_path, model_id: str = "toy",
                    patch_size: int = 16, stride: int = 16) -> dict:
    renders_dir = Path(renders_dir)
    pairs = load_prompts(prompts_path)
    if not pairs:
        raise ValueError("no prompts given")

    mesh_ids = [mesh_id for mesh_id, _ in pairs]
    mesh_embeddings = {}
    encoder = None
    for mesh_id in mesh_ids:
        mesh_dir = renders_dir / mesh_id
        files = sorted(mesh_dir.glob("*.pgm"))
        if not files:
            raise FileNotFoundError(f"no renders for mesh {mesh_id!r} in {mesh_dir}")
        images = np.stack([read_pgm(f) for f in files]).astype(np.float32)
        if encoder is None:
            encoder = build_encoder(model_id, images.shape[1], patch_size, stride)
        with torch.no_grad():
            emb, _ = encoder(torch.from_numpy(images))
        mean = emb.mean(dim=0)
        mesh_embeddings[mesh_id] = mean / mean.norm().clamp_min(1e-12)

    hits = 0
    per_prompt = {}
    for mesh_id, prompt in pairs:
        text = encoder.embed_text(prompt)
        sims = {mid: float(emb @ text) for mid, emb in mesh_embeddings.items()}
        best = max(sims, key=sims.get)
        per_prompt[prompt] = {"expected": mesh_id, "retrieved": best}
        hits += best == mesh_id
    return {
        "precision": hits / len(pairs),
        "prompts": len(pairs),
        "meshes": len(mesh_embeddings),
        "per_prompt": per_prompt,
    }
