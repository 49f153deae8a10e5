"""Semantic and view-consistency losses over encoder features, with pixel
gradients computed by automatic differentiation.

Semantic loss (absolute mode): mean over views of 1 - cos(e_view, e_prompt).
Directional mode replaces the prompt embedding with the direction between
target and base prompts, compared against the direction from the cached
iteration-0 render embedding to the current one.

View-consistency: for every vertex visible in at least two views, the mean
over ordered view pairs of 1 - cos between the token features of its assigned
patches; zero when no vertex is shared.
"""

from __future__ import annotations

import numpy as np
import torch


class LossModel:
    def __init__(self, encoder, prompt: str, base_prompt: str,
                 semantic_weight: float, vc_weight: float, directional: bool):
        self.encoder = encoder
        self.semantic_weight = float(semantic_weight)
        self.vc_weight = float(vc_weight)
        self.directional = bool(directional)
        self.prompt_embedding = encoder.embed_text(prompt)
        if directional:
            base = encoder.embed_text(base_prompt)
            direction = self.prompt_embedding - base
            norm = direction.norm().clamp_min(1e-12)
            self.text_direction = direction / norm
        self.anchor = None  # mean embedding of the first request's renders

    def evaluate(self, images: np.ndarray, tables):
        """images: (views, H, W) float32 in [0, 1]; tables: per view
        (vertex_ids, patch_ids). Returns (semantic, vc, gradients)."""
        img = torch.from_numpy(np.array(images, dtype=np.float32, copy=True))
        img.requires_grad_(True)
        emb, tokens = self.encoder(img)

        if self.directional:
            if self.anchor is None:
                self.anchor = emb.mean(dim=0).detach()
            delta = emb - self.anchor
            delta = delta / delta.norm(dim=-1, keepdim=True).clamp_min(1e-6)
            sims = delta @ self.text_direction
        else:
            sims = emb @ self.prompt_embedding
        semantic = self.semantic_weight * (1.0 - sims).mean()

        vc = self._view_consistency(tokens, tables, images.shape[0])
        total = semantic + vc
        total.backward()
        grads = img.grad.detach().numpy().astype("<f4")
        return float(semantic.item()), float(vc.item()), grads

    def _view_consistency(self, tokens, tables, n_views):
        occurrences: dict[int, list] = {}
        n_patches = tokens.shape[1]
        for view, (ids, patches) in enumerate(tables):
            for vid, pid in zip(ids, patches):
                if not 0 <= pid < n_patches:
                    raise ValueError(
                        f"patch index {pid} out of range for {n_patches} patches"
                    )
                occurrences.setdefault(int(vid), []).append((view, int(pid)))
        pair_a, pair_b = [], []
        for slots in occurrences.values():
            if len(slots) < 2:
                continue
            for i, (vi, pi) in enumerate(slots):
                for j, (vj, pj) in enumerate(slots):
                    if i == j:
                        continue
                    pair_a.append((vi, pi))
                    pair_b.append((vj, pj))
        if not pair_a:
            return tokens.sum() * 0.0
        ia = torch.tensor(pair_a, dtype=torch.long)
        ib = torch.tensor(pair_b, dtype=torch.long)
        fa = tokens[ia[:, 0], ia[:, 1]]
        fb = tokens[ib[:, 0], ib[:, 1]]
        cos = torch.nn.functional.cosine_similarity(fa, fb, dim=-1, eps=1e-12)
        return self.vc_weight * (1.0 - cos).mean()
