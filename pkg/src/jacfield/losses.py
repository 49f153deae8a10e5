"""Loss assembly: identity regularization on the Jacobian field and the
composition of provider-path and regularization gradients."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Below this Frobenius distance from identity the (non-smooth) unsquared norm
# gets a zero subgradient.
TIP_EPS = 1e-12


@dataclass(frozen=True)
class LossBreakdown:
    semantic: float
    view_consistency: float
    identity_reg: float

    @property
    def total(self) -> float:
        return self.semantic + self.view_consistency + self.identity_reg

    def as_row(self, iteration: int) -> str:
        return (
            f"{iteration},{self.semantic:.12g},{self.view_consistency:.12g},"
            f"{self.identity_reg:.12g},{self.total:.12g}"
        )

    CSV_HEADER = "iteration,semantic,vc,identity,total"


def identity_regularization(jacobian_field: np.ndarray, alpha: float):
    """alpha * sum_i ||J_i - I||_F (unsquared) and its gradient.

    The gradient of each term is alpha * (J_i - I) / ||J_i - I||_F, defined as
    zero at the tip (||J_i - I||_F < 1e-12).
    """
    jf = np.asarray(jacobian_field, dtype=np.float64)
    dev = jf - np.eye(3)[None, :, :]
    norms = np.sqrt(np.sum(dev * dev, axis=(1, 2)))
    value = alpha * float(norms.sum())
    safe = np.where(norms < TIP_EPS, 1.0, norms)
    grad = alpha * dev / safe[:, None, None]
    grad[norms < TIP_EPS] = 0.0
    return value, grad


def compose(semantic_loss: float, vc_loss: float, provider_gradient: np.ndarray,
            identity_value: float, identity_gradient: np.ndarray):
    """Sum the provider-path gradient (weights already applied provider-side)
    with the identity-regularization gradient; record the breakdown."""
    pg = np.asarray(provider_gradient, dtype=np.float64)
    ig = np.asarray(identity_gradient, dtype=np.float64)
    if pg.shape != ig.shape:
        raise ValueError(f"gradient shape mismatch: {pg.shape} vs {ig.shape}")
    breakdown = LossBreakdown(
        semantic=float(semantic_loss),
        view_consistency=float(vc_loss),
        identity_reg=float(identity_value),
    )
    return breakdown, pg + ig
