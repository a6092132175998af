"""Evidential regression and classification primitives.

Regression targets carry a normal-inverse-gamma (NIG) head (gamma, nu, alpha,
beta); classification uses non-negative evidence per class. All ops are
elementwise torch functions; reduction is left to the caller.
"""

import math
from typing import NamedTuple, Tuple

import torch
import torch.nn.functional as F

# keeps alpha > 1 and nu, beta > 0 even when softplus underflows in float32
_EPS = 1e-6

_HALF_LOG_PI = 0.5 * math.log(math.pi)


class NIGParams(NamedTuple):
    gamma: torch.Tensor
    nu: torch.Tensor
    alpha: torch.Tensor
    beta: torch.Tensor


def nig_activation(raw: torch.Tensor, dim: int = -1) -> NIGParams:
    """Map 4 unconstrained channels along `dim` to a valid NIG parameter set:
    nu, beta via softplus, alpha via 1 + softplus."""
    if raw.shape[dim] != 4:
        raise ValueError(f"expected 4 channels along dim {dim}, got {raw.shape[dim]}")
    gamma, nu, alpha, beta = torch.unbind(raw, dim=dim)
    return NIGParams(
        gamma=gamma,
        nu=F.softplus(nu) + _EPS,
        alpha=1.0 + F.softplus(alpha) + _EPS,
        beta=F.softplus(beta) + _EPS,
    )


def _check_nig(p: NIGParams) -> None:
    if not bool(torch.all(p.nu > 0)):
        raise ValueError("NIG domain violation: nu must be positive")
    if not bool(torch.all(p.alpha > 1)):
        raise ValueError("NIG domain violation: alpha must exceed 1")
    if not bool(torch.all(p.beta > 0)):
        raise ValueError("NIG domain violation: beta must be positive")


def nig_nll(p: NIGParams, target: torch.Tensor) -> torch.Tensor:
    """Negative log-likelihood of target under the NIG-induced Student-t."""
    _check_nig(p)
    omega = 2.0 * p.beta * (1.0 + p.nu)
    resid_sq = (target - p.gamma) ** 2
    return (
        _HALF_LOG_PI
        - 0.5 * torch.log(p.nu)
        - p.alpha * torch.log(omega)
        + torch.lgamma(p.alpha)
        - torch.lgamma(p.alpha + 0.5)
        + (p.alpha + 0.5) * torch.log(resid_sq * p.nu + omega)
    )


def nig_regularizer(p: NIGParams, target: torch.Tensor) -> torch.Tensor:
    """Error-scaled evidence penalty |target - gamma| * (2*alpha + nu)."""
    return torch.abs(target - p.gamma) * (2.0 * p.alpha + p.nu)


def nig_loss(p: NIGParams, target: torch.Tensor, lam: float) -> torch.Tensor:
    if lam < 0:
        raise ValueError("regularizer weight must be non-negative")
    return nig_nll(p, target) + lam * nig_regularizer(p, target)


def nig_uncertainty(p: NIGParams) -> torch.Tensor:
    """Total predictive uncertainty (aleatoric + epistemic): (1 + 1/nu) * beta / (alpha - 1)."""
    _check_nig(p)
    return (1.0 + 1.0 / p.nu) * p.beta / (p.alpha - 1.0)


def evidence_activation(raw: torch.Tensor) -> torch.Tensor:
    """Non-negative evidence from unconstrained outputs.

    Softplus rather than a hard rectifier: collision labels are ~1% of frames,
    and a rectified evidence unit that goes negative everywhere early in
    training can never recover (its gradient is exactly zero), which kills the
    risk head. Softplus matches the rectifier for large inputs but keeps a
    usable gradient near zero."""
    return F.softplus(raw)


def evidential_class_loss(evidence: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
    """Brier-style evidential classification loss, summed over the class dim.

    With S = sum_i (e_i + 1) and p_j = (e_j + 1)/S:
    sum_j (y_j - p_j)^2 + p_j (1 - p_j) / (S + 1).
    """
    if not bool(torch.all(evidence >= 0)):
        raise ValueError("evidence must be non-negative")
    alpha = evidence + 1.0
    s = alpha.sum(dim=-1, keepdim=True)
    p = alpha / s
    err = (y - p) ** 2
    var = p * (1.0 - p) / (s + 1.0)
    return (err + var).sum(dim=-1)


def evidential_class_output(evidence: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
    """Class probabilities (e+1)/S and vacuity u_c = K/S along the last dim."""
    if not bool(torch.all(evidence >= 0)):
        raise ValueError("evidence must be non-negative")
    alpha = evidence + 1.0
    s = alpha.sum(dim=-1, keepdim=True)
    probs = alpha / s
    k = evidence.shape[-1]
    u_c = k / s.squeeze(-1)
    return probs, u_c
