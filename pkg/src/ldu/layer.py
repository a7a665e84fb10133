"""Distinction-maximization layer over a bank of trainable prototypes."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import ShapeError, Tensor, tensor

EPS_NORM = 1e-8


class ZeroPrototypeError(ValueError):
    pass


@dataclass
class PrototypeBank:
    """``m`` prototype vectors of dimension ``n`` stored as one trainable tensor.

    With ``unit_norm`` set, every row is rescaled to unit length after each
    optimizer step (see :func:`renormalize_prototypes`).
    """

    prototypes: Tensor
    unit_norm: bool = True

    def __post_init__(self):
        if self.prototypes.ndim != 2 or min(self.prototypes.shape) < 1:
            raise ShapeError(f"prototype bank needs an m x n matrix, got {self.prototypes.shape}")
        if not np.all(np.isfinite(self.prototypes.data)):
            raise ValueError("prototype bank has non-finite entries")
        self.prototypes.requires_grad = True

    @property
    def m(self) -> int:
        return self.prototypes.shape[0]

    @property
    def n(self) -> int:
        return self.prototypes.shape[1]


def init_prototypes(m: int, n: int, seed: int, unit_norm: bool = True) -> PrototypeBank:
    """Standard-normal rows scaled to unit length, deterministic per ``seed``."""
    if m < 1 or n < 1:
        raise ValueError(f"need m >= 1 and n >= 1, got m={m}, n={n}")
    rows = []
    for i in range(m):
        sub = 0
        while True:
            rng = np.random.default_rng([seed, i, sub])
            v = rng.standard_normal(n)
            norm = np.linalg.norm(v)
            if norm > 0:
                break
            sub += 1
        rows.append(v / norm)
    return PrototypeBank(Tensor(np.stack(rows), requires_grad=True, name="prototypes"), unit_norm)


def _check_dims(z: Tensor, bank: PrototypeBank) -> None:
    if z.ndim != 2 or z.shape[1] != bank.n:
        raise ShapeError(f"latent batch of shape {z.shape} does not match prototype dimension {bank.n}")


def dm_forward_l2(z, bank: PrototypeBank) -> Tensor:
    """``scores[j, i] = -||z_j - p_i||``."""
    z = tensor(z)
    _check_dims(z, bank)
    p = bank.prototypes
    b, m = z.shape[0], bank.m
    # gather rows pairwise so distances come from exact differences
    zi = z.take_rows(np.repeat(np.arange(b), m))
    pi = p.take_rows(np.tile(np.arange(m), b))
    d = (zi - pi).l2_norm_rows()
    return -d.reshape((b, m))


def dm_forward_cos(z, bank: PrototypeBank) -> Tensor:
    """Cosine similarity of each latent row against each prototype.

    Norms below ``EPS_NORM`` are clamped, so a zero latent row scores 0.
    """
    z = tensor(z)
    _check_dims(z, bank)
    p = bank.prototypes
    zn = z.l2_norm_rows().clamp_min(EPS_NORM)
    pn = p.l2_norm_rows().clamp_min(EPS_NORM)
    # roundoff can push |cos| a few ulps past 1
    return ((z @ p.T) / zn / pn.T).clip(-1.0, 1.0)


def ldu_embed(z, bank: PrototypeBank) -> Tensor:
    """``exp(-cos(z, p))``, entries in ``[1/e, e]``."""
    return (-dm_forward_cos(z, bank)).exp()


def renormalize_prototypes(bank: PrototypeBank) -> None:
    data = bank.prototypes.data
    norms = np.linalg.norm(data, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise ZeroPrototypeError("cannot renormalize a zero prototype row")
    data /= norms
