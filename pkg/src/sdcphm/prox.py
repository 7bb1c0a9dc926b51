"""Separable penalties: proximal points, Moreau envelopes and DC pieces.

For a penalty ``P`` and ``rho > 0`` the Moreau envelope

    env(w) = min_v  ||v - w||^2 / (2 rho) + P(v)

splits as ``||w||^2 / (2 rho) - D(w)`` with ``D`` convex.  The maximiser of
``D`` is any prox point, so ``U^T prox / rho`` is a subgradient of
``s -> D(U s + u)`` and ``(w - prox) / rho`` is a limiting subgradient of
``P`` at the prox point.  Everything here is closed form for the built-in
penalties; custom penalties bring their own prox oracle.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

ZERO, L0, L1, CUSTOM = "zero", "l0", "l1", "custom"


@dataclass(frozen=True)
class PenaltySpec:
    """A penalty ``P`` composed with the affine map ``s -> U s + u``.

    ``affine_U=None`` means the identity and ``affine_u=None`` means zero.
    A custom penalty supplies ``value_fn(w)``, ``prox_fn(w, rho)`` and a
    finite ``lower_bound``; the prox oracle must return a single minimiser.
    """

    kind: str = ZERO
    weight: float = 0.0
    affine_U: Optional[np.ndarray] = None
    affine_u: Optional[np.ndarray] = None
    prob_weight: float = 1.0
    value_fn: Optional[Callable] = field(default=None, compare=False)
    prox_fn: Optional[Callable] = field(default=None, compare=False)
    lower_bound: float = 0.0

    def __post_init__(self):
        if self.kind not in (ZERO, L0, L1, CUSTOM):
            raise ValueError(f"unknown penalty kind {self.kind!r}")
        if self.weight < 0:
            raise ValueError("penalty weight must be nonnegative")
        if not 0 < self.prob_weight <= 1:
            raise ValueError("prob_weight must lie in (0, 1]")
        if self.kind == CUSTOM:
            if self.value_fn is None or self.prox_fn is None:
                raise ValueError("custom penalties need value_fn and prox_fn")
            if not np.isfinite(self.lower_bound):
                raise ValueError("custom penalties must declare a finite lower bound")

    def affine(self, s):
        s = np.asarray(s, dtype=float)
        w = s if self.affine_U is None else np.asarray(self.affine_U) @ s
        if self.affine_u is not None:
            w = w + self.affine_u
        return w

    def adjoint(self, v):
        v = np.asarray(v, dtype=float)
        return v if self.affine_U is None else np.asarray(self.affine_U).T @ v

    def value(self, w):
        """P(w) for the core penalty (no affine map)."""
        w = np.asarray(w, dtype=float)
        if self.kind == ZERO:
            return 0.0
        if self.kind == L0:
            return self.weight * float(np.count_nonzero(w))
        if self.kind == L1:
            return self.weight * float(np.abs(w).sum())
        return float(self.value_fn(w))

    def composite_value(self, s):
        return self.value(self.affine(s))


def zero_penalty(**kw) -> PenaltySpec:
    return PenaltySpec(ZERO, 0.0, **kw)


def l0_penalty(gamma, **kw) -> PenaltySpec:
    return PenaltySpec(L0, float(gamma), **kw)


def l1_penalty(gamma, **kw) -> PenaltySpec:
    return PenaltySpec(L1, float(gamma), **kw)


def custom_penalty(value_fn, prox_fn, lower_bound, **kw) -> PenaltySpec:
    return PenaltySpec(CUSTOM, 0.0, value_fn=value_fn, prox_fn=prox_fn,
                       lower_bound=float(lower_bound), **kw)


@dataclass(frozen=True)
class ProxResult:
    point: np.ndarray
    envelope_value: float
    dc_concave_value: float
    tie_broken: bool


def _check_rho(rho):
    if not rho > 0:
        raise ValueError(f"rho must be positive, got {rho}")


def hard_threshold(w, threshold):
    """Keep entries with |w_j| >= threshold; ties keep the entry."""
    w = np.asarray(w, dtype=float)
    return np.where(np.abs(w) >= threshold, w, 0.0)


def soft_threshold(w, threshold):
    w = np.asarray(w, dtype=float)
    return np.sign(w) * np.maximum(np.abs(w) - threshold, 0.0)


def prox_point(P: PenaltySpec, rho: float, w) -> ProxResult:
    """Minimiser of ||v - w||^2 / (2 rho) + P(v) plus envelope and DC values."""
    _check_rho(rho)
    w = np.asarray(w, dtype=float)
    tie = False
    if P.kind == ZERO:
        zeta = w.copy()
    elif P.kind == L0:
        thr = np.sqrt(2.0 * P.weight * rho)
        zeta = hard_threshold(w, thr)
        tie = bool(np.any(np.abs(w) == thr)) and P.weight > 0
    elif P.kind == L1:
        zeta = soft_threshold(w, P.weight * rho)
    else:
        zeta = np.asarray(P.prox_fn(w, rho), dtype=float)
        if zeta.shape != w.shape:
            raise ValueError("custom prox oracle returned the wrong shape")
    pz = P.value(zeta)
    env = float(np.dot(zeta - w, zeta - w) / (2 * rho) + pz)
    # D(w) evaluated through its maximiser rather than as a difference
    dc = float(np.dot(w, zeta) / rho - np.dot(zeta, zeta) / (2 * rho) - pz)
    return ProxResult(zeta, env, dc, tie)


def moreau_value(P: PenaltySpec, rho: float, w) -> float:
    return prox_point(P, rho, w).envelope_value


def dc_subgradient(P: PenaltySpec, rho: float, s, zeta) -> np.ndarray:
    """(1/rho) U^T zeta, a subgradient of s -> D(U s + u) when zeta is a prox point."""
    _check_rho(rho)
    s = np.asarray(s, dtype=float)
    zeta = np.asarray(zeta, dtype=float)
    U = P.affine_U
    rows = s.shape[-1] if U is None else np.asarray(U).shape[0]
    cols = s.shape[-1] if U is None else np.asarray(U).shape[1]
    if zeta.shape[-1] != rows or s.shape[-1] != cols:
        raise ValueError("dimension mismatch between s, affine_U and zeta")
    return P.adjoint(zeta) / rho


def limiting_subgradient(P: PenaltySpec, rho: float, w, zeta) -> np.ndarray:
    """(w - zeta)/rho, an element of the limiting subdifferential of P at zeta."""
    _check_rho(rho)
    w = np.asarray(w, dtype=float)
    zeta = np.asarray(zeta, dtype=float)
    if w.shape != zeta.shape:
        raise ValueError("dimension mismatch between w and zeta")
    return (w - zeta) / rho


def composite_prox(P: PenaltySpec, rho: float, s) -> ProxResult:
    """prox_point applied after the affine map."""
    return prox_point(P, rho, P.affine(s))
