"""Closed convex cones as Cartesian products of simple atoms.

Every function here works on the last axis of its input, so a batch of
vectors with shape ``(..., dim)`` is projected in a single call.

Atoms carry a ``sign``.  ``NonNeg(k, sign=-1)`` is the nonpositive orthant
and ``SOC(k, sign=-1)`` is ``-SOC``; projection onto ``-C`` is computed as
``-proj_C(-v)`` so each atom needs a single projection kernel.

New atom types only need ``dim``, ``project``, ``project_jacobian``,
``polar`` and ``negate``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class Zero:
    dim: int

    def project(self, v):
        return np.zeros_like(v)

    def project_jacobian(self, v):
        return np.zeros(v.shape + (self.dim,))

    def polar(self):
        return Free(self.dim)

    def negate(self):
        return self


@dataclass(frozen=True)
class Free:
    dim: int

    def project(self, v):
        return np.array(v, dtype=float, copy=True)

    def project_jacobian(self, v):
        return np.broadcast_to(np.eye(self.dim), v.shape + (self.dim,)).copy()

    def polar(self):
        return Zero(self.dim)

    def negate(self):
        return self


@dataclass(frozen=True)
class NonNeg:
    dim: int
    sign: int = 1

    def project(self, v):
        if self.sign > 0:
            return np.maximum(v, 0.0)
        return np.minimum(v, 0.0)

    def project_jacobian(self, v):
        # kinks (v_j == 0) get derivative 0
        active = (v > 0) if self.sign > 0 else (v < 0)
        jac = np.zeros(v.shape + (self.dim,))
        idx = np.arange(self.dim)
        jac[..., idx, idx] = active.astype(float)
        return jac

    def polar(self):
        return NonNeg(self.dim, -self.sign)

    def negate(self):
        return NonNeg(self.dim, -self.sign)


@dataclass(frozen=True)
class SOC:
    """Second-order cone {(u, t) : ||u|| <= t}, with t stored last."""

    dim: int
    sign: int = 1

    def __post_init__(self):
        if self.dim < 2:
            raise ValueError("SOC atoms need dim >= 2")

    def _project_pos(self, v):
        u, t = v[..., :-1], v[..., -1]
        nu = np.linalg.norm(u, axis=-1)
        out = np.zeros_like(v)
        inside = nu <= t
        out[inside] = v[inside]
        mid = ~inside & (nu > -t)
        if np.any(mid):
            scale = 0.5 * (nu[mid] + t[mid])
            out[mid, :-1] = (scale / nu[mid])[:, None] * u[mid]
            out[mid, -1] = scale
        return out

    def _jacobian_pos(self, v):
        u, t = v[..., :-1], v[..., -1]
        nu = np.linalg.norm(u, axis=-1)
        jac = np.zeros(v.shape + (self.dim,))
        inside = nu <= t
        jac[inside] = np.eye(self.dim)
        mid = ~inside & (nu > -t)
        if np.any(mid):
            w = u[mid] / nu[mid][:, None]
            ratio = (t[mid] / nu[mid])[:, None, None]
            k = self.dim - 1
            block = np.zeros((w.shape[0], self.dim, self.dim))
            block[:, :k, :k] = (1.0 + ratio) * np.eye(k) - ratio * w[:, :, None] * w[:, None, :]
            block[:, :k, k] = w
            block[:, k, :k] = w
            block[:, k, k] = 1.0
            jac[mid] = 0.5 * block
        return jac

    def project(self, v):
        v = np.asarray(v, dtype=float)
        flat = v.reshape(-1, self.dim)
        if self.sign > 0:
            out = self._project_pos(flat)
        else:
            out = -self._project_pos(-flat)
        return out.reshape(v.shape)

    def project_jacobian(self, v):
        v = np.asarray(v, dtype=float)
        flat = v.reshape(-1, self.dim)
        src = flat if self.sign > 0 else -flat
        return self._jacobian_pos(src).reshape(v.shape + (self.dim,))

    def polar(self):
        # SOC is self-dual, so its polar is -SOC
        return SOC(self.dim, -self.sign)

    def negate(self):
        return SOC(self.dim, -self.sign)


class ConeSpec:
    """Cartesian product of cone atoms."""

    def __init__(self, atoms: Sequence):
        atoms = tuple(a for a in atoms if a.dim > 0)
        self.atoms = atoms
        self.total_dim = int(sum(a.dim for a in atoms))
        offsets = np.cumsum([0] + [a.dim for a in atoms])
        self._slices = [slice(int(offsets[k]), int(offsets[k + 1])) for k in range(len(atoms))]

    def __repr__(self):
        return f"ConeSpec({list(self.atoms)!r})"

    def __eq__(self, other):
        return isinstance(other, ConeSpec) and self.atoms == other.atoms

    def __hash__(self):
        return hash(self.atoms)

    def __add__(self, other):
        return ConeSpec(self.atoms + other.atoms)

    @classmethod
    def free(cls, dim):
        return cls([Free(dim)])

    @classmethod
    def nonneg(cls, dim):
        return cls([NonNeg(dim)])

    def _check(self, v):
        v = np.asarray(v, dtype=float)
        if v.shape[-1] != self.total_dim:
            raise ValueError(f"expected last dimension {self.total_dim}, got {v.shape[-1]}")
        return v

    def project(self, v):
        v = self._check(v)
        out = np.empty_like(v)
        for atom, sl in zip(self.atoms, self._slices):
            out[..., sl] = atom.project(v[..., sl])
        return out

    def project_jacobian(self, v):
        """One element of the B-subdifferential of the projection, blockwise."""
        v = self._check(v)
        jac = np.zeros(v.shape + (self.total_dim,))
        for atom, sl in zip(self.atoms, self._slices):
            jac[..., sl, sl] = atom.project_jacobian(v[..., sl])
        return jac

    def polar(self):
        return ConeSpec([a.polar() for a in self.atoms])

    def negate(self):
        return ConeSpec([a.negate() for a in self.atoms])

    def distance(self, v):
        v = self._check(v)
        return np.linalg.norm(v - self.project(v), axis=-1)


def project(cone: ConeSpec, v):
    return cone.project(v)


def polar(cone: ConeSpec) -> ConeSpec:
    return cone.polar()


def complementarity_residual(cone: ConeSpec, g, m) -> float:
    """dist(g, C) + dist(m, C°) + |m.g|; zero iff m lies in N_C(g)."""
    g = np.asarray(g, dtype=float)
    m = np.asarray(m, dtype=float)
    if g.shape != m.shape or g.shape[-1] != cone.total_dim:
        raise ValueError("dimension mismatch between cone, g and m")
    return float(cone.distance(g) + cone.polar().distance(m) + abs(m @ g))
