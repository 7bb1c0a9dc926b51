"""Regularised per-scenario VIs: semismooth Newton with an extragradient fallback.

A batch of B independent problems is solved at once.  Row ``k`` asks for
``z`` in the cone with

    0 in F_k(z) + N(z),   F_k(z) = H_k(z) + shift_k + sigma (z - center_k),

and is attacked through the natural residual ``Phi(z) = z - Proj(z - F(z))``.
The Newton matrix is ``I - P (I - J_F)`` with ``P`` one B-subdifferential
element of the projection.  Rows converge, backtrack and fall back
independently of each other.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .cones import ConeSpec

CONVERGED, FALLBACK, MAX_ITER = "converged", "fallback-used", "max-iter"

ARMIJO_C = 1e-4
MAX_BACKTRACKS = 40
FALLBACK_STEPS = 50


class ScenarioEvaluationError(RuntimeError):
    """Raised when a scenario map returns non-finite values."""

    def __init__(self, rows, message="non-finite value in scenario map"):
        self.rows = [int(r) for r in np.atleast_1d(rows)]
        super().__init__(f"{message} (rows {self.rows})")


@dataclass
class ScenarioVI:
    """A batch of regularised VIs sharing one cone.

    ``value(Z, sel)`` and ``jacobian(Z, sel)`` evaluate the base maps for the
    batch rows ``sel`` (an integer array) at ``Z`` of shape (len(sel), d).
    """

    value: Callable
    jacobian: Callable
    cone: ConeSpec
    batch: int
    shift: Optional[np.ndarray] = None
    center: Optional[np.ndarray] = None
    sigma: float = 0.0

    def __post_init__(self):
        d = self.cone.total_dim
        self.shift = np.zeros((self.batch, d)) if self.shift is None else np.asarray(self.shift, float).reshape(self.batch, d)
        self.center = np.zeros((self.batch, d)) if self.center is None else np.asarray(self.center, float).reshape(self.batch, d)

    @classmethod
    def single(cls, F, J, cone, shift=None, center=None, sigma=0.0):
        """Wrap a map F(z) -> vector with Jacobian J(z) into a batch of one."""
        return cls(lambda Z, sel: np.asarray(F(Z[0]), float)[None, :],
                   lambda Z, sel: np.asarray(J(Z[0]), float)[None, :, :],
                   cone, 1, shift, center, sigma)

    @property
    def dim(self):
        return self.cone.total_dim

    def F(self, Z, sel):
        out = self.value(Z, sel) + self.shift[sel]
        if self.sigma:
            out = out + self.sigma * (Z - self.center[sel])
        if not np.all(np.isfinite(out)):
            bad = sel[~np.all(np.isfinite(out), axis=1)]
            raise ScenarioEvaluationError(bad)
        return out

    def JF(self, Z, sel):
        J = np.asarray(self.jacobian(Z, sel), dtype=float)
        if self.sigma:
            J = J + self.sigma * np.eye(self.dim)
        return J

    def residual(self, Z, sel=None):
        sel = np.arange(self.batch) if sel is None else sel
        return Z - self.cone.project(Z - self.F(Z, sel))


@dataclass
class ScenarioResult:
    z: np.ndarray
    status: list
    residual: np.ndarray
    newton_iters: np.ndarray
    fallback_steps: np.ndarray


def extragradient_step(F, cone: ConeSpec, z, step):
    """Proj(z - s F(Proj(z - s F(z)))); F acts on the last axis."""
    if not step > 0:
        raise ValueError("step must be positive")
    half = cone.project(z - step * F(z))
    return cone.project(z - step * F(half))


def _lipschitz(J):
    return np.maximum(np.linalg.norm(J, ord=2, axis=(1, 2)), 1e-12)


def _extragradient_rows(vi, Z, rows, n_steps, tol=0.0):
    """Run extragradient on the given rows; rows stop early once within tol."""
    steps = 0.9 / _lipschitz(vi.JF(Z[rows], rows))
    taken = np.zeros(rows.size, dtype=int)
    live = np.ones(rows.size, dtype=bool)
    for _ in range(n_steps):
        if not np.any(live):
            break
        r = rows[live]
        s = steps[live][:, None]
        z = Z[r]
        half = vi.cone.project(z - s * vi.F(z, r))
        Z[r] = vi.cone.project(z - s * vi.F(half, r))
        taken[live] += 1
        if tol > 0:
            res = np.linalg.norm(vi.residual(Z[r], r), axis=1)
            live[np.flatnonzero(live)[res <= tol]] = False
    return taken


def _newton_directions(M, rhs):
    """Batched solve with per-row singularity detection."""
    B = M.shape[0]
    d = np.zeros_like(rhs)
    ok = np.ones(B, dtype=bool)
    try:
        d = np.linalg.solve(M, rhs[..., None])[..., 0]
    except np.linalg.LinAlgError:
        for k in range(B):
            try:
                d[k] = np.linalg.solve(M[k], rhs[k])
            except np.linalg.LinAlgError:
                ok[k] = False
    # nearly singular systems give useless steps that then fail the line search
    ok &= np.all(np.isfinite(d), axis=1)
    d[~ok] = 0.0
    return d, ok


def solve_scenarios(vi: ScenarioVI, Z0, tol: float, max_iter: int = 100) -> ScenarioResult:
    """Semismooth Newton on every row of the batch."""
    if not tol > 0:
        raise ValueError("tol must be positive")
    Z = np.array(Z0, dtype=float, copy=True).reshape(vi.batch, vi.dim)
    n, I = vi.batch, np.eye(vi.dim)
    iters = np.zeros(n, dtype=int)
    eg = np.zeros(n, dtype=int)
    used_fallback = np.zeros(n, dtype=bool)
    all_rows = np.arange(n)
    R = vi.residual(Z, all_rows)
    res = np.linalg.norm(R, axis=1)
    for _ in range(max_iter):
        act = np.flatnonzero(res > tol)
        if act.size == 0:
            break
        z = Z[act]
        Fz = vi.F(z, act)
        P = vi.cone.project_jacobian(z - Fz)
        M = I - P @ (I - vi.JF(z, act))
        d, ok = _newton_directions(M, -R[act])
        iters[act] += 1
        merit = 0.5 * res[act] ** 2
        step = np.ones(act.size)
        accepted = np.zeros(act.size, dtype=bool)
        pending = ok.copy()
        for _bt in range(MAX_BACKTRACKS + 1):
            if not np.any(pending):
                break
            pr = act[pending]
            trial = z[pending] + step[pending, None] * d[pending]
            Rt = vi.residual(trial, pr)
            mt = 0.5 * np.sum(Rt * Rt, axis=1)
            good = mt <= (1.0 - 2.0 * ARMIJO_C * step[pending]) * merit[pending]
            pk = np.flatnonzero(pending)
            acc = pk[good]
            Z[act[acc]] = trial[good]
            R[act[acc]] = Rt[good]
            res[act[acc]] = np.sqrt(2.0 * mt[good])
            accepted[acc] = True
            pending[acc] = False
            step[pending] *= 0.5
        failed = act[~accepted]
        if failed.size:
            used_fallback[failed] = True
            eg[failed] += _extragradient_rows(vi, Z, failed, FALLBACK_STEPS)
            R[failed] = vi.residual(Z[failed], failed)
            res[failed] = np.linalg.norm(R[failed], axis=1)
    status = [CONVERGED if r <= tol else (FALLBACK if f else MAX_ITER)
              for r, f in zip(res, used_fallback)]
    return ScenarioResult(Z, status, res, iters, eg)


def solve_scenario(vi: ScenarioVI, z0, tol: float, max_iter: int = 100):
    """Single-problem front end; returns (z, status)."""
    out = solve_scenarios(vi, np.asarray(z0, float)[None, :] if vi.batch == 1 else z0, tol, max_iter)
    if vi.batch == 1:
        return out.z[0], out.status[0]
    return out.z, out.status


def solve_extragradient(vi: ScenarioVI, Z0, tol: float, max_steps: int = 5000):
    """Plain extragradient on the whole batch; returns (Z, steps taken per row)."""
    Z = np.array(Z0, dtype=float, copy=True).reshape(vi.batch, vi.dim)
    rows = np.arange(vi.batch)
    res = np.linalg.norm(vi.residual(Z, rows), axis=1)
    live = rows[res > tol]
    taken = np.zeros(vi.batch, dtype=int)
    if live.size:
        taken[live] = _extragradient_rows(vi, Z, live, max_steps, tol=tol)
    return Z, taken
