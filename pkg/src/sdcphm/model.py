"""Two-stage problem data, the surrogate VI map and its residuals.

A problem is

    min  c(x) + r1(x) + sum_i p_i [q_i(y_i) + r_i(y_i)]
    s.t. A x - a = 0,             B x - b in -C1,
         g1_i(x, y_i) = 0,        g2_i(x, y_i) in -C2,      i = 1..K
         x in X, y_i in Y

where X and Y are primal cones (free by default) and r1, r_i are penalties
composed with affine maps.  The stacked primal-dual vector is

    z = (x; y_1..y_K; alpha1; alpha2; pi1_1..pi1_K; pi2_1..pi2_K)

and lives in D = X x Y^K x K°.  Two scalings of the second-stage
multipliers appear: the *full* form used for the stacked map H, and the
*scenario* form used by progressive hedging where every scenario carries
its own unweighted copy of the problem.  They differ by ``pi_full = p_i *
pi_scenario``.

Batched contracts take an index array ``idx`` of scenarios and arrays with
a matching leading axis, so all K scenario blocks are evaluated at once.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .cones import ConeSpec, Free
from .prox import PenaltySpec, composite_prox, moreau_value


# ---------------------------------------------------------------------------
# smooth objective contracts


class Quadratic:
    """c(x) = 0.5 x'Hx + g'x + const."""

    def __init__(self, H, g=None, const=0.0):
        self.H = np.asarray(H, dtype=float)
        n = self.H.shape[0]
        self.g = np.zeros(n) if g is None else np.asarray(g, dtype=float)
        self.const = float(const)

    def value(self, x):
        return float(0.5 * x @ self.H @ x + self.g @ x + self.const)

    def grad(self, x):
        return self.H @ x + self.g

    def hess(self, x):
        return self.H


class SmoothFunction:
    """First-stage smooth term from user callables."""

    def __init__(self, value: Callable, grad: Callable, hess: Callable):
        self._value, self._grad, self._hess = value, grad, hess

    def value(self, x):
        return float(self._value(x))

    def grad(self, x):
        return np.asarray(self._grad(x), dtype=float)

    def hess(self, x):
        return np.asarray(self._hess(x), dtype=float)


class BatchedQuadratic:
    """q_i(y) = 0.5 y'H_i y + g_i'y for every scenario i."""

    def __init__(self, H, g=None):
        self.H = np.asarray(H, dtype=float)
        K, m, _ = self.H.shape
        self.g = np.zeros((K, m)) if g is None else np.asarray(g, dtype=float)

    def values(self, Y, idx):
        H, g = self.H[idx], self.g[idx]
        return 0.5 * np.einsum("ki,kij,kj->k", Y, H, Y) + np.einsum("ki,ki->k", g, Y)

    def grads(self, Y, idx):
        return np.einsum("kij,kj->ki", self.H[idx], Y) + self.g[idx]

    def hessians(self, Y, idx):
        return self.H[idx]


class ScenarioSmooth:
    """Second-stage smooth terms from per-scenario callables f(i, y)."""

    def __init__(self, value: Callable, grad: Callable, hess: Callable):
        self._value, self._grad, self._hess = value, grad, hess

    def values(self, Y, idx):
        return np.array([self._value(int(i), y) for i, y in zip(idx, Y)])

    def grads(self, Y, idx):
        return np.array([self._grad(int(i), y) for i, y in zip(idx, Y)], dtype=float)

    def hessians(self, Y, idx):
        return np.array([self._hess(int(i), y) for i, y in zip(idx, Y)], dtype=float)


# ---------------------------------------------------------------------------
# second-stage constraint contracts


class AffineSecondStage:
    """g1_i = A1_i y + A2_i x - d_i,  g2_i = W_i y + T_i x - h_i."""

    def __init__(self, A1, A2, d, W, T, h, cone: Optional[ConeSpec] = None):
        self.A1, self.A2, self.d = (np.asarray(v, dtype=float) for v in (A1, A2, d))
        self.W, self.T, self.h = (np.asarray(v, dtype=float) for v in (W, T, h))
        self.n2 = self.A1.shape[1]
        self.s2 = self.W.shape[1]
        self.cone = cone if cone is not None else ConeSpec.nonneg(self.s2)
        self.affine = True

    def value(self, X, Y, idx):
        g1 = np.einsum("kij,kj->ki", self.A1[idx], Y) + np.einsum("kij,kj->ki", self.A2[idx], X) - self.d[idx]
        g2 = np.einsum("kij,kj->ki", self.W[idx], Y) + np.einsum("kij,kj->ki", self.T[idx], X) - self.h[idx]
        return g1, g2

    def jacobian(self, X, Y, idx):
        return self.A2[idx], self.A1[idx], self.T[idx], self.W[idx]

    def lagrangian_hessian(self, X, Y, P1, P2, idx):
        return None


# ---------------------------------------------------------------------------
# problem


@dataclass
class TwoStageProblem:
    m1: int
    m2: int
    probs: np.ndarray
    first_obj: object
    second_obj: object
    A: np.ndarray
    a: np.ndarray
    B: np.ndarray
    b: np.ndarray
    cone1: ConeSpec
    second: object
    x_cone: Optional[ConeSpec] = None
    y_cone: Optional[ConeSpec] = None
    penalty_first: Optional[PenaltySpec] = None
    penalty_second: Optional[Sequence[PenaltySpec]] = None
    name: str = "problem"

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=float)
        if np.any(self.probs <= 0) or abs(self.probs.sum() - 1.0) > 1e-12:
            raise ValueError("scenario probabilities must be positive and sum to 1")
        self.A = np.asarray(self.A, dtype=float).reshape(-1, self.m1)
        self.a = np.asarray(self.a, dtype=float).reshape(-1)
        self.B = np.asarray(self.B, dtype=float).reshape(-1, self.m1)
        self.b = np.asarray(self.b, dtype=float).reshape(-1)
        if self.A.shape[0] != self.a.size or self.B.shape[0] != self.b.size:
            raise ValueError("first-stage constraint dimensions are inconsistent")
        if self.cone1.total_dim != self.b.size and self.b.size:
            raise ValueError("cone1 must match the rows of B")
        if self.x_cone is None:
            self.x_cone = ConeSpec.free(self.m1)
        if self.y_cone is None:
            self.y_cone = ConeSpec.free(self.m2)
        if self.x_cone.total_dim != self.m1 or self.y_cone.total_dim != self.m2:
            raise ValueError("primal cones must match m1 and m2")
        if self.penalty_second is not None:
            if isinstance(self.penalty_second, PenaltySpec):
                self.penalty_second = (self.penalty_second,) * self.K
            self.penalty_second = tuple(self.penalty_second)
            if len(self.penalty_second) != self.K:
                raise ValueError("need one second-stage penalty per scenario")
        self.all_idx = np.arange(self.K)
        # multiplier cones: polar of {0} is free, polar of -C is computed atomwise
        self.mult_cone1 = self.cone1.negate().polar()
        self.mult_cone2 = self.second.cone.negate().polar()
        self.scenario_cone = (self.x_cone + self.y_cone + ConeSpec([Free(self.n1)])
                              + self.mult_cone1 + ConeSpec([Free(self.n2)]) + self.mult_cone2)
        self._build_layout()

    # dimensions -----------------------------------------------------------
    @property
    def K(self):
        return self.probs.size

    @property
    def n1(self):
        return self.a.size

    @property
    def s1(self):
        return self.b.size

    @property
    def n2(self):
        return self.second.n2

    @property
    def s2(self):
        return self.second.s2

    @property
    def scenario_dim(self):
        return self.m1 + self.m2 + self.n1 + self.s1 + self.n2 + self.s2

    @property
    def dim(self):
        return self.m1 + self.K * self.m2 + self.n1 + self.s1 + self.K * (self.n2 + self.s2)

    def _build_layout(self):
        sizes = [self.m1, self.K * self.m2, self.n1, self.s1, self.K * self.n2, self.K * self.s2]
        offs = np.cumsum([0] + sizes)
        names = ["x", "ys", "alpha1", "alpha2", "pi1", "pi2"]
        self.layout = {n: slice(int(offs[k]), int(offs[k + 1])) for k, n in enumerate(names)}
        d = [self.m1, self.m2, self.n1, self.s1, self.n2, self.s2]
        so = np.cumsum([0] + d)
        self.scenario_layout = {n: slice(int(so[k]), int(so[k + 1]))
                                for k, n in enumerate(["x", "y", "alpha1", "alpha2", "pi1", "pi2"])}

    # cone D ---------------------------------------------------------------
    def project_D(self, z):
        z = np.asarray(z, dtype=float)
        L, out = self.layout, np.empty_like(z)
        out[L["x"]] = self.x_cone.project(z[L["x"]])
        out[L["ys"]] = self.y_cone.project(z[L["ys"]].reshape(self.K, self.m2)).ravel()
        out[L["alpha1"]] = z[L["alpha1"]]
        out[L["alpha2"]] = self.mult_cone1.project(z[L["alpha2"]])
        out[L["pi1"]] = z[L["pi1"]]
        out[L["pi2"]] = self.mult_cone2.project(z[L["pi2"]].reshape(self.K, self.s2)).ravel()
        return out

    # penalties ------------------------------------------------------------
    @property
    def has_first_penalty(self):
        return self.penalty_first is not None

    @property
    def has_second_penalty(self):
        return self.penalty_second is not None

    def second_affine(self, Y, idx=None):
        idx = self.all_idx if idx is None else idx
        return np.array([self.penalty_second[i].affine(y) for i, y in zip(idx, Y)])

    def second_adjoint(self, V, idx=None):
        idx = self.all_idx if idx is None else idx
        return np.array([self.penalty_second[i].adjoint(v) for i, v in zip(idx, V)])

    def second_gram(self, idx):
        """U_i^T U_i for each index (identity when U is None)."""
        out = np.empty((len(idx), self.m2, self.m2))
        for k, i in enumerate(idx):
            U = self.penalty_second[i].affine_U
            out[k] = np.eye(self.m2) if U is None else np.asarray(U).T @ np.asarray(U)
        return out

    def first_gram(self):
        U = self.penalty_first.affine_U
        return np.eye(self.m1) if U is None else np.asarray(U).T @ np.asarray(U)

    # objective pieces -----------------------------------------------------
    def smooth_value(self, x, Y):
        return self.first_obj.value(x) + float(self.probs @ self.second_obj.values(Y, self.all_idx))

    def objective(self, x, Y):
        """True nonsmooth objective c + r1 + sum p_i (q_i + r_i)."""
        val = self.smooth_value(x, Y)
        if self.has_first_penalty:
            val += self.penalty_first.composite_value(x)
        if self.has_second_penalty:
            val += sum(p * P.composite_value(y) for p, P, y in zip(self.probs, self.penalty_second, Y))
        return float(val)

    def moreau_objective(self, rho, x, Y):
        """F_rho: penalties replaced by their Moreau envelopes."""
        val = self.smooth_value(x, Y)
        if self.has_first_penalty:
            val += moreau_value(self.penalty_first, rho, self.penalty_first.affine(x))
        if self.has_second_penalty:
            val += sum(p * moreau_value(P, rho, P.affine(y))
                       for p, P, y in zip(self.probs, self.penalty_second, Y))
        return float(val)

    # constraints ----------------------------------------------------------
    def constraint_values(self, x, Y):
        """(G1, G2, g1 (K,n2), g2 (K,s2)) in the G in K convention."""
        X = np.broadcast_to(x, (self.K, self.m1))
        g1, g2 = self.second.value(X, Y, self.all_idx)
        return self.A @ x - self.a, self.B @ x - self.b, g1, g2

    def feasibility_error(self, x, Y):
        """||G_eq||^2 + squared distance of the conic rows (and primal cones) to feasibility."""
        G1, G2, g1, g2 = self.constraint_values(x, Y)
        err = float(G1 @ G1) + float(np.sum(g1 ** 2))
        err += float(self.cone1.negate().distance(G2) ** 2) if G2.size else 0.0
        if g2.size:
            err += float(np.sum(self.second.cone.negate().distance(g2) ** 2))
        err += float(self.x_cone.distance(x) ** 2)
        err += float(np.sum(self.y_cone.distance(Y) ** 2))
        return err


# ---------------------------------------------------------------------------
# primal-dual points


@dataclass
class PrimalDualPoint:
    x: np.ndarray
    ys: np.ndarray
    alpha1: np.ndarray
    alpha2: np.ndarray
    pi1: np.ndarray
    pi2: np.ndarray

    def stack(self):
        return np.concatenate([self.x, self.ys.ravel(), self.alpha1, self.alpha2,
                               self.pi1.ravel(), self.pi2.ravel()])

    @classmethod
    def from_vector(cls, prob: TwoStageProblem, z):
        z = np.asarray(z, dtype=float)
        if z.size != prob.dim:
            raise ValueError(f"expected a vector of length {prob.dim}, got {z.size}")
        L = prob.layout
        return cls(z[L["x"]].copy(), z[L["ys"]].reshape(prob.K, prob.m2).copy(),
                   z[L["alpha1"]].copy(), z[L["alpha2"]].copy(),
                   z[L["pi1"]].reshape(prob.K, prob.n2).copy(),
                   z[L["pi2"]].reshape(prob.K, prob.s2).copy())

    @classmethod
    def zeros(cls, prob: TwoStageProblem):
        return cls.from_vector(prob, np.zeros(prob.dim))

    def copy(self):
        return PrimalDualPoint(*(np.array(v, copy=True) for v in
                                 (self.x, self.ys, self.alpha1, self.alpha2, self.pi1, self.pi2)))


def initial_point(prob: TwoStageProblem, x0=None, y0=None) -> PrimalDualPoint:
    """Zero multipliers, given (or zero) primal blocks, projected onto D."""
    z = PrimalDualPoint.zeros(prob)
    if x0 is not None:
        z.x = np.asarray(x0, dtype=float).copy()
    if y0 is not None:
        z.ys = np.broadcast_to(np.asarray(y0, dtype=float), (prob.K, prob.m2)).copy()
    return PrimalDualPoint.from_vector(prob, prob.project_D(z.stack()))


# ---------------------------------------------------------------------------
# surrogate anchors


@dataclass
class SurrogateAnchor:
    """Linearisation data of the DC surrogate at (x^t, y^t) for a given rho."""

    rho: float
    x: np.ndarray
    ys: np.ndarray
    tau1: float
    tau2: float
    zeta_first: Optional[np.ndarray] = None
    zeta_second: Optional[np.ndarray] = None
    varpi_first: Optional[np.ndarray] = None
    varpi_second: Optional[np.ndarray] = None
    dc_first: float = 0.0
    dc_second: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def varpi(self):
        parts = []
        if self.varpi_first is not None:
            parts.append(self.varpi_first)
        if self.varpi_second is not None:
            parts.append(self.varpi_second.ravel())
        return np.concatenate(parts) if parts else np.zeros(0)


def make_anchor(prob: TwoStageProblem, x, ys, rho, tau1=0.0, tau2=0.0) -> SurrogateAnchor:
    """Prox points and DC subgradients at (x, ys).

    The proximal regularisation attached to an omitted penalty is omitted
    with it, so tau1 (tau2) is zeroed when there is no first (second) stage
    penalty.
    """
    if not rho > 0:
        raise ValueError("rho must be positive")
    x = np.asarray(x, dtype=float).copy()
    ys = np.asarray(ys, dtype=float).reshape(prob.K, prob.m2).copy()
    anc = SurrogateAnchor(float(rho), x, ys,
                          float(tau1) if prob.has_first_penalty else 0.0,
                          float(tau2) if prob.has_second_penalty else 0.0)
    if prob.has_first_penalty:
        P = prob.penalty_first
        res = composite_prox(P, rho, x)
        anc.zeta_first = res.point
        anc.varpi_first = P.adjoint(res.point) / rho
        anc.dc_first = res.dc_concave_value
    if prob.has_second_penalty:
        zs, ws, ds = [], [], []
        for P, y in zip(prob.penalty_second, ys):
            res = composite_prox(P, rho, y)
            zs.append(res.point)
            ws.append(P.adjoint(res.point) / rho)
            ds.append(res.dc_concave_value)
        anc.zeta_second = np.array(zs)
        anc.varpi_second = np.array(ws)
        anc.dc_second = np.array(ds)
    return anc


def plain_anchor(prob: TwoStageProblem, point: Optional[PrimalDualPoint] = None) -> SurrogateAnchor:
    """Anchor whose surrogate map is the unpenalised, unregularised H."""
    x = np.zeros(prob.m1) if point is None else point.x
    ys = np.zeros((prob.K, prob.m2)) if point is None else point.ys
    anc = SurrogateAnchor(1.0, np.asarray(x, float).copy(), np.asarray(ys, float).copy(), 0.0, 0.0)
    anc.plain = True
    return anc


def _is_plain(anchor):
    return getattr(anchor, "plain", False)


def _first_surrogate_grad(prob, anchor, X):
    """Gradient of the linearised first-stage envelope plus tau term; X is (B, m1)."""
    if not prob.has_first_penalty or _is_plain(anchor):
        return np.zeros_like(X)
    P, rho = prob.penalty_first, anchor.rho
    W = X if P.affine_U is None else X @ np.asarray(P.affine_U).T
    if P.affine_u is not None:
        W = W + P.affine_u
    lam = (W - anchor.zeta_first) / rho
    g = lam if P.affine_U is None else lam @ np.asarray(P.affine_U)
    return g + anchor.tau1 * (X - anchor.x)


def _second_surrogate_grad(prob, anchor, Y, idx):
    """Unweighted gradient of the linearised second-stage envelopes plus tau term."""
    if not prob.has_second_penalty or _is_plain(anchor):
        return np.zeros_like(Y)
    lam = (prob.second_affine(Y, idx) - anchor.zeta_second[idx]) / anchor.rho
    return prob.second_adjoint(lam, idx) + anchor.tau2 * (Y - anchor.ys[idx])


def lambda_L(prob: TwoStageProblem, anchor: SurrogateAnchor, x, ys):
    """(U x + u - zeta)/rho stacked with p_i (U_i y_i + u_i - zeta_i)/rho."""
    parts = []
    if prob.has_first_penalty:
        parts.append((prob.penalty_first.affine(x) - anchor.zeta_first) / anchor.rho)
    if prob.has_second_penalty:
        lam2 = (prob.second_affine(ys) - anchor.zeta_second) / anchor.rho
        parts.append((prob.probs[:, None] * lam2).ravel())
    return np.concatenate(parts) if parts else np.zeros(0)


def surrogate_value(prob: TwoStageProblem, anchor: SurrogateAnchor, x, ys) -> float:
    """F^L: smooth part plus linearised envelopes plus tau-proximal terms."""
    ys = np.asarray(ys, dtype=float).reshape(prob.K, prob.m2)
    val = prob.smooth_value(x, ys)
    if _is_plain(anchor):
        return float(val)
    rho = anchor.rho
    if prob.has_first_penalty:
        w = prob.penalty_first.affine(x)
        dx = x - anchor.x
        val += (w @ w / (2 * rho) - anchor.dc_first - anchor.varpi_first @ dx
                + 0.5 * anchor.tau1 * dx @ dx)
    if prob.has_second_penalty:
        W = prob.second_affine(ys)
        dY = ys - anchor.ys
        terms = (np.sum(W * W, axis=1) / (2 * rho) - anchor.dc_second
                 - np.sum(anchor.varpi_second * dY, axis=1) + 0.5 * anchor.tau2 * np.sum(dY * dY, axis=1))
        val += float(prob.probs @ terms)
    return float(val)


eval_F_L = surrogate_value


# ---------------------------------------------------------------------------
# stacked maps


def _full_map(prob, z, first_extra, second_extra):
    """Shared evaluation of (grad f + JG'M + extras; -G) in the full scaling.

    ``first_extra`` is added to the x row, ``second_extra`` (K, m2) to the
    y rows *after* the p_i weighting.
    """
    pt = PrimalDualPoint.from_vector(prob, z)
    K, idx = prob.K, prob.all_idx
    X = np.broadcast_to(pt.x, (K, prob.m1))
    g1, g2 = prob.second.value(X, pt.ys, idx)
    Jx1, Jy1, Jx2, Jy2 = prob.second.jacobian(X, pt.ys, idx)
    hx = (prob.first_obj.grad(pt.x) + first_extra + prob.A.T @ pt.alpha1 + prob.B.T @ pt.alpha2
          + np.einsum("kij,ki->j", Jx1, pt.pi1) + np.einsum("kij,ki->j", Jx2, pt.pi2))
    hy = (prob.probs[:, None] * prob.second_obj.grads(pt.ys, idx) + second_extra
          + np.einsum("kij,ki->kj", Jy1, pt.pi1) + np.einsum("kij,ki->kj", Jy2, pt.pi2))
    return np.concatenate([hx, hy.ravel(), -(prob.A @ pt.x - prob.a), -(prob.B @ pt.x - prob.b),
                           -g1.ravel(), -g2.ravel()])


def eval_H_L(prob: TwoStageProblem, anchor: SurrogateAnchor, z) -> np.ndarray:
    """Surrogate VI map H^L at the stacked point z (full multiplier scaling)."""
    z = np.asarray(z, dtype=float)
    pt = PrimalDualPoint.from_vector(prob, z)
    first = _first_surrogate_grad(prob, anchor, pt.x[None, :])[0]
    second = prob.probs[:, None] * _second_surrogate_grad(prob, anchor, pt.ys, prob.all_idx)
    return _full_map(prob, z, first, second)


def eval_H_original(prob: TwoStageProblem, z, lam=None) -> np.ndarray:
    """H(z; lambda) with a fixed limiting subgradient lambda of the penalties.

    ``lam`` stacks the first-stage block (range of U1) and the K scenario
    blocks (range of U_i), the latter already carrying their p_i weights.
    """
    z = np.asarray(z, dtype=float)
    first = np.zeros(prob.m1)
    second = np.zeros((prob.K, prob.m2))
    lam = np.zeros(0) if lam is None else np.asarray(lam, dtype=float)
    k = 0
    if prob.has_first_penalty:
        r1 = prob.penalty_first.affine(np.zeros(prob.m1)).size
        first = prob.penalty_first.adjoint(lam[k:k + r1])
        k += r1
    if prob.has_second_penalty:
        r2 = prob.penalty_second[0].affine(np.zeros(prob.m2)).size
        lam2 = lam[k:k + prob.K * r2].reshape(prob.K, r2)
        second = prob.second_adjoint(lam2)
        k += prob.K * r2
    if k != lam.size:
        raise ValueError(f"lambda has length {lam.size}, expected {k}")
    return _full_map(prob, z, first, second)


def natural_residual_map(h_value, cone_project, z):
    """z - Proj_D(z - H(z)) from an already evaluated H(z)."""
    return z - cone_project(z - h_value)


def natural_residual(prob: TwoStageProblem, anchor: SurrogateAnchor, z):
    z = np.asarray(z, dtype=float)
    r = natural_residual_map(eval_H_L(prob, anchor, z), prob.project_D, z)
    return r, float(np.linalg.norm(r))


def original_residual(prob: TwoStageProblem, z, lam=None):
    z = np.asarray(z, dtype=float)
    r = natural_residual_map(eval_H_original(prob, z, lam), prob.project_D, z)
    return r, float(np.linalg.norm(r))


# ---------------------------------------------------------------------------
# per-scenario map (scenario scaling) used by progressive hedging


class ScenarioMap:
    """H^{i,L} for a batch of scenarios.

    Rows of ``Z`` are scenario vectors (x; y; alpha1; alpha2; pi1; pi2) with
    unweighted second-stage terms; ``idx`` names the scenario of each row.
    """

    def __init__(self, prob: TwoStageProblem, anchor: SurrogateAnchor):
        self.prob = prob
        self.anchor = anchor
        self.cone = prob.scenario_cone
        self.dim = prob.scenario_dim
        plain = _is_plain(anchor)
        self._first_curv = 0.0
        self._second_curv = None
        if prob.has_first_penalty and not plain:
            self._first_curv = prob.first_gram() / anchor.rho + anchor.tau1 * np.eye(prob.m1)
        if prob.has_second_penalty and not plain:
            self._second_curv = True
        self._cache = None

    def _split(self, Z):
        S = self.prob.scenario_layout
        return Z[:, S["x"]], Z[:, S["y"]], Z[:, S["alpha1"]], Z[:, S["alpha2"]], Z[:, S["pi1"]], Z[:, S["pi2"]]

    def value(self, Z, idx):
        p = self.prob
        X, Y, a1, a2, P1, P2 = self._split(Z)
        g1, g2 = p.second.value(X, Y, idx)
        Jx1, Jy1, Jx2, Jy2 = p.second.jacobian(X, Y, idx)
        gx = np.array([p.first_obj.grad(x) for x in X]) if not isinstance(p.first_obj, Quadratic) \
            else X @ p.first_obj.H.T + p.first_obj.g
        hx = (gx + _first_surrogate_grad(p, self.anchor, X) + a1 @ p.A + a2 @ p.B
              + np.einsum("kij,ki->kj", Jx1, P1) + np.einsum("kij,ki->kj", Jx2, P2))
        hy = (p.second_obj.grads(Y, idx) + _second_surrogate_grad(p, self.anchor, Y, idx)
              + np.einsum("kij,ki->kj", Jy1, P1) + np.einsum("kij,ki->kj", Jy2, P2))
        return np.concatenate([hx, hy, -(X @ p.A.T - p.a), -(X @ p.B.T - p.b), -g1, -g2], axis=1)

    def _constraint_blocks(self, J, X, Y, idx):
        p, S = self.prob, self.prob.scenario_layout
        Jx1, Jy1, Jx2, Jy2 = p.second.jacobian(X, Y, idx)
        J[:, S["x"], S["pi1"]] = np.swapaxes(Jx1, 1, 2)
        J[:, S["x"], S["pi2"]] = np.swapaxes(Jx2, 1, 2)
        J[:, S["y"], S["pi1"]] = np.swapaxes(Jy1, 1, 2)
        J[:, S["y"], S["pi2"]] = np.swapaxes(Jy2, 1, 2)
        J[:, S["pi1"], S["x"]] = -Jx1
        J[:, S["pi1"], S["y"]] = -Jy1
        J[:, S["pi2"], S["x"]] = -Jx2
        J[:, S["pi2"], S["y"]] = -Jy2

    def _base_jacobian(self, X, Y, idx):
        """Everything except the Lagrangian curvature of nonlinear constraints."""
        p, S = self.prob, self.prob.scenario_layout
        J = np.zeros((len(idx), self.dim, self.dim))
        if isinstance(p.first_obj, Quadratic):
            J[:, S["x"], S["x"]] = p.first_obj.H
        else:
            J[:, S["x"], S["x"]] = np.array([p.first_obj.hess(x) for x in X])
        J[:, S["x"], S["x"]] += self._first_curv
        J[:, S["y"], S["y"]] = p.second_obj.hessians(Y, idx)
        if self._second_curv is not None:
            J[:, S["y"], S["y"]] += p.second_gram(idx) / self.anchor.rho + self.anchor.tau2 * np.eye(p.m2)
        J[:, S["x"], S["alpha1"]] = p.A.T
        J[:, S["x"], S["alpha2"]] = p.B.T
        J[:, S["alpha1"], S["x"]] = -p.A
        J[:, S["alpha2"], S["x"]] = -p.B
        self._constraint_blocks(J, X, Y, idx)
        return J

    def jacobian(self, Z, idx):
        p = self.prob
        X, Y, a1, a2, P1, P2 = self._split(Z)
        constant_obj = isinstance(p.first_obj, Quadratic) and isinstance(p.second_obj, BatchedQuadratic)
        if constant_obj:
            # objective curvature and linear blocks do not move; build them once per anchor
            if self._cache is None:
                self._cache = self._base_jacobian(np.zeros((p.K, p.m1)), np.zeros((p.K, p.m2)), p.all_idx)
            J = self._cache[idx]
            if not getattr(p.second, "affine", False):
                self._constraint_blocks(J, X, Y, idx)
        else:
            J = self._base_jacobian(X, Y, idx)
        lh = p.second.lagrangian_hessian(X, Y, P1, P2, idx)
        if lh is not None:
            S = p.scenario_layout
            Hxx, Hxy, Hyy = lh
            J[:, S["x"], S["x"]] += Hxx
            J[:, S["x"], S["y"]] += Hxy
            J[:, S["y"], S["x"]] += np.swapaxes(Hxy, 1, 2)
            J[:, S["y"], S["y"]] += Hyy
        return J


@dataclass
class MonotonicityReport:
    min_form: float
    n_samples: int
    passed: bool
    worst_scenario: int


def verify_monotone(prob: TwoStageProblem, anchor: SurrogateAnchor, n_samples=1000, seed=0,
                    tol=1e-10, chunk=500) -> MonotonicityReport:
    """Sample u'J_i(z)u over z in D_i and random directions u."""
    rng = np.random.default_rng(seed)
    smap = ScenarioMap(prob, anchor)
    worst, worst_i = np.inf, -1
    done = 0
    while done < n_samples:
        nb = min(chunk, n_samples - done)
        idx = rng.integers(0, prob.K, size=nb)
        Z = smap.cone.project(rng.standard_normal((nb, smap.dim)))
        U = rng.standard_normal((nb, smap.dim))
        forms = np.einsum("ki,kij,kj->k", U, smap.jacobian(Z, idx), U)
        k = int(np.argmin(forms))
        if forms[k] < worst:
            worst, worst_i = float(forms[k]), int(idx[k])
        done += nb
    return MonotonicityReport(worst, n_samples, worst >= -tol, worst_i)
