"""Successive DC approximation around progressive hedging.

Outer index t shrinks the smoothing parameter rho_t = rho0 * decay^t.  For
each t the inner index l re-linearises the concave part of the Moreau
envelope at the current point, solves the resulting convex surrogate VI
approximately with PHM and stops once the tau-weighted drift is below
eta3 * rho_t^2.  The run ends when rho_t has reached the floor and the
true objective changed by at most ``obj_tol`` over the last outer step.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .model import (PrimalDualPoint, TwoStageProblem, initial_point, make_anchor, original_residual,
                    plain_anchor, surrogate_value)
from .phm import BUDGET_STATUS, PHMState, run_phm
from .prox import L0, composite_prox, limiting_subgradient

CONVERGED = "converged"
OUTER_BUDGET = "outer-budget-exhausted"
PHM_BUDGET = "phm-budget-exhausted"


@dataclass
class SDCConfig:
    eta1: Optional[float] = None      # None means K/5
    eta2: Optional[float] = None
    eta3: Optional[float] = None
    tau1: float = 1e-4
    tau2: float = 1e-4
    rho0: float = 1.0
    rho_decay: float = 0.8
    rho_floor: float = 1e-4
    obj_tol: float = 1e-3
    sigma: float = 1.0
    max_outer: int = 200
    max_inner: int = 100
    phm_budget: int = 10000
    warm_start: bool = True
    sub_max_iter: int = 100

    def __post_init__(self):
        if not 0 < self.rho_decay < 1:
            raise ValueError("rho_decay must lie in (0, 1)")
        if not 0 < self.rho_floor < self.rho0:
            raise ValueError("need 0 < rho_floor < rho0")
        for name in ("eta1", "eta2", "eta3"):
            v = getattr(self, name)
            if v is not None and v <= 0:
                raise ValueError(f"{name} must be positive")
        if self.tau1 < 0 or self.tau2 < 0 or self.sigma <= 0:
            raise ValueError("tau must be nonnegative and sigma positive")
        if min(self.max_outer, self.max_inner, self.phm_budget) < 1:
            raise ValueError("budgets must be positive")

    def resolved(self, K) -> "SDCConfig":
        """Copy with the eta defaults filled in for K scenarios."""
        d = K / 5.0
        return replace(self, eta1=self.eta1 or d, eta2=self.eta2 or d, eta3=self.eta3 or d)

    def rho(self, t):
        return self.rho0 * self.rho_decay ** t


@dataclass
class SDCTrace:
    rows: list = field(default_factory=list)

    def append(self, **row):
        self.rows.append(row)

    def column(self, key):
        return [r[key] for r in self.rows]

    def __len__(self):
        return len(self.rows)


@dataclass
class SolveReport:
    status: str
    point: PrimalDualPoint
    rho_final: float
    metrics: dict
    trace: SDCTrace
    phm_iterations: int
    outer_iterations: int
    cpu_seconds: float
    wall_seconds: float
    inner_budget_hits: int = 0


def check_TC(prob: TwoStageProblem, anchor, point: PrimalDualPoint, eta3, rho_t) -> bool:
    return drift(prob, anchor, point) <= eta3 * rho_t ** 2


def drift(prob, anchor, point):
    """tau1 ||x - x^t|| + tau2 sum_i p_i ||y_i - y_i^t||."""
    dx = np.linalg.norm(point.x - anchor.x)
    dy = prob.probs @ np.linalg.norm(point.ys - anchor.ys, axis=1)
    return float(anchor.tau1 * dx + anchor.tau2 * dy)


def lambda_hat(prob: TwoStageProblem, point: PrimalDualPoint, rho_hat):
    """Limiting subgradient (w - prox(w))/rho of every penalty at the solution."""
    parts = []
    if prob.has_first_penalty:
        P = prob.penalty_first
        w = P.affine(point.x)
        parts.append(limiting_subgradient(P, rho_hat, w, composite_prox(P, rho_hat, point.x).point))
    if prob.has_second_penalty:
        for p, P, y in zip(prob.probs, prob.penalty_second, point.ys):
            w = P.affine(y)
            parts.append(p * limiting_subgradient(P, rho_hat, w, composite_prox(P, rho_hat, y).point))
    return np.concatenate(parts) if parts else np.zeros(0)


def support_threshold(prob: TwoStageProblem, rho_hat):
    """Smallest magnitude an l0 prox point can keep: sqrt(2 gamma rho)."""
    P = prob.penalty_first
    if P is not None and P.kind == L0:
        return float(np.sqrt(2 * P.weight * rho_hat))
    return 0.0


def final_kkt_report(prob: TwoStageProblem, point: PrimalDualPoint, rho_hat, support_tol=None) -> dict:
    """KKT residuals with the reconstructed penalty subgradient, plus feasibility and support."""
    z = point.stack()
    lam = lambda_hat(prob, point, rho_hat)
    r, norm = original_residual(prob, z, lam)
    tol = support_threshold(prob, rho_hat) if support_tol is None else support_tol
    nnz = int(np.count_nonzero(np.abs(point.x) >= tol)) if tol > 0 else int(np.count_nonzero(point.x))
    out = {
        "kkt_inf": float(np.max(np.abs(r))) if r.size else 0.0,
        "kkt_rel": float(norm / (1.0 + np.linalg.norm(z))),
        "feas_error": prob.feasibility_error(point.x, point.ys),
        "nnz": nnz,
        "support_tol": tol,
        "objective": prob.objective(point.x, point.ys),
    }
    if prob.m1 == prob.m2:
        out["soc"] = float(np.mean(np.linalg.norm(point.x[None, :] - point.ys, axis=1)))
    return out


def _monitor(prob, rho_ref, support_tol):
    def row(pt):
        tol = support_threshold(prob, rho_ref) if support_tol is None else support_tol
        return {"objective": prob.objective(pt.x, pt.ys),
                "nnz": int(np.count_nonzero(np.abs(pt.x) >= tol)) if tol > 0 else int(np.count_nonzero(pt.x)),
                "feas_error": prob.feasibility_error(pt.x, pt.ys)}
    return row


def run_sdc(prob: TwoStageProblem, config: SDCConfig = None, z0: Optional[PrimalDualPoint] = None,
            support_tol=None, log: Optional[Callable] = None) -> SolveReport:
    """Run the outer loop; every inner step lands in the trace."""
    cfg = (config or SDCConfig()).resolved(prob.K)
    wall0, cpu0 = time.perf_counter(), time.process_time()
    start = initial_point(prob) if z0 is None else PrimalDualPoint.from_vector(prob, prob.project_D(z0.stack()))
    point = start.copy()
    state = None
    trace = SDCTrace()
    total_phm = 0
    inner_hits = 0
    prev_obj = None
    status = OUTER_BUDGET
    t = 0
    while t < cfg.max_outer:
        rho = cfg.rho(t)
        if not cfg.warm_start:
            # cold PHM start at every t; the anchor stays at the last accepted point
            state = None
        for l in range(cfg.max_inner):
            anchor = make_anchor(prob, point.x, point.ys, rho, cfg.tau1, cfg.tau2)
            f_anchor = prob.moreau_objective(rho, point.x, point.ys)
            cap = surrogate_value(prob, anchor, point.x, point.ys) + cfg.eta2 / (l + 1) ** 2
            res_tol = cfg.eta1 * rho
            if state is None:
                state = PHMState.start(prob, point if cfg.warm_start else start, cfg.sigma)
            phm = run_phm(prob, anchor, res_tol, cap, cfg.phm_budget, state=state,
                          sub_max_iter=cfg.sub_max_iter)
            state = phm.state
            total_phm += phm.steps
            new = phm.point
            dx = new.x - anchor.x
            dys = new.ys - anchor.ys
            f_new = prob.moreau_objective(rho, new.x, new.ys)
            bound = (f_anchor - 0.5 * anchor.tau1 * dx @ dx
                     - 0.5 * anchor.tau2 * prob.probs @ np.sum(dys * dys, axis=1) + cfg.eta2 / (l + 1) ** 2)
            tc_val = drift(prob, anchor, new)
            tc = tc_val <= cfg.eta3 * rho ** 2
            mon = _monitor(prob, rho, support_tol)(new)
            trace.append(t=t, l=l, rho=rho, phm_steps=phm.steps, phm_status=phm.status,
                         residual=phm.residual, surrogate=phm.surrogate_value,
                         f_rho_prev=f_anchor, f_rho=f_new, descent_bound=bound,
                         descent_ok=bool(f_new <= bound + 1e-10 * max(1.0, abs(bound))),
                         drift=tc_val, tc=bool(tc), **mon,
                         wall_s=time.perf_counter() - wall0, cpu_s=time.process_time() - cpu0)
            if log:
                log(trace.rows[-1])
            point = new
            if phm.status == BUDGET_STATUS:
                status = PHM_BUDGET
                break
            if tc:
                break
        else:
            inner_hits += 1
            trace.rows[-1]["inner_budget_hit"] = True
        if status == PHM_BUDGET:
            break
        obj = prob.objective(point.x, point.ys)
        if rho <= cfg.rho_floor and prev_obj is not None and abs(prev_obj - obj) <= cfg.obj_tol:
            status = CONVERGED
            break
        prev_obj = obj
        t += 1
    rho_final = cfg.rho(min(t, cfg.max_outer - 1)) if status != OUTER_BUDGET else cfg.rho(cfg.max_outer - 1)
    metrics = final_kkt_report(prob, point, rho_final, support_tol)
    return SolveReport(status, point, rho_final, metrics, trace, total_phm, t + (status != OUTER_BUDGET),
                       time.process_time() - cpu0, time.perf_counter() - wall0, inner_hits)


def run_direct_phm(prob: TwoStageProblem, config: SDCConfig = None, z0: Optional[PrimalDualPoint] = None,
                   support_tol=None, log: Optional[Callable] = None) -> SolveReport:
    """PHM on the unpenalised problem.

    Stops when the natural residual is at most eta1 * rho_floor and the
    objective changed by at most obj_tol over the last step.
    """
    cfg = (config or SDCConfig()).resolved(prob.K)
    if prob.has_first_penalty or prob.has_second_penalty:
        raise ValueError("direct PHM needs a problem without penalties")
    wall0, cpu0 = time.perf_counter(), time.process_time()
    start = initial_point(prob) if z0 is None else PrimalDualPoint.from_vector(prob, prob.project_D(z0.stack()))
    anchor = plain_anchor(prob, start)
    mon = _monitor(prob, cfg.rho_floor, support_tol)

    def monitor(pt):
        row = mon(pt)
        row.update(wall_s=time.perf_counter() - wall0, cpu_s=time.process_time() - cpu0)
        return row

    phm = run_phm(prob, anchor, cfg.eta1 * cfg.rho_floor, None, cfg.phm_budget, start=start,
                  sigma=cfg.sigma, obj_change_tol=cfg.obj_tol, sub_max_iter=cfg.sub_max_iter,
                  monitor=monitor)
    trace = SDCTrace()
    for row in phm.trace:
        trace.append(t=0, l=row["nu"], rho=cfg.rho_floor, phm_steps=int(row["nu"] > 0), residual=row["residual"],
                     surrogate=row["surrogate"], objective=row["objective"], nnz=row["nnz"],
                     feas_error=row["feas_error"], nonanticipativity=row["nonanticipativity"],
                     wall_s=row["wall_s"], cpu_s=row["cpu_s"])
        if log:
            log(trace.rows[-1])
    status = CONVERGED if phm.status != BUDGET_STATUS else PHM_BUDGET
    metrics = final_kkt_report(prob, phm.point, cfg.rho_floor, support_tol)
    return SolveReport(status, phm.point, cfg.rho_floor, metrics, trace, phm.steps, 1,
                       time.process_time() - cpu0, time.perf_counter() - wall0)
