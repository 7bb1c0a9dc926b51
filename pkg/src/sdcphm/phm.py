"""Progressive hedging over the per-scenario surrogate VIs.

Every scenario carries a full copy of the first-stage blocks (x, alpha1,
alpha2) next to its own (y_i, pi1_i, pi2_i).  Second-stage multipliers are
kept in scenario scaling, i.e. without the probability weight; the stacked
point uses ``pi_full = p_i * pi_i``.

One step solves all scenario VIs

    0 in H_i(z_i) + w_i + sigma (z_i - breve_i) + N_{D_i}(z_i)

where ``w_i`` holds the nonanticipativity multipliers (u_i, c1_i, c2_i) on
the consensus blocks, then averages the consensus blocks with the scenario
probabilities and moves each ``w_i`` by sigma times its disagreement.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .model import (PrimalDualPoint, ScenarioMap, SurrogateAnchor, TwoStageProblem,
                    natural_residual, surrogate_value)
from .scenario import CONVERGED, ScenarioEvaluationError, ScenarioVI, solve_scenarios

CONVERGED_STATUS = "converged"
BUDGET_STATUS = "budget-exhausted"


class PHMError(RuntimeError):
    pass


def consensus_mask(prob: TwoStageProblem) -> np.ndarray:
    """Boolean mask of the scenario-vector entries shared by all scenarios."""
    S = prob.scenario_layout
    mask = np.zeros(prob.scenario_dim, dtype=bool)
    for name in ("x", "alpha1", "alpha2"):
        mask[S[name]] = True
    return mask


def to_scenario_rows(prob: TwoStageProblem, pt: PrimalDualPoint) -> np.ndarray:
    K = prob.K
    p = prob.probs[:, None]
    return np.concatenate([np.broadcast_to(pt.x, (K, prob.m1)), pt.ys,
                           np.broadcast_to(pt.alpha1, (K, prob.n1)),
                           np.broadcast_to(pt.alpha2, (K, prob.s1)),
                           pt.pi1 / p, pt.pi2 / p], axis=1)


def from_scenario_rows(prob: TwoStageProblem, Z) -> PrimalDualPoint:
    """Stacked point from scenario rows; consensus blocks are averaged."""
    S, p = prob.scenario_layout, prob.probs
    pw = p[:, None]
    return PrimalDualPoint(p @ Z[:, S["x"]], Z[:, S["y"]].copy(), p @ Z[:, S["alpha1"]],
                           p @ Z[:, S["alpha2"]], pw * Z[:, S["pi1"]], pw * Z[:, S["pi2"]])


@dataclass
class PHMState:
    breve: np.ndarray              # (K, d) consensus iterate in scenario rows
    mult: np.ndarray               # (K, d) nonanticipativity multipliers, zero off consensus blocks
    sigma: float = 1.0
    nu: int = 0
    hat: Optional[np.ndarray] = None

    @classmethod
    def start(cls, prob: TwoStageProblem, point: PrimalDualPoint, sigma=1.0):
        return cls(to_scenario_rows(prob, point), np.zeros((prob.K, prob.scenario_dim)), float(sigma))

    def point(self, prob):
        return from_scenario_rows(prob, self.breve)

    def nonanticipativity(self, prob) -> float:
        """max |sum_i p_i w_i|, which Step 2 keeps at zero."""
        return float(np.max(np.abs(prob.probs @ self.mult))) if self.mult.size else 0.0


@dataclass
class PHMStepInfo:
    newton_iters: int
    fallback_steps: int
    unconverged: int


def aggregate(prob: TwoStageProblem, state: PHMState, hat) -> PHMState:
    """Average the consensus blocks of the scenario solutions and move the multipliers."""
    mask = consensus_mask(prob)
    breve = hat.copy()
    avg = prob.probs @ hat[:, mask]
    breve[:, mask] = avg
    mult = state.mult.copy()
    mult[:, mask] += state.sigma * (hat[:, mask] - avg)
    return PHMState(breve, mult, state.sigma, state.nu + 1, hat)


def phm_step(prob: TwoStageProblem, anchor: SurrogateAnchor, state: PHMState,
             sub_tol=1e-8, sub_max_iter=100, smap: Optional[ScenarioMap] = None):
    """One progressive hedging step; returns (new state, PHMStepInfo)."""
    smap = ScenarioMap(prob, anchor) if smap is None else smap
    idx = prob.all_idx
    vi = ScenarioVI(lambda Z, sel: smap.value(Z, idx[sel]),
                    lambda Z, sel: smap.jacobian(Z, idx[sel]),
                    smap.cone, prob.K, shift=state.mult, center=state.breve, sigma=state.sigma)
    z0 = state.breve if state.hat is None else state.hat
    try:
        out = solve_scenarios(vi, z0, sub_tol, sub_max_iter)
    except ScenarioEvaluationError as err:
        raise PHMError(f"scenario solve failed for scenarios {err.rows}") from err
    new = aggregate(prob, state, out.z)
    info = PHMStepInfo(int(out.newton_iters.sum()), int(out.fallback_steps.sum()),
                       sum(s != CONVERGED for s in out.status))
    return new, info


@dataclass
class PHMResult:
    point: PrimalDualPoint
    state: PHMState
    status: str
    steps: int
    residual: float
    surrogate_value: float
    trace: list = field(default_factory=list)


def run_phm(prob: TwoStageProblem, anchor: SurrogateAnchor, res_tol: float,
            value_cap: Optional[float] = None, budget: int = 10000,
            state: Optional[PHMState] = None, start: Optional[PrimalDualPoint] = None,
            sigma: float = 1.0, sub_tol: Optional[float] = None,
            obj_change_tol: Optional[float] = None, sub_max_iter: int = 100,
            monitor: Optional[Callable] = None) -> PHMResult:
    """Iterate PHM until the consensus point passes the stopping tests.

    Stops at the first consensus iterate (including the starting one) whose
    surrogate natural residual is at most ``res_tol`` and whose surrogate
    value is at most ``value_cap`` (when given).  With ``obj_change_tol`` the
    change of the surrogate value between consecutive iterates must also be
    within that tolerance.  Running out of ``budget`` steps is reported
    through the status and returns the iterate with the smallest residual.
    ``monitor(point)`` may return extra fields for every trace row.
    """
    if budget <= 0:
        raise ValueError("budget must be positive")
    if state is None:
        if start is None:
            raise ValueError("need a state or a starting point")
        state = PHMState.start(prob, start, sigma)
    sub_tol = min(1e-8, 0.1 * res_tol) if sub_tol is None else sub_tol
    smap = ScenarioMap(prob, anchor)
    trace = []
    best = None
    prev_val = None

    def evaluate(st):
        pt = st.point(prob)
        _, res = natural_residual(prob, anchor, pt.stack())
        return pt, res, surrogate_value(prob, anchor, pt.x, pt.ys)

    pt, res, val = evaluate(state)
    for nu in range(budget + 1):
        trace.append({"nu": state.nu, "residual": res, "surrogate": val,
                      "nonanticipativity": state.nonanticipativity(prob)})
        if monitor is not None:
            trace[-1].update(monitor(pt))
        if best is None or res < best[1]:
            best = (pt, res, val, state)
        ok = res <= res_tol and (value_cap is None or val <= value_cap)
        if obj_change_tol is not None:
            ok = ok and prev_val is not None and abs(val - prev_val) <= obj_change_tol
        if ok:
            return PHMResult(pt, state, CONVERGED_STATUS, nu, res, val, trace)
        if nu == budget:
            break
        prev_val = val
        state, info = phm_step(prob, anchor, state, sub_tol, sub_max_iter, smap)
        trace[-1].update(newton_iters=info.newton_iters, fallback_steps=info.fallback_steps,
                         unconverged=info.unconverged)
        pt, res, val = evaluate(state)
    pt, res, val, st = best
    return PHMResult(pt, state, BUDGET_STATUS, budget, res, val, trace)
