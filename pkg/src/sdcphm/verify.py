"""Independent reference solvers and the property suites behind ``verify``.

The oracles here share no code with the solver paths they check: prox
points come from per-component candidate enumeration and grids, and small
convex QPs are solved by enumerating active sets of their KKT system.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .markowitz import ModelVariant, build_problem, synthesize_market
from .model import initial_point, make_anchor, plain_anchor, surrogate_value, verify_monotone
from .phm import run_phm
from .prox import L0, L1, ZERO, l0_penalty, l1_penalty, prox_point, zero_penalty


# ---------------------------------------------------------------------------
# prox oracle


def _scalar_obj(kind, gamma, rho, w, v):
    pen = 0.0
    if kind == L0:
        pen = gamma * (v != 0)
    elif kind == L1:
        pen = gamma * abs(v)
    return (v - w) ** 2 / (2 * rho) + pen


def brute_force_prox(kind, gamma, rho, w):
    """Per-component prox by enumeration (l0) or grid search plus piece stationary points (l1).

    Returns (point, objective value).  For l0 the candidates are {0, w_j}
    and ties keep w_j.  For l1 a 1e-3 grid locates the basin, a 1e-6 grid
    refines it and the stationary points of the two smooth pieces (and 0)
    are added as candidates.
    """
    w = np.asarray(w, dtype=float)
    out = np.empty_like(w)
    total = 0.0
    for j, wj in enumerate(w):
        if kind == ZERO:
            best = wj
        elif kind == L0:
            keep, drop = _scalar_obj(L0, gamma, rho, wj, wj), _scalar_obj(L0, gamma, rho, wj, 0.0)
            best = wj if keep <= drop else 0.0
        elif kind == L1:
            coarse = np.arange(-abs(wj) - 1.0, abs(wj) + 1.0, 1e-3)
            vals = (coarse - wj) ** 2 / (2 * rho) + gamma * np.abs(coarse)
            c = coarse[np.argmin(vals)]
            fine = np.arange(c - 2e-3, c + 2e-3, 1e-6)
            vals = (fine - wj) ** 2 / (2 * rho) + gamma * np.abs(fine)
            grid_best = fine[np.argmin(vals)]
            # exact candidates: zero and the stationary points of the two smooth pieces
            cands = [0.0, wj - gamma * rho, wj + gamma * rho]
            best = min(cands, key=lambda v: _scalar_obj(L1, gamma, rho, wj, v))
            # the grid only overrides the candidates if they missed a clearly lower basin
            if _scalar_obj(L1, gamma, rho, wj, grid_best) < _scalar_obj(L1, gamma, rho, wj, best) - 1e-9:
                best = grid_best
        else:
            raise ValueError(kind)
        out[j] = best
        total += _scalar_obj(kind, gamma, rho, wj, best)
    return out, total


# ---------------------------------------------------------------------------
# active-set QP oracle


def qp_active_set(H, g, Aeq, beq, Ain, bin_, tol=1e-9):
    """min 0.5 v'Hv + g'v  s.t.  Aeq v = beq, Ain v <= bin_, by active-set enumeration.

    Meant for tiny convex problems; every subset of inequalities is tried
    as the active set, and the feasible KKT point with the lowest objective
    is returned together with its multipliers (eq, ineq).
    """
    H, g = np.asarray(H, float), np.asarray(g, float)
    Aeq = np.asarray(Aeq, float).reshape(-1, H.shape[0])
    Ain = np.asarray(Ain, float).reshape(-1, H.shape[0])
    beq, bin_ = np.asarray(beq, float).ravel(), np.asarray(bin_, float).ravel()
    n, me, mi = H.shape[0], Aeq.shape[0], Ain.shape[0]
    best = None
    for r in range(mi + 1):
        for act in itertools.combinations(range(mi), r):
            act = list(act)
            C = np.vstack([Aeq, Ain[act]]) if act else Aeq
            d = np.concatenate([beq, bin_[act]])
            k = C.shape[0]
            KKT = np.block([[H, C.T], [C, np.zeros((k, k))]])
            rhs = np.concatenate([-g, d])
            sol, *_ = np.linalg.lstsq(KKT, rhs, rcond=None)
            if np.linalg.norm(KKT @ sol - rhs) > 1e-8 * (1 + np.linalg.norm(rhs)):
                continue
            v, mu = sol[:n], sol[n:]
            lam = mu[me:]
            if np.any(Ain @ v - bin_ > tol) or np.any(lam < -tol):
                continue
            val = 0.5 * v @ H @ v + g @ v
            if best is None or val < best[0] - 1e-12:
                full = np.zeros(mi)
                full[act] = lam
                best = (val, v, mu[:me], full)
    if best is None:
        raise ValueError("no feasible KKT point found")
    return best[1], best[2], best[3], best[0]


def portfolio_qp(Q, r, rmin):
    """min v'Qv s.t. e'v = 1, r'v >= rmin, v >= 0 via the active-set oracle."""
    n = len(r)
    Ain = np.vstack([-np.asarray(r)[None, :], -np.eye(n)])
    bin_ = np.concatenate([[-rmin], np.zeros(n)])
    v, *_ = qp_active_set(2 * np.asarray(Q), np.zeros(n), np.ones((1, n)), [1.0], Ain, bin_)
    return v


def model_d_oracle(data):
    """Model D separates into one first-stage and K second-stage QPs."""
    x = portfolio_qp(data.Q1, data.rbar1, data.r1_min)
    ys = np.array([portfolio_qp(data.Q2[i], data.rbar2[i], data.r2_min[i]) for i in range(data.K)])
    return x, ys


# ---------------------------------------------------------------------------
# suites


@dataclass
class SuiteResult:
    name: str
    passed: int
    total: int

    @property
    def ok(self):
        return self.passed == self.total


def _random_penalty(rng):
    kind = rng.choice([ZERO, L0, L1])
    gamma = float(rng.uniform(0.0, 2.0))
    return {ZERO: zero_penalty, L0: lambda: l0_penalty(gamma), L1: lambda: l1_penalty(gamma)}[kind]()


def suite_prox_oracle(n_samples=300, seed=0):
    rng = np.random.default_rng(seed)
    ok = 0
    for _ in range(n_samples):
        P = _random_penalty(rng)
        rho = float(10 ** rng.uniform(-4, 1))
        w = rng.uniform(-5, 5, size=rng.integers(1, 9))
        res = prox_point(P, rho, w)
        ref, val = brute_force_prox(P.kind, P.weight, rho, w)
        ok += bool(np.max(np.abs(res.point - ref)) <= 1e-8 and abs(res.envelope_value - val) <= 1e-8)
    return SuiteResult("prox-oracle", ok, n_samples)


def suite_dc_identity(n_samples=300, seed=1):
    rng = np.random.default_rng(seed)
    ok = 0
    for _ in range(n_samples):
        P = _random_penalty(rng)
        rho = float(10 ** rng.uniform(-4, 1))
        w = rng.uniform(-5, 5, size=rng.integers(1, 9))
        res = prox_point(P, rho, w)
        lhs = w @ w / (2 * rho) - res.dc_concave_value
        ident = abs(res.envelope_value - lhs) <= 1e-10 * max(1.0, abs(res.envelope_value))
        sandwich = -1e-12 <= res.envelope_value <= P.value(w) + 1e-12
        ok += bool(ident and sandwich)
    return SuiteResult("dc-identity", ok, n_samples)


def suite_majorization(n_samples=200, seed=2):
    """Surrogate majorises the smoothed objective and touches it at the anchor."""
    rng = np.random.default_rng(seed)
    ok = 0
    for k in range(n_samples):
        data = synthesize_market(3, 2, seed * 1000 + k)
        prob = build_problem(data, ModelVariant.named("A"))
        rho = float(10 ** rng.uniform(-4, 0))
        tau = float(rng.uniform(0, 1e-2))
        xa, ya = rng.uniform(0, 0.5, 3), rng.uniform(0, 0.5, (2, 3))
        anc = make_anchor(prob, xa, ya, rho, tau, tau)
        x, y = rng.uniform(0, 0.5, 3), rng.uniform(0, 0.5, (2, 3))
        f_l = surrogate_value(prob, anc, x, y)
        bound = prob.moreau_objective(rho, x, y) + 0.5 * anc.tau1 * np.sum((x - xa) ** 2)
        at = surrogate_value(prob, anc, xa, ya) - prob.moreau_objective(rho, xa, ya)
        ok += bool(bound <= f_l + 1e-10 and abs(at) <= 1e-10)
    return SuiteResult("majorization", ok, n_samples)


def suite_monotonicity(n_samples=2000, seed=3, corrupt_q2=False):
    data = synthesize_market(4, 3, seed)
    if corrupt_q2:
        data.Q2[0] = -np.eye(data.n)
    prob = build_problem(data, ModelVariant.named("A"), validate=not corrupt_q2)
    anc = make_anchor(prob, np.full(4, 0.25), np.full((3, 4), 0.25), 0.5, 1e-4, 1e-4)
    rep = verify_monotone(prob, anc, n_samples, seed)
    return SuiteResult("monotonicity", n_samples if rep.passed else 0, n_samples)


def phm_oracle_errors(seed=4):
    """(n, K, primal error, worst nonanticipativity) for PHM on tiny Model-D instances."""
    from .sdc import SDCConfig, run_direct_phm
    out = []
    for n in (2, 3):
        for K in (1, 2):
            data = synthesize_market(n, K, seed + 10 * n + K)
            prob = build_problem(data, ModelVariant.named("D"))
            rep = run_direct_phm(prob, SDCConfig(eta1=1e-4, eta2=1e-4, eta3=1e-4))
            x, ys = model_d_oracle(data)
            err = max(np.max(np.abs(rep.point.x - x)), np.max(np.abs(rep.point.ys - ys)))
            out.append((n, K, float(err), max(rep.trace.column("nonanticipativity"))))
    return out


def suite_phm_vs_oracle(seed=4):
    """PHM on tiny Model-D instances against active-set enumeration."""
    runs = phm_oracle_errors(seed)
    return SuiteResult("phm-vs-oracle", sum(err <= 1e-4 and na <= 1e-10 for _, _, err, na in runs), len(runs))


def suite_nonanticipativity(seed=5):
    data = synthesize_market(4, 5, seed)
    prob = build_problem(data, ModelVariant.named("C"))
    res = run_phm(prob, plain_anchor(prob), 1e-6, budget=200, start=initial_point(prob))
    vals = [row["nonanticipativity"] for row in res.trace]
    return SuiteResult("nonanticipativity", sum(v <= 1e-10 for v in vals), len(vals))


SUITES = {
    "prox-oracle": suite_prox_oracle,
    "dc-identity": suite_dc_identity,
    "majorization": suite_majorization,
    "monotonicity": suite_monotonicity,
    "nonanticipativity": suite_nonanticipativity,
    "phm-vs-oracle": suite_phm_vs_oracle,
}


def run_all(corrupt_q2=False):
    out = []
    for name, fn in SUITES.items():
        out.append(fn(corrupt_q2=True) if (corrupt_q2 and name == "monotonicity") else fn())
    return out
