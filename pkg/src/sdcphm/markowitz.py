"""Two-stage sparse mean-variance portfolio model with a coupling ball.

First stage:   min x'Q1 x + gamma ||x||_0 + (1/K) sum_i v_i(x)
               e'x = 1,  r1'x >= r1_min,  x >= 0
Second stage:  v_i(x) = min y'Q2_i y
               e'y = 1,  r2_i'y >= r2_min_i,  y >= 0,  ||x - y|| <= tau_i

The ball is written as the smooth inequality ||x - y||^2 - tau^2 <= 0.  The
four variants switch the l0 term and the ball on and off:

    A: l0 + ball    B: l0 only    C: ball only    D: neither
"""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .cones import ConeSpec, NonNeg
from .model import BatchedQuadratic, Quadratic, TwoStageProblem
from .prox import l0_penalty

RETURN_MARGIN = 0.05
PSD_TOL = 1e-10

# fixed GARCH(1,1) parameters driving the synthetic volatilities
GARCH_OMEGA, GARCH_A, GARCH_B = 1e-5, 0.05, 0.90


@dataclass(frozen=True)
class ModelVariant:
    include_l0: bool
    include_soc: bool

    @classmethod
    def named(cls, label: str) -> "ModelVariant":
        table = {"A": (True, True), "B": (True, False), "C": (False, True), "D": (False, False)}
        try:
            return cls(*table[label.upper()])
        except KeyError:
            raise ValueError(f"unknown model variant {label!r}; expected one of A, B, C, D") from None

    @property
    def label(self):
        return {(True, True): "A", (True, False): "B", (False, True): "C", (False, False): "D"}[
            (self.include_l0, self.include_soc)]


@dataclass
class MarketData:
    n: int
    K: int
    rbar1: np.ndarray
    Q1: np.ndarray
    rbar2: np.ndarray
    Q2: np.ndarray
    r1_min: float
    r2_min: np.ndarray
    tau_soc: np.ndarray
    gamma: float = 1e-5
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.rbar1 = np.asarray(self.rbar1, dtype=float)
        self.Q1 = np.asarray(self.Q1, dtype=float)
        self.rbar2 = np.asarray(self.rbar2, dtype=float).reshape(self.K, self.n)
        self.Q2 = np.asarray(self.Q2, dtype=float).reshape(self.K, self.n, self.n)
        self.r2_min = np.asarray(self.r2_min, dtype=float).reshape(self.K)
        self.tau_soc = np.broadcast_to(np.asarray(self.tau_soc, dtype=float), (self.K,)).copy()

    def check(self):
        """Raise ValueError unless every covariance is symmetric PSD."""
        for name, M in [("Q1", self.Q1[None])] + [("Q2", self.Q2)]:
            if not np.allclose(M, np.swapaxes(M, -1, -2), atol=1e-12):
                raise ValueError(f"{name} must be symmetric")
            lo = np.linalg.eigvalsh(M).min()
            if lo < -PSD_TOL:
                raise ValueError(f"{name} is not positive semidefinite (min eigenvalue {lo:.3e})")
        if np.any(self.tau_soc <= 0):
            raise ValueError("tau_soc must be positive")

    def to_dict(self):
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, np.ndarray):
                d[k] = v.tolist()
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


# ---------------------------------------------------------------------------
# the concise second-stage constraint system


class PortfolioSecondStage:
    """g1 = e'y - 1 and g2 = (r2_min - r2'y ; ||x - y||^2 - tau^2) <= 0."""

    def __init__(self, rbar2, r2_min, tau, include_soc):
        self.rbar2 = np.asarray(rbar2, dtype=float)
        self.r2_min = np.asarray(r2_min, dtype=float)
        self.tau = np.asarray(tau, dtype=float)
        self.include_soc = include_soc
        self.n = self.rbar2.shape[1]
        self.n2 = 1
        self.s2 = 2 if include_soc else 1
        self.cone = ConeSpec([NonNeg(self.s2)])
        self.affine = not include_soc

    def value(self, X, Y, idx):
        g1 = (Y.sum(axis=1) - 1.0)[:, None]
        rows = [self.r2_min[idx] - np.einsum("kj,kj->k", self.rbar2[idx], Y)]
        if self.include_soc:
            D = X - Y
            rows.append(np.einsum("kj,kj->k", D, D) - self.tau[idx] ** 2)
        return g1, np.stack(rows, axis=1)

    def jacobian(self, X, Y, idx):
        B, n = Y.shape
        Jx1 = np.zeros((B, 1, n))
        Jy1 = np.ones((B, 1, n))
        Jx2 = np.zeros((B, self.s2, n))
        Jy2 = np.zeros((B, self.s2, n))
        Jy2[:, 0, :] = -self.rbar2[idx]
        if self.include_soc:
            D = X - Y
            Jx2[:, 1, :] = 2 * D
            Jy2[:, 1, :] = -2 * D
        return Jx1, Jy1, Jx2, Jy2

    def lagrangian_hessian(self, X, Y, P1, P2, idx):
        if not self.include_soc:
            return None
        eye = np.eye(self.n)
        w = 2.0 * P2[:, 1][:, None, None]
        return w * eye, -w * eye, w * eye


def build_problem(data: MarketData, variant: ModelVariant, validate: bool = True) -> TwoStageProblem:
    """Concise-form VI of the portfolio model; ``validate=False`` skips the PSD check."""
    if validate:
        data.check()
    n, K = data.n, data.K
    second = PortfolioSecondStage(data.rbar2, data.r2_min, data.tau_soc, variant.include_soc)
    return TwoStageProblem(
        m1=n, m2=n, probs=np.full(K, 1.0 / K),
        first_obj=Quadratic(2.0 * data.Q1),
        second_obj=BatchedQuadratic(2.0 * data.Q2),
        A=np.ones((1, n)), a=np.ones(1),
        B=-data.rbar1[None, :], b=-np.array([data.r1_min]),
        cone1=ConeSpec.nonneg(1), second=second,
        x_cone=ConeSpec.nonneg(n), y_cone=ConeSpec.nonneg(n),
        penalty_first=l0_penalty(data.gamma) if variant.include_l0 else None,
        penalty_second=None, name=f"markowitz-{variant.label}")


# ---------------------------------------------------------------------------
# data


def compute_rmin(rbar1, rbar2, margin=RETURN_MARGIN):
    """Return floors just below the equally weighted portfolio's returns."""
    rbar1 = np.asarray(rbar1, dtype=float)
    rbar2 = np.atleast_2d(np.asarray(rbar2, dtype=float))
    m1 = rbar1.mean()
    m2 = rbar2.mean(axis=1)
    return float(m1 - margin * abs(m1)), m2 - margin * np.abs(m2)


def estimate_first_stage(returns, eps=1e-9):
    """Sample mean and (T-1)-normalised covariance plus eps*I."""
    R = np.asarray(returns, dtype=float)
    if R.ndim == 1:
        R = R[:, None]
    if R.shape[0] < 2:
        raise ValueError("need at least two return observations")
    mean = R.mean(axis=0)
    C = R - mean
    Q = C.T @ C / (R.shape[0] - 1)
    return mean, Q + eps * np.eye(R.shape[1])


def load_returns_csv(path):
    """T x n simple returns, one row per day; a non-numeric first row is a header."""
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    if not rows:
        raise ValueError(f"{path}: no data")
    try:
        [float(c) for c in rows[0]]
    except ValueError:
        rows = rows[1:]
        if not rows:
            raise ValueError(f"{path}: header but no data") from None
    width = len(rows[0])
    out = []
    for k, r in enumerate(rows):
        if len(r) != width:
            raise ValueError(f"{path}: row {k + 1} has {len(r)} columns, expected {width}")
        try:
            out.append([float(c) for c in r])
        except ValueError:
            raise ValueError(f"{path}: non-numeric cell in row {k + 1}") from None
    return np.array(out)


def random_correlation(rng, n, size=None, mix=0.5, rank=None):
    """Correlation matrices (1 - mix) I + mix L L' with unit-norm rows of L.

    Off-diagonal entries are mix times a cosine, so they lie in [-mix, mix].
    """
    rank = n if rank is None else rank
    shape = (n, rank) if size is None else (size, n, rank)
    L = rng.standard_normal(shape)
    L /= np.linalg.norm(L, axis=-1, keepdims=True)
    return (1 - mix) * np.eye(n) + mix * L @ np.swapaxes(L, -1, -2)


def psd_floor(M, floor=1e-9):
    """Symmetrise and lift eigenvalues below ``floor``."""
    M = 0.5 * (M + np.swapaxes(M, -1, -2))
    w, V = np.linalg.eigh(M)
    w = np.maximum(w, floor)
    out = (V * w[..., None, :]) @ np.swapaxes(V, -1, -2)
    return 0.5 * (out + np.swapaxes(out, -1, -2))


def simulate_garch_returns(rng, n, T, drift=None, corr=None):
    """Daily returns from independent GARCH(1,1) variances and correlated shocks."""
    corr = random_correlation(rng, n) if corr is None else corr
    chol = np.linalg.cholesky(corr)
    drift = rng.normal(5e-4, 5e-4, size=n) if drift is None else drift
    h = np.full(n, GARCH_OMEGA / (1 - GARCH_A - GARCH_B))
    out = np.empty((T, n))
    eps_prev = np.zeros(n)
    for t in range(T):
        if t:
            h = GARCH_OMEGA + GARCH_A * eps_prev ** 2 + GARCH_B * h
        shock = chol @ rng.standard_normal(n)
        eps_prev = np.sqrt(h) * shock
        out[t] = drift + eps_prev
    return out


UNIT_SCALE = {"percent": 1.0, "tenths": 10.0, "fraction": 100.0}


def synthesize_market(n, K, seed, T=500, base_vol=10.0, vol_spread=0.5, mean_spread=0.25,
                      corr_rank=3, gamma=1e-5, tau_soc=0.2, margin=RETURN_MARGIN, units="tenths"):
    """Synthetic instance: GARCH first-period history, GARCH-step scenarios.

    Returns are generated in percent and then expressed in ``units``:
    "percent", "tenths" (multiples of 10%, so a 10% volatility is 1.0 and
    the covariances are O(1)) or "fraction".  The first period is a daily GARCH(1,1)
    history; in the second period expected returns are 1 + spread * z
    clipped to [0.5, 1.5] and volatilities come from one GARCH(1,1) update
    started at ``base_vol``, so they stay near it.
    """
    if n < 2 or K < 1:
        raise ValueError("need n >= 2 and K >= 1")
    if units not in UNIT_SCALE:
        raise ValueError(f"units must be one of {sorted(UNIT_SCALE)}")
    rng = np.random.default_rng(seed)
    hist = 100.0 * simulate_garch_returns(rng, n, T, corr=random_correlation(rng, n, rank=corr_rank))
    # asset-specific volatility levels on top of the common GARCH dynamics
    hist *= np.exp(vol_spread * rng.standard_normal(n))
    rbar1, Q1 = estimate_first_stage(hist)
    # asset-specific long-run levels scattered around base_vol
    v0 = (base_vol * np.exp(vol_spread * rng.standard_normal(n))) ** 2
    # one GARCH step from the long-run level, rescaled so its mean stays v0
    omega = v0 * (1 - GARCH_A - GARCH_B)
    shocks = rng.standard_normal((K, n))
    h = omega + GARCH_A * v0 * shocks ** 2 + GARCH_B * v0
    vol = np.sqrt(h)
    corr = random_correlation(rng, n, size=K, rank=corr_rank)
    Q2 = vol[:, :, None] * corr * vol[:, None, :]
    rbar2 = np.clip(1.0 + mean_spread * rng.standard_normal((K, n)), 0.5, 1.5)
    # second-period mean returns keep their [0.5, 1.5] range in every unit system
    c = UNIT_SCALE[units]
    rbar1, Q1, Q2 = rbar1 / c, Q1 / c ** 2, Q2 / c ** 2
    Q2 = psd_floor(Q2)
    r1_min, r2_min = compute_rmin(rbar1, rbar2, margin)
    return MarketData(n, K, rbar1, Q1, rbar2, Q2, r1_min, r2_min, np.full(K, tau_soc), gamma,
                      meta={"seed": int(seed), "T": int(T), "base_vol": base_vol, "units": units})


def market_from_returns(returns, K, seed, csv_units="percent", units="tenths", **kw):
    """First stage from observed returns, second stage synthesised as above.

    ``returns`` are given in ``csv_units`` and converted to ``units``.
    """
    returns = np.asarray(returns, dtype=float) * UNIT_SCALE[csv_units] / UNIT_SCALE[units]
    syn = synthesize_market(returns.shape[1], K, seed, units=units, **kw)
    rbar1, Q1 = estimate_first_stage(returns)
    r1_min, _ = compute_rmin(rbar1, syn.rbar2)
    syn.rbar1, syn.Q1, syn.r1_min = rbar1, Q1, r1_min
    syn.meta["source"] = "csv"
    return syn
