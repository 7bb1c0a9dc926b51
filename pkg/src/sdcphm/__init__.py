"""Two-stage nonsmooth stochastic conic programs: SDC outer loop around progressive hedging."""
from .cones import SOC, ConeSpec, Free, NonNeg, Zero, complementarity_residual
from .markowitz import MarketData, ModelVariant, build_problem, synthesize_market
from .model import (PrimalDualPoint, SurrogateAnchor, TwoStageProblem, eval_F_L, eval_H_L,
                    eval_H_original, make_anchor, natural_residual, verify_monotone)
from .phm import PHMState, phm_step, run_phm
from .prox import PenaltySpec, l0_penalty, l1_penalty, moreau_value, prox_point, zero_penalty
from .scenario import ScenarioVI, extragradient_step, solve_scenario
from .sdc import SDCConfig, SolveReport, check_TC, final_kkt_report, run_direct_phm, run_sdc

__version__ = "0.1.0"
