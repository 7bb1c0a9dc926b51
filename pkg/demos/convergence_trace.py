"""Objective, cardinality and feasibility along one Model A run.

Writes the per-step trace to trace_A.csv (time_s, objective, nnz,
feas_error) for plotting elsewhere, and prints every fifth outer step.
"""
import csv

from sdcphm.markowitz import ModelVariant, build_problem, synthesize_market
from sdcphm.sdc import SDCConfig, run_sdc

data = synthesize_market(10, 16, 0)
prob = build_problem(data, ModelVariant.named("A"))
rep = run_sdc(prob, SDCConfig())

print(f"{'t':>3} {'rho':>9} {'PHM':>4} {'objective':>10} {'nnz':>4} {'FeasErr':>9} {'drift':>9}")
for row in rep.trace.rows:
    if row["t"] % 5 == 0 or row is rep.trace.rows[-1]:
        print(f"{row['t']:3d} {row['rho']:9.2e} {row['phm_steps']:4d} {row['objective']:10.5f} "
              f"{row['nnz']:4d} {row['feas_error']:9.1e} {row['drift']:9.1e}")
print(f"status {rep.status}, {rep.outer_iterations} outer steps, {rep.phm_iterations} PHM steps, "
      f"KKT_rel {rep.metrics['kkt_rel']:.2e}")

with open("trace_A.csv", "w", newline="") as fh:
    w = csv.writer(fh)
    w.writerow(["time_s", "objective", "nnz", "feas_error"])
    for row in rep.trace.rows:
        w.writerow([row["cpu_s"], row["objective"], row["nnz"], row["feas_error"]])
print("wrote trace_A.csv")
