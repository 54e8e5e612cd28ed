"""Rescaled walk heights against the stable height process.

Compares (a(n)/n)|X_n| with C* times samples of H_t built from a critical
forest, for a small grid of n.  The full-size experiment is
`stablewalk scaling`; this version takes seconds.
"""

from stablewalk import experiments as ex

cfg = ex.ExperimentConfig(n_grid=(2**10, 2**12, 2**14), replicas=2000, trace_replicas=5, out_dir="demo_out")
report = ex.scaling_experiment(cfg)
print(report.summary())
tables = report.tables
print(f"C* = {tables['C_star']:.4f} (spine constant gives {tables['C_star_spine']:.4f})")
for n, row in zip(tables["n_grid"], tables["ks"]):
    print(f"n = {n:6d}  KS at t = {tables['t_set']}: {[round(float(v), 4) for v in row]}")
print("CSV samples and the JSON report are in", cfg.out_dir)
