"""Hill tables for the heavy tails around the spine.

N = nu_hat - 1 and the sibling sum V both have index kappa - 1; L^1 has
index kappa under P_1 and kappa - 1 under the tilted measure.  Hill
estimates at k/2, k and 2k show how far the constants have settled.
"""

import numpy as np

from stablewalk import make_offspring_law
from stablewalk.heavy_tail import hill_table
from stablewalk.spine import l1_spine_batch, sibling_sum_batch, sibling_tail_const, tail_constants
from stablewalk.walk import sample_optional_line

law = make_offspring_law(1.5, 2.0, 2.0 / 3.0)
n = 2 * 10**5


def show(name, x):
    for k, est in hill_table(x).items():
        print(f"  {name:10s} k={k:5d} index {est.index_hat:.3f} +- {est.std_err:.3f}  const {est.const_hat:.3f}")


for beta in (1, 2, 3):
    V, N = sibling_sum_batch(beta, law, n, rng=beta)
    print(f"V at beta={beta}: predicted constant {sibling_tail_const(beta, 1.5, 2.0, 2.0 / 3.0):.4f}")
    show("V", V)
print("N: predicted constant 1.0")
show("N", N)

consts = tail_constants(1.5, 2.0, 2.0 / 3.0)
print({k: round(v, 4) for k, v in consts.items()})
p1 = sample_optional_line(law, 1, n, rng=7).valid().L1
print(f"L^1 under P_1 (mean {p1.mean():.3f})")
show("L1", p1)
hat = l1_spine_batch(law, n // 10, rng=8, budget=10**5)
print(f"L^1 under P_hat_1 ({hat.n_completed} replicas mean-completed)")
show("L1_hat", hat.L1)
