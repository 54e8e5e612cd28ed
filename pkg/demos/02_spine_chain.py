"""The spine type chain: exact values against simulation.

Under the tilted measure the local times along the spine form a Markov
chain with kernel p_hat(i, j) = m_ij j / i.  Its invariant law is
proportional to j m^-j, so Kac's formula gives the mean return time to
type 1 and the mean local time collected before returning.
"""

import numpy as np

from stablewalk.spine import eigen_data, spine_chain_batch, spine_expectation

m = 2.0
ed = eigen_data(m, truncation=200)
print("invariant law, first five types:", np.round(ed.stationary[:5], 5))
print("j m^-j (m-1)^2/m             :", np.round([(m - 1) ** 2 / m * j * m**-j for j in range(1, 6)], 5))

tau_exact = spine_expectation(lambda i, j: 1.0, m)
sum_exact = spine_expectation(lambda i, j: j, m)
print(f"exact E[tau_1] = {tau_exact:.6f}, exact E[sum beta] = {sum_exact:.6f} (m/(m-1) = {m / (m - 1):.1f})")

tau, bsum, occ = spine_chain_batch(1, m, 10**6, rng=3)
se = lambda x: x.std() / np.sqrt(x.size)
print(f"simulated E[tau_1] = {tau.mean():.4f} +- {se(tau):.4f}")
print(f"simulated E[sum beta] = {bsum.mean():.4f} +- {se(bsum):.4f}")
freq = occ[:, 1:6].sum(axis=0) / occ.sum()
print("visit frequencies j=1..5:", np.round(freq, 5))
