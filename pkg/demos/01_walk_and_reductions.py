"""A walk on a heavy-tailed forest and its two reductions.

Runs the critical biased walk for 10^5 steps, builds F^R from the visited
forest and F^X from the trajectory, and shows that both reductions carry
the walk's height information exactly.
"""

import numpy as np

from stablewalk import LazyForest, make_offspring_law, run_walk
from stablewalk.reduction import build_FR, build_FX, forest_height_process, height_process, optional_lines

law = make_offspring_law(kappa=1.5, mean=2.0, tail_const=2.0 / 3.0)
print(f"offspring law: P(nu=0)={law.atoms[0]:.4f}, P(nu=1)={law.atoms[1]:.4f}, P(nu=k)=k^-2.5 beyond")

traj = run_walk(LazyForest(law, seed=1), 10**5, rng=2)
print(f"walk: {traj.n_steps} steps, {traj.n_vertices} vertices visited, {traj.current_tree} trees entered")
print(f"max height {traj.heights.max()}, final height {traj.heights[-1]}")

# F^X: one vertex per time index, weighted heights equal |X_n|
FX = build_FX(traj)
print("F^X weighted heights == walk heights:", np.array_equal(height_process(FX), traj.heights))

# F^R: only local-time-1 vertices reproduce; lengths record skipped generations
marked = traj.marked_forest()
FR = build_FR(marked)
print("F^R weighted heights == heights of F:", np.array_equal(height_process(FR), forest_height_process(marked)))
print(f"F^R: {FR.n_vertices} vertices, {int(FR.etype.sum())} of type 1, mean edge length {FR.length[FR.parent >= 0].mean():.3f}")

# optional lines below the first few roots with a nonempty region B^1
roots = np.flatnonzero(marked.parent < 0)
shown = 0
for r in roots:
    s = optional_lines(marked, int(r))
    if s.B1 > 0:
        print(f"tree {marked.tree[r]}: |L^1| = {s.L1}, |B^1| = {s.B1}, local time in B^1 = {s.B1_beta_sum}")
        shown += 1
    if shown == 3:
        break
