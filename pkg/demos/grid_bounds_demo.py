"""
Belief grids, relaxation bounds and probability matching
========================================================

Solves the belief-grid approximation of the inventory POMDP, compares the
full-information lower bound with the simulated cost of the exact
base-stock policy, and shows the randomized action of the
probability-matching heuristic.
"""

import numpy as np

from seppomdp.belief_grid import build_grid, simulate_belief_trajectory
from seppomdp.evaluation import ExactBasestockPolicy, evaluate_position_policy
from seppomdp.hmm import uniform_belief
from seppomdp.inventory import InventoryModel
from seppomdp.models import PARTITION_INVENTORY, partition_demo_model
from seppomdp.solvers import HeuristicPolicy, information_relaxation_values, relaxation_lower_bound, solve_grid

model = partition_demo_model()
inv = InventoryModel(model, **PARTITION_INVENTORY)

# a belief grid from one long simulated belief path, rounded to 2 digits
beliefs = simulate_belief_trajectory(model, uniform_belief(3), 5000, seed=0)
grid = build_grid(beliefs, d=2, K=40)
print(f"grid: {len(grid)} points, most visited {grid.points[0].round(2)} ({grid.visit_counts[0]} visits)")

# value iteration on positions x grid points
gvf = solve_grid(inv, grid)
k0 = int(np.flatnonzero(gvf.positions == 0)[0])
print(f"grid values at position 0: min {gvf.values[k0].min():.2f}, max {gvf.values[k0].max():.2f}")
print(f"value iteration: {gvf.result.iterations} iterations, converged={gvf.result.converged}")

# revealing the latent state gives a lower bound on any policy's cost
vm = information_relaxation_values(inv)
policy = ExactBasestockPolicy(model, inv.tau, inv.h_tilde, inv.p_tilde)
print("\nposition  belief              bound    policy cost")
for pos, b in [(0, grid.points[0]), (5, grid.points[1]), (-3, grid.points[2])]:
    lb = relaxation_lower_bound(vm, b, pos)
    rep = evaluate_position_policy(model, model, policy, inv, 150, 2000, seed=1, initial_position=pos, initial_belief=b)
    print(f"{pos:>8}  {np.array2string(b, precision=2):<18} {lb:7.2f}  {rep.mean_cost:7.2f} +- {rep.std_error:.2f}")

# probability matching: sample the per-observation optimal level with prob sigma(o | b)
hp = HeuristicPolicy(inv, grid.points[0])
print("\nheuristic action distribution at position 0:", {a: round(p, 3) for a, p in hp.action_distribution(0).items()})
print("ten draws:", [hp.action(0, seed) for seed in range(10)])
