"""
Learning the demand model from data
===================================

A small version of the dataset-size sweep on the three-regime demand model:
fit HMMs by Baum-Welch to increasingly many trajectories, build an SVM
base-stock policy for each fitted model, and compare its simulated cost
with the policy built from the true model. The full-size run is
``python -m seppomdp experiment``.
"""

from seppomdp.config import ExperimentConfig
from seppomdp.evaluation import optimality_gap_experiment

# reduced settings so the demo finishes in well under a minute
cfg = ExperimentConfig.from_dict(
    {
        "grid": {"N": 3000, "K": 80, "mc_samples": 3000},
        "training": {"dataset_sizes": [5, 50, 250], "n_restarts": 2},
        "evaluation": {"n_sims": 500},
    }
)


def progress(rows):
    print(f"  size {rows[0].dataset_size}: restart costs {[round(r.mean_cost, 1) for r in rows]}")


table = optimality_gap_experiment(cfg, on_size=progress)
print(f"\ntrue-model policy cost: {table.true_cost.mean_cost:.2f} +- {table.true_cost.std_error:.2f}")
for row in table.summary():
    print(f"size {row['dataset_size']:>4}: best gap {row['best_gap']:7.2f}   mean gap {row['mean_gap']:7.2f}")
