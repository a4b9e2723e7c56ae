"""
Base-stock partition of the belief simplex
==========================================

A three-state demand model has one optimal order-up-to level per belief.
This script labels a barycentric mesh with the exact levels, checks that the
levels form ordered bands, and fits linear SVMs to the labels.
"""

import numpy as np

from seppomdp.inventory import BasestockTable
from seppomdp.models import PARTITION_INVENTORY, partition_demo_model
from seppomdp.svm import band_structure, partition_report, simplex_mesh, train_multiclass, train_ovr

# the demo model and its cost parameters (lead time 2, discount 0.9)
model = partition_demo_model()
inv = PARTITION_INVENTORY
table = BasestockTable(model, inv["tau"], inv["h_tilde"], inv["p_tilde"])

# exact labels on a 50-resolution mesh
mesh = simplex_mesh(3, 50)
labels = table.levels(mesh)
bands = band_structure(mesh, labels, 50)
print("levels:", bands["levels"], "ordered bands:", bands["ordered_bands"])
for level in bands["levels"]:
    print(f"  level {level:>3}: {int((labels == level).sum()):>4} mesh points")

# fit both multi-class schemes and score them on mesh points they never saw
fine = simplex_mesh(3, 100)
held = fine[np.any(np.rint(fine * 100).astype(int) % 2 == 1, axis=1)]
truth = table.levels(held)
for name, trainer in [("crammer_singer", train_multiclass), ("one-vs-rest", train_ovr)]:
    for C in (10.0, 50.0):
        clf = trainer(mesh, labels, C=C)
        print(f"{name:>15} C={C:>4}: held-out agreement {np.mean(clf.predict(held) == truth):.3f}")

# a coarse picture of the learned partition: one character per mesh point
clf = train_multiclass(mesh, labels, C=50.0)
rep = partition_report(clf, 20)
keys = np.rint(rep.points * 20).astype(int)
print("\nlearned partition, digit = level mod 10 (rows: b0 = 1 .. 0; columns: b1)")
for i in range(20, -1, -1):
    row = [str(int(lab) % 10) for k, lab in zip(keys, rep.labels) if k[0] == i]
    print(" " * (20 - i) + " ".join(row))
