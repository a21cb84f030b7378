"""Cluster a cohort in PCA space and assign stratified cross-validation folds.

Sixty feature vectors are drawn from three separated blobs of sizes
30/20/10. Stratified assignment puts 6/4/2 members of each cluster into
every one of the 5 folds, so each fold mirrors the cohort composition.
"""

import numpy as np

from gliomaforge import (
    kmeans,
    pca_fit_transform,
    standardize,
    stratified_folds,
    within_cluster_ss,
)

rng = np.random.default_rng(7)
sizes = (30, 20, 10)
# every coordinate carries signal, otherwise standardize would inflate a
# pure-noise axis to unit variance and blur the projection
centers = np.array([[0.0, 0.0, 0.0], [8.0, 0.0, 4.0], [0.0, 8.0, 8.0]])
points = np.vstack(
    [c + 0.3 * rng.standard_normal((n, 3)) for c, n in zip(centers, sizes)]
)

scaled, _, _ = standardize(points)
model, reduced = pca_fit_transform(scaled, components=2)
print("explained variance ratios:", np.round(model.explained_variance_ratios, 3))

labels, centroids = kmeans(reduced, k=3, seed=7)
print("cluster sizes:", sorted(np.bincount(labels).tolist()))
print(f"within-cluster sum of squares: {within_cluster_ss(reduced, labels, centroids):.3f}")

ids = [f"case-{i:02d}" for i in range(len(points))]
assignment = stratified_folds(ids, labels, n_folds=5, seed=7)
print("\nfold  composition (per cluster)")
for fold in range(5):
    members = assignment.folds == fold
    per_cluster = [int(np.sum(members & (labels == c))) for c in range(3)]
    print(f"  {fold}   {per_cluster}")
