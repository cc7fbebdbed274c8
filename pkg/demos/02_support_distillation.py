"""Distilling the training set into a small support set.

Full mode keeps every training point. Random keeps k per class. Cluster
replaces each class with its k-means centroids (synthetic points), and
Closest-Cluster swaps each centroid for the nearest real example. This script
compares their test error on Gaussian blobs as k grows.
"""

import numpy as np

from nwkit import InferenceMode, batch_predict, build_support, generate_blobs, split

data = generate_blobs(4, 150, 2, separation=3.0, noise_sd=1.4, seed=2)
tagged = split(data, (0.7, 0.0, 0.3), seed=3)
train, test = tagged.subset("train"), tagged.subset("test")
feats = test.features_matrix()
labels = test.labels_array()
print(f"{len(train)} train / {len(test)} test, 4 classes\n")


def error_with(support):
    probs, _ = batch_predict(feats, support, 1.0)
    return float(np.mean(probs.argmax(axis=1) != labels))


full = build_support(train.examples, InferenceMode.full())
print(f"full mode ({len(full)} entries): error {error_with(full):.3f}")

print(f"\n{'k':>3} {'random':>8} {'cluster':>8} {'closest-cluster':>16}  (support size)")
for k in (1, 2, 4, 8, 16):
    row = []
    for make in (InferenceMode.random, InferenceMode.cluster, InferenceMode.closest_cluster):
        support = build_support(train.examples, make(k, seed=7))
        row.append(error_with(support))
    print(f"{k:>3} {row[0]:>8.3f} {row[1]:>8.3f} {row[2]:>16.3f}  ({k * 4})")

print("\ncluster centroids summarize each class; a handful of them already")
print("matches full mode here while shrinking the support by two orders")

# cluster entries are synthetic (marked 'centroid'); closest-cluster entries
# are real training rows
cluster = build_support(train.examples, InferenceMode.cluster(2, seed=7))
cc = build_support(train.examples, InferenceMode.closest_cluster(2, seed=7))
print("\ncluster sources:", sorted(set(cluster.sources)))
print("closest-cluster sources are real ids, e.g.", cc.sources[:3])
