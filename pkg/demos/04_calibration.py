"""Measuring and improving calibration.

ECE bins predictions by confidence and averages the per-bin gap between
confidence and accuracy. Temperature scaling then sweeps the NW temperature
on a validation split (100 values on [0.5, 3]) and keeps the tau minimizing
validation loss. With one support entry per class the predicted classes are
provably unchanged, so only the confidence calibration moves.

Writes reliability_before.png / reliability_after.png when matplotlib is
available.
"""

import numpy as np

from nwkit import (
    InferenceMode,
    batch_predict,
    build_support,
    expected_calibration_error,
    generate_blobs,
    smooth_labels,
    split,
    temperature_scale,
)
from nwkit.calibration import nll, temperature_sweep
from nwkit.core import OneHotLabel

# noisier blobs than the training demos: overlapping classes leave genuine
# uncertainty for calibration to work with
data = generate_blobs(3, 200, 2, separation=3.0, noise_sd=1.3, seed=12)
tagged = split(data, (0.5, 0.25, 0.25), seed=13)
train, val, test = (tagged.subset(t) for t in ("train", "val", "test"))

support = build_support(train.examples, InferenceMode.cluster(1, seed=1))
print(f"support: {len(support)} centroids (k=1 per class)")

test_feats = test.features_matrix()
test_labels = test.labels_array()


def report(tau):
    probs, _ = batch_predict(test_feats, support, tau)
    rel = expected_calibration_error(probs, test_labels, bin_count=10)
    err = float(np.mean(probs.argmax(axis=1) != test_labels))
    return probs, rel, err


probs_1, rel_1, err_1 = report(1.0)
print(f"before scaling: test error {err_1:.3f}, ECE {rel_1.ece:.4f}, NLL {nll(probs_1, test_labels):.4f}")

tau_star = temperature_scale(val.examples, support)
probs_s, rel_s, err_s = report(tau_star)
print(f"tau* from the val sweep: {tau_star:.4f}")
print(f"after scaling:  test error {err_s:.3f}, ECE {rel_s.ece:.4f}, NLL {nll(probs_s, test_labels):.4f}")
assert err_s == err_1  # single-entry classes: argmax invariant across tau

taus, nlls = temperature_sweep(val.examples, support)
print(f"\nval NLL curve: min {nlls.min():.4f} at tau={taus[nlls.argmin()]:.3f}, "
      f"at tau=1 it is {nlls[np.argmin(np.abs(taus - 1.0))]:.4f}")

# label smoothing targets (used during training when enabled)
[smoothed] = smooth_labels([OneHotLabel(3, 0)])
print("\nsmoothed one-hot (eps=0.1, C=3):", smoothed.to_vector())

try:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
except ImportError:
    print("matplotlib not installed; skipping reliability plots")
else:
    for name, rel in (("reliability_before.png", rel_1), ("reliability_after.png", rel_s)):
        fig, ax = plt.subplots(figsize=(4, 4))
        centers = [(b.lower + b.upper) / 2 for b in rel.bins]
        ax.bar(centers, [b.accuracy for b in rel.bins], width=0.09, label="accuracy")
        ax.plot([0, 1], [0, 1], "k:", label="perfect")
        ax.plot(centers, [b.mean_confidence for b in rel.bins], "r.", label="confidence")
        ax.set_xlabel("confidence")
        ax.set_ylabel("accuracy")
        ax.set_title(f"ECE = {rel.ece:.4f}")
        ax.legend()
        fig.tight_layout()
        fig.savefig(name, dpi=100)
        print("wrote", name)
