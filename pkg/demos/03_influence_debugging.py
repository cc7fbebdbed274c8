"""Debugging a model with support influence.

Influence is the exact change in a query's loss caused by deleting one
support element: positive = helpful, negative = harmful. Here we plant a
mislabeled training point next to a query and watch the influence ranking
expose it, then remove it and verify the loss drops by exactly the predicted
amount.
"""

import math

import numpy as np

from nwkit import (
    LabeledExample,
    SupportSet,
    cross_entropy,
    loo_predict,
    nw_predict,
    rank_influence,
)

rng = np.random.default_rng(5)

# class 0 around the origin, class 1 far away... plus one point near the
# origin that is wrongly labeled 1 (a labeling mistake)
entries = [
    LabeledExample(f"good0-{i}", rng.normal(scale=0.5, size=2), 0) for i in range(6)
] + [
    LabeledExample(f"good1-{i}", rng.normal(loc=5.0, scale=0.5, size=2), 1) for i in range(6)
] + [
    LabeledExample("mislabeled", [0.2, -0.1], 1),
]
support = SupportSet(entries, class_count=2)
query = LabeledExample("query", [0.0, 0.0], 0)

pred = nw_predict(query, support, 1.0)
print("prediction for the query:", np.round(pred.probs, 4), "(true class 0)")
print("loss before any intervention:", round(cross_entropy(pred, 0), 4))

records = rank_influence(query, support, 1.0)
print("\nmost helpful support elements:")
for r in records[:3]:
    print(f"  {r.support_id:>12}  influence {r.influence:+.4f}  same_class={r.same_class}")
print("most harmful:")
for r in records[::-1][:3]:
    print(f"  {r.support_id:>12}  influence {r.influence:+.4f}  same_class={r.same_class}")

worst = records[-1]
assert worst.support_id == "mislabeled"
print("\nthe most harmful element is exactly the planted mislabeled point")

# the intervention loop: remove it and re-check. The closed form predicts the
# new loss without re-extracting anything.
idx = support.ids.index(worst.support_id)
after = loo_predict(pred, support, idx)
loss_before = cross_entropy(pred, 0)
loss_after = -math.log(after[0])
print(f"loss {loss_before:.4f} -> {loss_after:.4f} after removal")
print(f"difference {loss_after - loss_before:+.4f} equals the influence {worst.influence:+.4f}")
assert abs((loss_after - loss_before) - worst.influence) < 1e-10
