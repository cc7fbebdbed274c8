"""The inspector's intervention loop, driven in-process.

The HTTP service (`nw serve`) wraps an InspectorSession; this script drives
the same session object directly: find the least confident test query, look
at its harmful support elements, exclude them, and watch the prediction and
the reliability report update. Every number the service returns comes from
these same pure library calls.
"""

import tempfile
from pathlib import Path

from nwkit import TrainConfig, generate_blobs, save_checkpoint, split, train
from nwkit.data import save_csv
from nwkit.server import InspectorSession

# a quick model over slightly overlapping blobs
data = generate_blobs(3, 120, 2, separation=3.5, noise_sd=1.2, seed=30)
tagged = split(data, (0.6, 0.2, 0.2), seed=31)
splits = {t: tagged.subset(t) for t in ("train", "val", "test")}
model, _ = train(
    splits["train"], splits["val"],
    TrainConfig(steps=400, hidden=(32, 32), embed_dim=2, seed=32, lr_decay_steps=(300,)),
)

workdir = Path(tempfile.mkdtemp())
for tag, part in splits.items():
    save_csv(part, workdir / f"{tag}.csv")
ckpt = workdir / "checkpoint.json"
save_checkpoint(model, ckpt, extra={"class_count": 3})

session = InspectorSession.from_paths(ckpt, workdir, tau=1.0)
print("session:", session.summary())

# surface conspicuous predictions: sort by confidence ascending
queries = session.list_queries(limit=3, sort="confidence", order="asc")
for row in queries["rows"]:
    marker = "" if row["correct"] else "   <- wrong"
    print(f"  {row['id']}: predicted {row['predicted_class']} "
          f"(true {row['true_label']}) at confidence {row['confidence']:.3f}{marker}")

target = queries["rows"][0]["id"]
before = session.predict(target, top=3)
print(f"\ninspecting {target}: probs {[round(p, 3) for p in before['probs']]}")

ranking = session.influence(target, top=3)
print("harmful support elements:")
for row in ranking["harmful"]:
    print(f"  {row['support_id']} (label {row['label']}) influence {row['influence']:+.4f}")

# intervene: exclude the most harmful elements
to_exclude = [row["support_id"] for row in ranking["harmful"]]
view = session.update_exclusions(add=to_exclude)
print(f"\nexcluded {view['exclusion_count']} elements; support is now {view['support_size']}")
after = session.predict(target, top=3)
print(f"probs before {[round(p, 3) for p in before['probs']]}")
print(f"probs after  {[round(p, 3) for p in after['probs']]}")

rel_before = session.reset_exclusions() and session.reliability(bins=10)
session.update_exclusions(add=to_exclude)
rel_after = session.reliability(bins=10)
print(f"\ntest ECE without exclusions {rel_before['ece']:.4f}, with {rel_after['ece']:.4f}")

session.reset_exclusions()
restored = session.predict(target, top=3)
assert restored["probs"] == before["probs"]
print("reset restores the baseline prediction exactly")
