import json
import time

import numpy as np
import pytest

from nwkit.data import generate_blobs, save_csv, split
from nwkit.trainer import TrainConfig, save_checkpoint, train

# the pinned synthetic protocol: 3-class blobs, separation 6, unit noise,
# 300/120/300 train/val/test, d=2 extractor, 2000 steps
BLOB_SEED = 7
SPLIT_SEED = 11
TRAIN_SEED = 21
FRACTIONS = (100 / 240, 40 / 240, 100 / 240)

ACCEPTANCE_CONFIG = dict(
    batch_size=32,
    support_size=10,
    temperature=1.0,
    lr=1e-3,
    momentum=0.9,
    weight_decay=1e-4,
    steps=2000,
    lr_decay_steps=(1000, 1500),
    seed=TRAIN_SEED,
    hidden=(64, 64),
    embed_dim=2,
    eval_every=500,
)


def pytest_runtest_logreport(report):
    if report.when == "call" and "test_acceptance" in report.nodeid:
        outcome = "PASS" if report.passed else "FAIL"
        name = report.nodeid.split("::")[-1]
        print(f"\n[acceptance] {outcome} {name}")


@pytest.fixture(scope="session")
def blob_splits():
    data = generate_blobs(3, 240, 2, separation=6.0, noise_sd=1.0, seed=BLOB_SEED)
    tagged = split(data, FRACTIONS, seed=SPLIT_SEED)
    return {tag: tagged.subset(tag) for tag in ("train", "val", "test")}


@pytest.fixture(scope="session")
def data_dir(blob_splits, tmp_path_factory):
    root = tmp_path_factory.mktemp("blobs")
    for tag, part in blob_splits.items():
        save_csv(part, root / f"{tag}.csv")
    return root


@pytest.fixture(scope="session")
def trained(blob_splits):
    config = TrainConfig(**ACCEPTANCE_CONFIG)
    started = time.perf_counter()
    model, log = train(blob_splits["train"], blob_splits["val"], config)
    duration = time.perf_counter() - started
    return {"model": model, "log": log, "config": config, "duration": duration}


@pytest.fixture(scope="session")
def checkpoint_path(trained, blob_splits, tmp_path_factory):
    path = tmp_path_factory.mktemp("ckpt") / "checkpoint.json"
    save_checkpoint(
        trained["model"], path, trained["config"],
        extra={"class_count": blob_splits["train"].class_count},
    )
    return path
