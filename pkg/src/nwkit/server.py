"""HTTP/JSON inspector service: per-query predictions, influence rankings, and
a live support-exclusion loop.

Embeddings for the train and test splits are computed once at session start
and cached, along with the full test-to-support distance matrix; exclusions
are pure renormalization over the remaining entries and never re-extract
features. Session state is one in-memory value guarded by a lock: many
readers, exclusive writer, no persistence across restarts.
"""

from __future__ import annotations

import math
import threading

import numpy as np
from fastapi import FastAPI, HTTPException
from fastapi.middleware.cors import CORSMiddleware
from pydantic import BaseModel

from . import __version__
from .calibration import expected_calibration_error
from .core import (
    PredictionResult,
    batch_distances,
    batch_probs,
    batch_weights,
    class_sums,
    nw_weights,
)
from .errors import (
    CannotRemoveLastError,
    EmptySupportError,
    InvalidArgumentError,
    NWError,
    UndefinedLossError,
)
from .influence import support_influence
from .support import InferenceMode, build_support

__all__ = ["InspectorSession", "create_app"]


def _inf_safe(value: float):
    return "inf" if math.isinf(value) and value > 0 else float(value)


class InspectorSession:
    """Checkpoint + dataset + Full-mode base support + a mutable exclusion set."""

    def __init__(self, model, manifest, train_split, test_split, tau=1.0):
        from .trainer import embed_examples

        self.manifest = manifest
        self.tau = float(tau)
        self.train_size = len(train_split.examples)
        self.class_count = train_split.class_count
        emb_train = embed_examples(model, train_split.examples)
        self.base_support = build_support(
            emb_train, InferenceMode.full(), train_split.class_count
        )
        self.embed_dim = self.base_support.dim
        emb_test = embed_examples(model, test_split.examples)
        self.test_ids = [e.id for e in emb_test]
        self.test_labels = np.array([e.label for e in emb_test], dtype=np.intp)
        self.test_index = {qid: i for i, qid in enumerate(self.test_ids)}
        self.test_embeddings = np.stack([e.features for e in emb_test])
        self.distances = batch_distances(self.test_embeddings, self.base_support)
        self.exclusions: set[str] = set()
        self._lock = threading.Lock()

    @classmethod
    def from_paths(cls, checkpoint_path, data_dir, tau=1.0):
        from .cli import _load_splits, _require_split
        from .trainer import load_checkpoint

        model, manifest = load_checkpoint(checkpoint_path)
        splits = _load_splits(data_dir)
        return cls(
            model, manifest, _require_split(splits, "train"),
            _require_split(splits, "test"), tau=tau,
        )

    # -- snapshots ---------------------------------------------------------

    def _positions(self) -> list[int]:
        with self._lock:
            excluded = set(self.exclusions)
        return [i for i, sid in enumerate(self.base_support.ids) if sid not in excluded]

    def _query_row(self, query_id: str) -> int:
        if query_id not in self.test_index:
            raise KeyError(query_id)
        return self.test_index[query_id]

    def _predict_at(self, row: int, positions):
        sub = self.base_support.subset(positions)
        wv = nw_weights(np.ascontiguousarray(self.distances[row, positions]), self.tau)
        probs = class_sums(wv.weights, sub.labels, sub.class_count)
        return PredictionResult(probs=probs, weights=wv, query_id=self.test_ids[row]), sub

    def _batch_probs(self, positions):
        sub = self.base_support.subset(positions)
        weights = batch_weights(
            np.ascontiguousarray(self.distances[:, positions]), self.tau
        )
        return batch_probs(weights, sub)

    # -- views -------------------------------------------------------------

    def summary(self) -> dict:
        with self._lock:
            n_excluded = len(self.exclusions)
        return {
            "class_count": int(self.class_count),
            "embed_dim": int(self.embed_dim),
            "split_sizes": {"train": int(self.train_size), "test": len(self.test_ids)},
            "tau": self.tau,
            "exclusion_count": n_excluded,
            "support_size": self.train_size - n_excluded,
            "head": self.manifest.get("head", "nw"),
            "version": __version__,
        }

    def exclusion_view(self) -> dict:
        with self._lock:
            excluded = sorted(self.exclusions)
        return {
            "exclusions": excluded,
            "exclusion_count": len(excluded),
            "support_size": len(self.base_support) - len(excluded),
        }

    def list_queries(self, offset=0, limit=50, sort="id", order="asc") -> dict:
        probs = self._batch_probs(self._positions())
        predicted = probs.argmax(axis=1)
        confidence = probs[np.arange(len(self.test_ids)), predicted]
        rows = [
            {
                "id": qid,
                "true_label": int(self.test_labels[i]),
                "predicted_class": int(predicted[i]),
                "confidence": float(confidence[i]),
                "correct": bool(predicted[i] == self.test_labels[i]),
            }
            for i, qid in enumerate(self.test_ids)
        ]
        reverse = order == "desc"
        if sort == "confidence":
            rows.sort(key=lambda r: (r["confidence"], r["id"]), reverse=reverse)
        else:
            rows.sort(key=lambda r: r["id"], reverse=reverse)
        return {
            "total": len(rows),
            "offset": offset,
            "limit": limit,
            "rows": rows[offset : offset + limit],
        }

    def predict(self, query_id: str, top=10) -> dict:
        row = self._query_row(query_id)
        positions = self._positions()
        pred, sub = self._predict_at(row, positions)
        order = np.argsort(-pred.weights.weights, kind="stable")[: max(0, top)]
        entries = []
        for i in order:
            entry = {
                "id": sub.ids[int(i)],
                "label": int(sub.labels[int(i)]),
                "weight": float(pred.weights.weights[int(i)]),
                "source": sub.sources[int(i)],
                "same_class": bool(sub.labels[int(i)] == self.test_labels[row]),
            }
            if self.embed_dim == 2:
                entry["embedding"] = [float(v) for v in sub.features[int(i)]]
            entries.append(entry)
        out = {
            "query_id": query_id,
            "true_label": int(self.test_labels[row]),
            "predicted_class": pred.predicted_class,
            "confidence": pred.confidence,
            "probs": [float(p) for p in pred.probs],
            "weights_sum": float(pred.weights.weights.sum()),
            "support_size": len(positions),
            "tau": self.tau,
            "top": entries,
        }
        if self.embed_dim == 2:
            out["embedding"] = [float(v) for v in self.test_embeddings[row]]
        return out

    def influence(self, query_id: str, top=5) -> dict:
        row = self._query_row(query_id)
        positions = self._positions()
        pred, sub = self._predict_at(row, positions)
        true_label = int(self.test_labels[row])
        records = [
            support_influence(pred, sub, i, true_label) for i in range(len(sub))
        ]
        records.sort(key=lambda r: -r.influence)
        weight_of = dict(zip(sub.ids, pred.weights.weights))
        label_of = dict(zip(sub.ids, (int(l) for l in sub.labels)))
        source_of = dict(zip(sub.ids, sub.sources))
        m = min(top, len(records))

        def rows(selection):
            return [
                {
                    "support_id": r.support_id,
                    "influence": _inf_safe(r.influence),
                    "same_class": r.same_class,
                    "weight": float(weight_of[r.support_id]),
                    "label": label_of[r.support_id],
                    "source": source_of[r.support_id],
                }
                for r in selection
            ]

        return {
            "query_id": query_id,
            "true_label": true_label,
            "top": m,
            "helpful": rows(records[:m]),
            "harmful": rows(records[::-1][:m]),
        }

    def reliability(self, bins=15) -> dict:
        probs = self._batch_probs(self._positions())
        return expected_calibration_error(probs, self.test_labels, bins).to_dict()

    # -- mutations ---------------------------------------------------------

    def update_exclusions(self, add=(), remove=()) -> dict:
        base_ids = set(self.base_support.ids)
        for sid in list(add) + list(remove):
            if sid not in base_ids:
                raise KeyError(sid)
        with self._lock:
            proposed = (self.exclusions | set(add)) - set(remove)
            if len(proposed) >= len(self.base_support):
                raise EmptySupportError("exclusions would empty the support set")
            self.exclusions = proposed
        return self.exclusion_view()

    def reset_exclusions(self) -> dict:
        with self._lock:
            self.exclusions = set()
        return self.exclusion_view()


class ExclusionUpdate(BaseModel):
    add: list[str] = []
    remove: list[str] = []


def create_app(session: InspectorSession | None = None, ui_dir=None) -> FastAPI:
    """Build the inspector app; ``session`` may be attached later via app.state."""
    app = FastAPI(title="nw support-set inspector", version=__version__)
    app.state.session = session
    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_methods=["*"],
        allow_headers=["*"],
    )

    def need_session() -> InspectorSession:
        if app.state.session is None:
            raise HTTPException(status_code=503, detail="no checkpoint loaded")
        return app.state.session

    @app.get("/api/summary")
    def summary():
        return need_session().summary()

    @app.get("/api/queries")
    def queries(offset: int = 0, limit: int = 50, sort: str = "id", order: str = "asc"):
        if offset < 0 or limit < 1:
            raise HTTPException(status_code=400, detail="offset must be >= 0 and limit >= 1")
        if sort not in ("id", "confidence") or order not in ("asc", "desc"):
            raise HTTPException(status_code=400, detail="bad sort/order")
        return need_session().list_queries(offset, limit, sort, order)

    @app.get("/api/predict/{query_id}")
    def predict(query_id: str, top: int = 10):
        try:
            return need_session().predict(query_id, top)
        except KeyError:
            raise HTTPException(status_code=404, detail=f"unknown query id {query_id!r}")

    @app.get("/api/influence/{query_id}")
    def influence(query_id: str, top: int = 5):
        try:
            return need_session().influence(query_id, top)
        except KeyError:
            raise HTTPException(status_code=404, detail=f"unknown query id {query_id!r}")
        except (UndefinedLossError, CannotRemoveLastError) as exc:
            raise HTTPException(status_code=409, detail=str(exc))

    @app.get("/api/reliability")
    def reliability(bins: int = 15):
        try:
            return need_session().reliability(bins)
        except InvalidArgumentError as exc:
            raise HTTPException(status_code=400, detail=str(exc))

    @app.post("/api/exclusions")
    def update_exclusions(update: ExclusionUpdate):
        try:
            return need_session().update_exclusions(update.add, update.remove)
        except KeyError as exc:
            raise HTTPException(status_code=400, detail=f"unknown support id {exc.args[0]!r}")
        except EmptySupportError as exc:
            raise HTTPException(status_code=409, detail=str(exc))

    @app.delete("/api/exclusions")
    def reset_exclusions():
        return need_session().reset_exclusions()

    @app.get("/api/exclusions")
    def get_exclusions():
        return need_session().exclusion_view()

    @app.exception_handler(NWError)
    def nw_error_handler(_request, exc: NWError):
        from fastapi.responses import JSONResponse

        return JSONResponse(status_code=422, content={"detail": str(exc)})

    if ui_dir:
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=ui_dir, html=True), name="ui")
    return app
