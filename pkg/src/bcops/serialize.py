"""Versioned JSON round trip for fitted prediction-set models.

The document stores each underlying learner once (forests and K-class
models are shared by several calibrated entries) and reconnects the
score-function adapters on load, so a saved model predicts identically.
"""

from __future__ import annotations

from dataclasses import asdict

import numpy as np

from . import __version__
from .conformal import (
    CalibratedClassScorer,
    PredictionSetModel,
    ClassProbScore,
    LogDensityScore,
)
from .learners import (
    BinaryScorer,
    LearnerConfig,
    MulticlassScorer,
    RandomForest,
)
from .learners.config import KIND_GLM, KIND_RF
from .learners.kde import DensityModelMulti
from .learners.linear import LogisticModel, MultinomialModel

FORMAT_VERSION = 1


def _model_state(model) -> dict:
    if isinstance(model, RandomForest):
        return {"type": "forest", "state": model.to_state()}
    if isinstance(model, LogisticModel):
        return {"type": "logistic", "state": model.to_state()}
    if isinstance(model, MultinomialModel):
        return {"type": "multinomial", "state": model.to_state()}
    if isinstance(model, DensityModelMulti):
        return {
            "type": "kde-multi",
            "state": {
                "values": model.values.tolist(),
                "bandwidths": model.bandwidths.tolist(),
            },
        }
    raise TypeError(f"cannot serialize model of type {type(model).__name__}")


def _model_from_state(doc: dict):
    kind = doc["type"]
    if kind == "forest":
        return RandomForest.from_state(doc["state"])
    if kind == "logistic":
        return LogisticModel.from_state(doc["state"])
    if kind == "multinomial":
        return MultinomialModel.from_state(doc["state"])
    if kind == "kde-multi":
        state = doc["state"]
        return DensityModelMulti(
            values=np.asarray(state["values"], dtype=np.float64),
            bandwidths=np.asarray(state["bandwidths"], dtype=np.float64),
        )
    raise ValueError(f"unknown model type {kind!r}")


class _ModelRegistry:
    """Deduplicates shared underlying models by object identity."""

    def __init__(self):
        self.ids: dict[int, str] = {}
        self.docs: dict[str, dict] = {}

    def register(self, model) -> str:
        key = id(model)
        if key not in self.ids:
            name = f"m{len(self.ids)}"
            self.ids[key] = name
            self.docs[name] = _model_state(model)
        return self.ids[key]


def _scorer_doc(scorer, registry: _ModelRegistry) -> dict:
    if isinstance(scorer, BinaryScorer):
        return {
            "adapter": "binary",
            "model": registry.register(scorer.model),
            "kind": scorer.kind,
            "p": scorer.p,
            "n_pos": scorer.n_pos,
            "n_neg": scorer.n_neg,
            "seed": scorer.seed,
            "class_weighting": scorer.class_weighting,
        }
    if isinstance(scorer, LogDensityScore):
        return {"adapter": "log-density", "model": registry.register(scorer.kde)}
    if isinstance(scorer, ClassProbScore):
        return {
            "adapter": "class-prob",
            "model": registry.register(scorer.model.model),
            "kind": scorer.model.kind,
            "p": scorer.model.p,
            "class_count": scorer.model.class_count,
            "seed": scorer.model.seed,
            "class_id": scorer.class_id,
        }
    raise TypeError(f"cannot serialize scorer of type {type(scorer).__name__}")


def _scorer_from_doc(doc: dict, models: dict):
    adapter = doc["adapter"]
    if adapter == "binary":
        return BinaryScorer(
            kind=doc["kind"],
            model=models[doc["model"]],
            p=doc["p"],
            n_pos=doc["n_pos"],
            n_neg=doc["n_neg"],
            seed=doc["seed"],
            class_weighting=doc["class_weighting"],
        )
    if adapter == "log-density":
        return LogDensityScore(kde=models[doc["model"]])
    if adapter == "class-prob":
        scorer = MulticlassScorer(
            kind=doc["kind"],
            model=models[doc["model"]],
            p=doc["p"],
            class_count=doc["class_count"],
            seed=doc["seed"],
        )
        return ClassProbScore(model=scorer, class_id=doc["class_id"])
    raise ValueError(f"unknown scorer adapter {adapter!r}")


def _entry_doc(key: tuple[int, int], entry: CalibratedClassScorer, registry) -> dict:
    return {
        "key_class": key[0],
        "key_fold": key[1],
        "class_id": entry.class_id,
        "scorer_fold": entry.scorer_fold,
        "calib_fold": entry.calib_fold,
        "scorer": _scorer_doc(entry.scorer, registry),
        "calib_scores": entry.calib_scores.tolist(),
    }


def _entry_from_doc(doc: dict, models: dict):
    entry = CalibratedClassScorer(
        class_id=doc["class_id"],
        scorer_fold=doc["scorer_fold"],
        calib_fold=doc["calib_fold"],
        scorer=_scorer_from_doc(doc["scorer"], models),
        calib_scores=np.asarray(doc["calib_scores"], dtype=np.float64),
    )
    return (doc["key_class"], doc["key_fold"]), entry


def model_to_doc(model: PredictionSetModel) -> dict:
    """Serialize a fitted model to a JSON-ready dictionary."""
    registry = _ModelRegistry()
    test_entries = [
        _entry_doc(key, entry, registry) for key, entry in sorted(model.test_entries.items())
    ]
    train_entries = [
        _entry_doc(key, entry, registry) for key, entry in sorted(model.train_entries.items())
    ]
    return {
        "format_version": FORMAT_VERSION,
        "library_version": __version__,
        "method": model.method,
        "class_count": model.class_count,
        "p": model.p,
        "seed": model.seed,
        "learner": None if model.learner is None else asdict(model.learner),
        "models": registry.docs,
        "test_entries": test_entries,
        "train_entries": train_entries,
        "train_fold_of": model.train_fold_of.tolist(),
        "test_fold_of": None if model.test_fold_of is None else model.test_fold_of.tolist(),
    }


def model_from_doc(doc: dict) -> PredictionSetModel:
    """Rebuild a fitted model from its JSON document."""
    if doc.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported model format version {doc.get('format_version')!r}")
    models = {name: _model_from_state(d) for name, d in doc["models"].items()}
    learner = None
    if doc["learner"] is not None:
        learner = LearnerConfig(**doc["learner"])
        if learner.kind not in (KIND_RF, KIND_GLM):
            raise ValueError(f"unknown learner kind {learner.kind!r}")
    test_entries = dict(_entry_from_doc(d, models) for d in doc["test_entries"])
    train_entries = dict(_entry_from_doc(d, models) for d in doc["train_entries"])
    return PredictionSetModel(
        method=doc["method"],
        class_count=doc["class_count"],
        p=doc["p"],
        seed=doc["seed"],
        learner=learner,
        test_entries=test_entries,
        train_entries=train_entries,
        train_fold_of=np.asarray(doc["train_fold_of"], dtype=np.int8),
        test_fold_of=(
            None
            if doc["test_fold_of"] is None
            else np.asarray(doc["test_fold_of"], dtype=np.int8)
        ),
    )
