"""Fold-wise conversion protocol for objective evaluation.

Every test movement of every fold is re-generated towards each other
emotion (and optionally towards its own) using only the fold's training
movements; the stand-in kNN recognizer, trained on the same fold, labels
each output.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from affectmotion.dataset import LabeledDataset, kfold_split
from affectmotion.evaluation import ConfusionMatrix, KNNClassifier, confusion_matrix, select_exemplar
from affectmotion.generation import GenerationConfig, GenerationError, generate
from affectmotion.lma import feature_matrix, lma_vector
from affectmotion.rmlr import RMLRModel


@dataclass
class Conversion:
    fold: int
    source_id: str
    original: str
    target: str
    predicted: str | None
    error: str | None = None
    features: np.ndarray | None = field(default=None, repr=False)

    @property
    def correct(self) -> bool:
        return self.predicted == self.target


@dataclass
class EvaluationResult:
    conversions: list[Conversion]
    label_set: tuple[str, ...]
    warnings: list[str]

    def _pick(self, self_conversion: bool) -> list[Conversion]:
        return [
            c
            for c in self.conversions
            if (c.original == c.target) == self_conversion and c.predicted is not None
        ]

    def confusion(self, self_conversion: bool = False) -> ConfusionMatrix:
        """Target x predicted counts over successful conversions."""
        rows = self._pick(self_conversion)
        return confusion_matrix(
            [c.target for c in rows], [c.predicted for c in rows], self.label_set
        )

    def accuracy(self, self_conversion: bool = False) -> float:
        """Share of attempted conversions recognized as their target.

        Failed generations count as misses.
        """
        att = [c for c in self.conversions if (c.original == c.target) == self_conversion]
        if not att:
            return float("nan")
        return sum(c.correct for c in att) / len(att)

    def exemplars(self, seed: int = 0) -> dict[str, str]:
        """Per target emotion, the exemplar conversion as ``<source>_to_<target>``."""
        out = {}
        for lab in self.label_set:
            rows = [c for c in self._pick(False) if c.target == lab]
            if len(rows) < 2:
                continue
            idx, _, _ = select_exemplar(np.array([c.features for c in rows]), seed=seed)
            out[lab] = f"{rows[idx].source_id}_to_{lab}"
        return out

    def log_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["fold", "source_id", "original", "target", "predicted", "error"])
        for c in self.conversions:
            w.writerow([c.fold, c.source_id, c.original, c.target, c.predicted or "", c.error or ""])
        return buf.getvalue()

    def summary_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["metric", "value"])
        conv = [c for c in self.conversions if c.original != c.target]
        w.writerow(["attempted_conversions", len(conv)])
        w.writerow(["failed_conversions", sum(c.predicted is None for c in conv)])
        w.writerow(["conversion_accuracy", f"{self.accuracy(False):.6g}"])
        selfc = [c for c in self.conversions if c.original == c.target]
        if selfc:
            w.writerow(["attempted_self_conversions", len(selfc)])
            w.writerow(["self_conversion_accuracy", f"{self.accuracy(True):.6g}"])
        return buf.getvalue()


def evaluate_conversions(
    dataset: LabeledDataset,
    rmlr_model: RMLRModel,
    config: GenerationConfig = GenerationConfig(),
    n_folds: int = 10,
    seed: int = 0,
    include_self: bool = False,
    features: np.ndarray | None = None,
) -> EvaluationResult:
    """Run the fold-wise protocol and recognize every output.

    Movements are expected to be scale-normalized already.  Generation
    failures are recorded on the conversion (prediction None) rather than
    raised; a fold whose training part lacks the target class skips that
    case with a warning.
    """
    ms = dataset.marker_set
    F = feature_matrix(dataset.movements, ms, config.feature_filter) if features is None else features
    labels = dataset.labels
    notes: list[str] = []
    rows: list[Conversion] = []
    for f_i, (train, test) in enumerate(kfold_split(dataset, n_folds, seed)):
        train_labels = [labels[i] for i in train]
        present = set(train_labels)
        sub = LabeledDataset(
            ms, [dataset.movements[i] for i in train], tuple(l for l in dataset.label_set if l in present)
        )
        knn = KNNClassifier(F[train], train_labels)
        for i in test:
            mv = dataset.movements[i]
            for target in dataset.label_set:
                if target == mv.label and not include_self:
                    continue
                if target not in present:
                    notes.append(f"fold {f_i}: no {target!r} movements in training; {mv.source_id} skipped")
                    continue
                try:
                    res = generate(
                        mv, target, sub, rmlr_model, config, features=F[train], desired_features=F[i]
                    )
                except GenerationError as exc:
                    rows.append(Conversion(f_i, mv.source_id, mv.label, target, None, str(exc)))
                    continue
                vec = lma_vector(res.output, ms, config.feature_filter).as_array()
                pred = knn.predict(vec)[0]
                rows.append(Conversion(f_i, mv.source_id, mv.label, target, pred, None, vec))
    return EvaluationResult(rows, dataset.label_set, notes)
