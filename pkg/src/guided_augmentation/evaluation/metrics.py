"""Classification metrics."""

from typing import Sequence

from sklearn.metrics import f1_score

from guided_augmentation.corpus import Dataset, EmptyDataset
from guided_augmentation.evaluation.classifiers import ClassifierModel


def macro_f1_score(y_true: Sequence[str], y_pred: Sequence[str], classes: Sequence[str]) -> float:
    """Unweighted mean of per-class F1 over classes seen in either sequence.

    A class that never gets predicted scores 0.
    """
    seen = set(y_true) | set(y_pred)
    labels = [label for label in classes if label in seen]
    return float(f1_score(y_true, y_pred, labels=labels, average="macro", zero_division=0))


def macro_f1(model: ClassifierModel, test: Dataset) -> float:
    if not len(test):
        raise EmptyDataset("Cannot score an empty test set")
    return macro_f1_score(test.labels, model.predict(test), test.classes)
