from __future__ import annotations

from dataclasses import dataclass

import numpy as np

UNLABELED = -1


@dataclass
class LabeledBatch:
    """Images with class labels (``-1`` = unknown) and domain bits (0 source, 1 target)."""

    images: np.ndarray
    class_labels: np.ndarray
    domain_labels: np.ndarray

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        self.class_labels = np.asarray(self.class_labels, dtype=np.int64)
        self.domain_labels = np.asarray(self.domain_labels, dtype=np.int64)
        n = len(self.images)
        if len(self.class_labels) != n or len(self.domain_labels) != n:
            raise ValueError(f"batch of {n} images has {len(self.class_labels)} class labels "
                             f"and {len(self.domain_labels)} domain labels")

    def __len__(self):
        return len(self.images)

    @property
    def labeled(self):
        return self.class_labels != UNLABELED

    @classmethod
    def concat(cls, *batches):
        return cls(np.concatenate([b.images for b in batches]),
                   np.concatenate([b.class_labels for b in batches]),
                   np.concatenate([b.domain_labels for b in batches]))

    @classmethod
    def source(cls, images, labels):
        return cls(images, labels, np.zeros(len(images), dtype=np.int64))

    @classmethod
    def target(cls, images, labels=None):
        n = len(images)
        if labels is None:
            labels = np.full(n, UNLABELED)
        return cls(images, labels, np.ones(n, dtype=np.int64))
