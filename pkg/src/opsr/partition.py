"""Labelled partitions of a ground state set."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Hashable, Sequence

import numpy as np


@dataclass(frozen=True)
class StateAbstraction:
    """Surjection from ground states ``0..n-1`` onto abstract class labels.

    Labels are arbitrary hashable values; using fingerprint hex strings makes
    classes comparable across tasks.  ``labels`` lists the distinct classes in
    order of first appearance and ``index`` maps each ground state to a
    position in ``labels``.
    """

    class_of: tuple

    def __post_init__(self):
        object.__setattr__(self, "class_of", tuple(self.class_of))
        labels: list = []
        pos: dict = {}
        index = np.empty(len(self.class_of), dtype=np.int64)
        for s, lab in enumerate(self.class_of):
            if lab not in pos:
                pos[lab] = len(labels)
                labels.append(lab)
            index[s] = pos[lab]
        index.setflags(write=False)
        object.__setattr__(self, "labels", tuple(labels))
        object.__setattr__(self, "_pos", pos)
        object.__setattr__(self, "index", index)

    @classmethod
    def from_labels(cls, labels: Sequence[Hashable]) -> "StateAbstraction":
        return cls(tuple(labels))

    @classmethod
    def identity(cls, n: int) -> "StateAbstraction":
        return cls(tuple(range(n)))

    @classmethod
    def coarsest(cls, n: int, label: Hashable = 0) -> "StateAbstraction":
        return cls((label,) * n)

    @property
    def n_states(self) -> int:
        return len(self.class_of)

    @property
    def n_classes(self) -> int:
        return len(self.labels)

    @property
    def classes(self) -> dict:
        out: dict = {lab: [] for lab in self.labels}
        for s, lab in enumerate(self.class_of):
            out[lab].append(s)
        return {lab: tuple(v) for lab, v in out.items()}

    def position(self, label: Hashable) -> int:
        return self._pos[label]

    def __contains__(self, label) -> bool:
        return label in self._pos

    def members(self, label: Hashable) -> np.ndarray:
        return np.nonzero(self.index == self._pos[label])[0]

    def blocks(self) -> frozenset:
        """The partition as a set of frozensets, ignoring labels."""
        return frozenset(frozenset(v) for v in self.classes.values())

    def same_partition(self, other: "StateAbstraction") -> bool:
        return self.n_states == other.n_states and self.blocks() == other.blocks()

    def restrict(self, states: Sequence[int]) -> "StateAbstraction":
        return StateAbstraction(tuple(self.class_of[s] for s in states))

    def to_dict(self) -> dict:
        return {str(s): lab for s, lab in enumerate(self.class_of)}

    @classmethod
    def from_dict(cls, d: dict) -> "StateAbstraction":
        return cls(tuple(d[str(s)] for s in range(len(d))))
