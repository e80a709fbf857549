"""One-hot encoding of categorical feature vectors.

Each slot contributes one binary column per distinct value observed at fit
time; values unseen at transform time encode as all zeros in that slot,
because Internet-scale prediction will meet categories absent from
training.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import SchemaError


@dataclass(frozen=True)
class OheVocabulary:
    slots: tuple[str, ...]
    values: dict[str, tuple[str, ...]]  # slot -> sorted observed values
    version: int = 1
    _index: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        offset = 0
        for slot in self.slots:
            for v in self.values[slot]:
                self._index[(slot, v)] = offset
                offset += 1
        object.__setattr__(self, "_width", offset)

    @property
    def width(self) -> int:
        return self._width

    def column_names(self) -> list[str]:
        return [f"{slot}={v}" for slot in self.slots for v in self.values[slot]]

    def slot_column_ranges(self) -> dict[str, tuple[int, int]]:
        ranges = {}
        offset = 0
        for slot in self.slots:
            n = len(self.values[slot])
            ranges[slot] = (offset, offset + n)
            offset += n
        return ranges

    def to_dict(self) -> dict:
        return {
            "version": self.version,
            "slots": list(self.slots),
            "values": {slot: list(vals) for slot, vals in self.values.items()},
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "OheVocabulary":
        return cls(
            slots=tuple(doc["slots"]),
            values={slot: tuple(vals) for slot, vals in doc["values"].items()},
            version=doc.get("version", 1),
        )


def fit_ohe(vectors: list[dict[str, str]]) -> OheVocabulary:
    """Vocabulary over observed values; all vectors must share one schema."""
    if not vectors:
        raise SchemaError("cannot fit a vocabulary on an empty vector list")
    slots = tuple(vectors[0])
    slot_set = set(slots)
    observed: dict[str, set[str]] = {slot: set() for slot in slots}
    for vec in vectors:
        if set(vec) != slot_set:
            raise SchemaError("feature vectors disagree on slot names")
        for slot, value in vec.items():
            observed[slot].add(value)
    return OheVocabulary(
        slots=slots, values={slot: tuple(sorted(observed[slot])) for slot in slots}
    )


def transform(vocabulary: OheVocabulary, vector: dict[str, str]) -> np.ndarray:
    return transform_many(vocabulary, [vector])[0]


def transform_many(vocabulary: OheVocabulary, vectors: list[dict[str, str]]) -> np.ndarray:
    """Binary matrix, exactly one 1 per slot for in-vocabulary values."""
    out = np.zeros((len(vectors), vocabulary.width), dtype=np.float32)
    index = vocabulary._index
    slot_set = set(vocabulary.slots)
    for row, vec in enumerate(vectors):
        if set(vec) != slot_set:
            raise SchemaError("vector slots do not match the vocabulary schema")
        for slot, value in vec.items():
            col = index.get((slot, value))
            if col is not None:
                out[row, col] = 1.0
    return out
