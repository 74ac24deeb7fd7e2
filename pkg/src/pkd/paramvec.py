"""Flat parameter vectors with named segments and a textual checkpoint format.

The checkpoint format is self-describing: a header listing every segment
(name, shape, offset into the flat array) followed by one C99 hex float
literal per value.  Hex literals make save -> load -> save byte-identical.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_MAGIC = "pkd-paramvector v1"


class CheckpointError(RuntimeError):
    pass


@dataclass(frozen=True)
class Segment:
    name: str
    shape: tuple[int, ...]
    offset: int

    @property
    def size(self) -> int:
        return int(np.prod(self.shape)) if self.shape else 1


class ParamVector:
    """A flat float64 array partitioned into contiguous named segments."""

    def __init__(self, values: np.ndarray, layout: list[Segment]):
        values = np.asarray(values, dtype=np.float64).ravel()
        offset = 0
        for seg in layout:
            if seg.offset != offset:
                raise ValueError(f"segment {seg.name!r}: offset {seg.offset} != expected {offset}")
            offset += seg.size
        if offset != values.size:
            raise ValueError(f"layout covers {offset} values, array has {values.size}")
        self.values = values
        self.layout = list(layout)
        self._index = {seg.name: seg for seg in layout}

    @classmethod
    def from_arrays(cls, arrays: dict[str, np.ndarray]) -> "ParamVector":
        layout, chunks, offset = [], [], 0
        for name, arr in arrays.items():
            arr = np.asarray(arr, dtype=np.float64)
            layout.append(Segment(name, tuple(arr.shape), offset))
            chunks.append(arr.ravel())
            offset += arr.size
        values = np.concatenate(chunks) if chunks else np.zeros(0)
        return cls(values, layout)

    @property
    def size(self) -> int:
        return self.values.size

    def names(self) -> list[str]:
        return [seg.name for seg in self.layout]

    def view(self, name: str) -> np.ndarray:
        seg = self._index[name]
        return self.values[seg.offset : seg.offset + seg.size].reshape(seg.shape)

    def segment_of(self, flat_index: int) -> str:
        for seg in self.layout:
            if seg.offset <= flat_index < seg.offset + seg.size:
                return seg.name
        raise IndexError(flat_index)

    def copy(self) -> "ParamVector":
        return ParamVector(self.values.copy(), self.layout)

    def replaced(self, values: np.ndarray) -> "ParamVector":
        """Same layout, new flat values."""
        return ParamVector(np.array(values, dtype=np.float64), self.layout)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, ParamVector)
            and self.layout == other.layout
            and np.array_equal(self.values, other.values)
        )

    def save(self, path) -> None:
        lines = [_MAGIC, f"segments {len(self.layout)}"]
        for seg in self.layout:
            dims = " ".join(str(d) for d in seg.shape)
            lines.append(f"segment {seg.name} {len(seg.shape)} {dims} {seg.offset}".rstrip())
        lines.append("data")
        lines.extend(float(v).hex() for v in self.values)
        with open(path, "w") as f:
            f.write("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path) -> "ParamVector":
        with open(path) as f:
            lines = f.read().splitlines()
        if not lines or lines[0] != _MAGIC:
            raise CheckpointError(f"{path}: not a paramvector checkpoint")
        n_seg = int(lines[1].split()[1])
        layout = []
        for line in lines[2 : 2 + n_seg]:
            parts = line.split()
            if parts[0] != "segment":
                raise CheckpointError(f"{path}: malformed header line {line!r}")
            name, ndim = parts[1], int(parts[2])
            shape = tuple(int(d) for d in parts[3 : 3 + ndim])
            offset = int(parts[3 + ndim])
            layout.append(Segment(name, shape, offset))
        if lines[2 + n_seg] != "data":
            raise CheckpointError(f"{path}: missing data marker")
        try:
            values = np.array([float.fromhex(s) for s in lines[3 + n_seg :]], dtype=np.float64)
            return cls(values, layout)
        except ValueError as exc:
            raise CheckpointError(f"{path}: {exc}") from exc
