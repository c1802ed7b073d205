"""Shared primitives: the TBT1 binary tensor format, part vocabularies,
and the thresholded weighted-voting kernel used by every voting stage.

The TBT1 format is deliberately tiny: magic ``TBT1``, one dtype code byte,
one ndim byte, ``ndim`` u32 little-endian extents, then the raw row-major
little-endian payload. It exists so that feature grids, masks, and label
rasters move between processes (and between this engine and external
extractors) without pulling in a heavyweight array container.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass, field

import numpy as np

MAGIC = b"TBT1"

#: label id reserved for "unlabeled / background" everywhere in the pipeline
UNLABELED = -1

_DTYPE_BY_CODE = {
    1: np.dtype("<f4"),
    2: np.dtype("<i4"),
    3: np.dtype("<u2"),
    4: np.dtype("<u1"),
}
_CODE_BY_NAME = {"f32": 1, "i32": 2, "u16": 3, "u8": 4}
_NAME_BY_CODE = {code: name for name, code in _CODE_BY_NAME.items()}


class TensorFormatError(ValueError):
    """Raised when a byte stream does not parse as a TBT1 tensor."""


class BadMagicError(TensorFormatError):
    pass


class UnknownDtypeError(TensorFormatError):
    pass


class TruncatedPayloadError(TensorFormatError):
    def __init__(self, expected: int, actual: int):
        super().__init__(
            f"payload truncated: expected {expected} bytes, got {actual}"
        )
        self.expected = expected
        self.actual = actual


class TensorWriteError(IOError):
    """Sink failure during write; carries the byte offset reached."""

    def __init__(self, offset: int, cause: BaseException):
        super().__init__(f"write failed at byte offset {offset}: {cause}")
        self.offset = offset


@dataclass(frozen=True)
class TensorFile:
    """A dense tensor restricted to the four dtypes the pipeline moves around."""

    array: np.ndarray

    def __post_init__(self):
        arr = np.ascontiguousarray(self.array)
        if arr.dtype not in _DTYPE_BY_CODE.values():
            # normalize to the little-endian equivalent if byte order differs
            eq = next(
                (d for d in _DTYPE_BY_CODE.values() if d == arr.dtype.newbyteorder("<")),
                None,
            )
            if eq is None:
                raise TensorFormatError(
                    f"unsupported dtype {arr.dtype}; expected one of f32/i32/u16/u8"
                )
            arr = arr.astype(eq)
        if arr.ndim < 1 or arr.ndim > 255:
            raise TensorFormatError(f"ndim {arr.ndim} outside [1, 255]")
        object.__setattr__(self, "array", arr)

    @property
    def dtype_code(self) -> str:
        return _NAME_BY_CODE[
            next(c for c, d in _DTYPE_BY_CODE.items() if d == self.array.dtype)
        ]

    @property
    def shape(self) -> tuple[int, ...]:
        return self.array.shape

    def __eq__(self, other) -> bool:
        if not isinstance(other, TensorFile):
            return NotImplemented
        return (
            self.array.dtype == other.array.dtype
            and self.array.shape == other.array.shape
            and bool(np.array_equal(self.array, other.array))
        )


def write_tensor(t: TensorFile, sink) -> int:
    """Serialize to ``sink`` (a binary file object); returns bytes written."""
    code = _CODE_BY_NAME[t.dtype_code]
    header = MAGIC + bytes([code, t.array.ndim])
    header += b"".join(int(e).to_bytes(4, "little") for e in t.array.shape)
    payload = t.array.tobytes(order="C")
    written = 0
    for chunk in (header, payload):
        try:
            sink.write(chunk)
        except OSError as exc:
            raise TensorWriteError(written, exc) from exc
        written += len(chunk)
    return written


def read_tensor(source) -> TensorFile:
    """Inverse of :func:`write_tensor`; raises a distinct error per defect."""
    magic = source.read(4)
    if magic != MAGIC:
        raise BadMagicError(f"bad magic {magic!r}, expected {MAGIC!r}")
    head = source.read(2)
    if len(head) < 2:
        raise TensorFormatError("truncated header: missing dtype/ndim bytes")
    code, ndim = head[0], head[1]
    if code not in _DTYPE_BY_CODE:
        raise UnknownDtypeError(f"unknown dtype code {code}")
    if ndim < 1:
        raise TensorFormatError(f"ndim {ndim} outside [1, 255]")
    raw_shape = source.read(4 * ndim)
    if len(raw_shape) < 4 * ndim:
        raise TensorFormatError(
            f"truncated header: expected {4 * ndim} shape bytes, got {len(raw_shape)}"
        )
    shape = tuple(
        int.from_bytes(raw_shape[4 * i : 4 * i + 4], "little") for i in range(ndim)
    )
    dtype = _DTYPE_BY_CODE[code]
    n_elems = 1
    for e in shape:
        n_elems *= e
    expected = n_elems * dtype.itemsize
    payload = source.read(expected)
    if len(payload) < expected:
        raise TruncatedPayloadError(expected, len(payload))
    arr = np.frombuffer(payload, dtype=dtype).reshape(shape)
    return TensorFile(arr.copy())


def save_tensor(array: np.ndarray, path) -> int:
    with open(path, "wb") as f:
        return write_tensor(TensorFile(array), f)


def load_tensor(path) -> np.ndarray:
    with open(path, "rb") as f:
        return read_tensor(f).array


def tensor_bytes(array: np.ndarray) -> bytes:
    buf = io.BytesIO()
    write_tensor(TensorFile(array), buf)
    return buf.getvalue()


@dataclass(frozen=True)
class PartVocabulary:
    """Ordered part taxonomy; label ids are the positions, -1 means unlabeled."""

    names: tuple[str, ...]

    def __post_init__(self):
        names = tuple(self.names)
        if len(set(names)) != len(names):
            raise ValueError("part names must be unique")
        object.__setattr__(self, "names", names)

    def __len__(self) -> int:
        return len(self.names)

    def __iter__(self):
        return iter(enumerate(self.names))

    def name_of(self, label: int) -> str:
        if not 0 <= label < len(self.names):
            raise KeyError(f"label id {label} not in vocabulary")
        return self.names[label]

    def id_of(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise KeyError(f"part name {name!r} not in vocabulary") from None

    def labels(self) -> list[int]:
        return list(range(len(self.names)))

    def contains(self, label: int) -> bool:
        return label == UNLABELED or 0 <= label < len(self.names)

    def to_dict(self) -> dict:
        return {"parts": [{"id": i, "name": n} for i, n in enumerate(self.names)]}

    @classmethod
    def from_dict(cls, doc: dict) -> "PartVocabulary":
        parts = doc.get("parts")
        if not isinstance(parts, list):
            raise ValueError("vocabulary document missing 'parts' list")
        entries = sorted(parts, key=lambda p: p["id"])
        ids = [p["id"] for p in entries]
        if ids != list(range(len(ids))):
            raise ValueError(f"label ids must be contiguous from 0, got {ids}")
        return cls(tuple(p["name"] for p in entries))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "PartVocabulary":
        return cls.from_dict(json.loads(text))

    def save(self, path) -> None:
        with open(path, "w") as f:
            f.write(self.to_json())

    @classmethod
    def load(cls, path) -> "PartVocabulary":
        with open(path) as f:
            return cls.from_json(f.read())


class VoteTally:
    """Non-negative weights accumulated per label id, with a dominance cutoff.

    Sums are always taken in ascending label-id order so that repeated runs
    (and any parallel callers that merge per-label partials) reproduce the
    same floating point totals bit for bit.
    """

    __slots__ = ("weights", "cutoff")

    def __init__(self, cutoff: float = 0.6):
        if not 0.0 < cutoff <= 1.0:
            raise ValueError(f"cutoff must be in (0, 1], got {cutoff}")
        self.weights: dict[int, float] = {}
        self.cutoff = cutoff

    def add(self, label: int, weight: float) -> None:
        if label < 0:
            raise ValueError(f"votable label ids are >= 0, got {label}")
        if weight < 0:
            raise ValueError(f"vote weight must be non-negative, got {weight}")
        self.weights[label] = self.weights.get(label, 0.0) + weight

    @classmethod
    def from_pairs(cls, pairs, cutoff: float = 0.6) -> "VoteTally":
        """Build a tally from (label, weight) pairs, order-invariantly.

        Weights are grouped per label, sorted by value, then summed; labels
        are inserted in ascending id order. Any permutation of ``pairs``
        therefore yields a bitwise-identical tally.
        """
        grouped: dict[int, list[float]] = {}
        for label, weight in pairs:
            grouped.setdefault(label, []).append(weight)
        tally = cls(cutoff)
        for label in sorted(grouped):
            for w in sorted(grouped[label]):
                tally.add(label, w)
        return tally

    def total(self) -> float:
        return sum(self.weights[k] for k in sorted(self.weights))

    def __repr__(self) -> str:
        inner = ", ".join(f"{k}: {self.weights[k]:g}" for k in sorted(self.weights))
        return f"VoteTally({{{inner}}}, cutoff={self.cutoff})"


def dominant_label(tally: VoteTally) -> int | None:
    """The label holding a unique maximum weight that is >= cutoff * total.

    Returns None when no label dominates (including ties for the maximum).
    A tally with no positive weight is a caller bug and raises.
    """
    labels = sorted(tally.weights)
    total = 0.0
    best = None
    best_w = -1.0
    tied = False
    for k in labels:
        w = tally.weights[k]
        total += w
        if w > best_w:
            best, best_w, tied = k, w, False
        elif w == best_w:
            tied = True
    if total <= 0.0:
        raise ValueError("cannot vote on a tally with no positive weight")
    if tied:
        return None
    return best if best_w >= tally.cutoff * total else None
