"""User-sharded datasets, user-wise means and the imbalance diagnostic.

Local sample sizes are treated as public metadata and are written in the
clear by every exporter.

Two on-disk formats are supported:

``csv-long``
    header ``user_id,x_0,...,x_{d-1}``, one sample per row.
``jsonl-shards``
    one object per user, ``{"id": ..., "rows": [[...], ...]}``.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

FORMATS = ("csv-long", "jsonl-shards")


class DatasetError(ValueError):
    """Base class for ingestion and validation failures."""


class ParseError(DatasetError):
    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class DimensionError(DatasetError):
    pass


class ValidationError(DatasetError):
    pass


@dataclass(frozen=True, eq=False)
class UserDataset:
    """n user shards stored as one ``(N, d)`` block plus shard offsets.

    Shard ``i`` is ``values[offsets[i]:offsets[i + 1]]``. User order is the
    order of construction and is never changed.
    """

    values: np.ndarray
    offsets: np.ndarray
    user_ids: tuple = field(default=())

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        offsets = np.asarray(self.offsets, dtype=np.int64)
        if values.ndim != 2:
            raise DimensionError("values must be a 2-D (N, d) array")
        if offsets.ndim != 1 or offsets.size < 2:
            raise ValidationError("dataset needs at least one user")
        if offsets[0] != 0 or offsets[-1] != values.shape[0]:
            raise ValidationError("offsets must start at 0 and end at N")
        if np.any(np.diff(offsets) < 1):
            raise ValidationError("every user needs at least one sample")
        if values.shape[1] < 1:
            raise DimensionError("d must be at least 1")
        if not np.all(np.isfinite(values)):
            raise ValidationError("all coordinates must be finite")
        values.setflags(write=False)
        offsets = offsets.copy()
        offsets.setflags(write=False)
        ids = tuple(self.user_ids) if self.user_ids else tuple(str(i) for i in range(offsets.size - 1))
        if len(ids) != offsets.size - 1:
            raise ValidationError("user_ids length does not match the number of users")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "offsets", offsets)
        object.__setattr__(self, "user_ids", ids)

    @classmethod
    def from_shards(cls, shards: Iterable, user_ids: Optional[Sequence] = None) -> "UserDataset":
        blocks = []
        for i, shard in enumerate(shards):
            arr = np.asarray(shard, dtype=float)
            if arr.ndim == 1:
                arr = arr[:, None]
            if arr.ndim != 2:
                raise DimensionError(f"shard {i} is not a sequence of vectors")
            if arr.shape[0] == 0:
                raise ValidationError(f"user {i} has no samples")
            blocks.append(arr)
        if not blocks:
            raise ValidationError("dataset needs at least one user")
        dims = {b.shape[1] for b in blocks}
        if len(dims) != 1:
            raise DimensionError(f"inconsistent dimensions across shards: {sorted(dims)}")
        sizes = [b.shape[0] for b in blocks]
        offsets = np.concatenate([[0], np.cumsum(sizes)])
        return cls(np.vstack(blocks), offsets, tuple(user_ids) if user_ids is not None else ())

    @property
    def n(self) -> int:
        return self.offsets.size - 1

    @property
    def d(self) -> int:
        return self.values.shape[1]

    @property
    def sizes(self) -> np.ndarray:
        return np.diff(self.offsets)

    @property
    def total(self) -> int:
        return int(self.values.shape[0])

    def shard(self, i: int) -> np.ndarray:
        return self.values[self.offsets[i]:self.offsets[i + 1]]

    @property
    def shards(self) -> list:
        return [self.shard(i) for i in range(self.n)]

    def scaled(self, a: float) -> "UserDataset":
        return UserDataset(self.values * a, self.offsets, self.user_ids)


@dataclass
class UserSummary:
    """Per-user mean ``y_i``, size ``m_i``, and (once selected) weight and threshold."""

    mean: np.ndarray
    size: int
    weight: Optional[float] = None
    threshold: Optional[float] = None

    def __post_init__(self):
        if self.threshold is not None and not self.threshold > 0:
            raise ValidationError("threshold must be positive")


@dataclass(frozen=True)
class ImbalanceProfile:
    gamma: float
    m_c: float
    k_c: int  # 0-based index into the ascending sizes; n when the tail is empty
    tail_mass: int
    valid: bool = True


def user_means(ds: UserDataset) -> list:
    means = mean_matrix(ds)
    return [UserSummary(mean=means[i], size=int(m)) for i, m in enumerate(ds.sizes)]


def mean_matrix(ds: UserDataset) -> np.ndarray:
    """User means as an ``(n, d)`` array (vectorised form of :func:`user_means`)."""
    sums = np.add.reduceat(ds.values, ds.offsets[:-1], axis=0)
    return sums / ds.sizes[:, None]


def imbalance_degree(sizes: Sequence) -> ImbalanceProfile:
    """Smallest ``gamma >= 1`` such that users above ``gamma*N/n`` hold at most N/2 samples.

    The tail mass only changes at ``gamma = m_j * n / N``, so those values plus 1
    are the only candidates.
    """
    m = np.sort(np.asarray(sizes, dtype=np.int64))
    if m.size == 0 or np.any(m < 1):
        raise ValidationError("sizes must be nonempty and all >= 1")
    n = m.size
    total = int(m.sum())
    # tail[j] = sum of m[j:]
    tail = np.concatenate([np.cumsum(m[::-1])[::-1], [0]])
    # integer comparisons: m_i > gamma*N/n  <=>  m_i*n > gamma*N
    k_c = int(np.searchsorted(m * n, total, side="right"))
    if 2 * tail[k_c] <= total:
        return ImbalanceProfile(1.0, total / n, k_c, int(tail[k_c]))
    for size in np.unique(m):
        if size * n <= total:
            continue
        k_c = int(np.searchsorted(m, size, side="right"))
        if 2 * tail[k_c] <= total:
            return ImbalanceProfile(float(size * n / total), float(size), k_c, int(tail[k_c]))
    raise AssertionError("unreachable: the largest candidate empties the tail")


# ---------------------------------------------------------------------------
# file formats


def load_dataset(path, format: Optional[str] = None) -> UserDataset:
    path = Path(path)
    if format is None:
        format = "jsonl-shards" if path.suffix in (".jsonl", ".json") else "csv-long"
    if format not in FORMATS:
        raise ValueError(f"unknown format {format!r}; expected one of {FORMATS}")
    if not path.exists():
        raise FileNotFoundError(path)
    if format == "csv-long":
        return _load_csv(path)
    return _load_jsonl(path)


def _parse_float(tok: str, line: int) -> float:
    try:
        v = float(tok)
    except ValueError:
        raise ParseError(f"not a number: {tok!r}", line) from None
    if not math.isfinite(v):
        raise ParseError(f"non-finite value {tok!r}", line)
    return v


def _json_float(v, line: int) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ParseError(f"not a number: {v!r}", line)
    if not math.isfinite(v):
        raise ParseError(f"non-finite value {v!r}", line)
    return float(v)


def _load_csv(path: Path) -> UserDataset:
    groups: dict = {}
    d = None
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or not any(h.strip() for h in header):
            raise ParseError("empty file", 1)
        if header[0].strip() != "user_id" or len(header) < 2:
            raise ParseError("header must be user_id,x_0,...", 1)
        d = len(header) - 1
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) - 1 != d:
                raise DimensionError(f"line {line}: expected {d} coordinates, got {len(row) - 1}")
            uid = row[0].strip()
            if not uid:
                raise ParseError("missing user id", line)
            groups.setdefault(uid, []).append([_parse_float(t, line) for t in row[1:]])
    if not groups:
        raise ValidationError(f"{path}: no samples")
    return UserDataset.from_shards(list(groups.values()), list(groups.keys()))


def _load_jsonl(path: Path) -> UserDataset:
    ids, shards = [], []
    d = None
    with open(path) as fh:
        for line_no, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            try:
                obj = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON ({exc.msg})", line_no) from None
            if not isinstance(obj, dict) or "id" not in obj or "rows" not in obj:
                raise ParseError('expected an object with "id" and "rows"', line_no)
            rows = obj["rows"]
            if not isinstance(rows, list) or not rows:
                raise ValidationError(f"line {line_no}: user {obj['id']!r} has no rows")
            parsed = []
            for r in rows:
                r = r if isinstance(r, list) else [r]
                if d is None:
                    d = len(r)
                if len(r) != d:
                    raise DimensionError(f"line {line_no}: expected {d} coordinates, got {len(r)}")
                parsed.append([_json_float(v, line_no) for v in r])
            ids.append(str(obj["id"]))
            shards.append(parsed)
    if not shards:
        raise ParseError("empty file", 1)
    return UserDataset.from_shards(shards, ids)


def export_dataset(ds: UserDataset, path, format: Optional[str] = None) -> Path:
    path = Path(path)
    if format is None:
        format = "jsonl-shards" if path.suffix in (".jsonl", ".json") else "csv-long"
    if format not in FORMATS:
        raise ValueError(f"unknown format {format!r}; expected one of {FORMATS}")
    if format == "csv-long":
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["user_id"] + [f"x_{j}" for j in range(ds.d)])
            for uid, shard in zip(ds.user_ids, ds.shards):
                for row in shard:
                    w.writerow([uid] + [repr(float(v)) for v in row])
    else:
        with open(path, "w") as fh:
            for uid, shard in zip(ds.user_ids, ds.shards):
                # json writes floats with repr(), which round-trips exactly
                fh.write(json.dumps({"id": uid, "rows": shard.tolist()}) + "\n")
    return path
