"""WS-DREAM ingestion: QoS matrix, user/service lists, vocabularies, density splits."""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from typing import Iterator, NamedTuple, Sequence

import numpy as np


class DataError(Exception):
    """Raised for malformed or missing dataset files."""


class MatrixParseError(DataError):
    def __init__(self, message: str, row: int | None = None, col: int | None = None):
        self.row = row
        self.col = col
        where = []
        if row is not None:
            where.append(f"row {row}")
        if col is not None:
            where.append(f"col {col}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)


@dataclass(frozen=True)
class QosMatrix:
    """Dense user x service QoS grid; negative entries mark missing invocations."""

    values: np.ndarray

    @property
    def n_users(self) -> int:
        return self.values.shape[0]

    @property
    def n_services(self) -> int:
        return self.values.shape[1]

    @property
    def valid_mask(self) -> np.ndarray:
        return self.values >= 0

    @property
    def n_valid(self) -> int:
        return int(np.count_nonzero(self.valid_mask))


def load_qos_matrix(path, n_users: int | None = None, n_services: int | None = None) -> QosMatrix:
    """Parse a whitespace-separated QoS grid.

    Rows are users, columns are services. When ``n_users``/``n_services`` are
    given the parsed shape must match them exactly.
    """
    if not os.path.isfile(path):
        raise DataError(f"QoS matrix file not found: {path}")
    rows = []
    width = n_services
    with open(path) as fh:
        for lineno, line in enumerate(fh):
            tokens = line.split()
            if not tokens:
                continue
            row = len(rows)
            try:
                values = np.array(tokens, dtype=np.float64)
            except ValueError:
                for col, tok in enumerate(tokens):
                    try:
                        float(tok)
                    except ValueError:
                        raise MatrixParseError(f"non-numeric token {tok!r}", row, col) from None
                raise
            if width is None:
                width = len(values)
            if len(values) != width:
                raise MatrixParseError(
                    f"expected {width} columns, found {len(values)}", row, min(len(values), width)
                )
            if not np.all(np.isfinite(values)):
                col = int(np.flatnonzero(~np.isfinite(values))[0])
                raise MatrixParseError(f"non-finite value {tokens[col]!r}", row, col)
            rows.append(values)
    if n_users is not None and len(rows) != n_users:
        raise MatrixParseError(f"expected {n_users} rows, found {len(rows)}", row=len(rows))
    if not rows:
        raise MatrixParseError("empty matrix file")
    return QosMatrix(np.vstack(rows))


@dataclass(frozen=True)
class UserRecord:
    user_id: int
    country: str
    as_name: str
    extra: dict = field(default_factory=dict, compare=False)


@dataclass(frozen=True)
class ServiceRecord:
    service_id: int
    country: str
    as_name: str
    extra: dict = field(default_factory=dict, compare=False)


def _normalize_header(name: str) -> str:
    return name.strip().strip("[]").strip().lower()


def _read_info_table(path, id_column: str) -> list[dict]:
    if not os.path.isfile(path):
        raise DataError(f"info file not found: {path}")
    with open(path, encoding="utf-8", errors="replace") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise DataError(f"{path}: empty file")
    header = [_normalize_header(h) for h in lines[0].split("\t")]
    for required in (id_column, "country", "as"):
        if required not in header:
            raise DataError(f"{path}: missing required column {required!r}")
    rows = []
    for line in lines[1:]:
        stripped = line.strip()
        # WS-DREAM lists put a ===== rule under the header
        if not stripped or set(stripped) <= set("=-"):
            continue
        cells = [c.strip() for c in line.split("\t")]
        cells += [""] * (len(header) - len(cells))
        rows.append(dict(zip(header, cells)))
    return rows


def _parse_ids(rows: list[dict], id_column: str, path) -> list[int]:
    ids = []
    for i, row in enumerate(rows):
        try:
            ids.append(int(row[id_column]))
        except ValueError:
            raise DataError(f"{path}: bad {id_column} {row[id_column]!r} on data line {i}") from None
    if ids != list(range(len(ids))):
        raise DataError(f"{path}: {id_column} values must be contiguous from 0")
    return ids


def load_users(path) -> list[UserRecord]:
    rows = _read_info_table(path, "user id")
    ids = _parse_ids(rows, "user id", path)
    return [
        UserRecord(
            uid,
            row["country"],
            row["as"],
            {k: v for k, v in row.items() if k not in ("user id", "country", "as")},
        )
        for uid, row in zip(ids, rows)
    ]


def load_services(path) -> list[ServiceRecord]:
    rows = _read_info_table(path, "service id")
    ids = _parse_ids(rows, "service id", path)
    return [
        ServiceRecord(
            sid,
            row["country"],
            row["as"],
            {k: v for k, v in row.items() if k not in ("service id", "country", "as")},
        )
        for sid, row in zip(ids, rows)
    ]


class Vocabulary:
    """String -> dense code mapping, codes assigned in first-appearance order."""

    def __init__(self, name: str, strings: Sequence[str] = ()):
        self.name = name
        self.mapping: dict[str, int] = {}
        self._inverse: list[str] = []
        for s in strings:
            self.add(s)

    def add(self, s: str) -> int:
        code = self.mapping.get(s)
        if code is None:
            code = len(self._inverse)
            self.mapping[s] = code
            self._inverse.append(s)
        return code

    def encode(self, s: str) -> int:
        return self.mapping[s]

    def decode(self, code: int) -> str:
        return self._inverse[code]

    @property
    def size(self) -> int:
        return len(self._inverse)

    def __len__(self) -> int:
        return self.size

    def __repr__(self) -> str:
        return f"Vocabulary({self.name!r}, size={self.size})"


class Vocabularies(NamedTuple):
    user_country: Vocabulary
    user_as: Vocabulary
    service_country: Vocabulary
    service_as: Vocabulary


def build_vocabularies(users: Sequence[UserRecord], services: Sequence[ServiceRecord]) -> Vocabularies:
    return Vocabularies(
        Vocabulary("user-country", [u.country for u in users]),
        Vocabulary("user-as", [u.as_name for u in users]),
        Vocabulary("service-country", [s.country for s in services]),
        Vocabulary("service-as", [s.as_name for s in services]),
    )


@dataclass(frozen=True)
class InvocationRecord:
    user_id: int
    service_id: int
    qos: float
    user_country_code: int
    user_as_code: int
    service_country_code: int
    service_as_code: int


_RECORD_FIELDS = (
    "user_id",
    "service_id",
    "qos",
    "user_country_code",
    "user_as_code",
    "service_country_code",
    "service_as_code",
)


@dataclass(frozen=True, eq=False)
class RecordSet:
    """Column-oriented sequence of invocation records.

    WS-DREAM has ~1.9M valid entries, so records are held as parallel arrays.
    Integer indexing yields an :class:`InvocationRecord`; slices and index
    arrays yield a new ``RecordSet``.
    """

    user_id: np.ndarray
    service_id: np.ndarray
    qos: np.ndarray
    user_country_code: np.ndarray
    user_as_code: np.ndarray
    service_country_code: np.ndarray
    service_as_code: np.ndarray

    @classmethod
    def empty(cls) -> "RecordSet":
        ints = np.zeros(0, dtype=np.int64)
        return cls(ints, ints, np.zeros(0), ints, ints, ints, ints)

    @classmethod
    def from_records(cls, records: Sequence[InvocationRecord]) -> "RecordSet":
        if not records:
            return cls.empty()
        cols = {}
        for name in _RECORD_FIELDS:
            dtype = np.float64 if name == "qos" else np.int64
            cols[name] = np.array([getattr(r, name) for r in records], dtype=dtype)
        return cls(**cols)

    def __len__(self) -> int:
        return len(self.qos)

    def __getitem__(self, idx):
        if isinstance(idx, (int, np.integer)):
            return InvocationRecord(
                int(self.user_id[idx]),
                int(self.service_id[idx]),
                float(self.qos[idx]),
                int(self.user_country_code[idx]),
                int(self.user_as_code[idx]),
                int(self.service_country_code[idx]),
                int(self.service_as_code[idx]),
            )
        return RecordSet(*(getattr(self, name)[idx] for name in _RECORD_FIELDS))

    def __iter__(self) -> Iterator[InvocationRecord]:
        for i in range(len(self)):
            yield self[i]

    def __eq__(self, other) -> bool:
        if not isinstance(other, RecordSet):
            return NotImplemented
        return all(np.array_equal(getattr(self, n), getattr(other, n)) for n in _RECORD_FIELDS)

    def pairs(self) -> np.ndarray:
        return np.stack([self.user_id, self.service_id], axis=1)


def matrix_to_records(
    matrix: QosMatrix,
    users: Sequence[UserRecord],
    services: Sequence[ServiceRecord],
    vocabs: Vocabularies,
) -> RecordSet:
    """One record per valid matrix entry, in row-major order."""
    if matrix.n_users != len(users) or matrix.n_services != len(services):
        raise DataError(
            f"matrix is {matrix.n_users}x{matrix.n_services} but lists have "
            f"{len(users)} users and {len(services)} services"
        )
    uids, sids = np.nonzero(matrix.valid_mask)
    u_country = np.array([vocabs.user_country.encode(u.country) for u in users], dtype=np.int64)
    u_as = np.array([vocabs.user_as.encode(u.as_name) for u in users], dtype=np.int64)
    s_country = np.array([vocabs.service_country.encode(s.country) for s in services], dtype=np.int64)
    s_as = np.array([vocabs.service_as.encode(s.as_name) for s in services], dtype=np.int64)
    uids = uids.astype(np.int64)
    sids = sids.astype(np.int64)
    return RecordSet(
        uids,
        sids,
        matrix.values[uids, sids].astype(np.float64),
        u_country[uids] if len(uids) else uids,
        u_as[uids] if len(uids) else uids,
        s_country[sids] if len(sids) else sids,
        s_as[sids] if len(sids) else sids,
    )


@dataclass(frozen=True, eq=False)
class DatasetSplit:
    train: RecordSet
    test: RecordSet
    density: float
    seed: int
    train_indices: np.ndarray

    def manifest(self) -> dict:
        return {
            "density": self.density,
            "seed": self.seed,
            "n_records": len(self.train) + len(self.test),
            "train_indices": self.train_indices.tolist(),
        }

    def save_manifest(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.manifest(), fh, separators=(",", ":"))


def n_train_for(density: float, n_records: int) -> int:
    if not 0 < density <= 1:
        raise ValueError(f"density must be in (0, 1], got {density}")
    # the epsilon absorbs binary representation error, e.g. 0.29 * 100
    return min(n_records, math.floor(density * n_records + 1e-9))


def split_by_density(records: RecordSet, density: float, seed: int) -> DatasetSplit:
    """Uniformly sample floor(density * N) records for training; the rest is test."""
    n = len(records)
    n_train = n_train_for(density, n)
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    train_idx = np.sort(perm[:n_train])
    return _split_from_indices(records, train_idx, density, seed)


def _split_from_indices(records: RecordSet, train_idx: np.ndarray, density: float, seed: int) -> DatasetSplit:
    mask = np.zeros(len(records), dtype=bool)
    mask[train_idx] = True
    return DatasetSplit(records[mask], records[~mask], density, seed, np.flatnonzero(mask))


def load_split_manifest(path, records: RecordSet) -> DatasetSplit:
    with open(path) as fh:
        data = json.load(fh)
    if data.get("n_records", len(records)) != len(records):
        raise DataError(f"{path}: manifest was built for {data['n_records']} records, dataset has {len(records)}")
    idx = np.asarray(data["train_indices"], dtype=np.int64)
    if len(idx) and (idx.min() < 0 or idx.max() >= len(records)):
        raise DataError(f"{path}: train index out of range")
    return _split_from_indices(records, idx, float(data["density"]), int(data["seed"]))


@dataclass(frozen=True, eq=False)
class WsDream:
    """Everything loaded from a WS-DREAM style directory."""

    matrix: QosMatrix
    users: list
    services: list
    vocabs: Vocabularies
    records: RecordSet

    @property
    def n_users(self) -> int:
        return self.matrix.n_users

    @property
    def n_services(self) -> int:
        return self.matrix.n_services


MATRIX_FILE = "rtMatrix.txt"
USERS_FILE = "userlist.txt"
SERVICES_FILE = "wslist.txt"


def load_wsdream(data_dir, matrix_file: str = MATRIX_FILE) -> WsDream:
    users = load_users(os.path.join(data_dir, USERS_FILE))
    services = load_services(os.path.join(data_dir, SERVICES_FILE))
    matrix = load_qos_matrix(os.path.join(data_dir, matrix_file), len(users), len(services))
    vocabs = build_vocabularies(users, services)
    records = matrix_to_records(matrix, users, services, vocabs)
    return WsDream(matrix, users, services, vocabs, records)
