"""Per-subject QoS probability distributions and model input assembly."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .dataset import InvocationRecord, RecordSet


@dataclass(frozen=True)
class BinningScheme:
    k: int = 10
    qos_max: float = 20.0

    def __post_init__(self):
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        if not self.qos_max > 0:
            raise ValueError(f"qos_max must be > 0, got {self.qos_max}")

    @property
    def width(self) -> float:
        return self.qos_max / self.k


def bin_index(qos: float, scheme: BinningScheme) -> int:
    """Interval of ``qos``: left-closed bins, the last one also holds qos_max and above."""
    if qos < 0:
        raise ValueError(f"qos must be >= 0, got {qos}")
    return min(int(np.floor(qos / scheme.width)), scheme.k - 1)


def bin_indices(qos: np.ndarray, scheme: BinningScheme) -> np.ndarray:
    qos = np.asarray(qos, dtype=np.float64)
    if qos.size and qos.min() < 0:
        raise ValueError("qos must be >= 0")
    return np.minimum(np.floor(qos / scheme.width).astype(np.int64), scheme.k - 1)


@dataclass(frozen=True, eq=False)
class Distributions:
    """Interval proportions (and raw counts) for every user and service.

    Rows of subjects without training history are all zero.
    """

    scheme: BinningScheme
    user_counts: np.ndarray
    service_counts: np.ndarray

    @staticmethod
    def _proportions(counts: np.ndarray) -> np.ndarray:
        totals = counts.sum(axis=1, keepdims=True)
        out = np.zeros(counts.shape, dtype=np.float64)
        np.divide(counts, totals, out=out, where=totals > 0)
        return out

    def __post_init__(self):
        object.__setattr__(self, "user", self._proportions(self.user_counts))
        object.__setattr__(self, "service", self._proportions(self.service_counts))

    @property
    def k(self) -> int:
        return self.scheme.k

    @property
    def n_users(self) -> int:
        return self.user_counts.shape[0]

    @property
    def n_services(self) -> int:
        return self.service_counts.shape[0]


def _count(subject: np.ndarray, bins: np.ndarray, n_subjects: int, k: int) -> np.ndarray:
    if subject.size and (subject.min() < 0 or subject.max() >= n_subjects):
        raise ValueError("subject id out of range")
    flat = np.bincount(subject * k + bins, minlength=n_subjects * k)
    return flat.reshape(n_subjects, k)


def compute_distributions(
    train: RecordSet, scheme: BinningScheme, n_users: int, n_services: int
) -> Distributions:
    bins = bin_indices(train.qos, scheme)
    return Distributions(
        scheme,
        _count(train.user_id, bins, n_users, scheme.k),
        _count(train.service_id, bins, n_services, scheme.k),
    )


@dataclass(frozen=True, eq=False)
class RawInput:
    user_id: int
    service_id: int
    user_country_code: int
    user_as_code: int
    service_country_code: int
    service_as_code: int
    p_user: np.ndarray
    p_service: np.ndarray


def assemble_raw_input(record: InvocationRecord, distributions: Distributions) -> RawInput:
    if not 0 <= record.user_id < distributions.n_users:
        raise ValueError(f"user id {record.user_id} out of range")
    if not 0 <= record.service_id < distributions.n_services:
        raise ValueError(f"service id {record.service_id} out of range")
    return RawInput(
        record.user_id,
        record.service_id,
        record.user_country_code,
        record.user_as_code,
        record.service_country_code,
        record.service_as_code,
        distributions.user[record.user_id].copy(),
        distributions.service[record.service_id].copy(),
    )


@dataclass(frozen=True, eq=False)
class FeatureBatch:
    """Model input for a batch: six code columns plus both distribution matrices."""

    user_id: np.ndarray
    service_id: np.ndarray
    user_country_code: np.ndarray
    user_as_code: np.ndarray
    service_country_code: np.ndarray
    service_as_code: np.ndarray
    p_user: np.ndarray
    p_service: np.ndarray

    def __len__(self) -> int:
        return len(self.user_id)

    def take(self, idx) -> "FeatureBatch":
        return FeatureBatch(*(getattr(self, name)[idx] for name in self.__dataclass_fields__))

    @classmethod
    def from_raw(cls, raws) -> "FeatureBatch":
        raws = list(raws)
        ints = lambda name: np.array([getattr(r, name) for r in raws], dtype=np.int64)  # noqa: E731
        return cls(
            ints("user_id"),
            ints("service_id"),
            ints("user_country_code"),
            ints("user_as_code"),
            ints("service_country_code"),
            ints("service_as_code"),
            np.vstack([r.p_user for r in raws]),
            np.vstack([r.p_service for r in raws]),
        )


def assemble_batch(records: RecordSet, distributions: Distributions) -> FeatureBatch:
    return FeatureBatch(
        records.user_id,
        records.service_id,
        records.user_country_code,
        records.user_as_code,
        records.service_country_code,
        records.service_as_code,
        distributions.user[records.user_id],
        distributions.service[records.service_id],
    )


def dump_distributions(path, distributions: Distributions) -> None:
    """CSV dump: proportions p_0..p_{K-1}, then the raw interval counts c_0..c_{K-1}."""
    k = distributions.k
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["subject_type", "subject_id"] + [f"p_{i}" for i in range(k)] + [f"c_{i}" for i in range(k)]
        )
        for kind, probs, counts in (
            ("user", distributions.user, distributions.user_counts),
            ("service", distributions.service, distributions.service_counts),
        ):
            for sid in range(probs.shape[0]):
                writer.writerow([kind, sid] + [repr(float(p)) for p in probs[sid]] + [int(c) for c in counts[sid]])
