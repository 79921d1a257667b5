"""Memory-based collaborative filtering (UPCC, IPCC, UIPCC) with Pearson similarity."""

from __future__ import annotations

from typing import Mapping

import numpy as np

from .dataset import RecordSet


def training_matrix(train: RecordSet, n_users: int, n_services: int) -> np.ndarray:
    """Dense user x service array of training QoS, NaN where unobserved."""
    q = np.full((n_users, n_services), np.nan)
    q[train.user_id, train.service_id] = train.qos
    return q


def _as_dense(x, length: int | None = None) -> np.ndarray:
    if isinstance(x, Mapping):
        n = length if length is not None else (max(x) + 1 if x else 0)
        out = np.full(n, np.nan)
        for k, v in x.items():
            out[k] = v
        return out
    out = np.array(x, dtype=np.float64)
    out[out < 0] = np.nan
    return out


def pcc(u_qos, v_qos) -> float:
    """Pearson correlation over co-invoked entries; NaN when undefined.

    Inputs are arrays (NaN or negative = not invoked) or ``{index: qos}``
    mappings. Means are taken over the co-invoked set, so the result is an
    ordinary correlation on that set: undefined with fewer than two common
    entries or zero variance on either side.
    """
    if isinstance(u_qos, Mapping) or isinstance(v_qos, Mapping):
        idx = set()
        for x in (u_qos, v_qos):
            idx.update(x.keys() if isinstance(x, Mapping) else range(len(x)))
        n = max(idx, default=-1) + 1
        u, v = _as_dense(u_qos, n), _as_dense(v_qos, n)
    else:
        u, v = _as_dense(u_qos), _as_dense(v_qos)
    if u.shape != v.shape:
        raise ValueError("vectors must index the same items")
    common = ~np.isnan(u) & ~np.isnan(v)
    if common.sum() < 2:
        return float("nan")
    du = u[common] - u[common].mean()
    dv = v[common] - v[common].mean()
    den = np.sqrt(np.sum(du * du)) * np.sqrt(np.sum(dv * dv))
    if den == 0:
        return float("nan")
    return float(np.clip(np.sum(du * dv) / den, -1.0, 1.0))


def similarity_matrix(q: np.ndarray, chunk: int = 512, rel_tol: float = 1e-12) -> np.ndarray:
    """PCC between every pair of rows of ``q`` (NaN = missing). Undefined pairs are NaN."""
    mask = ~np.isnan(q)
    m = mask.astype(np.float64)
    # PCC is shift invariant per row; centring first limits cancellation in the sums below
    counts = m.sum(axis=1)
    row_mean = np.divide(np.nansum(q, axis=1), counts, out=np.zeros(len(q)), where=counts > 0)
    x = np.where(mask, q - row_mean[:, None], 0.0)
    x2 = x * x
    n_rows = q.shape[0]
    sim = np.empty((n_rows, n_rows))
    for start in range(0, n_rows, chunk):
        sl = slice(start, min(start + chunk, n_rows))
        n = m[sl] @ m.T
        su = x[sl] @ m.T
        sv = m[sl] @ x.T
        suu = x2[sl] @ m.T
        svv = m[sl] @ x2.T
        suv = x[sl] @ x.T
        with np.errstate(divide="ignore", invalid="ignore"):
            cov = suv - su * sv / n
            var_u = suu - su * su / n
            var_v = svv - sv * sv / n
            block = cov / np.sqrt(var_u * var_v)
        undefined = (n < 2) | (var_u <= rel_tol * suu) | (var_v <= rel_tol * svv) | (var_u <= 0) | (var_v <= 0)
        block[undefined] = np.nan
        sim[sl] = np.clip(block, -1.0, 1.0)
    # enforce exact symmetry
    upper = np.triu_indices(n_rows, 1)
    sim.T[upper] = sim[upper]
    return sim


class UIPCC:
    """Similarity-weighted deviation-from-mean predictors over a training matrix.

    ``q`` is users x services with NaN (or any negative value) for missing
    entries. Neighbours must have observed the target entry and have a
    defined, strictly positive similarity; at most ``top_k`` of them are
    used, ties broken by lower index.
    """

    def __init__(self, q: np.ndarray, top_k: int = 10, lam: float = 0.5):
        if top_k < 1:
            raise ValueError("top_k must be >= 1")
        if not 0.0 <= lam <= 1.0:
            raise ValueError("lam must lie in [0, 1]")
        q = np.array(q, dtype=np.float64)
        q[q < 0] = np.nan
        self.q = q
        self.top_k = top_k
        self.lam = lam
        self.mask = ~np.isnan(q)
        self.global_mean = float(np.nanmean(q)) if self.mask.any() else 0.0
        self.user_mean = self._means(q, axis=1)
        self.service_mean = self._means(q, axis=0)
        self._user_sim = None
        self._service_sim = None

    def _means(self, q, axis):
        counts = self.mask.sum(axis=axis)
        sums = np.nansum(q, axis=axis)
        return np.divide(sums, counts, out=np.full(counts.shape, np.nan), where=counts > 0)

    @property
    def user_sim(self) -> np.ndarray:
        if self._user_sim is None:
            self._user_sim = similarity_matrix(self.q)
        return self._user_sim

    @property
    def service_sim(self) -> np.ndarray:
        if self._service_sim is None:
            self._service_sim = similarity_matrix(self.q.T)
        return self._service_sim

    def _check(self, users, services):
        users = np.atleast_1d(np.asarray(users, dtype=np.int64))
        services = np.atleast_1d(np.asarray(services, dtype=np.int64))
        if users.shape != services.shape:
            raise ValueError("users and services must have the same length")
        n_users, n_services = self.q.shape
        if users.size and (users.min() < 0 or users.max() >= n_users):
            raise IndexError("unknown user")
        if services.size and (services.min() < 0 or services.max() >= n_services):
            raise IndexError("unknown service")
        return users, services

    def _neighbourhood(self, q, mask, sim, means, targets, items):
        """Core predictor with subjects on rows: predicts q[targets[i], items[i]]."""
        out = np.empty(len(targets))
        fallback = np.where(np.isnan(means[targets]), self.global_mean, means[targets])
        order = np.argsort(items, kind="stable")
        sorted_items = items[order]
        bounds = np.flatnonzero(np.diff(sorted_items)) + 1
        for group in np.split(order, bounds):
            if group.size == 0:
                continue
            item = items[group[0]]
            pool = np.flatnonzero(mask[:, item])
            tg = targets[group]
            if pool.size == 0:
                out[group] = fallback[group]
                continue
            s = sim[np.ix_(tg, pool)]
            s = np.where(np.isnan(s) | (s <= 0) | (tg[:, None] == pool[None, :]), -np.inf, s)
            if pool.size > self.top_k:
                # rank on rounded values so floating noise cannot reorder exact ties
                # (two co-invoked entries always give +-1); ties go to the lower index
                keep = np.argsort(-np.round(s, 12), axis=1, kind="stable")[:, : self.top_k]
                s = np.take_along_axis(s, keep, axis=1)
                dev = (q[pool, item] - means[pool])[keep]
            else:
                dev = np.broadcast_to(q[pool, item] - means[pool], s.shape)
            w = np.where(np.isfinite(s), s, 0.0)
            den = w.sum(axis=1)
            num = (w * dev).sum(axis=1)
            with np.errstate(divide="ignore", invalid="ignore"):
                pred = means[tg] + num / den
            out[group] = np.where(den > 0, pred, fallback[group])
        return out

    def predict_upcc(self, users, services) -> np.ndarray:
        users, services = self._check(users, services)
        return self._neighbourhood(self.q, self.mask, self.user_sim, self.user_mean, users, services)

    def predict_ipcc(self, users, services) -> np.ndarray:
        users, services = self._check(users, services)
        return self._neighbourhood(self.q.T, self.mask.T, self.service_sim, self.service_mean, services, users)

    def predict(self, users, services, lam: float | None = None) -> np.ndarray:
        lam = self.lam if lam is None else lam
        if lam == 1.0:
            return self.predict_upcc(users, services)
        if lam == 0.0:
            return self.predict_ipcc(users, services)
        return lam * self.predict_upcc(users, services) + (1.0 - lam) * self.predict_ipcc(users, services)


def upcc_predict(matrix, user: int, service: int, top_k: int = 10) -> float:
    return float(UIPCC(matrix, top_k).predict_upcc([user], [service])[0])


def ipcc_predict(matrix, user: int, service: int, top_k: int = 10) -> float:
    return float(UIPCC(matrix, top_k).predict_ipcc([user], [service])[0])


def uipcc_predict(matrix, user: int, service: int, top_k: int = 10, lam: float = 0.5) -> float:
    return float(UIPCC(matrix, top_k, lam).predict([user], [service])[0])
