"""Clustering of per-dialogue representations into sessions.

Four estimators follow the scikit-learn ``fit`` / ``labels_`` convention so
they drop into pipelines and model-selection utilities: :class:`KMeans`,
:class:`GaussianMixture` (diagonal covariance), :class:`DBSCAN` and
:class:`AffinityPropagation`.  All emitted labels are canonical (sessions
numbered by first appearance).  The functional wrappers :func:`kmeans`,
:func:`gmm`, :func:`dbscan` and :func:`affinity_propagation` return a
:class:`ClusteringResult` with diagnostics.
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp
from sklearn.base import BaseEstimator, ClusterMixin
from sklearn.utils import check_array, check_random_state
from sklearn.utils.validation import check_is_fitted

from clucdd.corpus import SessionLabeling, canonicalize
from clucdd.exceptions import ConfigError, ValidationError

logger = logging.getLogger(__name__)

METHODS = ("kmeans", "gmm", "dbscan", "ap")
_MONOTONE_RTOL = 1e-10


@dataclass
class ClusteringResult:
    labels: SessionLabeling
    iterations: int
    objective: float
    converged: bool
    history: list = field(default_factory=list)
    params: dict = field(default_factory=dict)


def _sq_dists(X, C):
    d = (X * X).sum(1)[:, None] - 2.0 * X @ C.T + (C * C).sum(1)[None, :]
    return np.maximum(d, 0.0)


def _rng(random_state):
    if isinstance(random_state, (int, np.integer)):
        return np.random.default_rng(int(random_state))
    return np.random.default_rng(check_random_state(random_state).randint(2**31 - 1))


def _check_k(k, n):
    if k is None or not 1 <= int(k) <= n:
        raise ValidationError(f"number of clusters must lie in 1..{n}, got {k}")
    return int(k)


def _check_monotone(history, name, increasing):
    if len(history) < 2:
        return
    prev, cur = history[-2], history[-1]
    slack = _MONOTONE_RTOL * max(1.0, abs(prev))
    bad = cur < prev - slack if increasing else cur > prev + slack
    if bad:
        raise RuntimeError(f"{name} not monotone: {prev!r} -> {cur!r}")


def kmeans_plusplus(X, k, rng):
    n = X.shape[0]
    centers = [X[rng.integers(n)]]
    d2 = _sq_dists(X, centers[0][None])[:, 0]
    for _ in range(1, k):
        total = d2.sum()
        idx = rng.integers(n) if total <= 0 else rng.choice(n, p=d2 / total)
        centers.append(X[idx])
        d2 = np.minimum(d2, _sq_dists(X, X[idx][None])[:, 0])
    return np.array(centers)


def _repair_empty(X, labels, centers, k):
    """Give every empty cluster the farthest point of the current largest cluster."""
    for j in range(k):
        counts = np.bincount(labels, minlength=k)
        if counts[j]:
            continue
        big = int(np.argmax(counts))
        members = np.flatnonzero(labels == big)
        far = members[np.argmax(((X[members] - centers[big]) ** 2).sum(1))]
        labels[far] = j
        centers[j] = X[far]
    return labels


def _lloyd(X, centers, max_iter):
    k = centers.shape[0]
    labels = None
    history = []
    converged = False
    for _ in range(max_iter):
        new = np.argmin(_sq_dists(X, centers), axis=1)
        new = _repair_empty(X, new, centers, k)
        if labels is not None and np.array_equal(new, labels):
            converged = True
            break
        labels = new
        centers = np.array([X[labels == j].mean(axis=0) for j in range(k)])
        history.append(float(((X - centers[labels]) ** 2).sum()))
        _check_monotone(history, "k-means inertia", increasing=False)
    return labels, centers, history, converged, len(history)


class KMeans(ClusterMixin, BaseEstimator):
    """Lloyd's algorithm with seeded k-means++ restarts; best inertia kept.

    Nearest-centroid ties go to the lowest centroid index.
    """

    def __init__(self, n_clusters=2, n_init=10, max_iter=300, random_state=None):
        self.n_clusters = n_clusters
        self.n_init = n_init
        self.max_iter = max_iter
        self.random_state = random_state

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        k = _check_k(self.n_clusters, X.shape[0])
        rng = _rng(self.random_state)
        best = None
        for _ in range(self.n_init):
            centers = kmeans_plusplus(X, k, rng)
            run = _lloyd(X, centers, self.max_iter)
            if best is None or run[2][-1] < best[2][-1]:
                best = run
        labels, centers, history, converged, n_iter = best
        order = canonicalize(labels)
        perm = np.empty(k, dtype=np.int64)
        perm[order] = labels  # canonical id -> original centroid id
        self.labels_ = order
        self.cluster_centers_ = centers[perm]
        self.inertia_ = history[-1]
        self.inertia_history_ = history
        self.n_iter_ = n_iter
        self.converged_ = converged
        return self

    def predict(self, X):
        check_is_fitted(self, "cluster_centers_")
        X = check_array(X, dtype=np.float64)
        return np.argmin(_sq_dists(X, self.cluster_centers_), axis=1)


class GaussianMixture(ClusterMixin, BaseEstimator):
    """Diagonal-covariance EM initialised from :class:`KMeans`.

    ``log_likelihood_`` is the mean per-point log-likelihood; iteration stops
    once it improves by less than ``tol``.
    """

    def __init__(self, n_components=2, max_iter=100, tol=1e-6, var_floor=1e-6, random_state=None):
        self.n_components = n_components
        self.max_iter = max_iter
        self.tol = tol
        self.var_floor = var_floor
        self.random_state = random_state

    def _log_joint(self, X):
        var = self.variances_
        log_det = np.log(2.0 * np.pi * var).sum(axis=1)
        maha = ((X[:, None, :] - self.means_[None]) ** 2 / var[None]).sum(axis=2)
        return np.log(self.weights_)[None] - 0.5 * (log_det[None] + maha)

    def _m_step(self, X, resp):
        nk = resp.sum(axis=0) + 10 * np.finfo(float).eps
        self.weights_ = nk / X.shape[0]
        self.means_ = resp.T @ X / nk[:, None]
        sq = (X[:, None, :] - self.means_[None]) ** 2
        var = np.einsum("ik,ikd->kd", resp, sq) / nk[:, None]
        self.variances_ = np.maximum(var, self.var_floor)

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        k = _check_k(self.n_components, X.shape[0])
        init = KMeans(k, random_state=self.random_state).fit(X)
        resp = np.eye(k)[init.labels_]
        self._m_step(X, resp)
        history = []
        converged = False
        it = 0
        for it in range(1, self.max_iter + 1):
            log_joint = self._log_joint(X)
            log_norm = logsumexp(log_joint, axis=1)
            history.append(float(log_norm.mean()))
            _check_monotone(history, "GMM log-likelihood", increasing=True)
            if len(history) > 1 and history[-1] - history[-2] < self.tol:
                converged = True
                break
            if it == self.max_iter:
                break
            resp = np.exp(log_joint - log_norm[:, None])
            self._m_step(X, resp)
        raw = np.argmax(self._log_joint(X), axis=1)
        self.labels_ = canonicalize(raw)
        self.log_likelihood_ = history[-1]
        self.log_likelihood_history_ = history
        self.n_iter_ = it
        self.converged_ = converged
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "means_")
        X = check_array(X, dtype=np.float64)
        lj = self._log_joint(X)
        return np.exp(lj - logsumexp(lj, axis=1, keepdims=True))

    def predict(self, X):
        return np.argmax(self.predict_proba(X), axis=1)


class DBSCAN(ClusterMixin, BaseEstimator):
    """Density clustering; every noise point becomes its own singleton session.

    ``min_samples`` counts the point itself.  A border point joins the first
    cluster (in order of cluster creation, i.e. of lowest core index) that
    reaches it.
    """

    def __init__(self, eps=0.5, min_samples=3):
        self.eps = eps
        self.min_samples = min_samples

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        if not self.eps > 0:
            raise ConfigError(f"eps must be positive, got {self.eps}")
        if self.min_samples < 1:
            raise ConfigError(f"min_samples must be at least 1, got {self.min_samples}")
        n = X.shape[0]
        neighbors = _sq_dists(X, X) <= self.eps ** 2
        core = neighbors.sum(axis=1) >= self.min_samples
        raw = np.full(n, -1)
        n_clusters = 0
        for i in range(n):
            if raw[i] >= 0 or not core[i]:
                continue
            raw[i] = n_clusters
            queue = deque([i])
            while queue:
                p = queue.popleft()
                if not core[p]:
                    continue
                for q in np.flatnonzero(neighbors[p]):
                    if raw[q] < 0:
                        raw[q] = n_clusters
                        queue.append(q)
            n_clusters += 1
        noise = raw < 0
        raw[noise] = n_clusters + np.arange(noise.sum())
        self.core_sample_indices_ = np.flatnonzero(core)
        self.noise_mask_ = noise
        self.n_dense_clusters_ = n_clusters
        self.labels_ = canonicalize(raw)
        return self


class AffinityPropagation(ClusterMixin, BaseEstimator):
    """Responsibility/availability message passing on negative squared distances.

    The preference defaults to the median off-diagonal similarity.  Converged
    once the exemplar set is unchanged for ``convergence_iter`` iterations.
    """

    def __init__(self, damping=0.9, max_iter=200, convergence_iter=15, preference=None):
        self.damping = damping
        self.max_iter = max_iter
        self.convergence_iter = convergence_iter
        self.preference = preference

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        if not 0.5 <= self.damping < 1.0:
            raise ConfigError(f"damping must lie in [0.5, 1), got {self.damping}")
        n = X.shape[0]
        if n < 2:
            raise ValidationError("affinity propagation needs at least two points")
        S = -_sq_dists(X, X)
        off = S[~np.eye(n, dtype=bool)]
        pref = float(np.median(off)) if self.preference is None else float(self.preference)
        self.preference_ = pref
        if np.all(off == pref):
            # no similarity structure at all: messages never break the tie
            self._finish(S, np.array([0]), np.zeros(n, dtype=np.int64), 0, True)
            return self
        S[np.diag_indices(n)] = pref
        R = np.zeros((n, n))
        A = np.zeros((n, n))
        rows = np.arange(n)
        lam = self.damping
        history = deque(maxlen=self.convergence_iter)
        converged = False
        it = 0
        for it in range(1, self.max_iter + 1):
            AS = A + S
            top = np.argmax(AS, axis=1)
            first = AS[rows, top]
            AS[rows, top] = -np.inf
            second = AS.max(axis=1)
            R_new = S - first[:, None]
            R_new[rows, top] = S[rows, top] - second
            R = lam * R + (1 - lam) * R_new

            Rp = np.maximum(R, 0.0)
            Rp[rows, rows] = R[rows, rows]
            col = Rp.sum(axis=0)
            A_new = np.minimum(0.0, col[None, :] - Rp)
            A_new[rows, rows] = col - R[rows, rows]
            A = lam * A + (1 - lam) * A_new

            exemplars = (np.diag(A) + np.diag(R)) > 0
            history.append(exemplars)
            if (
                len(history) == self.convergence_iter
                and exemplars.any()
                and all(np.array_equal(h, exemplars) for h in history)
            ):
                converged = True
                break
        ex = np.flatnonzero(exemplars)
        if ex.size == 0:
            logger.warning("affinity propagation found no exemplar; returning one cluster")
            self._finish(S, np.array([0]), np.zeros(n, dtype=np.int64), it, False)
            return self
        assign = np.argmax(S[:, ex], axis=1)
        assign[ex] = np.arange(ex.size)
        self._finish(S, ex, assign, it, converged)
        return self

    def _finish(self, S, exemplars, assign, n_iter, converged):
        self.cluster_centers_indices_ = exemplars
        self.labels_ = canonicalize(assign)
        self.n_iter_ = n_iter
        self.converged_ = converged
        self.net_similarity_ = float(S[np.arange(S.shape[0]), exemplars[assign]].sum())


def kmeans(points, k, seed=0, n_init=10, max_iter=300) -> ClusteringResult:
    est = KMeans(k, n_init=n_init, max_iter=max_iter, random_state=seed).fit(points)
    return ClusteringResult(
        SessionLabeling(tuple(est.labels_.tolist())), est.n_iter_, est.inertia_, est.converged_,
        list(est.inertia_history_), {"k": k, "n_init": n_init, "max_iter": max_iter, "seed": seed},
    )


def gmm(points, k, seed=0, max_iter=100, tol=1e-6, var_floor=1e-6) -> ClusteringResult:
    est = GaussianMixture(k, max_iter=max_iter, tol=tol, var_floor=var_floor, random_state=seed).fit(points)
    return ClusteringResult(
        SessionLabeling(tuple(est.labels_.tolist())), est.n_iter_, est.log_likelihood_, est.converged_,
        list(est.log_likelihood_history_),
        {"k": k, "max_iter": max_iter, "tol": tol, "var_floor": var_floor, "seed": seed},
    )


def dbscan(points, eps=0.5, min_pts=3) -> ClusteringResult:
    est = DBSCAN(eps=eps, min_samples=min_pts).fit(points)
    return ClusteringResult(
        SessionLabeling(tuple(est.labels_.tolist())), 1, float(est.noise_mask_.sum()), True,
        [], {"eps": eps, "min_pts": min_pts},
    )


def affinity_propagation(points, damping=0.9, max_iter=200, convergence_window=15) -> ClusteringResult:
    est = AffinityPropagation(damping=damping, max_iter=max_iter, convergence_iter=convergence_window).fit(points)
    return ClusteringResult(
        SessionLabeling(tuple(est.labels_.tolist())), est.n_iter_, est.net_similarity_, est.converged_,
        [], {"damping": damping, "max_iter": max_iter, "convergence_window": convergence_window},
    )


def cluster_points(points, method, k=None, seed=0, **params) -> ClusteringResult:
    """Dispatch on ``method``; ``k`` is ignored by the density and message-passing methods."""
    points = np.asarray(points, dtype=np.float64)
    if method == "kmeans":
        return kmeans(points, k, seed=seed, **params)
    if method == "gmm":
        return gmm(points, k, seed=seed, **params)
    if method == "dbscan":
        return dbscan(points, **params)
    if method == "ap":
        return affinity_propagation(points, **params)
    raise ConfigError(f"unknown clustering method {method!r}; expected one of {METHODS}")
