"""Coalition value functions: what a prediction is worth when only some features are known.

Two marginalization modes. Off-manifold splices background draws into the
out-of-coalition slots unconditionally. On-manifold draws the out-of-coalition
slots from p(x' | x_S) via a ConditionalSampler (exact-match, k-NN, or a
generative process with closed-form conditionals).

Per-instance draws are frozen: the off-manifold background subsample is drawn
once and shared by every coalition, and on-manifold per-coalition draws are
keyed by (seed, point index, coalition mask). That makes nullity and
efficiency hold exactly as float identities, not just in expectation.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Iterable, Protocol, runtime_checkable

import numpy as np

from .coalitions import Coalition
from .data import Dataset, Schema
from .errors import EstimatorError, SchemaError, ValidationError

logger = logging.getLogger(__name__)

DEFAULT_KNN_K = 10


@runtime_checkable
class Predictor(Protocol):
    n_features: int
    n_classes: int

    def predict(self, X: np.ndarray) -> np.ndarray:
        """Rows of class probabilities, shape (len(X), n_classes)."""
        ...


def as_mask(S, n: int) -> int:
    """Accept a Coalition, an int bitmask, or an iterable of indices."""
    if isinstance(S, Coalition):
        if S.n != n:
            raise ValidationError(f"coalition over {S.n} features, expected {n}")
        return S.mask
    if isinstance(S, (int, np.integer)):
        mask = int(S)
        if not 0 <= mask < (1 << n):
            raise ValidationError(f"mask {mask} outside [0, 2^{n})")
        return mask
    return Coalition.of(S, n).mask


def mask_indices(mask: int, n: int) -> np.ndarray:
    return np.array([i for i in range(n) if mask >> i & 1], dtype=np.int64)


def splice(x: np.ndarray, S, x_prime: np.ndarray) -> np.ndarray:
    """x_S joined with x'_{S-bar}: feature i from x when i is in S, else from x'."""
    x = np.asarray(x, dtype=np.float64)
    x_prime = np.asarray(x_prime, dtype=np.float64)
    if x.shape != x_prime.shape:
        raise SchemaError(f"spliced points disagree in shape: {x.shape} vs {x_prime.shape}")
    n = x.shape[-1]
    mask = as_mask(S, n)
    keep = np.array([bool(mask >> i & 1) for i in range(n)])
    return np.where(keep, x, x_prime)


@dataclass
class BackgroundSet:
    """Rows standing in for p(x'), optionally weighted."""

    rows: np.ndarray
    weights: np.ndarray | None = None

    def __post_init__(self):
        self.rows = np.asarray(self.rows, dtype=np.float64)
        if self.rows.ndim != 2 or self.rows.shape[0] == 0:
            raise ValidationError(f"background needs a nonempty 2-d row array, got shape {self.rows.shape}")
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=np.float64)
            if w.shape != (self.rows.shape[0],):
                raise ValidationError(f"weights shape {w.shape} does not match {self.rows.shape[0]} rows")
            if (w < 0).any() or w.sum() <= 0:
                raise ValidationError("weights must be nonnegative with positive total")
            self.weights = w / w.sum()

    @classmethod
    def from_dataset(cls, ds: Dataset) -> "BackgroundSet":
        return cls(ds.X)

    def __len__(self) -> int:
        return self.rows.shape[0]


def _mean_and_stderr(vals: np.ndarray, exhaustive: bool) -> tuple[float, float]:
    """Compensated mean plus standard error (0 when the draw is exhaustive).

    Identical values short-circuit to that value so that coalitions whose
    completions all agree (the full set, ignored features, constant models)
    return it bit for bit.
    """
    m = vals.shape[0]
    first = float(vals[0])
    if np.all(vals == vals[0]):
        return first, 0.0
    mean = math.fsum(map(float, vals)) / m
    if exhaustive or m < 2:
        return mean, 0.0
    sd = float(np.std(vals, ddof=1))
    return mean, sd / math.sqrt(m)


class ConditionalSampler(Protocol):
    def complete(
        self, x: np.ndarray, s_idx: np.ndarray, m: int, rng: np.random.Generator
    ) -> tuple[np.ndarray, bool]:
        """m rows agreeing with x on s_idx, plus whether they exhaust the
        conditional population (in which case the mean carries no sampling error)."""
        ...


def _discrete_mutual_information(codes: np.ndarray, labels: np.ndarray) -> float:
    """Empirical mutual information between two integer-coded columns, in nats."""
    a = codes.astype(np.int64)
    b = labels.astype(np.int64)
    ka, kb = a.max() + 1, b.max() + 1
    joint = np.zeros((ka, kb))
    np.add.at(joint, (a, b), 1.0)
    joint /= joint.sum()
    pa = joint.sum(axis=1, keepdims=True)
    pb = joint.sum(axis=0, keepdims=True)
    nz = joint > 0
    return float(np.sum(joint[nz] * np.log(joint[nz] / (pa @ pb)[nz])))


class KNNSampler:
    """Conditional completions from the k nearest dataset rows.

    Discrete conditioning features must match exactly; continuous ones rank
    candidates by standardized Euclidean distance. With no continuous
    conditioning there is no ranking, so the whole candidate set is the
    neighborhood. Zero exact matches on the discrete side are handled by
    relaxing discrete features one at a time, least label-informative first.
    """

    def __init__(self, dataset: Dataset, k: int = DEFAULT_KNN_K):
        if k < 1:
            raise ValidationError(f"k must be positive, got {k}")
        self.dataset = dataset
        self.k = k
        self.schema = dataset.schema
        self._discrete = set(self.schema.discrete_indices().tolist())
        sd = dataset.X.std(axis=0)
        safe = np.where(sd > 0, sd, 1.0)
        self._inv_scale = np.where(sd > 0, 1.0 / safe, 0.0)
        # Relaxation order: ascending mutual information with the label.
        mi = {
            i: _discrete_mutual_information(dataset.X[:, i], dataset.y)
            for i in sorted(self._discrete)
        }
        self._relax_order = sorted(mi, key=lambda i: (mi[i], i))

    def _candidates(self, x: np.ndarray, disc: list[int]) -> np.ndarray:
        X = self.dataset.X
        keep = np.ones(X.shape[0], dtype=bool)
        for i in disc:
            keep &= X[:, i] == x[i]
        return np.flatnonzero(keep)

    def complete(self, x, s_idx, m, rng):
        disc = [i for i in s_idx if i in self._discrete]
        cont = [i for i in s_idx if i not in self._discrete]
        cand = self._candidates(x, disc)
        while cand.size == 0:
            drop = next(i for i in self._relax_order if i in disc)
            disc.remove(drop)
            logger.warning(
                "no rows match the discrete conditioning set; relaxing feature %r",
                self.schema.features[drop].name,
            )
            cand = self._candidates(x, disc)
        if cont:
            diffs = (self.dataset.X[np.ix_(cand, cont)] - x[cont]) * self._inv_scale[cont]
            d = np.einsum("ij,ij->i", diffs, diffs)
            order = np.argsort(d, kind="stable")[: self.k]
            pool = cand[order]
        else:
            pool = cand
        sel = pool[rng.integers(0, pool.size, size=m)]
        out = self.dataset.X[sel].copy()
        out[:, s_idx] = x[s_idx]
        return out, False


class ExactMatchSampler:
    """Conditional completions from rows matching x exactly on the coalition.

    Valid for all-discrete conditioning sets; conditioning on a continuous
    feature (where exact matching is degenerate) or hitting zero matches
    delegates to the k-NN sampler. When the match population fits within m,
    every match is used once and the conditional mean is exact.
    """

    def __init__(self, dataset: Dataset, k: int = DEFAULT_KNN_K):
        self.dataset = dataset
        self.schema = dataset.schema
        self._discrete = set(self.schema.discrete_indices().tolist())
        self._knn = KNNSampler(dataset, k=k)

    def complete(self, x, s_idx, m, rng):
        if any(i not in self._discrete for i in s_idx):
            logger.debug("continuous feature in conditioning set; using k-NN completion")
            return self._knn.complete(x, s_idx, m, rng)
        keep = np.ones(self.dataset.n_rows, dtype=bool)
        for i in s_idx:
            keep &= self.dataset.X[:, i] == x[i]
        cand = np.flatnonzero(keep)
        if cand.size == 0:
            logger.warning(
                "exact-match conditioning found no rows for features %s; falling back to k-NN",
                [self.schema.features[int(i)].name for i in s_idx],
            )
            return self._knn.complete(x, s_idx, m, rng)
        if cand.size <= m:
            sel = cand
            exhaustive = True
        else:
            sel = cand[rng.integers(0, cand.size, size=m)]
            exhaustive = False
        out = self.dataset.X[sel].copy()
        out[:, s_idx] = x[s_idx]
        return out, exhaustive


@runtime_checkable
class GenerativeProcessLike(Protocol):
    def conditional_samples(
        self, x: np.ndarray, s_idx: np.ndarray, m: int, rng: np.random.Generator
    ) -> np.ndarray:
        ...


class GenerativeSampler:
    """Closed-form conditionals supplied by a synthetic generative process."""

    def __init__(self, process: GenerativeProcessLike):
        if not isinstance(process, GenerativeProcessLike):
            raise ValidationError("generative strategy needs a process with conditional_samples")
        self.process = process

    def complete(self, x, s_idx, m, rng):
        rows = np.asarray(self.process.conditional_samples(x, s_idx, m, rng), dtype=np.float64)
        if rows.shape != (m, x.shape[-1]):
            raise EstimatorError(
                f"process returned shape {rows.shape}, expected ({m}, {x.shape[-1]})"
            )
        rows = rows.copy()
        rows[:, s_idx] = x[s_idx]
        return rows, False


_STRATEGY_ALIASES = {
    "exactmatch": "exact-match",
    "exact-match": "exact-match",
    "knn": "knn",
    "k-nn": "knn",
    "generative": "generative",
}


def normalize_strategy(name: str) -> str:
    key = name.strip().lower().replace("_", "-")
    if key not in _STRATEGY_ALIASES:
        raise ValidationError(
            f"unknown conditional strategy {name!r}; expected exact-match, k-NN, or generative"
        )
    return _STRATEGY_ALIASES[key]


def make_sampler(
    strategy: str,
    dataset: Dataset | None = None,
    process: GenerativeProcessLike | None = None,
    k: int = DEFAULT_KNN_K,
) -> ConditionalSampler:
    strategy = normalize_strategy(strategy)
    if strategy == "generative":
        if process is None:
            raise ValidationError("generative strategy needs a process")
        return GenerativeSampler(process)
    if dataset is None:
        raise ValidationError(f"{strategy} strategy needs a dataset")
    if strategy == "exact-match":
        return ExactMatchSampler(dataset, k=k)
    return KNNSampler(dataset, k=k)


def _check_point(x: np.ndarray, y: int, pred: Predictor) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if x.shape[0] != pred.n_features:
        raise SchemaError(f"point has {x.shape[0]} features, predictor expects {pred.n_features}")
    if not 0 <= y < pred.n_classes:
        raise ValidationError(f"class index {y} outside [0, {pred.n_classes})")
    return x


class CachedValueFunction:
    """Memoized v(S) for one (predictor, point, class, strategy, seed) context.

    Construct through off_manifold_fn / on_manifold_fn / cached_value_fn.
    Tracks distinct coalition evaluations, cache hits, and total predictor rows.
    """

    def __init__(self, pred: Predictor, x, y: int, n: int):
        self.pred = pred
        self.x = _check_point(x, y, pred)
        self.y = int(y)
        self.n = n
        self._cache: dict[int, tuple[float, float]] = {}
        self.evaluations = 0
        self.hits = 0
        self.prediction_rows = 0

    def _fy(self, rows: np.ndarray) -> np.ndarray:
        self.prediction_rows += rows.shape[0]
        return self.pred.predict(rows)[:, self.y]

    def _compute(self, mask: int) -> tuple[float, float]:
        raise NotImplementedError

    def value(self, S) -> tuple[float, float]:
        mask = as_mask(S, self.n)
        hit = self._cache.get(mask)
        if hit is not None:
            self.hits += 1
            return hit
        self.evaluations += 1
        out = self._compute(mask)
        self._cache[mask] = out
        return out

    def value_only(self, S) -> float:
        return self.value(S)[0]

    def __len__(self) -> int:
        return len(self._cache)


class OffManifoldValueFunction(CachedValueFunction):
    """v(S) by splicing frozen unconditional background draws (drawn once,
    shared across every coalition)."""

    def __init__(self, pred, x, y, bg: BackgroundSet, m: int, seed: int = 0, point_index: int = 0):
        super().__init__(pred, x, y, pred.n_features)
        if m < 1:
            raise ValidationError(f"sample count must be positive, got {m}")
        if bg.rows.shape[1] != self.n:
            raise SchemaError(f"background rows have {bg.rows.shape[1]} features, expected {self.n}")
        rng = np.random.default_rng(np.random.SeedSequence([seed, point_index]))
        if bg.weights is None and m >= len(bg):
            self._draws = bg.rows
            self._exhaustive = True
        else:
            sel = rng.choice(len(bg), size=m, replace=True, p=bg.weights)
            self._draws = bg.rows[sel]
            self._exhaustive = False

    def _compute(self, mask: int) -> tuple[float, float]:
        keep = np.array([bool(mask >> i & 1) for i in range(self.n)])
        spliced = np.where(keep, self.x, self._draws)
        return _mean_and_stderr(self._fy(spliced), self._exhaustive)


class OnManifoldValueFunction(CachedValueFunction):
    """v(S) by conditional completion; fresh draws per coalition, frozen by
    deriving the coalition RNG from (seed, point index, mask)."""

    def __init__(self, pred, x, y, sampler: ConditionalSampler, m: int, seed: int = 0, point_index: int = 0):
        super().__init__(pred, x, y, pred.n_features)
        if m < 1:
            raise ValidationError(f"sample count must be positive, got {m}")
        self.sampler = sampler
        self.m = m
        self.seed = int(seed)
        self.point_index = int(point_index)

    def _compute(self, mask: int) -> tuple[float, float]:
        if mask == (1 << self.n) - 1:
            return float(self._fy(self.x[None, :])[0]), 0.0
        rng = np.random.default_rng(
            np.random.SeedSequence([self.seed, self.point_index, mask])
        )
        rows, exhaustive = self.sampler.complete(self.x, mask_indices(mask, self.n), self.m, rng)
        return _mean_and_stderr(self._fy(rows), exhaustive)


def off_manifold_fn(pred, x, y, bg: BackgroundSet, m: int, seed: int = 0, point_index: int = 0) -> OffManifoldValueFunction:
    return OffManifoldValueFunction(pred, x, y, bg, m, seed, point_index)


def on_manifold_fn(pred, x, y, sampler: ConditionalSampler, m: int, seed: int = 0, point_index: int = 0) -> OnManifoldValueFunction:
    return OnManifoldValueFunction(pred, x, y, sampler, m, seed, point_index)


def cached_value_fn(
    pred,
    x,
    y: int,
    *,
    bg: BackgroundSet | None = None,
    sampler: ConditionalSampler | None = None,
    m: int = 100,
    seed: int = 0,
    point_index: int = 0,
) -> CachedValueFunction:
    """Factory for a memoized value function; give exactly one of bg or sampler."""
    if (bg is None) == (sampler is None):
        raise ValidationError("give exactly one of bg (off-manifold) or sampler (on-manifold)")
    if bg is not None:
        return off_manifold_fn(pred, x, y, bg, m, seed, point_index)
    return on_manifold_fn(pred, x, y, sampler, m, seed, point_index)


def off_manifold_value(pred, x, y, S, bg: BackgroundSet, m: int, rng) -> tuple[float, float]:
    """One-shot off-manifold v(S): m background draws (exhaustive when m covers
    an unweighted background), spliced and averaged."""
    x = _check_point(x, y, pred)
    n = pred.n_features
    if m < 1:
        raise ValidationError(f"sample count must be positive, got {m}")
    if bg.weights is None and m >= len(bg):
        draws, exhaustive = bg.rows, True
    else:
        sel = rng.choice(len(bg), size=m, replace=True, p=bg.weights)
        draws, exhaustive = bg.rows[sel], False
    mask = as_mask(S, n)
    keep = np.array([bool(mask >> i & 1) for i in range(n)])
    spliced = np.where(keep, x, draws)
    return _mean_and_stderr(pred.predict(spliced)[:, y], exhaustive)


def on_manifold_value(pred, x, y, S, cond: ConditionalSampler, m: int, rng) -> tuple[float, float]:
    """One-shot on-manifold v(S): m conditional completions of x on S, averaged."""
    x = _check_point(x, y, pred)
    n = pred.n_features
    if m < 1:
        raise ValidationError(f"sample count must be positive, got {m}")
    mask = as_mask(S, n)
    if mask == (1 << n) - 1:
        return float(pred.predict(x[None, :])[0, y]), 0.0
    rows, exhaustive = cond.complete(x, mask_indices(mask, n), m, rng)
    return _mean_and_stderr(pred.predict(rows)[:, y], exhaustive)
