"""Shapley and asymmetric Shapley attribution.

Local attributions average the marginal contribution of each feature over
permutations, either by exact enumeration of the consistent set or by Monte
Carlo draws from it. Global attributions average local ones over (x, y) pairs
from a dataset, which ties their sum to an accuracy decomposition: the
attribution mass equals the model's sampled-label accuracy minus the accuracy
left when every feature is marginalized away.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .coalitions import (
    DEFAULT_ENUMERATION_CAP,
    DEFAULT_REJECTION_BUDGET,
    OrderingSpec,
    WeightedOrdering,
    enumerate_consistent,
    sample_consistent_batch,
)
from .data import Dataset
from .errors import ValidationError
from .values import BackgroundSet, ConditionalSampler, cached_value_fn

MAX_MASK_FEATURES = 62  # coalition masks live in int64


@dataclass
class TableValueFunction:
    """v(S) read straight from a table of 2^n values; the exact-oracle workhorse."""

    table: np.ndarray
    n: int
    evaluations: int = 0
    hits: int = 0
    _seen: set = field(default_factory=set)

    def __post_init__(self):
        self.table = np.asarray(self.table, dtype=np.float64).reshape(-1)
        if self.table.shape[0] != (1 << self.n):
            raise ValidationError(
                f"table has {self.table.shape[0]} entries, expected {1 << self.n}"
            )

    def value(self, S) -> tuple[float, float]:
        return self.value_only(S), 0.0

    def value_only(self, S) -> float:
        from .values import as_mask

        mask = as_mask(S, self.n)
        if mask in self._seen:
            self.hits += 1
        else:
            self._seen.add(mask)
            self.evaluations += 1
        return float(self.table[mask])


@dataclass
class AttributionResult:
    """Per-feature attribution with its baseline v({}) and total v(N)."""

    means: np.ndarray
    stderrs: np.ndarray
    n_samples: int
    baseline: float
    total: float
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.means = np.asarray(self.means, dtype=np.float64)
        self.stderrs = np.asarray(self.stderrs, dtype=np.float64)
        if (self.stderrs < 0).any():
            raise ValidationError("negative stderr")

    @property
    def n(self) -> int:
        return self.means.shape[0]

    def sum(self) -> float:
        return math.fsum(map(float, self.means))

    def efficiency_gap(self) -> float:
        """Sum of attributions minus (total - baseline); ~0 by Axiom 1."""
        return self.sum() - (self.total - self.baseline)

    def to_json_dict(self, feature_names=None) -> dict:
        d = {
            "means": self.means.tolist(),
            "stderrs": self.stderrs.tolist(),
            "n_samples": self.n_samples,
            "baseline": self.baseline,
            "total": self.total,
            "metadata": self.metadata,
        }
        if feature_names is not None:
            d["features"] = list(feature_names)
        return d


def _as_spec(ordering) -> OrderingSpec:
    if isinstance(ordering, WeightedOrdering):
        return ordering.effective()
    if isinstance(ordering, OrderingSpec):
        return ordering
    raise ValidationError(f"expected an OrderingSpec or WeightedOrdering, got {type(ordering).__name__}")


def _perm_matrix(perms) -> np.ndarray:
    if isinstance(perms, np.ndarray):
        return perms.astype(np.int64, copy=False)
    return np.array([p.order for p in perms], dtype=np.int64)


def marginal_contributions(v, perms) -> np.ndarray:
    """Matrix of v(pre ∪ {i}) - v(pre) terms, aligned with the permutation matrix.

    Entry [r, k] is the marginal contribution of feature perms[r, k] within
    draw r. Each row telescopes to v(N) - v({}) up to one rounding per term.
    Distinct coalitions are evaluated once through v regardless of how many
    permutations touch them.
    """
    P = _perm_matrix(perms)
    R, n = P.shape
    if n > MAX_MASK_FEATURES:
        raise ValidationError(f"coalition masks support up to {MAX_MASK_FEATURES} features, got {n}")
    bits = np.int64(1) << P
    with_next = np.cumsum(bits, axis=1)
    pre = with_next - bits
    all_masks = np.concatenate([pre.ravel(), with_next.ravel()])
    uniq, inv = np.unique(all_masks, return_inverse=True)
    vals = np.array([v.value_only(int(mk)) for mk in uniq])
    flat = vals[inv]
    pre_vals = flat[: R * n].reshape(R, n)
    next_vals = flat[R * n :].reshape(R, n)
    return next_vals - pre_vals


def _per_feature_stats(P: np.ndarray, diffs: np.ndarray, with_stderr: bool) -> tuple[np.ndarray, np.ndarray]:
    R, n = P.shape
    means = np.empty(n)
    stderrs = np.zeros(n)
    for i in range(n):
        c = diffs[P == i]
        means[i] = math.fsum(map(float, c)) / R
        if with_stderr and R > 1:
            stderrs[i] = float(np.std(c, ddof=1)) / math.sqrt(R)
    return means, stderrs


def exact_asv(
    v, ordering, cap: int = DEFAULT_ENUMERATION_CAP
) -> AttributionResult:
    """Attribution averaged over every permutation consistent with the ordering.

    With an empty ordering this is the plain Shapley value in permutation form.
    """
    spec = _as_spec(ordering)
    perms = enumerate_consistent(spec, cap=cap)
    P = _perm_matrix(perms)
    diffs = marginal_contributions(v, P)
    means, _ = _per_feature_stats(P, diffs, with_stderr=False)
    n = spec.n
    return AttributionResult(
        means=means,
        stderrs=np.zeros(n),
        n_samples=P.shape[0],
        baseline=v.value_only(0),
        total=v.value_only((1 << n) - 1),
        metadata={"estimator": "exact", "ordering": spec.to_json_dict()},
    )


def exact_shapley_subset_form(v, n: int | None = None) -> AttributionResult:
    """Shapley values by the coalition-weighted subset formula.

    phi(i) = sum over S not containing i of |S|!(n-|S|-1)!/n! [v(S+i) - v(S)].
    Independent of the permutation form; used to cross-check it.
    """
    if n is None:
        n = v.n
    if n > MAX_MASK_FEATURES:
        raise ValidationError(f"subset form supports up to {MAX_MASK_FEATURES} features, got {n}")
    fact = [math.factorial(k) for k in range(n + 1)]
    weight = [fact[s] * fact[n - s - 1] / fact[n] for s in range(n)]
    terms: list[list[float]] = [[] for _ in range(n)]
    table = [v.value_only(mask) for mask in range(1 << n)]
    for mask in range(1 << n):
        s = bin(mask).count("1")
        for i in range(n):
            bit = 1 << i
            if not mask & bit:
                terms[i].append(weight[s] * (table[mask | bit] - table[mask]))
    means = np.array([math.fsum(t) for t in terms])
    return AttributionResult(
        means=means,
        stderrs=np.zeros(n),
        n_samples=1 << n,
        baseline=table[0],
        total=table[(1 << n) - 1],
        metadata={"estimator": "subset-form"},
    )


def mc_asv(
    v,
    ordering,
    n_perms: int,
    rng: np.random.Generator,
    budget: int = DEFAULT_REJECTION_BUDGET,
) -> AttributionResult:
    """Monte Carlo attribution over permutations drawn uniformly from the
    consistent set. Per-feature stderr comes from across-permutation variance;
    each draw's contributions telescope, so efficiency carries no MC error.
    """
    if n_perms < 2:
        raise ValidationError(f"need at least 2 permutation draws for stderr, got {n_perms}")
    spec = _as_spec(ordering)
    P = sample_consistent_batch(spec, n_perms, rng, budget=budget)
    diffs = marginal_contributions(v, P)
    means, stderrs = _per_feature_stats(P, diffs, with_stderr=True)
    n = spec.n
    return AttributionResult(
        means=means,
        stderrs=stderrs,
        n_samples=n_perms,
        baseline=v.value_only(0),
        total=v.value_only((1 << n) - 1),
        metadata={"estimator": "mc", "ordering": spec.to_json_dict()},
    )


@dataclass
class GlobalAttribution:
    """Dataset-averaged attribution plus the accuracy terms its sum decomposes into.

    accuracy_full is E[f_y(x)] (sampled-label accuracy of the model);
    accuracy_empty is what remains with every feature marginalized away.
    By the sum rule, sum(means) ~ accuracy_full - accuracy_empty.
    """

    means: np.ndarray
    stderrs: np.ndarray
    n_points: int
    accuracy_full: float
    accuracy_empty: float
    metadata: dict = field(default_factory=dict)
    locals: np.ndarray | None = None
    local_stderrs: np.ndarray | None = None

    @property
    def n(self) -> int:
        return self.means.shape[0]

    def sum(self) -> float:
        return math.fsum(map(float, self.means))

    def sum_rule_gap(self) -> float:
        return self.sum() - (self.accuracy_full - self.accuracy_empty)

    def to_json_dict(self, feature_names=None) -> dict:
        d = {
            "means": self.means.tolist(),
            "stderrs": self.stderrs.tolist(),
            "n_points": self.n_points,
            "accuracy_full": self.accuracy_full,
            "accuracy_empty": self.accuracy_empty,
            "metadata": self.metadata,
        }
        if feature_names is not None:
            d["features"] = list(feature_names)
        return d


def _point_budget(n_rows: int, budget, seed: int) -> np.ndarray:
    if budget is None or budget >= n_rows:
        return np.arange(n_rows)
    if budget < 1:
        raise ValidationError(f"point budget must be positive, got {budget}")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xB0D6E7]))
    return np.sort(rng.choice(n_rows, size=budget, replace=False))


def global_asv(
    pred,
    dataset: Dataset,
    ordering,
    *,
    bg: BackgroundSet | None = None,
    sampler: ConditionalSampler | None = None,
    m: int = 100,
    estimator: str = "exact",
    n_perms: int = 200,
    budget: int | None = None,
    seed: int = 0,
    cap: int = DEFAULT_ENUMERATION_CAP,
    rejection_budget: int = DEFAULT_REJECTION_BUDGET,
    collect_locals: bool = False,
    workers: int = 1,
) -> GlobalAttribution:
    """Average local attributions over (x, y) rows, y taken as the true label.

    budget caps how many rows participate (sampled without replacement,
    default all). Each row gets its own frozen value-function cache and its
    own derived random stream, so results are identical for any worker count.
    """
    spec = _as_spec(ordering)
    if spec.n != dataset.n:
        raise ValidationError(f"ordering covers {spec.n} features, dataset has {dataset.n}")
    if estimator not in ("exact", "mc"):
        raise ValidationError(f"estimator must be 'exact' or 'mc', got {estimator!r}")
    if workers < 1:
        raise ValidationError(f"workers must be >= 1, got {workers}")
    idx = _point_budget(dataset.n_rows, budget, seed)
    B = idx.shape[0]
    n = dataset.n
    L = np.empty((B, n))
    LSE = np.empty((B, n))
    totals = np.empty(B)
    baselines = np.empty(B)
    counters = np.zeros((B, 2), dtype=np.int64)

    def run_point(j: int) -> None:
        row = int(idx[j])
        vf = cached_value_fn(
            pred, dataset.X[row], int(dataset.y[row]),
            bg=bg, sampler=sampler, m=m, seed=seed, point_index=row,
        )
        if estimator == "exact":
            res = exact_asv(vf, spec, cap=cap)
        else:
            rng = np.random.default_rng(np.random.SeedSequence([seed, 0x9E12, row]))
            res = mc_asv(vf, spec, n_perms, rng, budget=rejection_budget)
        L[j] = res.means
        LSE[j] = res.stderrs
        totals[j] = res.total
        baselines[j] = res.baseline
        counters[j] = (vf.evaluations, vf.prediction_rows)

    if workers == 1:
        for j in range(B):
            run_point(j)
    else:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(run_point, range(B)))
    value_evaluations = int(counters[:, 0].sum())
    prediction_rows = int(counters[:, 1].sum())
    means = np.array([math.fsum(map(float, L[:, i])) / B for i in range(n)])
    if B > 1:
        # Across-point spread of noisy local estimates; absorbs their MC error.
        stderrs = np.std(L, axis=0, ddof=1) / math.sqrt(B)
    else:
        stderrs = LSE[0].copy()
    return GlobalAttribution(
        means=means,
        stderrs=stderrs,
        n_points=B,
        accuracy_full=math.fsum(map(float, totals)) / B,
        accuracy_empty=math.fsum(map(float, baselines)) / B,
        metadata={
            "estimator": estimator,
            "ordering": spec.to_json_dict(),
            "seed": seed,
            "m": m,
            "n_perms": n_perms if estimator == "mc" else None,
            "value_evaluations": value_evaluations,
            "prediction_rows": prediction_rows,
        },
        locals=L if collect_locals else None,
        local_stderrs=LSE if collect_locals else None,
    )


def coalition_accuracy(
    pred,
    dataset: Dataset,
    U,
    *,
    bg: BackgroundSet | None = None,
    sampler: ConditionalSampler | None = None,
    m: int = 100,
    budget: int | None = None,
    seed: int = 0,
) -> tuple[float, float]:
    """Sampled-label accuracy attainable from the features in U alone:
    the dataset average of v_{f_y(x)}(U). Returns (mean, stderr)."""
    from .values import as_mask

    mask = as_mask(U, dataset.n)
    idx = _point_budget(dataset.n_rows, budget, seed)
    B = idx.shape[0]
    vals = np.empty(B)
    for j, row in enumerate(idx):
        row = int(row)
        vf = cached_value_fn(
            pred, dataset.X[row], int(dataset.y[row]),
            bg=bg, sampler=sampler, m=m, seed=seed, point_index=row,
        )
        vals[j] = vf.value_only(mask)
    mean = math.fsum(map(float, vals)) / B
    stderr = float(np.std(vals, ddof=1)) / math.sqrt(B) if B > 1 else 0.0
    return mean, stderr


def accuracy_of_coalition(pred, dataset, U, **kwargs) -> float:
    return coalition_accuracy(pred, dataset, U, **kwargs)[0]


def partition_sum_check(
    glob: GlobalAttribution,
    partition,
    accuracy_fn,
) -> dict:
    """Check the group-sum identities tying attribution mass to accuracy gains.

    partition must be the ordered groups the global run's ordering was built
    from. accuracy_fn(coalition mask) -> (mean, stderr) evaluates the
    features-only accuracy. For each group, the sum of its attributions is
    compared to the accuracy gained when that group joins the features before
    it; cumulative sums are compared against accuracy above the empty set.
    """
    groups = [tuple(sorted(g)) for g in partition]
    flat = [i for g in groups for i in g]
    if sorted(flat) != list(range(glob.n)):
        raise ValidationError(f"partition {groups} does not cover features 0..{glob.n - 1}")
    echo = glob.metadata.get("ordering") or {}
    declared = echo.get("groups")
    if declared is not None and [list(g) for g in groups] != [sorted(g) for g in declared]:
        raise ValidationError(
            f"partition {groups} does not match the ordering the attribution was run with: {declared}"
        )
    acc_empty, se_empty = accuracy_fn(0)
    rows = []
    prefix_mask = 0
    prev_acc, prev_se = acc_empty, se_empty
    for g in groups:
        gmask = sum(1 << i for i in g)
        prefix_mask |= gmask
        acc, se = accuracy_fn(prefix_mask)
        phi_sum = math.fsum(float(glob.means[i]) for i in g)
        phi_se = math.sqrt(math.fsum(float(glob.stderrs[i]) ** 2 for i in g))
        gain = acc - prev_acc
        gain_se = math.sqrt(se**2 + prev_se**2)
        cum_phi = math.fsum(float(glob.means[i]) for i in range(glob.n) if prefix_mask >> i & 1)
        cum_se = math.sqrt(
            math.fsum(float(glob.stderrs[i]) ** 2 for i in range(glob.n) if prefix_mask >> i & 1)
        )
        cum_gain = acc - acc_empty
        cum_gain_se = math.sqrt(se**2 + se_empty**2)
        rows.append(
            {
                "group": list(g),
                "phi_sum": phi_sum,
                "phi_stderr": phi_se,
                "accuracy_gain": gain,
                "accuracy_gain_stderr": gain_se,
                "gap": phi_sum - gain,
                "combined_stderr": math.sqrt(phi_se**2 + gain_se**2),
                "cumulative_phi": cum_phi,
                "cumulative_gain": cum_gain,
                "cumulative_gap": cum_phi - cum_gain,
                "cumulative_combined_stderr": math.sqrt(cum_se**2 + cum_gain_se**2),
            }
        )
        prev_acc, prev_se = acc, se
    gaps = [
        abs(r["gap"]) / r["combined_stderr"] if r["combined_stderr"] > 0 else 0.0
        for r in rows
    ]
    return {
        "accuracy_empty": acc_empty,
        "groups": rows,
        "max_gap_in_stderr": max(gaps) if gaps else 0.0,
    }
