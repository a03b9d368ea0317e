"""Feature coalitions, permutations, and precedence-constrained orderings.

An OrderingSpec declares which features must precede which, either as an
ordered partition into groups (every member of an earlier group before every
member of a later one) or as individual precedence edges, or both. The
distribution over permutations is always uniform over the consistent set.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    CyclicOrderingError,
    EnumerationCapError,
    SamplingBudgetError,
    ValidationError,
)

DEFAULT_ENUMERATION_CAP = 10
DEFAULT_REJECTION_BUDGET = 1_000_000  # rejected draws allowed per requested sample


@dataclass(frozen=True)
class Coalition:
    """A subset of the feature indices {0, ..., n-1}."""

    members: frozenset[int]
    n: int

    def __post_init__(self):
        if self.n < 0:
            raise ValidationError(f"feature count must be nonnegative, got {self.n}")
        if not all(0 <= i < self.n for i in self.members):
            raise ValidationError(
                f"coalition members {sorted(self.members)} outside [0, {self.n})"
            )

    @classmethod
    def of(cls, members, n: int) -> "Coalition":
        return cls(frozenset(members), n)

    @classmethod
    def empty(cls, n: int) -> "Coalition":
        return cls(frozenset(), n)

    @classmethod
    def full(cls, n: int) -> "Coalition":
        return cls(frozenset(range(n)), n)

    @classmethod
    def from_mask(cls, mask: int, n: int) -> "Coalition":
        return cls(frozenset(i for i in range(n) if mask >> i & 1), n)

    @property
    def mask(self) -> int:
        return sum(1 << i for i in self.members)

    def complement(self) -> "Coalition":
        return Coalition(frozenset(range(self.n)) - self.members, self.n)

    def add(self, i: int) -> "Coalition":
        return Coalition(self.members | {i}, self.n)

    def __contains__(self, i: int) -> bool:
        return i in self.members

    def __len__(self) -> int:
        return len(self.members)


@dataclass(frozen=True)
class Permutation:
    """A bijection on {0, ..., n-1}, stored as the sequence of features in order."""

    order: tuple[int, ...]

    def __post_init__(self):
        if sorted(self.order) != list(range(len(self.order))):
            raise ValidationError(f"not a permutation of 0..{len(self.order) - 1}: {self.order}")

    @property
    def n(self) -> int:
        return len(self.order)

    def positions(self) -> tuple[int, ...]:
        """positions()[i] is the slot at which feature i appears."""
        pos = [0] * self.n
        for slot, feat in enumerate(self.order):
            pos[feat] = slot
        return tuple(pos)


@dataclass(frozen=True)
class OrderingSpec:
    """Precedence constraints defining a uniform distribution over consistent permutations.

    groups, when given, must be an ordered partition of {0, ..., n-1}; every
    feature of an earlier group precedes every feature of a later one. edges
    are individual (i, j) pairs meaning i must precede j. An empty spec means
    the uniform distribution over all n! permutations.
    """

    n: int
    groups: tuple[tuple[int, ...], ...] | None = None
    edges: frozenset[tuple[int, int]] = field(default_factory=frozenset)

    def __post_init__(self):
        if self.n < 1:
            raise ValidationError(f"feature count must be positive, got {self.n}")
        if self.groups is not None:
            object.__setattr__(
                self, "groups", tuple(tuple(sorted(g)) for g in self.groups)
            )
            seen: set[int] = set()
            for g in self.groups:
                if not g:
                    raise ValidationError("empty group in ordered partition")
                if seen & set(g):
                    raise ValidationError("groups are not pairwise disjoint")
                seen.update(g)
            if seen != set(range(self.n)):
                raise ValidationError(
                    f"groups must partition all {self.n} features, got {sorted(seen)}"
                )
        object.__setattr__(self, "edges", frozenset(tuple(e) for e in self.edges))
        for i, j in self.edges:
            if not (0 <= i < self.n and 0 <= j < self.n):
                raise ValidationError(f"edge ({i}, {j}) outside [0, {self.n})")
            if i == j:
                raise ValidationError(f"self-loop edge ({i}, {j})")
        # Fail fast on cycles: topological sort of the combined relation.
        self._toposort()

    @property
    def is_empty(self) -> bool:
        return self.groups is None and not self.edges

    def _successors(self) -> list[list[int]]:
        """Adjacency of the precedence digraph (group chain plus explicit edges)."""
        succ: list[list[int]] = [[] for _ in range(self.n)]
        if self.groups is not None:
            for ga, gb in zip(self.groups, self.groups[1:]):
                for i in ga:
                    succ[i].extend(gb)
        for i, j in self.edges:
            succ[i].append(j)
        return succ

    def _toposort(self) -> list[int]:
        succ = self._successors()
        indeg = [0] * self.n
        for i in range(self.n):
            for j in succ[i]:
                indeg[j] += 1
        ready = [i for i in range(self.n) if indeg[i] == 0]
        out: list[int] = []
        while ready:
            i = ready.pop()
            out.append(i)
            for j in succ[i]:
                indeg[j] -= 1
                if indeg[j] == 0:
                    ready.append(j)
        if len(out) != self.n:
            raise CyclicOrderingError(
                "precedence constraints contain a cycle; the consistent set is empty"
            )
        return out

    def reversed(self) -> "OrderingSpec":
        """The spec with every precedence constraint flipped."""
        groups = None if self.groups is None else tuple(reversed(self.groups))
        return OrderingSpec(self.n, groups, frozenset((j, i) for i, j in self.edges))

    def to_json_dict(self) -> dict:
        return {
            "n": self.n,
            "groups": None if self.groups is None else [list(g) for g in self.groups],
            "edges": sorted([i, j] for i, j in self.edges),
        }

    @classmethod
    def from_json_dict(cls, obj: dict) -> "OrderingSpec":
        try:
            n = int(obj["n"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"ordering spec needs an integer 'n': {exc}") from exc
        groups = obj.get("groups")
        if groups is not None:
            groups = tuple(tuple(int(i) for i in g) for g in groups)
        edges = frozenset((int(i), int(j)) for i, j in obj.get("edges") or [])
        return cls(n, groups, edges)


@dataclass(frozen=True)
class WeightedOrdering:
    """An OrderingSpec plus a direction.

    'distal' uses the constraints as declared (causal ancestors first);
    'proximate' reverses every precedence constraint before use.
    """

    spec: OrderingSpec
    direction: str = "distal"

    def __post_init__(self):
        if self.direction not in ("distal", "proximate"):
            raise ValidationError(f"direction must be 'distal' or 'proximate', got {self.direction!r}")

    def effective(self) -> OrderingSpec:
        return self.spec if self.direction == "distal" else self.spec.reversed()

    def flipped(self) -> "WeightedOrdering":
        other = "proximate" if self.direction == "distal" else "distal"
        return WeightedOrdering(self.spec, other)

    def to_json_dict(self) -> dict:
        d = self.spec.to_json_dict()
        d["direction"] = self.direction
        return d

    @classmethod
    def from_json_dict(cls, obj: dict) -> "WeightedOrdering":
        return cls(OrderingSpec.from_json_dict(obj), obj.get("direction", "distal"))


def spec_to_json(spec: OrderingSpec | WeightedOrdering) -> str:
    return json.dumps(spec.to_json_dict(), sort_keys=True)


def spec_from_json(text: str) -> WeightedOrdering:
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"malformed ordering-spec JSON: {exc}") from exc
    return WeightedOrdering.from_json_dict(obj)


def is_consistent(perm: Permutation, spec: OrderingSpec) -> bool:
    """Whether perm respects every group precedence and every edge of spec."""
    if perm.n != spec.n:
        raise ValidationError(f"permutation has {perm.n} features, spec has {spec.n}")
    pos = perm.positions()
    if spec.groups is not None:
        hi = -1
        for g in spec.groups:
            lo = min(pos[i] for i in g)
            if lo <= hi:
                return False
            hi = max(pos[i] for i in g)
    return all(pos[i] < pos[j] for i, j in spec.edges)


def enumerate_consistent(
    spec: OrderingSpec, cap: int = DEFAULT_ENUMERATION_CAP
) -> list[Permutation]:
    """All linear extensions of the precedence relation, i.e. the support of the

    uniform distribution the spec denotes. An empty spec yields all n!
    permutations. Only available up to the enumeration cap.
    """
    if spec.n > cap:
        raise EnumerationCapError(
            f"exact enumeration over {spec.n} features exceeds the cap of {cap}; "
            "use sampling instead"
        )
    succ = spec._successors()
    indeg = [0] * spec.n
    for i in range(spec.n):
        for j in succ[i]:
            indeg[j] += 1
    out: list[Permutation] = []
    prefix: list[int] = []

    def extend():
        if len(prefix) == spec.n:
            out.append(Permutation(tuple(prefix)))
            return
        for i in range(spec.n):
            if indeg[i] == 0:
                indeg[i] = -1  # mark used
                for j in succ[i]:
                    indeg[j] -= 1
                prefix.append(i)
                extend()
                prefix.pop()
                for j in succ[i]:
                    indeg[j] += 1
                indeg[i] = 0

    extend()
    return out


def count_consistent(spec: OrderingSpec, cap: int = DEFAULT_ENUMERATION_CAP) -> int:
    """Number of consistent permutations.

    Groups-only specs have the closed form prod(|G|!) and are counted without
    enumeration (and without the cap). Specs with edges are counted by
    enumeration, subject to the cap.
    """
    if not spec.edges:
        if spec.groups is None:
            return math.factorial(spec.n)
        return math.prod(math.factorial(len(g)) for g in spec.groups)
    return len(enumerate_consistent(spec, cap=cap))


def _sample_group_consistent(
    spec: OrderingSpec, size: int, rng: np.random.Generator
) -> np.ndarray:
    """Uniform draws respecting the group partition only, shape (size, n)."""
    if spec.groups is None:
        base = np.tile(np.arange(spec.n), (size, 1))
        return rng.permuted(base, axis=1)
    parts = []
    for g in spec.groups:
        block = np.tile(np.array(g, dtype=np.int64), (size, 1))
        parts.append(rng.permuted(block, axis=1))
    return np.concatenate(parts, axis=1)


def _edges_satisfied(perms: np.ndarray, edges) -> np.ndarray:
    """Boolean mask over rows of perms (shape (B, n)) satisfying all edges."""
    pos = np.argsort(perms, axis=1)
    ok = np.ones(perms.shape[0], dtype=bool)
    for i, j in edges:
        ok &= pos[:, i] < pos[:, j]
    return ok


def sample_consistent_batch(
    spec: OrderingSpec,
    size: int,
    rng: np.random.Generator,
    budget: int = DEFAULT_REJECTION_BUDGET,
) -> np.ndarray:
    """size independent uniform draws from the consistent set, shape (size, n).

    Group constraints are sampled directly (exactly uniform); edge constraints
    are enforced by rejection on top. The rejection guard aborts after
    `budget` rejected draws per requested permutation.
    """
    if size < 1:
        raise ValidationError(f"sample size must be positive, got {size}")
    if not spec.edges:
        return _sample_group_consistent(spec, size, rng)
    total_budget = budget * size
    rejected = 0
    got: list[np.ndarray] = []
    n_got = 0
    while n_got < size:
        want = size - n_got
        # Oversample against the observed acceptance rate, within reason.
        batch = min(max(4 * want, 1024), 1_000_000)
        cand = _sample_group_consistent(spec, batch, rng)
        keep = cand[_edges_satisfied(cand, spec.edges)]
        rejected += batch - keep.shape[0]
        if keep.shape[0] > want:
            keep = keep[:want]
        got.append(keep)
        n_got += keep.shape[0]
        if n_got < size and rejected > total_budget:
            raise SamplingBudgetError(
                f"rejection sampling exhausted its budget ({rejected} rejected draws "
                f"for {size} requested); enumerate the consistent set or express the "
                "constraints as ordered groups"
            )
    return np.concatenate(got, axis=0)


def sample_consistent(
    spec: OrderingSpec,
    rng: np.random.Generator,
    budget: int = DEFAULT_REJECTION_BUDGET,
) -> Permutation:
    """One permutation distributed uniformly over the consistent set."""
    row = sample_consistent_batch(spec, 1, rng, budget=budget)[0]
    return Permutation(tuple(int(i) for i in row))


def random_ordering_spec(n: int, rng: np.random.Generator) -> OrderingSpec:
    """A random spec: empty, a random ordered partition, or random acyclic edges.

    Meant for self-checks and stress tests that want broad coverage of the
    constraint families without hand-writing cases.
    """
    if n < 2:
        raise ValidationError(f"need at least 2 features, got {n}")
    kind = rng.integers(0, 3)
    if kind == 0:
        return OrderingSpec(n)
    if kind == 1:
        perm = rng.permutation(n)
        cuts = sorted(rng.choice(np.arange(1, n), size=min(2, n - 1), replace=False))
        groups, start = [], 0
        for c in list(cuts) + [n]:
            groups.append(tuple(int(i) for i in perm[start:c]))
            start = c
        return OrderingSpec(n, groups=tuple(groups))
    # Edges drawn consistent with a hidden base order, hence acyclic.
    base = rng.permutation(n)
    pos = np.argsort(base)
    edges = set()
    for _ in range(int(rng.integers(1, n))):
        i, j = rng.choice(n, size=2, replace=False)
        if pos[i] < pos[j]:
            edges.add((int(i), int(j)))
        else:
            edges.add((int(j), int(i)))
    return OrderingSpec(n, edges=frozenset(edges))
