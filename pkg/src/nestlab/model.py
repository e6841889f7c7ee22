"""Two-level Nested Logit choice model.

Items 1..n are partitioned into nests.  Nest N with dissimilarity lambda_N
contributes weight (sum of member item weights in the assortment)**lambda_N,
except lambda_N = 0 nests, which contribute a fixed weight v_N whenever any
member is offered.  An optional outside option (id 0) sits in its own nest
with weight 1.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

LAMBDA_ROUNDOFF = 1e-9  # slack for clamping lambda back into [0, 1]


@dataclass(frozen=True)
class NestPartition:
    """Partition of items 1..n into nonempty nests.

    Nests are stored sorted, ordered by their smallest member, so two
    partitions are equal iff they group items identically.
    """

    nests: tuple[tuple[int, ...], ...]

    def __init__(self, nests: Iterable[Iterable[int]]):
        canon = sorted(
            (tuple(sorted(set(int(i) for i in nest))) for nest in nests),
            key=lambda t: t[0] if t else 0,
        )
        if any(len(nest) == 0 for nest in canon):
            raise ValueError("empty nest")
        object.__setattr__(self, "nests", tuple(canon))
        items = [i for nest in self.nests for i in nest]
        n = len(items)
        if sorted(items) != list(range(1, n + 1)):
            raise ValueError("nests must partition 1..n exactly")
        lookup = {}
        for idx, nest in enumerate(self.nests):
            for i in nest:
                lookup[i] = idx
        object.__setattr__(self, "_nest_of", lookup)

    @property
    def n(self) -> int:
        return sum(len(nest) for nest in self.nests)

    @property
    def num_nests(self) -> int:
        return len(self.nests)

    def nest_of(self, item: int) -> int:
        """Index of the nest containing an item."""
        return self._nest_of[item]

    def labels(self) -> np.ndarray:
        """Per-item nest indices, position i-1 for item i."""
        out = np.empty(self.n, dtype=np.int64)
        for idx, nest in enumerate(self.nests):
            for i in nest:
                out[i - 1] = idx
        return out


def singleton_partition(n: int) -> NestPartition:
    return NestPartition([(i,) for i in range(1, n + 1)])


@dataclass(frozen=True)
class NestedLogitModel:
    """Model parameters: partition, item weights, per-nest dissimilarities.

    degenerate_weights maps nest index -> v_N for nests with lambda_N = 0;
    it must cover exactly those nests.
    """

    partition: NestPartition
    weights: tuple[float, ...]  # item weights v_1..v_n, all > 0
    lambdas: tuple[float, ...]  # one per nest, in [0, 1]
    outside: bool = True
    degenerate_weights: Mapping[int, float] = field(default_factory=dict)

    def __post_init__(self):
        n = self.partition.n
        object.__setattr__(self, "weights", tuple(float(v) for v in self.weights))
        object.__setattr__(self, "lambdas", tuple(float(l) for l in self.lambdas))
        object.__setattr__(
            self,
            "degenerate_weights",
            {int(k): float(v) for k, v in dict(self.degenerate_weights).items()},
        )
        if len(self.weights) != n:
            raise ValueError("one weight per item required")
        if any(v <= 0 for v in self.weights):
            raise ValueError("item weights must be positive")
        if len(self.lambdas) != self.partition.num_nests:
            raise ValueError("one lambda per nest required")
        if any(not 0.0 <= l <= 1.0 for l in self.lambdas):
            raise ValueError("lambda values must lie in [0, 1]")
        degenerate = {k for k, l in enumerate(self.lambdas) if l == 0.0}
        if set(self.degenerate_weights) != degenerate:
            raise ValueError(
                "degenerate_weights must cover exactly the nests with lambda = 0"
            )
        if any(v <= 0 for v in self.degenerate_weights.values()):
            raise ValueError("degenerate nest weights must be positive")

    @property
    def n(self) -> int:
        return self.partition.n

    def weight(self, item: int) -> float:
        return self.weights[item - 1]


@dataclass(frozen=True)
class ChoiceProbabilities:
    """Choice distribution over one assortment; key 0 is the outside option."""

    assortment: tuple[int, ...]
    probs: dict[int, float]
    outside: bool

    def prob(self, item: int) -> float:
        return self.probs[item]

    def support(self) -> tuple[int, ...]:
        return tuple(sorted(self.probs))


def nest_weight(model: NestedLogitModel, nest_index: int, assortment: Sequence[int]) -> float:
    """Aggregated weight v_N(S) of one nest under an assortment.

    Computed in log space so large within-nest sums cannot overflow under the
    exponent.  Returns 0 when the nest does not intersect the assortment.
    """
    nest = model.partition.nests[nest_index]
    offered = set(assortment)
    total = sum(model.weight(i) for i in nest if i in offered)
    if total == 0.0:
        return 0.0
    lam = model.lambdas[nest_index]
    if lam == 0.0:
        return model.degenerate_weights[nest_index]
    return math.exp(lam * math.log(total))


def _check_assortment(model: NestedLogitModel, assortment: Sequence[int]) -> tuple[int, ...]:
    items = tuple(sorted(set(int(i) for i in assortment)))
    if not items:
        raise ValueError("assortment must be nonempty")
    if items[0] < 1 or items[-1] > model.n:
        raise ValueError(f"assortment contains items outside 1..{model.n}")
    return items


def choice_probabilities(
    model: NestedLogitModel, assortment: Sequence[int]
) -> ChoiceProbabilities:
    """Choice probability of every offered item (and the outside option if present)."""
    items = _check_assortment(model, assortment)
    offered = set(items)
    nest_values = [
        nest_weight(model, k, items) for k in range(model.partition.num_nests)
    ]
    denom = (1.0 if model.outside else 0.0) + sum(nest_values)
    probs: dict[int, float] = {}
    if model.outside:
        probs[0] = 1.0 / denom
    for k, nest in enumerate(model.partition.nests):
        members = [i for i in nest if i in offered]
        if not members:
            continue
        within_total = sum(model.weight(i) for i in members)
        nest_share = nest_values[k] / denom
        for i in members:
            probs[i] = nest_share * model.weight(i) / within_total
    return ChoiceProbabilities(assortment=items, probs=probs, outside=model.outside)


def normalize_identifiable(model: NestedLogitModel) -> NestedLogitModel:
    """Rewrite the model so lambda_N = 1 holds exactly for singleton nests.

    A multi-item nest with lambda = 1 splits into singletons; a singleton
    with lambda < 1 folds the dissimilarity into its weight (v_i**lambda, or
    the degenerate nest weight when lambda = 0).  Choice probabilities are
    unchanged.
    """
    nests: list[tuple[int, ...]] = []
    lambdas: list[float] = []
    weights = list(model.weights)
    degenerate: dict[int, float] = {}
    for k, nest in enumerate(model.partition.nests):
        lam = model.lambdas[k]
        if lam == 1.0 and len(nest) > 1:
            for i in nest:
                nests.append((i,))
                lambdas.append(1.0)
        elif lam < 1.0 and len(nest) == 1:
            i = nest[0]
            if lam == 0.0:
                weights[i - 1] = model.degenerate_weights[k]
            else:
                weights[i - 1] = math.exp(lam * math.log(weights[i - 1]))
            nests.append(nest)
            lambdas.append(1.0)
        else:
            if lam == 0.0:
                degenerate[len(nests)] = model.degenerate_weights[k]
            nests.append(nest)
            lambdas.append(lam)
    order = sorted(range(len(nests)), key=lambda k: nests[k][0])
    remap = {old: new for new, old in enumerate(order)}
    return NestedLogitModel(
        partition=NestPartition([nests[k] for k in order]),
        weights=tuple(weights),
        lambdas=tuple(lambdas[k] for k in order),
        outside=model.outside,
        degenerate_weights={remap[k]: v for k, v in degenerate.items()},
    )


def generate_ground_truth(
    n: int, rng: np.random.Generator | int | None = None, outside: bool = True
) -> NestedLogitModel:
    """Random identifiable instance for simulation studies.

    A uniform permutation of the items is cut by K - 1 dividers at distinct
    uniform positions, K itself uniform on {1..floor(n/2)}, so every nest is
    nonempty.  Item weights are uniform on [1, 10] (ratio at most 10) and
    each nest's lambda is uniform on [0.3, 0.6]; singleton nests then get
    reparameterized to lambda = 1.
    """
    if n < 2:
        raise ValueError("ground truth generation needs n >= 2")
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    perm = rng.permutation(n) + 1
    k = int(rng.integers(1, n // 2 + 1))
    cuts = np.sort(rng.choice(n - 1, size=k - 1, replace=False)) + 1
    bounds = [0, *cuts.tolist(), n]
    nests = [
        tuple(sorted(int(x) for x in perm[bounds[j]:bounds[j + 1]]))
        for j in range(k)
    ]
    partition = NestPartition(nests)
    weights = tuple(float(w) for w in rng.uniform(1.0, 10.0, size=n))
    lambdas = tuple(float(l) for l in rng.uniform(0.3, 0.6, size=k))
    # Dataclass canonicalizes nest order; realign lambdas before constructing.
    order = sorted(range(k), key=lambda j: min(nests[j]))
    model = NestedLogitModel(
        partition=partition,
        weights=weights,
        lambdas=tuple(lambdas[j] for j in order),
        outside=outside,
    )
    return normalize_identifiable(model)


def nest_multiplier(model: NestedLogitModel, nest_index: int, assortment: Sequence[int]) -> float:
    """Mult(N, S) = (full nest weight / offered nest weight)**(1 - lambda_N).

    Equals 1 iff the nest is fully offered; undefined (raises) when the nest
    misses the assortment entirely.
    """
    nest = model.partition.nests[nest_index]
    offered = set(assortment)
    total = sum(model.weight(i) for i in nest)
    inside = sum(model.weight(i) for i in nest if i in offered)
    if inside == 0.0:
        raise ValueError("nest does not intersect the assortment")
    lam = model.lambdas[nest_index]
    return math.exp((1.0 - lam) * (math.log(total) - math.log(inside)))


def check_general_position(
    model: NestedLogitModel,
    design,
    tolerance: float = 1e-9,
) -> list[tuple[str, int, int]]:
    """Flag experiments where two partially offered nests share a multiplier.

    Returns (experiment label, nest index, nest index) triples; empty means
    the design can tell all partially offered nests apart.
    """
    violations = []
    for label, items in zip(design.labels, design.experiments):
        offered = set(items)
        partial = []
        for k, nest in enumerate(model.partition.nests):
            inside = sum(1 for i in nest if i in offered)
            if 0 < inside < len(nest):
                partial.append((k, nest_multiplier(model, k, items)))
        for a in range(len(partial)):
            for c in range(a + 1, len(partial)):
                ka, ma = partial[a]
                kc, mc = partial[c]
                if abs(ma - mc) <= tolerance * max(abs(ma), abs(mc)):
                    violations.append((label, ka, kc))
    return violations


def model_to_dict(model: NestedLogitModel) -> dict:
    return {
        "n": model.n,
        "nests": [list(nest) for nest in model.partition.nests],
        "v": list(model.weights),
        "lambda": list(model.lambdas),
        "v_nest_degenerate": {str(k): v for k, v in model.degenerate_weights.items()},
        "outside_option": model.outside,
    }


def model_from_dict(data: dict) -> NestedLogitModel:
    return NestedLogitModel(
        partition=NestPartition(data["nests"]),
        weights=tuple(data["v"]),
        lambdas=tuple(data["lambda"]),
        outside=bool(data["outside_option"]),
        degenerate_weights={int(k): v for k, v in data.get("v_nest_degenerate", {}).items()},
    )


def save_model(model: NestedLogitModel, path: str) -> None:
    with open(path, "w") as fh:
        json.dump(model_to_dict(model), fh, indent=2)
        fh.write("\n")


def load_model(path: str) -> NestedLogitModel:
    with open(path) as fh:
        return model_from_dict(json.load(fh))
