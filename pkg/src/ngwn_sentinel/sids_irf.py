"""Signature-based IDS: an improved random forest with feature-pool refinement.

Each tree carries a per-feature weight (its normalized impurity decrease) and an
overall weight (out-of-bag accuracy). Feature ranking combines the two; the
refinement loop prunes weak unimportant features, promotes strong ones, and
resizes the forest between passes.
"""
from __future__ import annotations

import enum
import io
import json
import math
import struct
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from sklearn.tree import DecisionTreeClassifier

from .data_ingest import Dataset

MAGIC = b"IRF1"
FORMAT_VERSION = 1


class IrfError(Exception):
    pass


class EmptyDataset(IrfError):
    pass


class AllZero(IrfError):
    pass


class UnverifiedPattern(IrfError):
    pass


class BadForestFile(IrfError):
    pass


@dataclass(frozen=True, eq=False)
class DecisionTree:
    """Array-encoded binary tree; ``feature[i] == -1`` marks a leaf.

    ``value[i]`` is the (benign, attack) vote distribution at node i. Feature
    indices are global schema positions.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    oob_weight: float
    feature_weight: np.ndarray

    @property
    def node_count(self) -> int:
        return int(self.feature.shape[0])

    def leaf_index(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(X)
        node = np.zeros(X.shape[0], dtype=np.int64)
        rows = np.arange(X.shape[0])
        active = self.feature[node] >= 0
        while active.any():
            r = rows[active]
            nd = node[r]
            go_left = X[r, self.feature[nd]] <= self.threshold[nd]
            node[r] = np.where(go_left, self.left[nd], self.right[nd])
            active = self.feature[node] >= 0
        return node

    def votes_attack(self, X: np.ndarray) -> np.ndarray:
        # strict majority votes attack; an even split votes benign
        v = self.value[self.leaf_index(X)]
        return v[:, 1] > v[:, 0]

    @cached_property
    def _lists(self):
        attack = (self.value[:, 1] > self.value[:, 0]).tolist()
        return (self.feature.tolist(), self.threshold.tolist(), self.left.tolist(),
                self.right.tolist(), attack)

    def vote_one(self, x: Sequence[float]) -> bool:
        """Single-row traversal in plain Python; much faster than numpy for one row."""
        feat, thr, left, right, attack = self._lists
        i = 0
        while feat[i] >= 0:
            i = left[i] if x[feat[i]] <= thr[i] else right[i]
        return attack[i]

    def used_features(self) -> set[int]:
        return {int(f) for f in self.feature if f >= 0}

    def same_as(self, other: "DecisionTree") -> bool:
        return (
            self.oob_weight == other.oob_weight
            and all(np.array_equal(getattr(self, k), getattr(other, k))
                    for k in ("feature", "threshold", "left", "right", "value", "feature_weight"))
        )


@dataclass(frozen=True)
class GrowthState:
    """Parameters of the adaptive tree-count rule.

    ``P`` and ``M_av`` feed the node-count factor, ``p_u``/``p_g`` are the
    good-split probabilities of the important/unimportant pools, ``f`` is the
    loop's stop threshold on the unimportant pool size.
    """

    P: float = 0.98
    M_av: float = 1.0
    p_u: float = 0.5
    p_g: float = 0.5
    dh: int = 0
    dg: int = 0
    f: int = 2
    n: int = 0

    def __post_init__(self):
        if not 0 < self.P < 1:
            raise ValueError("P must lie in (0, 1)")
        if self.M_av < 1:
            raise ValueError("M_av must be >= 1")
        if not (0 <= self.p_u <= 1 and 0 <= self.p_g <= 1):
            raise ValueError("good-split probabilities must lie in [0, 1]")


@dataclass(frozen=True)
class TreeParams:
    """Per-tree growth options passed to the CART learner."""

    max_features: str | int | float | None = "sqrt"
    max_depth: int | None = None
    min_samples_leaf: int = 1


@dataclass(frozen=True)
class FeaturePools:
    important: tuple[int, ...]
    unimportant: tuple[int, ...]
    weights: np.ndarray = field(compare=False)

    @property
    def h(self) -> int:
        return len(self.important)

    @property
    def g(self) -> int:
        return len(self.unimportant)

    @property
    def alpha(self) -> float:
        if not self.unimportant:
            return 0.0
        return float(np.mean(self.weights[list(self.unimportant)]))

    @property
    def beta(self) -> float:
        if not self.unimportant:
            return 0.0
        return float(np.std(self.weights[list(self.unimportant)]))

    @property
    def features(self) -> tuple[int, ...]:
        return tuple(sorted(self.important + self.unimportant))

    def with_weights(self, weights: np.ndarray) -> "FeaturePools":
        return replace(self, weights=np.asarray(weights, dtype=np.float64))


@dataclass(frozen=True, eq=False)
class Forest:
    trees: tuple[DecisionTree, ...]
    feature_set: tuple[int, ...]
    n_features: int
    growth: GrowthState = field(default_factory=GrowthState)
    seed: int = 0
    tree_params: TreeParams = field(default_factory=TreeParams)
    pools: FeaturePools | None = None
    history: tuple[dict, ...] = ()

    def __post_init__(self):
        if not self.trees:
            raise ValueError("a forest needs at least one tree")
        if not self.feature_set:
            raise ValueError("active feature set is empty")

    @property
    def Z(self) -> int:
        return len(self.trees)

    @property
    def mean_nodes(self) -> float:
        return float(np.mean([t.node_count for t in self.trees]))

    def attack_vote(self, X: np.ndarray) -> np.ndarray:
        """Fraction of trees voting attack, per row."""
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        votes = np.zeros(X.shape[0])
        for t in self.trees:
            votes += t.votes_attack(X)
        return votes / self.Z

    def vote_one(self, fv) -> float:
        x = np.asarray(fv, dtype=np.float64).tolist()
        return sum(t.vote_one(x) for t in self.trees) / self.Z

    def predict(self, X: np.ndarray) -> np.ndarray:
        # majority of trees, ties to benign
        return (self.attack_vote(X) > 0.5).astype(np.int8)

    def accuracy(self, data: Dataset) -> float:
        return float(np.mean(self.predict(data.X) == data.y))

    def same_as(self, other: "Forest") -> bool:
        return (
            self.feature_set == other.feature_set
            and self.Z == other.Z
            and all(a.same_as(b) for a, b in zip(self.trees, other.trees))
        )


def _grow_tree(X: np.ndarray, y: np.ndarray, features: Sequence[int], n_features: int,
               rng: np.random.Generator, params: TreeParams) -> DecisionTree:
    n = X.shape[0]
    boot = rng.integers(0, n, size=n)
    oob_mask = np.ones(n, dtype=bool)
    oob_mask[boot] = False
    feats = np.asarray(features, dtype=np.int64)
    learner = DecisionTreeClassifier(
        max_features=params.max_features,
        max_depth=params.max_depth,
        min_samples_leaf=params.min_samples_leaf,
        random_state=int(rng.integers(0, 2**31 - 1)),
    )
    learner.fit(X[boot][:, feats], y[boot])
    raw = learner.tree_
    local = raw.feature.astype(np.int64)
    feature = np.where(local >= 0, feats[np.maximum(local, 0)], -1)
    value = np.zeros((raw.node_count, 2))
    counts = raw.value[:, 0, :]
    for col, cls in enumerate(learner.classes_):
        value[:, int(cls)] = counts[:, col]
    value /= value.sum(axis=1, keepdims=True)
    fw = np.zeros(n_features)
    imp = learner.feature_importances_
    if np.sum(imp) > 0:
        fw[feats] = imp / np.sum(imp)
    tree = DecisionTree(
        feature=feature,
        threshold=raw.threshold.astype(np.float64),
        left=raw.children_left.astype(np.int64),
        right=raw.children_right.astype(np.int64),
        value=value,
        oob_weight=1.0,
        feature_weight=fw,
    )
    if oob_mask.any():
        oob = float(np.mean(tree.votes_attack(X[oob_mask]).astype(np.int8) == y[oob_mask]))
        tree = replace(tree, oob_weight=oob)
    return tree


def train_forest(train: Dataset, Z0: int = 50, params: GrowthState | None = None, seed: int = 0,
                 features: Iterable[int] | None = None,
                 tree_params: TreeParams | None = None) -> Forest:
    """Grow ``Z0`` bootstrap trees over the active ``features`` (default: all)."""
    if len(train) == 0:
        raise EmptyDataset("cannot train on an empty dataset")
    if Z0 < 1:
        raise ValueError("Z0 must be >= 1")
    params = params or GrowthState()
    tree_params = tree_params or TreeParams()
    n_features = train.schema.length
    feats = tuple(sorted(set(range(n_features) if features is None else features)))
    rng = np.random.default_rng(seed)
    trees = tuple(_grow_tree(train.X, train.y, feats, n_features, rng, tree_params) for _ in range(Z0))
    forest = Forest(trees=trees, feature_set=feats, n_features=n_features, growth=params,
                    seed=seed, tree_params=tree_params)
    return replace(forest, growth=replace(params, M_av=max(1.0, forest.mean_nodes)))


def feature_weights(forest: Forest) -> np.ndarray:
    """Max-normalized OOB-weighted feature importance, one entry per schema feature."""
    total = np.zeros(forest.n_features)
    for t in forest.trees:
        total += t.feature_weight * t.oob_weight
    peak = total.max()
    if not peak > 0:
        raise AllZero("every feature has zero summed weight")
    w = total / peak
    w[total == peak] = 1.0
    return w


def partition_features(weights: np.ndarray, h0: int, features: Iterable[int] | None = None) -> FeaturePools:
    weights = np.asarray(weights, dtype=np.float64)
    feats = sorted(range(weights.size) if features is None else set(features))
    if not 0 <= h0 <= len(feats):
        raise ValueError("h0 must lie between 0 and the number of active features")
    ranked = sorted(feats, key=lambda k: (-weights[k], k))
    return FeaturePools(
        important=tuple(sorted(ranked[:h0])),
        unimportant=tuple(sorted(ranked[h0:])),
        weights=weights,
    )


def prune_unimportant(pools: FeaturePools) -> tuple[frozenset[int], FeaturePools]:
    """Drop unimportant features weighing less than alpha - 2*beta."""
    if not pools.unimportant:
        return frozenset(), pools
    cut = pools.alpha - 2.0 * pools.beta
    removed = frozenset(k for k in pools.unimportant if pools.weights[k] < cut)
    rest = tuple(k for k in pools.unimportant if k not in removed)
    return removed, replace(pools, unimportant=rest)


def promote_features(pools: FeaturePools) -> tuple[frozenset[int], FeaturePools]:
    """Move unimportant features at or above the weakest important weight."""
    if not pools.important or not pools.unimportant:
        return frozenset(), pools
    floor = min(pools.weights[j] for j in pools.important)
    moved = frozenset(k for k in pools.unimportant if pools.weights[k] >= floor)
    return moved, replace(
        pools,
        important=tuple(sorted(set(pools.important) | moved)),
        unimportant=tuple(k for k in pools.unimportant if k not in moved),
    )


def node_factor(Z: float, M_av: float, P: float) -> float:
    """l = Z * M_av * P^(M_av-1) * (1 - P^M_av)^(Z-1)."""
    return Z * M_av * P ** (M_av - 1) * (1 - P ** M_av) ** (Z - 1)


def tree_delta(state: GrowthState, g: int, Z: int) -> int:
    """Signed tree-count change, the floor of the bound's magnitude."""
    if g < 1:
        raise ValueError("g must be >= 1")
    num = state.p_u * state.dh + state.p_g * state.dg
    if num == 0:
        return 0
    bound = abs(node_factor(Z, state.M_av, state.P) * num / g)
    return int(math.copysign(math.floor(bound), num))


def refine_forest(forest: Forest, train: Dataset, h0: int, max_passes: int = 10,
                  f: int | None = None) -> Forest:
    """Iterate rank -> partition -> prune -> promote -> resize -> regrow.

    Pools persist across passes: important features are never dropped and
    pruned features never return. Weights are re-ranked from each regrown forest.
    """
    if max_passes < 1:
        raise ValueError("max_passes must be >= 1")
    state = forest.growth if f is None else replace(forest.growth, f=f)
    try:
        weights = feature_weights(forest)
    except AllZero:
        return replace(forest, growth=state)
    pools = partition_features(weights, min(h0, len(forest.feature_set)), forest.feature_set)
    active = set(forest.feature_set)
    history = list(forest.history)
    n = 0
    while pools.g >= state.f and n < max_passes:
        h_before, g_before = pools.h, pools.g
        removed, pools = prune_unimportant(pools)
        promoted, pools = promote_features(pools)
        active -= removed
        state = replace(state, dh=pools.h - h_before, dg=pools.g - g_before, n=n + 1)
        dz = tree_delta(state, g_before, forest.Z)
        z_next = max(1, forest.Z + dz)
        regrown = train_forest(train, z_next, state, seed=forest.seed + n + 1,
                               features=active, tree_params=forest.tree_params)
        state = regrown.growth
        history.append({
            "pass": n + 1, "removed": sorted(removed), "promoted": sorted(promoted),
            "h": pools.h, "g": pools.g, "dZ": dz, "Z": z_next, "active": len(active),
        })
        forest = replace(regrown, seed=forest.seed)
        try:
            pools = pools.with_weights(feature_weights(forest))
        except AllZero:
            break
        n += 1
    return replace(forest, growth=state, pools=pools, history=tuple(history))


class Triage(enum.Enum):
    NORMAL = "Normal"
    MALICIOUS = "Malicious"
    SUSPICIOUS = "Suspicious"


@dataclass(frozen=True)
class TriageResult:
    klass: Triage
    attack_vote: float


def triage_from_vote(vote: float, theta_lo: float = 0.3, theta_hi: float = 0.8) -> Triage:
    if not 0 <= theta_lo < theta_hi <= 1:
        raise ValueError("need 0 <= theta_lo < theta_hi <= 1")
    if vote >= theta_hi:
        return Triage.MALICIOUS
    if vote <= theta_lo:
        return Triage.NORMAL
    return Triage.SUSPICIOUS


def classify_triage(forest: Forest, fv, theta_lo: float = 0.3, theta_hi: float = 0.8) -> TriageResult:
    vote = forest.vote_one(fv)
    return TriageResult(triage_from_vote(vote, theta_lo, theta_hi), vote)


@dataclass(frozen=True)
class SignaturePattern:
    family: str
    features: tuple[float, ...]
    provenance: str = "honeypot"
    verified: bool = False
    entry_index: int | None = None


@dataclass(frozen=True)
class SignatureDB:
    patterns: tuple[SignaturePattern, ...] = ()
    version: int = 0

    def training_rows(self) -> tuple[np.ndarray, list[str]]:
        if not self.patterns:
            return np.zeros((0, 0)), []
        return (np.array([p.features for p in self.patterns], dtype=np.float64),
                [p.family for p in self.patterns])

    def augment(self, train: Dataset, weight: int = 1) -> Dataset:
        """Training set plus every stored pattern as a labelled attack row.

        ``weight`` repeats each pattern row, giving confirmed signatures more pull
        against a large historical training set.
        """
        if weight < 1:
            raise ValueError("weight must be >= 1")
        X, fams = self.training_rows()
        if not fams:
            return train
        return train.with_rows(np.repeat(X, weight, axis=0), [f for f in fams for _ in range(weight)],
                               prefix=f"sig-v{self.version}")

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(json.dumps({"version": self.version}) + "\n")
            for p in self.patterns:
                fh.write(json.dumps({
                    "family": p.family, "features": list(p.features), "provenance": p.provenance,
                    "entry_index": p.entry_index,
                }) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "SignatureDB":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        head = json.loads(lines[0])
        pats = []
        for ln in lines[1:]:
            d = json.loads(ln)
            pats.append(SignaturePattern(d["family"], tuple(d["features"]), d["provenance"],
                                         True, d.get("entry_index")))
        return cls(tuple(pats), int(head["version"]))


def ingest_signatures(db: SignatureDB, patterns: Iterable[SignaturePattern]) -> SignatureDB:
    patterns = tuple(patterns)
    bad = [p for p in patterns if not p.verified]
    if bad:
        raise UnverifiedPattern(f"{len(bad)} pattern(s) lack a verified signature")
    return SignatureDB(db.patterns + patterns, db.version + 1)


# -- binary persistence ------------------------------------------------------

def save_forest(forest: Forest, path: str | Path) -> None:
    buf = io.BytesIO()
    g = forest.growth
    buf.write(MAGIC)
    buf.write(struct.pack("<HIIIq", FORMAT_VERSION, forest.n_features, forest.Z,
                          len(forest.feature_set), forest.seed))
    buf.write(struct.pack("<ddddi", g.P, g.M_av, g.p_u, g.p_g, g.f))
    buf.write(np.asarray(forest.feature_set, dtype="<i4").tobytes())
    for t in forest.trees:
        buf.write(struct.pack("<Id", t.node_count, t.oob_weight))
        buf.write(t.feature_weight.astype("<f8").tobytes())
        buf.write(t.feature.astype("<i4").tobytes())
        buf.write(t.threshold.astype("<f8").tobytes())
        buf.write(t.left.astype("<i4").tobytes())
        buf.write(t.right.astype("<i4").tobytes())
        buf.write(t.value.astype("<f8").tobytes())
    Path(path).write_bytes(buf.getvalue())


def load_forest(path: str | Path) -> Forest:
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise BadForestFile(f"{path}: not an IRF1 forest file")
    off = 4
    ver, n_features, Z, n_active, seed = struct.unpack_from("<HIIIq", data, off)
    off += struct.calcsize("<HIIIq")
    if ver != FORMAT_VERSION:
        raise BadForestFile(f"{path}: unsupported version {ver}")
    P, M_av, p_u, p_g, f = struct.unpack_from("<ddddi", data, off)
    off += struct.calcsize("<ddddi")

    def take(dtype, count):
        nonlocal off
        arr = np.frombuffer(data, dtype=dtype, count=count, offset=off)
        off += arr.nbytes
        return arr

    active = tuple(int(v) for v in take("<i4", n_active))
    trees = []
    for _ in range(Z):
        nodes, oob = struct.unpack_from("<Id", data, off)
        off += struct.calcsize("<Id")
        fw = take("<f8", n_features).astype(np.float64)
        trees.append(DecisionTree(
            feature_weight=fw,
            feature=take("<i4", nodes).astype(np.int64),
            threshold=take("<f8", nodes).astype(np.float64),
            left=take("<i4", nodes).astype(np.int64),
            right=take("<i4", nodes).astype(np.int64),
            value=take("<f8", nodes * 2).astype(np.float64).reshape(nodes, 2),
            oob_weight=oob,
        ))
    if off != len(data):
        raise BadForestFile(f"{path}: trailing bytes")
    growth = GrowthState(P=P, M_av=M_av, p_u=p_u, p_g=p_g, f=f)
    return Forest(tuple(trees), active, n_features, growth, seed)
