"""Edge-server trust, fitness ranking on a d-ary max-heap, and service migration."""
from __future__ import annotations

import enum
import hashlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np


class TrustError(Exception):
    pass


class NoServers(TrustError):
    pass


class NoFeasibleTarget(TrustError):
    pass


class TargetDegraded(TrustError):
    pass


class CapacityExceeded(TrustError):
    pass


class Role(enum.Enum):
    LOCAL = "local"
    GLOBAL = "global"


class Polarity(enum.Enum):
    POSITIVE = "positive"
    NEGATIVE = "negative"


@dataclass(frozen=True)
class TrustEvent:
    polarity: Polarity
    magnitude: float

    def __post_init__(self):
        if not 0.0 <= self.magnitude <= 1.0:
            raise ValueError("event magnitude must lie in [0, 1]")


@dataclass(frozen=True)
class TrustPolicy:
    """Magnitudes for benign completions and confirmed attack involvement."""

    positive: float = 0.05
    negative: float = 0.3

    def completed(self) -> TrustEvent:
        return TrustEvent(Polarity.POSITIVE, self.positive)

    def attacked(self) -> TrustEvent:
        return TrustEvent(Polarity.NEGATIVE, self.negative)


@dataclass
class EdgeServer:
    id: str
    profile: str
    slots_total: int
    tasks_running: int = 0
    tasks_waiting: int = 0
    trust: float = 0.5
    role: Role = Role.LOCAL
    services: set[str] = field(default_factory=set)

    def __post_init__(self):
        if self.slots_total < 0 or self.tasks_running < 0 or self.tasks_waiting < 0:
            raise ValueError("slot and task counts must be non-negative")
        if self.tasks_running > self.slots_total:
            raise ValueError(f"{self.id}: running tasks exceed slots")
        if not 0.0 <= self.trust <= 1.0:
            raise ValueError(f"{self.id}: trust outside [0, 1]")


def update_trust(trust: float, event: TrustEvent) -> float:
    """Move trust by ``magnitude`` times the remaining gap to 1, then clamp."""
    if not 0.0 <= trust <= 1.0:
        raise ValueError("trust must lie in [0, 1]")
    step = (1.0 - trust) * event.magnitude
    t = trust + step if event.polarity is Polarity.POSITIVE else trust - step
    return float(min(1.0, max(0.0, t)))


def _local(servers: Iterable[EdgeServer]) -> list[EdgeServer]:
    return [s for s in servers if s.role is Role.LOCAL]


def trust_threshold(servers: Iterable[EdgeServer]) -> float:
    local = _local(servers)
    if not local:
        raise NoServers("no local edge servers")
    return float(np.mean([s.trust for s in local]))


def classify_servers(servers: Iterable[EdgeServer], tau_th: float | None = None
                     ) -> tuple[list[EdgeServer], list[EdgeServer]]:
    """Split local servers into (high-trust H, low-trust L) around ``tau_th``."""
    local = _local(servers)
    if not local:
        return [], []
    if tau_th is None:
        tau_th = trust_threshold(local)
    H = [s for s in local if s.trust >= tau_th]
    L = [s for s in local if s.trust < tau_th]
    return H, L


def cpu_availability(server: EdgeServer) -> int:
    return max(0, server.slots_total - server.tasks_running)


def fleet_cpu_availability(servers: Iterable[EdgeServer]) -> int:
    return sum(cpu_availability(s) for s in servers)


def load_ratio(server: EdgeServer) -> float:
    """Available slots per waiting task; waiting is floored at 1."""
    return cpu_availability(server) / max(server.tasks_waiting, 1)


def pressure(server: EdgeServer) -> float:
    """Waiting tasks per available slot; higher means more overloaded."""
    return server.tasks_waiting / max(cpu_availability(server), 1)


@dataclass(frozen=True)
class FitnessWeights:
    w1: float = 1 / 3
    w2: float = 1 / 3
    w3: float = 1 / 3

    def __post_init__(self):
        if min(self.w1, self.w2, self.w3) < 0:
            raise ValueError("fitness weights must be non-negative")


def _minmax(v: np.ndarray) -> np.ndarray:
    span = v.max() - v.min()
    if span == 0:
        return np.ones_like(v)
    return (v - v.min()) / span


def fitness(servers: Sequence[EdgeServer], weights: FitnessWeights = FitnessWeights()) -> dict[str, float]:
    """FV per server: availability and trust reward, normalized pressure penalizes.

    With a single server (or no spread) the normalized terms are 1.
    """
    if not servers:
        return {}
    ra = _minmax(np.array([cpu_availability(s) for s in servers], dtype=np.float64))
    pr = _minmax(np.array([pressure(s) for s in servers], dtype=np.float64))
    return {s.id: float(weights.w1 * ra[i] + weights.w2 * s.trust - weights.w3 * pr[i])
            for i, s in enumerate(servers)}


@dataclass(frozen=True)
class HeapNode:
    key: float
    index: str


def _before(a: HeapNode, b: HeapNode) -> bool:
    """True if ``a`` ranks above ``b``: higher key, ties to the lower id."""
    return a.key > b.key or (a.key == b.key and a.index < b.index)


class DaryHeap:
    """Array-backed d-ary max-heap of ``HeapNode``."""

    def __init__(self, nodes: Iterable[HeapNode] = (), arity: int = 3):
        if arity < 2:
            raise ValueError("arity must be >= 2")
        self.arity = arity
        self.nodes: list[HeapNode] = list(nodes)
        for i in range(len(self.nodes) // arity + 1, -1, -1):
            self._sift_down(i)

    def __len__(self) -> int:
        return len(self.nodes)

    def parent(self, i: int) -> int:
        return (i - 1) // self.arity

    def children(self, i: int) -> range:
        lo = self.arity * i + 1
        return range(lo, min(lo + self.arity, len(self.nodes)))

    def depth(self, i: int) -> int:
        d = 0
        while i > 0:
            i = self.parent(i)
            d += 1
        return d

    def _sift_down(self, i: int) -> None:
        n = self.nodes
        while i < len(n):
            best = i
            for c in self.children(i):
                if _before(n[c], n[best]):
                    best = c
            if best == i:
                return
            n[i], n[best] = n[best], n[i]
            i = best

    def _sift_up(self, i: int) -> None:
        n = self.nodes
        while i > 0 and _before(n[i], n[self.parent(i)]):
            p = self.parent(i)
            n[i], n[p] = n[p], n[i]
            i = p

    def push(self, node: HeapNode) -> None:
        self.nodes.append(node)
        self._sift_up(len(self.nodes) - 1)

    def peek(self) -> HeapNode:
        if not self.nodes:
            raise IndexError("empty heap")
        return self.nodes[0]

    def pop(self) -> HeapNode:
        if not self.nodes:
            raise IndexError("empty heap")
        top = self.nodes[0]
        last = self.nodes.pop()
        if self.nodes:
            self.nodes[0] = last
            self._sift_down(0)
        return top

    def ranked(self) -> list[HeapNode]:
        clone = DaryHeap(arity=self.arity)
        clone.nodes = list(self.nodes)
        return [clone.pop() for _ in range(len(clone))]

    def is_valid(self) -> bool:
        return all(not _before(self.nodes[c], self.nodes[i])
                   for i in range(len(self.nodes)) for c in self.children(i))


@dataclass
class FitnessHeap:
    heap: DaryHeap
    fv: dict[str, float]
    avg_fv: float

    @property
    def root(self) -> HeapNode:
        return self.heap.peek()


def build_heap(servers: Sequence[EdgeServer], weights: FitnessWeights = FitnessWeights(),
               arity: int = 3) -> FitnessHeap:
    local = _local(servers)
    if not local:
        raise NoServers("no local edge servers")
    fv = fitness(local, weights)
    heap = DaryHeap((HeapNode(v, k) for k, v in fv.items()), arity)
    avg = float(np.mean(list(fv.values())))
    # sanity gate: the best candidate is never below the fleet average
    assert heap.peek().key >= avg - 1e-12
    return FitnessHeap(heap, fv, avg)


@dataclass(frozen=True)
class MigrationPlan:
    source: str
    target: str
    services: tuple[str, ...]

    def __post_init__(self):
        if self.source == self.target:
            raise ValueError("migration source and target must differ")


@dataclass(frozen=True)
class MigrationResult:
    plan: MigrationPlan
    moved: int
    tau_th: float


def select_target(fh: FitnessHeap, source: EdgeServer, fleet: dict[str, EdgeServer],
                  tau_th: float | None = None) -> EdgeServer:
    """Highest-FV high-trust server sharing the source's profile.

    FV ties go to lower pressure, then to the lower id.
    """
    if tau_th is None:
        tau_th = trust_threshold(fleet.values())
    found: list[EdgeServer] = []
    top = None
    for node in fh.heap.ranked():
        if top is not None and node.key < top:
            break
        s = fleet[node.index]
        if s.id == source.id or s.profile != source.profile or s.trust < tau_th:
            continue
        top = node.key
        found.append(s)
    if not found:
        raise NoFeasibleTarget(f"no high-trust server with profile {source.profile!r}")
    return min(found, key=lambda s: (pressure(s), s.id))


def plan_migration(fleet: dict[str, EdgeServer], source_id: str,
                   weights: FitnessWeights = FitnessWeights()) -> MigrationPlan:
    source = fleet[source_id]
    fh = build_heap(list(fleet.values()), weights)
    target = select_target(fh, source, fleet)
    return MigrationPlan(source.id, target.id, tuple(sorted(source.services)))


def migrate(plan: MigrationPlan, fleet: dict[str, EdgeServer]) -> MigrationResult:
    """Move services atomically; re-checks target trust and capacity first."""
    source, target = fleet[plan.source], fleet[plan.target]
    tau_th = trust_threshold(fleet.values())
    if target.trust < tau_th:
        raise TargetDegraded(f"{target.id} fell below the trust threshold")
    services = [s for s in plan.services if s in source.services]
    k = len(services)
    if target.tasks_running + k > target.slots_total:
        raise CapacityExceeded(f"{target.id} cannot host {k} more services")
    source.services.difference_update(services)
    source.tasks_running = max(0, source.tasks_running - k)
    target.services.update(services)
    target.tasks_running += k
    return MigrationResult(plan, k, tau_th)


def profile_hash(profile: str) -> str:
    return hashlib.sha256(profile.encode()).hexdigest()[:16]


def export_snapshot(fleet: dict[str, EdgeServer], path: str | Path,
                    weights: FitnessWeights = FitnessWeights()) -> None:
    servers = sorted(fleet.values(), key=lambda s: s.id)
    fv = fitness(_local(servers), weights)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("id,profile_hash,slots,running,waiting,trust,fv\n")
        for s in servers:
            f = fv.get(s.id)
            fh.write(f"{s.id},{profile_hash(s.profile)},{s.slots_total},{s.tasks_running},"
                     f"{s.tasks_waiting},{s.trust:.10g},{'' if f is None else format(f, '.10g')}\n")
