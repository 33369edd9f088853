"""Deterministic discrete-event simulation of the edge-IoT defence pipeline.

Packets from IoT users and devices reach a gateway, authenticate against the
ledger, pass signature triage and (when suspicious) the recurrent anomaly
classifier, and are then delivered to the edge server hosting the target
service. Delivered attacks lower the target's trust; low-trust servers under
attack migrate their services to a high-trust peer and are replaced by a
honeypot, whose sealed patterns can be fed back into the signature forest.

All times are integer microseconds. Each concern draws from its own seeded
generator so that (config, seed) fixes the whole run.
"""
from __future__ import annotations

import configparser
import enum
import hashlib
import heapq
import json
import resource
import struct
import time
from collections import Counter, deque
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

from . import aids_dcrnn as aids
from . import honeynet as hn
from . import ledger_auth as la
from . import sids_irf as irf
from . import trust_hbo as hbo
from .data_ingest import (Dataset, InvalidConfig, MinMaxScaler, SynthConfig, images_from_matrix,
                          sample_family, synth_traffic)
from .metrics import MetricsReport, compute_metrics, format_value, roc_curve

US = 1_000_000


class EmptyLog(Exception):
    pass


class AttackerKind(enum.Enum):
    FUZZING = "Fuzzing"
    DDOS = "DDoS"
    IMPERSONATION = "Impersonation"
    REPLAY = "Replay"
    # compromised devices sending attack-family traffic through valid sessions
    INTRUSION = "Intrusion"


@dataclass(frozen=True)
class AttackSpec:
    kind: AttackerKind
    rate: float
    start_s: float = 0.0
    duration_s: float | None = None
    family: str | None = None

    def __post_init__(self):
        if self.rate < 0 or self.start_s < 0 or (self.duration_s is not None and self.duration_s < 0):
            raise InvalidConfig("attack rate, start and duration must be non-negative")
        if self.kind is AttackerKind.INTRUSION and not self.family:
            raise InvalidConfig("intrusion attacks need a family")


def _default_attacks() -> tuple[AttackSpec, ...]:
    return (
        AttackSpec(AttackerKind.FUZZING, 0.5),
        AttackSpec(AttackerKind.IMPERSONATION, 0.5),
        AttackSpec(AttackerKind.REPLAY, 0.5, start_s=5.0),
        AttackSpec(AttackerKind.DDOS, 20.0, start_s=100.0, duration_s=5.0),
        AttackSpec(AttackerKind.INTRUSION, 1.0, family="DoS"),
        AttackSpec(AttackerKind.INTRUSION, 1.0, family="Web"),
        AttackSpec(AttackerKind.INTRUSION, 1.0, family="Scan"),
        AttackSpec(AttackerKind.INTRUSION, 2.0, family="Infiltration"),
    )


@dataclass(frozen=True)
class SimConfig:
    """Topology, traffic, attacker and pipeline settings for one run."""

    iot_users: int = 50
    iot_devices: int = 50
    edge_gateways: int = 6
    cloud_servers: int = 1
    sim_time_s: float = 200.0
    malicious_nodes: int = 10
    packet_sizes: tuple[int, ...] = (64, 128, 256, 512, 1024)
    seed: int = 1
    attacks: tuple[AttackSpec, ...] = field(default_factory=_default_attacks)
    benign_interval_s: float = 4.0
    # traffic model
    known_families: tuple[str, ...] = ("DoS", "DDoS", "Web", "Scan")
    novel_family: str | None = "Infiltration"
    shift: float = 3.0
    features_per_family: int = 2
    train_benign: int = 3000
    train_per_family: int = 300
    novel_eval: int = 500
    # signature forest
    Z0: int = 30
    h0: int = 10
    refine_passes: int = 2
    theta_lo: float = 0.3
    theta_hi: float = 0.8
    # anomaly classifier
    aids_hidden: int = 16
    aids_filters: int = 8
    aids_epochs: int = 10
    aids_train_samples: int = 5000
    aids_learning_rate: float = 0.005
    # ledger
    validators: int = 5
    quorum: int = 3
    faulty_validators: int = 0
    key_lifetime_s: float = 60.0
    mine_interval_s: float = 1.0
    # fleet and trust
    profiles: tuple[str, ...] = ("edge-a", "edge-b")
    slots_per_server: int = 16
    services_per_server: int = 4
    trust_positive: float = 0.05
    trust_negative: float = 0.3
    migration_interval_s: float = 1.0
    # honeynet and feedback
    session_len: int = 5
    feedback: bool = True
    retrain_interval_s: float = 30.0
    signature_weight: int = 1
    retrain_refine_passes: int = 0

    def validate(self) -> None:
        counts = (self.iot_users, self.iot_devices, self.edge_gateways, self.cloud_servers,
                  self.malicious_nodes, self.train_benign, self.train_per_family, self.novel_eval)
        if any(c < 0 for c in counts):
            raise InvalidConfig("counts must be non-negative")
        if not self.sim_time_s > 0:
            raise InvalidConfig("simulation time must be positive")
        if self.malicious_nodes > self.iot_devices:
            raise InvalidConfig("more malicious nodes than IoT devices")
        if not self.packet_sizes or any(p <= 0 for p in self.packet_sizes):
            raise InvalidConfig("packet size ladder must be non-empty and positive")
        if not self.profiles:
            raise InvalidConfig("need at least one server profile")
        if self.services_per_server > self.slots_per_server:
            raise InvalidConfig("services per server exceed slots")
        if not 0 <= self.theta_lo < self.theta_hi <= 1:
            raise InvalidConfig("need 0 <= theta_lo < theta_hi <= 1")
        if self.faulty_validators > self.validators:
            raise InvalidConfig("more faulty validators than validators")
        if self.signature_weight < 1 or self.retrain_refine_passes < 0 or self.refine_passes < 0:
            raise InvalidConfig("signature weight must be >= 1 and pass counts >= 0")
        if self.session_len < 1 or self.Z0 < 1 or self.benign_interval_s <= 0:
            raise InvalidConfig("session length, Z0 and benign interval must be positive")
        for interval in (self.mine_interval_s, self.migration_interval_s, self.retrain_interval_s,
                         self.key_lifetime_s):
            if not interval > 0:
                raise InvalidConfig("intervals must be positive")

    def digest(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True, default=_jsonable)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def traffic_model(self) -> SynthConfig:
        fams = list(self.known_families) + ([self.novel_family] if self.novel_family else [])
        return SynthConfig(benign=1, attacks={f: 0 for f in fams}, shift=self.shift,
                           features_per_family=self.features_per_family)


def _jsonable(obj):
    if isinstance(obj, enum.Enum):
        return obj.value
    raise TypeError(type(obj))


# -- scenario files ------------------------------------------------------------

_TABLE_KEYS = {
    "number_of_iot_user_nodes": "iot_users",
    "number_of_iot_device_nodes": "iot_devices",
    "number_of_edge_gateways": "edge_gateways",
    "number_of_cloud_server": "cloud_servers",
    "time_for_simulation": "sim_time_s",
    "number_of_malicious_nodes": "malicious_nodes",
    "packets_interval": "packet_sizes",
    "seed": "seed",
}


def _coerce(name: str, raw: str):
    default = SimConfig.__dataclass_fields__[name].default
    if name in ("packet_sizes", "known_families", "profiles"):
        items = [x.strip() for x in raw.split(",") if x.strip()]
        return tuple(int(x) for x in items) if name == "packet_sizes" else tuple(items)
    if name == "novel_family":
        return raw.strip() or None
    if isinstance(default, bool):
        return raw.strip().lower() in ("1", "true", "yes", "on")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    return raw.strip()


def _parse_attack(raw: str) -> AttackSpec:
    parts = [p.strip() for p in raw.split(",")]
    if len(parts) < 2:
        raise InvalidConfig(f"attack line {raw!r}: need 'kind, rate[, start, duration, family]'")
    try:
        kind = AttackerKind(parts[0])
    except ValueError as exc:
        raise InvalidConfig(f"unknown attacker kind {parts[0]!r}") from exc
    start = float(parts[2]) if len(parts) > 2 and parts[2] else 0.0
    dur = float(parts[3]) if len(parts) > 3 and parts[3] else None
    fam = parts[4] if len(parts) > 4 and parts[4] else None
    return AttackSpec(kind, float(parts[1]), start, dur, fam)


def load_config(path: str | Path) -> SimConfig:
    """Read an INI scenario: a table section, a [pipeline] section and [attacks]."""
    path = Path(path)
    if not path.is_file():
        raise InvalidConfig(f"{path}: scenario file not found")
    cp = configparser.ConfigParser()
    cp.optionxform = str  # keep key case (Z0)
    cp.read(path, encoding="utf-8")
    kwargs: dict = {}
    for section in cp.sections():
        if section == "attacks":
            kwargs["attacks"] = tuple(_parse_attack(v) for _, v in cp.items(section))
            continue
        for key, raw in cp.items(section):
            name = _TABLE_KEYS.get(key, key)
            if name not in SimConfig.__dataclass_fields__ or name == "attacks":
                raise InvalidConfig(f"{path}: unknown key {key!r} in [{section}]")
            try:
                kwargs[name] = _coerce(name, raw)
            except ValueError as exc:
                raise InvalidConfig(f"{path}: bad value for {key!r}: {raw!r}") from exc
    cfg = SimConfig(**kwargs)
    cfg.validate()
    return cfg


# -- actors --------------------------------------------------------------------

class Terminal(enum.Enum):
    AUTH = "dropped-at-auth"
    SIDS = "dropped-SIDS"
    AIDS = "dropped-AIDS"
    DELIVERED = "delivered-to-cloud"
    HONEYPOT = "honeypot-absorbed"


@dataclass
class Node:
    id: str
    creds: la.Credentials
    gateway: int
    compromised: bool = False
    key: la.SecretKey | None = None
    issued: set[bytes] = field(default_factory=set)


@dataclass(frozen=True)
class Packet:
    pid: int
    time: int
    source: str
    kind: str
    family: str
    truth: int
    features: np.ndarray
    size: int
    target: str
    gateway: int


@dataclass(frozen=True)
class Outcome:
    pid: int
    time: int
    kind: str
    family: str
    truth: int
    flagged: int
    score: float
    terminal: Terminal
    sids_vote: float | None
    reason: str = ""


@dataclass(frozen=True)
class FeedbackSummary:
    time: int
    harvested: int
    failures: int
    db_version: int
    pre_rate: float | None
    post_rate: float | None


@dataclass
class SimReport:
    config_hash: str
    seed: int
    metrics: MetricsReport
    roc: np.ndarray | None
    terminals: dict[str, int]
    family_sids_rate: dict[str, float | None]
    novel_heldout_rate: float | None
    packets: int
    migrations: int
    honeypots: int
    patterns_sealed: int
    retrains: int
    blocks: int
    wall_time_s: float
    peak_memory_bytes: int

    def row(self) -> dict[str, str]:
        m = self.metrics
        out = {"config_hash": self.config_hash, "seed": str(self.seed), "packets": str(self.packets)}
        for k, v in m.as_dict().items():
            out[k] = format_value(v)
        for t in Terminal:
            out[t.value] = str(self.terminals.get(t.value, 0))
        for fam in sorted(self.family_sids_rate):
            out[f"sids_rate_{fam}"] = format_value(self.family_sids_rate[fam])
        out["novel_heldout_rate"] = format_value(self.novel_heldout_rate)
        for k in ("migrations", "honeypots", "patterns_sealed", "retrains", "blocks"):
            out[k] = str(getattr(self, k))
        return out


class Sim:
    """Mutable simulation state; build with ``build_topology``."""

    def __init__(self, config: SimConfig):
        self.config = config
        seed = config.seed
        self.rng_traffic = np.random.default_rng([seed, 1])
        self.rng_auth = np.random.default_rng([seed, 2])
        self.rng_attack = np.random.default_rng([seed, 3])
        self.now = 0
        self._queue: list = []
        self._seq = 0
        self._pid = 0
        self.nodes: list[Node] = []
        self.fleet: dict[str, hbo.EdgeServer] = {}
        self.service_host: dict[str, str] = {}
        self.service_ids: list[str] = []
        self.outcomes: list[Outcome] = []
        self.replay_pool: deque[la.Transaction] = deque(maxlen=64)
        self.gateway_arrivals: Counter = Counter()
        self.arrivals_by_kind: Counter = Counter()
        self.auth_reasons: Counter = Counter()
        self.under_attack: set[str] = set()
        self.decoyed: dict[str, str] = {}
        self.sessions: dict[tuple[str, str], list[hn.SessionEvent]] = {}
        self.waiting: Counter = Counter()
        self.migration_log: list[dict] = []
        self.feedback_log: list[FeedbackSummary] = []
        self.harvest_cursor = 0
        self.sigdb = irf.SignatureDB()
        self.classifier_override: Callable[[Packet], float] | None = None
        self.policy = hbo.TrustPolicy(config.trust_positive, config.trust_negative)
        self.ledger: la.Ledger
        self.honeynet: hn.Honeynet
        self.forest: irf.Forest
        self.aids_model: aids.DcrnnModel
        self.scaler: MinMaxScaler
        self.base_train: Dataset
        self.novel_eval: np.ndarray

    # event queue
    def schedule(self, t: int, kind: str, payload=None) -> None:
        if t < self.now:
            raise ValueError("cannot schedule an event in the past")
        heapq.heappush(self._queue, (t, self._seq, kind, payload))
        self._seq += 1

    @property
    def compromised(self) -> list[Node]:
        return [n for n in self.nodes if n.compromised]

    @property
    def honest(self) -> list[Node]:
        return [n for n in self.nodes if not n.compromised]

    def state_digest(self) -> str:
        h = hashlib.sha256()
        h.update(self.config.digest().encode())
        for n in self.nodes:
            h.update(n.id.encode() + n.creds.digest() + bytes([n.compromised]))
        for sid in sorted(self.fleet):
            s = self.fleet[sid]
            h.update(f"{sid}|{s.profile}|{s.trust!r}|{','.join(sorted(s.services))}".encode())
        h.update(self.ledger.head_hash)
        return h.hexdigest()

    def local_servers(self) -> list[hbo.EdgeServer]:
        return [s for s in self.fleet.values() if s.role is hbo.Role.LOCAL]


def _node_creds(seed: int, nid: str, user: bool) -> la.Credentials:
    base = hashlib.sha256(f"{seed}|{nid}".encode()).digest()
    return la.Credentials(puf=base[:16], device_id=nid, mac=base[16:22],
                          user_id=f"u-{nid}" if user else None)


def train_models(config: SimConfig, sim: Sim) -> None:
    """Synthesize training traffic for known families and fit both detectors."""
    model = config.traffic_model()
    train_cfg = replace(model, benign=config.train_benign,
                        attacks={f: config.train_per_family for f in config.known_families})
    sim.base_train = synth_traffic(train_cfg, config.seed)
    rng = np.random.default_rng([config.seed, 4])
    if config.novel_family and config.novel_eval:
        sim.novel_eval = sample_family(model, config.novel_family, config.novel_eval, rng)
    else:
        sim.novel_eval = np.zeros((0, model.schema.length))
    sim.forest = _fit_forest(config, sim.base_train, config.seed)
    sim.scaler = MinMaxScaler.fit(sim.base_train.X)
    n = min(config.aids_train_samples, len(sim.base_train))
    X, y = sim.base_train.X[:n], sim.base_train.y[:n]
    dcfg = aids.DcrnnConfig(filters=config.aids_filters, hidden=config.aids_hidden)
    net = aids.DcrnnModel.init(dcfg, seed=config.seed)
    if np.unique(y).size == 2:
        net, _ = aids.train(net, images_from_matrix(X, sim.scaler), y,
                            aids.TrainConfig(learning_rate=config.aids_learning_rate,
                                             epochs=config.aids_epochs, seed=config.seed))
    sim.aids_model = net


def offline_pipeline(train: Dataset, test: Dataset, config: SimConfig | None = None) -> MetricsReport:
    """Fit both detectors on ``train`` and run the SIDS -> AIDS triage over ``test``."""
    c = config or SimConfig()
    forest = _fit_forest(c, train, c.seed)
    scaler = MinMaxScaler.fit(train.X)
    rng = np.random.default_rng([c.seed, 4])
    n = min(c.aids_train_samples, len(train))
    idx = np.sort(rng.choice(len(train), n, replace=False))
    net = aids.DcrnnModel.init(aids.DcrnnConfig(filters=c.aids_filters, hidden=c.aids_hidden), c.seed)
    if np.unique(train.y[idx]).size == 2:
        net, _ = aids.train(net, images_from_matrix(train.X[idx], scaler), train.y[idx],
                            aids.TrainConfig(learning_rate=c.aids_learning_rate, epochs=c.aids_epochs,
                                             seed=c.seed))
    votes = forest.attack_vote(test.X)
    flagged = (votes >= c.theta_hi).astype(np.int8)
    scores = votes.copy()
    mid = np.flatnonzero((votes > c.theta_lo) & (votes < c.theta_hi))
    if mid.size:
        p_mal = aids.forward(net, images_from_matrix(test.X[mid], scaler))[:, 1]
        flagged[mid] = aids.predict_from_probs(np.column_stack([1 - p_mal, p_mal]))
        scores[mid] = c.theta_lo + (c.theta_hi - c.theta_lo) * p_mal
    return compute_metrics(test.y, flagged, scores)


def _fit_forest(config: SimConfig, data: Dataset, seed: int, passes: int | None = None) -> irf.Forest:
    passes = config.refine_passes if passes is None else passes
    forest = irf.train_forest(data, Z0=config.Z0, seed=seed)
    if passes:
        forest = irf.refine_forest(forest, data, h0=config.h0, max_passes=passes)
    return forest


def build_topology(config: SimConfig) -> Sim:
    config.validate()
    sim = Sim(config)
    seed = config.seed
    sim.ledger = la.Ledger(
        seed=b"ngwn" + struct.pack("<q", seed), n_validators=config.validators, quorum=config.quorum,
        key_lifetime=int(round(config.key_lifetime_s * US)),
        faulty=frozenset(range(config.faulty_validators)),
    )
    g = max(config.edge_gateways, 1)
    for i in range(config.iot_users):
        nid = f"user-{i}"
        sim.nodes.append(Node(nid, _node_creds(seed, nid, True), i % g))
    bad = set()
    if config.malicious_nodes:
        bad = set(sim.rng_traffic.choice(config.iot_devices, config.malicious_nodes, replace=False).tolist())
    for i in range(config.iot_devices):
        nid = f"dev-{i}"
        sim.nodes.append(Node(nid, _node_creds(seed, nid, False), i % g, compromised=i in bad))
    for node in sim.nodes:
        node.key = la.register(sim.ledger, node.creds, now=0)
    for i in range(config.edge_gateways):
        sid = f"edge-{i}"
        svcs = {f"svc-{i}-{j}" for j in range(config.services_per_server)}
        sim.fleet[sid] = hbo.EdgeServer(sid, config.profiles[i % len(config.profiles)],
                                        config.slots_per_server, len(svcs), services=svcs)
        for s in sorted(svcs):
            sim.service_host[s] = sid
    for i in range(config.cloud_servers):
        sid = f"cloud-{i}"
        sim.fleet[sid] = hbo.EdgeServer(sid, "cloud", config.slots_per_server, role=hbo.Role.GLOBAL)
    sim.service_ids = sorted(sim.service_host)
    sim.honeynet = hn.Honeynet.create(seed)
    train_models(config, sim)
    return sim


def inject_attacks(sim: Sim, spec: AttackSpec) -> None:
    """Schedule a periodic attacker starting at ``spec.start_s``."""
    if spec.rate <= 0:
        return
    end = sim.config.sim_time_s if spec.duration_s is None else spec.start_s + spec.duration_s
    sim.schedule(int(round(spec.start_s * US)), "attack", (spec, 0, int(round(end * US))))


def _schedule_periodic(sim: Sim) -> None:
    c = sim.config
    sim.schedule(int(c.mine_interval_s * US), "mine")
    sim.schedule(int(c.migration_interval_s * US), "migrate")
    if c.feedback:
        sim.schedule(int(c.retrain_interval_s * US), "retrain")
    for node in sim.honest:
        sim.schedule(int(sim.rng_traffic.exponential(c.benign_interval_s) * US), "benign", node)
    for spec in c.attacks:
        inject_attacks(sim, spec)


# -- packet pipeline -------------------------------------------------------------

def _new_packet(sim: Sim, node_id: str, kind: str, family: str, target: str, gateway: int) -> Packet:
    model = sim.config.traffic_model()
    fv = sample_family(model, family or None, 1, sim.rng_traffic)[0]
    size = sim.config.packet_sizes[int(sim.rng_traffic.integers(len(sim.config.packet_sizes)))]
    pkt = Packet(sim._pid, sim.now, node_id, kind, family, int(kind != "benign"), fv, size, target, gateway)
    sim._pid += 1
    sim.gateway_arrivals[gateway] += 1
    sim.arrivals_by_kind[kind] += 1
    return pkt


def _payload(pkt: Packet) -> bytes:
    return struct.pack("<qI", pkt.pid, pkt.size) + pkt.features.astype("<f8").tobytes()


def _legit_txn(sim: Sim, node: Node, pkt: Packet) -> la.Transaction:
    if node.key is None or node.key.expired(sim.now):
        node.key = la.renew_key(sim.ledger, node.creds, sim.now)
    tag = la.generate_tag(node.key, sim.rng_auth, node.issued)
    return la.make_transaction(node.key, tag, _payload(pkt), sim.now)


def _record(sim: Sim, pkt: Packet, flagged: int, score: float, terminal: Terminal,
            vote: float | None = None, reason: str = "") -> None:
    sim.outcomes.append(Outcome(pkt.pid, pkt.time, pkt.kind, pkt.family, pkt.truth, flagged,
                                score, terminal, vote, reason))


def _process(sim: Sim, pkt: Packet, txn: la.Transaction) -> None:
    c = sim.config
    res = la.submit_transaction(sim.ledger, txn, sim.now)
    if not res.ok:
        sim.auth_reasons[res.reason.value] += 1
        _record(sim, pkt, 1, 1.0, Terminal.AUTH, reason=res.reason.value)
        return
    if pkt.kind == "benign":
        sim.replay_pool.append(txn)
    if sim.classifier_override is not None:
        vote = float(sim.classifier_override(pkt))
    else:
        vote = sim.forest.vote_one(pkt.features)
    tri = irf.triage_from_vote(vote, c.theta_lo, c.theta_hi)
    if tri is irf.Triage.MALICIOUS:
        _record(sim, pkt, 1, vote, Terminal.SIDS, vote)
        return
    score = vote
    if tri is irf.Triage.SUSPICIOUS:
        verdict, p_mal = aids.classify_suspicious(sim.aids_model, pkt.features, sim.scaler)
        score = c.theta_lo + (c.theta_hi - c.theta_lo) * p_mal
        if verdict is aids.Verdict.MALICIOUS:
            _record(sim, pkt, 1, score, Terminal.AIDS, vote)
            return
    _deliver(sim, pkt, score, vote)


def _deliver(sim: Sim, pkt: Packet, score: float, vote: float) -> None:
    if not pkt.truth:
        host = sim.fleet[sim.service_host[pkt.target]]
        host.trust = hbo.update_trust(host.trust, sim.policy.completed())
        sim.waiting[host.id] += 1
        _record(sim, pkt, 0, score, Terminal.DELIVERED, vote)
        return
    if pkt.target in sim.decoyed:
        _absorb(sim, pkt)
        _record(sim, pkt, 0, score, Terminal.HONEYPOT, vote)
        return
    server = sim.fleet[pkt.target]
    server.trust = hbo.update_trust(server.trust, sim.policy.attacked())
    sim.under_attack.add(server.id)
    sim.waiting[server.id] += 1
    _record(sim, pkt, 0, score, Terminal.DELIVERED, vote)


def _absorb(sim: Sim, pkt: Packet) -> None:
    hp = sim.honeynet.honeypots[sim.decoyed[pkt.target]]
    key = (hp.id, pkt.family or pkt.kind)
    events = sim.sessions.setdefault(key, [])
    offset = sim.now if not events else max(sim.now, events[-1].offset_us + 1)
    ev = hn.SessionEvent(offset, pkt.kind, _payload(pkt), tuple(float(v) for v in pkt.features))
    hp.record(ev)
    events.append(ev)
    if len(events) >= sim.config.session_len:
        pattern = hn.capture(hp, events, key[1])
        hn.seal_pattern(sim.honeynet, pattern)
        sim.sessions[key] = []


def _on_benign(sim: Sim, node: Node) -> None:
    ids = sim.service_ids
    svc = ids[int(sim.rng_traffic.integers(len(ids)))] if ids else None
    nxt = sim.now + max(1, int(sim.rng_traffic.exponential(sim.config.benign_interval_s) * US))
    sim.schedule(nxt, "benign", node)
    if svc is None:
        return
    pkt = _new_packet(sim, node.id, "benign", "", svc, node.gateway)
    _process(sim, pkt, _legit_txn(sim, node, pkt))


def _random_target(sim: Sim) -> str | None:
    local = sorted(s.id for s in sim.local_servers())
    return local[int(sim.rng_attack.integers(len(local)))] if local else None


def _on_attack(sim: Sim, spec: AttackSpec, k: int, end: int) -> None:
    nxt = int(round(spec.start_s * US + (k + 1) * US / spec.rate))
    if nxt < end:
        sim.schedule(nxt, "attack", (spec, k + 1, end))
    target = _random_target(sim)
    if target is None:
        return
    kind = spec.kind
    ra = sim.rng_attack
    if kind in (AttackerKind.INTRUSION, AttackerKind.DDOS):
        pool = sim.compromised
        if not pool:
            return
        node = pool[int(ra.integers(len(pool)))]
        fam = spec.family or ("DDoS" if kind is AttackerKind.DDOS else "")
        pkt = _new_packet(sim, node.id, kind.value, fam, target, node.gateway)
        _process(sim, pkt, _legit_txn(sim, node, pkt))
        return
    if kind is AttackerKind.REPLAY:
        if not sim.replay_pool:
            return
        txn = sim.replay_pool[int(ra.integers(len(sim.replay_pool)))]
        pkt = _new_packet(sim, "replayer", kind.value, "", target, 0)
        _process(sim, pkt, txn)
        return
    if not sim.nodes:
        return
    victim = sim.nodes[int(ra.integers(len(sim.nodes)))]
    pkt = _new_packet(sim, f"attacker->{victim.id}", kind.value, "", target, victim.gateway)
    p = sim.ledger.profile
    if kind is AttackerKind.FUZZING:
        puf = bytearray(victim.creds.puf)
        bit = int(ra.integers(len(puf) * 8))
        puf[bit // 8] ^= 1 << (bit % 8)
        forged = la.Credentials(bytes(puf), victim.creds.device_id, victim.creds.mac, victim.creds.user_id)
        key_id = forged.digest().hex()
    else:
        key_id = victim.creds.digest().hex()
    txn = la.Transaction(key_id, ra.bytes(p.block_len), ra.bytes(p.block_len), ra.bytes(p.tweak_len),
                         sim.ledger.key_lifetime, sim.now, hashlib.sha256(_payload(pkt)).digest())
    _process(sim, pkt, txn)


# -- periodic jobs -------------------------------------------------------------

def _on_mine(sim: Sim) -> None:
    if sim.ledger.pending:
        la.mine_block(sim.ledger, sim.now)
    sim.schedule(sim.now + int(sim.config.mine_interval_s * US), "mine")


def _on_migrate(sim: Sim) -> None:
    local = sim.local_servers()
    for s in local:
        s.tasks_waiting = sim.waiting.get(s.id, 0)
    sim.waiting.clear()
    if local:
        _, L = hbo.classify_servers(local)
        live_profiles = {s.profile for s in local}
        for src in sorted(L, key=lambda s: s.id):
            if src.id not in sim.under_attack or src.id in sim.decoyed or not src.services:
                continue
            try:
                plan = hbo.plan_migration(sim.fleet, src.id)
                result = hbo.migrate(plan, sim.fleet)
            except (hbo.NoFeasibleTarget, hbo.CapacityExceeded, hbo.TargetDegraded) as exc:
                sim.migration_log.append({"time": sim.now, "source": src.id, "error": type(exc).__name__})
                continue
            for svc in plan.services:
                sim.service_host[svc] = plan.target
            if plan.target in sim.decoyed:
                hn.retire_honeypot(sim.honeynet.honeypots[sim.decoyed.pop(plan.target)])
            hp = hn.deploy_honeypot(sim.honeynet, src.profile, live_profiles, src.id)
            sim.decoyed[src.id] = hp.id
            sim.migration_log.append({"time": sim.now, "source": src.id, "target": plan.target,
                                      "moved": result.moved, "honeypot": hp.id})
    sim.under_attack.clear()
    sim.schedule(sim.now + int(sim.config.migration_interval_s * US), "migrate")


def sids_flags(vote, config: SimConfig):
    """SIDS flags a flow when triage does not clear it as Normal."""
    return np.asarray(vote) > config.theta_lo


def novel_detection_rate(sim: Sim, forest: irf.Forest | None = None) -> float | None:
    """Share of held-out novel-family flows the forest flags."""
    if sim.novel_eval.shape[0] == 0:
        return None
    votes = (forest or sim.forest).attack_vote(sim.novel_eval)
    return float(np.mean(sids_flags(votes, sim.config)))


def feedback_cycle(sim: Sim) -> FeedbackSummary:
    """Harvest new sealed patterns, add them to the signature DB and retrain."""
    log = sim.honeynet.log
    if len(log) == 0:
        raise EmptyLog("honeypot log is empty")
    pre = novel_detection_rate(sim)
    res = hn.harvest(log, sim.honeynet.keys.public, sim.honeynet.params, sim.honeynet.cipher_key,
                     start=sim.harvest_cursor)
    sim.harvest_cursor = len(log)
    pats = res.signature_patterns()
    if pats:
        sim.sigdb = irf.ingest_signatures(sim.sigdb, pats)
        augmented = sim.sigdb.augment(sim.base_train, sim.config.signature_weight)
        # retrain over every schema feature so features pruned earlier can return
        sim.forest = _fit_forest(sim.config, augmented, sim.config.seed + sim.sigdb.version,
                                 sim.config.retrain_refine_passes)
    summary = FeedbackSummary(sim.now, len(pats), len(res.failures), sim.sigdb.version, pre,
                              novel_detection_rate(sim))
    sim.feedback_log.append(summary)
    return summary


def _on_retrain(sim: Sim) -> None:
    if len(sim.honeynet.log) > sim.harvest_cursor:
        feedback_cycle(sim)
    sim.schedule(sim.now + int(sim.config.retrain_interval_s * US), "retrain")


_HANDLERS = {"mine": _on_mine, "migrate": _on_migrate, "retrain": _on_retrain}


def run(sim: Sim, duration_s: float | None = None) -> SimReport:
    c = sim.config
    duration_s = c.sim_time_s if duration_s is None else duration_s
    if duration_s > c.sim_time_s:
        raise ValueError("duration exceeds configured simulation time")
    horizon = int(round(duration_s * US))
    t0 = time.perf_counter()
    if not sim._queue and not sim.outcomes:
        _schedule_periodic(sim)
    while sim._queue and sim._queue[0][0] <= horizon:
        t, _, kind, payload = heapq.heappop(sim._queue)
        assert t >= sim.now
        sim.now = t
        if kind == "benign":
            _on_benign(sim, payload)
        elif kind == "attack":
            _on_attack(sim, *payload)
        else:
            _HANDLERS[kind](sim)
    if sim.ledger.pending:
        la.mine_block(sim.ledger, sim.now)
    return make_report(sim, time.perf_counter() - t0)


def make_report(sim: Sim, wall: float = 0.0) -> SimReport:
    truth = [o.truth for o in sim.outcomes]
    flagged = [o.flagged for o in sim.outcomes]
    scores = [o.score for o in sim.outcomes]
    metrics = compute_metrics(truth, flagged, scores)
    roc = None
    if 0 < sum(truth) < len(truth):
        roc = roc_curve(scores, truth)[0]
    fams: dict[str, list[int]] = {}
    for o in sim.outcomes:
        if o.family and o.sids_vote is not None:
            fams.setdefault(o.family, []).append(int(sids_flags(o.sids_vote, sim.config)))
    return SimReport(
        config_hash=sim.config.digest(),
        seed=sim.config.seed,
        metrics=metrics,
        roc=roc,
        terminals={t.value: sum(o.terminal is t for o in sim.outcomes) for t in Terminal},
        family_sids_rate={f: float(np.mean(v)) for f, v in sorted(fams.items())},
        novel_heldout_rate=novel_detection_rate(sim),
        packets=len(sim.outcomes),
        migrations=sum("target" in m for m in sim.migration_log),
        honeypots=len(sim.honeynet.honeypots),
        patterns_sealed=len(sim.honeynet.log),
        retrains=len(sim.feedback_log),
        blocks=sim.ledger.height,
        wall_time_s=wall,
        peak_memory_bytes=resource.getrusage(resource.RUSAGE_SELF).ru_maxrss * 1024,
    )


def write_reports(reports: list[SimReport], out: str | Path) -> None:
    """metrics.csv (deterministic), roc.csv per run, resources.csv (wall time, memory)."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    rows = [r.row() for r in reports]
    cols = list(rows[0])
    for r in rows[1:]:
        cols += [k for k in r if k not in cols]
    with open(out / "metrics.csv", "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(cols) + "\n")
        for r in rows:
            fh.write(",".join(r.get(k, "NA") for k in cols) + "\n")
    for r in reports:
        name = "roc.csv" if len(reports) == 1 else f"roc_seed{r.seed}.csv"
        with open(out / name, "w", encoding="utf-8") as fh:
            fh.write("fpr,tpr\n")
            if r.roc is not None:
                for fpr, tpr in r.roc:
                    fh.write(f"{fpr:.10g},{tpr:.10g}\n")
    with open(out / "resources.csv", "w", encoding="utf-8") as fh:
        fh.write("seed,wall_time_s,peak_memory_bytes\n")
        for r in reports:
            fh.write(f"{r.seed},{r.wall_time_s:.3f},{r.peak_memory_bytes}\n")
