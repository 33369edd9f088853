import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ngwn_sentinel.trust_hbo import (
    CapacityExceeded, DaryHeap, EdgeServer, FitnessWeights, HeapNode, MigrationPlan, NoFeasibleTarget,
    NoServers, Polarity, Role, TargetDegraded, TrustEvent, build_heap, classify_servers,
    cpu_availability, export_snapshot, fitness, fleet_cpu_availability, load_ratio, migrate,
    plan_migration, pressure, select_target, trust_threshold, update_trust,
)

from oracles import fitness_ref


def srv(i, trust=0.5, slots=8, running=0, waiting=0, profile="edge-a", services=()):
    return EdgeServer(f"s{i}", profile, slots, running, waiting, trust, Role.LOCAL, set(services))


@st.composite
def fleets(draw, min_size=1, max_size=10):
    n = draw(st.integers(min_size, max_size))
    out = []
    for i in range(n):
        slots = draw(st.integers(0, 16))
        out.append(srv(i, trust=draw(st.floats(0, 1)), slots=slots, running=draw(st.integers(0, slots)),
                       waiting=draw(st.integers(0, 20)), profile=draw(st.sampled_from(["a", "b"])),
                       services={f"svc{i}-{k}" for k in range(draw(st.integers(0, 3)))}))
    return out


@pytest.mark.parametrize("tau,pol,mag,out", [(0.5, Polarity.POSITIVE, 0.2, 0.6),
                                             (0.5, Polarity.POSITIVE, 0.0, 0.5),
                                             (0.5, Polarity.NEGATIVE, 0.0, 0.5),
                                             (0.9, Polarity.NEGATIVE, 1.0, 0.8)])
def test_update_trust_examples(tau, pol, mag, out):
    assert update_trust(tau, TrustEvent(pol, mag)) == pytest.approx(out)


def test_event_magnitude_range():
    with pytest.raises(ValueError):
        TrustEvent(Polarity.POSITIVE, 1.5)


@given(st.floats(0, 1), st.sampled_from(list(Polarity)), st.floats(0, 1))
def test_trust_stays_in_unit_interval(tau, pol, mag):
    t = update_trust(tau, TrustEvent(pol, mag))
    assert 0.0 <= t <= 1.0
    assert (t >= tau) if pol is Polarity.POSITIVE else (t <= tau)


def test_threshold_examples():
    assert trust_threshold([srv(0, 0.2), srv(1, 0.8)]) == pytest.approx(0.5)
    assert trust_threshold([srv(0, 0.7)]) == pytest.approx(0.7)
    same = [srv(i, 0.4) for i in range(4)]
    H, L = classify_servers(same)
    assert len(H) == 4 and not L
    with pytest.raises(NoServers):
        trust_threshold([])


def test_threshold_ignores_global_servers():
    cloud = EdgeServer("c", "cloud", 64, trust=0.0, role=Role.GLOBAL)
    assert trust_threshold([srv(0, 0.6), cloud]) == pytest.approx(0.6)


def test_classify_examples():
    H, L = classify_servers([srv(0, 0.9), srv(1, 0.1), srv(2, 0.5)], 0.5)
    assert [s.id for s in H] == ["s0", "s2"] and [s.id for s in L] == ["s1"]
    assert classify_servers([]) == ([], [])


def test_cpu_availability_examples():
    assert cpu_availability(srv(0, slots=8, running=3)) == 5
    assert cpu_availability(srv(0, slots=8, running=8)) == 0
    fleet = [srv(0, slots=5), srv(1, slots=4, running=4), srv(2, slots=3, running=1)]
    assert fleet_cpu_availability(fleet) == 7


def test_load_examples():
    assert load_ratio(srv(0, slots=10, waiting=5)) == 2
    assert load_ratio(srv(0, slots=10, waiting=0)) == 10
    assert pressure(srv(0, slots=4, running=4, waiting=4)) == 4


def test_server_invariants():
    with pytest.raises(ValueError):
        srv(0, slots=2, running=3)
    with pytest.raises(ValueError):
        srv(0, trust=1.2)


def test_fitness_extremes():
    best = srv(0, trust=1.0, slots=10, waiting=0)
    worst = srv(1, trust=0.0, slots=10, running=9, waiting=9)
    fv = fitness([best, worst])
    assert fv["s0"] == pytest.approx(2 / 3)
    assert fv["s1"] == pytest.approx(-1 / 3)


def test_identical_servers_identical_fitness():
    fv = fitness([srv(i, 0.3, 8, 2, 1) for i in range(5)])
    assert len(set(fv.values())) == 1


def test_fitness_matches_spreadsheet():
    fleet = [srv(0, 0.9, 12, 2, 3), srv(1, 0.4, 8, 1, 10), srv(2, 0.7, 16, 12, 1)]
    fv = fitness(fleet)
    ref = fitness_ref([10, 7, 4], [3, 10, 1], [0.9, 0.4, 0.7])
    np.testing.assert_allclose([fv[s.id] for s in fleet], ref)
    assert sorted(fv, key=fv.get) == [f"s{i}" for i in np.argsort(ref)]


@settings(max_examples=200)
@given(fleets())
def test_fitness_oracle_property(fleet):
    fv = fitness(fleet)
    ref = fitness_ref([cpu_availability(s) for s in fleet], [s.tasks_waiting for s in fleet],
                      [s.trust for s in fleet])
    np.testing.assert_allclose([fv[s.id] for s in fleet], ref, atol=1e-12)


def test_single_server_heap():
    fh = build_heap([srv(0)])
    assert len(fh.heap) == 1 and fh.root.index == "s0"
    with pytest.raises(NoServers):
        build_heap([])


@settings(max_examples=300)
@given(fleets())
def test_heap_property_and_root(fleet):
    fh = build_heap(fleet)
    assert fh.heap.is_valid()
    assert fh.root.key == max(fh.fv.values())
    ranked = [n.key for n in fh.heap.ranked()]
    assert ranked == sorted(ranked, reverse=True)


@given(st.lists(st.floats(-5, 5), min_size=1, max_size=40), st.integers(2, 5))
def test_dary_heap_push_pop(keys, arity):
    h = DaryHeap(arity=arity)
    for i, k in enumerate(keys):
        h.push(HeapNode(k, f"n{i:03d}"))
        assert h.is_valid()
    popped = [h.pop().key for _ in range(len(keys))]
    assert popped == sorted(keys, reverse=True)


def test_heap_ties_go_to_lower_id():
    h = DaryHeap([HeapNode(1.0, "b"), HeapNode(1.0, "a"), HeapNode(0.5, "c")])
    assert h.peek().index == "a"
    assert h.depth(0) == 0 and h.parent(3) == 0 and list(h.children(0)) == [1, 2]


def _fleet(servers):
    return {s.id: s for s in servers}


def test_select_single_match():
    fleet = _fleet([srv(0, 0.2, services={"x"}), srv(1, 0.9), srv(2, 0.8, profile="edge-b")])
    assert select_target(build_heap(list(fleet.values())), fleet["s0"], fleet).id == "s1"


def test_select_no_matching_profile():
    fleet = _fleet([srv(0, 0.2), srv(1, 0.9, profile="x"), srv(2, 0.8, profile="y")])
    with pytest.raises(NoFeasibleTarget):
        select_target(build_heap(list(fleet.values())), fleet["s0"], fleet)


def test_select_highest_fitness():
    fleet = _fleet([srv(0, 0.1), srv(1, 0.9, slots=8), srv(2, 0.9, slots=8, running=6, waiting=3)])
    fh = build_heap(list(fleet.values()))
    assert fh.fv["s1"] > fh.fv["s2"]
    assert select_target(fh, fleet["s0"], fleet).id == "s1"


@settings(max_examples=200)
@given(fleets(min_size=2), st.floats(-3, 3))
def test_selection_valid_and_shift_invariant(fleet, shift):
    fl = _fleet(fleet)
    fh = build_heap(fleet)
    source = fleet[0]
    tau = trust_threshold(fleet)
    try:
        tgt = select_target(fh, source, fl, tau)
    except NoFeasibleTarget:
        assert not [s for s in fleet[1:] if s.profile == source.profile and s.trust >= tau]
        return
    assert tgt.id != source.id and tgt.profile == source.profile and tgt.trust >= tau
    feasible = [s for s in fleet if s.id != source.id and s.profile == source.profile and s.trust >= tau]
    assert fh.fv[tgt.id] == max(fh.fv[s.id] for s in feasible)
    shifted = type(fh)(DaryHeap([HeapNode(n.key + shift, n.index) for n in fh.heap.nodes]),
                       {k: v + shift for k, v in fh.fv.items()}, fh.avg_fv + shift)
    if shift == int(shift):  # exact float shifts keep ties intact
        assert select_target(shifted, source, fl, tau).id == tgt.id


def test_migrate_moves_services():
    fleet = _fleet([srv(0, 0.1, running=2, services={"a", "b"}), srv(1, 0.9, running=1, services={"c"})])
    res = migrate(plan_migration(fleet, "s0"), fleet)
    assert res.moved == 2
    assert fleet["s0"].services == set() and fleet["s1"].services == {"a", "b", "c"}
    assert fleet["s0"].tasks_running == 0 and fleet["s1"].tasks_running == 3


def test_migrate_capacity_is_atomic():
    fleet = _fleet([srv(0, 0.1, running=2, services={"a", "b"}), srv(1, 0.9, slots=4, running=1)])
    plan = plan_migration(fleet, "s0")
    fleet["s1"].tasks_running = 3
    with pytest.raises(CapacityExceeded):
        migrate(plan, fleet)
    assert fleet["s0"].services == {"a", "b"} and fleet["s1"].services == set()


def test_migrate_degraded_target():
    fleet = _fleet([srv(0, 0.1, services={"a"}), srv(1, 0.9), srv(2, 0.5)])
    plan = plan_migration(fleet, "s0")
    fleet["s1"].trust = 0.2
    with pytest.raises(TargetDegraded):
        migrate(plan, fleet)


def test_three_server_scenario_matches_hand_computation():
    # s0 is attacked (low trust) and hosts two services. Threshold = (0.2+0.8+0.9)/3 = 0.6333.
    # FV: RA = (6, 4, 8) -> norm (0.5, 0, 1); pressure = (1/6, 2/4, 0/8) -> norm (1/3, 1, 0)
    #   s1: (0 + 0.8 - 1)/3 = -0.0667 ; s2: (1 + 0.9 - 0)/3 = 0.6333 -> target s2
    fleet = _fleet([srv(0, 0.2, 8, 2, 1, services={"cam", "door"}), srv(1, 0.8, 8, 4, 2, services={"hvac"}),
                    srv(2, 0.9, 8, 0, 0)])
    fv = fitness(list(fleet.values()))
    assert fv["s1"] == pytest.approx(-0.2 / 3) and fv["s2"] == pytest.approx(1.9 / 3)
    res = migrate(plan_migration(fleet, "s0"), fleet)
    assert res.plan.target == "s2" and res.tau_th == pytest.approx(1.9 / 3)
    state = {k: (sorted(s.services), s.tasks_running) for k, s in fleet.items()}
    assert state == {"s0": ([], 0), "s1": (["hvac"], 4), "s2": (["cam", "door"], 2)}


@settings(max_examples=50)
@given(fleets(min_size=3, max_size=8), st.lists(st.integers(0, 7), min_size=1, max_size=10))
def test_migration_conserves_services(fleet, sources):
    fl = _fleet(fleet)
    before = sorted(x for s in fleet for x in s.services)
    for i in sources:
        sid = fleet[i % len(fleet)].id
        try:
            migrate(plan_migration(fl, sid), fl)
        except (NoFeasibleTarget, CapacityExceeded, TargetDegraded, ValueError):
            pass
        assert sorted(x for s in fleet for x in s.services) == before
        assert all(s.tasks_running <= s.slots_total for s in fleet)


def test_plan_rejects_self_migration():
    with pytest.raises(ValueError):
        MigrationPlan("s0", "s0", ())


def test_fitness_weights_nonnegative():
    with pytest.raises(ValueError):
        FitnessWeights(-1, 1, 1)


def test_snapshot_csv(tmp_path):
    fleet = _fleet([srv(1, 0.4), srv(0, 0.6)])
    export_snapshot(fleet, tmp_path / "f.csv")
    lines = (tmp_path / "f.csv").read_text().splitlines()
    assert lines[0] == "id,profile_hash,slots,running,waiting,trust,fv"
    assert [ln.split(",")[0] for ln in lines[1:]] == ["s0", "s1"]
