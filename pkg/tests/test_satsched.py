import random

import numpy as np
import pytest

import satoracle
from qflab.fedcore import AggregationStrategy, Client, GlobalModel, ModelUpdate, run_round
from qflab.harness.data import minmax_scale, synth_dataset
from qflab.models import VqcClassifier, VqcSpec
from qflab.satsched import (
    IDLE,
    MODES,
    PRIMARY,
    SECONDARY,
    SecureLinks,
    TraceError,
    VisibilityGraph,
    Window,
    execute_schedule,
    plan_transfers,
    roles_at,
    run_sat_round,
)
from qflab.satsched.schedule import ground_aggregate

SIZE, OVERHEAD = 64, 0.0625  # 8 float64 parameters; all durations stay dyadic


def graph_of(windows, ground):
    return VisibilityGraph([Window(*w) for w in windows], ground)


def implementation(windows, ground, mode, t0, size=SIZE, overhead=OVERHEAD, secure=None):
    g = graph_of(windows, ground)
    schedule = plan_transfers(g, mode, t0, size, overhead)
    updates = {s: ModelUpdate(i, np.full(size // 8, float(i)), 1)
               for i, s in enumerate(schedule.roles.participants)}
    result = execute_schedule(schedule, g, updates, secure)
    return schedule, result


def agg_times(schedule):
    return {e.payload: e.start for e in schedule.events if e.kind == "aggregate"}


CHAIN = [("S1", "G1", 0.0, 10.0, 1024.0), ("S1", "S2", 0.0, 10.0, 512.0)]


def test_roles_primary_secondary_idle():
    windows = CHAIN + [("S3", "S4", 0.0, 10.0, 512.0)]
    r = roles_at(graph_of(windows, ["G1"]), 1.0)
    assert r.roles == {"S1": PRIMARY, "S2": SECONDARY, "S3": IDLE, "S4": IDLE}
    assert r.uplinks == {"S1": "G1"}
    assert r.routes == {"S2": ["S2", "S1"]}


def test_roles_change_with_time():
    windows = [("S1", "G1", 0.0, 2.0, 1024.0), ("S2", "G1", 2.0, 4.0, 1024.0), ("S1", "S2", 0.0, 4.0, 512.0)]
    g = graph_of(windows, ["G1"])
    assert roles_at(g, 1.0).roles == {"S1": PRIMARY, "S2": SECONDARY}
    assert roles_at(g, 2.0).roles == {"S1": SECONDARY, "S2": PRIMARY}


def test_roles_outside_trace_span_rejected():
    g = graph_of(CHAIN, ["G1"])
    with pytest.raises(ValueError):
        roles_at(g, 10.0)
    with pytest.raises(ValueError):
        roles_at(g, -1.0)


def test_relay_tie_breaks_by_lowest_id():
    windows = [("S1", "G1", 0, 9, 1024.0), ("S4", "S2", 0, 9, 512.0), ("S4", "S3", 0, 9, 512.0),
               ("S2", "S1", 0, 9, 512.0), ("S3", "S1", 0, 9, 512.0)]
    r = roles_at(graph_of(windows, ["G1"]), 0.0)
    assert r.routes["S4"] == ["S4", "S2", "S1"]


def test_roles_match_oracle_on_random_traces():
    rng = random.Random(0)
    for _ in range(200):
        windows, ground = satoracle.random_trace(rng, n_sats=rng.randint(2, 4), n_ground=rng.randint(1, 2))
        if not any(w[0] in ground or w[1] in ground for w in windows):
            continue
        g = graph_of(windows, ground)
        for k in range(0, 40):
            t = k * 0.25
            if not g.span[0] <= t < g.span[1]:
                continue
            role, uplink, route = satoracle.roles(windows, ground, t)
            r = roles_at(g, t)
            assert r.roles == role
            assert r.uplinks == uplink
            assert r.routes == route
            for s, rr in r.roles.items():
                if rr == PRIMARY:
                    assert any(g.window_at(s, gs, t) for gs in ground)


def test_chain_scheduled_as_two_ordered_hops():
    schedule, result = implementation(CHAIN, ["G1"], "sequential", 0.0)
    hops = [(e.payload, e.src, e.dst) for e in schedule.transfers()]
    assert hops == [("S1", "S1", "G1"), ("S2", "S2", "S1"), ("S2", "S1", "G1")]
    starts = [e.start for e in schedule.transfers()]
    assert starts == sorted(starts)
    assert result.arrived_nodes == ["S1", "S2"]


def test_simultaneous_local_average_before_uplink():
    windows = CHAIN + [("S3", "S1", 0.0, 10.0, 256.0)]
    schedule, result = implementation(windows, ["G1"], "simultaneous", 0.0)
    avg = [e for e in schedule.events if e.kind == "local_average"]
    assert len(avg) == 1 and avg[0].src == "S1"
    assert set(avg[0].members) == {"S1", "S2", "S3"}
    uplink = [e for e in schedule.transfers() if e.payload == "avg:S1"][0]
    inbound_end = max(e.end for e in schedule.transfers() if e.dst == "S1")
    assert avg[0].start == inbound_end == uplink.start
    assert result.arrived_nodes == ["S1", "S2", "S3"]
    # averaged payload: members hold values 0, 1, 2 with equal weight
    assert np.allclose(ground_aggregate(result), 1.0)


def test_async_aggregation_stamped_at_window_close():
    windows = [("S1", "G1", 2.0, 5.0, 1024.0), ("S1", "S2", 0.0, 1.0, 512.0)]
    schedule, result = implementation(windows, ["G1"], "asynchronous", 0.0)
    # S1 has no ground window at t0, so nobody participates
    assert result.arrived == {}
    # S2 reaches S1 at 0.5625, after the first ground window has closed
    windows = [("S1", "G1", 0.0, 0.5, 1024.0), ("S1", "G1", 2.0, 5.0, 1024.0), ("S2", "S1", 0.0, 1.0, 128.0)]
    schedule, result = implementation(windows, ["G1"], "asynchronous", 0.0)
    times = agg_times(schedule)
    assert times == {"S1": 0.5, "S2": 5.0}
    assert result.arrived_nodes == ["S1", "S2"]


def test_transfer_arithmetic_one_megabyte():
    mb = 2 ** 20
    g = graph_of([("S1", "G1", 0.0, 2.0, float(mb))], ["G1"])
    schedule = plan_transfers(g, "sequential", 0.0, mb, overhead=0.05)
    result = execute_schedule(schedule, g, {"S1": ModelUpdate(0, np.zeros(mb // 8), 1)})
    assert result.arrived_nodes == ["S1"]
    assert result.link_seconds == {("S1", "G1"): 1.0 + 0.05}


def test_short_window_excludes_update():
    g = graph_of([("S1", "G1", 0.0, 0.5, 1024.0), ("S2", "G1", 0.0, 5.0, 1024.0)], ["G1"])
    schedule = plan_transfers(g, "simultaneous", 0.0, 1024, overhead=0.05)
    ups = {"S1": ModelUpdate(0, np.full(128, 1.0), 10), "S2": ModelUpdate(1, np.full(128, 3.0), 10)}
    result = execute_schedule(schedule, g, ups)
    assert result.arrived_nodes == ["S2"]
    assert np.array_equal(ground_aggregate(result), np.full(128, 3.0))
    assert any(e.failed for e in schedule.transfers())


def test_total_time_is_sum_of_executed_events():
    rng = random.Random(1)
    for _ in range(50):
        windows, ground = satoracle.random_trace(rng)
        if not windows:
            continue
        g = graph_of(windows, ground)
        for mode in MODES:
            _, result = implementation(windows, ground, mode, g.span[0])
            assert result.total_seconds == sum(e.duration for e in result.completed)
            assert result.total_seconds == pytest.approx(sum(result.link_seconds.values()), abs=0)


def test_schedule_events_fit_windows_or_fail():
    rng = random.Random(2)
    for _ in range(50):
        windows, ground = satoracle.random_trace(rng)
        if not windows:
            continue
        g = graph_of(windows, ground)
        for mode in MODES:
            schedule, _ = implementation(windows, ground, mode, g.span[0])
            for e in schedule.transfers():
                w = g.window_at(e.src, e.dst, e.start)
                assert e.failed or (w is not None and e.end <= w.close)


@pytest.mark.parametrize("mode", MODES)
def test_modes_match_discrete_event_oracle(mode):
    rng = random.Random(hash(mode) % 1000)
    checked = 0
    for _ in range(150):
        windows, ground = satoracle.random_trace(rng, n_sats=rng.randint(2, 4), n_ground=1)
        if not windows:
            continue
        g = graph_of(windows, ground)
        t0 = g.span[0] + 0.25 * rng.randint(0, 4)
        if t0 >= g.span[1]:
            continue
        role, arrived, seconds, agg = satoracle.simulate(windows, ground, mode, t0, SIZE, OVERHEAD)
        schedule, result = implementation(windows, ground, mode, t0)
        assert schedule.roles.roles == role
        assert result.arrived_nodes == arrived
        assert result.total_seconds == seconds
        assert agg_times(schedule) == agg
        checked += 1
    assert checked > 100


HAND_TRACES = [
    # relay chain with a slow middle hop
    ([("S1", "G1", 0, 4, 1024.0), ("S2", "S1", 0, 4, 256.0), ("S3", "S2", 0, 4, 512.0)], ["G1"], 0.0),
    # two primaries, two ground stations, one secondary per primary
    ([("S1", "G1", 0, 3, 512.0), ("S2", "G2", 0, 3, 512.0), ("S3", "S1", 0, 3, 1024.0),
      ("S4", "S2", 0, 0.25, 256.0)], ["G1", "G2"], 0.0),
    # ground window closes mid-round; async must wait for the second pass
    ([("S1", "G1", 0, 0.25, 256.0), ("S1", "G1", 1, 2, 1024.0), ("S2", "S1", 0, 1.5, 512.0)], ["G1"], 0.0),
]


@pytest.mark.parametrize("mode", MODES)
@pytest.mark.parametrize("case", range(len(HAND_TRACES)))
def test_hand_traces_match_oracle(mode, case):
    windows, ground, t0 = HAND_TRACES[case]
    role, arrived, seconds, agg = satoracle.simulate(windows, ground, mode, t0, SIZE, OVERHEAD)
    schedule, result = implementation(windows, ground, mode, t0)
    assert (schedule.roles.roles, result.arrived_nodes, result.total_seconds, agg_times(schedule)) == \
        (role, arrived, seconds, agg)


def test_hand_trace_expected_values():
    # the slow S4->S2 link cannot carry 64 bytes before it closes
    windows, ground, t0 = HAND_TRACES[1]
    _, result = implementation(windows, ground, "simultaneous", t0)
    assert result.arrived_nodes == ["S1", "S2", "S3"]
    assert result.total_seconds == (0.0625 + 0.0625) + (0.125 + 0.0625) + (0.125 + 0.0625)


def test_schedule_is_deterministic():
    windows, ground, t0 = HAND_TRACES[0]
    for mode in MODES:
        a, ra = implementation(windows, ground, mode, t0)
        b, rb = implementation(windows, ground, mode, t0)
        assert a.events == b.events
        assert ra.arrived_nodes == rb.arrived_nodes and ra.total_seconds == rb.total_seconds


def test_plan_rejects_unknown_mode():
    with pytest.raises(ValueError):
        plan_transfers(graph_of(CHAIN, ["G1"]), "broadcast", 0.0, 64)


# ---------------------------------------------------------------------------
# traces

def test_trace_round_trip_and_merge(tmp_path):
    path = tmp_path / "trace.csv"
    path.write_text(
        "node_a,node_b,open_seconds,close_seconds,link_rate_bytes_per_sec\n"
        "S1,G1,0,5,1000\n"
        "G1,S1,4,8,500\n"
        "S2,S1,1,2,800\n"
    )
    g = VisibilityGraph.from_trace(path)
    assert g.ground == {"G1"}
    assert g.satellites == ["S1", "S2"]
    assert [(w.open, w.close, w.rate) for w in g.windows_between("S1", "G1")] == [(0.0, 8.0, 500.0)]
    out = tmp_path / "out.csv"
    g.to_trace(out)
    again = VisibilityGraph.from_trace(out)
    assert again.windows == g.windows


def test_trace_errors(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("node_a,node_b,open_seconds,close_seconds\nS1,G1,0,1\n")
    with pytest.raises(TraceError):
        VisibilityGraph.from_trace(bad)
    bad.write_text("node_a,node_b,open_seconds,close_seconds,link_rate_bytes_per_sec\nS1,G1,5,1,10\n")
    with pytest.raises(TraceError):
        VisibilityGraph.from_trace(bad)
    bad.write_text("node_a,node_b,open_seconds,close_seconds,link_rate_bytes_per_sec\nS1,S2,0,1,10\n")
    with pytest.raises(TraceError):
        VisibilityGraph.from_trace(bad)


def test_window_is_half_open():
    g = graph_of(CHAIN, ["G1"])
    assert g.window_at("S1", "G1", 0.0) is not None
    assert g.window_at("G1", "S1", 9.999) is not None
    assert g.window_at("S1", "G1", 10.0) is None


# ---------------------------------------------------------------------------
# rounds

def small_federation(n_clients, rows_each=12):
    data = minmax_scale(synth_dataset("blobs", n_clients * rows_each, seed=3, n_features=2, separation=8.0))
    model = VqcClassifier(VqcSpec(2, 1))
    shards = np.array_split(np.arange(len(data)), n_clients)
    clients = [Client(i, model, data.X[s], data.y[s], lr=0.2, batch_size=4) for i, s in enumerate(shards)]
    return model, clients


def test_static_full_visibility_equals_centralized_round():
    sats = ["S1", "S2", "S3", "S4"]
    windows = [Window(s, "G1", 0.0, 1e9, 1e6) for s in sats]
    windows += [Window(a, b, 0.0, 1e9, 1e6) for i, a in enumerate(sats) for b in sats[i + 1:]]
    graph = VisibilityGraph(windows, ["G1"])
    model, clients = small_federation(4)
    g0 = GlobalModel(model.init_params(np.random.default_rng(0)))
    placement = {c.client_id: sats[c.client_id] for c in clients}
    g_sat, record, _, _ = run_sat_round(clients, placement, g0, graph, "simultaneous", 0.0, seed=9,
                                        round_index=0)
    model, clients = small_federation(4)
    g_ref, _ = run_round(clients, g0, AggregationStrategy("fedavg"), 1, seed=9, round_index=0)
    assert np.max(np.abs(g_sat.params - g_ref.params)) < 1e-12
    assert record.arrived == [0, 1, 2, 3]


def test_sat_round_aggregates_only_arrivals():
    windows = [Window("S1", "G1", 0.0, 100.0, 1e6), Window("S2", "S1", 0.0, 1e-3, 1.0)]
    graph = VisibilityGraph(windows, ["G1"])
    model, clients = small_federation(2)
    g0 = GlobalModel(model.init_params(np.random.default_rng(0)))
    g1, record, _, result = run_sat_round(clients, {0: "S1", 1: "S2"}, g0, graph, "sequential", 0.0,
                                          seed=1, round_index=0)
    assert record.participants == [0, 1]
    assert record.arrived == [0]
    assert np.array_equal(g1.params, clients[0].params)


def test_sat_round_with_no_arrivals_keeps_global():
    graph = VisibilityGraph([Window("S1", "G1", 0.0, 1e-4, 1.0)], ["G1"])
    model, clients = small_federation(1)
    g0 = GlobalModel(model.init_params(np.random.default_rng(0)))
    g1, record, _, _ = run_sat_round(clients, {0: "S1"}, g0, graph, "asynchronous", 0.0, seed=1, round_index=0)
    assert g1 is g0 and record.aggregated is False


def test_secure_links_drop_tampered_and_eavesdropped():
    windows, ground, t0 = HAND_TRACES[0]
    clean_sched, clean = implementation(windows, ground, "sequential", t0, secure=SecureLinks(5))
    plain_sched, plain = implementation(windows, ground, "sequential", t0)
    assert clean.arrived_nodes == plain.arrived_nodes
    for pid in clean.arrived:
        assert np.array_equal(clean.arrived[pid][0], plain.arrived[pid][0])

    _, tampered = implementation(windows, ground, "sequential", t0, secure=SecureLinks(5, tamper=["S2|S3"]))
    assert tampered.arrived_nodes == ["S1", "S2"]
    assert any(reason == "auth" for _, reason in tampered.dropped)

    links = SecureLinks(5, flip_rates={"G1|S1": 0.5})
    _, tapped = implementation(windows, ground, "sequential", t0, secure=links)
    assert tapped.arrived_nodes == []
    assert any(reason == "qkd-abort" for _, reason in tapped.dropped)
