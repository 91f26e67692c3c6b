import math
import random

import pytest

from expanderseq.grower import graph_at
from expanderseq.multigraph import WeightedMultigraph, graph_to_text, graphs_equal
from expanderseq.names import VertexName, format_name, strip_identity
from expanderseq.selfheal import (
    DeleteEvent,
    InsertEvent,
    ProtocolError,
    ScriptError,
    SimNetwork,
    parse_script,
    report_to_json,
    run_script,
)


def unweighted(g):
    return WeightedMultigraph(g.d, g.vertices, {e: 1 for e in g.weights})


def grow_net(d, seed, target_n, rng_seed=3):
    net = SimNetwork(d, seed)
    rng = random.Random(rng_seed)
    live = sorted(net.nodes)
    k = 0
    while net.n < target_n:
        ext = f"x{k}"
        k += 1
        net.insert(ext, rng.sample(live, min(len(live), 2)))
        live.append(ext)
    return net


def make_script(n_events, insert_frac, rng_seed, base=4):
    rng = random.Random(rng_seed)
    events = []
    live = [f"g{i}" for i in range(base)]
    n = base
    k = 0
    for _ in range(n_events):
        if n > base and rng.random() > insert_frac:
            victim = rng.choice(live)
            events.append(DeleteEvent(victim))
            live.remove(victim)
            n -= 1
        else:
            ext = f"n{k:04d}"
            k += 1
            attach = tuple(rng.sample(live, min(len(live), rng.randint(1, 3))))
            events.append(InsertEvent(ext, attach))
            live.append(ext)
            n += 1
    return events


# -- routing ---------------------------------------------------------------


def test_route_to_neighbor_is_direct():
    net = SimNetwork(6, 1)
    node = net.nodes["g0"]
    nb = sorted(node.neighbor_table)[0]
    assert net.route_next_hop(node, nb) == nb


def test_route_to_self_is_noop():
    net = SimNetwork(6, 1)
    node = net.nodes["g0"]
    assert net.route_next_hop(node, node.name) is None


def test_route_on_bl_expander_matches_bfs():
    net = grow_net(6, 1, 8)
    g = graph_at(6, 8, 1)
    adj = {v: list(g.neighbors(v)) for v in g.vertices}

    def bfs(src):
        dist = {src: 0}
        frontier = [src]
        while frontier:
            nxt = []
            for v in frontier:
                for w in adj[v]:
                    if w not in dist:
                        dist[w] = dist[v] + 1
                        nxt.append(w)
            frontier = nxt
        return dist

    by_name = {x.name: x for x in net.nodes.values()}
    zero = next(v for v in g.vertices if strip_identity(v) == VertexName(0))
    for src in g.vertices:
        dist = bfs(src)
        cur = by_name[src]
        hops = 0
        while strip_identity(cur.name) != VertexName(0):
            cur = by_name[net.route_next_hop(cur, VertexName(0))]
            hops += 1
            assert hops <= 10
        assert hops == dist[zero]


@pytest.mark.parametrize("target_n", [9, 11, 13])
def test_route_delivers_everywhere_mid_cycle(target_n):
    net = grow_net(6, 1, target_n)
    g = graph_at(6, target_n, 1)
    by_name = {x.name: x for x in net.nodes.values()}
    adj = {v: list(g.neighbors(v)) for v in g.vertices}

    def bfs(src):
        dist = {src: 0}
        frontier = [src]
        while frontier:
            nxt = []
            for v in frontier:
                for w in adj[v]:
                    if w not in dist:
                        dist[w] = dist[v] + 1
                        nxt.append(w)
            frontier = nxt
        return dist

    for src in g.vertices:
        dist = bfs(src)
        for dst in g.vertices:
            if dst == src:
                continue
            cur = by_name[src]
            hops = 0
            while strip_identity(cur.name) != strip_identity(dst):
                cur = by_name[net.route_next_hop(cur, dst)]
                hops += 1
                assert hops <= dist[dst] + 2, (
                    f"{format_name(src)} -> {format_name(dst)}"
                )


# -- insertion ---------------------------------------------------------------


def test_single_insertion_matches_reference():
    net = SimNetwork(6, 1)
    net.insert("alpha", ["g2"])
    assert net.n == 5
    assert graphs_equal(net.topology(), unweighted(graph_at(6, 5, 1)))


def test_insertion_round_and_message_budgets():
    net = SimNetwork(6, 1)
    rng = random.Random(11)
    live = sorted(net.nodes)
    diam_cache = {}
    for k in range(40):
        net.reset_counters()
        ext = f"y{k}"
        net.insert(ext, rng.sample(live, min(len(live), 3)))
        live.append(ext)
        n = net.n
        g = graph_at(6, n - 1, 1)
        if n not in diam_cache:
            adj = {v: list(g.neighbors(v)) for v in g.vertices}

            def ecc(src):
                dist = {src: 0}
                frontier = [src]
                while frontier:
                    nxt = []
                    for v in frontier:
                        for w in adj[v]:
                            if w not in dist:
                                dist[w] = dist[v] + 1
                                nxt.append(w)
                    frontier = nxt
                return max(dist.values())

            diam_cache[n] = max(ecc(v) for v in g.vertices)
        assert net.rounds <= 4 * diam_cache[n] + 14
        assert net.messages <= 40 * math.ceil(math.log2(n))


def test_insertion_rejects_bad_attach():
    net = SimNetwork(6, 1)
    with pytest.raises(ScriptError):
        net.insert("a", [])
    with pytest.raises(ScriptError):
        net.insert("a", ["nope"])
    net.insert("a", ["g0"])
    with pytest.raises(ScriptError):
        net.insert("a", ["g0"])


def test_stale_attach_links_are_dropped():
    net = SimNetwork(6, 1)
    net.insert("alpha", ["g1", "g2", "g3"])
    for node in net.nodes.values():
        assert not node.attach_links


# -- deletion ----------------------------------------------------------------


def test_insert_then_delete_is_identity():
    net = SimNetwork(6, 2)
    net.insert("a", ["g1"])
    net.insert("b", ["a", "g0"])
    before = graph_to_text(net.topology())
    net.insert("c", ["b"])
    net.delete("c")
    assert graph_to_text(net.topology()) == before


def test_delete_arbitrary_node_matches_reference():
    net = grow_net(6, 1, 9)
    net.delete("g2")
    assert net.n == 8
    assert graphs_equal(net.topology(), unweighted(graph_at(6, 8, 1)))


def test_delete_coordinator_transfers_state():
    net = grow_net(6, 1, 8)
    coord = next(x for x in net.nodes.values() if x.is_coordinator)
    net.delete(coord.ext_id)
    assert net.n == 7
    new_coord = next(x for x in net.nodes.values() if x.is_coordinator)
    assert new_coord.known_n == 7
    for ext in new_coord.neighbor_table.values():
        assert net.nodes[ext].replicated_coordinator_state == {"n": 7}
    assert graphs_equal(net.topology(), unweighted(graph_at(6, 7, 1)))


def test_delete_rejected_at_base_clique():
    net = SimNetwork(6, 1)
    with pytest.raises(ScriptError):
        net.delete("g0")


def test_delete_unknown_ext():
    net = grow_net(6, 1, 6)
    with pytest.raises(ScriptError):
        net.delete("ghost")


def test_delete_at_doubling_boundary():
    net = grow_net(6, 1, 8)
    victims = [e for e in net.nodes if e != "g0"]
    net.delete(victims[0])
    assert net.n == 7
    assert graphs_equal(net.topology(), unweighted(graph_at(6, 7, 1)))


# -- scripts -----------------------------------------------------------------


def test_parse_script_roundtrip():
    text = (
        '[{"op":"insert","id":"a","attach":["g0"]},'
        '{"op":"delete","id":"a"}]'
    )
    events = parse_script(text)
    assert events == [InsertEvent("a", ("g0",)), DeleteEvent("a")]


def test_parse_script_rejects_malformed():
    for bad in ("{}", "[1]", '[{"op":"x"}]', '[{"op":"insert"}]', "nope"):
        with pytest.raises(ScriptError):
            parse_script(bad)


def test_empty_script_report():
    rep = run_script(6, 1, [])
    assert rep.events == []
    assert graphs_equal(
        unweighted(graph_at(6, 4, 1)),
        WeightedMultigraph(6, graph_at(6, 4, 1).vertices,
                           {e: 1 for e in graph_at(6, 4, 1).weights}),
    )
    assert rep.digest


def test_twenty_inserts_reach_reference():
    events = []
    live = [f"g{i}" for i in range(4)]
    rng = random.Random(5)
    for k in range(20):
        ext = f"i{k}"
        events.append(InsertEvent(ext, tuple(rng.sample(live, 2))))
        live.append(ext)
    rep = run_script(6, 1, events)
    assert rep.events[-1]["n_after"] == 24
    assert rep.final_graph_text == graph_to_text(unweighted(graph_at(6, 24, 1)))


def test_mixed_script_deterministic_digest():
    events = make_script(100, 0.7, 17)
    rep1 = run_script(6, 1, events)
    rep2 = run_script(6, 1, events)
    assert rep1.digest == rep2.digest
    assert report_to_json(rep1) == report_to_json(rep2)


def test_heavy_churn_across_boundaries():
    for s in (0, 5, 9):
        run_script(6, 1, make_script(120, 0.55, s))


@pytest.mark.parametrize("d", [8, 10])
def test_other_degrees(d):
    events = make_script(40, 0.7, 2, base=d // 2 + 1)
    rep = run_script(d, 1, events)
    assert rep.events


def test_message_bits_within_congest_cap():
    events = make_script(60, 0.7, 23)
    rep = run_script(6, 1, events)
    for e in rep.events:
        # per-message cap is asserted inside the harness; the per-event sum
        # stays proportional to messages * log n
        assert e["bits"] <= e["messages"] * 64 * math.ceil(
            math.log2(max(2, e["n_after"] + 1))
        )


def test_topology_changes_within_bound():
    events = make_script(80, 0.6, 31)
    rep = run_script(6, 1, events)
    assert all(e["topology_changes"] <= 15 for e in rep.events)
