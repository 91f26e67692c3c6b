"""Synchronous message-passing simulator for the self-healing overlay.

The network maintains the unweighted projection of the deterministic growth
sequence.  Nodes know only their own name, their neighbors' names and ids,
and (for neighbors of the all-zeros coordinator) a replica of the
coordinator's vertex count; everything else is recomputed locally from the
deterministic reference topology, which costs no messages in this model.

Rounds are synchronous: each link carries at most one message per direction
per round, every message is charged a bit size that must stay within the
logarithmic cap, and all processing orders are canonical, so two runs of the
same script are identical, including the report digest.

Recovery flows:

* insertion: the new node reaches the coordinator through an attach
  neighbor, learns the vertex count, deduces which vertex splits and becomes
  its 1-copy; the splitting vertex renames to its 0 copy and notifies its
  neighbors, which build their own edges to the new node directly.
* deletion: the neighbor elected by the canonical shortest path reports to
  the coordinator, which routes a takeover to the newest vertex; that vertex
  first wires itself into the deleted slot, then undoes its own insertion
  (its split partner renames back and reclaims the merged edges) and assumes
  the deleted name, pulling the coordinator state if the coordinator died.
  When the newest vertex itself was deleted, the takeover goes to its split
  partner, which performs the undo alone.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable

from .grower import bl_expander, changelog_at, graph_at
from .multigraph import (
    WeightedMultigraph,
    edge_key,
    expansion_cost,
    graph_to_text,
    graphs_equal,
)
from .names import VertexName, format_name, is_all_zeros, partner, strip_identity

MSG_BIT_CAP_FACTOR = 64


class ProtocolError(RuntimeError):
    """The simulated protocol reached a state the design rules out."""


class ScriptError(ValueError):
    """An adversary script event is invalid at the time it fires."""


class Kind(Enum):
    ADD_NOTIFY = "ADD_NOTIFY"
    N_REPLY = "N_REPLY"
    SPLIT_REQ = "SPLIT_REQ"
    NEIGHBOR_LIST = "NEIGHBOR_LIST"
    EDGE_MAKE = "EDGE_MAKE"
    EDGE_DROP = "EDGE_DROP"
    DEL_NOTIFY = "DEL_NOTIFY"
    TAKEOVER = "TAKEOVER"
    UNDO_STEP = "UNDO_STEP"
    STATE_XFER = "STATE_XFER"
    REPLICA_SYNC = "REPLICA_SYNC"


_KIND_PRIORITY = {k: i for i, k in enumerate(Kind)}


@dataclass
class Message:
    kind: Kind
    src: VertexName | None
    final_dst: VertexName | None
    payload: dict
    payload_bits: int
    exclude: frozenset[VertexName] = frozenset()
    route_level: int | None = None
    seq: int = 0


@dataclass
class NodeState:
    ext_id: str
    name: VertexName | None
    neighbor_table: dict[VertexName, str] = field(default_factory=dict)
    replicated_coordinator_state: dict | None = None
    known_n: int | None = None
    partner_ext: str | None = None
    # adversarial attach links (by ext id) that are not yet, or never, edges
    attach_links: dict[str, bool] = field(default_factory=dict)
    # insertion-in-progress bookkeeping (new node only)
    relay_ext: str | None = None
    expected_neighbors: frozenset[VertexName] = frozenset()
    neighbor_list: list[tuple[VertexName, str]] = field(default_factory=list)
    neighbor_list_expect: int | None = None
    wiring_done: bool = True
    pending_forwards: list[Message] = field(default_factory=list)
    # deletion-takeover bookkeeping
    takeover: dict | None = None
    # partner name known dead this event; suppresses pair re-adds until recovery
    pair_hold: VertexName | None = None
    announce_inflight: bool = False

    @property
    def is_coordinator(self) -> bool:
        return self.name is not None and is_all_zeros(self.name)


@dataclass(frozen=True)
class InsertEvent:
    ext_id: str
    attach: tuple[str, ...]


@dataclass(frozen=True)
class DeleteEvent:
    ext_id: str


AdversaryEvent = InsertEvent | DeleteEvent


@dataclass
class SimReport:
    d: int
    seed: int
    events: list[dict]
    final_graph_text: str
    digest: str


def parse_script(text: str) -> list[AdversaryEvent]:
    """Parse the JSON script format: a list of insert/delete operations."""
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScriptError(f"script is not valid JSON: {exc}") from exc
    if not isinstance(raw, list):
        raise ScriptError("script must be a JSON array")
    events: list[AdversaryEvent] = []
    for i, item in enumerate(raw):
        if not isinstance(item, dict) or "op" not in item:
            raise ScriptError(f"event {i}: expected an object with an 'op'")
        op = item["op"]
        if op == "insert":
            attach = item.get("attach", [])
            if not isinstance(attach, list) or not all(
                isinstance(a, str) for a in attach
            ):
                raise ScriptError(f"event {i}: 'attach' must be a string list")
            if "id" not in item:
                raise ScriptError(f"event {i}: insert needs an 'id'")
            events.append(InsertEvent(str(item["id"]), tuple(attach)))
        elif op == "delete":
            if "id" not in item:
                raise ScriptError(f"event {i}: delete needs an 'id'")
            events.append(DeleteEvent(str(item["id"])))
        else:
            raise ScriptError(f"event {i}: unknown op {op!r}")
    return events


def _name_bits(name: VertexName | None) -> int:
    return 9 + (name.depth if name is not None else 0)


def _int_bits(value: int) -> int:
    return max(1, value.bit_length()) + 1


_ROUTE_CACHE: dict = {}


def clear_route_cache() -> None:
    _ROUTE_CACHE.clear()


class SimNetwork:
    """The harness: node states, per-edge message queues, and round loop."""

    def __init__(self, d: int, seed: int = 0):
        self.d = d
        self.seed = seed
        self.nodes: dict[str, NodeState] = {}
        self.n = d // 2 + 1
        self._queues: dict[tuple[str, str], deque[Message]] = {}
        self._seq = 0
        self._defer_pair_drops = False
        self._deferred_drops: set[str] = set()
        self.rounds = 0
        self.messages = 0
        self.bits = 0
        base = graph_at(d, self.n, seed)
        ids = {}
        for v in sorted(base.vertices, key=lambda x: x.key()):
            ext = f"g{v.base}"
            ids[v] = ext
            self.nodes[ext] = NodeState(ext_id=ext, name=v)
        for u, v, _ in base.edges():
            self.nodes[ids[u]].neighbor_table[v] = ids[v]
            self.nodes[ids[v]].neighbor_table[u] = ids[u]
        coord = self._coordinator()
        coord.known_n = self.n
        for nb_ext in coord.neighbor_table.values():
            self.nodes[nb_ext].replicated_coordinator_state = {"n": self.n}

    # -- bookkeeping ------------------------------------------------------

    def _coordinator(self) -> NodeState:
        coords = [x for x in self.nodes.values() if x.is_coordinator]
        if len(coords) != 1:
            raise ProtocolError(
                f"expected exactly one coordinator, found {len(coords)}"
            )
        return coords[0]

    def reset_counters(self) -> None:
        self.rounds = 0
        self.messages = 0
        self.bits = 0

    def _bit_cap(self) -> int:
        return MSG_BIT_CAP_FACTOR * max(1, math.ceil(math.log2(max(self.n, 2))))

    def _send(self, src_ext: str, dst_ext: str, msg: Message) -> None:
        if msg.payload_bits > self._bit_cap():
            raise ProtocolError(
                f"{msg.kind.value} payload of {msg.payload_bits} bits exceeds "
                f"the cap {self._bit_cap()}"
            )
        if src_ext == dst_ext:
            self._handle(self.nodes[dst_ext], msg, src_ext)
            return
        self._seq += 1
        msg.seq = self._seq
        self._queues.setdefault((src_ext, dst_ext), deque()).append(msg)

    def _send_routed(self, src_ext: str, msg: Message) -> None:
        """Forward toward msg.final_dst along the canonical shortest path."""
        node = self.nodes[src_ext]
        assert msg.final_dst is not None
        if node.name is not None and strip_identity(node.name) == strip_identity(
            msg.final_dst
        ):
            self._handle(node, msg, src_ext)
            return
        hop_name: VertexName | None = None
        n_hint = msg.payload.get("n_hint")
        if n_hint is not None and node.name is not None:
            hop_name = self._exact_next_hop(node, msg.final_dst, n_hint, msg.exclude)
        if hop_name is None:
            if msg.route_level is None:
                msg.route_level = self._working_level(node)
            try:
                hop_name = self.route_next_hop(
                    node, msg.final_dst, msg.exclude, msg.route_level
                )
            except ProtocolError:
                if not node.wiring_done:
                    # a node mid-wiring may lack the binding; retry next round
                    node.pending_forwards.append(msg)
                    return
                hop_name = self._escape_hop(node, msg)
        if hop_name is None:
            raise ProtocolError(
                f"{node.ext_id} has no route toward {format_name(msg.final_dst)}"
            )
        self._send(src_ext, node.neighbor_table[hop_name], msg)

    def _escape_hop(self, node: NodeState, msg: Message) -> VertexName:
        """Deterministic last resort when every reference level is stuck.

        Removing a dead vertex's images can separate a node from its own
        split sibling in every reference graph even though the physical
        graph stays connected through partner edges.  Hand the message to
        the smallest neighbor other than the last carrier; the hop budget
        turns a genuine routing bug into a hard error instead of a livelock.
        """
        hops = msg.payload.get("_hops", 0) + 1
        msg.payload["_hops"] = hops
        if hops > 16 * (node.name.depth + 4 if node.name else 4):
            raise ProtocolError(
                f"hop budget exhausted toward {format_name(msg.final_dst)}"
            )
        last = msg.payload.get("_last")
        choices = sorted(node.neighbor_table, key=lambda x: x.key())
        pick = next((x for x in choices if x != last), choices[0])
        msg.payload["_last"] = node.name
        return pick

    # -- routing ----------------------------------------------------------

    def _ref_adj(self, i: int) -> dict[VertexName, list[VertexName]]:
        key = ("adj", self.d, i, self.seed)
        cached = _ROUTE_CACHE.get(key)
        if cached is None:
            g = bl_expander(self.d, i, self.seed)
            cached = {
                v: sorted(g.neighbors(v), key=lambda x: x.key()) for v in g.vertices
            }
            _ROUTE_CACHE[key] = cached
        return cached

    def _ref_dist(
        self,
        i: int,
        target: VertexName,
        exclude: frozenset[VertexName],
    ) -> dict[VertexName, int]:
        """BFS distance to ``target`` in the i-th reference graph.

        ``exclude`` removes vertices whose identity matches a dead name.
        """
        key = ("dist", self.d, i, self.seed, target, exclude)
        cached = _ROUTE_CACHE.get(key)
        if cached is not None:
            return cached
        adj = self._ref_adj(i)

        def dead(w: VertexName) -> bool:
            return any(self._covers(x, w, i) for x in exclude)

        dist = {target: 0}
        frontier = [target]
        while frontier:
            nxt = []
            for v in frontier:
                for w in adj[v]:
                    if w in dist or dead(w):
                        continue
                    dist[w] = dist[v] + 1
                    nxt.append(w)
            frontier = nxt
        _ROUTE_CACHE[key] = dist
        return dist

    @staticmethod
    def _image_in_level(name: VertexName, i: int) -> VertexName:
        """The level-i vertex carrying this name's identity (pad 0s or project)."""
        if name.depth == i:
            return name
        if name.depth < i:
            return VertexName(name.base, name.bits + (0,) * (i - name.depth))
        return VertexName(name.base, name.bits[:i])

    @staticmethod
    def _locus(name: VertexName, level: int) -> set[VertexName]:
        """All level-``level`` vertices this physical node stands for.

        A deeper name projects to its ancestor; a shallower (unsplit) name
        covers every descendant, since the node is the contraction of its
        future copies.
        """
        if name.depth >= level:
            return {VertexName(name.base, name.bits[:level])}
        out = {name}
        for _ in range(level - name.depth):
            out = {v.child(b) for v in out for b in (0, 1)}
        return out

    def _true_dist(
        self, n: int, dst: VertexName, exclude: frozenset[VertexName]
    ) -> dict[VertexName, int] | None:
        """BFS distances to ``dst``'s identity in the exact n-vertex graph.

        Available to any holder of the authoritative vertex count: knowing n
        pins the whole deterministic topology, including the shrinking edges
        between split partners that the doubled references do not contain.
        """
        key = ("true", self.d, self.seed, n, dst, exclude)
        cached = _ROUTE_CACHE.get(key)
        if cached is not None:
            return cached or None
        g = graph_at(self.d, n, self.seed)
        want = strip_identity(dst)
        target = None
        for v in g.vertices:
            if strip_identity(v) == want:
                target = v
                break
        if target is None:
            _ROUTE_CACHE[key] = {}
            return None
        dead = {strip_identity(x) for x in exclude}
        adj = {v: sorted(g.neighbors(v), key=lambda x: x.key()) for v in g.vertices}
        dist = {target: 0}
        frontier = [target]
        while frontier:
            nxt = []
            for v in frontier:
                for w in adj[v]:
                    if w in dist or strip_identity(w) in dead:
                        continue
                    dist[w] = dist[v] + 1
                    nxt.append(w)
            frontier = nxt
        _ROUTE_CACHE[key] = dist
        return dist

    def _exact_next_hop(
        self,
        node: NodeState,
        dst: VertexName,
        n: int,
        exclude: frozenset[VertexName],
    ) -> VertexName | None:
        """Next hop on the true shortest path in the exact n-vertex graph."""
        dist = self._true_dist(n, dst, exclude)
        if dist is None:
            return None
        g = graph_at(self.d, n, self.seed)
        me = strip_identity(node.name)
        pos = None
        for v in g.vertices:
            if strip_identity(v) == me:
                pos = v
                break
        if pos is None:
            return None
        here = dist.get(pos)
        nbrs = sorted(g.neighbors(pos), key=lambda x: x.key())
        ranked = []
        for w in nbrs:
            dw = dist.get(w)
            if dw is None:
                continue
            if here is not None and dw == here - 1:
                ranked.append((0, dw, w))
            elif here is None:
                ranked.append((1, dw, w))
        if not ranked:
            return None
        ranked.sort(key=lambda item: (item[0], item[1], item[2].key()))
        w = ranked[0][2]
        return self._match_binding(node, w, w.depth)

    def _working_level(self, node: NodeState) -> int:
        """Reference level per the local rule: one up if a neighbor is deeper."""
        assert node.name is not None
        level = node.name.depth
        if any(nb.depth > level for nb in node.neighbor_table):
            level += 1
        return level

    def route_next_hop(
        self,
        node: NodeState,
        dst: VertexName,
        exclude: frozenset[VertexName] = frozenset(),
        level: int | None = None,
    ) -> VertexName | None:
        """Next hop toward ``dst``, or None when ``dst`` is this node.

        The working reference level is the node's own unless a neighbor has a
        deeper name (then one level up, with the node standing for both of
        its future copies).  A message pins the level chosen by its source so
        every forwarder measures progress in the same reference graph, which
        makes delivery monotone; ties break toward the smallest name.
        """
        if node.name is None:
            raise ProtocolError(f"{node.ext_id} is not named yet")
        if strip_identity(dst) == strip_identity(node.name):
            return None
        for nb in sorted(node.neighbor_table, key=lambda x: x.key()):
            if strip_identity(nb) == strip_identity(dst):
                return nb
        if level is None:
            level = self._working_level(node)
        # a level can be unusable when removing a dead vertex's images
        # disconnects it; the contraction one level down always reconnects,
        # so walk downward until a hop exists
        for lvl in range(level, -1, -1):
            hop = self._hop_at_level(node, dst, exclude, lvl)
            if hop is not None:
                return hop
        raise ProtocolError(
            f"no hop from {format_name(node.name)} to {format_name(dst)} "
            f"at any level <= {level}"
        )

    def _hop_at_level(
        self,
        node: NodeState,
        dst: VertexName,
        exclude: frozenset[VertexName],
        level: int,
    ) -> VertexName | None:
        target = self._image_in_level(dst, level)
        dist = self._ref_dist(level, target, exclude)
        adjacency = self._ref_adj(level)
        locus = self._locus(node.name, level)
        here = min((dist[v] for v in locus if v in dist), default=None)
        candidates: set[VertexName] = set()
        for v in locus:
            candidates.update(adjacency[v])
        candidates -= locus
        best: VertexName | None = None
        if here is not None:
            for w in sorted(candidates, key=lambda x: x.key()):
                if dist.get(w) == here - 1:
                    best = w
                    break
        else:
            # own vertex excluded (e.g. routing out of a vanishing slot):
            # step toward the nearest reachable candidate
            ranked = sorted(
                (w for w in candidates if w in dist),
                key=lambda w: (dist[w], w.key()),
            )
            best = ranked[0] if ranked else None
        if best is None:
            return None
        phys = self._match_binding(node, best, level)
        if phys is None:
            raise ProtocolError(
                f"{node.ext_id} has no physical neighbor matching "
                f"{format_name(best)}"
            )
        return phys

    @staticmethod
    def _covers(name: VertexName, ref_vertex: VertexName, level: int) -> bool:
        """Whether the node named ``name`` stands for ``ref_vertex`` at ``level``.

        A deeper name stands for its level-``level`` ancestor; a shallower
        (unsplit) name stands for every descendant.
        """
        if name.base != ref_vertex.base:
            return False
        if name.depth >= level:
            return name.bits[:level] == ref_vertex.bits
        return ref_vertex.bits[: name.depth] == name.bits

    @classmethod
    def _match_binding(
        cls, node: NodeState, ref_vertex: VertexName, level: int
    ) -> VertexName | None:
        """The physical neighbor name carrying a reference vertex, if any."""
        for nb in sorted(node.neighbor_table, key=lambda x: x.key()):
            if cls._covers(nb, ref_vertex, level):
                return nb
        return None

    # -- round loop -------------------------------------------------------

    def run_to_quiescence(self, round_limit: int = 100_000) -> None:
        while True:
            retried = False
            for node in list(self.nodes.values()):
                if node.pending_forwards:
                    pending, node.pending_forwards = node.pending_forwards, []
                    for msg in pending:
                        self._send_routed(node.ext_id, msg)
                    retried = len(node.pending_forwards) < len(pending)
            if not self._queues:
                if any(x.pending_forwards for x in self.nodes.values()) and retried:
                    continue
                break
            self.rounds += 1
            if self.rounds > round_limit:
                raise ProtocolError("round limit exceeded; protocol livelock")
            deliveries: list[tuple[str, str, Message]] = []
            for (src, dst), q in list(self._queues.items()):
                deliveries.append((dst, src, q.popleft()))
                if not q:
                    del self._queues[(src, dst)]

            def order(item: tuple[str, str, Message]) -> tuple:
                dst, _src, msg = item
                name = self.nodes[dst].name if dst in self.nodes else None
                name_key = (2, ()) if name is None else (1, name.key())
                return (name_key, _KIND_PRIORITY[msg.kind], msg.seq)

            for dst, src, msg in sorted(deliveries, key=order):
                if dst not in self.nodes:
                    continue
                self.messages += 1
                self.bits += msg.payload_bits
                self._handle(self.nodes[dst], msg, src)

    def _handle(self, node: NodeState, msg: Message, src_ext: str) -> None:
        if (
            not msg.payload.get("direct")
            and msg.final_dst is not None
            and node.name is not None
            and strip_identity(node.name) != strip_identity(msg.final_dst)
        ):
            self._send_routed(node.ext_id, msg)
            return
        getattr(self, f"_on_{msg.kind.value.lower()}")(node, msg, src_ext)

    def _after_table_change(self, node: NodeState) -> None:
        self._recheck_pair_edge(node)
        if node.replicated_coordinator_state is not None and not any(
            is_all_zeros(strip_identity(nb)) for nb in node.neighbor_table
        ):
            node.replicated_coordinator_state = None
        if node.is_coordinator and node.known_n is not None:
            self._sync_replicas(node)

    # -- insertion ---------------------------------------------------------

    def insert(self, ext_id: str, attach: Iterable[str]) -> None:
        attach = tuple(attach)
        if ext_id in self.nodes:
            raise ScriptError(f"ext id {ext_id!r} already present")
        if not attach:
            raise ScriptError("attach set must be nonempty")
        missing = [a for a in attach if a not in self.nodes]
        if missing:
            raise ScriptError(f"attach targets do not exist: {missing}")
        node = NodeState(ext_id=ext_id, name=None, wiring_done=False)
        node.attach_links = {a: True for a in sorted(set(attach))}
        self.nodes[ext_id] = node
        for a in node.attach_links:
            self.nodes[a].attach_links[ext_id] = True
        v_ext = min(node.attach_links)
        node.relay_ext = v_ext
        self._send(
            ext_id,
            v_ext,
            Message(
                Kind.ADD_NOTIFY,
                src=None,
                final_dst=None,
                payload={"new_ext": ext_id, "direct": True},
                payload_bits=_int_bits(self.n) + 8,
            ),
        )
        self.run_to_quiescence()
        for node in self.nodes.values():
            node.announce_inflight = False
        self._common_checks()

    def _on_add_notify(self, node: NodeState, msg: Message, src_ext: str) -> None:
        if msg.payload.get("direct"):
            fwd = Message(
                Kind.ADD_NOTIFY,
                src=node.name,
                final_dst=VertexName(0),
                payload={
                    "new_ext": msg.payload["new_ext"],
                    "via_name": node.name,
                },
                payload_bits=_int_bits(self.n) + _name_bits(node.name) + 16,
            )
            self._send_routed(node.ext_id, fwd)
            return
        if not node.is_coordinator:
            raise ProtocolError("ADD_NOTIFY reached a non-coordinator")
        assert node.known_n is not None
        node.known_n += 1
        self.n = node.known_n
        self._sync_replicas(node)
        self._send_routed(
            node.ext_id,
            Message(
                Kind.N_REPLY,
                src=node.name,
                final_dst=msg.payload["via_name"],
                payload={"n": node.known_n, "new_ext": msg.payload["new_ext"]},
                payload_bits=_int_bits(node.known_n) + 16,
            ),
        )

    def _on_n_reply(self, node: NodeState, msg: Message, src_ext: str) -> None:
        if msg.payload.get("direct"):
            self._new_node_learns_n(node, msg.payload["n"])
            return
        self._send(
            node.ext_id,
            msg.payload["new_ext"],
            Message(
                Kind.N_REPLY,
                src=node.name,
                final_dst=None,
                payload={"n": msg.payload["n"], "direct": True},
                payload_bits=_int_bits(msg.payload["n"]) + 8,
            ),
        )

    def _new_node_learns_n(self, node: NodeState, n: int) -> None:
        log = changelog_at(self.d, n, self.seed)
        node.name = log.new_vertex
        ref = graph_at(self.d, n, self.seed)
        node.expected_neighbors = frozenset(ref.neighbors(log.new_vertex))
        node.neighbor_list_expect = len(
            graph_at(self.d, n - 1, self.seed).neighbors(log.split_vertex)
        )
        assert node.relay_ext is not None
        self._send(
            node.ext_id,
            node.relay_ext,
            Message(
                Kind.SPLIT_REQ,
                src=node.name,
                final_dst=log.split_vertex,
                payload={
                    "new_ext": node.ext_id,
                    "new_name": log.new_vertex,
                    "direct": True,
                },
                payload_bits=_name_bits(log.new_vertex) * 2 + 16,
            ),
        )

    def _on_split_req(self, node: NodeState, msg: Message, src_ext: str) -> None:
        if msg.payload.get("direct"):
            self._send_routed(
                node.ext_id,
                Message(
                    Kind.SPLIT_REQ,
                    src=node.name,
                    final_dst=msg.final_dst,
                    payload={
                        "new_ext": msg.payload["new_ext"],
                        "new_name": msg.payload["new_name"],
                        "via_name": node.name,
                    },
                    payload_bits=_name_bits(msg.payload["new_name"]) * 2 + 16,
                ),
            )
            return
        self._execute_split(node, msg.payload["new_ext"], msg.payload["via_name"])

    def _execute_split(
        self, node: NodeState, new_ext: str, via_name: VertexName | None
    ) -> None:
        """The splitting vertex renames to its 0 copy and rewires its edges."""
        assert node.name is not None
        old_name = node.name
        x0 = old_name.child(0)
        x1 = old_name.child(1)
        node.name = x0
        node.partner_ext = new_ext
        node.attach_links.pop(new_ext, None)
        level = x0.depth
        h = bl_expander(self.d, level, self.seed)
        old_table = dict(node.neighbor_table)
        unsplit = sorted(
            (w for w in old_table if w.depth < level), key=lambda x: x.key()
        )
        split = sorted(
            (w for w in old_table if w.depth == level), key=lambda x: x.key()
        )
        if len(unsplit) + len(split) != len(old_table):
            raise ProtocolError("neighbor depths are inconsistent at split")
        if via_name is not None:
            for w in sorted(old_table, key=lambda x: x.key()):
                self._send_routed(
                    node.ext_id,
                    Message(
                        Kind.NEIGHBOR_LIST,
                        src=node.name,
                        final_dst=via_name,
                        payload={
                            "name": w,
                            "ext": old_table[w],
                            "new_ext": new_ext,
                            "total": len(old_table),
                        },
                        payload_bits=_name_bits(w) + 24,
                    ),
                )
        for w in unsplit:
            self._send(
                node.ext_id,
                old_table[w],
                Message(
                    Kind.EDGE_MAKE,
                    src=node.name,
                    final_dst=None,
                    payload={
                        "direct": True,
                        "my_name": x0,
                        "my_ext": node.ext_id,
                        "rebind": old_name,
                        "link_partner": (x1, new_ext),
                    },
                    payload_bits=_name_bits(x0) + _name_bits(x1) + 24,
                ),
            )
        for p in sorted({w.parent() for w in split}, key=lambda x: x.key()):
            v0, v1 = p.child(0), p.child(1)
            if v0 not in old_table or v1 not in old_table:
                raise ProtocolError(
                    f"split neighbors of {format_name(old_name)} not paired"
                )
            if (h.weight(x0, v0) > 0) == (h.weight(x0, v1) > 0):
                raise ProtocolError("target matching is not a perfect matching")
            kept, lost = (v0, v1) if h.weight(x0, v0) > 0 else (v1, v0)
            self._send(
                node.ext_id,
                old_table[kept],
                Message(
                    Kind.EDGE_MAKE,
                    src=node.name,
                    final_dst=None,
                    payload={
                        "direct": True,
                        "my_name": x0,
                        "my_ext": node.ext_id,
                        "rebind": old_name,
                    },
                    payload_bits=_name_bits(x0) + 16,
                ),
            )
            self._send(
                node.ext_id,
                old_table[lost],
                Message(
                    Kind.EDGE_DROP,
                    src=node.name,
                    final_dst=None,
                    payload={
                        "direct": True,
                        "drop": old_name,
                        "link_partner": (x1, new_ext),
                    },
                    payload_bits=_name_bits(x1) + 24,
                ),
            )
            del node.neighbor_table[lost]
        if unsplit:
            node.neighbor_table[x1] = new_ext
            self._send(
                node.ext_id,
                new_ext,
                Message(
                    Kind.EDGE_MAKE,
                    src=node.name,
                    final_dst=None,
                    payload={
                        "direct": True,
                        "my_name": x0,
                        "my_ext": node.ext_id,
                    },
                    payload_bits=_name_bits(x0) + 16,
                ),
            )
        self._after_table_change(node)

    def _on_neighbor_list(self, node: NodeState, msg: Message, src_ext: str) -> None:
        if msg.payload.get("direct"):
            node.neighbor_list.append((msg.payload["name"], msg.payload["ext"]))
            self._maybe_finish_wiring(node)
            return
        # this is the relay neighbor: push the entry over the attach link
        self._send(
            node.ext_id,
            msg.payload["new_ext"],
            Message(
                Kind.NEIGHBOR_LIST,
                src=node.name,
                final_dst=None,
                payload={
                    "direct": True,
                    "name": msg.payload["name"],
                    "ext": msg.payload["ext"],
                    "total": msg.payload["total"],
                },
                payload_bits=msg.payload_bits,
            ),
        )

    def _on_edge_make(self, node: NodeState, msg: Message, src_ext: str) -> None:
        p = msg.payload
        if p.get("partner_announce") is not None:
            if node.name is not None and node.name.depth and partner(
                node.name
            ) == p["announce_name"]:
                node.partner_ext = p["partner_announce"]
                self._send(
                    node.ext_id,
                    p["partner_announce"],
                    Message(
                        Kind.EDGE_MAKE,
                        src=node.name,
                        final_dst=None,
                        payload={
                            "direct": True,
                            "partner_announce_reply": node.ext_id,
                            "announce_name": node.name,
                        },
                        payload_bits=_name_bits(node.name) + 16,
                    ),
                )
                self._after_table_change(node)
            return
        if p.get("partner_announce_reply") is not None:
            if node.name is not None and node.name.depth and partner(
                node.name
            ) == p["announce_name"]:
                node.partner_ext = p["partner_announce_reply"]
                node.announce_inflight = False
                self._after_table_change(node)
            return
        if p.get("future_name") is not None:
            # takeover wiring: bind the sender under its future identity
            fname = p["future_name"]
            node.neighbor_table[fname] = p["my_ext"]
            node.attach_links.pop(p["my_ext"], None)
            if node.name is not None and node.name.depth and partner(node.name) == fname:
                node.partner_ext = p["my_ext"]
            self._send(
                node.ext_id,
                p["my_ext"],
                Message(
                    Kind.EDGE_MAKE,
                    src=node.name,
                    final_dst=None,
                    payload={
                        "direct": True,
                        "ack": True,
                        "my_name": node.name,
                        "my_ext": node.ext_id,
                    },
                    payload_bits=_name_bits(node.name) + 16,
                ),
            )
            self._after_table_change(node)
            return
        if p.get("ack"):
            node.neighbor_table[p["my_name"]] = p["my_ext"]
            if node.takeover is not None:
                node.takeover["acks"] += 1
                self._maybe_finish_takeover(node)
            return
        if p.get("rebind") is not None:
            node.neighbor_table.pop(p["rebind"], None)
        if p.get("my_name") is not None:
            ext = p.get("my_ext", src_ext)
            node.neighbor_table[p["my_name"]] = ext
            node.attach_links.pop(ext, None)
            if (
                node.name is not None
                and node.name.depth
                and partner(node.name) == p["my_name"]
            ):
                node.partner_ext = ext
        if p.get("link_partner") is not None:
            pname, pext = p["link_partner"]
            node.neighbor_table[pname] = pext
            node.attach_links.pop(pext, None)
            self._send(
                node.ext_id,
                pext,
                Message(
                    Kind.EDGE_MAKE,
                    src=node.name,
                    final_dst=None,
                    payload={
                        "direct": True,
                        "my_name": node.name,
                        "my_ext": node.ext_id,
                    },
                    payload_bits=_name_bits(node.name) + 16,
                ),
            )
        self._after_table_change(node)
        self._maybe_finish_wiring(node)

    def _on_edge_drop(self, node: NodeState, msg: Message, src_ext: str) -> None:
        p = msg.payload
        if p.get("drop") is not None:
            node.neighbor_table.pop(p["drop"], None)
        if p.get("drop_ext"):
            node.attach_links.pop(p["drop_ext"], None)
        if p.get("pair_drop") and node.name is not None and node.name.depth:
            pn = partner(node.name)
            if pn in node.neighbor_table:
                node.partner_ext = node.neighbor_table[pn]
                del node.neighbor_table[pn]
        if p.get("link_partner") is not None:
            pname, pext = p["link_partner"]
            node.neighbor_table[pname] = pext
            node.attach_links.pop(pext, None)
            self._send(
                node.ext_id,
                pext,
                Message(
                    Kind.EDGE_MAKE,
                    src=node.name,
                    final_dst=None,
                    payload={
                        "direct": True,
                        "my_name": node.name,
                        "my_ext": node.ext_id,
                    },
                    payload_bits=_name_bits(node.name) + 16,
                ),
            )
        self._after_table_change(node)

    def _recheck_pair_edge(self, node: NodeState) -> None:
        """Keep the split-partner edge consistent with the unsplit neighbor count.

        The edge between the two halves of a split weighs the number of their
        parent's unsplit neighbors; in the unweighted overlay it must exist
        exactly while that count is positive.  The 0 half always initiates,
        since it knows the 1 half's id from the split.
        """
        if node.name is None or node.name.depth == 0:
            return
        if node.takeover is not None or not node.wiring_done:
            return
        pn = partner(node.name)
        level = node.name.depth
        count = sum(1 for nb in node.neighbor_table if nb.depth < level)
        present = pn in node.neighbor_table
        initiator = node.name.key() < pn.key()
        if present and count == 0 and initiator:
            if self._defer_pair_drops:
                self._deferred_drops.add(node.ext_id)
                return
            # only the 0 half decides; the 1 half applies the paired message,
            # since its own view of the unsplit count may lag transiently
            node.partner_ext = node.neighbor_table[pn]
            del node.neighbor_table[pn]
            self._send(
                node.ext_id,
                node.partner_ext,
                Message(
                    Kind.EDGE_DROP,
                    src=node.name,
                    final_dst=None,
                    payload={"direct": True, "pair_drop": True},
                    payload_bits=8,
                ),
            )
        elif not present and count > 0 and initiator and pn != node.pair_hold:
            live = (
                node.partner_ext is not None
                and node.partner_ext in self.nodes
                and self.nodes[node.partner_ext].name == pn
            )
            if live:
                node.neighbor_table[pn] = node.partner_ext
                self._send(
                    node.ext_id,
                    node.partner_ext,
                    Message(
                        Kind.EDGE_MAKE,
                        src=node.name,
                        final_dst=None,
                        payload={
                            "direct": True,
                            "my_name": node.name,
                            "my_ext": node.ext_id,
                        },
                        payload_bits=_name_bits(node.name) + 16,
                    ),
                )
            elif not node.announce_inflight:
                # sibling id unknown or stale: ask for it and retry on reply
                node.announce_inflight = True
                self._send_routed(
                    node.ext_id,
                    Message(
                        Kind.EDGE_MAKE,
                        src=node.name,
                        final_dst=pn,
                        payload={
                            "partner_announce": node.ext_id,
                            "announce_name": node.name,
                        },
                        payload_bits=_name_bits(node.name) + 16,
                    ),
                )

    def _maybe_finish_wiring(self, node: NodeState) -> None:
        if node.wiring_done or node.name is None:
            return
        if node.neighbor_list_expect is None or len(
            node.neighbor_list
        ) < node.neighbor_list_expect:
            return
        if not node.expected_neighbors <= set(node.neighbor_table):
            return
        node.wiring_done = True
        bound_exts = set(node.neighbor_table.values())
        for ext in sorted(node.attach_links):
            if ext not in bound_exts:
                self._send(
                    node.ext_id,
                    ext,
                    Message(
                        Kind.EDGE_DROP,
                        src=node.name,
                        final_dst=None,
                        payload={"direct": True, "drop_ext": node.ext_id},
                        payload_bits=16,
                    ),
                )
            del node.attach_links[ext]
        self._after_table_change(node)

    # -- deletion ----------------------------------------------------------

    def delete(self, ext_id: str) -> None:
        if ext_id not in self.nodes:
            raise ScriptError(f"ext id {ext_id!r} does not exist")
        if self.n == self.d // 2 + 1:
            raise ScriptError("cannot shrink below the base clique size d/2 + 1")
        dead = self.nodes.pop(ext_id)
        assert dead.name is not None
        dead_name = dead.name
        neighbors = [
            self.nodes[ext]
            for ext in sorted(set(dead.neighbor_table.values()))
            if ext in self.nodes
        ]
        for nb in neighbors:
            for name, ext in list(nb.neighbor_table.items()):
                if ext == ext_id:
                    del nb.neighbor_table[name]
            nb.attach_links.pop(ext_id, None)
            if nb.name is not None and nb.name.depth and partner(nb.name) == dead_name:
                nb.pair_hold = dead_name
                nb.partner_ext = None
        if dead.is_coordinator:
            holders = [
                nb for nb in neighbors if nb.replicated_coordinator_state is not None
            ]
            if len(holders) != len(neighbors):
                raise ProtocolError("a coordinator neighbor lost its replica")
            n = holders[0].replicated_coordinator_state["n"]
            x_name = changelog_at(self.d, n, self.seed).new_vertex
            elected = self._elect_for_coordinator_deletion(
                neighbors, dead_name, x_name, n
            )
            self._send_takeover(elected, dead_name, n, coord_died=True)
        else:
            elected = self._elect_for_deletion(neighbors, dead_name)
            self._send_routed(
                elected.ext_id,
                Message(
                    Kind.DEL_NOTIFY,
                    src=elected.name,
                    final_dst=VertexName(0),
                    payload={"deleted": dead_name},
                    payload_bits=_name_bits(dead_name) + 8,
                    exclude=frozenset([dead_name]),
                ),
            )
        self._defer_pair_drops = True
        for nb in neighbors:
            self._after_table_change(nb)
        self.run_to_quiescence()
        self._defer_pair_drops = False
        for ext in sorted(self._deferred_drops):
            if ext in self.nodes:
                self._after_table_change(self.nodes[ext])
        self._deferred_drops.clear()
        self.run_to_quiescence()
        for node in self.nodes.values():
            node.pair_hold = None
            node.announce_inflight = False
        self._common_checks()

    def _elect_for_deletion(
        self, neighbors: list[NodeState], dead_name: VertexName
    ) -> NodeState:
        """The unique ex-neighbor on the canonical shortest path to the coordinator.

        Every ex-neighbor evaluates the same rule in the reference graph of
        the deleted node's own level, so the election is consistent without
        any knowledge of the vertex count.
        """
        level = dead_name.depth
        target = self._image_in_level(VertexName(0), level)
        dist = self._ref_dist(level, target, frozenset())
        adj = self._ref_adj(level)
        here = dist[dead_name]
        hop = None
        for w in adj[dead_name]:
            if dist.get(w) == here - 1:
                hop = w
                break
        if hop is None:
            raise ProtocolError("deleted vertex has no hop toward the coordinator")
        matches = [
            nb
            for nb in neighbors
            if nb.name is not None
            and self._covers(nb.name, hop, level)
            and not any(nb.name.bits[level:])
        ]
        if len(matches) != 1:
            raise ProtocolError(
                f"deletion election matched {len(matches)} neighbors for "
                f"{format_name(hop)}"
            )
        return matches[0]

    def _elect_for_coordinator_deletion(
        self,
        neighbors: list[NodeState],
        dead_name: VertexName,
        x_name: VertexName,
        n: int,
    ) -> NodeState:
        """Replica holders agree on the neighbor toward the newest vertex."""
        g = graph_at(self.d, n, self.seed)
        adj = {v: sorted(g.neighbors(v), key=lambda x: x.key()) for v in g.vertices}
        dist: dict[VertexName, int] = {x_name: 0}
        frontier = [x_name]
        while frontier:
            nxt = []
            for v in frontier:
                for w in adj[v]:
                    if w not in dist:
                        dist[w] = dist[v] + 1
                        nxt.append(w)
            frontier = nxt
        here = dist[dead_name]
        hop = None
        for w in adj[dead_name]:
            if dist.get(w) == here - 1:
                hop = w
                break
        if hop is None:
            raise ProtocolError(
                "no hop from the dead coordinator to the newest vertex"
            )
        matches = [nb for nb in neighbors if nb.name == hop]
        if len(matches) != 1:
            raise ProtocolError("temporary-coordinator election failed")
        return matches[0]

    def _send_takeover(
        self, sender: NodeState, dead_name: VertexName, n: int, coord_died: bool
    ) -> None:
        x_name = changelog_at(self.d, n, self.seed).new_vertex
        if strip_identity(x_name) == strip_identity(dead_name):
            target = x_name.parent().child(0)
            mode = "self_undo"
        else:
            target = x_name
            mode = "takeover"
        self._send_routed(
            sender.ext_id,
            Message(
                Kind.TAKEOVER,
                src=sender.name,
                final_dst=target,
                payload={
                    "mode": mode,
                    "deleted": dead_name,
                    "n_pre": n,
                    "n_hint": n,
                    "coord_died": coord_died,
                },
                payload_bits=_name_bits(dead_name) + _int_bits(n) + 16,
                exclude=frozenset([dead_name]),
            ),
        )
        if coord_died:
            self._send_routed(
                sender.ext_id,
                Message(
                    Kind.STATE_XFER,
                    src=sender.name,
                    final_dst=target,
                    payload={"n": n, "n_hint": n},
                    payload_bits=_int_bits(n) + 8,
                    exclude=frozenset([dead_name]),
                ),
            )

    def _on_del_notify(self, node: NodeState, msg: Message, src_ext: str) -> None:
        if not node.is_coordinator:
            raise ProtocolError("DEL_NOTIFY reached a non-coordinator")
        assert node.known_n is not None
        n_pre = node.known_n
        node.known_n -= 1
        self.n = node.known_n
        self._sync_replicas(node)
        self._send_takeover(node, msg.payload["deleted"], n_pre, coord_died=False)

    def _on_takeover(self, node: NodeState, msg: Message, src_ext: str) -> None:
        p = msg.payload
        n_pre = p["n_pre"]
        dead_name = p["deleted"]
        log = changelog_at(self.d, n_pre, self.seed)
        if p["mode"] == "self_undo":
            self._partner_unsplit_from_reference(node, log, n_pre)
            if node.is_coordinator and node.known_n is not None:
                self._sync_replicas(node)
            return
        p0 = log.split_vertex.child(0)
        # if the renamed 0 half of the newest split died, its partner (the
        # newest vertex) absorbs the slot and becomes the unsplit parent
        absorb = dead_name == p0
        slot = log.split_vertex if absorb else dead_name
        ref_prev = graph_at(self.d, n_pre - 1, self.seed)
        targets = sorted(ref_prev.neighbors(slot), key=lambda x: x.key())
        node.takeover = {
            "mode": "takeover",
            "dead": dead_name,
            "slot": slot,
            "absorb": absorb,
            "n_pre": n_pre,
            "acks": 0,
            "need": len(targets),
            "coord_died": p["coord_died"],
            "targets_cur": frozenset(
                t if t != log.split_vertex else p0 for t in targets
            ),
        }
        for t in targets:
            self._send_routed(
                node.ext_id,
                Message(
                    Kind.EDGE_MAKE,
                    src=node.name,
                    final_dst=t,
                    payload={
                        "future_name": slot,
                        "my_ext": node.ext_id,
                        "n_hint": n_pre,
                    },
                    payload_bits=_name_bits(slot) + 16,
                    exclude=frozenset([dead_name]),
                ),
            )
        if not absorb and log.split_vertex.child(0) not in node.neighbor_table:
            # remote partner: its handover cannot disturb in-flight wiring
            # (the partner edge is absent from every reference path), so it
            # can overlap the wiring round trips instead of following them
            self._send_partner_handover(node, log, n_pre, dead_name)
            node.takeover["partner_done"] = True
        self._maybe_finish_takeover(node)

    def _send_partner_handover(
        self, node: NodeState, log, n_pre: int, dead_name: VertexName
    ) -> None:
        """Tell the split partner to rename back and reclaim the lost halves.

        Halves are packed into as few messages as the bit cap allows.
        """
        x1 = log.new_vertex
        p0 = log.split_vertex.child(0)
        ref = graph_at(self.d, n_pre, self.seed)
        lost_halves = [
            (w, node.neighbor_table[w])
            for w in sorted(ref.neighbors(x1), key=lambda v: v.key())
            if w != dead_name and w.depth == x1.depth and w != p0
            and w in node.neighbor_table
        ]
        per_entry = 32 + x1.depth
        chunk_size = max(1, (self._bit_cap() - 32) // per_entry)
        chunks = [
            lost_halves[i : i + chunk_size]
            for i in range(0, len(lost_halves), chunk_size)
        ] or [[]]
        direct_ext = node.neighbor_table.get(p0)
        for chunk in chunks:
            payload = {
                "unsplit": True,
                "drop": x1,
                "halves": [(h, e) for h, e in chunk],
                "total": len(chunks),
                "n_pre": n_pre,
            }
            bits = 32 + per_entry * len(chunk)
            if direct_ext is not None:
                payload["direct"] = True
                self._send(
                    node.ext_id,
                    direct_ext,
                    Message(Kind.UNDO_STEP, src=node.name, final_dst=None,
                            payload=payload, payload_bits=bits),
                )
            else:
                self._send_routed(
                    node.ext_id,
                    Message(
                        Kind.UNDO_STEP,
                        src=node.name,
                        final_dst=p0,
                        payload=dict(payload, n_hint=n_pre),
                        payload_bits=bits,
                        exclude=frozenset([dead_name, x1]),
                    ),
                )

    def _maybe_finish_takeover(self, node: NodeState) -> None:
        t = node.takeover
        if t is None or t["acks"] < t["need"]:
            return
        if t["coord_died"] and node.known_n is None:
            return  # wait for STATE_XFER
        log = changelog_at(self.d, t["n_pre"], self.seed)
        self._undo_own_insertion(node, log, t)
        node.name = t["slot"]
        node.takeover = None
        if node.name.depth:
            pn = partner(node.name)
            if pn in node.neighbor_table:
                node.partner_ext = node.neighbor_table[pn]
            elif not t.get("absorb"):
                # introduce ourselves to the split sibling even though the
                # shrinking edge is currently absent, so either side can
                # initiate its re-creation later
                self._send_routed(
                    node.ext_id,
                    Message(
                        Kind.EDGE_MAKE,
                        src=node.name,
                        final_dst=pn,
                        payload={
                            "partner_announce": node.ext_id,
                            "announce_name": node.name,
                        },
                        payload_bits=_name_bits(node.name) + 16,
                    ),
                )
        self._after_table_change(node)

    def _on_state_xfer(self, node: NodeState, msg: Message, src_ext: str) -> None:
        node.known_n = msg.payload["n"] - 1
        self.n = node.known_n
        if node.takeover is not None:
            self._maybe_finish_takeover(node)

    def _undo_own_insertion(self, node: NodeState, log, t: dict) -> None:
        """Shed the newest vertex's edges, handing the merged ones to the partner."""
        x1 = log.new_vertex
        p = log.split_vertex
        p0 = p.child(0)
        ref = graph_at(self.d, t["n_pre"], self.seed)
        old_names = sorted(
            (w for w in ref.neighbors(x1) if w != t["dead"]),
            key=lambda x: x.key(),
        )
        lost_halves = [
            (w, node.neighbor_table[w])
            for w in old_names
            if w.depth == x1.depth and w != p0
        ]
        partner_ext = node.neighbor_table.get(p0)
        if t.get("absorb"):
            # the dead node was the split partner: no handover, the shared
            # edges persist under the parent name once the old one is dropped
            for w in old_names:
                self._send(
                    node.ext_id,
                    node.neighbor_table[w],
                    Message(
                        Kind.UNDO_STEP,
                        src=node.name,
                        final_dst=None,
                        payload={"direct": True, "drop": x1},
                        payload_bits=_name_bits(x1) + 8,
                    ),
                )
            for w in old_names:
                if w not in t["targets_cur"]:
                    node.neighbor_table.pop(w, None)
            node.partner_ext = None
            return
        for w in old_names:
            if w == p0:
                continue
            self._send(
                node.ext_id,
                node.neighbor_table[w],
                Message(
                    Kind.UNDO_STEP,
                    src=node.name,
                    final_dst=None,
                    payload={"direct": True, "drop": x1},
                    payload_bits=_name_bits(x1) + 8,
                ),
            )
        if not t.get("partner_done"):
            self._send_partner_handover(node, log, t["n_pre"], t["dead"])
        partner_is_target = p0 in t["targets_cur"]
        keep = set(t["targets_cur"])
        if partner_is_target:
            keep.add(p)
        for w in old_names:
            if w not in keep:
                node.neighbor_table.pop(w, None)
        if partner_is_target and p0 in node.neighbor_table:
            # the partner's rename to the parent name is deterministic; its
            # ack may have carried the old name if it raced the handover
            node.neighbor_table[p] = node.neighbor_table.pop(p0)
        node.partner_ext = None

    def _partner_unsplit_from_reference(self, node: NodeState, log, n_pre: int) -> None:
        """Undo a split when the 1-copy itself was deleted: the partner reclaims.

        A lost half is not adjacent to the partner, and routing straight to it
        could require the very edge being re-created.  Every other reference
        edge of the lost half is intact, so the reconnect request is routed to
        its canonically smallest other neighbor, which hands it over the
        surviving link.
        """
        assert node.name is not None
        x1 = log.new_vertex
        renamed = node.name.parent()
        ref = graph_at(self.d, n_pre, self.seed)
        lost = [
            w
            for w in sorted(ref.neighbors(x1), key=lambda x: x.key())
            if w.depth == x1.depth and w != node.name
        ]
        for half in lost:
            relays = sorted(
                (r for r in ref.neighbors(half) if r != x1),
                key=lambda x: x.key(),
            )
            if not relays:
                raise ProtocolError(
                    f"no live relay toward {format_name(half)}"
                )
            self._send_routed(
                node.ext_id,
                Message(
                    Kind.UNDO_STEP,
                    src=node.name,
                    final_dst=relays[0],
                    payload={
                        "reconnect_for": half,
                        "reconnect": (renamed, node.ext_id),
                        "n_hint": n_pre,
                    },
                    payload_bits=_name_bits(renamed) + _name_bits(half) + 16,
                    exclude=frozenset([x1]),
                ),
            )
        self._partner_rename_and_reclaim(node, [], exclude=frozenset())

    def _on_undo_step(self, node: NodeState, msg: Message, src_ext: str) -> None:
        p = msg.payload
        if p.get("reconnect_for") is not None:
            half = p["reconnect_for"]
            ext = node.neighbor_table.get(half)
            if ext is None:
                raise ProtocolError(
                    f"{node.ext_id} cannot relay a reconnect to "
                    f"{format_name(half)}"
                )
            self._send(
                node.ext_id,
                ext,
                Message(
                    Kind.UNDO_STEP,
                    src=node.name,
                    final_dst=None,
                    payload={"direct": True, "reconnect": p["reconnect"]},
                    payload_bits=msg.payload_bits,
                ),
            )
            return
        if p.get("reconnect") is not None:
            pname, pext = p["reconnect"]
            node.neighbor_table[pname] = pext
            self._send(
                node.ext_id,
                pext,
                Message(
                    Kind.EDGE_MAKE,
                    src=node.name,
                    final_dst=None,
                    payload={
                        "direct": True,
                        "my_name": node.name,
                        "my_ext": node.ext_id,
                    },
                    payload_bits=_name_bits(node.name) + 16,
                ),
            )
            self._after_table_change(node)
            return
        if p.get("drop") is not None and not p.get("unsplit"):
            node.neighbor_table.pop(p["drop"], None)
            self._after_table_change(node)
            return
        if node.takeover is None:
            node.takeover = {
                "mode": "partner_undo",
                "seen": 0,
                "need": p["total"],
                "halves": [],
                "drop": p.get("drop"),
            }
        t = node.takeover
        t["seen"] += 1
        t["halves"].extend(tuple(h) for h in p.get("halves", []))
        if t["seen"] >= max(1, t["need"]):
            node.takeover = None
            if t.get("drop") is not None:
                node.neighbor_table.pop(t["drop"], None)
            self._partner_rename_and_reclaim(node, t["halves"], exclude=frozenset())

    def _partner_rename_and_reclaim(
        self,
        node: NodeState,
        halves: list[tuple[VertexName, str]],
        exclude: frozenset[VertexName],
    ) -> None:
        """Drop the 0 bit, rebind the neighborhood, and reconnect the lost halves."""
        assert node.name is not None and node.name.depth > 0
        old = node.name
        renamed = old.parent()
        node.name = renamed
        node.partner_ext = None
        if renamed.depth:
            pn = partner(renamed)
            if pn in node.neighbor_table:
                node.partner_ext = node.neighbor_table[pn]
            else:
                # renaming can land back on an active split name (a deletion
                # unwinding a doubling boundary); re-introduce ourselves to
                # the sibling so pair-edge decisions stay possible
                self._send_routed(
                    node.ext_id,
                    Message(
                        Kind.EDGE_MAKE,
                        src=node.name,
                        final_dst=pn,
                        payload={
                            "partner_announce": node.ext_id,
                            "announce_name": node.name,
                        },
                        payload_bits=_name_bits(node.name) + 16,
                        exclude=exclude,
                    ),
                )
        for name, ext in sorted(
            node.neighbor_table.items(), key=lambda kv: kv[0].key()
        ):
            self._send(
                node.ext_id,
                ext,
                Message(
                    Kind.EDGE_MAKE,
                    src=node.name,
                    final_dst=None,
                    payload={"direct": True, "my_name": renamed, "rebind": old},
                    payload_bits=_name_bits(renamed) + 16,
                ),
            )
        for half, half_ext in sorted(halves, key=lambda kv: kv[0].key()):
            node.neighbor_table[half] = half_ext
            self._send(
                node.ext_id,
                half_ext,
                Message(
                    Kind.EDGE_MAKE,
                    src=node.name,
                    final_dst=None,
                    payload={
                        "direct": True,
                        "my_name": renamed,
                        "my_ext": node.ext_id,
                    },
                    payload_bits=_name_bits(renamed) + 16,
                ),
            )
        self._after_table_change(node)

    # -- replication -------------------------------------------------------

    def _sync_replicas(self, coord: NodeState, only: str | None = None) -> None:
        assert coord.known_n is not None
        targets = [only] if only else sorted(set(coord.neighbor_table.values()))
        for ext in targets:
            if ext not in self.nodes or ext == coord.ext_id:
                continue
            self._send(
                coord.ext_id,
                ext,
                Message(
                    Kind.REPLICA_SYNC,
                    src=coord.name,
                    final_dst=None,
                    payload={"direct": True, "n": coord.known_n},
                    payload_bits=_int_bits(coord.known_n) + 8,
                ),
            )

    def _on_replica_sync(self, node: NodeState, msg: Message, src_ext: str) -> None:
        # a sync can be in flight while the edge to the coordinator goes
        # away; only current neighbors hold replicas
        holds_edge = any(
            is_all_zeros(strip_identity(nb)) and ext == src_ext
            for nb, ext in node.neighbor_table.items()
        )
        if holds_edge:
            node.replicated_coordinator_state = {"n": msg.payload["n"]}

    # -- observation -------------------------------------------------------

    def topology(self) -> WeightedMultigraph:
        """The simulated unweighted topology, asserting table symmetry."""
        weights = {}
        for node in self.nodes.values():
            if node.name is None:
                raise ProtocolError(f"{node.ext_id} has no name at quiescence")
            for name, ext in node.neighbor_table.items():
                other = self.nodes.get(ext)
                if other is None or other.name != name:
                    raise ProtocolError(
                        f"{node.ext_id} binds {format_name(name)} to {ext}, "
                        "which does not match"
                    )
                if other.neighbor_table.get(node.name) != node.ext_id:
                    raise ProtocolError(f"asymmetric edge {node.ext_id} -> {ext}")
                weights[edge_key(node.name, name)] = 1
        names = [x.name for x in self.nodes.values()]
        return WeightedMultigraph(self.d, names, weights)

    def _reference_unweighted(self) -> WeightedMultigraph:
        ref = graph_at(self.d, self.n, self.seed)
        return WeightedMultigraph(self.d, ref.vertices, {e: 1 for e in ref.weights})

    def _common_checks(self) -> None:
        for node in self.nodes.values():
            if node.pending_forwards:
                raise ProtocolError(f"{node.ext_id} still holds queued forwards")
            if node.attach_links:
                raise ProtocolError(f"{node.ext_id} still holds attach links")
            if node.takeover is not None:
                raise ProtocolError(f"{node.ext_id} is still mid-takeover")
        topo = self.topology()
        ref = self._reference_unweighted()
        if not graphs_equal(topo, ref):
            raise ProtocolError(
                f"simulated topology diverged from the reference at n = {self.n}"
            )
        for node in self.nodes.values():
            deg = len(node.neighbor_table)
            if not (self.d // 2 <= deg <= self.d):
                raise ProtocolError(
                    f"{node.ext_id} has degree {deg} outside [d/2, d]"
                )
        coord = self._coordinator()
        if coord.known_n != self.n:
            raise ProtocolError("coordinator count diverged")
        holder_exts = {
            x.ext_id
            for x in self.nodes.values()
            if x.replicated_coordinator_state is not None
        }
        neighbor_exts = set(coord.neighbor_table.values())
        if holder_exts != neighbor_exts:
            raise ProtocolError(
                f"replica holders {sorted(holder_exts)} differ from coordinator "
                f"neighbors {sorted(neighbor_exts)}"
            )
        for ext in neighbor_exts:
            rep = self.nodes[ext].replicated_coordinator_state
            if rep is None or rep["n"] != self.n:
                raise ProtocolError(f"replica at {ext} is stale: {rep}")


def route_next_hop(
    net: SimNetwork, node: NodeState, dst: VertexName
) -> VertexName | None:
    """Module-level convenience wrapper for the per-node forwarding rule."""
    return net.route_next_hop(node, dst)


def run_script(
    d: int,
    seed: int,
    events: list[AdversaryEvent],
    snapshot_dir: str | None = None,
) -> SimReport:
    """Execute an adversary script, one event to quiescence at a time.

    After every event the simulated topology must equal the unweighted
    reference, degrees stay within [d/2, d], and both the weighted and the
    unweighted change between consecutive references stay within 5d/2.
    """
    net = SimNetwork(d, seed)
    per_event: list[dict] = []
    for idx, ev in enumerate(events):
        net.reset_counters()
        n_before = net.n
        if isinstance(ev, InsertEvent):
            net.insert(ev.ext_id, ev.attach)
            op = "insert"
        else:
            net.delete(ev.ext_id)
            op = "delete"
        lo, hi = sorted((n_before, net.n))
        g_lo, g_hi = graph_at(d, lo, seed), graph_at(d, hi, seed)
        weighted_change = expansion_cost(g_lo, g_hi)
        unweighted_change = expansion_cost(
            WeightedMultigraph(d, g_lo.vertices, {e: 1 for e in g_lo.weights}),
            WeightedMultigraph(d, g_hi.vertices, {e: 1 for e in g_hi.weights}),
        )
        if weighted_change > 5 * d // 2 or unweighted_change > 5 * d // 2:
            raise ProtocolError(
                f"event {idx}: topology change exceeds 5d/2 "
                f"(weighted {weighted_change}, unweighted {unweighted_change})"
            )
        per_event.append(
            {
                "index": idx,
                "op": op,
                "id": ev.ext_id,
                "n_after": net.n,
                "rounds": net.rounds,
                "messages": net.messages,
                "bits": net.bits,
                "topology_changes": unweighted_change,
            }
        )
        if snapshot_dir is not None:
            path = os.path.join(snapshot_dir, f"event{idx:04d}.graph")
            with open(path, "w", newline="\n") as fp:
                fp.write(graph_to_text(net.topology()))
    final_text = graph_to_text(net.topology())
    digest_src = json.dumps(per_event, sort_keys=True) + final_text
    digest = hashlib.sha256(digest_src.encode()).hexdigest()
    return SimReport(
        d=d, seed=seed, events=per_event, final_graph_text=final_text, digest=digest
    )


def report_to_json(report: SimReport) -> str:
    payload = {
        "d": report.d,
        "seed": report.seed,
        "events": report.events,
        "final_graph": report.final_graph_text,
        "digest": report.digest,
    }
    return json.dumps(payload, sort_keys=True, indent=2) + "\n"
