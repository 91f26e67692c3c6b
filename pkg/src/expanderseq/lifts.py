"""2-lifts, spectra, and signing search.

A 2-lift doubles a simple base graph: every vertex ``v`` becomes ``v.0`` and
``v.1`` and every base edge becomes a perfect matching between the endpoint
copies, chosen by a per-edge signing bit (0 keeps copies parallel, 1 crosses
them).  The spectrum of the lift is the multiset union of the base spectrum
and the spectrum of the signed adjacency matrix (+1 entries for bit 0, -1 for
bit 1), which the signing search exploits: signings that differ by flipping
all edges at a vertex subset have conjugate signed matrices, so an exhaustive
search only needs one eigensolve per switching class while still resolving
the exact lexicographically-smallest minimizer over every signing.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass
from typing import Sequence, TextIO

import numpy as np

from .multigraph import Edge, WeightedMultigraph, edge_key, weighted_degree
from .names import VertexName, format_name, parse_name

EXHAUSTIVE_EDGE_LIMIT = 20
DEFAULT_SEARCH_BUDGET = 512
EIG_TOL = 1e-9


class SpectralError(RuntimeError):
    """Eigendecomposition failed; carries whatever context is available."""

    def __init__(self, message: str, matrix: np.ndarray | None = None):
        super().__init__(message)
        self.matrix = matrix


class SigningSearchError(RuntimeError):
    """No signing met the spectral budget; carries the best one found."""

    def __init__(self, message: str, best_lambda: float, best: "Signing | None"):
        super().__init__(message)
        self.best_lambda = best_lambda
        self.best = best


def default_lambda_budget(d: int) -> float:
    """Slightly above the Ramanujan floor 2*sqrt(d/2 - 1) for a (d/2)-regular base."""
    return 2.0 * math.sqrt(d / 2 - 1) + 0.5


@dataclass(frozen=True)
class Signing:
    """One bit per base edge, in canonical edge order."""

    edges: tuple[Edge, ...]
    bits: tuple[int, ...]

    def __post_init__(self):
        if len(self.edges) != len(self.bits):
            raise ValueError("signing bits must match the edge list")
        if any(b not in (0, 1) for b in self.bits):
            raise ValueError("signing bits must be 0 or 1")

    def bit(self, u: VertexName, v: VertexName) -> int:
        k = edge_key(u, v)
        try:
            return self.bits[self.edges.index(k)]
        except ValueError:
            raise KeyError(f"edge not in signing domain") from None

    def as_mapping(self) -> dict[Edge, int]:
        return dict(zip(self.edges, self.bits))

    @classmethod
    def from_int(cls, edges: Sequence[Edge], code: int) -> "Signing":
        m = len(edges)
        bits = tuple((code >> (m - 1 - j)) & 1 for j in range(m))
        return cls(tuple(edges), bits)

    def to_int(self) -> int:
        m = len(self.bits)
        return sum(b << (m - 1 - j) for j, b in enumerate(self.bits))


@dataclass(frozen=True)
class SpectralReport:
    """Descending adjacency eigenvalues with the usual summary quantities."""

    eigenvalues: tuple[float, ...]

    @property
    def lambda1(self) -> float:
        return self.eigenvalues[0]

    @property
    def lambda2(self) -> float:
        return self.eigenvalues[1]

    @property
    def lambda_(self) -> float:
        return max(self.lambda2, abs(self.eigenvalues[-1]))


def canonical_edge_list(g: WeightedMultigraph) -> list[Edge]:
    return [(u, v) for u, v, _ in g.sorted_edges()]


def _require_simple_regular(base: WeightedMultigraph) -> int:
    degrees = set()
    for u, v, w in base.edges():
        if w != 1:
            raise ValueError(
                f"base must be simple; edge {format_name(u)}-{format_name(v)} "
                f"has weight {w}"
            )
    for v in base.vertices:
        degrees.add(weighted_degree(base, v))
    if len(degrees) != 1:
        raise ValueError(f"base must be regular; found degrees {sorted(degrees)}")
    return degrees.pop()


def two_lift(base: WeightedMultigraph, signing: Signing) -> WeightedMultigraph:
    """Double ``base`` according to ``signing``.

    Bit 0 on edge {u, v} yields {u.0, v.0} and {u.1, v.1}; bit 1 yields
    {u.0, v.1} and {u.1, v.0}.  The 0 copy plays the role of the base vertex
    (dropping the new bit projects the lift back onto the base).
    """
    _require_simple_regular(base)
    edges = canonical_edge_list(base)
    if set(signing.edges) != set(edges) or len(signing.edges) != len(edges):
        raise ValueError("signing domain must be exactly the base edge set")
    bit = signing.as_mapping()
    vertices = []
    for v in base.vertices:
        vertices.append(v.child(0))
        vertices.append(v.child(1))
    weights: dict[Edge, int] = {}
    for u, v in edges:
        if bit[(u, v)] == 0:
            weights[edge_key(u.child(0), v.child(0))] = 1
            weights[edge_key(u.child(1), v.child(1))] = 1
        else:
            weights[edge_key(u.child(0), v.child(1))] = 1
            weights[edge_key(u.child(1), v.child(0))] = 1
    return WeightedMultigraph(base.d, vertices, weights)


def spectral_report(g: WeightedMultigraph) -> SpectralReport:
    """Full symmetric eigendecomposition of the adjacency matrix."""
    if g.n < 2:
        raise ValueError("spectral report needs at least 2 vertices")
    from .multigraph import adjacency_matrix

    a = adjacency_matrix(g).astype(np.float64)
    return SpectralReport(_eigs_descending(a))


def _eigs_descending(a: np.ndarray) -> tuple[float, ...]:
    try:
        vals = np.linalg.eigvalsh(a)
    except np.linalg.LinAlgError as exc:
        raise SpectralError(f"eigensolver did not converge: {exc}", matrix=a) from exc
    return tuple(float(x) for x in vals[::-1])


def _signed_matrix(base: WeightedMultigraph, order, index, code: int, m: int,
                   edges: Sequence[Edge]) -> np.ndarray:
    a = np.zeros((len(order), len(order)), dtype=np.float64)
    for j, (u, v) in enumerate(edges):
        s = (code >> (m - 1 - j)) & 1
        val = -1.0 if s else 1.0
        a[index[u], index[v]] = val
        a[index[v], index[u]] = val
    return a


def lift_lambda_from_parts(base_eigs: Sequence[float], signed_eigs: Sequence[float]) -> float:
    """lambda of the lift from the base/signed spectra union."""
    merged = sorted(list(base_eigs) + list(signed_eigs), reverse=True)
    return max(merged[1], abs(merged[-1]))


def _switching_masks(base: WeightedMultigraph, edges: Sequence[Edge]) -> list[int]:
    """Per-edge bit masks whose parity gives the switching-canonical bit.

    A spanning forest (BFS in canonical order) defines, for every vertex, the
    set of tree edges on its root path.  Flipping the signing along the unique
    switching that zeroes all tree edge bits maps every signing to its class
    representative; that map is GF(2)-linear, so each representative bit is
    the parity of the signing masked by ``{edge} xor rootpath(u) xor
    rootpath(v)``.
    """
    m = len(edges)
    eidx = {e: j for j, e in enumerate(edges)}
    root_path: dict[VertexName, int] = {}
    order = sorted(base.vertices, key=lambda v: v.key())
    visited: set[VertexName] = set()
    for root in order:
        if root in visited:
            continue
        root_path[root] = 0
        visited.add(root)
        frontier = [root]
        while frontier:
            frontier.sort(key=lambda v: v.key())
            nxt = []
            for u in frontier:
                for v in sorted(base.neighbors(u), key=lambda x: x.key()):
                    if v in visited:
                        continue
                    visited.add(v)
                    j = eidx[edge_key(u, v)]
                    root_path[v] = root_path[u] ^ (1 << (m - 1 - j))
                    nxt.append(v)
            frontier = nxt
    masks = []
    for j, (u, v) in enumerate(edges):
        masks.append((1 << (m - 1 - j)) ^ root_path[u] ^ root_path[v])
    return masks


def _exhaustive_search(
    base: WeightedMultigraph, edges: list[Edge], base_eigs: tuple[float, ...]
) -> tuple[float, int]:
    """Exact (lambda, code) minimizer over all 2^m signings.

    Enumerates one eigensolve per switching class, then spreads the class
    lambdas back over every signing to pick the smallest code among the
    global minimizers, which is the lexicographically smallest signing.
    """
    order = sorted(base.vertices, key=lambda v: v.key())
    index = {v: i for i, v in enumerate(order)}
    m = len(edges)
    masks = _switching_masks(base, edges)
    codes = np.arange(1 << m, dtype=np.uint32)
    reps = np.zeros(1 << m, dtype=np.uint32)
    for j in range(m):
        parity = (np.bitwise_count(codes & np.uint32(masks[j])) & 1).astype(np.uint32)
        reps |= parity << np.uint32(m - 1 - j)
    unique_reps, inverse = np.unique(reps, return_inverse=True)
    lam_by_rep = np.empty(len(unique_reps), dtype=np.float64)
    for i, rep in enumerate(unique_reps):
        a_s = _signed_matrix(base, order, index, int(rep), m, edges)
        signed_eigs = _eigs_descending(a_s)
        lam_by_rep[i] = lift_lambda_from_parts(base_eigs, signed_eigs)
    lam = lam_by_rep[inverse]
    best_lambda = float(lam.min())
    best_code = int(np.nonzero(lam == best_lambda)[0][0])
    return best_lambda, best_code


def _random_search(
    base: WeightedMultigraph,
    edges: list[Edge],
    base_eigs: tuple[float, ...],
    search_budget: int,
    seed: int,
) -> tuple[float, int]:
    order = sorted(base.vertices, key=lambda v: v.key())
    index = {v: i for i, v in enumerate(order)}
    m = len(edges)
    rng = random.Random(seed)
    best: tuple[float, int] | None = None
    for _ in range(search_budget):
        code = rng.getrandbits(m)
        a_s = _signed_matrix(base, order, index, code, m, edges)
        lam = lift_lambda_from_parts(base_eigs, _eigs_descending(a_s))
        cand = (lam, code)
        if best is None or cand < best:
            best = cand
    assert best is not None
    return best


def find_good_signing(
    base: WeightedMultigraph,
    lambda_budget: float,
    search_budget: int = DEFAULT_SEARCH_BUDGET,
    seed: int = 0,
) -> Signing:
    """Find a signing whose lift has lambda <= ``lambda_budget``.

    Exhaustive (exact minimizer, lexicographic tiebreak) when the base has at
    most ``EXHAUSTIVE_EDGE_LIMIT`` edges; otherwise the best of
    ``search_budget`` seeded pseudo-random signings.  Deterministic in all
    arguments.  Raises ``SigningSearchError`` when nothing meets the budget.
    """
    _require_simple_regular(base)
    edges = canonical_edge_list(base)
    if not edges:
        raise ValueError("base has no edges")
    from .multigraph import adjacency_matrix

    base_eigs = _eigs_descending(adjacency_matrix(base).astype(np.float64))
    if len(edges) <= EXHAUSTIVE_EDGE_LIMIT:
        best_lambda, best_code = _exhaustive_search(base, edges, base_eigs)
    else:
        best_lambda, best_code = _random_search(
            base, edges, base_eigs, search_budget, seed
        )
    if best_lambda > lambda_budget:
        raise SigningSearchError(
            f"signing search exhausted: best lambda {best_lambda:.6f} "
            f"exceeds budget {lambda_budget:.6f}",
            best_lambda=best_lambda,
            best=Signing.from_int(edges, best_code),
        )
    return Signing.from_int(edges, best_code)


def next_bl_expander(
    g_star: WeightedMultigraph,
    seed: int = 0,
    lambda_budget: float | None = None,
    search_budget: int = DEFAULT_SEARCH_BUDGET,
) -> WeightedMultigraph:
    """The next doubled expander: halve, sign-search, lift, re-double.

    The input must have every weight exactly 2 over a (d/2)-regular simple
    graph.  The chosen lift's lambda is re-verified by a direct eigensolve,
    independent of the search's spectral shortcut.
    """
    halved: dict[Edge, int] = {}
    for u, v, w in g_star.edges():
        if w != 2:
            raise ValueError(
                f"expected all weights 2, found {w} on "
                f"{format_name(u)}-{format_name(v)}"
            )
        halved[(u, v)] = 1
    base = WeightedMultigraph(g_star.d, g_star.vertices, halved)
    r = _require_simple_regular(base)
    if r != g_star.d // 2:
        raise ValueError(f"base is {r}-regular, expected {g_star.d // 2}")
    if lambda_budget is None:
        lambda_budget = default_lambda_budget(g_star.d)
    signing = find_good_signing(base, lambda_budget, search_budget, seed)
    lifted = two_lift(base, signing)
    direct = spectral_report(lifted).lambda_
    if direct > lambda_budget + EIG_TOL:
        raise SigningSearchError(
            f"verified lift lambda {direct:.6f} exceeds budget "
            f"{lambda_budget:.6f}",
            best_lambda=direct,
            best=signing,
        )
    doubled = {edge_key(u, v): 2 for u, v, _ in lifted.edges()}
    return WeightedMultigraph(g_star.d, lifted.vertices, doubled)


def write_signing(signing: Signing, fp: TextIO) -> None:
    """One line per base edge: ``NAME1 NAME2 BIT`` in canonical edge order."""
    for (u, v), b in zip(signing.edges, signing.bits):
        fp.write(f"{format_name(u)} {format_name(v)} {b}\n")


def read_signing(fp: TextIO) -> Signing:
    edges: list[Edge] = []
    bits: list[int] = []
    for lineno, line in enumerate(fp, start=1):
        if not line.strip():
            continue
        fields = line.split()
        if len(fields) != 3 or fields[2] not in ("0", "1"):
            raise ValueError(f"line {lineno}: expected 'NAME1 NAME2 BIT'")
        edges.append(edge_key(parse_name(fields[0]), parse_name(fields[1])))
        bits.append(int(fields[2]))
    return Signing(tuple(edges), tuple(bits))
