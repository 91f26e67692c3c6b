"""Split-history vertex names.

A name is a base symbol in {0, ..., d/2} plus a bit string recording the
doublings the vertex has survived.  When a vertex splits, the surviving half
appends a 0 bit and the newly created half appends a 1 bit, so the 0-suffixed
name continues the identity of its parent.  Stripping trailing zeros therefore
yields a persistent identity that is stable across the whole life of a vertex;
``expansion_cost`` compares graphs under that identity while structural
equality stays on raw names.
"""

from __future__ import annotations

from typing import NamedTuple


class VertexName(NamedTuple):
    base: int
    bits: tuple[int, ...] = ()

    def key(self) -> tuple[int, int, tuple[int, ...]]:
        """Canonical sort key: (bit length, base, bits)."""
        return (len(self.bits), self.base, self.bits)

    def child(self, bit: int) -> "VertexName":
        if bit not in (0, 1):
            raise ValueError(f"bit must be 0 or 1, got {bit!r}")
        return VertexName(self.base, self.bits + (bit,))

    def parent(self) -> "VertexName":
        """Drop the final bit (the projection onto the previous doubling)."""
        if not self.bits:
            raise ValueError(f"name {format_name(self)} has no parent")
        return VertexName(self.base, self.bits[:-1])

    @property
    def depth(self) -> int:
        return len(self.bits)


def partner(name: VertexName) -> VertexName:
    """The other half of the same split: same name with the last bit flipped."""
    if not name.bits:
        raise ValueError(f"name {format_name(name)} has no partner")
    return VertexName(name.base, name.bits[:-1] + (1 - name.bits[-1],))


def strip_identity(name: VertexName) -> VertexName:
    """Persistent identity: the name with trailing 0 bits removed."""
    bits = name.bits
    k = len(bits)
    while k and bits[k - 1] == 0:
        k -= 1
    return VertexName(name.base, bits[:k])


def is_all_zeros(name: VertexName) -> bool:
    """True for the coordinator identity (base 0, only 0 bits)."""
    return name.base == 0 and all(b == 0 for b in name.bits)


def format_name(name: VertexName) -> str:
    """Serialize as ``base:bitstring`` (empty bit string allowed)."""
    return f"{name.base}:{''.join(str(b) for b in name.bits)}"


def parse_name(text: str) -> VertexName:
    base_part, sep, bit_part = text.partition(":")
    if not sep:
        raise ValueError(f"malformed vertex name {text!r}: missing ':'")
    try:
        base = int(base_part)
    except ValueError:
        raise ValueError(f"malformed vertex name {text!r}: bad base") from None
    if base < 0:
        raise ValueError(f"malformed vertex name {text!r}: negative base")
    if bit_part.strip("01"):
        raise ValueError(f"malformed vertex name {text!r}: bits must be 0/1")
    return VertexName(base, tuple(int(b) for b in bit_part))
