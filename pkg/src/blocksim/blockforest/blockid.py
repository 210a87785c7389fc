"""Block identifiers: a root-cell index plus the octant path below it.

The path lists child octants from the root down; octant bits are x lowest,
z highest. Ids order lexicographically by (root, path), which places a
parent immediately before its children (depth-first preorder) and gives the
deterministic per-block iteration order used by sweeps.
"""
from __future__ import annotations

from functools import total_ordering

from ..errors import ValidationError


@total_ordering
class BlockId:
    __slots__ = ("root", "path")

    def __init__(self, root: int, path: tuple = ()):
        self.root = int(root)
        self.path = tuple(int(p) for p in path)

    @property
    def level(self) -> int:
        return len(self.path)

    def child(self, octant: int) -> "BlockId":
        return BlockId(self.root, self.path + (octant,))

    def parent(self) -> "BlockId":
        if not self.path:
            raise ValueError("root blocks have no parent")
        return BlockId(self.root, self.path[:-1])

    def siblings(self, n_children: int) -> list:
        """All n_children ids sharing this block's parent (self included)."""
        if not self.path:
            raise ValueError("root blocks have no siblings")
        base = self.path[:-1]
        return [BlockId(self.root, base + (o,)) for o in range(n_children)]

    def path_bits(self, d: int) -> int:
        """Marker-prefixed packed path: 1, then d bits per descent."""
        bits = 1
        for octant in self.path:
            bits = (bits << d) | octant
        return bits

    @staticmethod
    def from_path_bits(root: int, level: int, bits: int, d: int) -> "BlockId":
        path = []
        for _ in range(level):
            path.append(bits & ((1 << d) - 1))
            bits >>= d
        if bits != 1:
            raise ValidationError(f"malformed path bits for level {level}")
        return BlockId(root, tuple(reversed(path)))

    def __eq__(self, other):
        return (
            isinstance(other, BlockId)
            and self.root == other.root
            and self.path == other.path
        )

    def __lt__(self, other):
        return (self.root, self.path) < (other.root, other.path)

    def __hash__(self):
        return hash((self.root, self.path))

    def __repr__(self):
        return f"BlockId({self.root}, {self.path})"
