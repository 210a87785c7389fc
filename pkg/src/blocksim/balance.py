"""Space-filling-curve ordering and curve partitioning.

Keys are computed from integer block coordinates at a block's own level and
lifted to a common finest level for mixed-level sorting; because curve cells
of a subtree form a contiguous index range, sorting lifted keys yields the
depth-first traversal order in which refined children appear contiguously
between their parent's former neighbors.

Morton keys interleave coordinate bits (x lowest, z highest, matching the
octant convention). Hilbert keys use the Skilling transform on a power-of-two
cube that encloses the root grid; absent cells are simply skipped. The
partitioner walks the curve accumulating weight and closes each rank's
segment at the block that brings the prefix sum closest to the running
target of total/n per rank, which bounds the heaviest rank by
max(heaviest block, 2 * average).
"""
from __future__ import annotations

from .errors import ValidationError

__all__ = [
    "morton_key",
    "hilbert_key",
    "sort_blocks",
    "partition_curve",
    "estimate_weights",
]


def morton_key(coords, level: int, d: int, bits: int) -> int:
    """Interleaved-bit curve index of a cell at `level`, padded to `bits` bits
    per axis. The key of a child equals its parent's key with the child's
    octant bits appended (property of bit interleaving)."""
    x, y, z = (int(c) for c in coords)
    key = 0
    for b in range(bits - 1, -1, -1):
        if d == 3:
            key = (key << 3) | (((z >> b) & 1) << 2) | (((y >> b) & 1) << 1) | ((x >> b) & 1)
        else:
            key = (key << 2) | (((y >> b) & 1) << 1) | ((x >> b) & 1)
    return key


def _hilbert_index_skilling(coords, bits: int, d: int) -> int:
    """Skilling's compact Hilbert transform: coords -> curve index.

    Works for any dimension and resolution; unit steps between consecutive
    indices (the adjacency property tests rely on this).
    """
    x = [int(c) for c in coords[:d]]
    n = d
    m = 1 << (bits - 1)
    # inverse undo of the Skilling transpose
    q = m
    while q > 1:
        p = q - 1
        for i in range(n):
            if x[i] & q:
                x[0] ^= p
            else:
                t = (x[0] ^ x[i]) & p
                x[0] ^= t
                x[i] ^= t
        q >>= 1
    for i in range(1, n):
        x[i] ^= x[i - 1]
    t = 0
    q = m
    while q > 1:
        if x[n - 1] & q:
            t ^= q - 1
        q >>= 1
    for i in range(n):
        x[i] ^= t
    # interleave transposed coords into a single index, axis 0 highest
    key = 0
    for b in range(bits - 1, -1, -1):
        for i in range(n):
            key = (key << 1) | ((x[i] >> b) & 1)
    return key


def hilbert_key(coords, level: int, d: int, bits: int) -> int:
    if bits < 1:
        bits = 1
    return _hilbert_index_skilling(coords, bits, d)


def sort_blocks(entries, curve: str, d: int):
    """Order (block_coords, level, payload) entries along the curve.

    `entries` is an iterable of (coords, level, payload). Coordinates are
    block positions at each block's own level. Returns payloads in curve
    order. Mixed levels are handled by lifting to the finest level present.
    """
    entries = list(entries)
    if not entries:
        return []
    if curve not in ("morton", "hilbert"):
        raise ValidationError(f"unknown curve {curve!r}")
    finest = max(level for _, level, _ in entries)
    maxc = 0
    for coords, level, _ in entries:
        lift = finest - level
        maxc = max(maxc, *(int(c) << lift for c in coords[:d]))
    bits = max(1, maxc.bit_length())
    keyed = []
    for coords, level, payload in entries:
        lift = finest - level
        lifted = tuple(int(c) << lift for c in coords)
        if curve == "morton":
            key = morton_key(lifted, finest, d, bits)
        else:
            key = hilbert_key(lifted, finest, d, bits)
        keyed.append((key, payload))
    keyed.sort(key=lambda kv: kv[0])
    return [payload for _, payload in keyed]


def partition_curve(weights, n_ranks: int):
    """Split curve-ordered weights into consecutive per-rank segments.

    Walks the sequence with a running target of k * total / n_ranks and closes
    segment k at the block whose prefix sum lies closest to the target.
    Returns a list of rank ids, one per block. Guarantees
    max(rank weight) <= max(heaviest block, 2 * total / n_ranks).
    """
    weights = [float(w) for w in weights]
    if n_ranks < 1:
        raise ValidationError(f"n_ranks must be >= 1, got {n_ranks}")
    if any(w < 0 for w in weights):
        raise ValidationError("block weights must be non-negative")
    n = len(weights)
    assignment = [0] * n
    total = sum(weights)
    if n == 0 or total == 0.0:
        # degenerate: spread blocks evenly by count
        for i in range(n):
            assignment[i] = i * n_ranks // n
        return assignment
    prefix = 0.0
    i = 0
    for rank in range(n_ranks - 1):
        target = total * (rank + 1) / n_ranks
        while i < n:
            candidate = prefix + weights[i]
            if abs(candidate - target) <= abs(prefix - target):
                assignment[i] = rank
                prefix = candidate
                i += 1
            else:
                break
    for j in range(i, n):
        assignment[j] = n_ranks - 1
    return assignment


_MODELS = ("blockCount", "cellCount", "particleCount", "contactCount", "coupled", "custom")


def estimate_weights(blocks_info, model: str, *, alpha: float = 10.0, custom_fn=None):
    """Per-block workload weights.

    `blocks_info` is a list of dicts with keys `cells`, `particles`,
    `ghost_particles`, `contacts` (missing entries mean the quantity is not
    available). Returns (weights, comm_weights).
    """
    if model not in _MODELS:
        raise ValidationError(f"unknown workload model {model!r}")
    weights, comm = [], []
    for info in blocks_info:
        if model == "blockCount":
            w, c = 1.0, 0.0
        elif model == "cellCount":
            if info.get("cells") is None:
                raise ValidationError("cellCount model requires cell counts")
            w, c = float(info["cells"]), 0.0
        elif model == "particleCount":
            if info.get("particles") is None:
                raise ValidationError("particleCount model requires particle counts")
            w, c = float(info["particles"]), float(info.get("ghost_particles", 0))
        elif model == "contactCount":
            if info.get("contacts") is None:
                raise ValidationError("contactCount model requires contact counts")
            w, c = float(info["contacts"]), 0.0
        elif model == "coupled":
            if info.get("cells") is None or info.get("particles") is None:
                raise ValidationError("coupled model requires cell and particle counts")
            w, c = float(info["cells"]) + alpha * float(info["particles"]), 0.0
        else:
            if custom_fn is None:
                raise ValidationError("custom model requires custom_fn")
            w, c = float(custom_fn(info)), 0.0
        if w < 0:
            raise ValidationError("workload weights must be non-negative")
        weights.append(w)
        comm.append(c)
    return weights, comm
