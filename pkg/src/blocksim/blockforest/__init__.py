"""Distributed block forest: octree domain partitioning, adaptation,
checkpointing."""
from .blockid import BlockId
from .forest import Block, BlockForest, NeighborRecord, create_forest, directions
from .amr import adapt, coarsen_block, make_curve_balancer, refine_block, resolve_marks
from .checkpoint import BuddyCheckpoint

__all__ = [
    "BlockId", "Block", "BlockForest", "NeighborRecord", "create_forest",
    "directions", "adapt", "refine_block", "coarsen_block", "resolve_marks",
    "make_curve_balancer", "BuddyCheckpoint",
]
