"""Legacy ASCII VTK output of the particle ensemble as POLYDATA points."""
from __future__ import annotations

import os

from .storage import gather_bodies


def _fmt(value) -> str:
    return format(float(value), ".12g")


def write_particles_vtk(forest, path, *, key="bodies") -> None:
    """Collective: rank 0 writes every finite body as one point carrying
    radius, velocity, and ownerRank attributes."""
    rows = gather_bodies(forest, key)
    if forest.ctx.rank != 0:
        return
    n = len(rows)
    lines = [
        "# vtk DataFile Version 3.0",
        "particles",
        "ASCII",
        "DATASET POLYDATA",
        f"POINTS {n} double",
    ]
    for row in rows:
        lines.append(" ".join(_fmt(v) for v in row["position"]))
    lines.append(f"VERTICES {n} {2 * n}")
    for i in range(n):
        lines.append(f"1 {i}")
    lines.append(f"POINT_DATA {n}")
    lines.append("SCALARS radius double 1")
    lines.append("LOOKUP_TABLE default")
    for row in rows:
        lines.append(_fmt(row["radius"]))
    lines.append("VECTORS velocity double")
    for row in rows:
        lines.append(" ".join(_fmt(v) for v in row["linear_velocity"]))
    lines.append("SCALARS ownerRank int 1")
    lines.append("LOOKUP_TABLE default")
    for row in rows:
        lines.append(str(int(row["owner_rank"])))
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    with open(path, "w", encoding="ascii") as handle:
        handle.write("\n".join(lines) + "\n")
