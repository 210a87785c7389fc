"""Lattice velocity sets.

Directions are ordered by (|c|^2, cz, cy, cx), rest direction first, so every
stencil has one canonical, reproducible numbering. Weights are stored as
exact rationals; the moment identities (sum w = 1, first moment zero, second
moment isotropic at 1/3) are verified in rational arithmetic at import.
"""
from __future__ import annotations

from fractions import Fraction

import numpy as np

from ..errors import ValidationError

_WEIGHTS = {
    "D2Q9": {0: Fraction(4, 9), 1: Fraction(1, 9), 2: Fraction(1, 36)},
    "D3Q19": {0: Fraction(1, 3), 1: Fraction(1, 18), 2: Fraction(1, 36)},
    "D3Q27": {0: Fraction(8, 27), 1: Fraction(2, 27), 2: Fraction(1, 54),
              3: Fraction(1, 216)},
}


class Stencil:
    """One velocity set: integer velocities, rational weights, opposites."""

    __slots__ = ("name", "d", "q", "c", "w", "opp", "cx", "cy", "cz",
                 "weights")

    def __init__(self, name, d, velocities, weights):
        self.name = name
        self.d = d
        self.q = len(velocities)
        self.c = tuple(velocities)
        self.w = tuple(weights)
        index = {c: i for i, c in enumerate(self.c)}
        self.opp = tuple(index[(-c[0], -c[1], -c[2])] for c in self.c)
        self.cx = np.array([c[0] for c in self.c], dtype=np.int64)
        self.cy = np.array([c[1] for c in self.c], dtype=np.int64)
        self.cz = np.array([c[2] for c in self.c], dtype=np.int64)
        self.weights = np.array([float(w) for w in self.w])
        self._check_identities()

    def _check_identities(self):
        if sum(self.w) != 1:
            raise ValidationError(f"{self.name}: weights sum to {sum(self.w)}")
        for a in range(3):
            if sum(w * c[a] for w, c in zip(self.w, self.c)) != 0:
                raise ValidationError(f"{self.name}: first moment not zero")
        third = Fraction(1, 3)
        for a in range(3):
            for b in range(3):
                m = sum(w * c[a] * c[b] for w, c in zip(self.w, self.c))
                want = third if (a == b and a < self.d) else 0
                if m != want:
                    raise ValidationError(
                        f"{self.name}: second moment [{a}][{b}] = {m}")
        for i, j in enumerate(self.opp):
            if self.opp[j] != i:
                raise ValidationError(f"{self.name}: opposite map not an "
                                      "involution")

    def index(self, velocity):
        """Direction index of an integer velocity vector."""
        v = tuple(int(x) for x in velocity)
        if len(v) == 2:
            v = (v[0], v[1], 0)
        try:
            return self.c.index(v)
        except ValueError:
            raise ValidationError(f"{self.name} has no direction {v}") from None

    def __repr__(self):
        return f"Stencil({self.name})"


def _build(name):
    d = 2 if name.startswith("D2") else 3
    rng = (-1, 0, 1)
    cs = []
    for cz in (rng if d == 3 else (0,)):
        for cy in rng:
            for cx in rng:
                n2 = cx * cx + cy * cy + cz * cz
                if name == "D3Q19" and n2 > 2:
                    continue
                cs.append((cx, cy, cz))
    cs.sort(key=lambda c: (c[0] ** 2 + c[1] ** 2 + c[2] ** 2, c[2], c[1], c[0]))
    table = _WEIGHTS[name]
    ws = [table[c[0] ** 2 + c[1] ** 2 + c[2] ** 2] for c in cs]
    return Stencil(name, d, cs, ws)


D2Q9 = _build("D2Q9")
D3Q19 = _build("D3Q19")
D3Q27 = _build("D3Q27")

_BY_NAME = {s.name: s for s in (D2Q9, D3Q19, D3Q27)}


def get_stencil(name) -> Stencil:
    try:
        return _BY_NAME[name]
    except KeyError:
        raise ValidationError(
            f"unknown stencil {name!r}; available: {sorted(_BY_NAME)}") from None


# ------------------------------------------------------------- moment basis

def _seed_polynomials(stencil):
    """Moment seeds in promotion order; Gram-Schmidt turns them into the
    orthogonal basis (9-moment for D2Q9, the classic 19-moment set in 3D)."""
    def c2(c):
        return c[0] ** 2 + c[1] ** 2 + c[2] ** 2

    if stencil.name == "D2Q9":
        return [
            lambda c: 1,
            c2,
            lambda c: c2(c) ** 2,
            lambda c: c[0],
            lambda c: c[0] * c2(c),
            lambda c: c[1],
            lambda c: c[1] * c2(c),
            lambda c: c[0] ** 2 - c[1] ** 2,
            lambda c: c[0] * c[1],
        ]
    if stencil.name == "D3Q19":
        return [
            lambda c: 1,
            c2,
            lambda c: c2(c) ** 2,
            lambda c: c[0],
            lambda c: c[0] * c2(c),
            lambda c: c[1],
            lambda c: c[1] * c2(c),
            lambda c: c[2],
            lambda c: c[2] * c2(c),
            lambda c: 3 * c[0] ** 2 - c2(c),
            lambda c: (3 * c[0] ** 2 - c2(c)) * c2(c),
            lambda c: c[1] ** 2 - c[2] ** 2,
            lambda c: (c[1] ** 2 - c[2] ** 2) * c2(c),
            lambda c: c[0] * c[1],
            lambda c: c[1] * c[2],
            lambda c: c[0] * c[2],
            lambda c: (c[1] ** 2 - c[2] ** 2) * c[0],
            lambda c: (c[2] ** 2 - c[0] ** 2) * c[1],
            lambda c: (c[0] ** 2 - c[1] ** 2) * c[2],
        ]
    raise ValidationError(f"no moment basis for {stencil.name}")


def moment_basis(stencil) -> np.ndarray:
    """Orthogonal integer moment matrix M (q x q).

    Rows come from Gram-Schmidt over the seed polynomials evaluated on the
    velocity set, in exact rational arithmetic, then scaled to the smallest
    integer vector with a positive leading entry. Row 0 is all ones and the
    c_x, c_y (, c_z) rows survive unchanged, so the conserved moments are
    literally density and momentum.
    """
    seeds = _seed_polynomials(stencil)
    rows = []
    for seed in seeds:
        v = [Fraction(seed(c)) for c in stencil.c]
        for r in rows:
            dot = sum(a * b for a, b in zip(v, r))
            if dot:
                nrm = sum(a * a for a in r)
                v = [a - dot * b / nrm for a, b in zip(v, r)]
        if not any(v):
            raise ValidationError(
                f"{stencil.name}: dependent moment seed {len(rows)}")
        rows.append(v)
    out = np.zeros((stencil.q, stencil.q), dtype=np.int64)
    for k, r in enumerate(rows):
        # smallest integer multiple; scaling keeps the seed's own sign
        scale = np.lcm.reduce([f.denominator for f in r])
        ints = [int(f * scale) for f in r]
        g = np.gcd.reduce([abs(i) for i in ints if i])
        out[k] = [i // g for i in ints]
    gram = out @ out.T
    if np.any(gram - np.diag(np.diag(gram))):
        raise ValidationError(f"{stencil.name}: moment basis not orthogonal")
    return out


def basis_inverse(M) -> np.ndarray:
    """Exact inverse of an orthogonal integer basis: M^-1 = M^T diag(1/|m|^2)."""
    norms = np.einsum("ij,ij->i", M, M)
    return (M.T / norms[None, :]).astype(np.float64)
