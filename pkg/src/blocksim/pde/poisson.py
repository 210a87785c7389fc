"""Iterative Poisson solvers on block-structured grids.

The discrete system is the standard second-order 2d+1-point stencil for
laplacian(u) = rhs on a uniform-level forest. Jacobi, red-black SOR and CG
all reduce per-block partial sums in block-id order, so residuals, dot
products and iterates are identical for every rank count, bit for bit.

Boundaries are imposed through ghost cells: periodic axes wrap through the
regular ghost exchange, Dirichlet faces fill the ghost layer with the linear
extrapolation 2*value - u_interior before each stencil application.
"""
from __future__ import annotations

import math

import numpy as np

from .._kernels import impl
from ..errors import NumericsError, TopologyError, ValidationError
from ..field import GhostPackInfo, exchange_ghosts

DIVERGENCE_LIMIT = 1e10

PERIODIC = "periodic"

_FACES = {"-x": (0, 0), "+x": (0, 1), "-y": (1, 0), "+y": (1, 1),
          "-z": (2, 0), "+z": (2, 1)}

# fixed stencil order: x-, x+, y-, y+, z-, z+ (rows are zyx offsets)
_OFFS_2D = np.array([(0, 0, -1), (0, 0, 1), (0, -1, 0), (0, 1, 0)],
                    dtype=np.int64)
_OFFS_3D = np.array([(0, 0, -1), (0, 0, 1), (0, -1, 0), (0, 1, 0),
                     (-1, 0, 0), (1, 0, 0)], dtype=np.int64)


class Dirichlet:
    """Fixed value on a domain face."""

    __slots__ = ("value",)

    def __init__(self, value=0.0):
        self.value = float(value)

    def __repr__(self):
        return f"Dirichlet({self.value})"


class PoissonProblem:
    """laplacian(u) = rhs with per-face boundary conditions.

    `u` and `rhs` name registered field slots (one component, at least one
    ghost layer on u). `boundary` maps face names ("-x", "+x", ...) to
    Dirichlet(value) or PERIODIC; unspecified faces default to PERIODIC on
    periodic forest axes and Dirichlet(0) elsewhere. A fully periodic
    problem is only well posed for zero-mean rhs; the gauge is pinned by
    subtracting the mean of u after every iteration. Constructing a fully
    periodic problem is collective (the rhs mean is a global reduction).
    """

    def __init__(self, forest, u="u", rhs="rhs", *, boundary=None,
                 tolerance=1e-8, max_iterations=10_000):
        if tolerance <= 0:
            raise ValidationError(f"tolerance must be > 0, got {tolerance}")
        if max_iterations < 1:
            raise ValidationError(
                f"max_iterations must be >= 1, got {max_iterations}")
        if forest.cells_per_block is None:
            raise ValidationError("forest has no cells_per_block")
        for key in (u, rhs):
            if key not in forest.handlers:
                raise ValidationError(f"field slot {key!r} is not registered")
        self.forest = forest
        self.u_key = u
        self.rhs_key = rhs
        self.tolerance = float(tolerance)
        self.max_iterations = int(max_iterations)
        self.boundary = self._resolve_boundary(boundary or {})
        self._offs = _OFFS_3D if forest.d == 3 else _OFFS_2D
        self._axes = range(forest.d)
        if self.pure_periodic:
            self._check_rhs_mean()

    # ------------------------------------------------------------- boundary

    def _resolve_boundary(self, given):
        forest = self.forest
        out = {}
        for face, (axis, _) in _FACES.items():
            if axis >= forest.d:
                if face in given:
                    raise ValidationError(f"face {face!r} does not exist in "
                                          f"{forest.d}D")
                continue
            bc = given.get(face)
            if bc is None:
                bc = PERIODIC if forest.periodic[axis] else Dirichlet(0.0)
            if bc == PERIODIC:
                if not forest.periodic[axis]:
                    raise ValidationError(
                        f"face {face!r} cannot be periodic: the forest axis "
                        "is not periodic")
            elif isinstance(bc, Dirichlet):
                if forest.periodic[axis]:
                    raise ValidationError(
                        f"face {face!r} lies on a periodic axis and cannot "
                        "hold a Dirichlet value")
            else:
                raise ValidationError(f"unsupported boundary {bc!r} on {face!r}")
            out[face] = bc
        unknown = set(given) - set(_FACES)
        if unknown:
            raise ValidationError(f"unknown boundary faces {sorted(unknown)}")
        return out

    @property
    def pure_periodic(self):
        return all(self.forest.periodic[a] for a in self._axes)

    def _check_rhs_mean(self):
        total, n = _fold_blockwise(self.forest.ctx, [
            (_bid_key(self.forest, b.id),
             float(_field(b, self.rhs_key).interior.sum()))
            for b in self.forest.local_blocks()])
        scale, _ = _fold_blockwise(self.forest.ctx, [
            (_bid_key(self.forest, b.id),
             float(np.abs(_field(b, self.rhs_key).interior).sum()))
            for b in self.forest.local_blocks()])
        cells = n * _cells_per_block(self.forest)
        if cells and abs(total) > 1e-10 * max(scale, 1e-30):
            raise ValidationError(
                "fully periodic problems need zero-mean rhs, got mean "
                f"{total / cells}")

    # ------------------------------------------------------------- geometry

    def _dx2(self, level):
        dx = self.forest.dx(level)
        for a in self._axes:
            if abs(dx[a] - dx[0]) > 1e-12 * dx[0]:
                raise ValidationError(f"stencil needs isotropic cells, "
                                      f"got dx={dx}")
        return dx[0] * dx[0]

    def _fill_boundary(self, block, key, homogeneous):
        field = _field(block, key)
        win = _window(field)
        coords = self.forest.block_coords(block.id)
        ext = self.forest.level_extent(block.level)
        n = self.forest.cells_per_block
        for face, (axis, side) in _FACES.items():
            if axis >= self.forest.d or self.forest.periodic[axis]:
                continue
            if coords[axis] != (0 if side == 0 else ext[axis] - 1):
                continue
            value = 0.0 if homogeneous else self.boundary[face].value
            dim = 2 - axis  # window is (z, y, x)
            sl_ghost = [slice(1, win.shape[k] - 1) for k in range(3)]
            sl_inner = list(sl_ghost)
            if side == 0:
                sl_ghost[dim] = slice(0, 1)
                sl_inner[dim] = slice(1, 2)
            else:
                m = 1 + n[axis]
                sl_ghost[dim] = slice(m, m + 1)
                sl_inner[dim] = slice(m - 1, m)
            win[tuple(sl_ghost)] = 2.0 * value - win[tuple(sl_inner)]


# ----------------------------------------------------------------- helpers

def _field(block, key):
    return getattr(block.data[key], "field", block.data[key])


def _window(field, comp=0):
    """(z, y, x) view with exactly one ghost layer."""
    v = field.view[..., comp]
    g = field.g
    if g < 1:
        raise ValidationError("solver fields need at least one ghost layer")
    if g == 1:
        return v
    return v[g - 1:v.shape[0] - g + 1,
             g - 1:v.shape[1] - g + 1,
             g - 1:v.shape[2] - g + 1]


def _bid_key(forest, bid):
    return (bid.root, bid.level, bid.path_bits(forest.d))


def _cells_per_block(forest):
    n = forest.cells_per_block
    return n[0] * n[1] * n[2]


def _fold_blockwise(ctx, entries):
    """Ordered global sum of per-block floats.

    Folding in block-id order makes the float result independent of how
    blocks are distributed over ranks. Also enforces a uniform refinement
    level, which every solver here requires.
    """
    gathered = ctx.all_gather(entries)
    merged = []
    for rank in gathered:
        merged.extend(gathered[rank])
    merged.sort(key=lambda kv: kv[0])
    levels = {key[1] for key, _ in merged}
    if len(levels) > 1:
        raise TopologyError(
            f"solver needs a uniform refinement level, found {sorted(levels)}")
    total = 0.0
    for _, value in merged:
        total += value
    return total, len(merged)


def _exchange(problem, key, homogeneous=False):
    exchange_ghosts(problem.forest, [GhostPackInfo(key, width=1)])
    for block in problem.forest.local_blocks():
        problem._fill_boundary(block, key, homogeneous)


def _laplacian(problem, block, key):
    """interior laplacian(field) / dx^2 as a fresh array (ghosts are read)."""
    field = _field(block, key)
    win = _window(field)
    n = problem.forest.cells_per_block
    out = np.empty((n[2], n[1], n[0]), dtype=np.float64)
    impl.apply_laplacian(win, out, 1.0 / problem._dx2(block.level), problem._offs)
    return out


def _residual_norm(problem):
    """Global L2 norm of rhs - laplacian(u) for the current ghost values."""
    entries = []
    for block in problem.forest.local_blocks():
        diff = _laplacian(problem, block, problem.u_key)
        diff -= _field(block, problem.rhs_key).interior[..., 0]
        entries.append((_bid_key(problem.forest, block.id),
                        float(np.sum(diff * diff))))
    total, _ = _fold_blockwise(problem.forest.ctx, entries)
    return math.sqrt(total)


def _subtract_mean(problem):
    forest = problem.forest
    total, n = _fold_blockwise(forest.ctx, [
        (_bid_key(forest, b.id),
         float(_field(b, problem.u_key).interior.sum()))
        for b in forest.local_blocks()])
    if n == 0:
        return
    mean = total / (n * _cells_per_block(forest))
    for block in forest.local_blocks():
        _field(block, problem.u_key).interior[...] -= mean


def _check_divergence(residual):
    if not residual <= DIVERGENCE_LIMIT:
        raise NumericsError(f"solver diverged: residual {residual}")


def _block_parity(forest, block):
    c = forest.block_coords(block.id)
    n = forest.cells_per_block
    return (c[0] * n[0] + c[1] * n[1] + c[2] * n[2]) & 1


# ----------------------------------------------------------------- solvers

def jacobi_step(problem) -> float:
    """One Jacobi sweep. Returns the global L2 residual of the iterate the
    sweep started from (it shares that iterate's ghost exchange)."""
    forest = problem.forest
    _exchange(problem, problem.u_key)
    residual = _residual_norm(problem)
    _check_divergence(residual)
    n = forest.cells_per_block
    inv_diag = 1.0 / (2.0 * forest.d)
    for block in forest.local_blocks():
        win = _window(_field(block, problem.u_key))
        out = np.empty_like(win)
        impl.jacobi_sweep(win, _field(block, problem.rhs_key).interior[..., 0],
                          out, inv_diag, problem._dx2(block.level),
                          problem._offs)
        win[1:1 + n[2], 1:1 + n[1], 1:1 + n[0]] = \
            out[1:1 + n[2], 1:1 + n[1], 1:1 + n[0]]
    if problem.pure_periodic:
        _subtract_mean(problem)
    return residual


def sor_step(problem, omega) -> float:
    """One red-black successive over-relaxation sweep (omega = 1 is
    Gauss-Seidel). Ghosts are re-exchanged between the two colors; the
    returned residual is the pre-sweep one, like jacobi_step."""
    if not 0.0 < omega < 2.0:
        raise ValidationError(f"relaxation parameter must be in (0, 2), "
                              f"got {omega}")
    forest = problem.forest
    _exchange(problem, problem.u_key)
    residual = _residual_norm(problem)
    _check_divergence(residual)
    inv_diag = 1.0 / (2.0 * forest.d)
    for color in (0, 1):
        if color:
            _exchange(problem, problem.u_key)
        for block in forest.local_blocks():
            win = _window(_field(block, problem.u_key))
            impl.sor_color_sweep(
                win, _field(block, problem.rhs_key).interior[..., 0],
                inv_diag, problem._dx2(block.level), float(omega),
                problem._offs, color, _block_parity(forest, block))
    if problem.pure_periodic:
        _subtract_mean(problem)
    return residual


def apply_operator(problem, key) -> dict:
    """{block id: -laplacian(field)} with homogeneous boundary ghosts.

    This is the symmetric positive (semi-)definite operator CG iterates
    with; Dirichlet inhomogeneities enter through the initial residual only.
    """
    _exchange(problem, key, homogeneous=True)
    out = {}
    for block in problem.forest.local_blocks():
        lap = _laplacian(problem, block, key)
        np.negative(lap, out=lap)
        out[block.id] = lap
    return out


def _dot(ctx, forest, a, b):
    entries = [(_bid_key(forest, bid), float(np.sum(a[bid] * b[bid])))
               for bid in sorted(a)]
    total, _ = _fold_blockwise(ctx, entries)
    return total


def cg_solve(problem, *, on_iteration=None):
    """Conjugate gradients down to `problem.tolerance` (absolute L2 residual
    norm) or `problem.max_iterations`. Returns (iterations, residual).

    `on_iteration(k, residual)` is called after each completed iteration
    with the solution slot already updated.
    """
    forest = problem.forest
    ctx = forest.ctx
    p_key = problem.u_key + ".cgp"
    if p_key not in forest.handlers:
        from ..field import FieldDataHandler
        forest.register_data(p_key, FieldDataHandler(nf=1, ghost_layers=1))

    # r = laplacian(u) - rhs, the residual of A x = b for A = -laplacian,
    # b = -rhs; the inhomogeneous boundary fill happens only here.
    _exchange(problem, problem.u_key)
    r = {}
    for block in forest.local_blocks():
        res = _laplacian(problem, block, problem.u_key)
        res -= _field(block, problem.rhs_key).interior[..., 0]
        r[block.id] = res
    rs = _dot(ctx, forest, r, r)
    residual = math.sqrt(rs)
    if residual <= problem.tolerance:
        return 0, residual
    for block in forest.local_blocks():
        _field(block, p_key).interior[..., 0] = r[block.id]

    for k in range(1, problem.max_iterations + 1):
        ap = apply_operator(problem, p_key)
        p = {block.id: _field(block, p_key).interior[..., 0]
             for block in forest.local_blocks()}
        p_ap = _dot(ctx, forest, p, ap)
        if p_ap <= 0.0:
            raise NumericsError(f"conjugate gradient breakdown: p.Ap = {p_ap}")
        alpha = rs / p_ap
        for block in forest.local_blocks():
            bid = block.id
            _field(block, problem.u_key).interior[..., 0] += alpha * p[bid]
            r[bid] -= alpha * ap[bid]
        rs_new = _dot(ctx, forest, r, r)
        residual = math.sqrt(rs_new)
        if problem.pure_periodic:
            _subtract_mean(problem)
        if on_iteration is not None:
            on_iteration(k, residual)
        if residual <= problem.tolerance:
            return k, residual
        beta = rs_new / rs
        rs = rs_new
        for block in forest.local_blocks():
            pv = _field(block, p_key).interior[..., 0]
            pv *= beta
            pv += r[block.id]
    return problem.max_iterations, residual
