"""Numpy implementations of the hot kernels.

Every routine mirrors the compiled version expression by expression; where a
reduction order matters (population sums, moment products) the numpy code
accumulates in the same fixed order as the C loops so both backends produce
bit-identical results.

All PDF arrays arrive as (z, y, x, q) views, possibly strided (SoA layouts
pass transposed views). Flag arrays are (z, y, x) uint32.
"""
from __future__ import annotations

import numpy as np

# ------------------------------------------------------------------ poisson


def jacobi_sweep(u, rhs, out, inv_diag, dx2, offs):
    """One Jacobi step on the interior: out = (sum(nbrs) - dx2*rhs) * inv_diag.

    `u`, `out`: (z, y, x) views including one ghost layer; `rhs`: interior
    only. `offs` is the (2d, 3) int array of neighbor offsets in zyx order.
    """
    nz, ny, nx = rhs.shape
    acc = None
    for k in range(offs.shape[0]):
        oz, oy, ox = offs[k]
        sl = u[1 + oz : 1 + oz + nz, 1 + oy : 1 + oy + ny, 1 + ox : 1 + ox + nx]
        acc = sl.copy() if acc is None else acc + sl
    out[1 : 1 + nz, 1 : 1 + ny, 1 : 1 + nx] = (acc - dx2 * rhs) * inv_diag


def sor_color_sweep(u, rhs, inv_diag, dx2, omega, offs, color, parity0):
    """In-place red-black relaxation of one color.

    Cells with (gx+gy+gz) % 2 == color are updated; parity0 is the global
    parity of the block's (0,0,0) interior cell. Neighbors of a cell always
    have the other color, so computing the full Gauss-Seidel value from the
    current array and assigning only at the color mask is exact.
    """
    nz, ny, nx = rhs.shape
    acc = None
    for k in range(offs.shape[0]):
        oz, oy, ox = offs[k]
        sl = u[1 + oz : 1 + oz + nz, 1 + oy : 1 + oy + ny, 1 + ox : 1 + ox + nx]
        acc = sl.copy() if acc is None else acc + sl
    gs = (acc - dx2 * rhs) * inv_diag
    iz, iy, ix = np.ogrid[0:nz, 0:ny, 0:nx]
    mask = ((iz + iy + ix + parity0) & 1) == color
    interior = u[1 : 1 + nz, 1 : 1 + ny, 1 : 1 + nx]
    interior[mask] = (1.0 - omega) * interior[mask] + omega * gs[mask]


def apply_laplacian(u, out, inv_dx2, offs):
    """out = Laplacian(u) on the interior, scaled by 1/dx^2."""
    nz, ny, nx = out.shape
    center = u[1 : 1 + nz, 1 : 1 + ny, 1 : 1 + nx]
    acc = None
    for k in range(offs.shape[0]):
        oz, oy, ox = offs[k]
        sl = u[1 + oz : 1 + oz + nz, 1 + oy : 1 + oy + ny, 1 + ox : 1 + ox + nx]
        acc = sl.copy() if acc is None else acc + sl
    nneigh = float(offs.shape[0])
    out[...] = (acc - nneigh * center) * inv_dx2


# ---------------------------------------------------------------------- lbm


def collide(pdf, flags, fluid_mask_bits, mode, params):
    """Collide every fluid-flagged cell of `pdf` in place.

    pdf: (z, y, x, q) float64 view (may be strided), including ghost cells.
    flags: (z, y, x) uint32; a cell participates when (flags & fluid_mask_bits)
    is nonzero.
    mode: 0 = SRT, 1 = TRT, 2 = MRT.
    params: dict made by blocksim.lbm.collision._kernel_params; holds the
    velocity set, weights, rates, matrices, force model and force vector.

    The numpy path runs per-direction vectorized operations in exactly the
    loop order of the compiled kernel, so results match bitwise.
    """
    cx = params["cx"]; cy = params["cy"]; cz = params["cz"]
    w = params["w"]
    q = len(w)
    fluid = (flags & fluid_mask_bits) != 0
    if not fluid.any():
        return
    f = [pdf[..., i][fluid] for i in range(q)]

    rho = f[0].copy()
    for i in range(1, q):
        rho = rho + f[i]
    mx = np.zeros_like(rho)
    my = np.zeros_like(rho)
    mz = np.zeros_like(rho)
    for i in range(q):
        if cx[i]:
            mx = mx + cx[i] * f[i]
        if cy[i]:
            my = my + cy[i] * f[i]
        if cz[i]:
            mz = mz + cz[i] * f[i]
    inv_rho = 1.0 / rho
    ux = mx * inv_rho
    uy = my * inv_rho
    uz = mz * inv_rho

    force_mode = params["force_mode"]  # 0 none, 1 guo, 2 simple shift
    fx = fy = fz = 0.0
    if force_mode:
        fx, fy, fz = params["force"]
    if force_mode == 1:
        # velocity used in the equilibrium includes the half-force shift
        ux = ux + 0.5 * fx * inv_rho
        uy = uy + 0.5 * fy * inv_rho
        uz = uz + 0.5 * fz * inv_rho
    elif force_mode == 2:
        tau = params["shift_tau"]
        ux = ux + tau * fx * inv_rho
        uy = uy + tau * fy * inv_rho
        uz = uz + tau * fz * inv_rho

    usq = ux * ux + uy * uy + uz * uz
    feq = []
    for i in range(q):
        cu = cx[i] * ux + cy[i] * uy + cz[i] * uz
        feq.append(w[i] * rho * (1.0 + 3.0 * cu + 4.5 * cu * cu - 1.5 * usq))

    if mode == 0:
        ow = params.get("omega_window")
        omega = params["omega"] if ow is None else ow[fluid]
        # written so full relaxation (omega == 1) lands exactly on f_eq
        rem = 1.0 - omega
        for i in range(q):
            f[i] = feq[i] + rem * (f[i] - feq[i])
    elif mode == 1:
        om_e = params["omega_e"]; om_o = params["omega_o"]
        opp = params["opp"]
        out = [None] * q
        for i in range(q):
            j = opp[i]
            f_plus = 0.5 * (f[i] + f[j])
            f_minus = 0.5 * (f[i] - f[j])
            feq_plus = 0.5 * (feq[i] + feq[j])
            feq_minus = 0.5 * (feq[i] - feq[j])
            out[i] = f[i] - om_e * (f_plus - feq_plus) - om_o * (f_minus - feq_minus)
        f = out
    else:
        M = params["M"]; Minv = params["Minv"]; S = params["S"]
        m = []
        for a in range(q):
            acc = M[a, 0] * f[0]
            for i in range(1, q):
                acc = acc + M[a, i] * f[i]
            m.append(acc)
        meq = []
        for a in range(q):
            acc = M[a, 0] * feq[0]
            for i in range(1, q):
                acc = acc + M[a, i] * feq[i]
            meq.append(acc)
        for a in range(q):
            m[a] = S[a] * (m[a] - meq[a])
        for i in range(q):
            acc = Minv[i, 0] * m[0]
            for a in range(1, q):
                acc = acc + Minv[i, a] * m[a]
            f[i] = f[i] - acc

    if force_mode == 1:
        # population source, relaxed per mode as M^-1 (I - S/2) M F
        Fi = []
        for i in range(q):
            cu = cx[i] * ux + cy[i] * uy + cz[i] * uz
            t = (cx[i] - ux + 3.0 * cu * cx[i]) * fx \
                + (cy[i] - uy + 3.0 * cu * cy[i]) * fy \
                + (cz[i] - uz + 3.0 * cu * cz[i]) * fz
            Fi.append(3.0 * w[i] * t)
        if mode == 0:
            hw = 1.0 - 0.5 * omega
            for i in range(q):
                f[i] = f[i] + hw * Fi[i]
        elif mode == 1:
            he = 1.0 - 0.5 * om_e
            ho = 1.0 - 0.5 * om_o
            for i in range(q):
                j = opp[i]
                f[i] = f[i] + he * 0.5 * (Fi[i] + Fi[j]) \
                    + ho * 0.5 * (Fi[i] - Fi[j])
        else:
            G = params["guo_matrix"]  # (q, q) combined matrix, precomputed
            for i in range(q):
                acc = G[i, 0] * Fi[0]
                for a in range(1, q):
                    acc = acc + G[i, a] * Fi[a]
                f[i] = f[i] + acc

    for i in range(q):
        pdf[..., i][fluid] = f[i]


def stream_pull(src, dst, cx, cy, cz, gl):
    """Pull streaming: dst_i(x) = src_i(x - c_i) on the interior.

    src/dst: (z, y, x, q) views including `gl` ghost layers. Ghost cells of
    dst are left untouched.
    """
    nzg, nyg, nxg, q = src.shape
    nz = nzg - 2 * gl; ny = nyg - 2 * gl; nx = nxg - 2 * gl
    for i in range(q):
        dz = cz[i]; dy = cy[i]; dx = cx[i]
        dst[gl : gl + nz, gl : gl + ny, gl : gl + nx, i] = src[
            gl - dz : gl - dz + nz,
            gl - dy : gl - dy + ny,
            gl - dx : gl - dx + nx,
            i,
        ]
