"""Pure NumPy versions of the compiled kernels.

The ray caster here does not use the uniform grid: it brute-forces every
object whose xy bounds overlap a chunk of rays. That keeps it independent of
the grid bookkeeping it is compared against.
"""
import numpy as np

EPS_UV = 1e-12
EPS_DET = 1e-14
T_MIN = 1e-9
CHUNK = 64


def _tri_hits(o, d, tris):
    # d: (R, 1, 3) rays, tris: (1, K, 9)
    v0x, v0y, v0z = tris[..., 0], tris[..., 1], tris[..., 2]
    e1x, e1y, e1z = tris[..., 3] - v0x, tris[..., 4] - v0y, tris[..., 5] - v0z
    e2x, e2y, e2z = tris[..., 6] - v0x, tris[..., 7] - v0y, tris[..., 8] - v0z
    dx, dy, dz = d[..., 0], d[..., 1], d[..., 2]
    px = dy * e2z - dz * e2y
    py = dz * e2x - dx * e2z
    pz = dx * e2y - dy * e2x
    det = e1x * px + e1y * py + e1z * pz
    ok = np.abs(det) >= EPS_DET
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / det
    sx, sy, sz = o[0] - v0x, o[1] - v0y, o[2] - v0z
    u = (sx * px + sy * py + sz * pz) * inv
    ok &= (u >= -EPS_UV) & (u <= 1.0 + EPS_UV)
    qx = sy * e1z - sz * e1y
    qy = sz * e1x - sx * e1z
    qz = sx * e1y - sy * e1x
    w = (dx * qx + dy * qy + dz * qz) * inv
    ok &= (w >= -EPS_UV) & (u + w <= 1.0 + EPS_UV)
    t = (e2x * qx + e2y * qy + e2z * qz) * inv
    ok &= t > T_MIN
    return np.where(ok, t, np.inf)


def _ell_hits(o, d, ells):
    cx, cy, cz = ells[..., 0], ells[..., 1], ells[..., 2]
    rx, ry, rz = ells[..., 3], ells[..., 4], ells[..., 5]
    c, s = ells[..., 6], ells[..., 7]
    ax, ay, az = o[0] - cx, o[1] - cy, o[2] - cz
    lx = (c * ax + s * ay) / rx
    ly = (-s * ax + c * ay) / ry
    lz = az / rz
    dx, dy, dz = d[..., 0], d[..., 1], d[..., 2]
    mx = (c * dx + s * dy) / rx
    my = (-s * dx + c * dy) / ry
    mz = dz / rz
    a = mx * mx + my * my + mz * mz
    b = 2.0 * (lx * mx + ly * my + lz * mz)
    cc = lx * lx + ly * ly + lz * lz - 1.0
    disc = b * b - 4.0 * a * cc
    ok = disc >= 0.0
    sq = np.sqrt(np.where(ok, disc, 0.0))
    t_near = (-b - sq) / (2.0 * a)
    t_far = (-b + sq) / (2.0 * a)
    t = np.where(t_near > T_MIN, t_near, t_far)
    ok &= t > T_MIN
    return np.where(ok, t, np.inf)


def _slab_segments(origin, dirs, zmin, zmax, max_t):
    oz = origin[2]
    dz = dirs[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        ta = (zmin - oz) / dz
        tb = (zmax - oz) / dz
    lo = np.minimum(ta, tb)
    hi = np.maximum(ta, tb)
    flat = dz == 0.0
    inside = (oz >= zmin) & (oz <= zmax)
    lo = np.where(flat, np.where(inside, 0.0, np.inf), lo)
    hi = np.where(flat, np.where(inside, max_t, -np.inf), hi)
    lo = np.maximum(lo, 0.0)
    hi = np.minimum(hi, max_t)
    return lo, hi


def cast_rays(origin, dirs, tris, ells, x0, y0, cell, nx, ny,
              tri_start, tri_items, ell_start, ell_items, zmin, zmax, max_t):
    """Same contract as the compiled ``cast_rays``; the grid arguments are unused."""
    origin = np.asarray(origin, dtype=np.float64)
    dirs = np.asarray(dirs, dtype=np.float64)
    n = len(dirs)
    t_out = np.full(n, np.inf)
    kind_out = np.zeros(n, dtype=np.int8)
    idx_out = np.full(n, -1, dtype=np.int64)
    if n == 0:
        return t_out, kind_out, idx_out

    tri_lo = np.stack([tris[:, 0::3].min(axis=1), tris[:, 1::3].min(axis=1)], axis=1) if len(tris) else np.empty((0, 2))
    tri_hi = np.stack([tris[:, 0::3].max(axis=1), tris[:, 1::3].max(axis=1)], axis=1) if len(tris) else np.empty((0, 2))
    if len(ells):
        reach = np.maximum(ells[:, 3], ells[:, 4])
        ell_lo = ells[:, :2] - reach[:, None]
        ell_hi = ells[:, :2] + reach[:, None]
    else:
        ell_lo = ell_hi = np.empty((0, 2))

    ta, tb = _slab_segments(origin, dirs, zmin, zmax, max_t)
    live = np.flatnonzero(ta <= tb)
    for start in range(0, len(live), CHUNK):
        rows = live[start : start + CHUNK]
        d = dirs[rows]
        pa = origin[:2] + ta[rows, None] * d[:, :2]
        pb = origin[:2] + tb[rows, None] * d[:, :2]
        lo = np.minimum(pa, pb).min(axis=0)
        hi = np.maximum(pa, pb).max(axis=0)

        best_t = np.full(len(rows), np.inf)
        best_kind = np.zeros(len(rows), dtype=np.int8)
        best_idx = np.full(len(rows), -1, dtype=np.int64)
        for kind, objs, olo, ohi, hit in (
            (1, tris, tri_lo, tri_hi, _tri_hits),
            (2, ells, ell_lo, ell_hi, _ell_hits),
        ):
            if len(objs) == 0:
                continue
            sel = np.flatnonzero(np.all((ohi >= lo) & (olo <= hi), axis=1))
            if len(sel) == 0:
                continue
            t = hit(origin, d[:, None, :], objs[sel][None, :, :])
            t = np.where(t <= max_t, t, np.inf)
            # first minimum over ascending object index wins ties
            j = np.argmin(t, axis=1)
            tj = t[np.arange(len(rows)), j]
            better = tj < best_t
            best_t = np.where(better, tj, best_t)
            best_kind = np.where(better, kind, best_kind).astype(np.int8)
            best_idx = np.where(better, sel[j], best_idx)
        t_out[rows] = best_t
        kind_out[rows] = best_kind
        idx_out[rows] = best_idx
    return t_out, kind_out, idx_out


def ransac_counts(pts, samples, threshold):
    pts = np.asarray(pts, dtype=np.float64)
    samples = np.asarray(samples, dtype=np.int64)
    x, y, z = pts[:, 0], pts[:, 1], pts[:, 2]
    counts = np.empty(len(samples), dtype=np.int64)
    for it, (i0, i1, i2) in enumerate(samples):
        x0, y0, z0 = pts[i0]
        ax, ay, az = pts[i1] - pts[i0]
        bx, by, bz = pts[i2] - pts[i0]
        nx = ay * bz - az * by
        ny = az * bx - ax * bz
        nz = ax * by - ay * bx
        nn = nx * nx + ny * ny + nz * nz
        if nn <= 1e-24 * ((ax * ax + ay * ay + az * az) * (bx * bx + by * by + bz * bz)) or nn == 0.0:
            counts[it] = -1
            continue
        lim = threshold * np.sqrt(nn)
        d = nx * (x - x0) + ny * (y - y0) + nz * (z - z0)
        counts[it] = np.count_nonzero(np.abs(d) <= lim)
    return counts
