# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops: grid-accelerated ray casting and RANSAC candidate scoring.

Arithmetic mirrors ``_fallback`` operation for operation (compiled with
``-ffp-contract=off``) so both backends agree to rounding.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, floor, fabs, INFINITY

cnp.import_array()

cdef double EPS_UV = 1e-12
cdef double EPS_DET = 1e-14
cdef double T_MIN = 1e-9


cdef inline double _tri_hit(double ox, double oy, double oz,
                            double dx, double dy, double dz,
                            const double* v) noexcept nogil:
    cdef double e1x = v[3] - v[0], e1y = v[4] - v[1], e1z = v[5] - v[2]
    cdef double e2x = v[6] - v[0], e2y = v[7] - v[1], e2z = v[8] - v[2]
    cdef double px = dy * e2z - dz * e2y
    cdef double py = dz * e2x - dx * e2z
    cdef double pz = dx * e2y - dy * e2x
    cdef double det = e1x * px + e1y * py + e1z * pz
    if fabs(det) < EPS_DET:
        return INFINITY
    cdef double inv = 1.0 / det
    cdef double sx = ox - v[0], sy = oy - v[1], sz = oz - v[2]
    cdef double u = (sx * px + sy * py + sz * pz) * inv
    if u < -EPS_UV or u > 1.0 + EPS_UV:
        return INFINITY
    cdef double qx = sy * e1z - sz * e1y
    cdef double qy = sz * e1x - sx * e1z
    cdef double qz = sx * e1y - sy * e1x
    cdef double w = (dx * qx + dy * qy + dz * qz) * inv
    if w < -EPS_UV or u + w > 1.0 + EPS_UV:
        return INFINITY
    cdef double t = (e2x * qx + e2y * qy + e2z * qz) * inv
    if t <= T_MIN:
        return INFINITY
    return t


cdef inline double _ell_hit(double ox, double oy, double oz,
                            double dx, double dy, double dz,
                            const double* e) noexcept nogil:
    # e = cx, cy, cz, rx, ry, rz, cos(yaw), sin(yaw)
    cdef double ax = ox - e[0], ay = oy - e[1], az = oz - e[2]
    cdef double lx = (e[6] * ax + e[7] * ay) / e[3]
    cdef double ly = (-e[7] * ax + e[6] * ay) / e[4]
    cdef double lz = az / e[5]
    cdef double mx = (e[6] * dx + e[7] * dy) / e[3]
    cdef double my = (-e[7] * dx + e[6] * dy) / e[4]
    cdef double mz = dz / e[5]
    cdef double a = mx * mx + my * my + mz * mz
    cdef double b = 2.0 * (lx * mx + ly * my + lz * mz)
    cdef double c = lx * lx + ly * ly + lz * lz - 1.0
    cdef double disc = b * b - 4.0 * a * c
    if disc < 0.0:
        return INFINITY
    cdef double sq = sqrt(disc)
    cdef double t = (-b - sq) / (2.0 * a)
    if t <= T_MIN:
        t = (-b + sq) / (2.0 * a)
        if t <= T_MIN:
            return INFINITY
    return t


cdef inline bint _better(double t, int kind, int idx,
                         double bt, int bkind, int bidx) noexcept nogil:
    if t < bt:
        return True
    if t == bt and t < INFINITY:
        if kind < bkind or (kind == bkind and idx < bidx):
            return True
    return False


def cast_rays(const double[::1] origin, const double[:, ::1] dirs,
              const double[:, ::1] tris, const double[:, ::1] ells,
              double x0, double y0, double cell, int nx, int ny,
              const long long[::1] tri_start, const long long[::1] tri_items,
              const long long[::1] ell_start, const long long[::1] ell_items,
              double zmin, double zmax, double max_t):
    """Nearest hit per ray. Returns ``(t, kind, index)``; kind 0 = miss, 1 = terrain, 2 = plant."""
    cdef Py_ssize_t n = dirs.shape[0]
    t_out = np.full(n, np.inf)
    kind_out = np.zeros(n, dtype=np.int8)
    idx_out = np.full(n, -1, dtype=np.int64)
    cdef double[::1] tv = t_out
    cdef signed char[::1] kv = kind_out
    cdef long long[::1] iv = idx_out
    cdef double ox = origin[0], oy = origin[1], oz = origin[2]
    cdef double dx, dy, dz, ta, tb, tmp, xa, xb, ya, yb, t, bt
    cdef int ci0, ci1, cj0, cj1, ci, cj, bkind, bidx, item
    cdef long long c, k
    cdef Py_ssize_t r
    with nogil:
        for r in range(n):
            dx = dirs[r, 0]
            dy = dirs[r, 1]
            dz = dirs[r, 2]
            # clip the ray to the scene's z slab
            if dz == 0.0:
                if oz < zmin or oz > zmax:
                    continue
                ta = 0.0
                tb = max_t
            else:
                ta = (zmin - oz) / dz
                tb = (zmax - oz) / dz
                if ta > tb:
                    tmp = ta
                    ta = tb
                    tb = tmp
            if ta < 0.0:
                ta = 0.0
            if tb > max_t:
                tb = max_t
            if ta > tb:
                continue
            xa = ox + ta * dx
            xb = ox + tb * dx
            ya = oy + ta * dy
            yb = oy + tb * dy
            if xa > xb:
                tmp = xa
                xa = xb
                xb = tmp
            if ya > yb:
                tmp = ya
                ya = yb
                yb = tmp
            ci0 = <int>floor((xa - x0) / cell)
            ci1 = <int>floor((xb - x0) / cell)
            cj0 = <int>floor((ya - y0) / cell)
            cj1 = <int>floor((yb - y0) / cell)
            if ci1 < 0 or cj1 < 0 or ci0 >= nx or cj0 >= ny:
                continue
            if ci0 < 0:
                ci0 = 0
            if cj0 < 0:
                cj0 = 0
            if ci1 >= nx:
                ci1 = nx - 1
            if cj1 >= ny:
                cj1 = ny - 1
            bt = INFINITY
            bkind = 0
            bidx = -1
            for ci in range(ci0, ci1 + 1):
                for cj in range(cj0, cj1 + 1):
                    c = <long long>ci * ny + cj
                    for k in range(tri_start[c], tri_start[c + 1]):
                        item = <int>tri_items[k]
                        t = _tri_hit(ox, oy, oz, dx, dy, dz, &tris[item, 0])
                        if t <= max_t and _better(t, 1, item, bt, bkind, bidx):
                            bt = t
                            bkind = 1
                            bidx = item
                    for k in range(ell_start[c], ell_start[c + 1]):
                        item = <int>ell_items[k]
                        t = _ell_hit(ox, oy, oz, dx, dy, dz, &ells[item, 0])
                        if t <= max_t and _better(t, 2, item, bt, bkind, bidx):
                            bt = t
                            bkind = 2
                            bidx = item
            tv[r] = bt
            kv[r] = bkind
            iv[r] = bidx
    return t_out, kind_out, idx_out


def ransac_counts(const double[:, ::1] pts, const long long[:, ::1] samples, double threshold):
    """Inlier count of the plane through each sampled triple; -1 marks collinear triples."""
    cdef Py_ssize_t n = pts.shape[0], m = samples.shape[0]
    counts = np.empty(m, dtype=np.int64)
    cdef long long[::1] cv = counts
    cdef Py_ssize_t it, i
    cdef long long i0, i1, i2, cnt
    cdef double x0, y0, z0, ax, ay, az, bx, by, bz, nx, ny, nz, nn, lim, d
    with nogil:
        for it in range(m):
            i0 = samples[it, 0]
            i1 = samples[it, 1]
            i2 = samples[it, 2]
            x0 = pts[i0, 0]
            y0 = pts[i0, 1]
            z0 = pts[i0, 2]
            ax = pts[i1, 0] - x0
            ay = pts[i1, 1] - y0
            az = pts[i1, 2] - z0
            bx = pts[i2, 0] - x0
            by = pts[i2, 1] - y0
            bz = pts[i2, 2] - z0
            nx = ay * bz - az * by
            ny = az * bx - ax * bz
            nz = ax * by - ay * bx
            nn = nx * nx + ny * ny + nz * nz
            if nn <= 1e-24 * ((ax * ax + ay * ay + az * az) * (bx * bx + by * by + bz * bz)) or nn == 0.0:
                cv[it] = -1
                continue
            lim = threshold * sqrt(nn)
            cnt = 0
            for i in range(n):
                d = nx * (pts[i, 0] - x0) + ny * (pts[i, 1] - y0) + nz * (pts[i, 2] - z0)
                if fabs(d) <= lim:
                    cnt += 1
            cv[it] = cnt
    return counts
