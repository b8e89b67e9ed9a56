# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels. Semantics mirror ``lidm._pykernels`` exactly."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, cos, sin, fabs, INFINITY, isnan

cnp.import_array()

cdef enum:
    LABEL_NONE = 0
    LABEL_GROUND = 1
    LABEL_BOX = 2
    LABEL_CYLINDER = 3
    LABEL_WALL = 4


def scatter_min(flat_index, values, Py_ssize_t size):
    cdef const cnp.int64_t[::1] idx = np.ascontiguousarray(flat_index, dtype=np.int64)
    cdef const double[::1] val = np.ascontiguousarray(values, dtype=np.float64)
    out_arr = np.full(size, np.inf)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t i, k
    if idx.shape[0] != val.shape[0]:
        raise ValueError("index and value arrays differ in length")
    for i in range(idx.shape[0]):
        k = idx[i]
        if k < 0 or k >= size:
            raise IndexError(f"flat index {k} out of range")
        if val[i] < out[k]:
            out[k] = val[i]
    return out_arr


def row_runs(mask):
    cdef const cnp.uint8_t[:, ::1] m = np.ascontiguousarray(np.asarray(mask) != 0, dtype=np.uint8)
    cdef Py_ssize_t height = m.shape[0], width = m.shape[1]
    cdef Py_ssize_t r, c, start, first, total = 0
    rows_arr = np.empty(height * width, dtype=np.int64)
    starts_arr = np.empty(height * width, dtype=np.int64)
    lengths_arr = np.empty(height * width, dtype=np.int64)
    cdef cnp.int64_t[::1] rows = rows_arr, starts = starts_arr, lengths = lengths_arr
    for r in range(height):
        first = total
        start = -1
        for c in range(width + 1):
            if c < width and m[r, c]:
                if start < 0:
                    start = c
            elif start >= 0:
                rows[total] = r
                starts[total] = start
                lengths[total] = c - start
                total += 1
                start = -1
        # join a run ending at column W-1 with one starting at column 0
        if total - first >= 2 and starts[first] == 0 and starts[total - 1] + lengths[total - 1] == width:
            lengths[total - 1] += lengths[first]
            for c in range(first, total - 1):
                starts[c] = starts[c + 1]
                lengths[c] = lengths[c + 1]
            total -= 1
    return rows_arr[:total].copy(), starts_arr[:total].copy(), lengths_arr[:total].copy()


def nearest_sqdist(queries, refs):
    """Exact nearest squared distance via a sweep over x-sorted references."""
    q_arr = np.ascontiguousarray(queries, dtype=np.float64).reshape(-1, 3)
    order = np.argsort(np.asarray(refs, dtype=np.float64).reshape(-1, 3)[:, 0], kind="stable")
    p_arr = np.ascontiguousarray(np.asarray(refs, dtype=np.float64).reshape(-1, 3)[order])
    cdef const double[:, ::1] q = q_arr
    cdef const double[:, ::1] p = p_arr
    cdef Py_ssize_t n = q.shape[0], m = p.shape[0]
    out_arr = np.empty(n)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t i, j, lo, hi, mid
    cdef double qx, qy, qz, dx, dy, dz, d, best
    if m == 0:
        raise ValueError("reference set is empty")
    with nogil:
        for i in range(n):
            qx = q[i, 0]
            qy = q[i, 1]
            qz = q[i, 2]
            lo = 0
            hi = m
            while lo < hi:
                mid = (lo + hi) // 2
                if p[mid, 0] < qx:
                    lo = mid + 1
                else:
                    hi = mid
            best = INFINITY
            j = lo
            while j < m:
                dx = qx - p[j, 0]
                if dx * dx > best:
                    break
                dy = qy - p[j, 1]
                dz = qz - p[j, 2]
                d = dx * dx + dy * dy + dz * dz
                if d < best:
                    best = d
                j += 1
            j = lo - 1
            while j >= 0:
                dx = qx - p[j, 0]
                if dx * dx > best:
                    break
                dy = qy - p[j, 1]
                dz = qz - p[j, 2]
                d = dx * dx + dy * dy + dz * dz
                if d < best:
                    best = d
                j -= 1
            out[i] = best
    return out_arr


cdef inline void _offer(double t, bint hit, int lab, double max_range,
                        double* best, signed char* label) noexcept nogil:
    if hit and t > 0.0 and t <= max_range and t < best[0]:
        best[0] = t
        label[0] = lab


def raycast(dirs, double ground_z, boxes, cylinders, walls, double max_range):
    cdef const double[:, ::1] d = np.ascontiguousarray(dirs, dtype=np.float64).reshape(-1, 3)
    cdef const double[:, ::1] bx = np.ascontiguousarray(boxes, dtype=np.float64).reshape(-1, 7)
    cdef const double[:, ::1] cy = np.ascontiguousarray(cylinders, dtype=np.float64).reshape(-1, 5)
    cdef const double[:, ::1] wl = np.ascontiguousarray(walls, dtype=np.float64).reshape(-1, 6)
    cdef Py_ssize_t n = d.shape[0]
    best_arr = np.full(n, np.inf)
    label_arr = np.zeros(n, dtype=np.int8)
    cdef double[::1] best = best_arr
    cdef signed char[::1] label = label_arr
    cdef Py_ssize_t i, k, ax
    cdef bint has_ground = not isnan(ground_z)
    cdef double dx, dy, dz, t, c, s, ox, oy, oz, ldx, ldy, tmin, tmax, t1, t2, lo, hi, o, dd, h
    cdef double a, b, cc, disc, sq, z, z0, z1, px, py, sx, sy, denom, u, rad
    cdef bint hit
    with nogil:
        for i in range(n):
            dx = d[i, 0]
            dy = d[i, 1]
            dz = d[i, 2]
            if has_ground and dz < 0.0:
                _offer(ground_z / dz, True, LABEL_GROUND, max_range, &best[i], &label[i])

            for k in range(bx.shape[0]):
                c = cos(bx[k, 6])
                s = sin(bx[k, 6])
                ox = -(c * bx[k, 0] + s * bx[k, 1])
                oy = -(-s * bx[k, 0] + c * bx[k, 1])
                oz = -bx[k, 2]
                ldx = c * dx + s * dy
                ldy = -s * dx + c * dy
                tmin = -INFINITY
                tmax = INFINITY
                hit = True
                for ax in range(3):
                    if ax == 0:
                        o = ox
                        dd = ldx
                        h = 0.5 * bx[k, 3]
                    elif ax == 1:
                        o = oy
                        dd = ldy
                        h = 0.5 * bx[k, 4]
                    else:
                        o = oz
                        dd = dz
                        h = 0.5 * bx[k, 5]
                    if fabs(dd) < 1e-15:
                        if o < -h or o > h:
                            hit = False
                        continue
                    t1 = (-h - o) / dd
                    t2 = (h - o) / dd
                    lo = t1 if t1 < t2 else t2
                    hi = t2 if t1 < t2 else t1
                    if lo > tmin:
                        tmin = lo
                    if hi < tmax:
                        tmax = hi
                if hit and tmax >= (tmin if tmin > 0.0 else 0.0):
                    t = tmin if tmin > 0.0 else tmax
                    _offer(t, True, LABEL_BOX, max_range, &best[i], &label[i])

            for k in range(cy.shape[0]):
                rad = cy[k, 3]
                z0 = cy[k, 2] - 0.5 * cy[k, 4]
                z1 = cy[k, 2] + 0.5 * cy[k, 4]
                a = dx * dx + dy * dy
                b = -2.0 * (cy[k, 0] * dx + cy[k, 1] * dy)
                cc = cy[k, 0] * cy[k, 0] + cy[k, 1] * cy[k, 1] - rad * rad
                disc = b * b - 4.0 * a * cc
                if disc >= 0.0 and a > 0.0:
                    sq = sqrt(disc)
                    t = (-b - sq) / (2.0 * a)
                    z = t * dz
                    _offer(t, z >= z0 and z <= z1, LABEL_CYLINDER, max_range, &best[i], &label[i])
                    t = (-b + sq) / (2.0 * a)
                    z = t * dz
                    _offer(t, z >= z0 and z <= z1, LABEL_CYLINDER, max_range, &best[i], &label[i])
                if dz != 0.0:
                    for ax in range(2):
                        t = (z0 if ax == 0 else z1) / dz
                        px = t * dx - cy[k, 0]
                        py = t * dy - cy[k, 1]
                        _offer(t, px * px + py * py <= rad * rad, LABEL_CYLINDER,
                               max_range, &best[i], &label[i])

            for k in range(wl.shape[0]):
                sx = wl[k, 2] - wl[k, 0]
                sy = wl[k, 3] - wl[k, 1]
                denom = dx * sy - dy * sx
                if denom == 0.0:
                    continue
                t = (wl[k, 0] * sy - wl[k, 1] * sx) / denom
                u = (wl[k, 0] * dy - wl[k, 1] * dx) / denom
                z = t * dz
                _offer(t, u >= 0.0 and u <= 1.0 and z >= wl[k, 4] and z <= wl[k, 5],
                       LABEL_WALL, max_range, &best[i], &label[i])
    return best_arr, label_arr
