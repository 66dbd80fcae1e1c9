"""Hot inner loops, each with a numba and a pure-numpy implementation.

The public wrappers at the bottom dispatch on :func:`ctbkit._accel.numba_enabled`.
Both paths implement the same predicate, so rasterisation and component
labelling are bit-identical across backends; the floating point reductions
(ROI sampling, mean shift) agree to rounding.
"""
import numpy as np

from . import _accel
from ._accel import njit

# ---------------------------------------------------------------------------
# even-odd polygon rasterisation
# ---------------------------------------------------------------------------
# Cell (i, j) is inside when a ray from its centre (j + .5, i + .5) towards +x
# crosses an odd number of edges. An edge counts when it straddles the row
# (half-open in y) and its crossing lies strictly right of the centre.


@njit
def _raster_numba(verts, nx, ny):
    k = verts.shape[0]
    mask = np.zeros((ny, nx), dtype=np.bool_)
    xs = np.empty(k, dtype=np.float64)
    for i in range(ny):
        y = i + 0.5
        m = 0
        for e in range(k):
            x0 = verts[e, 0]
            y0 = verts[e, 1]
            x1 = verts[(e + 1) % k, 0]
            y1 = verts[(e + 1) % k, 1]
            if (y0 > y) != (y1 > y):
                xs[m] = x0 + (y - y0) * (x1 - x0) / (y1 - y0)
                m += 1
        if m == 0:
            continue
        cross = np.sort(xs[:m])
        p = 0
        for j in range(nx):
            cx = j + 0.5
            while p < m and cross[p] <= cx:
                p += 1
            if p == m:
                break
            if (m - p) % 2 == 1:
                mask[i, j] = True
    return mask


def _raster_numpy(verts, nx, ny):
    ys = np.arange(ny, dtype=np.float64) + 0.5
    cx = np.arange(nx, dtype=np.float64) + 0.5
    mask = np.zeros((ny, nx), dtype=bool)
    k = verts.shape[0]
    for e in range(k):
        x0, y0 = verts[e]
        x1, y1 = verts[(e + 1) % k]
        straddle = (y0 > ys) != (y1 > ys)
        if not straddle.any():
            continue
        rows = np.nonzero(straddle)[0]
        y = ys[rows]
        xint = x0 + (y - y0) * (x1 - x0) / (y1 - y0)
        mask[rows] ^= cx[None, :] < xint[:, None]
    return mask


def raster_polygon(verts, nx, ny):
    """Even-odd fill of ``verts`` (grid coordinates) on an ``ny`` x ``nx`` grid."""
    verts = np.ascontiguousarray(verts, dtype=np.float64)
    if _accel.numba_enabled():
        return _raster_numba(verts, int(nx), int(ny))
    return _raster_numpy(verts, int(nx), int(ny))


# ---------------------------------------------------------------------------
# ROI align
# ---------------------------------------------------------------------------
# Feature cell j covers [j, j + 1) with its value at the centre j + .5, so a
# continuous coordinate u maps to index coordinate u - .5, clamped to the map.


@njit
def _roi_align_numba(fm, x1, y1, x2, y2, out_size, samples):
    c_dim, h, w = fm.shape
    out = np.zeros((c_dim, out_size, out_size), dtype=np.float64)
    bin_w = (x2 - x1) / out_size
    bin_h = (y2 - y1) / out_size
    norm = 1.0 / (samples * samples)
    for ph in range(out_size):
        for pw in range(out_size):
            for sy in range(samples):
                yy = y1 + (ph + (sy + 0.5) / samples) * bin_h - 0.5
                yy = min(max(yy, 0.0), h - 1.0)
                y_lo = int(np.floor(yy))
                y_hi = min(y_lo + 1, h - 1)
                ly = yy - y_lo
                for sx in range(samples):
                    xx = x1 + (pw + (sx + 0.5) / samples) * bin_w - 0.5
                    xx = min(max(xx, 0.0), w - 1.0)
                    x_lo = int(np.floor(xx))
                    x_hi = min(x_lo + 1, w - 1)
                    lx = xx - x_lo
                    w00 = (1.0 - ly) * (1.0 - lx)
                    w01 = (1.0 - ly) * lx
                    w10 = ly * (1.0 - lx)
                    w11 = ly * lx
                    for c in range(c_dim):
                        out[c, ph, pw] += norm * (
                            w00 * fm[c, y_lo, x_lo]
                            + w01 * fm[c, y_lo, x_hi]
                            + w10 * fm[c, y_hi, x_lo]
                            + w11 * fm[c, y_hi, x_hi]
                        )
    return out


def _roi_axis(lo, hi, out_size, samples, size):
    step = (hi - lo) / out_size
    frac = (np.arange(samples) + 0.5) / samples
    u = lo + (np.arange(out_size)[:, None] + frac[None, :]) * step - 0.5
    u = np.clip(u, 0.0, size - 1.0)
    i_lo = np.floor(u).astype(np.int64)
    i_hi = np.minimum(i_lo + 1, size - 1)
    return i_lo, i_hi, u - i_lo


def _roi_align_numpy(fm, x1, y1, x2, y2, out_size, samples):
    _, h, w = fm.shape
    ylo, yhi, ly = _roi_axis(y1, y2, out_size, samples, h)  # (R, S)
    xlo, xhi, lx = _roi_axis(x1, x2, out_size, samples, w)
    # broadcast to (C, R, S, R, S): bin row, sample row, bin col, sample col
    Y0 = ylo[:, :, None, None]
    Y1 = yhi[:, :, None, None]
    X0 = xlo[None, None, :, :]
    X1 = xhi[None, None, :, :]
    LY = ly[:, :, None, None]
    LX = lx[None, None, :, :]
    val = (
        (1.0 - LY) * (1.0 - LX) * fm[:, Y0, X0]
        + (1.0 - LY) * LX * fm[:, Y0, X1]
        + LY * (1.0 - LX) * fm[:, Y1, X0]
        + LY * LX * fm[:, Y1, X1]
    )
    return val.mean(axis=(2, 4))


def roi_align_kernel(fm, box, out_size, samples=2):
    """Bilinear ROI pooling of ``box`` (feature coordinates) into ``C x R x R``."""
    fm = np.ascontiguousarray(fm, dtype=np.float64)
    x1, y1, x2, y2 = (float(v) for v in box)
    if _accel.numba_enabled():
        return _roi_align_numba(fm, x1, y1, x2, y2, int(out_size), int(samples))
    return _roi_align_numpy(fm, x1, y1, x2, y2, int(out_size), int(samples))


# ---------------------------------------------------------------------------
# flat-kernel mean shift
# ---------------------------------------------------------------------------


@njit
def _mean_shift_numba(points, bandwidth, eps, max_iter):
    n = points.shape[0]
    modes = points.copy()
    new = np.empty_like(modes)
    bw2 = bandwidth * bandwidth
    converged = False
    it = 0
    while it < max_iter:
        it += 1
        shift = 0.0
        for i in range(n):
            sx = 0.0
            sy = 0.0
            cnt = 0
            for j in range(n):
                dx = points[j, 0] - modes[i, 0]
                dy = points[j, 1] - modes[i, 1]
                if dx * dx + dy * dy <= bw2:
                    sx += points[j, 0]
                    sy += points[j, 1]
                    cnt += 1
            if cnt == 0:
                new[i, 0] = modes[i, 0]
                new[i, 1] = modes[i, 1]
            else:
                new[i, 0] = sx / cnt
                new[i, 1] = sy / cnt
            d = np.sqrt((new[i, 0] - modes[i, 0]) ** 2 + (new[i, 1] - modes[i, 1]) ** 2)
            if d > shift:
                shift = d
        modes[:, :] = new
        if shift < eps:
            converged = True
            break
    return modes, it, converged


def _mean_shift_numpy(points, bandwidth, eps, max_iter):
    modes = points.copy()
    bw2 = bandwidth * bandwidth
    it = 0
    while it < max_iter:
        it += 1
        diff = points[None, :, :] - modes[:, None, :]
        within = (diff[..., 0] ** 2 + diff[..., 1] ** 2) <= bw2
        cnt = within.sum(axis=1)
        sums = within.astype(np.float64) @ points
        new = np.where(cnt[:, None] > 0, sums / np.maximum(cnt, 1)[:, None], modes)
        shift = np.sqrt(((new - modes) ** 2).sum(axis=1)).max()
        modes = new
        if shift < eps:
            return modes, it, True
    return modes, it, False


def mean_shift_kernel(points, bandwidth, eps, max_iter):
    """Run flat-kernel mean shift seeded at every point.

    Returns ``(modes, iterations, converged)``.
    """
    points = np.ascontiguousarray(points, dtype=np.float64)
    if _accel.numba_enabled():
        return _mean_shift_numba(points, float(bandwidth), float(eps), int(max_iter))
    return _mean_shift_numpy(points, float(bandwidth), float(eps), int(max_iter))


# ---------------------------------------------------------------------------
# connected components
# ---------------------------------------------------------------------------
# Both paths return the canonical labelling: each vertex gets the smallest
# vertex index of its (undirected) component.


@njit
def _components_numba(n, src, dst):
    parent = np.arange(n)
    for e in range(src.shape[0]):
        a = src[e]
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        b = dst[e]
        while parent[b] != b:
            parent[b] = parent[parent[b]]
            b = parent[b]
        if a < b:
            parent[b] = a
        elif b < a:
            parent[a] = b
    labels = np.empty(n, dtype=np.int64)
    for v in range(n):
        r = v
        while parent[r] != r:
            r = parent[r]
        labels[v] = r
    return labels


def _components_numpy(n, src, dst):
    labels = np.arange(n, dtype=np.int64)
    if src.size == 0:
        return labels
    while True:
        prev = labels.copy()
        m = np.minimum(labels[src], labels[dst])
        np.minimum.at(labels, src, m)
        np.minimum.at(labels, dst, m)
        labels = labels[labels]
        if np.array_equal(labels, prev):
            return labels


def connected_components(n, src, dst):
    """Label vertices ``0..n-1`` by undirected connectivity over edges ``src[e]-dst[e]``."""
    src = np.ascontiguousarray(src, dtype=np.int64)
    dst = np.ascontiguousarray(dst, dtype=np.int64)
    if _accel.numba_enabled():
        return _components_numba(int(n), src, dst)
    return _components_numpy(int(n), src, dst)
