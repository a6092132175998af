"""Hot geometry kernels: point-to-polyline projection and ego-view rasterization.

Each kernel has two implementations that perform the same arithmetic in the
same per-element order: a numba @njit loop (default) and a vectorized numpy
fallback. Set DIRL_DISABLE_NUMBA=1 to force the numpy path. Both paths are
exercised by the test suite and compared by `dirl benchmark`.
"""

import math
import os

import numpy as np

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAVE_NUMBA = False

NUMBA_DISABLED = os.environ.get("DIRL_DISABLE_NUMBA", "") == "1"
USE_NUMBA = HAVE_NUMBA and not NUMBA_DISABLED


def backend() -> str:
    return "numba" if USE_NUMBA else "numpy"


# ---------------------------------------------------------------------------
# nearest point on a closed polyline
# ---------------------------------------------------------------------------

def _nearest_loop(px, py, ax, ay, ux, uy, seg_len, cum_len):
    best_d2 = math.inf
    best_s = 0.0
    for k in range(ax.shape[0]):
        dx = px - ax[k]
        dy = py - ay[k]
        t = dx * ux[k] + dy * uy[k]
        if t < 0.0:
            t = 0.0
        elif t > seg_len[k]:
            t = seg_len[k]
        qx = ax[k] + ux[k] * t
        qy = ay[k] + uy[k] * t
        ddx = px - qx
        ddy = py - qy
        d2 = ddx * ddx + ddy * ddy
        if d2 < best_d2:
            best_d2 = d2
            best_s = cum_len[k] + t
    return best_d2, best_s


def _nearest_np(px, py, ax, ay, ux, uy, seg_len, cum_len):
    dx = px - ax
    dy = py - ay
    t = dx * ux + dy * uy
    t = np.clip(t, 0.0, seg_len)
    qx = ax + ux * t
    qy = ay + uy * t
    ddx = px - qx
    ddy = py - qy
    d2 = ddx * ddx + ddy * ddy
    k = int(np.argmin(d2))
    return float(d2[k]), float(cum_len[k] + t[k])


# ---------------------------------------------------------------------------
# ego-centric top-down rasterization
# ---------------------------------------------------------------------------
# Pixel (i, j) sits at forward offset (h/2 - 0.5 - i) * res and leftward
# offset (w/2 - 0.5 - j) * res in the car frame (forward = up, left = image
# left). Classification per pixel: obstacle disc > road > fence band >
# background, using squared distances so both backends compare identically.

def _render_loop(
    img,
    cx,
    cy,
    fx,
    fy,
    lx,
    ly,
    res,
    ax,
    ay,
    ux,
    uy,
    seg_len,
    hw2,
    hwf2,
    ox,
    oy,
    or2,
    ocid,
    base_palette,
    obs_palette,
):
    h = img.shape[0]
    w = img.shape[1]
    half_h = 0.5 * h - 0.5
    half_w = 0.5 * w - 0.5
    n_seg = ax.shape[0]
    n_obs = ox.shape[0]
    for i in range(h):
        df = (half_h - i) * res
        for j in range(w):
            dl = (half_w - j) * res
            px = cx + fx * df + lx * dl
            py = cy + fy * df + ly * dl

            hit = -1
            for m in range(n_obs):
                dxo = px - ox[m]
                dyo = py - oy[m]
                if dxo * dxo + dyo * dyo <= or2[m]:
                    hit = m
                    break
            if hit >= 0:
                c = obs_palette[ocid[hit]]
                img[i, j, 0] = c[0]
                img[i, j, 1] = c[1]
                img[i, j, 2] = c[2]
                continue

            best_d2 = math.inf
            for k in range(n_seg):
                dx = px - ax[k]
                dy = py - ay[k]
                t = dx * ux[k] + dy * uy[k]
                if t < 0.0:
                    t = 0.0
                elif t > seg_len[k]:
                    t = seg_len[k]
                qx = ax[k] + ux[k] * t
                qy = ay[k] + uy[k] * t
                ddx = px - qx
                ddy = py - qy
                d2 = ddx * ddx + ddy * ddy
                if d2 < best_d2:
                    best_d2 = d2

            if best_d2 <= hw2:
                c = base_palette[2]
            elif best_d2 <= hwf2:
                c = base_palette[1]
            else:
                c = base_palette[0]
            img[i, j, 0] = c[0]
            img[i, j, 1] = c[1]
            img[i, j, 2] = c[2]
    return img


def _render_np(
    img,
    cx,
    cy,
    fx,
    fy,
    lx,
    ly,
    res,
    ax,
    ay,
    ux,
    uy,
    seg_len,
    hw2,
    hwf2,
    ox,
    oy,
    or2,
    ocid,
    base_palette,
    obs_palette,
):
    h, w = img.shape[0], img.shape[1]
    ii, jj = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    df = (0.5 * h - 0.5 - ii) * res
    dl = (0.5 * w - 0.5 - jj) * res
    px = (cx + fx * df + lx * dl).ravel()
    py = (cy + fy * df + ly * dl).ravel()

    dx = px[:, None] - ax[None, :]
    dy = py[:, None] - ay[None, :]
    t = dx * ux[None, :] + dy * uy[None, :]
    t = np.clip(t, 0.0, seg_len[None, :])
    qx = ax[None, :] + ux[None, :] * t
    qy = ay[None, :] + uy[None, :] * t
    ddx = px[:, None] - qx
    ddy = py[:, None] - qy
    d2 = (ddx * ddx + ddy * ddy).min(axis=1)

    cls = np.zeros(px.shape[0], dtype=np.int64)
    cls[d2 <= hwf2] = 1
    cls[d2 <= hw2] = 2
    flat = base_palette[cls]

    if ox.shape[0]:
        dxo = px[:, None] - ox[None, :]
        dyo = py[:, None] - oy[None, :]
        hit_mask = dxo * dxo + dyo * dyo <= or2[None, :]
        hit_any = hit_mask.any(axis=1)
        # obstacles never overlap, so at most one disc contains a pixel
        first = hit_mask.argmax(axis=1)
        flat[hit_any] = obs_palette[ocid[first[hit_any]]]

    img[:] = flat.reshape(h, w, 3)
    return img


if HAVE_NUMBA:
    _nearest_nb = numba.njit(cache=True)(_nearest_loop)
    _render_nb = numba.njit(cache=True)(_render_loop)
else:  # pragma: no cover
    _nearest_nb = None
    _render_nb = None


def nearest_point(px, py, geo, use_numba=None):
    """Squared distance and arc-length of the closest centerline point."""
    use = USE_NUMBA if use_numba is None else (use_numba and HAVE_NUMBA)
    fn = _nearest_nb if use else _nearest_np
    return fn(float(px), float(py), geo.ax, geo.ay, geo.ux, geo.uy, geo.seg_len, geo.cum_len)


def render_pixels(
    height,
    width,
    cx,
    cy,
    heading,
    res,
    geo,
    half_width,
    fence_width,
    ox,
    oy,
    orad,
    ocid,
    base_palette,
    obs_palette,
    use_numba=None,
):
    """Rasterize the ego view into a fresh (height, width, 3) uint8 array."""
    use = USE_NUMBA if use_numba is None else (use_numba and HAVE_NUMBA)
    img = np.empty((height, width, 3), dtype=np.uint8)
    fx = math.cos(heading)
    fy = math.sin(heading)
    lx = -fy
    ly = fx
    hw2 = half_width * half_width
    hwf = half_width + fence_width
    hwf2 = hwf * hwf
    or2 = orad * orad
    fn = _render_nb if use else _render_np
    return fn(
        img,
        float(cx),
        float(cy),
        fx,
        fy,
        lx,
        ly,
        float(res),
        geo.ax,
        geo.ay,
        geo.ux,
        geo.uy,
        geo.seg_len,
        hw2,
        hwf2,
        ox,
        oy,
        or2,
        ocid,
        base_palette,
        obs_palette,
    )
