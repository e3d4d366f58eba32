"""Naive scalar-loop reference implementations.

These deliberately avoid numpy vectorization and the package's own helpers so
they can check the vectorized code paths independently.
"""

import math


def fog_pixel_loop(clear, t, light):
    """clear: HxWx3 nested/array, t: HxW, light: 3 floats -> nested lists."""
    h, w = len(t), len(t[0])
    out = []
    for v in range(h):
        row = []
        for u in range(w):
            tv = float(t[v][u])
            px = []
            for c in range(3):
                f = tv * float(clear[v][u][c]) + (1.0 - tv) * float(light[c])
                px.append(min(1.0, max(0.0, f)))
            row.append(px)
        out.append(row)
    return out


def dark_channel_loop(img, r):
    h, w = len(img), len(img[0])
    out = [[0.0] * w for _ in range(h)]
    for v in range(h):
        for u in range(w):
            best = math.inf
            for dv in range(-r, r + 1):
                for du in range(-r, r + 1):
                    vv, uu = v + dv, u + du
                    if 0 <= vv < h and 0 <= uu < w:
                        for c in range(3):
                            best = min(best, float(img[vv][uu][c]))
            out[v][u] = best
    return out


def radial_distance_backprojection(depth, fx, fy, cx, cy):
    """Back-project every pixel center to a 3-D camera-frame point and take its norm."""
    h, w = len(depth), len(depth[0])
    out = [[0.0] * w for _ in range(h)]
    for v in range(h):
        for u in range(w):
            d = float(depth[v][u])
            x = (u + 0.5 - cx) * d / fx
            y = (v + 0.5 - cy) * d / fy
            z = d
            out[v][u] = math.sqrt(x * x + y * y + z * z)
    return out


def nearest_valid_brute(values, valid):
    """Fill each hole from the closest valid pixel; ties -> first in row-major order."""
    h, w = len(values), len(values[0])
    valid_px = [(v, u) for v in range(h) for u in range(w) if valid[v][u]]
    out = [list(map(float, row)) for row in values]
    for v in range(h):
        for u in range(w):
            if valid[v][u]:
                continue
            best = None
            for vv, uu in valid_px:  # row-major scan; strict < keeps the first tie
                d2 = (vv - v) ** 2 + (uu - u) ** 2
                if best is None or d2 < best[0]:
                    best = (d2, vv, uu)
            out[v][u] = float(values[best[1]][best[2]])
    return out


def srgb_decode_scalar(x):
    if x <= 0.04045:
        return x / 12.92
    return ((x + 0.055) / 1.055) ** 2.4
