"""Incremental Bowyer-Watson Delaunay triangulation with adaptive-precision predicates.

Predicates are evaluated in floating point behind a forward error bound and
re-evaluated in exact rational arithmetic when the bound cannot certify the
sign, so degenerate and cocircular inputs (common on gridded reprojections)
are decided exactly. Cocircular ties are resolved canonically: the quad's
diagonal must contain its lowest vertex index.
"""

from __future__ import annotations

from fractions import Fraction

import numpy as np

# Forward error-bound coefficients for the float filters (Shewchuk-style).
_ORIENT2D_BOUND = 3.3306690738754716e-16
_INCIRCLE_BOUND = 1.1102230246251577e-15


def orient2d(ax, ay, bx, by, cx, cy) -> int:
    """Sign of the signed area of triangle abc: +1 CCW, -1 CW, 0 collinear."""
    detleft = (bx - ax) * (cy - ay)
    detright = (by - ay) * (cx - ax)
    det = detleft - detright
    detsum = abs(detleft) + abs(detright)
    if abs(det) > _ORIENT2D_BOUND * detsum:
        return 1 if det > 0 else -1
    return _orient2d_exact(ax, ay, bx, by, cx, cy)


def _orient2d_exact(ax, ay, bx, by, cx, cy) -> int:
    ax, ay, bx, by, cx, cy = (Fraction(v) for v in (ax, ay, bx, by, cx, cy))
    det = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)
    return (det > 0) - (det < 0)


def incircle(ax, ay, bx, by, cx, cy, dx, dy) -> int:
    """Sign of the in-circle test for CCW triangle abc: +1 when d is strictly inside."""
    adx = ax - dx
    ady = ay - dy
    bdx = bx - dx
    bdy = by - dy
    cdx = cx - dx
    cdy = cy - dy
    bdxcdy = bdx * cdy
    cdxbdy = cdx * bdy
    alift = adx * adx + ady * ady
    cdxady = cdx * ady
    adxcdy = adx * cdy
    blift = bdx * bdx + bdy * bdy
    adxbdy = adx * bdy
    bdxady = bdx * ady
    clift = cdx * cdx + cdy * cdy
    det = alift * (bdxcdy - cdxbdy) + blift * (cdxady - adxcdy) + clift * (adxbdy - bdxady)
    permanent = (
        alift * (abs(bdxcdy) + abs(cdxbdy))
        + blift * (abs(cdxady) + abs(adxcdy))
        + clift * (abs(adxbdy) + abs(bdxady))
    )
    if abs(det) > _INCIRCLE_BOUND * permanent:
        return 1 if det > 0 else -1
    return _incircle_exact(ax, ay, bx, by, cx, cy, dx, dy)


def _incircle_exact(ax, ay, bx, by, cx, cy, dx, dy) -> int:
    ax, ay, bx, by, cx, cy, dx, dy = (Fraction(v) for v in (ax, ay, bx, by, cx, cy, dx, dy))
    adx, ady = ax - dx, ay - dy
    bdx, bdy = bx - dx, by - dy
    cdx, cdy = cx - dx, cy - dy
    alift = adx * adx + ady * ady
    blift = bdx * bdx + bdy * bdy
    clift = cdx * cdx + cdy * cdy
    det = (
        alift * (bdx * cdy - cdx * bdy)
        + blift * (cdx * ady - adx * cdy)
        + clift * (adx * bdy - bdx * ady)
    )
    return (det > 0) - (det < 0)


def _dedupe(points: np.ndarray) -> list[int]:
    seen: dict[tuple[float, float], int] = {}
    order = []
    for idx, (x, y) in enumerate(points):
        key = (float(x), float(y))
        if key not in seen:
            seen[key] = idx
            order.append(idx)
    return order


def triangulate(points: np.ndarray) -> np.ndarray:
    """Delaunay-triangulate 2D points; returns (m, 3) index triples into `points`.

    Fewer than 3 distinct points, or an entirely collinear set, yields an
    empty (0, 3) result. Exact duplicates keep their lowest index. Output
    triangles are CCW, rotated to start at their smallest index, and sorted
    lexicographically so the result is a pure function of the input.
    """
    points = np.asarray(points, dtype=np.float64)
    empty = np.zeros((0, 3), dtype=np.int64)
    if points.ndim != 2 or points.shape[1] != 2:
        raise ValueError("points must have shape (n, 2)")
    keep = _dedupe(points)
    if len(keep) < 3:
        return empty
    pts = [(float(points[i, 0]), float(points[i, 1])) for i in keep]
    n = len(pts)
    if not _has_noncollinear_triple(pts):
        return empty

    xs = [p[0] for p in pts]
    ys = [p[1] for p in pts]
    cx = (min(xs) + max(xs)) / 2.0
    cy = (min(ys) + max(ys)) / 2.0
    span = max(max(xs) - min(xs), max(ys) - min(ys), 1.0)
    big = 1e9 * span
    coords = pts + [(cx - 3.0 * big, cy - big), (cx + 3.0 * big, cy - big), (cx, cy + 3.0 * big)]

    triangles: list[tuple[int, int, int]] = [(n, n + 1, n + 2)]
    for pi in range(n):
        px, py = coords[pi]
        bad = []
        good = []
        for tri in triangles:
            a, b, c = tri
            if incircle(*coords[a], *coords[b], *coords[c], px, py) > 0:
                bad.append(tri)
            else:
                good.append(tri)
        directed = set()
        for a, b, c in bad:
            for e in ((a, b), (b, c), (c, a)):
                directed.add(e)
        boundary = [(u, v) for (u, v) in directed if (v, u) not in directed]
        triangles = good
        for u, v in boundary:
            triangles.append((u, v, pi))

    real = [t for t in triangles if max(t) < n]
    real = [t for t in real if orient2d(*coords[t[0]], *coords[t[1]], *coords[t[2]]) > 0]
    real = _legalize(real, coords)

    out = []
    for a, b, c in real:
        tri = (keep[a], keep[b], keep[c])
        k = int(np.argmin(tri))
        out.append(tuple(tri[(k + j) % 3] for j in range(3)))
    out.sort()
    if not out:
        return empty
    return np.array(out, dtype=np.int64)


def _has_noncollinear_triple(pts: list[tuple[float, float]]) -> bool:
    p0 = pts[0]
    p1 = next((p for p in pts[1:] if p != p0), None)
    if p1 is None:
        return False
    return any(orient2d(*p0, *p1, *p) != 0 for p in pts[1:])


def _legalize(
    triangles: list[tuple[int, int, int]], coords: list[tuple[float, float]]
) -> list[tuple[int, int, int]]:
    """Lawson sweep: flip strict in-circle violations, canonicalize cocircular quads."""
    tris = list(triangles)
    max_passes = max(64, 4 * len(tris))
    for _ in range(max_passes):
        changed = False
        edge_map: dict[tuple[int, int], list[int]] = {}
        for ti, (a, b, c) in enumerate(tris):
            for u, v in ((a, b), (b, c), (c, a)):
                edge_map.setdefault((min(u, v), max(u, v)), []).append(ti)
        for edge, owners in edge_map.items():
            if len(owners) != 2:
                continue
            t1, t2 = owners
            u, v = edge
            c1 = next(w for w in tris[t1] if w not in edge)
            c2 = next(w for w in tris[t2] if w not in edge)
            if c1 == c2:
                continue
            s = incircle(*coords[tris[t1][0]], *coords[tris[t1][1]], *coords[tris[t1][2]], *coords[c2])
            if s > 0:
                flip = True
            elif s == 0:
                flip = min(u, v, c1, c2) in (c1, c2)
            else:
                flip = False
            if not flip:
                continue
            new1 = _oriented((c1, c2, u), coords)
            new2 = _oriented((c2, c1, v), coords)
            if new1 is None or new2 is None:
                continue
            tris[t1] = new1
            tris[t2] = new2
            changed = True
            break  # adjacency is stale after a flip; rebuild the edge map
        if not changed:
            return tris
    return tris


def _oriented(
    tri: tuple[int, int, int], coords: list[tuple[float, float]]
) -> tuple[int, int, int] | None:
    a, b, c = tri
    s = orient2d(*coords[a], *coords[b], *coords[c])
    if s > 0:
        return tri
    if s < 0:
        return (a, c, b)
    return None
