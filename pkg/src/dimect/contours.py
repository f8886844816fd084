"""Marching-squares iso-lines on a rectangular lattice.

Works in lattice coordinates: vertex ``(i, j)`` of the field sits at
``(x, y) = (i, j)``. Crossings are linearly interpolated along cell edges,
saddle cells are split by the sign of the cell-average, and the per-cell
segments are chained into polylines through their shared edges.
"""

from __future__ import annotations

import numpy as np

# edge pairs per case; bit 0 = (i, j), 1 = (i+1, j), 2 = (i+1, j+1), 3 = (i, j+1)
# edges: 0 bottom (y = j), 1 right (x = i+1), 2 top (y = j+1), 3 left (x = i)
_TABLE = {
    1: ((3, 0),), 2: ((0, 1),), 3: ((3, 1),), 4: ((1, 2),),
    6: ((0, 2),), 7: ((3, 2),), 8: ((2, 3),), 9: ((0, 2),),
    11: ((1, 2),), 12: ((3, 1),), 13: ((0, 1),), 14: ((3, 0),),
}
# saddles: (centre above, centre below)
_SADDLE = {
    5: (((0, 1), (2, 3)), ((3, 0), (1, 2))),
    10: (((3, 0), (1, 2)), ((0, 1), (2, 3))),
}


def _wrap(a):
    return (a + np.pi) % (2 * np.pi) - np.pi


def cell_segments(field: np.ndarray, level: float, periodic: bool = False):
    """All iso-segments of ``field`` at ``level``.

    Returns ``(points, edge_ids)``: ``points`` has shape (m, 2, 2) holding
    the two end points of each segment, ``edge_ids`` (m, 2) the global id of
    the lattice edge each end point lies on. With ``periodic`` the field is
    an angle and every cell is unwrapped around its lower-left corner.
    """
    f = np.asarray(field, dtype=float)
    n2, n3 = f.shape
    c = np.stack([f[:-1, :-1], f[1:, :-1], f[1:, 1:], f[:-1, 1:]])  # (4, n2-1, n3-1)
    lvl = np.full(c.shape[1:], float(level))
    if periodic:
        ref = c[0]
        c = ref + _wrap(c - ref)
        lvl = ref + _wrap(lvl - ref)
    above = c >= lvl
    case = above[0] * 1 + above[1] * 2 + above[2] * 4 + above[3] * 8
    # only cells the level passes through matter
    ii, jj = np.nonzero((case != 0) & (case != 15))
    c = c[:, ii, jj]
    lvl = lvl[ii, jj]
    case = case[ii, jj]
    centre_above = c.mean(axis=0) >= lvl

    # corner coordinates and the corner pair of each edge
    cx = np.array([0, 1, 1, 0])
    cy = np.array([0, 0, 1, 1])
    edge_corners = ((0, 1), (1, 2), (3, 2), (0, 3))

    def point(mask, e):
        a, b = edge_corners[e]
        va, vb = c[a][mask], c[b][mask]
        t = (lvl[mask] - va) / (vb - va)
        x = ii[mask] + cx[a] + t * (cx[b] - cx[a])
        y = jj[mask] + cy[a] + t * (cy[b] - cy[a])
        return np.stack([x, y], axis=-1)

    def edge_id(mask, e):
        i, j = ii[mask], jj[mask]
        if e == 0:
            return 2 * (i * n3 + j)
        if e == 2:
            return 2 * (i * n3 + j + 1)
        if e == 3:
            return 2 * (i * n3 + j) + 1
        return 2 * ((i + 1) * n3 + j) + 1

    pts, ids = [], []

    def emit(mask, pair):
        if not mask.any():
            return
        e1, e2 = pair
        pts.append(np.stack([point(mask, e1), point(mask, e2)], axis=1))
        ids.append(np.stack([edge_id(mask, e1), edge_id(mask, e2)], axis=1))

    for k, pairs in _TABLE.items():
        m = case == k
        for pair in pairs:
            emit(m, pair)
    for k, (if_above, if_below) in _SADDLE.items():
        m = case == k
        for pair in if_above:
            emit(m & centre_above, pair)
        for pair in if_below:
            emit(m & ~centre_above, pair)

    if not pts:
        return np.zeros((0, 2, 2)), np.zeros((0, 2), dtype=np.int64)
    return np.concatenate(pts), np.concatenate(ids)


def chain(points: np.ndarray, edge_ids: np.ndarray) -> list[np.ndarray]:
    """Join segments sharing an edge into polylines (open or closed)."""
    m = len(points)
    if m == 0:
        return []
    ids = edge_ids.tolist()
    incident: dict[int, list[int]] = {}
    for s, (e0, e1) in enumerate(ids):
        incident.setdefault(e0, []).append(s)
        incident.setdefault(e1, []).append(s)
    used = [False] * m

    def walk(seg: int, end: int) -> list[np.ndarray]:
        # follow from segment ``seg`` leaving through endpoint ``end``
        out = []
        while True:
            e = ids[seg][end]
            nxt = [s for s in incident[e] if not used[s]]
            if not nxt:
                return out
            seg = nxt[0]
            used[seg] = True
            end = 1 if ids[seg][0] == e else 0
            out.append(points[seg, end])

    lines = []
    # start from dangling ends first so open curves come out whole
    order = sorted(range(m), key=lambda s: min(len(incident[e]) for e in ids[s]))
    for s in order:
        if used[s]:
            continue
        used[s] = True
        forward = walk(s, 1)
        backward = walk(s, 0)
        verts = backward[::-1] + [points[s, 0], points[s, 1]] + forward
        lines.append(np.array(verts))
    return lines


def iso_lines(field: np.ndarray, level: float, periodic: bool = False) -> list[np.ndarray]:
    """Polylines of ``field == level`` in lattice coordinates."""
    return chain(*cell_segments(field, level, periodic))
