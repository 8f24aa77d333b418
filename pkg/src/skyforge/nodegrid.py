"""Compiled uniform-grid neighbor index for the growing RRT* node set.

Nodes are bucketed into columns over (x, y) with per-cell linked lists, so
insertion is O(1) and there is no rebuild. Distances use the same
floating-point expression as the planner's linear scan,
sqrt((dx*dx + dy*dy) + dz*dz), so both give identical answers, including
lowest-id tie breaking.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

# Ring search stops only when the best distance is below the unexplored
# region's lower bound by this much (guards cell-assignment rounding).
_RING_GUARD = 1e-9


@njit(cache=True)
def _cell(v, origin, size, n):
    c = int(math.floor((v - origin) / size))
    if c < 0:
        return 0
    if c >= n:
        return n - 1
    return c


@njit(cache=True)
def _scan_cell(pos, head, nxt, cell, q0, q1, q2, best, bd):
    j = head[cell]
    while j >= 0:
        dx = pos[j, 0] - q0
        dy = pos[j, 1] - q1
        dz = pos[j, 2] - q2
        d = math.sqrt((dx * dx + dy * dy) + dz * dz)
        if d < bd or (d == bd and j < best):
            bd = d
            best = j
        j = nxt[j]
    return best, bd


@njit(cache=True)
def grid_nearest(pos, head, nxt, ox, oy, size, ncx, ncy, q0, q1, q2):
    cx = _cell(q0, ox, size, ncx)
    cy = _cell(q1, oy, size, ncy)
    best = -1
    bd = np.inf
    k = 0
    while True:
        x0, x1, y0, y1 = cx - k, cx + k, cy - k, cy + k
        for x in range(max(x0, 0), min(x1, ncx - 1) + 1):
            for y in range(max(y0, 0), min(y1, ncy - 1) + 1):
                if x == x0 or x == x1 or y == y0 or y == y1:
                    best, bd = _scan_cell(pos, head, nxt, x * ncy + y, q0, q1, q2, best, bd)
        if x0 <= 0 and y0 <= 0 and x1 >= ncx - 1 and y1 >= ncy - 1:
            break
        # every node outside the visited block is at least this far away in xy
        m = min(q0 - (ox + x0 * size), ox + (x1 + 1) * size - q0,
                q1 - (oy + y0 * size), oy + (y1 + 1) * size - q1)
        if best >= 0 and bd < m - _RING_GUARD:
            break
        k += 1
    return best


@njit(cache=True)
def grid_within(pos, head, nxt, ox, oy, size, ncx, ncy, q0, q1, q2, r, out):
    # one extra cell of padding absorbs rounding in the cell assignment
    xa = _cell(q0 - r, ox, size, ncx) - 1
    xb = _cell(q0 + r, ox, size, ncx) + 1
    ya = _cell(q1 - r, oy, size, ncy) - 1
    yb = _cell(q1 + r, oy, size, ncy) + 1
    count = 0
    for x in range(max(xa, 0), min(xb, ncx - 1) + 1):
        for y in range(max(ya, 0), min(yb, ncy - 1) + 1):
            j = head[x * ncy + y]
            while j >= 0:
                dx = pos[j, 0] - q0
                dy = pos[j, 1] - q1
                dz = pos[j, 2] - q2
                if math.sqrt((dx * dx + dy * dy) + dz * dz) <= r:
                    out[count] = j
                    count += 1
                j = nxt[j]
    res = out[:count].copy()
    res.sort()
    return res


class NodeGrid:
    """Column grid over the (x, y) extent of the planning bounds."""

    def __init__(self, bounds_min, bounds_max, cell_size: float, capacity: int):
        if not cell_size > 0:
            raise ValueError("cell size must be positive")
        self.ox = float(bounds_min[0])
        self.oy = float(bounds_min[1])
        self.size = float(cell_size)
        self.ncx = max(1, int(math.ceil((bounds_max[0] - bounds_min[0]) / cell_size)))
        self.ncy = max(1, int(math.ceil((bounds_max[1] - bounds_min[1]) / cell_size)))
        self.head = np.full(self.ncx * self.ncy, -1, dtype=np.int64)
        self.nxt = np.full(capacity, -1, dtype=np.int64)
        self._out = np.empty(capacity, dtype=np.int64)
        self.count = 0

    def insert(self, i: int, p) -> None:
        if i >= len(self.nxt):
            grow = max(2 * len(self.nxt), i + 1)
            self.nxt = np.concatenate([self.nxt, np.full(grow - len(self.nxt), -1, dtype=np.int64)])
            self._out = np.empty(grow, dtype=np.int64)
        cx = min(max(int(math.floor((p[0] - self.ox) / self.size)), 0), self.ncx - 1)
        cy = min(max(int(math.floor((p[1] - self.oy) / self.size)), 0), self.ncy - 1)
        c = cx * self.ncy + cy
        self.nxt[i] = self.head[c]
        self.head[c] = i
        self.count += 1

    def nearest(self, pos: np.ndarray, q) -> int:
        return int(grid_nearest(pos, self.head, self.nxt, self.ox, self.oy, self.size, self.ncx, self.ncy,
                                float(q[0]), float(q[1]), float(q[2])))

    def within(self, pos: np.ndarray, q, r: float) -> np.ndarray:
        return grid_within(pos, self.head, self.nxt, self.ox, self.oy, self.size, self.ncx, self.ncy,
                           float(q[0]), float(q[1]), float(q[2]), float(r), self._out)
