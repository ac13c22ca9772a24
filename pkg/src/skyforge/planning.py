"""Voxel path planning and dynamically bounded trajectory generation.

The reference planner chains three stages: 26-connected A* on the inflated
occupancy lattice (Euclidean edge costs, Euclidean heuristic), collision-
aware Laplacian smoothing of the waypoint polyline, and a trapezoidal speed
profile over arc length that respects velocity/acceleration limits with zero
speed at both endpoints. It is deliberately pluggable: anything exposing
plan_leg(grid, start, goal) -> (WaypointPath, Trajectory6DoF) can stand in
for it.
"""

from __future__ import annotations

import heapq
import itertools
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .cameras import path_headings
from .splat import OccupancyGrid


class PlanningError(RuntimeError):
    pass


@dataclass
class WaypointPath:
    waypoints: np.ndarray  # (K, 3)

    def __post_init__(self):
        self.waypoints = np.atleast_2d(np.asarray(self.waypoints, dtype=float))

    def __len__(self) -> int:
        return int(self.waypoints.shape[0])


@dataclass(frozen=True)
class PlannerLimits:
    v_max: float = 2.0
    a_max: float = 2.0
    sample_rate: float = 30.0

    def __post_init__(self):
        if min(self.v_max, self.a_max, self.sample_rate) <= 0:
            raise ValueError("planner limits must be strictly positive")


@dataclass
class Trajectory6DoF:
    """Time-stamped 6-DoF samples (roll fixed at zero, stored as arrays)."""

    times: np.ndarray       # (n,)
    positions: np.ndarray   # (n, 3)
    velocities: np.ndarray  # (n, 3)
    yaws: np.ndarray        # (n,)
    pitches: np.ndarray     # (n,)

    def __len__(self) -> int:
        return int(self.times.shape[0])

    @property
    def samples(self) -> list[dict]:
        return [
            {
                "t": float(self.times[i]),
                "position": self.positions[i],
                "velocity": self.velocities[i],
                "yaw": float(self.yaws[i]),
                "pitch": float(self.pitches[i]),
            }
            for i in range(len(self))
        ]


def path_length(path) -> float:
    """Total polyline length of a waypoint path (0 for a single waypoint)."""
    pts = np.atleast_2d(np.asarray(getattr(path, "waypoints", path), dtype=float))
    if pts.shape[0] < 2:
        return 0.0
    return float(np.linalg.norm(np.diff(pts, axis=0), axis=1).sum())


_NEIGHBORS = [
    (dx, dy, dz)
    for dx in (-1, 0, 1)
    for dy in (-1, 0, 1)
    for dz in (-1, 0, 1)
    if (dx, dy, dz) != (0, 0, 0)
]
_STEP_COST = {n: math.sqrt(n[0] ** 2 + n[1] ** 2 + n[2] ** 2) for n in _NEIGHBORS}


def _sub_offsets(offset):
    """Proper sub-moves of a diagonal step (no-corner-cutting rule).

    A diagonal move is traversable only if every voxel reachable by zeroing a
    strict nonempty subset of its components is free; the straight segment
    between the two voxel centers then never leaves free voxels.
    """
    axes = [i for i in range(3) if offset[i] != 0]
    subs = []
    for mask in range(1, 2 ** len(axes) - 1):
        sub = [0, 0, 0]
        for bit, axis in enumerate(axes):
            if mask & (1 << bit):
                sub[axis] = offset[axis]
        subs.append(tuple(sub))
    return tuple(subs)


NEIGHBOR_MOVES = tuple((off, _STEP_COST[off], _sub_offsets(off)) for off in _NEIGHBORS)


def astar(grid: OccupancyGrid, start, goal) -> WaypointPath:
    """Shortest 26-connected voxel path between the voxels containing start/goal.

    Waypoints are voxel centers and the cost metric is Euclidean distance
    between them; diagonal moves may not cut corners (see _sub_offsets), so
    segments between consecutive waypoints stay inside free voxels. Raises
    PlanningError("endpoint in collision ...") for occupied/out-of-grid
    endpoints and PlanningError("unreachable ...") naming both endpoints when
    no path exists.
    """
    start = np.asarray(start, dtype=float)
    goal = np.asarray(goal, dtype=float)
    s_idx = grid.world_to_index(start)
    g_idx = grid.world_to_index(goal)
    for name, idx in (("start", s_idx), ("goal", g_idx)):
        if not bool(grid.contains_index(idx)) or bool(grid.occupied[tuple(idx)]):
            raise PlanningError(f"endpoint in collision: {name} {np.asarray(idx).tolist()}")

    s = tuple(int(v) for v in s_idx)
    g = tuple(int(v) for v in g_idx)
    if s == g:
        return WaypointPath(grid.index_to_world(np.array([s])))

    res = grid.resolution
    occ = grid.occupied
    nx, ny, nz = grid.dims

    def h(node):
        return res * math.sqrt((node[0] - g[0]) ** 2 + (node[1] - g[1]) ** 2 + (node[2] - g[2]) ** 2)

    counter = itertools.count()  # deterministic FIFO tie-breaking
    open_heap = [(h(s), next(counter), s)]
    g_score = {s: 0.0}
    came_from: dict[tuple, tuple] = {}
    closed = set()

    while open_heap:
        _, _, cur = heapq.heappop(open_heap)
        if cur == g:
            chain = [cur]
            while cur in came_from:
                cur = came_from[cur]
                chain.append(cur)
            chain.reverse()
            return WaypointPath(grid.index_to_world(np.array(chain)))
        if cur in closed:
            continue
        closed.add(cur)
        cx, cy, cz = cur
        base = g_score[cur]
        for off, step, subs in NEIGHBOR_MOVES:
            nxt = (cx + off[0], cy + off[1], cz + off[2])
            if not (0 <= nxt[0] < nx and 0 <= nxt[1] < ny and 0 <= nxt[2] < nz):
                continue
            if occ[nxt]:
                continue
            if any(occ[cx + s[0], cy + s[1], cz + s[2]] for s in subs):
                continue
            tentative = base + res * step
            if tentative < g_score.get(nxt, math.inf):
                g_score[nxt] = tentative
                came_from[nxt] = cur
                heapq.heappush(open_heap, (tentative + h(nxt), next(counter), nxt))

    raise PlanningError(f"unreachable: start {list(s)} goal {list(g)}")


def _segment_free(grid: OccupancyGrid, a: np.ndarray, b: np.ndarray) -> bool:
    """Sample the segment at half-resolution steps; every sample must be free."""
    length = float(np.linalg.norm(b - a))
    n = max(1, int(math.ceil(length / (grid.resolution / 2.0))))
    for t in np.linspace(0.0, 1.0, n + 1):
        if not grid.is_free(a + t * (b - a)):
            return False
    return True


def laplacian_smooth(path: WaypointPath, grid: OccupancyGrid, alpha: float = 0.5, iterations: int = 10) -> WaypointPath:
    """Move interior waypoints toward their neighbor midpoint, rejecting
    updates that collide (point or adjacent segments) with the inflated grid.

    Endpoints never move and the waypoint count is preserved.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must be in (0, 1)")
    pts = path.waypoints.copy()
    if pts.shape[0] < 3:
        return WaypointPath(pts)
    for _ in range(iterations):
        for k in range(1, pts.shape[0] - 1):
            target = pts[k] + alpha * (0.5 * (pts[k - 1] + pts[k + 1]) - pts[k])
            if not grid.is_free(target):
                continue
            if not _segment_free(grid, pts[k - 1], target):
                continue
            if not _segment_free(grid, target, pts[k + 1]):
                continue
            pts[k] = target
    return WaypointPath(pts)


def _speed_profile(length: float, limits: PlannerLimits) -> tuple[float, float, float, float]:
    """Trapezoid/triangle over arc length: (v_peak, t_accel, t_cruise, total)."""
    v, a = limits.v_max, limits.a_max
    if length <= 0.0:
        return 0.0, 0.0, 0.0, 0.0
    if length < v * v / a:  # too short to reach v_max
        v_peak = math.sqrt(a * length)
        t_a = v_peak / a
        return v_peak, t_a, 0.0, 2.0 * t_a
    t_a = v / a
    t_c = (length - v * v / a) / v
    return v, t_a, t_c, 2.0 * t_a + t_c


def time_parameterize(path: WaypointPath, limits: PlannerLimits, headings: list[float]) -> Trajectory6DoF:
    """Sample a trapezoidal speed profile along the path at the given rate.

    Speed is zero at both endpoints, the velocity vector follows the segment
    tangent, yaw interpolates between waypoint headings along the shortest
    angular route, pitch is zero. |headings| must equal the waypoint count.
    """
    pts = path.waypoints
    k_pts = pts.shape[0]
    if len(headings) != k_pts:
        raise ValueError("need one heading per waypoint")

    if k_pts == 1:
        return Trajectory6DoF(
            times=np.zeros(1),
            positions=pts.copy(),
            velocities=np.zeros((1, 3)),
            yaws=np.array([headings[0]], dtype=float),
            pitches=np.zeros(1),
        )

    seg_vecs = np.diff(pts, axis=0)
    seg_lens = np.linalg.norm(seg_vecs, axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg_lens)])
    total_len = float(cum[-1])
    tangents = seg_vecs / seg_lens[:, None]
    unwrapped = np.unwrap(np.asarray(headings, dtype=float))

    v_peak, t_a, t_c, total_t = _speed_profile(total_len, limits)
    dt = 1.0 / limits.sample_rate
    ts = np.arange(0.0, total_t, dt)
    if ts.size == 0 or total_t - ts[-1] > 1e-9:
        ts = np.append(ts, total_t)

    a = limits.a_max
    times, positions, velocities, yaws = [], [], [], []
    for t in ts:
        if t < t_a:
            speed = a * t
            s = 0.5 * a * t * t
        elif t < t_a + t_c:
            speed = v_peak
            s = 0.5 * a * t_a * t_a + v_peak * (t - t_a)
        else:
            td = total_t - t
            speed = a * td
            s = total_len - 0.5 * a * td * td
        s = min(max(s, 0.0), total_len)
        seg = min(int(np.searchsorted(cum, s, side="right")) - 1, k_pts - 2)
        seg = max(seg, 0)
        frac = (s - cum[seg]) / seg_lens[seg]
        positions.append(pts[seg] + frac * seg_vecs[seg])
        velocities.append(speed * tangents[seg])
        yaws.append(float(np.interp(s, cum, unwrapped)))
        times.append(float(t))

    velocities[-1] = np.zeros(3)  # exact rest at arrival
    return Trajectory6DoF(
        times=np.asarray(times),
        positions=np.asarray(positions),
        velocities=np.asarray(velocities),
        yaws=np.asarray(yaws),
        pitches=np.zeros(len(times)),
    )


@dataclass
class ReferencePlanner:
    """A*, smoothing and time-parameterization behind the planner interface."""

    limits: PlannerLimits
    smooth_alpha: float = 0.5
    smooth_iterations: int = 10
    heading_window: int = 5

    def plan_leg(self, grid: OccupancyGrid, start, goal) -> tuple[WaypointPath, Trajectory6DoF]:
        raw = astar(grid, start, goal)
        smooth = laplacian_smooth(raw, grid, self.smooth_alpha, self.smooth_iterations)
        headings = path_headings(smooth.waypoints, self.heading_window)
        return smooth, time_parameterize(smooth, self.limits, headings)


def write_trajectory_jsonl(trajectory: Trajectory6DoF, path) -> None:
    """One sample per line: {t, position, velocity, yaw, pitch}; SI units, radians."""
    with Path(path).open("w", encoding="utf-8") as fh:
        for i in range(len(trajectory)):
            fh.write(json.dumps({
                "t": float(trajectory.times[i]),
                "position": [float(v) for v in trajectory.positions[i]],
                "velocity": [float(v) for v in trajectory.velocities[i]],
                "yaw": float(trajectory.yaws[i]),
                "pitch": float(trajectory.pitches[i]),
            }))
            fh.write("\n")


def read_trajectory_jsonl(path) -> Trajectory6DoF:
    times, positions, velocities, yaws, pitches = [], [], [], [], []
    with Path(path).open("r", encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            times.append(rec["t"])
            positions.append(rec["position"])
            velocities.append(rec["velocity"])
            yaws.append(rec["yaw"])
            pitches.append(rec["pitch"])
    return Trajectory6DoF(
        times=np.asarray(times, dtype=float),
        positions=np.asarray(positions, dtype=float).reshape(-1, 3),
        velocities=np.asarray(velocities, dtype=float).reshape(-1, 3),
        yaws=np.asarray(yaws, dtype=float),
        pitches=np.asarray(pitches, dtype=float),
    )
