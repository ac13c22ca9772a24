"""Gaussian-splat scenes: binary PLY ingestion, occupancy grids, depth queries.

The scene file format is the standard splat vertex layout (x, y, z, opacity,
scale_0..2, rot_0..3, f_dc_0..2, binary little-endian); extra spherical-
harmonic fields are permitted and ignored. Stored opacities are logits and
stored scales are log-scales; loading applies sigmoid/exp so in-memory values
are always activated.

The occupancy grid voxelizes primitive centers (gated by an opacity
threshold) and carries two lattices: `raw` (pre-inflation) and `occupied`
(dilated by inflation_radius, the planning substrate). Inflation marks every
voxel whose center lies within inflation_radius of a raw-occupied voxel
center.
"""

from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import distance_transform_edt
from scipy.special import expit

from .cameras import CameraIntrinsics, CameraPose, camera_basis

DEPTH_INF = np.inf

REQUIRED_FIELDS = (
    "x", "y", "z",
    "opacity",
    "scale_0", "scale_1", "scale_2",
    "rot_0", "rot_1", "rot_2", "rot_3",
    "f_dc_0", "f_dc_1", "f_dc_2",
)

_PLY_TYPES = {
    "float": "<f4", "float32": "<f4",
    "double": "<f8", "float64": "<f8",
    "uchar": "u1", "uint8": "u1", "char": "i1", "int8": "i1",
    "short": "<i2", "int16": "<i2", "ushort": "<u2", "uint16": "<u2",
    "int": "<i4", "int32": "<i4", "uint": "<u4", "uint32": "<u4",
}


class SceneFormatError(ValueError):
    """Scene file violates the expected schema (missing fields, wrong format)."""


class SceneParseError(ValueError):
    """Scene file has schema-valid layout but bad values (non-finite, ...)."""


@dataclass(frozen=True)
class GaussianPrimitive:
    position: np.ndarray
    scale: np.ndarray        # linear (post-exp), meters
    rotation: np.ndarray     # unit quaternion (w, x, y, z)
    opacity: float           # post-sigmoid, in [0, 1]
    color_dc: np.ndarray


@dataclass
class SplatScene:
    """A splat scene stored as arrays, plus the scene center and bounds.

    aabb is the bounding box of primitive positions unioned with the center
    (so the center is always inside it); an empty scene has a degenerate aabb
    at the center.
    """

    positions: np.ndarray    # (N, 3)
    scales: np.ndarray       # (N, 3) linear
    rotations: np.ndarray    # (N, 4) unit quaternions
    opacities: np.ndarray    # (N,) in [0, 1]
    colors: np.ndarray       # (N, 3) SH DC term
    center: np.ndarray       # (3,)
    aabb: tuple[np.ndarray, np.ndarray] = field(init=False)

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=float)
        if len(self.positions):
            lo = np.minimum(self.positions.min(axis=0), self.center)
            hi = np.maximum(self.positions.max(axis=0), self.center)
        else:
            lo = self.center.copy()
            hi = self.center.copy()
        self.aabb = (lo, hi)

    def __len__(self) -> int:
        return int(self.positions.shape[0])

    @property
    def primitives(self) -> list[GaussianPrimitive]:
        return [
            GaussianPrimitive(
                position=self.positions[i],
                scale=self.scales[i],
                rotation=self.rotations[i],
                opacity=float(self.opacities[i]),
                color_dc=self.colors[i],
            )
            for i in range(len(self))
        ]


def _parse_ply_header(fh):
    magic = fh.readline().strip()
    if magic != b"ply":
        raise SceneFormatError("not a PLY file")
    fmt = fh.readline().split()
    if len(fmt) < 2 or fmt[0] != b"format" or fmt[1] != b"binary_little_endian":
        raise SceneFormatError("expected binary_little_endian PLY")
    elements: list[tuple[str, int, list[tuple[str, str]]]] = []
    while True:
        line = fh.readline()
        if not line:
            raise SceneFormatError("truncated header")
        parts = line.split()
        if not parts or parts[0] == b"comment":
            continue
        if parts[0] == b"end_header":
            break
        if parts[0] == b"element":
            elements.append((parts[1].decode(), int(parts[2]), []))
        elif parts[0] == b"property":
            if not elements:
                raise SceneFormatError("property before element")
            if parts[1] == b"list":
                raise SceneFormatError("list properties unsupported")
            typ = parts[1].decode()
            if typ not in _PLY_TYPES:
                raise SceneFormatError(f"unsupported property type '{typ}'")
            elements[-1][2].append((parts[-1].decode(), _PLY_TYPES[typ]))
        else:
            raise SceneFormatError(f"unexpected header line: {line.decode(errors='replace').strip()}")
    return elements


def load_scene(path, center_override=None) -> SplatScene:
    """Load a splat scene from a binary PLY file.

    Raises SceneFormatError when a required vertex field is missing (the
    message names the field) and SceneParseError on non-finite values (the
    message names the element index). The scene center defaults to the world
    origin unless overridden.
    """
    path = Path(path)
    with path.open("rb") as fh:
        elements = _parse_ply_header(fh)
        data = fh.read()
    return _scene_from_elements(elements, data, center_override)


def load_scene_bytes(blob: bytes, center_override=None) -> SplatScene:
    """load_scene for in-memory PLY bytes (e.g. a world-service response)."""
    fh = io.BytesIO(blob)
    elements = _parse_ply_header(fh)
    return _scene_from_elements(elements, fh.read(), center_override)


def _scene_from_elements(elements, data: bytes, center_override) -> SplatScene:
    vertex = next((e for e in elements if e[0] == "vertex"), None)
    if vertex is None:
        raise SceneFormatError("missing 'vertex' element")
    _, count, props = vertex
    names = [n for n, _ in props]
    for req in REQUIRED_FIELDS:
        if req not in names:
            raise SceneFormatError(f"missing required field '{req}'")

    dtype = np.dtype(props)
    if count * dtype.itemsize > len(data):
        raise SceneFormatError("truncated vertex data")
    rows = np.frombuffer(data, dtype=dtype, count=count)

    cols = {name: np.asarray(rows[name], dtype=float) for name in REQUIRED_FIELDS}
    for name in REQUIRED_FIELDS:
        bad = np.flatnonzero(~np.isfinite(cols[name]))
        if bad.size:
            raise SceneParseError(f"non-finite value in '{name}' at element {int(bad[0])}")

    positions = np.stack([cols["x"], cols["y"], cols["z"]], axis=1)
    scales = np.exp(np.stack([cols["scale_0"], cols["scale_1"], cols["scale_2"]], axis=1))
    quats = np.stack([cols["rot_0"], cols["rot_1"], cols["rot_2"], cols["rot_3"]], axis=1)
    norms = np.linalg.norm(quats, axis=1)
    degenerate = np.flatnonzero(norms < 1e-12)
    if degenerate.size:
        raise SceneParseError(f"zero-norm rotation at element {int(degenerate[0])}")
    quats = quats / norms[:, None]
    opacities = expit(cols["opacity"])
    colors = np.stack([cols["f_dc_0"], cols["f_dc_1"], cols["f_dc_2"]], axis=1)

    center = np.zeros(3) if center_override is None else np.asarray(center_override, dtype=float)
    return SplatScene(
        positions=positions, scales=scales, rotations=quats,
        opacities=opacities, colors=colors, center=center,
    )


def save_scene(scene: SplatScene, path) -> None:
    """Write a scene back to binary PLY, inverting the load-time activations."""
    n = len(scene)
    header_fields = "".join(f"property float {name}\n" for name in REQUIRED_FIELDS)
    header = (
        "ply\n"
        "format binary_little_endian 1.0\n"
        f"element vertex {n}\n"
        f"{header_fields}"
        "end_header\n"
    )
    op = np.clip(scene.opacities, 1e-7, 1.0 - 1e-7)
    logits = np.log(op / (1.0 - op))
    log_scales = np.log(np.maximum(scene.scales, 1e-12))
    table = np.empty((n, len(REQUIRED_FIELDS)), dtype="<f4")
    table[:, 0:3] = scene.positions
    table[:, 3] = logits
    table[:, 4:7] = log_scales
    table[:, 7:11] = scene.rotations
    table[:, 11:14] = scene.colors
    with Path(path).open("wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(table.tobytes())


@dataclass
class OccupancyGrid:
    """Voxel lattice over the scene with raw and inflated occupancy.

    Voxel (i, j, k) covers [origin + idx*res, origin + (idx+1)*res) and has
    its center at origin + (idx + 0.5)*res.
    """

    origin: np.ndarray
    resolution: float
    dims: tuple[int, int, int]
    raw: np.ndarray          # bool (nx, ny, nz), pre-inflation
    occupied: np.ndarray     # bool, inflated; superset of raw
    inflation_radius: float
    _raw_centers: np.ndarray | None = field(default=None, repr=False, compare=False)

    def world_to_index(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        return np.floor((pts - self.origin) / self.resolution).astype(int)

    def index_to_world(self, indices) -> np.ndarray:
        idx = np.asarray(indices, dtype=float)
        return self.origin + (idx + 0.5) * self.resolution

    def contains_index(self, indices) -> np.ndarray:
        idx = np.asarray(indices)
        return np.all((idx >= 0) & (idx < np.asarray(self.dims)), axis=-1)

    def contains_point(self, points) -> np.ndarray:
        return self.contains_index(self.world_to_index(points))

    def is_free(self, point) -> bool:
        """True iff the point's voxel is inside the grid and inflated-free."""
        idx = self.world_to_index(point)
        if not bool(self.contains_index(idx)):
            return False
        return not bool(self.occupied[tuple(idx)])

    def raw_occupied_centers(self) -> np.ndarray:
        """World centers of raw-occupied voxels, cached. Shape (M, 3)."""
        if self._raw_centers is None:
            idx = np.argwhere(self.raw)
            self._raw_centers = self.index_to_world(idx) if idx.size else np.zeros((0, 3))
        return self._raw_centers


def _inflate(raw: np.ndarray, resolution: float, inflation_radius: float) -> np.ndarray:
    if inflation_radius <= 0 or not raw.any():
        return raw.copy()
    dist = distance_transform_edt(~raw, sampling=resolution)
    # +1e-9 slop: voxels can land exactly on the radius boundary (e.g. 3 cells
    # at 0.1 m resolution with a 0.3 m radius) where bare <= is float-luck.
    return dist <= inflation_radius + 1e-9


def build_occupancy(
    scene: SplatScene,
    resolution: float = 0.1,
    opacity_threshold: float = 0.5,
    inflation_radius: float = 0.3,
) -> OccupancyGrid:
    """Voxelize primitive centers with opacity >= threshold, then inflate.

    The grid covers the scene aabb padded by the inflation radius plus two
    voxels; an empty scene yields a minimal 1x1x1 free grid at the center.
    """
    if resolution <= 0:
        raise ValueError("resolution must be positive")
    if not 0.0 <= opacity_threshold <= 1.0:
        raise ValueError("opacity_threshold must be in [0, 1]")
    if inflation_radius < 0:
        raise ValueError("inflation_radius must be non-negative")

    if len(scene) == 0:
        origin = scene.center - resolution / 2.0
        raw = np.zeros((1, 1, 1), dtype=bool)
        return OccupancyGrid(
            origin=origin, resolution=resolution, dims=(1, 1, 1),
            raw=raw, occupied=raw.copy(), inflation_radius=inflation_radius,
        )

    pad = inflation_radius + 2.0 * resolution
    lo = scene.aabb[0] - pad
    hi = scene.aabb[1] + pad
    dims = tuple(int(max(1, math.ceil(d / resolution))) for d in (hi - lo))
    raw = np.zeros(dims, dtype=bool)

    keep = scene.opacities >= opacity_threshold
    if keep.any():
        idx = np.floor((scene.positions[keep] - lo) / resolution).astype(int)
        idx = np.clip(idx, 0, np.asarray(dims) - 1)
        raw[idx[:, 0], idx[:, 1], idx[:, 2]] = True

    occupied = _inflate(raw, resolution, inflation_radius)
    return OccupancyGrid(
        origin=lo, resolution=resolution, dims=dims,
        raw=raw, occupied=occupied, inflation_radius=inflation_radius,
    )


def query_depth(scene: SplatScene, pose: CameraPose, intrinsics: CameraIntrinsics) -> np.ndarray:
    """Depth image against primitives treated as spheres of radius max(scale).

    Returns an (height, width) array of distances along each pixel ray to the
    first intersected sphere, +inf where nothing forward is hit.
    """
    h, w = intrinsics.height, intrinsics.width
    depth = np.full((h, w), DEPTH_INF)
    if len(scene) == 0:
        return depth

    forward, right, up = camera_basis(pose)
    u = (np.arange(w) + 0.5 - intrinsics.cx) / intrinsics.fx
    v = (np.arange(h) + 0.5 - intrinsics.cy) / intrinsics.fy
    uu, vv = np.meshgrid(u, v)
    rays = forward[None, :] + uu.reshape(-1, 1) * right[None, :] - vv.reshape(-1, 1) * up[None, :]
    rays /= np.linalg.norm(rays, axis=1, keepdims=True)

    radii = scene.scales.max(axis=1)
    rel = scene.positions - np.asarray(pose.position, dtype=float)
    # exact frustum-cone cull: a sphere can only meet a pixel ray if its
    # center direction is within the corner-ray angle plus its angular radius
    dist = np.linalg.norm(rel, axis=1)
    tan_u = max(intrinsics.cx, w - intrinsics.cx) / intrinsics.fx
    tan_v = max(intrinsics.cy, h - intrinsics.cy) / intrinsics.fy
    theta_max = math.atan(math.hypot(tan_u, tan_v))
    with np.errstate(invalid="ignore", divide="ignore"):
        ang_center = np.arccos(np.clip((rel @ forward) / np.maximum(dist, 1e-300), -1.0, 1.0))
        ang_radius = np.arcsin(np.clip(radii / np.maximum(dist, 1e-300), 0.0, 1.0))
    front = (dist <= radii) | (ang_center <= theta_max + ang_radius + 1e-9)
    if not front.any():
        return depth
    rel = rel[front]
    r2 = radii[front] ** 2

    b = rays @ rel.T                        # (P, N) projection of center on ray
    c = np.einsum("ij,ij->i", rel, rel) - r2  # (N,)
    disc = b * b - c[None, :]
    hit = disc >= 0.0
    sq = np.sqrt(np.where(hit, disc, 0.0))
    t_near = b - sq
    t_far = b + sq
    t = np.where(hit & (t_near > 1e-9), t_near, np.where(hit & (t_far > 1e-9), t_far, DEPTH_INF))
    return t.min(axis=1).reshape(h, w)


def save_grid_rle(grid: OccupancyGrid, path) -> None:
    """Run-length dump of the raw lattice with a JSON header line.

    Runs alternate starting with the free value; the inflated lattice is not
    stored since inflation is deterministic given the radius.
    """
    flat = grid.raw.ravel(order="C")
    changes = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    bounds = np.concatenate([[0], changes, [flat.size]])
    runs = np.diff(bounds).astype("<u4")
    first = bool(flat[0]) if flat.size else False
    header = {
        "origin": [float(x) for x in grid.origin],
        "resolution": float(grid.resolution),
        "dims": [int(d) for d in grid.dims],
        "inflation_radius": float(grid.inflation_radius),
        "first_value": first,
    }
    with Path(path).open("wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8"))
        fh.write(b"\n")
        fh.write(runs.tobytes())


def load_grid_rle(path) -> OccupancyGrid:
    with Path(path).open("rb") as fh:
        header = json.loads(fh.readline().decode("utf-8"))
        runs = np.frombuffer(fh.read(), dtype="<u4")
    dims = tuple(int(d) for d in header["dims"])
    total = int(np.prod(dims))
    flat = np.zeros(total, dtype=bool)
    value = bool(header["first_value"])
    pos = 0
    for run in runs:
        if value:
            flat[pos:pos + int(run)] = True
        pos += int(run)
        value = not value
    if pos != total:
        raise SceneFormatError("run lengths do not cover the lattice")
    raw = flat.reshape(dims)
    resolution = float(header["resolution"])
    inflation = float(header["inflation_radius"])
    return OccupancyGrid(
        origin=np.asarray(header["origin"], dtype=float),
        resolution=resolution,
        dims=dims,
        raw=raw,
        occupied=_inflate(raw, resolution, inflation),
        inflation_radius=inflation,
    )
