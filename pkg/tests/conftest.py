from __future__ import annotations

import struct
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))  # make oracles importable

from skyforge.splat import OccupancyGrid, SplatScene, _inflate


def make_grid(raw, resolution=0.1, origin=(0.0, 0.0, 0.0), inflation_radius=0.0) -> OccupancyGrid:
    raw = np.asarray(raw, dtype=bool)
    return OccupancyGrid(
        origin=np.asarray(origin, dtype=float),
        resolution=resolution,
        dims=raw.shape,
        raw=raw,
        occupied=_inflate(raw, resolution, inflation_radius),
        inflation_radius=inflation_radius,
    )


def make_scene(positions, opacities=None, scales=None, center=(0.0, 0.0, 0.0)) -> SplatScene:
    positions = np.atleast_2d(np.asarray(positions, dtype=float))
    n = positions.shape[0]
    if opacities is None:
        opacities = np.full(n, 0.9)
    if scales is None:
        scales = np.full((n, 3), 0.05)
    return SplatScene(
        positions=positions,
        scales=np.asarray(scales, dtype=float),
        rotations=np.tile([1.0, 0.0, 0.0, 0.0], (n, 1)),
        opacities=np.asarray(opacities, dtype=float),
        colors=np.zeros((n, 3)),
        center=np.asarray(center, dtype=float),
    )


STANDARD_FIELDS = (
    "x", "y", "z",
    "f_dc_0", "f_dc_1", "f_dc_2",
    "opacity",
    "scale_0", "scale_1", "scale_2",
    "rot_0", "rot_1", "rot_2", "rot_3",
)


def write_raw_ply(path, vertices, fields=STANDARD_FIELDS, extra_fields=()) -> None:
    """Write a binary PLY with raw (pre-activation) values for loader tests."""
    all_fields = tuple(fields) + tuple(extra_fields)
    lines = ["ply", "format binary_little_endian 1.0", f"element vertex {len(vertices)}"]
    lines += [f"property float {name}" for name in all_fields]
    lines.append("end_header")
    with Path(path).open("wb") as fh:
        fh.write(("\n".join(lines) + "\n").encode("ascii"))
        for row in vertices:
            assert len(row) == len(all_fields)
            fh.write(struct.pack(f"<{len(row)}f", *row))


def standard_vertex(x=0.0, y=0.0, z=0.0, opacity_logit=0.0, log_scale=-3.0, quat=(1, 0, 0, 0)):
    return (x, y, z, 0.1, 0.2, 0.3, opacity_logit,
            log_scale, log_scale, log_scale, *quat)


@pytest.fixture
def tmp_out(tmp_path):
    return tmp_path


TIMESTAMP_KEYS = {"started_at", "finished_at", "wall_time_s"}


def strip_timestamps(obj):
    if isinstance(obj, dict):
        return {k: strip_timestamps(v) for k, v in obj.items() if k not in TIMESTAMP_KEYS}
    if isinstance(obj, list):
        return [strip_timestamps(v) for v in obj]
    return obj


def tree_digest(root) -> dict[str, str]:
    """Relative path -> content digest, with manifest timestamps stripped."""
    import hashlib
    import json

    root = Path(root)
    digest = {}
    for p in sorted(root.rglob("*")):
        if not p.is_file():
            continue
        rel = str(p.relative_to(root))
        if p.name in ("manifest.json", "batch_manifest.json"):
            digest[rel] = json.dumps(strip_timestamps(json.loads(p.read_text())), sort_keys=True)
        else:
            digest[rel] = hashlib.sha256(p.read_bytes()).hexdigest()
    return digest


def fast_config_dict(root, **overrides) -> dict:
    """A cut-down pipeline config that keeps scene runs around a second."""
    payload = {
        "output_root": str(root),
        "workers": 1,
        "nav": {"n_sets": 1, "targets_per_set": 2},
        "render": {"width": 8, "height": 8},
    }
    payload.update(overrides)
    return payload
