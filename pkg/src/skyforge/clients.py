"""Pluggable clients for the three external services, with deterministic mocks.

The pipeline talks to a world generator, a 3D detector, and a language
annotator through small client objects bundled in ClientBundle. Mock
implementations are pure functions of (configuration, seed, input) so
repeated calls are byte-identical; real variants speak JSON over HTTP with
per-call timeout and bounded retry. Service endpoints come from
configuration or the FLYMIRAGE_WORLD_URL / FLYMIRAGE_DETECT_URL /
FLYMIRAGE_LLM_URL environment variables.
"""

from __future__ import annotations

import base64
import hashlib
import json
import logging
import math
import os
import random
import time
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import httpx
import numpy as np

from .annotate import Box3D
from .cameras import CameraIntrinsics, CameraPose, camera_basis
from .navigation import NavTarget, PromptVariant, QualityVerdict
from .splat import SplatScene, load_scene_bytes

logger = logging.getLogger(__name__)

ENV_WORLD_URL = "FLYMIRAGE_WORLD_URL"
ENV_DETECT_URL = "FLYMIRAGE_DETECT_URL"
ENV_LLM_URL = "FLYMIRAGE_LLM_URL"

_OBJECT_VOCABULARY = [
    ("sofa", ("green", "red", "beige", None)),
    ("chair", ("blue", "wooden", None)),
    ("bookshelf", ("tall", "oak", None)),
    ("table", ("round", "glass", None)),
    ("cabinet", ("metal", "white", None)),
    ("crate", ("yellow", "plastic", None)),
    ("lamp", ("brass", None)),
    ("plant", ("leafy", "potted", None)),
    ("monitor", ("black", None)),
    ("ladder", ("orange", None)),
    ("barrel", ("rusty", "blue", None)),
    ("bench", ("stone", "wooden", None)),
    ("cart", ("steel", None)),
    ("sign", ("lit", None)),
    ("vending machine", ("red", None)),
]


class ServiceError(RuntimeError):
    """Transport or HTTP failure talking to an external service."""

    def __init__(self, endpoint: str, status: int | None = None, detail: str = ""):
        msg = f"service call to {endpoint} failed"
        if status is not None:
            msg += f" with status {status}"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)
        self.endpoint = endpoint
        self.status = status


@dataclass(frozen=True)
class TaxonomyCategory:
    name: str
    subcategories: tuple[str, ...]


@dataclass(frozen=True)
class SceneTaxonomy:
    categories: tuple[TaxonomyCategory, ...]

    def __post_init__(self):
        names = [c.name for c in self.categories]
        if len(set(names)) != len(names):
            raise ValueError("category names must be unique")
        for cat in self.categories:
            if not cat.subcategories:
                raise ValueError(f"category '{cat.name}' has no subcategories")
            if len(set(cat.subcategories)) != len(cat.subcategories):
                raise ValueError(f"duplicate subcategories in '{cat.name}'")


@dataclass(frozen=True)
class SceneSpec:
    category: str
    subcategory: str
    description: str
    image_ref: str | None = None


@dataclass(frozen=True)
class DetectionRequest:
    depth: np.ndarray | None
    pose: CameraPose
    intrinsics: CameraIntrinsics
    frame_id: int
    rgb: str | None = None  # opaque handle


@dataclass(frozen=True)
class DetectionResponse:
    boxes: list[Box3D]


def load_taxonomy(path) -> SceneTaxonomy:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    return _taxonomy_from_dict(payload)


def default_taxonomy() -> SceneTaxonomy:
    payload = json.loads(resources.files("skyforge.data").joinpath("taxonomy.json").read_text(encoding="utf-8"))
    return _taxonomy_from_dict(payload)


def _taxonomy_from_dict(payload: dict) -> SceneTaxonomy:
    return SceneTaxonomy(
        categories=tuple(
            TaxonomyCategory(name=c["name"], subcategories=tuple(c["subcategories"]))
            for c in payload["categories"]
        )
    )


def sample_scene_type(taxonomy: SceneTaxonomy, rng_seed: int) -> tuple[str, str]:
    """Two-step draw: uniform category, then uniform subcategory within it.

    The decoupling keeps the category marginal uniform no matter how skewed
    the subcategory counts are.
    """
    rng = random.Random(rng_seed)
    cat = taxonomy.categories[rng.randrange(len(taxonomy.categories))]
    sub = cat.subcategories[rng.randrange(len(cat.subcategories))]
    return cat.name, sub


def make_scene_spec(taxonomy: SceneTaxonomy, seed: int) -> SceneSpec:
    """Deterministic stand-in for the LLM environment designer."""
    category, subcategory = sample_scene_type(taxonomy, seed)
    description = (
        f"A {subcategory} within the {category} family, with assorted fixtures "
        f"around an open central flying space (variant {seed % 1000:03d})."
    )
    return SceneSpec(
        category=category,
        subcategory=subcategory,
        description=description,
        image_ref=f"mock://image/{seed & 0xFFFFFFFF:08x}",
    )


def spec_seed(spec: SceneSpec) -> int:
    digest = hashlib.sha256(f"{spec.category}|{spec.subcategory}|{spec.description}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


@dataclass
class MockObject:
    label: str
    appearance: str | None
    box: Box3D


@dataclass
class MockWorldState:
    seed: int
    objects: list[MockObject]


def _lattice(u_range, v_range, spacing, rng, jitter=0.02):
    u = np.arange(u_range[0], u_range[1] + 1e-9, spacing)
    v = np.arange(v_range[0], v_range[1] + 1e-9, spacing)
    uu, vv = np.meshgrid(u, v)
    pts = np.stack([uu.ravel(), vv.ravel()], axis=1)
    return pts + rng.uniform(-jitter, jitter, pts.shape)


class MockWorldClient:
    """Procedural room-shell scenes with labeled objects and retained ground truth.

    The scene is a box room (floor + four walls as primitive lattices) around
    an object-free central sphere, with 5..30 labeled objects split between a
    near band (exact detections from the center orbit) and a far band (where
    detector noise kicks in).
    """

    def __init__(self, clear_radius: float = 1.2, min_objects: int = 5, max_objects: int = 30):
        self.clear_radius = clear_radius
        self.min_objects = min_objects
        self.max_objects = max_objects
        self.state: MockWorldState | None = None

    def generate(self, spec: SceneSpec) -> SplatScene:
        seed = spec_seed(spec)
        rng = np.random.default_rng(seed)
        half_x = rng.uniform(4.6, 5.8)
        half_y = rng.uniform(4.6, 5.8)
        half_z = 1.5

        positions, scales, opacities = [], [], []

        def add_shell(pts3):
            positions.append(pts3)
            scales.append(np.full((pts3.shape[0], 3), 0.12))
            opacities.append(np.full(pts3.shape[0], 0.95))

        floor = _lattice((-half_x, half_x), (-half_y, half_y), 0.3, rng)
        add_shell(np.column_stack([floor, np.full(floor.shape[0], -half_z)]))
        for sign in (-1.0, 1.0):
            wall = _lattice((-half_y, half_y), (-half_z, half_z), 0.25, rng)
            add_shell(np.column_stack([np.full(wall.shape[0], sign * half_x), wall[:, 0], wall[:, 1]]))
            wall = _lattice((-half_x, half_x), (-half_z, half_z), 0.25, rng)
            add_shell(np.column_stack([wall[:, 0], np.full(wall.shape[0], sign * half_y), wall[:, 1]]))

        n_objects = int(rng.integers(self.min_objects, self.max_objects + 1))
        n_far = max(3, n_objects // 2)
        r_max = min(half_x, half_y) - 1.0
        objects: list[MockObject] = []
        for i in range(n_objects):
            he = rng.uniform(0.18, 0.45, 3)
            sphere_r = float(np.linalg.norm(he))
            far = i < n_far
            lo = 3.3 if far else self.clear_radius + sphere_r + 0.1
            hi = r_max if far else 3.0
            lo = min(lo, hi - 1e-3)
            center = None
            separation = 0.3
            for attempt in range(1000):
                if attempt and attempt % 200 == 0:
                    separation *= 0.5  # dense draws: relax spacing rather than fail
                radius = rng.uniform(lo, hi)
                angle = rng.uniform(0.0, 2.0 * math.pi)
                z = rng.uniform(-0.7, 0.7)
                cand = np.array([radius * math.sin(angle), radius * math.cos(angle), z])
                if np.linalg.norm(cand) - sphere_r < self.clear_radius:
                    continue
                ok = all(
                    np.linalg.norm(cand - o.box.center) >= sphere_r + np.linalg.norm(o.box.half_extents) + separation
                    for o in objects
                )
                if ok:
                    center = cand
                    break
            if center is None:
                continue
            label, attrs = _OBJECT_VOCABULARY[int(rng.integers(len(_OBJECT_VOCABULARY)))]
            appearance_word = attrs[int(rng.integers(len(attrs)))]
            appearance = f"{appearance_word} {label}" if appearance_word else None
            objects.append(MockObject(label=label, appearance=appearance, box=Box3D(
                label=label, center=center, half_extents=he, yaw=0.0, confidence=1.0,
            )))
            local = rng.uniform(-1.0, 1.0, (12, 3)) * he
            positions.append(center + local)
            scales.append(rng.uniform(0.05, 0.1, (12, 3)))
            opacities.append(rng.uniform(0.8, 0.98, 12))

        pos = np.concatenate(positions)
        n = pos.shape[0]
        scene = SplatScene(
            positions=pos,
            scales=np.concatenate(scales),
            rotations=np.tile(np.array([1.0, 0.0, 0.0, 0.0]), (n, 1)),
            opacities=np.concatenate(opacities),
            colors=np.tile(np.array([0.5, 0.5, 0.5]), (n, 1)),
            center=np.zeros(3),
        )
        self.state = MockWorldState(seed=seed, objects=objects)
        return scene


class MockDetectorClient:
    """Frustum-culled ground-truth boxes with distance-growing center noise.

    Noise sigma = sigma0 * max(0, camera_distance - d_th1); detections within
    d_th1 of the camera are exact. Deterministic given (scene seed, frame id,
    object index).
    """

    def __init__(self, world: MockWorldClient, sigma0: float = 0.2, d_th1: float = 3.0):
        self.world = world
        self.sigma0 = sigma0
        self.d_th1 = d_th1

    def detect(self, request: DetectionRequest) -> DetectionResponse:
        state = self.world.state
        if state is None:
            raise RuntimeError("detector mock requires a generated scene")
        forward, right, up = camera_basis(request.pose)
        intr = request.intrinsics
        cam = np.asarray(request.pose.position, dtype=float)
        boxes = []
        for i, obj in enumerate(state.objects):
            rel = obj.box.center - cam
            f = float(rel @ forward)
            if f < 0.05:
                continue
            u = intr.cx + intr.fx * float(rel @ right) / f
            v = intr.cy - intr.fy * float(rel @ up) / f
            if not (0.0 <= u < intr.width and 0.0 <= v < intr.height):
                continue
            dist = float(np.linalg.norm(rel))
            sigma = self.sigma0 * max(0.0, dist - self.d_th1)
            if sigma > 0.0:
                rng = np.random.default_rng(np.random.SeedSequence([state.seed, int(request.frame_id), i]))
                noise = rng.normal(0.0, sigma, 3)
            else:
                noise = np.zeros(3)
            boxes.append(Box3D(
                label=obj.label,
                center=obj.box.center + noise,
                half_extents=obj.box.half_extents.copy(),
                yaw=obj.box.yaw,
                confidence=1.0 / (1.0 + sigma),
                source_frame=request.frame_id,
            ))
        return DetectionResponse(boxes=boxes)


class MockLanguageClient:
    """Templated quality verdicts and prompt variants.

    Accepts every episode unless a fault is configured: either a forced
    rejection, or a visibility rule rejecting episodes where too many frames
    have too much infinite depth.
    """

    def __init__(
        self,
        world: MockWorldClient | None = None,
        force_reject_reason: str | None = None,
        max_infinite_fraction: float | None = None,
        max_bad_frame_fraction: float = 0.5,
        neighbor_radius: float = 2.0,
    ):
        self.world = world
        self.force_reject_reason = force_reject_reason
        self.max_infinite_fraction = max_infinite_fraction
        self.max_bad_frame_fraction = max_bad_frame_fraction
        self.neighbor_radius = neighbor_radius

    def assess_quality(self, frames: list[dict]) -> QualityVerdict:
        if not frames:
            return QualityVerdict(accepted=False, reason="no frames")
        if self.force_reject_reason is not None:
            return QualityVerdict(accepted=False, reason=self.force_reject_reason)
        if self.max_infinite_fraction is not None:
            bad = sum(1 for f in frames if 1.0 - f.get("finite_depth_fraction", 1.0) > self.max_infinite_fraction)
            if bad / len(frames) > self.max_bad_frame_fraction:
                return QualityVerdict(accepted=False, reason=f"poor visibility in {bad}/{len(frames)} sampled frames")
        return QualityVerdict(accepted=True, reason="ok")

    def _appearance_for(self, box: Box3D) -> str | None:
        if self.world is None or self.world.state is None:
            return None
        best, best_dist = None, 0.75
        for obj in self.world.state.objects:
            if obj.label != box.label or obj.appearance is None:
                continue
            d = float(np.linalg.norm(obj.box.center - box.center))
            if d < best_dist:
                best, best_dist = obj.appearance, d
        return best

    def generate_prompts(self, target: NavTarget, context: list[Box3D]) -> list[PromptVariant]:
        label = target.box.label
        variants = [PromptVariant("object_centered", f"Find the {label}.")]
        neighbor, best = None, self.neighbor_radius
        for box in context:
            d = float(np.linalg.norm(box.center - target.box.center))
            if d <= best:
                neighbor, best = box, d
        if neighbor is not None:
            variants.append(PromptVariant("relative_positioned", f"Go to the {label} next to the {neighbor.label}."))
        appearance = self._appearance_for(target.box)
        if appearance is not None:
            variants.append(PromptVariant("appearance_centered", f"Navigate to the {appearance}."))
        return variants


@dataclass
class ClientBundle:
    world: object
    detector: object
    language: object


def mock_clients(sigma0: float = 0.2, d_th1: float = 3.0, **language_kwargs) -> ClientBundle:
    world = MockWorldClient()
    return ClientBundle(
        world=world,
        detector=MockDetectorClient(world, sigma0=sigma0, d_th1=d_th1),
        language=MockLanguageClient(world=world, **language_kwargs),
    )


# --- real-service variants (JSON over HTTP, bounded retry) -----------------


def _post_with_retry(
    url: str,
    payload: dict,
    timeout: float,
    retries: int,
    backoff: float,
    transport: httpx.BaseTransport | None = None,
) -> httpx.Response:
    """POST with bounded retry and exponential backoff.

    5xx and transport errors are retried up to `retries` attempts; 4xx fail
    immediately. The final failure surfaces as ServiceError carrying the
    endpoint and status.
    """
    last_exc: Exception | None = None
    for attempt in range(retries):
        try:
            with httpx.Client(transport=transport, timeout=timeout) as client:
                response = client.post(url, json=payload)
            if response.status_code >= 500:
                last_exc = ServiceError(url, response.status_code, response.text[:200])
            elif response.status_code >= 400:
                raise ServiceError(url, response.status_code, response.text[:200])
            else:
                return response
        except ServiceError:
            raise
        except httpx.HTTPError as exc:
            last_exc = exc
        if attempt < retries - 1:
            delay = backoff * (2 ** attempt)
            logger.warning("retrying %s after failure (%s), sleeping %.2fs", url, last_exc, delay)
            time.sleep(delay)
    if isinstance(last_exc, ServiceError):
        raise last_exc
    raise ServiceError(url, detail=str(last_exc))


def _pose_payload(pose: CameraPose) -> dict:
    return {"position": [float(v) for v in pose.position], "yaw": float(pose.yaw), "pitch": float(pose.pitch)}


@dataclass
class HttpWorldClient:
    endpoint: str
    timeout: float = 60.0
    retries: int = 3
    backoff: float = 0.5
    transport: httpx.BaseTransport | None = None

    def generate(self, spec: SceneSpec) -> SplatScene:
        payload = {
            "category": spec.category,
            "subcategory": spec.subcategory,
            "description": spec.description,
            "image_ref": spec.image_ref,
        }
        response = _post_with_retry(self.endpoint, payload, self.timeout, self.retries, self.backoff, self.transport)
        return load_scene_bytes(response.content)


@dataclass
class HttpDetectorClient:
    endpoint: str
    timeout: float = 30.0
    retries: int = 3
    backoff: float = 0.5
    transport: httpx.BaseTransport | None = None

    def detect(self, request: DetectionRequest) -> DetectionResponse:
        intr = request.intrinsics
        payload = {
            "frame_id": request.frame_id,
            "rgb": request.rgb,
            "pose": _pose_payload(request.pose),
            "intrinsics": {"fx": intr.fx, "fy": intr.fy, "cx": intr.cx, "cy": intr.cy,
                           "width": intr.width, "height": intr.height},
        }
        if request.depth is not None:
            depth32 = np.ascontiguousarray(request.depth, dtype="<f4")
            payload["depth_shape"] = list(depth32.shape)
            payload["depth_b64"] = base64.b64encode(depth32.tobytes()).decode("ascii")
        response = _post_with_retry(self.endpoint, payload, self.timeout, self.retries, self.backoff, self.transport)
        boxes = [
            Box3D(
                label=b["label"],
                center=b["center"],
                half_extents=b["half_extents"],
                yaw=b.get("yaw", 0.0),
                confidence=b.get("confidence", 1.0),
                source_frame=request.frame_id,
            )
            for b in response.json().get("boxes", [])
        ]
        return DetectionResponse(boxes=boxes)


@dataclass
class HttpLanguageClient:
    endpoint: str
    timeout: float = 30.0
    retries: int = 3
    backoff: float = 0.5
    transport: httpx.BaseTransport | None = None

    def assess_quality(self, frames: list[dict]) -> QualityVerdict:
        response = _post_with_retry(
            f"{self.endpoint.rstrip('/')}/quality", {"frames": frames},
            self.timeout, self.retries, self.backoff, self.transport,
        )
        body = response.json()
        return QualityVerdict(accepted=bool(body["accepted"]), reason=str(body.get("reason", "")))

    def generate_prompts(self, target: NavTarget, context: list[Box3D]) -> list[PromptVariant]:
        payload = {
            "target": {"label": target.box.label, "center": [float(v) for v in target.box.center]},
            "context": [{"label": b.label, "center": [float(v) for v in b.center]} for b in context],
        }
        response = _post_with_retry(
            f"{self.endpoint.rstrip('/')}/prompts", payload,
            self.timeout, self.retries, self.backoff, self.transport,
        )
        return [PromptVariant(v["style"], v["text"]) for v in response.json().get("variants", [])][:3]


def clients_from_settings(settings) -> ClientBundle:
    """Build the bundle from a client settings object (see config.ClientSettings)."""
    if settings.mode == "mock":
        return mock_clients(sigma0=settings.detector_sigma0, d_th1=settings.detector_d_th1)
    world_url = os.environ.get(ENV_WORLD_URL, settings.world_url)
    detect_url = os.environ.get(ENV_DETECT_URL, settings.detect_url)
    llm_url = os.environ.get(ENV_LLM_URL, settings.llm_url)
    missing = [name for name, url in (("world", world_url), ("detect", detect_url), ("llm", llm_url)) if not url]
    if missing:
        raise ValueError(f"real-client mode requires endpoints for: {', '.join(missing)}")
    kwargs = dict(timeout=settings.timeout_s, retries=settings.retries, backoff=settings.backoff_s)
    return ClientBundle(
        world=HttpWorldClient(world_url, **kwargs),
        detector=HttpDetectorClient(detect_url, **kwargs),
        language=HttpLanguageClient(llm_url, **kwargs),
    )
