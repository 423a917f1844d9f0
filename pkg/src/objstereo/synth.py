"""Deterministic synthetic stereo scenes: textured ground, back wall and boxes.

Both views are ray cast against the same analytic surfaces, so the left
disparity is exact (f*b/z at every pixel centre) and the right image is the
left image warped by it wherever a surface point is visible in both views.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from .detection.boxes import DIFFICULTIES, DetectionLabelSet, ObjectBox
from .geometry import Camera

CAMERA_HEIGHT = 1.65
VEHICLE_SIZE = (1.6, 1.5, 3.9)  # mean (w, h, l)
MIN_VISIBLE = 50
SUPERSAMPLE = 2


@dataclass
class BoxPlacement:
    center: tuple  # metric (x, y, z), geometric centre
    size: tuple  # (w, h, l)
    yaw: float

    def as_object(self, camera=None):
        uvd = tuple(camera.project(self.center)) if camera is not None else None
        return ObjectBox(self.center, self.size, self.yaw, 1.0, center_uvd=uvd)


@dataclass
class SceneSpec:
    seed: int
    camera: Camera = field(default_factory=Camera)
    boxes: list = field(default_factory=list)
    wall_depth: float | None = 35.0  # fronto-parallel back wall; None for none
    ground: bool = True
    texture_scale: float = 1.0  # base texture frequency in cycles per metre
    octaves: int = 5
    d_max: int = 48

    def validate(self):
        cam = self.camera
        for i, b in enumerate(self.boxes):
            corners = b.as_object().corners()
            if np.any(corners[:, 2] <= 0):
                raise ValueError(f"box {i} is not in front of the cameras")
            d = cam.fb / corners[:, 2]
            if d.min() < 1 or d.max() > self.d_max - 1:
                raise ValueError(f"box {i} disparity range [{d.min():.2f}, {d.max():.2f}] "
                                 f"outside [1, {self.d_max - 1}]")
        if self.wall_depth is not None and self.camera.fb / self.wall_depth >= self.d_max:
            raise ValueError("back wall is too close for the disparity range")
        if self.wall_depth is None and not self.ground and not self.boxes:
            raise ValueError("scene has no surfaces")


@dataclass
class RenderedScene:
    left: np.ndarray
    right: np.ndarray
    disparity: np.ndarray  # left frame, dense
    occlusion: np.ndarray  # True where the left pixel is not visible in the right view
    labels: DetectionLabelSet
    camera: Camera
    spec: SceneSpec | None = None
    stats: list = field(default_factory=list)  # per-box visibility figures


# ---------------------------------------------------------------- texture

class ValueNoise:
    """Band-limited multi-octave value noise on 2D surface coordinates."""

    def __init__(self, seed, octaves=5, base=1.0, table=256):
        rng = np.random.default_rng(seed)
        self.tables = rng.uniform(-1.0, 1.0, size=(octaves, table, table))
        self.freqs = base * 2.0 ** np.arange(octaves)
        self.amps = 0.6 ** np.arange(octaves)
        self.size = table

    def __call__(self, p, q, footprint, layer=0):
        """Noise at surface points; octaves finer than the pixel footprint fade out."""
        out = np.zeros_like(p)
        norm = np.zeros_like(p)
        for k, (f, a) in enumerate(zip(self.freqs, self.amps)):
            cyc = f * footprint  # cycles per pixel
            w = a * np.clip(2.0 - 8.0 * cyc, 0.0, 1.0) if k else np.full_like(p, a)
            if not np.any(w > 0):
                continue
            out += w * self._octave(k, p * f + 17.0 * layer, q * f + 31.0 * layer)
            norm += a
        return out / np.maximum(norm, 1e-12)

    def _octave(self, k, x, y):
        x0 = np.floor(x)
        y0 = np.floor(y)
        tx = x - x0
        ty = y - y0
        tx = tx * tx * (3 - 2 * tx)
        ty = ty * ty * (3 - 2 * ty)
        i = x0.astype(np.int64) % self.size
        j = y0.astype(np.int64) % self.size
        i1 = (i + 1) % self.size
        j1 = (j + 1) % self.size
        t = self.tables[k]
        top = t[j, i] * (1 - tx) + t[j, i1] * tx
        bot = t[j1, i] * (1 - tx) + t[j1, i1] * tx
        return top * (1 - ty) + bot * ty


# ---------------------------------------------------------------- ray casting

def _rays(camera, scale=1):
    """Pixel ray directions (z = 1) on a scale x scale supersampling grid."""
    offs = (np.arange(scale) + 0.5) / scale - 0.5
    u = (np.arange(camera.width)[None, :, None] + offs[None, None, :]).reshape(-1)
    v = (np.arange(camera.height)[:, None, None] + offs[None, :, None]).reshape(-1)
    uu, vv = np.meshgrid(u, v)
    return (uu - camera.cx) / camera.focal, (vv - camera.cy) / camera.focal


def _box_hit(box, ox, rx, ry):
    """Slab test of rays o + t * (rx, ry, 1) against an oriented box.

    Returns entry distance t (inf on a miss), the local hit point (a, y, b)
    and the index of the entered face axis.
    """
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    cx, cy, cz = box.center
    px, py, pz = ox - cx, -cy, -cz
    # local coordinates: a along the length, b along the width
    oa, ob = c * px - s * pz, s * px + c * pz
    da, db = c * rx - s * 1.0, s * rx + c * 1.0
    half = (box.l / 2, box.h / 2, box.w / 2)
    origin = (oa, np.full_like(rx, py), ob)
    direc = (da, ry, db)
    t_near = np.full(rx.shape, -np.inf)
    t_far = np.full(rx.shape, np.inf)
    face = np.zeros(rx.shape, dtype=np.int64)
    with np.errstate(divide="ignore", invalid="ignore"):
        for axis in range(3):
            o, d, h = origin[axis], direc[axis], half[axis]
            t1 = (-h - o) / d
            t2 = (h - o) / d
            lo = np.minimum(t1, t2)
            hi = np.maximum(t1, t2)
            parallel = np.abs(d) < 1e-12
            inside = np.abs(o) <= h
            lo = np.where(parallel, np.where(inside, -np.inf, np.inf), lo)
            hi = np.where(parallel, np.where(inside, np.inf, -np.inf), hi)
            face = np.where(lo > t_near, axis, face)
            t_near = np.maximum(t_near, lo)
            t_far = np.minimum(t_far, hi)
    hit = (t_near <= t_far) & (t_near > 1e-6)
    t = np.where(hit, t_near, np.inf)
    tt = np.where(hit, t, 0.0)
    local = (origin[0] + tt * direc[0], origin[1] + tt * direc[1], origin[2] + tt * direc[2])
    return t, local, face


def _cast(spec, noise, ox, scale):
    """Depth, surface id and texture value for one view (flat arrays)."""
    cam = spec.camera
    rx, ry = _rays(cam, scale)
    shape = rx.shape
    depth = np.full(shape, np.inf)
    sid = np.full(shape, -1, dtype=np.int64)
    p = np.zeros(shape)
    q = np.zeros(shape)
    slant = np.ones(shape)
    layer = np.zeros(shape)
    if spec.wall_depth is not None:
        z = spec.wall_depth
        depth[:] = z
        sid[:] = 0
        p = ox + rx * z
        q = ry * z
        layer[:] = 1
    if spec.ground:
        with np.errstate(divide="ignore"):
            tg = np.where(ry > 1e-9, CAMERA_HEIGHT / ry, np.inf)
        m = tg < depth
        depth = np.where(m, tg, depth)
        sid = np.where(m, 1, sid)
        p = np.where(m, ox + rx * tg, p)
        q = np.where(m, tg, q)
        # foreshortening along z on the ground plane
        slant = np.where(m, np.maximum(1.0, tg / CAMERA_HEIGHT), slant)
        layer = np.where(m, 2, layer)
    for k, box in enumerate(spec.boxes):
        t, (la, ly, lb), face = _box_hit(box.as_object(), ox, rx, ry)
        m = t < depth
        depth = np.where(m, t, depth)
        sid = np.where(m, 2 + k, sid)
        # face-aligned 2D coordinates
        fp = np.where(face == 0, lb, la)
        fq = np.where(face == 1, lb, ly)
        p = np.where(m, fp, p)
        q = np.where(m, fq, q)
        slant = np.where(m, 1.5, slant)
        layer = np.where(m, 3 + 4 * k + face, layer)
    footprint = depth / cam.focal * slant / scale
    footprint = np.where(np.isfinite(footprint), footprint, 1e3)
    value = noise(p, q, footprint, layer)
    albedo = 0.5 + 0.07 * np.sin(1.7 * layer + spec.seed % 7)
    tex = np.clip(albedo + 0.5 * value, 0.0, 1.0)
    tex = np.where(np.isfinite(depth), tex, 0.5)
    return depth.reshape(shape), sid.reshape(shape), tex.reshape(shape)


def _downsample(a, scale):
    if scale == 1:
        return a
    H, W = a.shape[0] // scale, a.shape[1] // scale
    return a.reshape(H, scale, W, scale).mean(axis=(1, 3))


def _occlusion(disp_left, disp_right, tol=0.5):
    """Left pixels without a consistent match in the right view."""
    H, W = disp_left.shape
    u = np.arange(W)[None, :]
    x = u - disp_left
    occ = x < 0
    x0 = np.clip(np.floor(x), 0, W - 1).astype(np.int64)
    x1 = np.clip(np.ceil(x), 0, W - 1).astype(np.int64)
    rows = np.arange(H)[:, None]
    ok = (np.abs(disp_right[rows, x0] - disp_left) <= tol) | (np.abs(disp_right[rows, x1] - disp_left) <= tol)
    return occ | ~ok


def _box_pixels(box, cam):
    """Left-image pixel count of a box rendered on its own (centre rays)."""
    rx, ry = _rays(cam, 1)
    t, _, _ = _box_hit(box.as_object(), 0.0, rx, ry)
    return np.isfinite(t)


def truncation(box, cam):
    """Fraction of the projected corner bbox that falls outside the image."""
    corners = box.as_object().corners()
    uvd = cam.project(corners)
    u0, v0 = uvd[:, 0].min(), uvd[:, 1].min()
    u1, v1 = uvd[:, 0].max(), uvd[:, 1].max()
    area = max(u1 - u0, 1e-9) * max(v1 - v0, 1e-9)
    cu0, cv0 = max(u0, -0.5), max(v0, -0.5)
    cu1, cv1 = min(u1, cam.width - 0.5), min(v1, cam.height - 0.5)
    inside = max(cu1 - cu0, 0) * max(cv1 - cv0, 0)
    return 1.0 - inside / area


def difficulty_tag(occluded, truncated, depth):
    """Stand-in for KITTI difficulty: occlusion fraction, truncation and range."""
    if occluded <= 0.15 and truncated <= 0.15 and depth <= 15.0:
        return "easy"
    if occluded <= 0.5 and truncated <= 0.3 and depth <= 25.0:
        return "moderate"
    return "hard"


def render(spec):
    spec.validate()
    cam = spec.camera
    noise = ValueNoise(spec.seed, spec.octaves, spec.texture_scale)
    s = SUPERSAMPLE
    views = {}
    for name, ox in (("left", 0.0), ("right", cam.baseline)):
        _, _, tex = _cast(spec, noise, ox, s)
        depth, sid, _ = _cast(spec, noise, ox, 1)
        views[name] = (_downsample(tex.reshape(cam.height * s, cam.width * s), s),
                       depth.reshape(cam.height, cam.width), sid.reshape(cam.height, cam.width))
    left, zl, sl = views["left"]
    right, zr, _ = views["right"]
    disp = cam.fb / zl
    disp_r = cam.fb / zr
    occ = _occlusion(disp, disp_r)
    boxes, tags, stats = [], [], []
    for k, b in enumerate(spec.boxes):
        alone = _box_pixels(b, cam)
        visible = int(np.sum(sl == 2 + k))
        occluded = 1.0 - visible / max(int(alone.sum()), 1)
        trunc = truncation(b, cam)
        boxes.append(b.as_object(cam))
        tags.append(difficulty_tag(occluded, trunc, b.center[2]))
        stats.append({"visible": visible, "occluded": occluded, "truncated": trunc})
    return RenderedScene(left.astype(np.float32), right.astype(np.float32), disp.astype(np.float32),
                         occ, DetectionLabelSet(boxes, tags), cam, spec, stats)


# ---------------------------------------------------------------- datasets

DEFAULT_MIX = (0.6, 0.3, 0.1)
_DEPTH_RANGES = {"easy": (7.0, 14.0), "moderate": (10.0, 20.0), "hard": (12.0, 22.0)}


def _sample_box(rng, cam, regime):
    z = rng.uniform(*_DEPTH_RANGES[regime])
    u = rng.uniform(0.12, 0.88) * cam.width
    x = (u - cam.cx) * z / cam.focal
    size = tuple(v * rng.uniform(0.95, 1.05) for v in VEHICLE_SIZE)
    y = CAMERA_HEIGHT - size[1] / 2
    yaw = math.pi / 2 + rng.uniform(-0.6, 0.6)
    return BoxPlacement((x, y, z), size, yaw)


def _separated(cand, placed, regime, cam):
    """Footprints apart in 3D; easy boxes also keep their image columns clear."""
    cb = cand.as_object()
    for p in placed:
        pb = p.as_object()
        gap = math.hypot(cb.center[0] - pb.center[0], cb.center[2] - pb.center[2])
        if gap < (cb.l + pb.l) / 2 + 1.0:
            return False
        if regime != "hard":
            ua = cam.project(cb.corners())[:, 0]
            ub = cam.project(pb.corners())[:, 0]
            if min(ua.max(), ub.max()) - max(ua.min(), ub.min()) > -4:
                return False
    return True


def scene_seed(master, index):
    h = hashlib.sha256(f"{master}:{index}".encode()).digest()
    return int.from_bytes(h[:8], "little") >> 1


def random_spec(seed, camera=None, mix=DEFAULT_MIX, d_max=48, max_boxes=3):
    """A valid scene spec whose every box has at least MIN_VISIBLE pixels."""
    cam = camera or Camera()
    rng = np.random.default_rng(seed)
    for _ in range(100):
        n = int(rng.integers(1, max_boxes + 1))
        regimes = rng.choice(DIFFICULTIES, size=n, p=np.asarray(mix) / np.sum(mix))
        placed = []
        for regime in regimes:
            for _ in range(30):
                cand = _sample_box(rng, cam, regime)
                if _separated(cand, placed, regime, cam):
                    placed.append(cand)
                    break
        spec = SceneSpec(int(seed), cam, placed, wall_depth=float(rng.uniform(25.0, 45.0)),
                         texture_scale=float(rng.uniform(0.8, 1.25)), d_max=d_max)
        try:
            spec.validate()
        except ValueError:
            continue
        scene = render(spec)
        if placed and all(st["visible"] >= MIN_VISIBLE for st in scene.stats):
            return spec, scene
    raise RuntimeError(f"could not draw a valid scene for seed {seed}")


def make_dataset(n, seed, mix=DEFAULT_MIX, camera=None, d_max=48):
    """``n`` rendered scenes with per-scene seeds derived from ``seed``."""
    if n < 1:
        raise ValueError("dataset size must be at least 1")
    return [random_spec(scene_seed(seed, i), camera, mix, d_max)[1] for i in range(n)]


def box_to_roi(box, camera):
    """Axis-aligned (u, v, d) bounds (6,) of a metric box's projected corners."""
    uvd = camera.project(box.corners())
    return np.concatenate([uvd.min(axis=0), uvd.max(axis=0)])


def vehicle_anchor_extents(camera=None, depths=(8.0, 13.0)):
    """Anchor (du, dv, dd) extents of a mean vehicle seen head-on at the given depths."""
    cam = camera or Camera()
    out = []
    for z in depths:
        y = CAMERA_HEIGHT - VEHICLE_SIZE[1] / 2
        b = ObjectBox((0.0, y, z), VEHICLE_SIZE, math.pi / 2)
        r = box_to_roi(b, cam)
        out.append(tuple(float(v) for v in r[3:] - r[:3]))
    return out
