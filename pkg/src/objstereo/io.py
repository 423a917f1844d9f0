"""On-disk formats: PFM, PGM, KITTI-style calibration and label text, scene folders."""

from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np

from .detection.boxes import DetectionLabelSet, ObjectBox
from .geometry import Camera


class FormatError(ValueError):
    pass


# ---------------------------------------------------------------- PFM

def _read_token(buf, pos):
    """Next whitespace-delimited header token and the offset after it."""
    n = len(buf)
    while pos < n and buf[pos:pos + 1].isspace():
        pos += 1
    start = pos
    while pos < n and not buf[pos:pos + 1].isspace():
        pos += 1
    return buf[start:pos], start, pos


def read_pfm(path):
    """Single-channel PFM as a float32 (H, W) array, top row first."""
    with open(path, "rb") as fh:
        buf = fh.read()
    tok, off, pos = _read_token(buf, 0)
    if tok == b"PF":
        raise FormatError(f"{path}: colour PFM ('PF') at byte {off}; only grayscale 'Pf' is supported")
    if tok != b"Pf":
        raise FormatError(f"{path}: bad PFM magic {tok[:8]!r} at byte {off}")
    dims = []
    for what in ("width", "height"):
        tok, off, pos = _read_token(buf, pos)
        if not tok.isdigit() or int(tok) <= 0:
            raise FormatError(f"{path}: bad {what} {tok[:16]!r} at byte {off}")
        dims.append(int(tok))
    tok, off, pos = _read_token(buf, pos)
    try:
        scale = float(tok)
    except ValueError:
        raise FormatError(f"{path}: bad scale {tok[:16]!r} at byte {off}") from None
    if scale == 0 or not math.isfinite(scale):
        raise FormatError(f"{path}: bad scale {scale} at byte {off}")
    if pos >= len(buf) or not buf[pos:pos + 1].isspace():
        raise FormatError(f"{path}: missing separator after header at byte {pos}")
    pos += 1
    w, h = dims
    need = 4 * w * h
    if len(buf) - pos < need:
        raise FormatError(f"{path}: payload truncated at byte {len(buf)}, "
                          f"expected {need} bytes from byte {pos}")
    dtype = "<f4" if scale < 0 else ">f4"
    data = np.frombuffer(buf, dtype=dtype, count=w * h, offset=pos).reshape(h, w)
    return np.flipud(data).astype(np.float32)


def write_pfm(path, data, little_endian=True):
    a = np.asarray(data, dtype=np.float32)
    if a.ndim != 2:
        raise ValueError(f"{path}: PFM maps must be 2D, got shape {a.shape}")
    h, w = a.shape
    scale = -1.0 if little_endian else 1.0
    payload = np.flipud(a).astype("<f4" if little_endian else ">f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(f"Pf\n{w} {h}\n{scale}\n".encode("ascii"))
        fh.write(payload)


# ---------------------------------------------------------------- PGM

def write_pgm(path, image, maxval=65535):
    """Grayscale PGM (binary); float input in [0, 1] is scaled to ``maxval``."""
    a = np.asarray(image)
    if a.ndim != 2:
        raise ValueError(f"{path}: PGM images must be 2D, got shape {a.shape}")
    if a.dtype.kind == "f":
        a = np.round(np.clip(a, 0.0, 1.0) * maxval)
    elif a.dtype == bool:
        a = a.astype(np.int64) * maxval
    dtype = ">u2" if maxval > 255 else "u1"
    h, w = a.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n{maxval}\n".encode("ascii"))
        fh.write(a.astype(dtype).tobytes())


def read_pgm(path, normalize=True):
    with open(path, "rb") as fh:
        buf = fh.read()
    tok, off, pos = _read_token(buf, 0)
    if tok != b"P5":
        raise FormatError(f"{path}: bad PGM magic {tok[:8]!r} at byte {off}")
    vals = []
    for what in ("width", "height", "maxval"):
        tok, off, pos = _read_token(buf, pos)
        if not tok.isdigit() or int(tok) <= 0:
            raise FormatError(f"{path}: bad {what} {tok[:16]!r} at byte {off}")
        vals.append(int(tok))
    w, h, maxval = vals
    pos += 1
    dtype = ">u2" if maxval > 255 else "u1"
    need = np.dtype(dtype).itemsize * w * h
    if len(buf) - pos < need:
        raise FormatError(f"{path}: payload truncated at byte {len(buf)}, expected {need} bytes from byte {pos}")
    a = np.frombuffer(buf, dtype=dtype, count=w * h, offset=pos).reshape(h, w)
    return (a / maxval).astype(np.float32) if normalize else a.astype(np.int64)


# ---------------------------------------------------------------- calibration

@dataclass(frozen=True)
class CalibInfo:
    p2: tuple
    p3: tuple

    @property
    def focal(self):
        return self.p2[0]

    @property
    def baseline(self):
        return (self.p2[3] - self.p3[3]) / self.focal

    def camera(self, height, width):
        return Camera(self.focal, self.baseline, height, width, cx=self.p2[2], cy=self.p2[6])


def parse_calib(text, source="<calib>"):
    rows = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        if ":" not in line:
            continue
        key, rest = line.split(":", 1)
        key = key.strip()
        if key not in ("P2", "P3"):
            continue
        toks = rest.split()
        try:
            vals = tuple(float(t) for t in toks)
        except ValueError:
            raise FormatError(f"{source}:{lineno}: non-numeric token in {key}") from None
        if len(vals) != 12:
            raise FormatError(f"{source}:{lineno}: {key} needs 12 numbers, got {len(vals)}")
        rows[key] = vals
    for key in ("P2", "P3"):
        if key not in rows:
            raise FormatError(f"{source}: missing {key} line")
    info = CalibInfo(rows["P2"], rows["P3"])
    if not info.focal > 0:
        raise FormatError(f"{source}: focal length must be positive, got {info.focal}")
    if not info.baseline > 0:
        raise FormatError(f"{source}: baseline must be positive, got {info.baseline}")
    return info


def read_calib(path):
    with open(path) as fh:
        return parse_calib(fh.read(), str(path))


def write_calib(path, camera):
    p2, p3 = camera.projection_rows()
    with open(path, "w") as fh:
        for name, p in (("P2", p2), ("P3", p3)):
            fh.write(name + ": " + " ".join(repr(float(v)) for v in p.ravel()) + "\n")


# ---------------------------------------------------------------- labels

def _bbox2d(box, camera):
    uvd = camera.project(box.corners())
    u0 = max(uvd[:, 0].min(), 0.0)
    v0 = max(uvd[:, 1].min(), 0.0)
    u1 = min(uvd[:, 0].max(), camera.width - 1.0)
    v1 = min(uvd[:, 1].max(), camera.height - 1.0)
    return u0, v0, u1, v1


def format_box_row(box, camera, truncated=0.0, occluded=0.0, score=None, kind="Car"):
    """KITTI-object row; ``y`` is the bottom face centre as in KITTI."""
    w, h, l = box.size
    x, y, z = box.center
    vals = [kind, f"{truncated:.9g}", f"{occluded:.9g}", "-10"]
    vals += [f"{v:.2f}" for v in _bbox2d(box, camera)]
    vals += [repr(v) for v in (h, w, l, x, y + h / 2, z, box.yaw)]
    vals.append(repr(float(box.confidence if score is None else score)))
    return " ".join(vals)


def parse_box_row(line, camera=None):
    toks = line.split()
    if len(toks) not in (15, 16):
        raise FormatError(f"label row needs 15 or 16 fields, got {len(toks)}")
    try:
        nums = [float(t) for t in toks[1:]]
    except ValueError:
        raise FormatError("non-numeric token in label row") from None
    trunc, occ = nums[0], nums[1]
    h, w, l, x, yb, z, yaw = nums[7:14]
    score = nums[14] if len(nums) == 15 else 1.0
    center = (x, yb - h / 2, z)
    uvd = tuple(camera.project(center)) if camera is not None else None
    return ObjectBox(center, (w, h, l), yaw, score, center_uvd=uvd), trunc, occ


def write_labels(path, labels, camera, stats=None):
    rows = []
    for i, b in enumerate(labels.boxes):
        st = stats[i] if stats else {"truncated": 0.0, "occluded": 0.0}
        rows.append(format_box_row(b, camera, st["truncated"], st["occluded"]))
    with open(path, "w") as fh:
        fh.write("".join(r + "\n" for r in rows))


def read_labels(path, camera=None):
    """Label file -> DetectionLabelSet with difficulty re-derived from the row."""
    from .synth import difficulty_tag

    boxes, tags = [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                box, trunc, occ = parse_box_row(line, camera)
            except FormatError as e:
                raise FormatError(f"{path}:{lineno}: {e}") from None
            boxes.append(box)
            tags.append(difficulty_tag(occ, trunc, box.center[2]))
    return DetectionLabelSet(boxes, tags)


def write_detections(path, boxes, camera):
    with open(path, "w") as fh:
        fh.write("".join(format_box_row(b, camera) + "\n" for b in boxes))


def read_detections(path, camera=None):
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if line.strip():
                try:
                    out.append(parse_box_row(line, camera)[0])
                except FormatError as e:
                    raise FormatError(f"{path}:{lineno}: {e}") from None
    return out


# ---------------------------------------------------------------- scene folders

SCENE_FILES = ("left.pgm", "right.pgm", "disp.pfm", "occ.pgm", "calib.txt", "labels.txt")


def write_scene(folder, scene):
    os.makedirs(folder, exist_ok=True)
    write_pgm(os.path.join(folder, "left.pgm"), scene.left)
    write_pgm(os.path.join(folder, "right.pgm"), scene.right)
    write_pfm(os.path.join(folder, "disp.pfm"), scene.disparity)
    write_pgm(os.path.join(folder, "occ.pgm"), scene.occlusion.astype(bool), maxval=255)
    write_calib(os.path.join(folder, "calib.txt"), scene.camera)
    write_labels(os.path.join(folder, "labels.txt"), scene.labels, scene.camera, scene.stats)


@dataclass
class SceneFiles:
    name: str
    left: np.ndarray
    right: np.ndarray
    disparity: np.ndarray | None
    occlusion: np.ndarray | None
    camera: Camera
    labels: DetectionLabelSet | None


def read_scene(folder):
    def p(name):
        return os.path.join(folder, name)

    for name in ("left.pgm", "right.pgm", "calib.txt"):
        if not os.path.exists(p(name)):
            raise FileNotFoundError(f"{p(name)}: missing scene file")
    left = read_pgm(p("left.pgm"))
    right = read_pgm(p("right.pgm"))
    cam = read_calib(p("calib.txt")).camera(*left.shape)
    disp = read_pfm(p("disp.pfm")) if os.path.exists(p("disp.pfm")) else None
    occ = read_pgm(p("occ.pgm")) > 0.5 if os.path.exists(p("occ.pgm")) else None
    labels = read_labels(p("labels.txt"), cam) if os.path.exists(p("labels.txt")) else None
    return SceneFiles(os.path.basename(os.path.normpath(folder)), left, right, disp, occ, cam, labels)


def list_scenes(root):
    """Scene folder paths under ``root``/scenes (or ``root`` itself), sorted."""
    base = os.path.join(root, "scenes")
    if not os.path.isdir(base):
        base = root
    if not os.path.isdir(base):
        raise FileNotFoundError(f"{root}: not a dataset directory")
    names = sorted(n for n in os.listdir(base) if os.path.isdir(os.path.join(base, n)))
    return [os.path.join(base, n) for n in names]



def scene_id(i):
    return f"{i:06d}"
