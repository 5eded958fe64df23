"""Dataset persistence, train/val/test splits and window augmentation.

On-disk layout, one directory per video::

    <root>/manifest.json
    <root>/<video_id>/meta.json
    <root>/<video_id>/frames/000000.pgm     8-bit binary PGM (P5)
    <root>/<video_id>/masks/000000.msk      12-byte header + 1 bit per pixel
    <root>/<video_id>/tips.csv              frame,row,col,angle_deg

Mask header: magic ``VNMK`` then height and width as little-endian uint32;
bits are packed row-major, least significant bit first.
"""

import csv
import json
import math
import os
import struct
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .errors import DataError, TooFewVideos, VideoTooShort

FORMAT_VERSION = 1
MASK_MAGIC = b"VNMK"
_MASK_HEADER = struct.Struct("<4sII")
SPLITS = ("train", "val", "test")
CONTRAST_RANGE = (0.8, 1.2)
BRIGHTNESS_RANGE = (-0.1, 0.1)


# ---------------------------------------------------------------- file formats

def write_pgm(path, img):
    img = np.asarray(img)
    if img.dtype != np.uint8:
        img = to_uint8(img)
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n255\n" % (w, h))
        fh.write(np.ascontiguousarray(img).tobytes())


def read_pgm(path):
    with open(path, "rb") as fh:
        data = fh.read()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    if tokens[0] != b"P5" or int(tokens[3]) != 255:
        raise DataError(f"{path}: only 8-bit binary PGM is supported")
    w, h = int(tokens[1]), int(tokens[2])
    pixels = np.frombuffer(data, dtype=np.uint8, count=w * h, offset=pos + 1)
    return pixels.reshape(h, w).copy()


def to_uint8(img):
    return np.round(np.clip(np.asarray(img, dtype=float), 0.0, 1.0) * 255.0).astype(np.uint8)


def write_mask(path, mask):
    mask = np.asarray(mask, dtype=bool)
    h, w = mask.shape
    with open(path, "wb") as fh:
        fh.write(_MASK_HEADER.pack(MASK_MAGIC, h, w))
        fh.write(np.packbits(mask.ravel(), bitorder="little").tobytes())


def read_mask(path):
    with open(path, "rb") as fh:
        data = fh.read()
    magic, h, w = _MASK_HEADER.unpack_from(data)
    if magic != MASK_MAGIC:
        raise DataError(f"{path}: bad mask magic {magic!r}")
    bits = np.unpackbits(np.frombuffer(data, dtype=np.uint8, offset=_MASK_HEADER.size),
                         bitorder="little", count=h * w)
    return bits.reshape(h, w).astype(bool)


# ---------------------------------------------------------------- videos

@dataclass
class VideoRecord:
    video_id: str
    frames: np.ndarray           # (T, H, W) float in [0, 1]
    masks: np.ndarray            # (T, H, W) bool
    tips: np.ndarray             # (T, 2)
    angles: np.ndarray           # (T,)
    fs: float
    spacing: tuple
    angle_label: float
    extra: dict = field(default_factory=dict)

    @property
    def n_frames(self):
        return self.frames.shape[0]


def write_video(directory, video):
    os.makedirs(os.path.join(directory, "frames"), exist_ok=True)
    os.makedirs(os.path.join(directory, "masks"), exist_ok=True)
    meta = {"format_version": FORMAT_VERSION, "video_id": video.video_id, "fs": video.fs,
            "spacing": list(video.spacing), "angle_deg": video.angle_label,
            "frame_count": int(video.n_frames), "shape": list(video.frames.shape[1:]),
            "extra": video.extra}
    with open(os.path.join(directory, "meta.json"), "w") as fh:
        json.dump(meta, fh, indent=2)
    for t in range(video.n_frames):
        write_pgm(os.path.join(directory, "frames", f"{t:06d}.pgm"), video.frames[t])
        write_mask(os.path.join(directory, "masks", f"{t:06d}.msk"), video.masks[t])
    with open(os.path.join(directory, "tips.csv"), "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["frame", "row", "col", "angle_deg"])
        for t in range(video.n_frames):
            wr.writerow([t, repr(float(video.tips[t, 0])), repr(float(video.tips[t, 1])),
                         repr(float(video.angles[t]))])


def read_meta(directory):
    path = os.path.join(directory, "meta.json")
    try:
        with open(path) as fh:
            meta = json.load(fh)
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    if meta.get("format_version") != FORMAT_VERSION:
        raise DataError(f"{path}: unsupported format version {meta.get('format_version')}")
    return meta


def read_tips(directory):
    with open(os.path.join(directory, "tips.csv"), newline="") as fh:
        rows = [(int(r["frame"]), float(r["row"]), float(r["col"]), float(r["angle_deg"]))
                for r in csv.DictReader(fh)]
    rows.sort()
    arr = np.array([r[1:] for r in rows], dtype=float).reshape(-1, 3)
    return arr[:, :2], arr[:, 2]


def iter_frames(directory):
    """Yield float frames in order without loading the whole video."""
    names = sorted(os.listdir(os.path.join(directory, "frames")))
    for name in names:
        yield read_pgm(os.path.join(directory, "frames", name)).astype(float) / 255.0


def read_video(directory, with_frames=True):
    meta = read_meta(directory)
    n = meta["frame_count"]
    shape = tuple(meta["shape"])
    if with_frames:
        frames = np.stack(list(iter_frames(directory))) if n else np.zeros((0,) + shape)
    else:
        frames = np.zeros((0,) + shape)
    mask_dir = os.path.join(directory, "masks")
    masks = np.stack([read_mask(os.path.join(mask_dir, f"{t:06d}.msk")) for t in range(n)])
    tips, angles = read_tips(directory)
    if with_frames and frames.shape[0] != n:
        raise DataError(f"{directory}: meta says {n} frames, found {frames.shape[0]}")
    return VideoRecord(meta["video_id"], frames, masks, tips, angles, float(meta["fs"]),
                       tuple(meta["spacing"]), float(meta["angle_deg"]), meta.get("extra", {}))


def video_from_sim(video_id, frames, truths, fs, angle_label, extra=None):
    """Pack ``sim.generate_sequence`` output as a VideoRecord."""
    return VideoRecord(video_id, np.stack([f.pixels for f in frames]),
                       np.stack([g.mask for g in truths]), np.stack([g.tip for g in truths]),
                       np.array([g.angle_deg for g in truths]), float(fs), tuple(frames[0].pixel_spacing),
                       float(angle_label), dict(extra or {}))


# ---------------------------------------------------------------- manifest / splits

@dataclass
class VideoEntry:
    video_id: str
    angle_deg: float
    frame_count: int
    path: str = ""


@dataclass
class DatasetManifest:
    videos: list
    splits: dict                 # video_id -> "train" | "val" | "test"
    fs: float = 30.0
    spacing: Optional[tuple] = None
    L: int = 30
    fractions: tuple = (0.8, 0.1, 0.1)

    def ids(self, split):
        return [v.video_id for v in self.videos if self.splits.get(v.video_id) == split]

    def entry(self, video_id):
        for v in self.videos:
            if v.video_id == video_id:
                return v
        raise KeyError(video_id)

    def counts(self, angle=None):
        out = {s: 0 for s in SPLITS}
        for v in self.videos:
            if angle is None or v.angle_deg == angle:
                out[self.splits[v.video_id]] += 1
        return out

    def to_json(self):
        d = asdict(self)
        d["format_version"] = FORMAT_VERSION
        return json.dumps(d, indent=2)

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        d.pop("format_version", None)
        d["videos"] = [VideoEntry(**v) for v in d["videos"]]
        if d.get("spacing") is not None:
            d["spacing"] = tuple(d["spacing"])
        d["fractions"] = tuple(d.get("fractions", (0.8, 0.1, 0.1)))
        return cls(**d)

    def save(self, root):
        with open(os.path.join(root, "manifest.json"), "w") as fh:
            fh.write(self.to_json())

    @classmethod
    def load(cls, root):
        path = os.path.join(root, "manifest.json")
        try:
            with open(path) as fh:
                return cls.from_json(fh.read())
        except (OSError, ValueError, TypeError) as exc:
            raise DataError(f"cannot read {path}: {exc}") from exc


def split_counts(n, fractions=(0.8, 0.1, 0.1)):
    """Integer split sizes for ``n`` videos.

    The largest split absorbs the rounding residue; every other split is
    rounded half-up.  50 -> 40/5/5, 56 -> 44/6/6, 10 -> 8/1/1.
    """
    fr = [float(f) for f in fractions]
    if any(f <= 0 for f in fr) or abs(sum(fr) - 1.0) > 1e-9:
        raise ValueError(f"fractions {fractions} must be positive and sum to 1")
    big = int(np.argmax(fr))
    counts = [0] * len(fr)
    for i, f in enumerate(fr):
        if i != big:
            counts[i] = int(math.floor(n * f + 0.5 + 1e-9))
    counts[big] = n - sum(counts)
    if counts[big] < 0:
        raise TooFewVideos(f"{n} videos cannot be split as {fractions}")
    return counts


def split(videos, fractions=(0.8, 0.1, 0.1), seed=0, stratify_by_angle=True, min_per_stratum=3):
    """Seeded, optionally angle-stratified assignment of videos to splits."""
    videos = sorted(videos, key=lambda v: v.video_id)
    strata = defaultdict(list)
    for v in videos:
        strata[v.angle_deg if stratify_by_angle else None].append(v)
    rng = np.random.default_rng(seed)
    assignment = {}
    for key in sorted(strata, key=lambda k: (k is None, k)):
        group = strata[key]
        if len(group) < min_per_stratum:
            raise TooFewVideos(f"stratum {key!r} has {len(group)} videos (< {min_per_stratum})")
        counts = split_counts(len(group), fractions)
        order = rng.permutation(len(group))
        pos = 0
        for name, c in zip(SPLITS, counts):
            for idx in order[pos:pos + c]:
                assignment[group[idx].video_id] = name
            pos += c
    return DatasetManifest(list(videos), assignment, fractions=tuple(fractions))


def count_sequences(n_frames, L=30, stride=1):
    if n_frames < L:
        raise VideoTooShort(f"{n_frames} frames < window length {L}")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    return (n_frames - L) // stride + 1


# ---------------------------------------------------------------- augmentation

@dataclass(frozen=True)
class AugmentParams:
    hflip: bool = False
    contrast: float = 1.0
    brightness: float = 0.0


def draw_augment(rng, ops=("hflip", "contrast", "brightness"),
                 contrast_range=CONTRAST_RANGE, brightness_range=BRIGHTNESS_RANGE):
    hflip = bool(rng.random() < 0.5) if "hflip" in ops else False
    c = float(rng.uniform(*contrast_range)) if "contrast" in ops else 1.0
    b = float(rng.uniform(*brightness_range)) if "brightness" in ops else 0.0
    return AugmentParams(hflip, c, b)


def apply_augment(frames, masks, angle_deg, params):
    """Same transform on every frame of the window (and on the masks).

    Returns (frames, masks, angle).  A flip mirrors columns and negates the
    shaft angle; contrast and brightness act around mid-grey and clamp.
    """
    if params.contrast <= 0:
        raise ValueError("contrast factor must be positive")
    x = np.asarray(frames, dtype=float)
    m = None if masks is None else np.asarray(masks)
    angle = angle_deg
    if params.hflip:
        x = x[..., ::-1]
        m = None if m is None else m[..., ::-1]
        angle = None if angle is None else -angle
    if params.contrast != 1.0 or params.brightness != 0.0:
        x = np.clip(0.5 + (x - 0.5) * params.contrast + params.brightness, 0.0, 1.0)
    return np.ascontiguousarray(x), (None if m is None else np.ascontiguousarray(m)), angle


def augment(frames, masks, angle_deg, ops=("hflip", "contrast", "brightness"), seed=0):
    params = draw_augment(np.random.default_rng(seed), ops)
    return apply_augment(frames, masks, angle_deg, params)


def flip_point(point, width):
    """Mirror a (row, col) point under a horizontal flip of a ``width``-wide image."""
    return np.array([point[0], width - 1 - point[1]], dtype=float)


# ---------------------------------------------------------------- datasets

def write_dataset(root, videos, manifest=None, L=30):
    """Write every video under ``root`` plus a manifest (unsplit unless given)."""
    os.makedirs(root, exist_ok=True)
    entries = []
    for v in videos:
        write_video(os.path.join(root, v.video_id), v)
        entries.append(VideoEntry(v.video_id, v.angle_label, int(v.n_frames), v.video_id))
    if manifest is None:
        manifest = DatasetManifest(entries, {}, L=L)
    if videos:
        manifest.fs = float(videos[0].fs)
        manifest.spacing = tuple(videos[0].spacing)
    manifest.save(root)
    return manifest


def load_manifest(root):
    if not os.path.isfile(os.path.join(root, "manifest.json")):
        raise DataError(f"{root}: no manifest.json")
    return DatasetManifest.load(root)


def read_dataset(root, split_name=None, with_frames=True):
    """(manifest, [VideoRecord]) for every video or for one split."""
    manifest = load_manifest(root)
    ids = [v.video_id for v in manifest.videos] if split_name is None else manifest.ids(split_name)
    videos = []
    for vid in ids:
        e = manifest.entry(vid)
        videos.append(read_video(os.path.join(root, e.path or vid), with_frames))
    return manifest, videos
