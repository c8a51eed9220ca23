"""Manifests, feature blobs and synthetic long-tailed re-identification data.

Manifest files are JSON lines with fields ``id``, ``label``, ``cam``,
``split`` and ``payload``.  A payload of the form ``<file>@<offset>`` points
at an LGAF record inside a blob file; anything else is treated as an image
path.  Relative paths resolve against the manifest's directory.

LGAF record layout: ``b"LGAF"``, little-endian u32 ``c, w, h``, then
``c*w*h`` little-endian float32 values, channel-major then row-major.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import BinaryIO, Iterable

import numpy as np

LGAF_MAGIC = b"LGAF"
SPLITS = ("train", "probe", "gallery")


class ManifestError(ValueError):
    pass


@dataclass(frozen=True)
class Record:
    id: str
    label: int
    cam: int
    split: str | None = None
    payload: str = ""


@dataclass
class Manifest:
    records: list[Record]
    label_map: dict = field(default_factory=dict)
    root: Path = Path(".")

    def __len__(self):
        return len(self.records)

    @property
    def labels(self) -> np.ndarray:
        return np.array([r.label for r in self.records], dtype=np.int64)

    @property
    def cams(self) -> np.ndarray:
        return np.array([r.cam for r in self.records], dtype=np.int64)

    @property
    def splits(self) -> np.ndarray:
        return np.array([r.split or "" for r in self.records], dtype=object)

    @property
    def num_classes(self) -> int:
        return len(set(r.label for r in self.records))

    def subset(self, split: str) -> "Manifest":
        return Manifest([r for r in self.records if r.split == split], dict(self.label_map), self.root)

    def class_counts(self, num_classes: int | None = None) -> np.ndarray:
        return np.bincount(self.labels, minlength=num_classes or 0)


def _parse_line(line: str, lineno: int) -> Record:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ManifestError(f"line {lineno}: malformed JSON ({exc.msg})") from None
    if not isinstance(obj, dict):
        raise ManifestError(f"line {lineno}: expected a JSON object")
    missing = [k for k in ("id", "label", "cam") if k not in obj]
    if missing:
        raise ManifestError(f"line {lineno}: missing field(s) {', '.join(missing)}")
    split = obj.get("split")
    if split is not None and split not in SPLITS:
        raise ManifestError(f"line {lineno}: unknown split tag {split!r}")
    try:
        cam = int(obj["cam"])
    except (TypeError, ValueError):
        raise ManifestError(f"line {lineno}: camera id must be an integer") from None
    if cam < 0:
        raise ManifestError(f"line {lineno}: negative camera id {cam}")
    return Record(str(obj["id"]), obj["label"], cam, split, str(obj.get("payload", "")))


def parse_manifest(lines: Iterable[str], root: Path = Path(".")) -> Manifest:
    """Validate records and remap identity labels onto ``0..T-1`` (first-seen order)."""
    raw: list[Record] = []
    seen: dict[str, int] = {}
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        rec = _parse_line(line, lineno)
        if rec.id in seen:
            raise ManifestError(f"line {lineno}: duplicate sample id {rec.id!r} (first on line {seen[rec.id]})")
        seen[rec.id] = lineno
        raw.append(rec)
    if not raw:
        raise ManifestError("manifest is empty")
    label_map: dict = {}
    for rec in raw:
        label_map.setdefault(rec.label, len(label_map))
    records = [Record(r.id, label_map[r.label], r.cam, r.split, r.payload) for r in raw]
    return Manifest(records, label_map, Path(root))


def load_manifest(path) -> Manifest:
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        return parse_manifest(fh, path.parent)


def write_manifest(manifest: Manifest, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in manifest.records:
            fh.write(json.dumps(asdict(rec), separators=(",", ":")) + "\n")


# -- LGAF feature blobs ------------------------------------------------------

def write_lgaf(fh: BinaryIO, fmap: np.ndarray) -> int:
    """Append one ``(c, h, w)`` map; returns the record's byte offset."""
    fmap = np.asarray(fmap)
    if fmap.ndim != 3:
        raise ValueError(f"feature map must be (c, h, w), got shape {fmap.shape}")
    c, h, w = fmap.shape
    offset = fh.tell()
    fh.write(LGAF_MAGIC + struct.pack("<III", c, w, h))
    fh.write(np.ascontiguousarray(fmap, dtype="<f4").tobytes())
    return offset


def read_lgaf(fh: BinaryIO, offset: int = 0) -> np.ndarray:
    fh.seek(offset)
    head = fh.read(16)
    if len(head) < 16 or head[:4] != LGAF_MAGIC:
        raise ValueError(f"no LGAF record at byte offset {offset}")
    c, w, h = struct.unpack("<III", head[4:])
    n = c * w * h
    buf = fh.read(4 * n)
    if len(buf) != 4 * n:
        raise ValueError(f"truncated LGAF record at byte offset {offset}")
    return np.frombuffer(buf, dtype="<f4").reshape(c, h, w).astype(np.float64)


def save_lgaf(path, fmap: np.ndarray) -> None:
    with open(path, "wb") as fh:
        write_lgaf(fh, fmap)


def load_lgaf(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return read_lgaf(fh)


def write_feature_blob(path, maps: Iterable[np.ndarray]) -> list[int]:
    with open(path, "wb") as fh:
        return [write_lgaf(fh, m) for m in maps]


def save_embeddings(path, emb: np.ndarray) -> None:
    """Embedding dump: one LGAF record per row with ``w = h = 1``."""
    write_feature_blob(path, (row.reshape(-1, 1, 1) for row in np.atleast_2d(emb)))


def load_embeddings(path) -> np.ndarray:
    rows = []
    with open(path, "rb") as fh:
        while fh.read(1):
            fh.seek(-1, 1)
            rows.append(read_lgaf(fh, fh.tell()).reshape(-1))
    return np.stack(rows)


# -- PPM images --------------------------------------------------------------

def write_ppm(path, image: np.ndarray) -> None:
    """``image`` is ``(3, H, W)`` with values in [0, 1]."""
    img = np.clip(np.round(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)
    _, h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(img.transpose(1, 2, 0).tobytes())


def read_ppm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        end = pos
        while not data[end:end + 1].isspace():
            end += 1
        tokens.append(data[pos:end])
        pos = end
    if tokens[0] != b"P6" or int(tokens[3]) != 255:
        raise ValueError(f"{path}: only binary 8-bit PPM (P6) is supported")
    w, h = int(tokens[1]), int(tokens[2])
    pix = np.frombuffer(data[pos + 1:pos + 1 + 3 * w * h], dtype=np.uint8)
    return pix.reshape(h, w, 3).transpose(2, 0, 1).astype(np.float64) / 255.0


class PayloadStore:
    """Loads manifest payloads, caching opened blob files."""

    def __init__(self, root: Path = Path(".")):
        self.root = Path(root)
        self._files: dict[Path, BinaryIO] = {}

    def load(self, locator: str) -> np.ndarray:
        if "@" in locator:
            name, off = locator.rsplit("@", 1)
            path = self.root / name
            if path not in self._files:
                self._files[path] = open(path, "rb")
            return read_lgaf(self._files[path], int(off))
        return read_ppm(self.root / locator)

    def load_all(self, manifest: Manifest) -> np.ndarray:
        return np.stack([self.load(r.payload) for r in manifest.records])

    def close(self):
        for fh in self._files.values():
            fh.close()
        self._files.clear()


# -- synthetic data ----------------------------------------------------------

@dataclass(frozen=True)
class SyntheticSpec:
    """Parameters of the synthetic long-tailed identity set.

    ``counts="zipf"`` draws ``train_samples`` training images over
    ``num_ids`` identities with probability proportional to ``rank**-zipf_s``
    (every identity keeps at least one); ``counts="uniform"`` gives each
    identity ``per_id`` training samples.  Every identity additionally gets
    ``test_per_id`` held-out samples (first tagged ``probe``, the rest
    ``gallery``).  ``sigma`` scales every per-sample nuisance, so
    ``sigma=0`` makes all samples of an identity identical.
    """

    num_ids: int = 50
    counts: str = "zipf"
    zipf_s: float = 1.2
    train_samples: int = 400
    per_id: int = 6
    test_per_id: int = 4
    channels: int = 32
    height: int = 20
    width: int = 20
    sigma: float = 1.0
    separation: float = 1.0
    clutter: float = 1.5
    occlusion_p: float = 0.5
    num_cams: int = 4
    seed: int = 0

    def __post_init__(self):
        if self.counts not in ("zipf", "uniform"):
            raise ValueError(f"unknown count distribution {self.counts!r}")
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")
        if self.num_ids < 1 or self.num_cams < 1 or self.per_id < 1:
            raise ValueError("num_ids, num_cams and per_id must be positive")
        if self.counts == "zipf" and self.train_samples < self.num_ids:
            raise ValueError("zipf mode needs train_samples >= num_ids")


def identity_counts(spec: SyntheticSpec, rng: np.random.Generator) -> np.ndarray:
    if spec.counts == "uniform":
        return np.full(spec.num_ids, spec.per_id, dtype=np.int64)
    p = np.arange(1, spec.num_ids + 1, dtype=np.float64) ** -spec.zipf_s
    counts = 1 + rng.multinomial(spec.train_samples - spec.num_ids, p / p.sum())
    return rng.permutation(counts)


def vehicle_footprint(height: int, width: int) -> np.ndarray:
    """Centred box covering the middle of the map; the rest is background."""
    fp = np.zeros((height, width))
    r0, c0 = height // 5, width // 10
    fp[r0:height - r0, c0:width - c0] = 1.0
    return fp


def _sample_map(rng, proto, footprint, backgrounds, cam, spec: SyntheticSpec) -> np.ndarray:
    c, h, w = spec.channels, spec.height, spec.width
    x = proto[:, None, None] * footprint
    if spec.sigma == 0:
        return x
    s = spec.sigma
    scene = backgrounds[cam] + rng.normal(0.0, 1.0, c) / np.sqrt(c)
    x = x + s * spec.clutter * scene[:, None, None] * (1.0 - footprint)
    if rng.random() < spec.occlusion_p:
        oh, ow = rng.integers(h // 4, h // 2 + 1), rng.integers(w // 4, w // 2 + 1)
        r, q = rng.integers(0, h - oh + 1), rng.integers(0, w - ow + 1)
        occluder = rng.normal(0.0, 1.0, c) / np.sqrt(c) * spec.clutter
        keep = max(0.0, 1.0 - s)
        x[:, r:r + oh, q:q + ow] = keep * x[:, r:r + oh, q:q + ow] + s * occluder[:, None, None]
    return x + s * rng.normal(0.0, 1.0, (c, h, w)) / np.sqrt(c)


def generate_synthetic(spec: SyntheticSpec) -> tuple[Manifest, np.ndarray]:
    """Build a manifest and the matching ``(N, c, h, w)`` feature array.

    Identity prototypes are random directions scaled to ``separation``; each
    camera has a fixed background direction that fills the map outside the
    vehicle footprint.  Cameras are assigned round-robin per identity.
    Payload locators index ``features.lgaf`` as written by
    :func:`write_synthetic`.
    """
    rng = np.random.default_rng(spec.seed)
    c = spec.channels
    protos = rng.normal(0.0, 1.0, (spec.num_ids, c))
    protos *= spec.separation / np.linalg.norm(protos, axis=1, keepdims=True)
    backgrounds = rng.normal(0.0, 1.0, (spec.num_cams, c)) / np.sqrt(c)
    footprint = vehicle_footprint(spec.height, spec.width)
    counts = identity_counts(spec, rng)

    records, maps = [], []
    for y in range(spec.num_ids):
        n_train = int(counts[y])
        for j in range(n_train + spec.test_per_id):
            if j < n_train:
                split = "train"
            else:
                split = "probe" if j == n_train else "gallery"
            cam = (y + j) % spec.num_cams
            maps.append(_sample_map(rng, protos[y], footprint, backgrounds, cam, spec))
            records.append(Record(f"s{len(records):06d}", y, cam, split, ""))
    feats = np.stack(maps)
    # float32 round-trip so in-memory and on-disk data are identical
    feats = feats.astype(np.float32).astype(np.float64)
    offsets = np.arange(len(records)) * (16 + 4 * feats[0].size)
    records = [Record(r.id, r.label, r.cam, r.split, f"features.lgaf@{int(o)}") for r, o in zip(records, offsets)]
    return Manifest(records, {y: y for y in range(spec.num_ids)}), feats


def write_synthetic(spec: SyntheticSpec, out_dir) -> Path:
    """Write ``manifest.jsonl`` and ``features.lgaf`` into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest, feats = generate_synthetic(spec)
    write_feature_blob(out / "features.lgaf", feats)
    write_manifest(manifest, out / "manifest.jsonl")
    return out / "manifest.jsonl"


def generate_synthetic_images(num_ids: int = 8, per_id: int = 6, size: int = 64, sigma: float = 0.1,
                              num_cams: int = 4, seed: int = 0) -> tuple[Manifest, np.ndarray]:
    """Coloured rectangles ("vehicles") on random-noise clutter, shape ``(N, 3, size, size)``."""
    rng = np.random.default_rng(seed)
    colors = rng.uniform(0.0, 1.0, (num_ids, 2, 3))
    records, images = [], []
    for y in range(num_ids):
        for j in range(per_id):
            img = rng.uniform(0.0, 1.0, (3, size, size)) * 0.5
            lo, hi = size // 4, 3 * size // 4
            jit = rng.integers(-size // 16, size // 16 + 1, 2) if sigma > 0 else (0, 0)
            r0, c0 = lo + jit[0], lo + jit[1]
            img[:, r0:r0 + (hi - lo), c0:c0 + (hi - lo)] = colors[y, 0][:, None, None]
            img[:, r0:r0 + (hi - lo) // 2, c0:c0 + (hi - lo)] = colors[y, 1][:, None, None]
            img = np.clip(img + sigma * rng.normal(0.0, 1.0, img.shape), 0.0, 1.0)
            images.append(img)
            records.append(Record(f"img{len(records):05d}", y, (y + j) % num_cams, "train",
                                  f"img{len(records):05d}.ppm"))
    return Manifest(records, {y: y for y in range(num_ids)}), np.stack(images)
