"""Data pipeline: ingestion, identifier-patch removal, splits,
augmentation, the synthetic lesion generator, and the on-disk dataset
format.

Images are float32 [3, 64, 64] in [0, 1] everywhere past ingestion.
Splits are disjoint by source id, and every augmented variant inherits
its source's split and label, so no image can leak across splits in any
disguise.  All randomness is seeded; per-image augmentation randomness
derives from (seed, source id), never from iteration order.

On-disk layout written by `write_dataset` (and read back by
`load_dataset`):

    <dir>/manifest.json            ids, labels, split sizes, provenance
    <dir>/<split>.tensors          raw tensor file per split

A `.tensors` file is a 16-byte header of four little-endian uint32
(count, channels, height, width) followed by count*channels*height*width
little-endian float32 values, row-major.
"""

import csv
import json
import struct
from dataclasses import dataclass
from hashlib import blake2s
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

from .errors import ConfigError, IngestError, PreprocessingRejected

IMAGE_SIZE = 64
CHANNELS = 3

BENIGN, MALIGNANT = 0, 1
LABEL_NAMES = {"benign": BENIGN, "malignant": MALIGNANT}


@dataclass
class Dataset:
    """A pool of images with optional labels; `labels is None` marks an
    unlabelled pool (labels were deliberately discarded)."""

    images: np.ndarray  # [N, 3, 64, 64] float32 in [0, 1]
    labels: np.ndarray | None  # [N] int {0,1}
    ids: list

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float32)
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
            if len(self.labels) != len(self.images):
                raise ConfigError("labels and images disagree in length")
        if len(self.ids) != len(self.images):
            raise ConfigError("ids and images disagree in length")

    def __len__(self):
        return len(self.images)

    def subset(self, indices, drop_labels=False):
        labels = None if (drop_labels or self.labels is None) else self.labels[indices]
        return Dataset(self.images[indices], labels, [self.ids[i] for i in indices])


@dataclass
class DataBatch:
    """One minibatch: images [B,3,64,64] and, when labelled, labels [B,1].

    Labels cover the whole batch or are absent; mixed batches are invalid.
    """

    images: np.ndarray
    labels: np.ndarray | None
    ids: list

    def __post_init__(self):
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.float32).reshape(-1, 1)
            if len(self.labels) != len(self.images):
                raise ConfigError("labels must cover the whole batch or be absent")


@dataclass
class SplitSpec:
    n_unlabelled: int
    n_labelled_train: int
    n_val: int
    n_test: int
    seed: int = 0

    def __post_init__(self):
        for f in ("n_unlabelled", "n_labelled_train", "n_val", "n_test"):
            if getattr(self, f) < 0:
                raise ConfigError(f"{f} must be non-negative")


@dataclass
class SynthSpec:
    """Synthetic lesion corpus: class-separating shape/texture parameters
    drawn from disjoint-mean distributions, shared nuisance elsewhere."""

    n_per_class: int
    seed: int = 0
    image_size: int = IMAGE_SIZE


@dataclass
class SkinProfile:
    """Chroma box defining 'skin-colored' after luminance normalization.

    A pixel is skin iff r/(r+g+b) and g/(r+g+b) fall inside the box and
    it is bright enough to carry chroma information at all.
    """

    r_min: float = 0.35
    r_max: float = 0.62
    g_min: float = 0.22
    g_max: float = 0.40
    min_brightness: float = 0.15


def _to_chw(img):
    """PIL image or HWC uint8 array -> float32 CHW in [0,1]."""
    arr = np.asarray(img, dtype=np.float32) / 255.0
    if arr.ndim == 2:
        arr = np.stack([arr] * 3, axis=-1)
    return np.ascontiguousarray(arr[:, :, :3].transpose(2, 0, 1))


def _resize_center(img, size=IMAGE_SIZE):
    """Aspect-preserving center crop to square, then bilinear resize."""
    w, h = img.size
    side = min(w, h)
    left, top = (w - side) // 2, (h - side) // 2
    img = img.crop((left, top, left + side, top + side))
    return img.resize((size, size), Image.BILINEAR)


def read_labels_csv(path):
    """id -> {0,1} from a CSV with header `id,label`; conflicts are errors."""
    labels = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or [f.strip() for f in reader.fieldnames[:2]] != ["id", "label"]:
            raise IngestError(f"labels CSV must have header id,label; got {reader.fieldnames}")
        for row in reader:
            ident = row["id"].strip()
            name = row["label"].strip().lower()
            if name not in LABEL_NAMES:
                raise IngestError(f"label for {ident!r} must be benign|malignant, got {name!r}")
            value = LABEL_NAMES[name]
            if ident in labels and labels[ident] != value:
                raise IngestError(f"conflicting labels for id {ident!r}")
            labels[ident] = value
    return labels


def ingest(image_dir, labels_csv=None, preprocess=None):
    """Decode a directory of raster images into a Dataset.

    Labelled membership comes from the CSV (ids absent from it are
    unlabelled, encoded as label -1 in the returned labels array).  Images
    that fail to decode are skipped and counted; CSV ids that resolve to
    no file are errors.  `preprocess` optionally maps a PIL image to a CHW
    array (used for identifier-patch removal); images it rejects are
    counted, not silently dropped.

    Returns (dataset, stats) where stats has `skipped` and `rejected`
    counts.
    """
    image_dir = Path(image_dir)
    labels = read_labels_csv(labels_csv) if labels_csv else {}
    files = sorted(p for p in image_dir.iterdir() if p.is_file())
    by_stem = {p.stem: p for p in files}
    missing = sorted(set(labels) - set(by_stem))
    if missing:
        raise IngestError(f"labelled ids with no image file: {', '.join(missing[:10])}")

    images, label_col, ids = [], [], []
    skipped = rejected = 0
    for path in files:
        try:
            with Image.open(path) as img:
                img = img.convert("RGB")
                if preprocess is not None:
                    try:
                        chw = preprocess(img)
                    except PreprocessingRejected:
                        rejected += 1
                        continue
                else:
                    chw = _to_chw(_resize_center(img))
        except (OSError, SyntaxError):
            skipped += 1
            continue
        images.append(chw)
        ids.append(path.stem)
        label_col.append(labels.get(path.stem, -1))

    stats = {"skipped": skipped, "rejected": rejected, "total": len(images)}
    images = np.stack(images) if images else np.zeros((0, CHANNELS, IMAGE_SIZE, IMAGE_SIZE), np.float32)
    return Dataset(images, np.asarray(label_col, dtype=np.int64), ids), stats


# -- identifier-patch removal -------------------------------------------------


def skin_mask(chw, profile=None):
    """Binary mask of skin-colored pixels in luminance-normalized chroma."""
    profile = profile or SkinProfile()
    r, g, b = chw[0], chw[1], chw[2]
    total = r + g + b
    safe = np.maximum(total, 1e-6)
    rn, gn = r / safe, g / safe
    mask = (
        (rn >= profile.r_min)
        & (rn <= profile.r_max)
        & (gn >= profile.g_min)
        & (gn <= profile.g_max)
        & (total >= 3 * profile.min_brightness)
    )
    return mask


def maximal_rectangle(mask):
    """Largest axis-aligned all-true rectangle: (top, left, height, width).

    Exact dynamic program: per row, a histogram of consecutive true cells,
    then the largest-rectangle-in-histogram stack scan.
    """
    h, w = mask.shape
    heights = np.zeros(w, dtype=np.int64)
    best = (0, 0, 0, 0)
    best_area = 0
    for row in range(h):
        heights = np.where(mask[row], heights + 1, 0)
        stack = []  # (start index, height)
        for col in range(w + 1):
            cur = heights[col] if col < w else 0
            start = col
            while stack and stack[-1][1] >= cur:
                s, hh = stack.pop()
                area = hh * (col - s)
                if area > best_area:
                    best_area = area
                    best = (row - hh + 1, s, hh, col - s)
                start = s
            if not stack or cur > 0:
                stack.append((start, cur))
    return best if best_area > 0 else None


def remove_identifier_patch(img, profile=None, mask_size=32, min_extent=16):
    """Crop an image to the largest skin-only rectangle and resize to 64x64.

    The mask is computed on a `mask_size` downsample (the exact DP runs
    there), the winning rectangle is rescaled to full resolution, and the
    crop is centered and square before the final resize.  Raises
    `PreprocessingRejected` when no skin is found or the rectangle maps to
    less than `min_extent` pixels on a side at full resolution.
    """
    if not isinstance(img, Image.Image):
        arr = np.asarray(img)
        if arr.ndim == 3 and arr.shape[0] in (1, 3) and arr.shape[0] < arr.shape[2]:
            arr = arr.transpose(1, 2, 0)
        if arr.dtype != np.uint8:
            arr = (np.clip(arr, 0, 1) * 255).astype(np.uint8)
        img = Image.fromarray(arr)
    img = img.convert("RGB")
    full_w, full_h = img.size

    small = img.resize((mask_size, mask_size), Image.BILINEAR)
    mask = skin_mask(_to_chw(small), profile)
    rect = maximal_rectangle(mask)
    if rect is None:
        raise PreprocessingRejected("no skin-colored region found")
    top, left, rh, rw = rect

    scale_y, scale_x = full_h / mask_size, full_w / mask_size
    y0, x0 = int(round(top * scale_y)), int(round(left * scale_x))
    y1, x1 = int(round((top + rh) * scale_y)), int(round((left + rw) * scale_x))
    if (y1 - y0) < min_extent or (x1 - x0) < min_extent:
        raise PreprocessingRejected(f"skin rectangle below {min_extent}x{min_extent}")

    # center a square crop inside the rectangle
    side = min(y1 - y0, x1 - x0)
    cy, cx = (y0 + y1) // 2, (x0 + x1) // 2
    y0, x0 = cy - side // 2, cx - side // 2
    crop = img.crop((x0, y0, x0 + side, y0 + side))
    return _to_chw(crop.resize((IMAGE_SIZE, IMAGE_SIZE), Image.BILINEAR))


# -- augmentation --------------------------------------------------------------


def _id_rng(seed, source_id):
    digest = blake2s(str(source_id).encode(), digest_size=8).digest()
    return np.random.default_rng(np.random.SeedSequence(entropy=(seed, int.from_bytes(digest, "little"))))


def rotate_image(chw, angle_degrees):
    """Bilinear rotation with reflect padding, output shape preserved."""
    return ndimage.rotate(
        chw, angle_degrees, axes=(2, 1), reshape=False, order=1, mode="reflect"
    ).astype(np.float32)


def augment(dataset, seed=0):
    """Expand each image to 4 variants: original, h-flip, v-flip, one random
    rotation with angle uniform in (-180, 180].

    Variant ids are `<source>#<tag>` so split membership stays traceable
    to the source id; labels are inherited unchanged.
    """
    images, labels, ids = [], [], []
    has_labels = dataset.labels is not None
    for i in range(len(dataset)):
        src = dataset.images[i]
        src_id = dataset.ids[i]
        rng = _id_rng(seed, src_id)
        angle = 180.0 - rng.random() * 360.0  # uniform in (-180, 180]
        variants = [
            ("orig", src),
            ("hflip", src[:, :, ::-1].copy()),
            ("vflip", src[:, ::-1, :].copy()),
            ("rot", rotate_image(src, angle)),
        ]
        for tag, img in variants:
            images.append(np.clip(img, 0.0, 1.0))
            ids.append(f"{src_id}#{tag}")
            if has_labels:
                labels.append(dataset.labels[i])
    return Dataset(
        np.stack(images) if images else dataset.images,
        np.asarray(labels, dtype=np.int64) if has_labels else None,
        ids,
    )


def source_id(ident):
    """Strip augmentation tags: 'img12#rot' -> 'img12'."""
    return str(ident).split("#", 1)[0]


# -- splitting -----------------------------------------------------------------


def split(dataset, spec):
    """Seeded disjoint splits: labelled train/val/test stratified by class,
    unlabelled pool from everything left (labels discarded).

    Returns {"unlabelled", "labelled_train", "val", "test"} Datasets.
    Raises ConfigError with the shortfall when pools are too small.
    """
    if dataset.labels is None:
        raise ConfigError("split needs per-image labels (-1 for unlabelled)")
    rng = np.random.default_rng(spec.seed)

    labelled_idx = np.flatnonzero(dataset.labels >= 0)
    n_labelled_needed = spec.n_labelled_train + spec.n_val + spec.n_test
    if len(labelled_idx) < n_labelled_needed:
        raise ConfigError(
            f"need {n_labelled_needed} labelled images, have {len(labelled_idx)} "
            f"(short by {n_labelled_needed - len(labelled_idx)})"
        )

    # stratified allocation: split each class proportionally into the three
    # labelled pools, largest-remainder rounding on the class counts
    val_take, test_take, train_take = [], [], []
    for cls in (MALIGNANT, BENIGN):
        cls_idx = labelled_idx[dataset.labels[labelled_idx] == cls]
        cls_idx = rng.permutation(cls_idx)
        frac = len(cls_idx) / len(labelled_idx)
        n_val = int(round(spec.n_val * frac))
        n_test = int(round(spec.n_test * frac))
        n_train = int(round(spec.n_labelled_train * frac))
        val_take.append(cls_idx[:n_val])
        test_take.append(cls_idx[n_val : n_val + n_test])
        train_take.append(cls_idx[n_val + n_test : n_val + n_test + n_train])
    val_idx = np.concatenate(val_take)
    test_idx = np.concatenate(test_take)
    train_idx = np.concatenate(train_take)

    # rounding may leave a split one short; top up from untouched labelled ids
    used = set(val_idx) | set(test_idx) | set(train_idx)
    spare = [i for i in labelled_idx if i not in used]
    for target, pool in (("n_val", val_take), ("n_test", test_take), ("n_labelled_train", train_take)):
        want = getattr(spec, target)
        have = sum(len(t) for t in pool)
        while have < want and spare:
            pool.append(np.asarray([spare.pop()]))
            have += 1
    val_idx = np.concatenate(val_take)
    test_idx = np.concatenate(test_take)
    train_idx = np.concatenate(train_take)
    used = set(val_idx) | set(test_idx) | set(train_idx)

    remaining = np.asarray([i for i in range(len(dataset)) if i not in used], dtype=np.int64)
    if len(remaining) < spec.n_unlabelled:
        raise ConfigError(
            f"need {spec.n_unlabelled} unlabelled images, have {len(remaining)} "
            f"(short by {spec.n_unlabelled - len(remaining)})"
        )
    unlab_idx = rng.permutation(remaining)[: spec.n_unlabelled]

    return {
        "unlabelled": dataset.subset(np.sort(unlab_idx), drop_labels=True),
        "labelled_train": dataset.subset(np.sort(train_idx)),
        "val": dataset.subset(np.sort(val_idx)),
        "test": dataset.subset(np.sort(test_idx)),
    }


# -- synthetic corpus ----------------------------------------------------------

# class-separating parameter means (benign, malignant); shared std devs.
# asymmetry elongates the blob, wobble roughens the border, texture adds
# interior ripple at a class-specific frequency.
SYNTH_CLASS_PARAMS = {
    "asymmetry": ((0.06, 0.03), (0.32, 0.06)),
    "wobble": ((0.03, 0.015), (0.16, 0.04)),
    "texture_freq": ((1.5, 0.4), (5.5, 0.9)),
}


def _synth_image(rng, label, size):
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float32)

    # shared nuisance: background tone, lesion position/size/color, lighting
    tone = np.array([0.82, 0.62, 0.52], np.float32) + rng.uniform(-0.08, 0.08, 3).astype(np.float32)
    cx, cy = size / 2 + rng.uniform(-8, 8, 2)
    r0 = rng.uniform(10.0, 16.0)
    lesion = np.array([0.36, 0.22, 0.18], np.float32) + rng.uniform(-0.06, 0.06, 3).astype(np.float32)
    grad_dir = rng.uniform(0, 2 * np.pi)
    grad_amp = rng.uniform(0.0, 0.05)

    def draw(name):
        mean, std = SYNTH_CLASS_PARAMS[name][label]
        return max(0.0, rng.normal(mean, std))

    asym, wobble, tex_freq = draw("asymmetry"), draw("wobble"), draw("texture_freq")
    phi = rng.uniform(0, 2 * np.pi)
    harmonics = rng.integers(3, 9, size=3)
    phases = rng.uniform(0, 2 * np.pi, size=3)

    dx, dy = xx - cx, yy - cy
    rho = np.sqrt(dx * dx + dy * dy)
    theta = np.arctan2(dy, dx)
    boundary = r0 * (
        1.0
        + asym * np.cos(theta - phi)
        + wobble * sum(np.sin(int(m) * theta + p) for m, p in zip(harmonics, phases))
    )
    alpha = 1.0 / (1.0 + np.exp((rho - boundary) / 1.2))  # soft edge

    tex_phase = rng.uniform(0, 2 * np.pi)
    texture = 1.0 + 0.22 * np.sin(2 * np.pi * tex_freq * rho / max(r0, 1e-6) + tex_phase)

    shade = 1.0 + grad_amp * ((dx * np.cos(grad_dir) + dy * np.sin(grad_dir)) / size)
    img = np.empty((3, size, size), np.float32)
    for c in range(3):
        img[c] = tone[c] * shade * (1 - alpha) + lesion[c] * texture * alpha
    img += rng.normal(0, 0.012, img.shape).astype(np.float32)
    return np.clip(img, 0.0, 1.0)


def synth_generate(spec):
    """Seeded lesion-like corpus: `n_per_class` images per class, labelled."""
    rng = np.random.default_rng(spec.seed)
    images, labels, ids = [], [], []
    for i in range(spec.n_per_class * 2):
        label = i % 2
        images.append(_synth_image(rng, label, spec.image_size))
        labels.append(label)
        ids.append(f"synth{i:06d}")
    if not images:
        return Dataset(np.zeros((0, CHANNELS, spec.image_size, spec.image_size), np.float32), np.zeros(0, np.int64), [])
    return Dataset(np.stack(images), np.asarray(labels, np.int64), ids)


# -- dataset files -------------------------------------------------------------

_HEADER = struct.Struct("<4I")


def write_tensor_file(path, images):
    """Raw split file: <4 uint32 LE header><float32 LE payload>."""
    images = np.ascontiguousarray(images, dtype="<f4")
    n, c, h, w = images.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(n, c, h, w))
        fh.write(images.tobytes())


def read_tensor_file(path):
    with open(path, "rb") as fh:
        header = fh.read(_HEADER.size)
        if len(header) != _HEADER.size:
            raise IngestError(f"{path}: truncated header")
        n, c, h, w = _HEADER.unpack(header)
        payload = fh.read(n * c * h * w * 4)
        if len(payload) != n * c * h * w * 4:
            raise IngestError(f"{path}: truncated payload")
    return np.frombuffer(payload, dtype="<f4").reshape(n, c, h, w).astype(np.float32)


def write_dataset(out_dir, splits, extra_manifest=None):
    """Write manifest.json plus one .tensors file per split."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {"splits": {}, "format": {
        "tensor_file": "header: 4x uint32 LE (count, channels, height, width); payload: float32 LE row-major",
        "image_shape": [CHANNELS, IMAGE_SIZE, IMAGE_SIZE],
    }}
    if extra_manifest:
        manifest.update(extra_manifest)
    for name, ds in splits.items():
        write_tensor_file(out_dir / f"{name}.tensors", ds.images)
        manifest["splits"][name] = {
            "file": f"{name}.tensors",
            "count": len(ds),
            "ids": list(ds.ids),
            "labels": None if ds.labels is None else [int(v) for v in ds.labels],
        }
    with open(out_dir / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return out_dir / "manifest.json"


def load_dataset(data_dir):
    """Read a dataset directory back into {split: Dataset}."""
    data_dir = Path(data_dir)
    with open(data_dir / "manifest.json") as fh:
        manifest = json.load(fh)
    splits = {}
    for name, meta in manifest["splits"].items():
        images = read_tensor_file(data_dir / meta["file"])
        labels = None if meta["labels"] is None else np.asarray(meta["labels"], np.int64)
        splits[name] = Dataset(images, labels, list(meta["ids"]))
    return splits, manifest
