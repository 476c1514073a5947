"""Dataset manifests, PNG I/O, tiling, augmentation and a synthetic
building-footprint generator.

Arrays use channel-first layout: images are float32 (3, H, W) in [0, 1],
masks are float32 (1, H, W) in {0, 1}.
"""
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image
from scipy.ndimage import correlate1d

from .errors import ConfigError, FanetIOError, ValidationError

log = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")


# ---------------------------------------------------------------------------
# manifest
# ---------------------------------------------------------------------------

@dataclass
class DatasetManifest:
    entries: list  # (image_path, mask_path, split)
    tile_size: int = 64
    seed: int = 0
    root: Path = field(default_factory=Path)

    def __post_init__(self):
        if self.tile_size < 32 or self.tile_size % 32:
            raise ConfigError(f"tile size {self.tile_size} is not a multiple of 32", "data.tile_size")
        for img, mask, split in self.entries:
            if split not in SPLITS:
                raise ValidationError(f"unknown split {split!r} for {img}")
        images = [e[0] for e in self.entries]
        if len(set(images)) != len(images):
            raise ValidationError("an image is listed more than once")

    def split(self, name):
        return [(self.root / i, self.root / m) for i, m, s in self.entries if s == name]

    def write(self, path):
        path = Path(path)
        lines = [f"{i}\t{m}\t{s}\n" for i, m, s in self.entries]
        try:
            path.write_text("".join(lines))
        except OSError as exc:
            raise FanetIOError(f"cannot write manifest {path}: {exc}") from exc
        return path

    @classmethod
    def read(cls, path, tile_size=64, seed=0):
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise FanetIOError(f"cannot read manifest {path}: {exc}") from exc
        entries = []
        for lineno, line in enumerate(text.splitlines(), start=1):
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ValidationError(f"{path}:{lineno}: expected image<TAB>mask<TAB>split")
            entries.append(tuple(parts))
        return cls(entries, tile_size=tile_size, seed=seed, root=path.parent)


@dataclass
class SampleBatch:
    images: np.ndarray
    masks: np.ndarray

    def __post_init__(self):
        if not np.all((self.masks == 0) | (self.masks == 1)):
            raise ValidationError("masks must be binary")


def stack(samples):
    return SampleBatch(np.stack([s[0] for s in samples]), np.stack([s[1] for s in samples]))


# ---------------------------------------------------------------------------
# PNG I/O
# ---------------------------------------------------------------------------

def load_image(path):
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    except (OSError, ValueError) as exc:
        raise FanetIOError(f"cannot read image {path}: {exc}") from exc
    return np.ascontiguousarray(arr.transpose(2, 0, 1))


def load_mask(path):
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("L"))
    except (OSError, ValueError) as exc:
        raise FanetIOError(f"cannot read mask {path}: {exc}") from exc
    return (arr > 127).astype(np.float32)[None]


def save_image(path, image):
    arr = np.clip(np.rint(np.asarray(image).transpose(1, 2, 0) * 255.0), 0, 255).astype(np.uint8)
    _save(path, Image.fromarray(arr, mode="RGB"))


def save_mask(path, mask):
    arr = np.where(np.asarray(mask).reshape(mask.shape[-2:]) > 0, 255, 0).astype(np.uint8)
    _save(path, Image.fromarray(arr, mode="L"))


def _save(path, im):
    try:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        im.save(path, format="PNG")
    except OSError as exc:
        raise FanetIOError(f"cannot write {path}: {exc}") from exc


def load_split(manifest, split, tile_size=None, workers=1):
    """Load and tile every pair of ``split``; returns a list of (image, mask)."""
    tile_size = tile_size or manifest.tile_size
    pairs = manifest.split(split)

    def load(pair):
        return tile(load_image(pair[0]), load_mask(pair[1]), tile_size)

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        tiled = list(pool.map(load, pairs))
    return [t for group in tiled for t in group]


# ---------------------------------------------------------------------------
# tiling
# ---------------------------------------------------------------------------

def tile(image, mask, tile_size):
    """Non-overlapping ``tile_size`` crops in row-major order; partial tiles on
    the right/bottom edges are dropped."""
    if image.shape[-2:] != mask.shape[-2:]:
        raise ValidationError(f"image {image.shape[-2:]} and mask {mask.shape[-2:]} differ")
    H, W = image.shape[-2:]
    rows, cols = H // tile_size, W // tile_size
    if rows == 0 or cols == 0:
        log.warning("image %dx%d is smaller than one %d tile; skipped", H, W, tile_size)
        return []
    out = []
    for r in range(rows):
        for c in range(cols):
            ys = slice(r * tile_size, (r + 1) * tile_size)
            xs = slice(c * tile_size, (c + 1) * tile_size)
            out.append((image[..., ys, xs].copy(), mask[..., ys, xs].copy()))
    return out


def untile(tiles, rows, cols):
    """Inverse of :func:`tile` for a full grid of equally sized tiles."""
    grid = [np.concatenate(tiles[r * cols:(r + 1) * cols], axis=-1) for r in range(rows)]
    return np.concatenate(grid, axis=-2)


# ---------------------------------------------------------------------------
# augmentation
# ---------------------------------------------------------------------------

BLUR_SIGMA = (0.1, 2.0)


def gaussian_kernel(sigma):
    radius = int(math.ceil(3 * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def gaussian_blur(image, sigma):
    """Separable blur with reflected edges, per channel."""
    k = gaussian_kernel(sigma)
    out = image.astype(np.float64)
    out = correlate1d(out, k, axis=-1, mode="reflect")
    out = correlate1d(out, k, axis=-2, mode="reflect")
    return out.astype(image.dtype)


def hflip(array):
    return np.ascontiguousarray(array[..., ::-1])


def augment(sample, seed):
    """Random horizontal flip (image and mask together) and random Gaussian
    blur (image only), each with probability 0.5, drawn from ``seed``."""
    image, mask = sample
    rng = np.random.default_rng(seed)
    flip, blur = rng.random(2) < 0.5
    sigma = rng.uniform(*BLUR_SIGMA)
    if flip:
        image, mask = hflip(image), hflip(mask)
    if blur:
        image = gaussian_blur(image, sigma)
    return image, mask


def epoch_batches(samples, batch_size, seed, epoch, augmented=True, workers=1):
    """Shuffled batches for one epoch.

    Order depends only on (seed, epoch) and each sample's augmentation only on
    (seed, epoch, sample index), so results do not depend on scheduling.
    """
    order = np.random.default_rng([seed, epoch]).permutation(len(samples))

    def prepare(i):
        if augmented:
            return augment(samples[i], [seed, epoch, int(i)])
        return samples[i]

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        for start in range(0, len(order), batch_size):
            chunk = order[start:start + batch_size]
            yield stack(list(pool.map(prepare, chunk)))


def fixed_batches(samples, batch_size):
    for start in range(0, len(samples), batch_size):
        yield stack(samples[start:start + batch_size])


# ---------------------------------------------------------------------------
# synthetic scenes
# ---------------------------------------------------------------------------

@dataclass
class SynthSpec:
    canvas: int = 64
    n_train: int = 64
    n_val: int = 0
    n_test: int = 8
    buildings: tuple = (2, 5)
    building_size: tuple = (10, 26)
    rotation: bool = False
    occluders: tuple = (1, 3)
    occluder_size: tuple = (3, 7)
    occluder_opacity: float = 0.7
    noise: float = 0.03
    seed: int = 0

    def __post_init__(self):
        for name in ("buildings", "building_size", "occluders", "occluder_size"):
            lo, hi = getattr(self, name)
            setattr(self, name, (int(lo), int(hi)))
            if lo > hi or lo < 0:
                raise ConfigError(f"empty range {lo}..{hi}", f"synth.{name}")
        if self.canvas < 1:
            raise ConfigError("must be positive", "synth.canvas")
        if self.building_size[0] < 1:
            raise ConfigError("buildings need a positive size", "synth.building_size")
        if not 0 <= self.occluder_opacity <= 1:
            raise ConfigError("must be within [0, 1]", "synth.occluder_opacity")
        if self.noise < 0:
            raise ConfigError("must be >= 0", "synth.noise")

    def to_dict(self):
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}


@dataclass
class Building:
    cy: float
    cx: float
    h: float
    w: float
    angle: float = 0.0

    def box(self):
        """Integer (y0, x0, y1, x1) half-open extent of an axis-aligned building."""
        y0 = int(round(self.cy - self.h / 2))
        x0 = int(round(self.cx - self.w / 2))
        return y0, x0, y0 + int(self.h), x0 + int(self.w)

    def coverage(self, size):
        """Pixels whose centre lies inside the building."""
        if self.angle == 0.0:
            y0, x0, y1, x1 = self.box()
            m = np.zeros((size, size), dtype=bool)
            m[max(y0, 0):max(min(y1, size), 0), max(x0, 0):max(min(x1, size), 0)] = True
            return m
        yy, xx = np.mgrid[0:size, 0:size] + 0.5
        dy, dx = yy - self.cy, xx - self.cx
        c, s = math.cos(self.angle), math.sin(self.angle)
        u = c * dx + s * dy
        v = -s * dx + c * dy
        return (np.abs(u) <= self.w / 2) & (np.abs(v) <= self.h / 2)


def _smooth_noise(rng, size, cells, channels):
    coarse = rng.random((channels, cells, cells))
    idx = (np.arange(size) + 0.5) * cells / size - 0.5
    i0 = np.clip(np.floor(idx).astype(int), 0, cells - 1)
    i1 = np.clip(i0 + 1, 0, cells - 1)
    f = np.clip(idx - i0, 0, 1)
    rows = coarse[:, i0] * (1 - f)[None, :, None] + coarse[:, i1] * f[None, :, None]
    return rows[:, :, i0] * (1 - f)[None, None, :] + rows[:, :, i1] * f[None, None, :]


def render_scene(spec, rng):
    """One synthetic tile.  Returns (image (3,S,S), mask (1,S,S), buildings).

    Buildings are bright rectangles on a textured background; tree/shadow
    occluders darken the image over buildings but never touch the mask.
    """
    S = spec.canvas
    base = rng.uniform(0.2, 0.4, size=3) * np.array([0.9, 1.1, 0.8])
    texture = _smooth_noise(rng, S, max(2, S // 8), 3)
    image = base[:, None, None] + 0.15 * (texture - 0.5)

    buildings = []
    for _ in range(rng.integers(spec.buildings[0], spec.buildings[1] + 1)):
        h = int(rng.integers(spec.building_size[0], spec.building_size[1] + 1))
        w = int(rng.integers(spec.building_size[0], spec.building_size[1] + 1))
        cy = float(rng.integers(0, S + 1)) if h < S else S / 2
        cx = float(rng.integers(0, S + 1)) if w < S else S / 2
        angle = float(rng.uniform(0, math.pi / 2)) if spec.rotation else 0.0
        buildings.append(Building(cy, cx, h, w, angle))

    mask = np.zeros((S, S), dtype=bool)
    for b in buildings:
        cover = b.coverage(S)
        roof = rng.uniform(0.6, 0.95) * np.array(rng.uniform(0.85, 1.0, size=3))
        image[:, cover] = roof[:, None]
        mask |= cover

    yy, xx = np.mgrid[0:S, 0:S] + 0.5
    for _ in range(rng.integers(spec.occluders[0], spec.occluders[1] + 1)):
        ry = rng.uniform(spec.occluder_size[0], spec.occluder_size[1] + 1)
        rx = rng.uniform(spec.occluder_size[0], spec.occluder_size[1] + 1)
        if buildings and rng.random() < 0.7:
            b = buildings[rng.integers(len(buildings))]
            cy = b.cy + rng.uniform(-0.5, 0.5) * b.h
            cx = b.cx + rng.uniform(-0.5, 0.5) * b.w
        else:
            cy, cx = rng.uniform(0, S, size=2)
        inside = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0
        if rng.random() < 0.5:
            colour = np.array([0.08, 0.22, 0.07])        # tree canopy
        else:
            colour = np.zeros(3)                           # cast shadow
        a = spec.occluder_opacity
        image[:, inside] = image[:, inside] * (1 - a) + colour[:, None] * a

    image = image + spec.noise * rng.standard_normal(image.shape)
    image = np.clip(image, 0.0, 1.0).astype(np.float32)
    return image, mask.astype(np.float32)[None], buildings


def synthetic_samples(spec, count, stream=0):
    """In-memory scenes; scene ``k`` of ``stream`` depends only on (seed, stream, k)."""
    out = []
    for k in range(count):
        image, mask, _ = render_scene(spec, np.random.default_rng([spec.seed, stream, k]))
        out.append((image, mask))
    return out


SPLIT_STREAMS = {"train": 0, "val": 1, "test": 2}


def generate_synthetic(spec, out_dir):
    """Write PNG image/mask pairs plus ``manifest.tsv`` under ``out_dir``."""
    out_dir = Path(out_dir)
    try:
        (out_dir / "images").mkdir(parents=True, exist_ok=True)
        (out_dir / "masks").mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise FanetIOError(f"cannot create {out_dir}: {exc}") from exc
    if not os.access(out_dir, os.W_OK):
        raise FanetIOError(f"{out_dir} is not writable")
    entries = []
    for split, count in (("train", spec.n_train), ("val", spec.n_val), ("test", spec.n_test)):
        for k, (image, mask) in enumerate(synthetic_samples(spec, count, SPLIT_STREAMS[split])):
            img_rel = f"images/{split}_{k:04d}.png"
            mask_rel = f"masks/{split}_{k:04d}.png"
            save_image(out_dir / img_rel, image)
            save_mask(out_dir / mask_rel, mask)
            entries.append((img_rel, mask_rel, split))
    tile_size = spec.canvas if spec.canvas % 32 == 0 and spec.canvas >= 32 else 64
    manifest = DatasetManifest(entries, tile_size=tile_size, seed=spec.seed, root=out_dir)
    manifest.write(out_dir / "manifest.tsv")
    return manifest
