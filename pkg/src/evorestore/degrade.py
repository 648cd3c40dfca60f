"""Synthetic degradations, image metrics, and paired dataset assembly.

Five parametric degradation kinds (all deterministic per seed, outputs clamped
to [0, 1]):

  noise     additive white Gaussian, std `sigma`
  blur      periodic Gaussian blur with kernel std `kernel_sigma`
  haze      I = t0 * J + (1 - t0) * airlight   (atmospheric veil)
  lowlight  I = scale * J ** gamma             (gamma-darkened exposure)
  rain      `count` additive bright streaks at `angle_deg` with `intensity`

Datasets pair each clean image with each degradation spec and carry stratified
train/validation/test splits (equal validation counts per kind).
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError, DimensionError, NumericIntegrityError
from .grids import as_grid, conv2_periodic, gaussian_kernel, read_fgrid, write_fgrid
from .losses import ssim_index

KINDS = ("noise", "blur", "haze", "lowlight", "rain")

PSNR_CAP_DB = 99.0


@dataclass(frozen=True)
class DegradationSpec:
    kind: str
    seed: int = 0
    sigma: float = 0.0  # noise
    kernel_sigma: float = 0.0  # blur
    t0: float = 1.0  # haze transmission
    airlight: float = 1.0  # haze veil intensity
    gamma: float = 1.0  # lowlight exponent
    scale: float = 1.0  # lowlight multiplier
    count: int = 0  # rain streak count
    angle_deg: float = 60.0  # rain streak angle
    intensity: float = 0.0  # rain streak brightness

    def validate(self) -> None:
        if self.kind not in KINDS:
            raise ConfigError(f"unknown degradation kind {self.kind!r}")
        if self.kind == "noise" and not self.sigma > 0:
            raise ConfigError(f"noise sigma must be > 0, got {self.sigma}")
        if self.kind == "blur" and not self.kernel_sigma > 0:
            raise ConfigError(f"blur kernel_sigma must be > 0, got {self.kernel_sigma}")
        if self.kind == "haze":
            if not 0.0 <= self.t0 <= 1.0:
                raise ConfigError(f"haze t0 must be in [0,1], got {self.t0}")
            if not 0.0 <= self.airlight <= 1.0:
                raise ConfigError(f"haze airlight must be in [0,1], got {self.airlight}")
        if self.kind == "lowlight":
            if not self.gamma > 0:
                raise ConfigError(f"lowlight gamma must be > 0, got {self.gamma}")
            if not 0.0 < self.scale <= 1.0:
                raise ConfigError(f"lowlight scale must be in (0,1], got {self.scale}")
        if self.kind == "rain":
            if self.count < 1:
                raise ConfigError(f"rain count must be >= 1, got {self.count}")
            if not 0.0 < self.intensity <= 1.0:
                raise ConfigError(f"rain intensity must be in (0,1], got {self.intensity}")

    # convenience constructors
    @classmethod
    def noise(cls, sigma: float, seed: int = 0) -> "DegradationSpec":
        return cls("noise", seed=seed, sigma=sigma)

    @classmethod
    def blur(cls, kernel_sigma: float, seed: int = 0) -> "DegradationSpec":
        return cls("blur", seed=seed, kernel_sigma=kernel_sigma)

    @classmethod
    def haze(cls, t0: float, airlight: float, seed: int = 0) -> "DegradationSpec":
        return cls("haze", seed=seed, t0=t0, airlight=airlight)

    @classmethod
    def lowlight(cls, gamma: float, scale: float, seed: int = 0) -> "DegradationSpec":
        return cls("lowlight", seed=seed, gamma=gamma, scale=scale)

    @classmethod
    def rain(
        cls, count: int, angle_deg: float, intensity: float, seed: int = 0
    ) -> "DegradationSpec":
        return cls(
            "rain", seed=seed, count=count, angle_deg=angle_deg, intensity=intensity
        )


def _blur_kernel_for(sigma: float, h: int, w: int) -> np.ndarray:
    size = 2 * int(math.ceil(3.0 * sigma)) + 1
    largest = min(h, w)
    if largest % 2 == 0:
        largest -= 1
    return gaussian_kernel(min(size, largest), sigma)


def apply_degradation(clean, spec: DegradationSpec) -> np.ndarray:
    """Degrade a clean [0,1] grid; deterministic in spec.seed, result clamped."""
    clean = as_grid(clean)
    if clean.min() < 0.0 or clean.max() > 1.0:
        raise NumericIntegrityError(
            f"clean image must lie in [0,1], got [{clean.min():.4g}, {clean.max():.4g}]"
        )
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    if spec.kind == "noise":
        out = clean + rng.normal(0.0, spec.sigma, size=clean.shape)
    elif spec.kind == "blur":
        out = conv2_periodic(clean, _blur_kernel_for(spec.kernel_sigma, *clean.shape))
    elif spec.kind == "haze":
        out = spec.t0 * clean + (1.0 - spec.t0) * spec.airlight
    elif spec.kind == "lowlight":
        out = spec.scale * np.power(clean, spec.gamma)
    else:  # rain
        out = clean.copy()
        h, w = clean.shape
        theta = math.radians(spec.angle_deg)
        length = max(3, int(0.25 * min(h, w)))
        for _ in range(spec.count):
            ci = rng.uniform(0, h)
            cj = rng.uniform(0, w)
            jitter = math.radians(rng.normal(0.0, 2.0))
            di = math.cos(theta + jitter)
            dj = math.sin(theta + jitter)
            for s in range(-length // 2, length // 2 + 1):
                ii = int(round(ci + s * di)) % h
                jj = int(round(cj + s * dj)) % w
                out[ii, jj] += spec.intensity
    return np.clip(out, 0.0, 1.0)


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------


def psnr(pred, target) -> float:
    """PSNR in dB for unit dynamic range; +inf sentinel for identical inputs."""
    pred = as_grid(pred)
    target = as_grid(target)
    if pred.shape != target.shape:
        raise DimensionError(f"shape mismatch {pred.shape} vs {target.shape}")
    mse = float(np.mean((pred - target) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def capped_psnr(pred, target) -> float:
    """PSNR with the +inf sentinel capped at 99 dB (CSV-friendly)."""
    return min(psnr(pred, target), PSNR_CAP_DB)


def ssim(pred, target) -> float:
    """Single-scale SSIM with the loss module's window and constants."""
    return ssim_index(pred, target)


# ---------------------------------------------------------------------------
# Synthetic clean images (bundled procedural sources)
# ---------------------------------------------------------------------------


def synthetic_clean_images(n: int, height: int, width: int, seed: int = 0) -> list:
    """Deterministic clean test images: smooth random fields with geometry mixed in."""
    if n < 1:
        raise ConfigError(f"need n >= 1 images, got {n}")
    rng = np.random.default_rng(seed)
    ii = np.arange(height)[:, None] / height
    jj = np.arange(width)[None, :] / width
    images = []
    for idx in range(n):
        # smooth random field via low-frequency Fourier synthesis
        spec = np.zeros((height, width), dtype=np.complex128)
        kmax = 5
        for u in range(-kmax, kmax + 1):
            for v in range(-kmax, kmax + 1):
                if u == 0 and v == 0:
                    continue
                r = math.hypot(u, v)
                if r > kmax:
                    continue
                amp = rng.normal() / (1.0 + r * r)
                phase = rng.uniform(0, 2 * math.pi)
                spec[u % height, v % width] = amp * np.exp(1j * phase)
        spec = 0.5 * (spec + np.conj(np.roll(spec[::-1, ::-1], (1, 1), axis=(0, 1))))
        base = np.fft.ifft2(spec, norm="ortho").real

        # geometric accents: a couple of rectangles and a disc
        for _ in range(2):
            i0 = rng.integers(0, height // 2)
            j0 = rng.integers(0, width // 2)
            di = int(rng.integers(height // 8, height // 3))
            dj = int(rng.integers(width // 8, width // 3))
            base[i0 : i0 + di, j0 : j0 + dj] += rng.uniform(-0.6, 0.6)
        ci, cj = rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8)
        rad = rng.uniform(0.08, 0.22)
        disc = (ii - ci) ** 2 + (jj - cj) ** 2 <= rad * rad
        base[disc] += rng.uniform(-0.5, 0.5)

        lo, hi = base.min(), base.max()
        span = hi - lo if hi > lo else 1.0
        images.append(0.05 + 0.9 * (base - lo) / span)
    return images


# ---------------------------------------------------------------------------
# PGM (P5, 8- or 16-bit) input images
# ---------------------------------------------------------------------------


def read_pgm(path) -> np.ndarray:
    """Binary PGM (P5) -> float grid in [0, 1]."""
    with open(path, "rb") as fh:
        data = fh.read()
    tokens = []
    i = 0
    while len(tokens) < 4 and i < len(data):
        if data[i : i + 1].isspace():
            i += 1
            continue
        if data[i : i + 1] == b"#":
            while i < len(data) and data[i : i + 1] != b"\n":
                i += 1
            continue
        j = i
        while j < len(data) and not data[j : j + 1].isspace():
            j += 1
        tokens.append(data[i:j])
        i = j
    if len(tokens) < 4 or tokens[0] != b"P5":
        raise NumericIntegrityError(f"{path}: not a binary PGM (P5) file")
    w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    if not (w > 0 and h > 0 and 0 < maxval < 65536):
        raise NumericIntegrityError(f"{path}: bad PGM header {w}x{h} maxval {maxval}")
    i += 1  # single whitespace byte after maxval
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    count = w * h
    raw = np.frombuffer(data, dtype=dtype, count=count, offset=i)
    if raw.size != count:
        raise NumericIntegrityError(f"{path}: truncated PGM payload")
    return raw.reshape(h, w).astype(np.float64) / maxval


def write_pgm(path, grid, maxval: int = 255) -> None:
    grid = as_grid(grid)
    if maxval not in (255, 65535):
        raise ConfigError(f"maxval must be 255 or 65535, got {maxval}")
    q = np.clip(np.rint(np.clip(grid, 0.0, 1.0) * maxval), 0, maxval)
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n%d\n" % (grid.shape[1], grid.shape[0], maxval))
        fh.write(q.astype(dtype).tobytes())


def read_image(path) -> np.ndarray:
    """Dispatch on extension: .pgm -> PGM, anything else -> FGRID."""
    if str(path).lower().endswith(".pgm"):
        return read_pgm(path)
    return read_fgrid(path)


# ---------------------------------------------------------------------------
# Paired dataset
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SplitConfig:
    val_fraction: float = 0.2
    test_fraction: float = 0.0
    seed: int = 0

    def validate(self) -> None:
        if not 0.0 <= self.val_fraction < 1.0:
            raise ConfigError(f"val_fraction must be in [0,1), got {self.val_fraction}")
        if not 0.0 <= self.test_fraction < 1.0:
            raise ConfigError(
                f"test_fraction must be in [0,1), got {self.test_fraction}"
            )
        if self.val_fraction + self.test_fraction >= 1.0:
            raise ConfigError("val_fraction + test_fraction must leave training data")


@dataclass
class PairRow:
    index: int
    kind: str
    seed: int
    clean: np.ndarray
    degraded: np.ndarray


@dataclass
class PairedDataset:
    pairs: list  # list[PairRow]
    train_idx: tuple
    val_idx: tuple
    test_idx: tuple

    def __post_init__(self):
        tr, va, te = set(self.train_idx), set(self.val_idx), set(self.test_idx)
        if (tr & va) or (tr & te) or (va & te):
            raise ConfigError("train/val/test splits overlap")
        if tr | va | te != set(range(len(self.pairs))):
            raise ConfigError("splits do not cover the dataset exactly")

    def _pairs_for(self, idx):
        return [self.pairs[i] for i in idx]

    def train_pairs(self):
        return self._pairs_for(self.train_idx)

    def val_pairs(self):
        return self._pairs_for(self.val_idx)

    def test_pairs(self):
        return self._pairs_for(self.test_idx)

    def restoration_pairs(self, split: str = "val"):
        """(degraded, clean) tuples for the given split, in index order."""
        idx = {"train": self.train_idx, "val": self.val_idx, "test": self.test_idx}
        if split not in idx:
            raise ConfigError(f"unknown split {split!r}")
        return [(self.pairs[i].degraded, self.pairs[i].clean) for i in idx[split]]


def _stratified_split(kinds: list, split: SplitConfig):
    """Per-kind seeded shuffles; equal validation (and test) counts per kind."""
    by_kind: dict = {}
    for i, k in enumerate(kinds):
        by_kind.setdefault(k, []).append(i)
    rng = np.random.default_rng(split.seed)
    train, val, test = [], [], []
    for k in sorted(by_kind):
        idx = np.array(by_kind[k])
        order = rng.permutation(len(idx))
        n_val = int(round(split.val_fraction * len(idx)))
        n_test = int(round(split.test_fraction * len(idx)))
        if n_val + n_test >= len(idx):
            raise ConfigError(
                f"kind {k!r}: {len(idx)} pairs cannot supply {n_val} val + {n_test} test"
            )
        shuffled = idx[order]
        val.extend(shuffled[:n_val])
        test.extend(shuffled[n_val : n_val + n_test])
        train.extend(shuffled[n_val + n_test :])
    return tuple(sorted(train)), tuple(sorted(val)), tuple(sorted(test))


def build_dataset(source_images, specs, split: SplitConfig) -> PairedDataset:
    """Degrade every source image with every spec; stratified seeded splits.

    The per-pair seed is spec.seed + image index, so two pairs of the same
    kind never share a noise realization yet everything stays reproducible.
    """
    source_images = [as_grid(im) for im in source_images]
    specs = list(specs)
    if not source_images:
        raise ConfigError("no source images supplied")
    if not specs:
        raise ConfigError("no degradation specs supplied")
    split.validate()
    rows = []
    for spec in specs:
        spec.validate()
        for i, img in enumerate(source_images):
            per_pair = replace(spec, seed=spec.seed + i)
            rows.append(
                PairRow(
                    index=len(rows),
                    kind=spec.kind,
                    seed=per_pair.seed,
                    clean=img,
                    degraded=apply_degradation(img, per_pair),
                )
            )
    train, val, test = _stratified_split([r.kind for r in rows], split)
    return PairedDataset(rows, train, val, test)


MANIFEST_HEADER = ("index", "kind", "seed", "clean_path", "degraded_path")


def write_dataset(out_dir, dataset: PairedDataset) -> str:
    """Materialize FGRID files plus 'index,kind,seed,clean_path,degraded_path'."""
    clean_dir = os.path.join(out_dir, "clean")
    deg_dir = os.path.join(out_dir, "degraded")
    os.makedirs(clean_dir, exist_ok=True)
    os.makedirs(deg_dir, exist_ok=True)
    lines = [",".join(MANIFEST_HEADER)]
    for row in dataset.pairs:
        cpath = os.path.join("clean", f"{row.index:05d}.fgrid")
        dpath = os.path.join("degraded", f"{row.index:05d}.fgrid")
        write_fgrid(os.path.join(out_dir, cpath), row.clean)
        write_fgrid(os.path.join(out_dir, dpath), row.degraded)
        lines.append(f"{row.index},{row.kind},{row.seed},{cpath},{dpath}")
    manifest = os.path.join(out_dir, "manifest.txt")
    with open(manifest, "w", newline="") as fh:
        fh.write("\n".join(lines) + "\n")
    return manifest


def load_dataset(manifest_path, split: SplitConfig) -> PairedDataset:
    """Rebuild a PairedDataset from a manifest; splits recomputed from `split`."""
    base = os.path.dirname(os.path.abspath(manifest_path))
    with open(manifest_path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines or lines[0] != ",".join(MANIFEST_HEADER):
        raise NumericIntegrityError(f"{manifest_path}: malformed manifest header")
    rows = []
    for ln in lines[1:]:
        parts = ln.split(",")
        if len(parts) != 5:
            raise NumericIntegrityError(f"{manifest_path}: bad manifest row {ln!r}")
        idx, kind, seed, cpath, dpath = parts
        rows.append(
            PairRow(
                index=int(idx),
                kind=kind,
                seed=int(seed),
                clean=read_image(os.path.join(base, cpath)),
                degraded=read_image(os.path.join(base, dpath)),
            )
        )
    split.validate()
    train, val, test = _stratified_split([r.kind for r in rows], split)
    return PairedDataset(rows, train, val, test)
