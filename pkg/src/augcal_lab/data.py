"""Dataset containers, the on-disk dataset format, and the two synthetic
source/target shift generators.

The image benchmark ("spectral shift") builds class-coded sinusoidal gratings
and corrupts the target domain in the frequency domain (high-frequency
amplitude damping) plus a global brightness/contrast change, so the shift is
covariate-only and amplitude-space augmentation can plausibly bridge it.

The tabular benchmark ("gaussian shift") is a two-class Gaussian mixture whose
source and target marginal densities are known exactly, which is what the
divergence-bound verifier in `analysis` needs.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .numerics import Rng, as_f64, fft2, ifft2, fftshift2, ifftshift2, \
    centered_frequency_offsets, logsumexp

FEATURE_FILE = "features.bin"
LABEL_FILE = "labels.bin"
MANIFEST_FILE = "manifest.json"


class DatasetFormatError(ValueError):
    """Raised when an on-disk dataset directory is missing, truncated, or
    inconsistent with its manifest."""


@dataclass
class LabeledDataset:
    """Features plus integer labels; the unit of generation, augmentation and
    training. Image features are [N, H, W, C] in [0, 1]; tabular are [N, d]."""

    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    domain_tag: str  # "source" | "target"
    kind: str        # "image" | "tabular"
    name: str = ""
    generator_config: dict = field(default_factory=dict)

    def __post_init__(self):
        self.features = as_f64(self.features)
        self.labels = np.ascontiguousarray(np.asarray(self.labels, dtype=np.int64))
        if self.features.shape[0] < 1:
            raise ValueError("dataset must contain at least one sample")
        if self.features.shape[0] != self.labels.shape[0]:
            raise ValueError("features and labels disagree on sample count")
        bad = np.flatnonzero((self.labels < 0) | (self.labels >= self.num_classes))
        if bad.size:
            raise ValueError(
                f"label out of range [0, {self.num_classes}) at index {int(bad[0])}: "
                f"{int(self.labels[bad[0]])}"
            )

    @property
    def n(self) -> int:
        return int(self.features.shape[0])

    @property
    def sample_shape(self) -> tuple:
        return tuple(self.features.shape[1:])

    @property
    def feature_dim(self) -> int:
        return int(np.prod(self.sample_shape))

    def features_flat(self) -> np.ndarray:
        """[N, d] view used by the classifier (images flattened row-major)."""
        return self.features.reshape(self.n, -1)

    def features_only(self) -> np.ndarray:
        """Label-stripped view handed to the trainer for the target domain."""
        return self.features


# ---------------------------------------------------------------------------
# spectral-shift image benchmark
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SpectralShiftConfig:
    n_per_domain: int = 500
    image_size: int = 32          # H == W
    num_classes: int = 4
    seed: int = 0
    # per-sample contrast heterogeneity: amplitude ~ U(lo, hi)
    amplitude_range: tuple = (0.1, 0.5)
    base_frequency: float = 9.0   # cycles across the image; sits above the
                                  # corruption cutoff so the class signal is
                                  # what the target domain degrades
    noise_sigma: float = 0.05
    # target-domain corruption (fixed defaults, overridable)
    highfreq_scale: float = 0.5   # amplitude factor above the radius cutoff
    highfreq_radius_frac: float = 0.25   # cutoff radius = frac * image_size
    brightness: float = 0.1
    contrast: float = 0.9


def class_orientation(k: int, num_classes: int) -> float:
    return k * math.pi / num_classes


def _grating(size: int, theta: float, freq: float, amplitude: float,
             phase: float) -> np.ndarray:
    r = np.arange(size, dtype=np.float64)[:, None]
    c = np.arange(size, dtype=np.float64)[None, :]
    arg = 2.0 * math.pi * freq * (math.cos(theta) * r + math.sin(theta) * c) / size
    return 0.5 + amplitude * np.cos(arg + phase)


def _corrupt_target_image(img: np.ndarray, cfg: SpectralShiftConfig) -> np.ndarray:
    h, w = img.shape
    spec = fftshift2(fft2(img))
    m, n = centered_frequency_offsets(h, w)
    radius = np.sqrt(m * m + n * n)
    scale = np.where(radius > cfg.highfreq_radius_frac * cfg.image_size,
                     cfg.highfreq_scale, 1.0)
    out = ifft2(ifftshift2(spec * scale)).real
    out = cfg.contrast * out + cfg.brightness
    return np.clip(out, 0.0, 1.0)


def _balanced_labels(n: int, num_classes: int, rng: Rng) -> np.ndarray:
    labels = np.arange(n, dtype=np.int64) % num_classes
    return rng.permutation(labels)


def generate_spectral_shift(cfg: SpectralShiftConfig) -> tuple[LabeledDataset, LabeledDataset]:
    """Build the (source, target) image pair. Pure function of the config;
    the same seed always yields bit-identical datasets."""
    if cfg.image_size < 8:
        raise ValueError("image_size must be >= 8")
    if cfg.num_classes < 2:
        raise ValueError("num_classes must be >= 2")
    if cfg.n_per_domain < cfg.num_classes:
        raise ValueError("n_per_domain must be >= num_classes")

    echo = asdict(cfg)
    datasets = []
    for domain in ("source", "target"):
        stream = Rng(cfg.seed, f"spectral/{domain}")
        labels = _balanced_labels(cfg.n_per_domain, cfg.num_classes,
                                  stream.substream("labels"))
        amp_lo, amp_hi = cfg.amplitude_range
        if not 0.0 <= amp_lo <= amp_hi:
            raise ValueError("amplitude_range must satisfy 0 <= lo <= hi")
        imgs = np.empty((cfg.n_per_domain, cfg.image_size, cfg.image_size, 1))
        for i in range(cfg.n_per_domain):
            s = stream.substream(f"sample/{i}")
            theta = class_orientation(int(labels[i]), cfg.num_classes)
            phase = s.uniform(0.0, 2.0 * math.pi)
            amp = s.uniform(amp_lo, amp_hi)
            img = _grating(cfg.image_size, theta, cfg.base_frequency,
                           amp, phase)
            img = img + cfg.noise_sigma * s.standard_normal(img.shape)
            if domain == "target":
                img = _corrupt_target_image(img, cfg)
            imgs[i, :, :, 0] = np.clip(img, 0.0, 1.0)
        datasets.append(LabeledDataset(
            features=imgs, labels=labels, num_classes=cfg.num_classes,
            domain_tag=domain, kind="image",
            name=f"spectral-shift-{domain}", generator_config=echo))
    return datasets[0], datasets[1]


# ---------------------------------------------------------------------------
# gaussian-shift tabular benchmark
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GaussianShiftConfig:
    n_per_domain: int = 2000
    dim: int = 2                 # 1 or 2
    num_classes: int = 2         # fixed
    mean_shift: float = 1.0      # translation applied to every target mean
    seed: int = 0


def _gaussian_log_density(x: np.ndarray, mean: np.ndarray) -> np.ndarray:
    # unit-covariance Gaussian
    d = mean.shape[0]
    diff = x - mean
    return -0.5 * np.sum(diff * diff, axis=-1) - 0.5 * d * math.log(2.0 * math.pi)


@dataclass
class DensityPair:
    """Exact source/target marginal log-densities for the tabular benchmark,
    plus the component parameters needed for sampling and quadrature boxes.

    `source_means` / `target_means` are [K, d]; every component has identity
    covariance and equal weight. The class-posterior rule is shared across
    domains, so the pair realizes pure covariate shift.
    """

    source_means: np.ndarray
    target_means: np.ndarray
    dim: int

    def __post_init__(self):
        self.source_means = as_f64(self.source_means)
        self.target_means = as_f64(self.target_means)

    def _log_mixture(self, x: np.ndarray, means: np.ndarray) -> np.ndarray:
        x = as_f64(x).reshape(-1, self.dim)
        comps = np.stack([_gaussian_log_density(x, mu) for mu in means], axis=-1)
        return logsumexp(comps, axis=-1) - math.log(means.shape[0])

    def log_density_source(self, x: np.ndarray) -> np.ndarray:
        return self._log_mixture(x, self.source_means)

    def log_density_target(self, x: np.ndarray) -> np.ndarray:
        return self._log_mixture(x, self.target_means)

    def bayes_posterior_class1(self, x: np.ndarray) -> np.ndarray:
        """Shared labeling rule P(y=1 | x), defined by the source components."""
        x = as_f64(x).reshape(-1, self.dim)
        l1 = _gaussian_log_density(x, self.source_means[1])
        l0 = _gaussian_log_density(x, self.source_means[0])
        return 1.0 / (1.0 + np.exp(-(l1 - l0)))

    def sample(self, domain: str, n: int, rng: Rng) -> tuple[np.ndarray, np.ndarray]:
        """Draw (x, y) with x from the domain marginal and y from the shared
        Bayes rule, enforcing covariate shift exactly in both domains."""
        means = self.source_means if domain == "source" else self.target_means
        comp = rng.integers(0, means.shape[0], size=n)
        x = means[comp] + rng.standard_normal((n, self.dim))
        y = (rng.uniform(size=n) < self.bayes_posterior_class1(x)).astype(np.int64)
        return x, y

    def quadrature_box(self, pad: float = 8.0) -> tuple[np.ndarray, np.ndarray]:
        all_means = np.vstack([self.source_means, self.target_means])
        return all_means.min(axis=0) - pad, all_means.max(axis=0) + pad


def generate_gaussian_shift(cfg: GaussianShiftConfig
                            ) -> tuple[LabeledDataset, LabeledDataset, DensityPair]:
    if cfg.dim not in (1, 2):
        raise ValueError(f"dim must be 1 or 2, got {cfg.dim}")
    if cfg.num_classes != 2:
        raise ValueError("gaussian-shift benchmark is two-class only")
    if cfg.mean_shift < 0:
        raise ValueError("mean_shift must be >= 0")

    e1 = np.zeros(cfg.dim)
    e1[0] = 1.0
    shift_dir = np.zeros(cfg.dim)
    shift_dir[1 if cfg.dim == 2 else 0] = 1.0
    source_means = np.stack([-e1, e1])
    target_means = source_means + cfg.mean_shift * shift_dir
    densities = DensityPair(source_means, target_means, cfg.dim)

    echo = asdict(cfg)
    out = []
    for domain in ("source", "target"):
        rng = Rng(cfg.seed, f"gauss/{domain}")
        x, y = densities.sample(domain, cfg.n_per_domain, rng)
        out.append(LabeledDataset(
            features=x, labels=y, num_classes=2, domain_tag=domain,
            kind="tabular", name=f"gauss-shift-{domain}", generator_config=echo))
    return out[0], out[1], densities


# ---------------------------------------------------------------------------
# on-disk format: manifest.json + features.bin (f64 LE) + labels.bin (u32 LE)
# ---------------------------------------------------------------------------

def save_dataset(ds: LabeledDataset, directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    features = ds.features.astype("<f8")
    labels = ds.labels.astype("<u4")
    (directory / FEATURE_FILE).write_bytes(features.tobytes(order="C"))
    (directory / LABEL_FILE).write_bytes(labels.tobytes(order="C"))
    manifest = {
        "name": ds.name,
        "num_samples": ds.n,
        "shape": list(ds.features.shape),
        "num_classes": ds.num_classes,
        "dtype": "f64",
        "byte_order": "LE",
        "feature_file": FEATURE_FILE,
        "label_file": LABEL_FILE,
        "domain_tag": ds.domain_tag,
        "kind": ds.kind,
        "generator_config": ds.generator_config,
    }
    (directory / MANIFEST_FILE).write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def load_dataset(directory) -> LabeledDataset:
    directory = Path(directory)
    manifest_path = directory / MANIFEST_FILE
    if not manifest_path.is_file():
        raise DatasetFormatError(f"missing manifest: {manifest_path}")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))

    shape = tuple(int(s) for s in manifest["shape"])
    n = int(manifest["num_samples"])
    if shape[0] != n:
        raise DatasetFormatError(
            f"manifest num_samples={n} disagrees with shape[0]={shape[0]}")
    if manifest.get("dtype") != "f64" or manifest.get("byte_order") != "LE":
        raise DatasetFormatError("unsupported dtype/byte_order in manifest")

    fpath = directory / manifest["feature_file"]
    lpath = directory / manifest["label_file"]
    for p in (fpath, lpath):
        if not p.is_file():
            raise DatasetFormatError(f"missing binary file: {p}")

    raw = fpath.read_bytes()
    want = int(np.prod(shape)) * 8
    if len(raw) != want:
        raise DatasetFormatError(
            f"truncated feature file: expected {want} bytes, got {len(raw)}")
    features = np.frombuffer(raw, dtype="<f8").reshape(shape).astype(np.float64)

    raw = lpath.read_bytes()
    if len(raw) != n * 4:
        raise DatasetFormatError(
            f"truncated label file: expected {n * 4} bytes, got {len(raw)}")
    labels = np.frombuffer(raw, dtype="<u4").astype(np.int64)

    num_classes = int(manifest["num_classes"])
    bad = np.flatnonzero(labels >= num_classes)
    if bad.size:
        raise DatasetFormatError(
            f"label out of range [0, {num_classes}) at index {int(bad[0])}: "
            f"{int(labels[bad[0]])}")

    return LabeledDataset(
        features=features, labels=labels, num_classes=num_classes,
        domain_tag=manifest.get("domain_tag", "source"),
        kind=manifest.get("kind", "tabular"),
        name=manifest.get("name", ""),
        generator_config=manifest.get("generator_config", {}))
