"""Source-image augmentations applied per minibatch during training.

Two choices are provided:

* `pasta` multiplies the centered FFT amplitude spectrum by Gaussian factors
  whose standard deviation grows with frequency radius, keeping the phase
  spectrum untouched, then inverts the FFT, drops the (small) imaginary
  residue and clips to [0, 1].
* `randaugment` chains photometric ops sampled with replacement from a fixed
  8-op vocabulary, each at a shared integer magnitude.

Both are pure functions of (image, config, rng state), so batch application
with per-image substreams is deterministic and order-independent.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import Rng, fft2, ifft2, fftshift2, ifftshift2, \
    centered_frequency_offsets


@dataclass(frozen=True)
class PastaConfig:
    alpha: float = 3.0
    beta: float = 0.25
    k: float = 2.0


@dataclass(frozen=True)
class RandAugConfig:
    magnitude: int = 30   # m in [0, 30]
    num_ops: int = 8      # ops applied sequentially per image


RANDAUG_VOCABULARY = (
    "AutoContrast", "Equalize", "Contrast", "Brightness",
    "Sharpness", "Posterize", "Solarize", "SolarizeAdd",
)

MAGNITUDE_MAX = 30


def pasta_sigma(h: int, w: int, cfg: PastaConfig) -> np.ndarray:
    """Perturbation strength over the centered frequency grid:
    sigma[m, n] = (2*alpha*sqrt((m^2+n^2)/(H^2+W^2)))^k + beta."""
    m, n = centered_frequency_offsets(h, w)
    radius = np.sqrt((m * m + n * n) / (h * h + w * w))
    return (2.0 * cfg.alpha * radius) ** cfg.k + cfg.beta


def _pasta_channel(chan: np.ndarray, cfg: PastaConfig, rng: Rng):
    """One channel through the amplitude-jitter pipeline.

    Returns (complex spatial output, perturbed centered amplitude, phase,
    epsilon) so contract tests can inspect the intermediates; `pasta` keeps
    only the real part.
    """
    h, w = chan.shape
    spec = fft2(chan)
    amplitude = np.abs(spec)
    phase = np.angle(spec)
    amp_centered = fftshift2(amplitude)
    sigma = pasta_sigma(h, w, cfg)
    eps = 1.0 + sigma * rng.standard_normal((h, w))
    amp_perturbed = eps * amp_centered
    amp_back = ifftshift2(amp_perturbed)
    recombined = amp_back * np.exp(1j * phase)
    return ifft2(recombined), amp_perturbed, fftshift2(phase), eps


def pasta(image: np.ndarray, cfg: PastaConfig, rng: Rng) -> np.ndarray:
    """Amplitude-spectrum jitter of an [H, W, C] image in [0, 1]; channels are
    perturbed independently. Shape and dtype are preserved."""
    image = np.asarray(image, dtype=np.float64)
    if cfg.alpha == 0.0 and cfg.beta == 0.0:
        # sigma is identically 0, every factor is exactly 1: skip the FFT
        # round trip so zero strength is the exact identity
        return np.clip(image, 0.0, 1.0)
    out = np.empty_like(image)
    for c in range(image.shape[2]):
        spatial, _, _, _ = _pasta_channel(image[:, :, c], cfg, rng)
        out[:, :, c] = spatial.real
    return np.clip(out, 0.0, 1.0)


# ---------------------------------------------------------------------------
# photometric vocabulary
# ---------------------------------------------------------------------------

def _autocontrast(x: np.ndarray) -> np.ndarray:
    out = x.copy()
    for c in range(x.shape[2]):
        chan = x[:, :, c]
        lo, hi = chan.min(), chan.max()
        if hi > lo:
            out[:, :, c] = (chan - lo) / (hi - lo)
    return out


def _equalize(x: np.ndarray) -> np.ndarray:
    # classic 8-bit histogram-equalization LUT, applied per channel
    out = x.copy()
    for c in range(x.shape[2]):
        q = np.clip(np.round(x[:, :, c] * 255.0), 0, 255).astype(np.int64)
        hist = np.bincount(q.ravel(), minlength=256)
        nonzero = hist[hist > 0]
        if nonzero.size <= 1:
            continue
        step = (hist.sum() - nonzero[-1]) // 255
        if step == 0:
            continue
        n = step // 2
        lut = np.empty(256, dtype=np.int64)
        for i in range(256):
            lut[i] = min(n // step, 255)
            n += hist[i]
        out[:, :, c] = lut[q] / 255.0
    return out


def _blend(a: np.ndarray, b: np.ndarray, factor: float) -> np.ndarray:
    return a + factor * (b - a)


def _contrast(x: np.ndarray, factor: float) -> np.ndarray:
    return _blend(np.full_like(x, x.mean()), x, factor)


def _brightness(x: np.ndarray, factor: float) -> np.ndarray:
    return factor * x


def _smooth3(chan: np.ndarray) -> np.ndarray:
    # 3x3 kernel [[1,1,1],[1,5,1],[1,1,1]]/13 on the interior; border kept
    h, w = chan.shape
    if h < 3 or w < 3:
        return chan.copy()
    acc = 5.0 * chan[1:-1, 1:-1]
    for dr in (-1, 0, 1):
        for dc in (-1, 0, 1):
            if dr == 0 and dc == 0:
                continue
            acc = acc + chan[1 + dr:h - 1 + dr, 1 + dc:w - 1 + dc]
    out = chan.copy()
    out[1:-1, 1:-1] = acc / 13.0
    return out


def _sharpness(x: np.ndarray, factor: float) -> np.ndarray:
    smooth = np.stack([_smooth3(x[:, :, c]) for c in range(x.shape[2])], axis=2)
    return _blend(smooth, x, factor)


def _posterize(x: np.ndarray, bits: int) -> np.ndarray:
    levels = 2 ** bits
    return np.floor(x * levels) / levels


def _solarize(x: np.ndarray, threshold: float) -> np.ndarray:
    return np.where(x >= threshold, 1.0 - x, x)


def _solarize_add(x: np.ndarray, addition: float) -> np.ndarray:
    return np.where(x < 0.5, np.clip(x + addition, 0.0, 1.0), x)


def _signed_factor(m: int, rng: Rng) -> float:
    # factor 1 +/- 0.9*m/30, mirror sign drawn per application
    delta = 0.9 * m / MAGNITUDE_MAX
    sign = 1.0 if rng.uniform() < 0.5 else -1.0
    return 1.0 + sign * delta


def _apply_op(x: np.ndarray, name: str, m: int, rng: Rng) -> np.ndarray:
    if name == "AutoContrast":
        return _autocontrast(x)
    if name == "Equalize":
        return _equalize(x)
    if name == "Contrast":
        return _contrast(x, _signed_factor(m, rng))
    if name == "Brightness":
        return _brightness(x, _signed_factor(m, rng))
    if name == "Sharpness":
        return _sharpness(x, _signed_factor(m, rng))
    if name == "Posterize":
        return _posterize(x, 8 - round(4 * m / MAGNITUDE_MAX))
    if name == "Solarize":
        return _solarize(x, 1.0 - m / MAGNITUDE_MAX)
    if name == "SolarizeAdd":
        return _solarize_add(x, (110.0 / 255.0) * m / MAGNITUDE_MAX)
    raise ValueError(f"unknown op {name!r}")


def randaugment(image: np.ndarray, cfg: RandAugConfig, rng: Rng) -> np.ndarray:
    """Apply `num_ops` photometric ops sampled uniformly with replacement from
    the fixed vocabulary, sequentially at magnitude `magnitude`."""
    x = np.asarray(image, dtype=np.float64).copy()
    if cfg.num_ops == 0:
        return x
    picks = rng.integers(0, len(RANDAUG_VOCABULARY), size=cfg.num_ops)
    for idx in picks:
        x = _apply_op(x, RANDAUG_VOCABULARY[int(idx)], cfg.magnitude, rng)
    return np.clip(x, 0.0, 1.0)


def _pasta_batch(batch: np.ndarray, cfg: PastaConfig, rng: Rng) -> np.ndarray:
    """Batched pasta with one FFT call; draws are taken from the same
    per-image substreams as the single-image path, so the result is
    bit-identical to mapping `pasta` over the batch."""
    batch = np.asarray(batch, dtype=np.float64)
    if cfg.alpha == 0.0 and cfg.beta == 0.0:
        return np.clip(batch, 0.0, 1.0)
    b, h, w, c = batch.shape
    sigma = pasta_sigma(h, w, cfg)
    eps = np.empty((b, h, w, c))
    for i in range(b):
        sub = rng.substream(str(i))
        for ch in range(c):
            eps[i, :, :, ch] = 1.0 + sigma * sub.standard_normal((h, w))
    spec = np.fft.fft2(np.moveaxis(batch, 3, 1), axes=(-2, -1))
    amp = np.fft.fftshift(np.abs(spec), axes=(-2, -1))
    phase = np.angle(spec)
    amp_pert = np.moveaxis(eps, 3, 1) * amp
    recombined = np.fft.ifftshift(amp_pert, axes=(-2, -1)) * np.exp(1j * phase)
    out = np.fft.ifft2(recombined, axes=(-2, -1)).real
    return np.clip(np.moveaxis(out, 1, 3), 0.0, 1.0)


def augment_batch(batch: np.ndarray, choice: str, cfg, rng: Rng) -> np.ndarray:
    """Augment each image of a [B, H, W, C] batch with an independent RNG
    substream keyed by sample index (batch == map over substream(str(i)))."""
    if batch.shape[0] < 1:
        raise ValueError("batch must be nonempty")
    if choice == "none":
        return batch
    if choice == "pasta":
        return _pasta_batch(batch, cfg if cfg is not None else PastaConfig(), rng)
    if choice != "randaugment":
        raise ValueError(f"unknown augmentation choice {choice!r}")
    out = np.empty_like(np.asarray(batch, dtype=np.float64))
    for i in range(batch.shape[0]):
        out[i] = randaugment(batch[i], cfg, rng.substream(str(i)))
    return out


def default_config(choice: str):
    if choice == "pasta":
        return PastaConfig()
    if choice == "randaugment":
        return RandAugConfig()
    return None
