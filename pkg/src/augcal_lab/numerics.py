"""Deterministic numeric substrate: seeded named-stream RNG, 2-D FFT helpers,
and a numerically stable softmax.

All array data in this package is carried as contiguous float64 (or complex128
for spectra) numpy arrays. Every public operation here is a pure function of
its inputs, so concurrent use is safe.
"""

from __future__ import annotations

import hashlib

import numpy as np


class Rng:
    """Named-substream random generator.

    The (seed, stream) pair fully determines the value sequence: the Philox
    key is derived by hashing the seed together with the stream name, so
    distinct streams from one seed are independent and adding a new consumer
    stream never perturbs existing ones.
    """

    def __init__(self, seed: int, stream: str = "root"):
        self.seed = int(seed)
        self.stream = stream
        digest = hashlib.sha256(f"{self.seed}/{stream}".encode("utf-8")).digest()
        key = np.frombuffer(digest[:16], dtype=np.uint64)
        self.gen = np.random.Generator(np.random.Philox(key=key))

    def substream(self, name: str) -> "Rng":
        """Derive an independent child stream; does not consume this stream."""
        return Rng(self.seed, f"{self.stream}/{name}")

    def uniform(self, low=0.0, high=1.0, size=None):
        return self.gen.uniform(low, high, size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self.gen.normal(loc, scale, size)

    def standard_normal(self, size=None):
        return self.gen.standard_normal(size)

    def integers(self, low, high=None, size=None):
        return self.gen.integers(low, high, size=size)

    def permutation(self, x):
        return self.gen.permutation(x)

    def __repr__(self):
        return f"Rng(seed={self.seed}, stream={self.stream!r})"


def require_finite(x: np.ndarray, what: str = "array") -> np.ndarray:
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{what} contains non-finite values")
    return x


def as_f64(x) -> np.ndarray:
    return np.ascontiguousarray(np.asarray(x, dtype=np.float64))


def fft2(image: np.ndarray) -> np.ndarray:
    """Unnormalized forward 2-D DFT of a real H-by-W image (complex128)."""
    image = np.asarray(image)
    if image.ndim != 2 or image.shape[0] < 1 or image.shape[1] < 1:
        raise ValueError(f"fft2 expects a non-empty 2-D image, got shape {image.shape}")
    return np.fft.fft2(image.astype(np.float64))


def ifft2(spectrum: np.ndarray) -> np.ndarray:
    """Inverse of fft2 (complex128 output; take .real to recover an image)."""
    spectrum = np.asarray(spectrum)
    if spectrum.ndim != 2 or spectrum.shape[0] < 1 or spectrum.shape[1] < 1:
        raise ValueError(f"ifft2 expects a non-empty 2-D spectrum, got shape {spectrum.shape}")
    return np.fft.ifft2(spectrum)


def fftshift2(spec: np.ndarray) -> np.ndarray:
    """Move the lowest frequency to the center index (floor(H/2), floor(W/2))."""
    return np.fft.fftshift(spec)


def ifftshift2(spec: np.ndarray) -> np.ndarray:
    """Exact inverse of fftshift2 for all extents, odd sizes included."""
    return np.fft.ifftshift(spec)


def centered_frequency_offsets(h: int, w: int) -> tuple[np.ndarray, np.ndarray]:
    """Integer frequency offsets (m, n) from the DC position of a shifted
    spectrum, as a broadcastable (column, row) pair of grids."""
    m = np.arange(h, dtype=np.float64) - (h // 2)
    n = np.arange(w, dtype=np.float64) - (w // 2)
    return m[:, None], n[None, :]


def softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    """Max-subtracted softmax along `axis`; rows sum to 1 within 1e-12."""
    z = as_f64(logits)
    require_finite(z, "logits")
    z = z - np.max(z, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=axis, keepdims=True)


def log_softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    z = as_f64(logits)
    require_finite(z, "logits")
    z = z - np.max(z, axis=axis, keepdims=True)
    return z - np.log(np.sum(np.exp(z), axis=axis, keepdims=True))


def logsumexp(x: np.ndarray, axis: int = -1) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    m = np.max(x, axis=axis, keepdims=True)
    out = m + np.log(np.sum(np.exp(x - m), axis=axis, keepdims=True))
    return np.squeeze(out, axis=axis)
