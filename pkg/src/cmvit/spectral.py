"""Discrete Fourier analysis: naive DFT, radix-2 FFT, magnitude spectra.

The forward transform is unnormalized, X[k] = sum_n x[n] exp(-2 pi i k n / N),
and spectra are left uncentered (bin 0 is DC).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, ShapeError
from .tensor import Tensor


@dataclass(frozen=True)
class ComplexMap:
    re: Tensor
    im: Tensor

    def __post_init__(self):
        for name in ("re", "im"):
            value = getattr(self, name)
            if not isinstance(value, Tensor):
                object.__setattr__(self, name, Tensor(value, dtype=np.float64))
        if self.re.shape != self.im.shape:
            raise ShapeError(f"re {list(self.re.shape)} and im {list(self.im.shape)} differ")

    @classmethod
    def from_complex(cls, z: np.ndarray) -> ComplexMap:
        return cls(Tensor(z.real, dtype=np.float64), Tensor(z.imag, dtype=np.float64))

    def to_complex(self) -> np.ndarray:
        return self.re.data.astype(np.float64) + 1j * self.im.data.astype(np.float64)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.re.shape


def is_power_of_two(n: int) -> bool:
    return n >= 1 and n & (n - 1) == 0


def next_power_of_two(n: int) -> int:
    return 1 << max(0, (n - 1).bit_length())


def _as_complex(signal) -> np.ndarray:
    if isinstance(signal, ComplexMap):
        return signal.to_complex()
    if isinstance(signal, Tensor):
        return signal.data.astype(np.complex128)
    return np.asarray(signal, dtype=np.complex128)


def dft_naive(signal) -> ComplexMap:
    """Direct O(N^2) summation of the 1-D DFT."""
    x = _as_complex(signal)
    if x.ndim != 1:
        raise ShapeError(f"dft_naive expects a 1-D signal, got shape {list(x.shape)}")
    n = x.shape[0]
    if n == 0:
        raise ContractError("DFT of an empty signal")
    k = np.arange(n)
    # reduce k*n mod N before scaling so large products keep full twiddle accuracy
    phase = (np.outer(k, k) % n) * (-2.0 * np.pi / n)
    return ComplexMap.from_complex(np.exp(1j * phase) @ x)


def _bit_reverse(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.int64)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    return rev


def fft_last_axis(a: np.ndarray) -> np.ndarray:
    """Iterative radix-2 decimation-in-time FFT along the last axis of a complex array."""
    n = a.shape[-1]
    if not is_power_of_two(n):
        raise ContractError(f"FFT length {n} is not a power of two")
    lead = a.shape[:-1]
    a = np.asarray(a, dtype=np.complex128)[..., _bit_reverse(n)]
    m = 2
    while m <= n:
        half = m // 2
        twiddle = np.exp(-2j * np.pi * np.arange(half) / m)
        a = a.reshape(*lead, n // m, m)
        top = a[..., :half]
        bottom = a[..., half:] * twiddle
        a = np.concatenate([top + bottom, top - bottom], axis=-1)
        m *= 2
    return a.reshape(*lead, n)


def fft2_array(a: np.ndarray) -> np.ndarray:
    """2-D FFT over the last two axes: row transforms, then column transforms."""
    rows = fft_last_axis(a)
    return np.swapaxes(fft_last_axis(np.swapaxes(rows, -1, -2)), -1, -2)


def fft_1d(signal) -> ComplexMap:
    x = _as_complex(signal)
    if x.ndim != 1:
        raise ShapeError(f"fft_1d expects a 1-D signal, got shape {list(x.shape)}")
    return ComplexMap.from_complex(fft_last_axis(x))


def fft_2d(plane) -> ComplexMap:
    x = _as_complex(plane)
    if x.ndim != 2:
        raise ShapeError(f"fft_2d expects an HxW plane, got shape {list(x.shape)}")
    h, w = x.shape
    if not (is_power_of_two(h) and is_power_of_two(w)):
        raise ContractError(f"plane {h}x{w} has a non-power-of-two extent")
    return ComplexMap.from_complex(fft2_array(x))


def magnitude_spectrum(spec: ComplexMap) -> Tensor:
    re = spec.re.data.astype(np.float64)
    im = spec.im.data.astype(np.float64)
    return Tensor(np.sqrt(re * re + im * im), dtype=np.float64)


def fft2_magnitude(x: Tensor) -> Tensor:
    """Differentiable |FFT2| over the last two axes of ``x``.

    Non-power-of-two extents are zero-padded up for the transform and the
    magnitude is cropped back to the input extents. The gradient at a
    zero-magnitude bin is taken as 0.
    """
    h, w = x.shape[-2:]
    ph, pw = next_power_of_two(h), next_power_of_two(w)
    xp = x.data.astype(np.float64)
    if (ph, pw) != (h, w):
        widths = [(0, 0)] * (x.ndim - 2) + [(0, ph - h), (0, pw - w)]
        xp = np.pad(xp, widths)
    spec = fft2_array(xp)[..., :h, :w]
    mag = np.abs(spec)

    def back(g):
        with np.errstate(invalid="ignore", divide="ignore"):
            unit = np.where(mag > 0, spec / mag, 0.0)
        full = np.zeros(xp.shape, dtype=np.complex128)
        full[..., :h, :w] = g * unit
        gx = fft2_array(np.conj(full)).real[..., :h, :w]
        return (gx.astype(x.dtype),)

    return Tensor._from_op(mag.astype(x.dtype), (x,), back)
