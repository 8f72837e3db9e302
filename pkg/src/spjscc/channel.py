"""Complex channel symbols and the AWGN link.

Coefficients are stored as flat real vectors; consecutive pairs (2k, 2k+1)
are the in-phase/quadrature parts of complex symbol k. Power is normalized
to unit mean energy per active symbol before transmission (SNR is defined
against that convention), and the scale factor is recorded so the receiver
can undo it. Everything stays on the autodiff tape: the normalization has a
gradient and the noise acts as an additive constant.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numcore import ShapeError, Tensor


@dataclass
class ChannelConfig:
    snr_db: float
    seed: int = 0
    noise_enabled: bool = True

    def __post_init__(self):
        if self.noise_enabled and not np.isfinite(self.snr_db):
            raise ValueError(f"snr_db must be finite, got {self.snr_db}")


@dataclass
class ComplexSymbolVector:
    """(N, 2s) real coefficients on a tape plus the (N, s) active-symbol mask."""

    coeffs: Tensor
    active: np.ndarray  # (N, s) bool; inactive symbols carry exactly zero
    gamma: Tensor | None = None  # (N, 1) transmit scale, set by normalize_power

    @property
    def symbol_count(self) -> int:
        return self.coeffs.shape[1] // 2

    def coefficient_mask(self) -> np.ndarray:
        """Per-real-coefficient activity: each symbol covers two entries."""
        return np.repeat(self.active, 2, axis=1)

    def mean_active_power(self) -> np.ndarray:
        """Mean |e_k|^2 over active symbols, per row."""
        vals = self.coeffs.value.astype(np.float64)
        msk = self.coefficient_mask()
        energy = (vals * vals * msk).sum(axis=1)
        return energy / np.maximum(self.active.sum(axis=1), 1)


def noise_variance(snr_db: float) -> float:
    """Total complex-noise variance at unit signal power: 10^(-snr/10)."""
    return 10.0 ** (-snr_db / 10.0)


def normalize_power(raw: Tensor, active: np.ndarray) -> ComplexSymbolVector:
    """Scale active symbols to unit mean power; zero the inactive ones.

    gamma = sqrt(s_active / sum_active |e_k|^2) per row, kept on the tape so
    training gradients flow through the scaling. Rows whose active
    coefficients are all zero are rejected (degenerate encoder output).
    """
    tape = raw.tape
    n, width = raw.shape
    active = np.asarray(active, dtype=bool)
    if active.ndim == 1:
        active = np.broadcast_to(active, (n, active.shape[0]))
    if width % 2 != 0 or active.shape != (n, width // 2):
        raise ShapeError(f"active mask {active.shape} does not match coefficients {raw.shape}")
    s_active = active.sum(axis=1, keepdims=True)
    if (s_active == 0).any():
        raise ValueError("every row needs at least one active symbol")
    coeff_mask = np.repeat(active, 2, axis=1).astype(raw.value.dtype)

    masked = tape.mul(raw, tape.leaf(coeff_mask))
    power = tape.reduce_sum(tape.mul(masked, masked), axis=(1,), keepdims=True)
    if (power.value <= 0).any():
        raise ValueError("all-zero active coefficients; cannot normalize power")
    gamma = tape.sqrt(tape.mul(tape.leaf(s_active.astype(raw.value.dtype)), tape.reciprocal(power)))
    out = tape.mul(masked, gamma)
    return ComplexSymbolVector(coeffs=out, active=active.copy(), gamma=gamma)


def awgn_transmit(e: ComplexSymbolVector, config: ChannelConfig, rng: np.random.Generator | None = None) -> ComplexSymbolVector:
    """e' = e + N with N Gaussian per active real coefficient, var sigma^2/2.

    sigma^2 = 10^(-snr_db/10) per complex symbol. Inactive symbols are left
    untouched (they carry no energy and are not transmitted). The noise is a
    constant on the tape, so d(e')/d(e) is the identity. Deterministic for a
    fixed seed / generator state.
    """
    if not config.noise_enabled:
        return ComplexSymbolVector(coeffs=e.coeffs, active=e.active.copy(), gamma=e.gamma)
    if rng is None:
        rng = np.random.default_rng(np.random.PCG64(config.seed))
    tape = e.coeffs.tape
    sigma2 = noise_variance(config.snr_db)
    noise = rng.normal(0.0, np.sqrt(sigma2 / 2.0), size=e.coeffs.shape)
    noise = noise * e.coefficient_mask()
    out = tape.add(e.coeffs, tape.leaf(noise))
    return ComplexSymbolVector(coeffs=out, active=e.active.copy(), gamma=e.gamma)


def sample_training_snr(rng: np.random.Generator, low: float = 0.0, high: float = 20.0) -> float:
    """Uniform SNR draw in dB for training-time channel conditions."""
    return float(rng.uniform(low, high))


def empirical_snr_db(clean: np.ndarray, noisy: np.ndarray, active: np.ndarray) -> float:
    """10 log10(P_signal / P_noise) measured over active coefficients."""
    msk = np.repeat(active, 2, axis=1)
    sig = (clean.astype(np.float64) ** 2 * msk).sum()
    err = ((noisy.astype(np.float64) - clean.astype(np.float64)) ** 2 * msk).sum()
    return float(10.0 * np.log10(sig / err))
