"""Channel operations: AWGN injection, interference pulses, window placement.

SNR is defined against the burst as stored ("pure signal without noise"):
noise power per complex sample is P_signal / 10^(snr_db/10), measured over
the full stored window. All randomness is seeded, so any burst is
regenerable bit-exactly.
"""

from __future__ import annotations

import numpy as np

from .burst import IQBurst


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def add_awgn(burst: IQBurst, target_snr_db: float, noise_seed) -> IQBurst:
    """Complex white Gaussian noise at the requested SNR below signal power."""
    rng = _rng(noise_seed)
    p_signal = burst.power()
    p_noise = p_signal / 10.0 ** (target_snr_db / 10.0)
    scale = np.sqrt(p_noise / 2.0)
    n = len(burst.samples)
    noise = scale * (rng.standard_normal(n) + 1j * rng.standard_normal(n))
    out = burst.with_samples(burst.samples + noise)
    out.snr_db = target_snr_db
    return out


def inject_interference(burst: IQBurst, pulse_count: int, pulse_power_db: float,
                        seed) -> IQBurst:
    """Add rectangular complex tone pulses at seeded random offsets/durations."""
    if pulse_count < 0:
        raise ValueError(f"pulse_count must be >= 0, got {pulse_count}")
    if pulse_count == 0:
        return burst
    rng = _rng(seed)
    x = burst.samples.copy()
    n = len(x)
    amp = np.sqrt(burst.power() * 10.0 ** (pulse_power_db / 10.0))
    for _ in range(pulse_count):
        dur = int(rng.integers(max(1, n // 50), max(2, n // 10)))
        start = int(rng.integers(0, max(1, n - dur)))
        freq = rng.uniform(-0.1, 0.1)  # cycles/sample
        phase = rng.uniform(0, 2 * np.pi)
        t = np.arange(dur)
        x[start : start + dur] += amp * np.exp(1j * (2 * np.pi * freq * t + phase))
    return burst.with_samples(x)


def finalize_burst(burst: IQBurst, target_len: int, offset_seed,
                   allow_crop: bool = False) -> IQBurst:
    """Place the burst at a seeded offset in an exactly target_len window."""
    rng = _rng(offset_seed)
    x = burst.samples
    n = len(x)
    if n > target_len:
        if not allow_crop:
            raise ValueError(
                f"active signal ({n} samples) longer than target window "
                f"({target_len}) and cropping not permitted"
            )
        start = int(rng.integers(0, n - target_len + 1))
        return burst.with_samples(x[start : start + target_len].copy())
    out = np.zeros(target_len, dtype=np.complex128)
    offset = int(rng.integers(0, target_len - n + 1))
    out[offset : offset + n] = x
    return burst.with_samples(out)
