"""The IQBurst record shared by the synthesis, channel, and dataset layers."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np


@dataclass
class IQBurst:
    """A complex-baseband sample sequence with origin metadata."""

    samples: np.ndarray  # complex128
    sample_rate_hz: float
    emitter_id: str = ""
    burst_kind: str = ""  # "acars" | "adsb"
    snr_db: float | None = None  # injected-noise level, if any

    def with_samples(self, samples: np.ndarray) -> "IQBurst":
        return replace(self, samples=samples)

    def power(self) -> float:
        return float(np.mean(np.abs(self.samples) ** 2))


def normalize_power(samples: np.ndarray) -> np.ndarray:
    """Scale to unit average power over the given window."""
    p = np.mean(np.abs(samples) ** 2)
    if p <= 0:
        raise ValueError("cannot normalize an all-zero burst")
    return samples / np.sqrt(p)
