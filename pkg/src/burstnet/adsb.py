"""Mode S / 1090ES frame codec and pulse-position modem.

A long frame is 112 bits: downlink format (5), ICAO address (24), payload
(59, covering the capability and message fields), and 24 parity bits from
the Mode S CRC (generator 0x1FFF409) over the first 88 bits. The syndrome
of a well-formed frame is zero.

On the air: 8 us preamble with 0.5 us pulses starting at 0, 1.0, 3.5 and
4.5 us, then 112 data bits at 1 us per bit, pulse-position encoded (bit 1
= pulse in the first half-microsecond chip, bit 0 = second chip). All
waveform constants live in AdsbPulseTemplate so they are auditable and
overridable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .burst import IQBurst, normalize_power

FRAME_BITS = 112
PARITY_BITS = 24
DF_BITS = 5
ICAO_BITS = 24
PAYLOAD_BITS = FRAME_BITS - PARITY_BITS - DF_BITS - ICAO_BITS  # 59

GENERATOR = 0x1FFF409  # 25-bit Mode S generator polynomial


class AdsbError(ValueError):
    pass


@dataclass(frozen=True)
class AdsbPulseTemplate:
    """Waveform constants for the 1090ES pulse format."""

    chip_us: float = 0.5
    preamble_us: float = 8.0
    preamble_pulse_starts_us: tuple[float, ...] = (0.0, 1.0, 3.5, 4.5)
    pulse_width_us: float = 0.5
    bit_us: float = 1.0


DEFAULT_TEMPLATE = AdsbPulseTemplate()


def _crc24_table():
    poly = GENERATOR & 0xFFFFFF
    table = []
    for byte in range(256):
        crc = byte << 16
        for _ in range(8):
            crc = ((crc << 1) ^ poly) & 0xFFFFFF if crc & 0x800000 else (crc << 1) & 0xFFFFFF
        table.append(crc)
    return table


_CRC24_TABLE = _crc24_table()


def crc24(bits: np.ndarray) -> int:
    """Mode S CRC remainder of a bit sequence (must be a whole byte count)."""
    if len(bits) % 8:
        raise AdsbError(f"crc24 needs a whole number of bytes, got {len(bits)} bits")
    data = np.packbits(np.asarray(bits, dtype=np.uint8))
    crc = 0
    for b in data.tolist():
        crc = ((crc << 8) & 0xFFFFFF) ^ _CRC24_TABLE[((crc >> 16) ^ b) & 0xFF]
    return crc


def _int_to_bits(value: int, width: int) -> np.ndarray:
    return np.array([(value >> (width - 1 - i)) & 1 for i in range(width)], dtype=np.uint8)


def _bits_to_int(bits: np.ndarray) -> int:
    out = 0
    for b in bits:
        out = (out << 1) | int(b)
    return out


def encode_adsb(downlink_format: int, icao_address: int, payload: np.ndarray) -> np.ndarray:
    """Build a parity-protected 112-bit frame."""
    if not 0 <= downlink_format < 32:
        raise AdsbError(f"downlink format {downlink_format} out of 5-bit range")
    if not 0 <= icao_address < (1 << 24):
        raise AdsbError(f"ICAO address {icao_address:#x} out of 24-bit range")
    payload = np.asarray(payload, dtype=np.uint8)
    if len(payload) != PAYLOAD_BITS:
        raise AdsbError(
            f"payload must be {PAYLOAD_BITS} bits to complete a "
            f"{FRAME_BITS}-bit frame, got {len(payload)}"
        )
    head = np.concatenate(
        [_int_to_bits(downlink_format, DF_BITS), _int_to_bits(icao_address, ICAO_BITS), payload]
    )
    parity = crc24(head)
    return np.concatenate([head, _int_to_bits(parity, PARITY_BITS)])


def syndrome(frame_bits: np.ndarray) -> int:
    """CRC remainder of a full frame; zero iff well-formed."""
    frame_bits = np.asarray(frame_bits, dtype=np.uint8)
    if len(frame_bits) != FRAME_BITS:
        raise AdsbError(f"frame must be {FRAME_BITS} bits, got {len(frame_bits)}")
    return crc24(frame_bits)


@dataclass
class AdsbFrame:
    downlink_format: int
    icao_address: int
    payload: np.ndarray
    parity: int

    @property
    def total_bits(self) -> int:
        return FRAME_BITS


def decode_adsb(frame_bits: np.ndarray) -> AdsbFrame:
    """Split a frame into fields, rejecting parity failures."""
    if syndrome(frame_bits) != 0:
        raise AdsbError("non-zero CRC syndrome: corrupted frame")
    bits = np.asarray(frame_bits, dtype=np.uint8)
    return AdsbFrame(
        downlink_format=_bits_to_int(bits[:DF_BITS]),
        icao_address=_bits_to_int(bits[DF_BITS : DF_BITS + ICAO_BITS]),
        payload=bits[DF_BITS + ICAO_BITS : FRAME_BITS - PARITY_BITS].copy(),
        parity=_bits_to_int(bits[-PARITY_BITS:]),
    )


def random_frame_bits(rng: np.random.Generator, downlink_format: int = 17,
                      icao_address: int | None = None) -> np.ndarray:
    if icao_address is None:
        icao_address = int(rng.integers(0, 1 << 24))
    payload = rng.integers(0, 2, size=PAYLOAD_BITS).astype(np.uint8)
    return encode_adsb(downlink_format, icao_address, payload)


# --- modem ---


def _samples_per_chip(sample_rate_hz: float, template: AdsbPulseTemplate) -> int:
    spc_f = sample_rate_hz * template.chip_us * 1e-6
    spc = round(spc_f)
    if abs(spc_f - spc) > 1e-9 or spc < 1:
        raise AdsbError(
            f"sample rate {sample_rate_hz} gives a non-integer chip length "
            f"({spc_f} samples per {template.chip_us} us chip)"
        )
    return spc


def modulate_adsb(frame_bits: np.ndarray, sample_rate_hz: float,
                  template: AdsbPulseTemplate = DEFAULT_TEMPLATE) -> IQBurst:
    """Preamble + PPM data pulses, unit average power over the active window."""
    bits = np.asarray(frame_bits, dtype=np.uint8)
    spc = _samples_per_chip(sample_rate_hz, template)
    preamble_chips = round(template.preamble_us / template.chip_us)
    chips_per_bit = round(template.bit_us / template.chip_us)
    chips = np.zeros(preamble_chips + len(bits) * chips_per_bit)
    width_chips = round(template.pulse_width_us / template.chip_us)
    for start_us in template.preamble_pulse_starts_us:
        c0 = round(start_us / template.chip_us)
        chips[c0 : c0 + width_chips] = 1.0
    for i, bit in enumerate(bits):
        base = preamble_chips + i * chips_per_bit
        chips[base + (0 if bit else 1)] = 1.0
    samples = np.repeat(chips, spc).astype(np.complex128)
    return IQBurst(normalize_power(samples), sample_rate_hz, burst_kind="adsb")


def demodulate_adsb(burst: IQBurst, n_bits: int = FRAME_BITS,
                    template: AdsbPulseTemplate = DEFAULT_TEMPLATE) -> np.ndarray:
    """Energy-comparison PPM detector on an aligned burst."""
    spc = _samples_per_chip(burst.sample_rate_hz, template)
    preamble_chips = round(template.preamble_us / template.chip_us)
    chips_per_bit = round(template.bit_us / template.chip_us)
    power = np.abs(burst.samples) ** 2
    bits = np.zeros(n_bits, dtype=np.uint8)
    for i in range(n_bits):
        base = (preamble_chips + i * chips_per_bit) * spc
        first = power[base : base + spc].sum()
        second = power[base + spc : base + 2 * spc].sum()
        bits[i] = 1 if first > second else 0
    return bits
