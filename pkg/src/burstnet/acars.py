"""ACARS frame codec and AM-MSK modem.

Frame layout (field name: length in characters):

    pre_key 16 | bit_sync 2 | char_sync 2 | SOH 1 | mode 1 | address 7 |
    ack 1 | label 2 | block_id 1 | STX 1 | msn 4 | flight_id 6 |
    text 0-220 | ETX 1 | BCS 2

so a frame with empty text serializes to 47 characters. The BCS is
CRC-16/CCITT (poly 0x1021, init 0xFFFF) over SOH through ETX inclusive,
appended big-endian. Characters go on the air as 8 bits each, LSB first.

The waveform is continuous-phase MSK at 2,400 symbols/s (bit 1 advances
the phase by +pi/2 over a symbol, bit 0 by -pi/2), with an optional
raised-cosine amplitude ramp over the first and last two symbols
(key-up/key-down shaping). Demodulation reads the per-symbol phase slope.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .burst import IQBurst, normalize_power

BAUD = 2400
MAX_TEXT_LEN = 220
SOH = "\x01"
STX = "\x02"
ETX = "\x03"
SYN = "\x16"

FIXED_LEN = 47  # all fields except text

_RAMP_SYMBOLS = 2


class AcarsError(ValueError):
    pass


def _crc16_table():
    table = []
    for byte in range(256):
        crc = byte << 8
        for _ in range(8):
            crc = ((crc << 1) ^ 0x1021) & 0xFFFF if crc & 0x8000 else (crc << 1) & 0xFFFF
        table.append(crc)
    return table


_CRC16_TABLE = _crc16_table()


def crc16_ccitt(data: bytes, init: int = 0xFFFF) -> int:
    crc = init
    for b in data:
        crc = ((crc << 8) & 0xFFFF) ^ _CRC16_TABLE[((crc >> 8) ^ b) & 0xFF]
    return crc


@dataclass
class AcarsFrame:
    mode: str = "2"
    address: str = ".N12345"
    ack: str = "\x15"
    label: str = "Q0"
    block_id: str = "1"
    msn: str = "M01A"
    flight_id: str = "AA0001"
    text: str = ""
    pre_key: str = "+" * 16
    bit_sync: str = SYN * 2
    char_sync: str = SYN * 2

    _FIXED = {
        "pre_key": 16,
        "bit_sync": 2,
        "char_sync": 2,
        "mode": 1,
        "address": 7,
        "ack": 1,
        "label": 2,
        "block_id": 1,
        "msn": 4,
        "flight_id": 6,
    }

    def validate(self):
        for name, want in self._FIXED.items():
            got = len(getattr(self, name))
            if got != want:
                raise AcarsError(f"field {name} must be {want} chars, got {got}")
        if len(self.text) > MAX_TEXT_LEN:
            raise AcarsError(f"text length {len(self.text)} exceeds {MAX_TEXT_LEN}")


def encode_frame(frame: AcarsFrame) -> bytes:
    """Serialize a frame to its character stream, computing the BCS."""
    frame.validate()
    protected = (
        SOH + frame.mode + frame.address + frame.ack + frame.label
        + frame.block_id + STX + frame.msn + frame.flight_id + frame.text + ETX
    ).encode("latin-1")
    bcs = crc16_ccitt(protected)
    head = (frame.pre_key + frame.bit_sync + frame.char_sync).encode("latin-1")
    return head + protected + bytes([bcs >> 8, bcs & 0xFF])


def decode_frame(data: bytes) -> AcarsFrame:
    """Parse a character stream back into a frame, verifying the BCS."""
    if len(data) < FIXED_LEN:
        raise AcarsError(f"frame too short: {len(data)} < {FIXED_LEN} chars")
    text_len = len(data) - FIXED_LEN
    s = data.decode("latin-1")
    pos = 0

    def take(n):
        nonlocal pos
        out = s[pos : pos + n]
        pos += n
        return out

    pre_key, bit_sync, char_sync = take(16), take(2), take(2)
    soh, mode, address, ack, label = take(1), take(1), take(7), take(1), take(2)
    block_id, stx, msn, flight_id = take(1), take(1), take(4), take(6)
    text, etx, bcs_chars = take(text_len), take(1), take(2)
    if soh != SOH or stx != STX or etx != ETX:
        raise AcarsError("frame markers SOH/STX/ETX not in expected positions")
    got_bcs = (ord(bcs_chars[0]) << 8) | ord(bcs_chars[1])
    protected = data[20 : len(data) - 2]
    if crc16_ccitt(protected) != got_bcs:
        raise AcarsError("BCS verification failed")
    return AcarsFrame(
        pre_key=pre_key, bit_sync=bit_sync, char_sync=char_sync, mode=mode,
        address=address, ack=ack, label=label, block_id=block_id,
        msn=msn, flight_id=flight_id, text=text,
    )


def encode_acars(frame: AcarsFrame) -> np.ndarray:
    """Frame -> bit sequence (8 bits per character, LSB first)."""
    data = np.frombuffer(encode_frame(frame), dtype=np.uint8)
    return np.unpackbits(data[:, None], axis=1, bitorder="little").reshape(-1)


def decode_acars(bits: np.ndarray) -> AcarsFrame:
    if len(bits) % 8:
        raise AcarsError(f"bit count {len(bits)} is not a whole number of characters")
    data = np.packbits(
        np.asarray(bits, dtype=np.uint8).reshape(-1, 8), axis=1, bitorder="little"
    ).tobytes()
    return decode_frame(data)


_PRINTABLE = [chr(c) for c in range(0x20, 0x7F)]


def random_frame(rng: np.random.Generator, text_len: int | None = None) -> AcarsFrame:
    """A randomized but well-formed frame, for dataset messages and tests."""
    def chars(n):
        return "".join(rng.choice(_PRINTABLE, size=n))

    if text_len is None:
        text_len = int(rng.integers(0, 64))
    return AcarsFrame(
        mode="2",
        address="." + chars(6),
        ack="\x15",
        label=chars(2),
        block_id=chars(1),
        msn=chars(4),
        flight_id=chars(6),
        text=chars(text_len),
    )


# --- modem ---


def modulate_acars(bits: np.ndarray, sample_rate_hz: float,
                   amplitude_shaping: bool = True) -> IQBurst:
    """Continuous-phase MSK at 2,400 baud, unit average power."""
    sps_f = sample_rate_hz / BAUD
    sps = round(sps_f)
    if abs(sps_f - sps) > 1e-9 or sps < 2:
        raise AcarsError(
            f"sample rate {sample_rate_hz} is not an integer multiple "
            f"(>= 2) of {BAUD} baud: {sps_f} samples/symbol"
        )
    bits = np.asarray(bits, dtype=np.int8)
    steps = np.repeat(np.where(bits > 0, 1.0, -1.0), sps) * (np.pi / 2 / sps)
    phase = np.cumsum(steps)
    samples = np.exp(1j * (phase - steps[0]))  # phase 0 at the first sample
    if amplitude_shaping:
        ramp = 0.5 * (1 - np.cos(np.pi * np.arange(_RAMP_SYMBOLS * sps) / (_RAMP_SYMBOLS * sps)))
        env = np.ones(len(samples))
        env[: len(ramp)] = ramp
        env[-len(ramp):] = ramp[::-1]
        samples = samples * env
    return IQBurst(normalize_power(samples), sample_rate_hz, burst_kind="acars")


def demodulate_acars(burst: IQBurst) -> np.ndarray:
    """Recover bits from the per-symbol phase slope (matched to the modulator)."""
    sps = round(burst.sample_rate_hz / BAUD)
    samples = burst.samples
    n_bits = len(samples) // sps
    inc = np.angle(samples[1:] * np.conj(samples[:-1]))
    inc = np.append(inc, 0.0)
    per_symbol = inc[: n_bits * sps].reshape(n_bits, sps)[:, : sps - 1].sum(axis=1)
    return (per_symbol > 0).astype(np.uint8)
