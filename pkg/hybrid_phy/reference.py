"""Sample-at-a-time reference modem.

Written directly from the modulation definitions with plain Python lists and
no shared code with the block implementations, so it can stand as the oracle
that the golden corpus is generated from. The chip sequences are spelled out
here rather than read from the bundled chip files, so a damaged chip file shows
up as a golden-vector failure. Filter taps and preset parameters are shared.
"""
import json
import math
from pathlib import Path
from typing import Dict, List

DATA_DIR = Path(__file__).parent / "data"

# 802.15.4 O-QPSK symbol-to-chip mapping, chip c0 first
OQPSK_CHIPS = (
    "11011001110000110101001000101110",
    "11101101100111000011010100100010",
    "00101110110110011100001101010010",
    "00100010111011011001110000110101",
    "01010010001011101101100111000011",
    "00110101001000101110110110011100",
    "11000011010100100010111011011001",
    "10011100001101010010001011101101",
    "10001100100101100000011101111011",
    "10111000110010010110000001110111",
    "01111011100011001001011000000111",
    "01110111101110001100100101100000",
    "00000111011110111000110010010110",
    "01100000011101111011100011001001",
    "10010110000001110111101110001100",
    "11001001011000000111011110111000",
)

# 802.15.4 BPSK bit-to-chip mapping
BPSK_CHIPS = (
    "111101011001000",
    "000010100110111",
)


def _read_rows(name: str) -> List[str]:
    lines = (DATA_DIR / name).read_text(encoding="utf-8").splitlines()
    return [ln.strip() for ln in lines if ln.strip() and not ln.strip().startswith("#")]


def _preset(preset_id: int) -> Dict:
    data = json.loads((DATA_DIR / "presets.json").read_text(encoding="utf-8"))
    entry = next(p for p in data["presets"] if p["id"] == preset_id)
    stages = {}
    for raw in data["modulations"][entry["modulation"]]:
        stages[raw["kind"]] = {**raw.get("params", {}), **entry.get("overrides", {}).get(raw["kind"], {})}
    return {"modulation": entry["modulation"], "stages": stages}


def _lsb_first_bits(packet: bytes) -> List[int]:
    return [(byte >> i) & 1 for byte in packet for i in range(8)]


def _normalized_taps(name: str) -> List[float]:
    raw = [float(v) for v in _read_rows(f"taps_{name}.txt")]
    norm = math.fsum(abs(t) for t in raw)
    return [t / norm for t in raw]


def _fir(rail: List[float], taps: List[float]) -> List[float]:
    out = []
    for n in range(len(rail)):
        acc = 0.0
        for k, h in enumerate(taps):
            x = rail[n - k] if n - k >= 0 else 0.0
            acc += h * x
        out.append(acc)
    return out


def _oqpsk(packet: bytes, stages: Dict) -> List[complex]:
    chips: List[int] = []
    for byte in packet:
        for symbol in (byte & 0x0F, byte >> 4):
            chips.extend(int(c) for c in OQPSK_CHIPS[symbol])
    i_rail = [2.0 * c - 1.0 for c in chips[0::2]]
    q_rail = [2.0 * c - 1.0 for c in chips[1::2]]
    taps = _normalized_taps(stages["fir"]["taps_file"])
    i_rail, q_rail = _fir(i_rail, taps), _fir(q_rail, taps)

    zeros = stages["zpad"]["n_zeros"]
    every = stages["zpad"]["every_m"]
    i_pad: List[float] = []
    q_pad: List[float] = []
    for n, (i, q) in enumerate(zip(i_rail, q_rail)):
        i_pad.append(i)
        q_pad.append(q)
        if (n + 1) % every == 0:
            i_pad.extend([0.0] * zeros)
            q_pad.extend([0.0] * zeros)

    delay = stages["offset"]["delay"]
    q_delayed = [0.0] * delay + q_pad
    i_out = i_pad + [0.0] * delay
    return [complex(i, q) for i, q in zip(i_out, q_delayed)]


def _bpsk(packet: bytes, stages: Dict) -> List[complex]:
    prev = stages["diffenc"]["initial"]
    chips: List[int] = []
    for bit in _lsb_first_bits(packet):
        prev ^= bit
        chips.extend(int(c) for c in BPSK_CHIPS[prev])
    hold = stages["mapper"]["hold"]
    i_rail = [2.0 * c - 1.0 for c in chips for _ in range(hold)]
    taps = _normalized_taps(stages["fir"]["taps_file"])
    i_rail = _fir(i_rail, taps)
    q_rail = _fir([0.0] * len(i_rail), taps)
    return [complex(i, q) for i, q in zip(i_rail, q_rail)]


def _gfsk(packet: bytes, stages: Dict) -> List[complex]:
    bits = _lsb_first_bits(packet)
    seed = stages["pn9"]["seed"]
    # whitening sequence w[n+9] = w[n] xor w[n+5], first nine values are the seed bits
    whitening = [(seed >> i) & 1 for i in range(9)]
    while len(whitening) < len(bits):
        n = len(whitening) - 9
        whitening.append(whitening[n] ^ whitening[n + 5])
    points = [(1.0, 0.0), (0.0, 1.0), (-1.0, 0.0), (0.0, -1.0)]
    quadrant = stages["clock"]["start"]
    hold = stages["mapper"]["hold"]
    out: List[complex] = []
    for bit, w in zip(bits, whitening):
        quadrant = (quadrant + (1 if bit ^ w else -1)) % 4
        i, q = points[quadrant]
        out.extend([complex(i, q)] * hold)
    return out


def reference_modulate(preset_id: int, packet: bytes) -> List[complex]:
    preset = _preset(preset_id)
    modulation = preset["modulation"]
    if modulation == "OQPSK":
        return _oqpsk(packet, preset["stages"])
    if modulation == "BPSK":
        return _bpsk(packet, preset["stages"])
    if modulation == "GFSK":
        return _gfsk(packet, preset["stages"])
    raise ValueError(f"No reference modem for {modulation}")
