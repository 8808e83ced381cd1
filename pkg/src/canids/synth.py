"""Synthetic CAN traffic with injected attacks, for desk-scale experiments.

Benign traffic is a merge of periodic per-ECU schedules with uniform
timestamp jitter of +/-10% of the period (perfectly periodic logs would
produce degenerate edge structure). Benign payload bytes stay below
BENIGN_BYTE_MAX so spoofed payloads, drawn from [SPOOF_BYTE_MIN, 255],
come from a provably disjoint distribution.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .canlog import CanFrame, Label
from .errors import ConfigError

BENIGN_BYTE_MAX = 119
SPOOF_BYTE_MIN = 136
REPLAY_BUFFER_LEN = 100
DOS_CAN_ID = 0  # lowest ID wins arbitration, so flooding uses 0


class AttackKind(enum.Enum):
    DOS = "dos"
    FUZZING = "fuzzing"
    SPOOFING = "spoofing"
    REPLAY = "replay"


@dataclass(frozen=True)
class AttackSpec:
    kind: AttackKind
    start_time: float
    duration: float
    injection_rate: float
    target_id: int | None = None

    def validate(self, log_duration: float) -> "AttackSpec":
        if self.duration <= 0:
            raise ConfigError(f"{self.kind.value}: duration must be > 0")
        if self.injection_rate <= 0:
            raise ConfigError(f"{self.kind.value}: injection_rate must be > 0")
        if self.kind in (AttackKind.SPOOFING, AttackKind.REPLAY) and self.target_id is None:
            raise ConfigError(f"{self.kind.value} requires target_id")
        if self.start_time < 0 or self.start_time + self.duration > log_duration:
            raise ConfigError(
                f"{self.kind.value}: window [{self.start_time}, "
                f"{self.start_time + self.duration}] outside [0, {log_duration}]"
            )
        return self


@dataclass(frozen=True)
class EcuSpec:
    can_id: int
    period: float
    payload_seed: int
    dlc: int = 8

    def validate(self) -> "EcuSpec":
        if self.period <= 0:
            raise ConfigError(f"ECU 0x{self.can_id:x}: period must be > 0")
        if not 0 <= self.can_id <= 2047:
            raise ConfigError(f"ECU ID {self.can_id} outside 11-bit range")
        return self


@dataclass(frozen=True)
class SynthConfig:
    ecus: tuple[EcuSpec, ...]
    duration: float
    attacks: tuple[AttackSpec, ...] = field(default_factory=tuple)


def _benign_payload(rng, ecu: EcuSpec, lo: int) -> tuple[int, ...]:
    return tuple(int(b) for b in rng.integers(lo, lo + 41, size=ecu.dlc))


def _ecu_payload_low(ecu: EcuSpec) -> int:
    # per-ECU byte range [lo, lo+40], always within [0, BENIGN_BYTE_MAX]
    lo_rng = np.random.Generator(np.random.PCG64(ecu.payload_seed))
    return int(lo_rng.integers(0, BENIGN_BYTE_MAX - 40 + 1))


def generate_synthetic_log(
    ecu_schedule: Sequence[EcuSpec],
    duration: float,
    attacks: Sequence[AttackSpec] = (),
    rng_seed: int = 0,
) -> list[CanFrame]:
    """Produce a labeled frame list, deterministic for a given seed.

    Injected frames carry Label.ATTACK; everything emitted by the periodic
    schedules is BENIGN. Frames are returned sorted by timestamp with a
    stable generation-order tie break.
    """
    if not ecu_schedule:
        raise ConfigError("need at least one ECU")
    ecus = [EcuSpec(*e) if isinstance(e, tuple) else e for e in ecu_schedule]
    for ecu in ecus:
        ecu.validate()
    for atk in attacks:
        atk.validate(duration)

    rng = np.random.Generator(np.random.PCG64(rng_seed))
    events: list[tuple[float, int, CanFrame]] = []
    seq = 0

    for ecu in ecus:
        lo = _ecu_payload_low(ecu)
        phase = float(rng.uniform(0.0, ecu.period))
        n_emit = int(np.ceil((duration - phase) / ecu.period)) if phase < duration else 0
        base = phase + ecu.period * np.arange(n_emit)
        jitter = rng.uniform(-0.1 * ecu.period, 0.1 * ecu.period, size=n_emit)
        times = np.maximum(base + jitter, 0.0)
        for t in times:
            frame = CanFrame(float(t), ecu.can_id, ecu.dlc, _benign_payload(rng, ecu, lo))
            events.append((frame.timestamp, seq, frame))
            seq += 1

    for atk in attacks:
        step = 1.0 / atk.injection_rate
        n_inject = int(np.floor(atk.duration * atk.injection_rate))
        base = atk.start_time + step * np.arange(n_inject)
        times = np.maximum(base + rng.uniform(-0.1 * step, 0.1 * step, size=n_inject), 0.0)
        if atk.kind == AttackKind.DOS:
            for t in times:
                frame = CanFrame(float(t), DOS_CAN_ID, 8, (0,) * 8, Label.ATTACK)
                events.append((frame.timestamp, seq, frame))
                seq += 1
        elif atk.kind == AttackKind.FUZZING:
            for t in times:
                can_id = int(rng.integers(0, 2048))
                dlc = int(rng.integers(0, 9))
                payload = tuple(int(b) for b in rng.integers(0, 256, size=dlc))
                frame = CanFrame(float(t), can_id, dlc, payload, Label.ATTACK)
                events.append((frame.timestamp, seq, frame))
                seq += 1
        elif atk.kind == AttackKind.SPOOFING:
            for t in times:
                payload = tuple(int(b) for b in rng.integers(SPOOF_BYTE_MIN, 256, size=8))
                frame = CanFrame(float(t), atk.target_id, 8, payload, Label.ATTACK)
                events.append((frame.timestamp, seq, frame))
                seq += 1
        else:  # REPLAY
            buffer = [
                f
                for _, _, f in sorted(events, key=lambda e: (e[0], e[1]))
                if f.can_id == atk.target_id
                and f.label == Label.BENIGN
                and f.timestamp < atk.start_time
            ][-REPLAY_BUFFER_LEN:]
            if not buffer:
                raise ConfigError(
                    f"replay: no benign frames of 0x{atk.target_id:x} before t={atk.start_time}"
                )
            for k, t in enumerate(times):
                src = buffer[k % len(buffer)]
                frame = CanFrame(float(t), src.can_id, src.dlc, src.payload, Label.ATTACK)
                events.append((frame.timestamp, seq, frame))
                seq += 1

    events.sort(key=lambda e: (e[0], e[1]))
    return [f for _, _, f in events]


def load_synth_config(path) -> SynthConfig:
    """Read a generator config from a JSON file.

    Schema: {"duration": float,
             "ecus": [{"can_id", "period", "payload_seed", "dlc"?}, ...],
             "attacks": [{"kind", "start", "duration", "rate", "target_id"?}, ...]}
    """
    with open(path, "r", encoding="utf-8") as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    try:
        ecus = tuple(
            EcuSpec(int(e["can_id"]), float(e["period"]), int(e["payload_seed"]), int(e.get("dlc", 8)))
            for e in raw["ecus"]
        )
        attacks = tuple(
            AttackSpec(
                AttackKind(a["kind"]),
                float(a["start"]),
                float(a["duration"]),
                float(a["rate"]),
                int(a["target_id"]) if a.get("target_id") is not None else None,
            )
            for a in raw.get("attacks", [])
        )
        duration = float(raw["duration"])
    except (KeyError, ValueError, TypeError) as exc:
        raise ConfigError(f"{path}: bad generator config ({exc})") from None
    return SynthConfig(ecus=ecus, duration=duration, attacks=attacks)
