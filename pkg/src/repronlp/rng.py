"""Deterministic, splittable random-number streams.

Every stochastic decision in the pipeline draws from a named stream derived
from a single root seed.  Streams are derived, never shared: a child stream
is keyed by its parent's derivation key and a label hash, so creating
siblings in any order yields the same children, and drawing from the parent
does not perturb its children.  That property is what makes parallel batch
encoding invariant to worker count.

Generation is xoshiro256** (Blackman/Vigna, public domain); state derivation
and seeding use splitmix64; labels are hashed with FNV-1a 64.  All three are
reimplemented here from their published reference definitions so the output
is testable against independent oracles.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

MASK64 = (1 << 64) - 1

ALGORITHM_ID = "splitmix64/xoshiro256ss/v1"

# number of 64-bit words in a snapshot: derivation key, 4 generator words,
# normal-spare flag, normal-spare float bits
STATE_WORDS = 7

_GOLDEN_GAMMA = 0x9E3779B97F4A7C15
_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3


class RngError(ValueError):
    """Raised for invalid labels, snapshots, or algorithm mismatches."""


def mix64(x: int) -> int:
    """splitmix64 finalizer: a bijective 64-bit mixing function."""
    x &= MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & MASK64
    return x ^ (x >> 31)


def splitmix64_stream(seed: int, count: int) -> list[int]:
    """First ``count`` outputs of the published splitmix64 sequence."""
    state = seed & MASK64
    out = []
    for _ in range(count):
        state = (state + _GOLDEN_GAMMA) & MASK64
        out.append(mix64(state))
    return out


def fnv1a64(text: str) -> int:
    """FNV-1a 64-bit hash over the UTF-8 bytes of ``text``."""
    h = _FNV_OFFSET
    for byte in text.encode("utf-8"):
        h = ((h ^ byte) * _FNV_PRIME) & MASK64
    return h


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & MASK64


@dataclass(frozen=True)
class RngSnapshot:
    """Serializable full state of one stream.

    ``state_words`` holds, in order: the derivation key, the four xoshiro256**
    state words, a 0/1 flag for a cached Box-Muller spare, and the IEEE-754
    bit pattern of that spare (0 when absent).
    """

    algorithm_id: str
    stream_path: tuple[str, ...]
    state_words: tuple[int, ...]
    draws_consumed: int

    def to_json_dict(self) -> dict:
        return {
            "algorithm": self.algorithm_id,
            "path": list(self.stream_path),
            "state": [f"{w:016x}" for w in self.state_words],
            "draws": self.draws_consumed,
        }

    @classmethod
    def from_json_dict(cls, obj: dict) -> "RngSnapshot":
        try:
            return cls(
                algorithm_id=obj["algorithm"],
                stream_path=tuple(obj["path"]),
                state_words=tuple(int(w, 16) for w in obj["state"]),
                draws_consumed=int(obj["draws"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise RngError(f"malformed rng snapshot: {exc}") from exc


class RngStream:
    """A single-owner random stream; parallelism goes through :meth:`split`."""

    __slots__ = ("_path", "_key", "_s", "_draws", "_spare")

    def __init__(self, path: tuple[str, ...], key: int):
        self._path = path
        self._key = key & MASK64
        # seed the generator state from the derivation key, as the xoshiro
        # authors recommend: four consecutive splitmix64 outputs
        self._s = splitmix64_stream(key, 4)
        self._draws = 0
        self._spare: float | None = None

    @property
    def path(self) -> tuple[str, ...]:
        return self._path

    @property
    def draws_consumed(self) -> int:
        return self._draws

    def split(self, label: str) -> "RngStream":
        """Derive the child stream named ``label``.

        Derivation uses only the parent's key, never its generator state, so
        split order is irrelevant and draws do not disturb children.
        """
        if not label:
            raise RngError("split label must be non-empty")
        child_key = mix64(self._key ^ fnv1a64(label))
        return RngStream(self._path + (label,), child_key)

    def next_u64(self) -> int:
        """Next 64-bit output of xoshiro256**."""
        s = self._s
        result = (_rotl((s[1] * 5) & MASK64, 7) * 9) & MASK64
        t = (s[1] << 17) & MASK64
        s[2] ^= s[0]
        s[3] ^= s[1]
        s[1] ^= s[2]
        s[0] ^= s[3]
        s[2] ^= t
        s[3] = _rotl(s[3], 45)
        self._draws += 1
        return result

    def next_below(self, n: int) -> int:
        """Uniform integer in [0, n) by modulo reduction (declared rule)."""
        if n <= 0:
            raise RngError("next_below requires n >= 1")
        return self.next_u64() % n

    def next_f64_unit(self) -> float:
        """Uniform float in [0, 1) from the top 53 bits of one draw."""
        return (self.next_u64() >> 11) * 2.0**-53

    def next_f64_normal(self) -> float:
        """Standard normal via Box-Muller; pairs cost exactly two unit draws."""
        if self._spare is not None:
            z = self._spare
            self._spare = None
            return z
        u1 = self.next_f64_unit()
        u2 = self.next_f64_unit()
        # 1 - u1 lies in (0, 1], keeping the log argument away from zero
        r = math.sqrt(-2.0 * math.log(1.0 - u1))
        theta = 2.0 * math.pi * u2
        self._spare = r * math.sin(theta)
        return r * math.cos(theta)

    def snapshot(self) -> RngSnapshot:
        spare = self._spare
        has_spare = 0 if spare is None else 1
        spare_bits = 0 if spare is None else _float_to_bits(spare)
        return RngSnapshot(
            algorithm_id=ALGORITHM_ID,
            stream_path=self._path,
            state_words=(self._key, *self._s, has_spare, spare_bits),
            draws_consumed=self._draws,
        )


def seed_root(seed: int) -> RngStream:
    """Root stream for a run; the same seed yields the same stream forever."""
    return RngStream(("root",), seed & MASK64)


def restore(snap: RngSnapshot) -> RngStream:
    """Rebuild a stream that emits the identical future sequence."""
    if snap.algorithm_id != ALGORITHM_ID:
        raise RngError(
            f"snapshot algorithm {snap.algorithm_id!r} does not match {ALGORITHM_ID!r}"
        )
    if len(snap.state_words) != STATE_WORDS:
        raise RngError(
            f"snapshot has {len(snap.state_words)} state words, expected {STATE_WORDS}"
        )
    stream = RngStream(snap.stream_path, snap.state_words[0])
    stream._s = [w & MASK64 for w in snap.state_words[1:5]]
    stream._draws = snap.draws_consumed
    has_spare, spare_bits = snap.state_words[5], snap.state_words[6]
    stream._spare = _bits_to_float(spare_bits) if has_spare else None
    return stream


def _float_to_bits(x: float) -> int:
    return struct.unpack("<Q", struct.pack("<d", x))[0]


def _bits_to_float(bits: int) -> float:
    return struct.unpack("<d", struct.pack("<Q", bits))[0]
