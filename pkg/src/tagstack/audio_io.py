"""Audio decoding, dataset manifests and fixed-length segment selection.

Only the corpus format is accepted: RIFF/WAVE, PCM 16-bit, mono. Anything
else raises :class:`UnsupportedFormatError` instead of being converted.
"""
from __future__ import annotations

import csv
import io
import struct
import wave
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

__all__ = [
    "DecodeError",
    "UnsupportedFormatError",
    "ManifestError",
    "Waveform",
    "ManifestEntry",
    "Manifest",
    "Segment",
    "read_wav",
    "decode_wav_bytes",
    "write_wav",
    "encode_wav_bytes",
    "parse_manifest",
    "write_manifest",
    "sample_segment",
    "center_segment",
]

PCM_SCALE = 32768.0
WAVE_FORMAT_PCM = 0x0001
WAVE_FORMAT_EXTENSIBLE = 0xFFFE


class DecodeError(ValueError):
    """The file is not a well-formed RIFF/WAVE container."""


class UnsupportedFormatError(ValueError):
    """Well-formed WAV, but not PCM16 mono."""


class ManifestError(ValueError):
    pass


@dataclass(frozen=True)
class Waveform:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise ValueError("waveform must be one-dimensional (mono)")
        if samples.size == 0:
            raise ValueError("waveform is empty")
        if not np.all(np.isfinite(samples)):
            raise ValueError("waveform contains non-finite samples")
        if int(self.sample_rate) <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


def _iter_chunks(data: bytes):
    pos = 12
    while pos + 8 <= len(data):
        chunk_id, size = struct.unpack_from("<4sI", data, pos)
        body = data[pos + 8:pos + 8 + size]
        if len(body) < size:
            raise DecodeError(f"chunk {chunk_id!r} truncated")
        yield chunk_id, body
        pos += 8 + size + (size & 1)


def decode_wav_bytes(data: bytes) -> Waveform:
    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise DecodeError("missing RIFF/WAVE header")
    fmt = None
    pcm = None
    for chunk_id, body in _iter_chunks(data):
        if chunk_id == b"fmt ":
            if len(body) < 16:
                raise DecodeError("fmt chunk too short")
            fmt = struct.unpack_from("<HHIIHH", body, 0)
            if fmt[0] == WAVE_FORMAT_EXTENSIBLE and len(body) >= 26:
                # the real format tag lives in the first two bytes of the sub-format GUID
                sub_tag = struct.unpack_from("<H", body, 24)[0]
                fmt = (sub_tag,) + fmt[1:]
        elif chunk_id == b"data":
            pcm = body
    if fmt is None:
        raise DecodeError("no fmt chunk")
    if pcm is None:
        raise DecodeError("no data chunk")
    format_tag, channels, sample_rate, _, block_align, bits = fmt
    if format_tag != WAVE_FORMAT_PCM:
        raise UnsupportedFormatError(f"format tag {format_tag:#06x} is not PCM")
    if bits != 16:
        raise UnsupportedFormatError(f"{bits}-bit samples are not supported (need 16)")
    if channels != 1:
        raise UnsupportedFormatError(f"{channels} channels are not supported (need mono)")
    if sample_rate <= 0:
        raise DecodeError("sample rate is zero")
    if len(pcm) % 2:
        raise DecodeError("data chunk has an odd byte count for 16-bit samples")
    ints = np.frombuffer(pcm, dtype="<i2")
    if ints.size == 0:
        raise DecodeError("data chunk holds no samples")
    return Waveform(ints.astype(np.float64) / PCM_SCALE, sample_rate)


def read_wav(path) -> Waveform:
    """Decode a PCM16 mono WAV file into amplitudes in [-1, 1)."""
    with open(path, "rb") as fh:
        data = fh.read()
    try:
        return decode_wav_bytes(data)
    except (DecodeError, UnsupportedFormatError) as exc:
        raise type(exc)(f"{path}: {exc}") from None


def _to_pcm16(samples) -> np.ndarray:
    x = np.asarray(samples, dtype=np.float64)
    return np.clip(np.round(x * PCM_SCALE), -32768, 32767).astype("<i2")


def encode_wav_bytes(samples, sample_rate: int) -> bytes:
    """Encode amplitudes (or raw int16 values) as a PCM16 mono WAV."""
    arr = np.asarray(samples)
    ints = arr.astype("<i2") if arr.dtype == np.int16 else _to_pcm16(arr)
    buf = io.BytesIO()
    with wave.open(buf, "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(int(sample_rate))
        wf.writeframes(ints.tobytes())
    return buf.getvalue()


def write_wav(path, samples, sample_rate: int) -> None:
    Path(path).write_bytes(encode_wav_bytes(samples, sample_rate))


@dataclass(frozen=True)
class ManifestEntry:
    file_name: str
    label: str
    manually_verified: bool


@dataclass(frozen=True)
class Manifest:
    """Ordered clip list; ``class_list`` order is the canonical class index."""

    entries: tuple
    class_list: tuple
    _index: dict = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        entries = tuple(self.entries)
        classes = tuple(self.class_list)
        if len(set(classes)) != len(classes):
            raise ManifestError("class_list contains duplicates")
        known = set(classes)
        seen = set()
        for e in entries:
            if e.label not in known:
                raise ManifestError(f"unknown label {e.label!r} for {e.file_name}")
            if e.file_name in seen:
                raise ManifestError(f"duplicate fname {e.file_name!r}")
            seen.add(e.file_name)
        object.__setattr__(self, "entries", entries)
        object.__setattr__(self, "class_list", classes)
        object.__setattr__(self, "_index", {c: i for i, c in enumerate(classes)})

    def __len__(self):
        return len(self.entries)

    @property
    def file_names(self) -> list:
        return [e.file_name for e in self.entries]

    @property
    def labels(self) -> np.ndarray:
        """Class index of every entry."""
        return np.array([self._index[e.label] for e in self.entries], dtype=np.int64)

    @property
    def verified(self) -> np.ndarray:
        return np.array([e.manually_verified for e in self.entries], dtype=bool)

    def class_index(self, label: str) -> int:
        return self._index[label]


def _parse_verified(raw: str, line_no: int) -> bool:
    raw = raw.strip()
    if raw not in ("0", "1"):
        raise ManifestError(f"line {line_no}: manually_verified must be 0 or 1, got {raw!r}")
    return raw == "1"


def parse_manifest(path, class_list: Optional[Sequence[str]] = None) -> Manifest:
    """Read a ``fname,label,manually_verified`` CSV (LF or CRLF, UTF-8)."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["fname", "label", "manually_verified"]:
            raise ManifestError(f"{path}: header must be fname,label,manually_verified")
        entries = []
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise ManifestError(f"line {line_no}: expected 3 fields, got {len(row)}")
            fname, label, verified = (c.strip() for c in row)
            entries.append(ManifestEntry(fname, label, _parse_verified(verified, line_no)))
    if class_list is None:
        class_list = sorted({e.label for e in entries})
    return Manifest(tuple(entries), tuple(class_list))


def write_manifest(path, entries) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["fname", "label", "manually_verified"])
        for e in entries:
            w.writerow([e.file_name, e.label, int(e.manually_verified)])


@dataclass(frozen=True)
class Segment:
    clip_id: int
    samples: np.ndarray
    sample_rate: int


def _segment_length(duration_s: float, sample_rate: int) -> int:
    if duration_s <= 0:
        raise ValueError(f"duration_s must be positive, got {duration_s}")
    return int(round(duration_s * sample_rate))


def _fit(x: np.ndarray, n: int, start: int) -> np.ndarray:
    if x.size >= n:
        return np.array(x[start:start + n])
    out = np.zeros(n)
    left = (n - x.size) // 2
    out[left:left + x.size] = x
    return out


def sample_segment(w: Waveform, duration_s: float, rng: np.random.Generator,
                   clip_id: int = 0) -> Segment:
    """Random fixed-length excerpt; short clips are zero-padded, centred."""
    if w.samples.size == 0:
        raise ValueError("cannot segment an empty waveform")
    n = _segment_length(duration_s, w.sample_rate)
    start = int(rng.integers(0, w.samples.size - n + 1)) if w.samples.size > n else 0
    return Segment(clip_id, _fit(w.samples, n, start), w.sample_rate)


def center_segment(w: Waveform, duration_s: float, clip_id: int = 0) -> Segment:
    """Deterministic excerpt taken from the middle of the clip."""
    n = _segment_length(duration_s, w.sample_rate)
    start = (w.samples.size - n) // 2 if w.samples.size > n else 0
    return Segment(clip_id, _fit(w.samples, n, start), w.sample_rate)
