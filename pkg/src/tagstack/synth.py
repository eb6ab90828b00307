"""Synthetic noisy-label tagging corpora.

Classes come in pairs that share a spectral region but differ in temporal
texture (steady versus bursty or impulsive), so they are hard to tell apart
from averaged spectra yet differ clearly in kurtosis and RMS.
"""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy.signal import butter, sosfilt

from .audio_io import ManifestEntry, write_manifest, write_wav

__all__ = ["SynthConfig", "FAMILIES", "class_names", "render_clip", "generate"]

# (name, source, low Hz, high Hz, envelope)
FAMILIES = (
    ("tone_low", "tone", 300.0, 600.0, "steady"),
    ("tone_low_burst", "tone", 300.0, 600.0, "bursty"),
    ("hiss", "noise", 3000.0, 6000.0, "steady"),
    ("hiss_burst", "noise", 3000.0, 6000.0, "bursty"),
    ("rumble", "noise", 100.0, 500.0, "steady"),
    ("knock", "clicks", 100.0, 500.0, "impulsive"),
    ("whistle", "tone", 2000.0, 4000.0, "steady"),
    ("whistle_burst", "tone", 2000.0, 4000.0, "bursty"),
)


@dataclass(frozen=True)
class SynthConfig:
    n_classes: int = 8
    clips_per_class: int = 125
    verified_fraction: float = 0.5
    noise_rate: float = 0.4
    holdout_fraction: float = 0.4
    sample_rate: int = 44100
    min_duration_s: float = 0.5
    max_duration_s: float = 2.5
    snr_db_min: float = -5.0
    snr_db_max: float = 20.0
    seed: int = 0

    def __post_init__(self):
        if self.n_classes < 2 or self.clips_per_class < 1:
            raise ValueError("need at least 2 classes and 1 clip per class")
        for name in ("verified_fraction", "noise_rate", "holdout_fraction"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if not 0 < self.min_duration_s <= self.max_duration_s:
            raise ValueError("need 0 < min_duration_s <= max_duration_s")
        if self.snr_db_min > self.snr_db_max:
            raise ValueError("snr_db_min exceeds snr_db_max")


def class_names(n_classes: int) -> list:
    names = []
    for c in range(n_classes):
        name = FAMILIES[c % len(FAMILIES)][0]
        names.append(name if c < len(FAMILIES) else f"{name}_{c // len(FAMILIES)}")
    return names


def _band(x, lo, hi, sr):
    sos = butter(4, [lo, min(hi, 0.45 * sr)], btype="bandpass", fs=sr, output="sos")
    return sosfilt(sos, x)


def _envelope(kind, n, sr, rng):
    t = np.arange(n) / sr
    if kind == "steady":
        depth = rng.uniform(0.0, 0.6)
        return 1.0 + depth * np.sin(2 * np.pi * rng.uniform(0.2, 3.0) * t + rng.uniform(0, 2 * np.pi))
    env = np.zeros(n)
    rate = rng.uniform(2.0, 12.0)
    n_bursts = max(1, rng.poisson(rate * n / sr))
    for _ in range(n_bursts):
        length = int(sr * rng.uniform(0.02, 0.15))
        start = int(rng.integers(0, max(1, n - length)))
        seg = np.hanning(length)[: n - start]
        env[start:start + seg.size] = np.maximum(env[start:start + seg.size], seg)
    return np.maximum(env, rng.uniform(0.0, 0.3))


def render_clip(class_id: int, duration_s: float, sr: int, rng: np.random.Generator,
                snr_db: float) -> np.ndarray:
    _, source, lo, hi, env_kind = FAMILIES[class_id % len(FAMILIES)]
    shift = 1.5 ** (class_id // len(FAMILIES))
    lo, hi = lo * shift, hi * shift
    n = max(1, int(round(duration_s * sr)))
    t = np.arange(n) / sr
    if source == "tone":
        f0 = rng.uniform(lo, hi)
        x = np.sin(2 * np.pi * f0 * t + rng.uniform(0, 2 * np.pi))
        x += 0.3 * np.sin(2 * np.pi * 2 * f0 * t + rng.uniform(0, 2 * np.pi))
    elif source == "noise":
        x = _band(rng.standard_normal(n), lo, hi, sr)
    else:
        x = np.zeros(n)
        period = int(sr / rng.uniform(4.0, 40.0))
        x[int(rng.integers(0, period))::period] = 1.0
        x = _band(x, lo, hi, sr)
    x = x * _envelope(env_kind, n, sr, rng) if env_kind != "impulsive" else x
    x /= np.sqrt(np.mean(x ** 2)) + 1e-12
    noise = rng.standard_normal(n) * 10.0 ** (-snr_db / 20.0)
    y = x + noise
    y *= rng.uniform(0.05, 0.6) / (np.max(np.abs(y)) + 1e-12)
    return np.clip(y, -1.0, 32767 / 32768)


def _apportion(total: float, n_classes: int, per_class: int) -> np.ndarray:
    """Split ``round(total)`` over classes as evenly as possible, extras to the lowest ids."""
    total = int(round(total))
    counts = np.full(n_classes, total // n_classes)
    counts[:total % n_classes] += 1
    return np.minimum(counts, per_class)


def generate(cfg: SynthConfig, out_dir) -> dict:
    """Write WAVs, ``train.csv``, ``test.csv`` and a ground-truth sidecar.

    Verified and holdout counts are apportioned over classes so the totals
    equal ``round(fraction * n)`` exactly. Verified clips are split into
    training and holdout clips per class; only
    non-verified training clips are ever relabelled, each flipped to a
    uniformly chosen other class. Exactly ``round(noise_rate * n_nonverified)``
    clips are flipped.
    """
    out = Path(out_dir)
    (out / "audio").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(cfg.seed)
    names = class_names(cfg.n_classes)
    n_total = cfg.n_classes * cfg.clips_per_class
    true = np.repeat(np.arange(cfg.n_classes), cfg.clips_per_class)
    verified = np.zeros(n_total, dtype=bool)
    holdout = np.zeros(n_total, dtype=bool)
    n_ver = _apportion(cfg.verified_fraction * n_total, cfg.n_classes, cfg.clips_per_class)
    n_hold = [int(v) for v in np.floor(cfg.holdout_fraction * n_ver)]
    for c in np.argsort(-(cfg.holdout_fraction * n_ver - n_hold), kind="stable")[
            :int(round(cfg.holdout_fraction * n_ver.sum())) - sum(n_hold)]:
        n_hold[c] += 1
    for c in range(cfg.n_classes):
        members = rng.permutation(np.flatnonzero(true == c))
        verified[members[:n_ver[c]]] = True
        holdout[members[:n_hold[c]]] = True
    noisy = np.flatnonzero(~verified)
    n_flip = int(round(cfg.noise_rate * noisy.size))
    flipped = np.zeros(n_total, dtype=bool)
    flipped[rng.choice(noisy, size=n_flip, replace=False)] = True
    label = true.copy()
    for i in np.flatnonzero(flipped):
        label[i] = (true[i] + rng.integers(1, cfg.n_classes)) % cfg.n_classes

    order = rng.permutation(n_total)
    train_rows, test_rows, truth_rows = [], [], []
    for slot, i in enumerate(order):
        fname = f"clip_{slot:05d}.wav"
        duration = rng.uniform(cfg.min_duration_s, cfg.max_duration_s)
        snr = rng.uniform(cfg.snr_db_min, cfg.snr_db_max)
        clip_rng = np.random.default_rng([cfg.seed, slot])
        write_wav(out / "audio" / fname, render_clip(int(true[i]), duration, cfg.sample_rate, clip_rng, snr),
                  cfg.sample_rate)
        entry = ManifestEntry(fname, names[label[i]], bool(verified[i]))
        (test_rows if holdout[i] else train_rows).append(entry)
        truth_rows.append((fname, names[true[i]], names[label[i]], int(flipped[i]),
                           "test" if holdout[i] else "train"))
    write_manifest(out / "train.csv", train_rows)
    write_manifest(out / "test.csv", test_rows)
    with open(out / "ground_truth.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["fname", "true_label", "manifest_label", "flipped", "split"])
        w.writerows(truth_rows)
    summary = {
        "config": asdict(cfg),
        "class_names": names,
        "n_clips": n_total,
        "n_verified": int(verified.sum()),
        "n_non_verified": int(noisy.size),
        "n_flipped": n_flip,
        "n_train": len(train_rows),
        "n_test": len(test_rows),
    }
    (out / "synth_summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary
