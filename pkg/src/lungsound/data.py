"""Dataset parsing (ICBHI 2017, SPRSound) and the synthetic
planted-band corpus used for desk-scale verification.

ICBHI layout: one WAV per recording plus a same-stem .txt annotation
with lines "begin end crackles wheezes"; the filename's first
underscore token is the patient id and the last is the device. Ages
come from a *demographic*.txt file (patient id, age, ...); the
official split from a *train_test*.txt file (stem, train|test).

SPRSound layout: WAVs plus same-stem .json annotations holding an
"event_annotation" list of {start, end, type} in milliseconds (a .txt
fallback with "start end type" lines is also accepted). Records are
tagged official_train/official_test from train/test path components.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .audio import Spectrogram, mel_filterbank
from .errors import ConfigError, DataError
from .seeding import rng_for

__all__ = [
    "CycleRecord",
    "SynthSpec",
    "ICBHI_CLASSES",
    "SPRSOUND_CLASSES",
    "parse_icbhi",
    "parse_sprsound",
    "synth_corpus",
]

log = logging.getLogger("lungsound.data")

ICBHI_CLASSES = ("Normal", "Crackle", "Wheeze", "Crackle+Wheeze")
SPRSOUND_CLASSES = (
    "Normal",
    "Rhonchi",
    "Wheeze",
    "Stridor",
    "Coarse Crackle",
    "Fine Crackle",
    "Wheeze and Crackle",
)


@dataclass
class CycleRecord:
    """One annotated respiratory cycle or sound event."""

    audio_path: str
    onset_s: float
    offset_s: float
    label: int
    patient_id: str
    age_years: float | None = None
    device_id: str | None = None
    split: str = "unsplit"  # official_train | official_test | unsplit
    clip_id: str = ""

    def __post_init__(self):
        if not 0 <= self.onset_s < self.offset_s:
            raise DataError(
                f"bad cycle bounds [{self.onset_s}, {self.offset_s}] in {self.audio_path}"
            )
        if self.split not in ("official_train", "official_test", "unsplit"):
            raise DataError(f"unknown split tag {self.split!r}")
        if not self.clip_id:
            self.clip_id = f"{Path(self.audio_path).stem}_{self.onset_s:.3f}"


# -- ICBHI ------------------------------------------------------------------------


def _read_icbhi_demographics(root: Path) -> dict[str, float]:
    ages: dict[str, float] = {}
    for path in sorted(root.rglob("*.txt")):
        if "demographic" not in path.name.lower():
            continue
        for line in path.read_text().splitlines():
            parts = line.split()
            if len(parts) < 2:
                continue
            try:
                ages[parts[0]] = float(parts[1])
            except ValueError:
                continue  # missing age recorded as NA or similar
    return ages


def _read_icbhi_split(root: Path) -> dict[str, str]:
    split: dict[str, str] = {}
    for path in sorted(root.rglob("*.txt")):
        if "train_test" not in path.name.lower():
            continue
        for line in path.read_text().splitlines():
            parts = line.split()
            if len(parts) != 2:
                continue
            split[parts[0]] = "official_train" if parts[1] == "train" else "official_test"
    return split


def _icbhi_label(crackles: int, wheezes: int) -> int:
    return {(0, 0): 0, (1, 0): 1, (0, 1): 2, (1, 1): 3}[(crackles, wheezes)]


def parse_icbhi(root_dir) -> list[CycleRecord]:
    """Parse an ICBHI 2017 tree into one record per annotated cycle."""
    root = Path(root_dir)
    if not root.is_dir():
        raise DataError(f"ICBHI root {root} is not a directory")
    ages = _read_icbhi_demographics(root)
    split_map = _read_icbhi_split(root)
    records: list[CycleRecord] = []
    wavs = sorted(root.rglob("*.wav"))
    if not wavs:
        raise DataError(f"no WAV files under {root}")
    for wav in wavs:
        ann = wav.with_suffix(".txt")
        if not ann.exists():
            log.warning("no annotation for %s, skipped", wav.name)
            continue
        stem = wav.stem
        tokens = stem.split("_")
        patient = tokens[0]
        device = tokens[-1] if len(tokens) > 1 else None
        split = split_map.get(stem)
        if split is None and split_map:
            log.warning("recording %s missing from the official split list", stem)
        for lineno, line in enumerate(ann.read_text().splitlines(), start=1):
            if not line.strip():
                continue
            parts = line.split()
            try:
                onset, offset = float(parts[0]), float(parts[1])
                crackles, wheezes = int(float(parts[2])), int(float(parts[3]))
                if crackles not in (0, 1) or wheezes not in (0, 1) or len(parts) != 4:
                    raise ValueError
            except (ValueError, IndexError):
                raise DataError(f"malformed annotation line {ann}:{lineno}: {line!r}") from None
            records.append(
                CycleRecord(
                    audio_path=str(wav),
                    onset_s=onset,
                    offset_s=offset,
                    label=_icbhi_label(crackles, wheezes),
                    patient_id=patient,
                    age_years=ages.get(patient),
                    device_id=device,
                    split=split or "unsplit",
                    clip_id=f"{stem}_{lineno}",
                )
            )
    return records


# -- SPRSound ---------------------------------------------------------------------


def _sprsound_label(event_type: str) -> int:
    try:
        return SPRSOUND_CLASSES.index(event_type)
    except ValueError:
        raise DataError(
            f"unknown SPRSound event type {event_type!r}; expected one of "
            f"{list(SPRSOUND_CLASSES)}"
        ) from None


def _split_from_path(path: Path) -> str:
    parts = {p.lower() for p in path.parts}
    for p in parts:
        if "train" in p:
            return "official_train"
    for p in parts:
        if "test" in p:
            return "official_test"
    return "unsplit"


def _sprsound_events(ann: Path) -> list[tuple[float, float, str]]:
    events = []
    if ann.suffix == ".json":
        payload = json.loads(ann.read_text())
        for ev in payload.get("event_annotation", []):
            events.append((float(ev["start"]) / 1000.0, float(ev["end"]) / 1000.0, str(ev["type"])))
    else:
        for line in ann.read_text().splitlines():
            if not line.strip():
                continue
            parts = line.split(None, 2)
            if len(parts) != 3:
                raise DataError(f"malformed event line in {ann}: {line!r}")
            events.append((float(parts[0]) / 1000.0, float(parts[1]) / 1000.0, parts[2].strip()))
    return events


def parse_sprsound(root_dir, edition: int = 2022, test_partition: str | None = None) -> list[CycleRecord]:
    """Parse a SPRSound tree into one record per annotated event.

    ``test_partition`` ("intra" or "inter"), when given, keeps only
    test records whose path mentions that partition. The 2023 edition
    is test-only; records default to official_test there.
    """
    if edition not in (2022, 2023):
        raise ConfigError(f"unknown SPRSound edition {edition}")
    root = Path(root_dir)
    if not root.is_dir():
        raise DataError(f"SPRSound root {root} is not a directory")
    records: list[CycleRecord] = []
    wavs = sorted(root.rglob("*.wav"))
    if not wavs:
        raise DataError(f"no WAV files under {root}")
    for wav in wavs:
        ann = wav.with_suffix(".json")
        if not ann.exists():
            ann = wav.with_suffix(".txt")
        if not ann.exists():
            log.warning("no annotation for %s, skipped", wav.name)
            continue
        tokens = wav.stem.split("_")
        patient = tokens[0]
        age = None
        if len(tokens) > 1:
            try:
                age = float(tokens[1])
            except ValueError:
                age = None
        split = _split_from_path(wav.relative_to(root))
        if split == "unsplit" and edition == 2023:
            split = "official_test"
        if test_partition and split == "official_test":
            if test_partition.lower() not in str(wav).lower():
                continue
        for i, (onset, offset, etype) in enumerate(_sprsound_events(ann), start=1):
            records.append(
                CycleRecord(
                    audio_path=str(wav),
                    onset_s=onset,
                    offset_s=offset,
                    label=_sprsound_label(etype),
                    patient_id=patient,
                    age_years=age,
                    split=split,
                    clip_id=f"{wav.stem}_{i}",
                )
            )
    return records


# -- synthetic planted-band corpus ---------------------------------------------------


@dataclass(frozen=True)
class SynthSpec:
    """Generator settings for the planted-band verification corpus.

    Each class's discriminative energy lives only in its planted
    bands: a class-specific temporal pulse pattern (unit mean square)
    scaled by 10^(snr_db/20) with independent per-(sample, band)
    amplitude jitter, on top of unit white noise. Per-class band sets may coincide (shared
    bands, classes differ by pattern) or be disjoint (classes differ by
    which bands carry energy).
    """

    n_classes: int = 2
    n_bands: int = 64
    n_frames: int = 249
    n_per_class: int = 200
    snr_db: float = 10.0
    planted_bands: tuple[tuple[int, ...], ...] | None = None
    disjoint: bool = False
    amp_jitter: tuple[float, float] = (0.7, 1.4)
    jitter_log: bool = False  # draw jitter log-uniformly (heavy spread)
    samples_per_patient: int = 1
    seed: int = 0

    def resolved_bands(self) -> tuple[tuple[int, ...], ...]:
        if self.planted_bands is not None:
            bands = tuple(tuple(sorted(int(i) for i in b)) for b in self.planted_bands)
        else:
            # default: one contiguous group per class, spread out
            gap = self.n_bands // (self.n_classes + 1)
            width = max(1, min(4, gap))
            bands = tuple(
                tuple(range(min(gap * (c + 1), self.n_bands - width),
                            min(gap * (c + 1), self.n_bands - width) + width))
                for c in range(self.n_classes)
            )
        if len(bands) != self.n_classes:
            raise ConfigError(
                f"{len(bands)} planted band sets for {self.n_classes} classes"
            )
        for b in bands:
            if not b or min(b) < 0 or max(b) >= self.n_bands:
                raise ConfigError(f"planted bands {b} outside [0, {self.n_bands})")
        if self.disjoint:
            seen: set[int] = set()
            for b in bands:
                if seen.intersection(b):
                    raise ConfigError("planted band sets overlap but disjointness was requested")
                seen.update(b)
        return bands

    def all_planted(self) -> tuple[int, ...]:
        out: set[int] = set()
        for b in self.resolved_bands():
            out.update(b)
        return tuple(sorted(out))


def _class_pattern(class_id: int, n_frames: int) -> np.ndarray:
    """Unit-mean-square temporal texture; classes differ locally.

    Class 0 is a steady tone; class c >= 1 is a pulse train with period
    2c frames (shorter period = denser clicks). Texture differences
    survive the model's frequency and time pooling, unlike pure band
    position or phase.
    """
    if class_id == 0:
        return np.ones(n_frames, dtype=np.float32)
    period = 2 * class_id
    pattern = ((np.arange(n_frames) % period) < period / 2).astype(np.float64)
    rms = np.sqrt(np.mean(pattern**2))
    return (pattern / rms).astype(np.float32)


def _jitter_norm(cfg: SynthSpec) -> float:
    """Scale factor making E[jitter^2] = 1 so snr_db stays the corpus mean."""
    lo, hi = cfg.amp_jitter
    if lo == hi:
        return 1.0 / lo
    if cfg.jitter_log:
        mean_sq = (hi**2 - lo**2) / (2.0 * (math.log(hi) - math.log(lo)))
    else:
        mean_sq = (hi**3 - lo**3) / (3.0 * (hi - lo))
    return 1.0 / math.sqrt(mean_sq)


def _draw_jitter(cfg: SynthSpec, rng: np.random.Generator, n: int) -> np.ndarray:
    """Independent per-band amplitude jitter for one sample."""
    lo, hi = cfg.amp_jitter
    if cfg.jitter_log:
        return np.exp(rng.uniform(math.log(lo), math.log(hi), size=n))
    return rng.uniform(lo, hi, size=n)


def synth_corpus(cfg: SynthSpec) -> list[Spectrogram]:
    """Generate the labeled planted-band corpus (seed-deterministic).

    snr_db is the corpus-mean planted-cell signal power over the unit
    noise variance; per-(sample, band) amplitude jitter spreads
    difficulty around that mean.
    """
    bands = cfg.resolved_bands()
    amp0 = 10.0 ** (cfg.snr_db / 20.0) if np.isfinite(cfg.snr_db) else None
    jnorm = _jitter_norm(cfg)
    rng = rng_for(cfg.seed, "synth-corpus")
    _, centers = mel_filterbank(n_mels=cfg.n_bands, n_fft=1024)
    specs: list[Spectrogram] = []
    for c in range(cfg.n_classes):
        pattern = _class_pattern(c, cfg.n_frames)
        band_idx = np.asarray(bands[c], dtype=np.int64)
        for i in range(cfg.n_per_class):
            if np.isfinite(cfg.snr_db):
                values = rng.normal(0.0, 1.0, size=(cfg.n_frames, cfg.n_bands))
                amp = amp0 * jnorm * _draw_jitter(cfg, rng, len(band_idx))
            else:
                values = np.zeros((cfg.n_frames, cfg.n_bands))
                amp = np.ones(len(band_idx))
            values[:, band_idx] += amp[None, :] * pattern[:, None]
            pid = f"synth-c{c}-p{i // max(cfg.samples_per_patient, 1):04d}"
            rec = CycleRecord(
                audio_path="synthetic",
                onset_s=0.0,
                offset_s=cfg.n_frames * 0.032,
                label=c,
                patient_id=pid,
                age_years=None,
                split="unsplit",
                clip_id=f"synth-c{c}-{i:04d}",
            )
            specs.append(
                Spectrogram(
                    values=values.astype(np.float32),
                    band_centers=centers,
                    hop_seconds=0.032,
                    label=c,
                    provenance=rec,
                )
            )
    return specs
