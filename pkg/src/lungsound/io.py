"""Serialization: weight checkpoints, the spectrogram cache, mask
files, and run manifests.

Binary formats are a fixed magic, a little-endian uint32 header
length, a canonical-JSON header, then raw little-endian float32 blocks
in header order. Writing the same content twice yields identical bytes
(no timestamps, sorted keys), which the determinism tests rely on.
"""

from __future__ import annotations

import hashlib
import json
import struct
import time
from pathlib import Path

import numpy as np

from .audio import Spectrogram
from .data import CycleRecord
from .errors import DataError
from .masks import FrequencyMask

__all__ = [
    "config_hash",
    "sha256_file",
    "save_checkpoint",
    "load_checkpoint",
    "write_spec_cache",
    "read_spec_cache",
    "write_mask_file",
    "read_mask_file",
    "append_manifest",
]

CKPT_MAGIC = b"LSCKPT01"
CACHE_MAGIC = b"LSCACHE1"
FORMAT_VERSION = 1


def _canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(config: dict) -> str:
    return hashlib.sha256(_canonical_json(config).encode("utf-8")).hexdigest()[:16]


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()[:16]


def _write_blob(path, magic: bytes, header: dict, arrays: list[np.ndarray]) -> None:
    header_bytes = _canonical_json(header).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(magic)
        fh.write(struct.pack("<I", len(header_bytes)))
        fh.write(header_bytes)
        for arr in arrays:
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def _read_blob(path, magic: bytes):
    with open(path, "rb") as fh:
        if fh.read(len(magic)) != magic:
            raise DataError(f"{path} is not a {magic.decode()} file")
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        payload = fh.read()
    if header.get("format_version") != FORMAT_VERSION:
        raise DataError(
            f"{path}: unsupported format version {header.get('format_version')}"
        )
    return header, payload


# -- checkpoints ---------------------------------------------------------------------


def save_checkpoint(path, state: dict[str, np.ndarray], model_config: dict, meta: dict | None = None) -> None:
    """Write name -> float32 array state plus the model config."""
    names = sorted(state)
    header = {
        "format_version": FORMAT_VERSION,
        "model_config": model_config,
        "meta": meta or {},
        "tensors": [{"name": n, "shape": list(state[n].shape)} for n in names],
    }
    _write_blob(path, CKPT_MAGIC, header, [state[n] for n in names])


def load_checkpoint(path):
    """Returns (state dict, model_config dict, meta dict)."""
    header, payload = _read_blob(path, CKPT_MAGIC)
    state: dict[str, np.ndarray] = {}
    offset = 0
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        size = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(payload, dtype="<f4", count=size, offset=offset)
        state[entry["name"]] = arr.reshape(shape).copy()
        offset += size * 4
    return state, header["model_config"], header["meta"]


def import_backbone_weights(model, path, name_map: dict[str, str] | None = None) -> list[str]:
    """Load externally exported conv/batchnorm weights into a model.

    The file uses the regular checkpoint format; ``name_map`` translates
    external tensor names to this package's (conv{i}.weight,
    bn{i}.gamma/beta/running_mean/running_var). Entries that do not
    match a backbone tensor are ignored. Returns the names imported.
    """
    state, _, _ = load_checkpoint(path)
    if name_map:
        state = {name_map.get(k, k): v for k, v in state.items()}
    backbone = {
        k: v
        for k, v in state.items()
        if k.startswith(("conv", "bn")) and (
            k in model.params
            or k.endswith((".running_mean", ".running_var"))
        )
    }
    model.load_state_dict(backbone, strict=False)
    return sorted(backbone)


# -- spectrogram cache -----------------------------------------------------------------


def write_spec_cache(path, specs: list[Spectrogram], preproc_config: dict) -> str:
    """Write a labeled spectrogram set; returns the config hash key."""
    if not specs:
        raise DataError("refusing to write an empty cache")
    chash = config_hash(preproc_config)
    entries = []
    offset = 0
    for s in specs:
        entries.append(
            {
                "clip_id": s.clip_id,
                "label": s.label,
                "patient_id": s.patient_id,
                "age_years": s.age_years,
                "split": s.split,
                "t": s.n_frames,
                "f": s.n_bands,
                "offset": offset,
            }
        )
        offset += s.values.size * 4
    header = {
        "format_version": FORMAT_VERSION,
        "preproc_config": preproc_config,
        "config_hash": chash,
        "hop_seconds": specs[0].hop_seconds,
        "band_centers": [float(c) for c in specs[0].band_centers],
        "entries": entries,
    }
    _write_blob(path, CACHE_MAGIC, header, [s.values for s in specs])
    return chash


def read_spec_cache(path):
    """Returns (list of Spectrogram, preproc_config, config_hash)."""
    header, payload = _read_blob(path, CACHE_MAGIC)
    centers = np.asarray(header["band_centers"], dtype=np.float64)
    hop = float(header["hop_seconds"])
    specs = []
    for e in header["entries"]:
        t, f = int(e["t"]), int(e["f"])
        values = np.frombuffer(payload, dtype="<f4", count=t * f, offset=int(e["offset"]))
        rec = CycleRecord(
            audio_path="cache",
            onset_s=0.0,
            offset_s=max(t * hop, hop),
            label=int(e["label"]) if e["label"] is not None else 0,
            patient_id=str(e["patient_id"]) if e["patient_id"] is not None else "unknown",
            age_years=e["age_years"],
            split=e["split"],
            clip_id=e["clip_id"],
        )
        specs.append(
            Spectrogram(
                values=values.reshape(t, f).copy(),
                band_centers=centers[:f],
                hop_seconds=hop,
                label=e["label"],
                provenance=rec,
            )
        )
    return specs, header["preproc_config"], header["config_hash"]


# -- mask files ------------------------------------------------------------------------


def write_mask_file(path, mask: FrequencyMask, config_hash_value: str = "") -> None:
    lines = [
        "lungsound-mask v1",
        f"bands {mask.n_bands}",
        f"origin {mask.origin}",
        f"config_hash {config_hash_value}",
        f"keep {mask.bitstring()}",
    ]
    for i, removed in enumerate(mask.history, start=1):
        lines.append("iter {} removed {}".format(i, " ".join(str(b) for b in removed)))
    Path(path).write_text("\n".join(lines) + "\n")


def read_mask_file(path) -> tuple[FrequencyMask, str]:
    lines = Path(path).read_text().splitlines()
    if not lines or not lines[0].startswith("lungsound-mask v1"):
        raise DataError(f"{path} is not a v1 mask file")
    fields: dict[str, str] = {}
    history: list[list[int]] = []
    for line in lines[1:]:
        if not line.strip():
            continue
        key, _, rest = line.partition(" ")
        if key == "iter":
            toks = rest.split()
            history.append([int(b) for b in toks[2:]])  # "N removed i j k l"
        else:
            fields[key] = rest.strip()
    n = int(fields["bands"])
    bits = fields["keep"]
    if len(bits) != n or set(bits) - {"0", "1"}:
        raise DataError(f"{path}: keep bitstring does not match {n} bands")
    keep = np.array([b == "1" for b in bits], dtype=bool)
    mask = FrequencyMask(keep, origin=fields.get("origin", "full"), history=history)
    return mask, fields.get("config_hash", "")


# -- manifests ---------------------------------------------------------------------------


def append_manifest(workdir, command: str, config: dict, seed: int,
                    input_hash: str, outputs: list[str], wall_clock_s: float,
                    code_version: str) -> Path:
    """Append one run record to <workdir>/manifests.jsonl."""
    path = Path(workdir) / "manifests.jsonl"
    record = {
        "command": command,
        "config": config,
        "seed": seed,
        "input_hash": input_hash,
        "code_version": code_version,
        "outputs": [str(o) for o in outputs],
        "wall_clock_s": round(wall_clock_s, 3),
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S"),
    }
    with open(path, "a") as fh:
        fh.write(_canonical_json(record) + "\n")
    return path
