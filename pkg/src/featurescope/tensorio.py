"""Bit-exact tensor container, dataset manifests, and artifact serialization.

Container layout (all multi-byte integers little-endian):

    offset 0   magic      4 bytes, b"FTC1"
    offset 4   dtype      1 byte: 0 = IEEE-754 binary32, 1 = binary64
    offset 5   ndim       1 byte
    offset 6   reserved   2 bytes, must be zero
    offset 8   dims       ndim x u64
    then       payload    row-major values, prod(dims) * itemsize bytes

ndim == 0 encodes a scalar with a single payload value. Writing is
deterministic: identical arrays produce identical bytes.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DomainError, FormatError, ManifestError, ResampleError
from .vmf import KappaTable

MAGIC = b"FTC1"
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_HEADER = struct.Struct("<4sBBH")


def write_tensor(path, array) -> None:
    """Write an array to the container format. float32 inputs are stored as
    dtype code 0, everything else as 64-bit (code 1). Values must be finite."""
    arr = np.asarray(array)
    if arr.dtype == np.float32:
        code, dt = 0, _DTYPES[0]
    else:
        code, dt = 1, _DTYPES[1]
    data = np.asarray(arr, dtype=dt, order="C")  # asarray keeps 0-d shape
    if not np.all(np.isfinite(data)):
        raise DomainError(f"refusing to write non-finite values to {path}", module="tensorio")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, code, data.ndim, 0))
        for d in data.shape:
            fh.write(struct.pack("<Q", d))
        fh.write(data.tobytes(order="C"))


def read_tensor(path) -> np.ndarray:
    """Read a container file back into an array, bit-exactly."""
    blob = Path(path).read_bytes()
    if len(blob) < _HEADER.size:
        raise FormatError(f"{path}: truncated header", offset=len(blob))
    magic, code, ndim, reserved = _HEADER.unpack_from(blob, 0)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}", offset=0)
    if code not in _DTYPES:
        raise FormatError(f"{path}: unknown dtype code {code}", offset=4)
    if reserved != 0:
        raise FormatError(f"{path}: reserved bytes nonzero", offset=6)
    dims_end = _HEADER.size + 8 * ndim
    if len(blob) < dims_end:
        raise FormatError(f"{path}: truncated dims block", offset=len(blob))
    dims = struct.unpack_from(f"<{ndim}Q", blob, _HEADER.size) if ndim else ()
    dt = _DTYPES[code]
    count = 1
    for d in dims:
        count *= d
    expected = count * dt.itemsize
    if len(blob) - dims_end != expected:
        raise FormatError(
            f"{path}: payload length {len(blob) - dims_end}, expected {expected}",
            offset=dims_end,
        )
    flat = np.frombuffer(blob, dtype=dt, count=count, offset=dims_end).copy()
    if ndim == 0:
        return flat.reshape(())
    return flat.reshape(dims)


def downsample_fmap(fmap: np.ndarray, out_h: int, out_w: int, adaptive: bool = False) -> np.ndarray:
    """Per-channel average pooling of a (K, H, W) map down to (K, out_h, out_w).

    Non-overlapping equal windows require H % out_h == 0 and W % out_w == 0;
    pass adaptive=True to allow unequal windows for non-divisible dims.
    """
    arr = np.asarray(fmap, dtype=float)
    if arr.ndim != 3:
        raise DomainError("downsample_fmap expects a (K, H, W) array", module="tensorio")
    k, h, w = arr.shape
    if out_h > h or out_w > w or out_h < 1 or out_w < 1:
        raise DomainError(
            f"cannot pool {h}x{w} down to {out_h}x{out_w}", module="tensorio"
        )
    if h % out_h == 0 and w % out_w == 0:
        return arr.reshape(k, out_h, h // out_h, out_w, w // out_w).mean(axis=(2, 4))
    if not adaptive:
        raise ResampleError(
            f"{h}x{w} not divisible by {out_h}x{out_w}; rerun with the adaptive "
            "pooling flag (--adaptive-pool / adaptive=True)",
            module="tensorio",
        )
    hb = [int(i * h / out_h) for i in range(out_h + 1)]
    wb = [int(j * w / out_w) for j in range(out_w + 1)]
    out = np.empty((k, out_h, out_w))
    for i in range(out_h):
        for j in range(out_w):
            out[:, i, j] = arr[:, hb[i]:hb[i + 1], wb[j]:wb[j + 1]].mean(axis=(1, 2))
    return out


# ---------------------------------------------------------------------------
# dataset manifests


@dataclass
class ManifestSample:
    id: str
    label: int
    features: str
    logits: str
    layer_features: dict = field(default_factory=dict)


@dataclass
class Manifest:
    name: str
    categories: list
    layers: list
    samples: list
    root: Path = field(default_factory=Path)

    def path(self, rel: str) -> Path:
        return self.root / rel


def load_manifest(path, check_files: bool = True) -> Manifest:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError:
        raise ManifestError(f"manifest not found: {path}", module="tensorio")
    except json.JSONDecodeError as exc:
        raise ManifestError(f"manifest {path} is not valid JSON: {exc}", module="tensorio")
    for key in ("name", "categories", "layers", "samples"):
        if key not in doc:
            raise ManifestError(f"manifest {path} missing key '{key}'", module="tensorio")
    samples = []
    n_cat = len(doc["categories"])
    for raw in doc["samples"]:
        for key in ("id", "label", "features", "logits"):
            if key not in raw:
                raise ManifestError(
                    f"sample entry missing '{key}' in {path}", module="tensorio"
                )
        if not (0 <= int(raw["label"]) < n_cat):
            raise ManifestError(
                f"sample {raw['id']}: label {raw['label']} outside category list",
                module="tensorio",
            )
        sample = ManifestSample(
            id=str(raw["id"]),
            label=int(raw["label"]),
            features=raw["features"],
            logits=raw["logits"],
            layer_features=dict(raw.get("layer_features", {})),
        )
        missing_layers = [l for l in doc["layers"] if l not in sample.layer_features]
        if doc["layers"] and missing_layers:
            raise ManifestError(
                f"sample {sample.id}: missing layer feature files {missing_layers}",
                module="tensorio",
            )
        samples.append(sample)
    manifest = Manifest(
        name=doc["name"],
        categories=list(doc["categories"]),
        layers=list(doc["layers"]),
        samples=samples,
        root=path.parent,
    )
    if check_files:
        for s in manifest.samples:
            for rel in [s.features, s.logits, *s.layer_features.values()]:
                if not manifest.path(rel).exists():
                    raise ManifestError(
                        f"sample {s.id}: referenced file missing: {rel}", module="tensorio"
                    )
    return manifest


def save_manifest(manifest: Manifest, path) -> None:
    doc = {
        "name": manifest.name,
        "categories": manifest.categories,
        "layers": manifest.layers,
        "samples": [
            {
                "id": s.id,
                "label": s.label,
                "features": s.features,
                "logits": s.logits,
                "layer_features": s.layer_features,
            }
            for s in manifest.samples
        ],
    }
    write_json(path, doc)


def write_json(path, doc) -> None:
    """Deterministic JSON writer used for every export (sorted keys, fixed
    separators, trailing newline)."""
    Path(path).write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n")


# ---------------------------------------------------------------------------
# artifact serialization


def save_kappa_table(table: KappaTable, out_dir, prefix: str = "kappa") -> list:
    out_dir = Path(out_dir)
    files = [
        out_dir / f"{prefix}_strengths.ftc",
        out_dir / f"{prefix}_kappas.ftc",
        out_dir / f"{prefix}_meta.json",
    ]
    write_tensor(files[0], table.strengths)
    write_tensor(files[1], table.kappas)
    write_json(files[2], {"dim": table.dim, "sigma": table.sigma,
                          "sample_count": table.sample_count})
    return files


def load_kappa_table(in_dir, prefix: str = "kappa") -> KappaTable:
    in_dir = Path(in_dir)
    meta = json.loads((in_dir / f"{prefix}_meta.json").read_text())
    return KappaTable(
        dim=int(meta["dim"]),
        sigma=float(meta["sigma"]),
        strengths=read_tensor(in_dir / f"{prefix}_strengths.ftc"),
        kappas=read_tensor(in_dir / f"{prefix}_kappas.ftc"),
        sample_count=int(meta["sample_count"]),
    )


def save_mixture(model, out_dir, prefix: str = "mixture") -> list:
    from .mixture import MixtureModel  # local import avoids a cycle

    assert isinstance(model, MixtureModel)
    out_dir = Path(out_dir)
    files = [
        out_dir / f"{prefix}_pi.ftc",
        out_dir / f"{prefix}_mu.ftc",
        out_dir / f"{prefix}_meta.json",
    ]
    write_tensor(files[0], model.priors)
    write_tensor(files[1], model.directions)
    write_json(files[2], {"n_categories": model.n_categories,
                          "dim": int(model.directions.shape[1])})
    return files


def load_mixture(in_dir, table: KappaTable, prefix: str = "mixture"):
    from .mixture import MixtureModel

    in_dir = Path(in_dir)
    return MixtureModel(
        priors=read_tensor(in_dir / f"{prefix}_pi.ftc"),
        directions=read_tensor(in_dir / f"{prefix}_mu.ftc"),
        kappa_table=table,
    )
