"""Cube, mask, and manifest file formats.

Cubes are stored as two files: a text header (``<path>.hdr``, one
``key = value`` per line) and a raw band-sequential (BSQ) payload of
little-endian 32-bit floats at ``<path>``. Masks are binary PGM (P5,
maxval 255: 0 background, 255 object; predicted maps scale [0, 1] to
[0, 255]). Manifests are newline-delimited ``cube_path<TAB>mask_path``.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import HyperCube, SaliencyMask
from .errors import CubeFormatError, ValidationError

_HEADER_KEYS = ("samples", "lines", "bands", "interleave", "data type", "byte order")


def header_path(payload_path: str | Path) -> Path:
    return Path(str(payload_path) + ".hdr")


def save_cube(cube: HyperCube, path: str | Path) -> None:
    """Write ``path`` (raw BSQ float32 LE) and ``path.hdr`` (text header)."""
    path = Path(path)
    h, w, c = cube.shape
    lines = [
        f"samples = {w}",
        f"lines = {h}",
        f"bands = {c}",
        "interleave = bsq",
        "data type = 4",
        "byte order = 0",
    ]
    if cube.band_centers is not None:
        centers = ", ".join(f"{v:g}" for v in cube.band_centers)
        lines.append(f"wavelength = {centers}")
    header_path(path).write_text("\n".join(lines) + "\n")
    # BSQ: full band planes back to back, so transpose to (C, H, W).
    payload = np.ascontiguousarray(cube.values.transpose(2, 0, 1), dtype="<f4")
    path.write_bytes(payload.tobytes())


def _parse_header(path: Path) -> dict[str, str]:
    if not path.exists():
        raise CubeFormatError(f"missing header file {path}")
    fields: dict[str, str] = {}
    for raw in path.read_text().splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise CubeFormatError(f"malformed header line {line!r} in {path}")
        key, value = line.split("=", 1)
        fields[key.strip()] = value.strip()
    missing = [k for k in _HEADER_KEYS if k not in fields]
    if missing:
        raise CubeFormatError(f"header {path} missing keys: {missing}")
    return fields


def load_cube(path: str | Path) -> HyperCube:
    """Read a cube written by :func:`save_cube`; roundtrip is bit-exact."""
    path = Path(path)
    fields = _parse_header(header_path(path))
    try:
        w = int(fields["samples"])
        h = int(fields["lines"])
        c = int(fields["bands"])
    except ValueError as exc:
        raise CubeFormatError(f"non-integer dimension in header: {exc}") from exc
    if fields["interleave"].lower() != "bsq":
        raise CubeFormatError(f"unsupported interleave {fields['interleave']!r} (expected bsq)")
    if fields["data type"] != "4":
        raise CubeFormatError(f"unknown data type {fields['data type']!r} (expected 4 = float32)")
    if fields["byte order"] != "0":
        raise CubeFormatError(f"unsupported byte order {fields['byte order']!r} (expected 0)")
    raw = path.read_bytes()
    expected = h * w * c * 4
    if len(raw) != expected:
        raise CubeFormatError(
            f"payload {path} holds {len(raw)} bytes, header implies {expected} "
            f"({h}x{w}x{c} float32)"
        )
    values = np.frombuffer(raw, dtype="<f4").reshape(c, h, w).transpose(1, 2, 0).copy()
    band_centers = None
    if "wavelength" in fields:
        band_centers = np.array([float(x) for x in fields["wavelength"].split(",")])
    return HyperCube(values, band_centers=band_centers)


def save_mask(mask: SaliencyMask, path: str | Path) -> None:
    """Write an 8-bit binary PGM; predicted maps are scaled by 255 and rounded."""
    path = Path(path)
    levels = np.rint(np.clip(mask.values, 0.0, 1.0) * 255).astype(np.uint8)
    h, w = levels.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(levels.tobytes())


def load_mask(path: str | Path, binary: bool = True) -> SaliencyMask:
    """Read a P5 PGM. ``binary=True`` thresholds at 128, else rescales to [0, 1]."""
    data = Path(path).read_bytes()
    if not data.startswith(b"P5"):
        raise CubeFormatError(f"{path} is not a binary (P5) PGM file")
    # Header: magic, width, height, maxval as whitespace-separated tokens,
    # possibly interleaved with '#' comments.
    tokens: list[bytes] = []
    pos = 2
    while len(tokens) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise CubeFormatError(f"truncated PGM header in {path}")
        tokens.append(data[start:pos])
    pos += 1  # single whitespace after maxval
    w, h, maxval = (int(t) for t in tokens)
    if maxval != 255:
        raise CubeFormatError(f"PGM {path} has maxval {maxval}, expected 255")
    raw = data[pos : pos + h * w]
    if len(raw) != h * w:
        raise CubeFormatError(f"PGM {path} payload truncated ({len(raw)} of {h * w} bytes)")
    levels = np.frombuffer(raw, dtype=np.uint8).reshape(h, w)
    if binary:
        return SaliencyMask((levels >= 128).astype(np.float32), binary=True)
    return SaliencyMask(levels.astype(np.float32) / 255.0, binary=False)


@dataclass
class DatasetManifest:
    """Ordered (cube, mask) path pairs plus a split tag."""

    pairs: list[tuple[Path, Path]]
    split: str = "train"

    def __post_init__(self):
        self.pairs = [(Path(c), Path(m)) for c, m in self.pairs]

    def __len__(self) -> int:
        return len(self.pairs)

    def validate_files(self) -> None:
        """Check every referenced file exists and mask dims match the cube."""
        for cube_path, mask_path in self.pairs:
            cube = load_cube(cube_path)
            mask = load_mask(mask_path)
            if not mask.matches(cube):
                raise ValidationError(
                    f"{mask_path} is {mask.shape} but {cube_path} is "
                    f"{cube.height}x{cube.width}"
                )


def save_manifest(manifest: DatasetManifest, path: str | Path) -> None:
    lines = [f"{c}\t{m}" for c, m in manifest.pairs]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


def load_manifest(path: str | Path, split: str = "train") -> DatasetManifest:
    pairs = []
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.strip()
        if not line:
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise ValidationError(f"{path}:{lineno}: expected 'cube<TAB>mask', got {line!r}")
        pairs.append((Path(parts[0]), Path(parts[1])))
    return DatasetManifest(pairs, split=split)
