"""Hyperspectral data model, synthetic scene generation, and augmentation.

A cube is stored channels-last, ``(H, W, C)`` float array; a mask is ``(H, W)``
with binary ground truth or ``[0, 1]`` predicted values. Feature maps elsewhere
in the package are plain arrays/tensors; only the two image carriers get
named types because they travel through file formats and the CLI.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ShapeMismatchError, ValidationError

NDArray = np.ndarray


@dataclass
class HyperCube:
    """An H x W x C reflectance cube, values expected in [0, 1] after normalization."""

    values: NDArray
    band_centers: NDArray | None = None

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.ndim != 3:
            raise ValidationError(f"cube values must be 3-d (H, W, C), got shape {v.shape}")
        h, w, c = v.shape
        if h < 1 or w < 1 or c < 2:
            raise ValidationError(f"cube needs H >= 1, W >= 1, C >= 2, got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValidationError("cube contains non-finite values")
        if self.band_centers is not None:
            bc = np.asarray(self.band_centers, dtype=np.float64)
            if bc.shape != (c,):
                raise ValidationError(
                    f"band_centers must have length C={c}, got shape {bc.shape}"
                )
            self.band_centers = bc
        self.values = v

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def bands(self) -> int:
        return self.values.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.values.shape


@dataclass
class SaliencyMask:
    """An H x W map: binary ground truth, or [0, 1] prediction (``binary=False``)."""

    values: NDArray
    binary: bool = True

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.ndim != 2:
            raise ValidationError(f"mask must be 2-d (H, W), got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValidationError("mask contains non-finite values")
        if self.binary:
            if not np.isin(v, (0, 1)).all():
                raise ValidationError("binary mask may only hold {0, 1}")
        elif v.min() < 0 or v.max() > 1:
            raise ValidationError("predicted mask values must lie in [0, 1]")
        self.values = v

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def matches(self, cube: HyperCube) -> bool:
        return self.values.shape == (cube.height, cube.width)


@dataclass(frozen=True)
class ObjectShape:
    """One rasterizable object: ``kind`` in {"rect", "disk"}.

    ``center`` is (row, col). For rects ``size`` is (height, width); for disks
    it is the radius (pixels whose center distance is <= radius are inside).
    """

    kind: str
    center: tuple[int, int]
    size: tuple[int, int] | float
    material: int

    def __post_init__(self):
        if self.kind not in ("rect", "disk"):
            raise ValidationError(f"unknown object kind {self.kind!r}")


@dataclass
class SceneSpec:
    """Full recipe for one synthetic scene; deterministic given ``seed``."""

    height: int
    width: int
    bands: int
    material_curves: NDArray  # (n_materials, bands)
    object_shapes: Sequence[ObjectShape]
    background_material: int = 0
    salient_material: int = 1
    noise_sigma: float = 0.0
    illumination_gradient: float = 0.0
    seed: int = 0

    def __post_init__(self):
        curves = np.asarray(self.material_curves, dtype=np.float64)
        if curves.ndim != 2 or curves.shape[1] != self.bands:
            raise ValidationError(
                f"material_curves must be (n_materials, {self.bands}), got {curves.shape}"
            )
        n = curves.shape[0]
        if n < 2:
            raise ValidationError("a scene needs at least 2 materials")
        # Pairwise-distinct prototypes; zero gap would make materials unlearnable.
        for i in range(n):
            for j in range(i + 1, n):
                if np.linalg.norm(curves[i] - curves[j]) <= 0:
                    raise ValidationError(f"materials {i} and {j} have identical curves")
        for idx in (self.background_material, self.salient_material):
            if not 0 <= idx < n:
                raise ValidationError(f"material index {idx} out of range [0, {n})")
        if self.salient_material == self.background_material:
            raise ValidationError("salient material must differ from the background")
        if self.noise_sigma < 0:
            raise ValidationError("noise_sigma must be >= 0")
        if not 0.0 <= self.illumination_gradient <= 1.0:
            raise ValidationError("illumination_gradient must lie in [0, 1]")
        for shp in self.object_shapes:
            if not 0 <= shp.material < n:
                raise ValidationError(f"object references material {shp.material} out of range")
        self.material_curves = curves

    @property
    def n_materials(self) -> int:
        return self.material_curves.shape[0]


def rasterize_shape(shape: ObjectShape, height: int, width: int) -> NDArray:
    """Boolean (H, W) footprint of one object; raises if it leaves the image."""
    r0, c0 = shape.center
    inside = np.zeros((height, width), dtype=bool)
    if shape.kind == "rect":
        sh, sw = shape.size
        top, left = r0 - sh // 2, c0 - sw // 2
        if top < 0 or left < 0 or top + sh > height or left + sw > width:
            raise ValidationError(
                f"rect at {shape.center} size {shape.size} exceeds image {height}x{width}"
            )
        inside[top : top + sh, left : left + sw] = True
    else:
        radius = float(shape.size)
        reach = int(np.ceil(radius))
        if r0 - reach < 0 or c0 - reach < 0 or r0 + reach >= height or c0 + reach >= width:
            raise ValidationError(
                f"disk at {shape.center} radius {radius} exceeds image {height}x{width}"
            )
        rr, cc = np.ogrid[:height, :width]
        inside = (rr - r0) ** 2 + (cc - c0) ** 2 <= radius**2
    return inside


def generate_synthetic_scene(spec: SceneSpec) -> tuple[HyperCube, SaliencyMask]:
    """Render a scene: prototype spectra per material, illumination ramp, noise.

    The illumination scale falls linearly from 1 at column 0 to
    ``1 - illumination_gradient`` at the last column. Overlapping objects are
    painted in list order. The mask marks exactly the salient-material pixels.
    """
    h, w = spec.height, spec.width
    material = np.full((h, w), spec.background_material, dtype=np.int64)
    for shp in spec.object_shapes:
        material[rasterize_shape(shp, h, w)] = shp.material

    values = spec.material_curves[material]  # (H, W, C) float64
    if spec.illumination_gradient > 0 and w > 1:
        cols = np.arange(w, dtype=np.float64) / (w - 1)
        scale = 1.0 - spec.illumination_gradient * cols
        values = values * scale[None, :, None]
    if spec.noise_sigma > 0:
        rng = np.random.default_rng(spec.seed)
        values = values + rng.normal(0.0, spec.noise_sigma, size=values.shape)

    mask = (material == spec.salient_material).astype(np.float32)
    cube = HyperCube(values.astype(np.float32))
    return cube, SaliencyMask(mask)


def normalize_cube(cube: HyperCube) -> HyperCube:
    """Affinely map all values to [0, 1]; rejects constant cubes."""
    v = cube.values
    lo, hi = float(v.min()), float(v.max())
    if hi <= lo:
        raise ValidationError("cannot normalize a constant cube (max == min)")
    out = (v - lo) / (hi - lo)
    return HyperCube(out.astype(v.dtype), band_centers=cube.band_centers)


def _resize_plane(plane: NDArray, out_h: int, out_w: int, nearest: bool) -> NDArray:
    """Resize a 2-d (or 2-d + channel) array.

    Grid-point mapping: output index i samples input coordinate
    ``i * (in - 1) / (out - 1)`` (endpoints align), bilinear or nearest.
    """
    in_h, in_w = plane.shape[:2]
    rows = np.linspace(0.0, in_h - 1.0, out_h) if out_h > 1 else np.zeros(1)
    cols = np.linspace(0.0, in_w - 1.0, out_w) if out_w > 1 else np.zeros(1)
    if nearest:
        ri = np.clip(np.rint(rows).astype(int), 0, in_h - 1)
        ci = np.clip(np.rint(cols).astype(int), 0, in_w - 1)
        return plane[np.ix_(ri, ci)]
    r0 = np.clip(np.floor(rows).astype(int), 0, in_h - 1)
    r1 = np.minimum(r0 + 1, in_h - 1)
    c0 = np.clip(np.floor(cols).astype(int), 0, in_w - 1)
    c1 = np.minimum(c0 + 1, in_w - 1)
    fr = (rows - r0).reshape(-1, 1)
    fc = (cols - c0).reshape(1, -1)
    if plane.ndim == 3:
        fr = fr[..., None]
        fc = fc[..., None]
    top = plane[np.ix_(r0, c0)] * (1 - fc) + plane[np.ix_(r0, c1)] * fc
    bot = plane[np.ix_(r1, c0)] * (1 - fc) + plane[np.ix_(r1, c1)] * fc
    return top * (1 - fr) + bot * fr


def _center_crop(arr: NDArray, crop_h: int, crop_w: int) -> NDArray:
    h, w = arr.shape[:2]
    top = (h - crop_h) // 2
    left = (w - crop_w) // 2
    return arr[top : top + crop_h, left : left + crop_w]


@dataclass
class AugmentParams:
    """Random-scale-then-center-crop parameters."""

    scale_range: tuple[float, float] = (1.0, 1.0)
    crop_size: tuple[int, int] | None = None
    seed: int = 0

    def __post_init__(self):
        lo, hi = self.scale_range
        if lo <= 0 or hi < lo:
            raise ValidationError(f"bad scale_range {self.scale_range}")


def augment(
    cube: HyperCube, mask: SaliencyMask, params: AugmentParams
) -> tuple[HyperCube, SaliencyMask]:
    """Apply one seeded random scale + center crop to a (cube, mask) pair.

    The cube is resampled bilinearly per band, the mask nearest-neighbor and
    re-binarized, both under the same spatial operator.
    """
    if not mask.matches(cube):
        raise ShapeMismatchError(f"mask {mask.shape} does not match cube {cube.shape}")
    rng = np.random.default_rng(params.seed)
    lo, hi = params.scale_range
    scale = float(rng.uniform(lo, hi)) if hi > lo else lo
    out_h = max(1, int(round(cube.height * scale)))
    out_w = max(1, int(round(cube.width * scale)))
    crop_h, crop_w = params.crop_size if params.crop_size else (cube.height, cube.width)
    if crop_h > out_h or crop_w > out_w:
        raise ValidationError(
            f"crop {crop_h}x{crop_w} larger than scaled image {out_h}x{out_w}"
        )
    scaled_cube = _resize_plane(cube.values, out_h, out_w, nearest=False)
    scaled_mask = _resize_plane(mask.values, out_h, out_w, nearest=True)
    new_cube = _center_crop(scaled_cube, crop_h, crop_w)
    new_mask = (_center_crop(scaled_mask, crop_h, crop_w) > 0.5).astype(np.float32)
    return (
        HyperCube(new_cube.astype(cube.values.dtype), band_centers=cube.band_centers),
        SaliencyMask(new_mask),
    )


def make_material_curves(
    n_materials: int,
    bands: int,
    rng: np.random.Generator,
    min_gap: float = 0.5,
    max_tries: int = 200,
) -> NDArray:
    """Draw smooth, pairwise-distinct spectral prototypes in (0, 1).

    Each curve is a baseline plus 2-3 Gaussian bumps; candidates closer than
    ``min_gap`` (L2 over bands) to an accepted curve are redrawn.
    """
    grid = np.linspace(0.0, 1.0, bands)
    curves: list[NDArray] = []
    for _ in range(n_materials):
        for attempt in range(max_tries):
            base = rng.uniform(0.25, 0.7)
            curve = np.full(bands, base)
            for _ in range(rng.integers(2, 4)):
                amp = rng.uniform(-0.35, 0.35)
                center = rng.uniform(0.0, 1.0)
                width = rng.uniform(0.08, 0.35)
                curve = curve + amp * np.exp(-0.5 * ((grid - center) / width) ** 2)
            curve = np.clip(curve, 0.02, 0.98)
            if all(np.linalg.norm(curve - c) > min_gap for c in curves):
                curves.append(curve)
                break
        else:
            raise ValidationError(
                f"could not draw {n_materials} curves with min_gap={min_gap} "
                f"in {max_tries} tries; lower the gap or raise the band count"
            )
    return np.stack(curves)


@dataclass
class SceneSampler:
    """Draws per-scene SceneSpecs around one shared material palette."""

    height: int = 64
    width: int = 64
    bands: int = 32
    n_materials: int = 5
    noise_sigma: float = 0.01
    illumination_gradient: float = 0.0
    objects_per_scene: tuple[int, int] = (1, 3)
    object_size: tuple[int, int] = (8, 20)
    seed: int = 0
    min_curve_gap: float = 0.5
    material_curves: NDArray = field(init=False)

    def __post_init__(self):
        if self.n_materials < 2:
            raise ValidationError("need at least 2 materials (background + salient)")
        rng = np.random.default_rng(self.seed)
        self.material_curves = make_material_curves(
            self.n_materials, self.bands, rng, min_gap=self.min_curve_gap
        )

    def spec_for(self, index: int) -> SceneSpec:
        """Scene ``index`` of the dataset; independent of call order."""
        rng = np.random.default_rng((self.seed, index))
        n_obj = int(rng.integers(self.objects_per_scene[0], self.objects_per_scene[1] + 1))
        shapes: list[ObjectShape] = []
        # The last object carries the salient material: painter's order means it
        # is never occluded, so every mask is non-empty.
        for k in range(n_obj):
            size = int(rng.integers(self.object_size[0], self.object_size[1] + 1))
            kind = "disk" if rng.random() < 0.5 else "rect"
            if kind == "disk":
                radius = max(2, size // 2)
                r = int(rng.integers(radius + 1, self.height - radius - 1))
                c = int(rng.integers(radius + 1, self.width - radius - 1))
                geom: tuple[int, int] | float = float(radius)
            else:
                sh = size
                sw = int(rng.integers(self.object_size[0], self.object_size[1] + 1))
                r = int(rng.integers(sh // 2, self.height - sh + sh // 2 + 1))
                c = int(rng.integers(sw // 2, self.width - sw + sw // 2 + 1))
                geom = (sh, sw)
            if k == n_obj - 1:
                mat = 1
            else:
                mat = int(rng.integers(2, self.n_materials)) if self.n_materials > 2 else 1
            shapes.append(ObjectShape(kind, (r, c), geom, mat))
        return SceneSpec(
            height=self.height,
            width=self.width,
            bands=self.bands,
            material_curves=self.material_curves,
            object_shapes=shapes,
            background_material=0,
            salient_material=1,
            noise_sigma=self.noise_sigma,
            illumination_gradient=self.illumination_gradient,
            seed=int(np.random.default_rng((self.seed, index, 1)).integers(2**31)),
        )
