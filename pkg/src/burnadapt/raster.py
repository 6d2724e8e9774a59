"""Scene container, BARC1 raster I/O, polygon rasterization, QA filtering,
and patch extraction.

BARC1 file layout
-----------------
A text header followed by raw little-endian payloads::

    BARC1
    fire_id: <string>
    year: <int>
    biome: <string>
    area_ha: <float>
    bands: B4,B8,B12
    shape: <C>,<H>,<W>
    dtype: f32le
    mask_dtype: u8
    qa_cloud: <float>
    qa_snow: <float>
    qa_missing: <float>
    <blank line>
    <pre bands: C*H*W float32> <post bands: C*H*W float32> <mask: H*W uint8>

Payloads appear in header order: pre, post, mask. The mask must be strictly
{0,1}. Round trips are byte-identical.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import DataError, DimensionError, FormatError
from .tiling import tile_origins

MAGIC = b"BARC1"
BAND_NAMES = ("B4", "B8", "B12")


@dataclass
class QaFractions:
    cloud: float = 0.0
    snow: float = 0.0
    missing: float = 0.0


@dataclass
class RasterScene:
    """A pre/post reflectance pair with its burned-area mask and metadata."""

    fire_id: str
    year: int
    biome: str
    pre: np.ndarray   # [3, H, W] float32 reflectance in [0, 1], bands B4,B8,B12
    post: np.ndarray  # [3, H, W] float32
    mask: np.ndarray  # [H, W] uint8 in {0, 1}
    qa: QaFractions = field(default_factory=QaFractions)
    area_ha: float = 0.0

    def __post_init__(self):
        self.pre = np.ascontiguousarray(self.pre, dtype=np.float32)
        self.post = np.ascontiguousarray(self.post, dtype=np.float32)
        self.mask = np.ascontiguousarray(self.mask, dtype=np.uint8)
        if self.pre.ndim != 3 or self.pre.shape[0] != len(BAND_NAMES):
            raise DimensionError(f"pre bands must be [3, H, W], got {self.pre.shape}")
        if self.post.shape != self.pre.shape:
            raise DimensionError("pre and post shapes disagree")
        if self.mask.shape != self.pre.shape[1:]:
            raise DimensionError("mask shape disagrees with bands")
        bad = np.setdiff1d(np.unique(self.mask), [0, 1])
        if bad.size:
            raise DataError(f"mask values outside {{0,1}}: {bad[:8]}")

    @property
    def height(self) -> int:
        return self.pre.shape[1]

    @property
    def width(self) -> int:
        return self.pre.shape[2]


# ---------------------------------------------------------------------------
# BARC1 serialization


def _header_bytes(scene: RasterScene) -> bytes:
    c, h, w = scene.pre.shape
    lines = [
        MAGIC.decode(),
        f"fire_id: {scene.fire_id}",
        f"year: {scene.year}",
        f"biome: {scene.biome}",
        f"area_ha: {scene.area_ha!r}",
        f"bands: {','.join(BAND_NAMES)}",
        f"shape: {c},{h},{w}",
        "dtype: f32le",
        "mask_dtype: u8",
        f"qa_cloud: {scene.qa.cloud!r}",
        f"qa_snow: {scene.qa.snow!r}",
        f"qa_missing: {scene.qa.missing!r}",
        "",
    ]
    return ("\n".join(lines) + "\n").encode()


def write_scene(scene: RasterScene, path) -> None:
    payload = (scene.pre.astype("<f4").tobytes()
               + scene.post.astype("<f4").tobytes()
               + scene.mask.astype("u1").tobytes())
    Path(path).write_bytes(_header_bytes(scene) + payload)


def _parse_header(blob: bytes):
    end = blob.find(b"\n\n")
    if end < 0:
        raise FormatError("missing blank line terminating the header",
                          offset=len(blob))
    head = blob[:end].decode("utf-8", errors="replace").splitlines()
    if not head or head[0].encode() != MAGIC:
        raise FormatError(f"bad magic {head[0]!r}, expected BARC1", offset=0)
    fields = {}
    offset = len(MAGIC) + 1
    for line in head[1:]:
        if ": " not in line:
            raise FormatError(f"malformed header line {line!r}", offset=offset)
        key, value = line.split(": ", 1)
        fields[key] = value
        offset += len(line.encode()) + 1
    return fields, end + 2


def read_scene(path) -> RasterScene:
    blob = Path(path).read_bytes()
    fields, body_start = _parse_header(blob)
    try:
        shape = tuple(int(s) for s in fields["shape"].split(","))
        year = int(fields["year"])
        area_ha = float(fields["area_ha"])
        qa = QaFractions(cloud=float(fields["qa_cloud"]),
                         snow=float(fields["qa_snow"]),
                         missing=float(fields["qa_missing"]))
        fire_id = fields["fire_id"]
        biome = fields["biome"]
        dtype = fields["dtype"]
        mask_dtype = fields["mask_dtype"]
    except (KeyError, ValueError) as exc:
        raise FormatError(f"invalid header field: {exc}", offset=0) from exc
    if dtype != "f32le" or mask_dtype != "u8":
        raise FormatError(f"unsupported payload dtypes {dtype}/{mask_dtype}")
    if len(shape) != 3 or shape[0] != len(BAND_NAMES):
        raise FormatError(f"unsupported shape {shape}")
    c, h, w = shape
    band_bytes = 4 * c * h * w
    mask_bytes = h * w
    expected = 2 * band_bytes + mask_bytes
    body = blob[body_start:]
    if len(body) != expected:
        raise FormatError(
            f"payload is {len(body)} bytes, expected {expected}",
            offset=body_start + min(len(body), expected))
    pre = np.frombuffer(body, dtype="<f4", count=c * h * w).reshape(shape)
    post = np.frombuffer(body, dtype="<f4", count=c * h * w,
                         offset=band_bytes).reshape(shape)
    mask = np.frombuffer(body, dtype="u1", offset=2 * band_bytes).reshape(h, w)
    bad = np.setdiff1d(np.unique(mask), [0, 1])
    if bad.size:
        raise FormatError(f"mask values outside {{0,1}}: {bad[:8]}",
                          offset=body_start + 2 * band_bytes)
    return RasterScene(fire_id=fire_id, year=year, biome=biome,
                       pre=pre.copy(), post=post.copy(), mask=mask.copy(),
                       qa=qa, area_ha=area_ha)


# ---------------------------------------------------------------------------
# polygon rasterization


def rasterize_polygon(vertices, height: int, width: int) -> np.ndarray:
    """Scanline even-odd fill: a pixel is 1 iff its center lies inside.

    Centers sit at (col + 0.5, row + 0.5). Edges are treated half-open in y
    (horizontal edges contribute nothing) and spans are half-open in x, which
    realizes the top-left tie rule for centers exactly on a boundary.
    """
    verts = [(float(x), float(y)) for x, y in vertices]
    if len(verts) < 3:
        raise DataError(f"polygon needs >= 3 vertices, got {len(verts)}")
    mask = np.zeros((height, width), dtype=np.uint8)
    edges = [(verts[i], verts[(i + 1) % len(verts)]) for i in range(len(verts))]
    for row in range(height):
        cy = row + 0.5
        xs = []
        for (x1, y1), (x2, y2) in edges:
            if y1 == y2:
                continue
            lo, hi = (y1, y2) if y1 < y2 else (y2, y1)
            if not (lo <= cy < hi):
                continue
            xs.append(x1 + (cy - y1) * (x2 - x1) / (y2 - y1))
        xs.sort()
        for a, b in zip(xs[::2], xs[1::2]):
            # centers with a <= col+0.5 < b
            first = int(np.ceil(a - 0.5))
            last = int(np.ceil(b - 0.5))  # exclusive
            first = max(first, 0)
            last = min(last, width)
            if first < last:
                mask[row, first:last] = 1
    return mask


# ---------------------------------------------------------------------------
# QA / area filtering


@dataclass(frozen=True)
class QaThresholds:
    cloud: float = 0.20
    snow: float = 0.20
    missing: float = 0.20
    min_area_ha: float = 100.0  # strictly-larger-than filter


@dataclass(frozen=True)
class FilterResult:
    accepted: bool
    reason: str | None = None

    def __bool__(self) -> bool:
        return self.accepted


def qa_filter(scene: RasterScene,
              thresholds: QaThresholds = QaThresholds()) -> FilterResult:
    """Accept iff every QA fraction is <= its threshold and the burned area
    is strictly larger than the minimum."""
    if scene.qa.cloud > thresholds.cloud:
        return FilterResult(False, "cloud")
    if scene.qa.snow > thresholds.snow:
        return FilterResult(False, "snow")
    if scene.qa.missing > thresholds.missing:
        return FilterResult(False, "missing")
    if not scene.area_ha > thresholds.min_area_ha:
        return FilterResult(False, "area")
    return FilterResult(True)


# ---------------------------------------------------------------------------
# patching


@dataclass
class Patch:
    fire_id: str
    origin: tuple[int, int]
    pre: np.ndarray   # [3, size, size]
    post: np.ndarray
    mask: np.ndarray  # [size, size]


def make_patches(scene: RasterScene, size: int = 128,
                 stride: int | None = None) -> list[Patch]:
    """Cut a window grid at the given stride; when the size does not tile
    exactly, a final row/column of windows is placed flush with the edge."""
    stride = size if stride is None else stride
    origins = tile_origins(scene.height, scene.width, size, stride)
    patches = []
    for r, c in origins:
        patches.append(Patch(
            fire_id=scene.fire_id,
            origin=(r, c),
            pre=scene.pre[:, r:r + size, c:c + size].copy(),
            post=scene.post[:, r:r + size, c:c + size].copy(),
            mask=scene.mask[r:r + size, c:c + size].copy(),
        ))
    return patches
