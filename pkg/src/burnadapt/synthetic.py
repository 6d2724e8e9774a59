"""Synthetic fire scenes: smooth reflectance backgrounds plus blob-union
burn scars with a deterministic spectral response (SWIR up, NIR down),
standing in for the real fire corpus at desk scale."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Rng, bilinear_matrix
from .errors import ConfigurationError
from .raster import QaFractions, RasterScene
from .splits import BIOME_VOCAB


@dataclass(frozen=True)
class ScarParams:
    """Blob geometry, spectral shift, and metadata pools for generation."""

    n_blobs: tuple[int, int] = (1, 4)
    radius_frac: tuple[float, float] = (0.10, 0.22)  # of min(H, W)
    scar_frac: tuple[float, float] = (0.03, 0.45)    # enforced bounds
    delta_b4: float = 0.04    # red: slight brightening from ash/soil
    delta_b8: float = -0.18   # NIR drops after vegetation loss
    delta_b12: float = 0.22   # SWIR rises on burned surfaces
    background_range: tuple[float, float] = (0.12, 0.55)
    noise_std: float = 0.012
    px_area_ha: float = 0.25
    years: tuple[int, ...] = tuple(range(2017, 2024))
    biomes: tuple[str, ...] = BIOME_VOCAB
    qa_max: float = 0.15  # synthetic scenes stay within accept thresholds

    def __post_init__(self):
        if self.n_blobs[0] < 0 or self.n_blobs[1] < self.n_blobs[0]:
            raise ConfigurationError(f"bad blob count range {self.n_blobs}")
        if not (0 < self.radius_frac[0] <= self.radius_frac[1]):
            raise ConfigurationError(f"bad radius range {self.radius_frac}")
        if self.radius_frac[1] >= 0.5:
            raise ConfigurationError(
                "blob radius would exceed the scene; radius_frac must be < 0.5")


def _smooth_field(rng: Rng, h: int, w: int, lo: float, hi: float) -> np.ndarray:
    """Bilinear upsample of a coarse random grid: smooth spatial structure."""
    gh, gw = max(2, h // 16), max(2, w // 16)
    coarse = rng.uniform(lo, hi, (gh, gw), dtype=np.float64)
    rows = bilinear_matrix(gh, h)
    cols = bilinear_matrix(gw, w)
    return rows @ coarse @ cols.T


def _blob_mask(h: int, w: int, centers, radii, scale: float) -> np.ndarray:
    yy, xx = np.mgrid[0:h, 0:w]
    mask = np.zeros((h, w), dtype=bool)
    for (cy, cx), (ry, rx) in zip(centers, radii):
        d = ((yy - cy) / (ry * scale)) ** 2 + ((xx - cx) / (rx * scale)) ** 2
        mask |= d <= 1.0
    return mask


def _draw_scar(rng: Rng, h: int, w: int, params: ScarParams) -> np.ndarray:
    k = rng.integers(params.n_blobs[0], params.n_blobs[1] + 1)
    if k == 0:
        return np.zeros((h, w), dtype=np.uint8)
    r_lo, r_hi = params.radius_frac
    base = min(h, w)
    centers, radii = [], []
    for _ in range(k):
        margin = r_lo * base
        cy = float(rng.uniform(margin, h - margin, ()))
        cx = float(rng.uniform(margin, w - margin, ()))
        ry = float(rng.uniform(r_lo, r_hi, ())) * base
        rx = float(rng.uniform(r_lo, r_hi, ())) * base
        centers.append((cy, cx))
        radii.append((ry, rx))
    # grow or shrink the union until the burned fraction is in bounds;
    # fraction is monotone in the shared radius scale, so this converges
    f_lo, f_hi = params.scar_frac
    scale = 1.0
    for _ in range(40):
        mask = _blob_mask(h, w, centers, radii, scale)
        frac = mask.mean()
        if frac < f_lo:
            scale *= 1.2
        elif frac > f_hi:
            scale *= 0.85
        else:
            break
    return mask.astype(np.uint8)


def synth_generate(rng: Rng, n_scenes: int, height: int = 128,
                   width: int = 128,
                   params: ScarParams = ScarParams()) -> list[RasterScene]:
    """Generate fully seed-deterministic scenes.

    Post-fire bands equal pre-fire bands outside the scar; inside, each band
    shifts by its configured delta (then clips to [0, 1]). Zero blobs give
    an empty mask and pre == post exactly.
    """
    scenes = []
    lo, hi = params.background_range
    for i in range(n_scenes):
        r = rng.child(i)
        pre = np.stack([
            _smooth_field(r.child(b), height, width, lo, hi)
            + r.child(10 + b).normal((height, width), params.noise_std,
                                     dtype=np.float64)
            for b in range(3)
        ])
        pre = np.clip(pre, 0.0, 1.0)
        scar = _draw_scar(r.child(20), height, width, params)
        post = pre.copy()
        burned = scar.astype(bool)
        for b, delta in enumerate((params.delta_b4, params.delta_b8,
                                   params.delta_b12)):
            band = post[b]
            band[burned] = np.clip(band[burned] + delta, 0.0, 1.0)
        meta = r.child(30)
        qa = QaFractions(
            cloud=float(meta.uniform(0.0, params.qa_max, ())),
            snow=float(meta.uniform(0.0, params.qa_max, ())),
            missing=float(meta.uniform(0.0, params.qa_max, ())),
        )
        year = params.years[meta.integers(0, len(params.years))]
        biome = params.biomes[meta.integers(0, len(params.biomes))]
        scenes.append(RasterScene(
            fire_id=f"SYN{i:05d}",
            year=int(year),
            biome=biome,
            pre=pre.astype(np.float32),
            post=post.astype(np.float32),
            mask=scar,
            qa=qa,
            area_ha=float(scar.sum()) * params.px_area_ha,
        ))
    return scenes


def difference_classifier_accuracy(scenes,
                                   params: ScarParams = ScarParams()) -> float:
    """Pixel accuracy of a fixed linear rule on the (B12 - B8) post-pre
    difference; a floor on task learnability."""
    threshold = 0.5 * (params.delta_b12 + abs(params.delta_b8))
    correct = total = 0
    for s in scenes:
        d = (s.post[2] - s.pre[2]) - (s.post[1] - s.pre[1])
        pred = (d > threshold).astype(np.uint8)
        correct += int((pred == s.mask).sum())
        total += s.mask.size
    return correct / total if total else 1.0
