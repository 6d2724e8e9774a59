"""Spatiotemporal split construction and manifest I/O.

Source fires are 2017-2020 outside the target biomes; target fires are
anything from 2021-2023 or inside the Boreal/Taiga and Tundra biomes
(OR-composition in combined mode).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigurationError, DataError, FormatError

# biome vocabulary for US/Canada fires; configurable per dataset
BIOME_VOCAB = (
    "Boreal Forests/Taiga",
    "Tundra",
    "Temperate Conifer Forests",
    "Temperate Broadleaf & Mixed Forests",
    "Temperate Grasslands, Savannas & Shrublands",
    "Mediterranean Forests, Woodlands & Scrub",
    "Deserts & Xeric Shrublands",
)

DEFAULT_TARGET_BIOMES = ("Boreal Forests/Taiga", "Tundra")

SPLIT_MODES = ("temporal", "biome", "combined")


@dataclass(frozen=True)
class SplitSpec:
    source_years: frozenset[int] = frozenset(range(2017, 2021))
    target_years: frozenset[int] = frozenset(range(2021, 2024))
    target_biomes: frozenset[str] = frozenset(DEFAULT_TARGET_BIOMES)
    mode: str = "combined"
    vocabulary: tuple[str, ...] = BIOME_VOCAB

    def __post_init__(self):
        object.__setattr__(self, "source_years", frozenset(self.source_years))
        object.__setattr__(self, "target_years", frozenset(self.target_years))
        object.__setattr__(self, "target_biomes", frozenset(self.target_biomes))
        object.__setattr__(self, "vocabulary", tuple(self.vocabulary))
        if self.source_years & self.target_years:
            raise ConfigurationError(
                "source and target year sets must be disjoint")
        if self.mode not in SPLIT_MODES:
            raise ConfigurationError(
                f"unknown split mode {self.mode!r}; expected one of {SPLIT_MODES}")
        unknown = self.target_biomes - set(self.vocabulary)
        if unknown:
            raise ConfigurationError(
                f"target biomes {sorted(unknown)} not in vocabulary")


def is_target(scene, spec: SplitSpec) -> bool:
    temporal = scene.year in spec.target_years
    biome = scene.biome in spec.target_biomes
    if spec.mode == "temporal":
        return temporal
    if spec.mode == "biome":
        return biome
    return temporal or biome


def build_split(scenes, spec: SplitSpec = SplitSpec()):
    """Partition scenes into (train, test), ordered by fire_id.

    Test scenes satisfy the mode's criterion; everything else trains. The
    two lists are disjoint and together exhaust the input.
    """
    known = set(spec.vocabulary)
    for s in scenes:
        if s.biome not in known:
            raise DataError(
                f"unknown biome {s.biome!r} for fire {s.fire_id!r}; "
                f"known labels: {sorted(known)}")
    ordered = sorted(scenes, key=lambda s: s.fire_id)
    train = [s for s in ordered if not is_target(s, spec)]
    test = [s for s in ordered if is_target(s, spec)]
    return train, test


# ---------------------------------------------------------------------------
# manifest files: one `<fire_id>\t<partition>` line per scene


def write_manifest(path, train, test) -> None:
    lines = [f"{s.fire_id}\ttrain" for s in train]
    lines += [f"{s.fire_id}\ttest" for s in test]
    Path(path).write_text("\n".join(lines) + "\n")


def read_manifest(path) -> dict[str, str]:
    """fire_id -> partition."""
    assignment: dict[str, str] = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 2 or parts[1] not in ("train", "test"):
            raise FormatError(f"bad manifest line {lineno}: {line!r}")
        if parts[0] in assignment:
            raise FormatError(f"duplicate fire_id {parts[0]!r} at line {lineno}")
        assignment[parts[0]] = parts[1]
    return assignment
