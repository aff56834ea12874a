"""Cloud-style masking of optical acquisitions.

A scenario removes whole per-parcel acquisitions: some optical images
are cloudy, and for each cloudy image an independent subset of parcels
loses every optical column of that acquisition.  Radar columns are never
masked.  The removed values are returned alongside the masked matrix so
imputations can be scored against them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data_model import FeatureMatrix


def round_half_up(x: float) -> int:
    """Round with ties away from zero, so 23% of 13 images is 3 images."""
    return int(math.floor(float(x) + 0.5))


@dataclass(frozen=True)
class MaskingScenario:
    """Which optical images turn cloudy and how many parcels each hits.

    Exactly one of ``pct_cloudy_images`` (fraction of images drawn at
    random) or ``acquisitions`` (explicit acquisition indices) must be
    given.
    """

    pct_cloudy_images: float | None = None
    acquisitions: tuple[int, ...] | None = None
    pct_affected_parcels: float = 0.5
    seed: int = 0

    def __post_init__(self) -> None:
        if (self.pct_cloudy_images is None) == (self.acquisitions is None):
            raise ValueError("set exactly one of pct_cloudy_images or acquisitions")
        if self.pct_cloudy_images is not None \
                and not 0.0 <= self.pct_cloudy_images <= 1.0:
            raise ValueError("pct_cloudy_images must lie in [0, 1]")
        if not 0.0 <= self.pct_affected_parcels <= 1.0:
            raise ValueError("pct_affected_parcels must lie in [0, 1]")
        if self.acquisitions is not None:
            acqs = tuple(int(a) for a in self.acquisitions)
            if len(set(acqs)) != len(acqs):
                raise ValueError("acquisitions must not repeat")
            object.__setattr__(self, "acquisitions", acqs)


@dataclass(frozen=True)
class MaskedDataset:
    """A masked matrix plus the ground truth of every removed entry.

    ``truth`` holds (row_index, column_index, original_value) triples
    sorted by position; restoring them reproduces the input exactly.
    """

    matrix: FeatureMatrix
    truth: tuple[tuple[int, int, float], ...]
    cloudy_acquisitions: tuple[int, ...]
    scenario: MaskingScenario
    warnings: tuple[str, ...] = ()


def apply_scenario(m: FeatureMatrix, scenario: MaskingScenario) -> MaskedDataset:
    """Mask optical acquisitions per the scenario, deterministically by seed.

    Requires the optical columns to be fully observed.  Parcels are drawn
    independently for every cloudy image, so a parcel can lose several
    acquisitions.
    """
    s2_acqs = m.acquisitions("S2")
    s2_cols = m.column_indices(sensor="S2")
    if s2_cols.size and not m.observed_mask[:, s2_cols].all():
        raise ValueError("optical columns must be fully observed before masking")
    rng = np.random.Generator(np.random.PCG64(scenario.seed))
    notes = []
    if scenario.acquisitions is not None:
        unknown = set(scenario.acquisitions) - set(s2_acqs)
        if unknown:
            raise ValueError(f"unknown optical acquisitions {sorted(unknown)}")
        cloudy = tuple(sorted(scenario.acquisitions))
    else:
        n_cloudy = round_half_up(scenario.pct_cloudy_images * len(s2_acqs))
        if n_cloudy == 0 and scenario.pct_cloudy_images > 0:
            notes.append("pct_cloudy_images rounded down to zero images")
        chosen = rng.choice(len(s2_acqs), size=n_cloudy, replace=False)
        cloudy = tuple(sorted(s2_acqs[i] for i in chosen))

    n_affected = round_half_up(scenario.pct_affected_parcels * m.n_rows)
    mask = np.array(m.observed_mask)
    truth: list[tuple[int, int, float]] = []
    for acq in cloudy:
        cols = m.column_indices(sensor="S2", acquisition_index=acq)
        rows = rng.choice(m.n_rows, size=n_affected, replace=False)
        for i in rows:
            for j in cols:
                if mask[i, j]:
                    truth.append((int(i), int(j), float(m.values[i, j])))
                    mask[i, j] = False
    truth.sort()
    matrix = m.with_values(m.values, mask)
    return MaskedDataset(matrix=matrix, truth=tuple(truth),
                         cloudy_acquisitions=cloudy, scenario=scenario,
                         warnings=tuple(notes))


def restore(masked: MaskedDataset) -> FeatureMatrix:
    """Put the removed values back; inverse of apply_scenario."""
    values = np.array(masked.matrix.values)
    mask = np.array(masked.matrix.observed_mask)
    for i, j, value in masked.truth:
        values[i, j] = value
        mask[i, j] = True
    return masked.matrix.with_values(values, mask)


def day_by_day_scenarios(m: FeatureMatrix, pct_affected_parcels: float = 0.5,
                         seed: int = 0) -> tuple[MaskedDataset, ...]:
    """One single-image scenario per optical acquisition, seeds derived per image."""
    out = []
    for acq in m.acquisitions("S2"):
        acq_seed = int(np.random.SeedSequence(
            entropy=abs(int(seed)), spawn_key=(int(acq),)).generate_state(1)[0])
        scenario = MaskingScenario(acquisitions=(int(acq),),
                                   pct_affected_parcels=pct_affected_parcels,
                                   seed=acq_seed)
        out.append(apply_scenario(m, scenario))
    return tuple(out)
