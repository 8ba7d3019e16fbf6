"""Per-point predictions exchanged between adapters and the scoring path."""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from .errors import MissingDenormalization


class Space(IntEnum):
    PHYSICAL = 0
    NORMALIZED = 1


@dataclass(frozen=True, eq=False)
class FieldPrediction:
    design_id: str
    values: np.ndarray
    space: Space
    sample_seed: int = 0
    model_name: str = ""
    n_params: float | None = None

    @property
    def n(self) -> int:
        return len(self.values)

    def to_physical(self, stats=None) -> np.ndarray:
        """Values in m^2/s^2; normalised values need the training stats."""
        if self.space == Space.PHYSICAL:
            return np.asarray(self.values, dtype=np.float64)
        if stats is None:
            raise MissingDenormalization(
                f"{self.design_id}: prediction is in normalised space and no stats were given"
            )
        from .dataset_registry import denormalize

        return denormalize(self.values, stats)
