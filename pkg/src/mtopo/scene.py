"""Design scene: domain, fixtures, frozen regions and load case on one grid."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import GridSpec, ScalarField, check_same_grid, volume_integral


@dataclass(frozen=True)
class Scene:
    spec: GridSpec
    domain: ScalarField
    fixtures: ScalarField
    retained: ScalarField
    void: ScalarField
    load: object = None

    def __post_init__(self):
        check_same_grid(self.domain, self.fixtures, self.retained, self.void)
        for name in ("domain", "fixtures", "retained", "void"):
            if not getattr(self, name).is_binary():
                raise ValueError(f"scene {name} must be a binary field")
        if not self.domain.values.any():
            raise ValueError("design domain is empty")
        if np.any(self.retained.values * self.void.values):
            raise ValueError("retained and void regions overlap")

    @classmethod
    def box(cls, spec: GridSpec, fixtures: ScalarField | None = None, retained: ScalarField | None = None,
            void: ScalarField | None = None, domain: ScalarField | None = None, load=None) -> "Scene":
        zero = ScalarField.zeros(spec)
        return cls(spec, domain if domain is not None else ScalarField.full(spec, 1.0),
                   fixtures if fixtures is not None else zero,
                   retained if retained is not None else zero,
                   void if void is not None else zero, load)

    @property
    def domain_volume(self) -> float:
        return volume_integral(self.domain)

    def free_mask(self) -> np.ndarray:
        """Voxels whose density is a design variable."""
        return (self.domain.values > 0) & (self.retained.values == 0) & (self.void.values == 0)
