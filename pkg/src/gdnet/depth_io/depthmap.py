from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class DepthMap:
    """Single-channel depth raster in meters with a declared valid range."""

    data: np.ndarray  # (height, width)
    d_min: float
    d_max: float

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 2:
            raise ValueError(f"DepthMap: expected a 2-D raster, got shape {self.data.shape}")
        if not (0 < self.d_min < self.d_max):
            raise ValueError(f"DepthMap: need 0 < d_min < d_max, got [{self.d_min}, {self.d_max}]")
        finite = self.data[np.isfinite(self.data)]
        if finite.size and (finite.min() < self.d_min or finite.max() > self.d_max):
            raise ValueError(
                f"DepthMap: values [{finite.min():.6g}, {finite.max():.6g}] "
                f"outside [{self.d_min}, {self.d_max}]"
            )

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def depth_range(self) -> float:
        return self.d_max - self.d_min
