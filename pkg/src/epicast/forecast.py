"""Sample-based forecast container shared by every model."""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass

import numpy as np

HORIZON = 14
DEFAULT_DRAWS = 2000


@dataclass(frozen=True)
class ForecastDraws:
    """``draws[d, h]`` is draw ``d`` of the count on day ``origin + h + 1``."""

    model_id: str
    region_id: str
    origin: dt.date
    draws: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.draws)
        if d.ndim != 2:
            raise ValueError("forecast draws must be a (D, horizon) matrix")
        if np.any(d < 0):
            raise ValueError("forecast counts must be non-negative")
        d = np.array(d, dtype=np.int64)
        d.setflags(write=False)
        object.__setattr__(self, "draws", d)

    @property
    def horizon(self) -> int:
        return self.draws.shape[1]

    @property
    def n_draws(self) -> int:
        return self.draws.shape[0]

    @property
    def target_dates(self) -> list[dt.date]:
        return [self.origin + dt.timedelta(days=h + 1) for h in range(self.horizon)]

    def quantiles(self, probs=(0.025, 0.25, 0.5, 0.75, 0.975)) -> np.ndarray:
        """Per-day quantiles, shape (len(probs), horizon)."""
        return np.quantile(self.draws, probs, axis=0)


def round_counts(x) -> np.ndarray:
    """Round real-valued counts to the nearest non-negative integer."""
    x = np.nan_to_num(np.asarray(x, dtype=float), nan=0.0, posinf=np.iinfo(np.int64).max / 4)
    return np.rint(np.clip(x, 0.0, np.iinfo(np.int64).max / 4)).astype(np.int64)


def check_horizon(horizon: int) -> None:
    if horizon < 1:
        raise ValueError(f"horizon must be at least 1, got {horizon}")
