from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Iterator, Sequence

import numpy as np

from .geometry import Pose


@dataclass(frozen=True)
class Trajectory:
    """Timestamped pose sequence stored as stacked arrays.

    ``rotations`` is ``(N, 3, 3)``, ``translations`` is ``(N, 3)``. ``role`` is
    a free-form tag such as ``"groundtruth"`` or ``"estimate"``.
    """

    timestamps: np.ndarray
    rotations: np.ndarray
    translations: np.ndarray
    frame: str = "world"
    role: str = "estimate"

    def __post_init__(self):
        ts = np.asarray(self.timestamps, dtype=np.float64).reshape(-1)
        Rs = np.asarray(self.rotations, dtype=np.float64)
        ps = np.asarray(self.translations, dtype=np.float64)
        n = ts.shape[0]
        if n < 1:
            raise ValueError("trajectory needs at least one pose")
        if Rs.shape != (n, 3, 3) or ps.shape != (n, 3):
            raise ValueError(
                f"inconsistent trajectory shapes: {ts.shape}, {Rs.shape}, {ps.shape}"
            )
        if n > 1 and not np.all(np.diff(ts) > 0):
            raise ValueError("trajectory timestamps must be strictly increasing")
        for name, arr in (("timestamps", ts), ("rotations", Rs), ("translations", ps)):
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    @classmethod
    def from_poses(
        cls,
        timestamps: Iterable[float],
        poses: Sequence[Pose],
        frame: str = "world",
        role: str = "estimate",
    ) -> "Trajectory":
        poses = list(poses)
        return cls(
            np.asarray(list(timestamps), dtype=np.float64),
            np.array([p.R for p in poses]).reshape(-1, 3, 3),
            np.array([p.t for p in poses]).reshape(-1, 3),
            frame,
            role,
        )

    def __len__(self) -> int:
        return self.timestamps.shape[0]

    def __getitem__(self, i: int) -> Pose:
        return Pose._trusted(self.rotations[i].copy(), self.translations[i].copy())

    def __iter__(self) -> Iterator[Pose]:
        for i in range(len(self)):
            yield self[i]

    @property
    def positions(self) -> np.ndarray:
        return self.translations

    def poses(self) -> list[Pose]:
        return list(self)

    def with_translations(self, translations: np.ndarray) -> "Trajectory":
        return Trajectory(self.timestamps, self.rotations, translations, self.frame, self.role)

    def path_length(self) -> np.ndarray:
        """Cumulative chord length along the positions, starting at 0."""
        steps = np.linalg.norm(np.diff(self.translations, axis=0), axis=1)
        return np.concatenate([[0.0], np.cumsum(steps)])
