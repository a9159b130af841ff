from dataclasses import dataclass
from typing import Union

import numpy as np


STATE_DIM = 4  # relative x, y [km], vx, vy [km/min]
MEASUREMENT_DIM = 1  # a single bearing per scan

FloatOrArray = Union[float, np.ndarray]


def wrap_angle(angle: FloatOrArray) -> FloatOrArray:
    """Map an angle (or array of angles) in radians onto (-pi, pi]."""
    wrapped = np.pi - np.mod(np.pi - np.asarray(angle, dtype=np.float64), 2.0 * np.pi)
    if wrapped.ndim == 0:
        return float(wrapped)
    return wrapped


def symmetrize(matrix: np.ndarray) -> np.ndarray:
    return 0.5 * (matrix + matrix.T)


@dataclass(frozen=True, eq=False)
class GaussianBelief:
    """Gaussian estimate of the relative target state.

    Args:
        mean: state mean as ndarray of shape [STATE_DIM], ordered (x, y, vx, vy) in km and km/min.
        cov: symmetric error covariance as ndarray of shape [STATE_DIM, STATE_DIM].
    """

    mean: np.ndarray
    cov: np.ndarray

    @staticmethod
    def create(mean, cov) -> "GaussianBelief":
        mean = np.array(mean, dtype=np.float64).reshape(-1)
        cov = np.array(cov, dtype=np.float64).reshape(mean.shape[0], mean.shape[0])
        return GaussianBelief(mean=mean, cov=symmetrize(cov))

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    @property
    def position(self) -> np.ndarray:
        return self.mean[:2]

    @property
    def velocity(self) -> np.ndarray:
        return self.mean[2:4]
