"""Zero-phase low-pass filtering and filtered finite differences."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.signal as sgl
from scipy.ndimage import uniform_filter1d


@dataclass(frozen=True)
class FilterParams:
    """Low-pass filter settings.

    ``kind`` is ``"butterworth2"`` (second-order Butterworth at ``cutoff_hz``)
    or ``"moving_average"`` (centred window of ``window_frames``).  A moving
    average with a one-frame window disables filtering.
    """

    kind: str = "butterworth2"
    cutoff_hz: float | None = 8.0
    window_frames: int = 1
    zero_phase: bool = True

    def __post_init__(self):
        if self.kind == "butterworth2":
            if self.cutoff_hz is None or not self.cutoff_hz > 0:
                raise ValueError("butterworth2 needs a positive cutoff_hz")
        elif self.kind == "moving_average":
            if self.window_frames < 1 or self.window_frames % 2 == 0:
                raise ValueError("window_frames must be an odd positive integer")
        else:
            raise ValueError(f"unknown filter kind {self.kind!r}")

    @classmethod
    def none(cls) -> "FilterParams":
        return cls(kind="moving_average", cutoff_hz=None, window_frames=1)

    @classmethod
    def lowpass(cls, cutoff_hz: float) -> "FilterParams":
        return cls(kind="butterworth2", cutoff_hz=cutoff_hz)

    @property
    def is_identity(self) -> bool:
        return self.kind == "moving_average" and self.window_frames == 1

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "cutoff_hz": self.cutoff_hz,
            "window_frames": self.window_frames,
            "zero_phase": self.zero_phase,
        }


def lowpass(series: np.ndarray, frame_rate: float, params: FilterParams) -> np.ndarray:
    """Filter each column of a T x d array (1-D input is accepted too)."""
    x = np.asarray(series, dtype=float)
    if params.is_identity or x.shape[0] < 2:
        return x.copy()
    if params.kind == "moving_average":
        if params.zero_phase:
            return uniform_filter1d(x, params.window_frames, axis=0, mode="reflect")
        kernel = np.ones(params.window_frames) / params.window_frames
        return sgl.lfilter(kernel, [1.0], x, axis=0)

    nyquist = frame_rate / 2.0
    if params.cutoff_hz >= nyquist:
        raise ValueError(
            f"cutoff {params.cutoff_hz} Hz is not below Nyquist ({nyquist} Hz)"
        )
    b, a = sgl.butter(2, params.cutoff_hz / nyquist)
    if not params.zero_phase:
        zi = sgl.lfilter_zi(b, a)
        zi = zi.reshape((-1,) + (1,) * (x.ndim - 1)) * x[:1]
        return sgl.lfilter(b, a, x, axis=0, zi=zi)[0]
    padlen = min(3 * max(len(a), len(b)), x.shape[0] - 1)
    return sgl.filtfilt(b, a, x, axis=0, padtype="even", padlen=padlen)


def filtered_derivative(
    series: np.ndarray,
    frame_rate: float,
    params: FilterParams,
    units_per_frame: bool = True,
) -> np.ndarray:
    """First differences divided by the sample spacing, then low-passed.

    With ``units_per_frame`` the spacing is one frame; otherwise it is
    ``1 / frame_rate`` seconds.  Returns T-1 rows.
    """
    x = np.asarray(series, dtype=float)
    if x.shape[0] < 2:
        raise ValueError("derivative needs at least 2 samples")
    dt = 1.0 if units_per_frame else 1.0 / frame_rate
    return lowpass(np.diff(x, axis=0) / dt, frame_rate, params)
