"""Reference motion models: a constant-velocity Kalman filter in the SORT
lineage and a trivial no-motion predictor."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import BBox

# Noise scales follow the SORT/DeepSORT convention: position std proportional
# to box height, velocity std an order of magnitude smaller.
STD_WEIGHT_POSITION = 1.0 / 20.0
STD_WEIGHT_VELOCITY = 1.0 / 160.0

_NDIM = 4  # measured components: cx, cy, a, h


@dataclass
class KalmanState:
    """mean: (cx, cy, a, h, vcx, vcy, va, vh); covariance 8x8 SPD."""

    mean: np.ndarray
    covariance: np.ndarray


def _motion_matrices():
    f = np.eye(2 * _NDIM)
    for i in range(_NDIM):
        f[i, _NDIM + i] = 1.0
    h = np.eye(_NDIM, 2 * _NDIM)
    return f, h


_F, _H = _motion_matrices()


def _box_to_meas(b: BBox) -> np.ndarray:
    return np.array([b.cx, b.cy, b.aspect, b.h], dtype=np.float64)


def _meas_to_box(z: np.ndarray) -> BBox:
    cx, cy, a, h = z
    h = max(h, 1e-6)
    w = max(a * h, 1e-6)
    return BBox(float(np.clip(cx, 0.0, 1.0)), float(np.clip(cy, 0.0, 1.0)), w, h)


def kf_init(box: BBox) -> KalmanState:
    """Fresh state centered on the box with zero velocities."""
    mean = np.zeros(2 * _NDIM)
    mean[:_NDIM] = _box_to_meas(box)
    h = box.h
    std = [
        2 * STD_WEIGHT_POSITION * h,
        2 * STD_WEIGHT_POSITION * h,
        1e-2,
        2 * STD_WEIGHT_POSITION * h,
        10 * STD_WEIGHT_VELOCITY * h,
        10 * STD_WEIGHT_VELOCITY * h,
        1e-5,
        10 * STD_WEIGHT_VELOCITY * h,
    ]
    cov = np.diag(np.square(std))
    return KalmanState(mean, cov)


def _process_noise(h: float) -> np.ndarray:
    std = [
        STD_WEIGHT_POSITION * h,
        STD_WEIGHT_POSITION * h,
        1e-2,
        STD_WEIGHT_POSITION * h,
        STD_WEIGHT_VELOCITY * h,
        STD_WEIGHT_VELOCITY * h,
        1e-5,
        STD_WEIGHT_VELOCITY * h,
    ]
    return np.diag(np.square(std))


def _measurement_noise(h: float) -> np.ndarray:
    std = [
        STD_WEIGHT_POSITION * h,
        STD_WEIGHT_POSITION * h,
        1e-1,
        STD_WEIGHT_POSITION * h,
    ]
    return np.diag(np.square(std))


def kf_predict(state: KalmanState) -> tuple[KalmanState, BBox]:
    """Advance one frame under constant velocity; returns the prior box."""
    h = max(state.mean[3], 1e-6)
    mean = _F @ state.mean
    cov = _F @ state.covariance @ _F.T + _process_noise(h)
    new_state = KalmanState(mean, cov)
    return new_state, _meas_to_box(mean[:_NDIM])


def kf_update(state: KalmanState, box: BBox) -> KalmanState:
    """Standard Kalman correction against a measured box."""
    z = _box_to_meas(box)
    h = max(state.mean[3], 1e-6)
    r = _measurement_noise(h)
    s = _H @ state.covariance @ _H.T + r
    try:
        chol = np.linalg.cholesky(s)
    except np.linalg.LinAlgError as exc:
        raise ArithmeticError(
            f"innovation covariance not PSD: diag={np.diag(s)}") from exc
    # gain K = P H^T S^-1 via the Cholesky factor
    k = np.linalg.solve(chol.T, np.linalg.solve(chol, (state.covariance @ _H.T).T)).T
    innovation = z - _H @ state.mean
    mean = state.mean + k @ innovation
    cov = state.covariance - k @ s @ k.T
    cov = (cov + cov.T) / 2.0  # keep symmetric against round-off
    return KalmanState(mean, cov)


def kf_box(state: KalmanState) -> BBox:
    return _meas_to_box(state.mean[:_NDIM])


def no_motion_predict(last: BBox) -> BBox:
    """Identity predictor: the object is assumed to stay put."""
    return last
