"""Strain envelopes, envelope decimation and the largest-cycle loss.

The upper/lower envelope of a strain signal is its sliding-window max/min.
Both global extrema survive enveloping and block decimation unchanged, so the
largest strain cycle of a startup can be computed from the low-rate enveloped
trajectory exactly.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numba import njit

from .errors import EmptySignal, IncompatibleRates, ValidationFailure
from .sim import StartupParams

CSV_COLUMNS = ("time_s", "omega", "opening", "strain")


@dataclass(frozen=True, eq=False)
class MeasuredTrajectory:
    """Speed, opening and strain sampled at ``f_M`` from standstill to ``t_st``."""

    omega: np.ndarray
    opening: np.ndarray
    strain: np.ndarray
    f_M: float
    t_st: float
    params: StartupParams | None = None
    synchronized: bool = True

    def __len__(self) -> int:
        return self.strain.size

    @property
    def time(self) -> np.ndarray:
        return np.arange(self.strain.size) / self.f_M

    def validate(self) -> None:
        """Raise :class:`ValidationFailure` unless the trajectory is usable."""
        n = self.strain.size
        if n == 0:
            raise ValidationFailure("empty trajectory")
        if not (self.omega.size == self.opening.size == n):
            raise ValidationFailure("omega/opening/strain lengths differ")
        expected = self.t_st * self.f_M + 1
        if abs(n - expected) > 1e-6 * expected:
            raise ValidationFailure(f"{n} samples but t_st * f_M + 1 = {expected:g}")
        for name in ("omega", "opening", "strain"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValidationFailure(f"non-finite {name} sample")


@dataclass(frozen=True, eq=False)
class EnvelopedTrajectory:
    omega: np.ndarray
    opening: np.ndarray
    upper: np.ndarray
    lower: np.ndarray
    f_e: float
    window_w: int

    def __len__(self) -> int:
        return self.upper.size


def window_offsets(w: int) -> tuple[int, int]:
    """Samples looked at before and after index ``n`` for window ``w``.

    The window spans offsets ``k`` in ``[ceil(-w/2), ceil(w/2)]`` applied as
    ``s[n - k]``, i.e. indices ``n - ceil(w/2)`` through ``n + floor(w/2)``.
    """
    return math.ceil(w / 2), w // 2


@njit(cache=True)
def _sliding_extreme(x, before, after, upper):
    n = x.size
    out = np.empty(n)
    dq = np.empty(n, dtype=np.int64)
    head = 0
    tail = 0
    nxt = 0
    for i in range(n):
        hi = min(i + after, n - 1)
        while nxt <= hi:
            v = x[nxt]
            if upper:
                while tail > head and x[dq[tail - 1]] <= v:
                    tail -= 1
            else:
                while tail > head and x[dq[tail - 1]] >= v:
                    tail -= 1
            dq[tail] = nxt
            tail += 1
            nxt += 1
        while dq[head] < i - before:
            head += 1
        out[i] = x[dq[head]]
    return out


def compute_envelope(signal, w: int) -> tuple[np.ndarray, np.ndarray]:
    """Upper and lower envelope of ``signal`` over a centered window of ``w`` steps.

    Windows are truncated at the signal edges. Runs in O(n) with a monotonic
    deque per bound.
    """
    x = np.ascontiguousarray(signal, dtype=float)
    if x.ndim != 1 or x.size == 0:
        raise EmptySignal("signal must be a non-empty 1-D sequence")
    w = int(w)
    if w < 1:
        raise ValueError(f"window must be >= 1 step, got {w}")
    before, after = window_offsets(w)
    return _sliding_extreme(x, before, after, True), _sliding_extreme(x, before, after, False)


def decimation_stride(f_M: float, f_e: float) -> int:
    ratio = f_M / f_e
    stride = int(round(ratio))
    if stride < 1 or abs(ratio - stride) > 1e-9 * ratio:
        raise IncompatibleRates(f"f_e = {f_e:g} Hz does not divide f_M = {f_M:g} Hz")
    return stride


def _block_reduce(x: np.ndarray, stride: int, fn) -> np.ndarray:
    n_full = x.size // stride
    parts = [fn(x[: n_full * stride].reshape(n_full, stride), axis=1)]
    if x.size % stride:
        parts.append(np.array([fn(x[n_full * stride:])]))
    return np.concatenate(parts)


def downsample_envelope(upper, lower, omega, o, f_M: float, f_e: float,
                        window_w: int = 0) -> EnvelopedTrajectory:
    """Decimate an envelope from ``f_M`` to ``f_e`` by block max/min.

    Speed and opening keep the value at the start of each block.
    """
    stride = decimation_stride(f_M, f_e)
    upper = np.asarray(upper, dtype=float)
    lower = np.asarray(lower, dtype=float)
    omega = np.asarray(omega, dtype=float)
    o = np.asarray(o, dtype=float)
    if upper.size == 0:
        raise EmptySignal("empty envelope")
    return EnvelopedTrajectory(
        omega=omega[::stride].copy(),
        opening=o[::stride].copy(),
        upper=_block_reduce(upper, stride, np.max),
        lower=_block_reduce(lower, stride, np.min),
        f_e=float(f_e),
        window_w=int(window_w),
    )


def envelope_trajectory(traj: MeasuredTrajectory, window_s: float, f_e: float) -> EnvelopedTrajectory:
    w = int(round(window_s * traj.f_M))
    upper, lower = compute_envelope(traj.strain, w)
    return downsample_envelope(upper, lower, traj.omega, traj.opening, traj.f_M, f_e, w)


def largest_cycle(traj: MeasuredTrajectory | EnvelopedTrajectory) -> float:
    """Amplitude of the largest strain cycle: max minus min over the whole startup."""
    if isinstance(traj, EnvelopedTrajectory):
        if traj.upper.size == 0:
            raise EmptySignal("empty trajectory")
        return float(traj.upper.max() - traj.lower.min())
    if traj.strain.size == 0:
        raise EmptySignal("empty trajectory")
    return float(traj.strain.max() - traj.strain.min())


# --------------------------------------------------------------------------
# file format


def decimate_strain_extremes(strain: np.ndarray, factor: int) -> np.ndarray:
    """Pick one value per block of ``factor`` raw samples, keeping global extrema.

    Each block emits whichever of its max/min lies farther from the signal
    mean; the blocks holding the global max and min are forced to emit them.
    """
    if factor == 1:
        return strain.copy()
    bmax = _block_reduce(strain, factor, np.max)
    bmin = _block_reduce(strain, factor, np.min)
    centre = strain.mean()
    out = np.where(bmax - centre >= centre - bmin, bmax, bmin)
    i_max = int(np.argmax(strain)) // factor
    i_min = int(np.argmin(strain)) // factor
    if i_max != i_min:
        out[i_max] = bmax[i_max]
        out[i_min] = bmin[i_min]
    return out


def read_measurement_csv(path: str | Path, f_M: float = 500.0,
                         params: StartupParams | None = None) -> MeasuredTrajectory:
    """Load a measured startup, resampling from its raw rate down to ``f_M``.

    Raises :class:`ValidationFailure` for wrong columns, non-numeric or
    non-finite values, and non-uniform sampling.
    """
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise ValidationFailure(f"cannot read {path}: {exc}") from None
    if not rows or [c.strip() for c in rows[0]] != list(CSV_COLUMNS):
        raise ValidationFailure(f"{path}: header must be {','.join(CSV_COLUMNS)}")
    body = [r for r in rows[1:] if r]
    if len(body) < 2:
        raise ValidationFailure(f"{path}: need at least two samples")
    if any(len(r) != len(CSV_COLUMNS) for r in body):
        raise ValidationFailure(f"{path}: every row needs {len(CSV_COLUMNS)} columns")
    try:
        data = np.array(body, dtype=float)
    except ValueError:
        raise ValidationFailure(f"{path}: non-numeric value") from None
    if not np.all(np.isfinite(data)):
        raise ValidationFailure(f"{path}: non-finite value")
    t = data[:, 0]
    dt = np.diff(t)
    step = float(np.median(dt))
    if step <= 0 or np.max(np.abs(dt - step)) > 1e-3 * step:
        raise ValidationFailure(f"{path}: sampling is not uniform")
    raw_rate = round(1.0 / step, 6)
    try:
        factor = decimation_stride(raw_rate, f_M)
    except IncompatibleRates as exc:
        raise ValidationFailure(f"{path}: {exc}") from None
    traj = MeasuredTrajectory(
        omega=data[::factor, 1].copy(),
        opening=data[::factor, 2].copy(),
        strain=decimate_strain_extremes(data[:, 3], factor),
        f_M=float(f_M),
        t_st=float(np.ceil(data.shape[0] / factor) - 1) / f_M,
        params=params,
    )
    traj.validate()
    return traj


def write_measurement_csv(traj: MeasuredTrajectory, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for n in range(traj.strain.size):
            writer.writerow([repr(n / traj.f_M), repr(float(traj.omega[n])),
                             repr(float(traj.opening[n])), repr(float(traj.strain[n]))])
