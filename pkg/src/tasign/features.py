"""Per-sample time functions derived from a raw signature.

Twenty-three channels are computed from the x/y/pressure signals: the raw
coordinates, path-tangent angle, speed, log curvature radius and acceleration
magnitude, first derivatives of all seven, second derivatives of x and y, a
windowed min/max speed ratio, the sample-to-sample direction angle with its
derivative and sine/cosine, and stroke length-to-width ratios over 5- and
7-sample windows.

Derivatives are index-wise (no division by the sampling interval) using a
5-point regression filter; singular cases (zero speed, zero curvature, flat
windows) are made total by small clamps so every channel is always finite.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from .errors import ConfigurationError, DegenerateSignatureError, NumericError
from .ingest import RawSignature


class ChannelId(IntEnum):
    """Fixed channel ordering; indexes rows of TimeFunctionSet.channels."""

    X = 0
    Y = 1
    P = 2
    THETA = 3
    V = 4
    RHO = 5
    A = 6
    dX = 7
    dY = 8
    dP = 9
    dTHETA = 10
    dV = 11
    dRHO = 12
    dA = 13
    ddX = 14
    ddY = 15
    VRATIO5 = 16
    ALPHA = 17
    dALPHA = 18
    SIN = 19
    COS = 20
    RATIO5 = 21
    RATIO7 = 22


N_CHANNELS = len(ChannelId)

# Clamps keeping log-curvature and window ratios finite on degenerate input.
EPS_CURVATURE = 1e-6
EPS_WINDOW = 1e-6

# Standard deviations below this are treated as constant channels.
_STD_FLOOR = 1e-12


@dataclass
class TimeFunctionSet:
    """23 x T channel matrix plus the originating signature's metadata."""

    channels: np.ndarray
    normalized: bool
    source_meta: dict

    @property
    def length(self) -> int:
        return self.channels.shape[1]


def channel_name(index: int) -> str:
    return ChannelId(index).name


def parse_channel_names(names: str) -> tuple[ChannelId, ...]:
    """Translate a comma-separated channel list like ``dX,dY`` to ids."""
    out = []
    for raw in names.split(","):
        key = raw.strip()
        try:
            out.append(ChannelId[key])
        except KeyError:
            valid = ",".join(c.name for c in ChannelId)
            raise ConfigurationError(
                f"unknown channel {key!r}; valid channels: {valid}"
            ) from None
    return tuple(out)


def derivative(series: np.ndarray) -> np.ndarray:
    """5-point regression derivative, index-wise.

    Interior points use ((f[n+1]-f[n-1]) + 2*(f[n+2]-f[n-2])) / 10, which is
    exact for polynomials up to degree 2; the first two and last two points
    copy the nearest interior value.
    """
    f = np.asarray(series, dtype=np.float64)
    if f.size < 5:
        raise DegenerateSignatureError(f"derivative needs T >= 5, got {f.size}")
    d = np.empty_like(f)
    d[2:-2] = ((f[3:-1] - f[1:-3]) + 2.0 * (f[4:] - f[:-4])) / 10.0
    d[0] = d[1] = d[2]
    d[-1] = d[-2] = d[-3]
    return d


def _wrap_angle(delta: np.ndarray) -> np.ndarray:
    """Map angle differences into (-pi, pi]."""
    return np.pi - np.mod(np.pi - delta, 2.0 * np.pi)


def _wrapped_derivative(series: np.ndarray) -> np.ndarray:
    """Like derivative(), but wraps each pairwise difference into (-pi, pi]."""
    f = np.asarray(series, dtype=np.float64)
    if f.size < 5:
        raise DegenerateSignatureError(f"derivative needs T >= 5, got {f.size}")
    d = np.empty_like(f)
    d[2:-2] = (
        _wrap_angle(f[3:-1] - f[1:-3]) + 2.0 * _wrap_angle(f[4:] - f[:-4])
    ) / 10.0
    d[0] = d[1] = d[2]
    d[-1] = d[-2] = d[-3]
    return d


def _speed_ratio(v: np.ndarray, window: int) -> np.ndarray:
    """Min over max speed in a centered window, truncated at the ends."""
    half = window // 2
    n = v.size
    out = np.empty_like(v)
    for i in range(n):
        w = v[max(0, i - half) : min(n, i + half + 1)]
        out[i] = w.min() / max(w.max(), EPS_WINDOW)
    return out


def _stroke_ratio(x: np.ndarray, y: np.ndarray, window: int) -> np.ndarray:
    """Path length over bounding-box width in a centered window."""
    half = window // 2
    n = x.size
    steps = np.hypot(np.diff(x), np.diff(y))
    cum = np.concatenate([[0.0], np.cumsum(steps)])
    out = np.empty(n)
    for i in range(n):
        lo = max(0, i - half)
        hi = min(n - 1, i + half)
        length = cum[hi] - cum[lo]
        width = x[lo : hi + 1].max() - x[lo : hi + 1].min()
        out[i] = length / max(width, EPS_WINDOW)
    return out


def extract_time_functions(sig: RawSignature) -> TimeFunctionSet:
    """Compute all 23 channels from a raw signature (unnormalized)."""
    T = sig.length
    if T < 7:
        raise DegenerateSignatureError(f"feature extraction needs T >= 7, got {T}")
    x = np.array([s.x for s in sig.samples], dtype=np.float64)
    y = np.array([s.y for s in sig.samples], dtype=np.float64)
    p = np.array([s.p for s in sig.samples], dtype=np.float64)

    dx = derivative(x)
    dy = derivative(y)
    theta = np.arctan2(dy, dx)
    v = np.hypot(dx, dy)
    dtheta = _wrapped_derivative(theta)
    rho = np.log(np.maximum(v, EPS_CURVATURE) / np.maximum(np.abs(dtheta), EPS_CURVATURE))
    dv = derivative(v)
    a = np.hypot(dv, v * dtheta)

    diff_angle = np.arctan2(np.diff(y), np.diff(x))
    alpha = np.concatenate([diff_angle, diff_angle[-1:]])

    channels = np.empty((N_CHANNELS, T))
    channels[ChannelId.X] = x
    channels[ChannelId.Y] = y
    channels[ChannelId.P] = p
    channels[ChannelId.THETA] = theta
    channels[ChannelId.V] = v
    channels[ChannelId.RHO] = rho
    channels[ChannelId.A] = a
    channels[ChannelId.dX] = derivative(x)
    channels[ChannelId.dY] = derivative(y)
    channels[ChannelId.dP] = derivative(p)
    channels[ChannelId.dTHETA] = dtheta
    channels[ChannelId.dV] = dv
    channels[ChannelId.dRHO] = derivative(rho)
    channels[ChannelId.dA] = derivative(a)
    channels[ChannelId.ddX] = derivative(dx)
    channels[ChannelId.ddY] = derivative(dy)
    channels[ChannelId.VRATIO5] = _speed_ratio(v, 5)
    channels[ChannelId.ALPHA] = alpha
    channels[ChannelId.dALPHA] = _wrapped_derivative(alpha)
    channels[ChannelId.SIN] = np.sin(alpha)
    channels[ChannelId.COS] = np.cos(alpha)
    channels[ChannelId.RATIO5] = _stroke_ratio(x, y, 5)
    channels[ChannelId.RATIO7] = _stroke_ratio(x, y, 7)

    if not np.isfinite(channels).all():
        bad = [ChannelId(i).name for i in range(N_CHANNELS)
               if not np.isfinite(channels[i]).all()]
        raise NumericError(f"non-finite values in channels {bad}")
    return TimeFunctionSet(channels=channels, normalized=False, source_meta=sig.meta())


def normalize(tf: TimeFunctionSet) -> TimeFunctionSet:
    """Z-normalize each channel (population std); constant channels become zero."""
    if tf.normalized:
        raise ConfigurationError("time functions are already normalized")
    ch = tf.channels
    mean = ch.mean(axis=1, keepdims=True)
    std = ch.std(axis=1, keepdims=True)
    constant = std[:, 0] < _STD_FLOOR
    safe_std = np.where(std < _STD_FLOOR, 1.0, std)
    out = (ch - mean) / safe_std
    out[constant] = 0.0
    return TimeFunctionSet(channels=out, normalized=True,
                           source_meta=dict(tf.source_meta))


def zero_pressure_channels(tf: TimeFunctionSet) -> TimeFunctionSet:
    """Zero the pressure channel and its derivative, leaving the rest intact."""
    out = tf.channels.copy()
    out[ChannelId.P] = 0.0
    out[ChannelId.dP] = 0.0
    return TimeFunctionSet(channels=out, normalized=tf.normalized,
                           source_meta=dict(tf.source_meta))


def channels_tsv(tf: TimeFunctionSet) -> str:
    """Tab-separated dump (one row per sample) with a channel-name header."""
    header = "\t".join(c.name for c in ChannelId)
    rows = ["\t".join(format(v, ".17g") for v in tf.channels[:, t])
            for t in range(tf.length)]
    return header + "\n" + "\n".join(rows) + "\n"
