"""Observation boundary blending.

Hallucinates a smooth depth ramp where the measured depth area or the
supported-surfel area ends, so integrating biased measurements does not
leave step discontinuities. Works on the depth image D and the average
supported-surfel depth image SD from data association; D is modified in
place on a copy.

Seeds are pixels having both a measurement and supported surfels that
touch (8-neighborhood) a pixel missing one of the two. The delta
SD - D then spreads outward for i_count - 1 iterations, attenuated by
(1 - i / i_count) per ring, separately through the with-surfel region
(d-case) and the without-surfel region (s-case). Each iteration reads
only the previous iteration's stamps, so the result is order independent.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# 8-neighborhood in row-major order; fixed so floating-point sums are
# reproducible against a straightforward loop implementation
NEIGHBORS_8 = [
    (-1, -1), (-1, 0), (-1, 1),
    (0, -1), (0, 1),
    (1, -1), (1, 0), (1, 1),
]


@dataclass
class BlendBuffers:
    I_d: np.ndarray
    I_s: np.ndarray
    delta_d: np.ndarray
    delta_s: np.ndarray
    i_count: int = 10


def _shift(a, dy, dx, fill):
    out = np.full_like(a, fill)
    h, w = a.shape
    ys0, ys1 = max(0, -dy), min(h, h - dy)
    xs0, xs1 = max(0, -dx), min(w, w - dx)
    out[ys0:ys1, xs0:xs1] = a[ys0 + dy : ys1 + dy, xs0 + dx : xs1 + dx]
    return out


def blend_boundaries(D, SD, i_count=10, return_buffers=False):
    """Returns the blended depth image (D is not modified)."""
    D = D.astype(np.float64, copy=True)
    SD = np.asarray(SD, dtype=np.float64)
    h, w = D.shape
    I_d = np.full((h, w), -1, dtype=np.int64)
    I_s = np.full((h, w), -1, dtype=np.int64)
    delta_d = np.zeros((h, w))
    delta_s = np.zeros((h, w))

    both = (D != 0) & (SD != 0)
    d0 = SD - D  # deltas at potential seeds, from the original D
    nb_no_depth = np.zeros((h, w), dtype=bool)
    nb_no_surfel = np.zeros((h, w), dtype=bool)
    for dy, dx in NEIGHBORS_8:
        nb_no_depth |= _shift(D, dy, dx, 1.0) == 0
        nb_no_surfel |= _shift(SD, dy, dx, 1.0) == 0
    seed_d = both & nb_no_depth
    seed_s = both & nb_no_surfel
    delta_d[seed_d] = d0[seed_d]
    I_d[seed_d] = 0
    D[seed_d] = SD[seed_d]
    delta_s[seed_s] = d0[seed_s]
    I_s[seed_s] = 0

    has_depth = D != 0  # zero pattern is fixed from here on
    has_surfel = SD != 0
    for i in range(1, i_count):
        for region, I, delta in (
            (has_surfel, I_d, delta_d),
            (~has_surfel, I_s, delta_s),
        ):
            ssum = np.zeros((h, w))
            cnt = np.zeros((h, w), dtype=np.int64)
            for dy, dx in NEIGHBORS_8:
                hit = _shift(I, dy, dx, -2) == i - 1
                ssum += np.where(hit, _shift(delta, dy, dx, 0.0), 0.0)
                cnt += hit
            upd = has_depth & region & (I == -1) & (cnt > 0)
            mean = np.zeros((h, w))
            mean[upd] = ssum[upd] / cnt[upd]
            I[upd] = i
            delta[upd] = mean[upd]
            D[upd] += (1.0 - i / i_count) * mean[upd]

    if return_buffers:
        return D, BlendBuffers(I_d, I_s, delta_d, delta_s, i_count)
    return D
