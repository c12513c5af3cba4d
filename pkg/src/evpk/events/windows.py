from __future__ import annotations

import numpy as np

from .model import EventWindow


def slice_windows(stream, delta_us, t0=None, n_windows=None):
    """Cut ``stream`` into half-open windows ``[t0 + k*delta, t0 + (k+1)*delta)``.

    ``t0`` defaults to the first timestamp (0 for an empty stream). The
    trailing partial window is kept; ``n_windows`` forces a fixed count,
    padding with empty windows (events beyond the last window are an error).
    """
    delta_us = int(delta_us)
    if delta_us <= 0:
        raise ValueError(f"window length must be positive, got {delta_us} us")
    t = stream.t
    if t0 is None:
        t0 = int(t[0]) if len(t) else 0
    if len(t) and t[0] < t0:
        raise ValueError(f"stream starts at {t[0]} us, before t0={t0} us")
    if n_windows is None:
        n_windows = int((t[-1] - t0) // delta_us) + 1 if len(t) else 0
    elif len(t) and t[-1] >= t0 + n_windows * delta_us:
        raise ValueError(f"events extend past {n_windows} windows of {delta_us} us")
    edges = t0 + delta_us * np.arange(n_windows + 1, dtype=np.int64)
    cuts = np.searchsorted(t, edges, side="left")
    return [
        EventWindow(stream[cuts[k]:cuts[k + 1]], int(edges[k]), int(edges[k + 1]))
        for k in range(n_windows)
    ]
