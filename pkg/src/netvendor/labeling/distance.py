"""Windowed edit distance between banners.

Banner texts are near-identical up to model numbers and trailing junk, so
the distance between two banners is the minimum Levenshtein distance
between the shorter banner and every equal-length window of the longer
one.  The DP runs vectorized across all windows at once: each row's
insertion chain ``cur[j] = min(cand[j], cur[j-1] + 1)`` collapses to a
prefix minimum of ``cand[j] - j``, so a pair costs len(a) numpy passes
instead of len(a)^2 scalar loops.
"""

from __future__ import annotations

import numpy as np

from ..errors import ConfigError


def _codes(s: str) -> np.ndarray:
    return np.frombuffer(s.encode("utf-32-le"), dtype=np.uint32)


def substring_min_levenshtein(a: str, b: str) -> int:
    """min over all len(a)-length windows w of b of Levenshtein(a, w).

    The shorter string plays the role of a; an empty shorter string costs 0.
    """
    if len(a) > len(b):
        a, b = b, a
    length = len(a)
    if length == 0:
        return 0
    if a in b:
        return 0
    acodes = _codes(a)
    bcodes = _codes(b)
    windows = np.lib.stride_tricks.sliding_window_view(bcodes, length)  # (W, L)
    n_windows = windows.shape[0]
    idx = np.arange(length + 1, dtype=np.int32)
    prev = np.broadcast_to(idx, (n_windows, length + 1)).copy()
    cand = np.empty_like(prev)
    for i in range(1, length + 1):
        cand[:, 0] = i
        np.minimum(prev[:, 1:] + 1, prev[:, :-1] + (windows != acodes[i - 1]), out=cand[:, 1:])
        cand -= idx
        np.minimum.accumulate(cand, axis=1, out=cand)
        cand += idx
        prev, cand = cand, prev
    return int(prev[:, length].min())


def pairwise_distance_matrix(banners: list[str]) -> np.ndarray:
    """Symmetric MxM matrix of windowed edit distances (M <= 1000).

    Duplicate texts share one computation.
    """
    m = len(banners)
    if m > 1000:
        raise ConfigError(f"sample of {m} banners exceeds the 1000 cap")
    groups: dict[str, list[int]] = {}
    for i, text in enumerate(banners):
        groups.setdefault(text, []).append(i)
    texts = list(groups)
    index_lists = [np.array(groups[t]) for t in texts]
    out = np.zeros((m, m), dtype=np.int32)
    for p in range(len(texts)):
        for q in range(p + 1, len(texts)):
            d = substring_min_levenshtein(texts[p], texts[q])
            if d:
                out[np.ix_(index_lists[p], index_lists[q])] = d
                out[np.ix_(index_lists[q], index_lists[p])] = d
    return out
