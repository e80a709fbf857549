"""Frequent-substring mining inside a banner cluster.

For every pair of banners we take the longest common substrings (all of
them, when several tie) of at least ``min_len`` characters, then tally
identical sequences across pairs.  The default minimum of 8 characters
suppresses fragments like "login:" that would otherwise dominate.
"""

from __future__ import annotations

from collections import Counter

import numpy as np


def _longest_common_substrings(s: str, t: str, min_len: int) -> set[str]:
    """All longest common substrings of s and t, if they reach min_len."""
    if not s or not t:
        return set()
    scodes = np.frombuffer(s.encode("utf-32-le"), dtype=np.uint32)
    tcodes = np.frombuffer(t.encode("utf-32-le"), dtype=np.uint32)
    prev = np.zeros(len(t) + 1, dtype=np.int32)
    cur = np.zeros(len(t) + 1, dtype=np.int32)
    best = 0
    ends: set[int] = set()
    for i in range(1, len(s) + 1):
        cur[1:] = np.where(tcodes == scodes[i - 1], prev[:-1] + 1, 0)
        row_best = int(cur.max())
        if row_best > best:
            best = row_best
            ends = {i}
        elif row_best == best and best > 0:
            ends.add(i)
        prev, cur = cur, prev
    if best < min_len:
        return set()
    return {s[e - best : e] for e in ends}


def mine_frequent_substrings(banners: list[str], min_len: int = 8) -> list[tuple[str, int]]:
    """Ranked (substring, pair-frequency), frequency desc, then length desc,
    then lexicographic."""
    counts: Counter[str] = Counter()
    for i in range(len(banners)):
        for j in range(i + 1, len(banners)):
            for sub in _longest_common_substrings(banners[i], banners[j], min_len):
                counts[sub] += 1
    return sorted(counts.items(), key=lambda kv: (-kv[1], -len(kv[0]), kv[0]))
