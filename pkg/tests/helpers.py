"""Shared test oracles."""

import numpy as np


def oracle_origins(n, stats, k, horizon, periodicity, depth, stride):
    """Independent origin scan: returns (valid origins, skipped count).

    Mirrors the window contract literally: full history slice, all trend
    lags, target inside the series, and defined statistics over both the
    history and the horizon.
    """
    first = max(periodicity * depth, k) - 1
    valid, skipped = [], 0
    for t in range(first, n - horizon, stride):
        ok = all(stats.profile_defined[j] for j in range(t - k + 1, t + 1))
        for j in range(t + 1, t + 1 + horizon):
            ok = ok and stats.profile_defined[j] and stats.spread_defined[j]
        if ok:
            valid.append(t)
        else:
            skipped += 1
    return valid, skipped


def sha256_tree(root):
    """Stable digest of every file under a directory."""
    import hashlib
    from pathlib import Path

    digest = hashlib.sha256()
    for path in sorted(Path(root).rglob("*")):
        if path.is_file():
            digest.update(str(path.relative_to(root)).encode())
            digest.update(path.read_bytes())
    return digest.hexdigest()
