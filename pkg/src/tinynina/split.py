"""Train/val/test split stratified on region x quarter."""
import numpy as np

from .errors import TinyNinaError

SPLIT_NAMES = ("train", "val", "test")
SPLIT_FRACTIONS = (0.70, 0.15, 0.15)
TOLERANCE = 0.05


class SplitError(TinyNinaError, ValueError):
    pass


def _stratum(row):
    return row.region, row.quarter


def _shares(rows):
    n = len(rows)
    urban = sum(r.region == "urban" for r in rows) / n
    quarters = {q: sum(r.quarter == q for r in rows) / n for q in (1, 2, 3, 4)}
    return urban, quarters


def split_dataset(manifest, seed, fractions=SPLIT_FRACTIONS, tol=TOLERANCE):
    """Return ``{"train", "val", "test"}`` sub-manifests.

    Rows are grouped by (region, quarter). Each stratum is shuffled under the
    seed and cut by the split fractions; leftover rows go to whichever split is
    furthest below its running target, so both per-stratum and global counts
    stay within one row of ideal. Membership does not depend on input order.
    """
    rows = sorted(manifest.rows, key=lambda r: r.tile_path)
    if not rows:
        raise SplitError("cannot split an empty manifest")
    if len({r.tile_path for r in rows}) != len(rows):
        raise SplitError("duplicate tile paths in manifest")
    if {r.region for r in rows} != {"urban", "rural"}:
        raise SplitError("manifest must contain both urban and rural rows")

    strata = {}
    for r in rows:
        strata.setdefault(_stratum(r), []).append(r)
    rng = np.random.default_rng(seed)
    frac = np.asarray(fractions, dtype=np.float64)
    ideal_total = np.zeros(len(frac))
    given_total = np.zeros(len(frac))
    parts = [[] for _ in frac]
    for key in sorted(strata):
        members = strata[key]
        members = [members[i] for i in rng.permutation(len(members))]
        ideal = len(members) * frac
        counts = np.floor(ideal).astype(int)
        ideal_total += ideal
        given_total += counts
        for _ in range(len(members) - counts.sum()):
            k = int(np.argmax(ideal_total - given_total))
            counts[k] += 1
            given_total[k] += 1
        start = 0
        for k, n in enumerate(counts):
            parts[k].extend(members[start:start + n])
            start += n

    g_urban, g_quarters = _shares(rows)
    problems = []
    for name, part in zip(SPLIT_NAMES, parts):
        if not part:
            problems.append(f"{name} split is empty")
            continue
        urban, quarters = _shares(part)
        if abs(urban - g_urban) > tol:
            problems.append(f"{name}: urban share {urban:.3f} vs global {g_urban:.3f}")
        for q, share in quarters.items():
            if abs(share - g_quarters[q]) > tol:
                problems.append(f"{name}: Q{q} share {share:.3f} vs global {g_quarters[q]:.3f}")
    if problems:
        sizes = ", ".join(f"{reg}/Q{q}={len(strata[(reg, q)])}" for reg, q in sorted(strata))
        raise SplitError("stratification tolerance not met: " + "; ".join(problems)
                         + f" (stratum sizes: {sizes})")
    order = {r.tile_path: i for i, r in enumerate(manifest.rows)}
    return {name: manifest.subset(sorted(part, key=lambda r: order[r.tile_path]))
            for name, part in zip(SPLIT_NAMES, parts)}
