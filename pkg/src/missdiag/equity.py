"""Modality equity diagnostics from ablation tables.

Given a task-metric score for every nonempty modality subset, each
modality's contribution is summarised by the performance drops observed
whenever it is removed:

    s_m  = drops over the 2^(M-1) - 1 combinations excluding m
    mu_m = mean(s_m),  sigma_m = population std(s_m)
    zeta_m = mu_m / (sigma_m + eps)            (signal-to-noise ratio)
    p_m  = |zeta_m| / (sum_m' |zeta_m'| + eps)

The equity index is the order-2 Renyi entropy of p, H2 = -ln sum p_m^2,
normalised by ln M. Two orientations of the normalised index are
provided; they sum to 1.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import (
    DegenerateContributionError,
    DimensionError,
    FileFormatError,
    IncompleteTableError,
)
from .protocol import MaskPattern, all_patterns, pattern_index

DEFAULT_EPSILON = 1e-8

# Index orientation: with BALANCED_IS_ONE (the default) a perfectly even
# contribution profile scores 1 and single-modality dominance scores ~0;
# DOMINANCE_IS_ONE is the complementary convention (the two always sum
# to 1 before clamping).
BALANCED_IS_ONE = "balanced-is-one"
DOMINANCE_IS_ONE = "dominance-is-one"
MEI_MODES = (BALANCED_IS_ONE, DOMINANCE_IS_ONE)

HIGHER_BETTER = "higher-better"
LOWER_BETTER = "lower-better"

# Error-style metrics are lower-better; everything else we emit is a
# score. Used when reading tables whose files carry no orientation.
DEFAULT_ORIENTATIONS: dict[str, str] = {
    "UA": HIGHER_BETTER,
    "WA": HIGHER_BETTER,
    "F1": HIGHER_BETTER,
    "Acc-2": HIGHER_BETTER,
    "Corr": HIGHER_BETTER,
    "MAE": LOWER_BETTER,
}


@dataclass(frozen=True)
class PerfMetric:
    """A named task metric with an explicit orientation."""

    name: str
    orientation: str = HIGHER_BETTER

    def __post_init__(self) -> None:
        if self.orientation not in (HIGHER_BETTER, LOWER_BETTER):
            raise DimensionError(
                f"orientation must be {HIGHER_BETTER!r} or {LOWER_BETTER!r}, "
                f"got {self.orientation!r}"
            )

    @property
    def higher_is_better(self) -> bool:
        return self.orientation == HIGHER_BETTER

    @classmethod
    def named(cls, name: str, orientations: Mapping[str, str] | None = None) -> "PerfMetric":
        """Metric with orientation looked up by name (default: higher-better)."""
        table = dict(DEFAULT_ORIENTATIONS)
        if orientations:
            table.update(orientations)
        return cls(name, table.get(name, HIGHER_BETTER))


@dataclass(frozen=True)
class AblationTable:
    """Metric scores for the full configuration and every strict nonempty subset.

    `entries` maps each of the 2^M - 2 strict subsets (as MaskPatterns)
    to its score; the all-ones score lives in `perf_full`. Completeness
    is enforced at construction.
    """

    M: int
    metric: PerfMetric
    perf_full: float
    entries: Mapping[MaskPattern, float]

    def __post_init__(self) -> None:
        if self.M < 2:
            raise DimensionError(f"at least 2 modalities are required, got M={self.M}")
        object.__setattr__(self, "perf_full", float(self.perf_full))
        object.__setattr__(
            self, "entries", {p: float(v) for p, v in self.entries.items()}
        )
        full = MaskPattern.full(self.M)
        required = {p for p in all_patterns(self.M) if p != full}
        given = set(self.entries)
        missing = required - given
        if missing:
            names = ", ".join(sorted(p.bitstring() for p in missing))
            raise IncompleteTableError(
                f"ablation table for {self.metric.name!r} is missing combinations: {names}"
            )
        extra = given - required
        if extra:
            names = ", ".join(sorted(p.bitstring() for p in extra))
            raise IncompleteTableError(
                f"ablation table for {self.metric.name!r} has unexpected combinations: {names}"
            )
        for pattern, score in self.entries.items():
            if not math.isfinite(float(score)):
                raise DimensionError(
                    f"score for combination {pattern.bitstring()} must be finite, got {score}"
                )
        if not math.isfinite(self.perf_full):
            raise DimensionError(f"perf_full must be finite, got {self.perf_full}")

    def score(self, pattern: MaskPattern) -> float:
        if pattern == MaskPattern.full(self.M):
            return self.perf_full
        try:
            return float(self.entries[pattern])
        except KeyError:
            raise DimensionError(
                f"no score for combination {pattern.bitstring()} in a "
                f"{self.M}-modality table"
            ) from None


@dataclass(frozen=True)
class ContributionProfile:
    """Per-modality drop statistics and the normalised contribution weights.

    `mu`/`sigma` are None when the profile was built from bare
    signal-to-noise ratios rather than from an ablation table.
    """

    zeta: tuple[float, ...]
    p: tuple[float, ...]
    epsilon: float
    mu: tuple[float, ...] | None = None
    sigma: tuple[float, ...] | None = None

    @property
    def M(self) -> int:
        return len(self.zeta)

    def dominant_modality(self) -> int:
        """Index of the largest contribution weight (ties: lowest index)."""
        return int(np.argmax(self.p))


@dataclass(frozen=True)
class MEIResult:
    """Normalised Renyi-entropy equity index with its intermediates."""

    value: float
    mode: str
    h2: float
    profile: ContributionProfile


def combos_excluding(M: int, m: int) -> tuple[MaskPattern, ...]:
    """All 2^(M-1) - 1 patterns with modality m missing, canonical order.

    Canonical order sorts patterns as binary integers with modality 0
    as the most significant bit.
    """
    if M < 2:
        raise DimensionError(f"at least 2 modalities are required, got M={M}")
    if not 0 <= m < M:
        raise DimensionError(f"modality index {m} out of range for M={M}")
    return tuple(p for p in all_patterns(M) if p.bits[m] == 0)


def perf_drops(table: AblationTable, m: int) -> np.ndarray:
    """Sign-normalised performance drops over the combinations excluding m.

    Positive always means degradation: higher-better metrics use
    perf_full - score, lower-better metrics use score - perf_full.
    Entries follow the canonical combination order.
    """
    combos = combos_excluding(table.M, m)
    drops = np.empty(len(combos))
    for i, pattern in enumerate(combos):
        try:
            score = table.entries[pattern]
        except KeyError:
            raise IncompleteTableError(
                f"ablation table is missing combination {pattern.bitstring()}"
            ) from None
        if table.metric.higher_is_better:
            drops[i] = table.perf_full - score
        else:
            drops[i] = score - table.perf_full
    return drops


def contribution(s_m: Sequence[float] | np.ndarray, epsilon: float = DEFAULT_EPSILON) -> tuple[float, float, float]:
    """(mean, population std, signal-to-noise ratio) of a drop vector."""
    s = np.asarray(s_m, dtype=np.float64)
    if s.ndim != 1 or s.size == 0:
        raise DimensionError("drop vector must be non-empty and one-dimensional")
    if not epsilon > 0:
        raise DimensionError(f"epsilon must be positive, got {epsilon}")
    mu = float(s.mean())
    sigma = float(s.std(ddof=0))
    return mu, sigma, mu / (sigma + epsilon)


def _entropy_index(
    zetas: np.ndarray, epsilon: float, mode: str
) -> tuple[tuple[float, ...], float, float]:
    """Shared core: contribution weights, H2, and the normalised index."""
    M = zetas.size
    if M < 2:
        raise DimensionError(f"at least 2 modalities are required, got {M}")
    if not epsilon > 0:
        raise DimensionError(f"epsilon must be positive, got {epsilon}")
    if mode not in MEI_MODES:
        raise DimensionError(f"mode must be one of {MEI_MODES}, got {mode!r}")
    mags = np.abs(zetas)
    if not mags.any():
        raise DegenerateContributionError(
            "all modality contributions are zero; the contribution "
            "distribution is undefined beyond the epsilon term"
        )
    p = mags / (mags.sum() + epsilon)
    h2 = -math.log(float((p * p).sum()))
    ratio = h2 / math.log(M)
    value = ratio if mode == BALANCED_IS_ONE else 1.0 - ratio
    return tuple(float(x) for x in p), h2, min(1.0, max(0.0, value))


def mei(
    zetas: Sequence[float] | np.ndarray,
    epsilon: float = DEFAULT_EPSILON,
    mode: str = BALANCED_IS_ONE,
) -> MEIResult:
    """Equity index from per-modality signal-to-noise ratios.

    p_m = |zeta_m| / (sum |zeta| + epsilon); H2 = -ln sum p_m^2. The
    default mode returns H2 / ln M (1 = perfectly balanced); the
    complementary mode returns (ln M - H2) / ln M (1 = one modality
    dominates). The result is clamped to [0, 1].
    """
    z = np.asarray(zetas, dtype=np.float64)
    if z.ndim != 1:
        raise DimensionError("zeta vector must be one-dimensional")
    p, h2, value = _entropy_index(z, epsilon, mode)
    profile = ContributionProfile(zeta=tuple(float(x) for x in z), p=p, epsilon=epsilon)
    return MEIResult(value=value, mode=mode, h2=h2, profile=profile)


def mei_from_table(
    table: AblationTable,
    epsilon: float = DEFAULT_EPSILON,
    mode: str = BALANCED_IS_ONE,
) -> MEIResult:
    """Full pipeline: drops -> contribution statistics -> equity index."""
    mus, sigmas, zetas = [], [], []
    for m in range(table.M):
        mu, sigma, zeta = contribution(perf_drops(table, m), epsilon)
        mus.append(mu)
        sigmas.append(sigma)
        zetas.append(zeta)
    p, h2, value = _entropy_index(np.asarray(zetas), epsilon, mode)
    profile = ContributionProfile(
        zeta=tuple(zetas), p=p, epsilon=epsilon, mu=tuple(mus), sigma=tuple(sigmas)
    )
    return MEIResult(value=value, mode=mode, h2=h2, profile=profile)


# ---------------------------------------------------------------------------
# abltable-v1 file format


def _table_rows(table: AblationTable) -> list[str]:
    rows = []
    full = MaskPattern.full(table.M)
    for pattern in all_patterns(table.M):
        score = table.perf_full if pattern == full else table.entries[pattern]
        rows.append(f"{pattern.bitstring()},{table.metric.name},{score!r}")
    return rows


def write_ablation_tables(tables: Sequence[AblationTable], path: str | Path) -> None:
    """Write one or more `abltable-v1` tables (all with the same M) to a CSV.

    Rows are grouped by metric in the given order; within a metric,
    combinations appear in canonical order with the all-ones row last.
    Scores are written in full `repr` precision so they round-trip.
    """
    from .report import atomic_write_text

    if not tables:
        raise DimensionError("at least one ablation table is required")
    if len({t.M for t in tables}) != 1:
        raise DimensionError("all tables in one file must share the modality count")
    if len({t.metric.name for t in tables}) != len(tables):
        raise DimensionError("tables in one file must have distinct metric names")
    lines = ["combination,metric,value"]
    for table in tables:
        lines.extend(_table_rows(table))
    atomic_write_text(Path(path), "\n".join(lines) + "\n")


def write_ablation_table(table: AblationTable, path: str | Path) -> None:
    write_ablation_tables([table], path)


def read_ablation_tables(
    path: str | Path, orientations: Mapping[str, str] | None = None
) -> dict[str, AblationTable]:
    """Read an `abltable-v1` CSV into one AblationTable per metric.

    Metric orientations are looked up by name (MAE is lower-better by
    default, unknown names higher-better) unless overridden.
    """
    path = Path(path)
    with path.open("r", encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise FileFormatError(f"{path}: empty file") from None
        if header != ["combination", "metric", "value"]:
            raise FileFormatError(f"{path}: expected header 'combination,metric,value'")
        M: int | None = None
        scores: dict[str, dict[MaskPattern, float]] = {}
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise FileFormatError(f"{path}:{lineno}: expected 3 fields, got {len(row)}")
            combo, metric_name, value_text = row
            if not combo or any(c not in "01" for c in combo):
                raise FileFormatError(f"{path}:{lineno}: bad combination {combo!r}")
            if M is None:
                M = len(combo)
            elif len(combo) != M:
                raise FileFormatError(
                    f"{path}:{lineno}: combination length {len(combo)} != {M}"
                )
            if "1" not in combo:
                raise FileFormatError(f"{path}:{lineno}: all-missing combination")
            try:
                value = float(value_text)
            except ValueError:
                raise FileFormatError(f"{path}:{lineno}: bad value {value_text!r}") from None
            if not math.isfinite(value):
                raise FileFormatError(f"{path}:{lineno}: non-finite value {value_text!r}")
            pattern = MaskPattern.from_bitstring(combo)
            per_metric = scores.setdefault(metric_name, {})
            if pattern in per_metric:
                raise FileFormatError(
                    f"{path}:{lineno}: duplicate combination {combo} for {metric_name!r}"
                )
            per_metric[pattern] = value
    if M is None or not scores:
        raise FileFormatError(f"{path}: no table rows")
    tables = {}
    full = MaskPattern.full(M)
    for metric_name, per_metric in scores.items():
        if full not in per_metric:
            raise IncompleteTableError(
                f"{path}: table for {metric_name!r} is missing the all-ones "
                f"combination {full.bitstring()}"
            )
        perf_full = per_metric.pop(full)
        tables[metric_name] = AblationTable(
            M=M,
            metric=PerfMetric.named(metric_name, orientations),
            perf_full=perf_full,
            entries=per_metric,
        )
    return tables


def sorted_tables(tables: Mapping[str, AblationTable]) -> list[AblationTable]:
    """Tables in deterministic (metric-name) order, e.g. for re-serialisation."""
    return [tables[name] for name in sorted(tables)]
