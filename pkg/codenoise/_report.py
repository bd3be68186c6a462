import logging
import os
import pathlib
from collections.abc import Sequence
from typing import Optional, Union

import equinox as eqx
import numpy as np
from scipy.stats import binomtest

from ._metrics import MetricsRow, read_metrics_csv


logger = logging.getLogger(__name__)

PathLike = Union[str, os.PathLike]

_METRICS = ("frame_consistency", "align_mean", "align_var_x100")


class MethodSummary(eqx.Module):
    """Per-method means over all rows of that method."""

    method: str = eqx.field(static=True)
    count: int = eqx.field(static=True)
    means: dict[str, float] = eqx.field(static=True)


class PairedComparison(eqx.Module):
    """`other - reference` differences, paired by seed.

    **Attributes:**

    - `reference`, `other`: the method names.
    - `seeds`: the seeds present for both methods, sorted.
    - `differences`: for each metric, the per-seed differences in `seeds` order.
    - `wins`: for each metric, the number of seeds where `other` is strictly larger.
    - `losses`: for each metric, the number of seeds where `other` is strictly smaller.
    - `p_values`: for each metric, the two-sided sign-test p-value. Ties are dropped;
        if every pair ties the p-value is `1`.
    """

    reference: str = eqx.field(static=True)
    other: str = eqx.field(static=True)
    seeds: tuple[int, ...] = eqx.field(static=True)
    differences: dict[str, tuple[float, ...]] = eqx.field(static=True)
    wins: dict[str, int] = eqx.field(static=True)
    losses: dict[str, int] = eqx.field(static=True)
    p_values: dict[str, float] = eqx.field(static=True)

    def mean_difference(self, metric: str) -> float:
        diffs = self.differences[metric]
        return float(np.mean(diffs)) if diffs else 0.0


def sign_test(wins: int, losses: int) -> float:
    n = wins + losses
    if n == 0:
        return 1.0
    return float(binomtest(wins, n, 0.5, alternative="two-sided").pvalue)


def summarise(rows: Sequence[MetricsRow]) -> dict[str, MethodSummary]:
    if len(rows) == 0:
        raise ValueError("No metrics rows to summarise.")
    out = {}
    for method in sorted({row.method for row in rows}):
        mine = [row for row in rows if row.method == method]
        means = {
            metric: float(np.mean([getattr(row, metric) for row in mine]))
            for metric in _METRICS
        }
        out[method] = MethodSummary(method=method, count=len(mine), means=means)
    return out


def compare(
    rows: Sequence[MetricsRow], reference: str, other: str
) -> PairedComparison:
    """Pairs the rows of two methods by seed. If a method has several rows with the
    same seed, the last one wins."""
    by_seed = {
        method: {row.seed: row for row in rows if row.method == method}
        for method in (reference, other)
    }
    seeds = tuple(sorted(by_seed[reference].keys() & by_seed[other].keys()))
    differences = {}
    wins = {}
    losses = {}
    p_values = {}
    for metric in _METRICS:
        diffs = tuple(
            getattr(by_seed[other][s], metric) - getattr(by_seed[reference][s], metric)
            for s in seeds
        )
        differences[metric] = diffs
        wins[metric] = sum(d > 0 for d in diffs)
        losses[metric] = sum(d < 0 for d in diffs)
        p_values[metric] = sign_test(wins[metric], losses[metric])
    return PairedComparison(
        reference=reference,
        other=other,
        seeds=seeds,
        differences=differences,
        wins=wins,
        losses=losses,
        p_values=p_values,
    )


def _reference_method(methods: Sequence[str]) -> str:
    return "co_denoise" if "co_denoise" in methods else methods[0]


def _write_columns(path: pathlib.Path, header: str, columns: Sequence[Sequence]):
    with open(path, "w") as f:
        f.write(f"# {header}\n")
        for values in zip(*columns):
            f.write(" ".join(repr(v) for v in values) + "\n")


def report(
    csv_paths: Sequence[PathLike], out_dir: Optional[PathLike] = None
) -> str:
    """Summarises metrics CSVs.

    Reports the per-method means, and for every method the paired differences against
    a reference method (`co_denoise` if present, otherwise the alphabetically first)
    with sign-test p-values.

    **Arguments:**

    - `csv_paths`: CSV files written by [`codenoise.write_metrics_csv`][].
    - `out_dir`: if given, plot data is written here as whitespace-separated column
        files: `<method>.dat` (`seed` then one column per metric) and
        `<other>_minus_<reference>.dat` (`seed` then one difference per metric).

    **Returns:**

    The summary text.
    """
    if len(csv_paths) == 0:
        raise ValueError("No CSV files given.")
    rows = [row for path in csv_paths for row in read_metrics_csv(path)]
    summaries = summarise(rows)
    methods = list(summaries)
    reference = _reference_method(methods)

    lines = ["method count " + " ".join(_METRICS)]
    for summary in summaries.values():
        means = " ".join(f"{summary.means[m]:.6g}" for m in _METRICS)
        lines.append(f"{summary.method} {summary.count} {means}")
    comparisons = [compare(rows, reference, m) for m in methods if m != reference]
    for comparison in comparisons:
        lines.append("")
        num_pairs = len(comparison.seeds)
        lines.append(f"{comparison.other} - {reference} over {num_pairs} paired seeds:")
        for metric in _METRICS:
            lines.append(
                f"  {metric}: mean difference "
                f"{comparison.mean_difference(metric):.6g}, "
                f"{comparison.wins[metric]} higher / "
                f"{comparison.losses[metric]} lower, "
                f"sign test p = {comparison.p_values[metric]:.3g}"
            )
    text = "\n".join(lines) + "\n"

    if out_dir is not None:
        out_dir = pathlib.Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        for method in methods:
            mine = sorted(
                (row for row in rows if row.method == method), key=lambda r: r.seed
            )
            _write_columns(
                out_dir / f"{method}.dat",
                "seed " + " ".join(_METRICS),
                [[r.seed for r in mine]]
                + [[getattr(r, m) for r in mine] for m in _METRICS],
            )
        for comparison in comparisons:
            _write_columns(
                out_dir / f"{comparison.other}_minus_{reference}.dat",
                "seed " + " ".join(_METRICS),
                [list(comparison.seeds)]
                + [list(comparison.differences[m]) for m in _METRICS],
            )
        with open(out_dir / "report.txt", "w") as f:
            f.write(text)
        logger.info("Wrote report and plot data to %s.", out_dir)
    return text
