"""DMS benchmark harness.

Joins model scores against deep mutational scanning measurements and
reports Spearman rank correlation, ROC AUC and Matthews correlation per
assay, aggregated first at the protein (Uniprot id) level and then
across proteins, with optional bucketed breakdowns.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.stats import rankdata

from . import seq
from .errors import InputError


@dataclass
class AssayTable:
    """Preprocessed assay: unique mutant codes, no missing scores, higher
    DMS score means fitter by construction."""

    assay_id: str
    uniprot_id: str
    rows: list  # of (mutant_code, dms_score)
    cutoff: Optional[float] = None
    cutoff_method: str = "median"  # "median" | "manual"
    msa_depth_bucket: str = ""
    mutation_depth_bucket: str = ""
    taxon: str = ""


@dataclass
class PreprocessStats:
    n_input: int = 0
    n_silent: int = 0
    n_duplicates_collapsed: int = 0
    n_missing: int = 0
    n_unparseable: int = 0
    unparseable: list = field(default_factory=list)  # (code, message)


def preprocess_assay(
    raw_rows: list,
    wild_type: Optional[seq.ProteinSequence],
    assay_id: str = "",
    uniprot_id: str = "",
    **metadata,
) -> tuple[AssayTable, PreprocessStats]:
    """Clean raw (mutant_code, score) rows.

    Silent edits (materialized mutant equals the wild type) are removed,
    duplicate mutants are collapsed by averaging, rows with a missing
    measurement are dropped and unparseable codes are collected without
    aborting. Without a wild type only syntactically silent codes
    (substitutions whose source and target residues agree) can be caught.
    """
    stats = PreprocessStats(n_input=len(raw_rows))
    by_code: dict[str, list[float]] = {}
    order: list[str] = []
    for code, score in raw_rows:
        code = code.strip()
        if score is None or (isinstance(score, float) and math.isnan(score)):
            stats.n_missing += 1
            continue
        silent = False
        if wild_type is not None:
            try:
                mset = seq.parse_mutation(code, wild_type)
            except InputError as e:
                stats.n_unparseable += 1
                stats.unparseable.append((code, str(e)))
                continue
            silent = mset.is_silent
        else:
            parts = code.split(":")
            silent = bool(parts) and all(
                len(p) >= 3 and p[0].isalpha() and p[-1].isalpha() and p[0] == p[-1]
                and p[1:-1].isdigit()
                for p in parts
            )
        if silent:
            stats.n_silent += 1
            continue
        if code not in by_code:
            order.append(code)
        by_code.setdefault(code, []).append(float(score))

    rows = []
    for code in order:
        scores = by_code[code]
        if len(scores) > 1:
            stats.n_duplicates_collapsed += len(scores) - 1
        rows.append((code, sum(scores) / len(scores)))
    table = AssayTable(assay_id=assay_id, uniprot_id=uniprot_id, rows=rows, **metadata)
    return table, stats


# -- metrics -------------------------------------------------------------------


def spearman(x: list, y: list) -> Optional[float]:
    """Signed Spearman rank correlation (average ranks for ties).

    Returns None when either vector has zero rank variance.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1 or len(x) < 2:
        raise InputError("spearman needs two equal-length vectors of >= 2 values")
    rx = rankdata(x, method="average")
    ry = rankdata(y, method="average")
    sx = rx - rx.mean()
    sy = ry - ry.mean()
    vx = float((sx * sx).sum())
    vy = float((sy * sy).sum())
    if vx == 0.0 or vy == 0.0:
        return None
    return float((sx * sy).sum() / math.sqrt(vx * vy))


def auc(scores: list, labels: list) -> Optional[float]:
    """Mann-Whitney area under the ROC curve; score ties contribute 1/2.

    Returns None unless both classes are present.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise InputError("auc needs equal-length score and label vectors")
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        return None
    ranks = rankdata(scores, method="average")
    u = float(ranks[labels].sum()) - n_pos * (n_pos + 1) / 2.0
    return u / (n_pos * n_neg)


def mcc(
    scores: list, labels: list, pred_threshold: Optional[float] = None
) -> tuple[Optional[float], bool]:
    """Matthews correlation of thresholded predictions against labels.

    Predictions are binarized at the median score unless a threshold is
    given; scores at the threshold fall on the high side. Returns
    (value, degenerate): None unless both label classes are present, and
    (0.0, True) when the confusion-table denominator vanishes.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise InputError("mcc needs equal-length score and label vectors")
    if labels.all() or not labels.any():
        return None, True
    if pred_threshold is None:
        pred_threshold = float(np.median(scores))
    preds = scores >= pred_threshold
    tp = int((preds & labels).sum())
    tn = int((~preds & ~labels).sum())
    fp = int((preds & ~labels).sum())
    fn = int((~preds & labels).sum())
    denom = math.sqrt(float(tp + fp) * (tp + fn) * (tn + fp) * (tn + fn))
    if denom == 0.0:
        return 0.0, True
    return (tp * tn - fp * fn) / denom, False


def binarize_labels(table: AssayTable) -> tuple[np.ndarray, float]:
    """Binary fitness labels via score > cutoff.

    A manual cutoff is always the recorded one; for the median method the
    recorded value is used when present and recomputed otherwise.
    """
    scores = np.asarray([s for _, s in table.rows], dtype=np.float64)
    if table.cutoff_method == "manual":
        if table.cutoff is None:
            raise InputError(
                f"assay {table.assay_id}: manual binarization without a cutoff value"
            )
        cutoff = float(table.cutoff)
    elif table.cutoff is not None:
        cutoff = float(table.cutoff)
    else:
        warnings.warn(
            f"assay {table.assay_id}: no recorded cutoff, using the median of "
            "the joined measurements",
            stacklevel=2,
        )
        cutoff = float(np.median(scores))
    return scores > cutoff, cutoff


@dataclass
class AssayMetrics:
    assay_id: str
    uniprot_id: str
    n: int
    spearman: Optional[float]
    auc: Optional[float]
    mcc: Optional[float]
    mcc_degenerate: bool = False
    msa_depth_bucket: str = ""
    mutation_depth_bucket: str = ""
    taxon: str = ""


def evaluate_assay(table: AssayTable, model_scores: dict[str, float]) -> AssayMetrics:
    """Metrics for one assay; only mutants present in both tables count."""
    overlap = [(c, s) for c, s in table.rows if c in model_scores]
    if len(overlap) < 2:
        raise InputError(
            f"assay {table.assay_id}: fewer than 2 mutants overlap the score file"
        )
    preds = [model_scores[c] for c, _ in overlap]
    meas = [s for _, s in overlap]
    joined = AssayTable(
        assay_id=table.assay_id,
        uniprot_id=table.uniprot_id,
        rows=overlap,
        cutoff=table.cutoff,
        cutoff_method=table.cutoff_method,
    )
    labels, _ = binarize_labels(joined)
    mcc_val, degenerate = mcc(preds, labels.tolist())
    return AssayMetrics(
        assay_id=table.assay_id,
        uniprot_id=table.uniprot_id,
        n=len(overlap),
        spearman=spearman(preds, meas),
        auc=auc(preds, labels.tolist()),
        mcc=mcc_val,
        mcc_degenerate=degenerate,
        msa_depth_bucket=table.msa_depth_bucket,
        mutation_depth_bucket=table.mutation_depth_bucket,
        taxon=table.taxon,
    )


METRIC_NAMES = ("spearman", "auc", "mcc")


def _mean_present(values: list) -> tuple[Optional[float], int]:
    present = [v for v in values if v is not None]
    if not present:
        return None, 0
    return sum(present) / len(present), len(present)


@dataclass
class AggregateRow:
    scope: str  # "overall" or "<bucket_kind>:<bucket>"
    n_uniprots: int
    n_assays: int
    spearman: Optional[float]
    auc: Optional[float]
    mcc: Optional[float]
    n_absent: int = 0  # metric values missing from the aggregation


def _aggregate_group(metrics: list[AssayMetrics], scope: str) -> AggregateRow:
    by_uniprot: dict[str, list[AssayMetrics]] = {}
    for m in metrics:
        by_uniprot.setdefault(m.uniprot_id, []).append(m)
    out: dict[str, Optional[float]] = {}
    absent = 0
    for name in METRIC_NAMES:
        per_uniprot = []
        for group in by_uniprot.values():
            mean, n_present = _mean_present([getattr(m, name) for m in group])
            absent += len(group) - n_present
            if mean is not None:
                per_uniprot.append(mean)
        out[name] = sum(per_uniprot) / len(per_uniprot) if per_uniprot else None
    return AggregateRow(
        scope=scope,
        n_uniprots=len(by_uniprot),
        n_assays=len(metrics),
        spearman=out["spearman"],
        auc=out["auc"],
        mcc=out["mcc"],
        n_absent=absent,
    )


def aggregate(metrics: list[AssayMetrics]) -> list[AggregateRow]:
    """Uniprot-level means first, then the mean across proteins; repeated
    within each bucket kind. Absent metric values are excluded from the
    means and counted."""
    for m in metrics:
        if not m.uniprot_id:
            raise InputError(f"assay {m.assay_id} has no uniprot id mapping")
    rows = [_aggregate_group(metrics, "overall")]
    for kind, attr in (
        ("msa_depth", "msa_depth_bucket"),
        ("mutation_depth", "mutation_depth_bucket"),
        ("taxon", "taxon"),
    ):
        buckets: dict[str, list[AssayMetrics]] = {}
        for m in metrics:
            value = getattr(m, attr)
            if value:
                buckets.setdefault(value, []).append(m)
        for value in sorted(buckets):
            rows.append(_aggregate_group(buckets[value], f"{kind}:{value}"))
    return rows


# -- files ----------------------------------------------------------------------


def read_assay_csv(path) -> list:
    """Rows of (mutant_code, score-or-None) from a ``mutant,DMS_score`` CSV."""
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or "mutant" not in reader.fieldnames or "DMS_score" not in reader.fieldnames:
            raise InputError(f"{path}: assay file needs 'mutant' and 'DMS_score' columns")
        for i, row in enumerate(reader, start=2):
            raw = (row["DMS_score"] or "").strip()
            if raw == "" or raw.lower() in ("na", "nan"):
                rows.append((row["mutant"], None))
                continue
            try:
                rows.append((row["mutant"], float(raw)))
            except ValueError:
                raise InputError(f"{path}:{i}: DMS_score {raw!r} is not a number") from None
    return rows


@dataclass
class AssayReference:
    assay_id: str
    uniprot_id: str
    cutoff: Optional[float]
    cutoff_method: str
    msa_depth_bucket: str
    mutation_depth_bucket: str
    taxon: str
    wild_type: Optional[str] = None


def read_reference_csv(path) -> dict[str, AssayReference]:
    required = [
        "assay_id",
        "uniprot_id",
        "cutoff",
        "cutoff_method",
        "msa_depth_bucket",
        "mutation_depth_bucket",
        "taxon",
    ]
    out: dict[str, AssayReference] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in required if reader.fieldnames is None or c not in reader.fieldnames]
        if missing:
            raise InputError(f"{path}: reference file is missing columns {missing}")
        for i, row in enumerate(reader, start=2):
            method = (row["cutoff_method"] or "median").strip()
            if method not in ("median", "manual"):
                raise InputError(
                    f"{path}:{i}: cutoff_method must be 'median' or 'manual', got {method!r}"
                )
            cutoff_raw = (row["cutoff"] or "").strip()
            ref = AssayReference(
                assay_id=row["assay_id"],
                uniprot_id=row["uniprot_id"],
                cutoff=float(cutoff_raw) if cutoff_raw else None,
                cutoff_method=method,
                msa_depth_bucket=(row["msa_depth_bucket"] or "").strip(),
                mutation_depth_bucket=(row["mutation_depth_bucket"] or "").strip(),
                taxon=(row["taxon"] or "").strip(),
                wild_type=(row.get("wild_type") or "").strip() or None,
            )
            if ref.assay_id in out:
                raise InputError(f"{path}:{i}: duplicate assay id {ref.assay_id!r}")
            out[ref.assay_id] = ref
    return out


def _fmt(v: Optional[float]) -> str:
    return "" if v is None else f"{v:.10g}"


def write_per_assay_csv(metrics: list[AssayMetrics], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["assay_id", "uniprot_id", "n", "spearman", "auc", "mcc", "taxon",
                    "msa_depth_bucket", "mutation_depth_bucket"])
        for m in metrics:
            w.writerow([m.assay_id, m.uniprot_id, m.n, _fmt(m.spearman), _fmt(m.auc),
                        _fmt(m.mcc), m.taxon, m.msa_depth_bucket, m.mutation_depth_bucket])


def write_per_uniprot_csv(metrics: list[AssayMetrics], path) -> None:
    by_uniprot: dict[str, list[AssayMetrics]] = {}
    for m in metrics:
        by_uniprot.setdefault(m.uniprot_id, []).append(m)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["uniprot_id", "n_assays", "spearman", "auc", "mcc"])
        for uid in sorted(by_uniprot):
            group = by_uniprot[uid]
            means = [_mean_present([getattr(m, name) for m in group])[0] for name in METRIC_NAMES]
            w.writerow([uid, len(group)] + [_fmt(v) for v in means])


def write_summary_csv(rows: list[AggregateRow], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["scope", "n_uniprots", "n_assays", "spearman", "auc", "mcc", "n_absent"])
        for r in rows:
            w.writerow([r.scope, r.n_uniprots, r.n_assays, _fmt(r.spearman), _fmt(r.auc),
                        _fmt(r.mcc), r.n_absent])


def format_summary_table(rows: list[AggregateRow]) -> str:
    """Fixed-width text table of the aggregate rows."""
    header = f"{'scope':<28} {'uniprots':>8} {'assays':>6} {'spearman':>9} {'auc':>9} {'mcc':>9}"
    lines = [header, "-" * len(header)]
    for r in rows:
        def cell(v):
            return "   --" if v is None else f"{v:9.4f}"
        lines.append(
            f"{r.scope:<28} {r.n_uniprots:>8} {r.n_assays:>6} "
            f"{cell(r.spearman):>9} {cell(r.auc):>9} {cell(r.mcc):>9}"
        )
    return "\n".join(lines) + "\n"
