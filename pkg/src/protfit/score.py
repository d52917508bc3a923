"""Fitness scoring.

A mutant's fitness is the log-likelihood ratio of mutant and wild type
under the model. When a retrieval profile is supplied, each position's
autoregressive log-probability is blended with the profile's term using
weight alpha; positions the profile does not cover keep full
autoregressive weight. Sequences longer than the model context are
scored inside a window centered on the mutations, and scores may be
averaged over the canonical and mirrored traversal directions.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Optional

from . import retrieval as retr
from . import seq
from .errors import InputError
from .model import ProteinLM, batched_log_probs


@dataclass(frozen=True)
class ScoreRequest:
    wild_type: seq.ProteinSequence
    mutants: tuple  # of MutationSet, all sharing wild_type
    alpha: float = 0.6
    bidirectional: bool = True
    retrieval: Optional[retr.RetrievalProfile] = None
    include_eos: bool = True
    # weight of the autoregressive term at positions without a retrieval
    # term: full weight by default, or the blended (1 - alpha) weight
    uncovered_ar_weight: str = "full"  # "full" | "blend"

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise InputError("alpha must be in [0, 1]")
        if self.uncovered_ar_weight not in ("full", "blend"):
            raise InputError("uncovered_ar_weight must be 'full' or 'blend'")
        for m in self.mutants:
            if m.wild_type.residues != self.wild_type.residues:
                raise InputError(
                    f"mutant {m.code!r} was parsed against a different wild type"
                )
        if self.retrieval is not None and (
            self.retrieval.seed_len != len(self.wild_type.residues)
        ):
            raise InputError(
                "retrieval profile length does not match the wild-type sequence "
                f"(profile seed {self.retrieval.seed_id!r} has "
                f"{self.retrieval.seed_len} positions, wild type has "
                f"{len(self.wild_type.residues)})"
            )


@dataclass(frozen=True)
class FitnessRecord:
    mutant_code: str
    F: float
    F_forward: float
    F_reverse: Optional[float]
    window: tuple  # forward-direction mutant (start, end), 1-based inclusive
    window_reverse: Optional[tuple] = None  # mirrored coordinates


def select_window(positions: list[int], seq_len: int, window_len: int) -> tuple[int, int]:
    """1-based inclusive window of up to ``window_len`` positions holding
    every mutated position, centered on their barycenter.

    The center is floor(mean(positions)); the window is clamped into the
    sequence. Mutations spread wider than the window are an error.
    """
    if window_len < 1:
        raise InputError("window_len must be at least 1")
    if not positions:
        positions = [max(1, seq_len // 2)]
    for p in positions:
        if not 1 <= p <= seq_len:
            raise InputError(f"mutated position {p} outside 1..{seq_len}")
    if seq_len <= window_len:
        return (1, seq_len)
    if max(positions) - min(positions) + 1 > window_len:
        raise InputError(
            f"mutations span {max(positions) - min(positions) + 1} positions, "
            f"wider than the scoring window ({window_len})"
        )
    center = math.floor(sum(positions) / len(positions))
    start = center - (window_len + 1) // 2 + 1
    if start < 1:
        start = 1
    if start + window_len - 1 > seq_len:
        start = seq_len - window_len + 1
    return (start, start + window_len - 1)


def _wt_edit_positions(m: seq.MutationSet) -> list[int]:
    """Wild-type coordinates touched by the edit script."""
    pos = [p for _, p, _ in m.substitutions]
    for start, end in m.deletions:
        pos.extend(range(start, end + 1))
    for anchor, _ in m.insertions:
        pos.append(max(1, anchor))
    return sorted(set(pos))


def _mut_edit_positions(m: seq.MutationSet) -> list[int]:
    """Mutant coordinates touched by the edit script (inserted residues,
    substituted residues, and the junctions left by deletions)."""
    mapping = retr.surgery_for_indels(m)
    seed_to_mut = {s: i for i, s in enumerate(mapping) if s is not None}
    mut_len = len(m.mutant.residues)
    pos: set[int] = set()
    for i, s in enumerate(mapping):
        if s is None:
            pos.add(i + 1)  # insertion
    for _, p, _ in m.substitutions:
        i = seed_to_mut.get(p - 1)
        if i is not None:
            pos.add(i + 1)
    for start, end in m.deletions:
        survivors = [seed_to_mut[s] for s in range(end, len(m.wild_type.residues)) if s in seed_to_mut]
        junction = (min(survivors) + 1) if survivors else mut_len
        pos.add(max(1, min(junction, mut_len)))
    return sorted(pos)


def _mirror_positions(positions: list[int], length: int) -> list[int]:
    return sorted(length + 1 - p for p in positions)


def _mirror_window(window: tuple[int, int], length: int) -> tuple[int, int]:
    start, end = window
    return (length + 1 - end, length + 1 - start)


class _ScoringPlan:
    """Windowed sequences plus per-position retrieval terms, per direction."""

    def __init__(self, residues: str, window: tuple[int, int], rterms: Optional[list]):
        start, end = window
        self.window = window
        self.residues = residues[start - 1 : end]
        self.rterms = None if rterms is None else rterms[start - 1 : end]


def _plan(
    residues: str,
    edit_positions: list[int],
    window_len: int,
    rterms: Optional[list],
    direction: str,
) -> _ScoringPlan:
    length = len(residues)
    if direction == "reverse":
        residues = residues[::-1]
        edit_positions = _mirror_positions(edit_positions, length)
        rterms = None if rterms is None else rterms[::-1]
    window = select_window(edit_positions, length, window_len)
    return _ScoringPlan(residues, window, rterms)


def _fuse(
    per_position: list[float],
    rterms: Optional[list],
    alpha: float,
    uncovered_ar_weight: str,
) -> float:
    """Blend autoregressive and retrieval terms position by position.

    ``per_position`` may carry one more entry than ``rterms`` (the end
    token), which never has a retrieval term.
    """
    if rterms is None or alpha == 0.0:
        return sum(per_position)
    uncovered_w = 1.0 if uncovered_ar_weight == "full" else (1.0 - alpha)
    padded = list(rterms) + [None] * (len(per_position) - len(rterms))
    total = 0.0
    for a_i, r_i in zip(per_position, padded):
        if r_i is None:
            total += uncovered_w * a_i
        else:
            total += (1.0 - alpha) * a_i + alpha * r_i
    return total


def _score_mutants(req: ScoreRequest, model: ProteinLM) -> list[FitnessRecord]:
    window_len = model.config.max_context - 2
    wt = req.wild_type.residues
    profile = req.retrieval

    wt_rterms = None
    if profile is not None and req.alpha > 0.0:
        wt_rterms = retr.retrieval_log_probs(wt, profile)

    directions = ["forward", "reverse"] if req.bidirectional else ["forward"]
    plans: list[dict] = []
    for m in req.mutants:
        entry: dict = {"mutation": m}
        mut = m.mutant.residues
        mut_rterms = None
        if profile is not None and req.alpha > 0.0:
            mapping = retr.surgery_for_indels(m) if m.has_indels else None
            mut_rterms = retr.retrieval_log_probs(mut, profile, position_map=mapping)
        wt_positions = _wt_edit_positions(m)
        mut_positions = _mut_edit_positions(m) if m.has_indels else wt_positions
        for d in directions:
            wt_plan = _plan(wt, wt_positions, window_len, wt_rterms, d)
            if m.has_indels:
                # the mutant lives in its own coordinates: re-center its window
                mut_plan = _plan(mut, mut_positions, window_len, mut_rterms, d)
            else:
                # substitutions share the wild-type coordinate system
                mut_dir = mut if d == "forward" else mut[::-1]
                rterms_dir = (
                    mut_rterms
                    if mut_rterms is None or d == "forward"
                    else mut_rterms[::-1]
                )
                mut_plan = _ScoringPlan(mut_dir, wt_plan.window, rterms_dir)
            entry[d] = (wt_plan, mut_plan)
        plans.append(entry)

    # score every distinct windowed string once, batched by length
    unique: dict[str, int] = {}
    for entry in plans:
        for d in directions:
            for plan in entry[d]:
                unique.setdefault(plan.residues, len(unique))
    strings = [s for s, _ in sorted(unique.items(), key=lambda kv: kv[1])]
    ar = batched_log_probs(strings, model, include_eos=req.include_eos)

    records = []
    for entry in plans:
        m = entry["mutation"]
        per_dir = {}
        for d in directions:
            wt_plan, mut_plan = entry[d]
            wt_total = _fuse(
                ar[unique[wt_plan.residues]][1],
                wt_plan.rterms,
                req.alpha,
                req.uncovered_ar_weight,
            )
            mut_total = _fuse(
                ar[unique[mut_plan.residues]][1],
                mut_plan.rterms,
                req.alpha,
                req.uncovered_ar_weight,
            )
            per_dir[d] = mut_total - wt_total
        f_forward = per_dir["forward"]
        f_reverse = per_dir.get("reverse")
        f = f_forward if f_reverse is None else (f_forward + f_reverse) / 2.0
        records.append(
            FitnessRecord(
                mutant_code=m.code,
                F=f,
                F_forward=f_forward,
                F_reverse=f_reverse,
                window=entry["forward"][1].window,
                window_reverse=entry["reverse"][1].window if "reverse" in entry else None,
            )
        )
    return records


def score_bidirectional(req: ScoreRequest, model: ProteinLM) -> list[FitnessRecord]:
    """Score every mutant in the request; results follow the input order."""
    return _score_mutants(req, model)


def fitness_ratio(
    mut: seq.ProteinSequence,
    wt: seq.ProteinSequence,
    model: ProteinLM,
    retrieval: Optional[retr.RetrievalProfile] = None,
    alpha: float = 0.6,
    direction: str = "forward",
    mutation: Optional[seq.MutationSet] = None,
    include_eos: bool = True,
    uncovered_ar_weight: str = "full",
) -> float:
    """Log-likelihood ratio log P(mut) - log P(wt) for one direction.

    When no explicit MutationSet is given, mutated positions are derived
    by comparing equal-length sequences (substitution-only edits); indels
    require ``mutation``.
    """
    if direction not in ("forward", "reverse"):
        raise InputError("direction must be 'forward' or 'reverse'")
    if mutation is None:
        if len(mut.residues) != len(wt.residues):
            raise InputError(
                "sequences differ in length; pass the MutationSet so indel "
                "coordinates are known"
            )
        subs = [
            (w, i + 1, m)
            for i, (w, m) in enumerate(zip(wt.residues, mut.residues))
            if w != m
        ]
        mutation = seq.make_mutation_set(wt, substitutions=subs)
    req = ScoreRequest(
        wild_type=wt,
        mutants=(mutation,),
        alpha=alpha,
        bidirectional=(direction == "reverse"),
        retrieval=retrieval,
        include_eos=include_eos,
        uncovered_ar_weight=uncovered_ar_weight,
    )
    rec = _score_mutants(req, model)[0]
    return rec.F_reverse if direction == "reverse" else rec.F_forward


# -- score tables --------------------------------------------------------------

SCORE_COLUMNS = ["mutant", "F", "F_forward", "F_reverse", "window_start", "window_end"]


def write_scores(records: list[FitnessRecord], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SCORE_COLUMNS)
        for r in records:
            w.writerow(
                [
                    r.mutant_code,
                    f"{r.F:.10g}",
                    f"{r.F_forward:.10g}",
                    "" if r.F_reverse is None else f"{r.F_reverse:.10g}",
                    r.window[0],
                    r.window[1],
                ]
            )


def read_scores(path) -> dict[str, float]:
    """Mutant -> F mapping from a score CSV."""
    out: dict[str, float] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or "mutant" not in reader.fieldnames or "F" not in reader.fieldnames:
            raise InputError(f"{path}: score file must have 'mutant' and 'F' columns")
        for i, row in enumerate(reader, start=2):
            code = row["mutant"]
            if code in out:
                raise InputError(f"{path}:{i}: duplicate mutant {code!r}")
            out[code] = float(row["F"])
    return out


def ensemble_scores(tables: list[dict[str, float]]) -> dict[str, float]:
    """Arithmetic mean of F per mutant across score tables.

    Every table must cover exactly the same mutants.
    """
    if not tables:
        raise InputError("no score tables to ensemble")
    keys = list(tables[0])
    keyset = set(keys)
    for i, t in enumerate(tables[1:], start=2):
        if set(t) != keyset:
            missing = keyset.symmetric_difference(t)
            raise InputError(
                f"score table {i} covers different mutants (e.g. {sorted(missing)[:3]})"
            )
    return {k: sum(t[k] for t in tables) / len(tables) for k in keys}
