"""Inference-time retrieval from multiple sequence alignments.

An A2M alignment anchored on a seed sequence is turned into per-position
amino-acid distributions: rows are reweighted by inverse neighborhood
size (sequences with many close homologs count less), counts are Laplace
smoothed, and gaps are ignored. The resulting log-probability profile is
consulted position-by-position when scoring mutants; positions the
alignment does not cover fall back to the autoregressive model alone.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Optional, TextIO

import numpy as np

from . import seq
from .errors import InputError

GAP = "-"

# Residue codes for alignment arithmetic: 0..19 standard, -1 gap, >=20
# anything else (indeterminates etc.) which matches only itself and never
# enters pseudocounts.
_CODE = {aa: i for i, aa in enumerate(seq.STANDARD_AAS)}
_CODE[GAP] = -1


def _encode_char(ch: str) -> int:
    code = _CODE.get(ch)
    if code is None:
        code = 20 + (ord(ch) - ord("A"))
        _CODE[ch] = code
    return code


@dataclass(frozen=True)
class Msa:
    """Seed-anchored alignment.

    ``rows`` hold the raw aligned strings (uppercase/'-' are match states,
    lowercase/'.' are insert states). ``match_columns`` indexes the
    match-state string at the columns where the seed carries a residue;
    these columns map one-to-one onto seed positions 1..len(seed).
    """

    seed_id: str
    rows: tuple  # of (id, aligned string)
    match_columns: tuple
    match_strings: tuple  # per row, insert states stripped

    @property
    def n_rows(self) -> int:
        return len(self.rows)

    @property
    def n_match_states(self) -> int:
        return len(self.match_strings[0]) if self.rows else 0

    @property
    def seed_residues(self) -> str:
        s = self.match_strings[0]
        return "".join(s[c] for c in self.match_columns)

    def encoded(self) -> np.ndarray:
        """Integer matrix [n_rows, len(match_columns)] over seed columns."""
        out = np.empty((self.n_rows, len(self.match_columns)), dtype=np.int16)
        for r, ms in enumerate(self.match_strings):
            for j, c in enumerate(self.match_columns):
                out[r, j] = _encode_char(ms[c])
        return out


def _match_string(aligned: str) -> str:
    return "".join(ch for ch in aligned if not ch.islower() and ch != ".")


def parse_a2m(data: bytes | str | TextIO) -> Msa:
    """Parse an A2M alignment; the first record is the seed.

    Uppercase letters and '-' are match states; lowercase letters and '.'
    are insert states and are ignored for column accounting. Every row
    must agree with the seed on the number of match states.
    """
    if isinstance(data, bytes):
        text = data.decode("utf-8")
    elif not isinstance(data, str):
        text = data.read()
    else:
        text = data

    rows: list[tuple[str, str]] = []
    header: Optional[str] = None
    chunks: list[str] = []

    def flush():
        if header is None:
            return
        aligned = "".join(chunks)
        if not aligned:
            raise InputError(f"alignment record {header!r} is empty")
        rows.append((header, aligned))

    for raw in io.StringIO(text):
        line = raw.strip()
        if line.startswith(">"):
            flush()
            header = line[1:].split()[0] if line[1:].split() else line[1:]
            chunks = []
        elif line:
            if header is None:
                raise InputError("alignment does not start with a '>' header")
            chunks.append("".join(line.split()))
    flush()
    if not rows:
        raise InputError("alignment contains no records (a seed row is required)")

    match_strings = [_match_string(aligned) for _, aligned in rows]
    n_match = len(match_strings[0])
    for (rid, _), ms in zip(rows, match_strings):
        if len(ms) != n_match:
            raise InputError(
                f"alignment row {rid!r} has {len(ms)} match states, seed has {n_match}"
            )

    seed_ms = match_strings[0]
    match_columns = tuple(j for j, ch in enumerate(seed_ms) if ch != GAP)
    if not match_columns:
        raise InputError("seed row carries no residues in match states")
    return Msa(
        seed_id=rows[0][0],
        rows=tuple(rows),
        match_columns=match_columns,
        match_strings=tuple(match_strings),
    )


def write_a2m(msa: Msa, path) -> None:
    with open(path, "w") as fh:
        for rid, aligned in msa.rows:
            fh.write(f">{rid}\n{aligned}\n")


def _identity_to_rows(encoded: np.ndarray, ref: np.ndarray) -> np.ndarray:
    """Pairwise identity of every row against ``ref`` over seed columns.

    A gap never matches a residue; columns where both rows are gapped are
    excluded, so a row is always 100% identical to its own copy. Two
    all-gap rows count as identical by convention.
    """
    ref_nongap = ref[None, :] != -1
    nongap = encoded != -1
    eq = (encoded == ref[None, :]) & ref_nongap & nongap
    denom = (ref_nongap | nongap).sum(axis=1)
    matches = eq.sum(axis=1)
    out = np.ones(encoded.shape[0], dtype=np.float64)
    has_cols = denom > 0
    out[has_cols] = matches[has_cols] / denom[has_cols]
    return out


@dataclass(frozen=True)
class SequenceWeights:
    weights: np.ndarray
    theta: float

    @property
    def n_eff(self) -> float:
        return float(self.weights.sum())


def sequence_weights(msa: Msa, theta: float = 0.2) -> SequenceWeights:
    """Inverse neighborhood-size weights.

    A row's neighborhood is itself plus every other row whose identity
    (see :func:`_identity_to_rows`) over seed columns is at least
    1 - theta, so every weight lies in (0, 1] and duplicating all rows k
    times scales every weight by exactly 1/k.
    """
    enc = msa.encoded()
    n = enc.shape[0]
    weights = np.empty(n, dtype=np.float64)
    for i in range(n):
        identity = _identity_to_rows(enc, enc[i])
        neighbors = int((identity >= 1.0 - theta).sum()) - int(identity[i] >= 1.0 - theta) + 1
        weights[i] = 1.0 / neighbors
    return SequenceWeights(weights=weights, theta=theta)


@dataclass(frozen=True)
class RetrievalProfile:
    """Per seed-position smoothed log-probabilities over the 20 residues.

    ``covered`` marks positions where at least one countable residue was
    observed; log-probabilities at uncovered positions are undefined and
    must not be read.
    """

    seed_id: str
    seed_residues: str
    log_probs: np.ndarray  # [seed_len, 20]; NaN rows where uncovered
    covered: np.ndarray  # [seed_len] bool
    lam: float

    @property
    def seed_len(self) -> int:
        return len(self.seed_residues)

    def log_prob(self, pos0: int, residue: str) -> Optional[float]:
        """log P_R at 0-based seed position, or None when uncovered."""
        if not 0 <= pos0 < self.seed_len:
            raise InputError(f"profile position {pos0} outside 0..{self.seed_len - 1}")
        if not self.covered[pos0]:
            return None
        idx = _CODE.get(residue)
        if idx is None or idx < 0 or idx >= 20:
            raise InputError(f"cannot look up non-standard residue {residue!r}")
        return float(self.log_probs[pos0, idx])

    def mirrored(self) -> "RetrievalProfile":
        return RetrievalProfile(
            seed_id=self.seed_id,
            seed_residues=self.seed_residues[::-1],
            log_probs=self.log_probs[::-1].copy(),
            covered=self.covered[::-1].copy(),
            lam=self.lam,
        )


def build_profile(
    msa: Msa, weights: Optional[SequenceWeights] = None, lam: float = 1e-5
) -> RetrievalProfile:
    """Laplace-smoothed position-wise distributions from weighted counts.

    P(a | i) = (sum_s w_s [row_s[i] = a] + lam) / (sum_s w_s [row_s[i] is
    a standard residue] + 20 lam). Gaps and indeterminate residues enter
    neither numerator nor denominator; a position with no countable
    residue is marked uncovered.
    """
    if weights is None:
        weights = sequence_weights(msa)
    w = weights.weights
    if w.shape != (msa.n_rows,):
        raise InputError("weight vector length does not match alignment depth")
    enc = msa.encoded()
    counts = np.zeros((enc.shape[1], 20), dtype=np.float64)
    for a in range(20):
        counts[:, a] = ((enc == a) * w[:, None]).sum(axis=0)
    denom = counts.sum(axis=1)
    covered = denom > 0.0
    log_probs = np.full((enc.shape[1], 20), np.nan)
    if covered.any():
        p = (counts[covered] + lam) / (denom[covered] + 20.0 * lam)[:, None]
        log_probs[covered] = np.log(p)
    return RetrievalProfile(
        seed_id=msa.seed_id,
        seed_residues=msa.seed_residues,
        log_probs=log_probs,
        covered=covered,
        lam=lam,
    )


def retrieval_log_probs(
    residues: str,
    profile: RetrievalProfile,
    position_map: Optional[list] = None,
) -> list[Optional[float]]:
    """Per-position retrieval terms for a sequence in seed coordinates.

    ``position_map[i]`` gives the 0-based seed position for residue i, or
    None for positions the profile does not describe (insertions). The
    default identity map requires the sequence length to equal the seed's.
    Entries are None wherever the model must rely on its autoregressive
    mode alone.
    """
    if position_map is None:
        if len(residues) != profile.seed_len:
            raise InputError(
                f"sequence length {len(residues)} differs from profile length "
                f"{profile.seed_len}; pass an explicit position map"
            )
        position_map = list(range(len(residues)))
    if len(position_map) != len(residues):
        raise InputError("position map length must equal the sequence length")
    out: list[Optional[float]] = []
    for i, ch in enumerate(residues):
        pos = position_map[i]
        out.append(None if pos is None else profile.log_prob(pos, ch))
    return out


def surgery_for_indels(mutation: seq.MutationSet) -> list[Optional[int]]:
    """Column surgery for insertions/deletions, as a position map.

    Deleted seed positions vanish from the mapping; inserted mutant
    positions map to None (synthetic uncovered columns). Entry i is the
    0-based seed position behind 0-based mutant position i. Substitutions
    do not move coordinates.
    """
    wt_len = len(mutation.wild_type.residues)
    deleted = set()
    for start, end in mutation.deletions:
        if not (1 <= start <= end <= wt_len):
            raise InputError(f"deletion range {start}-{end} outside the seed")
        deleted.update(range(start, end + 1))
    inserted = {pos: len(text) for pos, text in mutation.insertions}

    mapping: list[Optional[int]] = []
    mapping.extend([None] * inserted.get(0, 0))
    for pos in range(1, wt_len + 1):
        if pos not in deleted:
            mapping.append(pos - 1)
        mapping.extend([None] * inserted.get(pos, 0))
    if len(mapping) != len(mutation.mutant.residues):
        raise InputError("position map does not match the materialized mutant")
    return mapping


def filter_by_similarity(msa: Msa, min_identity_to_seed: float) -> Msa:
    """Keep the seed plus rows at least ``min_identity_to_seed`` identical
    to it over seed columns. Thresholding at 1.0 keeps exact duplicates
    only; the result may be a single-row alignment."""
    if not 0.0 <= min_identity_to_seed <= 1.0:
        raise InputError("min_identity_to_seed must be in [0, 1]")
    enc = msa.encoded()
    identity = _identity_to_rows(enc, enc[0])
    keep = [0] + [i for i in range(1, msa.n_rows) if identity[i] >= min_identity_to_seed]
    return Msa(
        seed_id=msa.seed_id,
        rows=tuple(msa.rows[i] for i in keep),
        match_columns=msa.match_columns,
        match_strings=tuple(msa.match_strings[i] for i in keep),
    )


# -- profile files -------------------------------------------------------------

_PROFILE_FORMAT = "retrieval-profile v1"


def save_profile(profile: RetrievalProfile, path) -> None:
    """Text table, one row per seed position: position,covered,logp_A..logp_Y."""
    with open(path, "w", newline="") as fh:
        fh.write(f"# {_PROFILE_FORMAT}\n")
        fh.write(f"# seed_id={profile.seed_id}\n")
        fh.write(f"# seed={profile.seed_residues}\n")
        fh.write(f"# lambda={profile.lam!r}\n")
        writer = csv.writer(fh)
        writer.writerow(["position", "covered"] + [f"logp_{aa}" for aa in seq.STANDARD_AAS])
        for i in range(profile.seed_len):
            if profile.covered[i]:
                row = [i + 1, 1] + [repr(float(x)) for x in profile.log_probs[i]]
            else:
                row = [i + 1, 0] + [""] * 20
            writer.writerow(row)


def load_profile(path) -> RetrievalProfile:
    with open(path, newline="") as fh:
        lines = fh.read().splitlines()
    meta: dict[str, str] = {}
    body_start = 0
    for i, line in enumerate(lines):
        if line.startswith("# "):
            if "=" in line:
                key, _, value = line[2:].partition("=")
                meta[key] = value
            elif line[2:] != _PROFILE_FORMAT:
                raise InputError(f"{path}: unsupported profile format {line[2:]!r}")
        else:
            body_start = i
            break
    for key in ("seed_id", "seed", "lambda"):
        if key not in meta:
            raise InputError(f"{path}: profile header is missing {key!r}")
    reader = csv.reader(io.StringIO("\n".join(lines[body_start:])))
    header = next(reader)
    expected = ["position", "covered"] + [f"logp_{aa}" for aa in seq.STANDARD_AAS]
    if header != expected:
        raise InputError(f"{path}: unexpected profile columns {header!r}")
    seed = meta["seed"]
    log_probs = np.full((len(seed), 20), np.nan)
    covered = np.zeros(len(seed), dtype=bool)
    n_rows = 0
    for row in reader:
        if not row:
            continue
        pos = int(row[0]) - 1
        if not 0 <= pos < len(seed):
            raise InputError(f"{path}: profile position {row[0]} outside the seed")
        covered[pos] = row[1] == "1"
        if covered[pos]:
            log_probs[pos] = [float(x) for x in row[2:]]
        n_rows += 1
    if n_rows != len(seed):
        raise InputError(f"{path}: profile has {n_rows} rows, seed has {len(seed)} positions")
    return RetrievalProfile(
        seed_id=meta["seed_id"],
        seed_residues=seed,
        log_probs=log_probs,
        covered=covered,
        lam=float(meta["lambda"]),
    )
