"""Amino-acid alphabet, FASTA parsing, tokenization and mutation grammar.

Positions are 1-based in every external format (FASTA offsets excepted,
which are 0-based into the residue string) and 0-based internally;
conversion happens at the parse/format boundary only.
"""

from __future__ import annotations

import io
import re
from dataclasses import dataclass, field
from typing import Iterable, Optional, TextIO

import numpy as np

from .errors import InputError

# The 20 canonical residues, ordered alphabetically so token ids are stable.
STANDARD_AAS = "ACDEFGHIKLMNPQRSTVWY"
STANDARD_AA_SET = frozenset(STANDARD_AAS)

# Indeterminate codes and the residues each may stand for.
IMPUTE_CHOICES = {"X": STANDARD_AAS, "B": "DN", "J": "IL", "Z": "EQ"}
INDETERMINATE_AAS = frozenset(IMPUTE_CHOICES)

# Rare residues accepted by the FASTA parser but rejected by training filters.
EXCLUDED_AAS = frozenset("OU")

_PARSEABLE_AAS = STANDARD_AA_SET | INDETERMINATE_AAS | EXCLUDED_AAS

BOS_ID = len(STANDARD_AAS)
EOS_ID = BOS_ID + 1
PAD_ID = BOS_ID + 2
VOCAB_SIZE = PAD_ID + 1

_AA_TO_ID = {aa: i for i, aa in enumerate(STANDARD_AAS)}
_ID_TO_AA = {i: aa for aa, i in _AA_TO_ID.items()}


@dataclass(frozen=True)
class AminoAcidVocab:
    """Token vocabulary: 20 standard residues plus BOS/EOS/PAD specials."""

    standard20: str = STANDARD_AAS
    bos_id: int = BOS_ID
    eos_id: int = EOS_ID
    pad_id: int = PAD_ID

    @property
    def size(self) -> int:
        return VOCAB_SIZE

    def token_id(self, aa: str) -> int:
        try:
            return _AA_TO_ID[aa]
        except KeyError:
            raise InputError(f"no token id for residue {aa!r}") from None

    def residue(self, token_id: int) -> str:
        try:
            return _ID_TO_AA[token_id]
        except KeyError:
            raise InputError(f"token id {token_id} is not a residue token") from None


VOCAB = AminoAcidVocab()


@dataclass(frozen=True)
class ProteinSequence:
    """A named residue string over the standard alphabet plus indeterminates.

    O and U are tolerated here (the FASTA parser accepts them) and are
    rejected later by :func:`filter_training_sequences`.
    """

    id: str
    residues: str
    source: str = ""

    def __post_init__(self):
        if not self.residues:
            raise InputError(f"sequence {self.id!r} is empty")
        for off, ch in enumerate(self.residues):
            if ch not in _PARSEABLE_AAS:
                raise InputError(
                    f"sequence {self.id!r}: illegal character {ch!r} at offset {off}"
                )

    def __len__(self) -> int:
        return len(self.residues)


def parse_fasta(data: bytes | str | TextIO) -> list[ProteinSequence]:
    """Parse FASTA text into sequences.

    Whitespace inside records is stripped and lowercase letters are
    upper-cased. Raises :class:`InputError` for empty records or characters
    outside the accepted alphabet, naming the record and 0-based offset.
    """
    if isinstance(data, bytes):
        text = data.decode("utf-8")
    elif isinstance(data, str):
        text = data
    else:
        text = data.read()

    records: list[ProteinSequence] = []
    header: Optional[str] = None
    chunks: list[str] = []

    def flush():
        if header is None:
            return
        residues = "".join(chunks).upper()
        if not residues:
            raise InputError(f"FASTA record {header!r} is empty")
        for off, ch in enumerate(residues):
            if ch not in _PARSEABLE_AAS:
                raise InputError(
                    f"FASTA record {header!r}: illegal character {ch!r} at offset {off}"
                )
        records.append(ProteinSequence(id=header, residues=residues, source="fasta"))

    for raw_line in io.StringIO(text):
        line = raw_line.strip()
        if line.startswith(">"):
            flush()
            header = line[1:].split()[0] if line[1:].split() else line[1:]
            chunks = []
        elif line:
            if header is None:
                raise InputError("FASTA input does not start with a '>' header")
            chunks.append("".join(line.split()))
    flush()
    if not records:
        raise InputError("FASTA input contains no records")
    return records


def write_fasta(seqs: Iterable[ProteinSequence], path) -> None:
    with open(path, "w") as fh:
        for s in seqs:
            fh.write(f">{s.id}\n{s.residues}\n")


def impute_indeterminates(s: ProteinSequence, rng: np.random.Generator) -> ProteinSequence:
    """Replace X/B/J/Z with uniformly drawn standard residues.

    X draws from all 20 codes, B from D/N, J from I/L, Z from E/Q. The
    result is deterministic given the generator state. O or U must have
    been filtered out upstream.
    """
    out = []
    changed = False
    for ch in s.residues:
        if ch in EXCLUDED_AAS:
            raise InputError(
                f"sequence {s.id!r} contains {ch!r}; filter O/U before imputation"
            )
        choices = IMPUTE_CHOICES.get(ch)
        if choices is None:
            out.append(ch)
        else:
            out.append(choices[int(rng.integers(len(choices)))])
            changed = True
    if not changed:
        return s
    return ProteinSequence(id=s.id, residues="".join(out), source=s.source)


def tokenize(s: ProteinSequence) -> np.ndarray:
    """Map a standard-residue sequence to ids: BOS, one per residue, EOS."""
    ids = np.empty(len(s.residues) + 2, dtype=np.int64)
    ids[0] = BOS_ID
    for i, ch in enumerate(s.residues):
        tok = _AA_TO_ID.get(ch)
        if tok is None:
            raise InputError(
                f"sequence {s.id!r}: cannot tokenize {ch!r} at offset {i}; "
                "impute indeterminates first"
            )
        ids[i + 1] = tok
    ids[-1] = EOS_ID
    return ids


def detokenize(ids: np.ndarray, seq_id: str = "detok") -> ProteinSequence:
    """Inverse of :func:`tokenize`; validates the BOS/EOS frame."""
    ids = np.asarray(ids)
    if ids.ndim != 1 or len(ids) < 3:
        raise InputError("token stream must be 1-D with at least one residue")
    if ids[0] != BOS_ID or ids[-1] != EOS_ID:
        raise InputError("token stream must start with BOS and end with EOS")
    residues = "".join(VOCAB.residue(int(t)) for t in ids[1:-1])
    return ProteinSequence(id=seq_id, residues=residues)


def mirror(s: ProteinSequence) -> ProteinSequence:
    """Reverse the residue order (an involution)."""
    return ProteinSequence(id=s.id, residues=s.residues[::-1], source=s.source)


# --- Mutation grammar -------------------------------------------------------
#
# Substitution  "A42G"      wild-type A at position 42 becomes G
# Insertion     "ins42:GS"  insert "GS" after position 42 (0 = before start)
# Deletion      "del42-45"  remove positions 42..45 inclusive
# Edits are joined with ':' and must not overlap.

_SUB_RE = re.compile(r"^([A-Z])(\d+)([A-Z])$")
_INS_RE = re.compile(r"^ins(\d+)$")
_DEL_RE = re.compile(r"^del(\d+)-(\d+)$")
_INS_SEQ_RE = re.compile(r"^[A-Z]+$")


@dataclass(frozen=True)
class MutationSet:
    """A validated edit script against a wild type, with the mutant built.

    Substitutions are (from_aa, 1-based position, to_aa); insertions are
    (after_position, inserted string); deletions are inclusive 1-based
    (start, end) ranges. ``mutant`` is exactly the edits applied to
    ``wild_type``.
    """

    wild_type: ProteinSequence
    substitutions: tuple = ()
    insertions: tuple = ()
    deletions: tuple = ()
    mutant: ProteinSequence = field(default=None)  # type: ignore[assignment]
    code: str = ""

    @property
    def has_indels(self) -> bool:
        return bool(self.insertions or self.deletions)

    @property
    def is_silent(self) -> bool:
        return self.mutant.residues == self.wild_type.residues


def _materialize(wt: str, subs, inss, dels) -> str:
    by_pos = dict(enumerate(wt, start=1))
    for _, pos, to_aa in subs:
        by_pos[pos] = to_aa
    deleted = set()
    for start, end in dels:
        deleted.update(range(start, end + 1))
    inserted = {pos: text for pos, text in inss}
    parts = [inserted.get(0, "")]
    for pos in range(1, len(wt) + 1):
        if pos not in deleted:
            parts.append(by_pos[pos])
        parts.append(inserted.get(pos, ""))
    return "".join(parts)


def make_mutation_set(
    wt: ProteinSequence,
    substitutions: Iterable[tuple] = (),
    insertions: Iterable[tuple] = (),
    deletions: Iterable[tuple] = (),
    code: str = "",
) -> MutationSet:
    """Validate an edit script against ``wt`` and materialize the mutant."""
    L = len(wt.residues)
    subs = sorted(substitutions, key=lambda e: e[1])
    inss = sorted(insertions, key=lambda e: e[0])
    dels = sorted(deletions, key=lambda e: e[0])

    seen_sub = set()
    for from_aa, pos, to_aa in subs:
        if not 1 <= pos <= L:
            raise InputError(f"substitution position {pos} outside 1..{L}")
        if wt.residues[pos - 1] != from_aa:
            raise InputError(
                f"substitution {from_aa}{pos}{to_aa}: wild type has "
                f"{wt.residues[pos - 1]!r} at position {pos}"
            )
        if to_aa not in STANDARD_AA_SET and to_aa not in INDETERMINATE_AAS:
            raise InputError(f"substitution to unknown residue {to_aa!r}")
        if pos in seen_sub:
            raise InputError(f"duplicate substitution at position {pos}")
        seen_sub.add(pos)

    deleted = set()
    for start, end in dels:
        if start > end:
            raise InputError(f"deletion range {start}-{end} is inverted")
        if not (1 <= start and end <= L):
            raise InputError(f"deletion range {start}-{end} outside 1..{L}")
        span = set(range(start, end + 1))
        if span & deleted:
            raise InputError(f"deletion range {start}-{end} overlaps another deletion")
        deleted.update(span)
    if deleted & seen_sub:
        raise InputError("substitution inside a deleted range")

    seen_ins = set()
    for pos, text in inss:
        if not 0 <= pos <= L:
            raise InputError(f"insertion anchor {pos} outside 0..{L}")
        if pos in seen_ins:
            raise InputError(f"duplicate insertion at position {pos}")
        if pos in deleted:
            raise InputError(f"insertion anchor {pos} lies inside a deleted range")
        if not text or not all(
            ch in STANDARD_AA_SET or ch in INDETERMINATE_AAS for ch in text
        ):
            raise InputError(f"insertion text {text!r} is not a residue string")
        seen_ins.add(pos)

    mutant_residues = _materialize(wt.residues, subs, inss, dels)
    if not mutant_residues:
        raise InputError("edit script deletes the entire sequence")
    mutant = ProteinSequence(id=f"{wt.id}|mut", residues=mutant_residues, source="edit")
    return MutationSet(
        wild_type=wt,
        substitutions=tuple(subs),
        insertions=tuple(inss),
        deletions=tuple(dels),
        mutant=mutant,
        code=code or format_mutation(subs, inss, dels),
    )


def parse_mutation(code: str, wt: ProteinSequence) -> MutationSet:
    """Parse a ':'-joined edit code and materialize the mutant."""
    if not code or not code.strip():
        raise InputError("empty mutation code")
    tokens = code.strip().split(":")
    subs, inss, dels = [], [], []
    i = 0
    while i < len(tokens):
        tok = tokens[i]
        m = _SUB_RE.match(tok)
        if m:
            subs.append((m.group(1), int(m.group(2)), m.group(3)))
            i += 1
            continue
        m = _INS_RE.match(tok)
        if m:
            if i + 1 >= len(tokens) or not _INS_SEQ_RE.match(tokens[i + 1]):
                raise InputError(
                    f"mutation code {code!r}: insertion {tok!r} must be followed "
                    "by a residue string"
                )
            inss.append((int(m.group(1)), tokens[i + 1]))
            i += 2
            continue
        m = _DEL_RE.match(tok)
        if m:
            dels.append((int(m.group(1)), int(m.group(2))))
            i += 1
            continue
        raise InputError(f"mutation code {code!r}: malformed token {tok!r}")
    return make_mutation_set(wt, subs, inss, dels, code=code.strip())


def format_mutation(subs, inss, dels) -> str:
    """Render an edit script in the grammar accepted by :func:`parse_mutation`."""
    parts = [f"{f}{p}{t}" for f, p, t in sorted(subs, key=lambda e: e[1])]
    parts += [f"del{a}-{b}" for a, b in sorted(dels)]
    parts += [f"ins{p}:{text}" for p, text in sorted(inss)]
    return ":".join(parts)


_XX_RE = re.compile(r"XX")


def filter_training_sequences(
    seqs: Iterable[ProteinSequence],
    cluster_map: Optional[dict] = None,
) -> tuple[list[ProteinSequence], list[tuple[ProteinSequence, str]]]:
    """Split sequences into (kept, rejected-with-reason).

    Rejects sequences containing O or U, sequences with two or more
    consecutive X, and (when a cluster map is given) sequences whose
    cluster contains a single member. Never raises.
    """
    seqs = list(seqs)
    cluster_sizes: dict = {}
    if cluster_map is not None:
        for s in seqs:
            cid = cluster_map.get(s.id)
            if cid is not None:
                cluster_sizes[cid] = cluster_sizes.get(cid, 0) + 1

    kept, rejected = [], []
    for s in seqs:
        bad = next((ch for ch in s.residues if ch in EXCLUDED_AAS), None)
        if bad is not None:
            rejected.append((s, f"contains excluded residue {bad}"))
            continue
        if _XX_RE.search(s.residues):
            rejected.append((s, "two or more consecutive X"))
            continue
        if cluster_map is not None:
            cid = cluster_map.get(s.id)
            if cid is not None and cluster_sizes.get(cid, 0) == 1:
                rejected.append((s, "singleton cluster"))
                continue
        kept.append(s)
    return kept, rejected


def write_rejection_report(rejected, path) -> None:
    """CSV report with columns ``id,reason``."""
    import csv

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "reason"])
        for s, reason in rejected:
            writer.writerow([s.id, reason])
