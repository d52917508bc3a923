import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from protfit import seq
from protfit.errors import InputError


def ps(residues, sid="t"):
    return seq.ProteinSequence(id=sid, residues=residues)


class TestParseFasta:
    def test_wrapped_lines_concatenate(self):
        records = seq.parse_fasta(">a\nAC\nDE\n")
        assert [(r.id, r.residues) for r in records] == [("a", "ACDE")]

    def test_empty_record(self):
        with pytest.raises(InputError, match="empty"):
            seq.parse_fasta(">a\n\n")

    def test_illegal_character_offset(self):
        with pytest.raises(InputError, match="offset 2"):
            seq.parse_fasta(">a\nAC1\n")

    def test_lowercase_upper_cased(self):
        records = seq.parse_fasta(">a\nacDE\n")
        assert records[0].residues == "ACDE"

    def test_o_and_u_accepted_at_parse_time(self):
        records = seq.parse_fasta(">a\nAOU\n")
        assert records[0].residues == "AOU"

    def test_multiple_records_and_whitespace(self):
        records = seq.parse_fasta(">a desc\nAC D\n>b\nWY\n")
        assert [(r.id, r.residues) for r in records] == [("a", "ACD"), ("b", "WY")]

    def test_bytes_input(self):
        assert seq.parse_fasta(b">a\nAC\n")[0].residues == "AC"


class TestImpute:
    def test_b_first_branch_is_d(self):
        # find a seed whose first 2-way draw lands on the first branch
        for s in range(100):
            rng = np.random.default_rng(s)
            if rng.integers(2) == 0:
                out = seq.impute_indeterminates(ps("ABA"), np.random.default_rng(s))
                assert out.residues == "ADA"
                return
        pytest.fail("no seed found with a first-branch draw")

    def test_identity_without_indeterminates(self):
        s = ps("ACD")
        for sd in range(5):
            assert seq.impute_indeterminates(s, np.random.default_rng(sd)) is s

    def test_j_splits_evenly_over_seeds(self):
        counts = {"I": 0, "L": 0}
        n = 10_000
        for sd in range(n):
            out = seq.impute_indeterminates(ps("AJA"), np.random.default_rng(sd))
            counts[out.residues[1]] += 1
        assert abs(counts["I"] / n - 0.5) < 0.05

    def test_all_indeterminate_targets(self):
        rng = np.random.default_rng(0)
        out = seq.impute_indeterminates(ps("XBJZ"), rng)
        assert out.residues[0] in seq.STANDARD_AAS
        assert out.residues[1] in "DN"
        assert out.residues[2] in "IL"
        assert out.residues[3] in "EQ"

    def test_o_u_rejected(self):
        with pytest.raises(InputError, match="filter O/U"):
            seq.impute_indeterminates(ps("AOA"), np.random.default_rng(0))


class TestTokenize:
    def test_frame(self):
        ids = seq.tokenize(ps("AC"))
        assert ids.tolist() == [seq.BOS_ID, 0, 1, seq.EOS_ID]

    def test_empty_rejected(self):
        with pytest.raises(InputError):
            ps("")

    def test_indeterminate_rejected(self):
        with pytest.raises(InputError, match="impute"):
            seq.tokenize(ps("AXA"))

    def test_roundtrip_random_sequences(self):
        rng = np.random.default_rng(1)
        for _ in range(100):
            residues = "".join(
                seq.STANDARD_AAS[j] for j in rng.integers(0, 20, size=rng.integers(1, 40))
            )
            s = ps(residues)
            assert seq.detokenize(seq.tokenize(s)).residues == residues

    def test_token_ids_stable(self):
        # alphabetical residues, then BOS/EOS/PAD
        assert seq.VOCAB.token_id("A") == 0
        assert seq.VOCAB.token_id("Y") == 19
        assert (seq.BOS_ID, seq.EOS_ID, seq.PAD_ID) == (20, 21, 22)
        assert seq.VOCAB_SIZE == 23


class TestMirror:
    def test_reversal(self):
        assert seq.mirror(ps("ACD")).residues == "DCA"

    def test_fixed_point(self):
        assert seq.mirror(ps("A")).residues == "A"

    def test_involution(self):
        rng = np.random.default_rng(2)
        for _ in range(100):
            residues = "".join(
                seq.STANDARD_AAS[j] for j in rng.integers(0, 20, size=rng.integers(1, 30))
            )
            s = ps(residues)
            assert seq.mirror(seq.mirror(s)).residues == s.residues


class TestParseMutation:
    def test_single_substitution(self):
        m = seq.parse_mutation("A1C", ps("ACD"))
        assert m.mutant.residues == "CCD"
        assert m.substitutions == (("A", 1, "C"),)

    def test_two_substitutions(self):
        m = seq.parse_mutation("A1C:D3E", ps("ACD"))
        assert m.mutant.residues == "CCE"

    def test_deletion(self):
        assert seq.parse_mutation("del2-2", ps("ACD")).mutant.residues == "AD"

    def test_insertion(self):
        assert seq.parse_mutation("ins1:GG", ps("ACD")).mutant.residues == "AGGCD"

    def test_prepend_insertion(self):
        assert seq.parse_mutation("ins0:W", ps("ACD")).mutant.residues == "WACD"

    def test_mixed_edit(self):
        m = seq.parse_mutation("A1G:del3-3:ins4:KL", ps("ACDE"))
        assert m.mutant.residues == "GCEKL"

    def test_from_residue_mismatch(self):
        with pytest.raises(InputError, match="wild type has"):
            seq.parse_mutation("C1G", ps("ACD"))

    def test_out_of_range(self):
        with pytest.raises(InputError, match="outside"):
            seq.parse_mutation("A9C", ps("ACD"))

    def test_overlapping_deletions(self):
        with pytest.raises(InputError, match="overlaps"):
            seq.parse_mutation("del1-2:del2-3", ps("ACDE"))

    def test_substitution_inside_deletion(self):
        with pytest.raises(InputError, match="inside a deleted range"):
            seq.parse_mutation("C2G:del1-3", ps("ACDE"))

    def test_malformed_token(self):
        with pytest.raises(InputError, match="malformed"):
            seq.parse_mutation("A1", ps("ACD"))

    def test_insertion_missing_payload(self):
        with pytest.raises(InputError, match="followed"):
            seq.parse_mutation("ins1", ps("ACD"))

    def test_silent_detection(self):
        assert seq.parse_mutation("A1A", ps("ACD")).is_silent


@st.composite
def edit_scripts(draw):
    """Random wild type plus a non-overlapping edit script."""
    length = draw(st.integers(min_value=6, max_value=30))
    rng_codes = draw(
        st.lists(st.integers(0, 19), min_size=length, max_size=length)
    )
    wt = "".join(seq.STANDARD_AAS[c] for c in rng_codes)
    positions = list(range(1, length + 1))
    n_subs = draw(st.integers(0, 3))
    n_dels = draw(st.integers(0, 2))
    n_ins = draw(st.integers(0, 2))
    used: set = set()
    subs, dels, inss = [], [], []
    for _ in range(n_subs):
        p = draw(st.sampled_from(positions))
        if p in used:
            continue
        used.add(p)
        to_aa = seq.STANDARD_AAS[draw(st.integers(0, 19))]
        subs.append((wt[p - 1], p, to_aa))
    for _ in range(n_dels):
        a = draw(st.sampled_from(positions))
        b = min(length, a + draw(st.integers(0, 2)))
        if any(q in used for q in range(a, b + 1)):
            continue
        used.update(range(a, b + 1))
        dels.append((a, b))
    for _ in range(n_ins):
        p = draw(st.integers(0, length))
        if p in used or p + 1 in {q for d in dels for q in range(d[0], d[1] + 1)}:
            continue
        if any(p == q for q, _ in inss):
            continue
        if any(a <= p <= b for a, b in dels):
            continue
        used.add(p)
        text = "".join(seq.STANDARD_AAS[c] for c in draw(st.lists(st.integers(0, 19), min_size=1, max_size=3)))
        inss.append((p, text))
    return wt, subs, inss, dels


@settings(max_examples=80, deadline=None)
@given(edit_scripts())
def test_mutation_roundtrip_recovers_script(script):
    wt_str, subs, inss, dels = script
    wt = ps(wt_str)
    code = seq.format_mutation(subs, inss, dels)
    if not code:
        return
    m = seq.parse_mutation(code, wt)
    assert set(m.substitutions) == set(subs)
    assert set(m.insertions) == set(inss)
    assert set(m.deletions) == set(dels)
    # independent apply oracle: edit a list of characters directly
    chars: list = list(wt_str)
    for _, p, t in subs:
        chars[p - 1] = t
    deleted = sorted({q for a, b in dels for q in range(a, b + 1)}, reverse=True)
    tagged = {p: txt for p, txt in inss}
    out = [tagged.get(0, "")]
    for i, ch in enumerate(chars, start=1):
        if i not in deleted:
            out.append(ch)
        out.append(tagged.get(i, ""))
    expected = "".join(out)
    if expected:
        assert m.mutant.residues == expected


class TestFilter:
    def test_consecutive_x_rejected(self):
        kept, rejected = seq.filter_training_sequences([ps("ACXXD")])
        assert not kept and rejected[0][1] == "two or more consecutive X"

    def test_nonadjacent_x_kept(self):
        kept, rejected = seq.filter_training_sequences([ps("ACXDX")])
        assert len(kept) == 1 and not rejected

    def test_o_rejected(self):
        kept, rejected = seq.filter_training_sequences([ps("ACOD")])
        assert not kept and "excluded residue O" in rejected[0][1]

    def test_singleton_cluster_rejected(self):
        seqs = [ps("ACD", "a"), ps("ACE", "b"), ps("ACF", "c")]
        cluster_map = {"a": "c1", "b": "c1", "c": "c2"}
        kept, rejected = seq.filter_training_sequences(seqs, cluster_map)
        assert [s.id for s in kept] == ["a", "b"]
        assert rejected[0][0].id == "c" and rejected[0][1] == "singleton cluster"

    def test_partition(self):
        rng = np.random.default_rng(3)
        seqs = []
        for i in range(50):
            alpha = seq.STANDARD_AAS + "XOU"
            residues = "".join(alpha[j] for j in rng.integers(0, len(alpha), size=10))
            seqs.append(ps(residues, f"s{i}"))
        kept, rejected = seq.filter_training_sequences(seqs)
        kept_ids = {s.id for s in kept}
        rej_ids = {s.id for s, _ in rejected}
        assert kept_ids | rej_ids == {s.id for s in seqs}
        assert not kept_ids & rej_ids

    def test_rejection_report(self, tmp_path):
        _, rejected = seq.filter_training_sequences([ps("AOU", "bad")])
        path = tmp_path / "rej.csv"
        seq.write_rejection_report(rejected, path)
        assert path.read_text().splitlines() == ["id,reason", "bad,contains excluded residue O"]
