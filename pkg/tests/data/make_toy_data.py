"""Regenerates the bundled toy dataset (tests/data/toy) and, after the
pipeline runs, the golden outputs (tests/data/golden).

Run from the repository root:

    python3 tests/data/make_toy_data.py          # toy inputs + checkpoint
    python3 tests/data/make_toy_data.py golden   # golden outputs via the CLI
"""

import csv
import json
import shutil
import sys
from pathlib import Path

import numpy as np

HERE = Path(__file__).parent
TOY = HERE / "toy"
GOLDEN = HERE / "golden"

WT = "MKTAYIAKQRQISFVKSHFSRQ"  # 22 residues


def write_toy_inputs():
    from protfit import seq
    from protfit.model import ModelConfig, ProteinLM, save_checkpoint
    from protfit.train import TrainConfig, train

    TOY.mkdir(parents=True, exist_ok=True)
    (TOY / "assays").mkdir(exist_ok=True)

    (TOY / "wt.fasta").write_text(f">toy_wt\n{WT}\n")

    # wt:  M1 K2 T3 A4 Y5 I6 A7 K8 Q9 R10 Q11 I12 S13 F14 V15 K16 S17 H18 F19 S20 R21 Q22
    mutants = [
        "M1A", "K2W", "T3C:A4G", "Y5F", "I6V", "A7G", "K8R", "Q9E",
        "del10-12", "ins13:GS", "F14W", "V15L", "K16N", "S17T", "M1M",
    ]
    with open(TOY / "mutants.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["mutant"])
        for m in mutants:
            w.writerow([m])

    # alignment: seed + noisy homologs with gaps and a lowercase insert state
    rng = np.random.default_rng(101)
    rows = [("toy_wt", WT)]
    for i in range(30):
        chars = []
        for j, aa in enumerate(WT):
            r = rng.random()
            if r < 0.08:
                chars.append("-")
            elif r < 0.35:
                chars.append(seq.STANDARD_AAS[rng.integers(0, 20)])
            else:
                chars.append(aa)
        aligned = "".join(chars)
        if i % 7 == 0:
            aligned = aligned[:5] + "gg" + aligned[5:]  # insert state
        rows.append((f"hom{i}", aligned))
    with open(TOY / "msa.a2m", "w") as fh:
        for rid, aligned in rows:
            fh.write(f">{rid}\n{aligned}\n")

    # assay measurements: deterministic values, duplicates, a missing score,
    # a silent mutation and an unparseable code
    rng = np.random.default_rng(202)
    scored = [m for m in mutants if m != "M1M"]
    with open(TOY / "assays" / "TOY_A.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["mutant", "DMS_score"])
        for i, m in enumerate(scored):
            w.writerow([m, f"{np.sin(i * 0.7) + 0.05 * i:.4f}"])
        w.writerow(["K2W", "0.8000"])  # duplicate, averaged with the first K2W
        w.writerow(["M1M", "0.5000"])  # silent, removed
        w.writerow(["Y5W", ""])  # missing, dropped
        w.writerow(["not_a_code", "1.0"])  # unparseable, collected
    with open(TOY / "assays" / "TOY_B.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["mutant", "DMS_score"])
        for i, m in enumerate(scored):
            w.writerow([m, f"{np.cos(i * 0.9) - 0.03 * i:.4f}"])

    with open(TOY / "reference.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(
            ["assay_id", "uniprot_id", "cutoff", "cutoff_method", "msa_depth_bucket",
             "mutation_depth_bucket", "taxon", "wild_type"]
        )
        w.writerow(["TOY_A", "P_TOY", "", "median", "low", "single", "Human", WT])
        w.writerow(["TOY_B", "P_TOY", "0.1", "manual", "high", "single", "Human", WT])

    # small training corpus: noisy copies of the wild type plus shuffles
    rng = np.random.default_rng(303)
    corpus = []
    for i in range(24):
        chars = [
            aa if rng.random() < 0.75 else seq.STANDARD_AAS[rng.integers(0, 20)]
            for aa in WT
        ]
        corpus.append((f"c{i}", "".join(chars)))
    with open(TOY / "corpus.fasta", "w") as fh:
        for cid, s in corpus:
            fh.write(f">{cid}\n{s}\n")

    config = {
        "model": {
            "n_layers": 2, "n_heads": 4, "d_model": 16, "d_ff": 32,
            "max_context": 32, "seed": 17,
        },
        "train": {
            "steps": 6, "batch_size": 4, "warmup_steps": 2, "peak_lr": 0.001,
            "mirror_prob": 0.5, "seed": 17, "val_fraction": 0.0,
        },
    }
    (TOY / "config.json").write_text(json.dumps(config, indent=2, sort_keys=True) + "\n")

    from protfit.model import ModelConfig

    model = ProteinLM(ModelConfig(**config["model"]))
    from protfit import seq as seqmod

    corpus_seqs = [seqmod.ProteinSequence(cid, s) for cid, s in corpus]
    cfg = TrainConfig(**config["train"])
    model, _ = train(corpus_seqs, model, cfg)
    save_checkpoint(model, TOY / "model.ckpt", step=cfg.steps)
    print(f"wrote toy inputs to {TOY}")


def write_golden():
    from protfit.cli import main

    GOLDEN.mkdir(parents=True, exist_ok=True)
    work = HERE / "_golden_work"
    if work.exists():
        shutil.rmtree(work)
    (work / "scores").mkdir(parents=True)

    rc = main([
        "build-profile", "--msa", str(TOY / "msa.a2m"),
        "--out", str(work / "toy.profile"),
    ])
    assert rc == 0, "build-profile failed"
    rc = main([
        "score", "--checkpoint", str(TOY / "model.ckpt"),
        "--wt-fasta", str(TOY / "wt.fasta"), "--mutants", str(TOY / "mutants.csv"),
        "--profile", str(work / "toy.profile"), "--out", str(work / "scores" / "TOY_A.csv"),
    ])
    assert rc == 0, "score failed"
    shutil.copy(work / "scores" / "TOY_A.csv", work / "scores" / "TOY_B.csv")
    rc = main([
        "benchmark", "--scores-dir", str(work / "scores"),
        "--assays-dir", str(TOY / "assays"), "--reference", str(TOY / "reference.csv"),
        "--out-dir", str(work / "report"), "--no-figures",
    ])
    assert rc == 0, "benchmark failed"

    for name, src in [
        ("toy.profile", work / "toy.profile"),
        ("scores.csv", work / "scores" / "TOY_A.csv"),
        ("per_assay.csv", work / "report" / "per_assay.csv"),
        ("per_uniprot.csv", work / "report" / "per_uniprot.csv"),
        ("summary.csv", work / "report" / "summary.csv"),
        ("summary.txt", work / "report" / "summary.txt"),
    ]:
        shutil.copy(src, GOLDEN / name)
    shutil.rmtree(work)
    print(f"wrote golden outputs to {GOLDEN}")


if __name__ == "__main__":
    if len(sys.argv) > 1 and sys.argv[1] == "golden":
        write_golden()
    else:
        write_toy_inputs()
