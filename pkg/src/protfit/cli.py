"""Command-line entry point.

Subcommands: train, build-profile, score, benchmark, filter-msa,
ensemble. Every command writes a manifest next to its outputs, removes
partial outputs on failure, and exits 0 on success, 1 on validation
errors and 2 on runtime errors.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__, bench, plots, retrieval, score, seq
from . import train as train_mod
from .errors import InputError
from .model import ModelConfig, ProteinLM, load_checkpoint, save_checkpoint


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


class Run:
    """Tracks inputs/outputs for the manifest and for failure cleanup."""

    def __init__(self, command: str, args: argparse.Namespace):
        self.command = command
        self.args = args
        self.inputs: list[Path] = []
        self.outputs: list[Path] = []
        self.out_dir: Path | None = None
        self.config: dict = {}
        self.started = time.time()

    def input(self, path) -> Path:
        p = Path(path)
        if not p.exists():
            raise InputError(f"{p}: file not found")
        self.inputs.append(p)
        return p

    def output(self, path) -> Path:
        p = Path(path)
        p.parent.mkdir(parents=True, exist_ok=True)
        self.outputs.append(p)
        return p

    def cleanup(self) -> None:
        for p in self.outputs:
            try:
                if p.exists():
                    p.unlink()
            except OSError:
                pass

    def write_manifest(self) -> Path:
        if self.out_dir is not None:
            path = self.out_dir / "manifest.json"
        else:
            first = self.outputs[0]
            path = first.with_name(first.name + ".manifest.json")
        doc = {
            "command": self.command,
            "tool_version": __version__,
            "config": self.config,
            "seed": getattr(self.args, "seed", None),
            "inputs": {str(p): _sha256(p) for p in self.inputs},
            "outputs": [str(p) for p in self.outputs],
            "wall_clock_s": round(time.time() - self.started, 3),
        }
        with open(path, "w") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)
            fh.write("\n")
        return path


def _read_fasta_file(run: Run, path) -> list[seq.ProteinSequence]:
    p = run.input(path)
    with open(p) as fh:
        try:
            return seq.parse_fasta(fh)
        except InputError as e:
            raise InputError(f"{p}: {e}") from None


def _read_mutants_csv(run: Run, path) -> list[str]:
    p = run.input(path)
    codes: list[str] = []
    with open(p, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or "mutant" not in reader.fieldnames:
            raise InputError(f"{p}: mutants file needs a 'mutant' column")
        for i, row in enumerate(reader, start=2):
            code = (row["mutant"] or "").strip()
            if not code:
                raise InputError(f"{p}:{i}: empty mutant code")
            codes.append(code)
    if not codes:
        raise InputError(f"{p}: no mutants listed")
    return codes


def _read_a2m_file(run: Run, path) -> retrieval.Msa:
    p = run.input(path)
    with open(p) as fh:
        try:
            return retrieval.parse_a2m(fh)
        except InputError as e:
            raise InputError(f"{p}: {e}") from None


# -- commands -------------------------------------------------------------------


def cmd_train(args, run: Run) -> None:
    cfg_path = run.input(args.config)
    with open(cfg_path) as fh:
        doc = json.load(fh)
    if "model" not in doc or "train" not in doc:
        raise InputError(f"{cfg_path}: config must contain 'model' and 'train' sections")
    model_cfg = ModelConfig.from_json(json.dumps(doc["model"]))
    if args.seed is not None:
        doc["train"]["seed"] = args.seed
    train_cfg = train_mod.TrainConfig.from_json(json.dumps(doc["train"]))
    run.config = {"model": json.loads(model_cfg.to_json()),
                  "train": json.loads(train_cfg.to_json())}

    corpus = _read_fasta_file(run, args.corpus)
    cluster_map = None
    if args.cluster_map:
        cm_path = run.input(args.cluster_map)
        cluster_map = {}
        with open(cm_path, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or {"id", "cluster"} - set(reader.fieldnames):
                raise InputError(f"{cm_path}: cluster map needs 'id' and 'cluster' columns")
            for row in reader:
                cluster_map[row["id"]] = row["cluster"]
    kept, rejected = seq.filter_training_sequences(corpus, cluster_map)

    run.out_dir = Path(args.out_dir)
    run.out_dir.mkdir(parents=True, exist_ok=True)
    if rejected:
        seq.write_rejection_report(rejected, run.output(run.out_dir / "rejections.csv"))

    model = ProteinLM(model_cfg)
    ckpt_dir = str(run.out_dir) if train_cfg.checkpoint_every else None
    model, trace = train_mod.train(kept, model, train_cfg, checkpoint_dir=ckpt_dir)
    if train_cfg.checkpoint_every:
        for step in range(train_cfg.checkpoint_every, train_cfg.steps + 1,
                          train_cfg.checkpoint_every):
            intermediate = run.out_dir / f"checkpoint_step{step}.ckpt"
            if intermediate.exists():
                run.outputs.append(intermediate)
    save_checkpoint(model, run.output(run.out_dir / "checkpoint.ckpt"), step=train_cfg.steps)
    trace.save_csv(run.output(run.out_dir / "loss_trace.csv"))
    if not args.no_figures:
        plots.save_loss_curve(trace, run.output(run.out_dir / "loss_curve.png"))


def cmd_build_profile(args, run: Run) -> None:
    msa = _read_a2m_file(run, args.msa)
    weights = retrieval.sequence_weights(msa, theta=args.theta)
    profile = retrieval.build_profile(msa, weights, lam=args.smoothing)
    run.config = {"theta": args.theta, "lambda": args.smoothing,
                  "n_rows": msa.n_rows, "n_eff": weights.n_eff}
    retrieval.save_profile(profile, run.output(args.out))


def cmd_score(args, run: Run) -> None:
    if not 0.0 <= args.alpha <= 1.0:
        raise InputError("--alpha must be in [0, 1]")
    ckpt_path = run.input(args.checkpoint)
    model, _ = load_checkpoint(ckpt_path)
    wt = _read_fasta_file(run, args.wt_fasta)[0]
    seed = args.seed if args.seed is not None else 0
    imputed = bool(set(wt.residues) & seq.INDETERMINATE_AAS)
    if imputed:
        # indeterminates are resolved once per scoring run, under the run seed
        wt = seq.impute_indeterminates(wt, np.random.default_rng(seed))
    codes = _read_mutants_csv(run, args.mutants)

    profile = None
    if args.profile:
        profile_path = run.input(args.profile)
        profile = retrieval.load_profile(profile_path)
        if profile.seed_len != len(wt.residues):
            raise InputError(
                f"{profile_path}: profile has {profile.seed_len} positions but the "
                f"wild type {wt.id!r} has {len(wt.residues)}"
            )
        if profile.seed_residues != wt.residues:
            raise InputError(
                f"{profile_path}: profile seed residues differ from wild type {wt.id!r}"
            )

    mutants = []
    for code in codes:
        try:
            mutants.append(seq.parse_mutation(code, wt))
        except InputError as e:
            raise InputError(f"{args.mutants}: mutant {code!r}: {e}") from None

    req = score.ScoreRequest(
        wild_type=wt,
        mutants=tuple(mutants),
        alpha=args.alpha,
        bidirectional=not args.unidirectional,
        retrieval=profile,
        include_eos=not args.no_eos,
    )
    run.config = {"alpha": args.alpha, "bidirectional": not args.unidirectional,
                  "include_eos": not args.no_eos, "profile": bool(profile),
                  "wt_imputed": imputed, "imputation_seed": seed if imputed else None}
    records = score.score_bidirectional(req, model)
    score.write_scores(records, run.output(args.out))


def cmd_benchmark(args, run: Run) -> None:
    ref_path = run.input(args.reference)
    references = bench.read_reference_csv(ref_path)
    scores_dir = Path(args.scores_dir)
    assays_dir = Path(args.assays_dir)
    if not scores_dir.is_dir():
        raise InputError(f"{scores_dir}: not a directory")
    if not assays_dir.is_dir():
        raise InputError(f"{assays_dir}: not a directory")

    def evaluate(assay_id: str):
        ref = references[assay_id]
        assay_path = assays_dir / f"{assay_id}.csv"
        score_path = scores_dir / f"{assay_id}.csv"
        raw_rows = bench.read_assay_csv(assay_path)
        wt = None
        if ref.wild_type:
            wt = seq.ProteinSequence(id=f"{assay_id}|wt", residues=ref.wild_type)
        table, stats = bench.preprocess_assay(
            raw_rows,
            wt,
            assay_id=assay_id,
            uniprot_id=ref.uniprot_id,
            cutoff=ref.cutoff,
            cutoff_method=ref.cutoff_method,
            msa_depth_bucket=ref.msa_depth_bucket,
            mutation_depth_bucket=ref.mutation_depth_bucket,
            taxon=ref.taxon,
        )
        model_scores = score.read_scores(score_path)
        return bench.evaluate_assay(table, model_scores), stats

    assay_ids = sorted(references)
    for assay_id in assay_ids:
        for p in (assays_dir / f"{assay_id}.csv", scores_dir / f"{assay_id}.csv"):
            if not p.exists():
                raise InputError(f"{p}: file for assay {assay_id!r} not found")
            run.input(p)

    jobs = 1 if args.deterministic else max(1, args.jobs)
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(evaluate, assay_ids))
    else:
        results = [evaluate(a) for a in assay_ids]
    metrics = [m for m, _ in results]
    preprocess_notes = [
        {
            "assay_id": assay_id,
            "n_input": st.n_input,
            "n_silent": st.n_silent,
            "n_duplicates_collapsed": st.n_duplicates_collapsed,
            "n_missing": st.n_missing,
            "n_unparseable": st.n_unparseable,
        }
        for assay_id, (_, st) in zip(assay_ids, results)
    ]

    rows = bench.aggregate(metrics)
    run.out_dir = Path(args.out_dir)
    run.out_dir.mkdir(parents=True, exist_ok=True)
    bench.write_per_assay_csv(metrics, run.output(run.out_dir / "per_assay.csv"))
    bench.write_per_uniprot_csv(metrics, run.output(run.out_dir / "per_uniprot.csv"))
    bench.write_summary_csv(rows, run.output(run.out_dir / "summary.csv"))
    with open(run.output(run.out_dir / "summary.txt"), "w") as fh:
        fh.write(bench.format_summary_table(rows))
    if not args.no_figures:
        plots.save_benchmark_summary(metrics, rows, run.output(run.out_dir / "summary.png"))
    run.config = {"preprocess": preprocess_notes}


def cmd_filter_msa(args, run: Run) -> None:
    if not 0.0 <= args.min_identity <= 1.0:
        raise InputError("--min-identity must be in [0, 1]")
    msa = _read_a2m_file(run, args.msa)
    filtered = retrieval.filter_by_similarity(msa, args.min_identity)
    run.config = {"min_identity": args.min_identity,
                  "rows_in": msa.n_rows, "rows_out": filtered.n_rows}
    retrieval.write_a2m(filtered, run.output(args.out))


def cmd_ensemble(args, run: Run) -> None:
    tables, stems = [], []
    for path in args.scores:
        p = run.input(path)
        tables.append(score.read_scores(p))
        stems.append(p.stem)
    merged = score.ensemble_scores(tables)
    with open(run.output(args.out), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["mutant", "F"] + [f"F_{s}" for s in stems])
        for code in tables[0]:
            w.writerow([code, f"{merged[code]:.10g}"] + [f"{t[code]:.10g}" for t in tables])
    run.config = {"n_files": len(tables), "n_mutants": len(merged)}


# -- argument parsing -------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="protfit",
        description="Protein fitness prediction: autoregressive scoring with "
        "alignment retrieval, plus a DMS benchmark harness.",
    )
    parser.add_argument("--version", action="version", version=f"protfit {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--jobs", type=int, default=1, help="worker cap for per-assay work")
        p.add_argument("--deterministic", action="store_true",
                       help="force serial execution")
        p.add_argument("--json-errors", action="store_true",
                       help="emit errors as JSON on stderr")

    p = sub.add_parser("train", help="train a model on a FASTA corpus")
    p.add_argument("--config", required=True, help="JSON with 'model' and 'train' sections")
    p.add_argument("--corpus", required=True, help="training sequences (FASTA)")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--cluster-map", default=None, help="CSV id,cluster for singleton filtering")
    p.add_argument("--no-figures", action="store_true")
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("build-profile", help="build a retrieval profile from an A2M alignment")
    p.add_argument("--msa", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--theta", type=float, default=0.2,
                   help="reweighting similarity threshold (default 0.2)")
    p.add_argument("--smoothing", type=float, default=1e-5,
                   help="Laplace smoothing constant (default 1e-5)")
    common(p)
    p.set_defaults(func=cmd_build_profile)

    p = sub.add_parser("score", help="score mutants against a wild type")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--wt-fasta", required=True, help="wild type (first FASTA record)")
    p.add_argument("--mutants", required=True, help="CSV with a 'mutant' column")
    p.add_argument("--out", required=True)
    p.add_argument("--profile", default=None, help="retrieval profile file")
    p.add_argument("--alpha", type=float, default=0.6,
                   help="retrieval weight in [0,1] (default 0.6)")
    p.add_argument("--unidirectional", action="store_true",
                   help="skip the mirrored traversal")
    p.add_argument("--no-eos", action="store_true",
                   help="exclude the end-of-sequence term from log-probabilities")
    common(p)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("benchmark", help="evaluate score files against DMS assays")
    p.add_argument("--scores-dir", required=True, help="directory of <assay_id>.csv score files")
    p.add_argument("--assays-dir", required=True, help="directory of <assay_id>.csv assay files")
    p.add_argument("--reference", required=True, help="assay metadata CSV")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--no-figures", action="store_true")
    common(p)
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("filter-msa", help="drop alignment rows below a seed identity")
    p.add_argument("--msa", required=True)
    p.add_argument("--min-identity", type=float, required=True)
    p.add_argument("--out", required=True)
    common(p)
    p.set_defaults(func=cmd_filter_msa)

    p = sub.add_parser("ensemble", help="average several score files")
    p.add_argument("scores", nargs="+", help="score CSVs with identical mutant sets")
    p.add_argument("--out", required=True)
    common(p)
    p.set_defaults(func=cmd_ensemble)
    return parser


def _report_error(args, kind: str, message: str) -> None:
    if getattr(args, "json_errors", False):
        print(json.dumps({"error": {"type": kind, "message": message}}), file=sys.stderr)
    else:
        print(f"protfit: {kind}: {message}", file=sys.stderr)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    run = Run(args.command, args)
    try:
        args.func(args, run)
        run.write_manifest()
        return 0
    except InputError as e:
        run.cleanup()
        _report_error(args, "validation error", str(e))
        return 1
    except Exception as e:  # noqa: BLE001 - CLI boundary
        run.cleanup()
        _report_error(args, "runtime error", f"{type(e).__name__}: {e}")
        return 2


if __name__ == "__main__":
    sys.exit(main())
