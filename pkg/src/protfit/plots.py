"""Figure rendering for the train and benchmark report paths."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402


def save_loss_curve(trace, path) -> None:
    """Training loss and learning rate against optimizer step."""
    steps = [r[0] for r in trace.records]
    lrs = [r[1] for r in trace.records]
    losses = [r[2] for r in trace.records]
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(steps, losses, lw=1.0, color="tab:blue")
    ax.set_xlabel("step")
    ax.set_ylabel("loss (nats/token)", color="tab:blue")
    ax.tick_params(axis="y", labelcolor="tab:blue")
    ax2 = ax.twinx()
    ax2.plot(steps, lrs, lw=1.0, color="tab:orange", alpha=0.7)
    ax2.set_ylabel("learning rate", color="tab:orange")
    ax2.tick_params(axis="y", labelcolor="tab:orange")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_benchmark_summary(per_assay, aggregate_rows, path) -> None:
    """Per-assay Spearman bars plus aggregate metric bars."""
    fig, (ax1, ax2) = plt.subplots(
        1, 2, figsize=(11, max(3.2, 0.4 * len(per_assay) + 1.5)),
        gridspec_kw={"width_ratios": [3, 2]},
    )
    names = [m.assay_id for m in per_assay]
    values = [0.0 if m.spearman is None else m.spearman for m in per_assay]
    ypos = range(len(names))
    ax1.barh(ypos, values, color="tab:blue")
    ax1.set_yticks(list(ypos))
    ax1.set_yticklabels(names, fontsize=8)
    ax1.invert_yaxis()
    ax1.set_xlabel("Spearman rho")
    ax1.set_xlim(-1, 1)
    ax1.axvline(0.0, color="k", lw=0.6)
    ax1.set_title("per assay")

    overall = next((r for r in aggregate_rows if r.scope == "overall"), None)
    if overall is not None:
        labels = ["spearman", "auc", "mcc"]
        vals = [overall.spearman, overall.auc, overall.mcc]
        shown = [(l, v) for l, v in zip(labels, vals) if v is not None]
        ax2.bar([l for l, _ in shown], [v for _, v in shown], color="tab:green")
        ax2.set_ylim(-1, 1)
        ax2.axhline(0.0, color="k", lw=0.6)
        ax2.set_title("overall (uniprot-weighted)")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
