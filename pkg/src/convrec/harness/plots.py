"""Training-curve export: SR@15 and loss per epoch as SVG, plus a tidy CSV."""

from __future__ import annotations

import csv
import io
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .training import CSV_HEADER  # noqa: E402

# Fixed salt and no date keep the SVG bytes identical across runs.
_RC = {"svg.hashsalt": "convrec", "svg.fonttype": "path"}


class PlotError(ValueError):
    pass


def read_metrics_csv(path) -> list[dict]:
    text = Path(path).read_text()
    if not text.strip():
        raise PlotError(f"{path}: empty file")
    reader = csv.DictReader(io.StringIO(text))
    missing = [c for c in CSV_HEADER if c not in (reader.fieldnames or [])]
    rows = list(reader)
    if missing:
        raise PlotError(f"{path}: missing columns {missing}")
    if not rows:
        raise PlotError(f"{path}: no data rows")
    out = []
    for i, r in enumerate(rows, start=2):
        try:
            out.append({"epoch": int(r["epoch"]), "episodes": int(r["episodes"]), **{k: float(r[k]) for k in ("sr15", "at", "hdcg", "loss")}})
        except (TypeError, ValueError):
            raise PlotError(f"{path}: line {i} is malformed") from None
    return out


def tidy_rows(runs: dict[str, list[dict]]) -> list[tuple]:
    """Long format: one (run, epoch, episodes, metric, value) row per number."""
    out = []
    for name in sorted(runs):
        for r in runs[name]:
            for metric in ("sr15", "at", "hdcg", "loss"):
                out.append((name, r["epoch"], r["episodes"], metric, r[metric]))
    return out


def export_plots(inputs, out_dir) -> list[Path]:
    """Write ``sr15.svg``, ``loss.svg`` and ``metrics_tidy.csv``; one line per input CSV."""
    inputs = [Path(p) for p in ([inputs] if isinstance(inputs, (str, Path)) else inputs)]
    if not inputs:
        raise PlotError("no input CSVs")
    runs = {}
    for p in inputs:
        name = p.parent.name if p.name == "metrics.csv" and p.parent.name else p.stem
        while name in runs:
            name += "_"
        runs[name] = read_metrics_csv(p)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for metric, label in (("sr15", "SR@15"), ("loss", "mean loss")):
        path = out / f"{metric}.svg"
        with plt.rc_context(_RC):
            fig, ax = plt.subplots(figsize=(5, 3.2))
            for name, rows in sorted(runs.items()):
                ax.plot([r["epoch"] for r in rows], [r[metric] for r in rows], marker="o", label=name)
            ax.set_xlabel("epoch")
            ax.set_ylabel(label)
            ax.grid(alpha=0.3)
            if len(runs) > 1:
                ax.legend()
            fig.tight_layout()
            fig.savefig(path, format="svg", metadata={"Date": None})
            plt.close(fig)
        written.append(path)
    tidy = out / "metrics_tidy.csv"
    with open(tidy, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("run", "epoch", "episodes", "metric", "value"))
        for row in tidy_rows(runs):
            w.writerow(row[:4] + (f"{row[4]:.6f}",))
    written.append(tidy)
    return written
