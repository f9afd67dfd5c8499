"""Speed/accuracy frontier and speed-vs-size charts from benchmark CSVs.

One image per model family, two panels each: seconds per batch versus
log-likelihood per token (the frontier; lower-left is better on the time
axis) and seconds per batch versus state count per backend.  Flagged rows
(cells skipped for budget reasons) are excluded from the panels and the
sidecars.  The input CSV is never modified; output is fully determined by
the input plus the style constants below.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import asdict, dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

EXPECTED_COLUMNS = [
    "family", "L", "N", "backend", "secs_per_batch", "ll_per_token", "flagged",
]

BACKEND_COLORS = {
    "dense": "tab:blue",
    "lowrank": "tab:orange",
    "banded": "tab:green",
}

FIGSIZE = (9.0, 4.0)
DPI = 120


class FrontierCsvError(ValueError):
    """The CSV does not follow the benchmark schema."""


@dataclass(frozen=True)
class FrontierRow:
    family: str
    L: int
    N: int
    backend: str
    secs_per_batch: float
    ll_per_token: float
    flagged: bool


def read_records(csv_path) -> list[FrontierRow]:
    """Parse and validate a benchmark CSV; raises FrontierCsvError."""
    try:
        with open(csv_path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None:
                raise FrontierCsvError("empty file, expected a CSV header")
            missing = [c for c in EXPECTED_COLUMNS if c not in reader.fieldnames]
            if missing:
                raise FrontierCsvError(f"missing columns: {missing}")
            rows = []
            for lineno, raw in enumerate(reader, start=2):
                try:
                    rows.append(FrontierRow(
                        family=raw["family"],
                        L=int(raw["L"]),
                        N=int(raw["N"]),
                        backend=raw["backend"],
                        secs_per_batch=float(raw["secs_per_batch"]),
                        ll_per_token=float(raw["ll_per_token"]),
                        flagged=raw["flagged"] == "true",
                    ))
                except (KeyError, ValueError) as exc:
                    raise FrontierCsvError(f"line {lineno}: {exc}") from exc
    except OSError as exc:
        raise FrontierCsvError(f"cannot read {csv_path}: {exc}") from exc
    return rows


def _sidecar_payload(family, rows: list[FrontierRow]) -> dict:
    return {
        "family": family,
        "points": [
            {k: v for k, v in asdict(r).items() if k not in ("family", "flagged")}
            for r in rows
        ],
    }


def _write_sidecar(path: Path, payload: dict) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _empty_figure(out_dir: Path) -> list[Path]:
    fig, axes = plt.subplots(1, 2, figsize=FIGSIZE, dpi=DPI)
    for ax in axes:
        ax.set_axis_off()
    fig.suptitle("no benchmark records")
    image = out_dir / "frontier_all.png"
    fig.savefig(image)
    plt.close(fig)
    sidecar = out_dir / "frontier_all.json"
    _write_sidecar(sidecar, _sidecar_payload(None, []))
    return [image, sidecar]


def plot_frontier(csv_path, out_dir) -> list[Path]:
    """Write one image plus one JSON sidecar per family; returns the paths."""
    rows = read_records(csv_path)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    active = [r for r in rows if not r.flagged]
    if not active:
        return _empty_figure(out)

    written: list[Path] = []
    families = sorted({r.family for r in active})
    for family in families:
        fam_rows = [r for r in active if r.family == family]
        fig, (ax_frontier, ax_speed) = plt.subplots(1, 2, figsize=FIGSIZE, dpi=DPI)

        for backend in sorted({r.backend for r in fam_rows}):
            pts = [r for r in fam_rows if r.backend == backend]
            color = BACKEND_COLORS.get(backend, "tab:gray")
            ax_frontier.scatter(
                [p.secs_per_batch for p in pts],
                [p.ll_per_token for p in pts],
                label=backend, color=color, s=24,
            )
            by_l = sorted(pts, key=lambda p: (p.L, p.N))
            ax_speed.plot(
                [p.L for p in by_l],
                [p.secs_per_batch for p in by_l],
                marker="o", label=backend, color=color,
            )

        ax_frontier.set_xlabel("seconds per batch")
        ax_frontier.set_ylabel("log-likelihood per token")
        ax_frontier.set_title(f"{family}: speed vs accuracy")
        ax_frontier.legend()
        ax_speed.set_xlabel("state count")
        ax_speed.set_ylabel("seconds per batch")
        ax_speed.set_xscale("log", base=2)
        ax_speed.set_yscale("log", base=2)
        ax_speed.set_title(f"{family}: speed vs size")
        ax_speed.legend()
        fig.tight_layout()

        image = out / f"frontier_{family}.png"
        fig.savefig(image)
        plt.close(fig)
        sidecar = out / f"frontier_{family}.json"
        _write_sidecar(sidecar, _sidecar_payload(family, fam_rows))
        written.extend([image, sidecar])
    return written


def plot_ranks(csv_path, out_dir) -> list[Path]:
    """Bar chart of estimated transition ranks from a rank-report CSV."""
    with open(csv_path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        needed = {"label", "L", "N", "transition_rank"}
        if reader.fieldnames is None or not needed.issubset(reader.fieldnames):
            raise FrontierCsvError(f"rank CSV must contain columns {sorted(needed)}")
        rows = list(reader)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    labels = [r["label"] for r in rows]
    ranks = [int(r["transition_rank"]) for r in rows]
    fig, ax = plt.subplots(figsize=(max(4.0, 1.2 * len(rows)), 4.0), dpi=DPI)
    ax.bar(range(len(rows)), ranks, color="tab:purple")
    ax.set_xticks(range(len(rows)), labels, rotation=30, ha="right")
    ax.set_ylabel("estimated rank")
    fig.tight_layout()
    image = out / "ranks.png"
    fig.savefig(image)
    plt.close(fig)
    sidecar = out / "ranks.json"
    _write_sidecar(sidecar, {"labels": labels, "transition_ranks": ranks})
    return [image, sidecar]


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="plot_frontier",
        description="Render benchmark CSVs as frontier and speed charts.",
    )
    parser.add_argument("csv")
    parser.add_argument("out_dir")
    args = parser.parse_args(argv)
    try:
        written = plot_frontier(args.csv, args.out_dir)
    except FrontierCsvError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    for path in written:
        print(path)
    return 0


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
