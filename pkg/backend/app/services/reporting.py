import csv
import logging
from collections import OrderedDict, defaultdict
from pathlib import Path
from statistics import fmean
from typing import Dict, List, Optional, Sequence, Tuple

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from app.schemas import ExperimentConfig, MetricsReport, RunLogEntry, RunLogKind  # noqa: E402
from app.services.evaluator import evaluator_service  # noqa: E402
from app.services.run_log import run_log_service  # noqa: E402
from app.services.trainer import CONFIG_NAME  # noqa: E402

logger = logging.getLogger(__name__)

HEADERS = ["run", "top-1", "BOR", "HOR", "SHAcc", "SBErr", "HSIC (1e-4)"]
LOSS_KEYS = ("total", "ce_u", "ce_b", "scene_u", "scene_b", "ind")
METRIC_KEYS = ("top1", "bor", "hor", "shacc", "sberr")

Row = Tuple[str, MetricsReport]


def _mean_optional(values: Sequence[Optional[float]]) -> Optional[float]:
    present = [v for v in values if v is not None]
    return fmean(present) if present else None


class ReportingService:
    def run_row(self, run_dir: Path) -> Row:
        """Metrics of a finished run, recomputed from its persisted prediction records."""
        run_dir = Path(run_dir)
        config = ExperimentConfig.model_validate_json((run_dir / CONFIG_NAME).read_text())
        evals = run_log_service.replay_reports(run_log_service.read(run_dir, kind=RunLogKind.EVAL))
        hsic = evals[-1].inter_stream_hsic if evals else None
        report = evaluator_service.report_from_records(run_dir, hsic)
        if evals:
            report.epoch = evals[-1].epoch
        return config.name, report

    def mean_rows(self, rows: Sequence[Row]) -> List[Row]:
        """One 'mean' row per name that appears more than once (multi-seed runs)."""
        groups: Dict[str, List[MetricsReport]] = OrderedDict()
        for name, report in rows:
            groups.setdefault(name, []).append(report)
        means = []
        for name, reports in groups.items():
            if len(reports) < 2:
                continue
            means.append(
                (
                    f"{name} (mean of {len(reports)})",
                    MetricsReport(
                        top1=fmean(r.top1 for r in reports),
                        bor=_mean_optional([r.bor for r in reports]),
                        hor=_mean_optional([r.hor for r in reports]),
                        shacc=fmean(r.shacc for r in reports),
                        sberr=fmean(r.sberr for r in reports),
                        inter_stream_hsic=_mean_optional([r.inter_stream_hsic for r in reports]),
                        num_videos=sum(r.num_videos for r in reports),
                    ),
                )
            )
        return means

    def format_table(self, rows: Sequence[Row]) -> str:
        """Fixed-width table; undefined cells print as '---'."""
        cells = [HEADERS] + [
            [name] + ["---" if v is None else f"{v:.1f}" for v in report.table_row()] for name, report in rows
        ]
        widths = [max(len(row[i]) for row in cells) for i in range(len(HEADERS))]
        lines = [" | ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(row, widths))) for row in cells]
        lines.insert(1, "-+-".join("-" * w for w in widths))
        return "\n".join(lines)

    def write_csv(self, path: Path, rows: Sequence[Row]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as handle:
            writer = csv.writer(handle)
            writer.writerow(HEADERS)
            for name, report in rows:
                writer.writerow([name] + ["" if v is None else f"{v:.4f}" for v in report.table_row()])
        return path

    def epoch_loss_means(self, entries: Sequence[RunLogEntry]) -> Dict[str, List[float]]:
        per_epoch: Dict[int, Dict[str, List[float]]] = defaultdict(lambda: defaultdict(list))
        for entry in entries:
            if entry.kind != RunLogKind.STEP or entry.breakdown is None:
                continue
            for key in LOSS_KEYS + ("beta_t",):
                per_epoch[entry.breakdown.epoch][key].append(getattr(entry.breakdown, key))
        epochs = sorted(per_epoch)
        curves = {"epoch": [float(e) for e in epochs]}
        for key in LOSS_KEYS + ("beta_t",):
            curves[key] = [fmean(per_epoch[e][key]) for e in epochs]
        return curves

    def plot_loss_curves(self, entries: Sequence[RunLogEntry], path: Path, title: str = "") -> Path:
        curves = self.epoch_loss_means(entries)
        fig, (ax_loss, ax_ind) = plt.subplots(1, 2, figsize=(10, 4))
        for key in ("total", "ce_u", "ce_b", "scene_u", "scene_b"):
            if any(curves[key]):
                ax_loss.plot(curves["epoch"], curves[key], label=key)
        ax_loss.set_xlabel("epoch")
        ax_loss.set_ylabel("loss")
        ax_loss.legend(frameon=False)

        ax_ind.plot(curves["epoch"], [v * 1e4 for v in curves["ind"]], color="black", label="HSIC x1e4")
        ax_ind.set_xlabel("epoch")
        ax_ind.set_ylabel("HSIC (1e-4)")
        ax_beta = ax_ind.twinx()
        ax_beta.step(curves["epoch"], curves["beta_t"], where="post", color="tab:red", linestyle="--")
        ax_beta.set_ylabel("beta(t)", color="tab:red")
        fig.suptitle(title)
        fig.tight_layout()
        return self._save(fig, path)

    def plot_metric_bars(self, rows: Sequence[Row], path: Path) -> Path:
        fig, ax = plt.subplots(figsize=(max(6, 1.5 * len(rows) + 3), 4))
        width = 0.8 / max(len(rows), 1)
        for i, (name, report) in enumerate(rows):
            values = [0.0 if getattr(report, k) is None else 100.0 * getattr(report, k) for k in METRIC_KEYS]
            ax.bar([x + i * width for x in range(len(METRIC_KEYS))], values, width=width, label=name)
        ax.set_xticks([x + width * (len(rows) - 1) / 2 for x in range(len(METRIC_KEYS))])
        ax.set_xticklabels(HEADERS[1:6])
        ax.set_ylabel("%")
        ax.legend(frameon=False, fontsize=8)
        fig.tight_layout()
        return self._save(fig, path)

    def _save(self, fig, path: Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        fig.savefig(path, dpi=120)
        plt.close(fig)
        return path

    def build_report(self, run_dirs: Sequence[Path], out_dir: Path) -> Dict[str, Path]:
        """Comparison table (text + CSV), per-run loss curves and one metric bar chart."""
        out_dir = Path(out_dir)
        rows = [self.run_row(d) for d in run_dirs]
        all_rows = rows + self.mean_rows(rows)

        outputs = {"csv": self.write_csv(out_dir / "report.csv", all_rows)}
        table = out_dir / "report.txt"
        table.write_text(self.format_table(all_rows) + "\n")
        outputs["table"] = table
        for i, run_dir in enumerate(run_dirs):
            entries = run_log_service.read(run_dir)
            outputs[f"loss_curves_{i}"] = self.plot_loss_curves(
                entries, out_dir / f"loss_curves_{Path(run_dir).name}.png", title=rows[i][0]
            )
        outputs["metric_bars"] = self.plot_metric_bars(all_rows, out_dir / "metric_bars.png")
        logger.info(f"Wrote report for {len(rows)} runs to {out_dir}")
        return outputs


reporting_service = ReportingService()
