"""Rendering of evaluation results: text report, TSV dumps, DET figure.

All text output is deterministic (fixed field order, fixed float formats, no
timestamps) so repeated runs produce byte-identical files. The DET figure is
drawn on normal-deviate axes and written next to the delimited output.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .protocol import EvaluationReport, ReportSection

_DET_TICKS = (0.001, 0.002, 0.005, 0.01, 0.02, 0.05, 0.1, 0.2, 0.4)
_PROBIT_CLIP = 1e-6


def render_report(report: EvaluationReport) -> str:
    lines = ["tasign evaluation report", "========================", ""]
    for key, value in report.config_echo.items():
        lines.append(f"{key}: {value}")
    counts = report.counts
    total = sum(counts.values())
    breakdown = ", ".join(f"{k}={counts[k]}" for k in sorted(counts))
    lines.append(f"comparisons: {total} ({breakdown})")
    if report.warnings:
        lines.append("")
        lines.append("warnings:")
        lines.extend(f"  - {w}" for w in report.warnings)
    for name, section in report.sections.items():
        lines.append("")
        lines.append(f"[{name}]")
        lines.append(f"eer: {section.eer:.6f}")
        lines.append(f"threshold: {section.threshold:.9g}")
        lines.append(
            f"counts: genuine={section.n_genuine} impostor={section.n_impostor}"
        )
        lines.append(f"det points: {section.det.shape[0]}")
        lines.append("FMR\tFNMR")
        lines.extend(f"{fmr:.6f}\t{fnmr:.6f}" for fmr, fnmr in section.det)
    return "\n".join(lines) + "\n"


def scores_tsv(report: EvaluationReport) -> str:
    lines = ["enrolment\ttest\tkind\tscore"]
    lines.extend(
        f"{','.join(spec.enrolment_paths)}\t{spec.test_path}\t{spec.kind}\t"
        f"{format(score, '.17g')}"
        for spec, score in report.records
    )
    return "\n".join(lines) + "\n"


def det_tsv(section: ReportSection) -> str:
    lines = ["FMR\tFNMR"]
    lines.extend(f"{fmr:.17g}\t{fnmr:.17g}" for fmr, fnmr in section.det)
    return "\n".join(lines) + "\n"


def save_det_figure(report: EvaluationReport, path: str | Path) -> None:
    """Plot every section's DET curve on normal-deviate axes to a file."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    from scipy.stats import norm

    def probit(rates):
        return norm.ppf(np.clip(rates, _PROBIT_CLIP, 1.0 - _PROBIT_CLIP))

    fig, ax = plt.subplots(figsize=(5.5, 5.5))
    for name, section in report.sections.items():
        ax.plot(
            probit(section.det[:, 0]),
            probit(section.det[:, 1]),
            label=f"{name} (EER {100 * section.eer:.1f}%)",
        )
    tick_pos = norm.ppf(_DET_TICKS)
    tick_labels = [f"{100 * t:g}" for t in _DET_TICKS]
    ax.set_xticks(tick_pos, tick_labels)
    ax.set_yticks(tick_pos, tick_labels)
    ax.set_xlim(tick_pos[0], tick_pos[-1])
    ax.set_ylim(tick_pos[0], tick_pos[-1])
    ax.plot(ax.get_xlim(), ax.get_ylim(), color="0.8", lw=0.8, zorder=0)
    ax.set_xlabel("False Match Rate (%)")
    ax.set_ylabel("False Non-Match Rate (%)")
    ax.grid(True, which="both", lw=0.3)
    ax.legend(loc="upper right")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def write_report_files(report: EvaluationReport, out_dir: str | Path) -> dict[str, Path]:
    """Write report.txt, scores.tsv, per-section DET tables, and det.png."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: dict[str, Path] = {}

    report_path = out / "report.txt"
    report_path.write_text(render_report(report), encoding="utf-8")
    written["report"] = report_path

    scores_path = out / "scores.tsv"
    scores_path.write_text(scores_tsv(report), encoding="utf-8")
    written["scores"] = scores_path

    for name, section in report.sections.items():
        det_path = out / f"det_{name}.tsv"
        det_path.write_text(det_tsv(section), encoding="utf-8")
        written[f"det_{name}"] = det_path

    figure_path = out / "det.png"
    save_det_figure(report, figure_path)
    written["figure"] = figure_path
    return written
