"""Delimited outputs (JSONL logs) and matplotlib figures.

Every report-producing path in the package renders figures next to its
delimited output: training writes loss curves beside the JSONL log and sample
panels beside checkpoints; evaluation writes per-protocol FID/LPIPS bar charts
beside the CSV/JSON report.  Figures are rendered with the Agg backend, so no
display is needed.
"""

from __future__ import annotations

import json
import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)
import numpy as np  # noqa: E402
import torch  # noqa: E402
from PIL import Image  # noqa: E402

from .core import residual_heatmap, tensor_to_uint8  # noqa: E402
from .errors import ContractError  # noqa: E402


# ---------------------------------------------------------------------------
# JSONL
# ---------------------------------------------------------------------------


def append_jsonl(path: str, record: dict) -> None:
    with open(path, "a", encoding="utf-8") as fh:
        fh.write(json.dumps(record, sort_keys=True) + "\n")


def load_jsonl(path: str) -> list[dict]:
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    return records


# ---------------------------------------------------------------------------
# figures
# ---------------------------------------------------------------------------


def render_loss_curves(records: list[dict], path: str) -> str:
    """Loss and masked-L1 curves from training log records."""
    if not records:
        raise ContractError("no training records to plot")
    steps = [r["step"] for r in records]
    series = {
        "generator": [r["loss_generator"] for r in records],
        "image critic": [r["loss_image_critic"] for r in records],
        "patch critic": [r["loss_patch_critic"] for r in records],
    }
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(11, 4))
    for label, values in series.items():
        ax1.plot(steps, values, label=label, linewidth=1)
    ax1.set_xlabel("batch")
    ax1.set_ylabel("loss")
    ax1.legend()
    ax1.set_title("adversarial training losses")
    ax2.plot(steps, [r["masked_l1_final"] for r in records], color="tab:red", linewidth=1)
    ax2.set_xlabel("batch")
    ax2.set_ylabel("masked L1 (final step)")
    ax2.set_title("reconstruction telemetry")
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path


def render_reasoning_panel(
    ground_truth: torch.Tensor,
    masked_input: torch.Tensor,
    outputs: list[torch.Tensor],
    residuals: list[torch.Tensor],
    path: str,
) -> str:
    """One row per sample: gt | masked input | per-step outputs | heat maps.

    Accepts batched ``(B,3,H,W)`` tensors; assembled with numpy and written as
    a single PNG.
    """
    if ground_truth.dim() != 4:
        raise ContractError("render_reasoning_panel expects batched tensors")
    rows = []
    for b in range(ground_truth.shape[0]):
        tiles = [tensor_to_uint8(ground_truth[b]), tensor_to_uint8(masked_input[b])]
        tiles += [tensor_to_uint8(out[b]) for out in outputs]
        tiles += [tensor_to_uint8(residual_heatmap(res[b])) for res in residuals]
        rows.append(np.concatenate(tiles, axis=1))
    panel = np.concatenate(rows, axis=0)
    Image.fromarray(panel, mode="RGB").save(path)
    return path


def render_report_figures(report, out_dir: str) -> dict[str, str]:
    """Per-protocol FID and LPIPS bar charts for an evaluation report."""
    os.makedirs(out_dir, exist_ok=True)
    names = [row.protocol for row in report.rows]
    paths = {}
    for metric, values in (
        ("fid", [row.fid for row in report.rows]),
        ("lpips", [row.lpips_mean for row in report.rows]),
    ):
        fig, ax = plt.subplots(figsize=(1.2 + 0.8 * len(names), 4))
        ax.bar(range(len(names)), values, color="tab:blue")
        ax.set_xticks(range(len(names)))
        ax.set_xticklabels(names, rotation=30, ha="right", fontsize=8)
        ax.set_ylabel(metric.upper())
        ax.set_title(f"{metric.upper()} by protocol ({report.sample_count} images)")
        fig.tight_layout()
        path = os.path.join(out_dir, f"{metric}_by_protocol.png")
        fig.savefig(path, dpi=110)
        plt.close(fig)
        paths[metric] = path
    return paths
