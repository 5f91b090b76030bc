"""Ablation harness: retrain the pose stage under each toggle and tabulate
held-out metrics in the standard row format (total / visible / invisible
part accuracy, assembly chamfer).

The mask stage is trained once and shared by every row except the
segmentation ablation, which uses the untrained mask network plus empty
masks — pose training is the only thing the toggles affect.
"""

from dataclasses import replace

import numpy as np

from .evaluate import aggregate, evaluate_records
from .pipeline import checkpoint_predictor, seg_config, train_pose_stage, train_seg_stage
from .segnet import SegNet

ABLATION_ROWS = (
    ("w/o L2 Rotation loss", ("l2rot",)),
    ("w/o Segmentation", ("seg",)),
    ("w/o Graph Conv 1, 2", ("gconv1", "gconv2")),
    ("w/o Graph Conv 2", ("gconv2",)),
    ("w/o Image Feature", ("img",)),
    ("w/o Global Feature", ("global",)),
)


def format_ablation_table(rows):
    lines = [f"{'Ablated Module':<24}{'Total':>8}{'Visible':>9}"
             f"{'Invisible':>11}{'Assembly CD':>13}"]
    for label, pa, vis, invis, sc in rows:
        lines.append(f"{label:<24}{pa:>8.3f}{vis:>9.3f}{invis:>11.3f}{sc:>13.4f}")
    return "\n".join(lines)


def run_ablation_suite(base_cfg, dataset, split="test", log_every=0):
    """Train and evaluate every ablation row plus the full model.

    Returns (table text, row tuples). Rows are reported, not ranked.
    """
    train_records = dataset.split("train")
    eval_records = dataset.split(split)
    seg_trained, _ = train_seg_stage(base_cfg, train_records, log_every=log_every)
    rows = []
    for label, flags in tuple(ABLATION_ROWS) + (("Full", ()),):
        cfg = replace(base_cfg, ablate=",".join(flags))
        if "seg" in flags:
            seg_use = SegNet(seg_config(cfg), np.random.default_rng(cfg.seed))
        else:
            seg_use = seg_trained
        pose, _cache, _curve = train_pose_stage(cfg, train_records, seg_use,
                                                log_every=log_every)
        predictor = checkpoint_predictor(seg_use, pose, cfg, eval_records)
        scored = evaluate_records(eval_records, predictor, tau=cfg.tau)
        agg = aggregate(scored)["overall"]
        rows.append((label, agg["part_accuracy"], agg["visible_accuracy"],
                     agg["invisible_accuracy"], agg["shape_chamfer"]))
    return format_ablation_table(rows), rows
