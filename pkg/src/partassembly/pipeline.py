"""End-to-end run orchestration: build networks from a RunConfig, train the
two stages in order (masks first, then poses), persist checkpoints, curves,
and the exact config; reload everything for evaluation."""

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import losses
from .autodiff import load_arrays, save_arrays
from .common import write_curve_csv
from .config import RunConfig, save_config
from .posenet import PoseConfig, PoseNet, build_seg_cache, train_pose
from .segnet import SegConfig, SegNet, train_seg

# persisted curves carry losses only; wall-clock timing stays in memory so
# identical runs write identical files
SEG_CURVE_HEADER = ("epoch", "mean_loss")
POSE_CURVE_HEADER = ("epoch", "total", "translation", "rotation_chamfer",
                     "rotation_l2", "assembly")


def seg_config(cfg):
    return SegConfig(m=cfg.m, f2=cfg.f2, f1=cfg.f1, dec_hidden=cfg.dec_hidden,
                     patch=cfg.patch, pn_hidden=cfg.pn_hidden)


def pose_config(cfg):
    return PoseConfig(m=cfg.m, f2=cfg.f2, f3=cfg.f3, pose_hidden=cfg.pose_hidden,
                      patch=cfg.patch, k_neighbors=cfg.k_neighbors,
                      ablate=cfg.ablate_flags())


def loss_weights(cfg):
    return losses.LossWeights(translation=cfg.lambda1,
                              rotation_chamfer=cfg.lambda2,
                              rotation_l2=cfg.lambda3,
                              assembly=cfg.lambda4)


def build_nets(cfg):
    seg = SegNet(seg_config(cfg), np.random.default_rng(cfg.seed))
    pose = PoseNet(pose_config(cfg), np.random.default_rng(cfg.seed + 1))
    return seg, pose


@dataclass
class RunResult:
    cfg: RunConfig
    seg: SegNet
    pose: PoseNet
    seg_cache: dict
    seg_curve: list
    pose_curve: list
    out_dir: Path


def make_seg_cache(seg, cfg, records):
    ablate = set(cfg.ablate_flags())
    return build_seg_cache(
        seg, records,
        zero_masks="seg" in ablate,
        use_global="global" not in ablate,
    )


def train_seg_stage(cfg, records, log_every=0):
    """Stage 1: mask network, skipped entirely under the seg ablation."""
    seg = SegNet(seg_config(cfg), np.random.default_rng(cfg.seed))
    if "seg" in set(cfg.ablate_flags()):
        return seg, []
    curve = train_seg(seg, records, epochs=cfg.seg_epochs, lr=cfg.lr,
                      seed=cfg.seed, log_every=log_every)
    return seg, curve


def train_pose_stage(cfg, records, seg, log_every=0):
    """Stage 2: pose network against the frozen seg module."""
    pose = PoseNet(pose_config(cfg), np.random.default_rng(cfg.seed + 1))
    cache = make_seg_cache(seg, cfg, records)
    curve = train_pose(pose, cache, records, epochs=cfg.pose_epochs,
                       lr=cfg.lr, seed=cfg.seed + 2,
                       weights=loss_weights(cfg), log_every=log_every)
    return pose, cache, curve


def train_run(cfg, dataset, log_every=0):
    """Train both stages on the dataset's train split and persist the run."""
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_config(cfg, out_dir / "run_config.txt")
    train_records = dataset.split("train")
    if not train_records:
        raise ValueError("dataset has no train split")

    seg, seg_curve = train_seg_stage(cfg, train_records, log_every=log_every)
    save_arrays(out_dir / "seg.ckpt", {k: v.data for k, v in seg.params().items()})
    write_curve_csv(out_dir / "seg_curve.csv", SEG_CURVE_HEADER,
                    [(e, m) for e, m, _s in seg_curve])

    pose, cache, pose_curve = train_pose_stage(cfg, train_records, seg,
                                               log_every=log_every)
    save_arrays(out_dir / "pose.ckpt", {k: v.data for k, v in pose.params().items()})
    write_curve_csv(out_dir / "pose_curve.csv", POSE_CURVE_HEADER,
                    [row[:-1] for row in pose_curve])
    return RunResult(cfg=cfg, seg=seg, pose=pose, seg_cache=cache,
                     seg_curve=seg_curve, pose_curve=pose_curve, out_dir=out_dir)


def _load_into(net, arrays):
    for name, tensor in net.params().items():
        if name not in arrays:
            raise KeyError(f"checkpoint missing array {name}")
        if arrays[name].shape != tensor.data.shape:
            raise ValueError(f"checkpoint array {name} has shape "
                             f"{arrays[name].shape}, expected {tensor.data.shape}")
        tensor.data = arrays[name].copy()


def load_run(cfg, run_dir):
    """Rebuild networks from a run directory's checkpoints."""
    run_dir = Path(run_dir)
    seg, pose = build_nets(cfg)
    _load_into(seg, load_arrays(run_dir / "seg.ckpt"))
    _load_into(pose, load_arrays(run_dir / "pose.ckpt"))
    return seg, pose


def checkpoint_predictor(seg, pose, cfg, records):
    """Pose predictor closure over a frozen seg cache for the records."""
    cache = make_seg_cache(seg, cfg, records)

    def predict(record):
        return pose.predict(record, cache[record.shape_id])

    return predict
