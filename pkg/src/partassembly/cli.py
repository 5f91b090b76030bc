"""Operator surface.

Subcommands: gen-data, train, eval, verify, export, gradcheck,
oracle-check. Exit codes: 0 success, 1 usage error, 2 verification
failure, 3 numeric divergence.
"""

import argparse
import sys
from pathlib import Path

import numpy as np

from . import datagen, dataset as dataset_mod, evaluate, export as export_mod
from . import pipeline, verify as verify_mod
from .common import DivergenceError
from .config import RunConfig, apply_overrides, load_config

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_VERIFY = 2
EXIT_DIVERGED = 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser():
    parser = _Parser(prog="part-assembly",
                     description="single-view 3D part assembly toolkit")
    sub = parser.add_subparsers(dest="command", required=True,
                              parser_class=_Parser)

    gen = sub.add_parser("gen-data",
                         help="generate a synthetic dataset")
    gen.add_argument("--template", default="mix",
                     choices=["table", "chair", "cabinet", "mix", "all"])
    gen.add_argument("--count", type=int, default=200)
    gen.add_argument("--seed", type=int, default=7)
    gen.add_argument("--out", required=True)
    gen.add_argument("--d-pc", type=int, default=1000)
    gen.add_argument("--m", type=int, default=32)
    gen.add_argument("--noise", type=float, default=0.0)
    gen.add_argument("--merge-prob", type=float, default=0.0)
    gen.add_argument("--snap-prob", type=float, default=0.35)
    gen.add_argument("--stretcher-prob", type=float, default=0.5)
    gen.add_argument("--splits", default="70,10,20",
                     help="train,val,test percentages")

    tr = sub.add_parser("train",
                        help="train mask stage then pose stage")
    tr.add_argument("--config", help="key=value config file")
    tr.add_argument("--dataset")
    tr.add_argument("--out")
    tr.add_argument("--seed", type=int)
    tr.add_argument("--m", type=int)
    tr.add_argument("--f2", type=int)
    tr.add_argument("--lr", type=float)
    tr.add_argument("--epochs", type=int, help="pose-stage epochs")
    tr.add_argument("--seg-epochs", type=int)
    tr.add_argument("--k-neighbors", type=int)
    tr.add_argument("--ablate", default=None,
                    help="comma-separated: l2rot,seg,gconv1,gconv2,img,global")
    tr.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                    help="override any config key")
    tr.add_argument("--verbose", action="store_true")

    ev = sub.add_parser("eval", help="evaluate poses")
    ev.add_argument("--run", help="run directory with checkpoints + config")
    ev.add_argument("--config")
    ev.add_argument("--dataset")
    ev.add_argument("--split", default="test")
    ev.add_argument("--predictor", default="checkpoint",
                    choices=["checkpoint", "gt", "random"])
    ev.add_argument("--tau", type=float)
    ev.add_argument("--jobs", type=int)
    ev.add_argument("--out")
    ev.add_argument("--seed", type=int)

    ve = sub.add_parser("verify",
                        help="run the self-verification battery")
    ve.add_argument("--seed", type=int, default=0)
    ve.add_argument("--grad-instances", type=int, default=5)

    gc = sub.add_parser("gradcheck",
                        help="finite-difference gradient suite")
    gc.add_argument("--instances", type=int, default=100)
    gc.add_argument("--step", type=float, default=1e-4)
    gc.add_argument("--tol", type=float, default=1e-3)
    gc.add_argument("--seed", type=int, default=1000)

    oc = sub.add_parser("oracle-check",
                        help="independent brute-force oracle comparisons")
    oc.add_argument("--seed", type=int, default=0)

    ex = sub.add_parser("export",
                        help="export posed point clouds as ASCII files")
    ex.add_argument("--run", required=True)
    ex.add_argument("--dataset")
    ex.add_argument("--shape-id", required=True)
    ex.add_argument("--out", required=True)
    return parser


# ---------------------------------------------------------------------------
# command bodies
# ---------------------------------------------------------------------------

def _cmd_gen_data(args):
    parts = [int(x) for x in args.splits.split(",")]
    if len(parts) != 3 or sum(parts) <= 0:
        raise UsageError(f"bad --splits {args.splits!r}")
    n_train = args.count * parts[0] // sum(parts)
    n_val = args.count * parts[1] // sum(parts)
    n_test = args.count - n_train - n_val
    spec = datagen.SyntheticSpec(
        template=args.template, d_pc=args.d_pc, m=args.m,
        noise_scale=args.noise, merge_prob=args.merge_prob,
        axis_snap_prob=args.snap_prob, stretcher_prob=args.stretcher_prob)
    ds = datagen.make_dataset(spec, n_train, n_val, n_test, args.seed, args.out)
    invis = ds.manifest["invisible_parts"]
    print(f"wrote {len(ds.records)} shapes to {args.out} "
          f"(train {n_train} / val {n_val} / test {n_test}, "
          f"{invis} invisible parts)")
    return EXIT_OK


def _resolve_config(args, require_dataset=True):
    cfg = load_config(args.config) if getattr(args, "config", None) else RunConfig()
    if getattr(args, "run", None):
        run_cfg = Path(args.run) / "run_config.txt"
        if run_cfg.exists():
            cfg = load_config(run_cfg)
    mapping = {
        "dataset": "dataset", "out": "out_dir", "seed": "seed", "m": "m",
        "f2": "f2", "lr": "lr", "epochs": "pose_epochs",
        "seg_epochs": "seg_epochs", "k_neighbors": "k_neighbors",
        "ablate": "ablate", "tau": "tau", "jobs": "jobs",
    }
    for arg_name, key in mapping.items():
        val = getattr(args, arg_name, None)
        if val is not None:
            setattr(cfg, key, val)
    apply_overrides(cfg, getattr(args, "set", []))
    cfg.resolve_env()
    if require_dataset:
        if not cfg.dataset:
            raise UsageError("no dataset given (--dataset or config)")
        if not Path(cfg.dataset).exists():
            raise UsageError(f"dataset directory {cfg.dataset!r} does not exist")
    return cfg


def _cmd_train(args):
    cfg = _resolve_config(args)
    ds = dataset_mod.load_dataset(cfg.dataset)
    result = pipeline.train_run(cfg, ds, log_every=1 if args.verbose else 0)
    last = result.pose_curve[-1] if result.pose_curve else None
    print(f"run written to {result.out_dir}")
    if result.seg_curve:
        print(f"seg final mean loss: {result.seg_curve[-1][1]!r}")
    if last:
        print(f"pose final mean loss: {last[1]!r}")
    return EXIT_OK


def _cmd_eval(args):
    cfg = _resolve_config(args)
    ds = dataset_mod.load_dataset(cfg.dataset)
    records = ds.split(args.split)
    if not records:
        raise UsageError(f"split {args.split!r} is empty")
    if args.predictor == "checkpoint":
        if not args.run:
            raise UsageError("--run required for the checkpoint predictor")
        seg, pose = pipeline.load_run(cfg, args.run)
        predict = pipeline.checkpoint_predictor(seg, pose, cfg, records)
    elif args.predictor == "gt":
        predict = evaluate.gt_pose_arrays
    else:
        rng = np.random.default_rng(cfg.seed)
        poses = {rec.shape_id: evaluate.random_pose_arrays(rec, rng)
                 for rec in records}
        predict = lambda rec: poses[rec.shape_id]
    rows = evaluate.evaluate_records(records, predict, tau=cfg.tau, jobs=cfg.jobs)
    out_dir = args.out or (Path(args.run) / f"eval_{args.split}" if args.run
                           else Path(cfg.out_dir) / f"eval_{args.split}")
    _agg, table = evaluate.write_metrics(
        rows, out_dir, title=f"{args.predictor} poses on split {args.split}")
    print(table)
    print(f"metrics written to {out_dir}")
    return EXIT_OK


def _cmd_verify(args):
    checks = verify_mod.verify_checks(seed=args.seed,
                                      grad_instances=args.grad_instances)
    print(verify_mod.format_report(checks))
    failed = [c for c in checks if not c.passed]
    print(f"{len(checks) - len(failed)}/{len(checks)} checks passed")
    return EXIT_OK if not failed else EXIT_VERIFY


def _cmd_gradcheck(args):
    results = verify_mod.gradient_suite(instances=args.instances, step=args.step,
                                        tol=args.tol, base_seed=args.seed)
    width = max(len(name) for name, _w, _ok in results) + 2
    ok_all = True
    for name, worst, ok in results:
        status = "PASS" if ok else "FAIL"
        print(f"{name:<{width}}{worst:>14.3e}  {status}")
        ok_all = ok_all and ok
    print(f"{args.instances} instances per family, step {args.step}, tol {args.tol}")
    return EXIT_OK if ok_all else EXIT_VERIFY


def _cmd_oracle_check(args):
    checks = verify_mod.oracle_checks(seed=args.seed)
    print(verify_mod.format_report(checks))
    failed = [c for c in checks if not c.passed]
    return EXIT_OK if not failed else EXIT_VERIFY


def _cmd_export(args):
    cfg = _resolve_config(args)
    ds = dataset_mod.load_dataset(cfg.dataset)
    record = ds.by_id(args.shape_id)
    seg, pose = pipeline.load_run(cfg, args.run)
    predict = pipeline.checkpoint_predictor(seg, pose, cfg, [record])
    q, t = predict(record)
    paths = export_mod.export_shape(record, q, t, args.out)
    print(f"wrote {len(paths)} files to {args.out}")
    return EXIT_OK


_COMMANDS = {
    "gen-data": _cmd_gen_data,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "verify": _cmd_verify,
    "gradcheck": _cmd_gradcheck,
    "oracle-check": _cmd_oracle_check,
    "export": _cmd_export,
}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ValueError, KeyError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DivergenceError as exc:
        print(f"numeric divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
