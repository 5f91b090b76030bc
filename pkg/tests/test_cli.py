"""CLI surface: exit codes, config round trips, training/eval/export flows,
and the verify mutation guard."""

import pytest

from partassembly import cli, export as export_mod, geometry as geo
from partassembly.autodiff import ops
from partassembly.config import RunConfig, apply_overrides, load_config, save_config


@pytest.fixture(scope="module")
def dataset_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli") / "ds"
    rc = cli.main(["gen-data", "--template", "table", "--count", "10",
                   "--seed", "3", "--out", str(out), "--d-pc", "80",
                   "--m", "16"])
    assert rc == cli.EXIT_OK
    return out


@pytest.fixture(scope="module")
def run_dir(dataset_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("cli") / "run"
    rc = cli.main([
        "train", "--dataset", str(dataset_dir), "--out", str(out),
        "--seg-epochs", "2", "--epochs", "2",
        "--set", "m=16", "--set", "f1=32", "--set", "f2=16", "--set", "f3=16",
        "--set", "dec_hidden=32", "--set", "pose_hidden=48",
        "--set", "pn_hidden=8",
    ])
    assert rc == cli.EXIT_OK
    return out


def test_usage_error_exit_code():
    assert cli.main(["train", "--dataset", "/nonexistent/path"]) == cli.EXIT_USAGE


def test_unknown_flag_exit_code():
    assert cli.main(["gen-data", "--bogus"]) == cli.EXIT_USAGE


def test_empty_split_is_usage_error(dataset_dir, run_dir):
    rc = cli.main(["eval", "--run", str(run_dir), "--dataset", str(dataset_dir),
                   "--split", "nosuch"])
    assert rc == cli.EXIT_USAGE


def test_run_dir_contents(run_dir):
    for name in ("run_config.txt", "seg.ckpt", "pose.ckpt",
                 "seg_curve.csv", "pose_curve.csv"):
        assert (run_dir / name).exists(), name
    curve = (run_dir / "pose_curve.csv").read_text().splitlines()
    assert curve[0].startswith("epoch,total")
    assert len(curve) == 3


def test_eval_gt_poses(dataset_dir, run_dir, capsys):
    rc = cli.main(["eval", "--run", str(run_dir), "--dataset", str(dataset_dir),
                   "--split", "test", "--predictor", "gt"])
    assert rc == cli.EXIT_OK
    out = capsys.readouterr().out
    assert "1.0000" in out
    metrics = (run_dir / "eval_test" / "metrics.csv").read_text().splitlines()
    assert metrics[0].startswith("shape_id,")
    for line in metrics[1:]:
        fields = line.split(",")
        assert float(fields[6]) == 1.0      # part accuracy
        assert float(fields[9]) == 0.0      # shape chamfer


def test_eval_random_poses_near_floor(dataset_dir, run_dir):
    rc = cli.main(["eval", "--run", str(run_dir), "--dataset", str(dataset_dir),
                   "--split", "train", "--predictor", "random",
                   "--out", str(run_dir / "eval_random")])
    assert rc == cli.EXIT_OK
    table = (run_dir / "eval_random" / "metrics.txt").read_text()
    overall = [l for l in table.splitlines() if l.startswith("overall")][0]
    pa = float(overall.split()[2])
    assert pa < 0.6


def test_eval_checkpoint_runs(dataset_dir, run_dir):
    rc = cli.main(["eval", "--run", str(run_dir), "--dataset", str(dataset_dir),
                   "--split", "test", "--predictor", "checkpoint"])
    assert rc == cli.EXIT_OK


def test_eval_deterministic_bytes(dataset_dir, run_dir, tmp_path):
    out1, out2 = tmp_path / "e1", tmp_path / "e2"
    for out in (out1, out2):
        rc = cli.main(["eval", "--run", str(run_dir), "--dataset",
                       str(dataset_dir), "--split", "test",
                       "--predictor", "checkpoint", "--out", str(out)])
        assert rc == cli.EXIT_OK
    assert (out1 / "metrics.csv").read_bytes() == (out2 / "metrics.csv").read_bytes()
    assert (out1 / "metrics.txt").read_bytes() == (out2 / "metrics.txt").read_bytes()


def test_verify_command_passes(capsys):
    rc = cli.main(["verify", "--grad-instances", "2"])
    out = capsys.readouterr().out
    assert rc == cli.EXIT_OK
    assert "PASS" in out and "FAIL" not in out
    # every row carries a tolerance and a measured value
    header, *rows = [l for l in out.splitlines() if l.strip()]
    assert "tolerance" in header and "measured" in header


def test_verify_catches_gradient_mutation(monkeypatch, capsys):
    """A sign error injected into the translation-loss gradient path must
    flip verify to a failure exit."""
    real_sqrt = ops.sqrt

    def broken_sqrt(x):
        out = real_sqrt(x)
        from partassembly.autodiff.tensor import active_tape
        tape = active_tape()
        if tape is not None:
            name, bwd = tape._records[-1]

            def flipped():
                before = None if x.grad is None else x.grad.copy()
                bwd()
                after = x.grad
                if after is not None:
                    delta = after if before is None else after - before
                    x.grad = (before if before is not None else 0.0) - delta
            tape._records[-1] = (name, flipped)
        return out

    monkeypatch.setattr(ops, "sqrt", broken_sqrt)
    rc = cli.main(["verify", "--grad-instances", "1"])
    out = capsys.readouterr().out
    assert rc == cli.EXIT_VERIFY
    assert "FAIL" in out


def test_oracle_check_command():
    assert cli.main(["oracle-check"]) == cli.EXIT_OK


def test_gradcheck_command(capsys):
    rc = cli.main(["gradcheck", "--instances", "2"])
    assert rc == cli.EXIT_OK
    assert "PASS" in capsys.readouterr().out


def test_export_roundtrip(dataset_dir, run_dir, tmp_path):
    from partassembly import dataset as dataset_mod
    ds = dataset_mod.load_dataset(dataset_dir)
    rec = ds.split("test")[0]
    out = tmp_path / "export"
    rc = cli.main(["export", "--run", str(run_dir), "--dataset",
                   str(dataset_dir), "--shape-id", rec.shape_id,
                   "--out", str(out)])
    assert rc == cli.EXIT_OK
    files = sorted(out.iterdir())
    assert len(files) == rec.n_parts + 2
    pts, idx = export_mod.read_points(out / f"{rec.shape_id}_gt.xyz")
    assert geo.chamfer_sq(pts, rec.gt_assembly()) == 0.0
    assert set(idx) == set(range(rec.n_parts))
    # per-part files exist for every part, including invisible ones
    for i in range(rec.n_parts):
        assert (out / f"{rec.shape_id}_part{i}.xyz").exists()


def test_config_roundtrip(tmp_path):
    cfg = RunConfig(dataset="x", seed=9, lr=5e-4, ablate="l2rot,img")
    path = tmp_path / "c.cfg"
    save_config(cfg, path)
    loaded = load_config(path)
    assert loaded == cfg
    assert loaded.ablate_flags() == ("l2rot", "img")


def test_config_unknown_key(tmp_path):
    path = tmp_path / "bad.cfg"
    path.write_text("nonsense = 3\n")
    with pytest.raises(ValueError):
        load_config(path)


def test_config_overrides():
    cfg = apply_overrides(RunConfig(), ["lr=0.01", "seg_epochs=5"])
    assert cfg.lr == 0.01
    assert cfg.seg_epochs == 5
    with pytest.raises(ValueError):
        apply_overrides(RunConfig(), ["nope=1"])


def test_env_seed_override(monkeypatch):
    monkeypatch.setenv("ASSEMBLY_SEED", "424242")
    cfg = RunConfig(seed=1).resolve_env()
    assert cfg.seed == 424242


def test_divergence_exit_code(dataset_dir, monkeypatch, tmp_path):
    from partassembly import pipeline
    from partassembly.common import DivergenceError

    def blow_up(*args, **kwargs):
        raise DivergenceError("loss became nan")

    monkeypatch.setattr(pipeline, "train_seg", blow_up)
    rc = cli.main(["train", "--dataset", str(dataset_dir),
                   "--out", str(tmp_path / "run"), "--set", "m=16"])
    assert rc == cli.EXIT_DIVERGED


def test_saved_run_config_reproduces_settings(run_dir):
    cfg = load_config(run_dir / "run_config.txt")
    assert cfg.m == 16
    assert cfg.f2 == 16
    assert cfg.seg_epochs == 2
