import json
from pathlib import Path

import numpy as np
import pytest

from mvpolicy.action_decoder import DecoderConfig
from mvpolicy.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from mvpolicy.cli import main as cli_main
from mvpolicy.codec import CodecConfig
from mvpolicy.config import DemoSection, RunConfig, TrainSection
from mvpolicy.geometry import AugmentParams, WorkspaceBox
from mvpolicy.heatmap import HeatmapParams
from mvpolicy.mvdiff import DiffusionConfig
from mvpolicy.sim import TaskSpec, generate_demos


def tiny_config(**overrides) -> RunConfig:
    base = dict(
        seed=3,
        image_size=32,
        n_points=3000,
        workspace=WorkspaceBox((0.0, 0.0, 0.0), 0.48),
        heatmap=HeatmapParams(sigma=1.5, reference_size=32),
        codec=CodecConfig(spatial_factor=8, temporal_factor=4),
        diffusion=DiffusionConfig(blocks=1, heads=2, d_model=32, lambda_rgb=0.4),
        decoder=DecoderConfig(d_model=32, feat_channels=16, heads=2, tf_layers=1),
        task=TaskSpec(task_id="pick_place", fixed_init=True),
        augment=AugmentParams(),
        demos=DemoSection(n=1, stride=2),
        train_diffusion=TrainSection(steps=6, batch_size=2, ckpt_every=3),
        train_decoder=TrainSection(steps=4, batch_size=2, weight_decay=1e-5, ckpt_every=2),
    )
    base.update(overrides)
    return RunConfig(**base)


@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("tinyrun")
    cfg = tiny_config()
    demos = root / "demos"
    generate_demos(cfg.task, 1, 5, demos, cfg.sim_config(), cfg.cameras(), stride=2, tail_frames=24)
    cfg.save(root / "config.yaml")
    return root, cfg


class TestConfig:
    def test_yaml_round_trip(self, tmp_path):
        cfg = tiny_config()
        cfg.save(tmp_path / "c.yaml")
        back = RunConfig.load(tmp_path / "c.yaml")
        assert back.to_dict() == cfg.to_dict()

    def test_no_augment_round_trip(self, tmp_path):
        cfg = tiny_config(augment=None)
        cfg.save(tmp_path / "c.yaml")
        assert RunConfig.load(tmp_path / "c.yaml").augment is None


class TestCheckpointContainer:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        tensors = {"a.w": rng.random((3, 4)).astype(np.float32), "b": np.arange(5, dtype=np.int64)}
        path = tmp_path / "c.mvck"
        save_checkpoint(path, "diffusion", 7, {"x": 1}, tensors, extra={"pg": []})
        ck = load_checkpoint(path)
        assert ck.kind == "diffusion" and ck.step == 7 and ck.configs == {"x": 1}
        assert np.array_equal(ck.tensors["a.w"], tensors["a.w"])
        assert ck.tensors["b"].dtype == np.int64

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "bad.mvck"
        p.write_bytes(b"NOPE" + b"\x00" * 32)
        with pytest.raises(CheckpointError):
            load_checkpoint(p)

    def test_truncated_tensor(self, tmp_path):
        p = tmp_path / "t.mvck"
        save_checkpoint(p, "decoder", 1, {}, {"w": np.ones(100, dtype=np.float64)})
        p.write_bytes(p.read_bytes()[:-50])
        with pytest.raises(CheckpointError, match="truncated"):
            load_checkpoint(p)


class TestTraining:
    def test_diffusion_run_and_metrics(self, tiny_run):
        from mvpolicy.train import train_diffusion

        root, cfg = tiny_run
        out = root / "diff"
        final = train_diffusion(cfg, root / "demos", out)
        assert final.exists()
        assert (out / "run_config.yaml").exists()
        records = [json.loads(l) for l in open(out / "metrics.jsonl")]
        assert len(records) == cfg.train_diffusion.steps
        lam = cfg.diffusion.lambda_rgb
        for r in records:
            assert abs(r["loss_total"] - (lam * r["loss_vid"] + (1 - lam) * r["loss_heat"])) <= 1e-6

    def test_decoder_run_and_metrics(self, tiny_run):
        from mvpolicy.train import train_decoder

        root, cfg = tiny_run
        out = root / "dec"
        final = train_decoder(cfg, root / "demos", out)
        assert final.exists()
        records = [json.loads(l) for l in open(out / "decoder_metrics.jsonl")]
        assert len(records) == cfg.train_decoder.steps
        for r in records:
            total = r["loss_roll"] + r["loss_pitch"] + r["loss_yaw"] + r["loss_gripper"]
            assert abs(r["loss_pred"] - total) <= 1e-6

    def test_resume_reproduces_losses_bitwise(self, tiny_run):
        from mvpolicy.train import train_diffusion

        root, cfg = tiny_run
        full = root / "full"
        train_diffusion(cfg, root / "demos", full)
        resumed = root / "resumed"
        import shutil

        resumed.mkdir()
        shutil.copy(full / "diffusion_step3.mvck", resumed / "diffusion_step3.mvck")
        train_diffusion(cfg, root / "demos", resumed, resume=resumed / "diffusion_step3.mvck")
        full_recs = [json.loads(l) for l in open(full / "metrics.jsonl")]
        res_recs = [json.loads(l) for l in open(resumed / "metrics.jsonl")]
        tail = {r["step"]: r for r in res_recs}
        for r in full_recs:
            if r["step"] > 3:
                assert tail[r["step"]] == r  # bit-for-bit identical records


class TestCLI:
    def test_gen_demos_and_plot(self, tmp_path, capsys):
        cfg = tiny_config()
        cfg.save(tmp_path / "c.yaml")
        rc = cli_main(
            [
                "gen-demos",
                "--task",
                "pick_place",
                "--n",
                "1",
                "--seed",
                "5",
                "--out",
                str(tmp_path / "demos"),
                "--config",
                str(tmp_path / "c.yaml"),
                "--fixed-init",
            ]
        )
        assert rc == 0
        assert (tmp_path / "demos" / "run_config.yaml").exists()
        assert "wrote" in capsys.readouterr().out

        log = tmp_path / "m.jsonl"
        with open(log, "w") as f:
            for s in range(5):
                f.write(json.dumps({"step": s + 1, "loss_total": 1.0 / (s + 1)}) + "\n")
        rc = cli_main(["plot-metrics", "--log", str(log), "--out", str(tmp_path / "m.png")])
        assert rc == 0
        assert (tmp_path / "m.png").stat().st_size > 0

    def test_render_bench(self, capsys):
        rc = cli_main(["render-bench", "--points", "5000", "--threads", "1,2", "--repeats", "1"])
        assert rc == 0
        out = capsys.readouterr().out
        assert "points/s" in out and out.count("\n") >= 2

    def test_eval_random_policy(self, tmp_path, capsys):
        cfg = tiny_config(task=TaskSpec("pick_place", horizon=40))
        cfg.save(tmp_path / "c.yaml")
        rc = cli_main(
            [
                "eval",
                "--policy",
                "random",
                "--config",
                str(tmp_path / "c.yaml"),
                "--trials",
                "2",
                "--steps",
                "1,5",
                "--seed",
                "0",
                "--out",
                str(tmp_path / "eval"),
            ]
        )
        assert rc == 0
        table = json.load(open(tmp_path / "eval" / "eval.json"))
        assert len(table["rows"]) == 2  # one row per N
        assert capsys.readouterr().out.count("task=pick_place") == 2

    def test_export_frames(self, tmp_path):
        cfg = tiny_config()
        cfg.save(tmp_path / "c.yaml")
        demos = tmp_path / "demos"
        generate_demos(cfg.task, 1, 5, demos, cfg.sim_config(), cfg.cameras(), stride=2, tail_frames=24)
        ep = next(demos.glob("*.mvep"))
        rc = cli_main(
            [
                "export-frames",
                "--episode",
                str(ep),
                "--start",
                "0",
                "--out",
                str(tmp_path / "frames"),
                "--config",
                str(tmp_path / "c.yaml"),
            ]
        )
        assert rc == 0
        assert len(list((tmp_path / "frames").rglob("*.png"))) == 225
