"""
End-to-end tests of the command-line entry point.
"""

import json

import pytest

from src.core.config import OUT_ENV, load_config
from src.core.errors import ConfigError, FormatError, NumericalError, ShapeError
from src.main import exit_code_for, run

TRAIN = ["--train-steps", "2", "--batch-size", "2", "--dataset-size", "4", "--d-model", "16",
         "--depth", "1", "--n-heads", "2", "--quiet"]


@pytest.fixture(autouse=True)
def no_out_env(monkeypatch):
    monkeypatch.delenv(OUT_ENV, raising=False)


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    out = tmp_path_factory.mktemp("train")
    assert run(["train", "--out", str(out), "--seed", "3"] + TRAIN) == 0
    return out


class TestUsage:

    def test_no_command(self):
        assert run([]) == 1

    def test_unknown_flag(self):
        assert run(["sample", "--colour", "red"]) == 1

    def test_bad_value_type(self):
        assert run(["sample", "--steps", "many"]) == 1

    def test_help(self, capsys):
        assert run(["--help"]) == 0
        assert "dataset-gen" in capsys.readouterr().out

    def test_missing_model(self, tmp_path):
        assert run(["sample", "--out", str(tmp_path), "--prompt", "red circle"]) == 1

    def test_invalid_config_value(self, tmp_path):
        assert run(["edit", "--out", str(tmp_path), "--kernel-size", "4"]) == 1

    def test_exit_codes(self):
        assert exit_code_for(ConfigError("x")) == 1
        assert exit_code_for(ShapeError("x")) == 1
        assert exit_code_for(NumericalError("x")) == 2
        assert exit_code_for(FormatError("x")) == 3
        assert exit_code_for(FileNotFoundError("x")) == 3


class TestConfigFlags:

    def test_dump_and_reload(self, tmp_path):
        first = tmp_path / "a.yaml"
        second = tmp_path / "b.yaml"
        assert run(["edit", "--steps", "7", "--lr", "0.2", "--probe-layers", "0,1", "--dump-config", str(first)]) == 0
        cfg = load_config(first)
        assert cfg.schedule.steps == 7
        assert cfg.optim.lr == 0.2
        assert cfg.probe.layers == [0, 1]
        assert run(["edit", "--config", str(first), "--dump-config", str(second)]) == 0
        assert first.read_text() == second.read_text()

    def test_flag_overrides_file(self, tmp_path):
        base = tmp_path / "base.yaml"
        run(["sample", "--steps", "7", "--guidance", "3.0", "--dump-config", str(base)])
        run(["sample", "--config", str(base), "--steps", "9", "--dump-config", str(tmp_path / "out.yaml")])
        cfg = load_config(tmp_path / "out.yaml")
        assert cfg.schedule.steps == 9
        assert cfg.schedule.guidance == 3.0

    def test_missing_config_file(self, tmp_path):
        assert run(["sample", "--config", str(tmp_path / "none.yaml")]) == 3

    def test_output_environment(self, tmp_path, monkeypatch):
        target = tmp_path / "env-out"
        monkeypatch.setenv(OUT_ENV, str(target))
        assert run(["dataset-gen", "--out", str(tmp_path / "ignored"), "--tasks", "1"]) == 0
        assert (target / "tasks.jsonl").is_file()
        assert not (tmp_path / "ignored").exists()


class TestCommands:

    def test_gradcheck(self, tmp_path):
        assert run(["gradcheck", "--out", str(tmp_path), "--gc-seeds", "2", "--seed", "1"]) == 0
        report = json.loads((tmp_path / "gradcheck.json").read_text())
        assert report["passed"] is True
        assert report["seed"] == 1
        assert report["tendency_loss"]["max_rel_err"] <= 1e-3
        assert (tmp_path / "config.yaml").is_file()

    def test_gradcheck_failure_is_numerical(self, tmp_path):
        assert run(["gradcheck", "--out", str(tmp_path), "--gc-seeds", "1", "--tolerance", "0"]) == 2

    def test_dataset_gen(self, tmp_path):
        assert run(["dataset-gen", "--out", str(tmp_path), "--suite", "smart", "--tasks", "2"]) == 0
        lines = (tmp_path / "tasks.jsonl").read_text().strip().splitlines()
        assert len(lines) == 2
        assert json.loads(lines[0])["suite"] == "smart"
        assert len(list((tmp_path / "images").glob("*.ppm"))) == 2

    def test_dataset_gen_is_deterministic(self, tmp_path):
        run(["dataset-gen", "--out", str(tmp_path / "a"), "--tasks", "2", "--seed", "5"])
        run(["dataset-gen", "--out", str(tmp_path / "b"), "--tasks", "2", "--seed", "5"])
        assert (tmp_path / "a" / "tasks.jsonl").read_bytes() == (tmp_path / "b" / "tasks.jsonl").read_bytes()

    def test_gap_suite_needs_model(self, tmp_path):
        assert run(["dataset-gen", "--out", str(tmp_path), "--suite", "gap", "--tasks", "1"]) == 1

    def test_train_outputs(self, trained):
        for name in ("model.lore", "losses.csv", "loss.png", "train.json", "config.yaml"):
            assert (trained / name).is_file()
        assert json.loads((trained / "train.json").read_text())["steps"] == 2

    def test_sample(self, trained, tmp_path):
        args = ["sample", "--model", str(trained / "model.lore"), "--prompt", "red circle top-left on black",
                "--steps", "2", "--quiet"]
        assert run(args + ["--out", str(tmp_path / "a")]) == 0
        assert run(args + ["--out", str(tmp_path / "b")]) == 0
        assert (tmp_path / "a" / "sample.ppm").read_bytes() == (tmp_path / "b" / "sample.ppm").read_bytes()

    def test_unknown_prompt_word(self, trained, tmp_path):
        assert run(["sample", "--model", str(trained / "model.lore"), "--prompt", "purple thing",
                    "--out", str(tmp_path)]) == 1

    def test_probe_layers_follow_the_checkpoint_depth(self, trained, tmp_path):
        deep = tmp_path / "deep"
        args = list(TRAIN)
        args[args.index("--depth") + 1] = "6"
        assert run(["train", "--out", str(deep), "--seed", "3"] + args) == 0
        sample = ["sample", "--prompt", "red circle top-left on black", "--steps", "1", "--quiet"]
        assert run(sample + ["--model", str(deep / "model.lore"), "--probe-layers", "5",
                             "--out", str(tmp_path / "a")]) == 0
        assert run(sample + ["--model", str(trained / "model.lore"), "--probe-layers", "5",
                             "--out", str(tmp_path / "b")]) == 1

    def test_corrupt_model(self, tmp_path):
        bad = tmp_path / "bad.lore"
        bad.write_bytes(b"LORE" + b"\x00" * 3)
        assert run(["sample", "--model", str(bad), "--prompt", "red circle", "--out", str(tmp_path)]) == 3

    def test_missing_model_file(self, tmp_path):
        assert run(["sample", "--model", str(tmp_path / "none.lore"), "--prompt", "red circle",
                    "--out", str(tmp_path)]) == 3

    def test_invert_then_sample_latent(self, trained, tmp_path):
        data = tmp_path / "data"
        assert run(["dataset-gen", "--out", str(data), "--tasks", "1"]) == 0
        task = json.loads((data / "tasks.jsonl").read_text().splitlines()[0])
        model = str(trained / "model.lore")
        assert run(["invert", "--model", model, "--image", str(data / task["image"]),
                    "--prompt", task["src_prompt"], "--steps", "2", "--out", str(tmp_path / "inv"), "--quiet"]) == 0
        latent = tmp_path / "inv" / "inverted.lort"
        assert latent.is_file()
        assert run(["sample", "--model", model, "--prompt", task["src_prompt"], "--latent", str(latent),
                    "--steps", "2", "--out", str(tmp_path / "rec"), "--quiet"]) == 0

    def test_edit_and_tendency(self, trained, tmp_path):
        data = tmp_path / "data"
        assert run(["dataset-gen", "--out", str(data), "--tasks", "1"]) == 0
        task = json.loads((data / "tasks.jsonl").read_text().splitlines()[0])
        common = ["--model", str(trained / "model.lore"), "--image", str(data / task["image"]),
                  "--mask", str(data / task["mask"]), "--src-prompt", task["src_prompt"],
                  "--tgt-prompt", task["tgt_prompt"], "--steps", "2", "--iters", "1", "--quiet"]
        assert run(["edit", "--out", str(tmp_path / "edit")] + common) == 0
        result = json.loads((tmp_path / "edit" / "result.json").read_text())
        assert len(result["loss_trace"]) == 1
        assert result["seed"] == 0
        assert set(result["timings"]) == {"invert", "optimize", "denoise"}
        assert all(v >= 0.0 for v in result["timings"].values())
        for name in ("edited.ppm", "optimized.lort", "loss.png"):
            assert (tmp_path / "edit" / name).is_file()
        assert run(["tendency", "--out", str(tmp_path / "tend")] + common) == 0
        assert (tmp_path / "tend" / "table.txt").is_file()
        assert (tmp_path / "tend" / "heatmap_target_optimized.ppm").is_file()
        assert (tmp_path / "tend" / "attention_maps.png").read_bytes()[:4] == b"\x89PNG"

    def test_edit_needs_image_and_mask(self, trained, tmp_path):
        assert run(["edit", "--model", str(trained / "model.lore"), "--out", str(tmp_path),
                    "--src-prompt", "red circle", "--tgt-prompt", "blue circle"]) == 1

    @pytest.mark.slow
    def test_bench_output_is_reproducible(self, trained, tmp_path):
        args = ["bench", "--model", str(trained / "model.lore"), "--seed", "4", "--steps", "2", "--iters", "2",
                "--pie-tasks", "3", "--smart-tasks", "1", "--gap-tasks", "2", "--sweep-tasks", "1",
                "--roundtrip-tasks", "1", "--gate-samples", "4", "--jobs", "2", "--quiet"]
        trees = []
        for name in ("a", "b"):
            root = tmp_path / name
            assert run(args + ["--out", str(root)]) == 0
            # wall-clock timings and the out path are the only run-dependent files
            trees.append({p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*"))
                          if p.is_file() and p.name not in ("timings.json", "config.yaml")})
        assert trees[0] == trees[1]
        for name in ("metrics.json", "tasks.csv", "table.txt", "report.pdf", "sweep_lr.png"):
            assert name in trees[0]
        assert sum(k.startswith("images/") for k in trees[0]) == 6
