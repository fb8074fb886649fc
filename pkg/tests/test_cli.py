import json
import os

from apl.cli import main

TINY_TOML = """
[experiment]
name = "tiny"

[model]
n_points = 200

[grid]
azimuth_levels = 8
elevation_levels = 2

[scene]
instance_min = 4
instance_max = 4
eval_scenes = 1

[env]
horizon = 2
"""


def write_cfg(tmp_path):
    p = tmp_path / "tiny.toml"
    p.write_text(TINY_TOML)
    return str(p)


class TestCLI:
    def test_eval_subcommand(self, tmp_path, capsys):
        cfg = write_cfg(tmp_path)
        out = str(tmp_path / "out")
        code = main(["eval", "--config", cfg, "--policy", "random", "--out", out])
        assert code == 0
        summary = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
        assert summary["policy"] == "random"
        assert os.path.exists(os.path.join(out, "metrics_random_seed0.csv"))
        assert os.path.exists(os.path.join(out, "episodes_random_seed0.jsonl"))

    def test_bad_config_exit_code(self, tmp_path, capsys):
        bad = tmp_path / "bad.toml"
        bad.write_text("[experiment\n")
        code = main(["eval", "--config", str(bad), "--policy", "random",
                     "--out", str(tmp_path / "o")])
        assert code == 2

    def test_missing_checkpoint_exit_code(self, tmp_path, capsys):
        cfg = write_cfg(tmp_path)
        code = main(["eval", "--config", cfg, "--policy", "learned",
                     "--out", str(tmp_path / "o")])
        assert code == 3

    def test_render_debug(self, tmp_path, capsys):
        cfg = write_cfg(tmp_path)
        out = str(tmp_path / "dbg")
        code = main(["render-debug", "--scene-seed", "3", "--view", "1",
                     "--config", cfg, "--out", out])
        assert code == 0
        stem = os.path.join(out, "scene3_view1")
        assert os.path.exists(stem + ".pgm")
        with open(stem + ".json") as f:
            summary = json.load(f)
        assert len(summary["visibility"]) == 4

    def test_sweep_subcommand(self, tmp_path, capsys):
        cfg = write_cfg(tmp_path)
        out = str(tmp_path / "sw")
        code = main(["sweep", "--config", cfg, "--param", "T",
                     "--values", "1", "2", "--policy", "random", "--out", out])
        assert code == 0
        assert os.path.exists(os.path.join(out, "sweep_T.csv"))
