import hashlib
import json

import pytest

from hevtl import cli, net
from hevtl.config import OUTPUT_ENV, config_from_dict, derive_seed, load_config
from hevtl.env import Trajectory, read_table
from hevtl.errors import ConfigError
from hevtl.ppo import TRAINING_LOG_COLUMNS

TINY = """
hyper: {n_iterations: 2, horizon_K: 64, minibatch_Z: 32, n_actors_M: 2, n_epochs: 1, gamma: 0.99, lr: 0.001}
cycles: {suite: {n: 3, duration: 60}}
partition: {n_source: 2, targets: [cycle-01]}
experiment: {seeds: [0, 1], episodes: 3, counts: [1, 2], episodes_per_source: 2}
network: {hidden: [8, 8]}
"""


@pytest.fixture()
def tiny(tmp_path):
    path = tmp_path / "tiny.yaml"
    path.write_text(TINY)
    return path


def digest_dir(path):
    return {p.name: hashlib.sha256(p.read_bytes()).hexdigest() for p in sorted(path.iterdir())}


class TestConfig:
    def test_empty_is_runnable(self, tmp_path):
        (tmp_path / "empty.yaml").write_text("")
        cfg = load_config(tmp_path / "empty.yaml")
        assert cfg.hyper.gamma == 0.9 and cfg.powertrain.m_v == 1325.0
        part, sources, targets = cfg.partition_cycles()
        assert len(sources) == 5 and part.includes_target_in_source

    def test_unknown_field_named(self):
        with pytest.raises(ConfigError, match=r"hyper: unknown field\(s\) \['gama'\]"):
            config_from_dict({"hyper": {"gama": 0.5}})

    def test_bad_value_named(self):
        with pytest.raises(ConfigError, match="powertrain"):
            config_from_dict({"powertrain": {"m_v": -5}})

    def test_missing_cycle_file_named(self, tmp_path):
        with pytest.raises(ConfigError, match="nope.csv"):
            config_from_dict({"cycles": {"files": ["nope.csv"]}}, str(tmp_path / "c.yaml"))

    def test_digest_ignores_output_dir(self):
        a = config_from_dict({"output_dir": "x"})
        b = config_from_dict({"output_dir": "y"})
        assert a.digest() == b.digest()
        assert a.digest() != config_from_dict({"seed": 1}).digest()

    def test_seed_splitting(self):
        assert derive_seed(0, "train") == derive_seed(0, "train")
        assert derive_seed(0, "train") != derive_seed(0, "transfer")
        assert derive_seed(0, "train") != derive_seed(1, "train")

    def test_tuned_yaml_matches_preset(self):
        from pathlib import Path

        from hevtl import presets
        cfg = load_config(Path(__file__).parents[1] / "scripts" / "tuned.yaml")
        assert cfg.hyper == presets.TUNED

    def test_output_env_override(self, monkeypatch):
        cfg = config_from_dict({"output_dir": "cfgdir"})
        monkeypatch.setenv(OUTPUT_ENV, "envdir")
        assert str(cfg.resolved_output()) == "envdir"
        assert str(cfg.resolved_output("flag")) == "flag"


class TestCommands:
    def test_train_artifacts_and_determinism(self, tiny, tmp_path):
        assert cli.main(["train", "--config", str(tiny), "--out", str(tmp_path / "a")]) == 0
        assert cli.main(["train", "--config", str(tiny), "--out", str(tmp_path / "b")]) == 0
        a, b = digest_dir(tmp_path / "a"), digest_dir(tmp_path / "b")
        assert set(a) == {"expert.ckpt", "training_log.csv", "manifest.json"}
        assert a == b
        cols = read_table(tmp_path / "a" / "training_log.csv")
        assert tuple(cols) == TRAINING_LOG_COLUMNS

    def test_env_var_output(self, tiny, tmp_path, monkeypatch):
        monkeypatch.setenv(OUTPUT_ENV, str(tmp_path / "env"))
        assert cli.main(["train", "--config", str(tiny)]) == 0
        assert (tmp_path / "env" / "expert.ckpt").exists()

    def test_eval(self, tiny, tmp_path, capsys):
        cli.main(["train", "--config", str(tiny), "--out", str(tmp_path / "t")])
        ck = str(tmp_path / "t" / "expert.ckpt")
        for out in ("e1", "e2"):
            assert cli.main(["eval", "--config", str(tiny), "--out", str(tmp_path / out),
                             "--checkpoint", ck, "--cycle", "synth:urban:7:120"]) == 0
        printed = capsys.readouterr().out.strip().splitlines()
        assert printed[-1] == printed[-2]
        traj = Trajectory.from_csv(tmp_path / "e1" / "trajectory.csv")
        assert len(traj) == 120 and traj.total_reward <= 0
        assert digest_dir(tmp_path / "e1") == digest_dir(tmp_path / "e2")

    def test_eval_incompatible(self, tiny, tmp_path):
        ck = tmp_path / "big.ckpt"
        net.save_params(net.init_params(net.NetLayout(hidden=(4,))), ck)
        code = cli.main(["eval", "--config", str(tiny), "--out", str(tmp_path / "x"),
                         "--checkpoint", str(ck), "--cycle", "synth:urban:7:60"])
        assert code == cli.EXIT_INCOMPATIBLE

    def test_exit_codes(self, tmp_path, tiny):
        bad = tmp_path / "bad.yaml"
        bad.write_text("hyper: {lr: -1}\n")
        assert cli.main(["train", "--config", str(bad), "--out", str(tmp_path / "o")]) == cli.EXIT_CONFIG
        assert cli.main(["train", "--config", str(tmp_path / "missing.yaml")]) == cli.EXIT_CONFIG
        (tmp_path / "c.csv").write_text("0\n1\nabc\n")
        assert cli.main(["cycles", "validate", str(tmp_path / "c.csv")]) == cli.EXIT_DATA
        (tmp_path / "junk.ckpt").write_bytes(b"junk")
        assert cli.main(["eval", "--config", str(tiny), "--out", str(tmp_path / "o"), "--checkpoint",
                         str(tmp_path / "junk.ckpt"), "--cycle", "synth:urban:1"]) == cli.EXIT_DATA

    def test_training_error_exit_code(self, tmp_path, monkeypatch, tiny):
        from hevtl import transfer
        from hevtl.errors import TrainingError

        def boom(*a, **k):
            raise TrainingError("non-finite parameters after update")

        monkeypatch.setattr(transfer, "train_expert", boom)
        assert cli.main(["train", "--config", str(tiny), "--out", str(tmp_path)]) == cli.EXIT_TRAINING

    def test_tl_ablation_curves(self, tiny, tmp_path):
        assert cli.main(["ablate", "tl", "--config", str(tiny), "--out", str(tmp_path)]) == 0
        for seed in (0, 1):
            for mode in ("cold", "warm"):
                cols = read_table(tmp_path / f"curve_{mode}_seed{seed}.csv")
                assert len(cols["episode"]) == 3
        manifest = json.loads((tmp_path / "manifest.json").read_text())
        assert manifest["config_hash"] == load_config(tiny).digest()

    def test_transfer(self, tiny, tmp_path):
        cli.main(["train", "--config", str(tiny), "--out", str(tmp_path / "t")])
        assert cli.main(["transfer", "--config", str(tiny), "--out", str(tmp_path / "s"),
                         "--checkpoint", str(tmp_path / "t" / "expert.ckpt")]) == 0
        assert (tmp_path / "s" / "student.ckpt").exists()

    def test_oracle_with_policy_gap(self, tiny, tmp_path):
        cli.main(["train", "--config", str(tiny), "--out", str(tmp_path / "t")])
        assert cli.main(["oracle", "solve", "--config", str(tiny), "--out", str(tmp_path / "o"),
                         "--cycle", "synth:urban:3:60", "--grid", "51x12",
                         "--checkpoint", str(tmp_path / "t" / "expert.ckpt")]) == 0
        rep = read_table(tmp_path / "o" / "oracle.csv")
        gap = 100 * (rep["policy_cost"][0] - rep["j_star"][0]) / rep["j_star"][0]
        assert rep["gap_pct"][0] == pytest.approx(gap, rel=1e-9)
        dp = Trajectory.from_csv(tmp_path / "o" / "dp_trajectory.csv")
        pol = Trajectory.from_csv(tmp_path / "o" / "policy_trajectory.csv")
        assert list(dp.columns) == list(pol.columns)
        assert -dp.total_reward == pytest.approx(rep["realized_cost"][0], rel=1e-9)

    def test_oracle_refine(self, tmp_path):
        assert cli.main(["oracle", "refine", "--out", str(tmp_path), "--cycle", "synth:urban:3:60",
                         "--ladder", "11,21"]) == 0
        assert len(read_table(tmp_path / "refine.csv")["n_soc"]) == 2

    def test_cycles_synth_validate(self, tmp_path):
        out = tmp_path / "c.csv"
        assert cli.main(["cycles", "synth", "--seed", "4", "--profile", "highway", "-o", str(out)]) == 0
        assert cli.main(["cycles", "validate", str(out)]) == 0

    def test_bad_cycle_spec(self, tmp_path):
        code = cli.main(["oracle", "solve", "--out", str(tmp_path), "--cycle", "synth:moon:1"])
        assert code == cli.EXIT_CONFIG
