import json
import os

import numpy as np
import pytest

from papc.cli import main as cli_main
from papc.config import (ExperimentConfig, parse_config, parse_prox_spec,
                         parse_projector_spec, serialize_config)
from papc.errors import ConfigError
from papc.linop import write_matrix
from papc.runner import default_checkpoints, run_experiment, validate_only

BASIC = """
[problem]
name = lasso

[schedules]
gamma_kind = constant
gamma0 = auto
tau_kind = constant
tau_cap = auto

[noise]
kind = gaussian
sigma0 = 1.0
epsilon = 1.0
regime = almost-sure

[run]
horizon = 500
seeds = 0 1
checkpoints = log

[output]
dir = out
"""


class TestConfigParsing:
    def test_round_trip_is_identity(self):
        cfg = parse_config(BASIC)
        again = parse_config(serialize_config(cfg))
        assert cfg == again
        assert serialize_config(cfg) == serialize_config(again)

    def test_comments_and_blanks_ignored(self):
        cfg = parse_config("# top\n[problem]\nname = cls  # trailing\n\n[run]\nseeds = 3\n")
        assert cfg.problem == "cls"
        assert cfg.seeds == (3,)

    def test_empty_seeds_rejected(self):
        with pytest.raises(ConfigError):
            parse_config("[run]\nseeds = \n").validate()

    def test_unknown_section_rejected(self):
        with pytest.raises(ConfigError):
            parse_config("[wat]\nx = 1\n")

    def test_explicit_checkpoints(self):
        cfg = parse_config("[run]\ncheckpoints = 1 10 100\n")
        assert cfg.checkpoints == (1, 10, 100)

    def test_problem_params_pass_through(self):
        cfg = parse_config("[problem]\nname = lasso\ndim = 4\nweight = 0.7\n")
        assert cfg.problem_params == {"dim": "4", "weight": "0.7"}


class TestProxSpecs:
    def test_l1_tag(self):
        f = parse_prox_spec("l1(weight=0.5)", 3)
        assert f.prox(1.0, np.array([2.0, -0.2, 1.0]))[0] == pytest.approx(1.5)

    def test_box_tag(self):
        f = parse_prox_spec("box(lo=-1, hi=1)", 2)
        np.testing.assert_allclose(f.prox(1.0, np.array([5.0, -3.0])), [1.0, -1.0])

    def test_quadratic_tag(self, tmp_path):
        write_matrix(tmp_path / "D.txt", np.eye(2))
        write_matrix(tmp_path / "a.txt", np.array([[1.0], [2.0]]))
        f = parse_prox_spec("quadratic(D=D.txt, a=a.txt)", 2, base_dir=str(tmp_path))
        np.testing.assert_allclose(f.gradient(np.zeros(2)), [-1.0, -2.0])

    def test_unknown_tag(self):
        with pytest.raises(ConfigError):
            parse_prox_spec("mystery()", 2)


class TestProjectorSpecs:
    def test_full(self):
        P = parse_projector_spec("full", 3)
        x = np.array([1.0, 2.0, 3.0])
        np.testing.assert_array_equal(P(x), x)

    def test_matrix_and_basis(self, tmp_path):
        basis = np.array([[1.0], [0.0]])
        write_matrix(tmp_path / "b.txt", basis)
        P = parse_projector_spec("basis:b.txt", 2, base_dir=str(tmp_path))
        np.testing.assert_allclose(P(np.array([3.0, 4.0])), [3.0, 0.0])
        write_matrix(tmp_path / "p.txt", basis @ basis.T)
        P2 = parse_projector_spec("matrix:p.txt", 2, base_dir=str(tmp_path))
        np.testing.assert_allclose(P2(np.array([3.0, 4.0])), [3.0, 0.0])

    def test_averaging(self):
        P = parse_projector_spec("averaging:2", 4)
        np.testing.assert_allclose(P(np.array([1.0, 0.0, 3.0, 0.0])), [2.0, 0.0, 2.0, 0.0])

    def test_unknown(self):
        with pytest.raises(ConfigError):
            parse_projector_spec("diag:3", 3)


class TestRunner:
    def test_checkpoint_grid(self):
        cps = default_checkpoints(1000)
        assert cps[0] == 0 and cps[-1] == 999
        assert len(cps) >= 30

    def test_artifacts_and_reproducibility(self, tmp_path):
        cfg = parse_config(BASIC)
        out1 = str(tmp_path / "a")
        out2 = str(tmp_path / "b")
        r1 = run_experiment(cfg, out_dir=out1)
        r2 = run_experiment(cfg, out_dir=out2)
        assert r1.exit_code == 0 and r2.exit_code == 0
        for fname in ("seed_0_trace.csv", "seed_1_trace.csv", "seed_0_gap.csv",
                      "gap_mean.csv", "config.cfg"):
            b1 = open(os.path.join(out1, fname), "rb").read()
            b2 = open(os.path.join(out2, fname), "rb").read()
            assert b1 == b2, fname
        summary = json.load(open(os.path.join(out1, "summary.json")))
        assert summary["status"] == "ok"
        assert set(summary["seeds"]) == {"0", "1"}

    def test_trace_schema(self, tmp_path):
        cfg = parse_config(BASIC)
        res = run_experiment(cfg, out_dir=str(tmp_path / "t"))
        header = open(os.path.join(res.out_dir, "seed_0_trace.csv")).readline().strip()
        assert header == ("n,gamma_n,tau_n,primal_res,dual_res,fejer_phi,"
                          "dist_x_oracle,dist_v_oracle,grad_gap_partial_sum")

    def test_gap_schema(self, tmp_path):
        cfg = parse_config(BASIC)
        res = run_experiment(cfg, out_dir=str(tmp_path / "t"))
        header = open(os.path.join(res.out_dir, "seed_0_gap.csv")).readline().strip()
        assert header == "N,gap,bound,sum_gamma,slope_window"

    def test_rejected_schedule_exit_2(self, tmp_path):
        text = BASIC.replace("gamma0 = auto", "gamma0 = 100.0")
        res = run_experiment(parse_config(text), out_dir=str(tmp_path / "r"))
        assert res.exit_code == 2

    def test_force_overrides_rejection(self, tmp_path):
        text = BASIC.replace("gamma0 = auto", "gamma0 = 100.0").replace(
            "horizon = 500", "horizon = 5")
        res = run_experiment(parse_config(text), out_dir=str(tmp_path / "f"), force=True)
        assert res.exit_code in (0, 1)  # runs; may diverge, must not be rejected

    def test_validate_only(self):
        cert = validate_only(parse_config(BASIC))
        assert cert.ok

    def test_cls_deterministic_summary_reaches_oracle(self, tmp_path):
        text = """
[problem]
name = cls

[run]
horizon = 10000
seeds = 0
checkpoints = none
"""
        res = run_experiment(parse_config(text), out_dir=str(tmp_path / "cls"))
        assert res.exit_code == 0
        assert res.summary["max_terminal_dist_x"] <= 1e-8


class TestCustomProblems:
    def _write_data(self, tmp_path):
        rng = np.random.default_rng(0)
        write_matrix(tmp_path / "D.txt", np.eye(3) + 0.1 * rng.standard_normal((3, 3)))
        write_matrix(tmp_path / "a.txt", rng.standard_normal((3, 1)))

    def test_custom_single_runs(self, tmp_path):
        self._write_data(tmp_path)
        text = """
[problem]
name = custom
dim = 3
h = quadratic(A=D.txt, b=a.txt)
g = l1(weight=0.4)
L = identity
projector = full
sigma = 1.0

[run]
horizon = 300
seeds = 0
"""
        cfg = parse_config(text, base_dir=str(tmp_path))
        res = run_experiment(cfg, out_dir=str(tmp_path / "out"))
        assert res.exit_code == 0
        # oracle-relative columns are empty for custom problems
        row = open(os.path.join(res.out_dir, "seed_0_trace.csv")).read().splitlines()[1]
        assert row.endswith(",,,")

    def test_custom_composite_runs(self, tmp_path):
        self._write_data(tmp_path)
        text = """
[problem]
name = custom_composite
dim = 3
h = quadratic(A=D.txt, b=a.txt)
block1.g = l1(weight=0.3)
block1.L = identity
block1.omega = 0.6
block1.sigma = 1.0
block2.g = box_support(lo=-0.5, hi=0.5)
block2.L = identity
block2.omega = 0.4
block2.sigma = 1.0

[run]
horizon = 200
seeds = 0
"""
        cfg = parse_config(text, base_dir=str(tmp_path))
        res = run_experiment(cfg, out_dir=str(tmp_path / "out"))
        assert res.exit_code == 0

    def test_minibatch_noise_from_config(self, tmp_path):
        text = """
[problem]
name = lasso

[noise]
kind = minibatch
batch_schedule = 2

[run]
horizon = 200
seeds = 0
"""
        res = run_experiment(parse_config(text), out_dir=str(tmp_path / "mb"))
        assert res.exit_code == 0

    def test_minibatch_full_batch_matches_deterministic(self, tmp_path):
        batch = """
[problem]
name = lasso

[noise]
kind = minibatch
batch_schedule = 5

[run]
horizon = 100
seeds = 0
"""
        plain = batch.replace("kind = minibatch\nbatch_schedule = 5", "kind = none")
        r1 = run_experiment(parse_config(batch), out_dir=str(tmp_path / "b"))
        r2 = run_experiment(parse_config(plain), out_dir=str(tmp_path / "p"))
        d1 = r1.summary["seeds"]["0"]["terminal_dist_x"]
        d2 = r2.summary["seeds"]["0"]["terminal_dist_x"]
        assert d1 == pytest.approx(d2, abs=1e-12)

    def test_custom_rejects_nonsmooth_h(self, tmp_path):
        text = """
[problem]
name = custom
dim = 2
h = l1(weight=1.0)
g = zero
"""
        with pytest.raises(ConfigError):
            run_experiment(parse_config(text, base_dir=str(tmp_path)),
                           out_dir=str(tmp_path / "x"))


class TestCli:
    def test_zoo_list(self, capsys):
        assert cli_main(["zoo", "--list"]) == 0
        out = capsys.readouterr().out
        for name in ("cls", "lasso", "fused", "multi"):
            assert name in out

    def test_validate_ok(self, tmp_path, capsys):
        cfg_path = tmp_path / "c.cfg"
        cfg_path.write_text(BASIC)
        assert cli_main(["validate", "--config", str(cfg_path)]) == 0
        assert "PASS" in capsys.readouterr().out

    def test_validate_rejects(self, tmp_path, capsys):
        cfg_path = tmp_path / "c.cfg"
        cfg_path.write_text(BASIC.replace("gamma0 = auto", "gamma0 = 100.0"))
        assert cli_main(["validate", "--config", str(cfg_path)]) == 2

    def test_run_with_seed_override(self, tmp_path):
        cfg_path = tmp_path / "c.cfg"
        cfg_path.write_text(BASIC.replace("horizon = 500", "horizon = 50"))
        out = str(tmp_path / "out")
        code = cli_main(["run", "--config", str(cfg_path), "--out", out,
                         "--seed-override", "7"])
        assert code == 0
        assert os.path.exists(os.path.join(out, "seed_7_trace.csv"))

    def test_bad_config_exit_2(self, tmp_path, capsys):
        cfg_path = tmp_path / "c.cfg"
        cfg_path.write_text("[problem]\nname = unknown-problem\n")
        assert cli_main(["run", "--config", str(cfg_path), "--out",
                         str(tmp_path / "o")]) == 2
