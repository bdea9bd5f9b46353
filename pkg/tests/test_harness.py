import json

import numpy as np
import pytest

from resrl import cli, harness
from resrl.agents import DdpgAgent, NonFiniteError
from resrl.envs import pendulum_env
from resrl.harness import ConfigError, ExperimentConfig, build_config, evaluate, parse_value, run_experiment
from resrl.metrics import (
    EvalRecord, add_improvement, auc, auc_improvement, read_eval_csv, summarize, summarize_dir,
    write_eval_csv,
)
from resrl.seeding import STREAMS, stream, streams

TINY = dict(steps=300, eval_interval=100, eval_episodes=3, warmup=50, batch_size=16, hidden=(8,))


class TestAuc:
    def test_hand_value(self):
        assert auc([(0, 0.0), (1, 2.0), (3, 2.0)]) == 5.0

    def test_rectangle_and_triangle(self):
        assert auc([(0, 3.0), (40, 3.0)]) == 120.0
        assert auc([(0, 0.0), (10, 5.0), (40, 20.0)]) == 400.0

    def test_matches_numpy_trapezoid(self, rng):
        steps = np.cumsum(rng.integers(1, 50, size=20))
        values = rng.normal(size=20) * 100
        assert auc(list(zip(steps, values))) == pytest.approx(np.trapezoid(values, steps), rel=1e-12)

    def test_records_and_non_finite_rows(self):
        recs = [EvalRecord(0, [1.0, 3.0]), EvalRecord(10, [float("nan")], status="DIVERGED"), EvalRecord(20, [4.0])]
        assert auc(recs) == pytest.approx(0.5 * (2.0 + 4.0) * 20)

    def test_errors(self):
        with pytest.raises(ValueError):
            auc([(0, 1.0)])
        with pytest.raises(ValueError):
            auc([(0, 1.0), (0, 2.0)])

    def test_improvement(self):
        assert auc_improvement(-7.5, -7.5) == 0.0
        assert auc_improvement(120.0, 100.0) == pytest.approx(0.2)
        assert auc_improvement(-80.0, -100.0) == pytest.approx(-0.2)
        with pytest.raises(ZeroDivisionError):
            auc_improvement(1.0, 0.0)


class TestRecordsAndCsv:
    def test_stderr(self):
        rec = EvalRecord(5, [1.0, 2.0, 3.0, 4.0])
        assert rec.mean_return == 2.5
        assert rec.stderr == pytest.approx(np.std([1, 2, 3, 4], ddof=1) / 2)
        assert EvalRecord(0, [7.0]).stderr == 0.0

    def test_round_trip(self, tmp_path):
        recs = [EvalRecord(0, [-1.0 / 3.0, 2.0]), EvalRecord(100, [0.1], status="TIMEOUT")]
        path = tmp_path / "seed_0.csv"
        write_eval_csv(path, recs)
        first = path.read_bytes()
        write_eval_csv(path, recs)
        assert path.read_bytes() == first
        rows = read_eval_csv(path)
        assert rows[0][1] == recs[0].mean_return and rows[1][3] == "TIMEOUT"
        assert first.decode().splitlines()[0] == "step,mean_return,stderr,status"

    def test_bad_header(self, tmp_path):
        path = tmp_path / "x.csv"
        path.write_text("a,b\n")
        with pytest.raises(ValueError):
            read_eval_csv(path)


class TestSummary:
    def test_two_seeds(self):
        s = summarize({0: [(0, 1.0), (10, 3.0)], 1: [(0, 3.0), (10, 5.0), (20, 9.0)]})
        assert s["steps"] == [0, 10]
        assert s["mean_return"] == [2.0, 4.0]
        assert s["stderr"] == pytest.approx([1.0, 1.0])
        assert s["auc"]["per_seed"] == {"0": 20.0, "1": 40.0 + 70.0}
        assert s["auc"]["mean"] == pytest.approx(65.0)
        assert s["auc"]["of_mean_curve"] == 30.0
        assert s["status"] == {"0": "OK", "1": "OK"}

    def test_zero_stderr_cases(self):
        curve = [(0, 1.5), (10, -2.0)]
        assert summarize({0: curve})["stderr"] == [0.0, 0.0]
        assert summarize({k: curve for k in range(5)})["stderr"] == [0.0, 0.0]

    def test_matches_direct_computation(self, rng):
        values = rng.normal(size=(5, 7)) * 50
        s = summarize({k: list(zip(range(0, 70, 10), values[k])) for k in range(5)})
        np.testing.assert_allclose(s["mean_return"], values.mean(axis=0), rtol=1e-12)
        np.testing.assert_allclose(s["stderr"], values.std(axis=0, ddof=1) / np.sqrt(5), rtol=1e-12)

    def test_dir_and_improvement(self, tmp_path):
        for name, shift in (("base", 0.0), ("cand", 1.0)):
            (tmp_path / name).mkdir()
            for seed in (0, 1):
                write_eval_csv(tmp_path / name / f"seed_{seed}.csv",
                               [EvalRecord(0, [1.0 + shift + seed]), EvalRecord(10, [3.0 + shift + seed])])
        s = summarize_dir(tmp_path / "cand", tmp_path / "base")
        base = summarize_dir(tmp_path / "base")
        assert s["auc_improvement"]["of_mean"] == pytest.approx((s["auc"]["mean"] - base["auc"]["mean"]) / base["auc"]["mean"])
        assert set(s["auc_improvement"]["per_seed"]) == {"0", "1"}
        with pytest.raises(FileNotFoundError):
            summarize_dir(tmp_path)

    def test_add_improvement_in_place(self):
        a = summarize({0: [(0, 2.0), (1, 2.0)]})
        b = summarize({0: [(0, 1.0), (1, 1.0)]})
        assert add_improvement(a, b)["auc_improvement"]["of_mean"] == pytest.approx(1.0)


class TestSeeding:
    def test_streams_are_named_and_reproducible(self):
        a, b = streams(3), streams(3)
        assert set(a) == set(STREAMS)
        for name in STREAMS:
            assert a[name].random() == b[name].random()
        assert stream(3, "noise").random() != stream(3, "planning").random()
        assert stream(3, "noise").random() != stream(4, "noise").random()


class TestConfig:
    def test_parse_value_types(self):
        assert parse_value("seeds", "0, 2,5") == (0, 2, 5)
        assert parse_value("steps", "3e4") == 30000
        assert parse_value("tau", "0.01") == 0.01
        assert parse_value("huber", "no") is False
        assert parse_value("eta", "default") is None
        assert parse_value("variant", " bi_res ") == "bi_res"

    @pytest.mark.parametrize("name,text", [("steps", "many"), ("huber", "maybe"), ("nope", "1")])
    def test_parse_errors_name_the_field(self, name, text):
        with pytest.raises(ConfigError, match=name):
            parse_value(name, text)

    def test_validation(self):
        for kw in (dict(kind="offline"), dict(seeds=()), dict(steps=0), dict(env="cartpole"),
                   dict(variant="td3"), dict(kind="policy_eval", env="pendulum"),
                   dict(kind="model_based", model="ensemble"), dict(kind="model_based", unroll_k=0)):
            with pytest.raises(ConfigError):
                ExperimentConfig(**kw)

    def test_default_eta(self):
        assert ExperimentConfig(variant="bi_res").resolved_eta() == 0.05
        assert ExperimentConfig(variant="res").resolved_eta() == 0.0
        assert ExperimentConfig(variant="bi_res", eta=0.2).agent_config().eta == 0.2

    def test_config_file_and_overrides(self, tmp_path):
        path = tmp_path / "run.ini"
        path.write_text("[run]\nsteps = 500\nseeds = 1,2\n\n[agent]\nvariant = res\nhidden = 16,16\n")
        cfg = build_config(harness.read_config_file(path), {"steps": 700})
        assert (cfg.steps, cfg.seeds, cfg.variant, cfg.hidden) == (700, (1, 2), "res", (16, 16))
        with pytest.raises(ConfigError):
            harness.read_config_file(tmp_path / "missing.ini")


class TestEvaluate:
    def test_is_pure_and_repeatable(self):
        rngs = streams(0)
        env = pendulum_env()
        agent = DdpgAgent(3, 1, env.action_low, env.action_high,
                          ExperimentConfig(**TINY).agent_config(), rngs)
        starts = np.array([env.initial_state(np.random.default_rng(i)) for i in range(3)])
        noise_state = agent.noise.rng.bit_generator.state
        params = agent.actor.online.params.copy()
        first = evaluate(agent, env, starts)
        assert evaluate(agent, env, starts) == first
        assert agent.noise.rng.bit_generator.state == noise_state
        assert len(agent.buffer) == 0 and env.state is None
        assert agent.actor.online.params.tobytes() == params.tobytes()

    def test_matches_stepping_the_environment(self):
        env = pendulum_env()
        agent = DdpgAgent(3, 1, env.action_low, env.action_high,
                          ExperimentConfig(**TINY).agent_config(), streams(1))
        start = env.initial_state(np.random.default_rng(0))
        total = 0.0
        s = env.reset(start)
        for _ in range(env.horizon):
            s, r, _, _ = env.step(agent.policy(s))
            total += r
        assert evaluate(agent, env, start[None])[0] == pytest.approx(total, rel=1e-12)


def files(directory):
    return {p.name: p.read_bytes() for p in sorted(directory.iterdir())}


class TestRunExperiment:
    @pytest.mark.parametrize("extra", [
        dict(kind="model_free", variant="bi_res"),
        dict(kind="model_based", env="point_mass", planner="dyna"),
        dict(kind="model_based", env="point_mass", planner="mve", model="oracle"),
        dict(kind="policy_eval", env="star", learner="residual_gradient", steps=2000, log_interval=500),
    ])
    def test_byte_identical_reruns(self, tmp_path, extra):
        outs = []
        for name in ("a", "b"):
            cfg = ExperimentConfig(**{**TINY, "seeds": (0, 1), **extra, "out": str(tmp_path / name)})
            run_experiment(cfg)
            outs.append(files(tmp_path / name))
        assert outs[0] == outs[1]
        assert {"seed_0.csv", "seed_1.csv", "summary.json"} <= set(outs[0])

    def test_parallel_workers_match_serial(self, tmp_path):
        for name, workers in (("serial", 1), ("parallel", 2)):
            run_experiment(ExperimentConfig(**{**TINY, "seeds": (0, 1), "workers": workers,
                                               "out": str(tmp_path / name)}))
        assert files(tmp_path / "serial") == files(tmp_path / "parallel")

    def test_curve_layout_and_summary(self, tmp_path):
        summary = run_experiment(ExperimentConfig(**{**TINY, "seeds": (3,), "out": str(tmp_path)}))
        rows = read_eval_csv(tmp_path / "seed_3.csv")
        assert [r[0] for r in rows] == [0, 100, 200, 300]
        data = json.loads((tmp_path / "summary.json").read_text())
        assert data["schema_version"] == 1 and data["status"] == {"3": "OK"}
        assert data["config"]["eta"] == 0.0 and "out" not in data["config"]
        assert len(data["per_episode_returns"]["3"][0]) == 3
        assert summary["results"][3].status == "OK"

    def test_divergence_is_recorded(self, tmp_path, monkeypatch):
        real = harness.train_step

        def flaky(agent, transition):
            if len(agent.buffer) >= 150:
                raise NonFiniteError("non-finite TD error in critic update")
            return real(agent, transition)

        monkeypatch.setattr(harness, "train_step", flaky)
        summary = run_experiment(ExperimentConfig(**{**TINY, "seeds": (0,), "out": str(tmp_path)}))
        rows = read_eval_csv(tmp_path / "seed_0.csv")
        assert rows[-1][3] == "DIVERGED" and np.isnan(rows[-1][1]) and rows[-1][0] == 151     # buffer holds 150 when step 151 trains
        assert summary["status"]["0"] == "DIVERGED"
        assert json.loads((tmp_path / "summary.json").read_text())["status"]["0"] == "DIVERGED"

    def test_time_limit(self, tmp_path):
        run_experiment(ExperimentConfig(**{**TINY, "seeds": (0,), "steps": 10**6, "time_limit": 0.5,
                                           "out": str(tmp_path)}))
        rows = read_eval_csv(tmp_path / "seed_0.csv")
        assert rows[-1][3] == "TIMEOUT"

    def test_verbose_diagnostics(self, tmp_path):
        run_experiment(ExperimentConfig(**{**TINY, "seeds": (0,), "verbose": True, "kind": "model_based",
                                           "env": "point_mass", "out": str(tmp_path)}))
        lines = (tmp_path / "diag_seed_0.csv").read_text().splitlines()
        assert lines[0].startswith("step,critic_delta")
        assert len(lines) == 1 + 300 - 50 + 1
        assert lines[-1].split(",")[-1] != ""     # model rmse at the eval step

    @pytest.mark.filterwarnings("ignore::resrl.objectives.RankDeficiencyWarning")
    def test_linear_reference(self, tmp_path):
        summary = run_experiment(ExperimentConfig(kind="policy_eval", env="star", steps=100, seeds=(0,),
                                                  out=str(tmp_path)))
        ref = summary["reference"]
        assert ref["msbe_min"] < 1e-20
        assert ref["td_fixed_point"] is None      # 8 features on 7 states: A is singular
        chain = run_experiment(ExperimentConfig(kind="policy_eval", env="random_chain", steps=100,
                                                seeds=(0,), out=str(tmp_path / "chain")))["reference"]
        assert len(chain["td_fixed_point"]) == len(chain["msbe_minimizer"])


class TestCli:
    def run(self, *argv):
        return cli.main([str(a) for a in argv])

    def test_eval_linear_and_summarize(self, tmp_path, capsys):
        out = tmp_path / "td"
        assert self.run("eval-linear", "--env", "star", "--steps", 500, "--seeds", "0,1", "--out", out) == 0
        assert "seed 0: CONVERGED" in capsys.readouterr().out
        assert (out / "seed_1.csv").exists()

    def test_train_then_summarize_with_baseline(self, tmp_path, capsys):
        common = ["--steps", 200, "--eval-interval", 100, "--warmup", 50, "--hidden", "8", "--eval-episodes", 2]
        assert self.run("train", "--seed", 0, "--out", tmp_path / "a", *common) == 0
        assert self.run("train", "--seed", 0, "--variant", "bi_res", "--out", tmp_path / "b", *common) == 0
        assert self.run("summarize", tmp_path / "b", "--baseline", tmp_path / "a",
                        "--out", tmp_path / "s.json") == 0
        assert "auc improvement" in capsys.readouterr().out
        assert "auc_improvement" in json.loads((tmp_path / "s.json").read_text())

    def test_config_file(self, tmp_path):
        ini = tmp_path / "c.ini"
        ini.write_text("[run]\nsteps = 200\neval_interval = 100\nwarmup = 50\nhidden = 8\nseeds = 2\n"
                       "[planning]\nplanner = mve\nmodel = oracle\n")
        assert self.run("plan", "--config", ini, "--env", "point_mass", "--out", tmp_path / "o") == 0
        cfg = json.loads((tmp_path / "o" / "summary.json").read_text())["config"]
        assert cfg["planner"] == "mve" and cfg["seeds"] == [2] and cfg["kind"] == "model_based"

    @pytest.mark.parametrize("argv", [
        ["train", "--no-such-flag"], ["train", "--steps", "lots"], ["bogus"], [],
        ["train", "--variant", "td3"], ["eval-linear", "--env", "pendulum"],
    ])
    def test_usage_errors_exit_1(self, argv, capsys):
        assert self.run(*argv) == 1
        assert capsys.readouterr().err

    def test_runtime_errors_exit_2(self, tmp_path, capsys):
        assert self.run("summarize", tmp_path / "empty") == 2
        assert "error" in capsys.readouterr().err


def test_shipped_configs_match_acceptance_settings():
    from pathlib import Path
    from test_acceptance import PENDULUM, POINT_MASS

    root = Path(__file__).resolve().parents[1] / "configs"
    for name, expected in (("pendulum_desk.ini", PENDULUM), ("point_mass_desk.ini", POINT_MASS)):
        cfg = build_config(harness.read_config_file(root / name))
        for key, value in expected.items():
            assert getattr(cfg, key) == value, (name, key)
