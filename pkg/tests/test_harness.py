import json
import subprocess
import sys
from copy import deepcopy
from dataclasses import replace

import numpy as np
import pytest

from timingsim import harness as H
from timingsim.adversary import AdversaryConfig, make_agents
from timingsim.baselines import BaselineSpec
from timingsim.cli import SUBCOMMANDS, main
from timingsim.detectors import classify
from timingsim.evaluation import DriftSpec


def tiny(**kw) -> H.Scenario:
    """Small enough to train end to end in seconds."""
    base = dict(
        detectors=H.DetectorSettings(architectures=("statistical", "dense"), epochs={"dense": 4}, benign_traces=4,
                                     attack_traces=1, trace_scans=400),
        episodes=H.EpisodeCounts(train=3, eval=2, episode_scans=80, warmup_scans=32),
        minmax=H.MinMaxConfig(rounds=1, attacker_episodes=1, defender_epochs=1, eval_episodes=2,
                              defender_benign_traces=1),
    )
    base.update(kw)
    return H.Scenario(**base)


@pytest.fixture(scope="module")
def p1():
    return H.phase1_train_detectors(tiny(), 0)


class TestScenario:
    def test_roundtrip(self, tmp_path):
        sc = tiny(baseline=BaselineSpec("poisson_jitter"), drift=DriftSpec(gain_multiplier=1.1), seeds=[1, 2])
        H.save_scenario(sc, tmp_path / "s.json")
        back = H.load_scenario(tmp_path / "s.json")
        assert back.to_dict() == sc.to_dict()

    def test_empty_seeds(self):
        with pytest.raises(ValueError):
            H.Scenario(seeds=[])

    def test_missing_file(self, tmp_path):
        with pytest.raises(H.HarnessError) as e:
            H.load_scenario(tmp_path / "nope.json")
        assert e.value.code == "config_missing"

    @pytest.mark.parametrize("doc,code", [
        ({"format": "other", "version": 1}, "config_invalid"),
        ({"format": H.SCENARIO_FORMAT, "version": 99}, "config_version"),
        ({"format": H.SCENARIO_FORMAT, "version": 1, "bogus": 1}, "config_invalid"),
        ({"format": H.SCENARIO_FORMAT, "version": 1, "plant": {"kp": 1, "nope": 2}}, "config_invalid"),
        ({"format": H.SCENARIO_FORMAT, "version": 1, "adversary": {"Gamma": -1}}, "config_invalid"),
    ])
    def test_invalid_documents(self, doc, code):
        with pytest.raises(H.HarnessError) as e:
            H.Scenario.from_dict(doc)
        assert e.value.code == code

    def test_drift_tier_by_name(self):
        sc = H.Scenario.from_dict({"format": H.SCENARIO_FORMAT, "version": 1, "drift": "medium"})
        assert sc.drift.scan_jitter_p2p == 6.0

    def test_out_dir_env_override(self, monkeypatch, tmp_path):
        monkeypatch.setenv(H.OUT_ENV, str(tmp_path))
        assert H.Scenario(out_dir="elsewhere").output_dir == tmp_path

    def test_minmax_counts(self):
        with pytest.raises(ValueError):
            H.MinMaxConfig(attacker_episodes=0)

    def test_seed_streams_disjoint(self):
        train = set(H.trace_seeds(0, 10)) | set(H.trace_seeds(0, 10, attack=True))
        assert not train & set(H.eval_seeds(0, 30))
        assert not (train | set(H.eval_seeds(0, 30))) & set(H.defender_seeds(0, 12))


class TestPhase1:
    def test_report_fields(self, p1):
        assert [r["detector"] for r in p1.report] == p1.suite.names
        assert all(0 <= r["recall"] <= 1 for r in p1.report)
        assert "recall" in p1.table()

    def test_zero_attack_traces_refused(self):
        sc = tiny()
        sc.detectors.attack_traces = 0
        with pytest.raises(H.HarnessError) as e:
            H.phase1_train_detectors(sc, 0)
        assert e.value.code == "no_attack_traces"

    def test_deterministic_report(self, p1, tmp_path):
        a = H.phase1_train_detectors(tiny(), 0, tmp_path / "a")
        b = H.phase1_train_detectors(tiny(), 0, tmp_path / "b")
        for name in ("phase1_report.json", "detectors.json", "phase1_table.txt"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
        assert a.report == p1.report

    def test_calibration_on_held_out_benign(self, p1):
        # the held-out trace alarms at most a few points above the target rate
        sc = tiny()
        held = H.benign_traces(sc, 0)[-1]
        w, _ = p1.suite.windows(held)
        for d in p1.suite.detectors:
            assert classify(d.score_windows(w), d.tau, d.n_hysteresis).mean() <= 0.1


class TestPhase2:
    def test_curve_persisted(self, p1, tmp_path):
        res = H.phase2_train_adversary(tiny(), p1.suite, 0, out_dir=tmp_path)
        assert len(res.curve.rewards) == 3
        lines = (tmp_path / "curve_lowslow_black_dual.csv").read_text().splitlines()
        assert lines[0].startswith("episode") and len(lines) == 4

    def test_suite_sandboxed(self, p1):
        before = deepcopy(p1.suite.to_dict())
        H.phase2_train_adversary(tiny(), p1.suite, 0)
        assert p1.suite.to_dict() == before

    def test_nan_reward_aborts(self, p1, monkeypatch):
        import timingsim.harness as mod

        def boom(*a, **k):
            raise FloatingPointError("non-finite reward in episode 0")
        monkeypatch.setattr(mod, "train", boom)
        with pytest.raises(H.HarnessError) as e:
            H.phase2_train_adversary(tiny(), p1.suite, 0)
        assert e.value.code == "nan_reward" and e.value.details["seed"] == 0

    def test_evaluation_report(self, p1):
        agents = H.phase2_train_adversary(tiny(), p1.suite, 0).agents
        rep = H.evaluate_agents(tiny(), agents, p1.suite, 0)
        assert set(rep.recall) == set(p1.suite.names)
        assert 0 <= rep.stealth <= 1 and rep.stealth_ci[0] <= rep.stealth_ci[1]
        assert rep.flag_rate == max(rep.flag_rates.values())

    def test_zero_budget_is_benign_impact(self, p1):
        sc = tiny(adversary=AdversaryConfig(Gamma=0))
        agents = make_agents(sc.adversary, len(p1.suite.detectors), seed=0)
        rep = H.evaluate_agents(sc, agents, p1.suite, 0)
        assert rep.delta_throughput == 0.0 and rep.delta_cycles == 0.0

    def test_baseline_bench(self, p1):
        rep = H.bench_baseline(tiny(), p1.suite, BaselineSpec("random_delay"), 0)
        assert set(rep.flag_rates) == set(p1.suite.names)

    def test_baseline_required(self, p1):
        with pytest.raises(H.HarnessError):
            H.bench_baseline(tiny(), p1.suite, None, 0)


class TestPhase3:
    def test_identity_drift_reproduces_phase2(self, p1):
        sc = tiny()
        agents = H.phase2_train_adversary(sc, p1.suite, 0).agents
        fresh = H.fresh_suite(sc, DriftSpec(), 0)
        assert fresh.to_dict() == p1.suite.to_dict()
        key = (sc.adversary.strategy, sc.adversary.knowledge)
        out = H.phase3_ooc_eval(sc, {key: agents}, fresh, DriftSpec(), 0)
        direct = H.evaluate_agents(sc, agents, p1.suite, 0)
        assert out["lowslow/black"].to_dict() == direct.to_dict()

    def test_tag_remap(self):
        assert H.tag_remap(0) is None
        m = H.tag_remap(1)
        a, b = H.REMAP_PAIRS[0]
        assert m[a] == b and m[b] == a


@pytest.fixture(scope="module")
def agents(p1):
    return H.phase2_train_adversary(tiny(), p1.suite, 0).agents


class TestMinMax:
    def test_zero_rounds_unchanged(self, p1, agents):
        res = H.minmax_train(tiny(), H.MinMaxConfig(rounds=0), p1.suite, agents, p1.benign_windows, 0)
        assert res.rounds == [] and res.suite.to_dict() == p1.suite.to_dict()

    def test_bookkeeping(self, p1, agents):
        cfg = H.MinMaxConfig(rounds=2, attacker_episodes=1, defender_epochs=1, eval_episodes=2, defender_benign_traces=1)
        res = H.minmax_train(tiny(), cfg, p1.suite, agents, p1.benign_windows, 0)
        assert len(res.rounds) == 2
        for r in res.rounds:
            assert r.L == pytest.approx(np.mean(r.episode_rewards) - np.mean(list(r.recalls.values())), abs=1e-15)
            d = r.to_dict()
            assert d["L"] == d["R_attack"] - d["R_detect"]

    def test_recomputed_from_traces(self, p1, agents):
        # replay round 0 by hand with the same seeds
        cfg = H.MinMaxConfig(rounds=1, attacker_episodes=1, defender_epochs=1, eval_episodes=2, defender_benign_traces=1)
        res = H.minmax_train(tiny(), cfg, p1.suite, agents, p1.benign_windows, 0)
        env = tiny().env(deepcopy(p1.suite))
        rng = np.random.default_rng(0)
        traces = [deepcopy(agents).episode(env, rng, 500_000 + i, learn=False) for i in range(2)]
        assert res.rounds[0].episode_rewards == [t.mean_reward for t in traces]
        assert res.rounds[0].recalls == H.suite_recalls(p1.suite, traces)

    def test_inputs_not_mutated(self, p1, agents):
        before = p1.suite.to_dict()
        H.minmax_train(tiny(), tiny().minmax, p1.suite, agents, p1.benign_windows, 0)
        assert p1.suite.to_dict() == before


class TestReporting:
    def test_summary_table(self, p1):
        agents = H.phase2_train_adversary(tiny(), p1.suite, 0).agents
        rep = H.evaluate_agents(tiny(), agents, p1.suite, 0)
        text = H.summary_table({"lowslow/black": rep})
        assert "stealth" in text and "lowslow/black" in text

    def test_empty(self):
        assert H.summary_table({}) == "(no results)\n"


def write_tiny(tmp_path):
    path = tmp_path / "tiny.json"
    H.save_scenario(replace(tiny(), out_dir=str(tmp_path / "out")), path)
    return path


class TestCli:
    def test_help(self, capsys):
        assert main(["--help"]) == 0
        out = capsys.readouterr().out
        assert all(c in out for c in SUBCOMMANDS)

    def test_module_entry_point(self):
        r = subprocess.run([sys.executable, "-m", "timingsim", "--help"], capture_output=True, text=True)
        assert r.returncode == 0 and "train-detectors" in r.stdout

    def test_missing_config(self, tmp_path, capsys):
        code = main(["train-detectors", "--config", str(tmp_path / "absent.json")])
        err = json.loads(capsys.readouterr().err)
        assert code != 0 and err["error"] == "config_missing"

    def test_unknown_flag(self, capsys):
        assert main(["train-detectors", "--frobnicate"]) != 0
        assert json.loads(capsys.readouterr().err)["error"] == "usage"

    def test_bad_strategy(self, capsys):
        assert main(["train-adversary", "--strategy", "teleport"]) != 0

    def test_pipeline_smoke(self, tmp_path, capsys):
        cfg = write_tiny(tmp_path)
        out = tmp_path / "out"
        for cmd in (["train-detectors"], ["bench-baseline", "--kind", "periodic_jitter"], ["train-adversary"],
                    ["train-adversary", "--single", "--knowledge", "grey"], ["minmax"], ["report"]):
            assert main(cmd + ["--config", str(cfg), "--seed", "0"]) == 0, cmd
        seed_dir = out / "seed_0"
        for name in ("phase1_report.json", "detectors.json", "phase1_table.txt", "baseline_periodic_jitter.json",
                     "curve_lowslow_black_dual.csv", "phase2_lowslow_black.json", "phase2_lowslow_grey_single.json",
                     "minmax_static.json"):
            assert (seed_dir / name).is_file(), name
        summary = (out / "summary.txt").read_text()
        assert "seed_0/phase2_lowslow_black:lowslow/black" in summary

    def test_byte_identical_reruns(self, tmp_path):
        files = []
        for run in ("a", "b"):
            out = tmp_path / run
            assert main(["train-adversary", "--config", str(write_tiny(tmp_path)), "--out", str(out)]) == 0
            files.append({p.relative_to(out): p.read_bytes() for p in out.rglob("*") if p.is_file()
                          and p.name != "scenario.json"})
        assert files[0] == files[1] and len(files[0]) >= 4
