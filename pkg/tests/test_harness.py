import io
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from swarmfl import arena, cli, harness, learner
from swarmfl.harness import ExperimentConfig


def _tiny(duration=200.0, **kw):
    base = ExperimentConfig(
        world=arena.WorldConfig(duration=duration),
        train=learner.TrainConfig(epochs=2),
        validation_duration=100.0,
        validation_size=60,
    )
    return replace(base, **kw)


def test_defaults_match_reference_setup():
    c = ExperimentConfig()
    assert (c.world.n_robots, c.world.arena_side, c.world.duration) == (15, 5.0, 5000.0)
    assert (c.quorum_fraction, c.fee, c.threshold, c.expiration) == (0.5, 5.0, 0.05, 750.0)
    assert c.reward_weights == (1, 1, 1, 1, 1, -1, -1)
    assert (c.train_period, c.block_period, c.initial_tokens) == (100.0, 10.0, 21.0)


def test_config_roundtrip_and_validation():
    c = _tiny(byzantine_kind="smart", byzantine_count=3, security=False, expiration=250.0)
    assert harness.config_from_ini(harness.config_to_ini(c)) == c
    with pytest.raises(ValueError):
        replace(c, byzantine_count=16)
    with pytest.raises(ValueError):
        replace(c, train_period=100.05)
    with pytest.raises(ValueError):
        replace(c, byzantine_kind="sneaky")
    with pytest.raises(ValueError):
        harness.config_from_ini("[experiment]\nbogus = 1\n")


def test_average_loss_examples():
    rng = np.random.default_rng(0)
    pos = np.cumsum(rng.normal(0, 0.1, (30, 10, 2)), axis=1)
    val = learner.encode(pos)
    w = learner.init_weights(1)
    assert harness.average_loss([(w, 3), (w, 9)], val) == pytest.approx(learner.loss(w, val), rel=1e-12)
    ws = [learner.init_weights(s) for s in range(4)]
    ns = [5, 1, 7, 2]
    want = sum(n * learner.loss(x, val) for x, n in zip(ws, ns)) / sum(ns)
    assert harness.average_loss(list(zip(ws, ns)), val) == pytest.approx(want, rel=1e-12)


def test_tokens_gained_examples():
    start = [21.0] * 15
    assert harness.tokens_gained(start, start, set()) == (0.0, 0.0)
    end = list(start)
    end[4] += 14
    assert harness.tokens_gained(end, start, set())[0] == pytest.approx(14 / 15)
    end = list(start)
    end[0] -= 5
    end[9] += 2
    h, b = harness.tokens_gained(end, start, {0, 1})
    assert b == pytest.approx(-2.5) and h == pytest.approx(2 / 13)


def test_final_loss_window():
    R = harness.MetricsRow
    rows = [R(100, 1, 0.5, 0, 0, 1, 1), R(4600, 2, 0.2, 0, 0, 2, 2), R(4900, 3, 0.1, 0, 0, 3, 3),
            R(5000, 3, 0.1, 0, 0, 3, 3)]
    assert harness.final_loss(rows) == pytest.approx(0.15)
    assert harness.final_loss(rows[:1] + rows[-1:]) == 0.1


def test_zero_duration_gives_terminal_row():
    res = harness.run(_tiny(duration=0.0), seed=1)
    assert len(res.rows) == 1
    assert res.rows[0].round == 0 and res.rows[0].aggregations == 0 and res.rows[0].sim_time == 0.0


def test_run_is_deterministic_and_audits_clean(tmp_path):
    cfg = _tiny(byzantine_kind="faulty", byzantine_count=2)
    a = harness.run(cfg, seed=4, log_deliveries=True)
    b = harness.run(cfg, seed=4)
    ca, cb = io.StringIO(), io.StringIO()
    harness.write_metrics_csv(a.rows, ca)
    harness.write_metrics_csv(b.rows, cb)
    assert ca.getvalue() == cb.getvalue() and a.head == b.head
    assert a.rows[-1].aggregations >= 1
    out = harness.write_run(a, tmp_path / "r")
    report = harness.audit_run(out)
    assert report["ok"], report
    # tampering is detected
    text = (out / "metrics.csv").read_text().replace(",1,", ",2,", 1)
    (out / "metrics.csv").write_text(text)
    assert not harness.audit_run(out)["ok"]


def test_secured_run_conserves_tokens():
    cfg = _tiny(duration=300.0, byzantine_kind="faulty", byzantine_count=3)
    res = harness.run(cfg, seed=2)
    last = res.rows[-1]
    nz = 3
    assert last.tokens_honest * (15 - nz) + last.tokens_byz * nz + res.final_state.pool == pytest.approx(0, abs=1e-9)
    assert all(r.chain_bytes <= s.chain_bytes for r, s in zip(res.rows, res.rows[1:]))
    assert any(ev["event"] == "rejected" and ev.get("reason") == "outlier" for ev in res.events)


def test_suite_shapes(tmp_path):
    assert len(harness.suite_configs("exp1")) == 6
    assert [c.byzantine_count for c in harness.suite_configs("exp2-malicious")] == list(range(8))
    with pytest.raises(ValueError):
        harness.suite_configs("exp9")
    base = _tiny(duration=100.0)
    out = harness.experiment_suite("exp1", [0, 1], tmp_path / "a", base, cache_dir=tmp_path / "cache")
    summary = (out / "summary.csv").read_text().splitlines()
    assert len(summary) == 1 + 6
    assert len(list(out.glob("*_seed*.csv"))) == 12
    again = harness.experiment_suite("exp1", [0, 1], tmp_path / "b", base)
    assert (again / "summary.csv").read_text() == (out / "summary.csv").read_text()


def test_bootstrap_interval_brackets_median():
    vals = [1.0, 2.0, 3.0, 4.0, 10.0]
    lo, hi = harness.bootstrap_ci(vals)
    assert lo <= np.median(vals) <= hi
    assert harness.bootstrap_ci([2.0]) == (2.0, 2.0)


def test_cli_run_and_audit(tmp_path, capsys):
    ini = tmp_path / "c.ini"
    ini.write_text(harness.config_to_ini(_tiny(duration=100.0)))
    assert cli.main(["run", "--config", str(ini), "--seed", "3", "--out", str(tmp_path / "r")]) == 0
    assert cli.main(["audit", "--run", str(tmp_path / "r")]) == 0
    assert '"ok": true' in capsys.readouterr().out
    assert cli.main(["config"]) == 0
    assert "[experiment]" in capsys.readouterr().out


def test_cli_seed_lists(monkeypatch, tmp_path):
    assert cli._seeds("0-2,7") == [0, 1, 2, 7]
    assert set(harness.DEFAULT_REPETITIONS) == set(harness.SUITES)
    seen = {}
    monkeypatch.setattr(harness, "experiment_suite",
                        lambda name, seeds, out, base, **kw: seen.setdefault(name, seeds) and Path(out))
    cli.main(["suite", "--name", "exp3-smart", "--out", str(tmp_path)])
    cli.main(["suite", "--name", "exp1", "--seeds", "2-3", "--out", str(tmp_path)])
    assert seen == {"exp3-smart": list(range(18)), "exp1": [2, 3]}
