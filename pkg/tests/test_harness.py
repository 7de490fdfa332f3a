from __future__ import annotations

import json
import math
import re

import numpy as np
import pytest
from click.testing import CliRunner

from neurosplit.cli import main
from neurosplit.harness import (
    PRESETS,
    ConfigError,
    ExperimentConfig,
    emit_plot,
    get_reference,
    lif_exact,
    load_config,
    preset,
    relative_l2_error,
    run_experiment,
    spike_times,
)
from neurosplit.models import CurrentSource, LifParams
from neurosplit.net import Architecture
from neurosplit.pinn import TrainConfig
from neurosplit.splitting import MarchConfig
from neurosplit.trajectory import read_csv


def tiny_lif(name="tiny", iters=30, **kw) -> ExperimentConfig:
    tc = TrainConfig(arch=Architecture(2, 5), max_iters=iters, lr=1e-2, log_every=5)
    march = MarchConfig(T=0.05, J=2, points=5, train=(tc,))
    return ExperimentConfig(name, "lif", "pinn", march, CurrentSource.constant(0.1), **kw)


def tiny_hh(scheme="rk4") -> ExperimentConfig:
    march = MarchConfig(T=1.0, J=5, points=5, backend="rk4")
    return ExperimentConfig("tiny-hh", "hh", scheme, march, CurrentSource.constant(10.0),
                            {"beta_m_decay": 18.0}, reference={"p": 6})


def test_relative_l2_examples():
    assert relative_l2_error([1.0, 0.0], [1.0, 0.0]) == 0.0
    assert relative_l2_error([3.0, 4.0], [0.0, 0.0]) == 1.0
    assert relative_l2_error([1.0, 1.0], [1.1, 0.9]) == pytest.approx(0.1)
    with pytest.raises(ValueError):
        relative_l2_error([0.0, 0.0], [1.0, 1.0])
    with pytest.raises(ValueError):
        relative_l2_error([1.0], [1.0, 2.0])


def test_config_validation():
    march = MarchConfig(T=1.0, J=1)
    cur = CurrentSource.constant(0.0)
    with pytest.raises(ConfigError):
        ExperimentConfig("x", "lif", "splitting-fpinn", march, cur)
    with pytest.raises(ConfigError):
        ExperimentConfig("x", "fohh", "splitting-pinn", march, cur, orders=(0.8,) * 4)
    with pytest.raises(ConfigError):
        ExperimentConfig("x", "fohh", "splitting-fpinn", march, cur)
    with pytest.raises(ConfigError):
        ExperimentConfig("x", "hh", "splitting-pinn", march, cur, threshold=True)
    with pytest.raises(ConfigError):
        ExperimentConfig("x", "lif", "pinn", march, cur, params={"gain": 2})
    with pytest.raises(ConfigError):
        ExperimentConfig("x", "neuron", "pinn", march, cur)


def test_config_roundtrip_and_hash(tmp_path):
    cfg = preset("fohh-0.6")
    back = ExperimentConfig.from_dict(json.loads(json.dumps(cfg.to_dict())))
    assert back == cfg and back.hash() == cfg.hash()
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg.to_dict()))
    assert load_config(path) == cfg
    # output location and seed list do not change what is computed
    from dataclasses import replace
    assert replace(cfg, out="elsewhere", seeds=(3, 4)).hash() == cfg.hash()
    assert replace(cfg, sweeps=5).hash() != cfg.hash()
    path.write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(path)


@pytest.mark.parametrize("scale", ["desk", "paper"])
def test_every_preset_builds(scale):
    assert len(PRESETS) == 8
    for name in PRESETS:
        cfg = preset(name, scale)
        assert cfg.name == name
        assert cfg.march.T > 0 and cfg.march.J >= 1
    with pytest.raises(ConfigError):
        preset("nope")
    with pytest.raises(ConfigError):
        preset("lif", "huge")


def test_paper_scale_settings():
    hh = preset("hh-step", "paper")
    assert hh.march.J == 800 and hh.march.points == 40
    assert hh.march.train[0].max_iters == 20000
    assert hh.march.train[1].arch.activation == "sin" and hh.march.train[1].optimizer == "adamax"
    assert preset("fohh-0.4", "paper").march.train[0].max_iters == 20000
    assert preset("fohh-0.8", "paper").march.train[0].max_iters == 70000


def test_lif_exact_response():
    p = LifParams()
    t = np.linspace(0, 0.5, 101)
    v, spikes = lif_exact(p, CurrentSource.constant(0.1), t)
    np.testing.assert_allclose(v, 0.51 * (1 - np.exp(-t / p.tau)), rtol=1e-13, atol=1e-15)
    assert spikes == []
    v, spikes = lif_exact(p, CurrentSource.constant(0.3), np.linspace(0, 0.2, 2001), threshold=True)
    isi = np.diff(spikes)
    expected = p.tau * math.log(1.53 / 0.53)
    np.testing.assert_allclose(isi, expected, rtol=1e-12)
    assert np.all(v < p.v_th + 1e-12)


def test_lif_exact_piecewise_current_is_continuous():
    p = LifParams()
    cur = CurrentSource.piecewise([(0.05, 0.1, 0.2)])
    t = np.array([0.05 - 1e-12, 0.05, 0.1 - 1e-12, 0.1])
    v, _ = lif_exact(p, cur, t)
    assert abs(v[1] - v[0]) < 1e-9 and abs(v[3] - v[2]) < 1e-9


def test_spike_times_interpolates():
    t = np.array([0.0, 1.0, 2.0, 3.0, 4.0])
    v = np.array([-1.0, 1.0, -1.0, -3.0, 1.0])
    np.testing.assert_allclose(spike_times(t, v), [0.5, 3.75])


def test_reference_cache_roundtrip(tmp_path):
    cfg = tiny_hh()
    a = get_reference(cfg, tmp_path)
    b = get_reference(cfg, tmp_path)
    assert not a.from_cache and b.from_cache
    assert a.path == b.path and a.kind == "collocation"
    t = np.linspace(0, 1, 23)
    assert a.evaluate(t).tobytes() == b.evaluate(t).tobytes()
    lif = get_reference(tiny_lif(), tmp_path)
    assert lif.kind == "analytic"


def test_run_experiment_outputs(tmp_path):
    cfg = tiny_lif(seeds=(0, 1))
    report = run_experiment(cfg, out=tmp_path)
    root = tmp_path / "tiny"
    for f in ("config.json", "errors.csv", "solution-v.svg", "abs-error-v.svg", "loss.svg",
              "seed-0/trajectory.csv", "seed-1/losses.csv"):
        assert (root / f).exists(), f
    assert set(report.train) == {"v"} and report.train_std["v"] > 0
    assert len(report.per_seed) == 2
    assert "v" in report.test
    traj = read_csv(root / "seed-0" / "trajectory.csv")
    assert traj.names == ("v",)


def test_resume_reuses_matching_runs(tmp_path):
    cfg = tiny_lif()
    run_experiment(cfg, out=tmp_path, plots=False)
    path = tmp_path / "tiny" / "seed-0" / "trajectory.csv"
    stamp = path.stat().st_mtime_ns
    again = run_experiment(cfg, out=tmp_path, resume=True, plots=False)
    assert path.stat().st_mtime_ns == stamp
    assert again.train == run_experiment(cfg, out=tmp_path, plots=False).train
    run_experiment(tiny_lif(iters=31), out=tmp_path, resume=True, plots=False)
    assert path.stat().st_mtime_ns != stamp


def test_reference_scheme_copies_cache(tmp_path):
    cfg = tiny_hh("reference")
    report = run_experiment(cfg, out=tmp_path)
    assert (tmp_path / "tiny-hh" / "reference.csv").exists()
    assert report.outputs["from_cache"] is False
    assert run_experiment(cfg, out=tmp_path).outputs["from_cache"] is True


def test_rk4_scheme_against_collocation(tmp_path):
    report = run_experiment(tiny_hh(), out=tmp_path, plots=False)
    assert report.train["v"] < 1e-6


def polylines(svg: str) -> int:
    return len(re.findall(r"<polyline", svg))


def test_emit_plot_structure(tmp_path):
    x = np.linspace(0, 1, 50)
    one = emit_plot([("a", x, np.sin(x))], tmp_path / "one.svg").read_text()
    assert polylines(one) == 1 and 'class="legend"' not in one
    two = emit_plot([("a", x, x), ("b", x, 2 * x)], tmp_path / "two.svg").read_text()
    assert polylines(two) == 2 and two.count('<text class="legend"') == 2
    with pytest.raises(ValueError):
        emit_plot([], tmp_path / "none.svg")
    with pytest.raises(ValueError):
        emit_plot([("a", x, x[:-1])], tmp_path / "ragged.svg")


def test_emit_plot_log_axis(tmp_path):
    x = np.arange(1, 101.0)
    loss = np.geomspace(1.0, 1e-6, 100)
    svg = emit_plot([("loss", x, loss)], tmp_path / "loss.svg").read_text()
    assert ">1e-6<" in svg and ">1e0<" in svg
    lin = emit_plot([("v", x, np.linspace(-70, 30, 100))], tmp_path / "v.svg").read_text()
    assert ">1e" not in lin


def test_cli_compare_and_exit_codes(tmp_path):
    runner = CliRunner()
    cfg = tiny_lif()
    cfg_path = tmp_path / "tiny.json"
    cfg_path.write_text(json.dumps(cfg.to_dict()))
    res = runner.invoke(main, ["simulate", str(cfg_path), "--out", str(tmp_path), "--no-plots"])
    assert res.exit_code == 0, res.output
    assert "relative L2" in res.output and "over 5 seed(s)" in res.output
    res = runner.invoke(main, ["simulate", str(cfg_path), "--out", str(tmp_path), "--no-plots",
                               "--seed", "2", "--seeds", "1"])
    assert res.exit_code == 0 and "over 1 seed(s)" in res.output
    traj = tmp_path / "tiny" / "seed-0" / "trajectory.csv"
    res = runner.invoke(main, ["compare", str(traj), str(traj)])
    assert res.exit_code == 0 and "v: 0.000000e+00" in res.output

    res = runner.invoke(main, ["simulate", "no-such-preset"])
    assert res.exit_code == 1
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({**cfg.to_dict(), "scheme": "splitting-fpinn"}))
    assert runner.invoke(main, ["simulate", str(bad)]).exit_code == 1


def test_cli_divergence_exit_code(tmp_path, monkeypatch):
    import neurosplit.cli as cli
    from neurosplit.net import DivergenceError

    def boom(*args, **kwargs):
        raise DivergenceError("non-finite loss", 7)

    monkeypatch.setattr(cli, "run_experiment", boom)
    res = CliRunner().invoke(main, ["simulate", "lif", "--out", str(tmp_path)])
    assert res.exit_code == 2 and "diverged" in res.output


def test_cli_reference(tmp_path):
    runner = CliRunner()
    res = runner.invoke(main, ["reference", "lif", "--out", str(tmp_path)])
    assert res.exit_code == 0 and "computed analytic reference" in res.output
    res = runner.invoke(main, ["reference", "lif", "--out", str(tmp_path)])
    assert "cached" in res.output
