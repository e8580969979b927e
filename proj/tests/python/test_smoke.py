"""Smoke tests for the python surface: every exposed operation runs and the
closed-form values match the C++ suites."""

import json
import math
import tempfile
from pathlib import Path

import numpy as np
import pytest

import pagoda


def test_marginal_params():
    scale, std = pagoda.marginal_params("ve", 3.0, 2.0)
    assert scale == 1.0 and std == 2.0
    scale, std = pagoda.marginal_params("vp", 2.0, 0.5 * math.log(3.0))
    assert scale == pytest.approx(1.0 / math.sqrt(3.0), abs=1e-12)
    assert std == pytest.approx(math.sqrt(2.0 / 3.0), abs=1e-12)
    with pytest.raises(Exception):
        pagoda.marginal_params("vp", 2.0, 2.5)


def test_edm_times_monotone():
    times = pagoda.edm_times(math.sqrt(3.0), 80)
    assert times[0] == pytest.approx(math.sqrt(3.0))
    assert times[-1] == pytest.approx(0.002)
    assert all(a > b for a, b in zip(times, times[1:]))


def test_ddim_flow_map_oracle():
    T = math.sqrt(3.0)
    x0 = np.array([[2.0]])
    z = pagoda.ddim_invert_analytic("ve", T, [0.0], [1.0], x0, steps=80)
    assert abs(z[0, 0] - 4.0) < 1e-3
    back = pagoda.ddim_generate_analytic("ve", T, [0.0], [1.0], z, steps=80)
    assert abs(back[0, 0] - 2.0) < 1e-3


def test_score_and_downsample():
    s = pagoda.analytic_gaussian_score("ve", 2.0, [0.0], [1.0], np.array([[4.0]]), math.sqrt(3.0))
    assert s[0, 0] == pytest.approx(-1.0, abs=1e-12)
    y = pagoda.downsample(np.array([[0.0, 2.0, 4.0, 6.0]]))
    assert y.tolist() == [[1.0, 5.0]]


def test_adaptive_lambda_and_guided_gaussian():
    assert pagoda.adaptive_lambda(4.0, 1.0, 0.2) == pytest.approx(0.8)
    mean, var = pagoda.guided_gaussian(1.0, 1.0, 0.0, 1.0, 2.0)
    assert mean == pytest.approx(2.0) and var == pytest.approx(1.0)


def test_slerp_properties():
    a, b = [1.0, 0.0], [0.0, 1.0]
    mid = pagoda.slerp(a, b, 0.5)
    assert mid[0] == pytest.approx(math.sqrt(0.5))
    for t in np.linspace(0, 1, 11):
        p = pagoda.slerp(a, b, float(t))
        assert np.hypot(*p) == pytest.approx(1.0, abs=1e-9)


def test_metrics():
    rng = np.random.default_rng(0)
    x = rng.normal(size=1000)
    assert pagoda.w1_sorted(list(x), list(x)) == 0.0
    a = rng.normal(size=(500, 2))
    assert pagoda.sliced_wasserstein(a, a) == pytest.approx(0.0, abs=1e-12)


def test_hurwitz():
    rep = pagoda.hurwitz_check(np.array([[-1.0, -1.0], [1.0, -1.0]]))
    assert rep["is_hurwitz"] and rep["max_real_part"] == pytest.approx(-1.0, abs=1e-9)
    rep = pagoda.hurwitz_check(np.array([[0.0, -1.0], [1.0, 0.0]]))
    assert not rep["is_hurwitz"]


def test_bounds_hold():
    for eps in (0.0, 0.1):
        for T in (1.0, 2.0):
            rep = pagoda.w2_bound_check(sigma=0.5, T=T, eps_dm=eps)
            assert rep["holds"] and rep["lhs"] <= rep["rhs"]
            rep = pagoda.w1_bound_check(sigma=0.5, T=T, eps_dm=eps)
            assert rep["holds"]


def test_optimality_dichotomy():
    pg = pagoda.optimality_gap("pagoda")
    kd = pagoda.optimality_gap("kd_gan")
    assert pg["min_tv"] == 0.0
    assert kd["min_tv"] > 0.0


def test_stability_dichotomy():
    ok = pagoda.simulate_altgd("linear", eta=1.0, steps=1500)
    assert ok["converged"]
    bad = pagoda.simulate_altgd("dirac_gan", eta=0.0, steps=1500)
    assert not bad["converged"]


def test_datasets_and_tensor_io():
    assert "bimodal1d" in pagoda.dataset_names()
    x = pagoda.sample_dataset("eight-gaussians-2d", 128, seed=1)
    assert x.shape == (128, 2)
    with tempfile.TemporaryDirectory() as tmp:
        path = str(Path(tmp) / "t.pgts")
        pagoda.save_tensor(path, x)
        y = pagoda.load_tensor(path)
        assert np.array_equal(x, y)


def test_run_command_pipeline():
    with tempfile.TemporaryDirectory() as tmp:
        cfg = {
            "dataset": "gauss1d",
            "seed": 5,
            "process": {"kind": "ve", "T": math.sqrt(3.0)},
            "grid": {"steps": 20},
            "dsm": {"steps": 120, "batch": 16, "hidden": [16]},
            "pairs": {"count": 32},
            "stage2": {"steps": 40, "batch": 16, "g_hidden": [16], "d_hidden": [8]},
        }
        s = pagoda.run_command("dsm-train", cfg, tmp)
        assert s["ok"]
        s = pagoda.run_command("build-pairs", cfg, tmp)
        assert s["ok"] and s["metrics"]["count"] == 32
        s = pagoda.run_command("distill", cfg, tmp)
        assert s["ok"]
        summary = json.loads((Path(tmp) / "summary_distill.json").read_text())
        assert summary["command"] == "distill"
        s = pagoda.run_command("lab", {"lab": {"which": "optimality"}}, tmp)
        assert s["ok"]
