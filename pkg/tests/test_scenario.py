import csv
import json
from importlib import resources

import numpy as np
import pytest

from cathrod import scenario
from cathrod.scenario import (ScenarioError, load_config, parse_config, plateau, render_svg,
                              run_scenario, run_sweep, with_parameter, write_outputs)

CONFIGS = resources.files("cathrod") / "configs"

SINGLE = {
    "name": "toy",
    "rod": {"youngs_bend": 5.9e6, "density": 11040.0, "radius": 0.006, "length": 0.12,
            "num_points": 10},
    "load": {"mass_kg": 0.05},
    "integrator": {"timestep": 0.3, "damping": 0.9},
    "reference": {"oracle": True},
}


def tree(**changes):
    out = {k: (dict(v) if isinstance(v, dict) else v) for k, v in SINGLE.items()}
    for key, value in changes.items():
        if value is None:
            out.pop(key, None)
        else:
            out[key] = value
    return out


@pytest.fixture(scope="module")
def run_50g():
    config = load_config(CONFIGS / "cantilever_50g.toml")
    return config, run_scenario(config)


class TestParse:
    def test_minimal(self):
        c = parse_config(tree())
        assert c.topology == "single"
        assert c.load.magnitude == pytest.approx(0.05 * 9.80665)
        np.testing.assert_allclose(c.load.unit, [0, -1, 0])
        assert c.integrator.timestep == 0.3

    @pytest.mark.parametrize("changes", [
        dict(rod=None),
        dict(bogus={}),
        dict(load={"mass_kg": 0.05, "force_n": 1.0}),
        dict(load={"mass_kg": -1.0}),
        dict(integrator={"timestep": -1.0}),
        dict(integrator={"no_such_key": 1}),
        dict(sweep={"parameter": "K_L", "values": [1.0]}),
        dict(sweep={"parameter": "banana", "values": [1.0]}),
        dict(sweep={"parameter": "N", "values": []}),
        dict(catheter={"length": 0.16}),
    ])
    def test_rejects(self, changes):
        with pytest.raises((ScenarioError, ValueError)):
            parse_config(tree(**changes))

    def test_too_few_points_names_minimum(self):
        bad = tree(rod={**SINGLE["rod"], "num_points": 2})
        with pytest.raises(ValueError, match="N=3"):
            parse_config(bad)

    def test_all_shipped_configs_parse(self):
        names = sorted(p.name for p in CONFIGS.iterdir() if p.name.endswith(".toml"))
        assert len(names) == 16
        for name in names:
            c = load_config(CONFIGS / name)
            assert c.name == name[:-5]

    def test_coupled_defaults(self):
        c = load_config(CONFIGS / "catheter1.toml")
        assert c.topology == "coupled"
        assert c.integrator.fd_scheme == "central"
        assert c.tendon.inertia_scale == 1e4
        assert c.actuation.force_n == 2.0

    def test_missing_file(self, tmp_path):
        with pytest.raises(ScenarioError):
            load_config(tmp_path / "nope.toml")

    def test_bad_toml(self, tmp_path):
        p = tmp_path / "bad.toml"
        p.write_text("name = [unterminated\n")
        with pytest.raises(ScenarioError):
            load_config(p)


class TestWithParameter:
    def test_single(self):
        c = parse_config(tree())
        assert with_parameter(c, "N", 20).rod.num_points == 20
        assert with_parameter(c, "xi", 0.5).integrator.damping == 0.5
        assert with_parameter(c, "ξ", 0.5).integrator.damping == 0.5
        assert with_parameter(c, "K_p", 1e2).rod.penalty_constant == 1e2

    def test_coupled(self):
        c = load_config(CONFIGS / "catheter1.toml")
        assert with_parameter(c, "K_L", 500).coupling.lumen_constant == 500
        assert with_parameter(c, "N_T", 40).tendon.num_points == 40
        assert with_parameter(c, "N", 20).catheter.num_points == 20

    @pytest.mark.parametrize("param", ["K_L", "N_T", "N_C"])
    def test_coupled_only_on_single(self, param):
        with pytest.raises(ScenarioError):
            with_parameter(parse_config(tree()), param, 10)


class TestPlateau:
    def test_monotone_approach(self):
        trace = np.column_stack([np.linspace(0, 1, 11) ** 0.0 - np.exp(-np.arange(11.0)),
                                 np.zeros(11), np.zeros(11)])
        k, osc = plateau(trace, 1.0, fraction=1e-3)
        assert np.linalg.norm(trace[k] - trace[-1]) <= 1e-3
        assert np.linalg.norm(trace[k - 1] - trace[-1]) > 1e-3
        assert osc <= 1e-3

    def test_oscillation_measured_after_plateau(self):
        trace = np.zeros((6, 3))
        trace[0, 0] = 1.0
        trace[3, 0] = 0.5
        k, osc = plateau(trace, 1.0)
        assert k == 1 and osc == 0.5


class TestRun:
    def test_50g_within_one_percent(self, run_50g):
        _, result = run_50g
        assert result.converged
        assert result.errors["oracle"]["tip_error_fraction"] < 0.01
        assert result.tip_deflection > 0  # measured along the load direction

    def test_oracle_curve_starts_at_base(self, run_50g):
        config, result = run_50g
        ref = result.references["oracle"]
        np.testing.assert_allclose(ref[0], config.pose.position, atol=1e-15)
        assert ref[-1, 1] < 0

    def test_corde_variant_regresses(self):
        result = run_scenario(load_config(CONFIGS / "cantilever_50g_corde.toml"))
        assert result.errors["oracle"]["tip_error_fraction"] > 0.10

    def test_outputs(self, run_50g, tmp_path):
        config, result = run_50g
        out = write_outputs(result, config, tmp_path / "o")
        names = {p.name for p in out.iterdir()}
        assert {"result.json", "trace.csv", "plot.svg", "centerline_rod.csv",
                "centerline_oracle.csv"} <= names
        data = json.loads((out / "result.json").read_text())
        assert data["converged"] is True
        with open(out / "trace.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == result.steps + 1
        assert "tip_error_fraction" in rows[0]
        assert (out / "plot.svg").read_text().startswith("<svg")

    def test_result_json_reproducible(self, tmp_path):
        config = parse_config(tree())
        a = write_outputs(run_scenario(config), config, tmp_path / "a")
        b = write_outputs(run_scenario(config), config, tmp_path / "b")
        ja = json.loads((a / "result.json").read_text())
        jb = json.loads((b / "result.json").read_text())
        ja.pop("wall_time"), jb.pop("wall_time")
        assert ja == jb

    def test_missing_reference_curve(self, tmp_path):
        config = parse_config(tree(reference={"curve": "missing.csv"}), base_dir=str(tmp_path))
        with pytest.raises(ScenarioError):
            run_scenario(config)

    def test_non_finite_written_as_null(self):
        assert scenario._finite_or_none({"a": [1.0, float("nan")], "b": float("inf")}) == \
            {"a": [1.0, None], "b": None}

    def test_reference_curve_file(self, tmp_path):
        from cathrod.cantilever import CantileverProblem, resample_by_arclength, solve
        problem = CantileverProblem.circular(0.05 * 9.80665, 0.12, 5.9e6, 0.006)
        xy = resample_by_arclength(problem, solve(problem), 101)
        path = tmp_path / "ref.csv"
        idx = np.arange(len(xy))
        np.savetxt(path, np.column_stack([idx, 1e3 * xy[:, 0], -1e3 * xy[:, 1]]),
                   delimiter=",", header="index,x_m,y_m", comments="", fmt=["%d", "%.17g", "%.17g"])
        config = parse_config(tree(reference={"curve": "ref.csv", "units": "mm"}),
                              base_dir=str(tmp_path))
        result = run_scenario(config)
        assert result.errors["reference"]["tip_error_fraction"] < 0.02


class TestSweep:
    def test_order_and_summary(self, tmp_path):
        config = parse_config(tree(sweep={"parameter": "N", "values": [8, 5]}))
        results = run_sweep(config, tmp_path)
        assert [r.sweep_value for r in results] == [8, 5]
        assert [len(r.centerlines["rod"]) for r in results] == [8, 5]
        with open(tmp_path / "summary.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert [float(row["value"]) for row in rows] == [8, 5]
        assert all(float(row["area_error_m"]) >= 0 for row in rows)
        assert (tmp_path / "000_N_8" / "result.json").exists()

    def test_workers_match_serial(self, tmp_path):
        config = parse_config(tree(sweep={"parameter": "K_p", "values": [1e3, 1e4]}))
        serial = run_sweep(config)
        pooled = run_sweep(config, threads=2)
        for a, b in zip(serial, pooled):
            np.testing.assert_array_equal(a.tip, b.tip)


class TestSvg:
    def test_polylines(self):
        svg = render_svg({"a": np.array([[0, 0], [1, 1.0]]), "b": np.array([[0, 0], [1, 0.5]])})
        assert svg.count("<polyline") == 2
        assert "a" in svg and "b" in svg
