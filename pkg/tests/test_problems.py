import json
import math
from unittest.mock import patch

import numpy as np
import pytest

from flowtopo.errors import ProblemError
from flowtopo.problems import (
    FLOW_BENCHMARKS,
    BoundarySegment,
    BurgersSpec,
    Edge,
    ProblemSpec,
    VelocityProfile,
    boundary_samples,
    build_problem,
    edge_coordinate,
    load_problem,
    perimeter_points,
    problem_from_dict,
    problem_to_dict,
    save_problem,
)


def test_volume_fractions():
    assert build_problem("diffuser").volume_fraction == 0.5
    assert build_problem("pipe-bend").volume_fraction == pytest.approx(0.08 * math.pi)
    assert build_problem("rugby").volume_fraction == 0.9
    assert build_problem("double-pipe").volume_fraction == pytest.approx(1.0 / 3.0)


@pytest.mark.parametrize("benchmark", [b.value for b in FLOW_BENCHMARKS])
def test_benchmarks_are_flux_balanced(benchmark):
    assert abs(build_problem(benchmark).net_flux()) <= 1e-12


def test_unknown_benchmark_is_rejected():
    with pytest.raises(ProblemError, match="Unknown benchmark"):
        build_problem("wind-tunnel")
    with pytest.raises(ProblemError):
        build_problem("burgers")


def test_parabolic_profile():
    profile = VelocityProfile("parabolic", 3.0, (1.0 / 3.0, 2.0 / 3.0))
    assert profile(0.5) == pytest.approx(3.0)
    assert profile(1.0 / 3.0) == 0.0
    assert profile(0.9) == 0.0
    assert profile.integral() == pytest.approx(2.0 / 3.0)


def test_profile_rejects_unknown_kind():
    with pytest.raises(ProblemError):
        VelocityProfile("plug", 1.0)


def test_perimeter_points_are_unique():
    points = perimeter_points(25)
    assert len(points) == 96
    assert len(np.unique(points, axis=0)) == len(points)
    with pytest.raises(ProblemError):
        perimeter_points(1)


def test_boundary_samples_shape_and_pin():
    data = boundary_samples(build_problem("diffuser"), 25)
    assert len(data["u"]) <= 100
    assert len(data["v"]) == len(data["u"])
    assert len(data["p"]) == 1
    np.testing.assert_array_equal(data["p"].points, [[0.0, 0.0]])
    np.testing.assert_array_equal(data["p"].values, [0.0])


def test_boundary_samples_are_deterministic():
    first = boundary_samples(build_problem("pipe-bend"), 25)
    second = boundary_samples(build_problem("pipe-bend"), 25)
    for name in ("u", "v", "p"):
        np.testing.assert_array_equal(first[name].points, second[name].points)
        np.testing.assert_array_equal(first[name].values, second[name].values)


def test_rugby_walls_move_with_unit_velocity():
    data = boundary_samples(build_problem("rugby"), 25)
    np.testing.assert_array_equal(data["u"].values, 1.0)
    np.testing.assert_array_equal(data["v"].values, 0.0)


@pytest.mark.parametrize("benchmark", [b.value for b in FLOW_BENCHMARKS])
def test_samples_agree_with_profiles(benchmark):
    spec = build_problem(benchmark)
    data = boundary_samples(spec, 25)
    points = data["u"].points
    expected_u = np.zeros(len(points))
    expected_v = np.zeros(len(points))
    done = np.zeros(len(points), dtype=bool)
    for segment in spec.segments:
        on_edge, s = edge_coordinate(points, segment.edge)
        hit = on_edge & (s >= segment.interval[0]) & (s <= segment.interval[1]) & ~done
        expected_u[hit] = segment.u(s[hit])
        expected_v[hit] = segment.v(s[hit])
        done |= hit
    np.testing.assert_allclose(data["u"].values, expected_u, rtol=0, atol=1e-14)
    np.testing.assert_allclose(data["v"].values, expected_v, rtol=0, atol=1e-14)


def test_density_data_sits_on_openings():
    spec = build_problem("diffuser")
    data = boundary_samples(spec, 25)
    assert "rho" in data
    assert np.all(spec.on_opening(data["rho"].points))
    assert len(boundary_samples(spec, 25, density="none").variables) == 3


def test_pipe_bend_outflow_points_down():
    spec = build_problem("pipe-bend")
    u, v = spec.velocity(np.array([[0.8, 0.0], [0.0, 0.8]]))
    assert v[0] == pytest.approx(-1.0)
    assert u[1] == pytest.approx(1.0)


@pytest.mark.parametrize("benchmark", [b.value for b in FLOW_BENCHMARKS])
def test_pressure_pin_defaults_to_origin(benchmark):
    assert build_problem(benchmark).pressure_pin == (0.0, 0.0)


def test_unbalanced_problem_is_rejected():
    segments = (BoundarySegment.make(Edge.LEFT, (0.2, 0.4), u=("parabolic", 1.0)),)
    with pytest.raises(ProblemError, match="flux"):
        ProblemSpec("leaky", segments, 0.5).validate()


def test_volume_fraction_range():
    segments = (
        BoundarySegment.make(Edge.LEFT, (0.2, 0.4), u=("uniform", 1.0)),
        BoundarySegment.make(Edge.RIGHT, (0.2, 0.4), u=("uniform", 1.0)),
    )
    ProblemSpec("channel", segments, 0.5).validate()
    with pytest.raises(ProblemError):
        ProblemSpec("channel", segments, 1.0).validate()


def test_dict_round_trip():
    for benchmark in FLOW_BENCHMARKS:
        spec = build_problem(benchmark)
        assert problem_from_dict(json.loads(json.dumps(problem_to_dict(spec)))) == spec


def test_malformed_definition():
    with pytest.raises(ProblemError, match="Malformed"):
        problem_from_dict({"segments": [{"interval": [0, 1]}]})
    with pytest.raises(ProblemError):
        problem_from_dict({"segments": [], "volume_fraction": "half"})


def test_save_and_load_problem(tmp_path):
    spec = build_problem("double-pipe")
    path = tmp_path / "problems" / "double.json"
    assert save_problem(spec, path) is True
    assert load_problem(path) == spec
    assert list(path.parent.glob("*.tmp")) == []


def test_save_problem_failure_cleans_up(tmp_path):
    with patch("flowtopo.config.os.replace", side_effect=OSError("disk full")):
        assert save_problem(build_problem("diffuser"), tmp_path / "p.json") is False
    assert list(tmp_path.iterdir()) == []


def test_load_problem_reports_bad_json(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text("{not json", encoding="utf-8")
    with pytest.raises(ProblemError, match="Cannot read"):
        load_problem(path)


def test_burgers_initial_condition():
    spec = BurgersSpec()
    assert spec.nu == pytest.approx(0.01 / math.pi)
    assert spec.initial_condition(0.0) == 0.0
    assert spec.initial_condition(0.5) == pytest.approx(-1.0)
    with pytest.raises(ProblemError):
        BurgersSpec(nu=0.0)
