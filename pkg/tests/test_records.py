import json

import numpy as np
import pytest

from frenetcp.errors import GeometryError, InsufficientData, SchemaError
from frenetcp.records import (
    MultimodalForecast,
    ScenarioClass,
    ScenarioRecord,
    SplitConfig,
    load_records,
    split,
    write_records,
)
from frenetcp.geometry import ReferenceRoute, project_trajectory


def record_obj(
    rec_id="r0",
    scenario="NormalDriving",
    dt=0.5,
    route=((0.0, 0.0), (100.0, 0.0)),
    modes=None,
    truth=None,
    frame="frenet",
    horizon=4,
):
    if truth is None:
        truth = [[5.0 + 2.0 * t, 0.0] for t in range(horizon)]
    if modes is None:
        modes = [[[5.0 + 2.0 * t, 0.5] for t in range(horizon)]]
    return {
        "id": rec_id,
        "scenario": scenario,
        "dt": dt,
        "route": [list(p) for p in route],
        "modes": modes,
        "truth": truth,
        "frame": frame,
    }


def write_lines(path, objs):
    path.write_text("".join(json.dumps(o) + "\n" for o in objs), encoding="utf-8")


def make_record(rec_id="r", scenario=ScenarioClass.NORMAL_DRIVING, horizon=4, k=2, seed=0):
    rng = np.random.default_rng(seed)
    route = ReferenceRoute.from_points([(0.0, 0.0), (200.0, 0.0)])
    truth = np.stack([10.0 + 3.0 * np.arange(horizon), np.zeros(horizon)], axis=1)
    modes = truth[None] + rng.normal(0, 0.5, size=(k, horizon, 2))
    modes[..., 0] = np.clip(modes[..., 0], 0.0, route.length)
    return ScenarioRecord(
        id=rec_id,
        scenario=scenario,
        route=route,
        forecast=MultimodalForecast(modes, 0.5),
        truth=truth,
    )


class TestLoad:
    def test_two_valid_records(self, tmp_path):
        path = tmp_path / "records.jsonl"
        write_lines(path, [record_obj("a"), record_obj("b")])
        records = load_records(path)
        assert [r.id for r in records] == ["a", "b"]

    def test_truth_length_mismatch_names_record(self, tmp_path):
        path = tmp_path / "records.jsonl"
        obj = record_obj("bad")
        obj["truth"] = obj["truth"][:-1]
        write_lines(path, [obj])
        with pytest.raises(SchemaError, match="bad"):
            load_records(path)

    def test_error_carries_line_number(self, tmp_path):
        path = tmp_path / "records.jsonl"
        bad = record_obj("second")
        del bad["dt"]
        write_lines(path, [record_obj("first"), bad])
        with pytest.raises(SchemaError, match="line 2"):
            load_records(path)

    def test_unknown_scenario(self, tmp_path):
        path = tmp_path / "records.jsonl"
        write_lines(path, [record_obj(scenario="Merging")])
        with pytest.raises(SchemaError, match="Merging"):
            load_records(path)

    def test_invalid_json(self, tmp_path):
        path = tmp_path / "records.jsonl"
        path.write_text("{not json}\n", encoding="utf-8")
        with pytest.raises(SchemaError, match="line 1"):
            load_records(path)

    def test_invalid_route_is_geometry_error(self, tmp_path):
        path = tmp_path / "records.jsonl"
        write_lines(path, [record_obj(route=((0.0, 0.0), (0.0, 0.0)))])
        with pytest.raises(GeometryError):
            load_records(path)

    def test_non_finite_point_rejected(self, tmp_path):
        path = tmp_path / "records.jsonl"
        obj = record_obj()
        obj["modes"][0][1][0] = None
        write_lines(path, [obj])
        with pytest.raises(SchemaError):
            load_records(path)

    def test_planar_matches_preprojected(self, tmp_path):
        route_pts = [(0.0, 0.0), (5.0, 0.0), (5.0, 50.0)]
        route = ReferenceRoute.from_points(route_pts)
        planar_truth = [[1.0, 0.2], [3.0, -0.1], [5.0, 1.5], [5.2, 3.0]]
        planar_modes = [[[1.1, 0.1], [2.9, 0.0], [5.1, 1.4], [5.0, 3.2]]]
        obj_planar = record_obj(
            "p", route=route_pts, modes=planar_modes, truth=planar_truth, frame="planar"
        )
        frenet_truth = project_trajectory(route, np.asarray(planar_truth)).tolist()
        frenet_modes = [project_trajectory(route, np.asarray(planar_modes[0])).tolist()]
        obj_frenet = record_obj(
            "f", route=route_pts, modes=frenet_modes, truth=frenet_truth, frame="frenet"
        )
        path = tmp_path / "records.jsonl"
        write_lines(path, [obj_planar, obj_frenet])
        loaded_p, loaded_f = load_records(path)
        np.testing.assert_allclose(loaded_p.truth, loaded_f.truth, atol=1e-9)
        np.testing.assert_allclose(
            loaded_p.forecast.modes, loaded_f.forecast.modes, atol=1e-9
        )

    def test_roundtrip_via_writer(self, tmp_path):
        records = [make_record(f"r{i}", seed=i) for i in range(3)]
        path = tmp_path / "records.jsonl"
        write_records(path, records)
        loaded = load_records(path)
        assert [r.id for r in loaded] == ["r0", "r1", "r2"]
        for orig, back in zip(records, loaded):
            np.testing.assert_array_equal(orig.truth, back.truth)
            np.testing.assert_array_equal(orig.forecast.modes, back.forecast.modes)

    def test_load_idempotent(self, tmp_path):
        path = tmp_path / "records.jsonl"
        write_lines(path, [record_obj("a"), record_obj("b")])
        first = load_records(path)
        second = load_records(path)
        assert [r.id for r in first] == [r.id for r in second]


class TestSplit:
    def test_exact_fraction_counts(self):
        records = [make_record(f"r{i}", seed=i) for i in range(100)]
        d1, d2, test = split(records, SplitConfig(0.5, 0.5, seed=0))
        assert (len(d1), len(d2), len(test)) == (25, 25, 50)

    def test_same_seed_identical_partition(self):
        records = [make_record(f"r{i}", seed=i) for i in range(40)]
        a = split(records, SplitConfig(0.4, 0.5, seed=7))
        b = split(records, SplitConfig(0.4, 0.5, seed=7))
        for part_a, part_b in zip(a, b):
            assert [r.id for r in part_a] == [r.id for r in part_b]

    def test_different_seed_differs(self):
        records = [make_record(f"r{i}", seed=i) for i in range(40)]
        a = split(records, SplitConfig(0.5, 0.5, seed=1))
        b = split(records, SplitConfig(0.5, 0.5, seed=2))
        assert any(
            [r.id for r in pa] != [r.id for r in pb] for pa, pb in zip(a, b)
        )

    def test_partition_property(self):
        records = [
            make_record(f"r{i}", scenario=sc, seed=i)
            for i, sc in enumerate(
                [ScenarioClass.NORMAL_DRIVING] * 11 + [ScenarioClass.INTERSECTION] * 17
            )
        ]
        d1, d2, test = split(records, SplitConfig(0.6, 0.5, seed=3))
        ids = [r.id for part in (d1, d2, test) for r in part]
        assert len(ids) == len(set(ids)) == len(records)
        assert set(ids) == {r.id for r in records}

    def test_stratification_within_one_record(self):
        counts = {ScenarioClass.NORMAL_DRIVING: 40, ScenarioClass.ROUNDABOUT: 20}
        records = []
        for scenario, n in counts.items():
            records += [
                make_record(f"{scenario.value}-{i}", scenario=scenario, seed=i)
                for i in range(n)
            ]
        d1, d2, test = split(records, SplitConfig(0.5, 0.5, seed=0))
        for scenario, n in counts.items():
            for part, frac in ((d1, 0.25), (d2, 0.25), (test, 0.5)):
                got = sum(1 for r in part if r.scenario is scenario)
                assert abs(got - frac * n) <= 1

    def test_insufficient_data_names_class(self):
        records = [make_record("only", scenario=ScenarioClass.ROUNDABOUT)]
        with pytest.raises(InsufficientData, match="Roundabout"):
            split(records, SplitConfig(0.5, 0.5, seed=0))

    def test_fraction_validation(self):
        with pytest.raises(ValueError):
            SplitConfig(0.0, 0.5, seed=0)
        with pytest.raises(ValueError):
            SplitConfig(0.5, 1.0, seed=0)


class TestValidation:
    def test_truth_horizon_checked(self):
        route = ReferenceRoute.from_points([(0.0, 0.0), (100.0, 0.0)])
        forecast = MultimodalForecast(np.zeros((1, 4, 2)) + 5.0, 0.5)
        with pytest.raises(ValueError, match="truth length"):
            ScenarioRecord("x", ScenarioClass.ROUNDABOUT, route, forecast, np.zeros((3, 2)))

    def test_forecast_shape_checked(self):
        with pytest.raises(ValueError):
            MultimodalForecast(np.zeros((4, 2)), 0.5)
        with pytest.raises(ValueError):
            MultimodalForecast(np.zeros((1, 0, 2)), 0.5)
        with pytest.raises(ValueError):
            MultimodalForecast(np.full((1, 3, 2), np.nan), 0.5)

    def test_dt_positive(self):
        with pytest.raises(ValueError):
            MultimodalForecast(np.zeros((1, 3, 2)), 0.0)
