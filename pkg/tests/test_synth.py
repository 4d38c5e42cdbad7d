import numpy as np
import pytest

from frenetcp.records import ScenarioClass
from frenetcp.scores import score_matrix
from frenetcp.synth import SynthConfig, generate


def cfg(**kw):
    base = dict(
        scenario=ScenarioClass.NORMAL_DRIVING,
        n_records=50,
        n_modes=3,
        horizon=8,
        dt=0.5,
        noise_scale_s=0.5,
        noise_scale_d=0.2,
        error_growth=1.1,
        dependence="independent",
        seed=0,
    )
    base.update(kw)
    return SynthConfig(**base)


class TestDeterminismAndValidity:
    def test_same_seed_bit_identical(self):
        a = generate(cfg(seed=5))
        b = generate(cfg(seed=5))
        for ra, rb in zip(a, b):
            assert ra.id == rb.id
            np.testing.assert_array_equal(ra.forecast.modes, rb.forecast.modes)
            np.testing.assert_array_equal(ra.truth, rb.truth)
            np.testing.assert_array_equal(ra.route.vertices, rb.route.vertices)

    def test_different_seed_differs(self):
        a, b = generate(cfg(seed=1)), generate(cfg(seed=2))
        assert not np.array_equal(a[0].forecast.modes, b[0].forecast.modes)

    @pytest.mark.parametrize("scenario", list(ScenarioClass))
    def test_records_valid_for_every_template(self, scenario):
        records = generate(cfg(scenario=scenario, n_records=20))
        for record in records:
            assert record.scenario is scenario
            assert record.forecast.horizon == 8
            assert np.all(record.forecast.modes[..., 0] >= 0.0)
            assert np.all(record.forecast.modes[..., 0] <= record.route.length)
            assert 0.0 <= record.truth[:, 0].min()
            assert record.truth[:, 0].max() <= record.route.length

    def test_zero_noise_forecast_equals_truth(self):
        records = generate(cfg(noise_scale_s=0.0, noise_scale_d=0.0, n_modes=2))
        for record in records:
            np.testing.assert_array_equal(
                record.forecast.modes, np.broadcast_to(record.truth, (2, 8, 2))
            )
        assert np.all(score_matrix(records) == 0.0)


class TestNoiseStructure:
    def test_mae_grows_geometrically(self):
        # ratio MAE[t] / MAE[0] tracks growth^t; K=1 so the min is identity
        growth = 1.3
        records = generate(
            cfg(n_records=5000, n_modes=1, error_growth=growth, noise_scale_s=0.5)
        )
        mae = score_matrix(records).mean(axis=0)
        for t in range(8):
            expected = growth**t
            assert mae[t, 0] / mae[0, 0] == pytest.approx(expected, rel=0.10)

    def test_comonotone_shares_one_draw(self):
        records = generate(cfg(dependence="comonotone", n_modes=2, error_growth=1.2))
        steps = np.arange(8)
        sigma_s = 0.5 * 1.2**steps
        for record in records[:10]:
            dev = (record.forecast.modes[..., 0] - record.truth[:, 0]) / sigma_s
            np.testing.assert_allclose(dev, dev[:, :1] * np.ones((1, 8)), atol=1e-9)

    def test_ar1_correlation_magnitude(self):
        rho = 0.7
        records = generate(
            cfg(dependence="ar1", rho=rho, n_records=4000, n_modes=1, error_growth=1.0)
        )
        dev = np.stack(
            [(r.forecast.modes[0, :, 1] - r.truth[:, 1]) / 0.2 for r in records]
        )
        got = np.corrcoef(dev[:, 3], dev[:, 4])[0, 1]
        assert got == pytest.approx(rho, abs=0.05)

    def test_wrong_intent_offset_is_paired(self):
        base = generate(cfg(seed=9))
        offset = generate(cfg(seed=9, wrong_intent_offset=2.0))
        ramp = 2.0 * (np.arange(8) + 1) / 8
        for rb, ro in zip(base, offset):
            np.testing.assert_allclose(
                ro.forecast.modes[..., 1] - rb.forecast.modes[..., 1],
                np.broadcast_to(ramp, (3, 8)),
                atol=1e-12,
            )
            np.testing.assert_array_equal(
                ro.forecast.modes[..., 0], rb.forecast.modes[..., 0]
            )

    def test_lane_change_commit_jump_after_onset(self):
        records = generate(cfg(scenario=ScenarioClass.LANE_CHANGE, error_growth=1.0))
        steps = np.arange(8)
        sigma_d = 0.2 * np.ones(8)
        onset = 4
        for record in records[:20]:
            dev = np.abs(record.forecast.modes[..., 1] - record.truth[:, 1]) / sigma_d
            # post-onset standardized deviations carry the +1.5 commit jump
            assert np.all(dev[:, onset:] >= 1.5)

    def test_class_separation_in_scale(self):
        small = generate(cfg(noise_scale_s=0.3, noise_scale_d=0.1, n_records=800, seed=3))
        big = generate(
            cfg(
                scenario=ScenarioClass.INTERSECTION,
                noise_scale_s=0.9,
                noise_scale_d=0.3,
                n_records=800,
                seed=4,
            )
        )
        mae_small = score_matrix(small).mean(axis=0)
        mae_big = score_matrix(big).mean(axis=0)
        assert np.all(mae_big > mae_small)


class TestConfigValidation:
    def test_bad_counts(self):
        with pytest.raises(ValueError):
            cfg(n_records=0)
        with pytest.raises(ValueError):
            cfg(horizon=0)

    def test_bad_growth(self):
        with pytest.raises(ValueError):
            cfg(error_growth=0.9)

    def test_bad_dependence(self):
        with pytest.raises(ValueError):
            cfg(dependence="copula")
        with pytest.raises(ValueError):
            cfg(dependence="ar1", rho=1.0)


class TestRouteTemplates:
    def test_lane_change_route_has_lateral_sigmoid(self):
        records = generate(cfg(scenario=ScenarioClass.LANE_CHANGE, n_records=1))
        ys = records[0].route.vertices[:, 1]
        assert ys[0] == pytest.approx(0.0, abs=0.1)
        assert ys[-1] == pytest.approx(3.5, abs=0.1)
        assert np.all(np.diff(ys) >= -1e-12)

    def test_arc_templates_turn(self):
        inter = generate(cfg(scenario=ScenarioClass.INTERSECTION, n_records=1))[0]
        round_ = generate(cfg(scenario=ScenarioClass.ROUNDABOUT, n_records=1))[0]
        for rec, sweep in ((inter, np.pi / 2), (round_, 1.5 * np.pi)):
            deltas = np.diff(rec.route.vertices, axis=0)
            headings = np.unwrap(np.arctan2(deltas[:, 1], deltas[:, 0]))
            assert headings[-1] - headings[0] == pytest.approx(sweep, rel=0.05)
