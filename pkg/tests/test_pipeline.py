import json
from dataclasses import astuple
import math

import numpy as np
import pytest

from dimect import forward as fw
from dimect import inversion as inv
from dimect import pipeline as pl
from dimect.errors import DomainError, EstimationInfeasibleError, InputError
from dimect.forward import PlateSpec, DEFAULT_PROBE
from dimect.pipeline import CalibrationTable, MeasurementRecord, NoiseModel

FIG5 = pl.FREQUENCY_PRESETS["fig5"]


class TestCalibration:
    def test_identity(self):
        m = MeasurementRecord(1e4, 0.01 - 0.03j)
        assert pl.apply_calibration(CalibrationTable.identity(), m) == m

    def test_single_entry_extrapolates_constant(self):
        t = CalibrationTable([5e3], [2 + 0j])
        for w in (10.0, 5e3, 1e6):
            assert pl.apply_calibration(t, MeasurementRecord(w, 0.5 - 1j)).dz == 1 - 2j

    def test_midpoint_is_average(self):
        t = CalibrationTable([1e3, 3e3], [1 + 1j, 3 - 1j])
        assert t(2e3) == 2 + 0j
        assert t(1.5e3) == pytest.approx(1.5 + 0.5j)
        assert t(1e5) == 3 - 1j and t.extrapolates(1e5) and not t.extrapolates(2e3)

    def test_validation(self):
        with pytest.raises(InputError):
            CalibrationTable([2.0, 1.0], [1, 1])
        with pytest.raises(InputError):
            CalibrationTable([], [])

    def test_csv_round_trip(self, tmp_path):
        t = CalibrationTable([pl.TWO_PI * 650, pl.TWO_PI * 1650], [1.1 - 0.05j, 0.97 + 0.01j])
        path = tmp_path / "c.csv"
        path.write_text(t.to_csv())
        back = CalibrationTable.read_csv(path)
        np.testing.assert_allclose(back.omegas, t.omegas, rtol=1e-15)
        np.testing.assert_array_equal(back.factors, t.factors)
        assert t.to_csv().startswith("frequency_hz,re_c,im_c\n650.0,")


class TestFitCalibration:
    def _refs(self, gain=1.0, plates=("c", "e")):
        out = []
        for name in plates:
            plate = pl.REFERENCE_PLATES[name]
            recs = pl.synthesize_measurements(DEFAULT_PROBE, plate, FIG5, noise=NoiseModel(0, 0, gain))
            out.append((plate, recs))
        return out

    def test_model_data_gives_unity(self):
        t = pl.fit_calibration(self._refs(), DEFAULT_PROBE)
        np.testing.assert_allclose(t.factors, 1.0, atol=1e-12)

    def test_constant_gain_is_inverted(self):
        t = pl.fit_calibration(self._refs(0.9 - 0.1j), DEFAULT_PROBE)
        np.testing.assert_allclose(t.factors, 1 / (0.9 - 0.1j), rtol=1e-12)

    def test_two_plates_average_their_ratios(self):
        (pa, ra), (pb, rb) = self._refs()
        ra = [MeasurementRecord(m.omega, m.dz * 1.02, m.repeat_index) for m in ra]
        rb = [MeasurementRecord(m.omega, m.dz * (0.97 - 0.01j), m.repeat_index) for m in rb]
        t = pl.fit_calibration([(pa, ra), (pb, rb)], DEFAULT_PROBE)
        np.testing.assert_allclose(t.factors, (1 / 1.02 + 1 / (0.97 - 0.01j)) / 2, rtol=1e-12)

    def test_zero_sample_is_skipped(self):
        (pa, ra), (pb, rb) = self._refs()
        rb = [MeasurementRecord(m.omega, 0j if i == 0 else m.dz) for i, m in enumerate(rb)]
        t = pl.fit_calibration([(pa, ra), (pb, rb)], DEFAULT_PROBE)
        assert len(t.omegas) == 5
        np.testing.assert_allclose(t.factors, 1.0, atol=1e-12)

    def test_empty(self):
        with pytest.raises(InputError):
            pl.fit_calibration([], DEFAULT_PROBE)


class TestSynthesis:
    plate = pl.REFERENCE_PLATES["a"]

    def test_noise_free_is_exact(self):
        recs = pl.synthesize_measurements(DEFAULT_PROBE, self.plate, [1650.0], repeats=3)
        exact = fw.mutual_impedance_delta(DEFAULT_PROBE, self.plate, pl.TWO_PI * 1650)
        assert [m.dz for m in recs] == [exact] * 3
        assert [m.repeat_index for m in recs] == [1, 2, 3]
        assert recs[0].frequency_hz == 1650.0

    def test_seed_determinism(self):
        a = pl.synthesize_measurements(DEFAULT_PROBE, self.plate, FIG5, 4, NoiseModel(), seed=7)
        b = pl.synthesize_measurements(DEFAULT_PROBE, self.plate, FIG5, 4, NoiseModel(), seed=7)
        c = pl.synthesize_measurements(DEFAULT_PROBE, self.plate, FIG5, 4, NoiseModel(), seed=8)
        assert a == b and a != c

    def test_relative_spread_of_twenty_repeats(self):
        # chi-square bounds put the sample std of 20 draws in [0.3 %, 0.7 %]
        # of the mean at least 95 % of the time
        hits = 0
        for seed in range(200):
            recs = pl.synthesize_measurements(DEFAULT_PROBE, self.plate, [1650.0], 20,
                                              NoiseModel(0.005, 0.0), seed)
            mags = np.abs([m.dz for m in recs])
            rel = np.std(mags, ddof=1) / np.mean(mags)
            hits += 0.003 <= rel <= 0.007
        assert hits >= 0.93 * 200

    def test_bad_inputs(self):
        with pytest.raises(InputError):
            pl.synthesize_measurements(DEFAULT_PROBE, self.plate, [], 1)
        with pytest.raises(InputError):
            pl.synthesize_measurements(DEFAULT_PROBE, self.plate, [1e3], 0)
        with pytest.raises(DomainError):
            NoiseModel(-0.1)
        with pytest.raises(DomainError):
            MeasurementRecord(0.0, 1j)


class TestMeasurementCsv:
    def test_round_trip(self, tmp_path):
        recs = pl.synthesize_measurements(DEFAULT_PROBE, pl.REFERENCE_PLATES["b"], FIG5, 2, NoiseModel(), 3, "b")
        path = tmp_path / "m.csv"
        path.write_text(pl.measurements_csv(recs))
        back = pl.read_measurements(path)
        assert [m.repeat_index for m in back] == [m.repeat_index for m in recs]
        assert [m.plate_id for m in back] == ["b"] * len(recs)
        assert [m.dz for m in back] == [m.dz for m in recs]
        np.testing.assert_allclose([m.omega for m in back], [m.omega for m in recs], rtol=1e-15)

    def test_wrong_header(self, tmp_path):
        path = tmp_path / "m.csv"
        path.write_text("f,re,im\n1,2,3\n")
        with pytest.raises(InputError, match="header"):
            pl.read_measurements(path)


def test_hertz_prints_cleanly():
    assert repr(pl.hertz(pl.TWO_PI * 1650)) == "1650.0"


@pytest.fixture(scope="module")
def plate_b_run(default_grid):
    recs = pl.synthesize_measurements(DEFAULT_PROBE, pl.REFERENCE_PLATES["b"], FIG5, plate_id="b")
    est = pl.estimate_all(recs, DEFAULT_PROBE, default_grid)
    return recs, est


class TestMerit:
    def test_plate_b_noise_free(self, plate_b_run):
        recs, est = plate_b_run
        rep = pl.merit_report(recs, est, pl.REFERENCE_PLATES["b"])
        assert rep.eps_sigma < 1 and rep.eps_dh < 1

    def test_exact_estimate_scores_zero(self):
        assert pl.relative_error_percent(35e6, 35e6) == 0.0
        assert pl.relative_error_percent(2.02e-3, 2e-3) == pytest.approx(1.0)

    def test_repeat_accounting(self, default_grid):
        recs = pl.synthesize_measurements(DEFAULT_PROBE, pl.REFERENCE_PLATES["a"], (1650.0, 3800.0), 3,
                                          NoiseModel(0.002, 0), 1)
        est = pl.estimate_all(recs, DEFAULT_PROBE, default_grid)
        rep = pl.merit_report(recs, est, pl.REFERENCE_PLATES["a"])
        for f in rep.per_frequency:
            assert f.n_repeats == 3 and f.n_accepted + f.n_discarded == 3
            assert sum(f.regions.values()) == 3

    def test_everything_discarded(self, default_grid):
        plate = PlateSpec(18e6, 2e-3)
        recs = [MeasurementRecord(pl.TWO_PI * 1650, 0j)]
        est = pl.estimate_all(recs, DEFAULT_PROBE, default_grid)
        with pytest.raises(EstimationInfeasibleError, match="1650 Hz"):
            pl.merit_report(recs, est, plate)

    def test_outputs_are_stable(self, plate_b_run):
        recs, est = plate_b_run
        rep = pl.merit_report(recs, est, pl.REFERENCE_PLATES["b"])
        again = pl.merit_report(recs, est, pl.REFERENCE_PLATES["b"])
        assert rep.to_json() == again.to_json()
        doc = json.loads(rep.to_json())
        assert doc["final"]["eps_sigma"] == rep.eps_sigma
        assert rep.merit_csv().splitlines()[0].startswith("frequency_hz,n_accepted")
        assert len(rep.estimates_csv().splitlines()) == 1 + len(recs)
        assert "final: sigma" in rep.render()

    def test_threads_do_not_change_estimates(self, plate_b_run, default_grid):
        recs, est = plate_b_run
        assert pl.estimate_all(recs, DEFAULT_PROBE, default_grid, threads=3) == est

    def test_calibration_neutral_for_model_data(self, plate_b_run, default_grid):
        recs, est = plate_b_run
        flat = CalibrationTable([pl.TWO_PI * 500, pl.TWO_PI * 3000], [1.0, 1.0])
        assert pl.estimate_all(recs, DEFAULT_PROBE, default_grid, calibration=flat) == est
        refs = [(pl.REFERENCE_PLATES[n], pl.synthesize_measurements(DEFAULT_PROBE, pl.REFERENCE_PLATES[n], FIG5))
                for n in "ce"]
        fitted = pl.fit_calibration(refs, DEFAULT_PROBE, default_grid)
        again = pl.estimate_all(recs, DEFAULT_PROBE, default_grid, calibration=fitted)
        for a, b in zip(est, again):
            assert a.accepted == b.accepted
            if a.accepted:
                # well inside the one-cell intersection tolerance
                assert b.sigma_hat == pytest.approx(a.sigma_hat, rel=1e-8)
                assert b.dh_hat == pytest.approx(a.dh_hat, rel=1e-8)

    def test_calibration_undoes_gain(self, default_grid):
        plate = pl.REFERENCE_PLATES["b"]
        gain = 0.9 - 0.1j
        recs = pl.synthesize_measurements(DEFAULT_PROBE, plate, FIG5, noise=NoiseModel(0, 0, gain))
        raw = pl.estimate_all(recs, DEFAULT_PROBE, default_grid)
        refs = [(pl.REFERENCE_PLATES[n], pl.synthesize_measurements(
            DEFAULT_PROBE, pl.REFERENCE_PLATES[n], FIG5, noise=NoiseModel(0, 0, gain))) for n in "ce"]
        table = pl.fit_calibration(refs, DEFAULT_PROBE, default_grid)
        fixed = pl.estimate_all(recs, DEFAULT_PROBE, default_grid, calibration=table)
        rep = pl.merit_report(recs, fixed, plate, table)
        assert rep.eps_sigma < 0.5 and rep.eps_dh < 0.5
        try:
            bad = pl.merit_report(recs, raw, plate)
            assert bad.eps_sigma > 5 * rep.eps_sigma or bad.eps_dh > 5 * rep.eps_dh
        except EstimationInfeasibleError:
            pass


def test_more_noise_means_more_spread(default_grid):
    plate = pl.REFERENCE_PLATES["a"]
    spreads = []
    for rho in (0.001, 0.01):
        recs = pl.synthesize_measurements(DEFAULT_PROBE, plate, (1650.0,), 10, NoiseModel(rho, 0), 5)
        est = pl.estimate_all(recs, DEFAULT_PROBE, default_grid)
        rep = pl.merit_report(recs, est, plate)
        spreads.append(rep.per_frequency[0].sigma_std)
    assert spreads[1] > 3 * spreads[0]


CONFIG = """
[probe]
r1 = 23.6
r2 = 23.95
h1 = 6.0
h2 = 6.0
d = 2.2
N1 = 17
N2 = 17
l0 = 1.0

[grid]
n2 = 40
n3 = 30
k = 8

[calibration]
reference_plates = ["c"]

[noise]
rho = 0.01
gain = [0.95, -0.05]
repeats = 4
seed = 11

[measurements]
plate = "mine"
frequencies_hz = [1000, 2000]

[plates.mine]
sigma = 20e6
dh = 1.5
"""


class TestConfig:
    def test_parse(self, tmp_path):
        cfg = pl.parse_config(CONFIG, tmp_path)
        assert astuple(cfg.probe) == pytest.approx(astuple(DEFAULT_PROBE), rel=1e-15)
        assert cfg.grid_params["n2"] == 40 and cfg.k == 8
        assert cfg.reference_plates == ("c",)
        assert cfg.noise == NoiseModel(0.01, 1e-6, 0.95 - 0.05j)
        assert cfg.repeats == 4 and cfg.seed == 11
        assert cfg.frequencies_hz == (1000.0, 2000.0)
        assert cfg.truth == PlateSpec(20e6, 1.5e-3)

    def test_gather(self, tmp_path):
        cfg = pl.parse_config(CONFIG, tmp_path)
        target, ref = pl.gather_measurements(cfg)
        assert len(target) == 8 and len(ref) == 8
        assert {m.plate_id for m in target} == {"mine"} and {m.plate_id for m in ref} == {"c"}

    @pytest.mark.parametrize("bad", [
        "[probe]\nr1 = 1\n",
        CONFIG + "\n[extra]\nx = 1\n",
        CONFIG.replace('reference_plates = ["c"]', 'reference_plates = ["zz"]'),
        CONFIG.replace('plate = "mine"', 'plate = "nope"'),
        "not toml [",
    ])
    def test_rejects(self, bad):
        with pytest.raises(InputError):
            pl.parse_config(bad)

    def test_probe_file(self, tmp_path):
        path = tmp_path / "p.toml"
        path.write_text(CONFIG.split("[grid]")[0])
        assert pl.load_probe(path).tag == DEFAULT_PROBE.tag


def test_merit_identities(plate_b_run):
    recs, est = plate_b_run
    truth = pl.REFERENCE_PLATES["b"]
    rep = pl.merit_report(recs, est, truth)
    assert rep.eps_sigma == abs(rep.sigma - truth.sigma) / truth.sigma * 100
    assert rep.eps_dh == abs(rep.dh - truth.dh) / truth.dh * 100
    for f in rep.per_frequency:
        if f.sigma_mean is not None:
            assert f.eps_sigma == abs(f.sigma_mean - truth.sigma) / truth.sigma * 100
            assert f.eps_dh >= 0 and f.std_eps_sigma >= 0


def test_render_of_a_hardware_style_row():
    row = pl.FrequencyMerit(1650.0, pl.TWO_PI * 1650, 20, 20, {"h": 20}, 17.9e6, 2.10e-3, 0.2e6, 0.05e-3,
                            1.36, 3.78, 0.5, 1.2, True)
    rep = pl.MeritReport((row,), 17.9e6, 2.10e-3, 0.2e6, 0.05e-3, 17.66e6, 2.03e-3, 1.36, 3.78, 0.5, 1.2)
    text = rep.render()
    assert "2.1000" in text and "3.780" in text and "20/20" in text


@pytest.mark.slow
def test_median_error_grows_with_noise(default_grid):
    plate = pl.REFERENCE_PLATES["a"]
    medians = []
    for rho in (0.0, 0.0025, 0.005, 0.01):
        eps = []
        for seed in range(30):
            recs = pl.synthesize_measurements(DEFAULT_PROBE, plate, FIG5, 2, NoiseModel(rho, 0.0), seed)
            rep = pl.merit_report(recs, pl.estimate_all(recs, DEFAULT_PROBE, default_grid), plate)
            eps.append((rep.eps_sigma, rep.eps_dh))
        medians.append(np.median(eps, axis=0))
    medians = np.array(medians)
    assert np.all(np.diff(medians, axis=0) >= 0), medians
