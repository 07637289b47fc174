import numpy as np
import pytest

from tdfex.errors import ContractError
from tdfex.metrics import (FomInput, corpus_average_power, dynamic_range, evaluate,
                           fom_comparison_report, fom_schreier, freq_sweep,
                           inject_noise, noise_spectrum_slope, vpp_to_rms,
                           write_confusion_csv, write_spectrum_csv, write_summary_json,
                           write_sweep_csv)

THIS_DESIGN = FomInput(54.89, 9.3e-3, 16, 111.0, 10400.0, 0.016)


class TestFom:
    def test_published_rows_reproduce(self):
        assert fom_schreier(THIS_DESIGN) == pytest.approx(93.11, abs=0.05)
        yang = FomInput(40.0, 0.38e-3, 16, 100.0, 5000.0, 0.010)
        assert fom_schreier(yang) == pytest.approx(91.5, abs=0.1)
        oh = FomInput(47.0, 0.06e-3, 32, 75.0, 4000.0, 0.512)
        assert fom_schreier(oh) == pytest.approx(91.33, abs=0.1)

    def test_badami_row_documented_deviation(self):
        rows = {r["name"]: r for r in fom_comparison_report()}
        assert abs(rows["badami-jssc16"]["deviation_db"] + 3.0) < 0.3
        for name in ("this-design", "yang-jssc19", "oh-jssc19"):
            assert abs(rows[name]["deviation_db"]) <= 0.1

    def test_monotonicity_exact(self):
        base = fom_schreier(THIS_DESIGN)
        plus3 = FomInput(57.89, 9.3e-3, 16, 111.0, 10400.0, 0.016)
        assert fom_schreier(plus3) - base == pytest.approx(3.0, abs=1e-12)
        x2p = FomInput(54.89, 18.6e-3, 16, 111.0, 10400.0, 0.016)
        assert fom_schreier(x2p) - base == pytest.approx(-10 * np.log10(2), abs=1e-12)
        x2s = FomInput(54.89, 9.3e-3, 16, 111.0, 10400.0, 0.032)
        assert fom_schreier(x2s) - base == pytest.approx(-10 * np.log10(2), abs=1e-12)

    def test_preconditions(self):
        with pytest.raises(ContractError):
            FomInput(50.0, 1.0, 1, 100.0, 5000.0, 0.016)
        with pytest.raises(ContractError):
            FomInput(50.0, 1.0, 16, 5000.0, 100.0, 0.016)


class TestDynamicRange:
    def test_reference_point(self):
        # 390 mVpp sine -> 137.89 mV RMS over 248 uV RMS noise
        assert dynamic_range(vpp_to_rms(0.390), 248e-6) == pytest.approx(54.90, abs=0.02)
        assert dynamic_range(vpp_to_rms(0.390), 248e-6) == pytest.approx(54.89, abs=0.05)

    def test_equal_is_zero(self):
        assert dynamic_range(0.1, 0.1) == 0.0

    def test_ten_x_is_20db(self):
        assert dynamic_range(1.0, 0.1) == pytest.approx(20.0, abs=1e-12)

    def test_scale_invariance(self):
        assert dynamic_range(0.3, 0.001) == pytest.approx(
            dynamic_range(0.3 * 7.7, 0.001 * 7.7), abs=1e-12)


class TestInjectNoise:
    def test_none_is_identity(self):
        frames = np.arange(64).reshape(4, 16)
        assert np.array_equal(inject_noise(frames, None, 0, 1.0), frames)

    def test_zero_db_noise_power_statistics(self):
        # oracle: sample variance of the injected noise over >=1e5 samples
        clean = np.full((12500, 16), 2048.0)
        p_avg = 100.0 ** 2
        noisy = inject_noise(clean, 0.0, 7, p_avg)
        added = noisy - clean
        assert added.var() == pytest.approx(p_avg, rel=0.02)
        assert abs(added.mean()) < 2.0

    def test_requested_snr_within_0p2_db(self):
        clean = np.full((12500, 16), 2048.0)
        p_avg = 150.0 ** 2
        for snr in (20.0, 6.0, 0.0):
            noisy = inject_noise(clean, snr, 11, p_avg)
            measured = 10 * np.log10(p_avg / (noisy - clean).var())
            assert measured == pytest.approx(snr, abs=0.2)

    def test_seed_reproducible(self):
        clean = np.full((100, 16), 2000.0)
        a = inject_noise(clean, 10.0, 3, 1e4)
        b = inject_noise(clean, 10.0, 3, 1e4)
        assert np.array_equal(a, b)

    def test_clamped_to_raw_range(self):
        noisy = inject_noise(np.full((400, 16), 4000.0), 0.0, 1, 500.0 ** 2)
        assert noisy.max() <= 4095 and noisy.min() >= 0

    def test_corpus_average_power(self):
        frames = np.full((10, 16), 30.0)
        assert corpus_average_power(frames) == pytest.approx(900.0)
        assert corpus_average_power(frames, beta=np.full(16, 30.0)) == 0.0


def biquad_response(center, q):
    def h(f):
        w = 2j * np.pi * f
        w0 = 2 * np.pi * center
        return abs((w0 / q) * w / (w * w + (w0 / q) * w + w0 * w0))
    return h


class TestFreqSweep:
    def test_recovers_centers_and_q_from_analytic_bank(self):
        centers = np.array([100.0, 400.0, 1600.0, 6400.0])
        hs = [biquad_response(c, 2.0) for c in centers]

        def response(freq, amp):
            return amp * np.array([h(freq) for h in hs])

        freqs = np.logspace(np.log10(60), np.log10(11000), 160)
        res = freq_sweep(response, freqs, amplitude=0.3)
        assert np.all(np.abs(res.centers - centers) / centers < 0.01)
        assert np.all(np.abs(res.q - 2.0) < 0.05)
        assert np.all(np.abs(res.center_gains - 1.0) < 0.01)

    def test_gain_amplitude_independent(self):
        h = biquad_response(500.0, 2.0)

        def response(freq, amp):
            return amp * np.array([h(freq)])

        freqs = np.logspace(2, 3, 30)
        r1 = freq_sweep(response, freqs, amplitude=0.1)
        r2 = freq_sweep(response, freqs, amplitude=0.2)
        assert np.allclose(r1.gains, r2.gains, rtol=1e-12)

    def test_above_nyquist_skipped_with_warning(self):
        h = biquad_response(500.0, 2.0)

        def response(freq, amp):
            assert freq < 16000.0
            return amp * np.array([h(freq)])

        freqs = np.logspace(2, np.log10(40000), 40)
        with pytest.warns(UserWarning, match="skipping"):
            res = freq_sweep(response, freqs, 0.1, nyquist=16000.0)
        assert res.freqs.max() < 16000.0

    def test_too_few_usable_tones(self):
        with pytest.warns(UserWarning), pytest.raises(ContractError):
            freq_sweep(lambda f, a: np.array([1.0]), [20000.0, 21000.0],
                       0.1, nyquist=16000.0)

    def test_argmax_channel_matches_tone(self):
        centers = [200.0, 1000.0, 5000.0]
        hs = [biquad_response(c, 2.0) for c in centers]

        def response(freq, amp):
            return amp * np.array([h(freq) for h in hs])

        for k, c in enumerate(centers):
            gains = response(c, 1.0)
            assert int(np.argmax(gains)) == k


class TestNoiseSpectrumSlope:
    def test_synthetic_first_order_shaped(self):
        rng = np.random.default_rng(0)
        e = rng.uniform(0, 1, (1 << 18) + 1)
        slope = noise_spectrum_slope(np.diff(e), 62500.0)
        assert slope == pytest.approx(20.0, abs=0.5)

    def test_white_noise_flat(self):
        rng = np.random.default_rng(1)
        slope = noise_spectrum_slope(rng.standard_normal(1 << 18), 62500.0)
        assert slope == pytest.approx(0.0, abs=3.0)

    def test_insufficient_samples(self):
        with pytest.raises(ContractError):
            noise_spectrum_slope(np.zeros(1000), 62500.0)


class TestEvaluate:
    NAMES = [f"c{i}" for i in range(12)]

    def _entries(self, labels):
        return [{"path": f"p{i}", "label": lab, "split": "test"}
                for i, lab in enumerate(labels)]

    def test_perfect_classifier(self):
        labels = [self.NAMES[i % 12] for i in range(48)]
        entries = self._entries(labels)
        index = {n: i for i, n in enumerate(self.NAMES)}
        res = evaluate(entries, lambda e: index[e["label"]], self.NAMES)
        assert res.accuracy == 1.0
        assert np.array_equal(res.confusion, np.eye(12))
        assert np.all(res.per_class_tpr == 1.0)

    def test_majority_prior_counting_oracle(self):
        labels = ["c0"] * 30 + ["c1"] * 12 + ["c2"] * 8
        entries = self._entries(labels)
        res = evaluate(entries, lambda e: 0, self.NAMES)
        assert res.accuracy == pytest.approx(30 / 50)

    def test_rows_sum_to_one(self):
        rng = np.random.default_rng(0)
        labels = [self.NAMES[i] for i in rng.integers(0, 12, 600)]
        entries = self._entries(labels)
        res = evaluate(entries, lambda e: int(rng.integers(0, 12)), self.NAMES)
        sums = res.confusion.sum(axis=1)
        assert np.all(np.abs(sums - 1.0) < 1e-9)
        # accuracy equals the support-weighted trace
        support = res.counts.sum(axis=1)
        assert res.accuracy == pytest.approx(
            (np.diag(res.confusion) * support).sum() / support.sum())

    def test_empty_split_rejected(self):
        with pytest.raises(ContractError):
            evaluate([], lambda e: 0, self.NAMES)


class TestWriters:
    def test_csv_and_json_outputs(self, tmp_path):
        h = biquad_response(500.0, 2.0)
        freqs = np.logspace(2, 3, 10)
        res = freq_sweep(lambda f, a: a * np.array([h(f)]), freqs, 0.1)
        write_sweep_csv(tmp_path / "sweep.csv", res)
        lines = (tmp_path / "sweep.csv").read_text().splitlines()
        assert lines[0] == "channel,freq_hz,gain_db"
        assert len(lines) == 1 + 10

        write_spectrum_csv(tmp_path / "spec.csv", np.array([10.0, 20.0]),
                           np.array([1e-3, 1e-4]))
        assert (tmp_path / "spec.csv").read_text().startswith("freq_hz,psd_db")

        labels = ["c0", "c1"] * 6
        entries = [{"path": str(i), "label": l, "split": "test"}
                   for i, l in enumerate(labels)]
        names = [f"c{i}" for i in range(12)]
        res2 = evaluate(entries, lambda e: 0, names)
        write_confusion_csv(tmp_path / "conf.csv", res2)
        assert len((tmp_path / "conf.csv").read_text().splitlines()) == 1 + 144

        write_summary_json(tmp_path / "s.json", {"accuracy": res2.accuracy})
        again = tmp_path / "s2.json"
        write_summary_json(again, {"accuracy": res2.accuracy})
        assert (tmp_path / "s.json").read_bytes() == again.read_bytes()
