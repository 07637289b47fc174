import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tdfex.errors import ContractError
from tdfex.pfm_tdc import (DECIMATION, FRAME_RATE_HZ, FRAME_SHIFT_S, OVERSAMPLE_HZ,
                           PfmConfig, PfmEncoderState, cic_decimate, encode_bank,
                           lane_states, pfm_encode, xor_differentiate)

RATE_IN = 8 * 32000.0


def steady(duty, seconds):
    return np.full(int(seconds * RATE_IN), duty)


class TestPfmEncode:
    def test_zero_duty_free_run_rate(self):
        cfg = PfmConfig()
        out = pfm_encode(steady(0.0, 0.2), steady(0.0, 0.2), RATE_IN, cfg)
        duration = out.increments.size / OVERSAMPLE_HZ
        rate = out.increments.sum() / duration
        assert rate == pytest.approx(15 * cfg.f_free, rel=1e-3)

    def test_two_point_rate_difference(self):
        cfg = PfmConfig()
        seconds = 0.5
        r = []
        for total in (0.5, 0.25):
            out = pfm_encode(steady(total / 2, seconds), steady(total / 2, seconds),
                             RATE_IN, cfg)
            r.append(out.increments.sum() / (out.increments.size / OVERSAMPLE_HZ))
        assert r[0] - r[1] == pytest.approx(15 * cfg.gain_hz * 0.25, rel=1e-3)

    def test_total_edges_phase_accumulation_oracle(self):
        cfg = PfmConfig()
        d, seconds = 0.3, 0.25
        out = pfm_encode(steady(d, seconds), steady(0.0, seconds), RATE_IN, cfg)
        t_last = (out.increments.size - 1) / OVERSAMPLE_HZ
        expected = 15 * (cfg.f_free + cfg.gain_hz * d) * t_last
        assert abs(out.increments.sum() - expected) <= 1.0

    def test_rectified_duties_add(self):
        cfg = PfmConfig()
        a = pfm_encode(steady(0.4, 0.2), steady(0.0, 0.2), RATE_IN, cfg)
        b = pfm_encode(steady(0.2, 0.2), steady(0.2, 0.2), RATE_IN, cfg)
        assert abs(a.increments.sum() - b.increments.sum()) <= 1

    def test_conservation_exact(self):
        rng = np.random.default_rng(5)
        duty = np.abs(rng.uniform(0, 0.5, int(0.3 * RATE_IN)))
        out = pfm_encode(duty, duty * 0.5, RATE_IN, PfmConfig())
        cycles_15 = np.floor(out.cycles * 15)
        assert out.increments.sum() == cycles_15[-1] - 0.0

    def test_conservation_with_jitter(self):
        duty = steady(0.0, 0.5)
        out = pfm_encode(duty, duty, RATE_IN, PfmConfig(jitter_lanes=2.0), seed=9)
        # telescoping still exact: total equals final jittered reading
        assert out.negative_events == 0
        assert out.increments.min() >= 0

    def test_encoder_state_constructor(self):
        st_ = PfmEncoderState.create()
        assert st_.sro.switch_gains["bpf_p"] == st_.cfg.gain_hz


class TestXorDifferentiate:
    def test_static_lanes(self):
        lanes = np.zeros((100, 15), dtype=np.uint8)
        assert np.all(xor_differentiate(lanes) == 0)

    def test_single_lane_toggle(self):
        lanes = np.zeros((50, 15), dtype=np.uint8)
        lanes[:, 3] = np.arange(50) % 2
        inc = xor_differentiate(lanes)
        assert np.all(inc[1:] == 1)

    def test_window_sum_1khz_oracle(self):
        # 1 kHz oscillator sampled at 62.5 kHz for one 16.384 ms window:
        # 15 * 1000 * 0.016384 = 245.76 -> 245 or 246 edges
        cfg = PfmConfig(f_free=1000.0, f_fll=0.0, k_pfm=0.0)
        n_in = int(np.ceil((DECIMATION + 2) / OVERSAMPLE_HZ * RATE_IN))
        out = pfm_encode(np.zeros(n_in), np.zeros(n_in), RATE_IN, cfg)
        window = out.increments[1 : DECIMATION + 1].sum()
        assert window in (245, 246)

    def test_matches_floor_difference_fast_path(self):
        # Hermite identity: sum_k floor(x - k/15) telescopes like floor(15 x)
        rng = np.random.default_rng(11)
        duty = rng.uniform(0, 0.9, int(0.05 * RATE_IN))
        out = pfm_encode(duty, np.zeros_like(duty), RATE_IN, PfmConfig())
        lanes = lane_states(out.cycles)
        slow = xor_differentiate(lanes)
        assert np.array_equal(slow, out.increments)

    def test_bad_shape(self):
        with pytest.raises(ContractError):
            xor_differentiate(np.zeros((10, 14), dtype=np.uint8))

    def test_increment_within_one_lane_of_true_advance(self):
        # no multi-bit corruption: the count never strays more than one
        # quantum from the exact phase advance
        rng = np.random.default_rng(13)
        duty = rng.uniform(0, 0.9, int(0.1 * RATE_IN))
        out = pfm_encode(duty, duty * 0.3, RATE_IN, PfmConfig())
        true_adv = np.diff(out.cycles * 15, prepend=0.0)
        assert np.all(np.abs(out.increments - true_adv) < 1.0)


class TestCicDecimate:
    def test_zero(self):
        assert np.all(cic_decimate(np.zeros(4096, dtype=int)) == 0)

    def test_dc_gain_r(self):
        frames = cic_decimate(np.full(3 * DECIMATION + 100, 3))
        assert frames.tolist() == [3072, 3072, 3072]

    def test_partial_tail_dropped(self):
        frames = cic_decimate(np.ones(DECIMATION + 7, dtype=int))
        assert frames.size == 1

    def test_frame_rate_arithmetic(self):
        assert OVERSAMPLE_HZ / DECIMATION == pytest.approx(61.03515625)
        assert FRAME_RATE_HZ == pytest.approx(61.035, abs=1e-3)
        assert FRAME_SHIFT_S == pytest.approx(0.016384)

    def test_one_second_clip_yields_61_frames(self):
        n_samples = int(1.0 * OVERSAMPLE_HZ)
        assert cic_decimate(np.ones(n_samples, dtype=int)).size == 61

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(1, 7))
    def test_conservation_property(self, seed, r):
        rng = np.random.default_rng(seed)
        inc = rng.integers(0, 16, 4 * r + rng.integers(0, r))
        frames = cic_decimate(inc, r)
        used = frames.size * r
        assert frames.sum() == inc[:used].sum()


class TestLinearity:
    def test_mean_frame_count_affine_in_duty(self):
        cfg = PfmConfig()
        slope_per_duty = 15 * cfg.gain_hz * DECIMATION / OVERSAMPLE_HZ
        means = []
        for d in (0.1, 0.3, 0.5):
            out = pfm_encode(steady(d, 1.2), steady(0.0, 1.2), RATE_IN, cfg)
            means.append(cic_decimate(out.increments).mean())
        assert means[1] - means[0] == pytest.approx(0.2 * slope_per_duty, rel=1e-3)
        assert means[2] - means[1] == pytest.approx(0.2 * slope_per_duty, rel=1e-3)
        assert cfg.counts_per_duty == pytest.approx(slope_per_duty)

    def test_zero_input_beta_midscale(self):
        out = pfm_encode(steady(0.0, 1.2), steady(0.0, 1.2), RATE_IN, PfmConfig())
        frames = cic_decimate(out.increments)
        assert frames.mean() == pytest.approx(2048.0, abs=1.0)


class TestEncodeBank:
    def test_shapes_and_channel_isolation(self):
        n = int(1.0 * RATE_IN)
        rect_p = np.zeros((n, 4))
        rect_p[:, 2] = 0.25
        frames = encode_bank(rect_p, np.zeros_like(rect_p), RATE_IN, PfmConfig())
        assert frames.shape == (61, 4)
        assert frames[:, 2].mean() > frames[:, 0].mean() + 400
        np.testing.assert_allclose(frames[:, 0], frames[:, 1])
