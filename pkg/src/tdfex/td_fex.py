"""Behavioral model of the time-domain analog front end.

Signal path: a frequency-locked VCO turns the input voltage into a
differential multi-phase PWM duty; each of the 16 channels then realizes a
second-order band-pass in the phase domain with a two-integrator loop built
from switched ring oscillators (SROs) and phase-frequency detectors (PFDs).

Loop topology (one channel, pseudo-differential pair per oscillator):

    input duty --K_IN--> [SRO1] --/N--> PFD2 ---> UP2/DN2 (rectified output)
                   ^                      |
                   |--(-K1)---------------+          damping, sets Q
                   |--(-K2)-- PFD1 <--/N-- [SRO2] <--K1-- UP2/DN2

An SRO integrates frequency into phase, so each oscillator pair is a
lossless phase integrator with switching gain K*f_FLL per input port. The
PFD measures a divided phase difference as a PWM duty (K_PFD = 1/(2*pi)
duty per radian) and simultaneously rectifies it: its UP and DN outputs are
the positive and negative half-wave parts, and UP+DN is the full-wave
rectified magnitude. Writing the loop equations for the differential
phases gives the duty-to-duty transfer

    H(s) = (K_IN/K1) * (w0/Q) s / (s^2 + (w0/Q) s + w0^2),
    w0 = 2*pi * f_FLL * K_PFD * sqrt(K1 K2) / N,   Q = sqrt(K2/K1).

Two fidelity modes are provided:

* AVERAGED: PWM ports carry instantaneous duty values and the linear loop
  above is integrated trapezoidally (bilinear-discretized biquad) at a
  multiple of the audio rate. Fast; the default for feature extraction.
* EDGE: the four phase accumulators, dividers and both PFD state machines
  are stepped at sim_rate with binary PWM feedback. Slow; used to validate
  the averaged model.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.signal import lfilter

from .errors import ContractError, FormatError, SimulationError
from .ref_fex import mel_centers
from .signal_io import PcmClip

K_PFD = 1.0 / (2.0 * np.pi)

#: Default VCO lock frequency: 0.25 V input, 1 Mohm, 1 pF, 0.25 V reference.
DEFAULT_VCO_HZ = 0.25 / (15.0 * 1e6 * 1e-12 * 0.25)

N_PHASES = 15


def fll_lock_freq(v_in: float, r_ref: float, c_ref: float, v_ref: float) -> float:
    """Locked oscillator frequency v_in / (15 R C Vref).

    The voltage-to-frequency tuning gain is the same expression per volt,
    fixed by passives only, which is what linearizes the converter.
    """
    if r_ref <= 0 or c_ref <= 0 or v_ref <= 0:
        raise ContractError("reference parameters must be positive")
    if v_in < 0:
        raise ContractError("v_in must be non-negative")
    return v_in / (15.0 * r_ref * c_ref * v_ref)


# --- multi-phase PWM -------------------------------------------------------


@dataclass
class MultiPhasePwm:
    """Differential PWM stream: instantaneous duties or 15 binary lanes."""

    rate: float
    duty_p: np.ndarray | None = None
    duty_n: np.ndarray | None = None
    lanes_p: np.ndarray | None = None
    lanes_n: np.ndarray | None = None
    saturation_events: int = 0

    @property
    def mode(self) -> str:
        return "averaged" if self.duty_p is not None else "edge"

    def side_duty(self, polarity: str) -> np.ndarray:
        """Per-step duty of one side; lane sum / 15 in edge mode."""
        if self.mode == "averaged":
            return self.duty_p if polarity == "P" else self.duty_n
        lanes = self.lanes_p if polarity == "P" else self.lanes_n
        return lanes.mean(axis=1)

    def diff_duty(self) -> np.ndarray:
        return self.side_duty("P") - self.side_duty("N")


@dataclass
class VtcConfig:
    f3db: float = 17e3
    hd2_db: float | None = -70.0
    hd3_db: float | None = -70.0
    f_vco: float = DEFAULT_VCO_HZ


def _one_pole_lowpass(f3db: float, rate: float) -> tuple[np.ndarray, np.ndarray]:
    # trapezoidal discretization, unity DC gain
    w = 2.0 * np.pi * f3db
    k = 2.0 * rate
    b = np.array([w, w]) / (w + k)
    a = np.array([1.0, (w - k) / (w + k)])
    return b, a


def vtc_convert(clip: PcmClip, cfg: VtcConfig | None = None, oversample: int = 8,
                mode: str = "averaged", sim_rate: float | None = None) -> MultiPhasePwm:
    """Voltage to differential PWM duty.

    The duty difference tracks the input through a first-order low pass at
    f3db with unity DC gain; a memoryless cubic adds the configured second
    and third harmonic levels (referred to a full-scale tone). In edge mode
    the duties are realized as 15 phase-staggered binary lanes at the VCO
    rate, sampled on the sim_rate grid.
    """
    cfg = cfg or VtcConfig()
    x = clip.samples
    sat = int(np.count_nonzero(np.abs(x) > 1.0))
    if sat:
        x = np.clip(x, -1.0, 1.0)
    a2 = 2.0 * 10.0 ** (cfg.hd2_db / 20.0) if cfg.hd2_db is not None else 0.0
    a3 = 4.0 * 10.0 ** (cfg.hd3_db / 20.0) if cfg.hd3_db is not None else 0.0
    y = x + a2 * x * x + a3 * x * x * x

    rate = clip.sample_rate * oversample if mode == "averaged" else float(sim_rate or 0)
    if mode == "edge" and rate <= 0:
        raise ContractError("edge mode needs an explicit sim_rate")
    n_out = int(round(y.size * rate / clip.sample_rate))
    if y.size:
        pos = np.arange(n_out) * (clip.sample_rate / rate)
        y_up = np.interp(pos, np.arange(y.size), y)
    else:
        y_up = np.zeros(0)
    b, a = _one_pole_lowpass(cfg.f3db, rate)
    y_f = lfilter(b, a, y_up)
    duty_p = np.clip(0.5 + 0.5 * y_f, 0.0, 1.0)
    duty_n = np.clip(0.5 - 0.5 * y_f, 0.0, 1.0)
    if mode == "averaged":
        return MultiPhasePwm(rate=rate, duty_p=duty_p, duty_n=duty_n,
                             saturation_events=sat)
    t = np.arange(n_out) / rate
    ramp = cfg.f_vco * t
    phase = (ramp[:, None] - np.arange(N_PHASES)[None, :] / N_PHASES) % 1.0
    lanes_p = (phase < duty_p[:, None]).astype(np.uint8)
    lanes_n = (phase < duty_n[:, None]).astype(np.uint8)
    return MultiPhasePwm(rate=rate, lanes_p=lanes_p, lanes_n=lanes_n,
                         saturation_events=sat)


# --- PFD --------------------------------------------------------------------

IDLE, UP_ACTIVE, DN_ACTIVE = 0, 1, -1


def pfd_transition(state: int, inp_edge: bool, inn_edge: bool) -> int:
    """Three-state PFD: two flops with an immediate both-high reset.

    Exactly symmetric under (INP<->INN, UP<->DN), which is what makes the
    UP+DN sum an even function of the phase difference.
    """
    if inp_edge and inn_edge:
        return IDLE
    if inp_edge:
        return IDLE if state == DN_ACTIVE else UP_ACTIVE
    if inn_edge:
        return IDLE if state == UP_ACTIVE else DN_ACTIVE
    return state


@dataclass
class PfdState:
    state: int = IDLE

    @property
    def up(self) -> int:
        return 1 if self.state == UP_ACTIVE else 0

    @property
    def dn(self) -> int:
        return 1 if self.state == DN_ACTIVE else 0


def pfd_step(state: PfdState, inp_edge: bool = False, inn_edge: bool = False) -> PfdState:
    return PfdState(pfd_transition(state.state, inp_edge, inn_edge))


def pfd_duty_from_edges(inp_times: np.ndarray, inn_times: np.ndarray,
                        t_start: float, t_stop: float) -> tuple[float, float]:
    """Exact event-driven UP/DN duty over [t_start, t_stop].

    Edges with identical timestamps are treated as simultaneous (reset).
    """
    if t_stop <= t_start:
        raise ContractError("empty measurement window")
    times = np.concatenate([inp_times, inn_times])
    kinds = np.concatenate([np.zeros(len(inp_times), np.int8),
                            np.ones(len(inn_times), np.int8)])
    order = np.argsort(times, kind="stable")
    times = times[order].tolist()
    kinds = kinds[order].tolist()
    state = IDLE
    t_prev = times[0] if times else t_stop
    up_time = dn_time = 0.0
    i, n = 0, len(times)
    while i < n:
        t = times[i]
        ep = en = False
        while i < n and times[i] == t:
            if kinds[i] == 0:
                ep = True
            else:
                en = True
            i += 1
        seg = min(t, t_stop) - max(t_prev, t_start)
        if seg > 0:
            if state == UP_ACTIVE:
                up_time += seg
            elif state == DN_ACTIVE:
                dn_time += seg
        state = pfd_transition(state, ep, en)
        t_prev = t
    seg = t_stop - max(t_prev, t_start)
    if seg > 0:
        if state == UP_ACTIVE:
            up_time += seg
        elif state == DN_ACTIVE:
            dn_time += seg
    span = t_stop - t_start
    return up_time / span, dn_time / span


def fwr_duty(up: np.ndarray, dn: np.ndarray) -> float:
    """Mean rectified duty of a sampled UP/DN pair."""
    return float(np.mean(np.asarray(up, dtype=float) + np.asarray(dn, dtype=float)))


# --- SRO --------------------------------------------------------------------


@dataclass
class SroState:
    """Phase accumulator with per-port switching gains (Hz per unit duty)."""

    free_run_freq: float
    switch_gains: dict[str, float] = field(default_factory=dict)
    phase: float = 0.0
    last_edge_phase: float = 0.0
    clamp_events: int = 0

    def instantaneous_freq(self, duties: dict[str, float]) -> float:
        f = self.free_run_freq
        for port, gain in self.switch_gains.items():
            f += gain * duties.get(port, 0.0)
        if f < 0.0:
            self.clamp_events += 1
            f = 0.0
        return f

    def advance(self, duties: dict[str, float], dt: float) -> int:
        """Integrate for dt; returns lane-edge count (15 per full cycle)."""
        self.phase += 2.0 * np.pi * self.instantaneous_freq(duties) * dt
        edges = 0
        quantum = 2.0 * np.pi / N_PHASES
        while self.phase - self.last_edge_phase >= quantum:
            self.last_edge_phase += quantum
            edges += 1
        return edges


# --- band-pass channel ------------------------------------------------------


@dataclass
class ChannelConfig:
    center: float
    f_fll: float
    k_in: float
    k1: float
    k2: float
    n_div: int = 1
    k_pfd: float = K_PFD
    f_free: float | None = None
    fidelity: str = "averaged"
    sim_rate: float | None = None

    def __post_init__(self):
        if self.f_free is None:
            self.f_free = self.f_fll
        if min(self.center, self.f_fll, self.k_in, self.k1, self.k2) <= 0:
            raise ContractError("channel gains and frequencies must be positive")
        if self.fidelity not in ("averaged", "edge"):
            raise ContractError(f"unknown fidelity {self.fidelity!r}")
        rel = abs(self.derived_center - self.center) / self.center
        if rel > 1e-6:
            raise ContractError(
                f"gains give center {self.derived_center:.6g} Hz, "
                f"declared {self.center:.6g} Hz (rel err {rel:.2e})")

    @property
    def derived_center(self) -> float:
        return self.f_fll * self.k_pfd * math.sqrt(self.k1 * self.k2) / self.n_div

    @property
    def q(self) -> float:
        return math.sqrt(self.k2 / self.k1)

    @property
    def mid_band_gain(self) -> float:
        return self.k_in / self.k1

    @property
    def max_sro_freq(self) -> float:
        return self.f_free + self.f_fll * (self.k_in + self.k1 + self.k2)

    def default_sim_rate(self) -> float:
        return self.sim_rate or 64.0 * self.max_sro_freq

    @classmethod
    def from_center(cls, center: float, q: float = 2.0, f_fll: float | None = None,
                    n_div: int = 1, gain: float = 1.0, fidelity: str = "averaged",
                    sim_rate: float | None = None) -> "ChannelConfig":
        """Solve the gain ratios for a requested center and Q.

        Free-running frequency defaults to 64x the center; k1 follows from
        center = f_fll * k_pfd * sqrt(k1 k2) / n_div with k2 = q^2 k1, and
        k_in = gain * k1 sets the mid-band duty gain.
        """
        f_fll = f_fll or 64.0 * center
        k1 = 2.0 * np.pi * center * n_div / (f_fll * q)
        return cls(center=center, f_fll=f_fll, k_in=gain * k1, k1=k1,
                   k2=q * q * k1, n_div=n_div, fidelity=fidelity, sim_rate=sim_rate)


@dataclass
class RectifiedPwm:
    """Channel output: UP/DN duty pair (binary in edge mode)."""

    rate: float
    up: np.ndarray
    dn: np.ndarray
    signed: np.ndarray | None = None
    clamp_events: int = 0
    overrange_events: int = 0

    def rectified(self) -> np.ndarray:
        return self.up + self.dn


def duty_biquad_coeffs(cfg: ChannelConfig, rate: float) -> tuple[np.ndarray, np.ndarray]:
    """Trapezoidal (bilinear, no pre-warp) discretization of the loop."""
    w0 = 2.0 * np.pi * cfg.derived_center
    b_s = w0 / cfg.q
    g = cfg.mid_band_gain
    k = 2.0 * rate
    a_ = k * k
    c_ = w0 * w0
    d0 = a_ + b_s * k + c_
    b = np.array([g * b_s * k / d0, 0.0, -g * b_s * k / d0])
    a = np.array([1.0, (2.0 * c_ - 2.0 * a_) / d0, (a_ - b_s * k + c_) / d0])
    return b, a


def channel_averaged(u: np.ndarray, cfg: ChannelConfig, rate: float) -> RectifiedPwm:
    """Averaged-fidelity channel on a differential duty stream."""
    b, a = duty_biquad_coeffs(cfg, rate)
    p = lfilter(b, a, u)
    if p.size and not np.all(np.isfinite(p)):
        raise SimulationError(
            f"channel at {cfg.center:.0f} Hz diverged "
            f"(k_in={cfg.k_in:.4g}, k1={cfg.k1:.4g}, k2={cfg.k2:.4g})")
    over = int(np.count_nonzero(np.abs(p) > 1.0))
    up = np.clip(p, 0.0, 1.0)
    dn = np.clip(-p, 0.0, 1.0)
    return RectifiedPwm(rate=rate, up=up, dn=dn, signed=p, overrange_events=over)


def _channel_edge(duty_p, duty_n, cfg: ChannelConfig, rate: float) -> RectifiedPwm:
    dp = np.asarray(duty_p, dtype=float).tolist()
    dn_in = np.asarray(duty_n, dtype=float).tolist()
    n = len(dp)
    dt = 1.0 / rate
    sc = dt / cfg.n_div  # divided-output cycles per Hz per step
    f_free, f_fll = cfg.f_free, cfg.f_fll
    kin, k1, k2 = cfg.k_in, cfg.k1, cfg.k2
    c1p = c1n = c2p = c2n = 0.0
    i1p = i1n = i2p = i2n = 1.0  # next integer cycle boundary
    st1 = st2 = IDLE
    up1 = dn1 = up2 = dn2 = 0
    clamps = 0
    out_up = np.zeros(n, np.uint8)
    out_dn = np.zeros(n, np.uint8)
    transition = pfd_transition
    for i in range(n):
        fp1 = f_free + f_fll * (kin * dp[i] + k1 * dn2 + k2 * dn1)
        fn1 = f_free + f_fll * (kin * dn_in[i] + k1 * up2 + k2 * up1)
        fp2 = f_free + f_fll * (k1 * up2)
        fn2 = f_free + f_fll * (k1 * dn2)
        if fp1 < 0.0 or fn1 < 0.0:  # cannot happen with additive wiring
            clamps += 1
            fp1 = max(fp1, 0.0)
            fn1 = max(fn1, 0.0)
        c1p += fp1 * sc
        c1n += fn1 * sc
        c2p += fp2 * sc
        c2n += fn2 * sc
        e1p = c1p >= i1p
        e1n = c1n >= i1n
        e2p = c2p >= i2p
        e2n = c2n >= i2n
        if e1p:
            i1p += 1.0
        if e1n:
            i1n += 1.0
        if e2p:
            i2p += 1.0
        if e2n:
            i2n += 1.0
        if e1p or e1n:
            st2 = transition(st2, e1p, e1n)
            up2 = 1 if st2 == UP_ACTIVE else 0
            dn2 = 1 if st2 == DN_ACTIVE else 0
        if e2p or e2n:
            st1 = transition(st1, e2p, e2n)
            up1 = 1 if st1 == UP_ACTIVE else 0
            dn1 = 1 if st1 == DN_ACTIVE else 0
        out_up[i] = up2
        out_dn[i] = dn2
    return RectifiedPwm(rate=rate, up=out_up, dn=out_dn, clamp_events=clamps)


def bpf_channel(pwm: MultiPhasePwm, cfg: ChannelConfig) -> RectifiedPwm:
    """One rectifying band-pass channel in the configured fidelity mode."""
    if cfg.fidelity == "averaged":
        return channel_averaged(pwm.diff_duty(), cfg, pwm.rate)
    return _channel_edge(pwm.side_duty("P"), pwm.side_duty("N"), cfg, pwm.rate)


def bank_rectified(pwm: MultiPhasePwm, configs: list[ChannelConfig]) -> np.ndarray:
    """Rectified duty streams for a whole bank, (n_samples, n_channels).

    Channels are independent; averaged mode only (the batch feature path).
    """
    u = pwm.diff_duty()
    out = np.empty((u.size, len(configs)))
    for i, cfg in enumerate(configs):
        r = channel_averaged(u, cfg, pwm.rate)
        out[:, i] = r.up + r.dn
    return out


def default_channel_configs(n: int = 16, f_lo: float = 100.0, f_hi: float = 8000.0,
                            q: float = 2.0) -> list[ChannelConfig]:
    return [ChannelConfig.from_center(c, q=q) for c in mel_centers(n, f_lo, f_hi)]


# --- channel config files ---------------------------------------------------


def save_channel_configs(configs: list[ChannelConfig], path: str | Path) -> None:
    lines = []
    for i, cfg in enumerate(configs):
        lines.append(f"[channel {i}]")
        lines.append(f"center_hz = {float(cfg.center)!r}")
        lines.append(f"q = {float(cfg.q)!r}")
        lines.append(f"n_div = {cfg.n_div}")
        lines.append(f"f_fll_hz = {float(cfg.f_fll)!r}")
        lines.append(f"fidelity = {cfg.fidelity}")
        lines.append(f"sim_rate_hz = {cfg.sim_rate if cfg.sim_rate else 'auto'}")
        lines.append("")
    Path(path).write_text("\n".join(lines), encoding="utf-8")


def load_channel_configs(path: str | Path) -> list[ChannelConfig]:
    configs = []
    section: dict[str, str] = {}

    def flush():
        if not section:
            return
        try:
            sim = section.get("sim_rate_hz", "auto")
            configs.append(ChannelConfig.from_center(
                center=float(section["center_hz"]),
                q=float(section.get("q", 2.0)),
                f_fll=float(section["f_fll_hz"]) if "f_fll_hz" in section else None,
                n_div=int(section.get("n_div", 1)),
                fidelity=section.get("fidelity", "averaged"),
                sim_rate=None if sim == "auto" else float(sim),
            ))
        except (KeyError, ValueError) as exc:
            raise FormatError(f"{path}: bad channel section ({exc})") from exc

    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("["):
            flush()
            section = {}
            continue
        if "=" not in line:
            raise FormatError(f"{path}: expected key = value, got {line!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        section[key] = val
    flush()
    if not configs:
        raise FormatError(f"{path}: no channel sections")
    return configs
