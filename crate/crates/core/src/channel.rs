//! Time-varying Jones channel synthesized from an event script.
//!
//! Every dynamic component is a rotation of the Poincaré sphere, so the
//! pre-break channel is unitary by construction. Composition order is fixed:
//!
//! ```text
//! J(t) = J_break(t) . J_eventN(t) ... J_event1(t) . J_mains(t) . J_drift(t)
//! ```
//!
//! with events in script order. Factors evaluate at time clamped to their
//! active window, so every factor is continuous in t and an event with zero
//! amplitude drops out exactly (identity factors are skipped, not
//! multiplied). Components:
//!
//! * drift: rotation vector driven by three independent one-pole low-pass
//!   Gaussian angular-velocity processes (a seeded low-pass random walk),
//!   precomputed on a grid at compile time and interpolated with
//!   Catmull-Rom splines; repeated evaluation at the same t is exact.
//! * mains tone: Faraday-like rotation about the S3 axis with angle
//!   `sum_h A_h sin(2 pi h f t)`.
//! * burst: train of Hann-shaped angular-velocity pulses about a random
//!   per-event axis; each pulse leaves a permanent rotation offset of
//!   `peak_rate * envelope_width` radians.
//! * flutter: band-limited random rotation like drift but faster, windowed
//!   by a cosine-ramped envelope (returns to identity at the end).
//! * break: angular-velocity chirp sweeping 20 -> 200 Hz over the ramp,
//!   then the matrix collapses to the scripted post-break power and the
//!   channel is no longer valid.

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::scenario::{EventParams, EventScript};
use crate::sop::{
    sample_standard_normal, stokes_from_field, JonesMatrix, JonesVector, SopSample, SopSeries,
    StokesVector,
};
use crate::waveform::DualPolBlock;
use crate::{Error, Result};

/// OSNR reference bandwidth (0.1 nm at 1550 nm).
pub const OSNR_REF_BANDWIDTH_HZ: f64 = 12.5e9;

/// Break chirp sweep range and rotation amplitude.
const BREAK_CHIRP_F0_HZ: f64 = 20.0;
const BREAK_CHIRP_F1_HZ: f64 = 200.0;
const BREAK_CHIRP_AMPLITUDE_RAD: f64 = 0.5;

/// ASE specification. The WSS ASE filler is reduced to a single OSNR figure;
/// noise is additive white circular Gaussian.
#[derive(Debug, Clone, Copy)]
pub struct NoiseSpec {
    pub osnr_db: f64,
    pub enabled: bool,
}

/// Per-polarization SNR (dB) implied by an OSNR (dB/0.1 nm) at a given
/// sampling rate: `SNR = OSNR * B_ref / f_s` in linear units. The ASE power
/// spectral density is flat and splits evenly between the polarizations.
pub fn snr_db_from_osnr(osnr_db: f64, sample_rate_hz: f64) -> f64 {
    osnr_db + 10.0 * (OSNR_REF_BANDWIDTH_HZ / sample_rate_hz).log10()
}

/// Inverse of [`snr_db_from_osnr`].
pub fn osnr_db_for_snr(snr_db: f64, sample_rate_hz: f64) -> f64 {
    snr_db - 10.0 * (OSNR_REF_BANDWIDTH_HZ / sample_rate_hz).log10()
}

/// Rotation-vector path sampled on a uniform grid, interpolated with
/// Catmull-Rom splines (clamped at the ends).
#[derive(Debug, Clone)]
struct RotationPath {
    dt: f64,
    pts: Vec<[f64; 3]>,
}

impl RotationPath {
    /// Low-pass random walk: white Gaussian angular velocity through a
    /// one-pole low-pass at `bandwidth_hz`, scaled to `rate_rms` total RMS,
    /// integrated (trapezoid) into a rotation vector.
    fn low_pass_walk(
        rng: &mut ChaCha8Rng,
        duration_s: f64,
        bandwidth_hz: f64,
        rate_rms: f64,
        grid_rate_hz: f64,
    ) -> Self {
        let dt = 1.0 / grid_rate_hz;
        let n = (duration_s * grid_rate_hz).ceil() as usize + 2;
        let alpha = (-2.0 * std::f64::consts::PI * bandwidth_hz * dt).exp();
        // steady-state variance of y[n] = a y[n-1] + (1-a) x[n], x ~ N(0,1)
        let stat = ((1.0 - alpha) * (1.0 - alpha) / (1.0 - alpha * alpha)).sqrt();
        let sigma_axis = rate_rms / 3.0f64.sqrt();
        let gain = if stat > 0.0 { sigma_axis / stat } else { 0.0 };
        let warmup = (8.0 * grid_rate_hz / (2.0 * std::f64::consts::PI * bandwidth_hz)).ceil()
            as usize;
        let mut state = [0.0f64; 3];
        for _ in 0..warmup {
            for s in &mut state {
                *s = alpha * *s + (1.0 - alpha) * sample_standard_normal(rng);
            }
        }
        let mut pts = Vec::with_capacity(n);
        let mut r = [0.0f64; 3];
        let mut prev = state.map(|s| s * gain);
        pts.push(r);
        for _ in 1..n {
            for s in &mut state {
                *s = alpha * *s + (1.0 - alpha) * sample_standard_normal(rng);
            }
            let cur = state.map(|s| s * gain);
            for a in 0..3 {
                r[a] += 0.5 * (prev[a] + cur[a]) * dt;
            }
            prev = cur;
            pts.push(r);
        }
        Self { dt, pts }
    }

    fn eval(&self, t: f64) -> [f64; 3] {
        let n = self.pts.len();
        let u = (t / self.dt).clamp(0.0, (n - 1) as f64);
        let i = (u.floor() as usize).min(n - 2);
        let frac = u - i as f64;
        let p0 = self.pts[i.saturating_sub(1)];
        let p1 = self.pts[i];
        let p2 = self.pts[i + 1];
        let p3 = self.pts[(i + 2).min(n - 1)];
        let mut out = [0.0f64; 3];
        for a in 0..3 {
            // Catmull-Rom
            let t2 = frac * frac;
            let t3 = t2 * frac;
            out[a] = 0.5
                * ((2.0 * p1[a])
                    + (-p0[a] + p2[a]) * frac
                    + (2.0 * p0[a] - 5.0 * p1[a] + 4.0 * p2[a] - p3[a]) * t2
                    + (-p0[a] + 3.0 * p1[a] - 3.0 * p2[a] + p3[a]) * t3);
        }
        out
    }
}

#[derive(Debug, Clone)]
enum Factor {
    Drift {
        start_s: f64,
        duration_s: f64,
        path: RotationPath,
    },
    Mains {
        start_s: f64,
        duration_s: f64,
        fundamental_hz: f64,
        peaks_rad: Vec<f64>,
    },
    Burst {
        start_s: f64,
        axis: [f64; 3],
        peak_rate: f64,
        width_s: f64,
        period_s: f64,
        count: u32,
    },
    Flutter {
        start_s: f64,
        duration_s: f64,
        path: RotationPath,
        ramp_s: f64,
    },
}

impl Factor {
    /// Rotation factor at time t, or None when it is exactly the identity.
    fn jones_at(&self, t: f64) -> Option<JonesMatrix> {
        match self {
            Factor::Drift {
                start_s,
                duration_s,
                path,
            } => {
                if t <= *start_s {
                    return None;
                }
                let u = (t - start_s).min(*duration_s);
                Some(JonesMatrix::from_rotation_vector(path.eval(u)))
            }
            Factor::Mains {
                start_s,
                duration_s,
                fundamental_hz,
                peaks_rad,
            } => {
                let u = (t - start_s).clamp(0.0, *duration_s);
                let mut theta = 0.0;
                for (h, a) in peaks_rad.iter().enumerate() {
                    let f = fundamental_hz * (h + 1) as f64;
                    theta += a * (std::f64::consts::TAU * f * u).sin();
                }
                if theta == 0.0 {
                    return None;
                }
                Some(JonesMatrix::rotation([0.0, 0.0, 1.0], theta))
            }
            Factor::Burst {
                start_s,
                axis,
                peak_rate,
                width_s,
                period_s,
                count,
            } => {
                if t <= start_s - width_s || *peak_rate == 0.0 {
                    return None;
                }
                let w = *width_s;
                let mut theta = 0.0;
                for k in 0..*count {
                    let u = t - (start_s + k as f64 * period_s);
                    if u <= -w {
                        break; // pulses are time-ordered
                    }
                    theta += if u >= w {
                        peak_rate * w
                    } else {
                        // integral of peak * cos^2(pi u / (2w)) from -w to u
                        peak_rate
                            * ((u + w) / 2.0
                                + (w / (2.0 * std::f64::consts::PI))
                                    * (std::f64::consts::PI * u / w).sin())
                    };
                }
                if theta == 0.0 {
                    return None;
                }
                Some(JonesMatrix::rotation(*axis, theta))
            }
            Factor::Flutter {
                start_s,
                duration_s,
                path,
                ramp_s,
            } => {
                let u = t - start_s;
                if u <= 0.0 || u >= *duration_s {
                    return None;
                }
                let env = if u < *ramp_s {
                    let x = u / ramp_s;
                    0.5 * (1.0 - (std::f64::consts::PI * x).cos())
                } else if u > duration_s - ramp_s {
                    let x = (duration_s - u) / ramp_s;
                    0.5 * (1.0 - (std::f64::consts::PI * x).cos())
                } else {
                    1.0
                };
                if env == 0.0 {
                    return None;
                }
                let r = path.eval(u);
                Some(JonesMatrix::from_rotation_vector([
                    r[0] * env,
                    r[1] * env,
                    r[2] * env,
                ]))
            }
        }
    }
}

#[derive(Debug, Clone)]
struct BreakFactor {
    start_s: f64,
    ramp_s: f64,
    post_gain: f64,
    axis: [f64; 3],
}

impl BreakFactor {
    fn completion_s(&self) -> f64 {
        self.start_s + self.ramp_s
    }

    fn angle_at(&self, u: f64) -> f64 {
        // linear chirp of the instantaneous rotation frequency
        let phase = BREAK_CHIRP_F0_HZ * u
            + (BREAK_CHIRP_F1_HZ - BREAK_CHIRP_F0_HZ) * u * u / (2.0 * self.ramp_s);
        BREAK_CHIRP_AMPLITUDE_RAD * (std::f64::consts::TAU * phase).sin()
    }

    fn jones_at(&self, t: f64) -> Option<JonesMatrix> {
        if t <= self.start_s {
            return None;
        }
        let u = (t - self.start_s).min(self.ramp_s);
        let rot = JonesMatrix::rotation(self.axis, self.angle_at(u));
        if t < self.completion_s() {
            Some(rot)
        } else {
            Some(rot.scale(self.post_gain))
        }
    }
}

/// Event script compiled into an evaluable channel. Compilation draws all
/// random content (drift paths, event axes) from the script seed; evaluation
/// is pure, so disjoint time ranges can be processed in parallel.
#[derive(Debug, Clone)]
pub struct ChannelModel {
    total_duration_s: f64,
    factors: Vec<Factor>,
    brk: Option<BreakFactor>,
}

fn event_rng(seed: u64, index: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(
        seed.wrapping_mul(0x9e37_79b9_7f4a_7c15)
            .wrapping_add(index as u64),
    )
}

fn random_axis(rng: &mut ChaCha8Rng) -> [f64; 3] {
    loop {
        let v = [
            sample_standard_normal(rng),
            sample_standard_normal(rng),
            sample_standard_normal(rng),
        ];
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if n > 1e-3 {
            return [v[0] / n, v[1] / n, v[2] / n];
        }
    }
}

impl ChannelModel {
    pub fn compile(script: &EventScript) -> Result<Self> {
        let violations = crate::scenario::validate(script);
        if !violations.is_empty() {
            return Err(Error::Channel(format!(
                "invalid script: {}",
                violations
                    .iter()
                    .map(|v| v.to_string())
                    .collect::<Vec<_>>()
                    .join("; ")
            )));
        }
        let mut factors = Vec::new();
        let mut brk = None;
        for (i, ev) in script.events.iter().enumerate() {
            let mut rng = event_rng(script.seed, i);
            let span = if ev.duration_s.is_finite() {
                ev.duration_s
            } else {
                script.total_duration_s - ev.start_s
            };
            match &ev.params {
                EventParams::Drift(p) => {
                    let grid = (64.0 * p.bandwidth_hz).max(16.0);
                    factors.push(Factor::Drift {
                        start_s: ev.start_s,
                        duration_s: span,
                        path: RotationPath::low_pass_walk(
                            &mut rng,
                            span,
                            p.bandwidth_hz.max(1e-3),
                            p.rate_rms_rad_s,
                            grid,
                        ),
                    });
                }
                EventParams::MainsTone(p) => {
                    factors.push(Factor::Mains {
                        start_s: ev.start_s,
                        duration_s: span,
                        fundamental_hz: p.fundamental_hz,
                        peaks_rad: p.harmonic_peaks_rad.clone(),
                    });
                }
                EventParams::Burst(p) => {
                    factors.push(Factor::Burst {
                        start_s: ev.start_s,
                        axis: random_axis(&mut rng),
                        peak_rate: p.peak_rate_rad_s,
                        width_s: p.envelope_width_s,
                        period_s: p.repeat_period_s,
                        count: p.repeat_count,
                    });
                }
                EventParams::Flutter(p) => {
                    let grid = (16.0 * p.bandwidth_hz).max(64.0);
                    factors.push(Factor::Flutter {
                        start_s: ev.start_s,
                        duration_s: span,
                        ramp_s: (span / 4.0).min(0.5),
                        path: RotationPath::low_pass_walk(
                            &mut rng,
                            span,
                            p.bandwidth_hz.max(1e-3),
                            p.rate_rms_rad_s,
                            grid,
                        ),
                    });
                }
                EventParams::Break(p) => {
                    brk = Some(BreakFactor {
                        start_s: ev.start_s,
                        ramp_s: p.ramp_s,
                        post_gain: 10f64.powf(p.post_break_power_db / 20.0),
                        axis: random_axis(&mut rng),
                    });
                }
            }
        }
        Ok(Self {
            total_duration_s: script.total_duration_s,
            factors,
            brk,
        })
    }

    pub fn total_duration_s(&self) -> f64 {
        self.total_duration_s
    }

    /// True until the break completes (never false without a break).
    pub fn is_valid_at(&self, t: f64) -> bool {
        match &self.brk {
            Some(b) => t < b.completion_s(),
            None => true,
        }
    }

    pub fn break_completion_s(&self) -> Option<f64> {
        self.brk.as_ref().map(|b| b.completion_s())
    }

    /// Channel Jones matrix at time t.
    pub fn jones_at(&self, t: f64) -> Result<JonesMatrix> {
        if !(0.0..=self.total_duration_s + 1e-9).contains(&t) {
            return Err(Error::Channel(format!(
                "t = {t} s outside scenario range [0, {}]",
                self.total_duration_s
            )));
        }
        let mut acc: Option<JonesMatrix> = None;
        for f in &self.factors {
            if let Some(j) = f.jones_at(t) {
                acc = Some(match acc {
                    Some(a) => j.mul(&a),
                    None => j,
                });
            }
        }
        if let Some(b) = &self.brk {
            if let Some(j) = b.jones_at(t) {
                acc = Some(match acc {
                    Some(a) => j.mul(&a),
                    None => j,
                });
            }
        }
        Ok(acc.unwrap_or(JonesMatrix::IDENTITY))
    }

    /// Ground-truth SOP series at `sample_period_s` without simulating the
    /// waveform. Sample k is the Stokes image of `J(k dt) . launch`; samples
    /// at or after break completion are invalid with residual power in s0.
    pub fn sop_direct_series(
        &self,
        sample_period_s: f64,
        launch: JonesVector,
    ) -> Result<SopSeries> {
        if sample_period_s <= 0.0 {
            return Err(Error::Channel("sample period must be positive".into()));
        }
        let ratio = self.total_duration_s / sample_period_s;
        let n = if (ratio - ratio.round()).abs() < 1e-6 * ratio.max(1.0) {
            ratio.round() as usize
        } else {
            ratio.floor() as usize
        };
        let mut samples = Vec::with_capacity(n);
        for k in 0..n {
            let t = k as f64 * sample_period_s;
            let j = self.jones_at(t)?;
            let s = stokes_from_field(j.apply(launch));
            if self.is_valid_at(t) {
                samples.push(SopSample { s, valid: true });
            } else {
                samples.push(SopSample {
                    s: StokesVector::new(s.s0, 0.0, 0.0, 0.0),
                    valid: false,
                });
            }
        }
        Ok(SopSeries {
            sample_period_s,
            start_t_s: 0.0,
            samples,
        })
    }

    /// Applies the channel sample-by-sample to a waveform block starting at
    /// absolute time `t0_s`.
    pub fn apply_to_block(&self, block: &DualPolBlock, t0_s: f64) -> Result<DualPolBlock> {
        if block.is_empty() {
            return Err(Error::Channel("empty block".into()));
        }
        let end = t0_s + block.duration_s();
        if t0_s < 0.0 || end > self.total_duration_s + 1e-9 {
            return Err(Error::Channel(format!(
                "block time range [{t0_s}, {end}] exceeds scenario duration {}",
                self.total_duration_s
            )));
        }
        let fs = block.sample_rate_hz;
        let mut x = Vec::with_capacity(block.len());
        let mut y = Vec::with_capacity(block.len());
        for k in 0..block.len() {
            let t = t0_s + k as f64 / fs;
            let j = self.jones_at(t)?;
            let out = j.apply([block.x[k], block.y[k]]);
            x.push(out[0]);
            y.push(out[1]);
        }
        Ok(DualPolBlock {
            x,
            y,
            sample_rate_hz: fs,
            t0_s,
        })
    }
}

/// Adds circular white Gaussian noise at the per-polarization SNR implied by
/// `spec.osnr_db` and the block sample rate. Deterministic in `seed`.
pub fn add_noise(block: &DualPolBlock, spec: &NoiseSpec, seed: u64) -> Result<DualPolBlock> {
    if !spec.enabled {
        return Ok(block.clone());
    }
    let p_sig = block.mean_power();
    if p_sig <= 0.0 {
        return Err(Error::Channel("non-positive signal power".into()));
    }
    let snr_db = snr_db_from_osnr(spec.osnr_db, block.sample_rate_hz);
    let sigma2 = p_sig / 10f64.powf(snr_db / 10.0);
    let sq = (sigma2 / 2.0).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = block.clone();
    for v in out.x.iter_mut() {
        *v += Complex64::new(
            sq * sample_standard_normal(&mut rng),
            sq * sample_standard_normal(&mut rng),
        );
    }
    for v in out.y.iter_mut() {
        *v += Complex64::new(
            sq * sample_standard_normal(&mut rng),
            sq * sample_standard_normal(&mut rng),
        );
    }
    Ok(out)
}
