//! Blind polarization demultiplexing with a CMA butterfly equalizer, and
//! recovery of the channel Jones matrix (hence the received SOP) from the
//! converged taps.

use num_complex::Complex64;

use crate::sop::{JonesEntry, JonesMatrix, JonesSeries};
use crate::waveform::DualPolBlock;
use crate::{Error, Result};

/// Butterfly equalizer configuration.
#[derive(Debug, Clone)]
pub struct EqConfig {
    /// taps per branch; must be odd so a center spike exists
    pub num_taps: usize,
    /// input samples per symbol
    pub oversampling: usize,
    /// CMA step size during acquisition
    pub mu: f64,
    /// reduced step size after `settle_symbols`, limiting tap jitter
    pub mu_settled: f64,
    /// symbols processed at the acquisition step size before gear-shifting
    pub settle_symbols: usize,
    /// symbols between Jones/SOP snapshots
    pub sop_decimation: usize,
    pub symbol_rate_baud: f64,
}

impl Default for EqConfig {
    fn default() -> Self {
        Self {
            num_taps: 7,
            oversampling: 2,
            mu: 1e-3,
            mu_settled: 1e-4,
            settle_symbols: 10_000,
            sop_decimation: 100,
            symbol_rate_baud: 1e6,
        }
    }
}

/// Four tap banks of the 2x2 butterfly. Output p is the plain dot product
/// `y_p = sum_k h_px[k] u_x[k] + h_py[k] u_y[k]` over the current window.
#[derive(Debug, Clone)]
pub struct EqualizerState {
    pub hxx: Vec<Complex64>,
    pub hxy: Vec<Complex64>,
    pub hyx: Vec<Complex64>,
    pub hyy: Vec<Complex64>,
}

impl EqualizerState {
    /// Center-spike initialization: identity butterfly at the middle tap.
    pub fn init(cfg: &EqConfig) -> Result<Self> {
        if cfg.num_taps == 0 || cfg.num_taps % 2 == 0 {
            return Err(Error::Equalizer(format!(
                "tap count must be odd and positive, got {}",
                cfg.num_taps
            )));
        }
        let zero = vec![Complex64::new(0.0, 0.0); cfg.num_taps];
        let mut spike = zero.clone();
        spike[cfg.num_taps / 2] = Complex64::new(1.0, 0.0);
        Ok(Self {
            hxx: spike.clone(),
            hxy: zero.clone(),
            hyx: zero,
            hyy: spike,
        })
    }

    pub fn num_taps(&self) -> usize {
        self.hxx.len()
    }

    /// Exchanges the output branches (undoes a polarization swap).
    pub fn swap_outputs(&mut self) {
        std::mem::swap(&mut self.hxx, &mut self.hyx);
        std::mem::swap(&mut self.hxy, &mut self.hyy);
    }

    fn outputs(&self, ux: &[Complex64], uy: &[Complex64]) -> (Complex64, Complex64) {
        let dot = |h: &[Complex64], u: &[Complex64]| -> Complex64 {
            h.iter().zip(u).map(|(a, b)| a * b).sum()
        };
        (
            dot(&self.hxx, ux) + dot(&self.hxy, uy),
            dot(&self.hyx, ux) + dot(&self.hyy, uy),
        )
    }

    fn is_finite(&self) -> bool {
        [&self.hxx, &self.hxy, &self.hyx, &self.hyy]
            .iter()
            .all(|h| h.iter().all(|c| c.re.is_finite() && c.im.is_finite()))
    }
}

/// CMA cost for one symbol window: `J = 1/2 sum_p (1 - |y_p|^2)^2` with the
/// unit modulus target of normalized QPSK.
pub fn cma_cost(state: &EqualizerState, ux: &[Complex64], uy: &[Complex64]) -> f64 {
    let (yx, yy) = state.outputs(ux, uy);
    let ex = 1.0 - yx.norm_sqr();
    let ey = 1.0 - yy.norm_sqr();
    0.5 * (ex * ex + ey * ey)
}

/// Conjugate (Wirtinger) gradient of the CMA cost with respect to each tap:
/// `dJ/d conj(h_pq[k]) = -e_p y_p conj(u_q[k])`. Returned in the order
/// (xx, xy, yx, yy).
pub fn cma_gradient(
    state: &EqualizerState,
    ux: &[Complex64],
    uy: &[Complex64],
) -> [Vec<Complex64>; 4] {
    let (yx, yy) = state.outputs(ux, uy);
    let ex = 1.0 - yx.norm_sqr();
    let ey = 1.0 - yy.norm_sqr();
    let grad = |e: f64, y: Complex64, u: &[Complex64]| -> Vec<Complex64> {
        u.iter().map(|v| -e * y * v.conj()).collect()
    };
    [
        grad(ex, yx, ux),
        grad(ex, yx, uy),
        grad(ey, yy, ux),
        grad(ey, yy, uy),
    ]
}

/// One CMA update: computes the outputs for the window and moves every tap
/// one step down the cost gradient (`h += mu e y conj(u)`). Returns the
/// pre-update outputs.
pub fn cma_step(
    state: &mut EqualizerState,
    ux: &[Complex64],
    uy: &[Complex64],
    mu: f64,
) -> Result<(Complex64, Complex64)> {
    let l = state.num_taps();
    if ux.len() != l || uy.len() != l {
        return Err(Error::Equalizer(format!(
            "window length {} != tap count {l}",
            ux.len()
        )));
    }
    let (yx, yy) = state.outputs(ux, uy);
    let ex = 1.0 - yx.norm_sqr();
    let ey = 1.0 - yy.norm_sqr();
    for k in 0..l {
        state.hxx[k] += mu * ex * yx * ux[k].conj();
        state.hxy[k] += mu * ex * yx * uy[k].conj();
        state.hyx[k] += mu * ey * yy * ux[k].conj();
        state.hyy[k] += mu * ey * yy * uy[k].conj();
    }
    if !state.is_finite() {
        return Err(Error::Equalizer(
            "CMA diverged: taps are no longer finite (reduce mu)".into(),
        ));
    }
    Ok((yx, yy))
}

/// Condition number above which the central-tap matrix is treated as
/// singular and the Jones estimate marked invalid.
pub const MAX_CONDITION: f64 = 1e6;

/// Channel Jones estimate from the converged taps. The butterfly's DC
/// response (tap sum per branch) equals the channel inverse up to a
/// per-output phase and delay: for a memoryless polarization channel the
/// converged solution factors into the matrix inverse times a scalar timing
/// filter per output, and evaluating at DC collapses each timing filter to a
/// unit-magnitude phase. Those phases multiply the estimate's columns after
/// inversion and cancel in any derived Stokes vector. The inverse is
/// normalized to unit |det|.
pub fn jones_from_state(state: &EqualizerState) -> Result<JonesMatrix> {
    let dc = |h: &[Complex64]| -> Complex64 { h.iter().sum() };
    let w = JonesMatrix::new(
        dc(&state.hxx),
        dc(&state.hxy),
        dc(&state.hyx),
        dc(&state.hyy),
    );
    if !w.is_finite() {
        return Err(Error::Equalizer("non-finite central taps".into()));
    }
    if w.condition_number() > MAX_CONDITION {
        return Err(Error::Equalizer(format!(
            "central-tap matrix is near-singular (condition {:.3e})",
            w.condition_number()
        )));
    }
    w.inverse()?.normalized_unit_det()
}

/// Result of equalizing a received block.
#[derive(Debug, Clone)]
pub struct EqRun {
    /// Jones snapshots, one per `sop_decimation` symbols
    pub jones: JonesSeries,
    /// per-symbol equalizer outputs after any swap correction
    pub out_x: Vec<Complex64>,
    pub out_y: Vec<Complex64>,
    /// true if a polarization swap was detected and corrected
    pub swapped: bool,
}

/// Largest symbol misalignment searched when matching equalizer outputs to
/// the reference sequence.
pub const SWAP_SEARCH_DELAY: usize = 10;

fn xcorr_peak(a: &[Complex64], b: &[Complex64], max_delay: usize) -> f64 {
    let n = a.len().min(b.len());
    let mut best: f64 = 0.0;
    for d in 0..=max_delay {
        // a delayed by d against b, and vice versa
        for (x, y) in [(&a[d..n], &b[..n - d]), (&a[..n - d], &b[d..n])] {
            let c: Complex64 = x.iter().zip(y.iter()).map(|(p, q)| p * q.conj()).sum();
            best = best.max(c.norm() / (n - d) as f64);
        }
    }
    best
}

/// Runs the CMA over a matched-filtered block sampled at
/// `oversampling` samples per symbol. If `reference` transmit symbols are
/// given, the polarization-swap ambiguity is resolved after convergence by
/// cross-correlating the second half of the outputs against them (any common
/// phase offset drops out of the correlation magnitude).
pub fn equalize_block(
    rx: &DualPolBlock,
    cfg: &EqConfig,
    reference: Option<(&[Complex64], &[Complex64])>,
) -> Result<EqRun> {
    let os = cfg.oversampling;
    let l = cfg.num_taps;
    if os == 0 {
        return Err(Error::Equalizer("oversampling must be positive".into()));
    }
    let expected_rate = cfg.symbol_rate_baud * os as f64;
    if (rx.sample_rate_hz - expected_rate).abs() > 1e-6 * expected_rate {
        return Err(Error::Equalizer(format!(
            "block rate {} Hz != {} Hz ({} samples/symbol at {} Bd)",
            rx.sample_rate_hz, expected_rate, os, cfg.symbol_rate_baud
        )));
    }
    if rx.len() < l + os {
        return Err(Error::Equalizer("block shorter than the tap span".into()));
    }
    let mut state = EqualizerState::init(cfg)?;
    let mut out_x = Vec::new();
    let mut out_y = Vec::new();
    let mut entries = Vec::new();
    let symbol_period = 1.0 / cfg.symbol_rate_baud;
    let mut s = l; // window end (exclusive) in samples
    let mut n = 0usize; // symbol counter
    while s <= rx.len() {
        let ux = &rx.x[s - l..s];
        let uy = &rx.y[s - l..s];
        let mu = if n < cfg.settle_symbols { cfg.mu } else { cfg.mu_settled };
        let (yx, yy) = cma_step(&mut state, ux, uy, mu)?;
        out_x.push(yx);
        out_y.push(yy);
        n += 1;
        if n % cfg.sop_decimation == 0 {
            let t_s = rx.t0_s + n as f64 * symbol_period;
            match jones_from_state(&state) {
                Ok(matrix) => entries.push(JonesEntry {
                    t_s,
                    matrix,
                    valid: true,
                }),
                Err(_) => entries.push(JonesEntry {
                    t_s,
                    matrix: JonesMatrix::IDENTITY,
                    valid: false,
                }),
            }
        }
        s += os;
    }
    let mut swapped = false;
    if let Some((ref_x, ref_y)) = reference {
        // judge on the second half, where the taps have converged
        let half = out_x.len() / 2;
        let n_ref = ref_x.len().min(out_x.len());
        if half + SWAP_SEARCH_DELAY + 1 < n_ref {
            let ox = &out_x[half..n_ref];
            let oy = &out_y[half..n_ref];
            let rx_ref = &ref_x[half..n_ref];
            let ry_ref = &ref_y[half..n_ref];
            let direct = xcorr_peak(ox, rx_ref, SWAP_SEARCH_DELAY)
                + xcorr_peak(oy, ry_ref, SWAP_SEARCH_DELAY);
            let crossed = xcorr_peak(ox, ry_ref, SWAP_SEARCH_DELAY)
                + xcorr_peak(oy, rx_ref, SWAP_SEARCH_DELAY);
            if crossed > direct {
                swapped = true;
                state.swap_outputs();
                std::mem::swap(&mut out_x, &mut out_y);
                // re-derive snapshots with the corrected branch order
                for e in &mut entries {
                    if e.valid {
                        let m = e.matrix;
                        // swapping the butterfly rows swaps the columns of
                        // the inverted estimate
                        e.matrix = JonesMatrix::new(m.xy, m.xx, m.yy, m.yx);
                    }
                }
            }
        }
    }
    // final snapshot with the corrected state
    if let Ok(matrix) = jones_from_state(&state) {
        entries.push(JonesEntry {
            t_s: rx.t0_s + n as f64 * symbol_period,
            matrix,
            valid: true,
        });
    }
    Ok(EqRun {
        jones: JonesSeries {
            sample_period_s: cfg.sop_decimation as f64 * symbol_period,
            entries,
        },
        out_x,
        out_y,
        swapped,
    })
}

/// End-to-end single-shot SOP estimate through the full transceiver stack:
/// QPSK symbols, pulse shaping, a static channel matrix, additive noise,
/// matched filtering, CMA equalization, and Jones recovery.
pub fn estimate_static_channel(
    channel: &JonesMatrix,
    snr_db: f64,
    num_symbols: usize,
    seed: u64,
    cfg: &EqConfig,
) -> Result<JonesMatrix> {
    use crate::channel::{add_noise, NoiseSpec};
    use crate::waveform::{generate_symbols, matched_filter, pulse_shape, TxConfig};
    let txc = TxConfig {
        symbol_rate_baud: cfg.symbol_rate_baud,
        oversampling: cfg.oversampling,
        seed,
        ..TxConfig::default()
    };
    let (sx, sy) = generate_symbols(&txc, num_symbols)?;
    let shaped = pulse_shape(&sx, &sy, &txc)?;
    let mut rx = DualPolBlock {
        x: Vec::with_capacity(shaped.len()),
        y: Vec::with_capacity(shaped.len()),
        sample_rate_hz: shaped.sample_rate_hz,
        t0_s: shaped.t0_s,
    };
    for (ex, ey) in shaped.x.iter().zip(&shaped.y) {
        let v = channel.apply([*ex, *ey]);
        rx.x.push(v[0]);
        rx.y.push(v[1]);
    }
    let spec = NoiseSpec {
        osnr_db: crate::channel::osnr_db_for_snr(snr_db, rx.sample_rate_hz),
        enabled: true,
    };
    let noisy = add_noise(&rx, &spec, seed ^ 0x5eed)?;
    let filtered = matched_filter(&noisy, &txc)?;
    let run = equalize_block(&filtered, cfg, Some((&sx, &sy)))?;
    let last = run
        .jones
        .entries
        .iter()
        .rev()
        .find(|e| e.valid)
        .ok_or_else(|| Error::Equalizer("no valid Jones estimate produced".into()))?;
    Ok(last.matrix)
}

/// Configuration for the streaming full-stack pipeline.
#[derive(Debug, Clone)]
pub struct FullStackConfig {
    pub tx: crate::waveform::TxConfig,
    pub eq: EqConfig,
    pub noise: crate::channel::NoiseSpec,
    /// symbols processed per streaming chunk (bounds memory)
    pub chunk_symbols: usize,
}

impl Default for FullStackConfig {
    fn default() -> Self {
        Self {
            tx: crate::waveform::TxConfig::default(),
            eq: EqConfig::default(),
            noise: crate::channel::NoiseSpec {
                osnr_db: crate::channel::osnr_db_for_snr(20.0, 2e6),
                enabled: true,
            },
            chunk_symbols: 100_000,
        }
    }
}

/// Runs the whole transceiver chain over a time-varying channel in streaming
/// chunks with bounded memory: QPSK source, streaming RRC shaping, the
/// channel Jones matrix evaluated per sample, additive noise, streaming
/// matched filtering, CMA equalization, and periodic Jones snapshots that
/// are converted to a SOP series for the standard launch state.
///
/// The filter group delays are absorbed up front so equalizer outputs align
/// with the transmit symbol stream; the swap ambiguity is resolved once,
/// after the equalizer has settled, from a correlation against the
/// transmitted reference (loopback operation, where the transmit symbols are
/// known at the receiver).
pub fn full_stack_sop_series(
    model: &crate::channel::ChannelModel,
    cfg: &FullStackConfig,
) -> Result<crate::sop::SopSeries> {
    use crate::sop::{series_from_jones, JonesVector, LAUNCH_X};
    use crate::waveform::{rrc_taps, Fir, SymbolSource};

    let tx = &cfg.tx;
    let os = tx.oversampling;
    if os != cfg.eq.oversampling || tx.symbol_rate_baud != cfg.eq.symbol_rate_baud {
        return Err(Error::Equalizer(
            "transmit and equalizer rate settings disagree".into(),
        ));
    }
    let fs = tx.sample_rate_hz();
    let duration = model.total_duration_s();
    let total_symbols = (duration * tx.symbol_rate_baud).floor() as usize;
    if total_symbols < 4 * cfg.eq.settle_symbols {
        return Err(Error::Equalizer(format!(
            "record too short for convergence: {total_symbols} symbols"
        )));
    }
    let taps = rrc_taps(os, tx.rrc_rolloff, tx.rrc_span_symbols);
    // zero-stuffed unit-power symbols through unit-energy taps give mean
    // power 1/os; rescale so the line signal has unit power like the block
    // pipeline
    let gain = (os as f64).sqrt();
    let mut shape_x = Fir::new(taps.clone());
    let mut shape_y = Fir::new(taps.clone());
    let mut match_x = Fir::new(taps.clone());
    let mut match_y = Fir::new(taps);
    // samples to discard at the matched output so that sample k sits at
    // symbol instant k/os of the transmit stream
    let skip = shape_x.delay() + match_x.delay();
    let snr_db = crate::channel::snr_db_from_osnr(cfg.noise.osnr_db, fs);
    let sq = if cfg.noise.enabled {
        (10f64.powf(-snr_db / 10.0) / 2.0).sqrt()
    } else {
        0.0
    };
    let mut noise_rng = rand_chacha::ChaCha8Rng::seed_from_u64(tx.seed ^ 0x6e6f697365);
    use rand::SeedableRng;

    let mut src = SymbolSource::new(tx.seed);
    let mut state = EqualizerState::init(&cfg.eq)?;
    let l = cfg.eq.num_taps;
    let mut win_x: Vec<Complex64> = Vec::with_capacity(l);
    let mut win_y: Vec<Complex64> = Vec::with_capacity(l);
    let mut entries = Vec::new();
    let symbol_period = 1.0 / tx.symbol_rate_baud;

    // reference and output windows for the one-shot swap decision: outputs
    // trail their transmit symbols by only a couple of symbols (the window
    // centering), so a short delay search aligns them
    let resolve_at = 2 * cfg.eq.settle_symbols;
    let resolve_span = cfg.eq.settle_symbols.min(20_000);
    let pad = 2 * SWAP_SEARCH_DELAY;
    let ref_start = resolve_at.saturating_sub(resolve_span + pad);
    let mut ref_x = Vec::new();
    let mut ref_y = Vec::new();
    let mut out_x = Vec::new();
    let mut out_y = Vec::new();
    let mut gen_count = 0usize;
    let mut swap_resolved = false;
    let mut swapped = false;

    let mut produced = 0usize; // matched-filter samples kept so far
    let mut n_sym = 0usize; // equalized symbols
    let mut emitted = 0usize; // samples pushed into the filters
    let chunk = cfg.chunk_symbols.max(1000);
    // extra symbols so the filter pipelines flush
    let tail_symbols = 2 * (skip / os + 1);
    let mut pending_skip = skip;
    'outer: for chunk_start in (0..total_symbols + tail_symbols).step_by(chunk) {
        let n = chunk.min(total_symbols + tail_symbols - chunk_start);
        for _ in 0..n {
            let (sx, sy) = src.next_pair();
            if !swap_resolved && gen_count >= ref_start && gen_count < resolve_at + pad {
                ref_x.push(sx);
                ref_y.push(sy);
            }
            gen_count += 1;
            for phase in 0..os {
                let (ix, iy) = if phase == 0 {
                    (sx * gain, sy * gain)
                } else {
                    (Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0))
                };
                let tx_x = shape_x.push(ix);
                let tx_y = shape_y.push(iy);
                let t = emitted as f64 / fs;
                emitted += 1;
                let j = model.jones_at(t.min(duration))?;
                let v = j.apply([tx_x, tx_y]);
                let nx = Complex64::new(
                    sq * crate::sop::sample_standard_normal(&mut noise_rng),
                    sq * crate::sop::sample_standard_normal(&mut noise_rng),
                );
                let ny = Complex64::new(
                    sq * crate::sop::sample_standard_normal(&mut noise_rng),
                    sq * crate::sop::sample_standard_normal(&mut noise_rng),
                );
                let mx = match_x.push(v[0] + nx);
                let my = match_y.push(v[1] + ny);
                if pending_skip > 0 {
                    pending_skip -= 1;
                    continue;
                }
                win_x.push(mx);
                win_y.push(my);
                if win_x.len() > l {
                    win_x.remove(0);
                    win_y.remove(0);
                }
                produced += 1;
                if win_x.len() == l && produced % os == 0 {
                    let mu = if n_sym < cfg.eq.settle_symbols {
                        cfg.eq.mu
                    } else {
                        cfg.eq.mu_settled
                    };
                    let (yx, yy) = cma_step(&mut state, &win_x, &win_y, mu)?;
                    n_sym += 1;
                    if !swap_resolved {
                        out_x.push(yx);
                        out_y.push(yy);
                        if out_x.len() > resolve_span {
                            out_x.remove(0);
                            out_y.remove(0);
                        }
                        if n_sym >= resolve_at {
                            let direct = xcorr_peak(&out_x, &ref_x, 2 * pad)
                                + xcorr_peak(&out_y, &ref_y, 2 * pad);
                            let crossed = xcorr_peak(&out_x, &ref_y, 2 * pad)
                                + xcorr_peak(&out_y, &ref_x, 2 * pad);
                            if crossed > direct {
                                swapped = true;
                                state.swap_outputs();
                            }
                            swap_resolved = true;
                            out_x.clear();
                            out_y.clear();
                            ref_x.clear();
                            ref_y.clear();
                        }
                    }
                    if n_sym % cfg.eq.sop_decimation == 0 {
                        let t_s = n_sym as f64 * symbol_period;
                        let (matrix, ok) = match jones_from_state(&state) {
                            Ok(m) => (m, true),
                            Err(_) => (JonesMatrix::IDENTITY, false),
                        };
                        entries.push(JonesEntry {
                            t_s,
                            matrix,
                            valid: ok && model.is_valid_at(t_s) && swap_resolved,
                        });
                    }
                    if n_sym >= total_symbols {
                        break 'outer;
                    }
                }
            }
        }
    }
    // snapshots taken before the swap decision were marked invalid, so a
    // detected swap needs no retroactive correction
    let _ = swapped;
    let jones = JonesSeries {
        sample_period_s: cfg.eq.sop_decimation as f64 * symbol_period,
        entries,
    };
    let launch: JonesVector = LAUNCH_X;
    series_from_jones(&jones, launch)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sop::{great_circle_angle, random_unitary, stokes_from_jones, LAUNCH_X};
    use rand::{Rng, SeedableRng};

    fn random_state(rng: &mut impl Rng, taps: usize) -> EqualizerState {
        let mut mk = |scale: f64| -> Vec<Complex64> {
            (0..taps)
                .map(|_| Complex64::new(rng.gen_range(-scale..scale), rng.gen_range(-scale..scale)))
                .collect()
        };
        EqualizerState {
            hxx: mk(1.0),
            hxy: mk(0.5),
            hyx: mk(0.5),
            hyy: mk(1.0),
        }
    }

    fn random_window(rng: &mut impl Rng, taps: usize) -> Vec<Complex64> {
        (0..taps)
            .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect()
    }

    #[test]
    fn gradient_matches_finite_differences() {
        // df/dRe(h) = 2 Re(dJ/d conj(h)), df/dIm(h) = 2 Im(dJ/d conj(h))
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let taps = 5;
        let eps = 1e-6;
        for _ in 0..100 {
            let state = random_state(&mut rng, taps);
            let ux = random_window(&mut rng, taps);
            let uy = random_window(&mut rng, taps);
            let grads = cma_gradient(&state, &ux, &uy);
            for (bank, grad) in grads.iter().enumerate() {
                for k in 0..taps {
                    for im in [false, true] {
                        let mut plus = state.clone();
                        let mut minus = state.clone();
                        let delta = if im {
                            Complex64::new(0.0, eps)
                        } else {
                            Complex64::new(eps, 0.0)
                        };
                        fn pick(s: &mut EqualizerState, bank: usize) -> &mut Vec<Complex64> {
                            match bank {
                                0 => &mut s.hxx,
                                1 => &mut s.hxy,
                                2 => &mut s.hyx,
                                _ => &mut s.hyy,
                            }
                        }
                        pick(&mut plus, bank)[k] += delta;
                        pick(&mut minus, bank)[k] -= delta;
                        let fd = (cma_cost(&plus, &ux, &uy) - cma_cost(&minus, &ux, &uy))
                            / (2.0 * eps);
                        let analytic = if im { 2.0 * grad[k].im } else { 2.0 * grad[k].re };
                        let scale = analytic.abs().max(1.0);
                        assert!(
                            (fd - analytic).abs() / scale < 1e-6,
                            "bank {bank} tap {k} im={im}: fd {fd} vs {analytic}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn step_descends_cost() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(12);
        for _ in 0..50 {
            let mut state = random_state(&mut rng, 7);
            let ux = random_window(&mut rng, 7);
            let uy = random_window(&mut rng, 7);
            let before = cma_cost(&state, &ux, &uy);
            cma_step(&mut state, &ux, &uy, 1e-4).unwrap();
            let after = cma_cost(&state, &ux, &uy);
            assert!(after <= before + 1e-12, "{before} -> {after}");
        }
    }

    #[test]
    fn step_rejects_wrong_window_length() {
        let cfg = EqConfig::default();
        let mut state = EqualizerState::init(&cfg).unwrap();
        let u = vec![Complex64::new(0.0, 0.0); 5];
        assert!(cma_step(&mut state, &u, &u, 1e-3).is_err());
    }

    #[test]
    fn init_requires_odd_taps() {
        let cfg = EqConfig {
            num_taps: 8,
            ..EqConfig::default()
        };
        assert!(EqualizerState::init(&cfg).is_err());
    }

    #[test]
    fn divergent_mu_reports_error() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(13);
        let mut state = random_state(&mut rng, 7);
        let mut failed = false;
        for _ in 0..2000 {
            let ux = random_window(&mut rng, 7);
            let uy = random_window(&mut rng, 7);
            if cma_step(&mut state, &ux, &uy, 10.0).is_err() {
                failed = true;
                break;
            }
        }
        assert!(failed, "expected divergence at mu = 10");
    }

    #[test]
    fn identity_channel_estimates_identity() {
        let cfg = EqConfig::default();
        let est = estimate_static_channel(&JonesMatrix::IDENTITY, 20.0, 20_000, 42, &cfg).unwrap();
        let s_est = stokes_from_jones(&est, LAUNCH_X).unwrap();
        let s_true = stokes_from_jones(&JonesMatrix::IDENTITY, LAUNCH_X).unwrap();
        let err = great_circle_angle(&s_est, &s_true).unwrap();
        assert!(err.to_degrees() < 2.0, "error {} deg", err.to_degrees());
    }

    #[test]
    fn random_unitary_channel_sop_within_two_degrees() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(14);
        let cfg = EqConfig::default();
        for trial in 0..10u64 {
            let ch = random_unitary(&mut rng);
            let est = estimate_static_channel(&ch, 20.0, 20_000, 100 + trial, &cfg).unwrap();
            let s_est = stokes_from_jones(&est, LAUNCH_X).unwrap();
            let s_true = stokes_from_jones(&ch, LAUNCH_X).unwrap();
            let err = great_circle_angle(&s_est, &s_true).unwrap().to_degrees();
            assert!(err < 2.0, "trial {trial}: error {err} deg");
        }
    }

    #[test]
    fn estimate_immune_to_common_phase() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(15);
        let ch = random_unitary(&mut rng);
        let phase = Complex64::from_polar(1.0, 1.234);
        let rotated = JonesMatrix::new(
            ch.xx * phase,
            ch.xy * phase,
            ch.yx * phase,
            ch.yy * phase,
        );
        let cfg = EqConfig::default();
        let a = estimate_static_channel(&ch, 25.0, 20_000, 7, &cfg).unwrap();
        let b = estimate_static_channel(&rotated, 25.0, 20_000, 7, &cfg).unwrap();
        let sa = stokes_from_jones(&a, LAUNCH_X).unwrap();
        let sb = stokes_from_jones(&b, LAUNCH_X).unwrap();
        let diff = great_circle_angle(&sa, &sb).unwrap().to_degrees();
        assert!(diff < 0.5, "phase changed the SOP estimate by {diff} deg");
    }

    #[test]
    fn polarization_swap_detected_and_corrected() {
        // a 90-degree rotation swaps the polarizations exactly
        let swap = JonesMatrix::new(
            Complex64::new(0.0, 0.0),
            Complex64::new(1.0, 0.0),
            Complex64::new(-1.0, 0.0),
            Complex64::new(0.0, 0.0),
        );
        let cfg = EqConfig::default();
        let est = estimate_static_channel(&swap, 25.0, 20_000, 9, &cfg).unwrap();
        let s_est = stokes_from_jones(&est, LAUNCH_X).unwrap();
        let s_true = stokes_from_jones(&swap, LAUNCH_X).unwrap();
        let err = great_circle_angle(&s_est, &s_true).unwrap().to_degrees();
        assert!(err < 2.0, "swap channel error {err} deg");
    }

    #[test]
    fn full_stack_tracks_direct_sop() {
        use crate::channel::ChannelModel;
        use crate::scenario::{ChannelEvent, DriftParams, EventParams, EventScript};
        let script = EventScript {
            seed: 5,
            total_duration_s: 0.5,
            events: vec![ChannelEvent {
                start_s: 0.0,
                duration_s: f64::INFINITY,
                params: EventParams::Drift(DriftParams {
                    bandwidth_hz: 1.0,
                    rate_rms_rad_s: 0.05,
                }),
            }],
        };
        let model = ChannelModel::compile(&script).unwrap();
        let cfg = FullStackConfig::default();
        let est = full_stack_sop_series(&model, &cfg).unwrap();
        let period = est.sample_period_s;
        let direct = model.sop_direct_series(period, LAUNCH_X).unwrap();
        let mut checked = 0usize;
        for (k, s) in est.samples.iter().enumerate() {
            if !s.valid {
                continue;
            }
            let t = est.time_at(k);
            let kd = (t / period).round() as usize;
            if kd >= direct.samples.len() {
                break;
            }
            let err = great_circle_angle(&s.s, &direct.samples[kd].s)
                .unwrap()
                .to_degrees();
            assert!(err < 2.0, "t={t:.4}: SOP error {err:.3} deg");
            checked += 1;
        }
        assert!(checked > 100, "only {checked} valid snapshots");
    }

    #[test]
    fn snapshots_are_periodic_in_symbols() {
        let cfg = EqConfig::default();
        let est = estimate_static_channel(&JonesMatrix::IDENTITY, 25.0, 5_000, 3, &cfg);
        assert!(est.is_ok());
        // snapshot spacing is decimation * symbol period
        let expected = cfg.sop_decimation as f64 / cfg.symbol_rate_baud;
        let run = {
            use crate::channel::{add_noise, NoiseSpec};
            use crate::waveform::{generate_symbols, matched_filter, pulse_shape, TxConfig};
            let txc = TxConfig::default();
            let (sx, sy) = generate_symbols(&txc, 5_000).unwrap();
            let shaped = pulse_shape(&sx, &sy, &txc).unwrap();
            let spec = NoiseSpec {
                osnr_db: crate::channel::osnr_db_for_snr(20.0, shaped.sample_rate_hz),
                enabled: true,
            };
            let noisy = add_noise(&shaped, &spec, 4).unwrap();
            let filtered = matched_filter(&noisy, &txc).unwrap();
            equalize_block(&filtered, &cfg, None).unwrap()
        };
        assert!((run.jones.sample_period_s - expected).abs() < 1e-15);
        assert!(run.jones.entries.len() >= 5_000 / cfg.sop_decimation);
    }
}
