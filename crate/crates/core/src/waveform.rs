//! Dual-polarization QPSK transmit waveform: symbol generation, root-raised-
//! cosine pulse shaping, and the receive matched filter.
//!
//! The modulation format of the prototype is not public; QPSK with RRC
//! shaping is the stand-in (simplest constant-modulus format). The desk
//! preset runs at 1 MBd instead of 1 GBd: SOP tracking depends on the ratio
//! of channel dynamics to the SOP sampling rate, which is preserved by
//! adjusting the equalizer-state decimation.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

/// A block of dual-polarization complex baseband samples.
#[derive(Debug, Clone)]
pub struct DualPolBlock {
    pub x: Vec<Complex64>,
    pub y: Vec<Complex64>,
    pub sample_rate_hz: f64,
    pub t0_s: f64,
}

impl DualPolBlock {
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.len() as f64 / self.sample_rate_hz
    }

    /// Mean per-sample power averaged over both polarizations.
    pub fn mean_power(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        let p: f64 = self
            .x
            .iter()
            .zip(&self.y)
            .map(|(a, b)| a.norm_sqr() + b.norm_sqr())
            .sum();
        p / (2.0 * self.len() as f64)
    }
}

/// Transmitter configuration.
#[derive(Debug, Clone)]
pub struct TxConfig {
    pub symbol_rate_baud: f64,
    pub oversampling: usize,
    pub rrc_rolloff: f64,
    /// RRC filter span, in symbols on each side of the peak.
    pub rrc_span_symbols: usize,
    pub seed: u64,
}

impl Default for TxConfig {
    /// Desk preset: 1 MBd, two-fold oversampled, rolloff 0.1.
    fn default() -> Self {
        Self {
            symbol_rate_baud: 1e6,
            oversampling: 2,
            rrc_rolloff: 0.1,
            rrc_span_symbols: 48,
            seed: 1,
        }
    }
}

impl TxConfig {
    pub fn sample_rate_hz(&self) -> f64 {
        self.symbol_rate_baud * self.oversampling as f64
    }

    fn check(&self) -> Result<()> {
        if self.oversampling < 2 {
            return Err(Error::Waveform("oversampling must be >= 2".into()));
        }
        if !(self.rrc_rolloff > 0.0 && self.rrc_rolloff <= 1.0) {
            return Err(Error::Waveform("rrc_rolloff must be in (0, 1]".into()));
        }
        if self.symbol_rate_baud <= 0.0 {
            return Err(Error::Waveform("symbol_rate_baud must be positive".into()));
        }
        Ok(())
    }
}

const QPSK_POINTS: [(f64, f64); 4] = [
    (std::f64::consts::FRAC_1_SQRT_2, std::f64::consts::FRAC_1_SQRT_2),
    (-std::f64::consts::FRAC_1_SQRT_2, std::f64::consts::FRAC_1_SQRT_2),
    (-std::f64::consts::FRAC_1_SQRT_2, -std::f64::consts::FRAC_1_SQRT_2),
    (std::f64::consts::FRAC_1_SQRT_2, -std::f64::consts::FRAC_1_SQRT_2),
];

/// Infinite deterministic QPSK symbol source (one per polarization).
pub struct SymbolSource {
    rng: ChaCha8Rng,
}

impl SymbolSource {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn next_pair(&mut self) -> (Complex64, Complex64) {
        let ix = self.rng.gen_range(0..4usize);
        let iy = self.rng.gen_range(0..4usize);
        (
            Complex64::new(QPSK_POINTS[ix].0, QPSK_POINTS[ix].1),
            Complex64::new(QPSK_POINTS[iy].0, QPSK_POINTS[iy].1),
        )
    }
}

/// `n` independent unit-modulus QPSK symbols per polarization,
/// deterministic in `cfg.seed`.
pub fn generate_symbols(cfg: &TxConfig, n: usize) -> Result<(Vec<Complex64>, Vec<Complex64>)> {
    if n == 0 {
        return Err(Error::Waveform("symbol count must be positive".into()));
    }
    let mut src = SymbolSource::new(cfg.seed);
    let mut x = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let (sx, sy) = src.next_pair();
        x.push(sx);
        y.push(sy);
    }
    Ok((x, y))
}

/// Unit-energy root-raised-cosine taps at `os` samples per symbol, spanning
/// `span` symbols on each side (length `2*span*os + 1`).
pub fn rrc_taps(os: usize, rolloff: f64, span: usize) -> Vec<f64> {
    let n = 2 * span * os + 1;
    let mid = (span * os) as f64;
    let b = rolloff;
    let mut taps: Vec<f64> = (0..n)
        .map(|i| {
            // t in symbol periods
            let t = (i as f64 - mid) / os as f64;
            if t == 0.0 {
                1.0 - b + 4.0 * b / std::f64::consts::PI
            } else if (4.0 * b * t).abs() == 1.0 {
                // singular point t = +/- 1/(4 beta)
                let a = std::f64::consts::FRAC_PI_4 / b;
                (b / 2.0f64.sqrt())
                    * ((1.0 + 2.0 / std::f64::consts::PI) * a.sin()
                        + (1.0 - 2.0 / std::f64::consts::PI) * a.cos())
            } else {
                let pi = std::f64::consts::PI;
                let num = (pi * t * (1.0 - b)).sin() + 4.0 * b * t * (pi * t * (1.0 + b)).cos();
                let den = pi * t * (1.0 - (4.0 * b * t).powi(2));
                num / den
            }
        })
        .collect();
    let energy: f64 = taps.iter().map(|h| h * h).sum();
    let g = energy.sqrt();
    for h in &mut taps {
        *h /= g;
    }
    taps
}

/// Streaming real-coefficient FIR over complex samples, with a ring-buffer
/// delay line. `process` is causal; `same`-mode helpers compensate the
/// group delay.
pub struct Fir {
    taps: Vec<f64>,
    buf: Vec<Complex64>,
    pos: usize,
}

impl Fir {
    pub fn new(taps: Vec<f64>) -> Self {
        let len = taps.len();
        Self {
            taps,
            buf: vec![Complex64::new(0.0, 0.0); len],
            pos: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.taps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taps.is_empty()
    }

    /// Group delay in samples (linear-phase, odd length).
    pub fn delay(&self) -> usize {
        (self.taps.len() - 1) / 2
    }

    pub fn push(&mut self, v: Complex64) -> Complex64 {
        self.buf[self.pos] = v;
        self.pos = (self.pos + 1) % self.buf.len();
        let mut acc = Complex64::new(0.0, 0.0);
        let n = self.buf.len();
        // taps[0] multiplies the newest sample
        for (k, tap) in self.taps.iter().enumerate() {
            let idx = (self.pos + n - 1 - k) % n;
            acc += self.buf[idx] * *tap;
        }
        acc
    }
}

/// Delay-compensated "same"-length convolution with zero boundary samples.
fn convolve_same(signal: &[Complex64], taps: &[f64]) -> Vec<Complex64> {
    let half = (taps.len() - 1) / 2;
    let n = signal.len();
    let mut out = vec![Complex64::new(0.0, 0.0); n];
    for (i, o) in out.iter_mut().enumerate() {
        let mut acc = Complex64::new(0.0, 0.0);
        for (k, tap) in taps.iter().enumerate() {
            // output[i] = sum_k taps[k] * signal[i + half - k]
            let j = i as isize + half as isize - k as isize;
            if j >= 0 && (j as usize) < n {
                acc += signal[j as usize] * *tap;
            }
        }
        *o = acc;
    }
    out
}

/// RRC pulse shaping at `cfg.oversampling` samples per symbol. Output length
/// is exactly `n_symbols * oversampling` (tails beyond the block are
/// truncated; the filter delay is compensated so symbol k peaks at sample
/// `k * oversampling`). The block is normalized to unit average power.
pub fn pulse_shape(x: &[Complex64], y: &[Complex64], cfg: &TxConfig) -> Result<DualPolBlock> {
    cfg.check()?;
    if x.is_empty() || x.len() != y.len() {
        return Err(Error::Waveform("symbol streams empty or unequal".into()));
    }
    let os = cfg.oversampling;
    let taps = rrc_taps(os, cfg.rrc_rolloff, cfg.rrc_span_symbols);
    let n = x.len() * os;
    let mut ux = vec![Complex64::new(0.0, 0.0); n];
    let mut uy = vec![Complex64::new(0.0, 0.0); n];
    for (k, (&sx, &sy)) in x.iter().zip(y).enumerate() {
        ux[k * os] = sx;
        uy[k * os] = sy;
    }
    let mut fx = convolve_same(&ux, &taps);
    let mut fy = convolve_same(&uy, &taps);
    let p: f64 = fx
        .iter()
        .zip(&fy)
        .map(|(a, b)| a.norm_sqr() + b.norm_sqr())
        .sum::<f64>()
        / (2.0 * n as f64);
    let g = 1.0 / p.sqrt();
    for v in fx.iter_mut().chain(fy.iter_mut()) {
        *v *= g;
    }
    Ok(DualPolBlock {
        x: fx,
        y: fy,
        sample_rate_hz: cfg.sample_rate_hz(),
        t0_s: 0.0,
    })
}

/// Receive matched filter: the same RRC, delay-compensated, same length.
/// Symbol instants after matching are at indices `k * oversampling`.
pub fn matched_filter(block: &DualPolBlock, cfg: &TxConfig) -> Result<DualPolBlock> {
    cfg.check()?;
    if (block.sample_rate_hz - cfg.sample_rate_hz()).abs() > 1e-6 * cfg.sample_rate_hz() {
        return Err(Error::Waveform(format!(
            "sample rate {} Hz does not match config ({} Hz)",
            block.sample_rate_hz,
            cfg.sample_rate_hz()
        )));
    }
    let taps = rrc_taps(cfg.oversampling, cfg.rrc_rolloff, cfg.rrc_span_symbols);
    Ok(DualPolBlock {
        x: convolve_same(&block.x, &taps),
        y: convolve_same(&block.y, &taps),
        sample_rate_hz: block.sample_rate_hz,
        t0_s: block.t0_s,
    })
}
