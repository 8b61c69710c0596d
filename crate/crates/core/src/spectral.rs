//! Spectral processing of SOP traces: mains notching, spectrograms, band
//! energies, and anti-aliased decimation.

use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::{Error, Result};

/// Magnitudes are floored at this linear value before conversion to dB,
/// giving the documented floor of -240 dB.
pub const MAGNITUDE_FLOOR: f64 = 1e-12;
pub const MAGNITUDE_FLOOR_DB: f64 = -240.0;

/// Cascade of band-stop notches (one per center frequency).
#[derive(Debug, Clone)]
pub struct NotchSpec {
    pub centers_hz: Vec<f64>,
    pub width_hz: f64,
    pub sample_rate_hz: f64,
}

impl NotchSpec {
    /// Mains family at 50/100/150 Hz, 1.5 Hz wide.
    pub fn mains(sample_rate_hz: f64) -> Self {
        Self {
            centers_hz: vec![50.0, 100.0, 150.0],
            width_hz: 1.5,
            sample_rate_hz,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.sample_rate_hz <= 0.0 || self.width_hz <= 0.0 {
            return Err(Error::Spectral("invalid notch spec".into()));
        }
        for &c in &self.centers_hz {
            if c - self.width_hz / 2.0 <= 0.0 || c + self.width_hz / 2.0 >= self.sample_rate_hz / 2.0
            {
                return Err(Error::Spectral(format!(
                    "notch at {c} Hz does not fit below Nyquist ({} Hz)",
                    self.sample_rate_hz / 2.0
                )));
            }
        }
        Ok(())
    }
}

/// Second-order resonator notch (zeros on the unit circle at the center
/// frequency, poles at radius set by the -3 dB width).
#[derive(Debug, Clone, Copy)]
struct Biquad {
    b0: f64,
    b1: f64,
    b2: f64,
    a1: f64,
    a2: f64,
}

impl Biquad {
    fn notch(center_hz: f64, width_hz: f64, fs: f64) -> Self {
        let w0 = std::f64::consts::TAU * center_hz / fs;
        let r = 1.0 - std::f64::consts::PI * width_hz / fs;
        let cw = w0.cos();
        // unity gain at DC
        let g = (1.0 - 2.0 * r * cw + r * r) / (2.0 - 2.0 * cw);
        Self {
            b0: g,
            b1: -2.0 * g * cw,
            b2: g,
            a1: -2.0 * r * cw,
            a2: r * r,
        }
    }

    fn filter_in_place(&self, x: &mut [f64]) {
        let mut x1 = 0.0;
        let mut x2 = 0.0;
        let mut y1 = 0.0;
        let mut y2 = 0.0;
        for v in x.iter_mut() {
            let x0 = *v;
            let y0 = self.b0 * x0 + self.b1 * x1 + self.b2 * x2 - self.a1 * y1 - self.a2 * y2;
            x2 = x1;
            x1 = x0;
            y2 = y1;
            y1 = y0;
            *v = y0;
        }
    }
}

/// Zero-phase (forward-backward) filtering with odd-reflection padding, so
/// event timing in filtered traces is not skewed.
fn filtfilt(biquad: &Biquad, trace: &[f64], pad: usize) -> Vec<f64> {
    let n = trace.len();
    let pad = pad.min(n - 1);
    let mut buf = Vec::with_capacity(n + 2 * pad);
    // odd reflection about the first/last samples
    for k in (1..=pad).rev() {
        buf.push(2.0 * trace[0] - trace[k]);
    }
    buf.extend_from_slice(trace);
    for k in 1..=pad {
        buf.push(2.0 * trace[n - 1] - trace[n - 1 - k]);
    }
    biquad.filter_in_place(&mut buf);
    buf.reverse();
    biquad.filter_in_place(&mut buf);
    buf.reverse();
    buf[pad..pad + n].to_vec()
}

/// Applies every notch in the spec, zero-phase.
pub fn apply_notches(trace: &[f64], spec: &NotchSpec) -> Result<Vec<f64>> {
    spec.validate()?;
    // transient length ~ fs / (pi * width); pad well past it
    let pad = (8.0 * spec.sample_rate_hz / (std::f64::consts::PI * spec.width_hz)).ceil() as usize;
    if trace.len() < 16 {
        return Err(Error::Spectral("trace shorter than filter warmup".into()));
    }
    let mut out = trace.to_vec();
    for &c in &spec.centers_hz {
        let bq = Biquad::notch(c, spec.width_hz, spec.sample_rate_hz);
        out = filtfilt(&bq, &out, pad);
    }
    Ok(out)
}

/// Time-frequency magnitude map of a real trace.
#[derive(Debug, Clone)]
pub struct Spectrogram {
    pub frame_times_s: Vec<f64>,
    pub freq_bins_hz: Vec<f64>,
    /// frames x bins
    pub magnitude_db: Vec<Vec<f64>>,
    pub window_len: usize,
    pub hop: usize,
    pub sample_rate_hz: f64,
}

impl Spectrogram {
    pub fn num_frames(&self) -> usize {
        self.magnitude_db.len()
    }
}

/// Streaming Hann-windowed STFT. Push chunks of any size; frames are emitted
/// as soon as a full window is available. Carry-over state between chunks is
/// `window_len - hop` samples, so chunked and whole-trace processing produce
/// bit-identical frames.
pub struct StftStream {
    window: Vec<f64>,
    hop: usize,
    sample_rate_hz: f64,
    buf: Vec<f64>,
    /// Read position within `buf`; already-framed samples are dropped lazily
    /// so a large `push` stays linear in the chunk size.
    pos: usize,
    consumed: usize,
    fft: std::sync::Arc<dyn rustfft::Fft<f64>>,
}

impl StftStream {
    pub fn new(sample_rate_hz: f64, window_len: usize, hop: usize) -> Result<Self> {
        if window_len == 0 || hop == 0 {
            return Err(Error::Spectral("window and hop must be positive".into()));
        }
        // periodic Hann
        let window = (0..window_len)
            .map(|n| 0.5 * (1.0 - (std::f64::consts::TAU * n as f64 / window_len as f64).cos()))
            .collect();
        let fft = FftPlanner::new().plan_fft_forward(window_len);
        Ok(Self {
            window,
            hop,
            sample_rate_hz,
            buf: Vec::new(),
            pos: 0,
            consumed: 0,
            fft,
        })
    }

    pub fn window_len(&self) -> usize {
        self.window.len()
    }

    pub fn freq_bins_hz(&self) -> Vec<f64> {
        let n = self.window.len();
        (0..=n / 2)
            .map(|k| k as f64 * self.sample_rate_hz / n as f64)
            .collect()
    }

    /// Feeds samples; returns (frame_time_s, magnitude_db) for each
    /// completed frame. Frame time is the center of the window.
    pub fn push(&mut self, chunk: &[f64]) -> Vec<(f64, Vec<f64>)> {
        self.buf.extend_from_slice(chunk);
        let n = self.window.len();
        let mut frames = Vec::new();
        while self.buf.len() - self.pos >= n {
            let mut fft_buf: Vec<Complex64> = self.buf[self.pos..self.pos + n]
                .iter()
                .zip(&self.window)
                .map(|(x, w)| Complex64::new(x * w, 0.0))
                .collect();
            self.fft.process(&mut fft_buf);
            let mags: Vec<f64> = fft_buf[..=n / 2]
                .iter()
                .map(|v| 20.0 * v.norm().max(MAGNITUDE_FLOOR).log10())
                .collect();
            let t = (self.consumed + n / 2) as f64 / self.sample_rate_hz;
            frames.push((t, mags));
            self.pos += self.hop;
            self.consumed += self.hop;
        }
        if self.pos >= n {
            self.buf.drain(..self.pos);
            self.pos = 0;
        }
        frames
    }
}

/// Whole-trace spectrogram (implemented on the streaming path, so batch and
/// chunked results are identical by construction).
pub fn stft_spectrogram(
    trace: &[f64],
    sample_rate_hz: f64,
    window_len: usize,
    hop: usize,
) -> Result<Spectrogram> {
    if window_len > trace.len() {
        return Err(Error::Spectral(format!(
            "window ({window_len}) longer than trace ({})",
            trace.len()
        )));
    }
    let mut stream = StftStream::new(sample_rate_hz, window_len, hop)?;
    let frames = stream.push(trace);
    let (frame_times_s, magnitude_db): (Vec<f64>, Vec<Vec<f64>>) = frames.into_iter().unzip();
    Ok(Spectrogram {
        frame_times_s,
        freq_bins_hz: stream.freq_bins_hz(),
        magnitude_db,
        window_len,
        hop,
        sample_rate_hz,
    })
}

/// A named frequency band.
#[derive(Debug, Clone, PartialEq)]
pub struct Band {
    pub name: String,
    pub lo_hz: f64,
    pub hi_hz: f64,
}

impl Band {
    pub fn new(name: &str, lo_hz: f64, hi_hz: f64) -> Self {
        Self {
            name: name.into(),
            lo_hz,
            hi_hz,
        }
    }
}

/// Default detection bands.
pub fn default_bands() -> Vec<Band> {
    vec![
        Band::new("low", 0.05, 1.0),
        Band::new("mid", 1.0, 20.0),
        Band::new("high", 20.0, 200.0),
    ]
}

/// Band energies for one spectrogram frame, dB.
#[derive(Debug, Clone)]
pub struct BandFeature {
    pub t_s: f64,
    pub energy_db: Vec<f64>,
}

/// Per-frame band features aligned with a band list.
#[derive(Debug, Clone)]
pub struct FeatureSet {
    pub bands: Vec<Band>,
    pub frame_hop_s: f64,
    pub frames: Vec<BandFeature>,
}

/// Sums squared linear magnitudes over each band per frame, in dB. A bin
/// belongs to a band when its center frequency is in `[lo, hi)`. Scaling the
/// input trace by g shifts every band by exactly `20 log10 g`; an all-floor
/// frame reports `10 log10` of the summed floor power.
pub fn band_energies(spec: &Spectrogram, bands: &[Band]) -> Result<FeatureSet> {
    let nyquist = spec.sample_rate_hz / 2.0;
    let mut bins_per_band = Vec::with_capacity(bands.len());
    for b in bands {
        if b.hi_hz <= b.lo_hz || b.hi_hz > nyquist + 1e-9 {
            return Err(Error::Spectral(format!(
                "band {} [{}, {}) outside (0, {nyquist}]",
                b.name, b.lo_hz, b.hi_hz
            )));
        }
        let bins: Vec<usize> = spec
            .freq_bins_hz
            .iter()
            .enumerate()
            .filter(|(_, f)| **f >= b.lo_hz && **f < b.hi_hz)
            .map(|(k, _)| k)
            .collect();
        if bins.is_empty() {
            return Err(Error::Spectral(format!(
                "band {} is empty at resolution {} Hz",
                b.name,
                spec.sample_rate_hz / spec.window_len as f64
            )));
        }
        bins_per_band.push(bins);
    }
    let frames = spec
        .magnitude_db
        .iter()
        .zip(&spec.frame_times_s)
        .map(|(mags, &t)| {
            let energy_db = bins_per_band
                .iter()
                .map(|bins| {
                    let p: f64 = bins.iter().map(|&k| 10f64.powf(mags[k] / 10.0)).sum();
                    10.0 * p.log10()
                })
                .collect();
            BandFeature { t_s: t, energy_db }
        })
        .collect();
    Ok(FeatureSet {
        bands: bands.to_vec(),
        frame_hop_s: spec.hop as f64 / spec.sample_rate_hz,
        frames,
    })
}

/// Anti-aliased decimation. Windowed-sinc (Blackman) low-pass with cutoff
/// `0.35 / factor` of the input rate, then every `factor`-th sample. DC gain
/// is exactly 1; alias suppression at the new Nyquist exceeds 60 dB.
pub fn downsample_decimate(trace: &[f64], factor: usize) -> Result<Vec<f64>> {
    if factor < 1 {
        return Err(Error::Spectral("decimation factor must be >= 1".into()));
    }
    if factor == 1 {
        return Ok(trace.to_vec());
    }
    let half = 24 * factor; // length 48*factor + 1
    let cutoff = 0.35 / factor as f64;
    let m = 2 * half;
    let mut taps: Vec<f64> = (0..=m)
        .map(|i| {
            let k = i as f64 - half as f64;
            let sinc = if k == 0.0 {
                2.0 * cutoff
            } else {
                (std::f64::consts::TAU * cutoff * k).sin() / (std::f64::consts::PI * k)
            };
            let u = i as f64 / m as f64;
            let blackman = 0.42 - 0.5 * (std::f64::consts::TAU * u).cos()
                + 0.08 * (2.0 * std::f64::consts::TAU * u).cos();
            sinc * blackman
        })
        .collect();
    let sum: f64 = taps.iter().sum();
    for t in &mut taps {
        *t /= sum;
    }
    let n = trace.len();
    // even reflection at the boundaries: avoids the step edge (and its
    // broadband transient) that zero padding would create
    let sample = |j: isize| -> f64 {
        let m = n as isize;
        let j = if j < 0 { -j } else if j >= m { 2 * m - 2 - j } else { j };
        trace[j.clamp(0, m - 1) as usize]
    };
    let mut out = Vec::with_capacity(n / factor + 1);
    let mut idx = 0usize;
    while idx < n {
        let mut acc = 0.0;
        for (k, tap) in taps.iter().enumerate() {
            acc += sample(idx as isize + half as isize - k as isize) * tap;
        }
        out.push(acc);
        idx += factor;
    }
    Ok(out)
}
