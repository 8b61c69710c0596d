//! Anomaly detection on polarization activity: robust baselining of band
//! energies, hysteresis event detection, loss-of-signal tracking, and event
//! classification (precursor / impulsive / break).

use serde::{Deserialize, Serialize};

use crate::scenario::EventScript;
use crate::sop::SopSeries;
use crate::spectral::{
    apply_notches, band_energies, default_bands, downsample_decimate, stft_spectrogram, FeatureSet,
    NotchSpec,
};
use crate::{Error, Result};

/// Robust per-band baseline: median and scaled MAD of the dB band energy
/// over a quiet training segment.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Baseline {
    pub band_names: Vec<String>,
    pub median_db: Vec<f64>,
    pub scale_db: Vec<f64>,
}

/// 1.4826 * MAD equals the standard deviation for Gaussian data.
const MAD_TO_SIGMA: f64 = 1.4826;

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Fits a robust baseline from training frames. `min_scale_db` floors the
/// scale so that near-constant bands do not produce unbounded z-scores; pass
/// `None` to reject degenerate (zero-MAD) bands instead.
pub fn fit_baseline(features: &FeatureSet, min_scale_db: Option<f64>) -> Result<Baseline> {
    if features.frames.len() < 100 {
        return Err(Error::Detect(format!(
            "baseline needs at least 100 frames, got {}",
            features.frames.len()
        )));
    }
    let nb = features.bands.len();
    let mut median_db = Vec::with_capacity(nb);
    let mut scale_db = Vec::with_capacity(nb);
    for b in 0..nb {
        let mut vals: Vec<f64> = features.frames.iter().map(|f| f.energy_db[b]).collect();
        vals.sort_by(|a, c| a.partial_cmp(c).unwrap());
        let med = median(&vals);
        let mut devs: Vec<f64> = vals.iter().map(|v| (v - med).abs()).collect();
        devs.sort_by(|a, c| a.partial_cmp(c).unwrap());
        let mut scale = MAD_TO_SIGMA * median(&devs);
        match min_scale_db {
            Some(floor) => scale = scale.max(floor),
            None => {
                if scale <= 0.0 {
                    return Err(Error::Detect(format!(
                        "band {} has zero dispersion; cannot score without a scale floor",
                        features.bands[b].name
                    )));
                }
            }
        }
        median_db.push(med);
        scale_db.push(scale);
    }
    Ok(Baseline {
        band_names: features.bands.iter().map(|b| b.name.clone()).collect(),
        median_db,
        scale_db,
    })
}

/// Per-frame anomaly score: robust z of each band against the baseline.
#[derive(Debug, Clone)]
pub struct ScoredFrame {
    pub t_s: f64,
    /// z-score per band, same order as the baseline bands
    pub z: Vec<f64>,
    /// max over bands
    pub score: f64,
    /// index of the band achieving the max
    pub dominant_band: usize,
}

/// Scores frames against a baseline.
pub fn score_frames(features: &FeatureSet, baseline: &Baseline) -> Result<Vec<ScoredFrame>> {
    if features.bands.len() != baseline.median_db.len() {
        return Err(Error::Detect("feature/baseline band count mismatch".into()));
    }
    Ok(features
        .frames
        .iter()
        .map(|f| {
            let z: Vec<f64> = f
                .energy_db
                .iter()
                .zip(baseline.median_db.iter().zip(&baseline.scale_db))
                .map(|(e, (m, s))| (e - m) / s)
                .collect();
            let (dominant_band, score) = z
                .iter()
                .cloned()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
                .unwrap();
            ScoredFrame {
                t_s: f.t_s,
                z,
                score,
                dominant_band,
            }
        })
        .collect())
}

/// Event class assigned to an anomaly run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlarmClass {
    /// short isolated burst (< 2 s above threshold)
    PrecursorImpulsive,
    /// sustained elevated activity (>= 10 s)
    PrecursorSustained,
    /// intermediate-length run
    Impulsive,
    /// high-band dominated run ending in loss of signal
    Break,
    /// signal loss itself
    LossOfSignal,
}

impl std::fmt::Display for AlarmClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            AlarmClass::PrecursorImpulsive => "precursor_impulsive",
            AlarmClass::PrecursorSustained => "precursor_sustained",
            AlarmClass::Impulsive => "impulsive",
            AlarmClass::Break => "break",
            AlarmClass::LossOfSignal => "loss_of_signal",
        };
        f.write_str(s)
    }
}

/// One detected event.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Alarm {
    /// run start (first frame at or above the enter threshold)
    pub t_s: f64,
    pub class: AlarmClass,
    /// dominant band name at the peak frame
    pub band: String,
    /// peak z-score within the run
    pub score: f64,
    pub run_length_s: f64,
}

/// Hysteresis thresholds and hold times for detection.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DetectConfig {
    /// z to enter an event
    pub enter_z: f64,
    /// consecutive frames required at or above `enter_z`
    pub enter_frames: usize,
    /// z to leave an event
    pub exit_z: f64,
    /// runs shorter than this are impulsive precursors
    pub impulsive_max_s: f64,
    /// runs at least this long are sustained precursors
    pub sustained_min_s: f64,
    /// a run whose end is within this window of a signal loss, with the
    /// high band dominant at its peak, is classified as a break
    pub break_los_window_s: f64,
    /// invalid samples must persist this long to count as signal loss
    pub los_hold_s: f64,
    /// s0 below the leading-window mean by this much is also signal loss
    pub los_power_drop_db: f64,
}

impl Default for DetectConfig {
    fn default() -> Self {
        Self {
            enter_z: 6.0,
            enter_frames: 2,
            exit_z: 4.0,
            impulsive_max_s: 2.0,
            sustained_min_s: 10.0,
            break_los_window_s: 5.0,
            los_hold_s: 0.1,
            los_power_drop_db: 20.0,
        }
    }
}

/// A contiguous run of frames above threshold, before classification.
#[derive(Debug, Clone)]
pub struct EventRun {
    pub start_s: f64,
    pub end_s: f64,
    pub peak_score: f64,
    pub peak_band: usize,
}

/// Streaming hysteresis detector. Feed scored frames one at a time (or in
/// chunks); completed runs are emitted as soon as the score drops below the
/// exit threshold. Chunked and whole-stream feeding give identical runs.
pub struct EventClassifier {
    config: DetectConfig,
    frame_hop_s: f64,
    state: State,
    finished: Vec<EventRun>,
}

enum State {
    Idle,
    /// counting consecutive frames at/above enter_z
    Arming { start_s: f64, count: usize, peak: f64, band: usize },
    Active { start_s: f64, last_s: f64, peak: f64, band: usize },
}

impl EventClassifier {
    pub fn new(config: DetectConfig, frame_hop_s: f64) -> Self {
        Self {
            config,
            frame_hop_s,
            state: State::Idle,
            finished: Vec::new(),
        }
    }

    pub fn push(&mut self, frame: &ScoredFrame) {
        let c = &self.config;
        match &mut self.state {
            State::Idle => {
                if frame.score >= c.enter_z {
                    self.state = State::Arming {
                        start_s: frame.t_s,
                        count: 1,
                        peak: frame.score,
                        band: frame.dominant_band,
                    };
                    self.maybe_promote(frame.t_s);
                }
            }
            State::Arming { start_s, count, peak, band } => {
                if frame.score >= c.enter_z {
                    *count += 1;
                    if frame.score > *peak {
                        *peak = frame.score;
                        *band = frame.dominant_band;
                    }
                    let s = *start_s;
                    self.maybe_promote(s);
                } else {
                    // never reached the required persistence: no event
                    self.state = State::Idle;
                    self.push(frame);
                }
            }
            State::Active { last_s, peak, band, .. } => {
                if frame.score >= c.exit_z {
                    *last_s = frame.t_s;
                    if frame.score > *peak {
                        *peak = frame.score;
                        *band = frame.dominant_band;
                    }
                } else {
                    self.close_run();
                }
            }
        }
    }

    fn maybe_promote(&mut self, _start: f64) {
        if let State::Arming { start_s, count, peak, band } = self.state {
            if count >= self.config.enter_frames {
                self.state = State::Active {
                    start_s,
                    last_s: start_s + (count - 1) as f64 * self.frame_hop_s,
                    peak,
                    band,
                };
            }
        }
    }

    fn close_run(&mut self) {
        if let State::Active { start_s, last_s, peak, band } = self.state {
            self.finished.push(EventRun {
                start_s,
                end_s: last_s,
                peak_score: peak,
                peak_band: band,
            });
        }
        self.state = State::Idle;
    }

    /// Drains completed runs.
    pub fn take_runs(&mut self) -> Vec<EventRun> {
        std::mem::take(&mut self.finished)
    }

    /// Ends the stream, closing any active run.
    pub fn finish(mut self) -> Vec<EventRun> {
        self.close_run();
        self.finished
    }
}

/// Collects runs from a full scored stream.
pub fn detect_runs(frames: &[ScoredFrame], config: &DetectConfig, hop_s: f64) -> Vec<EventRun> {
    let mut cls = EventClassifier::new(config.clone(), hop_s);
    for f in frames {
        cls.push(f);
    }
    cls.finish()
}

/// Classifies runs into alarms, given the band names and an optional
/// loss-of-signal time.
pub fn classify_runs(
    runs: &[EventRun],
    band_names: &[String],
    config: &DetectConfig,
    los_time_s: Option<f64>,
) -> Vec<Alarm> {
    let high = band_names.iter().position(|n| n == "high");
    let mut alarms: Vec<Alarm> = runs
        .iter()
        .map(|r| {
            let run_length_s = r.end_s - r.start_s;
            let near_los = los_time_s
                .map(|t| (t - r.end_s).abs() <= config.break_los_window_s || (r.start_s..=r.end_s).contains(&t))
                .unwrap_or(false);
            let class = if near_los && Some(r.peak_band) == high {
                AlarmClass::Break
            } else if run_length_s < config.impulsive_max_s {
                AlarmClass::PrecursorImpulsive
            } else if run_length_s >= config.sustained_min_s {
                AlarmClass::PrecursorSustained
            } else {
                AlarmClass::Impulsive
            };
            Alarm {
                t_s: r.start_s,
                class,
                band: band_names[r.peak_band].clone(),
                score: r.peak_score,
                run_length_s,
            }
        })
        .collect();
    if let Some(t) = los_time_s {
        alarms.push(Alarm {
            t_s: t,
            class: AlarmClass::LossOfSignal,
            band: String::new(),
            score: f64::INFINITY,
            run_length_s: 0.0,
        });
        alarms.sort_by(|a, b| a.t_s.partial_cmp(&b.t_s).unwrap());
    }
    alarms
}

/// Finds loss of signal in a SOP series: either the validity flag goes false
/// and stays false for the hold time, or s0 drops by `los_power_drop_db`
/// below its mean over the leading valid window. Returns the start of the
/// loss, if any.
pub fn detect_los(series: &SopSeries, config: &DetectConfig) -> Option<f64> {
    let hold = (config.los_hold_s / series.sample_period_s).ceil().max(1.0) as usize;
    let lead = series.samples.len().min(1000).max(1);
    let mean_s0: f64 = series.samples[..lead]
        .iter()
        .filter(|s| s.valid)
        .map(|s| s.s.s0)
        .sum::<f64>()
        / series.samples[..lead].iter().filter(|s| s.valid).count().max(1) as f64;
    let floor = mean_s0 * 10f64.powf(-config.los_power_drop_db / 10.0);
    let mut run_start: Option<usize> = None;
    let mut run_len = 0usize;
    for (i, s) in series.samples.iter().enumerate() {
        let lost = !s.valid || s.s.s0 < floor;
        if lost {
            if run_start.is_none() {
                run_start = Some(i);
            }
            run_len += 1;
            if run_len >= hold {
                return Some(series.time_at(run_start.unwrap()));
            }
        } else {
            run_start = None;
            run_len = 0;
        }
    }
    None
}

/// Result of the full detection pipeline.
#[derive(Debug, Clone)]
pub struct DetectionReport {
    pub alarms: Vec<Alarm>,
    pub baseline: Baseline,
    pub los_time_s: Option<f64>,
    /// fused per-frame scores (max over Stokes components), for export
    pub scores: Vec<ScoredFrame>,
    pub frame_hop_s: f64,
}

/// Detection-rate presets: SOP traces are decimated to this rate before
/// spectral analysis, giving 0.977 Hz resolution at a 1024-point window, so
/// the 0.05-1 Hz low band is populated.
pub const DETECT_RATE_HZ: f64 = 1000.0;
pub const DETECT_WINDOW: usize = 1024;
pub const DETECT_HOP: usize = 128;

/// Frames whose window overlaps the first or last `EDGE_GUARD_S` seconds of
/// the trace are discarded: the zero-phase notch filter settles over roughly
/// 1 s at the 1.5 Hz width, and its edge transients would otherwise score as
/// broadband anomalies.
pub const EDGE_GUARD_S: f64 = 1.5;

/// Runs the full pipeline on a SOP series: take the leading valid run of the
/// normalized Stokes components, decimate to the detection rate, notch the
/// mains tones, compute band energies per component, fuse scores as the max
/// over components, baseline on the training prefix, and emit alarms.
///
/// `train_frac` selects the leading fraction of frames used for the
/// baseline; it must be quiet. Pass an externally fitted `baseline` to skip
/// training.
pub fn run_detection(
    series: &SopSeries,
    config: &DetectConfig,
    train_frac: f64,
    baseline: Option<Baseline>,
    min_scale_db: Option<f64>,
) -> Result<DetectionReport> {
    let fs_in = 1.0 / series.sample_period_s;
    let factor = (fs_in / DETECT_RATE_HZ).round() as usize;
    if factor < 1 || (fs_in - factor as f64 * DETECT_RATE_HZ).abs() > 1e-6 {
        return Err(Error::Detect(format!(
            "SOP rate {fs_in} Hz is not an integer multiple of {DETECT_RATE_HZ} Hz"
        )));
    }
    let traces = series.valid_prefix_traces();
    let notch = NotchSpec::mains(DETECT_RATE_HZ);
    let bands = default_bands();
    let mut per_component: Vec<FeatureSet> = Vec::with_capacity(3);
    for tr in &traces {
        let dec = downsample_decimate(tr, factor)?;
        let clean = apply_notches(&dec, &notch)?;
        let spec = stft_spectrogram(&clean, DETECT_RATE_HZ, DETECT_WINDOW, DETECT_HOP)?;
        per_component.push(band_energies(&spec, &bands)?);
    }
    // fuse: per frame and band, take max energy over S1/S2/S3; drop frames
    // whose window overlaps the filter edge-guard regions
    let trace_dur_s = traces[0].len() as f64 * series.sample_period_s;
    let half_win_s = DETECT_WINDOW as f64 / (2.0 * DETECT_RATE_HZ);
    let keep = |t: f64| {
        t - half_win_s >= EDGE_GUARD_S && t + half_win_s <= trace_dur_s - EDGE_GUARD_S
    };
    let kept: Vec<usize> = (0..per_component[0].frames.len())
        .filter(|&i| keep(per_component[0].frames[i].t_s))
        .collect();
    let nframes = kept.len();
    let fused = FeatureSet {
        bands: bands.clone(),
        frame_hop_s: per_component[0].frame_hop_s,
        frames: kept
            .iter()
            .map(|&i| {
                let t_s = per_component[0].frames[i].t_s;
                let energy_db = (0..bands.len())
                    .map(|b| {
                        per_component
                            .iter()
                            .map(|c| c.frames[i].energy_db[b])
                            .fold(f64::MIN, f64::max)
                    })
                    .collect();
                crate::spectral::BandFeature { t_s, energy_db }
            })
            .collect(),
    };
    let baseline = match baseline {
        Some(b) => b,
        None => {
            let ntrain = ((nframes as f64 * train_frac) as usize).max(1);
            let train = FeatureSet {
                bands: bands.clone(),
                frame_hop_s: fused.frame_hop_s,
                frames: fused.frames[..ntrain.min(nframes)].to_vec(),
            };
            fit_baseline(&train, min_scale_db)?
        }
    };
    let scores = score_frames(&fused, &baseline)?;
    let runs = detect_runs(&scores, config, fused.frame_hop_s);
    let los_time_s = detect_los(series, config);
    let names: Vec<String> = bands.iter().map(|b| b.name.clone()).collect();
    let alarms = classify_runs(&runs, &names, config, los_time_s);
    Ok(DetectionReport {
        alarms,
        baseline,
        los_time_s,
        scores,
        frame_hop_s: fused.frame_hop_s,
    })
}

/// Convenience: detection over a scenario's SOP output with the default
/// training split, using the script's quiet lead-in for the baseline.
pub fn detect_from_script(
    script: &EventScript,
    series: &SopSeries,
    config: &DetectConfig,
) -> Result<DetectionReport> {
    // train on the lead-in before the first non-background event, capped at
    // a quarter of the record
    let first_event = script
        .events
        .iter()
        .filter(|e| {
            !matches!(
                e.params,
                crate::scenario::EventParams::Drift(_)
                    | crate::scenario::EventParams::MainsTone(_)
            )
        })
        .map(|e| e.start_s)
        .fold(f64::INFINITY, f64::min);
    let total = series.samples.len() as f64 * series.sample_period_s;
    let frac = if first_event.is_finite() {
        (first_event / total).min(0.25)
    } else {
        0.25
    };
    run_detection(series, config, frac.max(0.01), None, Some(0.5))
}
