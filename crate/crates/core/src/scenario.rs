//! Scenario scripts: scripted channel dynamics compiled into a deterministic
//! event timeline.
//!
//! Scenario files are TOML with explicit units in every field name. Schema:
//!
//! ```toml
//! seed = 7
//! total_duration_s = 1200.0
//!
//! [[events]]
//! kind = "drift"          # drift | mains_tone | burst | flutter | break
//! start_s = 0.0
//! duration_s = inf        # omit or `inf` for open-ended drift/mains
//! [events.params]
//! bandwidth_hz = 1.0
//! rate_rms_rad_s = 0.05
//! ```
//!
//! Per-kind `params` fields:
//! * `drift`: `bandwidth_hz`, `rate_rms_rad_s`
//! * `mains_tone`: `fundamental_hz`, `harmonic_peaks_rad` (index k is the
//!   peak rotation of harmonic (k+1), so `[a, b, c]` places tones at the
//!   fundamental, 2x and 3x)
//! * `burst`: `peak_rate_rad_s`, `envelope_width_s`, `repeat_period_s`,
//!   `repeat_count`
//! * `flutter`: `rate_rms_rad_s`, `bandwidth_hz`
//! * `break`: `ramp_s`, `post_break_power_db`
//!
//! Time origin `t = 0` is scenario start; the break instant is an absolute
//! `start_s`. The break completes (signal lost) at `start_s + ramp_s`.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Drift,
    MainsTone,
    Burst,
    Flutter,
    Break,
}

impl std::fmt::Display for EventKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            EventKind::Drift => "drift",
            EventKind::MainsTone => "mains_tone",
            EventKind::Burst => "burst",
            EventKind::Flutter => "flutter",
            EventKind::Break => "break",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftParams {
    pub bandwidth_hz: f64,
    pub rate_rms_rad_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MainsParams {
    pub fundamental_hz: f64,
    pub harmonic_peaks_rad: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BurstParams {
    pub peak_rate_rad_s: f64,
    pub envelope_width_s: f64,
    pub repeat_period_s: f64,
    pub repeat_count: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlutterParams {
    pub rate_rms_rad_s: f64,
    pub bandwidth_hz: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BreakParams {
    pub ramp_s: f64,
    pub post_break_power_db: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum EventParams {
    Drift(DriftParams),
    MainsTone(MainsParams),
    Burst(BurstParams),
    Flutter(FlutterParams),
    Break(BreakParams),
}

impl EventParams {
    pub fn kind(&self) -> EventKind {
        match self {
            EventParams::Drift(_) => EventKind::Drift,
            EventParams::MainsTone(_) => EventKind::MainsTone,
            EventParams::Burst(_) => EventKind::Burst,
            EventParams::Flutter(_) => EventKind::Flutter,
            EventParams::Break(_) => EventKind::Break,
        }
    }
}

/// One scripted channel-dynamics event.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelEvent {
    pub start_s: f64,
    /// `f64::INFINITY` means open-ended (drift/mains only).
    pub duration_s: f64,
    pub params: EventParams,
}

impl ChannelEvent {
    pub fn kind(&self) -> EventKind {
        self.params.kind()
    }

    /// End of the event's influence; infinite events never end.
    pub fn end_s(&self) -> f64 {
        self.start_s + self.duration_s
    }
}

/// Validated, ordered event timeline.
#[derive(Debug, Clone, PartialEq)]
pub struct EventScript {
    pub seed: u64,
    pub total_duration_s: f64,
    pub events: Vec<ChannelEvent>,
}

impl EventScript {
    /// Completion time of the break event, if any (signal lost afterwards).
    pub fn break_completion_s(&self) -> Option<f64> {
        self.events.iter().find_map(|e| match &e.params {
            EventParams::Break(b) => Some(e.start_s + b.ramp_s),
            _ => None,
        })
    }

    /// Break onset, if any.
    pub fn break_onset_s(&self) -> Option<f64> {
        self.events.iter().find_map(|e| match &e.params {
            EventParams::Break(_) => Some(e.start_s),
            _ => None,
        })
    }
}

/// One invariant violation, with the index of the offending event when the
/// violation is event-local.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub event_index: Option<usize>,
    pub message: String,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.event_index {
            Some(i) => write!(f, "event {}: {}", i, self.message),
            None => f.write_str(&self.message),
        }
    }
}

// --- serde document shape ----------------------------------------------

#[derive(Serialize, Deserialize)]
struct ScenarioDoc {
    seed: u64,
    total_duration_s: f64,
    #[serde(default)]
    events: Vec<EventDoc>,
}

#[derive(Serialize, Deserialize)]
struct EventDoc {
    kind: EventKind,
    start_s: f64,
    #[serde(default = "infinity")]
    duration_s: f64,
    params: toml::Table,
}

fn infinity() -> f64 {
    f64::INFINITY
}

fn params_from_table(index: usize, kind: EventKind, table: toml::Table) -> Result<EventParams> {
    let value = toml::Value::Table(table);
    let ctx = |e: toml::de::Error| {
        Error::Scenario(format!("event {index} ({kind}): bad params: {e}"))
    };
    Ok(match kind {
        EventKind::Drift => EventParams::Drift(value.try_into().map_err(ctx)?),
        EventKind::MainsTone => EventParams::MainsTone(value.try_into().map_err(ctx)?),
        EventKind::Burst => EventParams::Burst(value.try_into().map_err(ctx)?),
        EventKind::Flutter => EventParams::Flutter(value.try_into().map_err(ctx)?),
        EventKind::Break => EventParams::Break(value.try_into().map_err(ctx)?),
    })
}

fn params_to_table(params: &EventParams) -> toml::Table {
    let value = match params {
        EventParams::Drift(p) => toml::Value::try_from(p),
        EventParams::MainsTone(p) => toml::Value::try_from(p),
        EventParams::Burst(p) => toml::Value::try_from(p),
        EventParams::Flutter(p) => toml::Value::try_from(p),
        EventParams::Break(p) => toml::Value::try_from(p),
    };
    match value.expect("params serialize") {
        toml::Value::Table(t) => t,
        _ => unreachable!("params are structs"),
    }
}

/// Parses and validates a scenario document. Pure: the same text always
/// yields the same script.
pub fn parse_scenario(text: &str) -> Result<EventScript> {
    let doc: ScenarioDoc =
        toml::from_str(text).map_err(|e| Error::Scenario(format!("parse error: {e}")))?;
    let mut events = Vec::with_capacity(doc.events.len());
    for (i, ev) in doc.events.into_iter().enumerate() {
        events.push(ChannelEvent {
            start_s: ev.start_s,
            duration_s: ev.duration_s,
            params: params_from_table(i, ev.kind, ev.params)?,
        });
    }
    let script = EventScript {
        seed: doc.seed,
        total_duration_s: doc.total_duration_s,
        events,
    };
    let violations = validate(&script);
    if !violations.is_empty() {
        let msgs: Vec<String> = violations.iter().map(|v| v.to_string()).collect();
        return Err(Error::Scenario(msgs.join("; ")));
    }
    Ok(script)
}

/// Canonical text form; `parse -> serialize -> parse` is the identity.
pub fn serialize_scenario(script: &EventScript) -> String {
    let doc = ScenarioDoc {
        seed: script.seed,
        total_duration_s: script.total_duration_s,
        events: script
            .events
            .iter()
            .map(|e| EventDoc {
                kind: e.kind(),
                start_s: e.start_s,
                duration_s: e.duration_s,
                params: params_to_table(&e.params),
            })
            .collect(),
    };
    toml::to_string_pretty(&doc).expect("scenario serialize")
}

fn finite_nonneg(v: &mut Vec<Violation>, index: usize, name: &str, value: f64) {
    if !value.is_finite() || value < 0.0 {
        v.push(Violation {
            event_index: Some(index),
            message: format!("{name} must be finite and non-negative, got {value}"),
        });
    }
}

/// Checks every script and event invariant; returns all violations instead
/// of failing on the first one.
pub fn validate(script: &EventScript) -> Vec<Violation> {
    let mut v = Vec::new();
    if !script.total_duration_s.is_finite() || script.total_duration_s <= 0.0 {
        v.push(Violation {
            event_index: None,
            message: format!(
                "total_duration_s must be finite and positive, got {}",
                script.total_duration_s
            ),
        });
    }
    let mut break_count = 0usize;
    let mut break_completion = f64::INFINITY;
    for (i, e) in script.events.iter().enumerate() {
        if !e.start_s.is_finite() || e.start_s < 0.0 {
            v.push(Violation {
                event_index: Some(i),
                message: format!("start_s must be >= 0, got {}", e.start_s),
            });
        }
        let infinite_ok = matches!(e.kind(), EventKind::Drift | EventKind::MainsTone);
        if e.duration_s.is_nan() || e.duration_s <= 0.0 {
            v.push(Violation {
                event_index: Some(i),
                message: format!("duration_s must be positive, got {}", e.duration_s),
            });
        } else if e.duration_s.is_infinite() && !infinite_ok {
            v.push(Violation {
                event_index: Some(i),
                message: format!("{} events require a finite duration_s", e.kind()),
            });
        } else if e.duration_s.is_finite()
            && script.total_duration_s.is_finite()
            && e.end_s() > script.total_duration_s + 1e-9
        {
            v.push(Violation {
                event_index: Some(i),
                message: format!(
                    "event ends at {} s, beyond total_duration_s = {} s",
                    e.end_s(),
                    script.total_duration_s
                ),
            });
        }
        match &e.params {
            EventParams::Drift(p) => {
                finite_nonneg(&mut v, i, "bandwidth_hz", p.bandwidth_hz);
                finite_nonneg(&mut v, i, "rate_rms_rad_s", p.rate_rms_rad_s);
            }
            EventParams::MainsTone(p) => {
                finite_nonneg(&mut v, i, "fundamental_hz", p.fundamental_hz);
                for (h, a) in p.harmonic_peaks_rad.iter().enumerate() {
                    finite_nonneg(&mut v, i, &format!("harmonic_peaks_rad[{h}]"), *a);
                }
            }
            EventParams::Burst(p) => {
                finite_nonneg(&mut v, i, "peak_rate_rad_s", p.peak_rate_rad_s);
                finite_nonneg(&mut v, i, "envelope_width_s", p.envelope_width_s);
                finite_nonneg(&mut v, i, "repeat_period_s", p.repeat_period_s);
                if p.envelope_width_s == 0.0 {
                    v.push(Violation {
                        event_index: Some(i),
                        message: "envelope_width_s must be positive".into(),
                    });
                }
                if p.repeat_count == 0 {
                    v.push(Violation {
                        event_index: Some(i),
                        message: "repeat_count must be >= 1".into(),
                    });
                }
                if p.repeat_count > 1 && p.repeat_period_s == 0.0 {
                    v.push(Violation {
                        event_index: Some(i),
                        message: "repeat_period_s must be positive when repeat_count > 1".into(),
                    });
                }
                if e.duration_s.is_finite()
                    && p.repeat_period_s.is_finite()
                    && (p.repeat_count.saturating_sub(1)) as f64 * p.repeat_period_s
                        > e.duration_s + 1e-9
                {
                    v.push(Violation {
                        event_index: Some(i),
                        message: "duration_s does not cover all burst repetitions".into(),
                    });
                }
            }
            EventParams::Flutter(p) => {
                finite_nonneg(&mut v, i, "rate_rms_rad_s", p.rate_rms_rad_s);
                finite_nonneg(&mut v, i, "bandwidth_hz", p.bandwidth_hz);
            }
            EventParams::Break(p) => {
                break_count += 1;
                finite_nonneg(&mut v, i, "ramp_s", p.ramp_s);
                if !p.post_break_power_db.is_finite() {
                    v.push(Violation {
                        event_index: Some(i),
                        message: "post_break_power_db must be finite".into(),
                    });
                }
                if p.ramp_s.is_finite() && e.duration_s.is_finite() && p.ramp_s > e.duration_s {
                    v.push(Violation {
                        event_index: Some(i),
                        message: "ramp_s exceeds duration_s".into(),
                    });
                }
                break_completion = break_completion.min(e.start_s + p.ramp_s);
            }
        }
    }
    if break_count > 1 {
        v.push(Violation {
            event_index: None,
            message: "multiple break events".into(),
        });
    }
    if break_count == 1 {
        for (i, e) in script.events.iter().enumerate() {
            if e.start_s > break_completion + 1e-9 {
                v.push(Violation {
                    event_index: Some(i),
                    message: format!(
                        "event starts at {} s, after the break completes at {} s",
                        e.start_s, break_completion
                    ),
                });
            }
        }
    }
    if script
        .events
        .windows(2)
        .any(|w| w[0].start_s > w[1].start_s)
    {
        v.push(Violation {
            event_index: None,
            message: "events not sorted by start_s".into(),
        });
    }
    v
}

/// Scripted break onset of the `break-demo` preset, seconds.
pub const BREAK_DEMO_ONSET_S: f64 = 1180.0;
/// Scripted break ramp of the `break-demo` preset, seconds.
pub const BREAK_DEMO_RAMP_S: f64 = 2.0;

fn drift_event() -> ChannelEvent {
    ChannelEvent {
        start_s: 0.0,
        duration_s: f64::INFINITY,
        params: EventParams::Drift(DriftParams {
            bandwidth_hz: 1.0,
            rate_rms_rad_s: 0.05,
        }),
    }
}

fn mains_event() -> ChannelEvent {
    // 50 Hz fundamental with decaying harmonics at 100/150 Hz. The absolute
    // peak rotation on the deployed link is not known; 0.05 rad is a default.
    ChannelEvent {
        start_s: 0.0,
        duration_s: f64::INFINITY,
        params: EventParams::MainsTone(MainsParams {
            fundamental_hz: 50.0,
            harmonic_peaks_rad: vec![0.05, 0.05 / 3.0, 0.05 / 5.0],
        }),
    }
}

/// Built-in scenario presets: `baseline`, `break-demo`, `mains-only`.
pub fn builtin_preset(name: &str) -> Result<EventScript> {
    let script = match name {
        // Quiet long-haul link: slow environmental drift plus the mains tone.
        "baseline" => EventScript {
            seed: 19,
            total_duration_s: 7200.0,
            events: vec![drift_event(), mains_event()],
        },
        // Only the 50 Hz tone family; used for spectral calibration.
        "mains-only" => EventScript {
            seed: 3,
            total_duration_s: 60.0,
            events: vec![mains_event()],
        },
        // Break timeline at the reported scale: impulsive precursors roughly
        // 10 s apart starting 7 minutes before the break, a ~15 s flutter
        // around 6 minutes before, then a 2 s wideband ramp and signal loss.
        "break-demo" => {
            let t_break = BREAK_DEMO_ONSET_S;
            EventScript {
                seed: 7,
                total_duration_s: 1200.0,
                events: vec![
                    drift_event(),
                    mains_event(),
                    ChannelEvent {
                        start_s: t_break - 420.0,
                        duration_s: 115.0,
                        params: EventParams::Burst(BurstParams {
                            peak_rate_rad_s: 25.0,
                            envelope_width_s: 0.02,
                            repeat_period_s: 10.0,
                            repeat_count: 12,
                        }),
                    },
                    ChannelEvent {
                        start_s: t_break - 367.5,
                        duration_s: 15.0,
                        params: EventParams::Flutter(FlutterParams {
                            rate_rms_rad_s: 2.0,
                            bandwidth_hz: 20.0,
                        }),
                    },
                    ChannelEvent {
                        start_s: t_break,
                        duration_s: BREAK_DEMO_RAMP_S,
                        params: EventParams::Break(BreakParams {
                            ramp_s: BREAK_DEMO_RAMP_S,
                            post_break_power_db: -40.0,
                        }),
                    },
                ],
            }
        }
        other => {
            return Err(Error::Scenario(format!(
                "unknown preset '{other}' (expected baseline, break-demo, or mains-only)"
            )))
        }
    };
    debug_assert!(validate(&script).is_empty());
    Ok(script)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_document_parses() {
        let text = r#"
seed = 1
total_duration_s = 100.0

[[events]]
kind = "drift"
start_s = 0.0
[events.params]
bandwidth_hz = 1.0
rate_rms_rad_s = 0.05
"#;
        let script = parse_scenario(text).unwrap();
        assert_eq!(script.events.len(), 1);
        assert!(script.events[0].duration_s.is_infinite());
        assert!(script.break_onset_s().is_none());
    }

    #[test]
    fn presets_validate_clean() {
        for name in ["baseline", "break-demo", "mains-only"] {
            let script = builtin_preset(name).unwrap();
            assert!(validate(&script).is_empty(), "{name} has violations");
        }
        assert!(builtin_preset("nosuch").is_err());
    }

    #[test]
    fn break_demo_timeline_matches_reported_phenomenology() {
        let script = builtin_preset("break-demo").unwrap();
        let t_break = script.break_onset_s().unwrap();
        let bursts = script
            .events
            .iter()
            .find(|e| e.kind() == EventKind::Burst)
            .unwrap();
        // Impulsive precursors confined to [T-420, T-300].
        assert!(bursts.start_s >= t_break - 420.0);
        if let EventParams::Burst(p) = &bursts.params {
            let last = bursts.start_s + (p.repeat_count - 1) as f64 * p.repeat_period_s;
            assert!(last <= t_break - 300.0);
        }
        let flutter = script
            .events
            .iter()
            .find(|e| e.kind() == EventKind::Flutter)
            .unwrap();
        assert_eq!(flutter.duration_s, 15.0);
        assert!((flutter.start_s + 7.5 - (t_break - 360.0)).abs() < 1.0);
    }

    #[test]
    fn mains_only_has_three_tones_and_nothing_else() {
        let script = builtin_preset("mains-only").unwrap();
        assert_eq!(script.events.len(), 1);
        match &script.events[0].params {
            EventParams::MainsTone(p) => {
                assert_eq!(p.fundamental_hz, 50.0);
                assert_eq!(p.harmonic_peaks_rad.len(), 3);
            }
            other => panic!("unexpected params {other:?}"),
        }
    }

    #[test]
    fn baseline_has_no_disruptive_events() {
        let script = builtin_preset("baseline").unwrap();
        assert!(script.events.iter().all(|e| matches!(
            e.kind(),
            EventKind::Drift | EventKind::MainsTone
        )));
    }

    #[test]
    fn two_breaks_rejected() {
        let mut script = builtin_preset("break-demo").unwrap();
        let brk = script.events.last().unwrap().clone();
        script.events.push(brk);
        let v = validate(&script);
        assert!(v.iter().any(|x| x.message.contains("multiple break")));
        let text = serialize_scenario(&script);
        let err = parse_scenario(&text).unwrap_err();
        assert!(err.to_string().contains("multiple break"));
    }

    #[test]
    fn negative_start_names_event_index() {
        let mut script = builtin_preset("baseline").unwrap();
        script.events[1].start_s = -1.0;
        let v = validate(&script);
        assert!(v.iter().any(|x| x.event_index == Some(1)));
    }

    #[test]
    fn unsorted_events_flagged() {
        let mut script = builtin_preset("baseline").unwrap();
        script.events[0].start_s = 5.0;
        script.events[0].duration_s = 10.0;
        let v = validate(&script);
        assert!(v.iter().any(|x| x.message.contains("not sorted")));
    }

    #[test]
    fn event_after_break_completion_flagged() {
        let mut script = builtin_preset("break-demo").unwrap();
        script.events.push(ChannelEvent {
            start_s: 1195.0,
            duration_s: 1.0,
            params: EventParams::Burst(BurstParams {
                peak_rate_rad_s: 1.0,
                envelope_width_s: 0.01,
                repeat_period_s: 1.0,
                repeat_count: 1,
            }),
        });
        let v = validate(&script);
        assert!(v.iter().any(|x| x.message.contains("after the break")));
    }

    #[test]
    fn parse_serialize_roundtrip_on_presets() {
        for name in ["baseline", "break-demo", "mains-only"] {
            let script = builtin_preset(name).unwrap();
            let text = serialize_scenario(&script);
            let reparsed = parse_scenario(&text).unwrap();
            assert_eq!(script, reparsed, "roundtrip mismatch for {name}");
            // Canonical form is a fixed point.
            assert_eq!(text, serialize_scenario(&reparsed));
        }
    }

    #[test]
    fn infinite_duration_survives_roundtrip() {
        let script = builtin_preset("baseline").unwrap();
        let text = serialize_scenario(&script);
        assert!(text.contains("inf"));
        let reparsed = parse_scenario(&text).unwrap();
        assert!(reparsed.events[0].duration_s.is_infinite());
    }

    #[test]
    fn bad_params_report_kind_and_index() {
        let text = r#"
seed = 1
total_duration_s = 10.0

[[events]]
kind = "burst"
start_s = 0.0
duration_s = 5.0
[events.params]
peak_rate_rad_s = 1.0
"#;
        let err = parse_scenario(text).unwrap_err().to_string();
        assert!(err.contains("event 0"), "{err}");
        assert!(err.contains("burst"), "{err}");
    }
}
