//! Command-line front end: scenario simulation, spectral analysis, anomaly
//! detection, and the end-to-end cable-break demonstration.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use polsense::channel::ChannelModel;
use polsense::detect::{detect_from_script, run_detection, DetectConfig, DetectionReport};
use polsense::equalizer::{full_stack_sop_series, FullStackConfig};
use polsense::fileio::{
    read_baseline_json, read_sop_binary, read_sop_csv, sha256_hex, write_alarms_csv,
    write_baseline_json, write_scores_csv, write_sop_binary, write_sop_csv,
    write_spectrogram_csv, RunManifest,
};
use polsense::plot::{render_line_plot, render_spectrogram, Marker, Trace};
use polsense::scenario::{builtin_preset, parse_scenario, serialize_scenario, EventScript};
use polsense::sop::{SopSeries, LAUNCH_X};
use polsense::spectral::{
    apply_notches, downsample_decimate, stft_spectrogram, NotchSpec, Spectrogram,
};
use polsense::{Error, Result};

/// Environment variable giving the default output root directory.
const OUT_ROOT_ENV: &str = "POLSENSE_OUT_ROOT";

#[derive(Parser)]
#[command(
    name = "polsense",
    about = "Polarization sensing on coherent optical links: simulate channels, \
             analyze SOP records, and detect cable-break precursors",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario and write its state-of-polarization record
    Simulate(SimulateArgs),
    /// Compute spectrograms of a SOP record
    Analyze(AnalyzeArgs),
    /// Run anomaly detection on a SOP record
    Detect(DetectArgs),
    /// End-to-end cable-break demonstration (simulate + analyze + detect)
    DemoBreak(DemoBreakArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum SimMode {
    /// evaluate the channel Jones matrix directly at the SOP rate
    SopDirect,
    /// run the full transceiver chain (waveform, noise, CMA equalizer)
    FullStack,
}

#[derive(Clone, Copy, ValueEnum)]
enum OutFormat {
    Bin,
    Csv,
    Both,
}

#[derive(Args)]
struct SimulateArgs {
    /// scenario TOML file (mutually exclusive with --preset)
    #[arg(long, conflicts_with = "preset")]
    scenario: Option<PathBuf>,
    /// built-in scenario: baseline, mains-only, or break-demo
    #[arg(long)]
    preset: Option<String>,
    #[arg(long, value_enum, default_value = "sop-direct")]
    mode: SimMode,
    /// SOP sampling period in seconds (sop-direct mode)
    #[arg(long, default_value_t = 1e-4)]
    period_s: f64,
    #[arg(long, value_enum, default_value = "bin")]
    format: OutFormat,
    /// output directory (default: $POLSENSE_OUT_ROOT or the working dir)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// SOP record (.sop binary or .csv)
    #[arg(long)]
    input: PathBuf,
    /// apply the 50/100/150 Hz mains notches before the spectrogram
    #[arg(long)]
    notch: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DetectArgs {
    /// SOP record (.sop binary or .csv)
    #[arg(long)]
    input: PathBuf,
    /// previously saved baseline JSON; fitted from the record when absent
    #[arg(long)]
    baseline: Option<PathBuf>,
    /// leading fraction of frames used to fit the baseline
    #[arg(long, default_value_t = 0.25)]
    train_frac: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DemoBreakArgs {
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => cmd_simulate(&a),
        Command::Analyze(a) => cmd_analyze(&a),
        Command::Detect(a) => cmd_detect(&a),
        Command::DemoBreak(a) => cmd_demo_break(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Scenario(_) | Error::Format(_) => ExitCode::from(2),
                _ => ExitCode::from(3),
            }
        }
    }
}

fn out_dir(flag: &Option<PathBuf>) -> Result<PathBuf> {
    let dir = flag.clone().unwrap_or_else(|| {
        std::env::var_os(OUT_ROOT_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("."))
    });
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn load_script(scenario: &Option<PathBuf>, preset: &Option<String>) -> Result<EventScript> {
    match (scenario, preset) {
        (Some(path), None) => parse_scenario(&std::fs::read_to_string(path)?),
        (None, Some(name)) => builtin_preset(name),
        _ => Err(Error::Scenario(
            "exactly one of --scenario or --preset is required".into(),
        )),
    }
}

fn load_series(path: &Path) -> Result<SopSeries> {
    if path.extension().and_then(|e| e.to_str()) == Some("csv") {
        read_sop_csv(path)
    } else {
        Ok(read_sop_binary(path)?.series)
    }
}

/// Normalized component traces at a plot-friendly rate, with times.
fn plot_traces(series: &SopSeries) -> Result<(Vec<f64>, [Vec<f64>; 3])> {
    let traces = series.valid_prefix_traces();
    // keep roughly 100k points at most
    let factor = (traces[0].len() / 100_000).max(1);
    let mut out = Vec::new();
    for t in &traces {
        out.push(downsample_decimate(t, factor)?);
    }
    let times = (0..out[0].len())
        .map(|k| series.start_t_s + (k * factor) as f64 * series.sample_period_s)
        .collect();
    let [s1, s2, s3] = <[Vec<f64>; 3]>::try_from(out).unwrap();
    Ok((times, [s1, s2, s3]))
}

fn write_sop_plot(path: &Path, series: &SopSeries, markers: &[Marker]) -> Result<()> {
    let (times, [s1, s2, s3]) = plot_traces(series)?;
    let svg = render_line_plot(
        "Normalized state of polarization",
        "time (s)",
        "component",
        &[
            Trace { label: "s1".into(), x: times.clone(), y: s1 },
            Trace { label: "s2".into(), x: times.clone(), y: s2 },
            Trace { label: "s3".into(), x: times, y: s3 },
        ],
        markers,
    )?;
    std::fs::write(path, svg)?;
    Ok(())
}

fn cmd_simulate(args: &SimulateArgs) -> Result<()> {
    let dir = out_dir(&args.out)?;
    let script = load_script(&args.scenario, &args.preset)?;
    let canonical = serialize_scenario(&script);
    let scenario_path = dir.join("scenario.toml");
    std::fs::write(&scenario_path, &canonical)?;
    let hash = sha256_hex(canonical.as_bytes());
    let model = ChannelModel::compile(&script)?;
    let series = match args.mode {
        SimMode::SopDirect => model.sop_direct_series(args.period_s, LAUNCH_X)?,
        SimMode::FullStack => full_stack_sop_series(&model, &FullStackConfig::default())?,
    };
    let mut manifest = RunManifest::new("simulate");
    manifest.scenario_sha256 = Some(hash.clone());
    manifest.seed = Some(script.seed);
    manifest.add_output(&scenario_path)?;
    if matches!(args.format, OutFormat::Bin | OutFormat::Both) {
        let p = dir.join("sop.bin");
        write_sop_binary(&p, &series, LAUNCH_X, Some(&hash))?;
        manifest.add_output(&p)?;
    }
    if matches!(args.format, OutFormat::Csv | OutFormat::Both) {
        let p = dir.join("sop.csv");
        write_sop_csv(&p, &series)?;
        manifest.add_output(&p)?;
    }
    let plot_path = dir.join("sop.svg");
    write_sop_plot(&plot_path, &series, &[])?;
    manifest.add_output(&plot_path)?;
    manifest.write(&dir.join("manifest.json"))?;
    println!(
        "simulated {} samples over {:.1} s into {}",
        series.samples.len(),
        series.samples.len() as f64 * series.sample_period_s,
        dir.display()
    );
    Ok(())
}

/// Decimates the record's component traces to 1 kHz and returns their
/// spectrograms (optionally after mains notching).
fn component_spectrograms(series: &SopSeries, notch: bool) -> Result<Vec<Spectrogram>> {
    use polsense::detect::{DETECT_HOP, DETECT_RATE_HZ, DETECT_WINDOW};
    let fs_in = 1.0 / series.sample_period_s;
    let factor = (fs_in / DETECT_RATE_HZ).round().max(1.0) as usize;
    let spec = NotchSpec::mains(DETECT_RATE_HZ);
    let mut out = Vec::new();
    for trace in &series.valid_prefix_traces() {
        let mut dec = downsample_decimate(trace, factor)?;
        if notch {
            dec = apply_notches(&dec, &spec)?;
        }
        out.push(stft_spectrogram(
            &dec,
            DETECT_RATE_HZ,
            DETECT_WINDOW,
            DETECT_HOP,
        )?);
    }
    Ok(out)
}

fn cmd_analyze(args: &AnalyzeArgs) -> Result<()> {
    let dir = out_dir(&args.out)?;
    let series = load_series(&args.input)?;
    let specs = component_spectrograms(&series, args.notch)?;
    let mut manifest = RunManifest::new(if args.notch { "analyze --notch" } else { "analyze" });
    for (spec, name) in specs.iter().zip(["s1", "s2", "s3"]) {
        let csv = dir.join(format!("spectrogram_{name}.csv"));
        write_spectrogram_csv(&csv, spec)?;
        manifest.add_output(&csv)?;
        let svg = dir.join(format!("spectrogram_{name}.svg"));
        std::fs::write(
            &svg,
            render_spectrogram(&format!("{name} spectrogram (dB)"), spec, 400, 256)?,
        )?;
        manifest.add_output(&svg)?;
    }
    manifest.write(&dir.join("manifest.json"))?;
    println!(
        "wrote {} spectrogram frames per component to {}",
        specs[0].magnitude_db.len(),
        dir.display()
    );
    Ok(())
}

fn report_outputs(dir: &Path, report: &DetectionReport, manifest: &mut RunManifest) -> Result<()> {
    let alarms_path = dir.join("alarms.csv");
    write_alarms_csv(&alarms_path, &report.alarms)?;
    manifest.add_output(&alarms_path)?;
    let scores_path = dir.join("scores.csv");
    write_scores_csv(&scores_path, &report.scores)?;
    manifest.add_output(&scores_path)?;
    let baseline_path = dir.join("baseline.json");
    write_baseline_json(&baseline_path, &report.baseline)?;
    manifest.add_output(&baseline_path)?;
    let markers: Vec<Marker> = report
        .alarms
        .iter()
        .map(|a| Marker {
            x: a.t_s,
            label: a.class.to_string(),
        })
        .collect();
    let svg = render_line_plot(
        "Fused anomaly score",
        "time (s)",
        "robust z",
        &[Trace {
            label: "score".into(),
            x: report.scores.iter().map(|s| s.t_s).collect(),
            y: report.scores.iter().map(|s| s.score).collect(),
        }],
        &markers,
    )?;
    let svg_path = dir.join("scores.svg");
    std::fs::write(&svg_path, svg)?;
    manifest.add_output(&svg_path)?;
    Ok(())
}

fn print_alarms(report: &DetectionReport) {
    if report.alarms.is_empty() {
        println!("no alarms");
    }
    for a in &report.alarms {
        println!(
            "t={:<10.3} class={:<20} band={:<5} score={:.1} run={:.2} s",
            a.t_s, a.class.to_string(), a.band, a.score, a.run_length_s
        );
    }
}

fn cmd_detect(args: &DetectArgs) -> Result<()> {
    let dir = out_dir(&args.out)?;
    let series = load_series(&args.input)?;
    let baseline = match &args.baseline {
        Some(p) => Some(read_baseline_json(p)?),
        None => None,
    };
    let report = run_detection(
        &series,
        &DetectConfig::default(),
        args.train_frac,
        baseline,
        Some(0.5),
    )?;
    let mut manifest = RunManifest::new("detect");
    report_outputs(&dir, &report, &mut manifest)?;
    manifest.write(&dir.join("manifest.json"))?;
    print_alarms(&report);
    Ok(())
}

fn cmd_demo_break(args: &DemoBreakArgs) -> Result<()> {
    let dir = out_dir(&args.out)?;
    let script = builtin_preset("break-demo")?;
    let canonical = serialize_scenario(&script);
    let scenario_path = dir.join("scenario.toml");
    std::fs::write(&scenario_path, &canonical)?;
    let hash = sha256_hex(canonical.as_bytes());
    println!("simulating the break-demo scenario ({} s)...", script.total_duration_s);
    let model = ChannelModel::compile(&script)?;
    let series = model.sop_direct_series(1e-4, LAUNCH_X)?;
    let sop_path = dir.join("sop.bin");
    write_sop_binary(&sop_path, &series, LAUNCH_X, Some(&hash))?;
    println!("analyzing...");
    let specs = component_spectrograms(&series, true)?;
    let mut manifest = RunManifest::new("demo-break");
    manifest.scenario_sha256 = Some(hash);
    manifest.seed = Some(script.seed);
    manifest.add_output(&scenario_path)?;
    manifest.add_output(&sop_path)?;
    for (spec, name) in specs.iter().zip(["s1", "s2", "s3"]) {
        let csv = dir.join(format!("spectrogram_{name}.csv"));
        write_spectrogram_csv(&csv, spec)?;
        manifest.add_output(&csv)?;
        let svg = dir.join(format!("spectrogram_{name}.svg"));
        std::fs::write(
            &svg,
            render_spectrogram(&format!("{name} spectrogram (dB)"), spec, 400, 256)?,
        )?;
        manifest.add_output(&svg)?;
    }
    println!("detecting...");
    let report = detect_from_script(&script, &series, &DetectConfig::default())?;
    report_outputs(&dir, &report, &mut manifest)?;
    let markers: Vec<Marker> = report
        .alarms
        .iter()
        .map(|a| Marker {
            x: a.t_s,
            label: a.class.to_string(),
        })
        .collect();
    let sop_svg = dir.join("sop.svg");
    write_sop_plot(&sop_svg, &series, &markers)?;
    manifest.add_output(&sop_svg)?;
    manifest.write(&dir.join("manifest.json"))?;
    print_alarms(&report);
    if let Some(t) = report.los_time_s {
        println!("loss of signal at t={t:.3} s");
    }
    println!("outputs in {}", dir.display());
    Ok(())
}
