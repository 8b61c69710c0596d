//! On-disk formats: binary and CSV SOP records, spectrogram and alarm CSV
//! exports, baselines, and the run manifest.
//!
//! All formats are deterministic: floats are written with Rust's
//! shortest-roundtrip formatting (CSV) or as little-endian IEEE-754 bytes
//! (binary), and the manifest carries no wall-clock timestamps, so repeated
//! runs of the same command produce byte-identical files.

use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::detect::{Alarm, Baseline, ScoredFrame};
use crate::sop::{SopSample, SopSeries, StokesVector};
use crate::spectral::Spectrogram;
use crate::{Error, Result};

/// Magic bytes opening a binary SOP record.
pub const SOP_MAGIC: &[u8; 4] = b"SOPR";
/// Current binary SOP format version.
pub const SOP_VERSION: u32 = 1;

/// SHA-256 of a byte string, lowercase hex.
pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    let digest = h.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

/// SHA-256 of a file's contents, lowercase hex.
pub fn sha256_file(path: &Path) -> Result<String> {
    let mut f = std::fs::File::open(path)?;
    let mut h = Sha256::new();
    let mut buf = [0u8; 65536];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    let digest = h.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    Ok(out)
}

/// Writes a SOP series as a binary record.
///
/// Layout (all little-endian):
/// - magic `SOPR`, version u32
/// - sample period f64, start time f64
/// - launch Jones vector, 4 f64 (re/im per component)
/// - SHA-256 of the canonical scenario TOML, 32 bytes (zeros if unknown)
/// - sample count u64
/// - per sample: s0, s1, s2, s3 as f64 and a validity byte
pub fn write_sop_binary(
    path: &Path,
    series: &SopSeries,
    launch: crate::sop::JonesVector,
    scenario_sha256: Option<&str>,
) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    w.write_all(SOP_MAGIC)?;
    w.write_all(&SOP_VERSION.to_le_bytes())?;
    w.write_all(&series.sample_period_s.to_le_bytes())?;
    w.write_all(&series.start_t_s.to_le_bytes())?;
    for c in launch {
        w.write_all(&c.re.to_le_bytes())?;
        w.write_all(&c.im.to_le_bytes())?;
    }
    let mut hash = [0u8; 32];
    if let Some(hex) = scenario_sha256 {
        if hex.len() != 64 {
            return Err(Error::Format("scenario hash must be 64 hex chars".into()));
        }
        for (i, chunk) in hex.as_bytes().chunks(2).enumerate() {
            let s = std::str::from_utf8(chunk).map_err(|_| Error::Format("bad hex".into()))?;
            hash[i] =
                u8::from_str_radix(s, 16).map_err(|_| Error::Format("bad hex digit".into()))?;
        }
    }
    w.write_all(&hash)?;
    w.write_all(&(series.samples.len() as u64).to_le_bytes())?;
    for s in &series.samples {
        for v in [s.s.s0, s.s.s1, s.s.s2, s.s.s3] {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&[u8::from(s.valid)])?;
    }
    w.flush()?;
    Ok(())
}

/// Binary SOP record read back from disk.
pub struct SopRecord {
    pub series: SopSeries,
    pub launch: crate::sop::JonesVector,
    /// all-zero when the writer had no scenario hash
    pub scenario_sha256: String,
}

/// Reads a binary SOP record, validating magic, version, and length.
pub fn read_sop_binary(path: &Path) -> Result<SopRecord> {
    let mut r = BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != SOP_MAGIC {
        return Err(Error::Format(format!(
            "{}: not a SOP record (bad magic)",
            path.display()
        )));
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)?;
    let version = u32::from_le_bytes(b4);
    if version != SOP_VERSION {
        return Err(Error::Format(format!(
            "unsupported SOP record version {version}"
        )));
    }
    let mut b8 = [0u8; 8];
    let mut f64le = |r: &mut BufReader<std::fs::File>| -> Result<f64> {
        r.read_exact(&mut b8)?;
        Ok(f64::from_le_bytes(b8))
    };
    let sample_period_s = f64le(&mut r)?;
    let start_t_s = f64le(&mut r)?;
    let mut launch = [num_complex::Complex64::new(0.0, 0.0); 2];
    for c in &mut launch {
        c.re = f64le(&mut r)?;
        c.im = f64le(&mut r)?;
    }
    let mut hash = [0u8; 32];
    r.read_exact(&mut hash)?;
    let mut hex = String::with_capacity(64);
    for b in hash {
        hex.push_str(&format!("{b:02x}"));
    }
    let mut b8c = [0u8; 8];
    r.read_exact(&mut b8c)?;
    let count = u64::from_le_bytes(b8c) as usize;
    let mut samples = Vec::with_capacity(count);
    let mut rec = [0u8; 33];
    for _ in 0..count {
        r.read_exact(&mut rec)?;
        let f = |k: usize| f64::from_le_bytes(rec[8 * k..8 * k + 8].try_into().unwrap());
        samples.push(SopSample {
            s: StokesVector::new(f(0), f(1), f(2), f(3)),
            valid: rec[32] != 0,
        });
    }
    if r.read(&mut [0u8; 1])? != 0 {
        return Err(Error::Format("trailing bytes after SOP record".into()));
    }
    Ok(SopRecord {
        series: SopSeries {
            sample_period_s,
            start_t_s,
            samples,
        },
        launch,
        scenario_sha256: hex,
    })
}

/// Writes a SOP series as CSV (`t_s,s0,s1,s2,s3,valid`). Floats use
/// shortest-roundtrip formatting, so `read_sop_csv` restores them bit-exactly.
pub fn write_sop_csv(path: &Path, series: &SopSeries) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "t_s,s0,s1,s2,s3,valid")?;
    for (k, s) in series.samples.iter().enumerate() {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            series.time_at(k),
            s.s.s0,
            s.s.s1,
            s.s.s2,
            s.s.s3,
            u8::from(s.valid)
        )?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a SOP CSV written by `write_sop_csv`. The sample period is inferred
/// from the first two timestamps (a single-sample file gets period 0).
pub fn read_sop_csv(path: &Path) -> Result<SopSeries> {
    let r = BufReader::new(std::fs::File::open(path)?);
    let mut lines = r.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Format("empty CSV".into()))??;
    if header.trim() != "t_s,s0,s1,s2,s3,valid" {
        return Err(Error::Format(format!("unexpected CSV header: {header}")));
    }
    let mut times = Vec::new();
    let mut samples = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 6 {
            return Err(Error::Format(format!(
                "line {}: expected 6 fields, got {}",
                lineno + 2,
                fields.len()
            )));
        }
        let f = |i: usize| -> Result<f64> {
            fields[i]
                .trim()
                .parse()
                .map_err(|e| Error::Format(format!("line {}: {e}", lineno + 2)))
        };
        times.push(f(0)?);
        samples.push(SopSample {
            s: StokesVector::new(f(1)?, f(2)?, f(3)?, f(4)?),
            valid: fields[5].trim() != "0",
        });
    }
    if samples.is_empty() {
        return Err(Error::Format("CSV has no samples".into()));
    }
    let start_t_s = times[0];
    let sample_period_s = if times.len() > 1 {
        times[1] - times[0]
    } else {
        0.0
    };
    Ok(SopSeries {
        sample_period_s,
        start_t_s,
        samples,
    })
}

/// Writes a spectrogram as CSV: the first row is `t_s` followed by the bin
/// frequencies; each following row is a frame time and its magnitudes in dB.
pub fn write_spectrogram_csv(path: &Path, spec: &Spectrogram) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    write!(w, "t_s")?;
    for f in &spec.freq_bins_hz {
        write!(w, ",{f}")?;
    }
    writeln!(w)?;
    for (t, mags) in spec.frame_times_s.iter().zip(&spec.magnitude_db) {
        write!(w, "{t}")?;
        for m in mags {
            write!(w, ",{m}")?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes alarms as CSV (`t_s,class,band,score,run_length_s`).
pub fn write_alarms_csv(path: &Path, alarms: &[Alarm]) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "t_s,class,band,score,run_length_s")?;
    for a in alarms {
        writeln!(
            w,
            "{},{},{},{},{}",
            a.t_s, a.class, a.band, a.score, a.run_length_s
        )?;
    }
    w.flush()?;
    Ok(())
}

/// Writes fused per-frame scores as CSV (`t_s,score`), for plotting.
pub fn write_scores_csv(path: &Path, scores: &[ScoredFrame]) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "t_s,score")?;
    for s in scores {
        writeln!(w, "{},{}", s.t_s, s.score)?;
    }
    w.flush()?;
    Ok(())
}

/// Saves a baseline as JSON.
pub fn write_baseline_json(path: &Path, baseline: &Baseline) -> Result<()> {
    let json = serde_json::to_string_pretty(baseline)
        .map_err(|e| Error::Format(format!("baseline serialization: {e}")))?;
    std::fs::write(path, json + "\n")?;
    Ok(())
}

/// Loads a baseline JSON.
pub fn read_baseline_json(path: &Path) -> Result<Baseline> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Format(format!("baseline parse: {e}")))
}

/// One output file listed in a run manifest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub sha256: String,
}

/// Record of a completed run: the command, its inputs, and the hashes of
/// every produced file. Deliberately carries no timestamps so that reruns of
/// the same command yield byte-identical manifests.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub scenario_sha256: Option<String>,
    pub seed: Option<u64>,
    pub outputs: Vec<ManifestEntry>,
}

impl RunManifest {
    pub fn new(command: &str) -> Self {
        Self {
            command: command.to_string(),
            scenario_sha256: None,
            seed: None,
            outputs: Vec::new(),
        }
    }

    /// Hashes a produced file and records it. Only the file name is stored,
    /// relative to the manifest's own directory, so runs into different
    /// output directories still produce identical manifests.
    pub fn add_output(&mut self, path: &Path) -> Result<()> {
        let name = path
            .file_name()
            .ok_or_else(|| Error::Format(format!("output path {} has no file name", path.display())))?;
        self.outputs.push(ManifestEntry {
            path: name.to_string_lossy().into_owned(),
            sha256: sha256_file(path)?,
        });
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Format(format!("manifest serialization: {e}")))?;
        std::fs::write(path, json + "\n")?;
        Ok(())
    }
}
