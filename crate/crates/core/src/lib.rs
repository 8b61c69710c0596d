//! Polarization sensing over coherent optical links, in software.
//!
//! The crate models the full sensing chain of a coherent transceiver used as a
//! fiber sensor: scripted channel dynamics ([`scenario`]), a time-varying Jones
//! channel with ASE noise ([`channel`]), dual-polarization QPSK waveform
//! synthesis ([`waveform`]), an adaptive butterfly equalizer whose internal
//! state is the sensing observable ([`equalizer`]), Stokes-space conversion and
//! Poincaré geometry ([`sop`]), mains notching and spectrogram features
//! ([`spectral`]), and a robust baseline detector that classifies precursor
//! and break events ([`detect`]). File formats and the CLI live in [`fileio`].
//!
//! Two simulation modes exist:
//! * `sop-direct`: evaluate the channel's Jones matrix at the SOP sampling
//!   rate and convert to Stokes directly (fast, exact ground truth).
//! * `full-stack`: synthesize the waveform, pass it through the channel, and
//!   recover the SOP from the equalizer taps (slow, end-to-end).

pub mod channel;
pub mod detect;
pub mod equalizer;
pub mod fileio;
pub mod plot;
pub mod scenario;
pub mod sop;
pub mod spectral;
pub mod waveform;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("scenario: {0}")]
    Scenario(String),
    #[error("channel: {0}")]
    Channel(String),
    #[error("waveform: {0}")]
    Waveform(String),
    #[error("equalizer: {0}")]
    Equalizer(String),
    #[error("sop: {0}")]
    Sop(String),
    #[error("spectral: {0}")]
    Spectral(String),
    #[error("detect: {0}")]
    Detect(String),
    #[error("format: {0}")]
    Format(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
