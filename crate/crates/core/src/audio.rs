//! Waveform plumbing: WAV I/O, mono mixdown, sample-rate conversion, and
//! the 16 kHz mono normal form every downstream consumer expects.
//!
//! The resampler is a windowed-sinc interpolator, per-output-sample
//! normalized so amplitude stays flat at clip edges and for non-integer
//! rate ratios. Converting 16 kHz input to 16 kHz is the identity.

use std::path::Path;

use thiserror::Error;

/// Sample rate of the normal form, Hz.
pub const TARGET_SAMPLE_RATE: u32 = 16_000;

/// Half-width of the resampling kernel, in samples at the lower rate.
const KERNEL_HALF_WIDTH: f64 = 24.0;
/// Low-pass rolloff as a fraction of the (lower) Nyquist frequency.
const KERNEL_ROLLOFF: f64 = 0.9;

#[derive(Debug, Error)]
pub enum AudioError {
    #[error("audio i/o at {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("wav format at {path}: {source}")]
    Wav { path: String, source: hound::Error },
    #[error("waveform is empty")]
    Empty,
    #[error("sample rate must be positive")]
    ZeroRate,
}

/// Possibly multi-channel audio as read from disk or a synthesis backend.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    pub channels: usize,
    pub sample_rate: u32,
    /// Interleaved samples, nominal range [-1, 1].
    pub samples: Vec<f32>,
}

impl AudioBuffer {
    pub fn mono(samples: Vec<f32>, sample_rate: u32) -> Self {
        AudioBuffer {
            channels: 1,
            sample_rate,
            samples,
        }
    }

    pub fn frames(&self) -> usize {
        if self.channels == 0 {
            0
        } else {
            self.samples.len() / self.channels
        }
    }
}

/// Mono audio in the 16 kHz normal form (or on its way there).
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn duration_seconds(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// Read any PCM or float WAV into an interleaved buffer.
pub fn read_wav(path: &Path) -> Result<AudioBuffer, AudioError> {
    let wrap = |source: hound::Error| AudioError::Wav {
        path: path.display().to_string(),
        source,
    };
    let mut reader = hound::WavReader::open(path).map_err(wrap)?;
    let spec = reader.spec();
    let samples: Vec<f32> = match spec.sample_format {
        hound::SampleFormat::Float => reader
            .samples::<f32>()
            .collect::<Result<_, _>>()
            .map_err(wrap)?,
        hound::SampleFormat::Int => {
            let scale = 1.0 / (1i64 << (spec.bits_per_sample - 1)) as f32;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f32 * scale))
                .collect::<Result<_, _>>()
                .map_err(wrap)?
        }
    };
    Ok(AudioBuffer {
        channels: spec.channels as usize,
        sample_rate: spec.sample_rate,
        samples,
    })
}

/// Write mono samples as 16-bit PCM.
pub fn write_wav_mono16(path: &Path, samples: &[f32], sample_rate: u32) -> Result<(), AudioError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|source| AudioError::Io {
            path: path.display().to_string(),
            source,
        })?;
    }
    let wrap = |source: hound::Error| AudioError::Wav {
        path: path.display().to_string(),
        source,
    };
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(wrap)?;
    for &s in samples {
        let clamped = s.clamp(-1.0, 1.0);
        writer
            .write_sample((clamped * 32767.0).round() as i16)
            .map_err(wrap)?;
    }
    writer.finalize().map_err(wrap)
}

/// Average interleaved channels down to one.
pub fn to_mono(buf: &AudioBuffer) -> Vec<f32> {
    if buf.channels <= 1 {
        return buf.samples.clone();
    }
    let frames = buf.frames();
    let mut out = Vec::with_capacity(frames);
    for i in 0..frames {
        let start = i * buf.channels;
        let sum: f32 = buf.samples[start..start + buf.channels].iter().sum();
        out.push(sum / buf.channels as f32);
    }
    out
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

/// Windowed-sinc rate conversion. Same-rate input is returned unchanged.
pub fn resample(input: &[f32], from: u32, to: u32) -> Result<Vec<f32>, AudioError> {
    if from == 0 || to == 0 {
        return Err(AudioError::ZeroRate);
    }
    if from == to || input.is_empty() {
        return Ok(input.to_vec());
    }
    let ratio = to as f64 / from as f64;
    let out_len = ((input.len() as f64) * ratio).round().max(1.0) as usize;
    // cutoff sits below the lower of the two Nyquist frequencies,
    // expressed in cycles per *input* sample
    let cutoff = 0.5 * KERNEL_ROLLOFF * ratio.min(1.0);
    // widen the kernel when downsampling so it still spans enough input
    let width = KERNEL_HALF_WIDTH / ratio.min(1.0);
    let n = input.len() as isize;
    let mut out = Vec::with_capacity(out_len);
    for j in 0..out_len {
        let center = j as f64 / ratio;
        let lo = ((center - width).ceil() as isize).max(0);
        let hi = ((center + width).floor() as isize).min(n - 1);
        let mut acc = 0.0f64;
        let mut wsum = 0.0f64;
        for k in lo..=hi {
            let t = k as f64 - center;
            let w = sinc(2.0 * cutoff * t) * hann(t / width);
            acc += w * input[k as usize] as f64;
            wsum += w;
        }
        out.push(if wsum.abs() > 1e-12 {
            (acc / wsum) as f32
        } else {
            0.0
        });
    }
    Ok(out)
}

fn hann(u: f64) -> f64 {
    if u.abs() >= 1.0 {
        0.0
    } else {
        0.5 * (1.0 + (std::f64::consts::PI * u).cos())
    }
}

/// Clamp samples into [-1, 1] in place.
pub fn clip_in_place(samples: &mut [f32]) {
    for s in samples.iter_mut() {
        *s = s.clamp(-1.0, 1.0);
    }
}

/// Convert arbitrary input audio to the 16 kHz mono clipped normal form,
/// optionally truncating to `cap_seconds`.
pub fn standardize(buf: &AudioBuffer, cap_seconds: Option<f64>) -> Result<Waveform, AudioError> {
    if buf.samples.is_empty() {
        return Err(AudioError::Empty);
    }
    if buf.sample_rate == 0 {
        return Err(AudioError::ZeroRate);
    }
    let mono = to_mono(buf);
    let mut samples = resample(&mono, buf.sample_rate, TARGET_SAMPLE_RATE)?;
    clip_in_place(&mut samples);
    if let Some(cap) = cap_seconds {
        let max_len = (cap * TARGET_SAMPLE_RATE as f64).round() as usize;
        samples.truncate(max_len.max(1));
    }
    if samples.is_empty() {
        return Err(AudioError::Empty);
    }
    Ok(Waveform {
        samples,
        sample_rate: TARGET_SAMPLE_RATE,
    })
}
