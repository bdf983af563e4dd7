//! Time alignment of two recordings by audio cross-correlation.

use std::path::Path;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyncOptions {
    /// Largest lag searched, in seconds either way.
    pub max_lag_seconds: f64,
    /// Results whose peak ratio falls below this are flagged.
    pub min_confidence: f64,
}

impl Default for SyncOptions {
    fn default() -> Self {
        Self {
            max_lag_seconds: 60.0,
            min_confidence: 1.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyncResult {
    /// `b[n + shift]` lines up with `a[n]`; positive when `b` lags `a`.
    pub shift: i64,
    /// Normalized correlation at the chosen lag.
    pub peak: f64,
    /// Peak over the best correlation outside the main lobe.
    pub confidence: f64,
    pub low_confidence: bool,
}

const SILENCE: f64 = 1e-12;
const MAX_CONFIDENCE: f64 = 1e12;

fn energy(x: &[f32]) -> f64 {
    x.iter().map(|&v| f64::from(v) * f64::from(v)).sum()
}

/// Normalized cross-correlation `r[L] = Σ a[n]·b[n+L] / (‖a‖·‖b‖)` for
/// `L` in `-max_lag..=max_lag`, index `L + max_lag`.
fn cross_correlation(a: &[f32], b: &[f32], max_lag: usize) -> Vec<f64> {
    let n = (a.len() + b.len()).next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let load = |x: &[f32]| -> Vec<Complex<f64>> {
        let mut v: Vec<Complex<f64>> = x.iter().map(|&s| Complex::new(f64::from(s), 0.0)).collect();
        v.resize(n, Complex::new(0.0, 0.0));
        v
    };
    let (mut fa, mut fb) = (load(a), load(b));
    fwd.process(&mut fa);
    fwd.process(&mut fb);
    let mut prod: Vec<Complex<f64>> = fa.iter().zip(&fb).map(|(x, y)| x.conj() * y).collect();
    inv.process(&mut prod);
    let scale = 1.0 / (n as f64 * (energy(a) * energy(b)).sqrt());
    (0..=2 * max_lag)
        .map(|k| {
            let lag = k as i64 - max_lag as i64;
            prod[lag.rem_euclid(n as i64) as usize].re * scale
        })
        .collect()
}

/// Finds the lag maximizing the normalized cross-correlation of `a` and `b`.
///
/// Confidence is the peak divided by the largest correlation outside the
/// peak's main lobe (the monotone descent on both sides). Periodic signals
/// have repeated peaks and score near 1.
pub fn estimate_time_shift(a: &[f32], rate_a: u32, b: &[f32], rate_b: u32, opts: &SyncOptions) -> Result<SyncResult> {
    if rate_a != rate_b || rate_a == 0 {
        return Err(Error::InvalidInput(format!("sample rates differ or are zero: {rate_a} vs {rate_b}")));
    }
    if !(opts.max_lag_seconds > 0.0) {
        return Err(Error::Config("max_lag_seconds must be positive".into()));
    }
    for (name, x) in [("a", a), ("b", b)] {
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("audio {name} has non-finite samples")));
        }
        if energy(x) < SILENCE {
            return Err(Error::SilentAudio(format!("recording {name} has no signal")));
        }
    }
    let longest = a.len().max(b.len()).saturating_sub(1);
    let max_lag = ((opts.max_lag_seconds * f64::from(rate_a)).round() as usize).min(longest);
    let r = cross_correlation(a, b, max_lag);
    // Ties go to the smallest |lag|, then to the positive one, so swapping
    // the inputs negates the result.
    let key = |k: usize| {
        let lag = k as i64 - max_lag as i64;
        (r[k], -lag.abs(), lag)
    };
    let best = (0..r.len())
        .max_by(|&i, &j| {
            let (x, y) = (key(i), key(j));
            x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2))
        })
        .expect("non-empty lag range");
    let (mut lo, mut hi) = (best, best);
    while lo > 0 && r[lo - 1] <= r[lo] {
        lo -= 1;
    }
    while hi + 1 < r.len() && r[hi + 1] <= r[hi] {
        hi += 1;
    }
    let second = r[..lo].iter().chain(&r[hi + 1..]).copied().fold(f64::NEG_INFINITY, f64::max);
    let peak = r[best];
    let confidence = if second > SILENCE {
        (peak / second).min(MAX_CONFIDENCE)
    } else {
        MAX_CONFIDENCE
    };
    Ok(SyncResult {
        shift: best as i64 - max_lag as i64,
        peak,
        confidence,
        low_confidence: confidence < opts.min_confidence,
    })
}

/// Reads a mono PCM or float WAV file as samples in `[-1, 1]`.
pub fn read_wav(path: &Path) -> Result<(Vec<f32>, u32)> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let bytes = std::fs::read(path).map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))?;
    decode_wav(&bytes).map_err(|e| match e {
        Error::InvalidInput(m) => Error::InvalidInput(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// Decodes an in-memory WAV file; same rules as [`read_wav`].
pub fn decode_wav(bytes: &[u8]) -> Result<(Vec<f32>, u32)> {
    let bad = |e: hound::Error| Error::InvalidInput(e.to_string());
    let mut reader = hound::WavReader::new(std::io::Cursor::new(bytes)).map_err(bad)?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::InvalidInput(format!(
            "expected mono audio, found {} channels",
            spec.channels
        )));
    }
    let samples = match spec.sample_format {
        hound::SampleFormat::Float => reader.samples::<f32>().collect::<std::result::Result<Vec<_>, _>>().map_err(bad)?,
        hound::SampleFormat::Int => {
            if !(1..=32).contains(&spec.bits_per_sample) {
                return Err(Error::InvalidInput(format!("unsupported sample width {}", spec.bits_per_sample)));
            }
            let full = (1i64 << (spec.bits_per_sample - 1)) as f32;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f32 / full))
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(bad)?
        }
    };
    Ok((samples, spec.sample_rate))
}

/// Writes mono 16-bit PCM.
pub fn write_wav(path: &Path, samples: &[f32], rate: u32) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let bad = |e: hound::Error| Error::InvalidInput(format!("{}: {e}", path.display()));
    let mut w = hound::WavWriter::create(path, spec).map_err(bad)?;
    for &s in samples {
        w.write_sample((s.clamp(-1.0, 1.0) * 32767.0).round() as i16).map_err(bad)?;
    }
    w.finalize().map_err(bad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(n: usize, seed: u64) -> Vec<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    fn delayed(a: &[f32], d: usize) -> Vec<f32> {
        let mut b = vec![0.0; d];
        b.extend_from_slice(a);
        b
    }

    #[test]
    fn identical_signals_align_at_zero() {
        let a = noise(4000, 1);
        let r = estimate_time_shift(&a, 8000, &a, 8000, &SyncOptions::default()).unwrap();
        assert_eq!(r.shift, 0);
        assert!((r.peak - 1.0).abs() < 1e-9);
        assert!(!r.low_confidence);
    }

    #[test]
    fn recovers_delay_and_is_antisymmetric() {
        let a = noise(3000, 2);
        for d in [1usize, 100, 1000] {
            let b = delayed(&a, d);
            let opts = SyncOptions::default();
            let ab = estimate_time_shift(&a, 8000, &b, 8000, &opts).unwrap();
            let ba = estimate_time_shift(&b, 8000, &a, 8000, &opts).unwrap();
            assert_eq!(ab.shift, d as i64);
            assert_eq!(ba.shift, -(d as i64));
        }
    }

    #[test]
    fn pure_tone_is_ambiguous() {
        let a: Vec<f32> = (0..4000).map(|n| (n as f32 * 0.2).sin()).collect();
        let b = delayed(&a, 50);
        let r = estimate_time_shift(&a, 8000, &b, 8000, &SyncOptions::default()).unwrap();
        assert!(r.low_confidence, "{r:?}");
    }

    #[test]
    fn rejects_silence_and_rate_mismatch() {
        let a = noise(100, 3);
        let z = vec![0.0; 100];
        let o = SyncOptions::default();
        assert!(matches!(estimate_time_shift(&a, 8000, &z, 8000, &o), Err(Error::SilentAudio(_))));
        assert!(estimate_time_shift(&a, 8000, &a, 16000, &o).is_err());
    }

    #[test]
    fn search_window_limits_lag() {
        let a = noise(2000, 4);
        let b = delayed(&a, 500);
        let opts = SyncOptions {
            max_lag_seconds: 0.01,
            ..SyncOptions::default()
        };
        let r = estimate_time_shift(&a, 8000, &b, 8000, &opts).unwrap();
        assert!(r.shift.abs() <= 80);
    }

    #[test]
    fn wav_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.wav");
        let a = noise(500, 5);
        write_wav(&p, &a, 44100).unwrap();
        let (back, rate) = read_wav(&p).unwrap();
        assert_eq!(rate, 44100);
        assert!(a.iter().zip(&back).all(|(x, y)| (x - y).abs() < 1e-4));
    }

    #[test]
    fn truncated_wav_is_invalid_input() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.wav");
        write_wav(&p, &noise(100, 1), 8000).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        for cut in [0, 4, 20, 43] {
            assert!(matches!(decode_wav(&bytes[..cut]), Err(Error::InvalidInput(_))), "cut {cut}");
        }
        assert!(decode_wav(b"RIFF\0\0\0\0WAVEjunk").is_err());
    }
}
