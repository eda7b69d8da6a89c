//! Sparse multipath channel generation, noisy single-pilot measurements, and
//! a plain-text channel interchange format.
//!
//! Channels are sums of rank-1 path components over ULA steering vectors,
//! normalized to unit Frobenius norm. Path gains stored in [`PathChannel`]
//! are post-normalization, so the matrix can be rebuilt from them exactly.

use crate::arraymath::{steering, NormalizedAngle};
use crate::matrix::{inner, CMatrix};
use crate::rng::RngStream;
use num_complex::Complex64;
use std::fmt::Write as _;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ChannelError {
    #[error("vector length {got} does not match channel dimension {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("channel file is empty")]
    EmptyFile,
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: {message}")]
    Structure { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One resolvable propagation path.
#[derive(Debug, Clone, Copy)]
pub struct PathParams {
    pub gain: Complex64,
    pub aoa: NormalizedAngle,
    pub aod: NormalizedAngle,
}

/// A realized channel: path parameters (sorted by descending gain magnitude)
/// plus the unit-Frobenius-norm matrix they generate. Imported channels have
/// an empty path list.
#[derive(Debug, Clone)]
pub struct PathChannel {
    pub paths: Vec<PathParams>,
    pub matrix: CMatrix,
    pub n_tx: usize,
    pub n_rx: usize,
    /// Squared Frobenius norm before normalization.
    pub raw_norm_sq: f64,
}

impl PathChannel {
    pub fn dominant_path(&self) -> Option<&PathParams> {
        self.paths.first()
    }
}

/// Ensemble profile: path count and per-path gain variances.
#[derive(Debug, Clone, Copy)]
pub struct ChannelEnsembleConfig {
    pub n_tx: usize,
    pub n_rx: usize,
    pub n_paths: usize,
    pub dominant_gain_variance: f64,
    pub secondary_gain_variance: f64,
    pub seed: u64,
}

impl ChannelEnsembleConfig {
    /// LoS-dominated profile: 3 paths, the dominant at unit variance and the
    /// others 20 dB down.
    pub fn los_default(n_tx: usize, n_rx: usize, seed: u64) -> Self {
        Self {
            n_tx,
            n_rx,
            n_paths: 3,
            dominant_gain_variance: 1.0,
            secondary_gain_variance: 0.01,
            seed,
        }
    }

    /// Rich scattering profile: 8 equal-variance paths.
    pub fn nlos_default(n_tx: usize, n_rx: usize, seed: u64) -> Self {
        Self {
            n_tx,
            n_rx,
            n_paths: 8,
            dominant_gain_variance: 1.0,
            secondary_gain_variance: 1.0,
            seed,
        }
    }
}

/// One received pilot observation.
#[derive(Debug, Clone, Copy)]
pub struct Measurement {
    pub raw: Complex64,
    pub power: f64,
}

fn generate(config: &ChannelEnsembleConfig, rng: &mut RngStream) -> PathChannel {
    assert!(config.n_paths >= 1);
    let mut paths: Vec<PathParams> = (0..config.n_paths)
        .map(|l| {
            let variance = if l == 0 {
                config.dominant_gain_variance
            } else {
                config.secondary_gain_variance
            };
            let gain = rng.complex_normal(variance);
            let aoa = NormalizedAngle::new(rng.uniform(-1.0, 1.0));
            let aod = NormalizedAngle::new(rng.uniform(-1.0, 1.0));
            PathParams { gain, aoa, aod }
        })
        .collect();
    paths.sort_by(|a, b| b.gain.norm().partial_cmp(&a.gain.norm()).unwrap());

    let accumulate = |paths: &[PathParams]| {
        let mut matrix = CMatrix::zeros(config.n_rx, config.n_tx);
        for path in paths {
            let u = steering(config.n_rx, path.aoa);
            let v = steering(config.n_tx, path.aod);
            matrix.add_scaled_outer(path.gain, u.elements(), v.elements());
        }
        matrix
    };
    let raw_norm_sq = accumulate(&paths).frobenius_norm_sq();
    let norm = raw_norm_sq.sqrt();
    for path in &mut paths {
        path.gain /= norm;
    }
    // Rebuild from the rescaled gains so the stored matrix is exactly the
    // sum of its per-path components.
    let matrix = accumulate(&paths);
    PathChannel {
        paths,
        matrix,
        n_tx: config.n_tx,
        n_rx: config.n_rx,
        raw_norm_sq,
    }
}

/// Draw one channel from the LoS-dominated ensemble.
pub fn generate_los_channel(config: &ChannelEnsembleConfig, rng: &mut RngStream) -> PathChannel {
    generate(config, rng)
}

/// Draw one channel from the rich-scattering ensemble.
pub fn generate_nlos_channel(config: &ChannelEnsembleConfig, rng: &mut RngStream) -> PathChannel {
    generate(config, rng)
}

/// Effective noise level seen by one beam measurement when `pilots` repeated
/// unit pilots are accumulated coherently: the signal adds in voltage while
/// the noise adds in power, so the post-combining standard deviation drops
/// by `sqrt(pilots)`.
pub fn effective_noise_std(snr_db: f64, pilots: u32) -> f64 {
    10f64.powf(-snr_db / 20.0) / (pilots.max(1) as f64).sqrt()
}

/// Single-pilot measurement `y = w^H H f + w^H n` with elementwise circular
/// complex Gaussian receiver noise of variance `noise_std^2`.
pub fn measure(
    channel: &CMatrix,
    tx_vector: &[Complex64],
    rx_vector: &[Complex64],
    noise_std: f64,
    rng: &mut RngStream,
) -> Result<Measurement, ChannelError> {
    if tx_vector.len() != channel.n_cols() {
        return Err(ChannelError::DimensionMismatch {
            expected: channel.n_cols(),
            got: tx_vector.len(),
        });
    }
    if rx_vector.len() != channel.n_rows() {
        return Err(ChannelError::DimensionMismatch {
            expected: channel.n_rows(),
            got: rx_vector.len(),
        });
    }
    let mut y = channel.bilinear(rx_vector, tx_vector);
    if noise_std > 0.0 {
        let variance = noise_std * noise_std;
        let noise: Vec<Complex64> = (0..rx_vector.len())
            .map(|_| rng.complex_normal(variance))
            .collect();
        y += inner(rx_vector, &noise);
    }
    Ok(Measurement {
        raw: y,
        power: y.norm_sqr(),
    })
}

fn format_entry(z: Complex64) -> String {
    let mut s = String::new();
    write!(s, "{:.12e}{:+.12e}j", z.re, z.im).unwrap();
    s
}

fn parse_entry(s: &str, line: usize) -> Result<Complex64, ChannelError> {
    let bytes = s.as_bytes();
    let mut split = None;
    for i in (1..bytes.len()).rev() {
        let b = bytes[i];
        if (b == b'+' || b == b'-') && bytes[i - 1] != b'e' && bytes[i - 1] != b'E' {
            split = Some(i);
            break;
        }
    }
    let parse_err = |msg: String| ChannelError::Parse { line, message: msg };
    let split = split.ok_or_else(|| parse_err(format!("malformed complex entry '{s}'")))?;
    let im_part = &s[split..];
    let im_str = im_part
        .strip_suffix('j')
        .ok_or_else(|| parse_err(format!("missing 'j' suffix in '{s}'")))?;
    let re: f64 = s[..split]
        .parse()
        .map_err(|e| parse_err(format!("bad real part in '{s}': {e}")))?;
    let im: f64 = im_str
        .parse()
        .map_err(|e| parse_err(format!("bad imaginary part in '{s}': {e}")))?;
    Ok(Complex64::new(re, im))
}

/// Write channels in the interchange format: a `n_rx,n_tx,count` header, then
/// per channel `n_rx` comma-separated lines of `re+imj` entries.
pub fn export_channels(path: &Path, channels: &[PathChannel]) -> Result<(), ChannelError> {
    let mut out = String::new();
    let (n_rx, n_tx) = match channels.first() {
        Some(c) => (c.n_rx, c.n_tx),
        None => return Err(ChannelError::EmptyFile),
    };
    writeln!(out, "{},{},{}", n_rx, n_tx, channels.len()).unwrap();
    for channel in channels {
        for r in 0..n_rx {
            let row: Vec<String> = (0..n_tx)
                .map(|c| format_entry(channel.matrix.get(r, c)))
                .collect();
            writeln!(out, "{}", row.join(",")).unwrap();
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Read channels from the interchange format; matrices are renormalized to
/// unit Frobenius norm and carry no path metadata.
pub fn import_channels(path: &Path) -> Result<Vec<PathChannel>, ChannelError> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or(ChannelError::EmptyFile)?;
    let fields: Vec<&str> = header.split(',').collect();
    if fields.len() != 3 {
        return Err(ChannelError::Structure {
            line: 1,
            message: format!("header must be 'n_rx,n_tx,count', got '{header}'"),
        });
    }
    let parse_dim = |s: &str, name: &str| -> Result<usize, ChannelError> {
        s.trim().parse().map_err(|_| ChannelError::Parse {
            line: 1,
            message: format!("bad {name} '{s}'"),
        })
    };
    let n_rx = parse_dim(fields[0], "n_rx")?;
    let n_tx = parse_dim(fields[1], "n_tx")?;
    let count = parse_dim(fields[2], "count")?;
    if n_rx == 0 || n_tx == 0 {
        return Err(ChannelError::Structure {
            line: 1,
            message: "zero channel dimensions".into(),
        });
    }

    let mut channels = Vec::with_capacity(count);
    for k in 0..count {
        let mut matrix = CMatrix::zeros(n_rx, n_tx);
        for r in 0..n_rx {
            let (idx, line) = lines.next().ok_or(ChannelError::Structure {
                line: 1 + k * n_rx + r,
                message: format!("file ends inside channel {} (expected {count} channels)", k + 1),
            })?;
            let entries: Vec<&str> = line.split(',').collect();
            if entries.len() != n_tx {
                return Err(ChannelError::Structure {
                    line: idx + 1,
                    message: format!("expected {n_tx} entries, got {}", entries.len()),
                });
            }
            for (c, entry) in entries.iter().enumerate() {
                matrix.set(r, c, parse_entry(entry.trim(), idx + 1)?);
            }
        }
        let raw_norm_sq = matrix.frobenius_norm_sq();
        if raw_norm_sq <= 0.0 {
            return Err(ChannelError::Structure {
                line: 1 + k * n_rx + 1,
                message: format!("channel {} has zero norm", k + 1),
            });
        }
        matrix.scale(1.0 / raw_norm_sq.sqrt());
        channels.push(PathChannel {
            paths: Vec::new(),
            matrix,
            n_tx,
            n_rx,
            raw_norm_sq,
        });
    }
    if let Some((idx, trailing)) = lines.next() {
        if !trailing.trim().is_empty() {
            return Err(ChannelError::Structure {
                line: idx + 1,
                message: "trailing data after final channel".into(),
            });
        }
    }
    Ok(channels)
}
