//! Closed-form responses of half-wavelength uniform linear arrays: steering
//! vectors, layered DFT beam codebooks, Dirichlet-kernel beam gains, and the
//! monotone gain-ratio machinery used for super-resolution angle estimation.
//!
//! Directions are expressed in sine space: a dimensionless value in
//! `[-1, 1]`, periodic with period 2. Codeword indices are 1-based
//! throughout the public API.

use num_complex::Complex64;
use std::f64::consts::PI;
use thiserror::Error;

/// Below this magnitude the sine in a Dirichlet quotient denominator is
/// treated as zero and the removable singularity is evaluated by its limit.
const SIN_EPS: f64 = 1e-12;

/// Angular half-width at which ratio bisection terminates.
pub const BISECTION_TOL: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum ArrayMathError {
    #[error("codebook needs at least 2 codewords, got {0}")]
    CodebookTooSmall(usize),
    #[error("codeword index {index} outside 1..={layer_size}")]
    IndexOutOfRange { index: usize, layer_size: usize },
    #[error("gain ratio needs two distinct codewords, both were {0}")]
    EqualIndices(usize),
    #[error("gain-ratio derivative is singular at angle {0}")]
    Singular(f64),
    #[error("gain-ratio derivative vanishes at angle {0}")]
    ZeroDerivative(f64),
}

/// Direction in sine space, wrapped into `[-1, 1)` by period-2 projection.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct NormalizedAngle(f64);

impl NormalizedAngle {
    pub fn new(value: f64) -> Self {
        Self((value + 1.0).rem_euclid(2.0) - 1.0)
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl From<f64> for NormalizedAngle {
    fn from(value: f64) -> Self {
        Self::new(value)
    }
}

/// Signed angular separation `a - b` wrapped into `[-1, 1)`.
pub fn wrap_delta(a: f64, b: f64) -> f64 {
    (a - b + 1.0).rem_euclid(2.0) - 1.0
}

/// Constant-modulus array response of an `n`-element ULA.
#[derive(Debug, Clone, PartialEq)]
pub struct SteeringVector {
    elements: Vec<Complex64>,
}

impl SteeringVector {
    pub fn elements(&self) -> &[Complex64] {
        &self.elements
    }

    pub fn antenna_count(&self) -> usize {
        self.elements.len()
    }
}

/// Array response `a(n, angle)`: element `k` is `exp(j k pi angle) / sqrt(n)`.
pub fn steering(n_antennas: usize, angle: NormalizedAngle) -> SteeringVector {
    assert!(n_antennas >= 1, "steering vector needs at least one antenna");
    let scale = 1.0 / (n_antennas as f64).sqrt();
    let elements = (0..n_antennas)
        .map(|k| Complex64::from_polar(scale, PI * angle.value() * k as f64))
        .collect();
    SteeringVector { elements }
}

/// One beam of a layered DFT codebook: the steering vector over the first
/// `layer_size` antennas, activated out of a possibly larger aperture.
#[derive(Debug, Clone)]
pub struct Codeword {
    steering: SteeringVector,
    pointing: NormalizedAngle,
    layer_size: usize,
    index: usize,
}

impl Codeword {
    pub fn pointing(&self) -> NormalizedAngle {
        self.pointing
    }

    pub fn layer_size(&self) -> usize {
        self.layer_size
    }

    /// 1-based index within the layer.
    pub fn index(&self) -> usize {
        self.index
    }

    pub fn active_elements(&self) -> &[Complex64] {
        self.steering.elements()
    }

    /// Beamforming vector over the full aperture: the active elements
    /// followed by exact zeros for the deactivated antennas.
    pub fn padded(&self, aperture: usize) -> Vec<Complex64> {
        assert!(
            aperture >= self.layer_size,
            "aperture {aperture} smaller than layer size {}",
            self.layer_size
        );
        let mut v = vec![Complex64::new(0.0, 0.0); aperture];
        v[..self.layer_size].copy_from_slice(self.steering.elements());
        v
    }
}

/// A full layer of `layer_size` codewords with uniformly spaced pointings.
#[derive(Debug, Clone)]
pub struct Codebook {
    layer_size: usize,
    codewords: Vec<Codeword>,
}

impl Codebook {
    pub fn layer_size(&self) -> usize {
        self.layer_size
    }

    /// 1-based lookup.
    pub fn codeword(&self, index: usize) -> &Codeword {
        &self.codewords[index - 1]
    }

    pub fn codewords(&self) -> &[Codeword] {
        &self.codewords
    }
}

/// Pointing direction of codeword `p` in a layer of `m` beams.
pub fn codebook_pointing(layer_size: usize, index: usize) -> f64 {
    -1.0 + (2.0 * index as f64 - 1.0) / layer_size as f64
}

/// DFT codebook sampling the angular domain with `layer_size` beams.
pub fn dft_codebook(layer_size: usize) -> Result<Codebook, ArrayMathError> {
    if layer_size < 2 {
        return Err(ArrayMathError::CodebookTooSmall(layer_size));
    }
    let codewords = (1..=layer_size)
        .map(|p| {
            let pointing = NormalizedAngle::new(codebook_pointing(layer_size, p));
            Codeword {
                steering: steering(layer_size, pointing),
                pointing,
                layer_size,
                index: p,
            }
        })
        .collect();
    Ok(Codebook {
        layer_size,
        codewords,
    })
}

fn check_index(layer_size: usize, index: usize) -> Result<(), ArrayMathError> {
    if index == 0 || index > layer_size {
        return Err(ArrayMathError::IndexOutOfRange { index, layer_size });
    }
    Ok(())
}

/// Beamforming gain of codeword `p` toward direction `angle`, evaluated
/// through the Dirichlet-kernel closed form. The removable singularity at
/// the beam peak evaluates to 1.
pub fn beam_gain(layer_size: usize, codeword_index: usize, angle: f64) -> f64 {
    debug_assert!(codeword_index >= 1 && codeword_index <= layer_size);
    let m = layer_size as f64;
    let delta = wrap_delta(angle, codebook_pointing(layer_size, codeword_index));
    let x = PI * delta / 2.0;
    let den = x.sin();
    if den.abs() < SIN_EPS {
        return 1.0;
    }
    let quotient = (m * x).sin() / (m * den);
    quotient * quotient
}

/// Gain ratio `G_p / G_q` of two codewords in the same layer, via the
/// simplified single-quotient form. Returns `f64::INFINITY` at the `p`-th
/// beam peak and exactly `0` at the `q`-th; both sentinels are produced
/// explicitly, never by dividing by zero.
pub fn gain_ratio(
    layer_size: usize,
    p: usize,
    q: usize,
    angle: f64,
) -> Result<f64, ArrayMathError> {
    check_index(layer_size, p)?;
    check_index(layer_size, q)?;
    if p == q {
        return Err(ArrayMathError::EqualIndices(p));
    }
    let m = layer_size as f64;
    let k = q as f64 - p as f64;
    let x = PI * wrap_delta(angle, codebook_pointing(layer_size, p)) / 2.0;
    let den = x.sin();
    if den.abs() < SIN_EPS {
        return Ok(f64::INFINITY);
    }
    let num = (x - k * PI / m).sin();
    if num.abs() < SIN_EPS {
        return Ok(0.0);
    }
    let quotient = num / den;
    Ok(quotient * quotient)
}

/// Derivative of [`gain_ratio`] with respect to the angle.
pub fn gain_ratio_derivative(
    layer_size: usize,
    p: usize,
    q: usize,
    angle: f64,
) -> Result<f64, ArrayMathError> {
    check_index(layer_size, p)?;
    check_index(layer_size, q)?;
    if p == q {
        return Err(ArrayMathError::EqualIndices(p));
    }
    let m = layer_size as f64;
    let k = q as f64 - p as f64;
    let x = PI * wrap_delta(angle, codebook_pointing(layer_size, p)) / 2.0;
    let den = x.sin();
    if den.abs() < SIN_EPS {
        return Err(ArrayMathError::Singular(angle));
    }
    Ok(PI * (PI * k / m).sin() * (x - PI * k / m).sin() / (den * den * den))
}

/// Invert the gain ratio of the adjacent pair `(p, q = p+1)` on the strictly
/// decreasing branch between their pointings. `ratio = 0` maps to the `q`-th
/// pointing and an infinite ratio to the `p`-th; any finite positive ratio is
/// recovered by bisection to within [`BISECTION_TOL`].
pub fn invert_ratio(
    layer_size: usize,
    p: usize,
    q: usize,
    ratio: f64,
) -> Result<NormalizedAngle, ArrayMathError> {
    check_index(layer_size, p)?;
    check_index(layer_size, q)?;
    assert_eq!(q, p + 1, "ratio inversion runs on adjacent codewords");
    assert!(ratio >= 0.0, "ratio must be non-negative");
    let lo0 = codebook_pointing(layer_size, p);
    let hi0 = codebook_pointing(layer_size, q);
    if ratio == 0.0 {
        return Ok(NormalizedAngle::new(hi0));
    }
    if ratio.is_infinite() {
        return Ok(NormalizedAngle::new(lo0));
    }
    let mut lo = lo0;
    let mut hi = hi0;
    while hi - lo >= BISECTION_TOL {
        let mid = 0.5 * (lo + hi);
        // Strictly decreasing from +inf at lo0 to 0 at hi0.
        if gain_ratio(layer_size, p, q, mid)? > ratio {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(NormalizedAngle::new(0.5 * (lo + hi)))
}

/// First-order angle error induced by a ratio perturbation at `angle`:
/// `delta_ratio / d(ratio)/d(angle)`.
pub fn angle_error_sensitivity(
    layer_size: usize,
    p: usize,
    q: usize,
    angle: f64,
    ratio_perturbation: f64,
) -> Result<f64, ArrayMathError> {
    let d = gain_ratio_derivative(layer_size, p, q, angle)?;
    if d == 0.0 {
        return Err(ArrayMathError::ZeroDerivative(angle));
    }
    Ok(ratio_perturbation / d)
}
