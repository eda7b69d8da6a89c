//! Beam alignment strategies over one shared measurement interface:
//! exhaustive pair scanning, binary hierarchical descent, and quaternary
//! super-resolution search (QSSR) with pluggable angle estimation.
//!
//! All strategies sound the link through [`Link::probe`], which applies an
//! optional [`ProbeShaper`] (e.g. calibration compensation) to the commanded
//! beamforming vectors before each measurement and counts every pilot.

use crate::arraymath::{
    dft_codebook, invert_ratio, steering, ArrayMathError, NormalizedAngle,
};
use crate::channel::{measure, PathChannel};
use crate::matrix::CMatrix;
use crate::rng::RngStream;
use num_complex::Complex64;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SearchError {
    #[error("hierarchical search needs a power-of-two array size, got {0}")]
    SizeNotPowerOfTwo(usize),
    #[error("array size {0} too small to search")]
    SizeTooSmall(usize),
    #[error("channel carries no path parameters")]
    MissingPathInfo,
    #[error(transparent)]
    ArrayMath(#[from] ArrayMathError),
}

/// Which end of the link a probing vector drives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Tx,
    Rx,
}

/// Transforms a commanded beamforming vector into the one actually applied,
/// given the vector's steering direction. Identity when absent.
pub trait ProbeShaper {
    fn shape(&self, side: Side, vector: &mut [Complex64], pointing: f64);
}

/// Measurement interface shared by every strategy.
pub struct Link<'a> {
    channel: &'a CMatrix,
    noise_std: f64,
    rng: &'a mut RngStream,
    shaper: Option<&'a dyn ProbeShaper>,
    count: usize,
}

impl<'a> Link<'a> {
    pub fn new(
        channel: &'a CMatrix,
        noise_std: f64,
        rng: &'a mut RngStream,
        shaper: Option<&'a dyn ProbeShaper>,
    ) -> Self {
        Self {
            channel,
            noise_std,
            rng,
            shaper,
            count: 0,
        }
    }

    pub fn n_tx(&self) -> usize {
        self.channel.n_cols()
    }

    pub fn n_rx(&self) -> usize {
        self.channel.n_rows()
    }

    pub fn measurement_count(&self) -> usize {
        self.count
    }

    /// One pilot: returns the received power for the commanded vector pair.
    pub fn probe(
        &mut self,
        tx: &[Complex64],
        tx_pointing: f64,
        rx: &[Complex64],
        rx_pointing: f64,
    ) -> f64 {
        self.count += 1;
        match self.shaper {
            None => measure(self.channel, tx, rx, self.noise_std, self.rng)
                .expect("probe vectors match channel dimensions")
                .power,
            Some(shaper) => {
                let mut tx_shaped = tx.to_vec();
                let mut rx_shaped = rx.to_vec();
                shaper.shape(Side::Tx, &mut tx_shaped, tx_pointing);
                shaper.shape(Side::Rx, &mut rx_shaped, rx_pointing);
                measure(self.channel, &tx_shaped, &rx_shaped, self.noise_std, self.rng)
                    .expect("probe vectors match channel dimensions")
                    .power
            }
        }
    }
}

/// Record of one codebook layer scan.
#[derive(Debug, Clone)]
pub struct LayerMeasurement {
    /// 1-based layer number in scan order.
    pub layer_index: usize,
    /// Codebook size the probed beams belong to.
    pub layer_size: usize,
    /// 1-based codebook index of the first probed beam.
    pub first_index: usize,
    pub pointings: Vec<f64>,
    pub powers: Vec<f64>,
    /// 1-based argmax position among the probed beams, ties to the lowest.
    pub chosen_index: usize,
    /// All probed powers were exactly zero.
    pub degenerate: bool,
}

impl LayerMeasurement {
    /// Global codebook index of the winning beam.
    pub fn chosen_global_index(&self) -> usize {
        self.first_index + self.chosen_index - 1
    }
}

/// Final-layer anchor/auxiliary beam pair feeding ratio inversion.
#[derive(Debug, Clone, Copy)]
pub struct AnchorSelection {
    pub layer_size: usize,
    /// 1-based codebook index of the strongest final-layer beam.
    pub anchor_index: usize,
    /// 1-based codebook index of the auxiliary beam.
    pub auxiliary_index: usize,
    pub anchor_power: f64,
    pub auxiliary_power: f64,
    /// The anchor sat at the probed quartet's edge, so the auxiliary beam
    /// defaulted to the only probed neighbor.
    pub boundary_default: bool,
}

/// Everything one side's hierarchical scan produced.
#[derive(Debug, Clone)]
pub struct SideScan {
    pub side: Side,
    pub aperture: usize,
    pub layers: Vec<LayerMeasurement>,
    pub anchor: AnchorSelection,
}

/// Maps a completed side scan to a direction estimate.
pub trait AngleEstimator {
    fn estimate(&self, scan: &SideScan) -> NormalizedAngle;
}

/// Analytic estimator: inverts the anchor/auxiliary power ratio on the
/// decreasing branch between their pointings. Zero measured powers map to
/// the interval endpoints.
pub struct RatioEstimator;

impl AngleEstimator for RatioEstimator {
    fn estimate(&self, scan: &SideScan) -> NormalizedAngle {
        let a = &scan.anchor;
        let m = a.layer_size;
        let (p, left_power, right_power) = if a.anchor_index < a.auxiliary_index {
            (a.anchor_index, a.anchor_power, a.auxiliary_power)
        } else {
            (a.auxiliary_index, a.auxiliary_power, a.anchor_power)
        };
        let q = p + 1;
        let gamma = if left_power <= 0.0 && right_power <= 0.0 {
            // Both at the noise floor: fall back to the anchor pointing.
            if a.anchor_index == p {
                f64::INFINITY
            } else {
                0.0
            }
        } else if right_power <= 0.0 {
            f64::INFINITY
        } else {
            (left_power / right_power).max(0.0)
        };
        invert_ratio(m, p, q, gamma).expect("anchor and auxiliary are adjacent")
    }
}

/// Grid estimator: the winning codeword's own pointing (no super-resolution).
pub struct GridEstimator;

impl AngleEstimator for GridEstimator {
    fn estimate(&self, scan: &SideScan) -> NormalizedAngle {
        let last = scan.layers.last().expect("scan has at least one layer");
        NormalizedAngle::new(last.pointings[last.chosen_index - 1])
    }
}

/// Outcome of one full alignment run.
#[derive(Debug, Clone)]
pub struct AlignmentResult {
    pub tx_angle: NormalizedAngle,
    pub rx_angle: NormalizedAngle,
    pub tx_vector: Vec<Complex64>,
    pub rx_vector: Vec<Complex64>,
    pub tx_log: Vec<LayerMeasurement>,
    pub rx_log: Vec<LayerMeasurement>,
    pub measurement_count: usize,
    pub tx_boundary_aux: bool,
    pub rx_boundary_aux: bool,
    pub tx_degenerate: bool,
    pub rx_degenerate: bool,
}

/// Strategy tags used for overhead accounting.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StrategyKind {
    Exhaustive,
    Binary,
    Qssr,
    Oracle,
}

/// Analytic measurement budget of a strategy at given array sizes.
#[derive(Debug, Clone, Copy)]
pub struct SearchBudgetProfile {
    pub strategy: StrategyKind,
    pub n_tx: usize,
    pub n_rx: usize,
}

fn log2_ceil(n: usize) -> usize {
    assert!(n >= 1);
    (usize::BITS - (n - 1).leading_zeros()) as usize
}

/// Number of full quaternary layers and whether a binary tail layer remains.
fn quaternary_plan(n: usize) -> (usize, bool) {
    debug_assert!(n.is_power_of_two());
    let k = n.trailing_zeros() as usize;
    (k / 2, k % 2 == 1)
}

/// Per-side probe count of the quaternary descent.
pub fn qssr_side_budget(n: usize) -> usize {
    let (layers, tail) = quaternary_plan(n);
    4 * layers + if tail { 2 } else { 0 }
}

impl SearchBudgetProfile {
    pub fn expected_measurements(&self) -> usize {
        match self.strategy {
            StrategyKind::Exhaustive => self.n_tx * self.n_rx,
            StrategyKind::Binary => 2 * log2_ceil(self.n_rx) + 2 * log2_ceil(self.n_tx),
            StrategyKind::Qssr => qssr_side_budget(self.n_rx) + qssr_side_budget(self.n_tx),
            StrategyKind::Oracle => 0,
        }
    }
}

/// Quasi-omnidirectional receive vector: a single active antenna.
pub fn quasi_omni(n: usize) -> Vec<Complex64> {
    let mut w = vec![Complex64::new(0.0, 0.0); n];
    w[0] = Complex64::new(1.0 / (n as f64).sqrt(), 0.0);
    w
}

fn check_hierarchical_size(n: usize) -> Result<(), SearchError> {
    if n < 2 {
        return Err(SearchError::SizeTooSmall(n));
    }
    if !n.is_power_of_two() {
        return Err(SearchError::SizeNotPowerOfTwo(n));
    }
    Ok(())
}

fn argmax(powers: &[f64]) -> usize {
    let mut best = 0;
    for (i, &p) in powers.iter().enumerate().skip(1) {
        if p > powers[best] {
            best = i;
        }
    }
    best
}

/// Scan one group of sibling beams in the layer codebook of size `m`.
fn scan_group(
    link: &mut Link,
    side: Side,
    aperture: usize,
    layer_index: usize,
    m: usize,
    first_index: usize,
    group: usize,
    other: &[Complex64],
    other_pointing: f64,
) -> Result<LayerMeasurement, SearchError> {
    let codebook = dft_codebook(m)?;
    let mut pointings = Vec::with_capacity(group);
    let mut powers = Vec::with_capacity(group);
    for offset in 0..group {
        let cw = codebook.codeword(first_index + offset);
        let v = cw.padded(aperture);
        let pointing = cw.pointing().value();
        let power = match side {
            Side::Tx => link.probe(&v, pointing, other, other_pointing),
            Side::Rx => link.probe(other, other_pointing, &v, pointing),
        };
        pointings.push(pointing);
        powers.push(power);
    }
    let chosen = argmax(&powers);
    let degenerate = powers.iter().all(|&p| p == 0.0);
    Ok(LayerMeasurement {
        layer_index,
        layer_size: m,
        first_index,
        pointings,
        powers,
        chosen_index: chosen + 1,
        degenerate,
    })
}

/// Hierarchical quaternary descent of one side, probing the four children of
/// the running best node per layer. Sizes that are powers of two but not of
/// four finish with a binary layer of the two children when
/// `include_binary_tail` is set, and stop at the last full quaternary layer
/// otherwise.
pub fn quaternary_descent(
    link: &mut Link,
    side: Side,
    n: usize,
    other: &[Complex64],
    other_pointing: f64,
    include_binary_tail: bool,
) -> Result<SideScan, SearchError> {
    check_hierarchical_size(n)?;
    let (full_layers, has_tail) = quaternary_plan(n);
    let mut layers = Vec::new();
    let mut node = 1usize;
    let mut layer_index = 0;
    let mut m = 1usize;
    for _ in 0..full_layers {
        m *= 4;
        layer_index += 1;
        let first = 4 * node - 3;
        let layer = scan_group(
            link,
            side,
            n,
            layer_index,
            m,
            first,
            4,
            other,
            other_pointing,
        )?;
        node = layer.chosen_global_index();
        layers.push(layer);
    }
    if has_tail && include_binary_tail {
        layer_index += 1;
        let first = 2 * node - 1;
        let layer = scan_group(
            link,
            side,
            n,
            layer_index,
            n,
            first,
            2,
            other,
            other_pointing,
        )?;
        layers.push(layer);
    }

    let last = layers.last().expect("descent probed at least one layer");
    let anchor = select_anchor(last);
    Ok(SideScan {
        side,
        aperture: n,
        layers,
        anchor,
    })
}

fn select_anchor(layer: &LayerMeasurement) -> AnchorSelection {
    let pos = layer.chosen_index;
    let count = layer.powers.len();
    let (aux_pos, boundary) = if count == 2 {
        (if pos == 1 { 2 } else { 1 }, false)
    } else if pos == 1 {
        (2, true)
    } else if pos == count {
        (count - 1, true)
    } else {
        // Both neighbors probed: take the stronger, ties to the lower pointing.
        let left = layer.powers[pos - 2];
        let right = layer.powers[pos];
        if right > left {
            (pos + 1, false)
        } else {
            (pos - 1, false)
        }
    };
    AnchorSelection {
        layer_size: layer.layer_size,
        anchor_index: layer.first_index + pos - 1,
        auxiliary_index: layer.first_index + aux_pos - 1,
        anchor_power: layer.powers[pos - 1],
        auxiliary_power: layer.powers[aux_pos - 1],
        boundary_default: boundary,
    }
}

/// Scan every transmit/receive codeword pair in the finest codebooks and keep
/// the highest-power pair.
pub fn exhaustive_search(
    channel: &CMatrix,
    noise_std: f64,
    rng: &mut RngStream,
) -> Result<AlignmentResult, SearchError> {
    let mut link = Link::new(channel, noise_std, rng, None);
    let n_tx = link.n_tx();
    let n_rx = link.n_rx();
    let tx_cb = dft_codebook(n_tx)?;
    let rx_cb = dft_codebook(n_rx)?;
    let mut best_power = f64::NEG_INFINITY;
    let mut best = (1usize, 1usize);
    for q in 1..=n_rx {
        let w = rx_cb.codeword(q).padded(n_rx);
        let w_pointing = rx_cb.codeword(q).pointing().value();
        for p in 1..=n_tx {
            let f = tx_cb.codeword(p).padded(n_tx);
            let f_pointing = tx_cb.codeword(p).pointing().value();
            let power = link.probe(&f, f_pointing, &w, w_pointing);
            if power > best_power {
                best_power = power;
                best = (q, p);
            }
        }
    }
    let (q, p) = best;
    Ok(AlignmentResult {
        tx_angle: tx_cb.codeword(p).pointing(),
        rx_angle: rx_cb.codeword(q).pointing(),
        tx_vector: tx_cb.codeword(p).padded(n_tx),
        rx_vector: rx_cb.codeword(q).padded(n_rx),
        tx_log: Vec::new(),
        rx_log: Vec::new(),
        measurement_count: link.measurement_count(),
        tx_boundary_aux: false,
        rx_boundary_aux: false,
        tx_degenerate: false,
        rx_degenerate: false,
    })
}

fn binary_descent(
    link: &mut Link,
    side: Side,
    n: usize,
    other: &[Complex64],
    other_pointing: f64,
) -> Result<(Vec<LayerMeasurement>, usize), SearchError> {
    check_hierarchical_size(n)?;
    let depth = n.trailing_zeros() as usize;
    let mut layers = Vec::with_capacity(depth);
    let mut node = 1usize;
    let mut m = 1usize;
    for layer_index in 1..=depth {
        m *= 2;
        let first = 2 * node - 1;
        let layer = scan_group(
            link,
            side,
            n,
            layer_index,
            m,
            first,
            2,
            other,
            other_pointing,
        )?;
        node = layer.chosen_global_index();
        layers.push(layer);
    }
    Ok((layers, node))
}

/// Binary hierarchical search: per side, descend doubling codebooks probing
/// the two children of the running best node; estimates are the final
/// codeword pointings.
pub fn binary_search(
    channel: &CMatrix,
    noise_std: f64,
    rng: &mut RngStream,
) -> Result<AlignmentResult, SearchError> {
    let mut link = Link::new(channel, noise_std, rng, None);
    let n_tx = link.n_tx();
    let n_rx = link.n_rx();

    let w_quasi = quasi_omni(n_rx);
    let (tx_log, tx_winner) = binary_descent(&mut link, Side::Tx, n_tx, &w_quasi, 0.0)?;
    let tx_cb = dft_codebook(n_tx)?;
    let tx_angle = tx_cb.codeword(tx_winner).pointing();
    let tx_vector = tx_cb.codeword(tx_winner).padded(n_tx);

    let (rx_log, rx_winner) =
        binary_descent(&mut link, Side::Rx, n_rx, &tx_vector, tx_angle.value())?;
    let rx_cb = dft_codebook(n_rx)?;
    let rx_angle = rx_cb.codeword(rx_winner).pointing();
    let rx_vector = rx_cb.codeword(rx_winner).padded(n_rx);

    let tx_degenerate = tx_log.iter().any(|l| l.degenerate);
    let rx_degenerate = rx_log.iter().any(|l| l.degenerate);
    Ok(AlignmentResult {
        tx_angle,
        rx_angle,
        tx_vector,
        rx_vector,
        tx_log,
        rx_log,
        measurement_count: link.measurement_count(),
        tx_boundary_aux: false,
        rx_boundary_aux: false,
        tx_degenerate,
        rx_degenerate,
    })
}

/// Quaternary super-resolution alignment with pluggable per-side estimators.
/// The transmitter side runs first behind a quasi-omnidirectional receive
/// vector; the receive side then runs behind the freshly steered transmit
/// beam.
pub fn qssr_search_with(
    channel: &CMatrix,
    noise_std: f64,
    rng: &mut RngStream,
    shaper: Option<&dyn ProbeShaper>,
    tx_estimator: &dyn AngleEstimator,
    rx_estimator: &dyn AngleEstimator,
    include_binary_tail: bool,
) -> Result<AlignmentResult, SearchError> {
    let mut link = Link::new(channel, noise_std, rng, shaper);
    let n_tx = link.n_tx();
    let n_rx = link.n_rx();

    let w_quasi = quasi_omni(n_rx);
    let tx_scan = quaternary_descent(&mut link, Side::Tx, n_tx, &w_quasi, 0.0, include_binary_tail)?;
    let tx_angle = tx_estimator.estimate(&tx_scan);
    let tx_vector = steering(n_tx, tx_angle).elements().to_vec();

    let rx_scan = quaternary_descent(
        &mut link,
        Side::Rx,
        n_rx,
        &tx_vector,
        tx_angle.value(),
        include_binary_tail,
    )?;
    let rx_angle = rx_estimator.estimate(&rx_scan);
    let rx_vector = steering(n_rx, rx_angle).elements().to_vec();

    Ok(AlignmentResult {
        tx_angle,
        rx_angle,
        tx_vector,
        rx_vector,
        measurement_count: link.measurement_count(),
        tx_boundary_aux: tx_scan.anchor.boundary_default,
        rx_boundary_aux: rx_scan.anchor.boundary_default,
        tx_degenerate: tx_scan.layers.iter().any(|l| l.degenerate),
        rx_degenerate: rx_scan.layers.iter().any(|l| l.degenerate),
        tx_log: tx_scan.layers,
        rx_log: rx_scan.layers,
    })
}

/// Quaternary super-resolution alignment with analytic ratio inversion.
pub fn qssr_search(
    channel: &CMatrix,
    noise_std: f64,
    rng: &mut RngStream,
) -> Result<AlignmentResult, SearchError> {
    qssr_search_with(
        channel,
        noise_std,
        rng,
        None,
        &RatioEstimator,
        &RatioEstimator,
        true,
    )
}

/// Genie benchmark: steer both sides at the dominant path, no measurements.
pub fn oracle_alignment(channel: &PathChannel) -> Result<AlignmentResult, SearchError> {
    let dominant = channel.dominant_path().ok_or(SearchError::MissingPathInfo)?;
    let tx_angle = dominant.aod;
    let rx_angle = dominant.aoa;
    Ok(AlignmentResult {
        tx_angle,
        rx_angle,
        tx_vector: steering(channel.n_tx, tx_angle).elements().to_vec(),
        rx_vector: steering(channel.n_rx, rx_angle).elements().to_vec(),
        tx_log: Vec::new(),
        rx_log: Vec::new(),
        measurement_count: 0,
        tx_boundary_aux: false,
        rx_boundary_aux: false,
        tx_degenerate: false,
        rx_degenerate: false,
    })
}

/// Achieved objective of an alignment: noiseless received power with both
/// full apertures steered at the estimated angles.
pub fn evaluate(result: &AlignmentResult, channel: &CMatrix) -> f64 {
    let w = steering(channel.n_rows(), result.rx_angle);
    let f = steering(channel.n_cols(), result.tx_angle);
    channel.bilinear(w.elements(), f.elements()).norm_sqr()
}

/// [`evaluate`] with the data-transmission beams passed through a shaper,
/// mirroring compensated operation.
pub fn evaluate_with(
    result: &AlignmentResult,
    channel: &CMatrix,
    shaper: &dyn ProbeShaper,
) -> f64 {
    let mut f = steering(channel.n_cols(), result.tx_angle).elements().to_vec();
    let mut w = steering(channel.n_rows(), result.rx_angle).elements().to_vec();
    shaper.shape(Side::Tx, &mut f, result.tx_angle.value());
    shaper.shape(Side::Rx, &mut w, result.rx_angle.value());
    channel.bilinear(&w, &f).norm_sqr()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arraymath::{beam_gain, codebook_pointing};
    use crate::channel::{generate_los_channel, ChannelEnsembleConfig};
    use crate::rng::domain;

    fn single_path_channel(n_tx: usize, n_rx: usize, aod: f64, aoa: f64) -> PathChannel {
        let mut matrix = CMatrix::zeros(n_rx, n_tx);
        let u = steering(n_rx, NormalizedAngle::new(aoa));
        let v = steering(n_tx, NormalizedAngle::new(aod));
        matrix.add_scaled_outer(Complex64::new(1.0, 0.0), u.elements(), v.elements());
        PathChannel {
            paths: vec![crate::channel::PathParams {
                gain: Complex64::new(1.0, 0.0),
                aoa: NormalizedAngle::new(aoa),
                aod: NormalizedAngle::new(aod),
            }],
            matrix,
            n_tx,
            n_rx,
            raw_norm_sq: 1.0,
        }
    }

    #[test]
    fn overhead_identities() {
        for (n_tx, n_rx) in [(16, 16), (64, 16), (256, 16)] {
            let ch = single_path_channel(n_tx, n_rx, 0.11, -0.23);
            let mut rng = RngStream::derived(1, &[domain::NOISE]);

            let ex = exhaustive_search(&ch.matrix, 0.0, &mut rng).unwrap();
            assert_eq!(ex.measurement_count, n_tx * n_rx);
            assert_eq!(
                ex.measurement_count,
                SearchBudgetProfile {
                    strategy: StrategyKind::Exhaustive,
                    n_tx,
                    n_rx
                }
                .expected_measurements()
            );

            let bi = binary_search(&ch.matrix, 0.0, &mut rng).unwrap();
            assert_eq!(
                bi.measurement_count,
                SearchBudgetProfile {
                    strategy: StrategyKind::Binary,
                    n_tx,
                    n_rx
                }
                .expected_measurements()
            );

            let qs = qssr_search(&ch.matrix, 0.0, &mut rng).unwrap();
            assert_eq!(
                qs.measurement_count,
                SearchBudgetProfile {
                    strategy: StrategyKind::Qssr,
                    n_tx,
                    n_rx
                }
                .expected_measurements()
            );

            let or = oracle_alignment(&ch).unwrap();
            assert_eq!(or.measurement_count, 0);
        }
        // The headline case.
        let bi = SearchBudgetProfile {
            strategy: StrategyKind::Binary,
            n_tx: 64,
            n_rx: 16,
        };
        let qs = SearchBudgetProfile {
            strategy: StrategyKind::Qssr,
            n_tx: 64,
            n_rx: 16,
        };
        assert_eq!(bi.expected_measurements(), 20);
        assert_eq!(qs.expected_measurements(), 20);
    }

    #[test]
    fn mixed_size_uses_binary_tail() {
        assert_eq!(qssr_side_budget(32), 10);
        assert_eq!(qssr_side_budget(2), 2);
        let ch = single_path_channel(32, 16, 0.4, -0.1);
        let mut rng = RngStream::derived(2, &[domain::NOISE]);
        let qs = qssr_search(&ch.matrix, 0.0, &mut rng).unwrap();
        assert_eq!(qs.measurement_count, 10 + 8);
        let tail = qs.tx_log.last().unwrap();
        assert_eq!(tail.layer_size, 32);
        assert_eq!(tail.powers.len(), 2);
    }

    #[test]
    fn non_power_of_two_rejected() {
        let ch = single_path_channel(48, 16, 0.0, 0.0);
        let mut rng = RngStream::derived(3, &[domain::NOISE]);
        assert!(matches!(
            binary_search(&ch.matrix, 0.0, &mut rng),
            Err(SearchError::SizeNotPowerOfTwo(48))
        ));
        assert!(matches!(
            qssr_search(&ch.matrix, 0.0, &mut rng),
            Err(SearchError::SizeNotPowerOfTwo(48))
        ));
    }

    #[test]
    fn exhaustive_finds_exact_codeword() {
        let aod = codebook_pointing(64, 23);
        let aoa = codebook_pointing(16, 5);
        let ch = single_path_channel(64, 16, aod, aoa);
        let mut rng = RngStream::derived(4, &[domain::NOISE]);
        let res = exhaustive_search(&ch.matrix, 0.0, &mut rng).unwrap();
        assert!((res.tx_angle.value() - aod).abs() < 1e-12);
        assert!((res.rx_angle.value() - aoa).abs() < 1e-12);
    }

    #[test]
    fn exhaustive_matches_gain_table_argmax() {
        let aod = 0.2371;
        let aoa = -0.605;
        let ch = single_path_channel(64, 16, aod, aoa);
        let mut rng = RngStream::derived(5, &[domain::NOISE]);
        let res = exhaustive_search(&ch.matrix, 0.0, &mut rng).unwrap();
        let best_tx = (1..=64).max_by(|&a, &b| {
            beam_gain(64, a, aod)
                .partial_cmp(&beam_gain(64, b, aod))
                .unwrap()
        });
        let want = codebook_pointing(64, best_tx.unwrap());
        assert!((res.tx_angle.value() - want).abs() < 1e-12);
    }

    #[test]
    fn binary_noiseless_finds_nearest_codeword() {
        let aod = codebook_pointing(64, 41);
        let aoa = codebook_pointing(16, 11);
        let ch = single_path_channel(64, 16, aod, aoa);
        let mut rng = RngStream::derived(6, &[domain::NOISE]);
        let res = binary_search(&ch.matrix, 0.0, &mut rng).unwrap();
        assert!((res.tx_angle.value() - aod).abs() < 1e-12);
        assert!((res.rx_angle.value() - aoa).abs() < 1e-12);
    }

    #[test]
    fn binary_sector_edge_keeps_true_sector_gain() {
        // Worst-case direction: the boundary between two finest codewords.
        let aod = codebook_pointing(64, 30) + 1.0 / 64.0;
        let ch = single_path_channel(64, 16, aod, 0.0);
        let mut rng = RngStream::derived(7, &[domain::NOISE]);
        let res = binary_search(&ch.matrix, 0.0, &mut rng).unwrap();
        let achieved_gain = beam_gain(
            64,
            (1..=64)
                .find(|&p| (codebook_pointing(64, p) - res.tx_angle.value()).abs() < 1e-9)
                .unwrap(),
            aod,
        );
        let true_sector = (1..=64)
            .min_by(|&a, &b| {
                (codebook_pointing(64, a) - aod)
                    .abs()
                    .partial_cmp(&(codebook_pointing(64, b) - aod).abs())
                    .unwrap()
            })
            .unwrap();
        assert!(achieved_gain >= beam_gain(64, true_sector, aod) - 1e-9);
    }

    #[test]
    fn qssr_recovers_interior_angles_exactly() {
        // True angle in the interior of the valid region of its quartet.
        let mut rng = RngStream::derived(8, &[domain::NOISE]);
        for &aod in &[0.1513, -0.722, 0.0304, 0.517] {
            let ch = single_path_channel(64, 16, aod, 0.3011);
            let res = qssr_search(&ch.matrix, 0.0, &mut rng).unwrap();
            let final_layer = res.tx_log.last().unwrap();
            let lo = final_layer.pointings[0];
            let hi = *final_layer.pointings.last().unwrap();
            if aod > lo && aod < hi {
                assert!(
                    (res.tx_angle.value() - aod).abs() < 1e-6,
                    "aod {aod} estimate {}",
                    res.tx_angle.value()
                );
            }
        }
    }

    #[test]
    fn qssr_valid_region_fraction_near_three_quarters() {
        let mut hits = 0usize;
        let n = 10_000usize;
        for trial in 0..n {
            let mut rng = RngStream::derived(100, &[domain::CHANNEL, trial as u64]);
            let aod = rng.uniform(-1.0, 1.0);
            let ch = single_path_channel(64, 4, aod, 0.0);
            let mut noise_rng = RngStream::derived(100, &[domain::NOISE, trial as u64]);
            let res = qssr_search(&ch.matrix, 0.0, &mut noise_rng).unwrap();
            let final_layer = res.tx_log.last().unwrap();
            let lo = final_layer.pointings[0];
            let hi = *final_layer.pointings.last().unwrap();
            if aod > lo && aod < hi {
                hits += 1;
                assert!(
                    (res.tx_angle.value() - aod).abs() < 1e-6,
                    "trial {trial}: aod {aod} estimate {}",
                    res.tx_angle.value()
                );
            }
        }
        let fraction = hits as f64 / n as f64;
        assert!(
            (fraction - 0.75).abs() < 0.02,
            "valid-region fraction {fraction}"
        );
    }

    #[test]
    fn qssr_boundary_case_flags_and_defaults() {
        // Pick a direction in the left flank of a quartet: between the sector
        // edge and the first probed pointing. Quartet 5..8 of the 64-codebook
        // spans sector [-1 + 8/64, -1 + 16/64].
        let sector_left = -1.0 + 8.0 / 64.0;
        let first_pointing = codebook_pointing(64, 5);
        let aod = 0.5 * (sector_left + first_pointing);
        let ch = single_path_channel(64, 16, aod, 0.0);
        let mut rng = RngStream::derived(9, &[domain::NOISE]);
        let res = qssr_search(&ch.matrix, 0.0, &mut rng).unwrap();
        assert!(res.tx_boundary_aux, "expected boundary auxiliary default");
        // The estimate stays inside the probed span even though the truth is
        // outside it.
        let final_layer = res.tx_log.last().unwrap();
        assert!(res.tx_angle.value() >= final_layer.pointings[0] - 1e-9);
    }

    #[test]
    fn degenerate_zero_channel_is_flagged() {
        let zero = CMatrix::zeros(16, 64);
        let mut rng = RngStream::derived(10, &[domain::NOISE]);
        let res = qssr_search(&zero, 0.0, &mut rng).unwrap();
        assert!(res.tx_degenerate && res.rx_degenerate);
        for layer in res.tx_log.iter().chain(res.rx_log.iter()) {
            assert_eq!(layer.chosen_index, 1);
        }
    }

    #[test]
    fn oracle_costs_nothing_and_tops_single_path() {
        let ch = single_path_channel(64, 16, 0.456, -0.789);
        let res = oracle_alignment(&ch).unwrap();
        assert_eq!(res.measurement_count, 0);
        let power = evaluate(&res, &ch.matrix);
        assert!((power - 1.0).abs() < 1e-12);

        let mut rng = RngStream::derived(11, &[domain::NOISE]);
        let ex = exhaustive_search(&ch.matrix, 0.0, &mut rng).unwrap();
        assert!(evaluate(&ex, &ch.matrix) <= power + 1e-12);
    }

    #[test]
    fn oracle_rejects_imported_channels() {
        let ch = PathChannel {
            paths: Vec::new(),
            matrix: CMatrix::zeros(4, 4),
            n_tx: 4,
            n_rx: 4,
            raw_norm_sq: 1.0,
        };
        assert!(matches!(
            oracle_alignment(&ch),
            Err(SearchError::MissingPathInfo)
        ));
    }

    #[test]
    fn evaluation_is_seed_deterministic() {
        let cfg = ChannelEnsembleConfig::los_default(64, 16, 21);
        let mut c1 = RngStream::derived(21, &[domain::CHANNEL, 0]);
        let mut c2 = RngStream::derived(21, &[domain::CHANNEL, 0]);
        let ch1 = generate_los_channel(&cfg, &mut c1);
        let ch2 = generate_los_channel(&cfg, &mut c2);
        let mut n1 = RngStream::derived(21, &[domain::NOISE, 0]);
        let mut n2 = RngStream::derived(21, &[domain::NOISE, 0]);
        let r1 = qssr_search(&ch1.matrix, 0.1, &mut n1).unwrap();
        let r2 = qssr_search(&ch2.matrix, 0.1, &mut n2).unwrap();
        assert_eq!(evaluate(&r1, &ch1.matrix), evaluate(&r2, &ch2.matrix));
    }

    #[test]
    fn qssr_beats_binary_on_average_noiseless() {
        // Per-trial, binary can win inside the quartet flanks where the
        // auxiliary beam defaults to the wrong side; on average the
        // super-resolved estimate dominates.
        let n = 2_000;
        let mut qssr_sum = 0.0;
        let mut binary_sum = 0.0;
        let mut qssr_wins = 0usize;
        for trial in 0..n {
            let mut rng = RngStream::derived(300, &[domain::CHANNEL, trial as u64]);
            let aod = rng.uniform(-1.0, 1.0);
            let aoa = rng.uniform(-1.0, 1.0);
            let ch = single_path_channel(64, 16, aod, aoa);
            let mut nrng = RngStream::derived(300, &[domain::NOISE, trial as u64]);
            let q = qssr_search(&ch.matrix, 0.0, &mut nrng).unwrap();
            let b = binary_search(&ch.matrix, 0.0, &mut nrng).unwrap();
            let pq = evaluate(&q, &ch.matrix);
            let pb = evaluate(&b, &ch.matrix);
            qssr_sum += pq;
            binary_sum += pb;
            if pq >= pb {
                qssr_wins += 1;
            }
        }
        assert!(
            qssr_sum > binary_sum,
            "qssr mean {} binary mean {}",
            qssr_sum / n as f64,
            binary_sum / n as f64
        );
        // Interior trials (about three quarters) are won outright.
        assert!(
            qssr_wins as f64 / n as f64 > 0.7,
            "win rate {}",
            qssr_wins as f64 / n as f64
        );
    }
}
