//! QSSR-Net: a gated-recurrent angle estimator over hierarchical beam scans.
//!
//! Per scanned layer the network consumes an 8-entry feature vector (four
//! beam pointings and four max-normalized received powers), runs it through
//! a three-layer GRU stack of width 64, and maps the final hidden state
//! through three fully connected layers to a single unconstrained output
//! that is wrapped into `[-1, 1]` by period-2 projection.
//!
//! Training maximizes the received-power objective directly: the loss is the
//! negated noiseless bilinear form at the predicted transmit/receive angles,
//! backpropagated with hand-rolled reverse-mode gradients through both
//! networks. The hierarchical scan itself is treated as environment
//! interaction: gradients do not flow through the measurement path.

use crate::arraymath::{steering, NormalizedAngle};
use crate::channel::PathChannel;
use crate::matrix::CMatrix;
use crate::optim::Adam;
use crate::rng::{domain, RngStream};
use crate::search::{
    quaternary_descent, AngleEstimator, AlignmentResult, LayerMeasurement, Link, ProbeShaper,
    SearchError, Side, SideScan,
};
use num_complex::Complex64;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;
use thiserror::Error;

pub const FEATURE_DIM: usize = 8;
pub const HIDDEN: usize = 64;
pub const GRU_LAYERS: usize = 3;

/// Default pilot repetitions per beam measurement. Beam training accumulates
/// a short pilot sequence per scanned beam; 16 symbols give the probing
/// layers enough processing gain that hierarchical descent stays reliable
/// through the SNR range of interest.
pub const DEFAULT_PILOTS: u32 = 16;

#[derive(Debug, Error)]
pub enum NeuralError {
    #[error("layer {layer} has {len} probes; features need exactly 4")]
    BadLayerShape { layer: usize, len: usize },
    #[error("non-finite value in network input")]
    NonFiniteInput,
    #[error("training diverged at epoch {epoch}, batch {batch}")]
    Diverged { epoch: usize, batch: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Search(#[from] SearchError),
}

/// Per-layer network input: four pointings followed by four max-normalized
/// powers. An all-zero power layer normalizes to a one-hot at the tie-broken
/// argmax and sets `degenerate`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureVector {
    pub values: [f64; FEATURE_DIM],
    pub degenerate: bool,
}

/// Pointing of the strongest probed beam in the last scanned layer; the
/// reference direction the network output refines.
pub fn anchor_pointing(log: &[LayerMeasurement]) -> f64 {
    log.last()
        .map(|layer| layer.pointings[layer.chosen_index - 1])
        .unwrap_or(0.0)
}

/// Build the per-layer feature sequence from a scan log, in scan order.
pub fn build_features(log: &[LayerMeasurement]) -> Result<Vec<FeatureVector>, NeuralError> {
    log.iter()
        .map(|layer| {
            if layer.pointings.len() != 4 || layer.powers.len() != 4 {
                return Err(NeuralError::BadLayerShape {
                    layer: layer.layer_index,
                    len: layer.pointings.len(),
                });
            }
            let mut values = [0.0; FEATURE_DIM];
            values[..4].copy_from_slice(&layer.pointings);
            let max = layer.powers.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let degenerate = !(max > 0.0);
            if degenerate {
                values[4 + layer.chosen_index - 1] = 1.0;
            } else {
                for (slot, &p) in values[4..].iter_mut().zip(&layer.powers) {
                    *slot = p / max;
                }
            }
            Ok(FeatureVector { values, degenerate })
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Real matrices
// ---------------------------------------------------------------------------

/// Row-major real matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct RMat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl RMat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    fn uniform(rows: usize, cols: usize, bound: f64, rng: &mut RngStream) -> Self {
        let data = (0..rows * cols).map(|_| rng.uniform(-bound, bound)).collect();
        Self { rows, cols, data }
    }

    /// `y = W x`.
    fn matvec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.cols);
        let mut y = vec![0.0; self.rows];
        for (r, out) in y.iter_mut().enumerate() {
            let row = &self.data[r * self.cols..(r + 1) * self.cols];
            let mut acc = 0.0;
            for (w, xi) in row.iter().zip(x) {
                acc += w * xi;
            }
            *out = acc;
        }
        y
    }

    /// `x += W^T y`.
    fn tr_matvec_add(&self, y: &[f64], x: &mut [f64]) {
        debug_assert_eq!(y.len(), self.rows);
        debug_assert_eq!(x.len(), self.cols);
        for (r, yr) in y.iter().enumerate() {
            let row = &self.data[r * self.cols..(r + 1) * self.cols];
            for (xi, w) in x.iter_mut().zip(row) {
                *xi += w * yr;
            }
        }
    }

    /// `W += a b^T`.
    fn add_outer(&mut self, a: &[f64], b: &[f64]) {
        debug_assert_eq!(a.len(), self.rows);
        debug_assert_eq!(b.len(), self.cols);
        for (r, ar) in a.iter().enumerate() {
            let row = &mut self.data[r * self.cols..(r + 1) * self.cols];
            for (w, bi) in row.iter_mut().zip(b) {
                *w += ar * bi;
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

/// Update gate `z`, reset gate `r`, and candidate-state weights of one GRU
/// layer: `W*` act on the layer input, `U*` on the previous hidden state.
#[derive(Debug, Clone, PartialEq)]
pub struct GruLayerParams {
    pub wz: RMat,
    pub uz: RMat,
    pub bz: Vec<f64>,
    pub wr: RMat,
    pub ur: RMat,
    pub br: Vec<f64>,
    pub wh: RMat,
    pub uh: RMat,
    pub bh: Vec<f64>,
}

impl GruLayerParams {
    fn zeros(input_dim: usize) -> Self {
        Self {
            wz: RMat::zeros(HIDDEN, input_dim),
            uz: RMat::zeros(HIDDEN, HIDDEN),
            bz: vec![0.0; HIDDEN],
            wr: RMat::zeros(HIDDEN, input_dim),
            ur: RMat::zeros(HIDDEN, HIDDEN),
            br: vec![0.0; HIDDEN],
            wh: RMat::zeros(HIDDEN, input_dim),
            uh: RMat::zeros(HIDDEN, HIDDEN),
            bh: vec![0.0; HIDDEN],
        }
    }

    fn init(input_dim: usize, rng: &mut RngStream) -> Self {
        let wb = 1.0 / (input_dim as f64).sqrt();
        let ub = 1.0 / (HIDDEN as f64).sqrt();
        Self {
            wz: RMat::uniform(HIDDEN, input_dim, wb, rng),
            uz: RMat::uniform(HIDDEN, HIDDEN, ub, rng),
            bz: vec![0.0; HIDDEN],
            wr: RMat::uniform(HIDDEN, input_dim, wb, rng),
            ur: RMat::uniform(HIDDEN, HIDDEN, ub, rng),
            br: vec![0.0; HIDDEN],
            wh: RMat::uniform(HIDDEN, input_dim, wb, rng),
            uh: RMat::uniform(HIDDEN, HIDDEN, ub, rng),
            bh: vec![0.0; HIDDEN],
        }
    }
}

/// Three affine head layers; rectified-linear on the two hidden ones, none on
/// the scalar output.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams {
    pub w1: RMat,
    pub b1: Vec<f64>,
    pub w2: RMat,
    pub b2: Vec<f64>,
    pub w3: RMat,
    pub b3: Vec<f64>,
}

impl HeadParams {
    fn zeros() -> Self {
        Self {
            w1: RMat::zeros(HIDDEN, HIDDEN),
            b1: vec![0.0; HIDDEN],
            w2: RMat::zeros(HIDDEN, HIDDEN),
            b2: vec![0.0; HIDDEN],
            w3: RMat::zeros(1, HIDDEN),
            b3: vec![0.0; 1],
        }
    }

    fn init(rng: &mut RngStream) -> Self {
        let bound = 1.0 / (HIDDEN as f64).sqrt();
        Self {
            w1: RMat::uniform(HIDDEN, HIDDEN, bound, rng),
            b1: vec![0.0; HIDDEN],
            w2: RMat::uniform(HIDDEN, HIDDEN, bound, rng),
            b2: vec![0.0; HIDDEN],
            w3: RMat::uniform(1, HIDDEN, bound, rng),
            b3: vec![0.0; 1],
        }
    }
}

/// One side's estimator: GRU stack plus fully connected head. The same
/// struct doubles as its own gradient accumulator.
#[derive(Debug, Clone, PartialEq)]
pub struct QssrNet {
    pub gru: Vec<GruLayerParams>,
    pub head: HeadParams,
}

fn layer_input_dim(k: usize) -> usize {
    if k == 0 {
        FEATURE_DIM
    } else {
        HIDDEN
    }
}

impl QssrNet {
    pub fn zeros() -> Self {
        Self {
            gru: (0..GRU_LAYERS).map(|k| GruLayerParams::zeros(layer_input_dim(k))).collect(),
            head: HeadParams::zeros(),
        }
    }

    /// Seeded uniform init in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`, zero biases.
    pub fn init(rng: &mut RngStream) -> Self {
        Self {
            gru: (0..GRU_LAYERS).map(|k| GruLayerParams::init(layer_input_dim(k), rng)).collect(),
            head: HeadParams::init(rng),
        }
    }

    /// Named parameter groups in a fixed order shared by gradients, the
    /// optimizer, checkpoints, and gradient checks.
    pub fn param_group_names() -> Vec<String> {
        let mut names = Vec::new();
        for k in 0..GRU_LAYERS {
            for part in ["wz", "uz", "bz", "wr", "ur", "br", "wh", "uh", "bh"] {
                names.push(format!("gru{k}.{part}"));
            }
        }
        for part in ["w1", "b1", "w2", "b2", "w3", "b3"] {
            names.push(format!("head.{part}"));
        }
        names
    }

    /// `(rows, cols)` of each group; biases are column vectors.
    pub fn param_group_shapes() -> Vec<(usize, usize)> {
        let mut shapes = Vec::new();
        for k in 0..GRU_LAYERS {
            let d = layer_input_dim(k);
            for _ in 0..3 {
                shapes.push((HIDDEN, d));
                shapes.push((HIDDEN, HIDDEN));
                shapes.push((HIDDEN, 1));
            }
        }
        shapes.push((HIDDEN, HIDDEN));
        shapes.push((HIDDEN, 1));
        shapes.push((HIDDEN, HIDDEN));
        shapes.push((HIDDEN, 1));
        shapes.push((1, HIDDEN));
        shapes.push((1, 1));
        shapes
    }

    pub fn param_groups(&self) -> Vec<&[f64]> {
        let mut groups: Vec<&[f64]> = Vec::new();
        for layer in &self.gru {
            groups.push(&layer.wz.data);
            groups.push(&layer.uz.data);
            groups.push(&layer.bz);
            groups.push(&layer.wr.data);
            groups.push(&layer.ur.data);
            groups.push(&layer.br);
            groups.push(&layer.wh.data);
            groups.push(&layer.uh.data);
            groups.push(&layer.bh);
        }
        groups.push(&self.head.w1.data);
        groups.push(&self.head.b1);
        groups.push(&self.head.w2.data);
        groups.push(&self.head.b2);
        groups.push(&self.head.w3.data);
        groups.push(&self.head.b3);
        groups
    }

    pub fn param_groups_mut(&mut self) -> Vec<&mut [f64]> {
        let mut groups: Vec<&mut [f64]> = Vec::new();
        for layer in &mut self.gru {
            groups.push(&mut layer.wz.data);
            groups.push(&mut layer.uz.data);
            groups.push(&mut layer.bz);
            groups.push(&mut layer.wr.data);
            groups.push(&mut layer.ur.data);
            groups.push(&mut layer.br);
            groups.push(&mut layer.wh.data);
            groups.push(&mut layer.uh.data);
            groups.push(&mut layer.bh);
        }
        groups.push(&mut self.head.w1.data);
        groups.push(&mut self.head.b1);
        groups.push(&mut self.head.w2.data);
        groups.push(&mut self.head.b2);
        groups.push(&mut self.head.w3.data);
        groups.push(&mut self.head.b3);
        groups
    }

    pub fn group_lens() -> Vec<usize> {
        Self::param_group_shapes().iter().map(|&(r, c)| r * c).collect()
    }

    /// Add `other`'s parameters into self (gradient accumulation).
    pub fn add_assign(&mut self, other: &QssrNet) {
        let mut mine = self.param_groups_mut();
        let theirs = other.param_groups();
        for (a, b) in mine.iter_mut().zip(theirs) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for group in self.param_groups_mut() {
            for x in group {
                *x *= factor;
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Forward / backward
// ---------------------------------------------------------------------------

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

struct StepCache {
    x: Vec<f64>,
    h_prev: Vec<f64>,
    z: Vec<f64>,
    r: Vec<f64>,
    rh: Vec<f64>,
    hc: Vec<f64>,
}

struct HeadCache {
    h_in: Vec<f64>,
    a1: Vec<f64>,
    y1: Vec<f64>,
    a2: Vec<f64>,
    y2: Vec<f64>,
}

/// Cached activations of one forward pass, consumed by [`QssrNet::backward`].
pub struct ForwardTrace {
    steps: Vec<Vec<StepCache>>,
    head: HeadCache,
    pub raw_output: f64,
}

impl QssrNet {
    fn gru_step(
        layer: &GruLayerParams,
        x: &[f64],
        h_prev: &[f64],
    ) -> (Vec<f64>, StepCache) {
        let mut z = layer.wz.matvec(x);
        let uzh = layer.uz.matvec(h_prev);
        for i in 0..HIDDEN {
            z[i] = sigmoid(z[i] + uzh[i] + layer.bz[i]);
        }
        let mut r = layer.wr.matvec(x);
        let urh = layer.ur.matvec(h_prev);
        for i in 0..HIDDEN {
            r[i] = sigmoid(r[i] + urh[i] + layer.br[i]);
        }
        let rh: Vec<f64> = r.iter().zip(h_prev).map(|(ri, hi)| ri * hi).collect();
        let mut hc = layer.wh.matvec(x);
        let uhrh = layer.uh.matvec(&rh);
        for i in 0..HIDDEN {
            hc[i] = (hc[i] + uhrh[i] + layer.bh[i]).tanh();
        }
        let h_new: Vec<f64> = (0..HIDDEN)
            .map(|i| (1.0 - z[i]) * h_prev[i] + z[i] * hc[i])
            .collect();
        let cache = StepCache {
            x: x.to_vec(),
            h_prev: h_prev.to_vec(),
            z,
            r,
            rh,
            hc,
        };
        (h_new, cache)
    }

    /// Run the GRU stack over the feature sequence and return the top layer's
    /// final hidden state. A zero-length sequence returns the (zero) initial
    /// state.
    pub fn gru_forward(&self, features: &[FeatureVector]) -> Result<Vec<f64>, NeuralError> {
        let (hidden, _) = self.run_stack(features)?;
        Ok(hidden)
    }

    fn run_stack(
        &self,
        features: &[FeatureVector],
    ) -> Result<(Vec<f64>, Vec<Vec<StepCache>>), NeuralError> {
        for f in features {
            if f.values.iter().any(|v| !v.is_finite()) {
                return Err(NeuralError::NonFiniteInput);
            }
        }
        let mut states = vec![vec![0.0; HIDDEN]; GRU_LAYERS];
        let mut steps = Vec::with_capacity(features.len());
        for feature in features {
            let mut x: Vec<f64> = feature.values.to_vec();
            let mut caches = Vec::with_capacity(GRU_LAYERS);
            for (k, layer) in self.gru.iter().enumerate() {
                let (h_new, cache) = Self::gru_step(layer, &x, &states[k]);
                x = h_new.clone();
                states[k] = h_new;
                caches.push(cache);
            }
            steps.push(caches);
        }
        Ok((states[GRU_LAYERS - 1].clone(), steps))
    }

    /// Full forward pass with cached activations.
    pub fn forward_trace(&self, features: &[FeatureVector]) -> Result<ForwardTrace, NeuralError> {
        let (h_final, steps) = self.run_stack(features)?;
        let a1 = {
            let mut a = self.head.w1.matvec(&h_final);
            for (ai, bi) in a.iter_mut().zip(&self.head.b1) {
                *ai += bi;
            }
            a
        };
        let y1: Vec<f64> = a1.iter().map(|&v| v.max(0.0)).collect();
        let a2 = {
            let mut a = self.head.w2.matvec(&y1);
            for (ai, bi) in a.iter_mut().zip(&self.head.b2) {
                *ai += bi;
            }
            a
        };
        let y2: Vec<f64> = a2.iter().map(|&v| v.max(0.0)).collect();
        let raw_output = self.head.w3.matvec(&y2)[0] + self.head.b3[0];
        Ok(ForwardTrace {
            steps,
            head: HeadCache {
                h_in: h_final,
                a1,
                y1,
                a2,
                y2,
            },
            raw_output,
        })
    }

    /// Predicted direction for a scan log: the final layer's anchor pointing
    /// plus the raw head output, wrapped into `[-1, 1]` by period-2
    /// projection. The residual convention means an untrained network
    /// already predicts at anchor-beam accuracy, and the head only has to
    /// resolve the sub-beamwidth offset that the power ratios encode.
    pub fn predict_angle(&self, log: &[LayerMeasurement]) -> Result<NormalizedAngle, NeuralError> {
        let features = build_features(log)?;
        let trace = self.forward_trace(&features)?;
        Ok(NormalizedAngle::new(
            anchor_pointing(log) + trace.raw_output,
        ))
    }

    /// Accumulate `d(loss)/d(params)` into `grads` given
    /// `dout = d(loss)/d(raw_output)`.
    pub fn backward(&self, trace: &ForwardTrace, dout: f64, grads: &mut QssrNet) {
        // Head.
        let head = &trace.head;
        grads.head.b3[0] += dout;
        let mut dy2 = vec![0.0; HIDDEN];
        for i in 0..HIDDEN {
            grads.head.w3.data[i] += dout * head.y2[i];
            dy2[i] = self.head.w3.data[i] * dout;
        }
        let da2: Vec<f64> = (0..HIDDEN)
            .map(|i| if head.a2[i] > 0.0 { dy2[i] } else { 0.0 })
            .collect();
        grads.head.w2.add_outer(&da2, &head.y1);
        for i in 0..HIDDEN {
            grads.head.b2[i] += da2[i];
        }
        let mut dy1 = vec![0.0; HIDDEN];
        self.head.w2.tr_matvec_add(&da2, &mut dy1);
        let da1: Vec<f64> = (0..HIDDEN)
            .map(|i| if head.a1[i] > 0.0 { dy1[i] } else { 0.0 })
            .collect();
        grads.head.w1.add_outer(&da1, &head.h_in);
        for i in 0..HIDDEN {
            grads.head.b1[i] += da1[i];
        }
        let mut dh_top = vec![0.0; HIDDEN];
        self.head.w1.tr_matvec_add(&da1, &mut dh_top);

        // Backpropagation through time over the stack.
        let mut dh_next: Vec<Vec<f64>> = vec![vec![0.0; HIDDEN]; GRU_LAYERS];
        dh_next[GRU_LAYERS - 1] = dh_top;
        for step in trace.steps.iter().rev() {
            let mut dx_from_above: Option<Vec<f64>> = None;
            for k in (0..GRU_LAYERS).rev() {
                let cache = &step[k];
                let mut dh = std::mem::replace(&mut dh_next[k], vec![0.0; HIDDEN]);
                if let Some(dx) = dx_from_above.take() {
                    for i in 0..HIDDEN {
                        dh[i] += dx[i];
                    }
                }
                let (dx, dh_prev) = Self::gru_step_backward(
                    &self.gru[k],
                    cache,
                    &dh,
                    &mut grads.gru[k],
                );
                dh_next[k] = dh_prev;
                if k > 0 {
                    dx_from_above = Some(dx);
                }
            }
        }
    }

    fn gru_step_backward(
        layer: &GruLayerParams,
        cache: &StepCache,
        dh: &[f64],
        grads: &mut GruLayerParams,
    ) -> (Vec<f64>, Vec<f64>) {
        let input_dim = cache.x.len();
        let mut dx = vec![0.0; input_dim];
        let mut dh_prev = vec![0.0; HIDDEN];

        // h = (1 - z) * h_prev + z * hc
        let mut dz = vec![0.0; HIDDEN];
        let mut dhc = vec![0.0; HIDDEN];
        for i in 0..HIDDEN {
            dz[i] = dh[i] * (cache.hc[i] - cache.h_prev[i]);
            dhc[i] = dh[i] * cache.z[i];
            dh_prev[i] += dh[i] * (1.0 - cache.z[i]);
        }

        // hc = tanh(wh x + uh (r .* h_prev) + bh)
        let dah: Vec<f64> = (0..HIDDEN)
            .map(|i| dhc[i] * (1.0 - cache.hc[i] * cache.hc[i]))
            .collect();
        grads.wh.add_outer(&dah, &cache.x);
        grads.uh.add_outer(&dah, &cache.rh);
        for i in 0..HIDDEN {
            grads.bh[i] += dah[i];
        }
        layer.wh.tr_matvec_add(&dah, &mut dx);
        let mut drh = vec![0.0; HIDDEN];
        layer.uh.tr_matvec_add(&dah, &mut drh);
        let mut dr = vec![0.0; HIDDEN];
        for i in 0..HIDDEN {
            dr[i] = drh[i] * cache.h_prev[i];
            dh_prev[i] += drh[i] * cache.r[i];
        }

        // z = sigmoid(wz x + uz h_prev + bz)
        let daz: Vec<f64> = (0..HIDDEN)
            .map(|i| dz[i] * cache.z[i] * (1.0 - cache.z[i]))
            .collect();
        grads.wz.add_outer(&daz, &cache.x);
        grads.uz.add_outer(&daz, &cache.h_prev);
        for i in 0..HIDDEN {
            grads.bz[i] += daz[i];
        }
        layer.wz.tr_matvec_add(&daz, &mut dx);
        layer.uz.tr_matvec_add(&daz, &mut dh_prev);

        // r = sigmoid(wr x + ur h_prev + br)
        let dar: Vec<f64> = (0..HIDDEN)
            .map(|i| dr[i] * cache.r[i] * (1.0 - cache.r[i]))
            .collect();
        grads.wr.add_outer(&dar, &cache.x);
        grads.ur.add_outer(&dar, &cache.h_prev);
        for i in 0..HIDDEN {
            grads.br[i] += dar[i];
        }
        layer.wr.tr_matvec_add(&dar, &mut dx);
        layer.ur.tr_matvec_add(&dar, &mut dh_prev);

        (dx, dh_prev)
    }
}

// ---------------------------------------------------------------------------
// Objective
// ---------------------------------------------------------------------------

/// Received power `|w^H H f|^2` with full apertures steered at the given
/// directions.
pub fn alignment_objective(channel: &CMatrix, tx_angle: f64, rx_angle: f64) -> f64 {
    let f = steering(channel.n_cols(), NormalizedAngle::new(tx_angle));
    let w = steering(channel.n_rows(), NormalizedAngle::new(rx_angle));
    channel.bilinear(w.elements(), f.elements()).norm_sqr()
}

/// Training loss: the negated received power, differentiable in both angles.
pub fn alignment_loss(channel: &CMatrix, tx_angle: f64, rx_angle: f64) -> f64 {
    -alignment_objective(channel, tx_angle, rx_angle)
}

/// [`alignment_loss`] with the beams formed on the first `tx_aperture` /
/// `rx_aperture` antennas (zero-padded): the received power when only a
/// leading subarray is activated. Every subarray objective peaks at the true
/// path angles but with a mainlobe `2/aperture` wide, which is what the
/// training curriculum anneals over.
pub fn subarray_loss(
    channel: &CMatrix,
    tx_angle: f64,
    rx_angle: f64,
    tx_aperture: usize,
    rx_aperture: usize,
) -> f64 {
    let mut f = vec![Complex64::new(0.0, 0.0); channel.n_cols()];
    let fs = steering(tx_aperture, NormalizedAngle::new(tx_angle));
    f[..tx_aperture].copy_from_slice(fs.elements());
    let mut w = vec![Complex64::new(0.0, 0.0); channel.n_rows()];
    let ws = steering(rx_aperture, NormalizedAngle::new(rx_angle));
    w[..rx_aperture].copy_from_slice(ws.elements());
    -channel.bilinear(&w, &f).norm_sqr()
}

/// [`subarray_loss`] plus its analytic partial derivatives
/// `(loss, d/d_tx, d/d_rx)`.
pub fn subarray_loss_grad(
    channel: &CMatrix,
    tx_angle: f64,
    rx_angle: f64,
    tx_aperture: usize,
    rx_aperture: usize,
) -> (f64, f64, f64) {
    assert!(tx_aperture >= 1 && tx_aperture <= channel.n_cols());
    assert!(rx_aperture >= 1 && rx_aperture <= channel.n_rows());
    let f = steering(tx_aperture, NormalizedAngle::new(tx_angle));
    let w = steering(rx_aperture, NormalizedAngle::new(rx_angle));
    // H f over the active columns only.
    let hf: Vec<Complex64> = (0..rx_aperture)
        .map(|m| {
            let mut acc = Complex64::new(0.0, 0.0);
            for (n, fe) in f.elements().iter().enumerate() {
                acc += channel.get(m, n) * fe;
            }
            acc
        })
        .collect();
    let g: Complex64 = w
        .elements()
        .iter()
        .zip(&hf)
        .map(|(wm, hm)| wm.conj() * hm)
        .sum();
    // dg/d(rx) = sum_m conj(j m pi w_m) (H f)_m
    let mut dg_rx = Complex64::new(0.0, 0.0);
    for (m, (wm, hm)) in w.elements().iter().zip(&hf).enumerate() {
        dg_rx += Complex64::new(0.0, -(m as f64) * PI) * wm.conj() * hm;
    }
    // dg/d(tx) = sum_n (w^H H)_n j n pi f_n
    let mut dg_tx = Complex64::new(0.0, 0.0);
    for (n, fe) in f.elements().iter().enumerate() {
        let mut col = Complex64::new(0.0, 0.0);
        for (m, wm) in w.elements().iter().enumerate() {
            col += wm.conj() * channel.get(m, n);
        }
        dg_tx += col * Complex64::new(0.0, (n as f64) * PI) * fe;
    }
    let loss = -g.norm_sqr();
    let dtx = -2.0 * (g.conj() * dg_tx).re;
    let drx = -2.0 * (g.conj() * dg_rx).re;
    (loss, dtx, drx)
}

/// Loss plus its analytic partial derivatives `(loss, d/d_tx, d/d_rx)` at
/// full aperture.
pub fn alignment_loss_grad(channel: &CMatrix, tx_angle: f64, rx_angle: f64) -> (f64, f64, f64) {
    subarray_loss_grad(
        channel,
        tx_angle,
        rx_angle,
        channel.n_cols(),
        channel.n_rows(),
    )
}

// ---------------------------------------------------------------------------
// Net pair and alignment
// ---------------------------------------------------------------------------

/// Transmit- and receive-side estimators; same architecture, separate
/// parameters, jointly trained.
#[derive(Debug, Clone, PartialEq)]
pub struct NetPair {
    pub tx: QssrNet,
    pub rx: QssrNet,
}

impl NetPair {
    pub fn init(seed: u64) -> Self {
        let mut tx_rng = RngStream::derived(seed, &[domain::NET_INIT, 0]);
        let mut rx_rng = RngStream::derived(seed, &[domain::NET_INIT, 1]);
        Self {
            tx: QssrNet::init(&mut tx_rng),
            rx: QssrNet::init(&mut rx_rng),
        }
    }
}

/// Adapts one network to the estimator interface. Only quaternary layers are
/// fed to the GRU; a binary tail layer (non-power-of-4 apertures) is omitted.
pub struct NetEstimator<'a>(pub &'a QssrNet);

impl AngleEstimator for NetEstimator<'_> {
    fn estimate(&self, scan: &SideScan) -> NormalizedAngle {
        let quaternary: Vec<LayerMeasurement> = scan
            .layers
            .iter()
            .filter(|l| l.powers.len() == 4)
            .cloned()
            .collect();
        self.0
            .predict_angle(&quaternary)
            .expect("quaternary layers have 4 probes and finite features")
    }
}

/// Quaternary alignment with network-based angle estimation. The scan skips
/// the binary tail layer so the sequence is purely quaternary.
pub fn qssr_net_search(
    channel: &CMatrix,
    noise_std: f64,
    rng: &mut RngStream,
    shaper: Option<&dyn ProbeShaper>,
    nets: &NetPair,
) -> Result<AlignmentResult, SearchError> {
    crate::search::qssr_search_with(
        channel,
        noise_std,
        rng,
        shaper,
        &NetEstimator(&nets.tx),
        &NetEstimator(&nets.rx),
        false,
    )
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub n_tx: usize,
    pub n_rx: usize,
    pub dataset_size: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_initial: f64,
    pub lr_decay: f64,
    pub lr_decay_every: usize,
    pub snr_min_db: f64,
    pub snr_max_db: f64,
    pub seed: u64,
    pub workers: usize,
    /// Coherently accumulated pilot repetitions per beam measurement.
    pub pilots_per_measurement: u32,
    /// Epochs per loss-aperture continuation stage. The training objective is
    /// the received power of a leading subarray whose size starts at 4 and
    /// doubles every stage until the full aperture is reached; wide early
    /// mainlobes give the networks gradient signal everywhere in the angular
    /// domain. `0` disables the curriculum (full aperture throughout).
    pub aperture_stage_epochs: usize,
}

impl TrainConfig {
    /// Desk-scale defaults that converge in minutes on one core.
    pub fn desk_default(n_tx: usize, n_rx: usize, seed: u64) -> Self {
        Self {
            n_tx,
            n_rx,
            dataset_size: 20_000,
            epochs: 50,
            batch_size: 100,
            lr_initial: 1e-3,
            lr_decay: 0.95,
            lr_decay_every: 10,
            snr_min_db: 5.0,
            snr_max_db: 30.0,
            seed,
            workers: 1,
            pilots_per_measurement: DEFAULT_PILOTS,
            aperture_stage_epochs: 5,
        }
    }

    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        self.lr_initial * self.lr_decay.powi((epoch / self.lr_decay_every) as i32)
    }

    /// Warm-up phases before end-to-end training, as `(aperture, epochs)`
    /// pairs; aperture 0 marks the squared-error bootstrap phase. Derived
    /// from `aperture_stage_epochs` (see [`TrainPhase`]).
    pub fn warmup_plan(&self) -> Vec<(usize, usize)> {
        if self.aperture_stage_epochs == 0 {
            return Vec::new();
        }
        let s = self.aperture_stage_epochs;
        let full = self.n_tx.max(self.n_rx);
        let mut plan = vec![(0, 4 * s)];
        if full > 16 {
            plan.push((16, 2 * s));
        }
        plan.push((full, 7 * s));
        plan
    }

    /// Power-objective warm-up phases avoid the deepest noise so their
    /// gradient signal is not swamped by unestimable examples. The bootstrap
    /// regression and the end-to-end phase train on the full range: noisy
    /// patterns there teach the networks to fall back to the anchor beam.
    pub fn snr_floor_at(&self, epoch: usize) -> f64 {
        match self.phase_at(epoch) {
            TrainPhase::TeacherPower { tx_aperture, .. } => {
                // The full-aperture polish stage trains on the cleanest part
                // of the range, where sub-beamwidth supervision is sharp.
                if tx_aperture == self.n_tx {
                    self.snr_min_db.max(20.0)
                } else {
                    self.snr_min_db.max(15.0)
                }
            }
            _ => self.snr_min_db,
        }
    }

    /// Training phase in effect at an epoch.
    pub fn phase_at(&self, epoch: usize) -> TrainPhase {
        let mut start = 0usize;
        for (aperture, len) in self.warmup_plan() {
            if epoch < start + len {
                return if aperture == 0 {
                    TrainPhase::Bootstrap
                } else {
                    TrainPhase::TeacherPower {
                        tx_aperture: aperture.min(self.n_tx),
                        rx_aperture: aperture.min(self.n_rx),
                    }
                };
            }
            start += len;
        }
        TrainPhase::EndToEnd
    }
}

/// Training proceeds in three phases. The bootstrap regresses both raw
/// outputs onto the true angles (a unimodal objective that escapes the
/// uniform-initialization plateau of the multimodal power objective), the
/// teacher phase descends each side's subarray received-power loss with the
/// scan and the opposite side held at the truth, and the final phase is the
/// deployment objective: both networks driving the scan, joint full-aperture
/// received power.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainPhase {
    Bootstrap,
    TeacherPower {
        tx_aperture: usize,
        rx_aperture: usize,
    },
    EndToEnd,
}

/// Networks plus optimizer state; everything needed to resume training.
pub struct TrainState {
    pub nets: NetPair,
    pub adam_tx: Adam,
    pub adam_rx: Adam,
    pub epoch: usize,
}

impl TrainState {
    pub fn fresh(cfg: &TrainConfig) -> Self {
        let lens = QssrNet::group_lens();
        Self {
            nets: NetPair::init(cfg.seed),
            adam_tx: Adam::new(&lens, cfg.lr_initial),
            adam_rx: Adam::new(&lens, cfg.lr_initial),
            epoch: 0,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct TrainReport {
    /// Mean training loss per epoch (negated received power).
    pub epoch_losses: Vec<f64>,
}

/// Channel source for training; must be pure in the example index.
pub type ChannelSampler<'a> = dyn Fn(u64) -> PathChannel + Sync + 'a;

/// Default sampler: the LoS-dominated ensemble, one substream per example.
pub fn los_sampler(cfg: &TrainConfig) -> impl Fn(u64) -> PathChannel + Sync + '_ {
    let ensemble = crate::channel::ChannelEnsembleConfig::los_default(cfg.n_tx, cfg.n_rx, cfg.seed);
    move |idx: u64| {
        let mut rng = RngStream::derived(ensemble.seed, &[domain::CHANNEL, idx]);
        crate::channel::generate_los_channel(&ensemble, &mut rng)
    }
}

fn example_snr_std(cfg: &TrainConfig, epoch: usize, idx: u64) -> f64 {
    let mut rng = RngStream::derived(cfg.seed, &[domain::TRAIN_SNR, idx]);
    let unit = rng.uniform_unit();
    let floor = cfg.snr_floor_at(epoch);
    let snr_db = floor + (cfg.snr_max_db - floor) * unit;
    crate::channel::effective_noise_std(snr_db, cfg.pilots_per_measurement)
}

struct ChunkOut {
    grad_tx: QssrNet,
    grad_rx: QssrNet,
    loss_sum: f64,
}

/// Evaluate one training example: run the measurement collection, substitute
/// the networks for the analytic estimation steps, and accumulate gradients.
fn run_example(
    cfg: &TrainConfig,
    sampler: &ChannelSampler,
    nets: &NetPair,
    epoch: usize,
    idx: u64,
    out: &mut ChunkOut,
) -> Result<(), NeuralError> {
    let channel = sampler(idx);
    let sigma = example_snr_std(cfg, epoch, idx);
    let mut noise = RngStream::derived(cfg.seed, &[domain::TRAIN_NOISE, epoch as u64, idx]);
    let mut link = Link::new(&channel.matrix, sigma, &mut noise, None);

    let phase = if channel.paths.is_empty() {
        // Warm-up phases need true angles; pathless channels fall back to
        // the deployment objective.
        TrainPhase::EndToEnd
    } else {
        cfg.phase_at(epoch)
    };

    let w_quasi = crate::search::quasi_omni(cfg.n_rx);
    let tx_scan = quaternary_descent(&mut link, Side::Tx, cfg.n_tx, &w_quasi, 0.0, false)?;
    let tx_features = build_features(&tx_scan.layers)?;
    let tx_trace = nets.tx.forward_trace(&tx_features)?;
    let tx_anchor = anchor_pointing(&tx_scan.layers);
    let tx_angle = NormalizedAngle::new(tx_anchor + tx_trace.raw_output);

    // During warm-up the receive scan is taken behind a transmit beam at the
    // true departure angle, so receive-side features are informative before
    // the transmit network has converged.
    let scan_beam_angle = match phase {
        TrainPhase::EndToEnd => tx_angle,
        _ => channel.paths[0].aod,
    };
    let f = steering(cfg.n_tx, scan_beam_angle);
    let rx_scan = quaternary_descent(
        &mut link,
        Side::Rx,
        cfg.n_rx,
        f.elements(),
        scan_beam_angle.value(),
        false,
    )?;
    let rx_features = build_features(&rx_scan.layers)?;
    let rx_trace = nets.rx.forward_trace(&rx_features)?;
    let rx_anchor = anchor_pointing(&rx_scan.layers);
    let rx_angle = NormalizedAngle::new(rx_anchor + rx_trace.raw_output);

    let (loss, dtx, drx) = match phase {
        TrainPhase::Bootstrap => {
            let truth = &channel.paths[0];
            // Wrapped residuals keep the regression target continuous across
            // the periodic boundary.
            let e_tx =
                crate::arraymath::wrap_delta(tx_anchor + tx_trace.raw_output, truth.aod.value());
            let e_rx =
                crate::arraymath::wrap_delta(rx_anchor + rx_trace.raw_output, truth.aoa.value());
            (e_tx * e_tx + e_rx * e_rx, 2.0 * e_tx, 2.0 * e_rx)
        }
        TrainPhase::TeacherPower {
            tx_aperture,
            rx_aperture,
        } => {
            let truth = &channel.paths[0];
            let (l_tx, dtx, _) = subarray_loss_grad(
                &channel.matrix,
                tx_angle.value(),
                truth.aoa.value(),
                tx_aperture,
                rx_aperture,
            );
            let (l_rx, _, drx) = subarray_loss_grad(
                &channel.matrix,
                truth.aod.value(),
                rx_angle.value(),
                tx_aperture,
                rx_aperture,
            );
            (l_tx + l_rx, dtx, drx)
        }
        TrainPhase::EndToEnd => subarray_loss_grad(
            &channel.matrix,
            tx_angle.value(),
            rx_angle.value(),
            cfg.n_tx,
            cfg.n_rx,
        ),
    };
    if !loss.is_finite() {
        return Err(NeuralError::Diverged { epoch, batch: 0 });
    }
    nets.tx.backward(&tx_trace, dtx, &mut out.grad_tx);
    nets.rx.backward(&rx_trace, drx, &mut out.grad_rx);
    out.loss_sum += loss;
    Ok(())
}

/// Examples per reduction chunk. Fixed so batch gradients are identical for
/// every worker count.
const CHUNK: usize = 25;

fn process_batch(
    cfg: &TrainConfig,
    sampler: &ChannelSampler,
    nets: &NetPair,
    epoch: usize,
    batch: &[u64],
) -> Result<ChunkOut, NeuralError> {
    let chunks: Vec<&[u64]> = batch.chunks(CHUNK).collect();
    let mut slots: Vec<Option<Result<ChunkOut, NeuralError>>> =
        (0..chunks.len()).map(|_| None).collect();
    let run_chunk = |chunk: &[u64]| -> Result<ChunkOut, NeuralError> {
        let mut out = ChunkOut {
            grad_tx: QssrNet::zeros(),
            grad_rx: QssrNet::zeros(),
            loss_sum: 0.0,
        };
        for &idx in chunk {
            run_example(cfg, sampler, nets, epoch, idx, &mut out)?;
        }
        Ok(out)
    };
    if cfg.workers <= 1 || chunks.len() == 1 {
        for (slot, chunk) in slots.iter_mut().zip(&chunks) {
            *slot = Some(run_chunk(chunk));
        }
    } else {
        let next = std::sync::atomic::AtomicUsize::new(0);
        let slot_cells: Vec<std::sync::Mutex<Option<Result<ChunkOut, NeuralError>>>> =
            (0..chunks.len()).map(|_| std::sync::Mutex::new(None)).collect();
        std::thread::scope(|scope| {
            for _ in 0..cfg.workers.min(chunks.len()) {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                    if i >= chunks.len() {
                        break;
                    }
                    let result = run_chunk(chunks[i]);
                    *slot_cells[i].lock().unwrap() = Some(result);
                });
            }
        });
        for (slot, cell) in slots.iter_mut().zip(slot_cells) {
            *slot = cell.into_inner().unwrap();
        }
    }
    // Deterministic reduction in chunk order.
    let mut total = ChunkOut {
        grad_tx: QssrNet::zeros(),
        grad_rx: QssrNet::zeros(),
        loss_sum: 0.0,
    };
    for slot in slots {
        let chunk = slot.expect("chunk processed")?;
        total.grad_tx.add_assign(&chunk.grad_tx);
        total.grad_rx.add_assign(&chunk.grad_rx);
        total.loss_sum += chunk.loss_sum;
    }
    Ok(total)
}

/// Joint training of both networks against the received-power objective.
/// Resumable: continuing a checkpointed state reproduces the uninterrupted
/// run exactly, because every random quantity is derived from
/// `(seed, epoch, example)`.
pub fn train(
    cfg: &TrainConfig,
    sampler: &ChannelSampler,
    resume: Option<TrainState>,
) -> Result<(TrainState, TrainReport), NeuralError> {
    assert!(cfg.n_tx.trailing_zeros() % 2 == 0, "training expects power-of-4 apertures");
    assert!(cfg.n_rx.trailing_zeros() % 2 == 0, "training expects power-of-4 apertures");
    let mut state = resume.unwrap_or_else(|| TrainState::fresh(cfg));
    let mut report = TrainReport::default();
    for epoch in state.epoch..cfg.epochs {
        let lr = cfg.learning_rate_at(epoch);
        state.adam_tx.set_lr(lr);
        state.adam_rx.set_lr(lr);

        let mut order: Vec<u64> = (0..cfg.dataset_size as u64).collect();
        let mut shuffle_rng = RngStream::derived(cfg.seed, &[domain::SHUFFLE, epoch as u64]);
        shuffle_rng.shuffle(&mut order);

        let mut epoch_loss = 0.0;
        for (batch_no, batch) in order.chunks(cfg.batch_size).enumerate() {
            let out = process_batch(cfg, sampler, &state.nets, epoch, batch).map_err(|e| {
                match e {
                    NeuralError::Diverged { epoch, .. } => NeuralError::Diverged {
                        epoch,
                        batch: batch_no,
                    },
                    other => other,
                }
            })?;
            if !out.loss_sum.is_finite() {
                return Err(NeuralError::Diverged {
                    epoch,
                    batch: batch_no,
                });
            }
            epoch_loss += out.loss_sum;
            let scale = 1.0 / batch.len() as f64;
            let mut grad_tx = out.grad_tx;
            let mut grad_rx = out.grad_rx;
            grad_tx.scale(scale);
            grad_rx.scale(scale);
            state
                .adam_tx
                .step(&mut state.nets.tx.param_groups_mut(), &grad_tx.param_groups());
            state
                .adam_rx
                .step(&mut state.nets.rx.param_groups_mut(), &grad_rx.param_groups());
        }
        report.epoch_losses.push(epoch_loss / cfg.dataset_size as f64);
        state.epoch = epoch + 1;
    }
    Ok((state, report))
}

// ---------------------------------------------------------------------------
// Gradient checking
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub group: String,
    pub max_rel_error: f64,
}

/// Compare analytic gradients against central finite differences for
/// `probes` randomly chosen weights per parameter group. `loss` maps the raw
/// network output to `(value, d value/d raw)`.
pub fn check_gradients(
    net: &QssrNet,
    features: &[FeatureVector],
    loss: &dyn Fn(f64) -> (f64, f64),
    probes: usize,
    seed: u64,
) -> Vec<GradCheckReport> {
    let trace = net.forward_trace(features).expect("finite features");
    let (_, dout) = loss(trace.raw_output);
    let mut grads = QssrNet::zeros();
    net.backward(&trace, dout, &mut grads);
    let analytic = grads.param_groups();
    let names = QssrNet::param_group_names();

    let mut work = net.clone();
    let mut rng = RngStream::derived(seed, &[0xC0DE]);
    let mut reports = Vec::with_capacity(names.len());
    let h = 1e-5;
    for (gi, name) in names.iter().enumerate() {
        let len = analytic[gi].len();
        let mut max_rel: f64 = 0.0;
        for _ in 0..probes {
            let i = rng.below(len as u64) as usize;
            let original = work.param_groups()[gi][i];
            {
                let mut groups = work.param_groups_mut();
                groups[gi][i] = original + h;
            }
            let up = loss(work.forward_trace(features).unwrap().raw_output).0;
            {
                let mut groups = work.param_groups_mut();
                groups[gi][i] = original - h;
            }
            let down = loss(work.forward_trace(features).unwrap().raw_output).0;
            {
                let mut groups = work.param_groups_mut();
                groups[gi][i] = original;
            }
            let fd = (up - down) / (2.0 * h);
            let an = analytic[gi][i];
            // The floor keeps finite-difference noise on near-zero gradient
            // coordinates from registering as relative error.
            let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-6);
            max_rel = max_rel.max(rel);
        }
        reports.push(GradCheckReport {
            group: name.clone(),
            max_rel_error: max_rel,
        });
    }
    reports
}

// ---------------------------------------------------------------------------
// Checkpointing
// ---------------------------------------------------------------------------

const CHECKPOINT_MAGIC: &str = "beamalign-checkpoint v1";

fn write_tensor(out: &mut String, name: &str, rows: usize, cols: usize, data: &[f64]) {
    writeln!(out, "tensor {name} {rows} {cols}").unwrap();
    for r in 0..rows {
        let row: Vec<String> = (0..cols.max(1))
            .map(|c| format!("{:016x}", data[r * cols.max(1) + c].to_bits()))
            .collect();
        writeln!(out, "{}", row.join(" ")).unwrap();
    }
}

struct TensorReader<'a> {
    lines: std::iter::Peekable<std::str::Lines<'a>>,
}

impl<'a> TensorReader<'a> {
    fn read_tensor(&mut self, want_name: &str) -> Result<Vec<f64>, NeuralError> {
        let header = self
            .lines
            .next()
            .ok_or_else(|| NeuralError::Checkpoint(format!("missing tensor {want_name}")))?;
        let parts: Vec<&str> = header.split_whitespace().collect();
        if parts.len() != 4 || parts[0] != "tensor" {
            return Err(NeuralError::Checkpoint(format!(
                "expected tensor header for {want_name}, got '{header}'"
            )));
        }
        if parts[1] != want_name {
            return Err(NeuralError::Checkpoint(format!(
                "expected tensor {want_name}, found {}",
                parts[1]
            )));
        }
        let rows: usize = parts[2]
            .parse()
            .map_err(|_| NeuralError::Checkpoint(format!("bad rows in '{header}'")))?;
        let cols: usize = parts[3]
            .parse()
            .map_err(|_| NeuralError::Checkpoint(format!("bad cols in '{header}'")))?;
        let mut data = Vec::with_capacity(rows * cols.max(1));
        for _ in 0..rows {
            let line = self
                .lines
                .next()
                .ok_or_else(|| NeuralError::Checkpoint(format!("{want_name}: truncated data")))?;
            for word in line.split_whitespace() {
                let bits = u64::from_str_radix(word, 16).map_err(|_| {
                    NeuralError::Checkpoint(format!("{want_name}: bad hex '{word}'"))
                })?;
                data.push(f64::from_bits(bits));
            }
        }
        if data.len() != rows * cols.max(1) {
            return Err(NeuralError::Checkpoint(format!(
                "{want_name}: expected {} values, got {}",
                rows * cols.max(1),
                data.len()
            )));
        }
        Ok(data)
    }
}

/// Serialize networks, optimizer moments, and the epoch counter. The layout
/// is line-oriented text with f64 bit patterns in hex, so a round trip is
/// exact.
pub fn save_checkpoint(
    path: &Path,
    state: &TrainState,
    cfg: &TrainConfig,
) -> Result<(), NeuralError> {
    let mut out = String::new();
    writeln!(out, "{CHECKPOINT_MAGIC}").unwrap();
    writeln!(out, "n_tx {}", cfg.n_tx).unwrap();
    writeln!(out, "n_rx {}", cfg.n_rx).unwrap();
    writeln!(out, "hidden {HIDDEN}").unwrap();
    writeln!(out, "feature_dim {FEATURE_DIM}").unwrap();
    writeln!(out, "epoch {}", state.epoch).unwrap();
    let names = QssrNet::param_group_names();
    let shapes = QssrNet::param_group_shapes();
    for (side, net, adam) in [
        ("tx", &state.nets.tx, &state.adam_tx),
        ("rx", &state.nets.rx, &state.adam_rx),
    ] {
        let groups = net.param_groups();
        for ((name, &(rows, cols)), data) in names.iter().zip(&shapes).zip(&groups) {
            write_tensor(&mut out, &format!("{side}.{name}"), rows, cols, data);
        }
        let (t, m, v) = adam.state();
        writeln!(out, "adam {side} {t}").unwrap();
        for ((name, &(rows, cols)), buf) in names.iter().zip(&shapes).zip(m) {
            write_tensor(&mut out, &format!("{side}.{name}.m"), rows, cols, buf);
        }
        for ((name, &(rows, cols)), buf) in names.iter().zip(&shapes).zip(v) {
            write_tensor(&mut out, &format!("{side}.{name}.v"), rows, cols, buf);
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Load a checkpoint written by [`save_checkpoint`], validating shapes and
/// returning the embedded `(n_tx, n_rx)` alongside the state.
pub fn load_checkpoint(path: &Path) -> Result<(TrainState, usize, usize), NeuralError> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().peekable();
    let magic = lines
        .next()
        .ok_or_else(|| NeuralError::Checkpoint("empty file".into()))?;
    if magic != CHECKPOINT_MAGIC {
        return Err(NeuralError::Checkpoint(format!(
            "unrecognized header '{magic}'"
        )));
    }
    let mut read_kv = |key: &str| -> Result<usize, NeuralError> {
        let line = lines
            .next()
            .ok_or_else(|| NeuralError::Checkpoint(format!("missing {key}")))?;
        let (k, v) = line
            .split_once(' ')
            .ok_or_else(|| NeuralError::Checkpoint(format!("bad line '{line}'")))?;
        if k != key {
            return Err(NeuralError::Checkpoint(format!(
                "expected {key}, found {k}"
            )));
        }
        v.parse()
            .map_err(|_| NeuralError::Checkpoint(format!("bad value for {key}: '{v}'")))
    };
    let n_tx = read_kv("n_tx")?;
    let n_rx = read_kv("n_rx")?;
    let hidden = read_kv("hidden")?;
    let feature_dim = read_kv("feature_dim")?;
    if hidden != HIDDEN || feature_dim != FEATURE_DIM {
        return Err(NeuralError::Checkpoint(format!(
            "architecture mismatch: hidden {hidden}, feature_dim {feature_dim}"
        )));
    }
    let epoch = read_kv("epoch")?;

    let names = QssrNet::param_group_names();
    let lens = QssrNet::group_lens();
    let mut reader = TensorReader { lines };
    let mut nets = NetPair {
        tx: QssrNet::zeros(),
        rx: QssrNet::zeros(),
    };
    let mut adams = Vec::new();
    for (side, net) in [("tx", &mut nets.tx), ("rx", &mut nets.rx)] {
        {
            let mut groups = net.param_groups_mut();
            for (gi, name) in names.iter().enumerate() {
                let data = reader.read_tensor(&format!("{side}.{name}"))?;
                if data.len() != groups[gi].len() {
                    return Err(NeuralError::Checkpoint(format!(
                        "{side}.{name}: wrong length"
                    )));
                }
                groups[gi].copy_from_slice(&data);
            }
        }
        let adam_line = reader
            .lines
            .next()
            .ok_or_else(|| NeuralError::Checkpoint("missing adam line".into()))?;
        let parts: Vec<&str> = adam_line.split_whitespace().collect();
        if parts.len() != 3 || parts[0] != "adam" || parts[1] != side {
            return Err(NeuralError::Checkpoint(format!(
                "bad adam line '{adam_line}'"
            )));
        }
        let t: u64 = parts[2]
            .parse()
            .map_err(|_| NeuralError::Checkpoint("bad adam step count".into()))?;
        let mut m = Vec::new();
        for name in &names {
            m.push(reader.read_tensor(&format!("{side}.{name}.m"))?);
        }
        let mut v = Vec::new();
        for name in &names {
            v.push(reader.read_tensor(&format!("{side}.{name}.v"))?);
        }
        let mut adam = Adam::new(&lens, 0.0);
        adam.restore(t, m, v);
        adams.push(adam);
    }
    let adam_rx = adams.pop().unwrap();
    let adam_tx = adams.pop().unwrap();
    Ok((
        TrainState {
            nets,
            adam_tx,
            adam_rx,
            epoch,
        },
        n_tx,
        n_rx,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{generate_los_channel, ChannelEnsembleConfig};

    fn layer(pointings: [f64; 4], powers: [f64; 4]) -> LayerMeasurement {
        let mut best = 0;
        for i in 1..4 {
            if powers[i] > powers[best] {
                best = i;
            }
        }
        LayerMeasurement {
            layer_index: 1,
            layer_size: 4,
            first_index: 1,
            pointings: pointings.to_vec(),
            powers: powers.to_vec(),
            chosen_index: best + 1,
            degenerate: powers.iter().all(|&p| p == 0.0),
        }
    }

    #[test]
    fn features_normalize_by_max() {
        let log = vec![layer([-0.75, -0.25, 0.25, 0.75], [4.0, 2.0, 1.0, 1.0])];
        let feats = build_features(&log).unwrap();
        assert_eq!(feats.len(), 1);
        assert_eq!(&feats[0].values[..4], &[-0.75, -0.25, 0.25, 0.75]);
        assert_eq!(&feats[0].values[4..], &[1.0, 0.5, 0.25, 0.25]);
        assert!(!feats[0].degenerate);
    }

    #[test]
    fn features_scale_invariant() {
        let a = build_features(&[layer([0.0; 4], [4.0, 2.0, 1.0, 1.0])]).unwrap();
        let b = build_features(&[layer([0.0; 4], [4e-7, 2e-7, 1e-7, 1e-7])]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn degenerate_layer_one_hot() {
        let feats = build_features(&[layer([0.0; 4], [0.0; 4])]).unwrap();
        assert!(feats[0].degenerate);
        assert_eq!(&feats[0].values[4..], &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn feature_sequence_length_tracks_layers() {
        // A 64-antenna transmit scan has three quaternary layers.
        let log: Vec<LayerMeasurement> = (0..3)
            .map(|_| layer([0.1, 0.2, 0.3, 0.4], [1.0, 2.0, 3.0, 4.0]))
            .collect();
        assert_eq!(build_features(&log).unwrap().len(), 3);
    }

    #[test]
    fn zero_net_maps_everything_to_zero() {
        let net = QssrNet::zeros();
        let feats = build_features(&[layer([0.3, 0.4, 0.5, 0.6], [1.0, 0.4, 0.1, 0.2])]).unwrap();
        let hidden = net.gru_forward(&feats).unwrap();
        assert!(hidden.iter().all(|&h| h == 0.0));
    }

    #[test]
    fn empty_sequence_returns_initial_state() {
        let net = NetPair::init(5).tx;
        let hidden = net.gru_forward(&[]).unwrap();
        assert!(hidden.iter().all(|&h| h == 0.0));
    }

    #[test]
    fn non_finite_features_rejected() {
        let net = NetPair::init(5).tx;
        let mut f = FeatureVector {
            values: [0.0; 8],
            degenerate: false,
        };
        f.values[3] = f64::NAN;
        assert!(matches!(
            net.gru_forward(&[f]),
            Err(NeuralError::NonFiniteInput)
        ));
    }

    /// Independent scalar re-implementation of the gate equations, all loops
    /// and indexing, no shared code with the network.
    fn scalar_gru_oracle(net: &QssrNet, features: &[FeatureVector]) -> Vec<f64> {
        let mut states = vec![vec![0.0; HIDDEN]; GRU_LAYERS];
        for feat in features {
            let mut x: Vec<f64> = feat.values.to_vec();
            for k in 0..GRU_LAYERS {
                let p = &net.gru[k];
                let d = x.len();
                let mut z_vec = vec![0.0; HIDDEN];
                let mut r_vec = vec![0.0; HIDDEN];
                for i in 0..HIDDEN {
                    let mut az = p.bz[i];
                    let mut ar = p.br[i];
                    for j in 0..d {
                        az += p.wz.data[i * d + j] * x[j];
                        ar += p.wr.data[i * d + j] * x[j];
                    }
                    for j in 0..HIDDEN {
                        az += p.uz.data[i * HIDDEN + j] * states[k][j];
                        ar += p.ur.data[i * HIDDEN + j] * states[k][j];
                    }
                    z_vec[i] = 1.0 / (1.0 + (-az).exp());
                    r_vec[i] = 1.0 / (1.0 + (-ar).exp());
                }
                let mut h_new = vec![0.0; HIDDEN];
                for i in 0..HIDDEN {
                    let mut ah = p.bh[i];
                    for j in 0..d {
                        ah += p.wh.data[i * d + j] * x[j];
                    }
                    for j in 0..HIDDEN {
                        ah += p.uh.data[i * HIDDEN + j] * (r_vec[j] * states[k][j]);
                    }
                    let hc = ah.tanh();
                    h_new[i] = (1.0 - z_vec[i]) * states[k][i] + z_vec[i] * hc;
                }
                states[k] = h_new.clone();
                x = h_new;
            }
        }
        states[GRU_LAYERS - 1].clone()
    }

    #[test]
    fn gru_forward_matches_scalar_oracle() {
        let net = NetPair::init(7).tx;
        let log = vec![
            layer([-0.9, -0.7, -0.5, -0.3], [0.4, 1.0, 0.7, 0.1]),
            layer([-0.8, -0.75, -0.7, -0.65], [0.2, 0.9, 1.0, 0.3]),
            layer([-0.78, -0.76, -0.74, -0.72], [1.0, 0.8, 0.2, 0.05]),
        ];
        let feats = build_features(&log).unwrap();
        let got = net.gru_forward(&feats).unwrap();
        let want = scalar_gru_oracle(&net, &feats);
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-10, "got {g} want {w}");
        }
    }

    #[test]
    fn predicted_angle_is_wrapped() {
        // Force a known raw output through the head bias.
        let mut net = QssrNet::zeros();
        net.head.b3[0] = 1.3;
        let log = vec![layer([0.0; 4], [1.0, 0.5, 0.2, 0.1])];
        let angle = net.predict_angle(&log).unwrap();
        assert!((angle.value() - (-0.7)).abs() < 1e-12);
        net.head.b3[0] = -0.2;
        let angle = net.predict_angle(&log).unwrap();
        assert!((angle.value() + 0.2).abs() < 1e-12);
    }

    fn unit_channel(n_tx: usize, n_rx: usize, aod: f64, aoa: f64) -> CMatrix {
        let mut m = CMatrix::zeros(n_rx, n_tx);
        let u = steering(n_rx, NormalizedAngle::new(aoa));
        let v = steering(n_tx, NormalizedAngle::new(aod));
        m.add_scaled_outer(Complex64::new(1.0, 0.0), u.elements(), v.elements());
        m
    }

    #[test]
    fn loss_at_oracle_angles_is_minus_one() {
        let h = unit_channel(64, 16, 0.37, -0.21);
        assert!((alignment_loss(&h, 0.37, -0.21) + 1.0).abs() < 1e-12);
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        let cfg = ChannelEnsembleConfig::los_default(64, 16, 31);
        let mut rng = RngStream::derived(31, &[domain::CHANNEL, 0]);
        let ch = generate_los_channel(&cfg, &mut rng);
        let phi = 0.1234;
        let theta = -0.56;
        let (_, dtx, drx) = alignment_loss_grad(&ch.matrix, phi, theta);
        let h = 1e-7;
        let fd_tx = (alignment_loss(&ch.matrix, phi + h, theta)
            - alignment_loss(&ch.matrix, phi - h, theta))
            / (2.0 * h);
        let fd_rx = (alignment_loss(&ch.matrix, phi, theta + h)
            - alignment_loss(&ch.matrix, phi, theta - h))
            / (2.0 * h);
        assert!((dtx - fd_tx).abs() / fd_tx.abs().max(1e-12) < 1e-4, "{dtx} vs {fd_tx}");
        assert!((drx - fd_rx).abs() / fd_rx.abs().max(1e-12) < 1e-4, "{drx} vs {fd_rx}");
    }

    #[test]
    fn loss_symmetric_under_role_swap_on_hermitian_channel() {
        // Single real-gain path with equal apertures and aoa == aod makes H
        // Hermitian, so swapping the transmit/receive roles cannot change
        // the objective.
        let h = unit_channel(16, 16, 0.3, 0.3);
        let a = alignment_loss(&h, 0.11, -0.42);
        let b = alignment_loss(&h, -0.42, 0.11);
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn gradient_check_quadratic_loss() {
        let net = NetPair::init(9).tx;
        let log = vec![
            layer([-0.9, -0.7, -0.5, -0.3], [0.4, 1.0, 0.7, 0.1]),
            layer([-0.8, -0.75, -0.7, -0.65], [0.2, 0.9, 1.0, 0.3]),
        ];
        let feats = build_features(&log).unwrap();
        let loss = |raw: f64| ((raw - 0.4) * (raw - 0.4), 2.0 * (raw - 0.4));
        for report in check_gradients(&net, &feats, &loss, 5, 123) {
            assert!(
                report.max_rel_error < 1e-4,
                "{}: {}",
                report.group,
                report.max_rel_error
            );
        }
    }

    #[test]
    fn gradient_check_alignment_loss() {
        let cfg = ChannelEnsembleConfig::los_default(64, 16, 77);
        let mut rng = RngStream::derived(77, &[domain::CHANNEL, 3]);
        let ch = generate_los_channel(&cfg, &mut rng);
        let nets = NetPair::init(77);
        let mut noise = RngStream::derived(77, &[domain::NOISE, 3]);
        let mut link = Link::new(&ch.matrix, 0.01, &mut noise, None);
        let scan = quaternary_descent(
            &mut link,
            Side::Tx,
            64,
            &crate::search::quasi_omni(16),
            0.0,
            false,
        )
        .unwrap();
        let feats = build_features(&scan.layers).unwrap();
        let theta = ch.paths[0].aoa.value();
        let loss = |raw: f64| {
            let phi = NormalizedAngle::new(raw).value();
            let (l, dtx, _) = alignment_loss_grad(&ch.matrix, phi, theta);
            (l, dtx)
        };
        for report in check_gradients(&nets.tx, &feats, &loss, 5, 321) {
            assert!(
                report.max_rel_error < 1e-3,
                "{}: {}",
                report.group,
                report.max_rel_error
            );
        }
    }

    #[test]
    fn tiny_training_run_descends_and_is_deterministic() {
        let cfg = TrainConfig {
            dataset_size: 120,
            epochs: 3,
            batch_size: 40,
            ..TrainConfig::desk_default(16, 16, 13)
        };
        let sampler = los_sampler(&cfg);
        let (state_a, report_a) = train(&cfg, &sampler, None).unwrap();
        let (state_b, report_b) = train(&cfg, &sampler, None).unwrap();
        assert_eq!(report_a.epoch_losses, report_b.epoch_losses);
        assert_eq!(state_a.nets, state_b.nets);
        assert!(report_a.epoch_losses.iter().all(|l| l.is_finite()));
    }

    #[test]
    fn training_is_worker_count_invariant() {
        let base = TrainConfig {
            dataset_size: 100,
            epochs: 2,
            batch_size: 50,
            ..TrainConfig::desk_default(16, 16, 17)
        };
        let sampler = los_sampler(&base);
        let (s1, _) = train(&base, &sampler, None).unwrap();
        let threaded = TrainConfig {
            workers: 3,
            ..base.clone()
        };
        let (s3, _) = train(&threaded, &sampler, None).unwrap();
        assert_eq!(s1.nets, s3.nets);
    }

    #[test]
    fn non_finite_loss_aborts_training() {
        let cfg = TrainConfig {
            dataset_size: 40,
            epochs: 2,
            batch_size: 20,
            ..TrainConfig::desk_default(16, 16, 19)
        };
        let sampler = los_sampler(&cfg);
        // Corrupt the state so the first forward pass yields a NaN angle.
        let mut state = TrainState::fresh(&cfg);
        state.nets.tx.head.b3[0] = f64::NAN;
        match train(&cfg, &sampler, Some(state)) {
            Err(NeuralError::Diverged { .. }) => {}
            other => panic!("expected divergence, got {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn resume_reproduces_uninterrupted_run() {
        let full = TrainConfig {
            dataset_size: 80,
            epochs: 4,
            batch_size: 40,
            ..TrainConfig::desk_default(16, 16, 23)
        };
        let sampler = los_sampler(&full);
        let (direct, _) = train(&full, &sampler, None).unwrap();

        let half = TrainConfig { epochs: 2, ..full.clone() };
        let (mid, _) = train(&half, &sampler, None).unwrap();
        let dir = std::env::temp_dir().join("beamalign-resume-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("ckpt.txt");
        save_checkpoint(&path, &mid, &half).unwrap();
        let (loaded, n_tx, n_rx) = load_checkpoint(&path).unwrap();
        assert_eq!((n_tx, n_rx), (16, 16));
        assert_eq!(loaded.epoch, 2);
        assert_eq!(loaded.nets, mid.nets);
        let (resumed, _) = train(&full, &sampler, Some(loaded)).unwrap();
        assert_eq!(resumed.nets, direct.nets);
    }

    #[test]
    fn checkpoint_round_trip_preserves_predictions() {
        let cfg = TrainConfig {
            dataset_size: 40,
            epochs: 1,
            batch_size: 40,
            ..TrainConfig::desk_default(16, 16, 29)
        };
        let sampler = los_sampler(&cfg);
        let (state, _) = train(&cfg, &sampler, None).unwrap();
        let dir = std::env::temp_dir().join("beamalign-ckpt-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("ckpt.txt");
        save_checkpoint(&path, &state, &cfg).unwrap();
        let (loaded, _, _) = load_checkpoint(&path).unwrap();
        let log = vec![
            layer([-0.5, 0.0, 0.5, 1.0 - 1.0 / 4.0], [0.1, 1.0, 0.3, 0.2]),
            layer([0.1, 0.2, 0.3, 0.4], [0.5, 1.0, 0.4, 0.3]),
        ];
        let a = state.nets.tx.predict_angle(&log).unwrap();
        let b = loaded.nets.tx.predict_angle(&log).unwrap();
        assert_eq!(a.value().to_bits(), b.value().to_bits());
    }
}
