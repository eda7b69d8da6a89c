//! Dense complex matrices sized for desk-scale MIMO channels, plus the
//! bilinear forms every link measurement reduces to.

use num_complex::Complex64;

/// Row-major complex matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CMatrix {
    n_rows: usize,
    n_cols: usize,
    data: Vec<Complex64>,
}

impl CMatrix {
    pub fn zeros(n_rows: usize, n_cols: usize) -> Self {
        Self {
            n_rows,
            n_cols,
            data: vec![Complex64::new(0.0, 0.0); n_rows * n_cols],
        }
    }

    pub fn from_fn(n_rows: usize, n_cols: usize, mut f: impl FnMut(usize, usize) -> Complex64) -> Self {
        let mut m = Self::zeros(n_rows, n_cols);
        for r in 0..n_rows {
            for c in 0..n_cols {
                m.data[r * n_cols + c] = f(r, c);
            }
        }
        m
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn get(&self, row: usize, col: usize) -> Complex64 {
        self.data[row * self.n_cols + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: Complex64) {
        self.data[row * self.n_cols + col] = value;
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    /// `self += gain * u * v^H` where `u` has `n_rows` entries and `v` has
    /// `n_cols` entries.
    pub fn add_scaled_outer(&mut self, gain: Complex64, u: &[Complex64], v: &[Complex64]) {
        assert_eq!(u.len(), self.n_rows);
        assert_eq!(v.len(), self.n_cols);
        for (r, ur) in u.iter().enumerate() {
            let row_gain = gain * ur;
            let row = &mut self.data[r * self.n_cols..(r + 1) * self.n_cols];
            for (entry, vc) in row.iter_mut().zip(v) {
                *entry += row_gain * vc.conj();
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for entry in &mut self.data {
            *entry *= factor;
        }
    }

    pub fn frobenius_norm_sq(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }

    /// `H * f` for a column vector `f` of length `n_cols`.
    pub fn matvec(&self, f: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(f.len(), self.n_cols);
        (0..self.n_rows)
            .map(|r| {
                self.data[r * self.n_cols..(r + 1) * self.n_cols]
                    .iter()
                    .zip(f)
                    .map(|(h, x)| h * x)
                    .sum()
            })
            .collect()
    }

    /// `w^H * H * f`.
    pub fn bilinear(&self, w: &[Complex64], f: &[Complex64]) -> Complex64 {
        assert_eq!(w.len(), self.n_rows);
        assert_eq!(f.len(), self.n_cols);
        let mut acc = Complex64::new(0.0, 0.0);
        for (r, wr) in w.iter().enumerate() {
            let mut row_acc = Complex64::new(0.0, 0.0);
            let row = &self.data[r * self.n_cols..(r + 1) * self.n_cols];
            for (h, x) in row.iter().zip(f) {
                row_acc += h * x;
            }
            acc += wr.conj() * row_acc;
        }
        acc
    }
}

/// `w^H x` for two vectors of equal length.
pub fn inner(w: &[Complex64], x: &[Complex64]) -> Complex64 {
    assert_eq!(w.len(), x.len());
    w.iter().zip(x).map(|(a, b)| a.conj() * b).sum()
}
