//! Small dense complex matrices and matrix exponentials.
//!
//! Everything here works on square matrices of dimension 2, 4 or 8 (the
//! logical qubit, a qubit pair and the three-spin space). The Fréchet
//! derivative internally forms matrices of twice that size.
//!
//! Frequencies are in MHz and times in ns, so a propagator phase is
//! `2π · f[MHz] · t[ns] · 1e-3` radians; see [`PHASE_PER_MHZ_NS`].

use std::ops::{Add, Index, IndexMut, Mul, Sub};

use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;

/// Radians accumulated per MHz·ns.
pub const PHASE_PER_MHZ_NS: f64 = 2.0 * std::f64::consts::PI * 1e-3;

const ZERO: C64 = C64::new(0.0, 0.0);
const ONE: C64 = C64::new(1.0, 0.0);
const I: C64 = C64::new(0.0, 1.0);

/// Dense square complex matrix stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexMatrix {
    dim: usize,
    data: Vec<C64>,
}

impl ComplexMatrix {
    pub fn zeros(dim: usize) -> Self {
        Self { dim, data: vec![ZERO; dim * dim] }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m.data[i * dim + i] = ONE;
        }
        m
    }

    pub fn from_fn(dim: usize, mut f: impl FnMut(usize, usize) -> C64) -> Self {
        let mut data = Vec::with_capacity(dim * dim);
        for r in 0..dim {
            for c in 0..dim {
                data.push(f(r, c));
            }
        }
        Self { dim, data }
    }

    pub fn from_vec(dim: usize, data: Vec<C64>) -> Result<Self> {
        if dim == 0 || data.len() != dim * dim {
            return Err(Error::Dimension(format!(
                "expected {} entries for a {dim}x{dim} matrix, got {}",
                dim * dim,
                data.len()
            )));
        }
        Ok(Self { dim, data })
    }

    /// Builds a matrix from real row literals.
    pub fn from_real_rows(rows: &[&[f64]]) -> Self {
        let dim = rows.len();
        Self::from_fn(dim, |r, c| C64::new(rows[r][c], 0.0))
    }

    pub fn diag(entries: &[C64]) -> Self {
        let mut m = Self::zeros(entries.len());
        for (i, &z) in entries.iter().enumerate() {
            m[(i, i)] = z;
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.data
    }

    pub fn matmul(&self, rhs: &Self) -> Self {
        assert_eq!(self.dim, rhs.dim, "matmul dimension mismatch");
        let n = self.dim;
        let mut out = vec![ZERO; n * n];
        for i in 0..n {
            let row = &self.data[i * n..(i + 1) * n];
            let dst = &mut out[i * n..(i + 1) * n];
            for (k, &a) in row.iter().enumerate() {
                if a == ZERO {
                    continue;
                }
                let src = &rhs.data[k * n..(k + 1) * n];
                for (d, &b) in dst.iter_mut().zip(src) {
                    *d += a * b;
                }
            }
        }
        Self { dim: n, data: out }
    }

    pub fn adjoint(&self) -> Self {
        let n = self.dim;
        Self::from_fn(n, |r, c| self.data[c * n + r].conj())
    }

    pub fn scale(&self, z: C64) -> Self {
        Self { dim: self.dim, data: self.data.iter().map(|&x| x * z).collect() }
    }

    pub fn scale_real(&self, s: f64) -> Self {
        Self { dim: self.dim, data: self.data.iter().map(|&x| x * s).collect() }
    }

    pub fn trace(&self) -> C64 {
        (0..self.dim).map(|i| self.data[i * self.dim + i]).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Maximum absolute column sum.
    pub fn norm1(&self) -> f64 {
        let n = self.dim;
        (0..n)
            .map(|c| (0..n).map(|r| self.data[r * n + c].norm()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    /// `‖U†U − I‖_F`.
    pub fn unitarity_defect(&self) -> f64 {
        (&self.adjoint().matmul(self) - &Self::identity(self.dim)).frobenius_norm()
    }

    pub fn mul_vec(&self, v: &[C64]) -> Vec<C64> {
        assert_eq!(v.len(), self.dim);
        let n = self.dim;
        (0..n)
            .map(|r| self.data[r * n..(r + 1) * n].iter().zip(v).map(|(&a, &b)| a * b).sum())
            .collect()
    }

    /// `Re tr(self† · other)`, the real Frobenius inner product.
    pub fn real_inner(&self, other: &Self) -> f64 {
        assert_eq!(self.dim, other.dim);
        self.data.iter().zip(&other.data).map(|(a, b)| a.re * b.re + a.im * b.im).sum()
    }

    /// Copies out the `size×size` block starting at (`row`, `col`).
    pub fn block(&self, row: usize, col: usize, size: usize) -> Self {
        Self::from_fn(size, |r, c| self[(row + r, col + c)])
    }
}

impl Index<(usize, usize)> for ComplexMatrix {
    type Output = C64;

    fn index(&self, (r, c): (usize, usize)) -> &C64 {
        &self.data[r * self.dim + c]
    }
}

impl IndexMut<(usize, usize)> for ComplexMatrix {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut C64 {
        &mut self.data[r * self.dim + c]
    }
}

impl Add for &ComplexMatrix {
    type Output = ComplexMatrix;

    fn add(self, rhs: &ComplexMatrix) -> ComplexMatrix {
        assert_eq!(self.dim, rhs.dim);
        ComplexMatrix {
            dim: self.dim,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a + b).collect(),
        }
    }
}

impl Sub for &ComplexMatrix {
    type Output = ComplexMatrix;

    fn sub(self, rhs: &ComplexMatrix) -> ComplexMatrix {
        assert_eq!(self.dim, rhs.dim);
        ComplexMatrix {
            dim: self.dim,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a - b).collect(),
        }
    }
}

impl Mul for &ComplexMatrix {
    type Output = ComplexMatrix;

    fn mul(self, rhs: &ComplexMatrix) -> ComplexMatrix {
        self.matmul(rhs)
    }
}

pub fn pauli_x() -> ComplexMatrix {
    ComplexMatrix::from_real_rows(&[&[0.0, 1.0], &[1.0, 0.0]])
}

pub fn pauli_y() -> ComplexMatrix {
    ComplexMatrix::from_vec(2, vec![ZERO, -I, I, ZERO]).expect("2x2")
}

pub fn pauli_z() -> ComplexMatrix {
    ComplexMatrix::from_real_rows(&[&[1.0, 0.0], &[0.0, -1.0]])
}

/// Kronecker product; entry `(i·db + k, j·db + l)` is `a[i][j]·b[k][l]`.
pub fn kron(a: &ComplexMatrix, b: &ComplexMatrix) -> Result<ComplexMatrix> {
    let (da, db) = (a.dim(), b.dim());
    let dim = da * db;
    if !matches!(dim, 2 | 4 | 8) {
        return Err(Error::Dimension(format!("kron of {da}x{da} and {db}x{db} gives unsupported dim {dim}")));
    }
    Ok(kron_unchecked(a, b))
}

pub(crate) fn kron_unchecked(a: &ComplexMatrix, b: &ComplexMatrix) -> ComplexMatrix {
    let db = b.dim();
    ComplexMatrix::from_fn(a.dim() * db, |r, c| a[(r / db, c / db)] * b[(r % db, c % db)])
}

/// Stack-allocated 2×2 complex matrix used on the hot ensemble paths.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Mat2(pub [C64; 4]);

impl Mat2 {
    pub const IDENTITY: Mat2 = Mat2([ONE, ZERO, ZERO, ONE]);
    pub const ZERO: Mat2 = Mat2([ZERO; 4]);

    #[inline]
    pub fn mul(&self, o: &Mat2) -> Mat2 {
        let [a, b, c, d] = self.0;
        let [e, f, g, h] = o.0;
        Mat2([a * e + b * g, a * f + b * h, c * e + d * g, c * f + d * h])
    }

    #[inline]
    pub fn add(&self, o: &Mat2) -> Mat2 {
        Mat2(std::array::from_fn(|i| self.0[i] + o.0[i]))
    }

    #[inline]
    pub fn sub(&self, o: &Mat2) -> Mat2 {
        Mat2(std::array::from_fn(|i| self.0[i] - o.0[i]))
    }

    #[inline]
    pub fn scale(&self, z: C64) -> Mat2 {
        Mat2(self.0.map(|a| a * z))
    }

    #[inline]
    pub fn adjoint(&self) -> Mat2 {
        let [a, b, c, d] = self.0;
        Mat2([a.conj(), c.conj(), b.conj(), d.conj()])
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> C64 {
        self.0[2 * r + c]
    }

    /// `Re tr(self† · other)`.
    #[inline]
    pub fn real_inner(&self, o: &Mat2) -> f64 {
        self.0.iter().zip(&o.0).map(|(a, b)| a.re * b.re + a.im * b.im).sum()
    }

    pub fn to_matrix(&self) -> ComplexMatrix {
        ComplexMatrix::from_vec(2, self.0.to_vec()).expect("2x2")
    }

    pub fn from_matrix(m: &ComplexMatrix) -> Result<Mat2> {
        if m.dim() != 2 {
            return Err(Error::Dimension(format!("expected 2x2, got {}x{}", m.dim(), m.dim())));
        }
        let s = m.as_slice();
        Ok(Mat2([s[0], s[1], s[2], s[3]]))
    }
}

fn sinc(theta: f64) -> f64 {
    if theta.abs() < 1e-6 {
        1.0 - theta * theta / 6.0
    } else {
        theta.sin() / theta
    }
}

/// `(θ cos θ − sin θ) / θ³`, the derivative of sinc divided by θ.
fn sinc_prime_over_theta(theta: f64) -> f64 {
    let t2 = theta * theta;
    if theta.abs() < 0.05 {
        -1.0 / 3.0 + t2 / 30.0 - t2 * t2 / 840.0 + t2 * t2 * t2 / 45360.0
    } else {
        (theta * theta.cos() - theta.sin()) / (t2 * theta)
    }
}

fn pauli2_parts(hz: f64, hx: f64, tau: f64) -> (f64, f64, f64, f64) {
    let omega = PHASE_PER_MHZ_NS * tau;
    let h = hz.hypot(hx);
    let theta = omega * h;
    (omega, theta, theta.cos(), omega * sinc(theta))
}

/// `exp(−i·2π·(hz σz + hx σx)·τ)` with `hz`, `hx` in MHz and `τ` in ns.
pub fn pauli2_exp(hz: f64, hx: f64, tau: f64) -> Mat2 {
    if hz.hypot(hx) < 1e-300 {
        return Mat2::IDENTITY;
    }
    let (_, _, c, s) = pauli2_parts(hz, hx, tau);
    Mat2([C64::new(c, -s * hz), C64::new(0.0, -s * hx), C64::new(0.0, -s * hx), C64::new(c, s * hz)])
}

/// Closed-form propagator and its partial derivatives with respect to `hz` and `hx`.
pub fn pauli2_exp_grad(hz: f64, hx: f64, tau: f64) -> (Mat2, Mat2, Mat2) {
    let (omega, theta, c, s) = pauli2_parts(hz, hx, tau);
    let w2 = omega * omega;
    let sc = sinc(theta);
    let g = omega * w2 * sinc_prime_over_theta(theta);

    let u = Mat2([C64::new(c, -s * hz), C64::new(0.0, -s * hx), C64::new(0.0, -s * hx), C64::new(c, s * hz)]);

    let dc_z = -w2 * hz * sc;
    let ds_z = g * hz;
    let du_z = Mat2([
        C64::new(dc_z, -(ds_z * hz + s)),
        C64::new(0.0, -ds_z * hx),
        C64::new(0.0, -ds_z * hx),
        C64::new(dc_z, ds_z * hz + s),
    ]);

    let dc_x = -w2 * hx * sc;
    let ds_x = g * hx;
    let du_x = Mat2([
        C64::new(dc_x, -ds_x * hz),
        C64::new(0.0, -(ds_x * hx + s)),
        C64::new(0.0, -(ds_x * hx + s)),
        C64::new(dc_x, ds_x * hz),
    ]);
    (u, du_z, du_x)
}

/// Closed-form two-level propagator as a [`ComplexMatrix`].
pub fn expm_pauli2(hz: f64, hx: f64, tau: f64) -> ComplexMatrix {
    pauli2_exp(hz, hx, tau).to_matrix()
}

/// Truncation settings for [`expm_general_with`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExpmOptions {
    /// Degree of the Taylor polynomial evaluated after scaling.
    pub taylor_order: usize,
    /// The argument is halved until its 1-norm is at most this value.
    pub scaled_norm: f64,
}

impl Default for ExpmOptions {
    fn default() -> Self {
        // 0.25^13 / 13! ≈ 2.4e-18
        Self { taylor_order: 12, scaled_norm: 0.25 }
    }
}

fn scaling_power(norm: f64, opts: &ExpmOptions) -> u32 {
    if norm <= opts.scaled_norm {
        0
    } else {
        (norm / opts.scaled_norm).log2().ceil() as u32
    }
}

pub fn expm_general(a: &ComplexMatrix) -> Result<ComplexMatrix> {
    expm_general_with(a, &ExpmOptions::default())
}

/// Scaling and squaring around a fixed-degree Taylor core.
pub fn expm_general_with(a: &ComplexMatrix, opts: &ExpmOptions) -> Result<ComplexMatrix> {
    if !a.is_finite() {
        return Err(Error::Numeric("matrix exponential of non-finite matrix".into()));
    }
    let n = a.dim();
    let s = scaling_power(a.norm1(), opts);
    let a_s = a.scale_real(0.5f64.powi(s as i32));
    let id = ComplexMatrix::identity(n);
    let mut p = id.clone();
    for k in (1..=opts.taylor_order).rev() {
        p = &id + &a_s.matmul(&p).scale_real(1.0 / k as f64);
    }
    for _ in 0..s {
        p = p.matmul(&p);
    }
    Ok(p)
}

/// Matrix exponential together with the Fréchet derivative `L(A, E)`.
///
/// This is the augmented matrix `exp([[A, E], [0, A]])` evaluated block by
/// block: the diagonal blocks give `exp(A)` and the upper-right block gives
/// `L(A, E)`.
pub fn expm_and_frechet(a: &ComplexMatrix, e: &ComplexMatrix) -> Result<(ComplexMatrix, ComplexMatrix)> {
    if a.dim() != e.dim() {
        return Err(Error::Dimension(format!("Fréchet direction {}x{} vs argument {}x{}", e.dim(), e.dim(), a.dim(), a.dim())));
    }
    if !a.is_finite() || !e.is_finite() {
        return Err(Error::Numeric("Fréchet derivative of non-finite matrix".into()));
    }
    let opts = ExpmOptions::default();
    let n = a.dim();
    let s = scaling_power(a.norm1() + e.norm1(), &opts);
    let f = 0.5f64.powi(s as i32);
    let a_s = a.scale_real(f);
    let e_s = e.scale_real(f);
    let id = ComplexMatrix::identity(n);
    let mut p = id.clone();
    let mut d = ComplexMatrix::zeros(n);
    for k in (1..=opts.taylor_order).rev() {
        let inv = 1.0 / k as f64;
        let next_d = (&e_s.matmul(&p) + &a_s.matmul(&d)).scale_real(inv);
        p = &id + &a_s.matmul(&p).scale_real(inv);
        d = next_d;
    }
    for _ in 0..s {
        d = &p.matmul(&d) + &d.matmul(&p);
        p = p.matmul(&p);
    }
    Ok((p, d))
}

/// Directional derivative `d/ds exp(A + sE)` at `s = 0`.
pub fn expm_frechet(a: &ComplexMatrix, e: &ComplexMatrix) -> Result<ComplexMatrix> {
    expm_and_frechet(a, e).map(|(_, l)| l)
}

/// `min_φ ‖u − e^{iφ} v‖_F` for unitary `u`, `v`.
pub fn global_phase_distance(u: &ComplexMatrix, v: &ComplexMatrix) -> Result<f64> {
    if u.dim() != v.dim() {
        return Err(Error::Dimension(format!("{}x{} vs {}x{}", u.dim(), u.dim(), v.dim(), v.dim())));
    }
    for (name, m) in [("first", u), ("second", v)] {
        let defect = m.unitarity_defect();
        if !(defect < 1e-8) {
            return Err(Error::Contract(format!("{name} argument is not unitary (‖U†U − I‖ = {defect:e})")));
        }
    }
    // The optimal phase aligns tr(v†u); evaluating the residual directly keeps
    // full precision near zero, unlike sqrt(2d − 2|tr|).
    let overlap = v.adjoint().matmul(u).trace();
    let phase = if overlap.norm() > 1e-300 { overlap / overlap.norm() } else { ONE };
    Ok((u - &v.scale(phase)).frobenius_norm())
}

#[cfg(test)]
pub(crate) mod testing {
    use super::*;
    use rand_chacha::ChaCha8Rng;
    use rand_core::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};

    pub fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    pub fn random_matrix(dim: usize, rng: &mut ChaCha8Rng) -> ComplexMatrix {
        ComplexMatrix::from_fn(dim, |_, _| {
            let re: f64 = StandardNormal.sample(rng);
            let im: f64 = StandardNormal.sample(rng);
            C64::new(re, im)
        })
    }

    pub fn random_hermitian(dim: usize, rng: &mut ChaCha8Rng) -> ComplexMatrix {
        let m = random_matrix(dim, rng);
        (&m + &m.adjoint()).scale_real(0.5)
    }

    /// Plain Taylor series with `terms` terms and no scaling.
    pub fn taylor_expm(a: &ComplexMatrix, terms: usize) -> ComplexMatrix {
        let mut sum = ComplexMatrix::identity(a.dim());
        let mut term = ComplexMatrix::identity(a.dim());
        for k in 1..terms {
            term = term.matmul(a).scale_real(1.0 / k as f64);
            sum = &sum + &term;
        }
        sum
    }
}
