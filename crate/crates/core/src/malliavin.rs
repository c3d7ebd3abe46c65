//! Malliavin derivatives of polynomial functionals of dyadic increments.
//!
//! A functional of generation level `L` reads the increments `ξ_L^k` on a
//! contiguous run of segments (its support). Since `Dξ_L^{k,i} = 1_{J_L^k} e_i`
//! and these are orthogonal in `H` with squared norm `2^{−L}`, the `H`-norm of
//! `DF` is the Euclidean norm of the increment gradient times `2^{−L/2}`, and
//! that of `D²F` the Frobenius norm of the increment Hessian times `2^{−L}`.
//!
//! Samples are laid out segment-major: `x[r * d + i]` is coordinate `i` of the
//! `r`-th increment of the support.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::paths::{parent_index, DyadicBrownianPath};
use crate::stats::{lq_norm, sample_map, LqEstimate};
use crate::variation::{tail_weight, RhoParams, TailMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Descriptor {
    X1 { m: u32, n: u32, k: u64 },
    X2 { m: u32, n: u32, k: u64 },
    Y1 { m: u32, n: u32, k: u64 },
    Y2 { m: u32, n: u32, k: u64 },
    FPow { j: u8, m: u32, n: u32, k: u64, n_tilde: u32 },
    GPow { j: u8, m: u32, n: u32, k: u64, n_tilde: u32 },
    /// `ρ_j(w^(m))^{p/j}`
    Rho { j: u8, m: u32 },
    /// `ρ_j(w^(m+1), w^(m))^{p/j}`
    RhoDiff { j: u8, m: u32 },
    /// `ρ₁(w^(m))^p ρ₁(w^(m+1), w^(m))^p`
    RhoProduct { m: u32 },
    Custom,
}

/// Run of level-`L` segments a functional reads, `start` 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Support {
    pub start: u64,
    pub len: u64,
}

pub trait IncrementFunctional: Send + Sync {
    fn dim(&self) -> usize;
    fn generation_level(&self) -> u32;
    fn support(&self) -> Support;
    fn output_len(&self) -> usize;
    fn descriptor(&self) -> Descriptor {
        Descriptor::Custom
    }

    fn eval(&self, x: &[f64]) -> Vec<f64>;

    /// Row-major `output_len × n_vars`.
    fn jacobian(&self, x: &[f64]) -> Vec<f64>;

    /// Row-major `output_len × n_vars × n_vars`, or `None` when the
    /// functional is only once differentiable.
    fn hessian(&self, _x: &[f64]) -> Option<Vec<f64>> {
        None
    }

    fn n_vars(&self) -> usize {
        self.support().len as usize * self.dim()
    }

    /// `∂F/∂ξ_L^{k,i}` for every output, `k` local to the support (0-based).
    fn partial(&self, x: &[f64], k: usize, i: usize) -> Vec<f64> {
        let nv = self.n_vars();
        let jac = self.jacobian(x);
        (0..self.output_len())
            .map(|o| jac[o * nv + k * self.dim() + i])
            .collect()
    }

    /// `Σ_o w_o ∇F_o`
    fn vjp(&self, x: &[f64], w: &[f64]) -> Vec<f64> {
        let nv = self.n_vars();
        let jac = self.jacobian(x);
        let mut out = vec![0.0; nv];
        for (o, wo) in w.iter().enumerate() {
            for v in 0..nv {
                out[v] += wo * jac[o * nv + v];
            }
        }
        out
    }

    /// Squared Frobenius norm of the Jacobian.
    fn grad_sq(&self, x: &[f64]) -> f64 {
        self.jacobian(x).iter().map(|v| v * v).sum()
    }

    /// Squared Frobenius norm of the Hessian.
    fn hess_sq(&self, x: &[f64]) -> Option<f64> {
        self.hessian(x).map(|h| h.iter().map(|v| v * v).sum())
    }
}

fn pow2(e: i64) -> f64 {
    (2.0f64).powi(e as i32)
}

fn check_sample(f: &dyn IncrementFunctional, x: &[f64]) -> Result<()> {
    check_dim(f.n_vars(), x.len())
}

/// `|DF|_H`
pub fn grad_h_norm(f: &dyn IncrementFunctional, x: &[f64]) -> Result<f64> {
    check_sample(f, x)?;
    Ok((f.grad_sq(x) * pow2(-(f.generation_level() as i64))).sqrt())
}

/// `|D²F|_{H⊗H}`
pub fn hess_h_norm(f: &dyn IncrementFunctional, x: &[f64]) -> Result<f64> {
    check_sample(f, x)?;
    let sq = f.hess_sq(x).ok_or_else(|| {
        Error::InvalidParameter(format!("{:?} has no second derivative", f.descriptor()))
    })?;
    Ok(sq.sqrt() * pow2(-(f.generation_level() as i64)))
}

/// Euclidean norm of the value.
pub fn value_norm(f: &dyn IncrementFunctional, x: &[f64]) -> Result<f64> {
    check_sample(f, x)?;
    Ok(f.eval(x).iter().map(|v| v * v).sum::<f64>().sqrt())
}

/// The support increments of `f` read off a path.
pub fn increments_from_path(f: &dyn IncrementFunctional, path: &DyadicBrownianPath) -> Result<Vec<f64>> {
    check_dim(f.dim(), path.dim())?;
    let level = f.generation_level();
    let s = f.support();
    let mut out = Vec::with_capacity(f.n_vars());
    for r in 0..s.len {
        out.extend(path.xi(level, s.start + r)?);
    }
    Ok(out)
}

/// Independent `N(0, 2^{−L} I_d)` increments, the law of `ξ_L^k` on
/// disjoint segments.
pub fn sample_increments<R: Rng + ?Sized>(f: &dyn IncrementFunctional, rng: &mut R) -> Vec<f64> {
    let std = pow2(-(f.generation_level() as i64)).sqrt();
    (0..f.n_vars())
        .map(|_| std * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

/// `F = Σ_r c_r x_r`, valued in `ℝ^d`.
#[derive(Debug, Clone)]
pub struct LinearForm {
    dim: usize,
    level: u32,
    start: u64,
    coeffs: Vec<f64>,
    descriptor: Descriptor,
}

impl LinearForm {
    pub fn new(dim: usize, level: u32, start: u64, coeffs: Vec<f64>) -> Result<Self> {
        check_support(dim, level, start, coeffs.len() as u64)?;
        Ok(Self {
            dim,
            level,
            start,
            coeffs,
            descriptor: Descriptor::Custom,
        })
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }
}

fn check_support(dim: usize, level: u32, start: u64, len: u64) -> Result<()> {
    if dim == 0 {
        return Err(Error::InvalidParameter("dimension must be >= 1".into()));
    }
    if level > 40 || start == 0 || start - 1 + len > 1u64 << level {
        return Err(Error::IndexOutOfRange(format!(
            "support {start}..{} outside level {level}",
            start + len
        )));
    }
    Ok(())
}

impl IncrementFunctional for LinearForm {
    fn dim(&self) -> usize {
        self.dim
    }

    fn generation_level(&self) -> u32 {
        self.level
    }

    fn support(&self) -> Support {
        Support {
            start: self.start,
            len: self.coeffs.len() as u64,
        }
    }

    fn output_len(&self) -> usize {
        self.dim
    }

    fn descriptor(&self) -> Descriptor {
        self.descriptor
    }

    fn eval(&self, x: &[f64]) -> Vec<f64> {
        let d = self.dim;
        let mut out = vec![0.0; d];
        for (r, c) in self.coeffs.iter().enumerate() {
            for i in 0..d {
                out[i] += c * x[r * d + i];
            }
        }
        out
    }

    fn jacobian(&self, _x: &[f64]) -> Vec<f64> {
        let d = self.dim;
        let nv = self.n_vars();
        let mut jac = vec![0.0; d * nv];
        for (r, c) in self.coeffs.iter().enumerate() {
            for i in 0..d {
                jac[i * nv + r * d + i] = *c;
            }
        }
        jac
    }

    fn hessian(&self, _x: &[f64]) -> Option<Vec<f64>> {
        let nv = self.n_vars();
        Some(vec![0.0; self.dim * nv * nv])
    }

    fn vjp(&self, _x: &[f64], w: &[f64]) -> Vec<f64> {
        let d = self.dim;
        let mut out = vec![0.0; self.n_vars()];
        for (r, c) in self.coeffs.iter().enumerate() {
            for i in 0..d {
                out[r * d + i] = c * w[i];
            }
        }
        out
    }

    fn grad_sq(&self, _x: &[f64]) -> f64 {
        self.dim as f64 * self.coeffs.iter().map(|c| c * c).sum::<f64>()
    }

    fn hess_sq(&self, _x: &[f64]) -> Option<f64> {
        Some(0.0)
    }
}

/// `F = Σ_{r,s} c_{rs} x_r ⊗ x_s`, valued in `ℝ^d ⊗ ℝ^d` (row-major).
#[derive(Debug, Clone)]
pub struct QuadraticForm {
    dim: usize,
    level: u32,
    start: u64,
    len: usize,
    coeffs: Coeffs,
    descriptor: Descriptor,
}

#[derive(Debug, Clone)]
enum Coeffs {
    Dense(Vec<f64>),
    /// `c_{rs} = 1` for `r < s`, `½` on the diagonal.
    Iterated,
    /// `c_{2q,2q+1} = ½`, `c_{2q+1,2q} = −½`.
    Pairs,
}

impl QuadraticForm {
    /// `coeffs` is row-major `len × len`.
    pub fn new(dim: usize, level: u32, start: u64, len: usize, coeffs: Vec<f64>) -> Result<Self> {
        check_support(dim, level, start, len as u64)?;
        check_dim(len * len, coeffs.len())?;
        Self::structured(dim, level, start, len, Coeffs::Dense(coeffs))
    }

    fn structured(dim: usize, level: u32, start: u64, len: usize, coeffs: Coeffs) -> Result<Self> {
        check_support(dim, level, start, len as u64)?;
        Ok(Self {
            dim,
            level,
            start,
            len,
            coeffs,
            descriptor: Descriptor::Custom,
        })
    }

    pub fn coeff(&self, r: usize, s: usize) -> f64 {
        match &self.coeffs {
            Coeffs::Dense(c) => c[r * self.len + s],
            Coeffs::Iterated => match r.cmp(&s) {
                std::cmp::Ordering::Less => 1.0,
                std::cmp::Ordering::Equal => 0.5,
                std::cmp::Ordering::Greater => 0.0,
            },
            Coeffs::Pairs => {
                if r % 2 == 0 && s == r + 1 {
                    0.5
                } else if s % 2 == 0 && r == s + 1 {
                    -0.5
                } else {
                    0.0
                }
            }
        }
    }

    /// `R_u = Σ_s c_{us} x_s` and `C_u = Σ_r c_{ru} x_r`.
    fn row_col(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let (d, b) = (self.dim, self.len);
        let mut row = vec![0.0; b * d];
        let mut col = vec![0.0; b * d];
        match &self.coeffs {
            Coeffs::Dense(c) => {
                for r in 0..b {
                    for s in 0..b {
                        let c = c[r * b + s];
                        if c == 0.0 {
                            continue;
                        }
                        for i in 0..d {
                            row[r * d + i] += c * x[s * d + i];
                            col[s * d + i] += c * x[r * d + i];
                        }
                    }
                }
            }
            Coeffs::Iterated => {
                let mut total = vec![0.0; d];
                for seg in x.chunks(d) {
                    for i in 0..d {
                        total[i] += seg[i];
                    }
                }
                let mut prefix = vec![0.0; d];
                for u in 0..b {
                    for i in 0..d {
                        let xi = x[u * d + i];
                        row[u * d + i] = total[i] - prefix[i] - 0.5 * xi;
                        col[u * d + i] = prefix[i] + 0.5 * xi;
                        prefix[i] += xi;
                    }
                }
            }
            Coeffs::Pairs => {
                for q in 0..b / 2 {
                    let (a, c) = (2 * q * d, (2 * q + 1) * d);
                    for i in 0..d {
                        row[a + i] = 0.5 * x[c + i];
                        row[c + i] = -0.5 * x[a + i];
                        col[c + i] = 0.5 * x[a + i];
                        col[a + i] = -0.5 * x[c + i];
                    }
                }
            }
        }
        (row, col)
    }
}

impl IncrementFunctional for QuadraticForm {
    fn dim(&self) -> usize {
        self.dim
    }

    fn generation_level(&self) -> u32 {
        self.level
    }

    fn support(&self) -> Support {
        Support {
            start: self.start,
            len: self.len as u64,
        }
    }

    fn output_len(&self) -> usize {
        self.dim * self.dim
    }

    fn descriptor(&self) -> Descriptor {
        self.descriptor
    }

    fn eval(&self, x: &[f64]) -> Vec<f64> {
        let d = self.dim;
        let (row, _) = self.row_col(x);
        let mut out = vec![0.0; d * d];
        for r in 0..self.len {
            for i in 0..d {
                let xi = x[r * d + i];
                for j in 0..d {
                    out[i * d + j] += xi * row[r * d + j];
                }
            }
        }
        out
    }

    fn jacobian(&self, x: &[f64]) -> Vec<f64> {
        let d = self.dim;
        let nv = self.n_vars();
        let (row, col) = self.row_col(x);
        let mut jac = vec![0.0; d * d * nv];
        for u in 0..self.len {
            for a in 0..d {
                let v = u * d + a;
                for j in 0..d {
                    jac[(a * d + j) * nv + v] += row[u * d + j];
                }
                for i in 0..d {
                    jac[(i * d + a) * nv + v] += col[u * d + i];
                }
            }
        }
        jac
    }

    fn hessian(&self, _x: &[f64]) -> Option<Vec<f64>> {
        let d = self.dim;
        let nv = self.n_vars();
        let mut h = vec![0.0; d * d * nv * nv];
        for u in 0..self.len {
            for v in 0..self.len {
                let c_uv = self.coeff(u, v);
                if c_uv == 0.0 {
                    continue;
                }
                for a in 0..d {
                    for b in 0..d {
                        let (ua, vb) = (u * d + a, v * d + b);
                        h[((a * d + b) * nv + ua) * nv + vb] += c_uv;
                        h[((a * d + b) * nv + vb) * nv + ua] += c_uv;
                    }
                }
            }
        }
        Some(h)
    }

    fn vjp(&self, x: &[f64], w: &[f64]) -> Vec<f64> {
        let d = self.dim;
        let (row, col) = self.row_col(x);
        let mut out = vec![0.0; self.n_vars()];
        for u in 0..self.len {
            for a in 0..d {
                let mut acc = 0.0;
                for j in 0..d {
                    acc += w[a * d + j] * row[u * d + j];
                }
                for i in 0..d {
                    acc += w[i * d + a] * col[u * d + i];
                }
                out[u * d + a] = acc;
            }
        }
        out
    }

    fn grad_sq(&self, x: &[f64]) -> f64 {
        let d = self.dim;
        let (row, col) = self.row_col(x);
        let mut total = 0.0;
        for u in 0..self.len {
            let (mut rr, mut cc, mut rc) = (0.0, 0.0, 0.0);
            for i in 0..d {
                let (r, c) = (row[u * d + i], col[u * d + i]);
                rr += r * r;
                cc += c * c;
                rc += r * c;
            }
            total += d as f64 * (rr + cc) + 2.0 * rc;
        }
        total
    }

    fn hess_sq(&self, _x: &[f64]) -> Option<f64> {
        let d = self.dim as f64;
        let b = self.len;
        let bf = b as f64;
        // Σ c_{uv}² and Σ c_{uv} c_{vu}
        let (sq, cross) = match &self.coeffs {
            Coeffs::Dense(c) => {
                let mut sq = 0.0;
                let mut cross = 0.0;
                for u in 0..b {
                    for v in 0..b {
                        sq += c[u * b + v] * c[u * b + v];
                        cross += c[u * b + v] * c[v * b + u];
                    }
                }
                (sq, cross)
            }
            Coeffs::Iterated => (bf * (bf - 1.0) / 2.0 + bf / 4.0, bf / 4.0),
            Coeffs::Pairs => (bf / 4.0, -bf / 4.0),
        };
        Some(2.0 * d * d * sq + 2.0 * d * cross)
    }
}

/// `f = |F|^{2Ñ}` for a base functional `F`.
pub struct PowerFunctional {
    base: Box<dyn IncrementFunctional>,
    n_tilde: u32,
    descriptor: Descriptor,
}

impl PowerFunctional {
    pub fn new(base: Box<dyn IncrementFunctional>, n_tilde: u32) -> Result<Self> {
        if n_tilde == 0 {
            return Err(Error::InvalidParameter("power must be >= 1".into()));
        }
        Ok(Self {
            base,
            n_tilde,
            descriptor: Descriptor::Custom,
        })
    }

    pub fn base(&self) -> &dyn IncrementFunctional {
        self.base.as_ref()
    }

    pub fn n_tilde(&self) -> u32 {
        self.n_tilde
    }

    /// `(|F|², ∇|F|²)`
    fn squared_norm_gradient(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let value = self.base.eval(x);
        let s = value.iter().map(|v| v * v).sum();
        let mut g = self.base.vjp(x, &value);
        for v in &mut g {
            *v *= 2.0;
        }
        (s, g)
    }

    /// Outer coefficient pair `(Ñ s^{Ñ−1}, Ñ(Ñ−1) s^{Ñ−2})`.
    fn chain_coeffs(&self, s: f64) -> (f64, f64) {
        let nt = self.n_tilde as i32;
        let first = nt as f64 * s.powi(nt - 1);
        let second = if nt >= 2 {
            (nt * (nt - 1)) as f64 * s.powi(nt - 2)
        } else {
            0.0
        };
        (first, second)
    }

    /// Dense `∇²|F|² = 2(JᵀJ + Σ_o F_o ∇²F_o)`.
    fn squared_norm_hessian(&self, x: &[f64]) -> Option<Vec<f64>> {
        let nv = self.n_vars();
        let value = self.base.eval(x);
        let jac = self.base.jacobian(x);
        let hb = self.base.hessian(x)?;
        let mut h = vec![0.0; nv * nv];
        for (o, fo) in value.iter().enumerate() {
            let row = &jac[o * nv..(o + 1) * nv];
            let ho = &hb[o * nv * nv..(o + 1) * nv * nv];
            for u in 0..nv {
                for v in 0..nv {
                    h[u * nv + v] += 2.0 * (row[u] * row[v] + fo * ho[u * nv + v]);
                }
            }
        }
        Some(h)
    }
}

impl IncrementFunctional for PowerFunctional {
    fn dim(&self) -> usize {
        self.base.dim()
    }

    fn generation_level(&self) -> u32 {
        self.base.generation_level()
    }

    fn support(&self) -> Support {
        self.base.support()
    }

    fn output_len(&self) -> usize {
        1
    }

    fn descriptor(&self) -> Descriptor {
        self.descriptor
    }

    fn eval(&self, x: &[f64]) -> Vec<f64> {
        let s: f64 = self.base.eval(x).iter().map(|v| v * v).sum();
        vec![s.powi(self.n_tilde as i32)]
    }

    fn jacobian(&self, x: &[f64]) -> Vec<f64> {
        let (s, mut g) = self.squared_norm_gradient(x);
        let (c1, _) = self.chain_coeffs(s);
        for v in &mut g {
            *v *= c1;
        }
        g
    }

    fn vjp(&self, x: &[f64], w: &[f64]) -> Vec<f64> {
        let mut g = self.jacobian(x);
        for v in &mut g {
            *v *= w[0];
        }
        g
    }

    fn grad_sq(&self, x: &[f64]) -> f64 {
        let (s, g) = self.squared_norm_gradient(x);
        let (c1, _) = self.chain_coeffs(s);
        c1 * c1 * g.iter().map(|v| v * v).sum::<f64>()
    }

    fn hessian(&self, x: &[f64]) -> Option<Vec<f64>> {
        let nv = self.n_vars();
        let (s, g) = self.squared_norm_gradient(x);
        let (c1, c2) = self.chain_coeffs(s);
        let mut h = self.squared_norm_hessian(x)?;
        for u in 0..nv {
            for v in 0..nv {
                h[u * nv + v] = c2 * g[u] * g[v] + c1 * h[u * nv + v];
            }
        }
        Some(h)
    }
}

fn level_j(j: u8) -> Result<()> {
    if j == 1 || j == 2 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("level must be 1 or 2, got {j}")))
    }
}

fn check_mnk(m: u32, n: u32, k: u64) -> Result<()> {
    if m > 30 || n > 40 || k == 0 || k > 1u64 << n {
        return Err(Error::IndexOutOfRange(format!("(m, n, k) = ({m}, {n}, {k})")));
    }
    Ok(())
}

/// `Y₁ = w^{(m),1}` over `J_n^k`, generation level `m`.
pub fn y1(dim: usize, m: u32, n: u32, k: u64) -> Result<LinearForm> {
    check_mnk(m, n, k)?;
    let mut f = if n < m {
        let width = 1u64 << (m - n);
        LinearForm::new(dim, m, width * (k - 1) + 1, vec![1.0; width as usize])?
    } else {
        LinearForm::new(dim, m, parent_index(n, k, m)?, vec![pow2(m as i64 - n as i64)])?
    };
    f.descriptor = Descriptor::Y1 { m, n, k };
    Ok(f)
}

/// `X₁ = w^{(m+1),1} − w^{(m),1}` over `J_n^k`, generation level `m + 1`.
/// Identically zero (empty support) for `n ≤ m`.
pub fn x1(dim: usize, m: u32, n: u32, k: u64) -> Result<LinearForm> {
    check_mnk(m, n, k)?;
    let mut f = if n <= m {
        LinearForm::new(dim, m + 1, 1, Vec::new())?
    } else {
        let parent = parent_index(n, k, m)?;
        let child = parent_index(n, k, m + 1)?;
        let c = pow2(m as i64 - n as i64);
        let coeffs = if child == 2 * parent - 1 { vec![c, -c] } else { vec![-c, c] };
        LinearForm::new(dim, m + 1, 2 * parent - 1, coeffs)?
    };
    f.descriptor = Descriptor::X1 { m, n, k };
    Ok(f)
}

/// `Y₂ = w^{(m),2}` over `J_n^k`, generation level `m`.
pub fn y2(dim: usize, m: u32, n: u32, k: u64) -> Result<QuadraticForm> {
    check_mnk(m, n, k)?;
    let mut f = if n < m {
        let width = 1usize << (m - n);
        QuadraticForm::structured(dim, m, width as u64 * (k - 1) + 1, width, Coeffs::Iterated)?
    } else {
        let c = 0.5 * pow2(2 * (m as i64 - n as i64));
        QuadraticForm::new(dim, m, parent_index(n, k, m)?, 1, vec![c])?
    };
    f.descriptor = Descriptor::Y2 { m, n, k };
    Ok(f)
}

/// `X₂ = w^{(m+1),2} − w^{(m),2}` over `J_n^k`, generation level `m + 1`.
pub fn x2(dim: usize, m: u32, n: u32, k: u64) -> Result<QuadraticForm> {
    check_mnk(m, n, k)?;
    let mut f = if n <= m {
        let width = 1usize << (m + 1 - n);
        QuadraticForm::structured(dim, m + 1, width as u64 * (k - 1) + 1, width, Coeffs::Pairs)?
    } else {
        let parent = parent_index(n, k, m)?;
        let child = parent_index(n, k, m + 1)?;
        let fine = 0.5 * pow2(2 * (m as i64 + 1 - n as i64));
        let coarse = 0.5 * pow2(2 * (m as i64 - n as i64));
        let own = (child + 1 - 2 * parent) as usize;
        let mut c = vec![-coarse; 4];
        c[own * 2 + own] += fine;
        QuadraticForm::new(dim, m + 1, 2 * parent - 1, 2, c)?
    };
    f.descriptor = Descriptor::X2 { m, n, k };
    Ok(f)
}

/// `f^j_{m,n,k} = |X_j|^{2Ñ}`
pub fn f_pow(dim: usize, j: u8, m: u32, n: u32, k: u64, n_tilde: u32) -> Result<PowerFunctional> {
    level_j(j)?;
    let base: Box<dyn IncrementFunctional> = if j == 1 {
        Box::new(x1(dim, m, n, k)?)
    } else {
        Box::new(x2(dim, m, n, k)?)
    };
    let mut f = PowerFunctional::new(base, n_tilde)?;
    f.descriptor = Descriptor::FPow { j, m, n, k, n_tilde };
    Ok(f)
}

/// `g^j_{m,n,k} = |Y_j|^{2Ñ}`
pub fn g_pow(dim: usize, j: u8, m: u32, n: u32, k: u64, n_tilde: u32) -> Result<PowerFunctional> {
    level_j(j)?;
    let base: Box<dyn IncrementFunctional> = if j == 1 {
        Box::new(y1(dim, m, n, k)?)
    } else {
        Box::new(y2(dim, m, n, k)?)
    };
    let mut f = PowerFunctional::new(base, n_tilde)?;
    f.descriptor = Descriptor::GPow { j, m, n, k, n_tilde };
    Ok(f)
}

/// Builds any built-in functional from its descriptor. `params` is used by
/// the ρ functionals only.
pub fn builtin(
    dim: usize,
    descriptor: Descriptor,
    params: &RhoParams,
) -> Result<Box<dyn IncrementFunctional>> {
    Ok(match descriptor {
        Descriptor::X1 { m, n, k } => Box::new(x1(dim, m, n, k)?),
        Descriptor::X2 { m, n, k } => Box::new(x2(dim, m, n, k)?),
        Descriptor::Y1 { m, n, k } => Box::new(y1(dim, m, n, k)?),
        Descriptor::Y2 { m, n, k } => Box::new(y2(dim, m, n, k)?),
        Descriptor::FPow { j, m, n, k, n_tilde } => Box::new(f_pow(dim, j, m, n, k, n_tilde)?),
        Descriptor::GPow { j, m, n, k, n_tilde } => Box::new(g_pow(dim, j, m, n, k, n_tilde)?),
        Descriptor::Rho { .. } | Descriptor::RhoDiff { .. } | Descriptor::RhoProduct { .. } => {
            Box::new(RhoFunctional::new(dim, descriptor, *params)?)
        }
        Descriptor::Custom => {
            return Err(Error::InvalidParameter("custom functionals have no builder".into()))
        }
    })
}

/// The dyadic `ρ` sums as functionals of the finest polygon's increments.
///
/// Levels coarser than the generation level are evaluated block by block;
/// finer levels collapse onto each segment with weight
/// `Σ n^γ 2^{(n−m)(1−p)}`, truncated or summed analytically per the tail mode.
#[derive(Debug, Clone)]
pub struct RhoFunctional {
    dim: usize,
    kind: Descriptor,
    params: RhoParams,
}

impl RhoFunctional {
    pub fn new(dim: usize, kind: Descriptor, params: RhoParams) -> Result<Self> {
        params.validate()?;
        if dim == 0 {
            return Err(Error::InvalidParameter("dimension must be >= 1".into()));
        }
        let m = match kind {
            Descriptor::Rho { j, m } | Descriptor::RhoDiff { j, m } => {
                level_j(j)?;
                m
            }
            Descriptor::RhoProduct { m } => m,
            other => {
                return Err(Error::InvalidParameter(format!("{other:?} is not a rho functional")))
            }
        };
        if m > 20 {
            return Err(Error::InvalidParameter(format!("m = {m} too large for dense gradients")));
        }
        Ok(Self { dim, kind, params })
    }

    /// `Σ_{n>from} n^γ 2^{(n−from)(1−p)}` under the tail policy.
    fn weight_after(&self, from: u32) -> f64 {
        let (p, gamma) = (self.params.p, self.params.gamma);
        match self.params.tail_mode {
            TailMode::AnalyticTail => tail_weight(from, p, gamma),
            TailMode::Truncate => (from + 1..=self.params.n_max)
                .map(|n| (n as f64).powf(gamma) * (2.0f64).powf((n - from) as f64 * (1.0 - p)))
                .sum(),
        }
    }

    /// Weight of levels `n ≥ max(m, 1)` collapsed onto level-`m` segments.
    fn weight_from(&self, m: u32) -> f64 {
        if m == 0 {
            return self.weight_after(0);
        }
        let own = if m <= self.n_max_effective() {
            (m as f64).powf(self.params.gamma)
        } else {
            0.0
        };
        own + self.weight_after(m)
    }

    fn n_max_effective(&self) -> u32 {
        match self.params.tail_mode {
            TailMode::AnalyticTail => u32::MAX,
            TailMode::Truncate => self.params.n_max,
        }
    }

    fn coarse_levels(&self, below: u32) -> std::ops::Range<u32> {
        1..below.min(self.n_max_effective().saturating_add(1))
    }

    /// `ρ₁(w^(m))^p` and its gradient in the level-`m` increments `y`.
    fn single1(&self, m: u32, y: &[f64], grad: Option<&mut [f64]>) -> f64 {
        let d = self.dim;
        let p = self.params.p;
        let segs = 1usize << m;
        let mut total = 0.0;
        let mut grad = grad;
        let mut block = vec![0.0; d];
        for n in self.coarse_levels(m) {
            let wn = (n as f64).powf(self.params.gamma);
            let width = segs >> n;
            for kk in 0..(1usize << n) {
                block.fill(0.0);
                for r in kk * width..(kk + 1) * width {
                    for i in 0..d {
                        block[i] += y[r * d + i];
                    }
                }
                let nb = norm(&block);
                total += wn * nb.powf(p);
                if let Some(g) = grad.as_deref_mut() {
                    if nb > 0.0 {
                        let c = wn * p * nb.powf(p - 2.0);
                        for r in kk * width..(kk + 1) * width {
                            for i in 0..d {
                                g[r * d + i] += c * block[i];
                            }
                        }
                    }
                }
            }
        }
        let w = self.weight_from(m);
        for r in 0..segs {
            let v = &y[r * d..(r + 1) * d];
            let nv = norm(v);
            total += w * nv.powf(p);
            if let Some(g) = grad.as_deref_mut() {
                if nv > 0.0 {
                    let c = w * p * nv.powf(p - 2.0);
                    for i in 0..d {
                        g[r * d + i] += c * v[i];
                    }
                }
            }
        }
        total
    }

    /// `ρ₂(w^(m))^{p/2}` and its gradient.
    fn single2(&self, m: u32, y: &[f64], grad: Option<&mut [f64]>) -> f64 {
        let d = self.dim;
        let e = self.params.p / 2.0;
        let segs = 1usize << m;
        let mut total = 0.0;
        let mut grad = grad;
        for n in self.coarse_levels(m) {
            let wn = (n as f64).powf(self.params.gamma);
            let width = segs >> n;
            for kk in 0..(1usize << n) {
                let block = &y[kk * width * d..(kk + 1) * width * d];
                let v = iterated(d, block);
                let nv = norm(&v);
                total += wn * nv.powf(e);
                if let Some(g) = grad.as_deref_mut() {
                    if nv > 0.0 {
                        let c = wn * e * nv.powf(e - 2.0);
                        iterated_vjp(d, block, &v, c, &mut g[kk * width * d..(kk + 1) * width * d]);
                    }
                }
            }
        }
        let w = self.weight_from(m) * (2.0f64).powf(-e);
        for r in 0..segs {
            let v = &y[r * d..(r + 1) * d];
            let nv = norm(v);
            total += w * nv.powf(self.params.p);
            if let Some(g) = grad.as_deref_mut() {
                if nv > 0.0 {
                    let c = w * self.params.p * nv.powf(self.params.p - 2.0);
                    for i in 0..d {
                        g[r * d + i] += c * v[i];
                    }
                }
            }
        }
        total
    }

    /// `ρ₁(w^(m+1), w^(m))^p = W Σ_q |x_{2q−1} − x_{2q}|^p`
    fn diff1(&self, m: u32, x: &[f64], grad: Option<&mut [f64]>) -> f64 {
        let d = self.dim;
        let p = self.params.p;
        let w = self.weight_after(m);
        let mut total = 0.0;
        let mut grad = grad;
        let mut delta = vec![0.0; d];
        for q in 0..(1usize << m) {
            let (a, b) = (2 * q * d, (2 * q + 1) * d);
            for i in 0..d {
                delta[i] = x[a + i] - x[b + i];
            }
            let nd = norm(&delta);
            total += w * nd.powf(p);
            if let Some(g) = grad.as_deref_mut() {
                if nd > 0.0 {
                    let c = w * p * nd.powf(p - 2.0);
                    for i in 0..d {
                        g[a + i] += c * delta[i];
                        g[b + i] -= c * delta[i];
                    }
                }
            }
        }
        total
    }

    /// `ρ₂(w^(m+1), w^(m))^{p/2}`
    fn diff2(&self, m: u32, x: &[f64], grad: Option<&mut [f64]>) -> f64 {
        let d = self.dim;
        let e = self.params.p / 2.0;
        let fine = 1usize << (m + 1);
        let mut total = 0.0;
        let mut grad = grad;
        for n in self.coarse_levels(m + 1) {
            let wn = (n as f64).powf(self.params.gamma);
            let width = fine >> n;
            for kk in 0..(1usize << n) {
                let mut v = vec![0.0; d * d];
                for q in 0..width / 2 {
                    let a = &x[(kk * width + 2 * q) * d..][..d];
                    let b = &x[(kk * width + 2 * q + 1) * d..][..d];
                    for i in 0..d {
                        for j in 0..d {
                            v[i * d + j] += 0.5 * (a[i] * b[j] - b[i] * a[j]);
                        }
                    }
                }
                let nv = norm(&v);
                total += wn * nv.powf(e);
                if let Some(g) = grad.as_deref_mut() {
                    if nv > 0.0 {
                        let c = wn * e * nv.powf(e - 2.0);
                        for q in 0..width / 2 {
                            let ia = (kk * width + 2 * q) * d;
                            let ib = ia + d;
                            for r in 0..d {
                                let (mut va, mut vb) = (0.0, 0.0);
                                for s in 0..d {
                                    va += v[r * d + s] * x[ib + s];
                                    vb += v[r * d + s] * x[ia + s];
                                }
                                g[ia + r] += c * va;
                                g[ib + r] -= c * vb;
                            }
                        }
                    }
                }
            }
        }
        let w = 0.5 * self.weight_after(m);
        let mut sum = vec![0.0; d];
        let mut qm = vec![0.0; d * d];
        for q in 0..(1usize << m) {
            let (ia, ib) = (2 * q * d, (2 * q + 1) * d);
            for i in 0..d {
                sum[i] = x[ia + i] + x[ib + i];
            }
            for (own, other) in [(ia, ib), (ib, ia)] {
                let xc = &x[own..own + d];
                for i in 0..d {
                    for j in 0..d {
                        qm[i * d + j] = 0.5 * (4.0 * xc[i] * xc[j] - sum[i] * sum[j]);
                    }
                }
                let nq = norm(&qm);
                total += w * nq.powf(e);
                if let Some(g) = grad.as_deref_mut() {
                    if nq > 0.0 {
                        let c = w * e * nq.powf(e - 2.0);
                        for r in 0..d {
                            let (mut qx, mut qs) = (0.0, 0.0);
                            for s in 0..d {
                                qx += qm[r * d + s] * xc[s];
                                qs += qm[r * d + s] * sum[s];
                            }
                            g[own + r] += c * (4.0 * qx - qs);
                            g[other + r] -= c * qs;
                        }
                    }
                }
            }
        }
        total
    }

    fn coarsen(&self, x: &[f64]) -> Vec<f64> {
        let d = self.dim;
        let half = x.len() / (2 * d);
        let mut y = vec![0.0; half * d];
        for q in 0..half {
            for i in 0..d {
                y[q * d + i] = x[2 * q * d + i] + x[(2 * q + 1) * d + i];
            }
        }
        y
    }

    fn value_and_grad(&self, x: &[f64], want_grad: bool) -> (f64, Vec<f64>) {
        let d = self.dim;
        let mut g = if want_grad { vec![0.0; x.len()] } else { Vec::new() };
        let gref = if want_grad { Some(g.as_mut_slice()) } else { None };
        let value = match self.kind {
            Descriptor::Rho { j: 1, m } => self.single1(m, x, gref),
            Descriptor::Rho { m, .. } => self.single2(m, x, gref),
            Descriptor::RhoDiff { j: 1, m } => self.diff1(m, x, gref),
            Descriptor::RhoDiff { m, .. } => self.diff2(m, x, gref),
            Descriptor::RhoProduct { m } => {
                let y = self.coarsen(x);
                if want_grad {
                    let mut ga = vec![0.0; y.len()];
                    let mut gb = vec![0.0; x.len()];
                    let a = self.single1(m, &y, Some(&mut ga));
                    let b = self.diff1(m, x, Some(&mut gb));
                    for q in 0..y.len() / d {
                        for i in 0..d {
                            g[2 * q * d + i] = b * ga[q * d + i] + a * gb[2 * q * d + i];
                            g[(2 * q + 1) * d + i] = b * ga[q * d + i] + a * gb[(2 * q + 1) * d + i];
                        }
                    }
                    a * b
                } else {
                    self.single1(m, &y, None) * self.diff1(m, x, None)
                }
            }
            _ => unreachable!("validated in new"),
        };
        (value, g)
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

/// `Σ_{r<s} x_r ⊗ x_s + ½ Σ_r x_r ⊗ x_r`
fn iterated(d: usize, xs: &[f64]) -> Vec<f64> {
    let mut prefix = vec![0.0; d];
    let mut out = vec![0.0; d * d];
    for x in xs.chunks(d) {
        for i in 0..d {
            for j in 0..d {
                out[i * d + j] += (prefix[i] + 0.5 * x[i]) * x[j];
            }
        }
        for i in 0..d {
            prefix[i] += x[i];
        }
    }
    out
}

/// Adds `c Σ_{ij} w_{ij} ∇(iterated)_{ij}` to `g`.
fn iterated_vjp(d: usize, xs: &[f64], w: &[f64], c: f64, g: &mut [f64]) {
    let b = xs.len() / d;
    let mut total = vec![0.0; d];
    for x in xs.chunks(d) {
        for i in 0..d {
            total[i] += x[i];
        }
    }
    let mut prefix = vec![0.0; d];
    for u in 0..b {
        let x = &xs[u * d..(u + 1) * d];
        // R_u = Σ_{s>u} x_s + ½ x_u, C_u = Σ_{r<u} x_r + ½ x_u
        let mut row = vec![0.0; d];
        let mut col = vec![0.0; d];
        for i in 0..d {
            row[i] = total[i] - prefix[i] - 0.5 * x[i];
            col[i] = prefix[i] + 0.5 * x[i];
        }
        for a in 0..d {
            let mut acc = 0.0;
            for j in 0..d {
                acc += w[a * d + j] * row[j] + w[j * d + a] * col[j];
            }
            g[u * d + a] += c * acc;
        }
        for i in 0..d {
            prefix[i] += x[i];
        }
    }
}

impl IncrementFunctional for RhoFunctional {
    fn dim(&self) -> usize {
        self.dim
    }

    fn generation_level(&self) -> u32 {
        match self.kind {
            Descriptor::Rho { m, .. } => m,
            Descriptor::RhoDiff { m, .. } | Descriptor::RhoProduct { m } => m + 1,
            _ => unreachable!("validated in new"),
        }
    }

    fn support(&self) -> Support {
        Support {
            start: 1,
            len: 1u64 << self.generation_level(),
        }
    }

    fn output_len(&self) -> usize {
        1
    }

    fn descriptor(&self) -> Descriptor {
        self.kind
    }

    fn eval(&self, x: &[f64]) -> Vec<f64> {
        vec![self.value_and_grad(x, false).0]
    }

    fn jacobian(&self, x: &[f64]) -> Vec<f64> {
        self.value_and_grad(x, true).1
    }

    fn vjp(&self, x: &[f64], w: &[f64]) -> Vec<f64> {
        let mut g = self.jacobian(x);
        for v in &mut g {
            *v *= w[0];
        }
        g
    }
}

/// Largest entrywise deviation between the analytic Jacobian and
/// Richardson-extrapolated central differences with step `h`, relative to
/// the Jacobian's largest entry.
pub fn jacobian_fd_error(f: &dyn IncrementFunctional, x: &[f64], h: f64) -> Result<f64> {
    check_sample(f, x)?;
    let nv = f.n_vars();
    let no = f.output_len();
    let jac = f.jacobian(x);
    let mut worst: f64 = 0.0;
    for v in 0..nv {
        let fd = richardson(x, v, h, |xp| f.eval(xp));
        for o in 0..no {
            worst = worst.max((fd[o] - jac[o * nv + v]).abs());
        }
    }
    Ok(relative(worst, &jac))
}

/// As [`jacobian_fd_error`], differencing the Jacobian to check the Hessian.
pub fn hessian_fd_error(f: &dyn IncrementFunctional, x: &[f64], h: f64) -> Result<f64> {
    check_sample(f, x)?;
    let nv = f.n_vars();
    let no = f.output_len();
    let hess = f.hessian(x).ok_or_else(|| {
        Error::InvalidParameter(format!("{:?} has no second derivative", f.descriptor()))
    })?;
    let mut worst: f64 = 0.0;
    for v in 0..nv {
        let fd = richardson(x, v, h, |xp| f.jacobian(xp));
        for o in 0..no {
            for u in 0..nv {
                worst = worst.max((fd[o * nv + u] - hess[(o * nv + u) * nv + v]).abs());
            }
        }
    }
    Ok(relative(worst, &hess))
}

/// Smallest FD error over steps `10^{−3}..10^{−7}` times the sample's
/// largest entry, for the Jacobian (`order = 1`) or Hessian (`order = 2`).
/// A wrong derivative shows at every step; truncation near kinks of `|·|^{p/j}`
/// or near zeros of the gradient only at the larger ones.
pub fn fd_error_over_steps(f: &dyn IncrementFunctional, x: &[f64], order: u8) -> Result<f64> {
    let scale = x.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(f64::MIN_POSITIVE);
    let mut best = f64::INFINITY;
    for e in 3..=7 {
        let h = scale * (10.0f64).powi(-e);
        let err = match order {
            1 => jacobian_fd_error(f, x, h)?,
            2 => hessian_fd_error(f, x, h)?,
            _ => return Err(Error::InvalidParameter(format!("derivative order {order} not in 1..=2"))),
        };
        best = best.min(err);
    }
    Ok(best)
}

/// `∂g/∂x_v` from central differences at `h` and `h/2`, extrapolated to
/// remove the `h²` term.
fn richardson(x: &[f64], v: usize, h: f64, g: impl Fn(&[f64]) -> Vec<f64>) -> Vec<f64> {
    let mut xp = x.to_vec();
    let mut central = |step: f64| {
        xp[v] = x[v] + step;
        let up = g(&xp);
        xp[v] = x[v] - step;
        let down = g(&xp);
        xp[v] = x[v];
        up.iter().zip(&down).map(|(a, b)| (a - b) / (2.0 * step)).collect::<Vec<f64>>()
    };
    let coarse = central(h);
    let fine = central(0.5 * h);
    fine.iter().zip(&coarse).map(|(f, c)| (4.0 * f - c) / 3.0).collect()
}

fn relative(err: f64, reference: &[f64]) -> f64 {
    let scale = reference.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if scale == 0.0 {
        err
    } else {
        err / scale
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SobolevEstimate {
    /// `||F||_q + ||DF|_H||_q (+ ||D²F|_{H⊗H}||_q)`
    pub value: f64,
    /// Term standard errors combined in quadrature.
    pub stderr: f64,
    pub terms: Vec<LqEstimate>,
}

/// Monte Carlo `||F||_{q,order}` with `order ∈ {0, 1, 2}`.
pub fn sobolev_norm_mc(
    f: &dyn IncrementFunctional,
    q: f64,
    order: u8,
    samples: usize,
    seed: u64,
) -> Result<SobolevEstimate> {
    if order > 2 {
        return Err(Error::InvalidParameter(format!("derivative order {order} not in 0..=2")));
    }
    if order == 2 && f.hess_sq(&vec![0.0; f.n_vars()]).is_none() {
        return Err(Error::InvalidParameter(format!(
            "{:?} has no second derivative",
            f.descriptor()
        )));
    }
    let rows: Vec<[f64; 3]> = sample_map(samples, seed, |rng| {
        let x = sample_increments(f, rng);
        let v = f.eval(&x).iter().map(|a| a * a).sum::<f64>().sqrt();
        let g = if order >= 1 {
            (f.grad_sq(&x) * pow2(-(f.generation_level() as i64))).sqrt()
        } else {
            0.0
        };
        let h = if order == 2 {
            f.hess_sq(&x).unwrap_or(0.0).sqrt() * pow2(-(f.generation_level() as i64))
        } else {
            0.0
        };
        [v, g, h]
    });
    let mut terms = Vec::new();
    for t in 0..=order as usize {
        let col: Vec<f64> = rows.iter().map(|r| r[t]).collect();
        terms.push(lq_norm(&col, q)?);
    }
    Ok(SobolevEstimate {
        value: terms.iter().map(|t| t.estimate).sum(),
        stderr: terms.iter().map(|t| t.stderr * t.stderr).sum::<f64>().sqrt(),
        terms,
    })
}

/// `||F||_{q,1}`
pub fn sobolev_q1_norm_mc(
    f: &dyn IncrementFunctional,
    q: f64,
    samples: usize,
    seed: u64,
) -> Result<SobolevEstimate> {
    sobolev_norm_mc(f, q, 1, samples, seed)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundCheck {
    pub label: String,
    pub lhs: f64,
    pub rhs: f64,
    pub pass: bool,
}

fn bound(label: &str, lhs: f64, rhs: f64) -> BoundCheck {
    BoundCheck {
        label: label.into(),
        lhs,
        rhs,
        pass: lhs <= rhs * (1.0 + 1e-10) + 1e-300,
    }
}

/// Pointwise chain-rule bounds for `|X|²` and `|X|^{2Ñ}`, `X` one of the
/// built-ins `X₁, X₂, Y₁, Y₂`:
///
/// * `|D|X|²| ≤ 2|X||DX|`, `|D|X|^{2Ñ}| ≤ 2Ñ|X|^{2Ñ−1}|DX|`;
/// * for `order = 2` also `|D²|X|²| ≤ 2|DX|² + 2|X||D²X|` and the matching
///   bound for `|D²|X|^{2Ñ}|`.
pub fn power_derivative_bound_check(
    base: Box<dyn IncrementFunctional>,
    n_tilde: u32,
    order: u8,
    x: &[f64],
) -> Result<Vec<BoundCheck>> {
    match base.descriptor() {
        Descriptor::X1 { .. } | Descriptor::X2 { .. } | Descriptor::Y1 { .. } | Descriptor::Y2 { .. } => {}
        other => return Err(Error::InvalidParameter(format!("unsupported base {other:?}"))),
    }
    if !(1..=2).contains(&order) {
        return Err(Error::InvalidParameter(format!("derivative order {order} not in 1..=2")));
    }
    check_sample(base.as_ref(), x)?;
    let xn = value_norm(base.as_ref(), x)?;
    let dx = grad_h_norm(base.as_ref(), x)?;
    let d2x = hess_h_norm(base.as_ref(), x)?;
    let nt = n_tilde as f64;
    let ntp = n_tilde as i32;

    let square = PowerFunctional::new(base, 1)?;
    let mut out = vec![bound("|D|X|^2| <= 2|X||DX|", grad_h_norm(&square, x)?, 2.0 * xn * dx)];
    if order == 2 {
        out.push(bound(
            "|D^2|X|^2| <= 2|DX|^2 + 2|X||D^2X|",
            hess_h_norm(&square, x)?,
            2.0 * dx * dx + 2.0 * xn * d2x,
        ));
    }
    let power = PowerFunctional::new(square.base, n_tilde)?;
    out.push(bound(
        "|D|X|^(2N)| <= 2N|X|^(2N-1)|DX|",
        grad_h_norm(&power, x)?,
        2.0 * nt * xn.powi(2 * ntp - 1) * dx,
    ));
    if order == 2 {
        let first = if n_tilde >= 2 {
            nt * (nt - 1.0) * xn.powi(2 * ntp - 4) * (2.0 * xn * dx).powi(2)
        } else {
            0.0
        };
        let second = nt * xn.powi(2 * ntp - 2) * (2.0 * dx * dx + 2.0 * xn * d2x);
        out.push(bound(
            "|D^2|X|^(2N)| <= N(N-1)|X|^(2N-4)|D|X|^2|^2 + N|X|^(2N-2)|D^2|X|^2|",
            hess_h_norm(&power, x)?,
            first + second,
        ));
    }
    Ok(out)
}
