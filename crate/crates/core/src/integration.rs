//! Integration of 1-forms against level-2 rough paths.
//!
//! Over each piece `[u, v]` of a partition the local approximation is
//!
//! ```text
//! ỹ¹ = f(w_u) w¹_{u,v} + Σ_{a,b} ∂_a f_{·b}(w_u) w²_{u,v,ab}
//! ỹ² = (f(w_u) ⊗ f(w_u)) w²_{u,v}
//! ```
//!
//! and the integral is the limit of Chen products of the `ỹ` as the
//! partition is refined. Successive dyadic refinements are combined by
//! Richardson extrapolation, since the product error is a power series in the
//! mesh starting at the square.

use crate::error::{check_dim, Error, Result};
use crate::lift::lift_polygonal;
use crate::paths::PolygonalPath;
use crate::tensor::GroupTensor2;

/// A map `x ↦ f(x) ∈ L(ℝ^d, ℝ^{d̃})` with its derivative.
pub trait OneForm {
    fn dim_in(&self) -> usize;
    fn dim_out(&self) -> usize;
    /// `out[o * d + b] = f_{ob}(x)`
    fn value(&self, x: &[f64], out: &mut [f64]);
    /// `out[(o * d + a) * d + b] = ∂_a f_{ob}(x)`
    fn derivative(&self, x: &[f64], out: &mut [f64]);
}

/// `f(x) = A x + B` in the sense `f_{ob}(x) = Σ_a a[o][b][a] x_a + b[o][b]`.
#[derive(Debug, Clone)]
pub struct AffineForm {
    dim_in: usize,
    dim_out: usize,
    /// `slope[(o * d + b) * d + a] = ∂_a f_{ob}`
    slope: Vec<f64>,
    offset: Vec<f64>,
}

impl AffineForm {
    pub fn new(dim_in: usize, dim_out: usize, slope: Vec<f64>, offset: Vec<f64>) -> Result<Self> {
        if dim_in == 0 || dim_out == 0 {
            return Err(Error::InvalidParameter("form dimensions must be >= 1".into()));
        }
        check_dim(dim_out * dim_in * dim_in, slope.len())?;
        check_dim(dim_out * dim_in, offset.len())?;
        Ok(Self {
            dim_in,
            dim_out,
            slope,
            offset,
        })
    }

    /// `f(x) = Id`, whose integral is the path itself.
    pub fn identity(d: usize) -> Self {
        let mut offset = vec![0.0; d * d];
        for i in 0..d {
            offset[i * d + i] = 1.0;
        }
        Self {
            dim_in: d,
            dim_out: d,
            slope: vec![0.0; d * d * d],
            offset,
        }
    }

    /// A constant matrix `A` (`d̃ × d`, row-major).
    pub fn constant(dim_in: usize, dim_out: usize, matrix: Vec<f64>) -> Result<Self> {
        Self::new(dim_in, dim_out, vec![0.0; dim_out * dim_in * dim_in], matrix)
    }
}

impl OneForm for AffineForm {
    fn dim_in(&self) -> usize {
        self.dim_in
    }

    fn dim_out(&self) -> usize {
        self.dim_out
    }

    fn value(&self, x: &[f64], out: &mut [f64]) {
        let d = self.dim_in;
        for ob in 0..self.dim_out * d {
            let row = &self.slope[ob * d..(ob + 1) * d];
            out[ob] = self.offset[ob] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        }
    }

    fn derivative(&self, _x: &[f64], out: &mut [f64]) {
        let d = self.dim_in;
        for o in 0..self.dim_out {
            for a in 0..d {
                for b in 0..d {
                    out[(o * d + a) * d + b] = self.slope[(o * d + b) * d + a];
                }
            }
        }
    }
}

/// Largest relative gap between `derivative` and central differences of `value`.
pub fn derivative_defect(form: &dyn OneForm, x: &[f64], h: f64) -> f64 {
    let (d, e) = (form.dim_in(), form.dim_out());
    let mut analytic = vec![0.0; e * d * d];
    form.derivative(x, &mut analytic);
    let mut plus = vec![0.0; e * d];
    let mut minus = vec![0.0; e * d];
    let mut xp = x.to_vec();
    let mut worst: f64 = 0.0;
    for a in 0..d {
        xp[a] = x[a] + h;
        form.value(&xp, &mut plus);
        xp[a] = x[a] - h;
        form.value(&xp, &mut minus);
        xp[a] = x[a];
        for o in 0..e {
            for b in 0..d {
                let fd = (plus[o * d + b] - minus[o * d + b]) / (2.0 * h);
                let an = analytic[(o * d + a) * d + b];
                worst = worst.max((fd - an).abs() / an.abs().max(1.0));
            }
        }
    }
    worst
}

/// `ỹ_{s,t}` from the base point `w_s` and the driver's lift over `[s, t]`.
pub fn local_approx(form: &dyn OneForm, w_s: &[f64], inc: &GroupTensor2) -> Result<GroupTensor2> {
    let d = form.dim_in();
    check_dim(d, w_s.len())?;
    check_dim(d, inc.dim())?;
    let e = form.dim_out();
    let mut f = vec![0.0; e * d];
    let mut df = vec![0.0; e * d * d];
    form.value(w_s, &mut f);
    form.derivative(w_s, &mut df);
    Ok(local_approx_with(d, e, &f, &df, inc))
}

fn local_approx_with(d: usize, e: usize, f: &[f64], df: &[f64], inc: &GroupTensor2) -> GroupTensor2 {
    let w1 = inc.level1();
    let w2 = inc.level2();
    let mut y1 = vec![0.0; e];
    for o in 0..e {
        let mut acc = 0.0;
        for b in 0..d {
            acc += f[o * d + b] * w1[b];
        }
        for a in 0..d {
            for b in 0..d {
                acc += df[(o * d + a) * d + b] * w2[a * d + b];
            }
        }
        y1[o] = acc;
    }
    // (f ⊗ f)(w²) = f w² fᵀ
    let mut fw = vec![0.0; e * d];
    for o in 0..e {
        for b in 0..d {
            let mut acc = 0.0;
            for a in 0..d {
                acc += f[o * d + a] * w2[a * d + b];
            }
            fw[o * d + b] = acc;
        }
    }
    let mut y2 = vec![0.0; e * e];
    for o in 0..e {
        for q in 0..e {
            let mut acc = 0.0;
            for b in 0..d {
                acc += fw[o * d + b] * f[q * d + b];
            }
            y2[o * e + q] = acc;
        }
    }
    GroupTensor2::from_parts(e, y1, y2)
}

/// A path with a level-2 lift over arbitrary subintervals of [0, 1].
pub trait Driver {
    fn dim(&self) -> usize;
    fn point(&self, t: f64) -> Vec<f64>;
    fn increment(&self, s: f64, t: f64) -> GroupTensor2;
    /// Dyadic level at which the driver becomes straight on every piece.
    fn resolution(&self) -> u32;
}

impl Driver for PolygonalPath {
    fn dim(&self) -> usize {
        PolygonalPath::dim(self)
    }

    fn point(&self, t: f64) -> Vec<f64> {
        self.eval_unchecked(t)
    }

    fn increment(&self, s: f64, t: f64) -> GroupTensor2 {
        lift_polygonal(self, s, t).expect("driver queried on an empty interval")
    }

    fn resolution(&self) -> u32 {
        self.level()
    }
}

/// `w_t = t v`
#[derive(Debug, Clone)]
pub struct LinearPath {
    pub velocity: Vec<f64>,
}

impl Driver for LinearPath {
    fn dim(&self) -> usize {
        self.velocity.len()
    }

    fn point(&self, t: f64) -> Vec<f64> {
        self.velocity.iter().map(|v| t * v).collect()
    }

    fn increment(&self, s: f64, t: f64) -> GroupTensor2 {
        let delta: Vec<f64> = self.velocity.iter().map(|v| (t - s) * v).collect();
        crate::lift::lift_segment(&delta)
    }

    fn resolution(&self) -> u32 {
        0
    }
}

/// Dyadic partition levels to try, coarse to fine.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Schedule {
    pub first: u32,
    pub last: u32,
}

impl Schedule {
    /// From the driver's own resolution to three levels below it.
    pub fn for_driver(driver: &dyn Driver) -> Self {
        let r = driver.resolution();
        Self {
            first: r,
            last: r + 3,
        }
    }

    /// As [`Schedule::for_driver`], but starting no coarser than the dyadic
    /// level of `s` and `t`, so every partition contains both endpoints.
    pub fn for_interval(driver: &dyn Driver, s: f64, t: f64) -> Self {
        let r = driver.resolution().max(dyadic_level(s)).max(dyadic_level(t));
        Self { first: r, last: r + 3 }
    }
}

/// Smallest `L <= 24` with `x 2^L` an integer, or 0 if there is none.
fn dyadic_level(x: f64) -> u32 {
    (0..=24)
        .find(|&l| (x * (1u64 << l) as f64).fract() == 0.0)
        .unwrap_or(0)
}

pub const DEFAULT_TOL: f64 = 1e-10;

/// Plain Chen product of `ỹ` over the level-`level` dyadic grid cut to `[s, t]`.
pub fn riemann_product(
    form: &dyn OneForm,
    driver: &dyn Driver,
    s: f64,
    t: f64,
    level: u32,
) -> Result<GroupTensor2> {
    let d = form.dim_in();
    check_dim(d, driver.dim())?;
    if !(0.0 <= s && s < t && t <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "need 0 <= s < t <= 1, got s = {s}, t = {t}"
        )));
    }
    if level > 24 {
        return Err(Error::InvalidParameter(format!("partition level {level} too fine")));
    }
    let e = form.dim_out();
    let scale = (1u64 << level) as f64;
    let mut points = vec![s];
    let first = (s * scale).floor() as u64 + 1;
    let mut k = first;
    while (k as f64) / scale < t {
        points.push(k as f64 / scale);
        k += 1;
    }
    points.push(t);

    let mut f = vec![0.0; e * d];
    let mut df = vec![0.0; e * d * d];
    let mut acc = GroupTensor2::identity(e);
    for w in points.windows(2) {
        let base = driver.point(w[0]);
        form.value(&base, &mut f);
        form.derivative(&base, &mut df);
        let inc = driver.increment(w[0], w[1]);
        acc.mul_assign_unchecked(&local_approx_with(d, e, &f, &df, &inc));
    }
    Ok(acc)
}

fn flat(t: &GroupTensor2) -> Vec<f64> {
    t.level1().iter().chain(t.level2()).copied().collect()
}

fn gap(a: &[f64], b: &[f64], e: usize) -> f64 {
    let d1: f64 = a[..e].iter().zip(&b[..e]).map(|(x, y)| (x - y) * (x - y)).sum();
    let d2: f64 = a[e..].iter().zip(&b[e..]).map(|(x, y)| (x - y) * (x - y)).sum();
    let n1: f64 = a[..e].iter().map(|x| x * x).sum();
    let n2: f64 = a[e..].iter().map(|x| x * x).sum();
    (d1.sqrt() / n1.sqrt().max(1.0)).max(d2.sqrt() / n2.sqrt().max(1.0))
}

/// `∫_s^t f(w) dw` at the tensor level.
///
/// Riemann products on successive levels of `schedule` are extrapolated
/// (Romberg table with error powers 2, 3, 4, …) until two successive diagonal
/// entries agree within `tol` in each level, relative to the level's size
/// once that exceeds 1.
pub fn integrate(
    form: &dyn OneForm,
    driver: &dyn Driver,
    s: f64,
    t: f64,
    schedule: Schedule,
    tol: f64,
) -> Result<GroupTensor2> {
    if schedule.last < schedule.first {
        return Err(Error::InvalidParameter("empty refinement schedule".into()));
    }
    let e = form.dim_out();
    let mut rows: Vec<Vec<Vec<f64>>> = Vec::new();
    let mut last_gap = f64::INFINITY;
    for (i, level) in (schedule.first..=schedule.last).enumerate() {
        let mut row = vec![flat(&riemann_product(form, driver, s, t, level)?)];
        for k in 1..=i {
            let factor = (2.0f64).powi(k as i32 + 1) - 1.0;
            let prev_row = &rows[i - 1];
            let next: Vec<f64> = row[k - 1]
                .iter()
                .zip(&prev_row[k - 1])
                .map(|(a, b)| a + (a - b) / factor)
                .collect();
            row.push(next);
        }
        if i >= 1 {
            last_gap = gap(&row[i], &rows[i - 1][i - 1], e);
            if last_gap < tol {
                let diag = row.pop().unwrap();
                return Ok(unflat(e, diag));
            }
        }
        rows.push(row);
    }
    let n = rows.len();
    let last = unflat(e, rows[n - 1][n - 1].clone());
    let previous = if n >= 2 {
        unflat(e, rows[n - 2][n - 2].clone())
    } else {
        last.clone()
    };
    Err(Error::NotConverged {
        gap: last_gap,
        last: Box::new(last),
        previous: Box::new(previous),
    })
}

fn unflat(e: usize, mut v: Vec<f64>) -> GroupTensor2 {
    let l2 = v.split_off(e);
    GroupTensor2::from_parts(e, v, l2)
}

/// [`integrate`] with the default schedule and tolerance.
pub fn integrate_default(form: &dyn OneForm, driver: &dyn Driver, s: f64, t: f64) -> Result<GroupTensor2> {
    integrate(form, driver, s, t, Schedule::for_interval(driver, s, t), DEFAULT_TOL)
}
