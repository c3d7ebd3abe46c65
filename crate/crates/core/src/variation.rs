//! p-variation distances on anchor grids and the dyadic `ρ_j` functionals.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::lift::DyadicLiftTable;
use crate::paths::PolygonalPath;
use crate::tensor::GroupTensor2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TailMode {
    Truncate,
    AnalyticTail,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RhoParams {
    pub p: f64,
    pub gamma: f64,
    pub n_max: u32,
    pub tail_mode: TailMode,
}

impl Default for RhoParams {
    fn default() -> Self {
        Self {
            p: 2.5,
            gamma: 0.5,
            n_max: 30,
            tail_mode: TailMode::AnalyticTail,
        }
    }
}

impl RhoParams {
    pub fn new(p: f64, gamma: f64, n_max: u32, tail_mode: TailMode) -> Result<Self> {
        let params = Self {
            p,
            gamma,
            n_max,
            tail_mode,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.p > 2.0 && self.p < 3.0) {
            return Err(Error::InvalidParameter(format!("p = {} must lie in (2, 3)", self.p)));
        }
        if !(self.gamma > self.p / 2.0 - 1.0) || !self.gamma.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "gamma = {} must exceed p/2 - 1 = {}",
                self.gamma,
                self.p / 2.0 - 1.0
            )));
        }
        if self.n_max < 1 || self.n_max > 62 {
            return Err(Error::InvalidParameter(format!("n_max = {} not in 1..=62", self.n_max)));
        }
        Ok(())
    }
}

/// `x ↦ x^e` for squared norms, with a square-root chain when `8e` is an
/// integer so the hot loops avoid `powf`.
#[derive(Debug, Clone, Copy)]
pub struct SqPower {
    whole: i32,
    eighths: u8,
    general: Option<f64>,
}

impl SqPower {
    pub fn new(e: f64) -> Self {
        let scaled = e * 8.0;
        if e >= 0.0 && e <= 16.0 && scaled == scaled.round() {
            let s = scaled as i32;
            Self {
                whole: s / 8,
                eighths: (s % 8) as u8,
                general: None,
            }
        } else {
            Self {
                whole: 0,
                eighths: 0,
                general: Some(e),
            }
        }
    }

    #[inline(always)]
    pub fn eval(&self, x: f64) -> f64 {
        if let Some(e) = self.general {
            return x.powf(e);
        }
        let mut out = if self.whole == 0 { 1.0 } else { x.powi(self.whole) };
        if self.eighths != 0 {
            let r2 = x.sqrt();
            if self.eighths & 4 != 0 {
                out *= r2;
            }
            if self.eighths & 3 != 0 {
                let r4 = r2.sqrt();
                if self.eighths & 2 != 0 {
                    out *= r4;
                }
                if self.eighths & 1 != 0 {
                    out *= r4.sqrt();
                }
            }
        }
        out
    }
}

/// `|v|^{p/j}`, the per-interval cost in every p-variation sum.
pub fn increment_cost(v: &[f64], p: f64, j: u8) -> f64 {
    let sq: f64 = v.iter().map(|x| x * x).sum();
    SqPower::new(p / (2.0 * j as f64)).eval(sq)
}

fn check_exponent(p: f64, j: u8) -> Result<()> {
    if j != 1 && j != 2 {
        return Err(Error::InvalidParameter(format!("level must be 1 or 2, got {j}")));
    }
    if !(p.is_finite() && p / j as f64 >= 1.0) {
        return Err(Error::InvalidParameter(format!("need p/j >= 1, got p = {p}, j = {j}")));
    }
    Ok(())
}

fn check_anchors(anchors: &[f64]) -> Result<()> {
    if anchors.len() < 2 {
        return Err(Error::InvalidParameter("need at least 2 anchors".into()));
    }
    if anchors.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::InvalidParameter("anchors must be strictly increasing".into()));
    }
    Ok(())
}

/// `(max_S Σ |incr(t_l, t_i)|^{p/j})^{j/p}` over anchor subsets `S` that
/// keep both endpoints.
pub fn p_variation_grid<F>(anchors: &[f64], p: f64, j: u8, mut incr: F) -> Result<f64>
where
    F: FnMut(f64, f64) -> Vec<f64>,
{
    check_anchors(anchors)?;
    check_exponent(p, j)?;
    let n = anchors.len();
    let mut best = vec![f64::NEG_INFINITY; n];
    best[0] = 0.0;
    for i in 1..n {
        for l in 0..i {
            let c = increment_cost(&incr(anchors[l], anchors[i]), p, j);
            let v = best[l] + c;
            if v > best[i] {
                best[i] = v;
            }
        }
    }
    Ok(best[n - 1].powf(j as f64 / p))
}

/// Running signatures `X_{0, t_i}` at each anchor, flattened.
#[derive(Debug, Clone)]
pub struct PrefixSignatures {
    dim: usize,
    level1: Vec<f64>,
    level2: Vec<f64>,
}

impl PrefixSignatures {
    /// Walks the polygon once, splitting segments at the anchors.
    pub fn of_polygon(path: &PolygonalPath, anchors: &[f64]) -> Result<Self> {
        check_anchors(anchors)?;
        if anchors[0] < 0.0 || anchors[anchors.len() - 1] > 1.0 {
            return Err(Error::InvalidParameter("anchors must lie in [0, 1]".into()));
        }
        let d = path.dim();
        let scale = path.segments() as f64;
        let mut acc = GroupTensor2::identity(d);
        let mut level1 = Vec::with_capacity(anchors.len() * d);
        let mut level2 = Vec::with_capacity(anchors.len() * d * d);
        let mut pos = 0.0f64;
        let mut delta = vec![0.0; d];
        for &t in anchors {
            // advance from `pos` to `t` (both in segment units)
            let target = t * scale;
            while pos < target {
                let k = (pos.floor() as usize).min(path.segments() - 1);
                let end = ((k + 1) as f64).min(target);
                let frac = end - pos;
                let v0 = path.vertex(k);
                let v1 = path.vertex(k + 1);
                for i in 0..d {
                    delta[i] = frac * (v1[i] - v0[i]);
                }
                acc.mul_assign_unchecked(&crate::lift::lift_segment(&delta));
                pos = end;
            }
            level1.extend_from_slice(acc.level1());
            level2.extend_from_slice(acc.level2());
        }
        Ok(Self { dim: d, level1, level2 })
    }

    /// From explicit running signatures, one per anchor.
    pub fn from_tensors(values: &[GroupTensor2]) -> Result<Self> {
        let first = values
            .first()
            .ok_or_else(|| Error::InvalidParameter("need at least one signature".into()))?;
        let d = first.dim();
        let mut level1 = Vec::with_capacity(values.len() * d);
        let mut level2 = Vec::with_capacity(values.len() * d * d);
        for v in values {
            check_dim(d, v.dim())?;
            level1.extend_from_slice(v.level1());
            level2.extend_from_slice(v.level2());
        }
        Ok(Self { dim: d, level1, level2 })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.level1.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.level1.is_empty()
    }

    /// `X_{t_l, t_i} = X_{0,t_l}^{-1} ⊗ X_{0,t_i}`
    pub fn increment(&self, l: usize, i: usize) -> GroupTensor2 {
        let d = self.dim;
        let xl = &self.level1[l * d..(l + 1) * d];
        let xi = &self.level1[i * d..(i + 1) * d];
        let al = &self.level2[l * d * d..(l + 1) * d * d];
        let ai = &self.level2[i * d * d..(i + 1) * d * d];
        let l1: Vec<f64> = xi.iter().zip(xl).map(|(a, b)| a - b).collect();
        let mut l2 = vec![0.0; d * d];
        for r in 0..d {
            for c in 0..d {
                l2[r * d + c] = ai[r * d + c] - al[r * d + c] - xl[r] * l1[c];
            }
        }
        GroupTensor2::from_parts(d, l1, l2)
    }
}

/// Grid p-variation of each level of `A − B`, as `(level 1, level 2)`.
pub fn d_p_grid_levels(a: &PrefixSignatures, b: &PrefixSignatures, p: f64) -> Result<(f64, f64)> {
    check_dim(a.dim, b.dim)?;
    check_dim(a.len(), b.len())?;
    if a.len() < 2 {
        return Err(Error::InvalidParameter("need at least 2 anchors".into()));
    }
    check_exponent(p, 2)?;
    let d = a.dim;
    let dd = d * d;
    let n = a.len();
    let pow1 = SqPower::new(p / 2.0);
    let pow2 = SqPower::new(p / 4.0);

    // level-1 difference u = x − y, level-2 difference U = A − B, and the
    // anchor-l part of the level-2 pair difference
    //   D2(l, i) = U_i + K_l − x_l ⊗ x_i + y_l ⊗ y_i,
    //   K_l = −U_l + x_l ⊗ x_l − y_l ⊗ y_l.
    let u: Vec<f64> = a.level1.iter().zip(&b.level1).map(|(x, y)| x - y).collect();
    let big_u: Vec<f64> = a.level2.iter().zip(&b.level2).map(|(x, y)| x - y).collect();
    let mut k_l = vec![0.0; n * dd];
    for l in 0..n {
        let x = &a.level1[l * d..(l + 1) * d];
        let y = &b.level1[l * d..(l + 1) * d];
        for r in 0..d {
            for c in 0..d {
                k_l[l * dd + r * d + c] = -big_u[l * dd + r * d + c] + x[r] * x[c] - y[r] * y[c];
            }
        }
    }

    let mut best1 = vec![f64::NEG_INFINITY; n];
    let mut best2 = vec![f64::NEG_INFINITY; n];
    best1[0] = 0.0;
    best2[0] = 0.0;
    let mut target = vec![0.0; dd];
    for i in 1..n {
        let ui = &u[i * d..(i + 1) * d];
        let xi = &a.level1[i * d..(i + 1) * d];
        let yi = &b.level1[i * d..(i + 1) * d];
        target.copy_from_slice(&big_u[i * dd..(i + 1) * dd]);
        let mut m1 = f64::NEG_INFINITY;
        let mut m2 = f64::NEG_INFINITY;
        for l in 0..i {
            let ul = &u[l * d..(l + 1) * d];
            let xl = &a.level1[l * d..(l + 1) * d];
            let yl = &b.level1[l * d..(l + 1) * d];
            let kl = &k_l[l * dd..(l + 1) * dd];
            let mut s1 = 0.0;
            for r in 0..d {
                let v = ui[r] - ul[r];
                s1 += v * v;
            }
            let mut s2 = 0.0;
            for r in 0..d {
                let (xr, yr) = (xl[r], yl[r]);
                for c in 0..d {
                    let v = target[r * d + c] + kl[r * d + c] - xr * xi[c] + yr * yi[c];
                    s2 += v * v;
                }
            }
            let v1 = best1[l] + pow1.eval(s1);
            let v2 = best2[l] + pow2.eval(s2);
            if v1 > m1 {
                m1 = v1;
            }
            if v2 > m2 {
                m2 = v2;
            }
        }
        best1[i] = m1;
        best2[i] = m2;
    }
    Ok((best1[n - 1].powf(1.0 / p), best2[n - 1].powf(2.0 / p)))
}

/// `max_k (grid p-variation of level k of A − B)`; a lower bound for `d_p`.
pub fn d_p_grid(a: &PrefixSignatures, b: &PrefixSignatures, p: f64) -> Result<f64> {
    let (v1, v2) = d_p_grid_levels(a, b, p)?;
    Ok(v1.max(v2))
}

/// Convenience form comparing two polygons on a shared anchor set.
pub fn d_p_grid_polygons(
    a: &PolygonalPath,
    b: &PolygonalPath,
    anchors: &[f64],
    p: f64,
) -> Result<f64> {
    check_dim(a.dim(), b.dim())?;
    let pa = PrefixSignatures::of_polygon(a, anchors)?;
    let pb = PrefixSignatures::of_polygon(b, anchors)?;
    d_p_grid(&pa, &pb, p)
}

/// `k / 2^level`, `k = 0..=2^level`.
pub fn dyadic_anchors(level: u32) -> Vec<f64> {
    let n = 1u64 << level;
    (0..=n).map(|k| k as f64 / n as f64).collect()
}

/// Anchor level used when comparing `w^(m)` with `w^(m+1)`.
pub fn default_anchor_level(m: u32) -> u32 {
    (m + 1).min(12)
}

/// Increments of a lift over every dyadic interval `J_n^k`.
pub trait DyadicIncrements {
    fn dim(&self) -> usize;
    /// Level beyond which the lift is straight inside each dyadic interval.
    fn polygonal_level(&self) -> u32;
    fn level1_into(&self, n: u32, k: u64, out: &mut [f64]);
    fn level2_into(&self, n: u32, k: u64, out: &mut [f64]);
}

impl DyadicIncrements for DyadicLiftTable {
    fn dim(&self) -> usize {
        DyadicLiftTable::dim(self)
    }

    fn polygonal_level(&self) -> u32 {
        self.level()
    }

    fn level1_into(&self, n: u32, k: u64, out: &mut [f64]) {
        DyadicLiftTable::level1_into(self, n, k, out)
    }

    fn level2_into(&self, n: u32, k: u64, out: &mut [f64]) {
        DyadicLiftTable::level2_into(self, n, k, out)
    }
}

/// The constant path, used for `ρ_j(w^(m)) = ρ_j(w^(m), 0)`.
#[derive(Debug, Clone, Copy)]
pub struct ZeroPath {
    pub dim: usize,
}

impl DyadicIncrements for ZeroPath {
    fn dim(&self) -> usize {
        self.dim
    }

    fn polygonal_level(&self) -> u32 {
        0
    }

    fn level1_into(&self, _n: u32, _k: u64, out: &mut [f64]) {
        out.fill(0.0);
    }

    fn level2_into(&self, _n: u32, _k: u64, out: &mut [f64]) {
        out.fill(0.0);
    }
}

/// `S_n = Σ_k |ΔA − ΔB|^{p/j}` over `J_n^k`, computed directly.
pub fn level_sum(
    j: u8,
    a: &dyn DyadicIncrements,
    b: &dyn DyadicIncrements,
    p: f64,
    n: u32,
) -> Result<f64> {
    check_dim(a.dim(), b.dim())?;
    check_exponent(p, j)?;
    if n > 40 {
        return Err(Error::InvalidParameter(format!("level {n} too fine to enumerate")));
    }
    let width = if j == 1 { a.dim() } else { a.dim() * a.dim() };
    let pow = SqPower::new(p / (2.0 * j as f64));
    let mut va = vec![0.0; width];
    let mut vb = vec![0.0; width];
    let mut total = 0.0;
    for k in 1..=(1u64 << n) {
        if j == 1 {
            a.level1_into(n, k, &mut va);
            b.level1_into(n, k, &mut vb);
        } else {
            a.level2_into(n, k, &mut va);
            b.level2_into(n, k, &mut vb);
        }
        let sq: f64 = va.iter().zip(&vb).map(|(x, y)| (x - y) * (x - y)).sum();
        total += pow.eval(sq);
    }
    Ok(total)
}

/// `S_n` for `n = 0..=upto`; levels past the finer polygon use the exact
/// scaling `S_n = 2^{(n−L)(1−p)} S_L`.
pub fn level_sums(
    j: u8,
    a: &dyn DyadicIncrements,
    b: &dyn DyadicIncrements,
    p: f64,
    upto: u32,
) -> Result<Vec<f64>> {
    let big_l = a.polygonal_level().max(b.polygonal_level());
    let mut out = Vec::with_capacity(upto as usize + 1);
    for n in 0..=upto.min(big_l) {
        out.push(level_sum(j, a, b, p, n)?);
    }
    if upto > big_l {
        let s_l = out[big_l as usize];
        for n in big_l + 1..=upto {
            out.push(s_l * (2.0f64).powf((n - big_l) as f64 * (1.0 - p)));
        }
    }
    Ok(out)
}

/// `Σ_{n > L} n^γ 2^{(n−L)(1−p)}`, summed until the remainder bound falls
/// below `1e−14` of the partial sum.
pub fn tail_weight(big_l: u32, p: f64, gamma: f64) -> f64 {
    let r = (2.0f64).powf(1.0 - p);
    let mut total = 0.0;
    let mut n = big_l as f64 + 1.0;
    let mut geo = r;
    loop {
        let term = n.powf(gamma) * geo;
        total += term;
        let next_ratio = ((n + 1.0) / n).powf(gamma) * r;
        let next = term * next_ratio;
        let q = ((n + 2.0) / (n + 1.0)).powf(gamma) * r;
        if q < 1.0 && next / (1.0 - q) <= 1e-14 * total {
            break;
        }
        if total == 0.0 && n > big_l as f64 + 200.0 {
            break;
        }
        n += 1.0;
        geo *= r;
    }
    total
}

/// `ρ_j(A, B) = (Σ_{n≥1} n^γ S_n)^{j/p}`.
pub fn rho(j: u8, a: &dyn DyadicIncrements, b: &dyn DyadicIncrements, params: &RhoParams) -> Result<f64> {
    params.validate()?;
    Ok(rho_sum(j, a, b, params)?.powf(j as f64 / params.p))
}

/// `ρ_j(A, B)^{p/j}`, the sum before the outer power.
pub fn rho_sum(
    j: u8,
    a: &dyn DyadicIncrements,
    b: &dyn DyadicIncrements,
    params: &RhoParams,
) -> Result<f64> {
    params.validate()?;
    let big_l = a.polygonal_level().max(b.polygonal_level());
    let (p, gamma) = (params.p, params.gamma);
    match params.tail_mode {
        TailMode::Truncate => {
            let sums = level_sums(j, a, b, p, params.n_max)?;
            Ok((1..=params.n_max)
                .map(|n| (n as f64).powf(gamma) * sums[n as usize])
                .sum())
        }
        TailMode::AnalyticTail => {
            let sums = level_sums(j, a, b, p, big_l)?;
            let head: f64 = (1..=big_l)
                .map(|n| (n as f64).powf(gamma) * sums[n as usize])
                .sum();
            let tail = sums[big_l as usize] * tail_weight(big_l, p, gamma);
            Ok(head + tail)
        }
    }
}

/// `max{ρ₁(A,B), ρ₂(A,B), ρ₁(A,B)(ρ₁(A) + ρ₁(B))}`
pub fn le1_bound(rho1_ab: f64, rho2_ab: f64, rho1_a: f64, rho1_b: f64) -> Result<f64> {
    for (name, v) in [
        ("rho1_ab", rho1_ab),
        ("rho2_ab", rho2_ab),
        ("rho1_a", rho1_a),
        ("rho1_b", rho1_b),
    ] {
        if !(v >= 0.0) {
            return Err(Error::InvalidParameter(format!("{name} = {v} must be nonnegative")));
        }
    }
    Ok(rho1_ab.max(rho2_ab).max(rho1_ab * (rho1_a + rho1_b)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lift::lift_polygonal;
    use crate::paths::DyadicBrownianPath;

    #[test]
    fn sq_power_matches_powf() {
        for e in [0.625, 1.25, 1.0, 0.5, 2.125, 0.3, 1.7] {
            let pw = SqPower::new(e);
            for x in [0.0, 1e-9, 0.37, 1.0, 5.5, 1e6] {
                let want: f64 = if x == 0.0 { 0.0 } else { f64::powf(x, e) };
                assert!((pw.eval(x) - want).abs() <= 1e-14 * want.max(1e-300), "{e} {x}");
            }
        }
    }

    #[test]
    fn identity_path_series() {
        let a = DyadicLiftTable::new(&PolygonalPath::from_vertices(1, 0, vec![0.0, 1.0]).unwrap());
        let zero = ZeroPath { dim: 1 };
        let params = RhoParams::new(2.5, 0.5, 60, TailMode::Truncate).unwrap();
        let want: f64 = (1..=60)
            .map(|n| (n as f64).sqrt() * (2.0f64).powf(-1.5 * n as f64))
            .sum::<f64>()
            .powf(1.0 / 2.5);
        let got = rho(1, &a, &zero, &params).unwrap();
        assert!((got - want).abs() < 1e-14);
        let tail = RhoParams::new(2.5, 0.5, 3, TailMode::AnalyticTail).unwrap();
        assert!((rho(1, &a, &zero, &tail).unwrap() - want).abs() < 1e-13);
    }

    #[test]
    fn rho_is_zero_on_equal_inputs_and_monotone_in_n_max() {
        let path = DyadicBrownianPath::generate(2, 6, 3).unwrap();
        let t5 = DyadicLiftTable::new(&path.polygonal(5).unwrap());
        let t6 = DyadicLiftTable::new(&path.polygonal(6).unwrap());
        let params = RhoParams::default();
        assert_eq!(rho(2, &t5, &t5, &params).unwrap(), 0.0);
        let mut prev = 0.0;
        for n_max in 1..12 {
            let pr = RhoParams::new(2.5, 0.5, n_max, TailMode::Truncate).unwrap();
            let v = rho(1, &t6, &t5, &pr).unwrap();
            assert!(v >= prev);
            prev = v;
        }
    }

    #[test]
    fn params_validation() {
        assert!(RhoParams::new(2.0, 0.5, 10, TailMode::Truncate).is_err());
        assert!(RhoParams::new(2.5, 0.25, 10, TailMode::Truncate).is_err());
        assert!(RhoParams::new(2.5, 0.3, 0, TailMode::Truncate).is_err());
        assert!(RhoParams::new(2.5, 0.3, 5, TailMode::AnalyticTail).is_ok());
    }

    #[test]
    fn monotone_scalar_path_uses_one_interval() {
        let values = [0.0, 0.1, 0.5, 0.6, 1.4];
        let anchors = [0.0, 0.25, 0.5, 0.75, 1.0];
        let lookup = |t: f64| values[(t * 4.0).round() as usize];
        let v = p_variation_grid(&anchors, 2.5, 1, |s, t| vec![lookup(t) - lookup(s)]).unwrap();
        assert!((v - 1.4).abs() < 1e-14);
        let z = p_variation_grid(&anchors, 2.5, 1, |_, _| vec![0.0]).unwrap();
        assert_eq!(z, 0.0);
        assert!(p_variation_grid(&[0.0], 2.5, 1, |_, _| vec![0.0]).is_err());
    }

    #[test]
    fn fast_dp_matches_generic_dp() {
        let path = DyadicBrownianPath::generate(2, 6, 8).unwrap();
        let fine = path.polygonal(5).unwrap();
        let coarse = path.polygonal(4).unwrap();
        let anchors = dyadic_anchors(5);
        let pa = PrefixSignatures::of_polygon(&fine, &anchors).unwrap();
        let pb = PrefixSignatures::of_polygon(&coarse, &anchors).unwrap();
        let (v1, v2) = d_p_grid_levels(&pa, &pb, 2.5).unwrap();
        let (fr, cr) = (&fine, &coarse);
        let diff = |j: u8| {
            move |s: f64, t: f64| {
                let a = lift_polygonal(fr, s, t).unwrap();
                let b = lift_polygonal(cr, s, t).unwrap();
                let (l1, l2) = a.level_diff(&b).unwrap();
                if j == 1 {
                    l1
                } else {
                    l2
                }
            }
        };
        let g1 = p_variation_grid(&anchors, 2.5, 1, diff(1)).unwrap();
        let g2 = p_variation_grid(&anchors, 2.5, 2, diff(2)).unwrap();
        assert!((v1 - g1).abs() < 1e-12 * g1.max(1.0));
        assert!((v2 - g2).abs() < 1e-12 * g2.max(1.0));
    }

    #[test]
    fn le1_bound_examples() {
        assert_eq!(le1_bound(0.0, 0.0, 0.0, 0.0).unwrap(), 0.0);
        assert_eq!(le1_bound(1.0, 0.0, 2.0, 2.0).unwrap(), 4.0);
        assert!(le1_bound(-1.0, 0.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn tail_weight_matches_long_sum() {
        let direct: f64 = (6..400)
            .map(|n| (n as f64).powf(0.5) * (2.0f64).powf((n - 5) as f64 * -1.5))
            .sum();
        assert!((tail_weight(5, 2.5, 0.5) - direct).abs() < 1e-14 * direct);
    }
}
