//! Level-2 lifts of polygonal paths.
//!
//! Two independent routes are provided: a generic one that multiplies
//! straight-segment signatures with [`GroupTensor2::chen_mul`], and closed
//! forms on dyadic intervals written directly in terms of the increments
//! `ξ_n^k`. Each is used to test the other.

use crate::error::{Error, Result};
use crate::paths::{parent_unchecked, DyadicBrownianPath, PolygonalPath};
use crate::tensor::{outer, GroupTensor2};

/// `(1, Δ, ½ Δ⊗Δ)`
pub fn lift_segment(delta: &[f64]) -> GroupTensor2 {
    let level2 = outer(delta, delta).into_iter().map(|x| 0.5 * x).collect();
    GroupTensor2::from_parts(delta.len(), delta.to_vec(), level2)
}

/// Lift of the polygon over `[s, t]`, splitting segments at `s` and `t`.
pub fn lift_polygonal(path: &PolygonalPath, s: f64, t: f64) -> Result<GroupTensor2> {
    if !(0.0 <= s && s < t && t <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "need 0 <= s < t <= 1, got s = {s}, t = {t}"
        )));
    }
    let d = path.dim();
    let scale = path.segments() as f64;
    let first = ((s * scale).floor() as usize).min(path.segments() - 1);
    let last = ((t * scale).ceil() as usize).clamp(first + 1, path.segments());
    let mut acc = GroupTensor2::identity(d);
    let mut delta = vec![0.0; d];
    for k in first..last {
        let a = (s * scale - k as f64).max(0.0);
        let b = (t * scale - k as f64).min(1.0);
        if b <= a {
            continue;
        }
        let v0 = path.vertex(k);
        let v1 = path.vertex(k + 1);
        for i in 0..d {
            delta[i] = (b - a) * (v1[i] - v0[i]);
        }
        acc.mul_assign_unchecked(&lift_segment(&delta));
    }
    Ok(acc)
}

/// A lift over the interval `[s, t]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LiftedIncrement {
    pub s: f64,
    pub t: f64,
    pub value: GroupTensor2,
}

impl LiftedIncrement {
    pub fn of(path: &PolygonalPath, s: f64, t: f64) -> Result<Self> {
        Ok(Self {
            s,
            t,
            value: lift_polygonal(path, s, t)?,
        })
    }
}

fn check_levels(path: &DyadicBrownianPath, m: u32, n: u32, k: u64) -> Result<()> {
    if m > path.resolution() {
        return Err(Error::IndexOutOfRange(format!(
            "level m = {m} exceeds path resolution {}",
            path.resolution()
        )));
    }
    if k == 0 || n > 62 || k > (1u64 << n) {
        return Err(Error::IndexOutOfRange(format!("k = {k} not in 1..=2^{n}")));
    }
    Ok(())
}

fn scale(v: &mut [f64], c: f64) {
    v.iter_mut().for_each(|x| *x *= c);
}

fn pow2(e: i32) -> f64 {
    (2.0f64).powi(e)
}

/// `w^{(m),1}` over `J_n^k`.
pub fn dyadic_level1(path: &DyadicBrownianPath, m: u32, n: u32, k: u64) -> Result<Vec<f64>> {
    check_levels(path, m, n, k)?;
    if n < m {
        return Ok(path.xi_unchecked(n, k));
    }
    let mut v = path.xi_unchecked(m, parent_unchecked(n, k, m));
    scale(&mut v, pow2(m as i32 - n as i32));
    Ok(v)
}

/// `Σ_{r<s} [a_r, a_s]` over a contiguous run, via running prefix sums.
fn bracket_sum(d: usize, increments: impl Iterator<Item = Vec<f64>>) -> Vec<f64> {
    let mut prefix = vec![0.0; d];
    let mut out = vec![0.0; d * d];
    for x in increments {
        for i in 0..d {
            for j in 0..d {
                out[i * d + j] += prefix[i] * x[j] - x[i] * prefix[j];
            }
        }
        for i in 0..d {
            prefix[i] += x[i];
        }
    }
    out
}

/// `w^{(m),2}` over `J_n^k`.
pub fn dyadic_level2(path: &DyadicBrownianPath, m: u32, n: u32, k: u64) -> Result<Vec<f64>> {
    check_levels(path, m, n, k)?;
    let d = path.dim();
    if n < m {
        let xi = path.xi_unchecked(n, k);
        let width = 1u64 << (m - n);
        let start = width * (k - 1) + 1;
        let brackets = bracket_sum(d, (start..start + width).map(|r| path.xi_unchecked(m, r)));
        let sq = outer(&xi, &xi);
        return Ok(sq.iter().zip(&brackets).map(|(a, b)| 0.5 * (a + b)).collect());
    }
    let xi = path.xi_unchecked(m, parent_unchecked(n, k, m));
    let c = 0.5 * pow2(2 * (m as i32 - n as i32));
    Ok(outer(&xi, &xi).into_iter().map(|x| c * x).collect())
}

/// `X_j = w^{(m+1),j} − w^{(m),j}` over `J_n^k`, `j ∈ {1, 2}`.
pub fn dyadic_diff(
    path: &DyadicBrownianPath,
    m: u32,
    n: u32,
    k: u64,
    level: u8,
) -> Result<Vec<f64>> {
    if m + 1 > path.resolution() {
        return Err(Error::IndexOutOfRange(format!(
            "level m + 1 = {} exceeds path resolution {}",
            m + 1,
            path.resolution()
        )));
    }
    check_levels(path, m, n, k)?;
    let d = path.dim();
    match level {
        1 => {
            if n <= m {
                return Ok(vec![0.0; d]);
            }
            let fine = path.xi_unchecked(m + 1, parent_unchecked(n, k, m + 1));
            let coarse = path.xi_unchecked(m, parent_unchecked(n, k, m));
            let cf = pow2(m as i32 + 1 - n as i32);
            let cc = pow2(m as i32 - n as i32);
            Ok(fine.iter().zip(&coarse).map(|(a, b)| cf * a - cc * b).collect())
        }
        2 => {
            if n <= m {
                let width = 1u64 << (m - n);
                let start = width * (k - 1) + 1;
                let mut out = vec![0.0; d * d];
                for r in start..start + width {
                    let a = path.xi_unchecked(m + 1, 2 * r - 1);
                    let b = path.xi_unchecked(m + 1, 2 * r);
                    for i in 0..d {
                        for j in 0..d {
                            out[i * d + j] += 0.5 * (a[i] * b[j] - b[i] * a[j]);
                        }
                    }
                }
                return Ok(out);
            }
            let fine = dyadic_level2(path, m + 1, n, k)?;
            let coarse = dyadic_level2(path, m, n, k)?;
            Ok(fine.iter().zip(&coarse).map(|(a, b)| a - b).collect())
        }
        other => Err(Error::InvalidParameter(format!("level must be 1 or 2, got {other}"))),
    }
}

/// Lifts of a polygon over every dyadic interval.
///
/// Levels up to the polygon's own level are tabulated by merging pairs of
/// children with the Chen product; finer intervals lie inside one straight
/// segment and are produced by scaling.
#[derive(Debug, Clone)]
pub struct DyadicLiftTable {
    dim: usize,
    level: u32,
    level1: Vec<Vec<f64>>,
    level2: Vec<Vec<f64>>,
}

impl DyadicLiftTable {
    pub fn new(path: &PolygonalPath) -> Self {
        let d = path.dim();
        let m = path.level();
        let segs = path.segments();
        let mut top1 = Vec::with_capacity(segs * d);
        let mut top2 = Vec::with_capacity(segs * d * d);
        for k in 1..=segs {
            let x = path.segment_increment(k);
            for i in 0..d {
                for j in 0..d {
                    top2.push(0.5 * x[i] * x[j]);
                }
            }
            top1.extend(x);
        }
        let mut level1 = vec![top1];
        let mut level2 = vec![top2];
        for _ in 0..m {
            let (c1, c2) = (level1.last().unwrap(), level2.last().unwrap());
            let count = c1.len() / d / 2;
            let mut p1 = Vec::with_capacity(count * d);
            let mut p2 = Vec::with_capacity(count * d * d);
            for r in 0..count {
                let (a1, b1) = (&c1[2 * r * d..(2 * r + 1) * d], &c1[(2 * r + 1) * d..(2 * r + 2) * d]);
                let a2 = &c2[2 * r * d * d..(2 * r + 1) * d * d];
                let b2 = &c2[(2 * r + 1) * d * d..(2 * r + 2) * d * d];
                for i in 0..d {
                    for j in 0..d {
                        p2.push(a2[i * d + j] + b2[i * d + j] + a1[i] * b1[j]);
                    }
                }
                p1.extend(a1.iter().zip(b1).map(|(a, b)| a + b));
            }
            level1.push(p1);
            level2.push(p2);
        }
        level1.reverse();
        level2.reverse();
        Self {
            dim: d,
            level: m,
            level1,
            level2,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    /// Level-1 increment over `J_n^k`, written into `out`.
    #[inline]
    pub fn level1_into(&self, n: u32, k: u64, out: &mut [f64]) {
        let d = self.dim;
        if n <= self.level {
            let i = (k - 1) as usize * d;
            out.copy_from_slice(&self.level1[n as usize][i..i + d]);
        } else {
            let r = parent_unchecked(n, k, self.level);
            let i = (r - 1) as usize * d;
            let c = pow2(self.level as i32 - n as i32);
            for (o, x) in out.iter_mut().zip(&self.level1[self.level as usize][i..i + d]) {
                *o = c * x;
            }
        }
    }

    /// Level-2 increment over `J_n^k`, written into `out`.
    #[inline]
    pub fn level2_into(&self, n: u32, k: u64, out: &mut [f64]) {
        let dd = self.dim * self.dim;
        if n <= self.level {
            let i = (k - 1) as usize * dd;
            out.copy_from_slice(&self.level2[n as usize][i..i + dd]);
        } else {
            let r = parent_unchecked(n, k, self.level);
            let i = (r - 1) as usize * dd;
            let c = pow2(2 * (self.level as i32 - n as i32));
            for (o, x) in out.iter_mut().zip(&self.level2[self.level as usize][i..i + dd]) {
                *o = c * x;
            }
        }
    }

    pub fn increment(&self, n: u32, k: u64) -> Result<GroupTensor2> {
        if n > 62 || k == 0 || k > (1u64 << n) {
            return Err(Error::IndexOutOfRange(format!("k = {k} not in 1..=2^{n}")));
        }
        let mut l1 = vec![0.0; self.dim];
        let mut l2 = vec![0.0; self.dim * self.dim];
        self.level1_into(n, k, &mut l1);
        self.level2_into(n, k, &mut l2);
        Ok(GroupTensor2::from_parts(self.dim, l1, l2))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn segment_examples() {
        assert_eq!(lift_segment(&[0.0, 0.0]), GroupTensor2::identity(2));
        let s = lift_segment(&[2.0]);
        assert_eq!(s.level1(), &[2.0]);
        assert_eq!(s.level2(), &[2.0]);
        assert!(lift_segment(&[0.3, -1.7, 0.2]).geometric_defect() < 1e-15);
    }

    #[test]
    fn single_segment_lift() {
        let p = DyadicBrownianPath::generate(2, 4, 1).unwrap();
        let poly = p.polygonal(3).unwrap();
        let l = lift_polygonal(&poly, 2.0 / 8.0, 3.0 / 8.0).unwrap();
        let x = p.xi(3, 3).unwrap();
        assert_eq!(l, lift_segment(&x));
    }

    #[test]
    fn area_matches_shoelace() {
        let p = DyadicBrownianPath::generate(2, 6, 17).unwrap();
        let poly = p.polygonal(6).unwrap();
        let l = lift_polygonal(&poly, 0.0, 1.0).unwrap();
        // signed area of the polygon closed by its chord, measured from w_0 = 0
        let mut shoelace = 0.0;
        for k in 0..poly.segments() {
            let a = poly.vertex(k);
            let b = poly.vertex(k + 1);
            shoelace += 0.5 * (a[0] * b[1] - a[1] * b[0]);
        }
        assert!((l.area()[1] - shoelace).abs() < 1e-12);
    }

    #[test]
    fn chen_split_at_half() {
        let p = DyadicBrownianPath::generate(3, 5, 4).unwrap();
        let poly = p.polygonal(5).unwrap();
        let left = lift_polygonal(&poly, 0.0, 0.5).unwrap();
        let right = lift_polygonal(&poly, 0.5, 1.0).unwrap();
        let whole = lift_polygonal(&poly, 0.0, 1.0).unwrap();
        let prod = left.chen_mul(&right).unwrap();
        assert!(close(prod.level2(), whole.level2(), 1e-12));
        assert!(close(prod.level1(), whole.level1(), 1e-12));
    }

    #[test]
    fn partial_segment_is_scaled() {
        let poly = PolygonalPath::from_vertices(1, 1, vec![0.0, 1.0, 3.0]).unwrap();
        let l = lift_polygonal(&poly, 0.25, 0.75).unwrap();
        // 0.5 from the first piece then 1.0 from the second
        assert!((l.level1()[0] - 1.5).abs() < 1e-15);
        assert!((l.level2()[0] - 1.125).abs() < 1e-15);
        assert!(lift_polygonal(&poly, 0.5, 0.5).is_err());
    }

    #[test]
    fn closed_forms_agree_at_n_equal_m() {
        let p = DyadicBrownianPath::generate(2, 6, 9).unwrap();
        for k in 1..=16 {
            let x = p.xi(4, k).unwrap();
            assert_eq!(dyadic_level1(&p, 4, 4, k).unwrap(), x);
            let sq: Vec<f64> = outer(&x, &x).iter().map(|v| 0.5 * v).collect();
            assert!(close(&dyadic_level2(&p, 4, 4, k).unwrap(), &sq, 1e-15));
        }
    }

    #[test]
    fn level1_diff_vanishes_on_coarse_intervals() {
        let p = DyadicBrownianPath::generate(3, 6, 2).unwrap();
        for n in 0..=4 {
            for k in 1..=(1u64 << n) {
                assert!(dyadic_diff(&p, 4, n, k, 1).unwrap().iter().all(|x| *x == 0.0));
                let x2 = dyadic_diff(&p, 4, n, k, 2).unwrap();
                for i in 0..3 {
                    for j in 0..3 {
                        assert!((x2[i * 3 + j] + x2[j * 3 + i]).abs() < 1e-15);
                    }
                }
            }
        }
        assert!(dyadic_diff(&p, 6, 2, 1, 1).is_err());
        assert!(dyadic_diff(&p, 2, 2, 1, 3).is_err());
    }

    #[test]
    fn table_matches_generic_lift() {
        let p = DyadicBrownianPath::generate(2, 7, 21).unwrap();
        let poly = p.polygonal(5).unwrap();
        let table = DyadicLiftTable::new(&poly);
        for n in 0..=7 {
            let h = 1.0 / (1u64 << n) as f64;
            for k in 1..=(1u64 << n) {
                let g = lift_polygonal(&poly, (k - 1) as f64 * h, k as f64 * h).unwrap();
                let t = table.increment(n, k).unwrap();
                assert!(close(g.level1(), t.level1(), 1e-13));
                assert!(close(g.level2(), t.level2(), 1e-13));
            }
        }
    }
}
