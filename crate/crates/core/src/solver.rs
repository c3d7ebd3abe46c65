//! Wong–Zakai approximations: ODEs driven by dyadic polygons.
//!
//! On the `k`-th segment of a level-`m` driver the equation is
//! `dy = (f(y) v + f₀(y)) dt` with the constant velocity `v = 2^m ξ_m^k`,
//! integrated by classical fourth-order Runge–Kutta.

use std::io::Write;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::paths::{DyadicBrownianPath, PolygonalPath};
use crate::variation::{d_p_grid, default_anchor_level, dyadic_anchors, PrefixSignatures};

pub const DEFAULT_SUBSTEPS: usize = 4;
const MAX_SUBSTEPS: usize = 1 << 12;

pub trait VectorField {
    fn dim_driver(&self) -> usize;
    fn dim_state(&self) -> usize;
    /// `out[i * d + a] = f_a^i(y)`
    fn drive(&self, y: &[f64], out: &mut [f64]);
    fn drift(&self, y: &[f64], out: &mut [f64]);
    /// `out[(i * d + a) * N + j] = ∂_j f_a^i(y)`; returns false when not supplied.
    fn drive_jacobian(&self, _y: &[f64], _out: &mut [f64]) -> bool {
        false
    }
}

/// Largest relative gap between a supplied Jacobian and central differences,
/// or `None` when the field has none.
pub fn jacobian_defect(field: &dyn VectorField, y: &[f64], h: f64) -> Option<f64> {
    let (n, d) = (field.dim_state(), field.dim_driver());
    let mut jac = vec![0.0; n * d * n];
    if !field.drive_jacobian(y, &mut jac) {
        return None;
    }
    let mut plus = vec![0.0; n * d];
    let mut minus = vec![0.0; n * d];
    let mut yp = y.to_vec();
    let mut worst: f64 = 0.0;
    for j in 0..n {
        yp[j] = y[j] + h;
        field.drive(&yp, &mut plus);
        yp[j] = y[j] - h;
        field.drive(&yp, &mut minus);
        yp[j] = y[j];
        for ia in 0..n * d {
            let fd = (plus[ia] - minus[ia]) / (2.0 * h);
            let an = jac[ia * n + j];
            worst = worst.max((fd - an).abs() / an.abs().max(1.0));
        }
    }
    Some(worst)
}

/// `f_a(y) = M_a y`, `f₀(y) = M₀ y`.
#[derive(Debug, Clone)]
pub struct LinearField {
    dim_state: usize,
    drive: Vec<Vec<f64>>,
    drift: Vec<f64>,
}

impl LinearField {
    pub fn new(dim_state: usize, drive: Vec<Vec<f64>>, drift: Option<Vec<f64>>) -> Result<Self> {
        if dim_state == 0 || drive.is_empty() {
            return Err(Error::InvalidParameter("need a state and at least one field".into()));
        }
        for m in &drive {
            check_dim(dim_state * dim_state, m.len())?;
        }
        let drift = drift.unwrap_or_else(|| vec![0.0; dim_state * dim_state]);
        check_dim(dim_state * dim_state, drift.len())?;
        Ok(Self {
            dim_state,
            drive,
            drift,
        })
    }

    pub fn matrices(&self) -> &[Vec<f64>] {
        &self.drive
    }
}

fn matvec(n: usize, m: &[f64], y: &[f64]) -> Vec<f64> {
    (0..n)
        .map(|i| m[i * n..(i + 1) * n].iter().zip(y).map(|(a, b)| a * b).sum())
        .collect()
}

impl VectorField for LinearField {
    fn dim_driver(&self) -> usize {
        self.drive.len()
    }

    fn dim_state(&self) -> usize {
        self.dim_state
    }

    fn drive(&self, y: &[f64], out: &mut [f64]) {
        let (n, d) = (self.dim_state, self.drive.len());
        for (a, m) in self.drive.iter().enumerate() {
            for (i, v) in matvec(n, m, y).into_iter().enumerate() {
                out[i * d + a] = v;
            }
        }
    }

    fn drift(&self, y: &[f64], out: &mut [f64]) {
        for (o, v) in out.iter_mut().zip(matvec(self.dim_state, &self.drift, y)) {
            *o = v;
        }
    }

    fn drive_jacobian(&self, _y: &[f64], out: &mut [f64]) -> bool {
        let (n, d) = (self.dim_state, self.drive.len());
        for (a, m) in self.drive.iter().enumerate() {
            for i in 0..n {
                for j in 0..n {
                    out[(i * d + a) * n + j] = m[i * n + j];
                }
            }
        }
        true
    }
}

/// Constant fields `f ≡ F`, `f₀ ≡ c`.
#[derive(Debug, Clone)]
pub struct ConstantField {
    pub dim_driver: usize,
    pub drive: Vec<f64>,
    pub drift: Vec<f64>,
}

impl VectorField for ConstantField {
    fn dim_driver(&self) -> usize {
        self.dim_driver
    }

    fn dim_state(&self) -> usize {
        self.drift.len()
    }

    fn drive(&self, _y: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.drive);
    }

    fn drift(&self, _y: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.drift);
    }

    fn drive_jacobian(&self, _y: &[f64], out: &mut [f64]) -> bool {
        out.fill(0.0);
        true
    }
}

/// `f_1 = (1, 0, −y₂/2)`, `f_2 = (0, 1, y₁/2)`: the third coordinate
/// accumulates the Lévy area of the driver.
#[derive(Debug, Clone, Copy, Default)]
pub struct RotationAreaField;

impl VectorField for RotationAreaField {
    fn dim_driver(&self) -> usize {
        2
    }

    fn dim_state(&self) -> usize {
        3
    }

    fn drive(&self, y: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&[1.0, 0.0, 0.0, 1.0, -0.5 * y[1], 0.5 * y[0]]);
    }

    fn drift(&self, _y: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }

    fn drive_jacobian(&self, _y: &[f64], out: &mut [f64]) -> bool {
        out.fill(0.0);
        // row (i = 2, a = 0) depends on y₂, row (i = 2, a = 1) on y₁
        out[(2 * 2) * 3 + 1] = -0.5;
        out[(2 * 2 + 1) * 3] = 0.5;
        true
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveResult {
    pub level: u32,
    pub dim_state: usize,
    pub substeps: usize,
    /// `(2^level + 1) × N`, row-major, at the dyadic vertices.
    pub trajectory: Vec<f64>,
    /// Step-doubling error estimate per segment.
    pub diagnostics: Vec<f64>,
}

impl SolveResult {
    pub fn state(&self, k: usize) -> &[f64] {
        &self.trajectory[k * self.dim_state..(k + 1) * self.dim_state]
    }

    pub fn endpoint(&self) -> &[f64] {
        self.state(1 << self.level)
    }

    /// Piecewise-linear interpolation of the trajectory, used as its lift.
    pub fn lift(&self) -> PolygonalPath {
        PolygonalPath::from_vertices(self.dim_state, self.level, self.trajectory.clone())
            .expect("trajectory shape is fixed by the solver")
    }

    pub fn max_diagnostic(&self) -> f64 {
        self.diagnostics.iter().cloned().fold(0.0, f64::max)
    }

    /// Header `t,y1..yN`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        self.lift().write_csv(out, "y")
    }
}

struct Rk4 {
    n: usize,
    d: usize,
    fbuf: Vec<f64>,
    gbuf: Vec<f64>,
    k: [Vec<f64>; 4],
    tmp: Vec<f64>,
}

impl Rk4 {
    fn new(n: usize, d: usize) -> Self {
        Self {
            n,
            d,
            fbuf: vec![0.0; n * d],
            gbuf: vec![0.0; n],
            k: [vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]],
            tmp: vec![0.0; n],
        }
    }

    fn rhs(&mut self, field: &dyn VectorField, y: &[f64], v: &[f64], stage: usize) {
        field.drive(y, &mut self.fbuf);
        field.drift(y, &mut self.gbuf);
        let (n, d) = (self.n, self.d);
        let out = &mut self.k[stage];
        for i in 0..n {
            let row = &self.fbuf[i * d..(i + 1) * d];
            out[i] = self.gbuf[i] + row.iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
        }
    }

    fn step(&mut self, field: &dyn VectorField, y: &mut [f64], v: &[f64], h: f64) {
        let n = self.n;
        self.rhs(field, y, v, 0);
        for i in 0..n {
            self.tmp[i] = y[i] + 0.5 * h * self.k[0][i];
        }
        let tmp = self.tmp.clone();
        self.rhs(field, &tmp, v, 1);
        for i in 0..n {
            self.tmp[i] = y[i] + 0.5 * h * self.k[1][i];
        }
        let tmp = self.tmp.clone();
        self.rhs(field, &tmp, v, 2);
        for i in 0..n {
            self.tmp[i] = y[i] + h * self.k[2][i];
        }
        let tmp = self.tmp.clone();
        self.rhs(field, &tmp, v, 3);
        for i in 0..n {
            y[i] += h / 6.0 * (self.k[0][i] + 2.0 * self.k[1][i] + 2.0 * self.k[2][i] + self.k[3][i]);
        }
    }

    /// Advances across one segment; returns the time of the first
    /// non-finite state, if any.
    fn segment(
        &mut self,
        field: &dyn VectorField,
        y: &mut [f64],
        v: &[f64],
        t0: f64,
        dt: f64,
        substeps: usize,
    ) -> Option<f64> {
        let h = dt / substeps as f64;
        for s in 0..substeps {
            self.step(field, y, v, h);
            if y.iter().any(|x| !x.is_finite()) {
                return Some(t0 + (s + 1) as f64 * h);
            }
        }
        None
    }
}

fn check_field(field: &dyn VectorField, y0: &[f64], driver: &PolygonalPath, substeps: usize) -> Result<()> {
    check_dim(field.dim_driver(), driver.dim())?;
    check_dim(field.dim_state(), y0.len())?;
    if substeps == 0 {
        return Err(Error::InvalidParameter("substeps must be >= 1".into()));
    }
    if y0.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidParameter("initial state must be finite".into()));
    }
    Ok(())
}

/// Solves over the driver segments `segments` (0-based), starting from `y0`
/// at the left end of the first one. Returns the states at the segment ends
/// (including the start) and the per-segment diagnostics.
pub fn solve_segments(
    field: &dyn VectorField,
    y0: &[f64],
    driver: &PolygonalPath,
    substeps: usize,
    segments: Range<usize>,
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_field(field, y0, driver, substeps)?;
    if segments.end > driver.segments() || segments.start > segments.end {
        return Err(Error::IndexOutOfRange(format!(
            "segments {segments:?} outside 0..{}",
            driver.segments()
        )));
    }
    let n = field.dim_state();
    let d = driver.dim();
    let scale = driver.segments() as f64;
    let dt = 1.0 / scale;
    let mut rk = Rk4::new(n, d);
    let mut y = y0.to_vec();
    let mut check = vec![0.0; n];
    let mut states = Vec::with_capacity((segments.len() + 1) * n);
    let mut diagnostics = Vec::with_capacity(segments.len());
    states.extend_from_slice(&y);
    for k in segments {
        let v: Vec<f64> = driver.segment_increment(k + 1).iter().map(|x| x * scale).collect();
        let t0 = k as f64 * dt;
        check.copy_from_slice(&y);
        if let Some(time) = rk.segment(field, &mut y, &v, t0, dt, substeps) {
            return Err(Error::BlowUp { time });
        }
        if let Some(time) = rk.segment(field, &mut check, &v, t0, dt, 2 * substeps) {
            return Err(Error::BlowUp { time });
        }
        let err = y
            .iter()
            .zip(&check)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
            / 15.0;
        diagnostics.push(err);
        states.extend_from_slice(&y);
    }
    Ok((states, diagnostics))
}

/// Wong–Zakai solution driven by the polygon `driver`.
pub fn solve_wz(
    field: &dyn VectorField,
    y0: &[f64],
    driver: &PolygonalPath,
    substeps: usize,
) -> Result<SolveResult> {
    let (trajectory, diagnostics) = solve_segments(field, y0, driver, substeps, 0..driver.segments())?;
    Ok(SolveResult {
        level: driver.level(),
        dim_state: field.dim_state(),
        substeps,
        trajectory,
        diagnostics,
    })
}

/// [`solve_wz`] doubling `substeps` until every per-segment estimate is
/// below `tol`.
pub fn solve_wz_guarded(
    field: &dyn VectorField,
    y0: &[f64],
    driver: &PolygonalPath,
    substeps: usize,
    tol: f64,
) -> Result<SolveResult> {
    let mut s = substeps.max(1);
    loop {
        let res = solve_wz(field, y0, driver, s)?;
        if res.max_diagnostic() <= tol || s >= MAX_SUBSTEPS {
            return Ok(res);
        }
        s *= 2;
    }
}

#[derive(Debug, Clone)]
pub struct WzStep {
    pub m: u32,
    pub result: SolveResult,
    /// `d_p` grid distance between the lifted solutions at `m + 1` and `m`.
    pub dp_gap: f64,
    /// Largest gap between the two solutions at the level-`m` vertices.
    pub sup_gap: f64,
}

/// Solves for each `m` in `m_range` and for `max + 1`, and compares
/// consecutive lifted solutions.
pub fn wz_sequence(
    field: &dyn VectorField,
    y0: &[f64],
    path: &DyadicBrownianPath,
    m_range: Range<u32>,
    substeps: usize,
    p: f64,
) -> Result<Vec<WzStep>> {
    if m_range.is_empty() {
        return Err(Error::InvalidParameter("empty m range".into()));
    }
    if m_range.end > path.resolution() {
        return Err(Error::IndexOutOfRange(format!(
            "need path resolution >= {}, have {}",
            m_range.end,
            path.resolution()
        )));
    }
    let n = field.dim_state();
    let mut solutions = Vec::new();
    for m in m_range.start..=m_range.end {
        solutions.push(solve_wz(field, y0, &path.polygonal(m)?, substeps)?);
    }
    let mut out = Vec::new();
    for (idx, m) in m_range.enumerate() {
        let coarse = &solutions[idx];
        let fine = &solutions[idx + 1];
        let anchors = dyadic_anchors(default_anchor_level(m));
        let a = PrefixSignatures::of_polygon(&fine.lift(), &anchors)?;
        let b = PrefixSignatures::of_polygon(&coarse.lift(), &anchors)?;
        let dp_gap = d_p_grid(&a, &b, p)?;
        let mut sup_gap: f64 = 0.0;
        for k in 0..=(1usize << m) {
            let yc = coarse.state(k);
            let yf = fine.state(2 * k);
            for i in 0..n {
                sup_gap = sup_gap.max((yc[i] - yf[i]).abs());
            }
        }
        out.push(WzStep {
            m,
            result: coarse.clone(),
            dp_gap,
            sup_gap,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub enum ReferenceCase {
    /// `y = y₀ exp(w_t)` for a one-dimensional driver.
    ExpScalar { y0: f64 },
    /// `y = exp(Σ_i M_i w^i_t) y₀` for pairwise commuting `M_i`.
    CommutingLinear { matrices: Vec<Vec<f64>>, y0: Vec<f64> },
    /// `y = (w¹, w², A)` with `A` the Lévy area, read off the path's finest polygon.
    RotationArea,
}

impl ReferenceCase {
    pub fn from_id(id: &str) -> Result<Self> {
        match id {
            "exp_scalar" => Ok(Self::ExpScalar { y0: 1.0 }),
            "commuting_linear" => {
                let (matrices, y0) = commuting_example();
                Ok(Self::CommutingLinear { matrices, y0 })
            }
            "rotation_area" => Ok(Self::RotationArea),
            other => Err(Error::InvalidParameter(format!("unknown reference case '{other}'"))),
        }
    }

    pub fn id(&self) -> &'static str {
        match self {
            Self::ExpScalar { .. } => "exp_scalar",
            Self::CommutingLinear { .. } => "commuting_linear",
            Self::RotationArea => "rotation_area",
        }
    }

    pub fn driver_dim(&self) -> usize {
        match self {
            Self::ExpScalar { .. } => 1,
            Self::CommutingLinear { matrices, .. } => matrices.len(),
            Self::RotationArea => 2,
        }
    }

    pub fn initial_state(&self) -> Vec<f64> {
        match self {
            Self::ExpScalar { y0 } => vec![*y0],
            Self::CommutingLinear { y0, .. } => y0.clone(),
            Self::RotationArea => vec![0.0; 3],
        }
    }

    /// The vector field whose Stratonovich solution this case describes.
    pub fn field(&self) -> Box<dyn VectorField + Send + Sync> {
        match self {
            Self::ExpScalar { .. } => Box::new(LinearField::new(1, vec![vec![1.0]], None).unwrap()),
            Self::CommutingLinear { matrices, y0 } => {
                Box::new(LinearField::new(y0.len(), matrices.clone(), None).unwrap())
            }
            Self::RotationArea => Box::new(RotationAreaField),
        }
    }
}

/// A flattened 2×2 matrix state under left multiplication by two commuting
/// matrices `A₁` and `A₂ = 0.7 I − 0.4 A₁`, started at the identity.
pub fn commuting_example() -> (Vec<Vec<f64>>, Vec<f64>) {
    let a1 = [0.3, 0.5, 0.5, -0.2];
    let a2 = [0.7 - 0.4 * a1[0], -0.4 * a1[1], -0.4 * a1[2], 0.7 - 0.4 * a1[3]];
    (vec![left_mul(&a1), left_mul(&a2)], vec![1.0, 0.0, 0.0, 1.0])
}

/// `Y ↦ A Y` on row-major 2×2 matrices, as a 4×4 matrix.
fn left_mul(a: &[f64; 4]) -> Vec<f64> {
    let mut out = vec![0.0; 16];
    for i in 0..2 {
        for j in 0..2 {
            for k in 0..2 {
                out[(i * 2 + j) * 4 + (k * 2 + j)] = a[i * 2 + k];
            }
        }
    }
    out
}

/// Exact solution at the dyadic times of `level`, `(2^level + 1) × N`.
pub fn stratonovich_reference(case: &ReferenceCase, path: &DyadicBrownianPath, level: u32) -> Result<Vec<f64>> {
    check_dim(case.driver_dim(), path.dim())?;
    if level > path.resolution() {
        return Err(Error::IndexOutOfRange(format!(
            "level {level} exceeds path resolution {}",
            path.resolution()
        )));
    }
    let count = 1u64 << level;
    let mut out = Vec::new();
    match case {
        ReferenceCase::ExpScalar { y0 } => {
            for k in 0..=count {
                out.push(y0 * path.value_at(level, k)[0].exp());
            }
        }
        ReferenceCase::CommutingLinear { matrices, y0 } => {
            let n = y0.len();
            for k in 0..=count {
                let w = path.value_at(level, k);
                let mut gen = vec![0.0; n * n];
                for (m, wi) in matrices.iter().zip(w) {
                    for (g, x) in gen.iter_mut().zip(m) {
                        *g += wi * x;
                    }
                }
                let e = expm(&gen, n);
                out.extend(matvec(n, &e, y0));
            }
        }
        ReferenceCase::RotationArea => {
            let fine = path.resolution();
            let stride = 1u64 << (fine - level);
            let mut area = 0.0;
            out.extend_from_slice(&[0.0, 0.0, 0.0]);
            for j in 1..=(1u64 << fine) {
                let a = path.value_at(fine, j - 1);
                let b = path.value_at(fine, j);
                area += 0.5 * (a[0] * b[1] - a[1] * b[0]);
                if j % stride == 0 {
                    out.extend_from_slice(&[b[0], b[1], area]);
                }
            }
        }
    }
    Ok(out)
}

/// Matrix exponential by scaling and squaring with a Taylor core.
pub fn expm(a: &[f64], n: usize) -> Vec<f64> {
    let norm = (0..n)
        .map(|i| a[i * n..(i + 1) * n].iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let mut squarings = 0;
    let mut scale = 1.0;
    while norm * scale > 0.125 {
        scale *= 0.5;
        squarings += 1;
    }
    let b: Vec<f64> = a.iter().map(|x| x * scale).collect();
    let mut result = identity(n);
    let mut term = identity(n);
    for k in 1..=18 {
        term = matmul(&term, &b, n);
        term.iter_mut().for_each(|x| *x /= k as f64);
        for (r, t) in result.iter_mut().zip(&term) {
            *r += t;
        }
    }
    for _ in 0..squarings {
        result = matmul(&result, &result, n);
    }
    result
}

fn identity(n: usize) -> Vec<f64> {
    let mut m = vec![0.0; n * n];
    for i in 0..n {
        m[i * n + i] = 1.0;
    }
    m
}

fn matmul(a: &[f64], b: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for k in 0..n {
            let aik = a[i * n + k];
            for j in 0..n {
                out[i * n + j] += aik * b[k * n + j];
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_drift_is_exact() {
        let path = DyadicBrownianPath::generate(2, 4, 1).unwrap();
        let field = ConstantField {
            dim_driver: 2,
            drive: vec![0.0; 4],
            drift: vec![0.5, -2.0],
        };
        let res = solve_wz(&field, &[1.0, 1.0], &path.polygonal(4).unwrap(), 1).unwrap();
        let end = res.endpoint();
        assert!((end[0] - 1.5).abs() < 1e-14 && (end[1] + 1.0).abs() < 1e-14);
        assert_eq!(res.state(0), &[1.0, 1.0]);
    }

    #[test]
    fn exp_scalar_endpoint() {
        let path = DyadicBrownianPath::generate(1, 12, 42).unwrap();
        let case = ReferenceCase::from_id("exp_scalar").unwrap();
        let field = case.field();
        let exact = path.value_at(0, 1)[0].exp();
        for m in [10, 12] {
            let res = solve_wz(field.as_ref(), &[1.0], &path.polygonal(m).unwrap(), 8).unwrap();
            assert!((res.endpoint()[0] - exact).abs() < 1e-10 * exact.max(1.0));
        }
    }

    #[test]
    fn reference_trivia() {
        let flat = DyadicBrownianPath::from_values(1, 2, vec![0.0; 5]).unwrap();
        let traj = stratonovich_reference(&ReferenceCase::ExpScalar { y0: 2.5 }, &flat, 2).unwrap();
        assert!(traj.iter().all(|y| *y == 2.5));
        let one = DyadicBrownianPath::from_values(1, 0, vec![0.0, 1.0]).unwrap();
        let traj = stratonovich_reference(&ReferenceCase::ExpScalar { y0: 1.0 }, &one, 0).unwrap();
        assert!((traj[1] - std::f64::consts::E).abs() < 1e-15);
        let two = DyadicBrownianPath::generate(2, 3, 5).unwrap();
        let zero = ReferenceCase::CommutingLinear {
            matrices: vec![vec![0.0; 4], vec![0.0; 4]],
            y0: vec![0.3, -0.1],
        };
        let traj = stratonovich_reference(&zero, &two, 3).unwrap();
        assert!(traj.chunks(2).all(|c| c == [0.3, -0.1]));
        assert!(ReferenceCase::from_id("heat").is_err());
    }

    #[test]
    fn expm_of_rotation() {
        let e = expm(&[0.0, -1.0, 1.0, 0.0], 2);
        let (c, s) = (1.0f64.cos(), 1.0f64.sin());
        let want = [c, -s, s, c];
        assert!(e.iter().zip(&want).all(|(a, b)| (a - b).abs() < 1e-14));
    }

    #[test]
    fn example_matrices_commute() {
        let (m, _) = commuting_example();
        let ab = matmul(&m[0], &m[1], 4);
        let ba = matmul(&m[1], &m[0], 4);
        assert!(ab.iter().zip(&ba).all(|(a, b)| (a - b).abs() < 1e-15));
    }

    #[test]
    fn flow_property() {
        let path = DyadicBrownianPath::generate(2, 6, 7).unwrap();
        let poly = path.polygonal(6).unwrap();
        let field = RotationAreaField;
        let y0 = [0.1, 0.2, 0.0];
        let (full, _) = solve_segments(&field, &y0, &poly, 4, 0..64).unwrap();
        let (left, _) = solve_segments(&field, &y0, &poly, 4, 0..32).unwrap();
        let (right, _) = solve_segments(&field, &left[32 * 3..], &poly, 4, 32..64).unwrap();
        let end = &full[64 * 3..];
        let split = &right[32 * 3..];
        assert!(end.iter().zip(split).all(|(a, b)| (a - b).abs() < 1e-10));
    }

    #[test]
    fn blow_up_is_reported() {
        struct Square;
        impl VectorField for Square {
            fn dim_driver(&self) -> usize {
                1
            }
            fn dim_state(&self) -> usize {
                1
            }
            fn drive(&self, _y: &[f64], out: &mut [f64]) {
                out[0] = 0.0;
            }
            fn drift(&self, y: &[f64], out: &mut [f64]) {
                out[0] = y[0] * y[0];
            }
        }
        let path = DyadicBrownianPath::generate(1, 3, 0).unwrap();
        let err = solve_wz(&Square, &[1e200], &path.polygonal(3).unwrap(), 2).unwrap_err();
        assert!(matches!(err, Error::BlowUp { time } if time > 0.0 && time <= 1.0));
    }

    #[test]
    fn jacobians_match_differences() {
        let y = [0.3, -0.7, 1.1];
        assert!(jacobian_defect(&RotationAreaField, &y, 1e-6).unwrap() < 1e-6);
        let (m, y0) = commuting_example();
        let lin = LinearField::new(4, m, None).unwrap();
        assert!(jacobian_defect(&lin, &y0, 1e-6).unwrap() < 1e-6);
    }

    #[test]
    fn zero_fields_give_zero_gaps() {
        let path = DyadicBrownianPath::generate(2, 6, 3).unwrap();
        let field = ConstantField {
            dim_driver: 2,
            drive: vec![0.0; 4],
            drift: vec![0.0; 2],
        };
        for step in wz_sequence(&field, &[1.0, 2.0], &path, 2..5, 4, 2.5).unwrap() {
            assert_eq!(step.dp_gap, 0.0);
            assert_eq!(step.sup_gap, 0.0);
        }
    }
}
