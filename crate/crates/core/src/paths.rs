//! Brownian sample paths on dyadic grids and their polygonal projections.
//!
//! Paths are generated by midpoint (Lévy bridge) refinement so that the path
//! at resolution `M` restricted to the grid of resolution `M − 1` is bitwise
//! the path generated at resolution `M − 1` with the same seed.
//!
//! Randomness: ChaCha8 seeded from the 64-bit seed, with one independent
//! stream per refinement level (`stream = level`; level 0 draws `w_1`).
//! Within a level the midpoints are filled left to right, `d` standard
//! normals per midpoint, drawn with the ziggurat sampler of `rand_distr`.

use std::io::{BufRead, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

pub const MAX_RESOLUTION: u32 = 24;

#[derive(Debug, Clone, PartialEq)]
pub struct DyadicBrownianPath {
    dim: usize,
    resolution: u32,
    seed: Option<u64>,
    values: Vec<f64>,
}

impl DyadicBrownianPath {
    pub fn generate(dim: usize, resolution: u32, seed: u64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParameter("path dimension must be >= 1".into()));
        }
        if resolution > MAX_RESOLUTION {
            return Err(Error::InvalidParameter(format!(
                "resolution {resolution} exceeds the maximum {MAX_RESOLUTION}"
            )));
        }
        let npts = (1usize << resolution) + 1;
        let mut values = vec![0.0; npts * dim];
        let last = (npts - 1) * dim;

        let mut rng = level_rng(seed, 0);
        for i in 0..dim {
            values[last + i] = StandardNormal.sample(&mut rng);
        }

        for level in 1..=resolution {
            let mut rng = level_rng(seed, level);
            // grid spacing (in index units) of the new level and the bridge std
            let half = 1usize << (resolution - level);
            let std = (0.5f64).powi(level as i32 + 1).sqrt();
            let mut left = 0usize;
            while left + 2 * half < npts {
                let mid = left + half;
                let right = left + 2 * half;
                for i in 0..dim {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    values[mid * dim + i] =
                        0.5 * (values[left * dim + i] + values[right * dim + i]) + std * z;
                }
                left = right;
            }
        }

        Ok(Self {
            dim,
            resolution,
            seed: Some(seed),
            values,
        })
    }

    /// Wraps grid values at `k / 2^resolution`, `k = 0..=2^resolution`.
    pub fn from_values(dim: usize, resolution: u32, values: Vec<f64>) -> Result<Self> {
        if dim == 0 || resolution > MAX_RESOLUTION {
            return Err(Error::InvalidParameter("bad dimension or resolution".into()));
        }
        let npts = (1usize << resolution) + 1;
        if values.len() != npts * dim {
            return Err(Error::DimensionMismatch {
                expected: npts * dim,
                got: values.len(),
            });
        }
        if values[..dim].iter().any(|x| *x != 0.0) {
            return Err(Error::InvalidParameter("paths must start at the origin".into()));
        }
        if values.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidParameter("path values must be finite".into()));
        }
        Ok(Self {
            dim,
            resolution,
            seed: None,
            values,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn resolution(&self) -> u32 {
        self.resolution
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Value at the grid point `k / 2^level` for `level <= resolution`.
    pub fn value_at(&self, level: u32, k: u64) -> &[f64] {
        let idx = (k as usize) << (self.resolution - level);
        &self.values[idx * self.dim..(idx + 1) * self.dim]
    }

    /// `ξ_n^k = w_{k/2^n} − w_{(k−1)/2^n}` for `1 <= k <= 2^n`.
    pub fn xi(&self, n: u32, k: u64) -> Result<Vec<f64>> {
        self.check_index(n, k)?;
        Ok(self.xi_unchecked(n, k))
    }

    pub(crate) fn xi_unchecked(&self, n: u32, k: u64) -> Vec<f64> {
        let a = self.value_at(n, k - 1);
        let b = self.value_at(n, k);
        b.iter().zip(a).map(|(x, y)| x - y).collect()
    }

    pub(crate) fn check_index(&self, n: u32, k: u64) -> Result<()> {
        if n > self.resolution {
            return Err(Error::IndexOutOfRange(format!(
                "level {n} exceeds path resolution {}",
                self.resolution
            )));
        }
        if k == 0 || k > (1u64 << n) {
            return Err(Error::IndexOutOfRange(format!("k = {k} not in 1..=2^{n}")));
        }
        Ok(())
    }

    pub fn polygonal(&self, m: u32) -> Result<PolygonalPath> {
        if m > self.resolution {
            return Err(Error::IndexOutOfRange(format!(
                "polygonal level {m} exceeds path resolution {}",
                self.resolution
            )));
        }
        let step = 1usize << (self.resolution - m);
        let vertices = self
            .values
            .chunks_exact(self.dim)
            .step_by(step)
            .flatten()
            .copied()
            .collect();
        Ok(PolygonalPath {
            dim: self.dim,
            level: m,
            vertices,
        })
    }

    /// Header `t,x1..xd`, one row per grid point.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        write_grid_csv(out, "x", self.dim, self.resolution, &self.values)
    }

    pub fn read_csv<R: BufRead>(input: R) -> Result<Self> {
        let (dim, resolution, values) = read_grid_csv(input)?;
        Self::from_values(dim, resolution, values)
    }
}

fn level_rng(seed: u64, level: u32) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(level as u64);
    rng
}

/// `k(n, m) = ⌈k / 2^{n−m}⌉`, the index of the level-`m` interval containing
/// the `k`-th level-`n` interval.
pub fn parent_index(n: u32, k: u64, m: u32) -> Result<u64> {
    if n < m {
        return Err(Error::InvalidParameter(format!(
            "parent level {m} is finer than {n}"
        )));
    }
    if k == 0 {
        return Err(Error::IndexOutOfRange("k must be >= 1".into()));
    }
    Ok(parent_unchecked(n, k, m))
}

#[inline]
pub(crate) fn parent_unchecked(n: u32, k: u64, m: u32) -> u64 {
    let shift = n - m;
    (k + (1u64 << shift) - 1) >> shift
}

/// Piecewise-linear path through `2^level + 1` equally spaced vertices on [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct PolygonalPath {
    dim: usize,
    level: u32,
    vertices: Vec<f64>,
}

impl PolygonalPath {
    pub fn from_vertices(dim: usize, level: u32, vertices: Vec<f64>) -> Result<Self> {
        if dim == 0 || level > MAX_RESOLUTION {
            return Err(Error::InvalidParameter("bad dimension or level".into()));
        }
        let n = (1usize << level) + 1;
        if vertices.len() != n * dim {
            return Err(Error::DimensionMismatch {
                expected: n * dim,
                got: vertices.len(),
            });
        }
        if vertices.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidParameter("vertices must be finite".into()));
        }
        Ok(Self { dim, level, vertices })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn vertices(&self) -> &[f64] {
        &self.vertices
    }

    pub fn segments(&self) -> usize {
        1usize << self.level
    }

    pub fn vertex(&self, k: usize) -> &[f64] {
        &self.vertices[k * self.dim..(k + 1) * self.dim]
    }

    /// Increment of the `k`-th segment, `k` 1-based.
    pub fn segment_increment(&self, k: usize) -> Vec<f64> {
        let a = self.vertex(k - 1);
        let b = self.vertex(k);
        b.iter().zip(a).map(|(x, y)| x - y).collect()
    }

    /// `w_{t^{k−1}} + 2^m (t − t^{k−1}) (w_{t^k} − w_{t^{k−1}})`
    pub fn eval(&self, t: f64) -> Result<Vec<f64>> {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::InvalidParameter(format!("t = {t} outside [0, 1]")));
        }
        Ok(self.eval_unchecked(t))
    }

    pub(crate) fn eval_unchecked(&self, t: f64) -> Vec<f64> {
        let scale = (1u64 << self.level) as f64;
        let x = t * scale;
        let mut k = x.floor() as usize;
        if k >= self.segments() {
            k = self.segments() - 1;
        }
        let frac = x - k as f64;
        let a = self.vertex(k);
        let b = self.vertex(k + 1);
        if frac == 1.0 {
            return b.to_vec();
        }
        a.iter().zip(b).map(|(p, q)| p + frac * (q - p)).collect()
    }

    /// Header `t,<prefix>1..<prefix>d`, one row per vertex.
    pub fn write_csv<W: Write>(&self, out: W, prefix: &str) -> Result<()> {
        write_grid_csv(out, prefix, self.dim, self.level, &self.vertices)
    }

    pub fn read_csv<R: BufRead>(input: R) -> Result<Self> {
        let (dim, level, values) = read_grid_csv(input)?;
        Self::from_vertices(dim, level, values)
    }
}

fn write_grid_csv<W: Write>(
    mut out: W,
    prefix: &str,
    dim: usize,
    level: u32,
    values: &[f64],
) -> Result<()> {
    let mut header = String::from("t");
    for i in 1..=dim {
        header.push_str(&format!(",{prefix}{i}"));
    }
    writeln!(out, "{header}")?;
    let scale = (1u64 << level) as f64;
    for (k, row) in values.chunks_exact(dim).enumerate() {
        let mut line = format!("{}", k as f64 / scale);
        for v in row {
            line.push_str(&format!(",{v}"));
        }
        writeln!(out, "{line}")?;
    }
    Ok(())
}

fn read_grid_csv<R: BufRead>(input: R) -> Result<(usize, u32, Vec<f64>)> {
    let mut lines = input.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Parse("empty CSV".into()))??;
    let cols: Vec<&str> = header.trim().split(',').collect();
    if cols.len() < 2 || cols[0] != "t" {
        return Err(Error::Parse(format!("unexpected header '{header}'")));
    }
    let dim = cols.len() - 1;
    let mut times = Vec::new();
    let mut values = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.trim().split(',').collect();
        if fields.len() != dim + 1 {
            return Err(Error::Parse(format!("row {} has {} fields", lineno + 2, fields.len())));
        }
        let parse = |s: &str| {
            s.trim()
                .parse::<f64>()
                .map_err(|e| Error::Parse(format!("row {}: {e}", lineno + 2)))
        };
        times.push(parse(fields[0])?);
        for f in &fields[1..] {
            values.push(parse(f)?);
        }
    }
    let segments = times.len().saturating_sub(1);
    if segments == 0 || !segments.is_power_of_two() {
        return Err(Error::Parse(format!(
            "expected 2^M + 1 rows, found {}",
            times.len()
        )));
    }
    let level = segments.trailing_zeros();
    for (k, t) in times.iter().enumerate() {
        if (t - k as f64 / segments as f64).abs() > 1e-12 {
            return Err(Error::Parse(format!("row {} is not on the dyadic grid", k + 2)));
        }
    }
    Ok((dim, level, values))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn base_case_has_two_points() {
        let p = DyadicBrownianPath::generate(3, 0, 11).unwrap();
        assert_eq!(p.values().len(), 6);
        assert_eq!(&p.values()[..3], &[0.0, 0.0, 0.0]);
        assert!(p.values()[3..].iter().all(|x| *x != 0.0));
    }

    #[test]
    fn refinement_is_consistent() {
        let coarse = DyadicBrownianPath::generate(2, 5, 99).unwrap();
        let fine = DyadicBrownianPath::generate(2, 8, 99).unwrap();
        for k in 0..=32u64 {
            assert_eq!(coarse.value_at(5, k), fine.value_at(5, k));
        }
        assert_eq!(coarse.polygonal(5).unwrap(), fine.polygonal(5).unwrap());
    }

    #[test]
    fn generation_is_deterministic() {
        let a = DyadicBrownianPath::generate(2, 6, 1234).unwrap();
        let b = DyadicBrownianPath::generate(2, 6, 1234).unwrap();
        let c = DyadicBrownianPath::generate(2, 6, 1235).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn rejects_out_of_range() {
        assert!(DyadicBrownianPath::generate(1, 25, 0).is_err());
        assert!(DyadicBrownianPath::generate(0, 3, 0).is_err());
        let p = DyadicBrownianPath::generate(1, 3, 0).unwrap();
        assert!(p.polygonal(4).is_err());
        assert!(p.xi(4, 1).is_err());
        assert!(p.xi(2, 0).is_err());
        assert!(p.xi(2, 5).is_err());
    }

    #[test]
    fn increments_telescope_and_split() {
        let p = DyadicBrownianPath::generate(2, 7, 5).unwrap();
        let w1 = p.value_at(0, 1).to_vec();
        for n in 0..=6 {
            let mut sum = vec![0.0; 2];
            for k in 1..=(1u64 << n) {
                let x = p.xi(n, k).unwrap();
                let a = p.xi(n + 1, 2 * k - 1).unwrap();
                let b = p.xi(n + 1, 2 * k).unwrap();
                for i in 0..2 {
                    sum[i] += x[i];
                    assert!((x[i] - a[i] - b[i]).abs() <= 1e-14);
                }
            }
            for i in 0..2 {
                assert!((sum[i] - w1[i]).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn parent_index_examples() {
        assert_eq!(parent_index(4, 7, 4).unwrap(), 7);
        assert_eq!(parent_index(3, 5, 1).unwrap(), 2);
        assert_eq!(parent_index(4, 1, 2).unwrap(), 1);
        assert_eq!(parent_index(4, 16, 2).unwrap(), 4);
        assert!(parent_index(2, 1, 3).is_err());
    }

    #[test]
    fn polygonal_evaluation() {
        let p = DyadicBrownianPath::generate(2, 6, 3).unwrap();
        let full = p.polygonal(6).unwrap();
        assert_eq!(full.vertices(), p.values());
        let poly = p.polygonal(3).unwrap();
        for k in 0..=8u64 {
            let t = k as f64 / 8.0;
            assert_eq!(poly.eval(t).unwrap(), p.value_at(3, k).to_vec());
        }
        let mid = poly.eval(3.5 / 8.0).unwrap();
        let a = p.value_at(3, 3);
        let b = p.value_at(3, 4);
        for i in 0..2 {
            assert!((mid[i] - 0.5 * (a[i] + b[i])).abs() < 1e-15);
        }
        assert!(poly.eval(1.5).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let p = DyadicBrownianPath::generate(3, 4, 8).unwrap();
        let mut buf = Vec::new();
        p.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("t,x1,x2,x3\n"));
        let q = DyadicBrownianPath::read_csv(&buf[..]).unwrap();
        assert_eq!(q.values(), p.values());
        assert_eq!(q.resolution(), 4);
        assert!(DyadicBrownianPath::read_csv("t,x1\n0,0\n0.5,1\n0.75,1\n".as_bytes()).is_err());
    }
}
