//! Time grids and sampled paths.
//!
//! A [`GridPath`] is the single representation used for every trajectory in
//! the crate: noise paths, solutions, controls and candidate rate-function
//! arguments. Values are stored node-major, one coefficient vector per node.

use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Strictly increasing time nodes `t_0 < t_1 < ... < t_M`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    times: Vec<f64>,
}

impl TimeGrid {
    pub fn new(times: Vec<f64>) -> Result<Self> {
        if times.is_empty() {
            return Err(Error::Grid("empty time grid".into()));
        }
        if times.iter().any(|t| !t.is_finite()) || times[0] < 0.0 {
            return Err(Error::Grid("grid nodes must be finite and non-negative".into()));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Grid("grid nodes must be strictly increasing".into()));
        }
        Ok(Self { times })
    }

    /// `steps + 1` equispaced nodes on `[0, horizon]`.
    pub fn uniform(horizon: f64, steps: usize) -> Result<Self> {
        if !(horizon > 0.0) || steps == 0 {
            return Err(Error::Grid(format!(
                "uniform grid needs horizon > 0 and steps >= 1 (got {horizon}, {steps})"
            )));
        }
        let h = horizon / steps as f64;
        let mut times: Vec<f64> = (0..=steps).map(|k| k as f64 * h).collect();
        times[steps] = horizon;
        Ok(Self { times })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// Number of nodes.
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Number of intervals.
    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn start(&self) -> f64 {
        self.times[0]
    }

    pub fn end(&self) -> f64 {
        self.times[self.times.len() - 1]
    }

    pub fn is_uniform(&self) -> bool {
        if self.times.len() < 3 {
            return true;
        }
        let h = (self.end() - self.start()) / self.steps() as f64;
        self.times
            .windows(2)
            .all(|w| ((w[1] - w[0]) - h).abs() <= 1e-9 * h.max(1e-300))
    }

    /// Mean step, which is the step of a uniform grid.
    pub fn step(&self) -> f64 {
        if self.times.len() < 2 {
            return 0.0;
        }
        (self.end() - self.start()) / self.steps() as f64
    }

    /// Splits every interval into `factor` equal sub-intervals.
    pub fn refine(&self, factor: usize) -> Result<Self> {
        if factor == 0 {
            return Err(Error::Grid("refinement factor must be >= 1".into()));
        }
        let mut times = Vec::with_capacity(self.steps() * factor + 1);
        for w in self.times.windows(2) {
            let h = (w[1] - w[0]) / factor as f64;
            for j in 0..factor {
                times.push(w[0] + j as f64 * h);
            }
        }
        times.push(self.end());
        Ok(Self { times })
    }

    /// Stable 64-bit FNV-1a hash of the node bit patterns.
    pub fn hash64(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for t in &self.times {
            for b in t.to_bits().to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        }
        h
    }

    /// Index of the node equal to `t` (within 1e-9 of the local step).
    pub fn index_of(&self, t: f64) -> Option<usize> {
        let tol = 1e-9 * self.step().max(1e-12);
        let pos = self.times.partition_point(|&x| x < t - tol);
        (pos < self.times.len() && (self.times[pos] - t).abs() <= tol).then_some(pos)
    }

    pub fn describe(&self) -> String {
        format!(
            "[{} nodes on {:.6}..{:.6}]",
            self.len(),
            self.start(),
            self.end()
        )
    }
}

/// Sampled vector-valued path: one coefficient vector of length `dim` per node.
#[derive(Debug, Clone, PartialEq)]
pub struct GridPath {
    grid: TimeGrid,
    dim: usize,
    data: Vec<f64>,
}

impl GridPath {
    pub fn new(grid: TimeGrid, dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Domain("path dimension must be >= 1".into()));
        }
        if data.len() != grid.len() * dim {
            return Err(Error::Dimension {
                expected: grid.len() * dim,
                got: data.len(),
            });
        }
        Ok(Self { grid, dim, data })
    }

    pub fn zeros(grid: TimeGrid, dim: usize) -> Self {
        assert!(dim >= 1, "path dimension must be >= 1");
        let n = grid.len() * dim;
        Self {
            grid,
            dim,
            data: vec![0.0; n],
        }
    }

    /// Scalar path from node values.
    pub fn scalar(grid: TimeGrid, values: Vec<f64>) -> Result<Self> {
        Self::new(grid, 1, values)
    }

    /// Path whose value at node `k` is `f(t_k)`.
    pub fn from_fn(grid: TimeGrid, dim: usize, mut f: impl FnMut(f64) -> Vec<f64>) -> Result<Self> {
        let mut data = Vec::with_capacity(grid.len() * dim);
        for &t in grid.times() {
            let v = f(t);
            if v.len() != dim {
                return Err(Error::Dimension {
                    expected: dim,
                    got: v.len(),
                });
            }
            data.extend_from_slice(&v);
        }
        Self::new(grid, dim, data)
    }

    /// Assemble a path from per-mode time series.
    pub fn from_modes(grid: TimeGrid, modes: &[Vec<f64>]) -> Result<Self> {
        let dim = modes.len();
        if dim == 0 {
            return Err(Error::Domain("no modes supplied".into()));
        }
        let n = grid.len();
        if let Some(bad) = modes.iter().find(|m| m.len() != n) {
            return Err(Error::Dimension {
                expected: n,
                got: bad.len(),
            });
        }
        let mut data = vec![0.0; n * dim];
        for (i, m) in modes.iter().enumerate() {
            for (k, v) in m.iter().enumerate() {
                data[k * dim + i] = *v;
            }
        }
        Self::new(grid, dim, data)
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn times(&self) -> &[f64] {
        self.grid.times()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn value(&self, k: usize) -> &[f64] {
        &self.data[k * self.dim..(k + 1) * self.dim]
    }

    pub fn value_mut(&mut self, k: usize) -> &mut [f64] {
        &mut self.data[k * self.dim..(k + 1) * self.dim]
    }

    pub fn last(&self) -> &[f64] {
        self.value(self.len() - 1)
    }

    /// Time series of a single mode.
    pub fn mode(&self, i: usize) -> Vec<f64> {
        self.data.iter().skip(i).step_by(self.dim).copied().collect()
    }

    pub fn modes(&self) -> Vec<Vec<f64>> {
        (0..self.dim).map(|i| self.mode(i)).collect()
    }

    pub fn map(&self, mut f: impl FnMut(f64) -> f64) -> Self {
        Self {
            grid: self.grid.clone(),
            dim: self.dim,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scaled(&self, c: f64) -> Self {
        self.map(|v| c * v)
    }

    fn check_same_shape(&self, other: &GridPath) -> Result<()> {
        if self.dim != other.dim {
            return Err(Error::Dimension {
                expected: self.dim,
                got: other.dim,
            });
        }
        if self.grid != other.grid {
            return Err(Error::Grid(format!(
                "paths live on different grids {} vs {}",
                self.grid.describe(),
                other.grid.describe()
            )));
        }
        Ok(())
    }

    /// `a * self + b * other` on a shared grid.
    pub fn axpby(&self, a: f64, other: &GridPath, b: f64) -> Result<Self> {
        self.check_same_shape(other)?;
        Ok(Self {
            grid: self.grid.clone(),
            dim: self.dim,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(x, y)| a * x + b * y)
                .collect(),
        })
    }

    pub fn sub(&self, other: &GridPath) -> Result<Self> {
        self.axpby(1.0, other, -1.0)
    }

    /// Euclidean norm of the value at every node.
    pub fn node_norms(&self) -> Vec<f64> {
        (0..self.len()).map(|k| l2(self.value(k))).collect()
    }

    pub fn sup_norm(&self) -> f64 {
        self.node_norms().into_iter().fold(0.0, f64::max)
    }

    /// `sqrt(int ||x(t)||^2 dt)` by the trapezoidal rule.
    pub fn l2_time_norm(&self) -> f64 {
        let sq: Vec<f64> = self.node_norms().iter().map(|v| v * v).collect();
        trapezoid(self.times(), &sq).max(0.0).sqrt()
    }

    /// Centered finite differences, one-sided at the two ends.
    pub fn derivative(&self) -> Result<Self> {
        let n = self.len();
        if n < 2 {
            return Err(Error::Grid("derivative needs at least two nodes".into()));
        }
        let t = self.times();
        let d = self.dim;
        let mut out = vec![0.0; n * d];
        for k in 0..n {
            let (lo, hi) = if k == 0 {
                (0, 1)
            } else if k == n - 1 {
                (n - 2, n - 1)
            } else {
                (k - 1, k + 1)
            };
            let dt = t[hi] - t[lo];
            for i in 0..d {
                out[k * d + i] = (self.data[hi * d + i] - self.data[lo * d + i]) / dt;
            }
        }
        Self::new(self.grid.clone(), d, out)
    }

    /// Running trapezoidal integral starting from `initial`.
    pub fn cumulative_integral(&self, initial: &[f64]) -> Result<Self> {
        if initial.len() != self.dim {
            return Err(Error::Dimension {
                expected: self.dim,
                got: initial.len(),
            });
        }
        let d = self.dim;
        let t = self.times();
        let mut out = vec![0.0; self.data.len()];
        out[..d].copy_from_slice(initial);
        for k in 1..self.len() {
            let h = t[k] - t[k - 1];
            for i in 0..d {
                out[k * d + i] =
                    out[(k - 1) * d + i] + 0.5 * h * (self.data[(k - 1) * d + i] + self.data[k * d + i]);
            }
        }
        Self::new(self.grid.clone(), d, out)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// CSV with header `t,mode_0,...,mode_{n-1}`; floats use the shortest
    /// round-trip representation so output is reproducible byte for byte.
    pub fn to_csv_string(&self) -> String {
        let mut s = String::from("t");
        for i in 0..self.dim {
            let _ = write!(s, ",mode_{i}");
        }
        s.push('\n');
        for k in 0..self.len() {
            let _ = write!(s, "{}", self.times()[k]);
            for v in self.value(k) {
                let _ = write!(s, ",{v}");
            }
            s.push('\n');
        }
        s
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_csv_string())?;
        Ok(())
    }

    pub fn from_csv_str(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| Error::Io("empty CSV".into()))?;
        let cols: Vec<&str> = header.split(',').map(str::trim).collect();
        if cols.first() != Some(&"t") || cols.len() < 2 {
            return Err(Error::Io(format!("bad CSV header: {header}")));
        }
        let dim = cols.len() - 1;
        let mut times = Vec::new();
        let mut data = Vec::new();
        for (row, line) in lines.enumerate() {
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != dim + 1 {
                return Err(Error::Io(format!(
                    "row {row}: expected {} fields, got {}",
                    dim + 1,
                    fields.len()
                )));
            }
            let parse = |s: &str| {
                s.parse::<f64>()
                    .map_err(|e| Error::Io(format!("row {row}: {s:?}: {e}")))
            };
            times.push(parse(fields[0])?);
            for f in &fields[1..] {
                data.push(parse(f)?);
            }
        }
        Self::new(TimeGrid::new(times)?, dim, data)
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_csv_str(&text)
    }

    const MAGIC: &'static [u8; 8] = b"MFBMPATH";

    /// Little-endian binary encoding: magic, dim, node count, times, values.
    pub fn write_binary(&self, mut w: impl Write) -> Result<()> {
        w.write_all(Self::MAGIC)?;
        w.write_all(&(self.dim as u64).to_le_bytes())?;
        w.write_all(&(self.len() as u64).to_le_bytes())?;
        for t in self.times() {
            w.write_all(&t.to_le_bytes())?;
        }
        for v in &self.data {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != Self::MAGIC {
            return Err(Error::Io("not a path cache file".into()));
        }
        let mut word = [0u8; 8];
        r.read_exact(&mut word)?;
        let dim = u64::from_le_bytes(word) as usize;
        r.read_exact(&mut word)?;
        let n = u64::from_le_bytes(word) as usize;
        let mut read_f64s = |count: usize| -> Result<Vec<f64>> {
            let mut out = Vec::with_capacity(count);
            for _ in 0..count {
                r.read_exact(&mut word)?;
                out.push(f64::from_le_bytes(word));
            }
            Ok(out)
        };
        let times = read_f64s(n)?;
        let data = read_f64s(n * dim)?;
        Self::new(TimeGrid::new(times)?, dim, data)
    }
}

pub(crate) fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub(crate) fn trapezoid(t: &[f64], f: &[f64]) -> f64 {
    t.windows(2)
        .zip(f.windows(2))
        .map(|(tw, fw)| 0.5 * (tw[1] - tw[0]) * (fw[0] + fw[1]))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_grid_has_exact_endpoints() {
        let g = TimeGrid::uniform(1.0, 10).unwrap();
        assert_eq!(g.len(), 11);
        assert_eq!(g.start(), 0.0);
        assert_eq!(g.end(), 1.0);
        assert!(g.is_uniform());
    }

    #[test]
    fn rejects_non_increasing_nodes() {
        assert!(TimeGrid::new(vec![0.0, 0.5, 0.5]).is_err());
        assert!(TimeGrid::new(vec![]).is_err());
    }

    #[test]
    fn refine_keeps_coarse_nodes() {
        let g = TimeGrid::uniform(2.0, 4).unwrap();
        let f = g.refine(3).unwrap();
        assert_eq!(f.steps(), 12);
        for (k, t) in g.times().iter().enumerate() {
            assert!((f.times()[3 * k] - t).abs() < 1e-15);
        }
    }

    #[test]
    fn derivative_of_linear_path_is_exact() {
        let g = TimeGrid::uniform(1.0, 8).unwrap();
        let p = GridPath::from_fn(g, 2, |t| vec![3.0 * t, -t + 1.0]).unwrap();
        let d = p.derivative().unwrap();
        for k in 0..d.len() {
            assert!((d.value(k)[0] - 3.0).abs() < 1e-12);
            assert!((d.value(k)[1] + 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let g = TimeGrid::uniform(1.0, 5).unwrap();
        let p = GridPath::from_fn(g, 2, |t| vec![t.sin() / 3.0, (t * 7.1).exp()]).unwrap();
        let back = GridPath::from_csv_str(&p.to_csv_string()).unwrap();
        assert_eq!(p, back);
        assert!(p.to_csv_string().starts_with("t,mode_0,mode_1\n"));
    }

    #[test]
    fn binary_round_trip_is_exact() {
        let g = TimeGrid::uniform(0.5, 7).unwrap();
        let p = GridPath::from_fn(g, 3, |t| vec![t, t * t, -t]).unwrap();
        let mut buf = Vec::new();
        p.write_binary(&mut buf).unwrap();
        assert_eq!(GridPath::read_binary(buf.as_slice()).unwrap(), p);
    }

    #[test]
    fn index_of_finds_nodes() {
        let g = TimeGrid::uniform(1.0, 4).unwrap();
        assert_eq!(g.index_of(0.5), Some(2));
        assert_eq!(g.index_of(0.3), None);
    }
}
