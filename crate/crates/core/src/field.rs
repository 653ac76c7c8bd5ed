//! Grid functions on `G × V × [0, T]` and `G × V`, their discrete
//! derivatives, inflow traces, and the `L∞`-scale norms built from them.
//!
//! Layout is row-major: `[time][space][velocity]` for 3-D fields and
//! `[space][velocity]` for slices. All reductions run in a fixed sequential
//! order so norms are bitwise reproducible.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{KinvError, Result};
use crate::geometry::PhaseGrid;

const MAGIC: &str = "TIVP1";

fn check_finite(values: &[f64]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(KinvError::Field(format!(
            "non-finite entry {} at flat index {i}",
            values[i]
        ))),
        None => Ok(()),
    }
}

fn sup(values: &[f64]) -> f64 {
    values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

/// Real field on the full space-time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction3 {
    grid: Arc<PhaseGrid>,
    values: Vec<f64>,
}

/// Real field on one `G × V` slice.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction2 {
    grid: Arc<PhaseGrid>,
    values: Vec<f64>,
}

impl GridFunction3 {
    pub fn new(grid: Arc<PhaseGrid>, values: Vec<f64>) -> Result<Self> {
        let expected = (grid.nt() + 1) * grid.slice_len();
        if values.len() != expected {
            return Err(KinvError::Field(format!(
                "expected {expected} values for a ({}, {}, {}) field, got {}",
                grid.nt() + 1,
                grid.nx(),
                grid.nv(),
                values.len()
            )));
        }
        check_finite(&values)?;
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: Arc<PhaseGrid>) -> Self {
        let n = (grid.nt() + 1) * grid.slice_len();
        Self {
            grid,
            values: vec![0.0; n],
        }
    }

    /// Samples `f(k, i, j)` at every node.
    pub fn from_fn(grid: Arc<PhaseGrid>, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let (nt, nx, nv) = (grid.nt(), grid.nx(), grid.nv());
        let mut values = Vec::with_capacity((nt + 1) * nx * nv);
        for k in 0..=nt {
            for i in 0..nx {
                for j in 0..nv {
                    values.push(f(k, i, j));
                }
            }
        }
        Self { grid, values }
    }

    /// Samples `f(x, v, t)` at every node.
    pub fn sample(grid: Arc<PhaseGrid>, mut f: impl FnMut(f64, f64, f64) -> f64) -> Self {
        let g = grid.clone();
        Self::from_fn(grid, |k, i, j| f(g.x_centers()[i], g.v_nodes()[j], g.time(k)))
    }

    /// Copies `slice` into every time level.
    pub fn replicate(slice: &GridFunction2) -> Self {
        let grid = slice.grid.clone();
        let mut values = Vec::with_capacity((grid.nt() + 1) * grid.slice_len());
        for _ in 0..=grid.nt() {
            values.extend_from_slice(&slice.values);
        }
        Self { grid, values }
    }

    pub(crate) fn from_raw(grid: Arc<PhaseGrid>, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), (grid.nt() + 1) * grid.slice_len());
        Self { grid, values }
    }

    pub fn grid(&self) -> &Arc<PhaseGrid> {
        &self.grid
    }
    pub fn values(&self) -> &[f64] {
        &self.values
    }
    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }
    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn index(&self, k: usize, i: usize, j: usize) -> usize {
        (k * self.grid.nx() + i) * self.grid.nv() + j
    }
    #[inline]
    pub fn get(&self, k: usize, i: usize, j: usize) -> f64 {
        self.values[self.index(k, i, j)]
    }

    /// Values at time level `k`, laid out `[space][velocity]`.
    pub fn level(&self, k: usize) -> &[f64] {
        let n = self.grid.slice_len();
        &self.values[k * n..(k + 1) * n]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn scale(&self, c: f64) -> Self {
        self.map(|v| c * v)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            grid: self.grid.clone(),
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_with(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        assert_eq!(self.values.len(), other.values.len(), "field shapes differ");
        Self {
            grid: self.grid.clone(),
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        self.zip_with(other, |a, b| a + b)
    }
    pub fn sub(&self, other: &Self) -> Self {
        self.zip_with(other, |a, b| a - b)
    }
    pub fn mul(&self, other: &Self) -> Self {
        self.zip_with(other, |a, b| a * b)
    }

    pub fn sup_norm(&self) -> f64 {
        sup(&self.values)
    }

    /// Quadrature `L₂` norm with weights `dx · w_v · w_t` (trapezoid in time).
    pub fn l2_norm(&self) -> f64 {
        let g = &self.grid;
        let tw = g.time_weights();
        let mut acc = 0.0;
        for (k, &wt) in tw.iter().enumerate() {
            for i in 0..g.nx() {
                for (j, &wv) in g.v_weights().iter().enumerate() {
                    let u = self.get(k, i, j);
                    acc += wt * g.dx() * wv * u * u;
                }
            }
        }
        acc.sqrt()
    }

    /// Forward differences in time, backward difference at the last level.
    pub fn time_derivative(&self) -> Self {
        let g = &self.grid;
        let n = g.slice_len();
        let nt = g.nt();
        let dt = g.dt();
        let mut out = vec![0.0; self.values.len()];
        for k in 0..=nt {
            let (a, b) = if k < nt { (k, k + 1) } else { (nt - 1, nt) };
            for p in 0..n {
                out[k * n + p] = (self.values[b * n + p] - self.values[a * n + p]) / dt;
            }
        }
        Self::from_raw(self.grid.clone(), out)
    }

    /// `v · ∂ₓu` with the upwind one-sided difference for each ordinate.
    pub fn streaming_derivative(&self) -> Self {
        let g = &self.grid;
        let n = g.slice_len();
        let mut out = vec![0.0; self.values.len()];
        for k in 0..=g.nt() {
            streaming_into(g, &self.values[k * n..(k + 1) * n], &mut out[k * n..(k + 1) * n]);
        }
        Self::from_raw(self.grid.clone(), out)
    }

    /// Values in the inflow-adjacent cell for every time level and ordinate.
    pub fn trace_inflow(&self) -> InflowTrace {
        let g = &self.grid;
        let nv = g.nv();
        let mut values = Vec::with_capacity((g.nt() + 1) * nv);
        for k in 0..=g.nt() {
            for j in 0..nv {
                values.push(self.get(k, g.inflow_cell(j), j));
            }
        }
        InflowTrace {
            levels: g.nt() + 1,
            nv,
            values,
        }
    }

    pub fn norms(&self) -> NormReport {
        let sup = self.sup_norm();
        let sup_dt = self.time_derivative().sup_norm();
        let sup_stream = self.streaming_derivative().sup_norm();
        let trace_sup = self.trace_inflow().sup_norm();
        NormReport {
            sup,
            l2: self.l2_norm(),
            sup_dt,
            sup_stream,
            trace_sup,
            h_inf: sup + sup_dt + sup_stream + trace_sup,
            w_inf_t: sup + sup_dt,
        }
    }

    /// `‖u‖ + ‖u_t‖` in the sup norm.
    pub fn w_inf_t_norm(&self) -> f64 {
        self.sup_norm() + self.time_derivative().sup_norm()
    }

    pub fn slice(&self, k: usize) -> GridFunction2 {
        GridFunction2 {
            grid: self.grid.clone(),
            values: self.level(k).to_vec(),
        }
    }

    /// Values at `t = T`.
    pub fn final_slice(&self) -> GridFunction2 {
        self.slice(self.grid.nt())
    }

    pub fn write_binary(&self, path: impl AsRef<Path>) -> Result<()> {
        let g = &self.grid;
        write_dump(path, &[g.nt() + 1, g.nx(), g.nv()], &self.values)
    }

    pub fn read_binary(grid: Arc<PhaseGrid>, path: impl AsRef<Path>) -> Result<Self> {
        let (shape, values) = read_dump(path.as_ref())?;
        let want = [grid.nt() + 1, grid.nx(), grid.nv()];
        if shape != want {
            return Err(KinvError::Field(format!(
                "{}: dump shape {shape:?} does not match grid {want:?}",
                path.as_ref().display()
            )));
        }
        Self::new(grid, values)
    }
}

/// Writes `v · D_upwind u` for one `[space][velocity]` level into `out`.
fn streaming_into(g: &PhaseGrid, u: &[f64], out: &mut [f64]) {
    let (nx, nv) = (g.nx(), g.nv());
    let dx = g.dx();
    for (j, &v) in g.v_nodes().iter().enumerate() {
        for i in 0..nx {
            let (lo, hi) = if v > 0.0 {
                if i == 0 {
                    (0, 1)
                } else {
                    (i - 1, i)
                }
            } else if i + 1 == nx {
                (nx - 2, nx - 1)
            } else {
                (i, i + 1)
            };
            out[i * nv + j] = v * (u[hi * nv + j] - u[lo * nv + j]) / dx;
        }
    }
}

impl GridFunction2 {
    pub fn new(grid: Arc<PhaseGrid>, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.slice_len() {
            return Err(KinvError::Field(format!(
                "expected {} values for a ({}, {}) slice, got {}",
                grid.slice_len(),
                grid.nx(),
                grid.nv(),
                values.len()
            )));
        }
        check_finite(&values)?;
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: Arc<PhaseGrid>) -> Self {
        let n = grid.slice_len();
        Self {
            grid,
            values: vec![0.0; n],
        }
    }

    pub fn from_fn(grid: Arc<PhaseGrid>, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let (nx, nv) = (grid.nx(), grid.nv());
        let mut values = Vec::with_capacity(nx * nv);
        for i in 0..nx {
            for j in 0..nv {
                values.push(f(i, j));
            }
        }
        Self { grid, values }
    }

    /// Samples `f(x, v)` at every node.
    pub fn sample(grid: Arc<PhaseGrid>, mut f: impl FnMut(f64, f64) -> f64) -> Self {
        let g = grid.clone();
        Self::from_fn(grid, |i, j| f(g.x_centers()[i], g.v_nodes()[j]))
    }

    /// Unit vector at flat index `p = i * Nv + j`.
    pub fn unit(grid: Arc<PhaseGrid>, p: usize) -> Self {
        let mut s = Self::zeros(grid);
        s.values[p] = 1.0;
        s
    }

    pub(crate) fn from_raw(grid: Arc<PhaseGrid>, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.slice_len());
        Self { grid, values }
    }

    pub fn grid(&self) -> &Arc<PhaseGrid> {
        &self.grid
    }
    pub fn values(&self) -> &[f64] {
        &self.values
    }
    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.grid.nv() + j]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            grid: self.grid.clone(),
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_with(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        assert_eq!(self.values.len(), other.values.len(), "slice shapes differ");
        Self {
            grid: self.grid.clone(),
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        self.zip_with(other, |a, b| a + b)
    }
    pub fn sub(&self, other: &Self) -> Self {
        self.zip_with(other, |a, b| a - b)
    }
    pub fn scale(&self, c: f64) -> Self {
        self.map(|v| c * v)
    }

    pub fn sup_norm(&self) -> f64 {
        sup(&self.values)
    }

    pub fn l2_norm(&self) -> f64 {
        let g = &self.grid;
        let mut acc = 0.0;
        for i in 0..g.nx() {
            for (j, &wv) in g.v_weights().iter().enumerate() {
                let u = self.get(i, j);
                acc += g.dx() * wv * u * u;
            }
        }
        acc.sqrt()
    }

    pub fn streaming_derivative(&self) -> Self {
        let mut out = vec![0.0; self.values.len()];
        streaming_into(&self.grid, &self.values, &mut out);
        Self::from_raw(self.grid.clone(), out)
    }

    /// Inflow-adjacent value per ordinate.
    pub fn trace_inflow(&self) -> Vec<f64> {
        (0..self.grid.nv())
            .map(|j| self.get(self.grid.inflow_cell(j), j))
            .collect()
    }

    /// `‖φ‖ + ‖(v,∇)φ‖ + ‖φ|γ₋‖` in the sup norm.
    pub fn h_inf_norm(&self) -> f64 {
        self.sup_norm() + self.streaming_derivative().sup_norm() + sup(&self.trace_inflow())
    }

    pub fn write_binary(&self, path: impl AsRef<Path>) -> Result<()> {
        write_dump(path, &[self.grid.nx(), self.grid.nv()], &self.values)
    }

    pub fn read_binary(grid: Arc<PhaseGrid>, path: impl AsRef<Path>) -> Result<Self> {
        let (shape, values) = read_dump(path.as_ref())?;
        let want = [grid.nx(), grid.nv()];
        if shape != want {
            return Err(KinvError::Field(format!(
                "{}: dump shape {shape:?} does not match slice {want:?}",
                path.as_ref().display()
            )));
        }
        Self::new(grid, values)
    }

    /// CSV with header `x,v,value`, one row per node.
    pub fn to_csv(&self) -> String {
        let g = &self.grid;
        let mut s = String::from("x,v,value\n");
        for i in 0..g.nx() {
            for j in 0..g.nv() {
                s.push_str(&format!(
                    "{:?},{:?},{:?}\n",
                    g.x_centers()[i],
                    g.v_nodes()[j],
                    self.get(i, j)
                ));
            }
        }
        s
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path.as_ref(), self.to_csv()).map_err(|e| KinvError::io(path, e))
    }
}

/// Inflow trace over `Γ₋ = γ₋ × [0, T]`, laid out `[time][ordinate]`.
#[derive(Debug, Clone, PartialEq)]
pub struct InflowTrace {
    pub levels: usize,
    pub nv: usize,
    pub values: Vec<f64>,
}

impl InflowTrace {
    pub fn get(&self, k: usize, j: usize) -> f64 {
        self.values[k * self.nv + j]
    }
    pub fn sup_norm(&self) -> f64 {
        sup(&self.values)
    }
}

/// Discrete `L∞`-scale norms of a space-time field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormReport {
    pub sup: f64,
    pub l2: f64,
    pub sup_dt: f64,
    pub sup_stream: f64,
    pub trace_sup: f64,
    pub h_inf: f64,
    pub w_inf_t: f64,
}

/// Writes a dump: ASCII header `TIVP1 d0 d1 ...\n`, then little-endian `f64`s.
pub fn write_dump(path: impl AsRef<Path>, shape: &[usize], values: &[f64]) -> Result<()> {
    let path = path.as_ref();
    debug_assert_eq!(shape.iter().product::<usize>(), values.len());
    let mut buf = Vec::with_capacity(32 + 8 * values.len());
    let dims: Vec<String> = shape.iter().map(|d| d.to_string()).collect();
    writeln!(buf, "{MAGIC} {}", dims.join(" ")).expect("write to Vec");
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, buf).map_err(|e| KinvError::io(path, e))
}

/// Reads a dump written by [`write_dump`], returning its shape and values.
pub fn read_dump(path: &Path) -> Result<(Vec<usize>, Vec<f64>)> {
    let bytes = fs::read(path).map_err(|e| KinvError::io(path, e))?;
    let bad = |msg: &str| KinvError::Field(format!("{}: {msg}", path.display()));
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| bad("missing header line"))?;
    let header = std::str::from_utf8(&bytes[..nl]).map_err(|_| bad("header is not UTF-8"))?;
    let mut parts = header.split_ascii_whitespace();
    if parts.next() != Some(MAGIC) {
        return Err(bad("bad magic"));
    }
    let shape = parts
        .map(|p| p.parse::<usize>().map_err(|_| bad("bad dimension in header")))
        .collect::<Result<Vec<_>>>()?;
    if shape.is_empty() {
        return Err(bad("header has no dimensions"));
    }
    let n: usize = shape.iter().product();
    let body = &bytes[nl + 1..];
    if body.len() != 8 * n {
        return Err(bad(&format!(
            "expected {} payload bytes, found {}",
            8 * n,
            body.len()
        )));
    }
    let values = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    Ok((shape, values))
}
