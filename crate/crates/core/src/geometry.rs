//! Slab phase-space geometry: `G = (0, L)`, `V = [-v1, -v0] ∪ [v0, v1]`,
//! time horizon `[0, T]`.

use serde::{Deserialize, Serialize};

use crate::error::{KinvError, Result};

/// Physical extents of the phase-space cylinder.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    /// Slab length.
    #[serde(rename = "L")]
    pub length: f64,
    /// Minimum speed, strictly positive.
    pub v0: f64,
    /// Maximum speed.
    pub v1: f64,
    /// Final time.
    #[serde(rename = "T")]
    pub final_time: f64,
}

impl Geometry {
    pub fn new(length: f64, v0: f64, v1: f64, final_time: f64) -> Result<Self> {
        let g = Self {
            length,
            v0,
            v1,
            final_time,
        };
        g.check()?;
        Ok(g)
    }

    pub fn check(&self) -> Result<()> {
        let all_finite = [self.length, self.v0, self.v1, self.final_time]
            .iter()
            .all(|x| x.is_finite());
        if !all_finite {
            return Err(KinvError::Geometry("geometry values must be finite".into()));
        }
        if self.v0 <= 0.0 {
            return Err(KinvError::Geometry("v0 must be positive".into()));
        }
        if self.v1 < self.v0 {
            return Err(KinvError::Geometry("v1 must be at least v0".into()));
        }
        if self.length <= 0.0 {
            return Err(KinvError::Geometry("L must be positive".into()));
        }
        if self.final_time <= 0.0 {
            return Err(KinvError::Geometry("T must be positive".into()));
        }
        Ok(())
    }

    /// Longest time a particle can spend crossing the slab, `L / v0`.
    pub fn max_flight_time(&self) -> f64 {
        self.length / self.v0
    }

    /// True when every characteristic leaves the slab before `T`.
    pub fn flight_time_short(&self) -> bool {
        self.max_flight_time() < self.final_time
    }

    /// Lebesgue measure of the velocity set, `2 (v1 - v0)`.
    pub fn velocity_measure(&self) -> f64 {
        2.0 * (self.v1 - self.v0)
    }
}

/// One side of the slab.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    /// `x = 0`.
    Left,
    /// `x = L`.
    Right,
}

/// Inflow face for one velocity ordinate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InflowFace {
    pub side: Side,
    pub ordinate: usize,
}

/// Uniform cell-centred discretization of `G × V × [0, T]`.
///
/// Velocity ordinates are stored in increasing order: the first `Nv/2`
/// cover `[-v1, -v0]`, the rest cover `[v0, v1]`, each band with midpoint
/// nodes and equal weights.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseGrid {
    geometry: Geometry,
    nx: usize,
    nv: usize,
    nt: usize,
    x_centers: Vec<f64>,
    v_nodes: Vec<f64>,
    v_weights: Vec<f64>,
    dx: f64,
    dt: f64,
}

impl PhaseGrid {
    pub fn build(geometry: Geometry, nx: usize, nv: usize, nt: usize) -> Result<Self> {
        geometry.check()?;
        if nx < 2 {
            return Err(KinvError::Grid("Nx must be at least 2".into()));
        }
        if nv < 2 {
            return Err(KinvError::Grid("Nv must be at least 2".into()));
        }
        if nv % 2 != 0 {
            return Err(KinvError::Grid("Nv must be even".into()));
        }
        if nt < 1 {
            return Err(KinvError::Grid("Nt must be at least 1".into()));
        }

        let dx = geometry.length / nx as f64;
        let x_centers = (0..nx).map(|i| (i as f64 + 0.5) * dx).collect();

        let half = nv / 2;
        let w = (geometry.v1 - geometry.v0) / half as f64;
        let positive: Vec<f64> = (0..half)
            .map(|j| geometry.v0 + (j as f64 + 0.5) * w)
            .collect();
        let mut v_nodes: Vec<f64> = positive.iter().rev().map(|v| -v).collect();
        v_nodes.extend_from_slice(&positive);
        // Degenerate band v0 == v1: a single speed with zero measure would
        // kill every integral, so give each ordinate unit weight in that case.
        let weight = if w > 0.0 { w } else { 1.0 / half as f64 };
        let v_weights = vec![weight; nv];

        Ok(Self {
            geometry,
            nx,
            nv,
            nt,
            x_centers,
            v_nodes,
            v_weights,
            dx,
            dt: geometry.final_time / nt as f64,
        })
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }
    pub fn nx(&self) -> usize {
        self.nx
    }
    pub fn nv(&self) -> usize {
        self.nv
    }
    pub fn nt(&self) -> usize {
        self.nt
    }
    pub fn dx(&self) -> f64 {
        self.dx
    }
    pub fn dt(&self) -> f64 {
        self.dt
    }
    pub fn x_centers(&self) -> &[f64] {
        &self.x_centers
    }
    pub fn v_nodes(&self) -> &[f64] {
        &self.v_nodes
    }
    pub fn v_weights(&self) -> &[f64] {
        &self.v_weights
    }
    pub fn time(&self, k: usize) -> f64 {
        if k == self.nt {
            self.geometry.final_time
        } else {
            k as f64 * self.dt
        }
    }
    pub fn times(&self) -> Vec<f64> {
        (0..=self.nt).map(|k| self.time(k)).collect()
    }

    /// Trapezoidal weights over the `Nt + 1` time levels; they sum to `T`.
    pub fn time_weights(&self) -> Vec<f64> {
        let mut w = vec![self.dt; self.nt + 1];
        w[0] *= 0.5;
        w[self.nt] *= 0.5;
        w
    }

    pub fn flight_time_short(&self) -> bool {
        self.geometry.flight_time_short()
    }

    /// Number of points in one `G × V` slice.
    pub fn slice_len(&self) -> usize {
        self.nx * self.nv
    }

    pub fn boundary_coordinate(&self, side: Side) -> f64 {
        match side {
            Side::Left => 0.0,
            Side::Right => self.geometry.length,
        }
    }

    /// Side through which particles with the given ordinate enter the slab.
    pub fn inflow_side(&self, ordinate: usize) -> Side {
        if self.v_nodes[ordinate] > 0.0 {
            Side::Left
        } else {
            Side::Right
        }
    }

    /// Index of the cell adjacent to the inflow face of an ordinate.
    pub fn inflow_cell(&self, ordinate: usize) -> usize {
        match self.inflow_side(ordinate) {
            Side::Left => 0,
            Side::Right => self.nx - 1,
        }
    }

    /// The discrete `γ₋`: one face per ordinate.
    pub fn inflow_set(&self) -> Vec<InflowFace> {
        (0..self.nv)
            .map(|ordinate| InflowFace {
                side: self.inflow_side(ordinate),
                ordinate,
            })
            .collect()
    }

    /// Traces the characteristic through `x` backwards over `dt`.
    ///
    /// Returns the foot `x - v dt` and whether it lies outside `[0, L]`.
    pub fn characteristic_foot(&self, x: f64, v: f64, dt: f64) -> (f64, bool) {
        characteristic_foot(self.geometry.length, x, v, dt)
    }
}

/// Backward characteristic foot in a slab of length `length`.
pub fn characteristic_foot(length: f64, x: f64, v: f64, dt: f64) -> (f64, bool) {
    let foot = x - v * dt;
    (foot, !(0.0..=length).contains(&foot))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn unit() -> Geometry {
        Geometry::new(1.0, 1.0, 2.0, 2.0).unwrap()
    }

    #[test]
    fn small_grid_layout() {
        let grid = PhaseGrid::build(unit(), 4, 4, 4).unwrap();
        assert_eq!(grid.x_centers(), &[0.125, 0.375, 0.625, 0.875]);
        assert_eq!(grid.dt(), 0.5);
        assert!(grid.flight_time_short());
        assert_eq!(grid.v_nodes(), &[-1.75, -1.25, 1.25, 1.75]);
        let total: f64 = grid.v_weights().iter().sum();
        assert_abs_diff_eq!(total, 2.0, epsilon = 1e-15);
        assert!(grid.v_weights().iter().all(|&w| w > 0.0));
        assert_abs_diff_eq!(grid.time_weights().iter().sum::<f64>(), 2.0, epsilon = 1e-15);
    }

    #[test]
    fn rejects_bad_parameters() {
        let err = Geometry::new(1.0, 0.0, 2.0, 1.0).unwrap_err();
        assert!(err.to_string().contains("v0 must be positive"));
        assert!(PhaseGrid::build(unit(), 4, 3, 4).is_err());
        assert!(PhaseGrid::build(unit(), 1, 4, 4).is_err());
        assert!(PhaseGrid::build(unit(), 4, 4, 0).is_err());
        assert!(Geometry::new(1.0, 2.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn long_slab_flag() {
        let g = Geometry::new(10.0, 1.0, 2.0, 2.0).unwrap();
        let grid = PhaseGrid::build(g, 4, 4, 4).unwrap();
        assert!(!grid.flight_time_short());
    }

    #[test]
    fn inflow_faces() {
        let g = Geometry::new(1.0, 1.0, 2.0, 1.0).unwrap();
        let grid = PhaseGrid::build(g, 4, 2, 1).unwrap();
        assert_eq!(grid.v_nodes(), &[-1.5, 1.5]);
        let set = grid.inflow_set();
        assert_eq!(set.len(), 2);
        assert_eq!(set[0].side, Side::Right);
        assert_eq!(set[1].side, Side::Left);

        let grid = PhaseGrid::build(g, 4, 4, 1).unwrap();
        let set = grid.inflow_set();
        assert_eq!(set.len(), 4);
        for (j, face) in set.iter().enumerate() {
            assert_eq!(face.ordinate, j);
        }
    }

    #[test]
    fn feet() {
        let grid = PhaseGrid::build(unit(), 4, 4, 4).unwrap();
        assert_eq!(grid.characteristic_foot(0.5, 1.0, 0.25), (0.25, false));
        let (foot, left) = grid.characteristic_foot(0.1, 1.0, 0.25);
        assert_abs_diff_eq!(foot, -0.15, epsilon = 1e-15);
        assert!(left);
        let (foot, _) = grid.characteristic_foot(0.5, grid.geometry().v0, 0.25);
        assert_abs_diff_eq!(0.5 - foot, 0.25, epsilon = 1e-15);
    }

    #[test]
    fn every_characteristic_exits_within_flight_time() {
        let grid = PhaseGrid::build(unit(), 8, 6, 4).unwrap();
        let l = grid.geometry().length;
        let steps = 16;
        let total = 1.01 * grid.geometry().max_flight_time();
        for &v in grid.v_nodes() {
            for &x0 in &[0.0, 0.3, 0.7, l] {
                let mut x = x0;
                let mut left = false;
                for _ in 0..steps {
                    let (foot, out) = grid.characteristic_foot(x, v, total / steps as f64);
                    x = foot;
                    left |= out;
                }
                assert!(left, "v={v} x0={x0}");
            }
        }
    }
}
