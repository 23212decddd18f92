//! Cubic B-spline control grids and dense resampling.
//!
//! A `ControlGrid` is a coarse lattice of displacement vectors (mm) with
//! its own spacing and origin. Resampling evaluates the uniform cubic
//! B-spline tensor product at every target voxel. The four basis
//! polynomials sum to 1 for any offset, so a constant lattice produces a
//! constant field; that invariant drives the normalization downstream.

use crate::error::{parameter, Error, Result};
use crate::filter::smooth_raw;
use crate::grid::Grid;
use crate::volume::DisplacementField;

/// Control points added outside the target extent on each side.
/// Two layers make every in-extent point fully supported by the cubic
/// stencil, including the extent boundary.
pub const PAD: usize = 2;

/// Uniform cubic B-spline weights for fractional offset t in [0, 1).
#[inline]
pub fn cubic_weights(t: f64) -> [f64; 4] {
    let t2 = t * t;
    let t3 = t2 * t;
    let omt = 1.0 - t;
    [
        omt * omt * omt / 6.0,
        (3.0 * t3 - 6.0 * t2 + 4.0) / 6.0,
        (-3.0 * t3 + 3.0 * t2 + 3.0 * t + 1.0) / 6.0,
        t3 / 6.0,
    ]
}

/// Coarse lattice of displacement vectors driving a free-form deformation.
#[derive(Debug, Clone)]
pub struct ControlGrid {
    /// Control-point spacing s in mm per axis.
    pub spacing: [f64; 3],
    /// World position of control point (0,0,0).
    pub origin: [f64; 3],
    /// Lattice dims per axis.
    pub n: [usize; 3],
    coeffs: [Vec<f64>; 3],
}

impl ControlGrid {
    /// Zero lattice covering `target` at spacing `s`, padded by [`PAD`]
    /// layers so the whole target extent is fully supported.
    pub fn for_target(target: &Grid, s: [f64; 3]) -> Result<Self> {
        target.validate()?;
        for (axis, &si) in s.iter().enumerate() {
            if !si.is_finite() || si <= 0.0 {
                return Err(parameter(format!(
                    "control spacing on axis {axis} must be positive, got {si}"
                )));
            }
        }
        let mut n = [0usize; 3];
        let mut origin = [0.0; 3];
        for axis in 0..3 {
            let extent = target.extent(axis);
            let inner = (extent / s[axis]).ceil() as usize;
            n[axis] = 2 * PAD + inner + 1;
            origin[axis] = target.origin[axis] - PAD as f64 * s[axis];
        }
        let len = n[0] * n[1] * n[2];
        Ok(ControlGrid {
            spacing: s,
            origin,
            n,
            coeffs: [vec![0.0; len], vec![0.0; len], vec![0.0; len]],
        })
    }

    pub fn len(&self) -> usize {
        self.n[0] * self.n[1] * self.n[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        debug_assert!(i < self.n[0] && j < self.n[1] && k < self.n[2]);
        i + self.n[0] * (j + self.n[1] * k)
    }

    pub fn coeffs(&self, axis: usize) -> &[f64] {
        &self.coeffs[axis]
    }

    pub fn coeffs_mut(&mut self, axis: usize) -> &mut [f64] {
        &mut self.coeffs[axis]
    }

    /// Gaussian-smooth each coefficient lattice, σ in control-point units.
    pub fn smooth(&mut self, sigma_points: f64) -> Result<()> {
        for axis in 0..3 {
            self.coeffs[axis] = smooth_raw(self.n, &self.coeffs[axis], [sigma_points; 3])?;
        }
        Ok(())
    }

    /// Largest |coefficient| per component axis.
    pub fn max_abs(&self, axis: usize) -> f64 {
        self.coeffs[axis].iter().fold(0.0_f64, |m, &v| m.max(v.abs()))
    }

    /// Scale every coefficient of one component axis.
    pub fn scale_axis(&mut self, axis: usize, factor: f64) {
        for v in &mut self.coeffs[axis] {
            *v *= factor;
        }
    }

    /// Lattice coordinate of a world point: u = (p - origin) / s.
    #[inline]
    fn lattice_coord(&self, p: [f64; 3]) -> [f64; 3] {
        [
            (p[0] - self.origin[0]) / self.spacing[0],
            (p[1] - self.origin[1]) / self.spacing[1],
            (p[2] - self.origin[2]) / self.spacing[2],
        ]
    }

    /// The cubic stencil at lattice coordinate u spans control points
    /// floor(u)-1 ..= floor(u)+2; all must exist.
    fn check_coverage(&self, target: &Grid) -> Result<()> {
        for axis in 0..3 {
            let lo = (target.origin[axis] - self.origin[axis]) / self.spacing[axis];
            let hi = lo + target.extent(axis) / self.spacing[axis];
            let base_lo = lo.floor() as i64;
            let base_hi = hi.floor() as i64;
            if base_lo < 1 || base_hi + 2 > self.n[axis] as i64 - 1 {
                return Err(Error::Coverage(format!(
                    "control grid does not cover target on axis {axis}: \
                     lattice range [{lo:.3}, {hi:.3}] needs points {} ..= {}, have 0 ..= {}",
                    base_lo - 1,
                    base_hi + 2,
                    self.n[axis] - 1
                )));
            }
        }
        Ok(())
    }
}

/// Evaluate the control grid as a dense displacement field on `target`.
pub fn resample_control_grid(g: &ControlGrid, target: Grid) -> Result<DisplacementField> {
    target.validate()?;
    g.check_coverage(&target)?;
    let [nx, ny, _] = g.n;
    let plane = nx * ny;
    DisplacementField::from_fn(target, |v| {
        let p = target.voxel_to_world(v);
        let u = g.lattice_coord(p);
        let bx = u[0].floor();
        let by = u[1].floor();
        let bz = u[2].floor();
        let wx = cubic_weights(u[0] - bx);
        let wy = cubic_weights(u[1] - by);
        let wz = cubic_weights(u[2] - bz);
        let (bx, by, bz) = (bx as usize, by as usize, bz as usize);
        let mut out = [0.0; 3];
        for (c, wc) in wz.iter().enumerate() {
            let kz = (bz + c - 1) * plane;
            for (b, wb) in wy.iter().enumerate() {
                let base = kz + (by + b - 1) * nx + bx - 1;
                let w_cb = wc * wb;
                for (a, wa) in wx.iter().enumerate() {
                    let w = w_cb * wa;
                    let idx = base + a;
                    out[0] += w * g.coeffs[0][idx];
                    out[1] += w * g.coeffs[1][idx];
                    out[2] += w * g.coeffs[2][idx];
                }
            }
        }
        out
    })
}
