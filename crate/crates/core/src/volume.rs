//! Scalar volumes, displacement fields and trilinear sampling.

use crate::error::{shape, Error, Result};
use crate::grid::Grid;

/// Scalar 3D image: intensities, Jacobian maps or binary masks.
///
/// Data is finite everywhere; constructors enforce this so downstream
/// kernels never have to re-check.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    grid: Grid,
    data: Vec<f64>,
}

impl Volume {
    pub fn new(grid: Grid, data: Vec<f64>) -> Result<Self> {
        grid.validate()?;
        if data.len() != grid.len() {
            return Err(Error::Invariant(format!(
                "volume data length {} does not match dims {:?} ({} voxels)",
                data.len(),
                grid.dims,
                grid.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Invariant(format!(
                "volume contains non-finite value {} at linear index {pos}",
                data[pos]
            )));
        }
        Ok(Volume { grid, data })
    }

    pub fn zeros(grid: Grid) -> Self {
        Volume { data: vec![0.0; grid.len()], grid }
    }

    pub fn constant(grid: Grid, value: f64) -> Result<Self> {
        Self::new(grid, vec![value; grid.len()])
    }

    /// Build a volume by evaluating `f` at every voxel index, in storage order.
    pub fn from_fn(grid: Grid, mut f: impl FnMut([usize; 3]) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(grid.len());
        for v in grid.iter_voxels() {
            data.push(f(v));
        }
        Self::new(grid, data)
    }

    #[inline]
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize, z: usize) -> f64 {
        self.data[self.grid.index(x, y, z)]
    }

    /// Trilinear interpolation at a world point (mm). Out-of-bounds points
    /// clamp to the boundary voxel layer, so the operation is total for any
    /// finite point; non-finite coordinates are an input error.
    pub fn trilinear_sample(&self, p: [f64; 3]) -> Result<f64> {
        if p.iter().any(|c| !c.is_finite()) {
            return Err(Error::Input(format!("sample point must be finite, got {p:?}")));
        }
        Ok(self.sample_clamped(p))
    }

    /// Same as [`Volume::trilinear_sample`] but assumes `p` finite;
    /// used by warp/compose loops where finiteness holds by construction.
    #[inline]
    pub(crate) fn sample_clamped(&self, p: [f64; 3]) -> f64 {
        let c = self.grid.world_to_voxel(p);
        let (ix, tx) = clamp_axis(c[0], self.grid.dims[0]);
        let (iy, ty) = clamp_axis(c[1], self.grid.dims[1]);
        let (iz, tz) = clamp_axis(c[2], self.grid.dims[2]);
        let [nx, ny, _] = self.grid.dims;
        let jx = (ix + 1).min(self.grid.dims[0] - 1);
        let jy = (iy + 1).min(self.grid.dims[1] - 1);
        let jz = (iz + 1).min(self.grid.dims[2] - 1);

        let plane = nx * ny;
        let base0 = iz * plane;
        let base1 = jz * plane;
        let d = &self.data;
        let f = |x: usize, y: usize, base: usize| d[base + y * nx + x];

        let c000 = f(ix, iy, base0);
        let c100 = f(jx, iy, base0);
        let c010 = f(ix, jy, base0);
        let c110 = f(jx, jy, base0);
        let c001 = f(ix, iy, base1);
        let c101 = f(jx, iy, base1);
        let c011 = f(ix, jy, base1);
        let c111 = f(jx, jy, base1);

        let c00 = (1.0 - tx) * c000 + tx * c100;
        let c10 = (1.0 - tx) * c010 + tx * c110;
        let c01 = (1.0 - tx) * c001 + tx * c101;
        let c11 = (1.0 - tx) * c011 + tx * c111;
        let c0 = (1.0 - ty) * c00 + ty * c10;
        let c1 = (1.0 - ty) * c01 + ty * c11;
        (1.0 - tz) * c0 + tz * c1
    }

    /// Sum of all voxel values, fixed (storage) summation order.
    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn min_max(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &v in &self.data {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        (lo, hi)
    }
}

/// Clamp a continuous voxel coordinate to `[0, n-1]` and split into a base
/// index plus fractional offset. `frac == 0` at grid nodes, which keeps
/// grid-aligned sampling bit-exact.
#[inline]
fn clamp_axis(c: f64, n: usize) -> (usize, f64) {
    let max = (n - 1) as f64;
    let c = c.clamp(0.0, max);
    let i = (c.floor() as usize).min(n - 1);
    (i, c - i as f64)
}

/// Per-voxel 3D displacement in millimeters, world-axis aligned.
///
/// Components are stored as three separate scalar planes in the same
/// x-fastest order as [`Volume`].
#[derive(Debug, Clone, PartialEq)]
pub struct DisplacementField {
    grid: Grid,
    comps: [Vec<f64>; 3],
}

impl DisplacementField {
    pub fn new(grid: Grid, comps: [Vec<f64>; 3]) -> Result<Self> {
        grid.validate()?;
        for (axis, comp) in comps.iter().enumerate() {
            if comp.len() != grid.len() {
                return Err(Error::Invariant(format!(
                    "field component {axis} has length {} for dims {:?} ({} voxels)",
                    comp.len(),
                    grid.dims,
                    grid.len()
                )));
            }
            if let Some(pos) = comp.iter().position(|v| !v.is_finite()) {
                return Err(Error::Invariant(format!(
                    "field component {axis} contains non-finite value at linear index {pos}"
                )));
            }
        }
        Ok(DisplacementField { grid, comps })
    }

    /// The identity transform: every component exactly 0.0.
    pub fn zeros(grid: Grid) -> Self {
        let n = grid.len();
        DisplacementField { grid, comps: [vec![0.0; n], vec![0.0; n], vec![0.0; n]] }
    }

    pub fn from_fn(grid: Grid, mut f: impl FnMut([usize; 3]) -> [f64; 3]) -> Result<Self> {
        let n = grid.len();
        let mut comps = [Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n)];
        for v in grid.iter_voxels() {
            let d = f(v);
            comps[0].push(d[0]);
            comps[1].push(d[1]);
            comps[2].push(d[2]);
        }
        Self::new(grid, comps)
    }

    #[inline]
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    #[inline]
    pub fn component(&self, axis: usize) -> &[f64] {
        &self.comps[axis]
    }

    pub(crate) fn component_mut(&mut self, axis: usize) -> &mut Vec<f64> {
        &mut self.comps[axis]
    }

    pub fn into_components(self) -> [Vec<f64>; 3] {
        self.comps
    }

    #[inline]
    pub fn vector_at(&self, x: usize, y: usize, z: usize) -> [f64; 3] {
        let i = self.grid.index(x, y, z);
        [self.comps[0][i], self.comps[1][i], self.comps[2][i]]
    }

    /// True when every component is exactly zero.
    pub fn is_identity(&self) -> bool {
        self.comps.iter().all(|c| c.iter().all(|&v| v == 0.0))
    }

    /// Trilinear sample of the displacement vector at a world point (mm).
    pub fn sample(&self, p: [f64; 3]) -> Result<[f64; 3]> {
        if p.iter().any(|c| !c.is_finite()) {
            return Err(Error::Input(format!("sample point must be finite, got {p:?}")));
        }
        Ok(self.sample_clamped(p))
    }

    #[inline]
    pub(crate) fn sample_clamped(&self, p: [f64; 3]) -> [f64; 3] {
        // Cheap view: reuse the scalar sampler per component without cloning.
        let mut out = [0.0; 3];
        for axis in 0..3 {
            out[axis] = sample_plane(&self.grid, &self.comps[axis], p);
        }
        out
    }

    pub fn max_abs_component(&self, axis: usize) -> f64 {
        self.comps[axis].iter().fold(0.0_f64, |m, &v| m.max(v.abs()))
    }

    /// Largest Euclidean displacement magnitude over all voxels.
    pub fn max_magnitude(&self) -> f64 {
        let mut max2 = 0.0_f64;
        for i in 0..self.grid.len() {
            let m2 = self.comps[0][i] * self.comps[0][i]
                + self.comps[1][i] * self.comps[1][i]
                + self.comps[2][i] * self.comps[2][i];
            max2 = max2.max(m2);
        }
        max2.sqrt()
    }

    /// Extract one component as a scalar volume (shares the grid).
    pub fn component_volume(&self, axis: usize) -> Volume {
        Volume { grid: self.grid, data: self.comps[axis].clone() }
    }

    /// Rebuild a field from per-component volumes on one shared grid.
    pub fn from_component_volumes(vx: Volume, vy: Volume, vz: Volume) -> Result<Self> {
        if vx.grid != vy.grid || vx.grid != vz.grid {
            return Err(shape("field components must share one grid"));
        }
        let grid = vx.grid;
        Self::new(grid, [vx.into_data(), vy.into_data(), vz.into_data()])
    }
}

#[inline]
fn sample_plane(grid: &Grid, data: &[f64], p: [f64; 3]) -> f64 {
    let c = grid.world_to_voxel(p);
    let (ix, tx) = clamp_axis(c[0], grid.dims[0]);
    let (iy, ty) = clamp_axis(c[1], grid.dims[1]);
    let (iz, tz) = clamp_axis(c[2], grid.dims[2]);
    let jx = (ix + 1).min(grid.dims[0] - 1);
    let jy = (iy + 1).min(grid.dims[1] - 1);
    let jz = (iz + 1).min(grid.dims[2] - 1);
    let [nx, ny, _] = grid.dims;
    let plane = nx * ny;
    let f = |x: usize, y: usize, z: usize| data[z * plane + y * nx + x];

    let c00 = (1.0 - tx) * f(ix, iy, iz) + tx * f(jx, iy, iz);
    let c10 = (1.0 - tx) * f(ix, jy, iz) + tx * f(jx, jy, iz);
    let c01 = (1.0 - tx) * f(ix, iy, jz) + tx * f(jx, iy, jz);
    let c11 = (1.0 - tx) * f(ix, jy, jz) + tx * f(jx, jy, jz);
    let c0 = (1.0 - ty) * c00 + ty * c10;
    let c1 = (1.0 - ty) * c01 + ty * c11;
    (1.0 - tz) * c0 + tz * c1
}

/// Grids must match exactly for voxelwise operations.
pub(crate) fn require_same_grid(a: &Grid, b: &Grid, what: &str) -> Result<()> {
    if a != b {
        return Err(shape(format!(
            "{what}: grids differ (dims {:?} vs {:?}, spacing {:?} vs {:?}, origin {:?} vs {:?})",
            a.dims, b.dims, a.spacing, b.spacing, a.origin, b.origin
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::CounterRng;

    fn ramp_volume() -> Volume {
        // v(x,y,z) = x in mm on an isotropic grid
        let g = Grid::isotropic([6, 5, 4]);
        Volume::from_fn(g, |[x, _, _]| x as f64).unwrap()
    }

    #[test]
    fn constant_volume_samples_constant() {
        let g = Grid::isotropic([4, 4, 4]);
        let v = Volume::constant(g, 7.25).unwrap();
        for p in [[0.0, 0.0, 0.0], [1.5, 2.5, 0.5], [3.0, 3.0, 3.0], [-10.0, 50.0, 1.0]] {
            assert_eq!(v.trilinear_sample(p).unwrap(), 7.25);
        }
    }

    #[test]
    fn linear_ramp_is_exact() {
        let v = ramp_volume();
        assert_eq!(v.trilinear_sample([2.5, 0.0, 0.0]).unwrap(), 2.5);
        assert_eq!(v.trilinear_sample([4.75, 3.0, 2.0]).unwrap(), 4.75);
    }

    #[test]
    fn sampling_at_grid_nodes_is_identity() {
        let g = Grid::isotropic([2, 2, 2]);
        let v = Volume::from_fn(g, |[x, y, z]| (x + 2 * y + 4 * z) as f64).unwrap();
        for vx in g.iter_voxels() {
            let p = g.voxel_to_world(vx);
            assert_eq!(v.trilinear_sample(p).unwrap(), v.at(vx[0], vx[1], vx[2]));
        }
    }

    #[test]
    fn out_of_bounds_clamps_to_boundary() {
        let v = ramp_volume();
        assert_eq!(v.trilinear_sample([-3.0, 2.0, 1.0]).unwrap(), 0.0);
        assert_eq!(v.trilinear_sample([100.0, 2.0, 1.0]).unwrap(), 5.0);
    }

    #[test]
    fn non_finite_point_is_input_error() {
        let v = ramp_volume();
        let err = v.trilinear_sample([f64::NAN, 0.0, 0.0]).unwrap_err();
        assert_eq!(err.code(), "E_INPUT");
    }

    #[test]
    fn affine_functions_interpolate_exactly() {
        // Trilinear reproduces a + b*x + c*y + d*z at random in-bounds points.
        let g = Grid::new([9, 8, 7], [1.0; 3], [2.0, -1.0, 0.0]).unwrap();
        let (a, b, c, d) = (0.7, 1.3, -2.1, 0.55);
        let v = Volume::from_fn(g, |ix| {
            let w = g.voxel_to_world(ix);
            a + b * w[0] + c * w[1] + d * w[2]
        })
        .unwrap();
        let mut rng = CounterRng::new(42);
        for _ in 0..1000 {
            let p = [
                g.origin[0] + rng.uniform() * g.extent(0),
                g.origin[1] + rng.uniform() * g.extent(1),
                g.origin[2] + rng.uniform() * g.extent(2),
            ];
            let want = a + b * p[0] + c * p[1] + d * p[2];
            let got = v.trilinear_sample(p).unwrap();
            assert!((got - want).abs() <= 1e-9 * want.abs().max(1.0));
        }
    }

    #[test]
    fn rejects_non_finite_data() {
        let g = Grid::isotropic([2, 2, 2]);
        let mut data = vec![0.0; 8];
        data[3] = f64::NAN;
        assert!(Volume::new(g, data).is_err());
    }

    #[test]
    fn field_identity_and_length_checks() {
        let g = Grid::isotropic([3, 3, 3]);
        let f = DisplacementField::zeros(g);
        assert!(f.is_identity());
        let bad = DisplacementField::new(g, [vec![0.0; 27], vec![0.0; 26], vec![0.0; 27]]);
        assert!(bad.is_err());
    }

    #[test]
    fn field_sampling_matches_componentwise_volume_sampling() {
        let g = Grid::isotropic([5, 5, 5]);
        let f = DisplacementField::from_fn(g, |[x, y, z]| {
            [x as f64 * 0.5, y as f64 - z as f64, (x + y + z) as f64 * 0.25]
        })
        .unwrap();
        let p = [1.25, 3.5, 2.75];
        let v = f.sample(p).unwrap();
        for axis in 0..3 {
            let comp = f.component_volume(axis);
            assert_eq!(v[axis], comp.trilinear_sample(p).unwrap());
        }
    }
}
