//! Sampling grid shared by volumes and displacement fields.
//!
//! Conventions used throughout the crate:
//! * voxel data is row-major with x fastest: `index = x + nx*(y + ny*z)`,
//! * world coordinates are millimeters, `world = origin + index * spacing`,
//! * grids are isotropic 1.0 mm by default.

use crate::error::{parameter, Result};
use serde::{Deserialize, Serialize};

pub const X: usize = 0;
pub const Y: usize = 1;
pub const Z: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub origin: [f64; 3],
}

impl Grid {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], origin: [f64; 3]) -> Result<Self> {
        let grid = Grid { dims, spacing, origin };
        grid.validate()?;
        Ok(grid)
    }

    /// Grid with 1.0 mm spacing and origin at zero.
    pub fn isotropic(dims: [usize; 3]) -> Self {
        Grid { dims, spacing: [1.0; 3], origin: [0.0; 3] }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.iter().any(|&n| n == 0) {
            return Err(parameter(format!("grid dims must be nonzero, got {:?}", self.dims)));
        }
        if self.spacing.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(parameter(format!(
                "grid spacing must be strictly positive, got {:?}",
                self.spacing
            )));
        }
        if self.origin.iter().any(|v| !v.is_finite()) {
            return Err(parameter(format!("grid origin must be finite, got {:?}", self.origin)));
        }
        Ok(())
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        debug_assert!(x < self.dims[0] && y < self.dims[1] && z < self.dims[2]);
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    /// World position (mm) of a voxel center.
    #[inline]
    pub fn voxel_to_world(&self, v: [usize; 3]) -> [f64; 3] {
        [
            self.origin[0] + v[0] as f64 * self.spacing[0],
            self.origin[1] + v[1] as f64 * self.spacing[1],
            self.origin[2] + v[2] as f64 * self.spacing[2],
        ]
    }

    /// Continuous voxel coordinate of a world point (mm). May be out of bounds.
    #[inline]
    pub fn world_to_voxel(&self, p: [f64; 3]) -> [f64; 3] {
        [
            (p[0] - self.origin[0]) / self.spacing[0],
            (p[1] - self.origin[1]) / self.spacing[1],
            (p[2] - self.origin[2]) / self.spacing[2],
        ]
    }

    /// Physical extent along `axis`: distance between the first and last
    /// voxel centers, in mm.
    #[inline]
    pub fn extent(&self, axis: usize) -> f64 {
        (self.dims[axis] - 1) as f64 * self.spacing[axis]
    }

    /// True when a world point lies within the voxel-center bounding box.
    pub fn contains_world(&self, p: [f64; 3]) -> bool {
        (0..3).all(|a| {
            let lo = self.origin[a].min(self.origin[a] + self.extent(a));
            let hi = self.origin[a].max(self.origin[a] + self.extent(a));
            p[a] >= lo && p[a] <= hi
        })
    }

    /// Iterate voxel indices in storage order (x fastest).
    pub fn iter_voxels(&self) -> impl Iterator<Item = [usize; 3]> + '_ {
        let [nx, ny, nz] = self.dims;
        (0..nz).flat_map(move |z| (0..ny).flat_map(move |y| (0..nx).map(move |x| [x, y, z])))
    }
}
