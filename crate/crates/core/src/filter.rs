//! Separable filtering, pyramid rescaling and finite differences.
//!
//! All kernels run axis-by-axis over gathered scan lines with a fixed
//! summation order, so results are bit-deterministic for a fixed input.
//! Boundaries: edge replication for convolution, one-sided stencils for
//! derivatives. Everything stays NaN-free for finite inputs.

use crate::error::{parameter, Result};
use crate::grid::Grid;
use crate::volume::{DisplacementField, Volume};

/// 1D Gaussian taps at integer offsets -r..=r with r = ceil(3σ),
/// renormalized to sum exactly 1. σ = 0 yields the identity kernel.
pub fn gaussian_kernel(sigma: f64) -> Result<Vec<f64>> {
    if !sigma.is_finite() || sigma < 0.0 {
        return Err(parameter(format!("sigma must be finite and >= 0, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(vec![1.0]);
    }
    let r = (3.0 * sigma).ceil() as i64;
    let inv = 1.0 / (2.0 * sigma * sigma);
    let mut w: Vec<f64> = (-r..=r).map(|k| (-(k as f64) * (k as f64) * inv).exp()).collect();
    let sum: f64 = w.iter().sum();
    for v in &mut w {
        *v /= sum;
    }
    Ok(w)
}

/// Gather each scan line along `axis` into a scratch buffer, let `f`
/// rewrite it, and scatter it back. `f` sees lines in a fixed order.
fn process_lines(dims: [usize; 3], axis: usize, data: &mut [f64], mut f: impl FnMut(&mut [f64])) {
    let [nx, ny, nz] = dims;
    let n = dims[axis];
    let mut line = vec![0.0; n];
    let (stride, outer_a, outer_b, base_fn): (usize, usize, usize, fn(usize, usize, [usize; 3]) -> usize) =
        match axis {
            0 => (1, ny, nz, |a, b, d| (b * d[1] + a) * d[0]),
            1 => (nx, nx, nz, |a, b, d| b * d[0] * d[1] + a),
            _ => (nx * ny, nx, ny, |a, b, d| b * d[0] + a),
        };
    for b in 0..outer_b {
        for a in 0..outer_a {
            let base = base_fn(a, b, dims);
            for i in 0..n {
                line[i] = data[base + i * stride];
            }
            f(&mut line);
            for i in 0..n {
                data[base + i * stride] = line[i];
            }
        }
    }
}

/// In-place 1D convolution of one line with edge replication.
fn convolve_line(line: &mut [f64], kernel: &[f64], scratch: &mut Vec<f64>) {
    if kernel.len() == 1 && kernel[0] == 1.0 {
        return;
    }
    let n = line.len() as i64;
    let r = (kernel.len() / 2) as i64;
    scratch.clear();
    scratch.extend_from_slice(line);
    for i in 0..n {
        let mut acc = 0.0;
        for (k, &w) in kernel.iter().enumerate() {
            let j = (i + k as i64 - r).clamp(0, n - 1) as usize;
            acc += w * scratch[j];
        }
        line[i as usize] = acc;
    }
}

/// Separable Gaussian smoothing on raw x-fastest data, σ given in voxels
/// per axis. Axes are processed x then y then z.
pub(crate) fn smooth_raw(dims: [usize; 3], data: &[f64], sigma_voxels: [f64; 3]) -> Result<Vec<f64>> {
    let mut out = data.to_vec();
    let mut scratch = Vec::new();
    for axis in 0..3 {
        let kernel = gaussian_kernel(sigma_voxels[axis])?;
        if kernel.len() == 1 {
            continue;
        }
        process_lines(dims, axis, &mut out, |line| convolve_line(line, &kernel, &mut scratch));
    }
    Ok(out)
}

/// Gaussian smoothing with σ in millimeters per axis.
pub fn smooth_volume(v: &Volume, sigma_mm: [f64; 3]) -> Result<Volume> {
    let g = *v.grid();
    let sigma_voxels = [
        sigma_mm[0] / g.spacing[0],
        sigma_mm[1] / g.spacing[1],
        sigma_mm[2] / g.spacing[2],
    ];
    if sigma_mm == [0.0; 3] {
        return Ok(v.clone());
    }
    Volume::new(g, smooth_raw(g.dims, v.data(), sigma_voxels)?)
}

/// Componentwise Gaussian smoothing of a displacement field, σ in mm.
pub fn smooth_field(f: &DisplacementField, sigma_mm: [f64; 3]) -> Result<DisplacementField> {
    if sigma_mm == [0.0; 3] {
        return Ok(f.clone());
    }
    let g = *f.grid();
    let sigma_voxels = [
        sigma_mm[0] / g.spacing[0],
        sigma_mm[1] / g.spacing[1],
        sigma_mm[2] / g.spacing[2],
    ];
    let [cx, cy, cz] = f.clone().into_components();
    DisplacementField::new(
        g,
        [
            smooth_raw(g.dims, &cx, sigma_voxels)?,
            smooth_raw(g.dims, &cy, sigma_voxels)?,
            smooth_raw(g.dims, &cz, sigma_voxels)?,
        ],
    )
}

/// Anti-aliased decimation: Gaussian pre-smooth with σ = factor/2 voxels,
/// then keep every factor-th sample. Output spacing is scaled by the
/// factor, dims become ceil(n/factor), origin is unchanged (sample 0 is
/// kept, so its world position is fixed).
pub fn downscale(v: &Volume, factor: usize) -> Result<Volume> {
    if factor < 2 {
        return Err(parameter(format!("downscale factor must be >= 2, got {factor}")));
    }
    let g = *v.grid();
    let sigma = factor as f64 / 2.0;
    let smoothed = smooth_raw(g.dims, v.data(), [sigma; 3])?;
    let out_dims = [
        g.dims[0].div_ceil(factor),
        g.dims[1].div_ceil(factor),
        g.dims[2].div_ceil(factor),
    ];
    let out_grid = Grid::new(
        out_dims,
        [
            g.spacing[0] * factor as f64,
            g.spacing[1] * factor as f64,
            g.spacing[2] * factor as f64,
        ],
        g.origin,
    )?;
    let mut out = Vec::with_capacity(out_grid.len());
    for z in 0..out_dims[2] {
        for y in 0..out_dims[1] {
            for x in 0..out_dims[0] {
                out.push(smoothed[g.index(x * factor, y * factor, z * factor)]);
            }
        }
    }
    Volume::new(out_grid, out)
}

/// Downscale every component of a field. Values are in mm so they carry
/// over unchanged; only the sampling grid coarsens.
pub fn downscale_field(f: &DisplacementField, factor: usize) -> Result<DisplacementField> {
    let vx = downscale(&f.component_volume(0), factor)?;
    let vy = downscale(&f.component_volume(1), factor)?;
    let vz = downscale(&f.component_volume(2), factor)?;
    DisplacementField::from_component_volumes(vx, vy, vz)
}

/// Refine a coarse field onto `target` by trilinear interpolation of each
/// component at the target's voxel centers. Displacement values (mm) are
/// preserved. The source spacing must be 2 or 4 times the target spacing
/// on every axis.
pub fn upscale_field(f: &DisplacementField, target: Grid) -> Result<DisplacementField> {
    target.validate()?;
    let src = f.grid();
    for axis in 0..3 {
        let ratio = src.spacing[axis] / target.spacing[axis];
        let ok = (ratio - 2.0).abs() <= 1e-9 || (ratio - 4.0).abs() <= 1e-9;
        if !ok {
            return Err(parameter(format!(
                "upscale spacing ratio on axis {axis} is {ratio}; expected 2 or 4"
            )));
        }
    }
    let comps = [f.component_volume(0), f.component_volume(1), f.component_volume(2)];
    DisplacementField::from_fn(target, |v| {
        let p = target.voxel_to_world(v);
        [
            comps[0].sample_clamped(p),
            comps[1].sample_clamped(p),
            comps[2].sample_clamped(p),
        ]
    })
}

/// First derivative along `axis` on raw data: central differences on the
/// interior, one-sided at the two boundary layers, scaled by 1/h.
pub(crate) fn derivative_raw(dims: [usize; 3], data: &[f64], axis: usize, h: f64) -> Vec<f64> {
    let mut out = data.to_vec();
    let inv_h = 1.0 / h;
    let inv_2h = 0.5 / h;
    process_lines(dims, axis, &mut out, |line| {
        let n = line.len();
        let first = (line[1] - line[0]) * inv_h;
        let last = (line[n - 1] - line[n - 2]) * inv_h;
        let mut prev = line[0];
        for i in 1..n - 1 {
            let next = line[i + 1];
            let cur = (next - prev) * inv_2h;
            prev = line[i];
            line[i] = cur;
        }
        line[0] = first;
        line[n - 1] = last;
    });
    out
}

/// Adjoint (transpose) of [`derivative_raw`] as a linear operator; used to
/// backpropagate through repeated differences without forming matrices.
pub(crate) fn derivative_raw_adjoint(dims: [usize; 3], data: &[f64], axis: usize, h: f64) -> Vec<f64> {
    let mut out = data.to_vec();
    let inv_h = 1.0 / h;
    let inv_2h = 0.5 / h;
    process_lines(dims, axis, &mut out, |line| {
        let n = line.len();
        let mut acc = vec![0.0; n];
        // Row 0: (-1, +1)/h at columns (0, 1).
        acc[0] += -inv_h * line[0];
        acc[1] += inv_h * line[0];
        // Interior row i: (-1, +1)/(2h) at columns (i-1, i+1).
        for i in 1..n - 1 {
            acc[i - 1] += -inv_2h * line[i];
            acc[i + 1] += inv_2h * line[i];
        }
        // Row n-1: (-1, +1)/h at columns (n-2, n-1).
        acc[n - 2] += -inv_h * line[n - 1];
        acc[n - 1] += inv_h * line[n - 1];
        line.copy_from_slice(&acc);
    });
    out
}

/// Spatial derivative of a volume along one axis, in value per mm.
pub fn central_gradient(v: &Volume, axis: usize) -> Result<Volume> {
    let g = *v.grid();
    if axis > 2 {
        return Err(parameter(format!("axis must be 0, 1 or 2, got {axis}")));
    }
    if g.dims[axis] < 3 {
        return Err(parameter(format!(
            "central_gradient needs at least 3 samples along axis {axis}, got {}",
            g.dims[axis]
        )));
    }
    Volume::new(g, derivative_raw(g.dims, v.data(), axis, g.spacing[axis]))
}
