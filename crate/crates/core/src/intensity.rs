//! Intensity post-processing for deformed images: volume-change
//! compensation (the dry sponge model) and additive Gaussian noise,
//! plus the Jacobian-determinant map both of them lean on.

use serde::{Deserialize, Serialize};

use crate::error::{parameter, Result};
use crate::filter::derivative_raw;
use crate::rng::CounterRng;
use crate::volume::{require_same_grid, DisplacementField, Volume};

/// Division guard for the sponge model. Jacobians at or below this are
/// treated as folds: the factor is clamped and the voxel counted.
pub const SPONGE_EPS: f64 = 1e-3;

/// Additive Gaussian intensity noise, deterministic per seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseParams {
    pub sigma_n: f64,
    pub seed: u64,
}

/// det(I + ∂d/∂x) per voxel, with derivatives by central differences
/// (one-sided at the faces). Values below 1 mean local compression of
/// the sampled content, values above 1 expansion; values ≤ 0 are folds.
pub fn jacobian_determinant(f: &DisplacementField) -> Result<Volume> {
    let g = *f.grid();
    for axis in 0..3 {
        if g.dims[axis] < 3 {
            return Err(parameter(format!(
                "jacobian needs at least 3 voxels per axis, got {:?}",
                g.dims
            )));
        }
    }
    // j[c][a] = d(component c) / d(axis a)
    let mut j: Vec<Vec<f64>> = Vec::with_capacity(9);
    for c in 0..3 {
        for a in 0..3 {
            j.push(derivative_raw(g.dims, f.component(c), a, g.spacing[a]));
        }
    }
    let n = g.len();
    let mut det = Vec::with_capacity(n);
    for i in 0..n {
        let a = 1.0 + j[0][i];
        let b = j[1][i];
        let c = j[2][i];
        let d = j[3][i];
        let e = 1.0 + j[4][i];
        let f_ = j[5][i];
        let gg = j[6][i];
        let h = j[7][i];
        let k = 1.0 + j[8][i];
        det.push(a * (e * k - f_ * h) - b * (d * k - f_ * gg) + c * (d * h - e * gg));
    }
    Volume::new(g, det)
}

/// Dry sponge model: out(x) = v(x) / jac(x). Where jac ≤ [`SPONGE_EPS`]
/// the factor is clamped to 1/SPONGE_EPS and the voxel is counted in the
/// returned fold count.
pub fn apply_sponge(v: &Volume, jac: &Volume) -> Result<(Volume, usize)> {
    require_same_grid(v.grid(), jac.grid(), "apply_sponge")?;
    let mut folds = 0usize;
    let mut out = Vec::with_capacity(v.data().len());
    for (&x, &j) in v.data().iter().zip(jac.data()) {
        if j <= SPONGE_EPS {
            folds += 1;
            out.push(x * (1.0 / SPONGE_EPS));
        } else {
            out.push(x / j);
        }
    }
    Ok((Volume::new(*v.grid(), out)?, folds))
}

/// Add i.i.d. zero-mean Gaussian noise with std sigma_n, voxel by voxel
/// in storage order. sigma_n = 0 returns the input unchanged.
pub fn add_noise(v: &Volume, p: &NoiseParams) -> Result<Volume> {
    if !p.sigma_n.is_finite() || p.sigma_n < 0.0 {
        return Err(parameter(format!("sigma_n must be finite and >= 0, got {}", p.sigma_n)));
    }
    if p.sigma_n == 0.0 {
        return Ok(v.clone());
    }
    let mut rng = CounterRng::new(p.seed);
    let out: Vec<f64> = v.data().iter().map(|&x| x + p.sigma_n * rng.normal()).collect();
    Volume::new(*v.grid(), out)
}
