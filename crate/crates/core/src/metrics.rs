//! Training losses with analytic gradients, and evaluation measures.
//!
//! Losses reduce by mean so values are comparable across grid sizes.
//! Gradients are exact for the discretizations used here: the bending
//! energy backpropagates through the difference stencils via their
//! adjoints, not through a finite-difference approximation.

use serde::{Deserialize, Serialize};

use crate::error::{parameter, Error, Result};
use crate::filter::{derivative_raw, derivative_raw_adjoint};
use crate::intensity::jacobian_determinant;
use crate::volume::{require_same_grid, DisplacementField, Volume};

/// Residual threshold between the quadratic and absolute branches.
/// The piecewise form r^2 / |r| is only continuous at 1.
pub const HUBER_DELTA: f64 = 1.0;

/// Loss weights. `huber_delta` is carried for visibility but must stay 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossParams {
    /// Bending-energy weight.
    pub gamma: f64,
    pub huber_delta: f64,
}

impl Default for LossParams {
    fn default() -> Self {
        LossParams { gamma: 0.05, huber_delta: HUBER_DELTA }
    }
}

impl LossParams {
    pub fn new(gamma: f64) -> Self {
        LossParams { gamma, huber_delta: HUBER_DELTA }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.gamma.is_finite() || self.gamma < 0.0 {
            return Err(parameter(format!("gamma must be finite and >= 0, got {}", self.gamma)));
        }
        if self.huber_delta != HUBER_DELTA {
            return Err(parameter(format!(
                "huber_delta is fixed at {HUBER_DELTA}, got {}",
                self.huber_delta
            )));
        }
        Ok(())
    }
}

/// Piecewise residual penalty: r^2 where |r| <= 1, |r| beyond, averaged
/// over all 3N components. The gradient is taken with respect to `pred`.
pub fn huber(
    truth: &DisplacementField,
    pred: &DisplacementField,
) -> Result<(f64, DisplacementField)> {
    require_same_grid(truth.grid(), pred.grid(), "huber")?;
    let g = *truth.grid();
    let n3 = (3 * g.len()) as f64;
    let mut sum = 0.0;
    let mut grad_comps = [
        vec![0.0; g.len()],
        vec![0.0; g.len()],
        vec![0.0; g.len()],
    ];
    for c in 0..3 {
        let t = truth.component(c);
        let p = pred.component(c);
        let gc = &mut grad_comps[c];
        for i in 0..g.len() {
            let r = t[i] - p[i];
            if r.abs() <= HUBER_DELTA {
                sum += r * r;
                gc[i] = -2.0 * r / n3;
            } else {
                sum += r.abs();
                gc[i] = -r.signum() / n3;
            }
        }
    }
    Ok((sum / n3, DisplacementField::new(g, grad_comps)?))
}

/// The six second-derivative terms of the smoothness functional:
/// (axis a, axis b, weight). Cross terms appear twice in the expansion.
const BE_TERMS: [(usize, usize, f64); 6] = [
    (0, 0, 1.0),
    (1, 1, 1.0),
    (2, 2, 1.0),
    (0, 1, 2.0),
    (0, 2, 2.0),
    (1, 2, 2.0),
];

fn check_be_dims(f: &DisplacementField) -> Result<()> {
    let dims = f.grid().dims;
    if dims.iter().any(|&n| n < 3) {
        return Err(parameter(format!(
            "bending energy needs at least 3 voxels per axis, got {dims:?}"
        )));
    }
    Ok(())
}

/// Smoothness penalty: mean over voxels and components of the weighted
/// squared second derivatives, with its exact gradient.
pub fn bending_energy(f: &DisplacementField) -> Result<(f64, DisplacementField)> {
    check_be_dims(f)?;
    let g = *f.grid();
    let dims = g.dims;
    let h = g.spacing;
    let n = g.len();
    let n3 = (3 * n) as f64;
    let mut sum = 0.0;
    let mut grad_comps = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    for c in 0..3 {
        let u = f.component(c);
        for &(a, b, w) in &BE_TERMS {
            let da = derivative_raw(dims, u, a, h[a]);
            let dab = derivative_raw(dims, &da, b, h[b]);
            for &v in &dab {
                sum += w * v * v;
            }
            // d/du of w*|D_b D_a u|^2 is 2w * D_a' D_b' (D_b D_a u).
            let g1 = derivative_raw_adjoint(dims, &dab, b, h[b]);
            let g2 = derivative_raw_adjoint(dims, &g1, a, h[a]);
            let scale = 2.0 * w / n3;
            for (out, &v) in grad_comps[c].iter_mut().zip(&g2) {
                *out += scale * v;
            }
        }
    }
    Ok((sum / n3, DisplacementField::new(g, grad_comps)?))
}

/// Per-voxel bending-energy integrand summed over components; the mean
/// of this volume equals the bending-energy value times 3.
pub fn bending_integrand(f: &DisplacementField) -> Result<Volume> {
    check_be_dims(f)?;
    let g = *f.grid();
    let mut acc = vec![0.0; g.len()];
    for c in 0..3 {
        let u = f.component(c);
        for &(a, b, w) in &BE_TERMS {
            let da = derivative_raw(g.dims, u, a, g.spacing[a]);
            let dab = derivative_raw(g.dims, &da, b, g.spacing[b]);
            for (out, &v) in acc.iter_mut().zip(&dab) {
                *out += w * v * v;
            }
        }
    }
    Volume::new(g, acc)
}

/// huber + gamma * bending_energy, gradients summed.
pub fn total_loss(
    truth: &DisplacementField,
    pred: &DisplacementField,
    p: &LossParams,
) -> Result<(f64, DisplacementField)> {
    p.validate()?;
    let (hv, hg) = huber(truth, pred)?;
    let (bv, bg) = bending_energy(pred)?;
    let g = *truth.grid();
    let mut comps = hg.into_components();
    for c in 0..3 {
        for (out, &v) in comps[c].iter_mut().zip(bg.component(c)) {
            *out += p.gamma * v;
        }
    }
    Ok((hv + p.gamma * bv, DisplacementField::new(g, comps)?))
}

/// Paired landmark coordinates in world mm, fixed image first.
#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkSet {
    pairs: Vec<([f64; 3], [f64; 3])>,
}

impl LandmarkSet {
    pub fn new(pairs: Vec<([f64; 3], [f64; 3])>) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::EmptySet("landmark set is empty".to_string()));
        }
        for (i, (xf, xm)) in pairs.iter().enumerate() {
            if xf.iter().chain(xm.iter()).any(|v| !v.is_finite()) {
                return Err(Error::Input(format!(
                    "landmark {i} has non-finite coordinates: fixed {xf:?}, moving {xm:?}"
                )));
            }
        }
        Ok(LandmarkSet { pairs })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn pairs(&self) -> &[([f64; 3], [f64; 3])] {
        &self.pairs
    }
}

/// Registration error per landmark and in aggregate. `distances` holds
/// (input index, error in mm) for landmarks inside the field extent;
/// `excluded` lists the indices of landmarks that fell outside.
#[derive(Debug, Clone)]
pub struct TreReport {
    pub distances: Vec<(usize, f64)>,
    pub excluded: Vec<usize>,
    pub mean: f64,
    pub std: f64,
}

/// Target registration error: || x_F + T'(x_F) - x_M || per landmark,
/// with the predicted field sampled trilinearly at x_F. Landmarks whose
/// fixed-side point is outside the field extent are excluded and
/// reported.
pub fn tre(lm: &LandmarkSet, pred: &DisplacementField) -> Result<TreReport> {
    let g = pred.grid();
    let mut distances = Vec::with_capacity(lm.len());
    let mut excluded = Vec::new();
    for (i, &(xf, xm)) in lm.pairs().iter().enumerate() {
        if !g.contains_world(xf) {
            excluded.push(i);
            continue;
        }
        let d = pred.sample(xf)?;
        let mut dist2 = 0.0;
        for a in 0..3 {
            let e = xf[a] + d[a] - xm[a];
            dist2 += e * e;
        }
        distances.push((i, dist2.sqrt()));
    }
    if distances.is_empty() {
        return Err(Error::EmptySet(format!(
            "no landmarks inside the field extent ({} excluded)",
            excluded.len()
        )));
    }
    let n = distances.len() as f64;
    let mean = distances.iter().map(|&(_, d)| d).sum::<f64>() / n;
    let var = distances.iter().map(|&(_, d)| (d - mean) * (d - mean)).sum::<f64>() / n;
    Ok(TreReport { distances, excluded, mean, std: var.sqrt() })
}

/// Folding percentage and Jacobian spread inside a mask.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JacobianStats {
    /// 100 * fraction of masked voxels with a negative Jacobian.
    pub percent_folding: f64,
    /// Population standard deviation of the Jacobian over masked voxels.
    pub std: f64,
}

pub fn jacobian_stats(pred: &DisplacementField, mask: &Volume) -> Result<JacobianStats> {
    require_same_grid(pred.grid(), mask.grid(), "jacobian_stats")?;
    for &v in mask.data() {
        if v != 0.0 && v != 1.0 {
            return Err(Error::Mask(format!("mask must be binary (0 or 1), found {v}")));
        }
    }
    let jac = jacobian_determinant(pred)?;
    let mut count = 0usize;
    let mut negative = 0usize;
    let mut sum = 0.0;
    for (&j, &m) in jac.data().iter().zip(mask.data()) {
        if m == 1.0 {
            count += 1;
            sum += j;
            if j < 0.0 {
                negative += 1;
            }
        }
    }
    if count == 0 {
        return Err(Error::Mask("mask is empty".to_string()));
    }
    let mean = sum / count as f64;
    let mut var = 0.0;
    for (&j, &m) in jac.data().iter().zip(mask.data()) {
        if m == 1.0 {
            var += (j - mean) * (j - mean);
        }
    }
    Ok(JacobianStats {
        percent_folding: 100.0 * negative as f64 / count as f64,
        std: (var / count as f64).sqrt(),
    })
}
