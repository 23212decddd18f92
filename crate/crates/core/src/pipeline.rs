//! Warp and composition algebra plus the coarse-to-fine driver.
//!
//! Everything here treats a displacement field as a backward map: a
//! warped image takes its value at x from the input at x + d(x). The
//! driver runs predictors from the coarsest stage to the finest, each
//! one refining the accumulated field, and always re-warps the original
//! moving image rather than resampling a resampled image.

use std::path::PathBuf;
use std::process::Command;
use std::sync::atomic::{AtomicBool, Ordering};
use std::time::{Duration, Instant};

use crate::error::{Error, Result};
use crate::filter::{downscale, downscale_field, upscale_field};
use crate::grid::Grid;
use crate::io::mhd;
use crate::synth::Stage;
use crate::volume::{require_same_grid, DisplacementField, Volume};

/// Backward warp: out(x) = moving(x + d(x)), trilinear, clamped at the
/// boundary. The image and field must share a grid.
pub fn warp_volume(moving: &Volume, field: &DisplacementField) -> Result<Volume> {
    require_same_grid(moving.grid(), field.grid(), "warp image and field")?;
    if field.is_identity() {
        return Ok(moving.clone());
    }
    let g = *moving.grid();
    let mut out = Vec::with_capacity(g.len());
    for [x, y, z] in g.iter_voxels() {
        let p = g.voxel_to_world([x, y, z]);
        let d = field.vector_at(x, y, z);
        out.push(moving.sample_clamped([p[0] + d[0], p[1] + d[1], p[2] + d[2]]));
    }
    Volume::new(g, out)
}

/// Field composition: (first ∘ then second)(x) = first(x) + second(x + first(x)).
///
/// Warping by the result equals warping by `second` first and the
/// intermediate by `first`:
///   warp(I, compose(first, second)) == warp(warp(I, second), first)
/// up to one extra interpolation on the right-hand side.
pub fn compose(
    first: &DisplacementField,
    second: &DisplacementField,
) -> Result<DisplacementField> {
    require_same_grid(first.grid(), second.grid(), "composed fields")?;
    let g = *first.grid();
    if first.is_identity() {
        return Ok(second.clone());
    }
    DisplacementField::from_fn(g, |[x, y, z]| {
        let p = g.voxel_to_world([x, y, z]);
        let a = first.vector_at(x, y, z);
        let b = second.sample_clamped([p[0] + a[0], p[1] + a[1], p[2] + a[2]]);
        [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
    })
}

/// One registration stage: gets the fixed image and the current warped
/// moving image, both already at the stage's resolution, and returns the
/// incremental displacement on that same grid.
pub trait StagePredictor {
    fn name(&self) -> &str;
    fn predict(&self, fixed: &Volume, moving: &Volume) -> Result<DisplacementField>;
}

/// Predicts no motion. Useful as a do-nothing stage and in tests.
pub struct IdentityPredictor;

impl StagePredictor for IdentityPredictor {
    fn name(&self) -> &str {
        "identity"
    }
    fn predict(&self, fixed: &Volume, _moving: &Volume) -> Result<DisplacementField> {
        Ok(DisplacementField::zeros(*fixed.grid()))
    }
}

/// Exhaustive integer-millimeter translation search minimizing the sum of
/// absolute differences. A deliberately simple reference predictor; cost
/// grows with the cube of the window, so keep windows small.
pub struct TranslationPredictor {
    pub window_mm: f64,
}

impl StagePredictor for TranslationPredictor {
    fn name(&self) -> &str {
        "translation"
    }

    fn predict(&self, fixed: &Volume, moving: &Volume) -> Result<DisplacementField> {
        if !self.window_mm.is_finite() || self.window_mm < 0.0 {
            return Err(Error::Parameter(format!(
                "translation window must be a finite non-negative length, got {}",
                self.window_mm
            )));
        }
        require_same_grid(fixed.grid(), moving.grid(), "translation predictor inputs")?;
        let g = *fixed.grid();
        let w = self.window_mm.floor() as i64;
        let mut best = [0.0f64; 3];
        let mut best_cost = f64::INFINITY;
        for tz in -w..=w {
            for ty in -w..=w {
                for tx in -w..=w {
                    let t = [tx as f64, ty as f64, tz as f64];
                    let mut cost = 0.0;
                    for [x, y, z] in g.iter_voxels() {
                        let p = g.voxel_to_world([x, y, z]);
                        let m = moving.sample_clamped([p[0] + t[0], p[1] + t[1], p[2] + t[2]]);
                        cost += (fixed.at(x, y, z) - m).abs();
                    }
                    // Strict improvement keeps the first minimum in scan
                    // order, so ties resolve deterministically.
                    if cost < best_cost {
                        best_cost = cost;
                        best = t;
                    }
                }
            }
        }
        DisplacementField::from_fn(g, |_| best)
    }
}

/// Answers the first request with the reference field brought to the
/// requested resolution, and all later requests with zero. Lets tests
/// drive the full pipeline with a known answer.
pub struct OraclePredictor {
    truth: DisplacementField,
    used: AtomicBool,
}

impl OraclePredictor {
    pub fn new(truth: DisplacementField) -> Self {
        OraclePredictor {
            truth,
            used: AtomicBool::new(false),
        }
    }
}

impl StagePredictor for OraclePredictor {
    fn name(&self) -> &str {
        "oracle"
    }

    fn predict(&self, fixed: &Volume, _moving: &Volume) -> Result<DisplacementField> {
        if self.used.swap(true, Ordering::SeqCst) {
            return Ok(DisplacementField::zeros(*fixed.grid()));
        }
        let ratio = fixed.grid().spacing[0] / self.truth.grid().spacing[0];
        let factor = ratio.round();
        if !(factor >= 1.0 && (ratio - factor).abs() <= 1e-9) {
            return Err(Error::Contract(format!(
                "oracle holds a field at spacing {:?} but was asked for spacing {:?}",
                self.truth.grid().spacing,
                fixed.grid().spacing
            )));
        }
        if factor == 1.0 {
            Ok(self.truth.clone())
        } else {
            downscale_field(&self.truth, factor as usize)
        }
    }
}

/// Runs an external program as a stage predictor:
///   <exe> <fixed.mhd> <moving.mhd> <out_field.mhd>
/// in a temporary directory. A nonzero exit or an unreadable output file
/// is a contract violation.
pub struct ExecPredictor {
    pub exe: PathBuf,
}

impl StagePredictor for ExecPredictor {
    fn name(&self) -> &str {
        "exec"
    }

    fn predict(&self, fixed: &Volume, moving: &Volume) -> Result<DisplacementField> {
        let dir = tempfile::tempdir()?;
        let fixed_path = dir.path().join("fixed.mhd");
        let moving_path = dir.path().join("moving.mhd");
        let out_path = dir.path().join("out_field.mhd");
        mhd::write_volume(&fixed_path, fixed)?;
        mhd::write_volume(&moving_path, moving)?;
        let output = Command::new(&self.exe)
            .arg(&fixed_path)
            .arg(&moving_path)
            .arg(&out_path)
            .output()?;
        if !output.status.success() {
            let stderr: String = String::from_utf8_lossy(&output.stderr)
                .trim()
                .chars()
                .take(400)
                .collect();
            let detail = if stderr.is_empty() {
                String::new()
            } else {
                format!(": {stderr}")
            };
            return Err(Error::Contract(format!(
                "predictor process {} failed ({}){detail}",
                self.exe.display(),
                output.status
            )));
        }
        mhd::read_field(&out_path)
    }
}

/// Largest per-axis displacement each stage is trained for, mm.
pub fn stage_theta(stage: Stage) -> f64 {
    match stage {
        Stage::S1 => 7.0,
        Stage::S2 => 15.0,
        Stage::S4 => 20.0,
    }
}

/// A stage residual larger than this is outside the magnitudes the stage
/// was built to see (the diagonal of a theta-sized cube), so the driver
/// flags it rather than failing.
pub fn capture_limit_mm(stage: Stage) -> f64 {
    2.0 * 3f64.sqrt() * stage_theta(stage)
}

#[derive(Debug, Clone)]
pub struct StageReport {
    pub factor: usize,
    pub predictor: String,
    pub max_residual_mm: f64,
    pub elapsed: Duration,
}

#[derive(Debug)]
pub struct PipelineResult {
    /// Accumulated displacement on the full-resolution grid.
    pub total: DisplacementField,
    /// Each stage's incremental field, upsampled to full resolution.
    /// Folding them in order with [`compose`] reproduces `total`.
    pub per_stage: Vec<DisplacementField>,
    /// The moving image warped by `total`.
    pub warped_moving: Volume,
    pub reports: Vec<StageReport>,
    pub warnings: Vec<String>,
}

fn stage_grid(full: &Grid, factor: usize) -> Result<Grid> {
    if factor == 1 {
        return Ok(*full);
    }
    Grid::new(
        [
            full.dims[0].div_ceil(factor),
            full.dims[1].div_ceil(factor),
            full.dims[2].div_ceil(factor),
        ],
        [
            full.spacing[0] * factor as f64,
            full.spacing[1] * factor as f64,
            full.spacing[2] * factor as f64,
        ],
        full.origin,
    )
}

/// Coarse-to-fine registration. `stages` pairs each resolution with its
/// predictor and must be ordered from coarse to fine (strictly
/// decreasing factors); any subset of {4, 2, 1} works.
pub fn run_pipeline(
    fixed: &Volume,
    moving: &Volume,
    stages: &[(Stage, &dyn StagePredictor)],
) -> Result<PipelineResult> {
    require_same_grid(fixed.grid(), moving.grid(), "fixed and moving images")?;
    if stages.is_empty() {
        return Err(Error::Parameter("at least one stage is required".to_string()));
    }
    for pair in stages.windows(2) {
        if pair[1].0.factor() >= pair[0].0.factor() {
            return Err(Error::Parameter(format!(
                "stages must go coarse to fine, got factor {} before {}",
                pair[0].0.factor(),
                pair[1].0.factor()
            )));
        }
    }

    let full = *fixed.grid();
    let mut total = DisplacementField::zeros(full);
    let mut warped = moving.clone();
    let mut per_stage = Vec::with_capacity(stages.len());
    let mut reports = Vec::with_capacity(stages.len());
    let mut warnings = Vec::new();

    for (stage, predictor) in stages {
        let t0 = Instant::now();
        let factor = stage.factor();
        let expected = stage_grid(&full, factor)?;

        let residual = if factor == 1 {
            predictor.predict(fixed, &warped)?
        } else {
            let fixed_s = downscale(fixed, factor)?;
            let warped_s = downscale(&warped, factor)?;
            predictor.predict(&fixed_s, &warped_s)?
        };
        if *residual.grid() != expected {
            return Err(Error::Contract(format!(
                "stage {factor} predictor '{}' returned a field on {:?} spacing {:?}, expected {:?} spacing {:?}",
                predictor.name(),
                residual.grid().dims,
                residual.grid().spacing,
                expected.dims,
                expected.spacing
            )));
        }

        let max_residual = residual.max_magnitude();
        let limit = capture_limit_mm(*stage);
        if max_residual > limit {
            warnings.push(format!(
                "stage {factor}: residual reaches {max_residual:.2} mm, beyond the {limit:.2} mm capture range"
            ));
        }

        let residual_full = if factor == 1 {
            residual
        } else {
            upscale_field(&residual, full)?
        };
        total = compose(&residual_full, &total)?;
        warped = warp_volume(moving, &total)?;
        per_stage.push(residual_full);
        reports.push(StageReport {
            factor,
            predictor: predictor.name().to_string(),
            max_residual_mm: max_residual,
            elapsed: t0.elapsed(),
        });
    }

    Ok(PipelineResult {
        total,
        per_stage,
        warped_moving: warped,
        reports,
        warnings,
    })
}
