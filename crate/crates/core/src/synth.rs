//! Random ground-truth displacement field generation.
//!
//! Four categories: single frequency (smoothed random B-spline lattice,
//! normalized per axis), mixed frequency (single frequency gated by a
//! random binary mask, then re-smoothed), respiratory (in-plane expansion
//! plus diaphragm translation plus a single-frequency residual), and
//! identity. Each generator is a pure function of (spec, target, mask),
//! with a pinned draw order: control-lattice values, then the expansion
//! factor, then the translation magnitude, then mask noise. The smoothing
//! width for the mixed category is drawn right after the lattice values.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::bspline::{resample_control_grid, ControlGrid};
use crate::error::{parameter, Error, Result};
use crate::filter::{smooth_field, smooth_raw};
use crate::grid::Grid;
use crate::rng::CounterRng;
use crate::volume::{require_same_grid, DisplacementField, Volume};

/// Generator family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    SingleFrequency,
    MixedFrequency,
    Respiratory,
    Identity,
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Category::SingleFrequency => "single",
            Category::MixedFrequency => "mixed",
            Category::Respiratory => "respiratory",
            Category::Identity => "identity",
        };
        f.write_str(s)
    }
}

impl FromStr for Category {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single" => Ok(Category::SingleFrequency),
            "mixed" => Ok(Category::MixedFrequency),
            "respiratory" => Ok(Category::Respiratory),
            "identity" => Ok(Category::Identity),
            other => Err(parameter(format!(
                "unknown category '{other}' (expected single, mixed, respiratory or identity)"
            ))),
        }
    }
}

/// Spatial frequency class, ordered lowest to highest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrequencyClass {
    Lowest,
    Low,
    Intermediate,
    High,
    Highest,
}

impl FrequencyClass {
    pub const ALL: [FrequencyClass; 5] = [
        FrequencyClass::Lowest,
        FrequencyClass::Low,
        FrequencyClass::Intermediate,
        FrequencyClass::High,
        FrequencyClass::Highest,
    ];

    fn rank(self) -> usize {
        match self {
            FrequencyClass::Lowest => 0,
            FrequencyClass::Low => 1,
            FrequencyClass::Intermediate => 2,
            FrequencyClass::High => 3,
            FrequencyClass::Highest => 4,
        }
    }
}

impl fmt::Display for FrequencyClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            FrequencyClass::Lowest => "lowest",
            FrequencyClass::Low => "low",
            FrequencyClass::Intermediate => "intermediate",
            FrequencyClass::High => "high",
            FrequencyClass::Highest => "highest",
        };
        f.write_str(s)
    }
}

impl FromStr for FrequencyClass {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lowest" => Ok(FrequencyClass::Lowest),
            "low" => Ok(FrequencyClass::Low),
            "intermediate" => Ok(FrequencyClass::Intermediate),
            "high" => Ok(FrequencyClass::High),
            "highest" => Ok(FrequencyClass::Highest),
            other => Err(parameter(format!(
                "unknown frequency class '{other}' \
                 (expected lowest, low, intermediate, high or highest)"
            ))),
        }
    }
}

/// Resolution stage, named by its downscale factor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Stage {
    #[serde(rename = "1")]
    S1,
    #[serde(rename = "2")]
    S2,
    #[serde(rename = "4")]
    S4,
}

impl Stage {
    pub fn factor(self) -> usize {
        match self {
            Stage::S1 => 1,
            Stage::S2 => 2,
            Stage::S4 => 4,
        }
    }

    pub fn from_factor(f: usize) -> Result<Stage> {
        match f {
            1 => Ok(Stage::S1),
            2 => Ok(Stage::S2),
            4 => Ok(Stage::S4),
            other => Err(parameter(format!("stage must be 1, 2 or 4, got {other}"))),
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.factor())
    }
}

impl FromStr for Stage {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let f: usize = s
            .parse()
            .map_err(|_| parameter(format!("stage must be 1, 2 or 4, got '{s}'")))?;
        Stage::from_factor(f)
    }
}

/// One of the 14 generator configurations used for pair production:
/// 5 single-frequency classes, 4 mixed, 4 respiratory, plus identity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BasisType {
    Single(FrequencyClass),
    Mixed(FrequencyClass),
    Respiratory(FrequencyClass),
    Identity,
}

impl BasisType {
    /// All 14 basis types in a pinned order.
    pub fn all() -> Vec<BasisType> {
        let mut v = Vec::with_capacity(14);
        for c in FrequencyClass::ALL {
            v.push(BasisType::Single(c));
        }
        for c in &FrequencyClass::ALL[..4] {
            v.push(BasisType::Mixed(*c));
        }
        for c in &FrequencyClass::ALL[..4] {
            v.push(BasisType::Respiratory(*c));
        }
        v.push(BasisType::Identity);
        v
    }

    pub fn category(&self) -> Category {
        match self {
            BasisType::Single(_) => Category::SingleFrequency,
            BasisType::Mixed(_) => Category::MixedFrequency,
            BasisType::Respiratory(_) => Category::Respiratory,
            BasisType::Identity => Category::Identity,
        }
    }

    pub fn class(&self) -> Option<FrequencyClass> {
        match self {
            BasisType::Single(c) | BasisType::Mixed(c) | BasisType::Respiratory(c) => Some(*c),
            BasisType::Identity => None,
        }
    }

    /// Stable name used in file names and run manifests.
    pub fn name(&self) -> String {
        match self {
            BasisType::Identity => "identity".to_string(),
            other => format!("{}_{}", other.category(), other.class().unwrap()),
        }
    }
}

/// Full parameterization of one generator run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub category: Category,
    pub stage: Stage,
    pub frequency_class: FrequencyClass,
    /// Max displacement per axis, mm.
    pub theta: f64,
    /// Control-grid spacing per axis, mm.
    pub s: [f64; 3],
    /// Post-mask smoothing range in mm (mixed category only).
    pub sigma_b: Option<(f64, f64)>,
    /// Transversal expansion cap (respiratory category only).
    pub max_scale: f64,
    pub seed: u64,
}

impl SynthSpec {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

/// Expansion cap for the respiratory category.
pub const MAX_SCALE: f64 = 1.12;

/// Cranial decay width of the diaphragm translation, mm.
pub const DIAPHRAGM_SIGMA_MM: f64 = 30.0;

fn theta_for(stage: Stage, class: FrequencyClass) -> f64 {
    match (stage, class) {
        (Stage::S1, FrequencyClass::Lowest) => 3.0,
        (Stage::S1, _) => 7.0,
        (Stage::S2, FrequencyClass::Lowest) => 5.0,
        (Stage::S2, _) => 15.0,
        (Stage::S4, FrequencyClass::Lowest) => 7.0,
        (Stage::S4, _) => 20.0,
    }
}

fn iso(v: f64) -> [f64; 3] {
    [v, v, v]
}

fn spacing_for(category: Category, stage: Stage, class: FrequencyClass) -> Result<[f64; 3]> {
    use Category::*;
    use FrequencyClass::*;
    use Stage::*;
    let s = match (category, stage, class) {
        (SingleFrequency, S1, Lowest) => iso(50.0),
        (SingleFrequency, S1, Low) => iso(45.0),
        (SingleFrequency, S1, Intermediate) => iso(35.0),
        (SingleFrequency, S1, High) => iso(25.0),
        (SingleFrequency, S1, Highest) => iso(20.0),
        (SingleFrequency, S2, Lowest) => iso(60.0),
        (SingleFrequency, S2, Low) => iso(50.0),
        (SingleFrequency, S2, Intermediate) => iso(45.0),
        (SingleFrequency, S2, High) => iso(40.0),
        (SingleFrequency, S2, Highest) => iso(35.0),
        (SingleFrequency, S4, Lowest) => iso(80.0),
        (SingleFrequency, S4, Low) => iso(70.0),
        (SingleFrequency, S4, Intermediate) => iso(60.0),
        (SingleFrequency, S4, High) => iso(50.0),
        (SingleFrequency, S4, Highest) => iso(45.0),

        (MixedFrequency, S1, Lowest) => iso(50.0),
        (MixedFrequency, S1, Low) => iso(40.0),
        (MixedFrequency, S1, Intermediate) => [25.0, 25.0, 35.0],
        (MixedFrequency, S1, High) => [20.0, 20.0, 30.0],
        (MixedFrequency, S2, Lowest) => iso(60.0),
        (MixedFrequency, S2, Low) => [50.0, 50.0, 40.0],
        (MixedFrequency, S2, Intermediate) => [40.0, 40.0, 80.0],
        (MixedFrequency, S2, High) => [35.0, 35.0, 80.0],
        (MixedFrequency, S4, Lowest) => iso(80.0),
        (MixedFrequency, S4, Low) => iso(60.0),
        (MixedFrequency, S4, Intermediate) => iso(50.0),
        (MixedFrequency, S4, High) => [45.0, 45.0, 60.0],

        (Respiratory, S1, Lowest) => iso(50.0),
        (Respiratory, S1, Low) => iso(45.0),
        (Respiratory, S1, Intermediate) => iso(35.0),
        (Respiratory, S1, High) => iso(25.0),
        (Respiratory, S2, Lowest) => iso(60.0),
        (Respiratory, S2, Low) => iso(50.0),
        (Respiratory, S2, Intermediate) => iso(45.0),
        (Respiratory, S2, High) => iso(40.0),
        (Respiratory, S4, Lowest) => iso(80.0),
        (Respiratory, S4, Low) => iso(70.0),
        (Respiratory, S4, Intermediate) => iso(60.0),
        (Respiratory, S4, High) => iso(50.0),

        (MixedFrequency | Respiratory, _, Highest) => {
            return Err(Error::UnsupportedCombination(format!(
                "{category} has no 'highest' frequency class at stage {stage}"
            )))
        }
        (Identity, _, _) => iso(50.0),
    };
    Ok(s)
}

fn sigma_b_for(category: Category, stage: Stage) -> Option<(f64, f64)> {
    if category != Category::MixedFrequency {
        return None;
    }
    Some(match stage {
        Stage::S1 => (5.0, 10.0),
        Stage::S2 => (7.0, 12.0),
        Stage::S4 => (10.0, 15.0),
    })
}

/// The standard parameter schedule, one row per
/// (category, stage, frequency class). Seed defaults to 0.
pub fn default_spec(category: Category, stage: Stage, class: FrequencyClass) -> Result<SynthSpec> {
    let s = spacing_for(category, stage, class)?;
    let theta = if category == Category::Identity { 0.0 } else { theta_for(stage, class) };
    Ok(SynthSpec {
        category,
        stage,
        frequency_class: class,
        theta,
        s,
        sigma_b: sigma_b_for(category, stage),
        max_scale: MAX_SCALE,
        seed: 0,
    })
}

fn check_dims(target: &Grid) -> Result<()> {
    for axis in 0..3 {
        if target.dims[axis] < 8 {
            return Err(parameter(format!(
                "target dims {:?} too small: need at least 8 voxels per axis",
                target.dims
            )));
        }
    }
    Ok(())
}

/// Shared single-frequency recipe: random lattice, lattice smoothing with
/// σ = 1 control point, dense resampling, then per-axis normalization so
/// the max |component| equals θ exactly (up to rounding) when nonzero.
fn single_frequency_core(
    spec: &SynthSpec,
    target: Grid,
    rng: &mut CounterRng,
) -> Result<DisplacementField> {
    check_dims(&target)?;
    let mut cg = ControlGrid::for_target(&target, spec.s)?;
    // Draw order: component lattices x, y, z, each in storage order.
    for axis in 0..3 {
        for v in cg.coeffs_mut(axis) {
            *v = rng.uniform_signed();
        }
    }
    cg.smooth(1.0)?;
    let mut field = resample_control_grid(&cg, target)?;
    for axis in 0..3 {
        let m = field.max_abs_component(axis);
        let scale = if m > 0.0 { spec.theta / m } else { 0.0 };
        for v in field.component_mut(axis) {
            *v *= scale;
        }
    }
    Ok(field)
}

fn require_category(spec: &SynthSpec, want: Category) -> Result<()> {
    if spec.category != want {
        return Err(parameter(format!(
            "generator for category '{want}' called with a '{}' spec",
            spec.category
        )));
    }
    Ok(())
}

/// Smoothed-lattice random field, normalized per axis to θ.
pub fn gen_single_frequency(spec: &SynthSpec, target: Grid) -> Result<DisplacementField> {
    require_category(spec, Category::SingleFrequency)?;
    let mut rng = CounterRng::new(spec.seed);
    single_frequency_core(spec, target, &mut rng)
}

/// Binary mask from median-thresholded smoothed noise, roughly half full.
fn random_binary_mask(target: Grid, rng: &mut CounterRng) -> Result<Volume> {
    let n = target.len();
    let noise: Vec<f64> = (0..n).map(|_| rng.uniform()).collect();
    let smoothed = smooth_raw(target.dims, &noise, [8.0; 3])?;
    let mut sorted = smoothed.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = sorted[n / 2];
    let mask: Vec<f64> = smoothed.iter().map(|&v| if v > median { 1.0 } else { 0.0 }).collect();
    Volume::new(target, mask)
}

fn apply_mask_and_smooth(
    field: DisplacementField,
    mask: &Volume,
    sigma_b: f64,
) -> Result<DisplacementField> {
    let mut field = field;
    for axis in 0..3 {
        let comp = field.component_mut(axis);
        for (v, &m) in comp.iter_mut().zip(mask.data()) {
            if m == 0.0 {
                *v = 0.0;
            }
        }
    }
    smooth_field(&field, [sigma_b; 3])
}

/// Single-frequency field gated by a random binary mask, then smoothed
/// with a width drawn from the σ_B range in `SynthSpec`.
pub fn gen_mixed_frequency(spec: &SynthSpec, target: Grid) -> Result<DisplacementField> {
    require_category(spec, Category::MixedFrequency)?;
    let (lo, hi) = spec
        .sigma_b
        .ok_or_else(|| parameter("mixed-frequency spec is missing the sigma_b range"))?;
    let mut rng = CounterRng::new(spec.seed);
    let field = single_frequency_core(spec, target, &mut rng)?;
    let sigma_b = rng.uniform_in(lo, hi);
    let mask = random_binary_mask(target, &mut rng)?;
    apply_mask_and_smooth(field, &mask, sigma_b)
}

/// Test hook: mixed-frequency generation with a caller-supplied mask in
/// place of the random one. Returns the drawn smoothing width as well;
/// the draw sequence matches [`gen_mixed_frequency`] up to the skipped
/// mask noise.
pub fn gen_mixed_frequency_with_mask(
    spec: &SynthSpec,
    target: Grid,
    mask: &Volume,
) -> Result<(DisplacementField, f64)> {
    require_category(spec, Category::MixedFrequency)?;
    let (lo, hi) = spec
        .sigma_b
        .ok_or_else(|| parameter("mixed-frequency spec is missing the sigma_b range"))?;
    require_same_grid(mask.grid(), &target, "mixed-frequency mask")?;
    let mut rng = CounterRng::new(spec.seed);
    let field = single_frequency_core(spec, target, &mut rng)?;
    let sigma_b = rng.uniform_in(lo, hi);
    let out = apply_mask_and_smooth(field, &mask.clone(), sigma_b)?;
    Ok((out, sigma_b))
}

fn validate_lung_mask(mask: &Volume, target: &Grid) -> Result<()> {
    require_same_grid(mask.grid(), target, "lung mask")?;
    let mut any = false;
    for &v in mask.data() {
        if v == 1.0 {
            any = true;
        } else if v != 0.0 {
            return Err(Error::Mask(format!(
                "lung mask must be binary (0 or 1), found value {v}"
            )));
        }
    }
    if !any {
        return Err(Error::Mask("lung mask is empty".to_string()));
    }
    Ok(())
}

/// Deterministic parts of the respiratory model, with the expansion
/// factor and translation magnitude supplied by the caller: returns the
/// in-plane expansion field about the mask centroid and the cranio-caudal
/// diaphragm translation with its Gaussian cranial decay.
pub fn respiratory_parts(
    mask: &Volume,
    target: Grid,
    f: f64,
    t_mag: f64,
) -> Result<(DisplacementField, DisplacementField)> {
    validate_lung_mask(mask, &target)?;
    let [nx, ny, nz] = target.dims;

    // Mask centroid in world coordinates, fixed accumulation order.
    let mut c = [0.0; 3];
    let mut count = 0usize;
    for v in target.iter_voxels() {
        if mask.at(v[0], v[1], v[2]) == 1.0 {
            let w = target.voxel_to_world(v);
            c[0] += w[0];
            c[1] += w[1];
            c[2] += w[2];
            count += 1;
        }
    }
    for a in &mut c {
        *a /= count as f64;
    }

    let expansion = DisplacementField::from_fn(target, |v| {
        let w = target.voxel_to_world(v);
        [(f - 1.0) * (w[0] - c[0]), (f - 1.0) * (w[1] - c[1]), 0.0]
    })?;

    // Diaphragm surface: most caudal (lowest z) mask voxel per (x, y)
    // column; columns that never intersect the mask use the most caudal
    // mask voxel anywhere.
    let mut surface: Vec<Option<usize>> = vec![None; nx * ny];
    let mut global_min: Option<usize> = None;
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                if mask.at(x, y, z) == 1.0 {
                    let col = &mut surface[y * nx + x];
                    if col.is_none() {
                        *col = Some(z);
                    }
                    if global_min.is_none() {
                        global_min = Some(z);
                    }
                }
            }
        }
    }
    let fallback = global_min.expect("mask verified nonempty");

    let dz = target.spacing[2];
    let translation = DisplacementField::from_fn(target, |[x, y, z]| {
        let zd = surface[y * nx + x].unwrap_or(fallback);
        let w = if z <= zd {
            1.0
        } else {
            let d_mm = (z - zd) as f64 * dz;
            (-(d_mm / DIAPHRAGM_SIGMA_MM).powi(2) / 2.0).exp()
        };
        [0.0, 0.0, -t_mag * w]
    })?;

    Ok((expansion, translation))
}

/// Breathing-like field: expansion + diaphragm translation + a
/// single-frequency residual, summed voxelwise.
pub fn gen_respiratory(spec: &SynthSpec, mask: &Volume, target: Grid) -> Result<DisplacementField> {
    require_category(spec, Category::Respiratory)?;
    validate_lung_mask(mask, &target)?;
    let mut rng = CounterRng::new(spec.seed);
    let residual = single_frequency_core(spec, target, &mut rng)?;
    // f in (1, max_scale], magnitude in (0, θ].
    let f = spec.max_scale - rng.uniform() * (spec.max_scale - 1.0);
    let t_mag = spec.theta * (1.0 - rng.uniform());
    let (expansion, translation) = respiratory_parts(mask, target, f, t_mag)?;

    let mut comps = residual.into_components();
    for axis in 0..3 {
        let (e, t) = (expansion.component(axis), translation.component(axis));
        for (i, v) in comps[axis].iter_mut().enumerate() {
            *v += e[i] + t[i];
        }
    }
    DisplacementField::new(target, comps)
}

/// The identity transform on the given grid.
pub fn gen_identity(target: Grid) -> DisplacementField {
    DisplacementField::zeros(target)
}

/// Dispatch on `SynthSpec::category`. Respiratory requires a lung mask.
pub fn generate(
    spec: &SynthSpec,
    target: Grid,
    lung_mask: Option<&Volume>,
) -> Result<DisplacementField> {
    match spec.category {
        Category::SingleFrequency => gen_single_frequency(spec, target),
        Category::MixedFrequency => gen_mixed_frequency(spec, target),
        Category::Respiratory => {
            let mask = lung_mask.ok_or_else(|| {
                Error::Mask("respiratory generation requires a lung mask".to_string())
            })?;
            gen_respiratory(spec, mask, target)
        }
        Category::Identity => Ok(gen_identity(target)),
    }
}

/// Frequency-class order helper for spread checks.
pub fn class_rank(class: FrequencyClass) -> usize {
    class.rank()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_matches_published_rows() {
        let s4 = default_spec(Category::SingleFrequency, Stage::S4, FrequencyClass::Highest).unwrap();
        assert_eq!(s4.theta, 20.0);
        assert_eq!(s4.s, [45.0; 3]);

        let m2 = default_spec(Category::MixedFrequency, Stage::S2, FrequencyClass::Low).unwrap();
        assert_eq!(m2.theta, 15.0);
        assert_eq!(m2.s, [50.0, 50.0, 40.0]);
        assert_eq!(m2.sigma_b, Some((7.0, 12.0)));

        let r1 = default_spec(Category::Respiratory, Stage::S1, FrequencyClass::High).unwrap();
        assert_eq!(r1.theta, 7.0);
        assert_eq!(r1.s, [25.0; 3]);
        assert_eq!(r1.max_scale, 1.12);

        let lowest_thetas: Vec<f64> = [Stage::S1, Stage::S2, Stage::S4]
            .iter()
            .map(|&st| default_spec(Category::SingleFrequency, st, FrequencyClass::Lowest).unwrap().theta)
            .collect();
        assert_eq!(lowest_thetas, vec![3.0, 5.0, 7.0]);
    }

    #[test]
    fn blank_schedule_cells_are_unsupported() {
        for cat in [Category::MixedFrequency, Category::Respiratory] {
            for stage in [Stage::S1, Stage::S2, Stage::S4] {
                let err = default_spec(cat, stage, FrequencyClass::Highest).unwrap_err();
                assert_eq!(err.code(), "E_UNSUPPORTED");
            }
        }
    }

    #[test]
    fn fourteen_basis_types() {
        let all = BasisType::all();
        assert_eq!(all.len(), 14);
        let names: std::collections::HashSet<String> = all.iter().map(|b| b.name()).collect();
        assert_eq!(names.len(), 14);
        assert!(names.contains("single_highest"));
        assert!(names.contains("mixed_high"));
        assert!(names.contains("respiratory_lowest"));
        assert!(names.contains("identity"));
        assert!(!names.contains("mixed_highest"));
    }

    #[test]
    fn single_frequency_normalizes_each_axis_to_theta() {
        let spec = default_spec(Category::SingleFrequency, Stage::S4, FrequencyClass::Highest)
            .unwrap()
            .with_seed(7);
        let target = Grid::isotropic([24, 20, 16]);
        let f = gen_single_frequency(&spec, target).unwrap();
        for axis in 0..3 {
            let m = f.max_abs_component(axis);
            assert!((m - 20.0).abs() <= 1e-9, "axis {axis}: {m}");
        }
    }

    #[test]
    fn zero_theta_gives_zero_field() {
        let mut spec = default_spec(Category::SingleFrequency, Stage::S1, FrequencyClass::Low)
            .unwrap()
            .with_seed(3);
        spec.theta = 0.0;
        let f = gen_single_frequency(&spec, Grid::isotropic([10, 10, 10])).unwrap();
        assert!(f.is_identity());
    }

    #[test]
    fn small_dims_rejected() {
        let spec = default_spec(Category::SingleFrequency, Stage::S1, FrequencyClass::Low).unwrap();
        let err = gen_single_frequency(&spec, Grid::isotropic([7, 16, 16])).unwrap_err();
        assert_eq!(err.code(), "E_PARAM");
    }

    #[test]
    fn seeds_change_fields_and_repeat_exactly() {
        let target = Grid::isotropic([12, 12, 12]);
        let base = default_spec(Category::SingleFrequency, Stage::S2, FrequencyClass::Low).unwrap();
        let a = gen_single_frequency(&base.clone().with_seed(1), target).unwrap();
        let a2 = gen_single_frequency(&base.clone().with_seed(1), target).unwrap();
        let b = gen_single_frequency(&base.with_seed(2), target).unwrap();
        assert_eq!(a.component(0), a2.component(0));
        assert_ne!(a.component(0), b.component(0));
    }

    #[test]
    fn mixed_with_full_mask_is_smoothed_single() {
        let target = Grid::isotropic([14, 12, 10]);
        let spec_m = default_spec(Category::MixedFrequency, Stage::S1, FrequencyClass::Low)
            .unwrap()
            .with_seed(9);
        let ones = Volume::constant(target, 1.0).unwrap();
        let (mixed, sigma_b) = gen_mixed_frequency_with_mask(&spec_m, target, &ones).unwrap();
        assert!(sigma_b >= 5.0 && sigma_b <= 10.0);

        let spec_s = SynthSpec { category: Category::SingleFrequency, ..spec_m };
        let single = gen_single_frequency(&spec_s, target).unwrap();
        let expect = smooth_field(&single, [sigma_b; 3]).unwrap();
        for axis in 0..3 {
            assert_eq!(mixed.component(axis), expect.component(axis));
        }
    }

    #[test]
    fn mixed_with_empty_mask_is_identity_field() {
        let target = Grid::isotropic([12, 12, 12]);
        let spec = default_spec(Category::MixedFrequency, Stage::S1, FrequencyClass::High)
            .unwrap()
            .with_seed(4);
        let zeros = Volume::zeros(target);
        let (mixed, _) = gen_mixed_frequency_with_mask(&spec, target, &zeros).unwrap();
        assert!(mixed.is_identity());
    }

    #[test]
    fn mixed_is_deterministic() {
        let target = Grid::isotropic([12, 12, 12]);
        let spec = default_spec(Category::MixedFrequency, Stage::S2, FrequencyClass::Low)
            .unwrap()
            .with_seed(11);
        let a = gen_mixed_frequency(&spec, target).unwrap();
        let b = gen_mixed_frequency(&spec, target).unwrap();
        for axis in 0..3 {
            assert_eq!(a.component(axis), b.component(axis));
        }
    }

    fn ball_mask(target: Grid, center: [f64; 3], radius: f64) -> Volume {
        Volume::from_fn(target, |v| {
            let w = target.voxel_to_world(v);
            let d2 = (0..3).map(|a| (w[a] - center[a]).powi(2)).sum::<f64>();
            if d2 <= radius * radius {
                1.0
            } else {
                0.0
            }
        })
        .unwrap()
    }

    #[test]
    fn respiratory_empty_mask_is_an_error() {
        let target = Grid::isotropic([10, 10, 10]);
        let spec = default_spec(Category::Respiratory, Stage::S1, FrequencyClass::Low)
            .unwrap()
            .with_seed(5);
        let err = gen_respiratory(&spec, &Volume::zeros(target), target).unwrap_err();
        assert_eq!(err.code(), "E_MASK");
    }

    #[test]
    fn expansion_scales_linearly_from_centroid() {
        // f = 1.12 at a point 50 mm lateral of the centroid: 6 mm shift.
        let target = Grid::isotropic([101, 101, 12]);
        let mask = ball_mask(target, [50.0, 50.0, 5.0], 4.0);
        let (exp, _) = respiratory_parts(&mask, target, 1.12, 0.0).unwrap();
        let v = exp.sample([0.0, 50.0, 5.0]).unwrap();
        let mag = (v[0] * v[0] + v[1] * v[1]).sqrt();
        assert!((mag - 6.0).abs() < 1e-9, "{mag}");
        assert_eq!(v[2], 0.0);
    }

    #[test]
    fn diaphragm_translation_decays_cranially() {
        let target = Grid::new([10, 10, 120], [1.0; 3], [0.0; 3]).unwrap();
        let mask = Volume::from_fn(target, |[_, _, z]| if (10..30).contains(&z) { 1.0 } else { 0.0 })
            .unwrap();
        let t_mag = 5.0;
        let (_, tr) = respiratory_parts(&mask, target, 1.0, t_mag).unwrap();
        // Below and at the surface (z = 10): full magnitude, caudally.
        assert_eq!(tr.vector_at(4, 4, 2)[2], -t_mag);
        assert_eq!(tr.vector_at(4, 4, 10)[2], -t_mag);
        // 90 mm cranial of the surface: under 1.2% of the magnitude.
        let far = tr.vector_at(4, 4, 100)[2].abs();
        assert!(far < 0.012 * t_mag, "{far}");
        // Zero forced parameters collapse both parts.
        let (e0, t0) = respiratory_parts(&mask, target, 1.0, 0.0).unwrap();
        assert!(e0.is_identity() && t0.is_identity());
    }

    #[test]
    fn respiratory_is_deterministic_and_contains_translation() {
        let target = Grid::isotropic([16, 16, 32]);
        let mask = ball_mask(target, [7.5, 7.5, 20.0], 6.0);
        let spec = default_spec(Category::Respiratory, Stage::S1, FrequencyClass::Low)
            .unwrap()
            .with_seed(21);
        let a = gen_respiratory(&spec, &mask, target).unwrap();
        let b = gen_respiratory(&spec, &mask, target).unwrap();
        for axis in 0..3 {
            assert_eq!(a.component(axis), b.component(axis));
        }
        assert!(!a.is_identity());
    }

    #[test]
    fn identity_is_all_zero() {
        let f = gen_identity(Grid::isotropic([9, 5, 7]));
        assert!(f.is_identity());
    }
}
