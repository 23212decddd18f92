//! Training-pair production.
//!
//! From one source image and one seed this module derives a chain of
//! moving images, a generated fixed image per pair, and a manifest that
//! is sufficient to regenerate any pair byte for byte. The moving chain
//! deliberately re-deforms its predecessor (not the source) so later
//! movings drift further from the original anatomy.

use serde::{Deserialize, Serialize};

use crate::error::{parameter, Error, Result};
use crate::intensity::{add_noise, apply_sponge, jacobian_determinant, NoiseParams};
use crate::pipeline::warp_volume;
use crate::rng::{splitmix64, CounterRng};
use crate::synth::{
    default_spec, generate, BasisType, Category, FrequencyClass, Stage, SynthSpec,
};
use crate::volume::{DisplacementField, Volume};

/// Intensity noise on generated fixed images.
pub const SIGMA_N_FIXED: f64 = 5.0;
/// Intensity noise on each moving-chain link.
pub const SIGMA_N_CHAIN: f64 = 3.0;

/// Pairs generated per basis type: coarser stages get more (their
/// images are smaller), so 70, 42 and 28 pairs per source for stages
/// 4, 2 and 1.
pub fn multiplier(stage: Stage) -> usize {
    match stage {
        Stage::S4 => 5,
        Stage::S2 => 3,
        Stage::S1 => 2,
    }
}

// Disjoint seed streams for the four random roles below. Arbitrary
// constants, fixed forever; changing any of them changes every output.
const ROLE_CHAIN_DVF: u64 = 0x636861_696e_6476;
const ROLE_CHAIN_NOISE: u64 = 0x636861_696e_6e6f;
const ROLE_PAIR_DVF: u64 = 0x706169_72_6476;
const ROLE_PAIR_NOISE: u64 = 0x706169_72_6e6f;
const ROLE_PATCH: u64 = 0x706174_6368;

/// Seeds for one moving-chain step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainLink {
    pub dvf_seed: u64,
    pub noise_seed: u64,
}

pub fn chain_links(seed: u64, n: usize) -> Vec<ChainLink> {
    (0..n as u64)
        .map(|i| ChainLink {
            dvf_seed: splitmix64(seed ^ ROLE_CHAIN_DVF, i),
            noise_seed: splitmix64(seed ^ ROLE_CHAIN_NOISE, i),
        })
        .collect()
}

/// A deformed image plus how many voxels had folded geometry under it.
pub struct Deformed {
    pub image: Volume,
    pub folded_voxels: usize,
}

/// The full deformation recipe shared by chain links and fixed images:
/// warp by `truth`, compensate intensity for local volume change, then
/// add Gaussian noise.
pub fn deform(image: &Volume, truth: &DisplacementField, noise: &NoiseParams) -> Result<Deformed> {
    let warped = warp_volume(image, truth)?;
    let jac = jacobian_determinant(truth)?;
    let (sponged, folded_voxels) = apply_sponge(&warped, &jac)?;
    let image = add_noise(&sponged, noise)?;
    Ok(Deformed {
        image,
        folded_voxels,
    })
}

/// One chain step: a gentle low-frequency deformation of the
/// predecessor with chain-strength noise.
pub fn extend_chain(prev: &Volume, stage: Stage, link: ChainLink) -> Result<Volume> {
    let spec = default_spec(Category::SingleFrequency, stage, FrequencyClass::Lowest)?
        .with_seed(link.dvf_seed);
    let truth = generate(&spec, *prev.grid(), None)?;
    let noise = NoiseParams {
        sigma_n: SIGMA_N_CHAIN,
        seed: link.noise_seed,
    };
    Ok(deform(prev, &truth, &noise)?.image)
}

/// All chain movings, starting with the source itself; `links.len() + 1`
/// volumes come back.
pub fn make_chain(source: &Volume, stage: Stage, links: &[ChainLink]) -> Result<Vec<Volume>> {
    let mut out = Vec::with_capacity(links.len() + 1);
    out.push(source.clone());
    for link in links {
        let next = extend_chain(out.last().unwrap(), stage, *link)?;
        out.push(next);
    }
    Ok(out)
}

/// Generates the reference field for `spec` and deforms `moving` by it.
/// Returns the fixed image and the field that made it.
pub fn make_fixed(
    moving: &Volume,
    spec: &SynthSpec,
    lung_mask: Option<&Volume>,
    noise: &NoiseParams,
) -> Result<(Volume, DisplacementField)> {
    let truth = generate(spec, *moving.grid(), lung_mask)?;
    let fixed = deform(moving, &truth, noise)?.image;
    Ok((fixed, truth))
}

/// Everything needed to rebuild one pair's fixed image and truth field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRecipe {
    pub index: usize,
    /// Stable basis name, e.g. "mixed_low"; used in file names.
    pub basis: String,
    pub spec: SynthSpec,
    pub noise: NoiseParams,
    /// True when this slot cannot be produced (respiratory without a
    /// lung mask). The chain still advances past it.
    pub skipped: bool,
}

/// The deterministic work list for one source and seed: multiplier ×
/// 14 basis types, in a pinned order. Respiratory entries are marked
/// skipped when no mask is available; nothing is substituted for them.
pub fn pair_recipes(stage: Stage, seed: u64, sigma_n: f64, has_mask: bool) -> Result<Vec<PairRecipe>> {
    if !sigma_n.is_finite() || sigma_n < 0.0 {
        return Err(parameter(format!(
            "sigma_n must be finite and >= 0, got {sigma_n}"
        )));
    }
    let mut out = Vec::with_capacity(multiplier(stage) * 14);
    for _rep in 0..multiplier(stage) {
        for basis in BasisType::all() {
            let index = out.len();
            let class = basis.class().unwrap_or(FrequencyClass::Lowest);
            let spec = default_spec(basis.category(), stage, class)?
                .with_seed(splitmix64(seed ^ ROLE_PAIR_DVF, index as u64));
            out.push(PairRecipe {
                index,
                basis: basis.name(),
                spec,
                noise: NoiseParams {
                    sigma_n,
                    seed: splitmix64(seed ^ ROLE_PAIR_NOISE, index as u64),
                },
                skipped: basis.category() == Category::Respiratory && !has_mask,
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairProvenance {
    pub source_id: String,
    /// Position in the moving chain (0 is the source itself).
    pub chain_index: usize,
    pub basis: String,
    pub spec: SynthSpec,
    pub noise: NoiseParams,
}

pub struct TrainingPair {
    pub moving: Volume,
    pub fixed: Volume,
    pub truth: DisplacementField,
    pub provenance: PairProvenance,
}

pub fn realize_pair(
    moving: &Volume,
    recipe: &PairRecipe,
    lung_mask: Option<&Volume>,
    source_id: &str,
) -> Result<TrainingPair> {
    if recipe.skipped {
        return Err(parameter(format!(
            "pair {} ({}) was skipped at planning time",
            recipe.index, recipe.basis
        )));
    }
    let (fixed, truth) = make_fixed(moving, &recipe.spec, lung_mask, &recipe.noise)?;
    Ok(TrainingPair {
        moving: moving.clone(),
        fixed,
        truth,
        provenance: PairProvenance {
            source_id: source_id.to_string(),
            chain_index: recipe.index,
            basis: recipe.basis.clone(),
            spec: recipe.spec.clone(),
            noise: recipe.noise,
        },
    })
}

/// What one expansion run planned and produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpandReport {
    pub stage: Stage,
    pub requested: usize,
    pub produced: usize,
    /// (pair index, basis name) of every slot left unfilled.
    pub skipped: Vec<(usize, String)>,
}

/// Record of one expansion run; enough to regenerate every pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema: u32,
    pub source_id: String,
    pub stage: Stage,
    pub seed: u64,
    pub sigma_n: f64,
    pub with_mask: bool,
    pub links: Vec<ChainLink>,
    pub recipes: Vec<PairRecipe>,
}

pub const MANIFEST_SCHEMA: u32 = 1;

impl Manifest {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse {
            offset: 0,
            msg: format!("manifest: {e}"),
        })
    }
}

/// Expands one source into its full pair set, handing each finished
/// pair to `sink` so callers can stream them to disk instead of holding
/// the whole set. The chain advances through skipped slots so pair
/// contents do not depend on whether a mask was supplied.
pub fn expand_basis_with(
    source: &Volume,
    stage: Stage,
    lung_mask: Option<&Volume>,
    seed: u64,
    sigma_n: f64,
    source_id: &str,
    mut sink: impl FnMut(TrainingPair) -> Result<()>,
) -> Result<(ExpandReport, Manifest)> {
    let recipes = pair_recipes(stage, seed, sigma_n, lung_mask.is_some())?;
    let links = chain_links(seed, recipes.len().saturating_sub(1));
    let mut moving = source.clone();
    let mut skipped = Vec::new();
    let mut produced = 0usize;
    for (i, recipe) in recipes.iter().enumerate() {
        if i > 0 {
            moving = extend_chain(&moving, stage, links[i - 1])?;
        }
        if recipe.skipped {
            skipped.push((i, recipe.basis.clone()));
            continue;
        }
        sink(realize_pair(&moving, recipe, lung_mask, source_id)?)?;
        produced += 1;
    }
    let report = ExpandReport {
        stage,
        requested: recipes.len(),
        produced,
        skipped,
    };
    let manifest = Manifest {
        schema: MANIFEST_SCHEMA,
        source_id: source_id.to_string(),
        stage,
        seed,
        sigma_n,
        with_mask: lung_mask.is_some(),
        links,
        recipes,
    };
    Ok((report, manifest))
}

/// Convenience wrapper collecting the whole pair set in memory.
pub fn expand_basis(
    source: &Volume,
    stage: Stage,
    lung_mask: Option<&Volume>,
    seed: u64,
    sigma_n: f64,
    source_id: &str,
) -> Result<(Vec<TrainingPair>, ExpandReport, Manifest)> {
    let mut pairs = Vec::new();
    let (report, manifest) = expand_basis_with(source, stage, lung_mask, seed, sigma_n, source_id, |p| {
        pairs.push(p);
        Ok(())
    })?;
    Ok((pairs, report, manifest))
}

/// Rebuilds one pair from a manifest. Identical inputs give
/// byte-identical outputs.
pub fn regenerate_pair(
    source: &Volume,
    manifest: &Manifest,
    index: usize,
    lung_mask: Option<&Volume>,
) -> Result<TrainingPair> {
    let recipe = manifest
        .recipes
        .get(index)
        .ok_or_else(|| parameter(format!("manifest has no pair {index}")))?;
    let mut moving = source.clone();
    for link in &manifest.links[..index] {
        moving = extend_chain(&moving, manifest.stage, *link)?;
    }
    realize_pair(&moving, recipe, lung_mask, &manifest.source_id)
}

/// Displacement-magnitude bins (mm) used to balance patch sampling,
/// half-open [lo, hi). Magnitudes at or past the top edge are not
/// sampled at all.
pub fn magnitude_bins(stage: Stage) -> Vec<(f64, f64)> {
    match stage {
        Stage::S4 => vec![(0.0, 1.5), (1.5, 8.0), (8.0, 20.0)],
        Stage::S2 => vec![(0.0, 1.5), (1.5, 4.0), (4.0, 15.0)],
        Stage::S1 => vec![(0.0, 2.0), (2.0, 7.0)],
    }
}

/// Patches drawn per pair when nothing else is configured. Finer stages
/// use more patches of the same size.
pub fn default_patch_count(stage: Stage) -> usize {
    match stage {
        Stage::S4 => 5,
        Stage::S2 => 20,
        Stage::S1 => 50,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatchSample {
    pub center: [usize; 3],
    pub bin: usize,
    pub magnitude_mm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchPlan {
    pub stage: Stage,
    pub patch_size: usize,
    pub bins: Vec<(f64, f64)>,
    pub samples: Vec<PatchSample>,
    /// Human-readable record of rebalancing and shortfalls.
    pub notes: Vec<String>,
}

/// Draws `count` patch centers from the truth field, balanced across
/// the stage's magnitude bins (each center's bin comes from the
/// displacement norm at the center voxel). Bins share the count as
/// evenly as possible; the share of a bin with too few eligible centers
/// is passed to the others and noted. Every patch lies fully inside the
/// volume.
pub fn sample_patches(
    truth: &DisplacementField,
    stage: Stage,
    count: usize,
    patch_size: usize,
    seed: u64,
) -> Result<PatchPlan> {
    let g = truth.grid();
    if patch_size == 0 {
        return Err(parameter("patch_size must be positive".to_string()));
    }
    for axis in 0..3 {
        if g.dims[axis] < patch_size {
            return Err(parameter(format!(
                "volume {:?} is smaller than a {patch_size}^3 patch",
                g.dims
            )));
        }
    }
    if count == 0 {
        return Err(parameter("patch count must be positive".to_string()));
    }

    let bins = magnitude_bins(stage);
    let half = patch_size / 2;
    let hi = |n: usize| n - patch_size + half; // inclusive upper center bound

    let mut members: Vec<Vec<([usize; 3], f64)>> = vec![Vec::new(); bins.len()];
    for z in half..=hi(g.dims[2]) {
        for y in half..=hi(g.dims[1]) {
            for x in half..=hi(g.dims[0]) {
                let d = truth.vector_at(x, y, z);
                let m = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
                if let Some(b) = bins.iter().position(|&(lo, hi)| m >= lo && m < hi) {
                    members[b].push(([x, y, z], m));
                }
            }
        }
    }

    // Equal-as-possible split of `count`, then water-fill whatever the
    // short bins cannot absorb into the bins that still have capacity.
    let mut take = vec![0usize; bins.len()];
    let mut remaining = count;
    let mut noted_short = vec![false; bins.len()];
    let mut notes = Vec::new();
    loop {
        let open: Vec<usize> = (0..bins.len())
            .filter(|&b| members[b].len() > take[b])
            .collect();
        if open.is_empty() || remaining == 0 {
            break;
        }
        let q = remaining / open.len();
        let r = remaining % open.len();
        let mut placed = 0usize;
        for (j, &b) in open.iter().enumerate() {
            let want = q + usize::from(j < r);
            let got = want.min(members[b].len() - take[b]);
            take[b] += got;
            placed += got;
        }
        remaining -= placed;
        if placed == 0 {
            break;
        }
        for b in 0..bins.len() {
            if !noted_short[b] && members[b].len() == take[b] && remaining > 0 {
                noted_short[b] = true;
            }
        }
    }
    for (b, &(lo, hi)) in bins.iter().enumerate() {
        if members[b].is_empty() {
            notes.push(format!(
                "bin [{lo}, {hi}) mm has no eligible centers; its share went to the other bins"
            ));
        } else if noted_short[b] {
            notes.push(format!(
                "bin [{lo}, {hi}) mm ran out at {} centers; the rest went to the other bins",
                members[b].len()
            ));
        }
    }
    if remaining > 0 {
        notes.push(format!(
            "only {} of {count} requested patches have eligible centers",
            count - remaining
        ));
    }

    // Partial Fisher-Yates per bin; one counter stream keeps the whole
    // plan a pure function of the seed.
    let mut rng = CounterRng::new(splitmix64(seed ^ ROLE_PATCH, 0));
    let mut samples = Vec::with_capacity(count - remaining);
    for (b, list) in members.iter_mut().enumerate() {
        for j in 0..take[b] {
            let pick = j + (rng.uniform() * (list.len() - j) as f64) as usize;
            let pick = pick.min(list.len() - 1);
            list.swap(j, pick);
            let (center, magnitude_mm) = list[j];
            samples.push(PatchSample {
                center,
                bin: b,
                magnitude_mm,
            });
        }
    }

    Ok(PatchPlan {
        stage,
        patch_size,
        bins,
        samples,
        notes,
    })
}
