use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ops::{
    apply_jitter, enforce_dimensions, fold_margin, insufflate, interpolate_shape_types,
    sample_jitter_with, solve_dimensions, validate_mesh, Dimensions, JointJitter,
};
use super::template::TemplateAsset;
use super::{SynthError, SynthResult};
use crate::mesh::{load_mesh, save_mesh, LandmarkSet, MeshError, TriMesh};

/// Physiological plausibility ranges: GC and LC in mm, volume in mm³.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DimensionBounds {
    pub gc: (f64, f64),
    pub lc: (f64, f64),
    pub volume: (f64, f64),
}

impl Default for DimensionBounds {
    fn default() -> Self {
        Self {
            gc: (250.0, 450.0),
            lc: (100.0, 200.0),
            volume: (200_000.0, 1_500_000.0),
        }
    }
}

impl DimensionBounds {
    /// Bounds wide enough to accept any sane mesh.
    pub fn wide() -> Self {
        Self {
            gc: (1.0, 1e5),
            lc: (1.0, 1e5),
            volume: (1.0, 1e12),
        }
    }

    pub fn check(&self) -> SynthResult<()> {
        for (name, (lo, hi)) in [("gc", self.gc), ("lc", self.lc), ("volume", self.volume)] {
            if !(lo > 0.0 && hi > lo && hi.is_finite()) {
                return Err(SynthError::BadBounds(format!("{name}: [{lo}, {hi}]")));
            }
        }
        Ok(())
    }
}

/// Sampling range for one joint's jitter: rotation angle uniform in
/// `[-max_angle_rad, max_angle_rad]` about `axis`, scale uniform in `scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JitterRange {
    pub joint: String,
    pub axis: [f64; 3],
    pub max_angle_rad: f64,
    pub scale: (f64, f64),
}

impl JitterRange {
    pub fn rotation(joint: &str, axis: [f64; 3], max_deg: f64) -> Self {
        Self {
            joint: joint.into(),
            axis,
            max_angle_rad: max_deg.to_radians(),
            scale: (1.0, 1.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationConfig {
    pub bounds: DimensionBounds,
    /// Placeholder ranges; not taken from any published protocol.
    pub jitter: Vec<JitterRange>,
    pub max_insufflation_mm: f64,
    /// Allowed stomach centerline stretch when fitting dimension targets.
    pub axial_range: (f64, f64),
    /// Allowed cross-section scale, in and across the curvature plane.
    pub cross_section_range: (f64, f64),
    /// Largest allowed ratio between the two cross-section scales.
    pub max_ellipticity: f64,
    /// Smallest allowed advance of any wall edge relative to the centerline step.
    pub min_fold_margin: f64,
    /// Full pipeline attempts per mesh before giving up.
    pub max_attempts: usize,
    /// Dimension target draws per attempt.
    pub max_target_draws: usize,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            bounds: DimensionBounds::default(),
            jitter: vec![
                JitterRange::rotation("pylorus", [0.0, 1.0, 0.0], 15.0),
                JitterRange::rotation("antrum", [1.0, 0.0, 0.0], 8.0),
                JitterRange::rotation("body_lower", [0.0, 1.0, 0.0], 8.0),
                JitterRange::rotation("duodenum_bulb", [0.0, 0.0, 1.0], 10.0),
                JitterRange {
                    joint: "fundus".into(),
                    axis: [0.0, 1.0, 0.0],
                    max_angle_rad: 10f64.to_radians(),
                    scale: (0.85, 1.2),
                },
            ],
            max_insufflation_mm: 5.0,
            axial_range: (0.7, 1.8),
            cross_section_range: (0.5, 2.0),
            max_ellipticity: 2.0,
            min_fold_margin: 0.2,
            max_attempts: 20,
            max_target_draws: 1000,
        }
    }
}

/// Everything needed to regenerate one synthetic mesh.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecipe {
    /// Barycentric weights over cylindrical, J-shaped, reverse-L, crescentic.
    pub shape_mix: [f64; 4],
    pub jitter: Vec<JointJitter>,
    pub insufflation_offset: f64,
    pub target_gc: f64,
    pub target_lc: f64,
    pub target_volume: f64,
    pub rng_seed: u64,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Per-recipe seed derived from the master seed, mesh index and attempt number.
pub(crate) fn derive_seed(seed: u64, index: u64, attempt: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(seed) ^ index) ^ attempt.wrapping_mul(0xD1B5_4A32_D192_ED03))
}

fn sample_mix(rng: &mut impl Rng) -> [f64; 4] {
    let e: [f64; 4] = std::array::from_fn(|_| Exp1.sample(rng));
    let s: f64 = e.iter().sum();
    e.map(|x| x / s)
}

/// Mesh after shape mixing, jitter and insufflation; dimensions not yet enforced.
fn pre_dimension_mesh(asset: &TemplateAsset, recipe: &GenerationRecipe) -> SynthResult<TriMesh> {
    let mixed = interpolate_shape_types(asset, recipe.shape_mix)?;
    let mesh = asset.mesh.with_vertices(mixed)?;
    let jittered = apply_jitter(asset, &mesh, &recipe.jitter)?;
    insufflate(&jittered, recipe.insufflation_offset)
}

/// Run the full pipeline for a recipe.
pub fn realize_recipe(asset: &TemplateAsset, recipe: &GenerationRecipe) -> SynthResult<TriMesh> {
    let pre = pre_dimension_mesh(asset, recipe)?;
    enforce_dimensions(
        &pre,
        asset,
        recipe.target_gc,
        recipe.target_lc,
        recipe.target_volume,
    )
}

enum Attempt {
    Accepted(TriMesh, GenerationRecipe),
    Rejected(String),
}

fn attempt(asset: &TemplateAsset, config: &GenerationConfig, seed: u64) -> SynthResult<Attempt> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape_mix = sample_mix(&mut rng);
    let jitter = sample_jitter_with(&config.jitter, &mut rng);
    let insufflation_offset = if config.max_insufflation_mm > 0.0 {
        rng.gen_range(0.0..=config.max_insufflation_mm)
    } else {
        0.0
    };
    let mut recipe = GenerationRecipe {
        shape_mix,
        jitter,
        insufflation_offset,
        target_gc: 0.0,
        target_lc: 0.0,
        target_volume: 0.0,
        rng_seed: seed,
    };
    let pre = match pre_dimension_mesh(asset, &recipe) {
        Ok(m) => m,
        Err(SynthError::AlreadySelfIntersecting(n)) => {
            return Ok(Attempt::Rejected(format!(
                "{n} self-intersections before insufflation"
            )))
        }
        Err(e) => return Err(e),
    };
    // Targets are uniform over the part of the bounds box the scale factors can reach.
    let b = &config.bounds;
    let mut found = None;
    for _ in 0..config.max_target_draws {
        let gc = rng.gen_range(b.gc.0..=b.gc.1);
        let lc = rng.gen_range(b.lc.0..=b.lc.1);
        let volume = rng.gen_range(b.volume.0..=b.volume.1);
        let Ok((v, sol)) = solve_dimensions(asset, pre.vertices(), gc, lc, volume) else {
            continue;
        };
        let (lo, hi) = config.cross_section_range;
        let within = |s: f64, (lo, hi): (f64, f64)| s >= lo && s <= hi;
        if within(sol.axial, config.axial_range)
            && within(sol.radial, (lo, hi))
            && within(sol.thickness, (lo, hi))
            && (sol.radial / sol.thickness).max(sol.thickness / sol.radial)
                <= config.max_ellipticity
            && fold_margin(asset, &v) >= config.min_fold_margin
        {
            log::debug!(
                "targets gc={gc:.1} lc={lc:.1} volume={volume:.0}: axial {:.3} radial {:.3} thickness {:.3}",
                sol.axial,
                sol.radial,
                sol.thickness
            );
            found = Some((gc, lc, volume));
            break;
        }
    }
    let Some((gc, lc, volume)) = found else {
        return Ok(Attempt::Rejected("no reachable dimension targets".into()));
    };
    recipe.target_gc = gc;
    recipe.target_lc = lc;
    recipe.target_volume = volume;
    let mesh = enforce_dimensions(&pre, asset, gc, lc, volume)?;
    let report = validate_mesh(&mesh, asset, b);
    if !report.passed {
        return Ok(Attempt::Rejected(report.failures.join("; ")));
    }
    Ok(Attempt::Accepted(mesh, recipe))
}

/// Generate `n` validated meshes. Output depends only on `(asset, config, seed)`.
pub fn generate_dataset(
    asset: &TemplateAsset,
    n: usize,
    config: &GenerationConfig,
    seed: u64,
) -> SynthResult<Vec<(TriMesh, GenerationRecipe)>> {
    if n == 0 {
        return Err(SynthError::BadBounds("n must be >= 1".into()));
    }
    config.bounds.check()?;
    let results: Vec<SynthResult<(Option<(TriMesh, GenerationRecipe)>, usize, usize)>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rejected = 0;
            for a in 0..config.max_attempts {
                match attempt(asset, config, derive_seed(seed, i as u64, a as u64))? {
                    Attempt::Accepted(m, r) => return Ok((Some((m, r)), a + 1, rejected)),
                    Attempt::Rejected(why) => {
                        log::debug!("mesh {i} attempt {a} rejected: {why}");
                        rejected += 1;
                    }
                }
            }
            Ok((None, config.max_attempts, rejected))
        })
        .collect();
    let mut out = Vec::with_capacity(n);
    let (mut attempts, mut rejected, mut missing) = (0, 0, 0);
    for r in results {
        let (entry, a, rej) = r?;
        attempts += a;
        rejected += rej;
        match entry {
            Some(e) => out.push(e),
            None => missing += 1,
        }
    }
    log::info!("generated {n} meshes in {attempts} attempts ({rejected} rejected)");
    if missing > 0 || rejected * 10 > attempts {
        return Err(SynthError::RejectionRate { rejected, attempts });
    }
    Ok(out)
}

/// Files written for one dataset mesh, relative to the dataset directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetEntry {
    pub index: usize,
    pub mesh: String,
    pub recipe: String,
    pub landmarks: String,
    pub dimensions: Dimensions,
}

fn io_err(path: &Path, e: std::io::Error) -> SynthError {
    MeshError::Io {
        path: path.display().to_string(),
        source: e,
    }
    .into()
}

/// Write `mesh_NNNN.ply`, `recipe_NNNN.json` and `mesh_NNNN.landmarks.json` per entry.
pub fn save_dataset(
    dir: &Path,
    asset: &TemplateAsset,
    items: &[(TriMesh, GenerationRecipe)],
) -> SynthResult<Vec<DatasetEntry>> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let mut entries = Vec::with_capacity(items.len());
    for (i, (mesh, recipe)) in items.iter().enumerate() {
        let mesh_name = format!("mesh_{i:04}.ply");
        let recipe_name = format!("recipe_{i:04}.json");
        let lm_name = format!("mesh_{i:04}.landmarks.json");
        save_mesh(mesh, &dir.join(&mesh_name))?;
        let rp = dir.join(&recipe_name);
        std::fs::write(
            &rp,
            serde_json::to_string_pretty(recipe).expect("recipe serializes"),
        )
        .map_err(|e| io_err(&rp, e))?;
        let positions = asset.landmarks().positions(mesh.vertices());
        LandmarkSet::point_bound(positions).save(&dir.join(&lm_name))?;
        entries.push(DatasetEntry {
            index: i,
            mesh: mesh_name,
            recipe: recipe_name,
            landmarks: lm_name,
            dimensions: super::ops::measure_dimensions(asset, mesh.vertices())?,
        });
    }
    Ok(entries)
}

/// Load every `mesh_*.ply` in a directory (sorted by name) with its landmarks when present.
pub fn load_dataset(dir: &Path) -> SynthResult<Vec<(PathBuf, TriMesh)>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| io_err(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|f| f.to_str())
                .is_some_and(|f| f.starts_with("mesh_") && f.ends_with(".ply"))
        })
        .collect();
    paths.sort();
    paths
        .into_iter()
        .map(|p| {
            let mut mesh = load_mesh(&p)?;
            let lm = p.with_extension("landmarks.json");
            if lm.exists() {
                mesh = mesh.with_landmarks(LandmarkSet::load(&lm)?)?;
            }
            Ok((p, mesh))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derived_seeds_differ() {
        let a = derive_seed(7, 0, 0);
        assert_ne!(a, derive_seed(7, 1, 0));
        assert_ne!(a, derive_seed(7, 0, 1));
        assert_ne!(a, derive_seed(8, 0, 0));
        assert_eq!(a, derive_seed(7, 0, 0));
    }

    #[test]
    fn mix_is_on_the_simplex() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let m = sample_mix(&mut rng);
            assert!(m.iter().all(|w| *w >= 0.0));
            assert!((m.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn bounds_checked() {
        assert!(DimensionBounds::default().check().is_ok());
        let b = DimensionBounds {
            gc: (300.0, 200.0),
            ..Default::default()
        };
        assert!(b.check().is_err());
    }
}
