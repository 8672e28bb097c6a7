//! Synthetic measurement datasets: discrete delta inflow sources placed
//! uniformly at random on the inflow set, each paired with the albedo
//! measurement of a ground-truth medium, with optional additive Gaussian
//! noise.
//!
//! Generation parallelizes over experiments; every experiment draws from its
//! own counter-derived RNG stream, so the result is independent of thread
//! scheduling and reproducible from the master seed alone.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::field::{BoundaryFlux, Medium, MediumKind};
use crate::grid::{BoundaryClass, BoundaryPair, BoundarySide, PhaseGrid};
use crate::iofmt::{self, Storage};
use crate::transport::{measure_outflow, solve_forward, SolveCounter, SolverOptions};

/// RNG stream offset for per-experiment draws (location, then noise).
const DATASET_STREAM_BASE: u64 = 1 << 32;

/// One inflow/outflow measurement record.
#[derive(Debug, Clone)]
pub struct ExperimentPair {
    /// Where the delta source sits on the inflow set.
    pub source: BoundaryPair,
    /// The normalized discrete delta inflow.
    pub inflow: BoundaryFlux,
    /// Measured outflow, possibly noisy.
    pub psi: BoundaryFlux,
    /// Standard deviation of the additive noise used.
    pub noise_std: f64,
}

/// Description of a ground-truth medium, serializable into manifests.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TruthSpec {
    /// The two-bump scattering coefficient ranging over [0.05, 0.45].
    TwoBumpScattering,
    /// The same bumps as an absorption coefficient (unit scattering).
    TwoBumpAbsorption,
    /// A constant coefficient.
    Constant { value: f64, medium: MediumSpecKind },
    /// Nodal values loaded from a field file.
    FieldFile { path: String, medium: MediumSpecKind },
}

/// Serializable mirror of [`MediumKind`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MediumSpecKind {
    Scattering,
    Absorption,
}

impl From<MediumSpecKind> for MediumKind {
    fn from(k: MediumSpecKind) -> Self {
        match k {
            MediumSpecKind::Scattering => MediumKind::Scattering,
            MediumSpecKind::Absorption => MediumKind::Absorption,
        }
    }
}

/// The two-bump coefficient profile used for ground truth.
pub fn bump_coefficient(x1: f64, x2: f64) -> f64 {
    let g1 = (-10.0 * (x1 - 0.25).powi(2) - 10.0 * (x2 - 0.25).powi(2)).exp();
    let g2 = (-10.0 * (x1 - 0.75).powi(2) - 10.0 * (x2 - 0.75).powi(2)).exp();
    (1.0 + 8.0 * g1 + 4.0 * g2) / 20.0
}

impl TruthSpec {
    /// Materialize the medium on a grid.
    pub fn resolve(&self, grid: &PhaseGrid) -> Result<Medium> {
        match self {
            TruthSpec::TwoBumpScattering => Ok(Medium::from_fn(
                grid,
                MediumKind::Scattering,
                bump_coefficient,
            )),
            TruthSpec::TwoBumpAbsorption => Ok(Medium::from_fn(
                grid,
                MediumKind::Absorption,
                bump_coefficient,
            )),
            TruthSpec::Constant { value, medium } => {
                Ok(Medium::constant(grid, (*medium).into(), *value))
            }
            TruthSpec::FieldFile { path, medium } => {
                let (_, values) = iofmt::read_flat(Path::new(path))?;
                Medium::new(grid, (*medium).into(), values)
            }
        }
    }
}

/// Normalized discrete delta on the inflow set: value `1 / (ds * w_theta)`
/// at the given location, zero elsewhere, so its boundary quadrature is 1.
pub fn delta_inflow(grid: &PhaseGrid, location: BoundaryPair) -> Result<BoundaryFlux> {
    let Some(pos) = grid.side_index(BoundarySide::Inflow, location.node, location.angle) else {
        return Err(Error::Mismatch(format!(
            "location (node {}, angle {}) is {:?}, not inflow",
            location.node,
            location.angle,
            grid.classification(location.node, location.angle)
        )));
    };
    let mut flux = BoundaryFlux::zeros(grid, BoundarySide::Inflow);
    let ds = grid.quadrature().segments[location.node];
    flux.values_mut()[pos] = 1.0 / (ds * grid.quadrature().angle_weight);
    Ok(flux)
}

/// Generate `n_pairs` experiments against the ground-truth medium.
///
/// Each experiment draws a uniform random inflow location (with
/// replacement), solves the forward problem for the delta source, measures
/// the outflow and perturbs it with independent zero-mean Gaussian noise of
/// the given standard deviation (skipped entirely when zero).
pub fn generate_dataset(
    grid: &PhaseGrid,
    sigma_true: &Medium,
    n_pairs: usize,
    noise_std: f64,
    seed: u64,
    opts: &SolverOptions,
    counter: &SolveCounter,
) -> Result<Vec<ExperimentPair>> {
    if n_pairs == 0 {
        return Err(Error::Config("dataset needs at least one experiment".into()));
    }
    if noise_std < 0.0 {
        return Err(Error::Config("noise_std must be nonnegative".into()));
    }
    let inflow_pairs = grid.side_pairs(BoundarySide::Inflow);
    (0..n_pairs)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(DATASET_STREAM_BASE + k as u64);
            let source = inflow_pairs[rng.random_range(0..inflow_pairs.len())];
            let inflow = delta_inflow(grid, source)?;
            let solve = solve_forward(grid, sigma_true, &inflow, None, opts, counter)
                .map_err(|e| Error::DatasetSolve {
                    index: k,
                    source: Box::new(e),
                })?;
            let mut psi = measure_outflow(grid, &solve.field);
            if noise_std > 0.0 {
                let normal = Normal::new(0.0, noise_std).expect("validated above");
                for v in psi.values_mut() {
                    *v += normal.sample(&mut rng);
                }
            }
            Ok(ExperimentPair {
                source,
                inflow,
                psi,
                noise_std,
            })
        })
        .collect()
}

/// Manifest describing a persisted dataset directory.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub n_cells_per_side: usize,
    pub n_angles: usize,
    pub truth: TruthSpec,
    pub seed: u64,
    pub noise_std: f64,
    pub n_pairs: usize,
    pub storage: Storage,
}

/// Persist a dataset: `manifest.json` plus one record per experiment under
/// `records/`, each holding the source location and the outflow values.
pub fn save_dataset(
    dir: &Path,
    manifest: &DatasetManifest,
    pairs: &[ExperimentPair],
) -> Result<()> {
    if manifest.n_pairs != pairs.len() {
        return Err(Error::Mismatch(format!(
            "manifest says {} pairs, got {}",
            manifest.n_pairs,
            pairs.len()
        )));
    }
    fs::create_dir_all(dir)?;
    let records = dir.join("records");
    fs::create_dir_all(&records)?;
    fs::write(
        dir.join("manifest.json"),
        serde_json::to_string_pretty(manifest).expect("manifest serializes"),
    )?;
    for (k, pair) in pairs.iter().enumerate() {
        let header = serde_json::json!({
            "experiment": k,
            "source_node": pair.source.node,
            "source_angle": pair.source.angle,
            "noise_std": pair.noise_std,
            "len": pair.psi.values().len(),
        });
        let name = format!("pair_{k:06}.{}", manifest.storage.extension());
        iofmt::write_flat(
            manifest.storage,
            &records.join(name),
            &header,
            "psi",
            pair.psi.values(),
        )?;
    }
    Ok(())
}

/// Load a dataset directory written by [`save_dataset`].
pub fn load_dataset(dir: &Path) -> Result<(PhaseGrid, DatasetManifest, Vec<ExperimentPair>)> {
    let manifest_path = dir.join("manifest.json");
    let manifest: DatasetManifest = serde_json::from_str(&fs::read_to_string(&manifest_path)?)
        .map_err(|e| Error::Format {
            path: manifest_path.display().to_string(),
            reason: e.to_string(),
        })?;
    let grid = PhaseGrid::new(manifest.n_cells_per_side, manifest.n_angles)?;
    let mut pairs = Vec::with_capacity(manifest.n_pairs);
    for k in 0..manifest.n_pairs {
        let name = format!("pair_{k:06}.{}", manifest.storage.extension());
        let path = dir.join("records").join(name);
        let (header, values) = iofmt::read_flat(&path)?;
        let node = header["source_node"].as_u64().ok_or_else(|| Error::Format {
            path: path.display().to_string(),
            reason: "missing source_node".into(),
        })? as usize;
        let angle = header["source_angle"]
            .as_u64()
            .ok_or_else(|| Error::Format {
                path: path.display().to_string(),
                reason: "missing source_angle".into(),
            })? as usize;
        let source = BoundaryPair { node, angle };
        if grid.classification(node, angle) != BoundaryClass::Inflow {
            return Err(Error::Format {
                path: path.display().to_string(),
                reason: "stored source is not an inflow pair".into(),
            });
        }
        let psi = BoundaryFlux::from_values(&grid, BoundarySide::Outflow, values)?;
        pairs.push(ExperimentPair {
            source,
            inflow: delta_inflow(&grid, source)?,
            psi,
            noise_std: manifest.noise_std,
        });
    }
    Ok((grid, manifest, pairs))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn delta_has_unit_quadrature_and_expected_height() {
        let g = PhaseGrid::new(20, 40).unwrap();
        // Interior-edge location: ds = 0.05, w_theta = 1/40 -> height 800.
        let loc = g
            .side_pairs(BoundarySide::Inflow)
            .iter()
            .copied()
            .find(|p| {
                let (i1, i2) = g.node_coords(p.node);
                i1 == 0 && i2 == 10
            })
            .unwrap();
        let d = delta_inflow(&g, loc).unwrap();
        let peak = d.values().iter().cloned().fold(0.0_f64, f64::max);
        assert!((peak - 800.0).abs() < 1e-9);
        let mass = g
            .boundary_inner_product(
                BoundarySide::Inflow,
                &d,
                &BoundaryFlux::constant(&g, BoundarySide::Inflow, 1.0),
            )
            .unwrap();
        assert!((mass - 1.0).abs() < 1e-12);
    }

    #[test]
    fn distinct_deltas_have_disjoint_support() {
        let g = PhaseGrid::new(4, 8).unwrap();
        let pairs = g.side_pairs(BoundarySide::Inflow);
        let a = delta_inflow(&g, pairs[0]).unwrap();
        let b = delta_inflow(&g, pairs[5]).unwrap();
        let overlap: f64 = a
            .values()
            .iter()
            .zip(b.values())
            .map(|(x, y)| x * y)
            .sum();
        assert_eq!(overlap, 0.0);
    }

    #[test]
    fn delta_rejects_non_inflow_location() {
        let g = PhaseGrid::new(4, 8).unwrap();
        let p = g.side_pairs(BoundarySide::Outflow)[0];
        assert!(delta_inflow(&g, p).is_err());
    }

    #[test]
    fn generation_is_deterministic() {
        let g = PhaseGrid::new(4, 8).unwrap();
        let sigma = Medium::constant(&g, MediumKind::Scattering, 0.2);
        let opts = SolverOptions::default();
        let a = generate_dataset(&g, &sigma, 6, 0.01, 42, &opts, &SolveCounter::new()).unwrap();
        let b = generate_dataset(&g, &sigma, 6, 0.01, 42, &opts, &SolveCounter::new()).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.source, y.source);
            assert_eq!(x.psi.values(), y.psi.values());
        }
        let c = generate_dataset(&g, &sigma, 6, 0.01, 43, &opts, &SolveCounter::new()).unwrap();
        assert!(a.iter().zip(&c).any(|(x, y)| x.psi.values() != y.psi.values()));
    }

    #[test]
    fn vacuum_medium_gives_single_ray_for_axis_delta() {
        let g = PhaseGrid::new(6, 8).unwrap();
        let sigma = Medium::constant(&g, MediumKind::Scattering, 0.0);
        let k_axis = (0..8).find(|&k| g.velocity(k) == (1.0, 0.0)).unwrap();
        let loc = BoundaryPair {
            node: g.node_index(0, 3),
            angle: k_axis,
        };
        let d = delta_inflow(&g, loc).unwrap();
        let out = solve_forward(
            &g,
            &sigma,
            &d,
            None,
            &SolverOptions::default(),
            &SolveCounter::new(),
        )
        .unwrap();
        let psi = measure_outflow(&g, &out.field);
        let exit = g
            .side_index(BoundarySide::Outflow, g.node_index(6, 3), k_axis)
            .unwrap();
        for (i, v) in psi.values().iter().enumerate() {
            if i == exit {
                assert!(*v > 0.0);
            } else {
                assert!(v.abs() < 1e-12, "stray outflow at {i}: {v}");
            }
        }
    }

    #[test]
    fn resolving_forward_reproduces_stored_measurements() {
        let g = PhaseGrid::new(5, 8).unwrap();
        let sigma = TruthSpec::TwoBumpScattering.resolve(&g).unwrap();
        let opts = SolverOptions::default();
        let pairs =
            generate_dataset(&g, &sigma, 4, 0.0, 9, &opts, &SolveCounter::new()).unwrap();
        for pair in &pairs {
            let out = solve_forward(&g, &sigma, &pair.inflow, None, &opts, &SolveCounter::new())
                .unwrap();
            let psi = measure_outflow(&g, &out.field);
            for (a, b) in psi.values().iter().zip(pair.psi.values()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn source_locations_are_roughly_uniform() {
        let g = PhaseGrid::new(4, 8).unwrap();
        let m = g.side_len(BoundarySide::Inflow);
        let draws = 200 * m;
        let mut counts = vec![0usize; m];
        for k in 0..draws {
            let mut rng = ChaCha8Rng::seed_from_u64(7);
            rng.set_stream(DATASET_STREAM_BASE + k as u64);
            counts[rng.random_range(0..m)] += 1;
        }
        let expected = draws as f64 / m as f64;
        let chi2: f64 = counts
            .iter()
            .map(|&c| {
                let d = c as f64 - expected;
                d * d / expected
            })
            .sum();
        // df = m - 1; mean df, std sqrt(2 df). Allow a generous margin.
        let df = (m - 1) as f64;
        assert!(
            chi2 < df + 6.0 * (2.0 * df).sqrt(),
            "chi2 = {chi2:.1} for df = {df}"
        );
    }

    #[test]
    fn two_bump_truth_range() {
        let g = PhaseGrid::new(20, 40).unwrap();
        let sigma = TruthSpec::TwoBumpScattering.resolve(&g).unwrap();
        let lo = sigma.values().iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = sigma
            .values()
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max);
        assert!(lo >= 0.05 - 1e-9, "min {lo}");
        assert!(hi <= 0.452 && hi > 0.44, "max {hi}");
    }
}
