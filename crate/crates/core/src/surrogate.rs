//! Training-data harvest from full multiscale runs, batched basis prediction,
//! and the hybrid solve path where interior basis functions come from a
//! predictor while edge ramps and corrections are still solved locally.

use std::path::Path;

use crate::error::{CoreError, Result};
use crate::fvm::BoundarySpec;
use crate::grid::{extract_patch, CoarseLayout, PermField};
use crate::io::Container;
use crate::msfv::{self, MsfvRun};
use crate::nn::MlpModel;

/// Flat record store: one row per (realization, interior node), in
/// realization-major then node-major order. Inputs are log-permeability
/// patches, targets the matching basis windows, both row-major.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub layout_id: String,
    pub patch_dim: usize,
    pub realization_ids: Vec<usize>,
    pub node_ids: Vec<usize>,
    pub inputs: Vec<f64>,
    pub targets: Vec<f64>,
}

/// Borrowed train/validation halves of a dataset, split at realization
/// granularity so no realization contributes to both sides.
#[derive(Debug, Clone, Copy)]
pub struct Split<'a> {
    pub x_train: &'a [f64],
    pub y_train: &'a [f64],
    pub x_val: &'a [f64],
    pub y_val: &'a [f64],
    pub train_realizations: usize,
    pub val_realizations: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.realization_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.realization_ids.is_empty()
    }

    fn distinct_realizations(&self) -> Vec<usize> {
        let mut ids = Vec::new();
        for &r in &self.realization_ids {
            if ids.last() != Some(&r) {
                ids.push(r);
            }
        }
        ids
    }

    /// Reserves the last `round(fraction * m)` realizations for validation,
    /// where m is the number of distinct realizations present.
    pub fn split(&self, validation_fraction: f64) -> Result<Split<'_>> {
        if !(0.0..1.0).contains(&validation_fraction) {
            return Err(CoreError::Config(format!(
                "validation fraction {validation_fraction} outside [0, 1)"
            )));
        }
        let ids = self.distinct_realizations();
        let m = ids.len();
        let n_val = (validation_fraction * m as f64).round() as usize;
        if n_val == 0 {
            return Err(CoreError::Config(format!(
                "validation split is empty: {m} realizations at fraction {validation_fraction}"
            )));
        }
        if n_val >= m {
            return Err(CoreError::Config(format!(
                "validation split takes all {m} realizations"
            )));
        }
        let first_val_id = ids[m - n_val];
        let cut = self
            .realization_ids
            .iter()
            .position(|&r| r == first_val_id)
            .expect("id came from the dataset");
        let d = self.patch_dim;
        Ok(Split {
            x_train: &self.inputs[..cut * d],
            y_train: &self.targets[..cut * d],
            x_val: &self.inputs[cut * d..],
            y_val: &self.targets[cut * d..],
            train_realizations: m - n_val,
            val_realizations: n_val,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.save_with_provenance(path, "")
    }

    /// A nonempty `note` (say, a run manifest hash) is stored in the file
    /// metadata and ignored on load.
    pub fn save_with_provenance(&self, path: &Path, note: &str) -> Result<()> {
        let mut c = Container::new("msfv-dataset");
        if !note.is_empty() {
            c.set("provenance", note);
        }
        c.set("layout_id", &self.layout_id);
        c.set("patch_dim", self.patch_dim);
        c.set("records", self.len());
        c.add_section("realization_ids", self.realization_ids.iter().map(|&v| v as f64).collect());
        c.add_section("node_ids", self.node_ids.iter().map(|&v| v as f64).collect());
        c.add_section("inputs", self.inputs.clone());
        c.add_section("targets", self.targets.clone());
        c.write(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let c = Container::read(path, "msfv-dataset")?;
        let patch_dim: usize = c.get_parsed("patch_dim")?;
        let records: usize = c.get_parsed("records")?;
        let ds = Dataset {
            layout_id: c.get("layout_id")?.to_string(),
            patch_dim,
            realization_ids: c.section("realization_ids")?.iter().map(|&v| v as usize).collect(),
            node_ids: c.section("node_ids")?.iter().map(|&v| v as usize).collect(),
            inputs: c.section("inputs")?.to_vec(),
            targets: c.section("targets")?.to_vec(),
        };
        if ds.realization_ids.len() != records
            || ds.node_ids.len() != records
            || ds.inputs.len() != records * patch_dim
            || ds.targets.len() != records * patch_dim
        {
            return Err(CoreError::Format(format!(
                "{}: inconsistent dataset sections",
                path.display()
            )));
        }
        Ok(ds)
    }
}

pub fn layout_id(layout: &CoarseLayout) -> String {
    format!(
        "{}x{}/{}x{}",
        layout.grid.nx, layout.grid.ny, layout.ncx, layout.ncy
    )
}

#[derive(Debug, Clone, Default)]
pub struct HarvestReport {
    pub requested: usize,
    pub succeeded: usize,
    pub failed: Vec<(usize, String)>,
}

/// Runs the full multiscale solver on each realization and extracts one
/// (patch, basis window) record per interior node. Failed realizations are
/// skipped and listed in the report rather than aborting the harvest.
pub fn harvest(
    perms: &[PermField],
    layout: &CoarseLayout,
    bc: &BoundarySpec,
) -> Result<(Dataset, HarvestReport)> {
    if perms.is_empty() {
        return Err(CoreError::Config("harvest needs at least one realization".into()));
    }
    let interior = layout.interior_nodes();
    let (wx, wy) = layout.window_dims();
    let patch_dim = wx * wy;
    let mut ds = Dataset {
        layout_id: layout_id(layout),
        patch_dim,
        realization_ids: Vec::new(),
        node_ids: Vec::new(),
        inputs: Vec::new(),
        targets: Vec::new(),
    };
    let mut report = HarvestReport { requested: perms.len(), ..Default::default() };
    for (r, perm) in perms.iter().enumerate() {
        let run = match msfv::run_msfv(perm, layout, bc) {
            Ok(run) => run,
            Err(e) => {
                report.failed.push((r, e.to_string()));
                continue;
            }
        };
        report.succeeded += 1;
        for &k in &interior {
            let patch = extract_patch(perm, layout, k)?;
            let basis = &run.basis.bases[k];
            debug_assert_eq!(basis.values.len(), patch_dim);
            ds.realization_ids.push(r);
            ds.node_ids.push(k);
            ds.inputs.extend_from_slice(&patch);
            ds.targets.extend_from_slice(&basis.values);
        }
    }
    Ok((ds, report))
}

/// One inference call for a single patch; outputs stay in [0,1].
pub fn predict_basis(model: &MlpModel, patch: &[f64]) -> Result<Vec<f64>> {
    if patch.len() != model.config.input_dim {
        return Err(CoreError::Shape(format!(
            "patch has {} values, model expects {}",
            patch.len(),
            model.config.input_dim
        )));
    }
    model.predict(patch)
}

/// Source of interior-node basis windows for the hybrid path.
pub trait InteriorBasisProvider {
    fn interior_bases(&self, perm: &PermField, layout: &CoarseLayout) -> Result<Vec<Vec<f64>>>;
}

/// Batched prediction: all interior patches are stacked into one matrix so
/// the hidden-layer product runs as a single matrix-matrix multiply.
impl InteriorBasisProvider for MlpModel {
    fn interior_bases(&self, perm: &PermField, layout: &CoarseLayout) -> Result<Vec<Vec<f64>>> {
        let interior = layout.interior_nodes();
        let (wx, wy) = layout.window_dims();
        let dim = wx * wy;
        if self.config.input_dim != dim || self.config.output_dim != dim {
            return Err(CoreError::Shape(format!(
                "model is {}->{}, layout windows are {dim}",
                self.config.input_dim, self.config.output_dim
            )));
        }
        let mut batch = Vec::with_capacity(interior.len() * dim);
        for &k in &interior {
            batch.extend_from_slice(&extract_patch(perm, layout, k)?);
        }
        let out = self.predict(&batch)?;
        Ok(out.chunks_exact(dim).map(|c| c.to_vec()).collect())
    }
}

/// Supplies the exactly solved interior bases; substituting it into the
/// hybrid path must reproduce the plain multiscale solve.
pub struct OracleProvider;

impl InteriorBasisProvider for OracleProvider {
    fn interior_bases(&self, perm: &PermField, layout: &CoarseLayout) -> Result<Vec<Vec<f64>>> {
        // basis functions do not depend on wells or boundary fluxes, only
        // corrections do, so a sealed problem serves as the stand-in
        let bc = BoundarySpec {
            sides: [crate::fvm::SideBc::NoFlow; 4],
            sources: Vec::new(),
            pin_cell: 0,
            pin_value: 0.0,
        };
        let set = msfv::solve_basis_set(perm, layout, &bc)?;
        Ok(layout
            .interior_nodes()
            .into_iter()
            .map(|k| set.bases[k].values.clone())
            .collect())
    }
}

/// Multiscale solve with predicted interior bases: non-interior bases and
/// corrections are solved as usual, nodal deltas optionally re-imposed, the
/// set renormalized to a partition of unity, then the standard coarse solve,
/// interpolation and flux reconstruction run unchanged.
pub fn run_hybrid(
    perm: &PermField,
    layout: &CoarseLayout,
    bc: &BoundarySpec,
    provider: &impl InteriorBasisProvider,
    enforce_deltas: bool,
) -> Result<MsfvRun> {
    let windows = provider.interior_bases(perm, layout)?;
    let basis = msfv::hybrid_basis_set(perm, layout, bc, &windows, enforce_deltas)?;
    msfv::complete_run(basis, perm, layout, bc)
}
