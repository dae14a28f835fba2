//! Finite-difference verification of analytic gradients.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numerics::tensor::ParameterStore;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckConfig {
    /// Central-difference step. Too small drowns in f32 rounding noise,
    /// too large in truncation error.
    pub h: f32,
    /// Relative-error threshold for a coordinate to pass.
    pub tolerance: f32,
    /// Check every coordinate when a parameter has at most this many;
    /// otherwise check a seeded sample of this size.
    pub max_coords_per_param: usize,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig { h: 5e-3, tolerance: 1e-3, max_coords_per_param: 25, seed: 0 }
    }
}

#[derive(Debug, Clone)]
pub struct CoordReport {
    pub param: String,
    pub coord: usize,
    pub analytic: f32,
    pub numeric: f32,
    pub rel_error: f32,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub checked: usize,
    pub failed: Vec<CoordReport>,
    pub max_rel_error: f32,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failed.is_empty()
    }
}

fn rel_error(analytic: f32, numeric: f32) -> f32 {
    (analytic - numeric).abs() / f32::max(1.0, numeric.abs())
}

/// Compare analytic gradients against central finite differences.
///
/// `loss_fn` must be a pure function of the store's parameter values: it
/// rebuilds its graph from the current values and returns the scalar
/// loss. `analytic` holds the gradients from a backward pass over the
/// same loss at the unperturbed point, in store order.
pub fn gradient_check<F>(
    store: &mut ParameterStore,
    analytic: &[Vec<f32>],
    mut loss_fn: F,
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport>
where
    F: FnMut(&ParameterStore) -> f32,
{
    if !(1e-5..=1e-2).contains(&cfg.h) {
        return Err(Error::config(format!(
            "gradient check step h={} outside supported range [1e-5, 1e-2]",
            cfg.h
        )));
    }
    assert_eq!(analytic.len(), store.len(), "analytic gradient count must match store");

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut failed = Vec::new();
    let mut checked = 0usize;
    let mut max_rel = 0.0f32;

    for i in 0..store.len() {
        let n = store.tensor_at(i).numel();
        assert_eq!(analytic[i].len(), n, "analytic gradient length mismatch for {:?}", store.name_at(i));
        let coords: Vec<usize> = if n <= cfg.max_coords_per_param {
            (0..n).collect()
        } else {
            let mut all: Vec<usize> = (0..n).collect();
            all.shuffle(&mut rng);
            all.truncate(cfg.max_coords_per_param);
            all.sort_unstable();
            all
        };
        for j in coords {
            let orig = store.tensor_at(i).values()[j];
            store.tensor_at_mut(i).values_mut()[j] = orig + cfg.h;
            let plus = loss_fn(store);
            store.tensor_at_mut(i).values_mut()[j] = orig - cfg.h;
            let minus = loss_fn(store);
            store.tensor_at_mut(i).values_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * cfg.h);
            let a = analytic[i][j];
            let e = rel_error(a, numeric);
            max_rel = max_rel.max(e);
            checked += 1;
            if e >= cfg.tolerance {
                failed.push(CoordReport {
                    param: store.name_at(i).to_string(),
                    coord: j,
                    analytic: a,
                    numeric,
                    rel_error: e,
                });
            }
        }
    }
    Ok(GradCheckReport { checked, failed, max_rel_error: max_rel })
}

/// Snapshot gradients from the store in insertion order, for
/// [`gradient_check`]'s `analytic` argument.
pub fn collect_grads(store: &ParameterStore) -> Vec<Vec<f32>> {
    (0..store.len())
        .map(|i| {
            store
                .tensor_at(i)
                .grad()
                .map(|g| g.to_vec())
                .unwrap_or_else(|| vec![0.0; store.tensor_at(i).numel()])
        })
        .collect()
}
