//! Central finite-difference gradient checking.
//!
//! The checker only ever calls the forward closure; the analytic side comes
//! from one [`Tape::backward`]. Each checked entry is compared with
//! `|analytic - numeric| / max(|analytic|, |numeric|, scale_floor)`.

use rand::seq::index::sample;
use rand::Rng;

use crate::error::TensorError;
use crate::params::ParamStore;
use crate::tape::{Tape, Var};

#[derive(Debug, Clone, Copy)]
pub struct GradCheckConfig {
    pub eps: f64,
    pub rel_tol: f64,
    /// Denominator floor; below this magnitude the comparison is effectively
    /// absolute, where finite-difference round-off dominates.
    pub scale_floor: f64,
    /// Check at most this many randomly chosen entries per parameter tensor.
    pub max_entries_per_param: Option<usize>,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            rel_tol: 1e-4,
            scale_floor: 1e-4,
            max_entries_per_param: None,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct GradCheckReport {
    pub checked: usize,
    pub failures: usize,
    pub max_rel_error: f64,
    pub worst: Option<(String, usize, f64, f64)>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures == 0 && self.checked > 0
    }
}

fn scalar_loss<E, F>(store: &ParamStore, f: &mut F) -> Result<f64, E>
where
    E: From<TensorError>,
    F: FnMut(&ParamStore, &mut Tape) -> Result<Var, E>,
{
    let mut tape = Tape::new();
    let v = f(store, &mut tape)?;
    let t = tape.value(v);
    if t.len() != 1 {
        return Err(TensorError::NonScalarLoss(t.shape().to_vec()).into());
    }
    Ok(t.data()[0])
}

pub fn check_gradients<E, F, R>(
    store: &mut ParamStore,
    mut loss_fn: F,
    cfg: &GradCheckConfig,
    rng: &mut R,
) -> Result<GradCheckReport, E>
where
    E: From<TensorError>,
    F: FnMut(&ParamStore, &mut Tape) -> Result<Var, E>,
    R: Rng + ?Sized,
{
    let mut tape = Tape::new();
    let loss = loss_fn(store, &mut tape)?;
    let grads = tape.backward(loss)?;
    let mut analytic: Vec<Vec<f64>> = store.iter().map(|(_, p)| vec![0.0; p.value.len()]).collect();
    for (id, g) in grads.param_grads() {
        analytic[id.index()].copy_from_slice(g);
    }

    let mut report = GradCheckReport::default();
    let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
    for id in ids {
        let n = store.get(id).value.len();
        let entries: Vec<usize> = match cfg.max_entries_per_param {
            Some(k) if k < n => sample(rng, n, k).into_vec(),
            _ => (0..n).collect(),
        };
        for i in entries {
            let orig = store.get(id).value.data()[i];
            store.get_mut(id).value.data_mut()[i] = orig + cfg.eps;
            let plus = scalar_loss(store, &mut loss_fn)?;
            store.get_mut(id).value.data_mut()[i] = orig - cfg.eps;
            let minus = scalar_loss(store, &mut loss_fn)?;
            store.get_mut(id).value.data_mut()[i] = orig;

            let numeric = (plus - minus) / (2.0 * cfg.eps);
            let a = analytic[id.index()][i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(cfg.scale_floor);
            report.checked += 1;
            if rel > cfg.rel_tol || !rel.is_finite() {
                report.failures += 1;
            }
            if rel > report.max_rel_error || !rel.is_finite() {
                report.max_rel_error = rel;
                report.worst = Some((store.get(id).name.clone(), i, a, numeric));
            }
        }
    }
    Ok(report)
}
