//! Finite-difference gradient checking.

use std::fmt;

use super::graph::{Graph, NodeId};
use super::params::{ParamId, ParameterStore};
use crate::error::Result;
use crate::rng;

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    pub tolerance: f64,
    pub step: f64,
    /// When set, every graph is a training graph whose dropout stream is
    /// re-seeded identically, so all evaluations see the same masks.
    pub dropout_seed: Option<u64>,
    /// Restrict the check to these parameters (all parameters when `None`).
    pub params: Option<Vec<ParamId>>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-4,
            step: 1e-5,
            dropout_seed: None,
            params: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradMismatch {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_error: f64,
    pub failures: Vec<GradMismatch>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty() && self.checked > 0
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} elements checked, max relative error {:.3e}, {} failures",
            self.checked,
            self.max_error,
            self.failures.len()
        )?;
        for m in self.failures.iter().take(10) {
            write!(
                f,
                "\n  {}[{}]: analytic {:.8e} numeric {:.8e}",
                m.param, m.index, m.analytic, m.numeric
            )?;
        }
        Ok(())
    }
}

fn new_graph(store: &ParameterStore, seed: Option<u64>) -> Graph<'_> {
    match seed {
        Some(s) => Graph::training(store, rng::stream(s, rng::STREAM_DROPOUT)),
        None => Graph::new(store),
    }
}

/// Compares backward-pass gradients of the scalar built by `build` against
/// central differences. An element fails when
/// `|analytic - numeric| / max(1, |analytic|, |numeric|)` exceeds the tolerance.
pub fn gradient_check<F>(store: &mut ParameterStore, opts: &GradCheckOptions, build: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<'_>) -> Result<NodeId>,
{
    let analytic = {
        let mut g = new_graph(store, opts.dropout_seed);
        let loss = build(&mut g)?;
        g.backward(loss)?
    };
    let ids: Vec<ParamId> = match &opts.params {
        Some(ids) => ids.clone(),
        None => store.ids().collect(),
    };

    let eval = |store: &ParameterStore| -> Result<f64> {
        let mut g = new_graph(store, opts.dropout_seed);
        let loss = build(&mut g)?;
        Ok(g.value(loss).item())
    };

    let mut report = GradCheckReport::default();
    for id in ids {
        let n = store.value(id).len();
        for i in 0..n {
            let orig = store.value(id).data()[i];
            store.value_mut(id).data_mut()[i] = orig + opts.step;
            let plus = eval(store)?;
            store.value_mut(id).data_mut()[i] = orig - opts.step;
            let minus = eval(store)?;
            store.value_mut(id).data_mut()[i] = orig;

            let numeric = (plus - minus) / (2.0 * opts.step);
            let a = analytic.get(id).map_or(0.0, |t| t.data()[i]);
            let err = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
            report.checked += 1;
            report.max_error = report.max_error.max(err);
            if err > opts.tolerance {
                report.failures.push(GradMismatch {
                    param: store.name(id).to_string(),
                    index: i,
                    analytic: a,
                    numeric,
                });
            }
        }
    }
    Ok(report)
}
