//! Explain requests as a pure function of (explainer, dataset, parameters),
//! shared by the HTTP handler and session replay.

use pdm_core::cf::{counterfactual_report, greedy_counterfactual, plot_series, CounterfactualQuery, Explainer};
use pdm_core::data::Dataset;

use crate::error::{Result, ServiceError};
use crate::events::{ExplainOutcome, ExplainParams};

pub fn run_explain(ex: &Explainer, ds: &Dataset, params: &ExplainParams) -> Result<ExplainOutcome> {
    let pos = ds
        .windows
        .binary_search_by_key(&params.window_id, |w| w.id)
        .map_err(|_| ServiceError::NotFound(format!("window {}", params.window_id)))?;
    let window = &ds.windows[pos];
    let query = CounterfactualQuery::new(window.clone(), params.target_class)
        .with_locks(params.locked_channels.iter().copied())
        .with_distractors(params.num_distractors);
    match greedy_counterfactual(ex, &query) {
        Ok(cf) => {
            let names = ex.channel_names();
            let context = pos.checked_sub(1).map(|p| &ds.windows[p]);
            Ok(ExplainOutcome::Found {
                report: counterfactual_report(&cf, window, names),
                series: plot_series(&cf, window, context, names),
                counterfactual: cf,
            })
        }
        Err(pdm_core::Error::NoCounterfactualFound(failure)) => Ok(ExplainOutcome::NotFound { failure: *failure }),
        Err(e) => Err(e.into()),
    }
}
