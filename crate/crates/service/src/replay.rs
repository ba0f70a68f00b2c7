//! Offline re-execution of a persisted session's explain requests.

use std::collections::HashMap;
use std::sync::Arc;

use pdm_core::cf::fit_explainer;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::events::{Event, ExplainParams};
use crate::explain::run_explain;
use crate::store::DataDir;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplayReport {
    pub session_id: String,
    pub explain_requests: usize,
    /// Request ids whose recomputed outcome equals the logged one.
    pub matched: Vec<String>,
    pub mismatched: Vec<String>,
    /// Requests with no logged CounterfactualReturned.
    pub unanswered: Vec<String>,
}

impl ReplayReport {
    pub fn is_identical(&self) -> bool {
        self.mismatched.is_empty() && self.unanswered.is_empty()
    }
}

/// Rebuilds the session's explainer from disk and recomputes every logged
/// explain request, comparing against the logged CounterfactualReturned
/// payloads both structurally and as serialized text.
pub fn replay_session(data: &DataDir, session_id: &str) -> Result<ReplayReport> {
    let meta = data.read_session(session_id)?;
    let events = data.read_events(session_id)?;
    let model = Arc::new(data.load_model(&meta.model_id)?);
    let explainer = fit_explainer(model, &data.load_dataset(&meta.explainer_dataset_id)?)?;
    let dataset = data.load_dataset(&meta.dataset_id)?;

    let mut pending: HashMap<String, ExplainParams> = HashMap::new();
    let mut order = Vec::new();
    let mut report = ReplayReport {
        session_id: session_id.to_string(),
        explain_requests: 0,
        matched: Vec::new(),
        mismatched: Vec::new(),
        unanswered: Vec::new(),
    };
    for e in events {
        match e.event {
            Event::ExplainRequested { request_id, params } => {
                report.explain_requests += 1;
                order.push(request_id.clone());
                pending.insert(request_id, params);
            }
            Event::CounterfactualReturned { request_id, outcome } => {
                let Some(params) = pending.remove(&request_id) else {
                    report.mismatched.push(request_id);
                    continue;
                };
                let again = run_explain(&explainer, &dataset, &params)?;
                let same_text = serde_json::to_string(&again).ok() == serde_json::to_string(&outcome).ok();
                if again == outcome && same_text {
                    report.matched.push(request_id);
                } else {
                    report.mismatched.push(request_id);
                }
            }
            _ => {}
        }
    }
    report.unanswered = order.into_iter().filter(|id| pending.contains_key(id)).collect();
    Ok(report)
}
