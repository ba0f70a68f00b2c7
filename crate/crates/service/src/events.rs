//! Session event log records and the explain request/outcome payloads.

use pdm_core::cf::{Counterfactual, PlotSeries, SearchFailure, WhatIfReport};
use pdm_core::data::Label;
use serde::{Deserialize, Serialize};

/// One line of a session's `events.ndjson`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionEvent {
    /// Position in the log, starting at 0.
    pub seq: u64,
    /// Milliseconds since the Unix epoch.
    pub timestamp_ms: u64,
    #[serde(flatten)]
    pub event: Event,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload")]
pub enum Event {
    AnomalyDetected {
        window_id: u64,
        probabilities: Vec<f64>,
    },
    ExplainRequested {
        request_id: String,
        #[serde(flatten)]
        params: ExplainParams,
    },
    CounterfactualReturned {
        request_id: String,
        outcome: ExplainOutcome,
    },
    Accepted {
        request_id: String,
        note: Option<String>,
    },
    Rejected {
        request_id: String,
        note: Option<String>,
    },
}

impl Event {
    pub fn kind(&self) -> &'static str {
        match self {
            Event::AnomalyDetected { .. } => "AnomalyDetected",
            Event::ExplainRequested { .. } => "ExplainRequested",
            Event::CounterfactualReturned { .. } => "CounterfactualReturned",
            Event::Accepted { .. } => "Accepted",
            Event::Rejected { .. } => "Rejected",
        }
    }
}

/// A fully resolved explain request: channel names already mapped to indices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExplainParams {
    pub window_id: u64,
    pub target_class: Label,
    pub locked_channels: Vec<usize>,
    pub num_distractors: usize,
}

/// Result of an explain request. A failed search is a normal outcome that
/// tells the user which constraints to relax.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum ExplainOutcome {
    Found {
        counterfactual: Counterfactual,
        report: WhatIfReport,
        /// Per channel: preceding window, actual and counterfactual traces.
        series: Vec<PlotSeries>,
    },
    NotFound {
        failure: SearchFailure,
    },
}
