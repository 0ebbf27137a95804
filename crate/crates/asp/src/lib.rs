//! Autopilot machinery: the data pipeline turning raw steady-state samples
//! into a compressed database of local means and trends, and the decision
//! layer choosing experiments under uncertainty, validating optimality,
//! reacting to events, and compensating measured disturbances between
//! decisions through an explicit feedback law.

pub mod autopilot;
pub mod compress;
pub mod data;
pub mod decision;
pub mod error;
pub mod vcl;

pub use autopilot::{Autopilot, AspConfig, AspProblem, AspStatus, EpisodeLog, PeriodRecord};
pub use compress::{
    cluster_and_regress, incremental_compress, AspRecord, Cluster, CompressedDatabase,
    CompressedRow, RowKind,
};
pub use data::{
    ctp_check, simple_compress, simple_consistency_window, summarize_experiment,
    time_as_disturbance, CtpVerdict, ExperimentSummary, MeasurementSequence,
};
pub use decision::{
    check_convergence, decision_trigger, designer_next_probe, optimality_indicators,
    select_experiment, Action, DecisionConfig, Event, Indicators, SelectorOutcome,
};
pub use error::AspError;
pub use vcl::{build_vcl, VclLaw};
