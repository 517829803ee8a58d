//! Benchmark construction: subject aggregation, patient-trial eligibility
//! questions, impression generation with optional exemplars, and train/eval
//! overlap checks. Every builder is a pure function of its inputs and seed;
//! outputs are line-delimited [`BenchmarkInstance`] records.

pub mod error;
pub mod impression;
pub mod instance;
pub mod overlap;
pub mod patient_trial;
pub mod report;
pub mod shots;
pub mod shuffle;
pub mod subjects;
pub mod text;
pub mod trial;

pub use error::{BenchError, Result};
pub use impression::{build_impression_bench, ReportRow, StudyImage};
pub use instance::{read_jsonl, write_jsonl, BenchmarkInstance, Choice};
pub use overlap::{check_overlap, normalize_for_overlap, OverlapReport, TrainIndex};
pub use patient_trial::{build_patient_trial_bench, map_qrel_to_label, PatientNote, QrelRecord};
pub use report::BuildReport;
pub use shuffle::shuffle_options;
pub use subjects::aggregate_subjects;
pub use text::{clean_criteria, segment_sentences};
pub use trial::{build_trial_prompt, TrialDoc};
