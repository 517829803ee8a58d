//! Evaluation harness: chat-style prompts, a single greedy decode per
//! instance (in-process, over HTTP, or scripted), strict option extraction
//! and exact-match accuracy.

pub mod decode;
pub mod error;
pub mod extract;
pub mod local;
pub mod run;
pub mod score;
pub mod template;

pub use decode::{decode_once, DecodeParams, Decoder, EndpointConfig, HttpDecoder, Scripted, ScriptedDecoder};
pub use error::{EvalError, Result};
pub use extract::extract_option;
pub use local::LocalDecoder;
pub use run::{run_eval, EvalOptions, EvalOutcome, EvalSummary};
pub use score::{score, EvalRecord, ScoreSummary};
pub use template::{format_prompt, ChatMessage, ChatTemplate, TemplateRegistry};
