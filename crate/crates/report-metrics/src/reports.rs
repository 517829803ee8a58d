//! Line-delimited report records and corpus-level scoring.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::bleu::{bleu4, corpus_bleu4};
use crate::composite::{radcliq_composite, reciprocal_mean, CompositeConfig};
use crate::embed::TrigramEmbedder;
use crate::entity::{Entity, EntityGraph, Relation};
use crate::error::{MetricError, Result};
use crate::extract::ToyExtractor;
use crate::radgraph::radgraph_partial_f1;
use crate::rate::{rate_similarity_f1, DEFAULT_TAU};

/// One report: its text, its entities, or both. Entities are extracted with
/// the toy lexicon when absent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportRecord {
    pub report_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entities: Option<Vec<Entity>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub relations: Vec<Relation>,
}

impl ReportRecord {
    pub fn graph(&self, extractor: &ToyExtractor) -> Result<EntityGraph> {
        let g = match (&self.entities, &self.text) {
            (Some(e), _) => EntityGraph {
                entities: e.clone(),
                relations: self.relations.clone(),
            },
            (None, Some(t)) => EntityGraph::new(extractor.extract(t)),
            (None, None) => {
                return Err(MetricError::Invalid(format!("report {} has neither text nor entities", self.report_id)))
            }
        };
        g.validate()?;
        Ok(g)
    }

    pub fn text(&self) -> Result<&str> {
        self.text
            .as_deref()
            .ok_or_else(|| MetricError::Invalid(format!("report {} has no text", self.report_id)))
    }
}

pub fn read_reports(path: &Path) -> Result<Vec<ReportRecord>> {
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(line).map_err(|e| MetricError::Parse {
            path: path.display().to_string(),
            line: i + 1,
            msg: e.to_string(),
        })?);
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricKind {
    Radgraph,
    Rate,
    Bleu,
    Radcliq,
}

impl FromStr for MetricKind {
    type Err = MetricError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "radgraph" => Ok(Self::Radgraph),
            "rate" => Ok(Self::Rate),
            "bleu" => Ok(Self::Bleu),
            "radcliq" => Ok(Self::Radcliq),
            _ => Err(MetricError::Invalid(format!("unknown metric {s:?} (radgraph, rate, bleu, radcliq)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportScore {
    pub report_id: String,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub metric: MetricKind,
    /// `mean`, `corpus` (BLEU over pooled counts) or `reciprocal_mean`.
    pub aggregation: String,
    pub aggregate: f64,
    pub per_report: Vec<ReportScore>,
}

#[derive(Clone, Debug)]
pub struct MetricOptions {
    pub tau: f64,
    pub composite: CompositeConfig,
    pub extractor: ToyExtractor,
}

impl Default for MetricOptions {
    fn default() -> Self {
        Self {
            tau: DEFAULT_TAU,
            composite: CompositeConfig::default(),
            extractor: ToyExtractor::default(),
        }
    }
}

/// Pair predictions with references by id, in reference order. Every
/// reference needs exactly one prediction and vice versa.
pub fn pair_reports<'a>(pred: &'a [ReportRecord], reference: &'a [ReportRecord]) -> Result<Vec<(&'a ReportRecord, &'a ReportRecord)>> {
    let mut by_id = BTreeMap::new();
    for p in pred {
        if by_id.insert(p.report_id.as_str(), p).is_some() {
            return Err(MetricError::Invalid(format!("two predictions for report {}", p.report_id)));
        }
    }
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for r in reference {
        if !seen.insert(r.report_id.as_str()) {
            return Err(MetricError::Invalid(format!("two references for report {}", r.report_id)));
        }
        let p = by_id
            .get(r.report_id.as_str())
            .ok_or_else(|| MetricError::Invalid(format!("no prediction for report {}", r.report_id)))?;
        out.push((*p, r));
    }
    if let Some(extra) = by_id.keys().find(|id| !seen.contains(*id)) {
        return Err(MetricError::Invalid(format!("prediction {extra} has no reference")));
    }
    Ok(out)
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

pub fn score_reports(pred: &[ReportRecord], reference: &[ReportRecord], metric: MetricKind, opts: &MetricOptions) -> Result<MetricReport> {
    let pairs = pair_reports(pred, reference)?;
    let embedder = TrigramEmbedder::default();
    let mut per_report = Vec::with_capacity(pairs.len());
    for (p, r) in &pairs {
        let value = match metric {
            MetricKind::Radgraph => radgraph_partial_f1(&p.graph(&opts.extractor)?, &r.graph(&opts.extractor)?),
            MetricKind::Rate => rate_similarity_f1(
                &p.graph(&opts.extractor)?.entities,
                &r.graph(&opts.extractor)?.entities,
                &embedder,
                opts.tau,
            ),
            MetricKind::Bleu => bleu4(p.text()?, r.text()?),
            MetricKind::Radcliq => {
                let g = radgraph_partial_f1(&p.graph(&opts.extractor)?, &r.graph(&opts.extractor)?);
                radcliq_composite(g, bleu4(p.text()?, r.text()?), &opts.composite)
            }
        };
        per_report.push(ReportScore {
            report_id: r.report_id.clone(),
            value,
        });
    }
    let values: Vec<f64> = per_report.iter().map(|s| s.value).collect();
    let (aggregation, aggregate) = match metric {
        MetricKind::Bleu => {
            let texts = pairs.iter().map(|(p, r)| Ok((p.text()?, r.text()?))).collect::<Result<Vec<_>>>()?;
            ("corpus", corpus_bleu4(&texts))
        }
        MetricKind::Radcliq => ("reciprocal_mean", reciprocal_mean(&values)?),
        _ => ("mean", mean(&values)),
    };
    Ok(MetricReport {
        metric,
        aggregation: aggregation.into(),
        aggregate,
        per_report,
    })
}
