//! Embedding-similarity entity F1. Entities of opposite polarity never
//! match.

use crate::embed::{cosine, Embedder};
use crate::entity::Entity;
use crate::radgraph::f1_from_credit;

pub const DEFAULT_TAU: f64 = 0.5;

fn soft_scores(from: &[Entity], to: &[Entity], from_vecs: &[Vec<f64>], to_vecs: &[Vec<f64>], tau: f64) -> f64 {
    let mut total = 0.0;
    for (e, v) in from.iter().zip(from_vecs) {
        let mut best: f64 = 0.0;
        for (f, w) in to.iter().zip(to_vecs) {
            if e.polarity != f.polarity {
                continue;
            }
            match cosine(v, w) {
                Some(s) if s >= tau => best = best.max(s.min(1.0)),
                Some(_) => {}
                None => log::warn!("zero embedding for {:?} or {:?}; scored 0", e.text, f.text),
            }
        }
        total += best;
    }
    total
}

pub fn rate_similarity_f1(pred: &[Entity], reference: &[Entity], embedder: &dyn Embedder, tau: f64) -> f64 {
    if pred.is_empty() || reference.is_empty() {
        return f1_from_credit(0.0, pred.len(), reference.len());
    }
    let pv: Vec<_> = pred.iter().map(|e| embedder.embed(&e.text)).collect();
    let rv: Vec<_> = reference.iter().map(|e| embedder.embed(&e.text)).collect();
    let p = soft_scores(pred, reference, &pv, &rv, tau) / pred.len() as f64;
    let r = soft_scores(reference, pred, &rv, &pv, tau) / reference.len() as f64;
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}
