//! Entity-level graph F1 with a partial reward level.

use crate::entity::{Entity, EntityGraph};

pub const PARTIAL_CREDIT: f64 = 0.5;

/// Above this many entities on either side the assignment is greedy.
pub const EXACT_LIMIT: usize = 12;

/// 1 for identical entities, `partial` when only the text agrees, else 0.
pub fn match_credit_with(pred: &Entity, reference: &Entity, partial: f64) -> f64 {
    if pred.text != reference.text {
        0.0
    } else if pred.label == reference.label && pred.polarity == reference.polarity {
        1.0
    } else {
        partial
    }
}

pub fn entity_match_credit(pred: &Entity, reference: &Entity) -> f64 {
    match_credit_with(pred, reference, PARTIAL_CREDIT)
}

fn credit_matrix(pred: &[Entity], reference: &[Entity], partial: f64) -> Vec<Vec<f64>> {
    pred.iter()
        .map(|p| reference.iter().map(|r| match_credit_with(p, r, partial)).collect())
        .collect()
}

/// Maximum total credit over one-to-one assignments, by dynamic programming
/// over subsets of the smaller side.
pub fn assignment_exact(credit: &[Vec<f64>]) -> f64 {
    let rows = credit.len();
    let cols = credit.first().map_or(0, Vec::len);
    if rows == 0 || cols == 0 {
        return 0.0;
    }
    let (small, large, at): (usize, usize, Box<dyn Fn(usize, usize) -> f64>) = if cols <= rows {
        (cols, rows, Box::new(|l, s| credit[l][s]))
    } else {
        (rows, cols, Box::new(|l, s| credit[s][l]))
    };
    assert!(small <= 20, "exact assignment over {small} entities");
    let mut best = vec![f64::NEG_INFINITY; 1 << small];
    best[0] = 0.0;
    for l in 0..large {
        let prev = best.clone();
        for (mask, &v) in prev.iter().enumerate() {
            if v == f64::NEG_INFINITY {
                continue;
            }
            for s in 0..small {
                if mask & (1 << s) == 0 {
                    let next = mask | (1 << s);
                    let c = v + at(l, s);
                    if c > best[next] {
                        best[next] = c;
                    }
                }
            }
        }
    }
    best.into_iter().fold(0.0, f64::max)
}

/// Highest credit first, ties broken by (pred index, reference index).
pub fn assignment_greedy(credit: &[Vec<f64>]) -> f64 {
    let mut pairs: Vec<(f64, usize, usize)> = credit
        .iter()
        .enumerate()
        .flat_map(|(i, row)| row.iter().enumerate().map(move |(j, &c)| (c, i, j)))
        .filter(|p| p.0 > 0.0)
        .collect();
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut used_p = vec![false; credit.len()];
    let mut used_r = vec![false; credit.first().map_or(0, Vec::len)];
    let mut total = 0.0;
    for (c, i, j) in pairs {
        if !used_p[i] && !used_r[j] {
            used_p[i] = true;
            used_r[j] = true;
            total += c;
        }
    }
    total
}

pub fn f1_from_credit(credit: f64, n_pred: usize, n_ref: usize) -> f64 {
    match (n_pred, n_ref) {
        (0, 0) => 1.0,
        (0, _) | (_, 0) => 0.0,
        _ => {
            let p = credit / n_pred as f64;
            let r = credit / n_ref as f64;
            if p + r == 0.0 {
                0.0
            } else {
                2.0 * p * r / (p + r)
            }
        }
    }
}

pub fn radgraph_partial_f1_with(pred: &EntityGraph, reference: &EntityGraph, partial: f64) -> f64 {
    let (p, r) = (&pred.entities, &reference.entities);
    let credit = credit_matrix(p, r, partial);
    let total = if p.len().max(r.len()) <= EXACT_LIMIT {
        assignment_exact(&credit)
    } else {
        assignment_greedy(&credit)
    };
    f1_from_credit(total, p.len(), r.len())
}

pub fn radgraph_partial_f1(pred: &EntityGraph, reference: &EntityGraph) -> f64 {
    radgraph_partial_f1_with(pred, reference, PARTIAL_CREDIT)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::entity::Polarity::*;

    fn e(t: &str, l: &str, p: crate::entity::Polarity) -> Entity {
        Entity::new(t, l, p).unwrap()
    }

    #[test]
    fn credit_levels() {
        let a = e("effusion", "observation", Positive);
        assert_eq!(entity_match_credit(&a, &a), 1.0);
        assert_eq!(entity_match_credit(&a, &e("effusion", "observation", Negative)), 0.5);
        assert_eq!(entity_match_credit(&a, &e("effusion", "anatomy", Positive)), 0.5);
        assert_eq!(entity_match_credit(&a, &e("edema", "observation", Positive)), 0.0);
    }

    #[test]
    fn worked_examples() {
        let g = |v: Vec<Entity>| EntityGraph::new(v);
        let three = g(vec![
            e("effusion", "observation", Positive),
            e("left lung", "anatomy", Positive),
            e("pneumothorax", "observation", Negative),
        ]);
        assert_eq!(radgraph_partial_f1(&three, &three), 1.0);
        let other = g(vec![e("edema", "observation", Positive)]);
        assert_eq!(radgraph_partial_f1(&three, &other), 0.0);
        let reference = g(vec![e("effusion", "observation", Positive), e("edema", "observation", Negative)]);
        let pred = g(vec![e("effusion", "observation", Positive), e("edema", "observation", Positive)]);
        assert!((radgraph_partial_f1(&pred, &reference) - 0.75).abs() < 1e-12);
        assert_eq!(radgraph_partial_f1(&g(vec![]), &g(vec![])), 1.0);
        assert_eq!(radgraph_partial_f1(&g(vec![]), &reference), 0.0);
    }
}
