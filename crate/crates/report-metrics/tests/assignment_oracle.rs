use medvlm_metrics::radgraph::{assignment_exact, assignment_greedy, entity_match_credit, f1_from_credit};
use medvlm_metrics::{radgraph_partial_f1, Entity, EntityGraph, Polarity};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_entities(rng: &mut ChaCha8Rng, n: usize) -> Vec<Entity> {
    const TEXTS: [&str; 4] = ["effusion", "edema", "left lung", "heart"];
    const LABELS: [&str; 2] = ["observation", "anatomy"];
    (0..n)
        .map(|_| Entity {
            text: TEXTS[rng.random_range(0..TEXTS.len())].into(),
            label: LABELS[rng.random_range(0..2)].into(),
            polarity: if rng.random_bool(0.5) { Polarity::Positive } else { Polarity::Negative },
        })
        .collect()
}

/// Best total credit by trying every injective map from the smaller side
/// into the larger one.
fn brute_force(pred: &[Entity], reference: &[Entity]) -> f64 {
    let (small, large, swap) = if pred.len() <= reference.len() {
        (pred, reference, false)
    } else {
        (reference, pred, true)
    };
    fn go(i: usize, small: &[Entity], large: &[Entity], used: &mut Vec<bool>, swap: bool) -> f64 {
        if i == small.len() {
            return 0.0;
        }
        let mut best = 0.0f64;
        for j in 0..large.len() {
            if used[j] {
                continue;
            }
            used[j] = true;
            let c = if swap {
                entity_match_credit(&large[j], &small[i])
            } else {
                entity_match_credit(&small[i], &large[j])
            };
            best = best.max(c + go(i + 1, small, large, used, swap));
            used[j] = false;
        }
        best
    }
    go(0, small, large, &mut vec![false; large.len()], swap)
}

fn matrix(pred: &[Entity], reference: &[Entity]) -> Vec<Vec<f64>> {
    pred.iter().map(|p| reference.iter().map(|r| entity_match_credit(p, r)).collect()).collect()
}

#[test]
fn both_assignment_paths_match_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for trial in 0..10_000 {
        let (np, nr) = (rng.random_range(0..=8), rng.random_range(0..=8));
        let pred = random_entities(&mut rng, np);
        let reference = random_entities(&mut rng, nr);
        let oracle = brute_force(&pred, &reference);
        let m = matrix(&pred, &reference);
        assert_eq!(assignment_exact(&m), oracle, "exact, trial {trial}");
        assert_eq!(assignment_greedy(&m), oracle, "greedy, trial {trial}");
        let f1 = radgraph_partial_f1(&EntityGraph::new(pred.clone()), &EntityGraph::new(reference.clone()));
        assert!((f1 - f1_from_credit(oracle, np, nr)).abs() < 1e-12, "f1, trial {trial}");
    }
}

#[test]
fn large_graphs_take_the_greedy_path() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..50 {
        let pred = random_entities(&mut rng, 20);
        let reference = random_entities(&mut rng, 15);
        let m = matrix(&pred, &reference);
        let f1 = radgraph_partial_f1(&EntityGraph::new(pred), &EntityGraph::new(reference));
        assert_eq!(f1, f1_from_credit(assignment_greedy(&m), 20, 15));
        assert!((0.0..=1.0).contains(&f1));
    }
}
