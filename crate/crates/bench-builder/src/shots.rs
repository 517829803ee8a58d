//! In-context exemplars.

use crate::error::Result;
use crate::instance::BenchmarkInstance;
use crate::shuffle::{below, keyed_rng};

/// Give each instance `shots` distinct exemplars drawn from the other
/// instances, keyed by `(seed, "shot/" + id)`. Exemplars carry no shots of
/// their own. With too few instances the shot lists are shorter.
pub fn attach_shots(instances: &mut [BenchmarkInstance], shots: usize, seed: u64) -> Result<()> {
    if shots == 0 {
        return Ok(());
    }
    let pool: Vec<BenchmarkInstance> = instances
        .iter()
        .map(|i| BenchmarkInstance {
            shots: vec![],
            ..i.clone()
        })
        .collect();
    if pool.len() <= shots {
        log::warn!("{} instances cannot supply {shots} exemplars each", pool.len());
    }
    for (self_idx, inst) in instances.iter_mut().enumerate() {
        let mut rng = keyed_rng(seed, &format!("shot/{}", inst.id));
        let mut candidates: Vec<usize> = (0..pool.len()).filter(|&j| j != self_idx).collect();
        let mut chosen = Vec::new();
        while chosen.len() < shots && !candidates.is_empty() {
            let k = below(&mut rng, candidates.len() as u64) as usize;
            chosen.push(pool[candidates.remove(k)].clone());
        }
        inst.shots = chosen;
    }
    Ok(())
}
