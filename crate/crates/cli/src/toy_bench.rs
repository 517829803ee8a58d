//! Held-out synthetic image questions in benchmark form, for exercising the
//! pipeline end to end with the toy model.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{anyhow, Result};
use medvlm_bench::{shuffle_options, BenchmarkInstance, Choice};
use medvlm_curriculum::data::instruct_corpus;
use medvlm_model::image_io::save_ppm;

pub const DATASET: &str = "toy-vqa";

/// `size` questions, images written under `out_dir/images`. Generator
/// streams are keyed by the dataset name, so they never coincide with the
/// training corpora.
pub fn build_toy_bench(size: usize, seed: u64, out_dir: &Path) -> Result<Vec<BenchmarkInstance>> {
    let corpus = instruct_corpus(DATASET, size, seed);
    std::fs::create_dir_all(out_dir.join("images"))?;
    let mut out = Vec::with_capacity(size);
    for ex in corpus.examples {
        let mut lines = ex.prompt.lines();
        let question = lines
            .next()
            .and_then(|l| l.strip_prefix("<image>"))
            .ok_or_else(|| anyhow!("unexpected prompt for {}", ex.id))?
            .to_string();
        let options: Vec<Choice> = lines
            .filter_map(|l| l.split_once(". "))
            .filter(|(k, _)| k.len() == 1)
            .map(|(k, t)| Choice {
                key: k.into(),
                text: t.into(),
            })
            .collect();
        let (options, answer_key) = shuffle_options(&options, &ex.completion, &ex.id, seed)?;
        let image = format!("images/{}.ppm", ex.id);
        save_ppm(&ex.images[0], &out_dir.join(&image))?;
        out.push(BenchmarkInstance {
            id: ex.id,
            dataset: DATASET.into(),
            subject: None,
            question,
            options,
            answer_key,
            images: vec![image],
            shots: Vec::new(),
            meta: BTreeMap::new(),
        });
    }
    Ok(out)
}
