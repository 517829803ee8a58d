//! BLEU-4 with uniform weights, clipped counts, no smoothing.

use std::collections::HashMap;

pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(String::from)
        .collect()
}

fn ngrams(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut out = HashMap::new();
    for w in tokens.windows(n) {
        *out.entry(w).or_insert(0) += 1;
    }
    out
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
struct Counts {
    matched: [usize; 4],
    total: [usize; 4],
    pred_len: usize,
    ref_len: usize,
}

fn counts(pred: &str, reference: &str) -> Counts {
    let (p, r) = (tokenize(pred), tokenize(reference));
    let mut c = Counts {
        pred_len: p.len(),
        ref_len: r.len(),
        ..Default::default()
    };
    for n in 1..=4 {
        let rg = ngrams(&r, n);
        for (g, k) in ngrams(&p, n) {
            c.matched[n - 1] += k.min(rg.get(g).copied().unwrap_or(0));
        }
        c.total[n - 1] = p.len().saturating_sub(n - 1);
    }
    c
}

fn from_counts(c: &Counts) -> f64 {
    if c.pred_len == 0 || c.matched.contains(&0) {
        return 0.0;
    }
    let log_p: f64 = (0..4).map(|i| (c.matched[i] as f64 / c.total[i] as f64).ln()).sum::<f64>() / 4.0;
    let bp = if c.pred_len > c.ref_len {
        1.0
    } else {
        (1.0 - c.ref_len as f64 / c.pred_len as f64).exp()
    };
    bp * log_p.exp()
}

pub fn bleu4(pred: &str, reference: &str) -> f64 {
    from_counts(&counts(pred, reference))
}

/// Counts and lengths summed over all pairs before combining.
pub fn corpus_bleu4(pairs: &[(&str, &str)]) -> f64 {
    let mut total = Counts::default();
    for (p, r) in pairs {
        let c = counts(p, r);
        for i in 0..4 {
            total.matched[i] += c.matched[i];
            total.total[i] += c.total[i];
        }
        total.pred_len += c.pred_len;
        total.ref_len += c.ref_len;
    }
    from_counts(&total)
}
