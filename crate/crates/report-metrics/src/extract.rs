//! A toy lexicon extractor for demos: finds lexicon phrases in a report and
//! marks them negative when "no", "without" or "negative for" occurs in the
//! three tokens before, within the same clause.

use crate::bleu::tokenize;
use crate::entity::{Entity, Polarity};

pub const NEGATION_WINDOW: usize = 3;

#[derive(Clone, Debug)]
pub struct ToyExtractor {
    /// (phrase tokens, label), matched longest first.
    lexicon: Vec<(Vec<String>, String)>,
}

const DEFAULT_LEXICON: &[(&str, &str)] = &[
    ("pleural effusion", "observation"),
    ("effusion", "observation"),
    ("pneumothorax", "observation"),
    ("consolidation", "observation"),
    ("edema", "observation"),
    ("pulmonary edema", "observation"),
    ("cardiomegaly", "observation"),
    ("atelectasis", "observation"),
    ("opacity", "observation"),
    ("nodule", "observation"),
    ("fracture", "observation"),
    ("pneumonia", "observation"),
    ("lung", "anatomy"),
    ("left lung", "anatomy"),
    ("right lung", "anatomy"),
    ("heart", "anatomy"),
    ("mediastinum", "anatomy"),
    ("lung base", "anatomy"),
];

impl Default for ToyExtractor {
    fn default() -> Self {
        Self::new(DEFAULT_LEXICON.iter().map(|(p, l)| (p.to_string(), l.to_string())))
    }
}

fn negated(window: &[String]) -> bool {
    window.iter().any(|t| t == "no" || t == "without")
        || window.windows(2).any(|w| w[0] == "negative" && w[1] == "for")
}

impl ToyExtractor {
    pub fn new(entries: impl IntoIterator<Item = (String, String)>) -> Self {
        let mut lexicon: Vec<(Vec<String>, String)> =
            entries.into_iter().map(|(p, l)| (tokenize(&p), l)).filter(|(p, _)| !p.is_empty()).collect();
        lexicon.sort_by(|a, b| b.0.len().cmp(&a.0.len()).then(a.0.cmp(&b.0)));
        Self { lexicon }
    }

    pub fn extract(&self, report: &str) -> Vec<Entity> {
        let mut out = Vec::new();
        for clause in report.split(['.', ';', ':', '\n']) {
            let tokens = tokenize(clause);
            let mut i = 0;
            while i < tokens.len() {
                let hit = self.lexicon.iter().find(|(p, _)| tokens[i..].starts_with(p));
                match hit {
                    Some((phrase, label)) => {
                        let window = &tokens[i.saturating_sub(NEGATION_WINDOW)..i];
                        let polarity = if negated(window) { Polarity::Negative } else { Polarity::Positive };
                        out.push(Entity {
                            text: phrase.join(" "),
                            label: label.clone(),
                            polarity,
                        });
                        i += phrase.len();
                    }
                    None => i += 1,
                }
            }
        }
        out
    }
}
