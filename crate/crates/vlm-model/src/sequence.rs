//! Multimodal sequence layout: text tokens interleaved with image blocks.

use crate::error::{ModelError, Result};
use crate::tokenizer::{BOS, IMAGE};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Segment {
    /// A run of text tokens; `trained` marks completion tokens that carry a label.
    Text { ids: Vec<u32>, trained: bool },
    /// The projected tokens of image `index`, `len` positions long.
    Image { index: usize, len: usize },
}

impl Segment {
    pub fn len(&self) -> usize {
        match self {
            Segment::Text { ids, .. } => ids.len(),
            Segment::Image { len, .. } => *len,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Position-level layout of one example, before embedding.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SequencePlan {
    pub segments: Vec<Segment>,
}

/// Replace every [`IMAGE`] placeholder in `prompt` by a block of
/// `block_lens[i]` positions and append `completion` as labelled text.
///
/// The resulting length is `prompt.len() - n_placeholders + sum(block_lens) +
/// completion.len()`. Prompt and image positions carry no label.
pub fn assemble_sequence(prompt: &[u32], block_lens: &[usize], completion: &[u32]) -> Result<SequencePlan> {
    let placeholders = prompt.iter().filter(|&&t| t == IMAGE).count();
    if placeholders != block_lens.len() {
        return Err(ModelError::Sequence(format!(
            "{placeholders} image placeholders but {} image blocks",
            block_lens.len()
        )));
    }
    if completion.contains(&IMAGE) {
        return Err(ModelError::Sequence("image placeholder inside the completion".into()));
    }
    let mut segments = Vec::new();
    let mut run = Vec::new();
    let mut next_image = 0;
    for &t in prompt {
        if t == IMAGE {
            if !run.is_empty() {
                segments.push(Segment::Text {
                    ids: std::mem::take(&mut run),
                    trained: false,
                });
            }
            segments.push(Segment::Image {
                index: next_image,
                len: block_lens[next_image],
            });
            next_image += 1;
        } else {
            run.push(t);
        }
    }
    if !run.is_empty() {
        segments.push(Segment::Text { ids: run, trained: false });
    }
    if !completion.is_empty() {
        segments.push(Segment::Text {
            ids: completion.to_vec(),
            trained: true,
        });
    }
    Ok(SequencePlan { segments })
}

impl SequencePlan {
    pub fn len(&self) -> usize {
        self.segments.iter().map(Segment::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Per position: the token id where it is a labelled completion token.
    pub fn labels(&self) -> Vec<Option<usize>> {
        let mut out = Vec::with_capacity(self.len());
        for seg in &self.segments {
            match seg {
                Segment::Text { ids, trained: true } => {
                    out.extend(ids.iter().map(|&t| Some(t as usize)))
                }
                other => out.extend(std::iter::repeat_n(None, other.len())),
            }
        }
        out
    }

    /// Next-token targets: position `i` predicts the label at `i + 1`.
    pub fn targets(&self) -> Vec<Option<usize>> {
        let labels = self.labels();
        let mut out: Vec<Option<usize>> = labels.iter().skip(1).copied().collect();
        out.push(None);
        out
    }

    /// Append generated tokens as unlabelled text.
    pub fn push_text(&mut self, id: u32) {
        match self.segments.last_mut() {
            Some(Segment::Text { ids, trained: false }) => ids.push(id),
            _ => self.segments.push(Segment::Text {
                ids: vec![id],
                trained: false,
            }),
        }
    }

    /// Shorten to at most `max_len` positions by dropping unlabelled text
    /// tokens from the left. A leading [`BOS`], image blocks and labelled
    /// tokens are kept; if that is not enough the plan is overlength.
    pub fn truncate_left(&mut self, max_len: usize) -> Result<()> {
        let len = self.len();
        let mut excess = len.saturating_sub(max_len);
        if excess == 0 {
            return Ok(());
        }
        let mut keep_bos = matches!(
            self.segments.first(),
            Some(Segment::Text { ids, trained: false }) if ids.first() == Some(&BOS)
        );
        for seg in &mut self.segments {
            if excess == 0 {
                break;
            }
            if let Segment::Text { ids, trained: false } = seg {
                let start = usize::from(std::mem::take(&mut keep_bos));
                let removable = ids.len().saturating_sub(start);
                let cut = removable.min(excess);
                ids.drain(start..start + cut);
                excess -= cut;
            }
        }
        self.segments.retain(|s| !s.is_empty());
        if excess > 0 {
            return Err(ModelError::Overlength { len, max: max_len });
        }
        Ok(())
    }
}
