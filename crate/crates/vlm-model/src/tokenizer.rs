//! Character-level tokenizer over printable ASCII.

pub const PAD: u32 = 0;
pub const BOS: u32 = 1;
pub const EOS: u32 = 2;
/// Placeholder replaced by an image's projected token block.
pub const IMAGE: u32 = 3;
const NEWLINE: u32 = 4;
const FIRST_PRINTABLE: u32 = 5;
pub const VOCAB_SIZE: usize = 5 + 95;

/// Literal marker in prompt text that becomes an [`IMAGE`] placeholder.
pub const IMAGE_MARKER: &str = "<image>";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Tokenizer;

impl Tokenizer {
    pub fn vocab_size(&self) -> usize {
        VOCAB_SIZE
    }

    fn encode_char(c: char) -> u32 {
        match c {
            '\n' => NEWLINE,
            ' '..='~' => FIRST_PRINTABLE + (c as u32 - ' ' as u32),
            '\t' => FIRST_PRINTABLE,
            _ => FIRST_PRINTABLE + ('?' as u32 - ' ' as u32),
        }
    }

    /// Encode plain text; characters outside printable ASCII become `?`.
    pub fn encode(&self, text: &str) -> Vec<u32> {
        text.chars().map(Self::encode_char).collect()
    }

    /// Encode text, mapping every `<image>` marker to the [`IMAGE`] token.
    pub fn encode_with_images(&self, text: &str) -> Vec<u32> {
        let mut out = Vec::with_capacity(text.len());
        for (i, part) in text.split(IMAGE_MARKER).enumerate() {
            if i > 0 {
                out.push(IMAGE);
            }
            out.extend(self.encode(part));
        }
        out
    }

    pub fn decode(&self, ids: &[u32]) -> String {
        ids.iter()
            .filter_map(|&id| match id {
                NEWLINE => Some('\n'),
                IMAGE => None,
                id if (FIRST_PRINTABLE..FIRST_PRINTABLE + 95).contains(&id) => {
                    char::from_u32(' ' as u32 + id - FIRST_PRINTABLE)
                }
                _ => None,
            })
            .collect()
    }

    /// Token id of a single printable character.
    pub fn char_id(&self, c: char) -> u32 {
        Self::encode_char(c)
    }
}
