//! Training examples and the synthetic corpora used at desk scale.
//!
//! Three generators mirror the three stages: short captions of a single
//! coloured shape, longer two-object descriptions on wide images (which tile
//! into two crops plus a thumbnail), and multiple-choice questions answered
//! by option letter.

use std::fs;
use std::path::Path;

use image::{Rgb, RgbImage};
use medvlm_model::image_io::load_ppm;
use medvlm_nn::init::stream_rng;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TrainError};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainExample {
    pub id: String,
    /// Prompt text; each `<image>` marker consumes one entry of `images`.
    pub prompt: String,
    pub images: Vec<RgbImage>,
    pub completion: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub id: String,
    pub examples: Vec<TrainExample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }
}

pub const COLORS: [(&str, [u8; 3]); 4] = [
    ("red", [220, 30, 30]),
    ("green", [30, 180, 60]),
    ("blue", [40, 60, 220]),
    ("yellow", [230, 210, 40]),
];
pub const SHAPES: [&str; 4] = ["circle", "square", "cross", "bar"];

fn inside(shape: &str, dx: f64, dy: f64, r: f64) -> bool {
    match shape {
        "circle" => dx * dx + dy * dy <= r * r,
        "square" => dx.abs() <= r * 0.85 && dy.abs() <= r * 0.85,
        "cross" => (dx.abs() <= r * 0.3 && dy.abs() <= r) || (dy.abs() <= r * 0.3 && dx.abs() <= r),
        _ => dy.abs() <= r * 0.3 && dx.abs() <= r,
    }
}

/// Paint `shape` centred in the `w x h` window at `(x0, 0)`.
fn draw(img: &mut RgbImage, x0: u32, w: u32, shape: &str, color: [u8; 3], rng: &mut impl Rng) {
    let h = img.height();
    let r = (w.min(h) as f64) * rng.random_range(0.3..0.42);
    let cx = x0 as f64 + w as f64 / 2.0 + rng.random_range(-2.0..2.0);
    let cy = h as f64 / 2.0 + rng.random_range(-2.0..2.0);
    for y in 0..h {
        for x in x0..x0 + w {
            if inside(shape, x as f64 + 0.5 - cx, y as f64 + 0.5 - cy, r) {
                img.put_pixel(x, y, Rgb(color));
            }
        }
    }
}

fn background(w: u32, h: u32, rng: &mut impl Rng) -> RgbImage {
    let base: u8 = rng.random_range(0..40);
    RgbImage::from_fn(w, h, |_, _| {
        let n: u8 = rng.random_range(0..12);
        Rgb([base + n, base + n, base + n])
    })
}

fn pick<T: Copy>(items: &[T], rng: &mut impl Rng) -> T {
    items[rng.random_range(0..items.len())]
}

/// Short captions: `a red circle`.
pub fn caption_corpus(id: &str, n: usize, seed: u64) -> Dataset {
    let examples = (0..n)
        .map(|i| {
            let mut rng = stream_rng(seed, &format!("{id}/{i}"));
            let (color, rgb) = pick(&COLORS, &mut rng);
            let shape = pick(&SHAPES, &mut rng);
            let side = rng.random_range(28..=40);
            let mut img = background(side, side, &mut rng);
            draw(&mut img, 0, side, shape, rgb, &mut rng);
            TrainExample {
                id: format!("{id}-{i:05}"),
                prompt: "<image>".into(),
                images: vec![img],
                completion: format!("a {color} {shape}"),
            }
        })
        .collect();
    Dataset { id: id.into(), examples }
}

/// Two objects side by side on a wide image, described left to right.
pub fn description_corpus(id: &str, n: usize, seed: u64) -> Dataset {
    let examples = (0..n)
        .map(|i| {
            let mut rng = stream_rng(seed, &format!("{id}/{i}"));
            let h = rng.random_range(28..=36);
            let mut img = background(2 * h, h, &mut rng);
            let mut parts = Vec::new();
            for (side, x0) in [("left", 0), ("right", h)] {
                let (color, rgb) = pick(&COLORS, &mut rng);
                let shape = pick(&SHAPES, &mut rng);
                draw(&mut img, x0, h, shape, rgb, &mut rng);
                parts.push(format!("{side}, a {color} {shape}"));
            }
            TrainExample {
                id: format!("{id}-{i:05}"),
                prompt: "<image>Describe the image.\n".into(),
                images: vec![img],
                completion: format!("{}; {}.", parts[0], parts[1]),
            }
        })
        .collect();
    Dataset { id: id.into(), examples }
}

/// Four-option questions about the colour or the shape, answered by letter.
pub fn instruct_corpus(id: &str, n: usize, seed: u64) -> Dataset {
    const KEYS: [char; 4] = ['A', 'B', 'C', 'D'];
    let examples = (0..n)
        .map(|i| {
            let mut rng = stream_rng(seed, &format!("{id}/{i}"));
            let (color, rgb) = pick(&COLORS, &mut rng);
            let shape = pick(&SHAPES, &mut rng);
            let side = rng.random_range(28..=40);
            let mut img = background(side, side, &mut rng);
            draw(&mut img, 0, side, shape, rgb, &mut rng);
            let ask_color = rng.random_bool(0.5);
            let (question, mut options, gold): (&str, Vec<&str>, &str) = if ask_color {
                ("What color is the object?", COLORS.iter().map(|c| c.0).collect(), color)
            } else {
                ("What shape is shown?", SHAPES.to_vec(), shape)
            };
            options.shuffle(&mut rng);
            let answer = KEYS[options.iter().position(|o| *o == gold).expect("gold among options")];
            let mut prompt = format!("<image>{question}\n");
            for (k, o) in KEYS.iter().zip(&options) {
                prompt.push_str(&format!("{k}. {o}\n"));
            }
            prompt.push_str("Answer with the option letter only.\n");
            TrainExample {
                id: format!("{id}-{i:05}"),
                prompt,
                images: vec![img],
                completion: answer.to_string(),
            }
        })
        .collect();
    Dataset { id: id.into(), examples }
}

/// Text-only warm-up data for the language model. Each sentence is
/// preceded by its content words, so the model learns to restate what the
/// context holds before it ever sees an image.
pub fn text_corpus(id: &str, n: usize, seed: u64) -> Dataset {
    let examples = (0..n)
        .map(|i| {
            let mut rng = stream_rng(seed, &format!("{id}/{i}"));
            let mut words = Vec::new();
            let mut phrase = |rng: &mut rand_chacha::ChaCha8Rng| {
                let (color, shape) = (pick(&COLORS, rng).0, pick(&SHAPES, rng));
                words.push(format!("{color} {shape}"));
                format!("a {color} {shape}")
            };
            let completion = if rng.random_bool(0.5) {
                phrase(&mut rng)
            } else {
                let left = phrase(&mut rng);
                let right = phrase(&mut rng);
                format!("left, {left}; right, {right}.")
            };
            TrainExample {
                id: format!("{id}-{i:05}"),
                prompt: format!("{}\n", words.join(", ")),
                images: Vec::new(),
                completion,
            }
        })
        .collect();
    Dataset { id: id.into(), examples }
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct ExampleRecord {
    id: String,
    prompt: String,
    completion: String,
    #[serde(default)]
    images: Vec<String>,
}

/// Line-delimited `{id, prompt, completion, images}` records; image paths are
/// portable pixmaps relative to the file's directory.
pub fn load_jsonl(id: &str, path: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut examples = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: ExampleRecord = serde_json::from_str(line).map_err(|e| {
            TrainError::Data(format!("{}:{}: {e}", path.display(), lineno + 1))
        })?;
        let images = rec
            .images
            .iter()
            .map(|p| load_ppm(&base.join(p)))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        examples.push(TrainExample {
            id: rec.id,
            prompt: rec.prompt,
            images,
            completion: rec.completion,
        });
    }
    Ok(Dataset { id: id.into(), examples })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generators_are_seeded() {
        let a = caption_corpus("c", 5, 1);
        assert_eq!(a, caption_corpus("c", 5, 1));
        assert_ne!(a, caption_corpus("c", 5, 2));
        assert!(a.examples.iter().all(|e| e.completion.starts_with("a ")));
    }

    #[test]
    fn text_corpus_has_no_images() {
        let d = text_corpus("t", 20, 0);
        assert!(d.examples.iter().all(|e| e.images.is_empty() && !e.prompt.contains("<image>")));
    }

    #[test]
    fn descriptions_are_wide() {
        let d = description_corpus("d", 3, 0);
        for e in &d.examples {
            assert_eq!(e.images[0].width(), 2 * e.images[0].height());
            assert!(e.completion.starts_with("left, a "));
        }
    }

    #[test]
    fn instruct_answers_match_options() {
        let d = instruct_corpus("i", 50, 0);
        for e in &d.examples {
            let key = e.completion.chars().next().unwrap();
            let line = e.prompt.lines().find(|l| l.starts_with(&format!("{key}. "))).unwrap();
            let text = &line[3..];
            assert!(COLORS.iter().any(|c| c.0 == text) || SHAPES.contains(&text));
        }
    }

    #[test]
    fn jsonl_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let img = RgbImage::from_pixel(4, 4, Rgb([1, 2, 3]));
        medvlm_model::image_io::save_ppm(&img, &dir.path().join("a.ppm")).unwrap();
        let path = dir.path().join("d.jsonl");
        fs::write(
            &path,
            "{\"id\":\"x\",\"prompt\":\"<image>hi\",\"completion\":\"yo\",\"images\":[\"a.ppm\"]}\n",
        )
        .unwrap();
        let d = load_jsonl("d", &path).unwrap();
        assert_eq!(d.examples[0].images[0], img);
        fs::write(&path, "{\"id\":\"x\",\"prompt\":\"\",\"completion\":\"\",\"extra\":1}\n").unwrap();
        assert!(load_jsonl("d", &path).is_err());
    }
}
