//! Chat templates and prompt formatting.

use std::collections::BTreeMap;
use std::path::Path;

use medvlm_bench::BenchmarkInstance;
use serde::{Deserialize, Serialize};

use crate::error::{EvalError, Result};

pub const LETTER_INSTRUCTION: &str = "Answer with the option letter only.";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Part {
    /// Path relative to the benchmark's image root.
    Image { path: String },
    Text { text: String },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: Vec<Part>,
}

impl ChatMessage {
    pub fn text(&self) -> String {
        self.content
            .iter()
            .filter_map(|p| match p {
                Part::Text { text } => Some(text.as_str()),
                Part::Image { .. } => None,
            })
            .collect()
    }
}

/// A registered, versioned template. Templates for other model families are
/// data: load them with [`TemplateRegistry::load_toml`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChatTemplate {
    pub id: String,
    pub version: u32,
    #[serde(default)]
    pub system: Option<String>,
    /// Appended to generation prompts, if set.
    #[serde(default)]
    pub generation_instruction: Option<String>,
}

#[derive(Clone, Debug)]
pub struct TemplateRegistry {
    templates: BTreeMap<String, ChatTemplate>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TemplateFile {
    template: Vec<ChatTemplate>,
}

impl TemplateRegistry {
    pub fn builtin() -> Self {
        let templates = [
            ChatTemplate {
                id: "medvlm-chat".into(),
                version: 1,
                system: Some(
                    "You are a medical expert. Answer using the images and text provided.".into(),
                ),
                generation_instruction: None,
            },
            ChatTemplate {
                id: "plain".into(),
                version: 1,
                system: None,
                generation_instruction: None,
            },
        ];
        Self {
            templates: templates.into_iter().map(|t| (t.id.clone(), t)).collect(),
        }
    }

    /// Add `[[template]]` entries from a TOML file; ids must be new.
    pub fn load_toml(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)?;
        let file: TemplateFile =
            toml::from_str(&text).map_err(|e| EvalError::Config(format!("{}: {e}", path.display())))?;
        for t in file.template {
            if self.templates.contains_key(&t.id) {
                return Err(EvalError::Config(format!("template {} registered twice", t.id)));
            }
            self.templates.insert(t.id.clone(), t);
        }
        Ok(())
    }

    pub fn get(&self, id: &str) -> Result<&ChatTemplate> {
        self.templates.get(id).ok_or_else(|| EvalError::UnknownTemplate(id.into()))
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.templates.keys().map(String::as_str)
    }
}

fn user_message(inst: &BenchmarkInstance, template: &ChatTemplate) -> ChatMessage {
    let mut content: Vec<Part> = inst.images.iter().map(|p| Part::Image { path: p.clone() }).collect();
    let mut text = inst.question.clone();
    if inst.is_generation() {
        if let Some(instr) = &template.generation_instruction {
            text.push('\n');
            text.push_str(instr);
        }
    } else {
        for c in &inst.options {
            text.push_str(&format!("\n{}. {}", c.key, c.text));
        }
        text.push('\n');
        text.push_str(LETTER_INSTRUCTION);
    }
    content.push(Part::Text { text });
    ChatMessage {
        role: Role::User,
        content,
    }
}

fn shot_answer(shot: &BenchmarkInstance) -> Result<String> {
    if shot.is_generation() {
        shot.meta
            .get("reference")
            .cloned()
            .ok_or_else(|| EvalError::Invalid(format!("exemplar {} has no reference answer", shot.id)))
    } else {
        Ok(shot.answer_key.clone())
    }
}

/// System message (if the template has one), one user/assistant pair per
/// exemplar, then the query. Images come before the text in each user turn.
pub fn format_prompt(inst: &BenchmarkInstance, template: &ChatTemplate) -> Result<Vec<ChatMessage>> {
    let mut out = Vec::new();
    if let Some(system) = &template.system {
        out.push(ChatMessage {
            role: Role::System,
            content: vec![Part::Text { text: system.clone() }],
        });
    }
    for shot in &inst.shots {
        out.push(user_message(shot, template));
        out.push(ChatMessage {
            role: Role::Assistant,
            content: vec![Part::Text {
                text: shot_answer(shot)?,
            }],
        });
    }
    out.push(user_message(inst, template));
    Ok(out)
}
