use serde::{Deserialize, Serialize};

use crate::error::{MetricError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Positive,
    Negative,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Entity {
    pub text: String,
    pub label: String,
    pub polarity: Polarity,
}

/// Lowercase and collapse whitespace.
pub fn normalize_entity_text(s: &str) -> String {
    s.split_whitespace().map(str::to_lowercase).collect::<Vec<_>>().join(" ")
}

impl Entity {
    pub fn new(text: &str, label: &str, polarity: Polarity) -> Result<Self> {
        let e = Self {
            text: normalize_entity_text(text),
            label: label.to_string(),
            polarity,
        };
        e.validate()?;
        Ok(e)
    }

    pub fn validate(&self) -> Result<()> {
        if self.text.is_empty() {
            return Err(MetricError::Invalid("entity with empty text".into()));
        }
        if self.text != normalize_entity_text(&self.text) {
            return Err(MetricError::Invalid(format!("entity text {:?} is not normalized", self.text)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Relation {
    pub from: usize,
    pub to: usize,
    pub label: String,
}

/// Relations are carried for interchange but not scored.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EntityGraph {
    pub entities: Vec<Entity>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub relations: Vec<Relation>,
}

impl EntityGraph {
    pub fn new(entities: Vec<Entity>) -> Self {
        Self {
            entities,
            relations: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for e in &self.entities {
            e.validate()?;
        }
        let n = self.entities.len();
        if let Some(r) = self.relations.iter().find(|r| r.from >= n || r.to >= n) {
            return Err(MetricError::Invalid(format!(
                "relation {}->{} out of range for {n} entities",
                r.from, r.to
            )));
        }
        Ok(())
    }
}
