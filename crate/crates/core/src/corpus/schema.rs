use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::canonicalize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlotKind {
    Categorical,
    NonCategorical,
    Time,
}

impl SlotKind {
    pub const ALL: [SlotKind; 3] = [SlotKind::Categorical, SlotKind::NonCategorical, SlotKind::Time];

    pub fn as_str(self) -> &'static str {
        match self {
            SlotKind::Categorical => "categorical",
            SlotKind::NonCategorical => "non_categorical",
            SlotKind::Time => "time",
        }
    }
}

impl fmt::Display for SlotKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotDef {
    pub name: String,
    pub kind: SlotKind,
    #[serde(rename = "values", default)]
    pub allowed_values: Vec<String>,
}

impl SlotDef {
    pub fn domain(&self) -> &str {
        self.name.split_once('-').map(|(d, _)| d).unwrap_or(&self.name)
    }
}

/// The slot ontology. Slot names have the form `domain-slot`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SlotSchema {
    slots: Vec<SlotDef>,
    by_name: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct SchemaFile {
    slots: Vec<SlotDef>,
}

impl SlotSchema {
    pub fn new(slots: Vec<SlotDef>) -> Result<Self> {
        let mut by_name = HashMap::with_capacity(slots.len());
        let mut checked = Vec::with_capacity(slots.len());
        for mut slot in slots {
            validate_slot_name(&slot.name)?;
            slot.allowed_values = slot.allowed_values.iter().map(|v| canonicalize(v)).collect();
            match slot.kind {
                SlotKind::Categorical if slot.allowed_values.len() < 2 => {
                    return Err(Error::InvalidSchema(format!(
                        "categorical slot `{}` needs at least two allowed values",
                        slot.name
                    )));
                }
                SlotKind::NonCategorical | SlotKind::Time if !slot.allowed_values.is_empty() => {
                    return Err(Error::InvalidSchema(format!(
                        "{} slot `{}` must not list allowed values",
                        slot.kind, slot.name
                    )));
                }
                _ => {}
            }
            if slot.allowed_values.iter().any(String::is_empty) {
                return Err(Error::InvalidSchema(format!("empty allowed value for slot `{}`", slot.name)));
            }
            if by_name.insert(slot.name.clone(), checked.len()).is_some() {
                return Err(Error::InvalidSchema(format!("duplicate slot `{}`", slot.name)));
            }
            checked.push(slot);
        }
        Ok(SlotSchema {
            slots: checked,
            by_name,
        })
    }

    pub fn from_json_str(json: &str) -> Result<Self> {
        let file: SchemaFile = serde_json::from_str(json).map_err(|e| Error::Parse(e.to_string()))?;
        Self::new(file.slots)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let json = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&json).map_err(|e| e.in_file(path, None))
    }

    pub fn to_json_string(&self) -> String {
        let file = SchemaFile {
            slots: self.slots.clone(),
        };
        serde_json::to_string_pretty(&file).expect("schema serializes")
    }

    pub fn slots(&self) -> &[SlotDef] {
        &self.slots
    }

    pub fn get(&self, name: &str) -> Option<&SlotDef> {
        self.by_name.get(name).map(|&i| &self.slots[i])
    }

    pub fn contains(&self, name: &str) -> bool {
        self.by_name.contains_key(name)
    }

    pub fn kind_of(&self, name: &str) -> Option<SlotKind> {
        self.get(name).map(|s| s.kind)
    }

    pub fn slots_of_kind(&self, kind: SlotKind) -> impl Iterator<Item = &SlotDef> {
        self.slots.iter().filter(move |s| s.kind == kind)
    }
}

fn validate_slot_name(name: &str) -> Result<()> {
    let bad = |why: &str| Err(Error::InvalidSchema(format!("slot name `{name}` {why}")));
    if name.is_empty() {
        return bad("is empty");
    }
    if name.matches('-').count() != 1 {
        return bad("must contain exactly one `-` between domain and slot");
    }
    let (domain, slot) = name.split_once('-').expect("one separator");
    if domain.is_empty() || slot.is_empty() {
        return bad("has an empty domain or slot part");
    }
    if name.chars().any(|c| c.is_whitespace() || c == ';' || c == '=') {
        return bad("contains whitespace or a reserved character");
    }
    Ok(())
}
