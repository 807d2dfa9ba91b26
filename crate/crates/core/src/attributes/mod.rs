//! Attribute extraction through pluggable backends, and the applicability
//! post-filter that separates "not applicable" from "null".

mod llm;
mod rules;

use std::fmt;

use serde::de::{self, Deserializer, Visitor};
use serde::ser::Serializer;
use serde::{Deserialize, Serialize};
use tracing::warn;

use crate::error::Result;
use crate::preprocess::Chunk;
use crate::recognition::Mention;
use crate::terminology::{ApplicabilityTable, AttributeKind, SemanticType};

pub use llm::{llm_extract, LlmBackend, LlmExtraction, PromptTemplates};
pub use rules::{
    rule_extract_locations, rule_extract_modifiers, rule_extract_value_unit, AnatomyLexicon,
    RuleBackend, WordLists,
};

pub const NOT_APPLICABLE: &str = "not applicable";

/// One attribute field: a value, `Null` (the note lacks it), or
/// `NotApplicable` (the semantic type cannot carry it).
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum Attr<T> {
    Value(T),
    #[default]
    Null,
    NotApplicable,
}

impl<T> Attr<T> {
    pub fn is_null(&self) -> bool {
        matches!(self, Attr::Null)
    }

    pub fn is_not_applicable(&self) -> bool {
        matches!(self, Attr::NotApplicable)
    }

    pub fn value(&self) -> Option<&T> {
        match self {
            Attr::Value(v) => Some(v),
            _ => None,
        }
    }
}

impl<T: Serialize> Serialize for Attr<T> {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Attr::Value(v) => v.serialize(s),
            Attr::Null => s.serialize_none(),
            Attr::NotApplicable => s.serialize_str(NOT_APPLICABLE),
        }
    }
}

impl<'de> Deserialize<'de> for Attr<String> {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct V;
        impl<'de> Visitor<'de> for V {
            type Value = Attr<String>;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a string, null or \"not applicable\"")
            }
            fn visit_unit<E: de::Error>(self) -> std::result::Result<Self::Value, E> {
                Ok(Attr::Null)
            }
            fn visit_none<E: de::Error>(self) -> std::result::Result<Self::Value, E> {
                Ok(Attr::Null)
            }
            fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<Self::Value, E> {
                Ok(if v == NOT_APPLICABLE {
                    Attr::NotApplicable
                } else {
                    Attr::Value(v.to_string())
                })
            }
        }
        d.deserialize_any(V)
    }
}

impl<'de> Deserialize<'de> for Attr<Vec<String>> {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct V;
        impl<'de> Visitor<'de> for V {
            type Value = Attr<Vec<String>>;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a list of strings, null or \"not applicable\"")
            }
            fn visit_unit<E: de::Error>(self) -> std::result::Result<Self::Value, E> {
                Ok(Attr::Null)
            }
            fn visit_none<E: de::Error>(self) -> std::result::Result<Self::Value, E> {
                Ok(Attr::Null)
            }
            fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<Self::Value, E> {
                if v == NOT_APPLICABLE {
                    Ok(Attr::NotApplicable)
                } else {
                    Err(E::invalid_value(de::Unexpected::Str(v), &self))
                }
            }
            fn visit_seq<A: de::SeqAccess<'de>>(
                self,
                mut seq: A,
            ) -> std::result::Result<Self::Value, A::Error> {
                let mut out = Vec::new();
                while let Some(s) = seq.next_element::<String>()? {
                    out.push(s);
                }
                Ok(Attr::Value(out))
            }
        }
        d.deserialize_any(V)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AttributeSet {
    pub locations: Attr<Vec<String>>,
    pub modifiers: Attr<Vec<String>>,
    pub value: Attr<String>,
    pub unit: Attr<String>,
    pub purpose: Attr<String>,
}

/// Backend output for one mention before applicability is applied. `None`
/// means the backend gave nothing (or said null) for that kind.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RawAttributes {
    slots: [Option<Vec<String>>; 5],
}

impl RawAttributes {
    pub fn get(&self, kind: AttributeKind) -> Option<&[String]> {
        self.slots[kind as usize].as_deref()
    }

    /// Empty value lists are stored as absent.
    pub fn set(&mut self, kind: AttributeKind, values: Vec<String>) {
        self.slots[kind as usize] = if values.is_empty() { None } else { Some(values) };
    }

    pub fn with(mut self, kind: AttributeKind, values: &[&str]) -> Self {
        self.set(kind, values.iter().map(|s| s.to_string()).collect());
        self
    }
}

/// One `entity: value` answer from a backend. An empty `values` is null.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeLine {
    pub entity: String,
    pub values: Vec<String>,
}

impl AttributeLine {
    pub fn new(entity: impl Into<String>, values: Vec<String>) -> Self {
        AttributeLine {
            entity: entity.into(),
            values,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct BackendOutput {
    pub lines: Vec<AttributeLine>,
    /// Response lines that could not be read as `entity: value`.
    pub unparsable: usize,
}

/// Produces attribute lines for the mentions of one chunk, one kind at a
/// time. Lines must come back in mention order.
pub trait AnnotatorBackend: Send + Sync {
    fn annotate(&self, chunk: &Chunk, mentions: &[Mention], kind: AttributeKind)
        -> Result<BackendOutput>;
}

fn resolve<T>(
    kind: AttributeKind,
    st: SemanticType,
    table: &ApplicabilityTable,
    raw: &RawAttributes,
    convert: impl FnOnce(&[String]) -> T,
) -> Attr<T> {
    let given = raw.get(kind);
    if !table.is_applicable(st, kind) {
        if given.is_some() {
            warn!(kind = %kind, semantic_type = %st, "dropping value for inapplicable attribute");
        }
        return Attr::NotApplicable;
    }
    match given {
        Some(v) => Attr::Value(convert(v)),
        None => Attr::Null,
    }
}

pub fn apply_applicability(
    semantic_type: SemanticType,
    raw: &RawAttributes,
    table: &ApplicabilityTable,
) -> AttributeSet {
    let scalar = |v: &[String]| v.join(", ");
    AttributeSet {
        locations: resolve(AttributeKind::Location, semantic_type, table, raw, <[String]>::to_vec),
        modifiers: resolve(AttributeKind::Modifier, semantic_type, table, raw, <[String]>::to_vec),
        value: resolve(AttributeKind::Value, semantic_type, table, raw, scalar),
        unit: resolve(AttributeKind::Unit, semantic_type, table, raw, scalar),
        purpose: resolve(AttributeKind::Purpose, semantic_type, table, raw, scalar),
    }
}

impl AttributeSet {
    pub fn is_not_applicable(&self, kind: AttributeKind) -> bool {
        match kind {
            AttributeKind::Location => self.locations.is_not_applicable(),
            AttributeKind::Modifier => self.modifiers.is_not_applicable(),
            AttributeKind::Value => self.value.is_not_applicable(),
            AttributeKind::Unit => self.unit.is_not_applicable(),
            AttributeKind::Purpose => self.purpose.is_not_applicable(),
        }
    }

    pub fn is_null(&self, kind: AttributeKind) -> bool {
        match kind {
            AttributeKind::Location => self.locations.is_null(),
            AttributeKind::Modifier => self.modifiers.is_null(),
            AttributeKind::Value => self.value.is_null(),
            AttributeKind::Unit => self.unit.is_null(),
            AttributeKind::Purpose => self.purpose.is_null(),
        }
    }
}
