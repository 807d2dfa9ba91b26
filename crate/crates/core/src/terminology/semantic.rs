use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Semantic type carried by a lexicon entry.
///
/// The reportable variants serialize as their printed names, commas included.
/// Everything else collapses to [`SemanticType::Other`] and is filtered out of
/// the structured output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SemanticType {
    AnatomicalAbnormality,
    CellOrMolecularDysfunction,
    ChemicalOrDrug,
    ClinicalAttribute,
    DiagnosticProcedure,
    DiseaseSyndromeOrPathologicFunction,
    Eukaryote,
    IndividualBehavior,
    InjuryOrPoisoning,
    LaboratoryProcedure,
    MentalOrBehavioralDysfunction,
    Microorganism,
    NeoplasticProcess,
    Physiology,
    SignSymptomOrFinding,
    TherapeuticOrPreventiveProcedure,
    Other,
}

impl SemanticType {
    pub const REPORTABLE: [SemanticType; 16] = [
        SemanticType::AnatomicalAbnormality,
        SemanticType::CellOrMolecularDysfunction,
        SemanticType::ChemicalOrDrug,
        SemanticType::ClinicalAttribute,
        SemanticType::DiagnosticProcedure,
        SemanticType::DiseaseSyndromeOrPathologicFunction,
        SemanticType::Eukaryote,
        SemanticType::IndividualBehavior,
        SemanticType::InjuryOrPoisoning,
        SemanticType::LaboratoryProcedure,
        SemanticType::MentalOrBehavioralDysfunction,
        SemanticType::Microorganism,
        SemanticType::NeoplasticProcess,
        SemanticType::Physiology,
        SemanticType::SignSymptomOrFinding,
        SemanticType::TherapeuticOrPreventiveProcedure,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SemanticType::AnatomicalAbnormality => "Anatomical Abnormality",
            SemanticType::CellOrMolecularDysfunction => "Cell or Molecular Dysfunction",
            SemanticType::ChemicalOrDrug => "Chemical or Drug",
            SemanticType::ClinicalAttribute => "Clinical Attribute",
            SemanticType::DiagnosticProcedure => "Diagnostic Procedure",
            SemanticType::DiseaseSyndromeOrPathologicFunction => {
                "Disease, Syndrome or Pathologic Function"
            }
            SemanticType::Eukaryote => "Eukaryote",
            SemanticType::IndividualBehavior => "Individual Behavior",
            SemanticType::InjuryOrPoisoning => "Injury or Poisoning",
            SemanticType::LaboratoryProcedure => "Laboratory Procedure",
            SemanticType::MentalOrBehavioralDysfunction => "Mental or Behavioral Dysfunction",
            SemanticType::Microorganism => "Microorganism",
            SemanticType::NeoplasticProcess => "Neoplastic Process",
            SemanticType::Physiology => "Physiology",
            SemanticType::SignSymptomOrFinding => "Sign, Symptom, or Finding",
            SemanticType::TherapeuticOrPreventiveProcedure => "Therapeutic or Preventive Procedure",
            SemanticType::Other => "Other",
        }
    }

    pub fn is_reportable(self) -> bool {
        self != SemanticType::Other
    }

    /// Parses a printed type name; unknown names become `Other`.
    pub fn from_name_lossy(name: &str) -> (SemanticType, bool) {
        match name.parse() {
            Ok(t) => (t, true),
            Err(_) => (SemanticType::Other, false),
        }
    }
}

impl fmt::Display for SemanticType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnknownSemanticType(pub String);

impl fmt::Display for UnknownSemanticType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "unknown semantic type `{}`", self.0)
    }
}

impl std::error::Error for UnknownSemanticType {}

impl FromStr for SemanticType {
    type Err = UnknownSemanticType;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let wanted = s.trim();
        SemanticType::REPORTABLE
            .iter()
            .chain(std::iter::once(&SemanticType::Other))
            .copied()
            .find(|t| t.name().eq_ignore_ascii_case(wanted))
            .ok_or_else(|| UnknownSemanticType(wanted.to_string()))
    }
}

impl Serialize for SemanticType {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for SemanticType {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// The attribute kinds a structured entity can carry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AttributeKind {
    Location,
    Modifier,
    Value,
    Unit,
    Purpose,
}

impl AttributeKind {
    pub const ALL: [AttributeKind; 5] = [
        AttributeKind::Location,
        AttributeKind::Modifier,
        AttributeKind::Value,
        AttributeKind::Unit,
        AttributeKind::Purpose,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AttributeKind::Location => "location",
            AttributeKind::Modifier => "modifier",
            AttributeKind::Value => "value",
            AttributeKind::Unit => "unit",
            AttributeKind::Purpose => "purpose",
        }
    }

    /// Locations and modifiers are lists; the rest are single values.
    pub fn is_list(self) -> bool {
        matches!(self, AttributeKind::Location | AttributeKind::Modifier)
    }

    fn bit(self) -> u8 {
        1 << (self as u8)
    }
}

impl fmt::Display for AttributeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AttributeKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let wanted = s.trim().to_ascii_lowercase();
        let wanted = wanted.strip_suffix('s').unwrap_or(&wanted);
        AttributeKind::ALL
            .iter()
            .copied()
            .find(|k| k.name() == wanted)
            .ok_or_else(|| format!("unknown attribute kind `{}`", s.trim()))
    }
}

/// A small set of [`AttributeKind`]s.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct KindSet(u8);

impl KindSet {
    pub const fn empty() -> Self {
        KindSet(0)
    }

    pub fn of(kinds: &[AttributeKind]) -> Self {
        kinds.iter().fold(KindSet::empty(), |s, &k| s.with(k))
    }

    pub fn with(self, kind: AttributeKind) -> Self {
        KindSet(self.0 | kind.bit())
    }

    pub fn contains(self, kind: AttributeKind) -> bool {
        self.0 & kind.bit() != 0
    }

    pub fn iter(self) -> impl Iterator<Item = AttributeKind> {
        AttributeKind::ALL.into_iter().filter(move |k| self.contains(*k))
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }
}

impl fmt::Debug for KindSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.iter()).finish()
    }
}

impl FromIterator<AttributeKind> for KindSet {
    fn from_iter<I: IntoIterator<Item = AttributeKind>>(iter: I) -> Self {
        iter.into_iter().fold(KindSet::empty(), KindSet::with)
    }
}
