use std::collections::HashMap;
use std::fs;
use std::path::Path;

use super::semantic::{AttributeKind, KindSet, SemanticType};
use crate::error::{Error, Result};

/// Which attribute kinds each reportable semantic type may carry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ApplicabilityTable {
    map: HashMap<SemanticType, KindSet>,
}

impl Default for ApplicabilityTable {
    fn default() -> Self {
        use AttributeKind::*;
        use SemanticType::*;

        let findings = KindSet::of(&[Location, Modifier, Value, Unit]);
        let drugs = KindSet::of(&[Modifier, Value, Unit, Purpose]);
        let procedures = KindSet::of(&[Location, Modifier, Value, Unit, Purpose]);
        let organisms = KindSet::of(&[Modifier, Location]);
        let behaviour = KindSet::of(&[Modifier, Value, Unit]);

        let mut map = HashMap::new();
        for t in [
            DiseaseSyndromeOrPathologicFunction,
            SignSymptomOrFinding,
            NeoplasticProcess,
            AnatomicalAbnormality,
            InjuryOrPoisoning,
            MentalOrBehavioralDysfunction,
            CellOrMolecularDysfunction,
            ClinicalAttribute,
            Physiology,
        ] {
            map.insert(t, findings);
        }
        map.insert(ChemicalOrDrug, drugs);
        for t in [
            DiagnosticProcedure,
            TherapeuticOrPreventiveProcedure,
            LaboratoryProcedure,
        ] {
            map.insert(t, procedures);
        }
        map.insert(Microorganism, organisms);
        map.insert(Eukaryote, organisms);
        map.insert(IndividualBehavior, behaviour);
        ApplicabilityTable { map }
    }
}

impl ApplicabilityTable {
    pub fn applicable(&self, t: SemanticType) -> Result<KindSet> {
        if !t.is_reportable() {
            return Err(Error::NonReportable(t));
        }
        Ok(self.map.get(&t).copied().unwrap_or_default())
    }

    pub fn is_applicable(&self, t: SemanticType, kind: AttributeKind) -> bool {
        self.applicable(t).map(|s| s.contains(kind)).unwrap_or(false)
    }

    pub fn set(&mut self, t: SemanticType, kinds: KindSet) -> Result<()> {
        if !t.is_reportable() {
            return Err(Error::NonReportable(t));
        }
        self.map.insert(t, kinds);
        Ok(())
    }

    pub fn load_overrides(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut table = ApplicabilityTable::default();
        table.apply_overrides(&text, &path.display().to_string())?;
        Ok(table)
    }

    /// Lines of `Type Name = kind, kind, ...`. Type names may contain commas,
    /// so the separator is `=`. An empty right-hand side clears the entry.
    pub fn apply_overrides(&mut self, text: &str, origin: &str) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (name, kinds) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(origin, i + 1, "expected `Type Name = kinds`"))?;
            let t: SemanticType = name
                .parse()
                .map_err(|e: super::semantic::UnknownSemanticType| {
                    Error::parse(origin, i + 1, e.to_string())
                })?;
            let set = kinds
                .split(',')
                .map(str::trim)
                .filter(|k| !k.is_empty())
                .map(|k| k.parse::<AttributeKind>())
                .collect::<std::result::Result<KindSet, _>>()
                .map_err(|e| Error::parse(origin, i + 1, e))?;
            self.set(t, set)
                .map_err(|e| Error::parse(origin, i + 1, e.to_string()))?;
        }
        Ok(())
    }
}

pub fn applicable_attributes(table: &ApplicabilityTable, t: SemanticType) -> Result<KindSet> {
    table.applicable(t)
}
