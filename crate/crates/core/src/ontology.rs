//! Characteristics, severity labels and the label-scheme reductions.
//!
//! Severity labels carry a total order used when several statements about
//! the same characteristic have to be collapsed into one document label:
//!
//! `NoLabel < Normal < Present < Mild < Moderate < Severe`
//!
//! `Present` (abnormal, unspecified severity) sits below the graded labels so
//! that a graded statement wins aggregation.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const DEFAULT_ONTOLOGY: &str = include_str!("../data/ontology.toml");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SeverityLabel {
    NoLabel,
    Normal,
    Mild,
    Moderate,
    Severe,
    Present,
}

impl SeverityLabel {
    /// All labels in declaration order.
    pub const ALL: [SeverityLabel; 6] = [
        SeverityLabel::NoLabel,
        SeverityLabel::Normal,
        SeverityLabel::Mild,
        SeverityLabel::Moderate,
        SeverityLabel::Severe,
        SeverityLabel::Present,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SeverityLabel::NoLabel => "NoLabel",
            SeverityLabel::Normal => "Normal",
            SeverityLabel::Mild => "Mild",
            SeverityLabel::Moderate => "Moderate",
            SeverityLabel::Severe => "Severe",
            SeverityLabel::Present => "Present",
        }
    }

    /// Labels that assert an abnormality.
    pub fn is_abnormal(self) -> bool {
        !matches!(self, SeverityLabel::NoLabel | SeverityLabel::Normal)
    }
}

impl fmt::Display for SeverityLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SeverityLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SeverityLabel::ALL
            .iter()
            .copied()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| Error::parse("severity label", format!("unknown label `{s}`")))
    }
}

impl PartialOrd for SeverityLabel {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for SeverityLabel {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        severity_rank(*self).cmp(&severity_rank(*other))
    }
}

pub fn severity_rank(label: SeverityLabel) -> u8 {
    match label {
        SeverityLabel::NoLabel => 0,
        SeverityLabel::Normal => 1,
        SeverityLabel::Present => 2,
        SeverityLabel::Mild => 3,
        SeverityLabel::Moderate => 4,
        SeverityLabel::Severe => 5,
    }
}

/// The most severe label of the collection, `NoLabel` when it is empty.
pub fn aggregate_labels<I>(labels: I) -> SeverityLabel
where
    I: IntoIterator<Item = SeverityLabel>,
{
    labels.into_iter().max().unwrap_or(SeverityLabel::NoLabel)
}

/// Collapses graded severities onto the three-label scheme
/// (`NoLabel`, `Normal`, `Present`).
pub fn simplify_label(label: SeverityLabel) -> SeverityLabel {
    match label {
        SeverityLabel::NoLabel => SeverityLabel::NoLabel,
        SeverityLabel::Normal => SeverityLabel::Normal,
        _ => SeverityLabel::Present,
    }
}

/// Which label set evaluation and document training operate on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelScheme {
    #[default]
    Full,
    Simplified,
}

impl LabelScheme {
    pub fn apply(self, label: SeverityLabel) -> SeverityLabel {
        match self {
            LabelScheme::Full => label,
            LabelScheme::Simplified => simplify_label(label),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Characteristic {
    pub id: String,
    pub display_name: String,
    /// Admissible labels, kept in declaration order of [`SeverityLabel`].
    pub labels: Vec<SeverityLabel>,
}

impl Characteristic {
    pub fn admits(&self, label: SeverityLabel) -> bool {
        self.labels.contains(&label)
    }

    /// Admissible labels under `scheme`, deduplicated, in rank order.
    pub fn labels_under(&self, scheme: LabelScheme) -> Vec<SeverityLabel> {
        let mut out: Vec<SeverityLabel> = self.labels.iter().map(|&l| scheme.apply(l)).collect();
        out.sort();
        out.dedup();
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Ontology {
    pub version: u32,
    pub characteristics: Vec<Characteristic>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct OntologyFile {
    version: u32,
    #[serde(default)]
    characteristic: Vec<CharacteristicEntry>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CharacteristicEntry {
    id: String,
    display_name: String,
    labels: Vec<String>,
}

impl Ontology {
    /// The eleven-characteristic ontology bundled with the crate.
    pub fn bundled() -> Ontology {
        load_ontology(DEFAULT_ONTOLOGY).expect("bundled ontology is valid")
    }

    pub fn get(&self, id: &str) -> Option<&Characteristic> {
        self.characteristics.iter().find(|c| c.id == id)
    }

    pub fn require(&self, id: &str) -> Result<&Characteristic> {
        self.get(id)
            .ok_or_else(|| Error::UnknownCharacteristic(id.to_string()))
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.characteristics.iter().position(|c| c.id == id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.characteristics.iter().map(|c| c.id.as_str())
    }

    pub fn check_label(&self, characteristic: &str, label: SeverityLabel) -> Result<()> {
        let c = self.require(characteristic)?;
        if c.admits(label) {
            Ok(())
        } else {
            Err(Error::InadmissibleLabel {
                characteristic: characteristic.to_string(),
                label,
            })
        }
    }
}

/// Parses and validates an ontology configuration file.
pub fn load_ontology(source: &str) -> Result<Ontology> {
    let file: OntologyFile = toml::from_str(source).map_err(|e| Error::parse("ontology", e))?;
    if file.characteristic.is_empty() {
        return Err(Error::parse(
            "ontology",
            "at least one [[characteristic]] table is required",
        ));
    }

    let mut seen = HashSet::new();
    let mut characteristics = Vec::with_capacity(file.characteristic.len());
    for (i, entry) in file.characteristic.into_iter().enumerate() {
        let ctx = format!("ontology: characteristic #{} (`{}`)", i + 1, entry.id);
        if entry.id.trim().is_empty() {
            return Err(Error::parse(ctx, "field `id` must not be empty"));
        }
        if !seen.insert(entry.id.clone()) {
            return Err(Error::DuplicateCharacteristic(entry.id));
        }
        let mut labels = Vec::with_capacity(entry.labels.len());
        for raw in &entry.labels {
            let label: SeverityLabel = raw.parse().map_err(|_| {
                Error::parse(&ctx, format!("field `labels`: unknown label `{raw}`"))
            })?;
            if !labels.contains(&label) {
                labels.push(label);
            }
        }
        for required in [SeverityLabel::NoLabel, SeverityLabel::Normal] {
            if !labels.contains(&required) {
                return Err(Error::parse(
                    &ctx,
                    format!("field `labels` must contain {required}"),
                ));
            }
        }
        labels.sort_by_key(|l| SeverityLabel::ALL.iter().position(|x| x == l));
        characteristics.push(Characteristic {
            id: entry.id,
            display_name: entry.display_name,
            labels,
        });
    }

    Ok(Ontology {
        version: file.version,
        characteristics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use SeverityLabel::*;

    #[test]
    fn ranks() {
        assert_eq!(severity_rank(Severe), 5);
        assert_eq!(severity_rank(Moderate), 4);
        assert_eq!(severity_rank(NoLabel), 0);
        assert_eq!(severity_rank(Present), 2);
        let ranks: HashSet<u8> = SeverityLabel::ALL
            .iter()
            .map(|&l| severity_rank(l))
            .collect();
        assert_eq!(ranks.len(), 6);
    }

    #[test]
    fn aggregation() {
        assert_eq!(aggregate_labels([Normal, Mild, Severe]), Severe);
        assert_eq!(aggregate_labels([]), NoLabel);
        assert_eq!(aggregate_labels([Present, Mild]), Mild);
        for l in SeverityLabel::ALL {
            assert_eq!(aggregate_labels([l, l]), l);
        }
    }

    #[test]
    fn simplification() {
        assert_eq!(simplify_label(Moderate), Present);
        assert_eq!(simplify_label(NoLabel), NoLabel);
        assert_eq!(simplify_label(Present), Present);
        for l in SeverityLabel::ALL {
            assert_eq!(simplify_label(simplify_label(l)), simplify_label(l));
        }
    }

    #[test]
    fn simplify_commutes_with_aggregate_exhaustively() {
        let all = SeverityLabel::ALL;
        let mut checked = 0;
        for len in 0..=4u32 {
            for code in 0..6usize.pow(len) {
                let mut c = code;
                let tuple: Vec<SeverityLabel> = (0..len)
                    .map(|_| {
                        let l = all[c % 6];
                        c /= 6;
                        l
                    })
                    .collect();
                let lhs = simplify_label(aggregate_labels(tuple.iter().copied()));
                let rhs = aggregate_labels(tuple.iter().map(|&l| simplify_label(l)));
                assert_eq!(lhs, rhs, "{tuple:?}");
                checked += 1;
            }
        }
        assert_eq!(checked, 1 + 6 + 36 + 216 + 1296);
    }

    #[test]
    fn label_strings_round_trip() {
        for l in SeverityLabel::ALL {
            assert_eq!(l.as_str().parse::<SeverityLabel>().unwrap(), l);
            let json = serde_json::to_string(&l).unwrap();
            assert_eq!(serde_json::from_str::<SeverityLabel>(&json).unwrap(), l);
        }
        assert!("mild".parse::<SeverityLabel>().is_err());
    }

    #[test]
    fn bundled_ontology() {
        let o = Ontology::bundled();
        assert_eq!(o.characteristics.len(), 11);
        let wma = o.get("wall_motion_abnormalities").unwrap();
        assert_eq!(wma.labels, vec![NoLabel, Normal, Present]);
        let with_present: Vec<&str> = o
            .characteristics
            .iter()
            .filter(|c| c.admits(Present))
            .map(|c| c.id.as_str())
            .collect();
        assert_eq!(with_present.len(), 4);
    }

    #[test]
    fn duplicate_id_rejected() {
        let src = r#"
version = 1
[[characteristic]]
id = "a"
display_name = "A"
labels = ["NoLabel", "Normal"]
[[characteristic]]
id = "a"
display_name = "A again"
labels = ["NoLabel", "Normal"]
"#;
        assert!(matches!(
            load_ontology(src),
            Err(Error::DuplicateCharacteristic(id)) if id == "a"
        ));
    }

    #[test]
    fn parse_errors_carry_location() {
        let src = "version = 1\n[[characteristic]]\nid = \"a\"\ndisplay_name = 3\nlabels = []\n";
        let err = load_ontology(src).unwrap_err().to_string();
        assert!(
            err.contains("line 4") || err.contains("display_name"),
            "{err}"
        );

        let src = "version = 1\n[[characteristic]]\nid = \"a\"\ndisplay_name = \"A\"\nlabels = [\"Normal\", \"Bad\"]\n";
        let err = load_ontology(src).unwrap_err().to_string();
        assert!(err.contains("Bad") && err.contains("labels"), "{err}");

        let src = "version = 1\n[[characteristic]]\nid = \"a\"\ndisplay_name = \"A\"\nlabels = [\"Normal\"]\n";
        assert!(load_ontology(src).is_err());
    }

    #[test]
    fn scheme_label_sets() {
        let o = Ontology::bundled();
        let ar = o.get("aortic_regurgitation").unwrap();
        assert_eq!(
            ar.labels_under(LabelScheme::Simplified),
            vec![NoLabel, Normal, Present]
        );
        assert_eq!(ar.labels_under(LabelScheme::Full).len(), 5);
    }
}
