//! Knowledge-graph schema loaded from Turtle, plus the class/property
//! inventory extracted from it.

use std::collections::{BTreeMap, BTreeSet};

use oxttl::TurtleParser;
use oxigraph::model::{NamedOrBlankNode, Term};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const RDF: &str = "http://www.w3.org/1999/02/22-rdf-syntax-ns#";
pub const RDFS: &str = "http://www.w3.org/2000/01/rdf-schema#";
pub const OWL: &str = "http://www.w3.org/2002/07/owl#";
pub const XSD: &str = "http://www.w3.org/2001/XMLSchema#";

const RDF_TYPE: &str = "http://www.w3.org/1999/02/22-rdf-syntax-ns#type";
const RDFS_DOMAIN: &str = "http://www.w3.org/2000/01/rdf-schema#domain";
const RDFS_RANGE: &str = "http://www.w3.org/2000/01/rdf-schema#range";

const CLASS_TYPES: [&str; 2] = ["http://www.w3.org/2000/01/rdf-schema#Class", "http://www.w3.org/2002/07/owl#Class"];
const PROPERTY_TYPES: [&str; 4] = [
    "http://www.w3.org/1999/02/22-rdf-syntax-ns#Property",
    "http://www.w3.org/2002/07/owl#ObjectProperty",
    "http://www.w3.org/2002/07/owl#DatatypeProperty",
    "http://www.w3.org/2002/07/owl#AnnotationProperty",
];

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SchemaError {
    #[error("schema parse error at line {line}: {message}")]
    Parse { line: u64, message: String },
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Inventory {
    pub classes: BTreeSet<String>,
    pub properties: BTreeSet<String>,
    /// prefix label -> namespace IRI
    pub prefixes: BTreeMap<String, String>,
    pub domains: BTreeMap<String, BTreeSet<String>>,
    pub ranges: BTreeMap<String, BTreeSet<String>>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SchemaDocument {
    pub turtle_text: String,
    pub inventory: Inventory,
}

/// Namespaces whose terms never count as schema violations.
pub fn is_standard_vocabulary(iri: &str) -> bool {
    [RDF, RDFS, OWL, XSD].iter().any(|ns| iri.starts_with(ns))
}

/// Text after the last `#`, `/` or `:`.
pub fn local_name(iri: &str) -> &str {
    iri.rsplit(['#', '/', ':']).next().unwrap_or(iri)
}

impl SchemaDocument {
    pub fn parse(turtle_text: &str) -> Result<Self, SchemaError> {
        let mut inventory = Inventory::default();
        let mut parser = TurtleParser::new().for_slice(turtle_text.as_bytes());
        let mut declared_classes = BTreeSet::new();
        let mut referenced_classes = BTreeSet::new();
        for triple in parser.by_ref() {
            let triple = triple.map_err(|s| SchemaError::Parse {
                line: s.location().start.line + 1,
                message: s.message().to_owned(),
            })?;
            let NamedOrBlankNode::NamedNode(subject) = &triple.subject else { continue };
            let subject = subject.as_str();
            match triple.predicate.as_str() {
                RDF_TYPE => {
                    if let Term::NamedNode(class) = &triple.object {
                        if CLASS_TYPES.contains(&class.as_str()) {
                            declared_classes.insert(subject.to_owned());
                        } else if PROPERTY_TYPES.contains(&class.as_str()) {
                            inventory.properties.insert(subject.to_owned());
                        }
                    }
                }
                p @ (RDFS_DOMAIN | RDFS_RANGE) => {
                    inventory.properties.insert(subject.to_owned());
                    if let Term::NamedNode(target) = &triple.object {
                        let target = target.as_str();
                        let map = if p == RDFS_DOMAIN { &mut inventory.domains } else { &mut inventory.ranges };
                        map.entry(subject.to_owned()).or_default().insert(target.to_owned());
                        if !is_standard_vocabulary(target) {
                            referenced_classes.insert(target.to_owned());
                        }
                    }
                }
                _ => {}
            }
        }
        for (label, ns) in parser.prefixes() {
            inventory.prefixes.insert(label.to_owned(), ns.to_owned());
        }
        inventory.classes = declared_classes.into_iter().chain(referenced_classes).collect();
        if inventory.classes.is_empty() && inventory.properties.is_empty() {
            tracing::warn!("schema document declares no classes or properties");
        }
        Ok(Self { turtle_text: turtle_text.to_owned(), inventory })
    }

    pub fn is_empty(&self) -> bool {
        self.inventory.classes.is_empty() && self.inventory.properties.is_empty()
    }

    pub fn has_term(&self, iri: &str) -> bool {
        self.inventory.classes.contains(iri) || self.inventory.properties.contains(iri)
    }

    /// `prefix:local` when a declared prefix covers the IRI, else `<iri>`.
    pub fn compact(&self, iri: &str) -> String {
        self.inventory
            .prefixes
            .iter()
            .filter(|(_, ns)| iri.starts_with(ns.as_str()) && iri.len() > ns.len())
            .max_by_key(|(_, ns)| ns.len())
            .map(|(p, ns)| format!("{p}:{}", &iri[ns.len()..]))
            .unwrap_or_else(|| format!("<{iri}>"))
    }

    pub fn prefix_declarations(&self) -> String {
        self.inventory
            .prefixes
            .iter()
            .map(|(p, ns)| format!("PREFIX {p}: <{ns}>\n"))
            .collect()
    }

    /// The compact text form embedded in prompts: prefixes, classes, and
    /// properties with their declared domain/range.
    pub fn compact_summary(&self) -> String {
        let mut out = String::from("Prefixes:\n");
        out.push_str(&self.prefix_declarations());
        out.push_str("Classes:\n");
        for class in &self.inventory.classes {
            out.push_str(&format!("- {}\n", self.compact(class)));
        }
        out.push_str("Properties:\n");
        for prop in &self.inventory.properties {
            let fmt_set = |set: Option<&BTreeSet<String>>| {
                set.map(|s| s.iter().map(|c| self.compact(c)).collect::<Vec<_>>().join(" | "))
            };
            let mut line = format!("- {}", self.compact(prop));
            if let Some(d) = fmt_set(self.inventory.domains.get(prop)) {
                line.push_str(&format!(" domain {d}"));
            }
            if let Some(r) = fmt_set(self.inventory.ranges.get(prop)) {
                line.push_str(&format!(" range {r}"));
            }
            out.push_str(&line);
            out.push('\n');
        }
        out
    }

    /// Inventory terms whose local names share a case-folded token with `text`.
    pub fn related_terms(&self, text: &str) -> Vec<String> {
        let wanted: BTreeSet<String> = tokens(text).collect();
        self.inventory
            .classes
            .iter()
            .chain(&self.inventory.properties)
            .filter(|iri| tokens(local_name(iri)).any(|t| wanted.contains(&t)))
            .cloned()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }
}

const STOP_TOKENS: &[&str] = &[
    "has", "the", "and", "for", "with", "are", "was", "which", "what", "how", "many", "that", "this",
    "from", "all", "select", "where", "distinct", "filter", "count", "prefix",
];

/// Lower-cased alphanumeric tokens of length >= 3 with a simple plural `s`
/// removed. Splits on non-alphanumerics and camel-case boundaries
/// (`LCMSAnalysis` -> `lcms`, `analysis`).
fn tokens(text: &str) -> impl Iterator<Item = String> {
    let chars: Vec<char> = text.chars().collect();
    let mut words = Vec::new();
    let mut current = String::new();
    for (i, &ch) in chars.iter().enumerate() {
        if !ch.is_alphanumeric() {
            if !current.is_empty() {
                words.push(std::mem::take(&mut current));
            }
            continue;
        }
        if ch.is_uppercase() && !current.is_empty() {
            let prev = chars[i - 1];
            let next_lower = chars.get(i + 1).is_some_and(|c| c.is_lowercase());
            if prev.is_lowercase() || prev.is_numeric() || (prev.is_uppercase() && next_lower) {
                words.push(std::mem::take(&mut current));
            }
        }
        current.extend(ch.to_lowercase());
    }
    if !current.is_empty() {
        words.push(current);
    }
    words.into_iter().filter_map(|w| {
        if w.chars().count() < 3 || STOP_TOKENS.contains(&w.as_str()) {
            return None;
        }
        let plural = w.ends_with('s') && !["ss", "is", "us"].iter().any(|e| w.ends_with(e));
        if plural && w.chars().count() > 4 {
            Some(w[..w.len() - 1].to_owned())
        } else {
            Some(w)
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const FIVE_CLASSES: &str = include_str!("../../fixtures/schema_five_classes.ttl");

    #[test]
    fn five_class_fixture() {
        let schema = SchemaDocument::parse(FIVE_CLASSES).unwrap();
        assert_eq!(schema.inventory.classes.len(), 5);
        assert!(schema.inventory.prefixes.contains_key("ns1"));
    }

    #[test]
    fn empty_document_is_empty_inventory() {
        let schema = SchemaDocument::parse("").unwrap();
        assert!(schema.is_empty());
    }

    #[test]
    fn malformed_triple_reports_line() {
        let text = "@prefix ex: <http://example.org/> .\nex:a ex:b ex:c .\nex:a ex:b .\n";
        let err = SchemaDocument::parse(text).unwrap_err();
        let SchemaError::Parse { line, .. } = err;
        assert_eq!(line, 3);
    }

    #[test]
    fn prefix_map_round_trips() {
        let schema = SchemaDocument::parse(FIVE_CLASSES).unwrap();
        let rendered: String = schema
            .inventory
            .prefixes
            .iter()
            .map(|(p, ns)| format!("@prefix {p}: <{ns}> .\n"))
            .collect();
        let again = SchemaDocument::parse(&rendered).unwrap();
        assert_eq!(again.inventory.prefixes, schema.inventory.prefixes);
    }

    #[test]
    fn compaction_and_local_names() {
        let schema = SchemaDocument::parse(FIVE_CLASSES).unwrap();
        let ns = &schema.inventory.prefixes["ns1"];
        assert_eq!(schema.compact(&format!("{ns}LabExtract")), "ns1:LabExtract");
        assert_eq!(schema.compact("http://nowhere.org/x"), "<http://nowhere.org/x>");
        assert_eq!(local_name("http://a.org/kg/has_LCMS"), "has_LCMS");
        assert_eq!(local_name("http://a.org/kg#Thing"), "Thing");
    }

    #[test]
    fn related_terms_share_tokens() {
        let schema = SchemaDocument::parse(FIVE_CLASSES).unwrap();
        let related = schema.related_terms("Which extracts have an LCMS analysis?");
        assert!(related.iter().any(|t| t.ends_with("has_LCMS")));
        assert!(related.iter().any(|t| t.ends_with("LCMSAnalysis")));
        assert!(related.iter().any(|t| t.ends_with("LabExtract")));
        assert!(!related.iter().any(|t| t.ends_with("RawMaterial")));
    }

    #[test]
    fn tokenizer_splits_camel_case_and_acronyms() {
        let t: Vec<_> = tokens("LCMSAnalysis has_sirius_annotation InChIKey2D").collect();
        assert_eq!(t, ["lcms", "analysis", "sirius", "annotation", "key2"]);
    }
}
