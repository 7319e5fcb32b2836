use serde::{Deserialize, Serialize};
use spargebra::algebra::{GraphPattern, PropertyPathExpression};
use spargebra::term::{NamedNodePattern, TermPattern};
use spargebra::{Query, SparqlParser};

use super::schema::{is_standard_vocabulary, local_name, SchemaDocument};

const RDF_TYPE: &str = "http://www.w3.org/1999/02/22-rdf-syntax-ns#type";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TermRole {
    Property,
    Class,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub iri: String,
    pub role: TermRole,
    /// Inventory term with the same local name up to case, if any.
    pub suggestion: Option<String>,
}

/// Predicates and `rdf:type` objects used by the query but absent from the
/// schema inventory. Standard vocabularies (rdf, rdfs, owl, xsd) are exempt.
///
/// Violations are advisory; an unparsable query yields no violations.
pub fn validate_schema_compliance(query: &str, schema: &SchemaDocument) -> Vec<Violation> {
    let Ok(parsed) = SparqlParser::new().parse_query(query) else {
        return Vec::new();
    };
    let pattern = match &parsed {
        Query::Select { pattern, .. }
        | Query::Construct { pattern, .. }
        | Query::Describe { pattern, .. }
        | Query::Ask { pattern, .. } => pattern,
    };
    let mut used = Vec::new();
    collect(pattern, &mut used);

    let mut violations: Vec<Violation> = Vec::new();
    for (iri, role) in used {
        if is_standard_vocabulary(&iri) || schema.has_term(&iri) {
            continue;
        }
        if violations.iter().any(|v| v.iri == iri && v.role == role) {
            continue;
        }
        let local = local_name(&iri).to_lowercase();
        let pool = match role {
            TermRole::Property => &schema.inventory.properties,
            TermRole::Class => &schema.inventory.classes,
        };
        let suggestion = pool.iter().find(|t| local_name(t).to_lowercase() == local).cloned();
        violations.push(Violation { iri, role, suggestion });
    }
    violations
}

fn collect(pattern: &GraphPattern, out: &mut Vec<(String, TermRole)>) {
    match pattern {
        GraphPattern::Bgp { patterns } => {
            for triple in patterns {
                if let NamedNodePattern::NamedNode(p) = &triple.predicate {
                    out.push((p.as_str().to_owned(), TermRole::Property));
                    if p.as_str() == RDF_TYPE {
                        if let TermPattern::NamedNode(class) = &triple.object {
                            out.push((class.as_str().to_owned(), TermRole::Class));
                        }
                    }
                }
            }
        }
        GraphPattern::Path { path, .. } => collect_path(path, out),
        GraphPattern::Join { left, right }
        | GraphPattern::LeftJoin { left, right, .. }
        | GraphPattern::Union { left, right }
        | GraphPattern::Minus { left, right } => {
            collect(left, out);
            collect(right, out);
        }
        GraphPattern::Filter { inner, .. }
        | GraphPattern::Graph { inner, .. }
        | GraphPattern::Extend { inner, .. }
        | GraphPattern::OrderBy { inner, .. }
        | GraphPattern::Project { inner, .. }
        | GraphPattern::Distinct { inner }
        | GraphPattern::Reduced { inner }
        | GraphPattern::Slice { inner, .. }
        | GraphPattern::Group { inner, .. }
        | GraphPattern::Service { inner, .. } => collect(inner, out),
        #[allow(unreachable_patterns)]
        _ => {}
    }
}

fn collect_path(path: &PropertyPathExpression, out: &mut Vec<(String, TermRole)>) {
    match path {
        PropertyPathExpression::NamedNode(p) => out.push((p.as_str().to_owned(), TermRole::Property)),
        PropertyPathExpression::Reverse(inner)
        | PropertyPathExpression::ZeroOrMore(inner)
        | PropertyPathExpression::OneOrMore(inner)
        | PropertyPathExpression::ZeroOrOne(inner) => collect_path(inner, out),
        PropertyPathExpression::Sequence(a, b) | PropertyPathExpression::Alternative(a, b) => {
            collect_path(a, out);
            collect_path(b, out);
        }
        PropertyPathExpression::NegatedPropertySet(_) => {}
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SCHEMA: &str = include_str!("../../fixtures/enpkg_schema.ttl");
    const FIG_2A: &str = "PREFIX ns1: <https://enpkg.commons-lab.org/kg/>
SELECT (COUNT(DISTINCT ?feature) AS ?metaboliteCount)
WHERE { ?rawMaterial ns1:has_wd_id <http://www.wikidata.org/entity/Q15376858> .
?rawMaterial ns1:has_lab_process ?labExtract .
?labExtract ns1:has_LCMS ?analysis . ?analysis ns1:has_lcms_feature_list ?featureList .
?featureList ns1:has_lcms_feature ?feature . ?feature ns1:has_sirius_annotation ?annotation .
?annotation ns1:has_zodiac_score ?zodiacScore . ?annotation ns1:has_cosmic_score ?cosmicScore .
FILTER(?zodiacScore > 0.9 && ?cosmicScore > 0.3) }";

    fn schema() -> SchemaDocument {
        SchemaDocument::parse(SCHEMA).unwrap()
    }

    #[test]
    fn worked_example_is_compliant() {
        assert_eq!(validate_schema_compliance(FIG_2A, &schema()), []);
    }

    #[test]
    fn wrong_case_inchikey_property_is_one_violation() {
        let q = "PREFIX ns1: <https://enpkg.commons-lab.org/kg/>
SELECT ?k WHERE { ?a ns1:has_inchikey2d ?k . ?a a ns1:SiriusStructureAnnotation }";
        let v = validate_schema_compliance(q, &schema());
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].iri, "https://enpkg.commons-lab.org/kg/has_inchikey2d");
        assert_eq!(v[0].role, TermRole::Property);
        assert_eq!(v[0].suggestion.as_deref(), Some("https://enpkg.commons-lab.org/kg/has_InChIkey2D"));
    }

    #[test]
    fn standard_vocabulary_is_exempt() {
        let q = "PREFIX rdfs: <http://www.w3.org/2000/01/rdf-schema#>
PREFIX owl: <http://www.w3.org/2002/07/owl#>
SELECT ?c ?l WHERE { ?c a owl:Class ; rdfs:label ?l ; rdfs:subClassOf* ?p }";
        assert_eq!(validate_schema_compliance(q, &schema()), []);
    }

    #[test]
    fn unknown_class_and_path_property() {
        let q = "PREFIX ns1: <https://enpkg.commons-lab.org/kg/>
SELECT ?x WHERE { ?x a ns1:Spectrum . OPTIONAL { ?x ns1:has_lcms_feature/ns1:made_up ?y } }";
        let v = validate_schema_compliance(q, &schema());
        let iris: Vec<_> = v.iter().map(|v| (local_name(&v.iri), v.role)).collect();
        assert_eq!(iris, [("Spectrum", TermRole::Class), ("made_up", TermRole::Property)]);
    }
}
