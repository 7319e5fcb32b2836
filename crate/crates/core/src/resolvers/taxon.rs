use std::collections::BTreeMap;
use std::sync::Arc;

use crate::sparql::endpoint::SparqlEndpoint;

use super::{EntityKind, EntitySource, ResolveError, ResolvedEntity};

/// Taxon names to Wikidata entity IRIs: match on the taxon-name property,
/// falling back to the English label.
pub struct TaxonResolver {
    endpoint: Arc<dyn SparqlEndpoint>,
}

/// Escapes a value for a double-quoted SPARQL string literal.
pub fn sparql_string(value: &str) -> String {
    let mut out = String::with_capacity(value.len() + 2);
    out.push('"');
    for c in value.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\t' => out.push_str("\\t"),
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

impl TaxonResolver {
    pub fn new(endpoint: Arc<dyn SparqlEndpoint>) -> Self {
        Self { endpoint }
    }

    pub fn query(name: &str) -> String {
        let lit = sparql_string(name);
        format!(
            "PREFIX wdt: <http://www.wikidata.org/prop/direct/>\n\
             PREFIX rdfs: <http://www.w3.org/2000/01/rdf-schema#>\n\
             SELECT DISTINCT ?item ?taxonName WHERE {{\n  \
             {{ ?item wdt:P225 {lit} }} UNION {{ ?item rdfs:label {lit}@en }}\n  \
             OPTIONAL {{ ?item wdt:P225 ?taxonName }}\n}}\nLIMIT 50"
        )
    }

    pub async fn resolve(&self, name: &str) -> Result<ResolvedEntity, ResolveError> {
        let name = name.trim();
        if name.is_empty() {
            return Err(ResolveError::EmptyInput("taxon name"));
        }
        let results = self.endpoint.select(&Self::query(name)).await.map_err(|e| ResolveError::Upstream {
            retriable: e.is_retriable(),
            message: format!("{}: {e}", self.endpoint.location()),
        })?;
        let item_col = results.variables.iter().position(|v| v == "item");
        let name_col = results.variables.iter().position(|v| v == "taxonName");
        // item IRI -> taxon names seen for it
        let mut candidates: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for row in &results.rows {
            let Some(item) = item_col.and_then(|i| row.get(i)).and_then(|t| t.as_ref()) else { continue };
            let entry = candidates.entry(item.value().to_owned()).or_default();
            if let Some(n) = name_col.and_then(|i| row.get(i)).and_then(|t| t.as_ref()) {
                entry.push(n.value().to_owned());
            }
        }
        let chosen = match candidates.len() {
            0 => {
                return Err(ResolveError::NoMatch {
                    surface: name.to_owned(),
                    hint: "no Wikidata item has this taxon name or English label; check the spelling of the binomial".into(),
                })
            }
            1 => candidates.keys().next().cloned().unwrap(),
            _ => {
                let exact: Vec<_> =
                    candidates.iter().filter(|(_, names)| names.iter().any(|n| n == name)).map(|(k, _)| k.clone()).collect();
                if exact.len() == 1 {
                    exact.into_iter().next().unwrap()
                } else {
                    return Err(ResolveError::Ambiguous { surface: name.to_owned(), candidates: candidates.into_keys().collect() });
                }
            }
        };
        Ok(ResolvedEntity {
            surface: name.to_owned(),
            kind: EntityKind::Taxon,
            identifier: chosen,
            source: EntitySource::WikidataEndpoint,
            score: None,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparql::endpoint::MemoryEndpoint;

    fn resolver() -> TaxonResolver {
        let ep = MemoryEndpoint::from_turtle("wikidata-fixture", include_str!("../../fixtures/wikidata_fixture.ttl")).unwrap();
        TaxonResolver::new(Arc::new(ep))
    }

    #[tokio::test]
    async fn worked_example_taxon() {
        let e = resolver().resolve("Tabernaemontana coffeoides").await.unwrap();
        assert_eq!(e.identifier, "http://www.wikidata.org/entity/Q15376858");
        assert_eq!(e.source, EntitySource::WikidataEndpoint);
        assert!(e.is_well_formed());
    }

    #[tokio::test]
    async fn empty_name() {
        assert_eq!(resolver().resolve("").await.unwrap_err(), ResolveError::EmptyInput("taxon name"));
    }

    #[tokio::test]
    async fn exact_taxon_name_disambiguates() {
        let e = resolver().resolve("Fixturea alba").await.unwrap();
        assert_eq!(e.identifier, "http://www.wikidata.org/entity/Q900101");
    }

    #[tokio::test]
    async fn unresolvable_ambiguity_lists_candidates() {
        match resolver().resolve("Duplicata").await.unwrap_err() {
            ResolveError::Ambiguous { candidates, .. } => assert_eq!(
                candidates,
                ["http://www.wikidata.org/entity/Q900201", "http://www.wikidata.org/entity/Q900202"]
            ),
            other => panic!("{other:?}"),
        }
    }

    #[tokio::test]
    async fn zero_hits() {
        assert!(matches!(resolver().resolve("Nonexistia vulgaris").await, Err(ResolveError::NoMatch { .. })));
    }

    #[test]
    fn literal_escaping() {
        assert_eq!(sparql_string(r#"a"b\c"#), r#""a\"b\\c""#);
    }
}
