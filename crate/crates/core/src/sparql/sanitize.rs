//! Extraction of a clean SELECT query from raw model output.

use std::collections::BTreeMap;
use std::sync::LazyLock;

use regex::Regex;
use spargebra::{Query, SparqlParser};

/// Namespaces injected when a query uses their usual prefix label without
/// declaring it and the schema does not define that label.
pub const WELL_KNOWN_PREFIXES: [(&str, &str); 6] = [
    ("rdf", "http://www.w3.org/1999/02/22-rdf-syntax-ns#"),
    ("rdfs", "http://www.w3.org/2000/01/rdf-schema#"),
    ("xsd", "http://www.w3.org/2001/XMLSchema#"),
    ("owl", "http://www.w3.org/2002/07/owl#"),
    ("wd", "http://www.wikidata.org/entity/"),
    ("wdt", "http://www.wikidata.org/prop/direct/"),
];

static FENCE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?s)```[A-Za-z0-9_-]*[ \t]*\n?(.*?)```").unwrap());
static SELECT: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)\bSELECT\b").unwrap());
static PREFIX_DECL: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)\bPREFIX\s+([A-Za-z][\w.-]*)?\s*:\s*<([^<>\s]*)>").unwrap());
static IRI_REF: LazyLock<Regex> = LazyLock::new(|| Regex::new(r#"<[^<>\s"{}|^`\\]*>"#).unwrap());
static STRING_LIT: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r#""(?:[^"\\\n]|\\.)*"|'(?:[^'\\\n]|\\.)*'"#).unwrap());
static COMMENT: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?m)#.*$").unwrap());
static PNAME: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?:^|[\s(){},;/|^!=<>*+\[\]])([A-Za-z][\w-]*)?:").unwrap());

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("no complete SELECT query found in model output")]
pub struct NoSelectQuery;

/// Returns the first complete SELECT query in `raw`, with its PREFIX
/// declarations normalised to one per line and any prefixes it uses but does
/// not declare injected from `schema_prefixes` (or [`WELL_KNOWN_PREFIXES`]).
///
/// Code fences are searched first, then the whole text. The result parses as
/// a SPARQL SELECT and sanitizing it again returns it unchanged.
pub fn sanitize_query(raw: &str, schema_prefixes: &BTreeMap<String, String>) -> Result<String, NoSelectQuery> {
    let fenced = FENCE.captures_iter(raw).map(|c| c.get(1).unwrap().as_str());
    for region in fenced.chain(std::iter::once(raw)) {
        if let Some(query) = extract(region, schema_prefixes) {
            return Ok(query);
        }
    }
    Err(NoSelectQuery)
}

fn extract(region: &str, schema_prefixes: &BTreeMap<String, String>) -> Option<String> {
    for select in SELECT.find_iter(region) {
        let start = select.start();
        let declared = declared_prefixes(&region[..start]);
        let mut ends: Vec<usize> = region[start..]
            .match_indices(['}', '\n'])
            .map(|(i, s)| start + i + if s == "}" { 1 } else { 0 })
            .chain(std::iter::once(region.len()))
            .collect();
        ends.sort_unstable();
        ends.dedup();
        for &end in ends.iter().rev() {
            let body = region[start..end].trim();
            if body.len() <= "SELECT".len() {
                break;
            }
            let query = assemble(&declared, body, schema_prefixes);
            if matches!(SparqlParser::new().parse_query(&query), Ok(Query::Select { .. })) {
                return Some(query);
            }
        }
    }
    None
}

fn declared_prefixes(text: &str) -> Vec<(String, String)> {
    let mut out: Vec<(String, String)> = Vec::new();
    for cap in PREFIX_DECL.captures_iter(text) {
        let label = cap.get(1).map_or("", |m| m.as_str()).to_owned();
        let ns = cap[2].to_owned();
        match out.iter_mut().find(|(l, _)| *l == label) {
            Some(existing) => existing.1 = ns,
            None => out.push((label, ns)),
        }
    }
    out
}

/// Parses `query` as SPARQL 1.1; the parser's message on failure.
pub fn check_query_syntax(query: &str) -> Result<(), String> {
    SparqlParser::new().parse_query(query).map(|_| ()).map_err(|e| e.to_string())
}

/// Prefix labels referenced by prefixed names in `body`, in first-use order.
pub fn used_prefixes(body: &str) -> Vec<String> {
    let stripped = COMMENT.replace_all(&STRING_LIT.replace_all(&IRI_REF.replace_all(body, " "), " "), " ").into_owned();
    let mut out: Vec<String> = Vec::new();
    for cap in PNAME.captures_iter(&stripped) {
        let label = cap.get(1).map_or("", |m| m.as_str()).to_owned();
        if !out.contains(&label) {
            out.push(label);
        }
    }
    out
}

fn assemble(declared: &[(String, String)], body: &str, schema_prefixes: &BTreeMap<String, String>) -> String {
    let mut injected: Vec<(String, String)> = used_prefixes(body)
        .into_iter()
        .filter(|label| !declared.iter().any(|(l, _)| l == label))
        .filter_map(|label| {
            let ns = schema_prefixes.get(&label).cloned().or_else(|| {
                WELL_KNOWN_PREFIXES.iter().find(|(l, _)| *l == label).map(|(_, ns)| (*ns).to_owned())
            })?;
            Some((label, ns))
        })
        .collect();
    injected.sort();
    let mut query = String::new();
    for (label, ns) in declared.iter().chain(&injected) {
        query.push_str(&format!("PREFIX {label}: <{ns}>\n"));
    }
    query.push_str(body);
    query
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ns1() -> BTreeMap<String, String> {
        BTreeMap::from([("ns1".to_owned(), "https://enpkg.commons-lab.org/kg/".to_owned())])
    }

    #[test]
    fn strips_fence_and_trailing_prose() {
        let raw = "```sparql\nSELECT ?x WHERE {?x a ?y}\n``` Hope this helps!";
        assert_eq!(sanitize_query(raw, &BTreeMap::new()).unwrap(), "SELECT ?x WHERE {?x a ?y}");
    }

    #[test]
    fn strips_unfenced_prose() {
        let raw = "Sure! Here is the query:\nSELECT ?x WHERE { ?x a ?y }\nThis lists all typed things.";
        assert_eq!(sanitize_query(raw, &BTreeMap::new()).unwrap(), "SELECT ?x WHERE { ?x a ?y }");
    }

    #[test]
    fn injects_schema_prefix() {
        let raw = "SELECT ?e WHERE { ?e ns1:has_LCMS ?a }";
        let out = sanitize_query(raw, &ns1()).unwrap();
        assert_eq!(out, "PREFIX ns1: <https://enpkg.commons-lab.org/kg/>\nSELECT ?e WHERE { ?e ns1:has_LCMS ?a }");
        let parsed = SparqlParser::new().parse_query(&out).unwrap();
        assert!(parsed.to_string().contains("https://enpkg.commons-lab.org/kg/has_LCMS"));
    }

    #[test]
    fn keeps_declared_prefixes_and_injects_missing_ones() {
        let raw = "PREFIX ns1: <https://enpkg.commons-lab.org/kg/>\n\
                   SELECT ?e ?l WHERE { ?e ns1:has_LCMS ?a ; rdfs:label ?l . FILTER(?l != \"x:y\") }";
        let out = sanitize_query(raw, &ns1()).unwrap();
        assert!(out.starts_with(
            "PREFIX ns1: <https://enpkg.commons-lab.org/kg/>\nPREFIX rdfs: <http://www.w3.org/2000/01/rdf-schema#>\nSELECT"
        ));
    }

    #[test]
    fn iri_schemes_are_not_prefixes() {
        let body = "SELECT ?x WHERE { ?x <http://example.org/p> \"mailto:x\" . # urn:foo\n }";
        assert!(used_prefixes(body).is_empty());
        assert_eq!(used_prefixes("SELECT * { ?a ns1:p/wdt:P31 :x }"), ["ns1", "wdt", ""]);
    }

    #[test]
    fn refusal_is_an_error() {
        assert_eq!(sanitize_query("I cannot write that query.", &ns1()), Err(NoSelectQuery));
        assert_eq!(sanitize_query("Let me select the right terms first.", &ns1()), Err(NoSelectQuery));
    }

    #[test]
    fn non_select_forms_are_rejected() {
        assert!(sanitize_query("ASK { ?s ?p ?o }", &ns1()).is_err());
        assert!(sanitize_query("CONSTRUCT { ?s ?p ?o } WHERE { ?s ?p ?o }", &ns1()).is_err());
    }

    #[test]
    fn keeps_solution_modifiers() {
        let raw = "```\nSELECT ?e (COUNT(?f) AS ?n) WHERE { ?e ns1:has_lcms_feature ?f }\nGROUP BY ?e\nORDER BY DESC(?n)\nLIMIT 5\n```";
        let out = sanitize_query(raw, &ns1()).unwrap();
        assert!(out.ends_with("GROUP BY ?e\nORDER BY DESC(?n)\nLIMIT 5"));
    }

    #[test]
    fn fence_without_select_falls_back_to_text() {
        let raw = "```\nnot a query\n```\nSELECT ?s WHERE { ?s ?p ?o }";
        assert_eq!(sanitize_query(raw, &ns1()).unwrap(), "SELECT ?s WHERE { ?s ?p ?o }");
    }

    const FIG_2A: &str = "SELECT (COUNT(DISTINCT ?feature) AS ?metaboliteCount)
WHERE { ?rawMaterial ns1:has_wd_id <http://www.wikidata.org/entity/Q15376858> .
?rawMaterial ns1:has_lab_process ?labExtract .
?labExtract ns1:has_LCMS ?analysis . ?analysis ns1:has_lcms_feature_list ?featureList .
?featureList ns1:has_lcms_feature ?feature . ?feature ns1:has_sirius_annotation ?annotation .
?annotation ns1:has_zodiac_score ?zodiacScore . ?annotation ns1:has_cosmic_score ?cosmicScore .
FILTER(?zodiacScore > 0.9 && ?cosmicScore > 0.3) }";

    #[test]
    fn worked_example_query_sanitizes() {
        let raw = format!("The query counts features.\n```sparql\n{FIG_2A}\n```");
        let out = sanitize_query(&raw, &ns1()).unwrap();
        assert!(out.starts_with("PREFIX ns1: <https://enpkg.commons-lab.org/kg/>\nSELECT (COUNT(DISTINCT ?feature)"));
    }

    proptest! {
        #[test]
        fn idempotent(
            lead in "[A-Za-z ,.!]{0,40}",
            var in "[a-z]{1,8}",
            pred in prop::sample::select(vec!["ns1:has_LCMS", "rdfs:label", "<http://x.org/p>", "wdt:P31"]),
            trail in "[A-Za-z ,.!]{0,40}",
            fenced in any::<bool>(),
        ) {
            let q = format!("SELECT ?{var} WHERE {{ ?{var} {pred} ?o }}");
            let raw = if fenced { format!("{lead}\n```sparql\n{q}\n```\n{trail}") } else { format!("{lead}\n{q}\n{trail}") };
            if let Ok(once) = sanitize_query(&raw, &ns1()) {
                prop_assert_eq!(sanitize_query(&once, &ns1()).unwrap(), once);
            }
        }
    }
}
