use std::sync::{Arc, LazyLock};

use percent_encoding::{utf8_percent_encode, NON_ALPHANUMERIC};
use quick_xml::events::Event;
use quick_xml::Reader;
use regex::Regex;

use super::transport::HttpTransport;
use super::{EntityKind, EntitySource, ResolveError, ResolvedEntity};

pub const DEFAULT_CHEMBL_BASE: &str = "https://www.ebi.ac.uk/chembl/api/data";
pub const CHEMBL_TARGET_IRI_PREFIX: &str = "https://www.ebi.ac.uk/chembl/target_report_card/";

const REFINE_HINT: &str = "try the protein's preferred name (e.g. \"Acetylcholinesterase\") instead of an abbreviation, \
a gene symbol, or the organism's full binomial name for organism-level targets";

static CHEMBL_ID: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^CHEMBL\d+$").unwrap());

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TargetHit {
    pub chembl_id: String,
    pub pref_name: String,
    pub organism: String,
    pub target_type: String,
}

/// Biological target names to ChEMBL target IRIs via the ChEMBL search API.
pub struct TargetResolver {
    transport: Arc<dyn HttpTransport>,
    base_url: String,
}

impl TargetResolver {
    pub fn new(transport: Arc<dyn HttpTransport>, base_url: impl Into<String>) -> Self {
        Self { transport, base_url: base_url.into().trim_end_matches('/').to_owned() }
    }

    pub fn request_url(&self, name: &str) -> String {
        format!("{}/target/search?q={}&format=xml", self.base_url, utf8_percent_encode(name, NON_ALPHANUMERIC))
    }

    pub async fn resolve(&self, name: &str) -> Result<ResolvedEntity, ResolveError> {
        let name = name.trim();
        if name.is_empty() {
            return Err(ResolveError::EmptyInput("target name"));
        }
        let url = self.request_url(name);
        let response = self
            .transport
            .get(&url)
            .await
            .map_err(|e| ResolveError::Upstream { message: e.to_string(), retriable: true })?;
        if response.status >= 400 {
            return Err(ResolveError::Upstream {
                message: format!("ChEMBL returned {}: {}", response.status, response.body.trim()),
                retriable: response.status >= 500 || response.status == 429,
            });
        }
        let hits = parse_targets(&response.body)
            .map_err(|message| ResolveError::Upstream { message: format!("ChEMBL XML: {message}"), retriable: false })?;
        let hit = pick(name, &hits).ok_or_else(|| ResolveError::NoMatch { surface: name.to_owned(), hint: REFINE_HINT.into() })?;
        Ok(ResolvedEntity {
            surface: name.to_owned(),
            kind: EntityKind::Target,
            identifier: format!("{CHEMBL_TARGET_IRI_PREFIX}{}", hit.chembl_id),
            source: EntitySource::ChemblApi,
            score: None,
        })
    }
}

/// Exact preferred-name match, then exact organism match, then the first
/// hit in API order.
fn pick<'a>(name: &str, hits: &'a [TargetHit]) -> Option<&'a TargetHit> {
    let same = |a: &str| a.trim().eq_ignore_ascii_case(name);
    hits.iter()
        .find(|h| same(&h.pref_name))
        .or_else(|| hits.iter().find(|h| same(&h.organism)))
        .or_else(|| hits.first())
}

/// `<target>` elements of a ChEMBL search response. Only direct children of
/// each target are read; hits without a well-formed id are dropped.
pub fn parse_targets(xml: &str) -> Result<Vec<TargetHit>, String> {
    let mut reader = Reader::from_str(xml);
    reader.config_mut().trim_text(true);
    let mut hits = Vec::new();
    let mut stack: Vec<String> = Vec::new();
    let mut current: Option<(usize, TargetHit)> = None;
    loop {
        match reader.read_event().map_err(|e| e.to_string())? {
            Event::Start(e) => {
                let tag = String::from_utf8_lossy(e.name().as_ref()).into_owned();
                if tag == "target" && current.is_none() {
                    current = Some((stack.len() + 1, TargetHit::default()));
                }
                stack.push(tag);
            }
            Event::End(_) => {
                if let Some((depth, _)) = &current {
                    if stack.len() == *depth {
                        let (_, hit) = current.take().unwrap();
                        if CHEMBL_ID.is_match(&hit.chembl_id) {
                            hits.push(hit);
                        }
                    }
                }
                stack.pop();
            }
            Event::Text(t) => {
                if let Some((depth, hit)) = &mut current {
                    if stack.len() == *depth + 1 {
                        let text = t.unescape().map_err(|e| e.to_string())?.trim().to_owned();
                        match stack.last().map(String::as_str) {
                            Some("target_chembl_id") => hit.chembl_id = text,
                            Some("pref_name") => hit.pref_name = text,
                            Some("organism") => hit.organism = text,
                            Some("target_type") => hit.target_type = text,
                            _ => {}
                        }
                    }
                }
            }
            Event::Eof => break,
            _ => {}
        }
    }
    Ok(hits)
}

#[cfg(test)]
mod tests {
    use super::super::transport::{HttpResponse, MockTransport};
    use super::*;

    const ACHE: &str = include_str!("../../fixtures/chembl_acetylcholinesterase.xml");
    const LDON: &str = include_str!("../../fixtures/chembl_leishmania_donovani.xml");
    const EMPTY: &str = include_str!("../../fixtures/chembl_empty.xml");

    fn resolver(body: &str) -> TargetResolver {
        TargetResolver::new(Arc::new(MockTransport::new().route("http://chembl.test/", HttpResponse::ok(body))), "http://chembl.test")
    }

    #[test]
    fn parses_direct_children_only() {
        let hits = parse_targets(ACHE).unwrap();
        assert!(hits.len() >= 2);
        assert_eq!(hits[0].chembl_id, "CHEMBL220");
        assert_eq!(hits[0].pref_name, "Acetylcholinesterase");
        assert_eq!(hits[0].organism, "Homo sapiens");
    }

    #[tokio::test]
    async fn acetylcholinesterase() {
        let e = resolver(ACHE).resolve("acetylcholinesterase").await.unwrap();
        assert_eq!(e.identifier, "https://www.ebi.ac.uk/chembl/target_report_card/CHEMBL220");
        assert!(e.is_well_formed());
    }

    #[tokio::test]
    async fn leishmania_donovani() {
        let e = resolver(LDON).resolve("Leishmania donovani").await.unwrap();
        assert_eq!(e.identifier, "https://www.ebi.ac.uk/chembl/target_report_card/CHEMBL367");
    }

    #[tokio::test]
    async fn empty_hit_list_gives_hint() {
        let err = resolver(EMPTY).resolve("xyzzy-protein").await.unwrap_err();
        match err {
            ResolveError::NoMatch { hint, .. } => assert!(hint.contains("preferred name")),
            other => panic!("{other:?}"),
        }
    }

    #[tokio::test]
    async fn api_failure_is_retriable() {
        let r = TargetResolver::new(
            Arc::new(MockTransport::new().route("http://chembl.test/", HttpResponse { status: 503, body: "down".into() })),
            "http://chembl.test",
        );
        assert!(r.resolve("acetylcholinesterase").await.unwrap_err().is_retriable());
    }

    #[tokio::test]
    async fn request_url_encodes_name() {
        let r = resolver(EMPTY);
        assert_eq!(
            r.request_url("Leishmania donovani"),
            "http://chembl.test/target/search?q=Leishmania%20donovani&format=xml"
        );
    }
}
