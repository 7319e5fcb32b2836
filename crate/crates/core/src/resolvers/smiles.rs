use std::sync::Arc;

use percent_encoding::{utf8_percent_encode, NON_ALPHANUMERIC};

use super::transport::HttpTransport;
use super::{is_inchikey, EntityKind, EntitySource, ResolveError, ResolvedEntity};

pub const DEFAULT_GNPS_BASE: &str = "https://structure.gnps2.org";

/// SMILES to InChIKey through the GNPS structure service.
pub struct SmilesResolver {
    transport: Arc<dyn HttpTransport>,
    base_url: String,
}

impl SmilesResolver {
    pub fn new(transport: Arc<dyn HttpTransport>, base_url: impl Into<String>) -> Self {
        Self { transport, base_url: base_url.into().trim_end_matches('/').to_owned() }
    }

    pub fn request_url(&self, smiles: &str) -> String {
        format!("{}/inchikey?smiles={}", self.base_url, utf8_percent_encode(smiles, NON_ALPHANUMERIC))
    }

    pub async fn resolve(&self, smiles: &str) -> Result<ResolvedEntity, ResolveError> {
        let smiles = smiles.trim();
        if smiles.is_empty() {
            return Err(ResolveError::EmptyInput("structure"));
        }
        let url = self.request_url(smiles);
        let response = self.transport.get(&url).await.map_err(|e| {
            tracing::warn!(%url, error = %e, "gnps request failed");
            ResolveError::Upstream { message: e.to_string(), retriable: true }
        })?;
        if response.status >= 400 {
            tracing::warn!(%url, status = response.status, "gnps returned an error");
            return Err(ResolveError::Upstream {
                message: format!("GNPS returned {}: {}", response.status, response.body.trim()),
                retriable: response.status >= 500,
            });
        }
        let key = extract_inchikey(&response.body).ok_or_else(|| ResolveError::Upstream {
            message: format!("GNPS payload has no valid InChIKey: {}", response.body.trim()),
            retriable: false,
        })?;
        tracing::info!(%url, inchikey = %key, "gnps resolved structure");
        Ok(ResolvedEntity {
            surface: smiles.to_owned(),
            kind: EntityKind::Structure,
            identifier: key,
            source: EntitySource::GnpsApi,
            score: None,
        })
    }
}

/// A JSON object with an `inchikey`-like field, a JSON string, or a bare
/// text body. The value is returned only if it already is a valid key.
fn extract_inchikey(body: &str) -> Option<String> {
    let candidate = match serde_json::from_str::<serde_json::Value>(body) {
        Ok(serde_json::Value::Object(map)) => map
            .iter()
            .find(|(k, _)| k.eq_ignore_ascii_case("inchikey"))
            .and_then(|(_, v)| v.as_str())
            .map(str::to_owned),
        Ok(serde_json::Value::String(s)) => Some(s),
        _ => Some(body.to_owned()),
    }?;
    let candidate = candidate.trim();
    is_inchikey(candidate).then(|| candidate.to_owned())
}

#[cfg(test)]
mod tests {
    use super::super::transport::{HttpResponse, MockTransport};
    use super::*;

    const INDOLE: &str = "C1=CC=C2C(=C1)C=CN2";
    const INDOLE_KEY: &str = "SIKJAQJRHWYJAI-UHFFFAOYSA-N";

    fn resolver(mock: MockTransport) -> (SmilesResolver, Arc<MockTransport>) {
        let mock = Arc::new(mock);
        (SmilesResolver::new(mock.clone(), "http://gnps.test"), mock)
    }

    #[tokio::test]
    async fn indole_resolves_from_json_payload() {
        let (r, mock) = resolver(MockTransport::new().route(
            "http://gnps.test/inchikey?smiles=C1%3DCC%3DC2C%28%3DC1%29C%3DCN2",
            HttpResponse::ok(format!(r#"{{"inchikey":"{INDOLE_KEY}"}}"#)),
        ));
        let e = r.resolve(INDOLE).await.unwrap();
        assert_eq!(e.identifier, INDOLE_KEY);
        assert!(e.is_well_formed());
        assert_eq!(mock.calls().len(), 1);
    }

    #[tokio::test]
    async fn plain_text_payload_is_accepted() {
        let (r, _) = resolver(MockTransport::new().route("http://gnps.test/", HttpResponse::ok(format!("{INDOLE_KEY}\n"))));
        assert_eq!(r.resolve(INDOLE).await.unwrap().identifier, INDOLE_KEY);
    }

    #[tokio::test]
    async fn empty_smiles_makes_no_call() {
        let (r, mock) = resolver(MockTransport::new());
        assert_eq!(r.resolve("  ").await.unwrap_err(), ResolveError::EmptyInput("structure"));
        assert!(mock.calls().is_empty());
    }

    #[tokio::test]
    async fn upstream_4xx_is_surfaced() {
        let (r, _) = resolver(
            MockTransport::new().route("http://gnps.test/", HttpResponse { status: 400, body: "Invalid SMILES".into() }),
        );
        let err = r.resolve("not-a-smiles").await.unwrap_err();
        assert!(err.to_string().contains("Invalid SMILES"), "{err}");
        assert!(!err.is_retriable());
    }

    #[tokio::test]
    async fn malformed_key_is_never_passed_through() {
        let (r, _) = resolver(MockTransport::new().route("http://gnps.test/", HttpResponse::ok(r#"{"inchikey":"SIKJAQJRHWYJAI"}"#)));
        assert!(matches!(r.resolve(INDOLE).await, Err(ResolveError::Upstream { .. })));
    }

    #[tokio::test]
    async fn unreachable_is_retriable() {
        let (r, _) = resolver(MockTransport::new());
        assert!(r.resolve(INDOLE).await.unwrap_err().is_retriable());
    }
}
