//! Assembles a [`Runtime`] from files and upstream services.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{GraphTopology, Runtime, Toolbox};
use crate::llm::{Cassette, ChatProvider, Gateway, OpenAiCompatProvider, RateTable, ENV_API_KEY, ENV_BASE_URL};
use crate::prompts::PromptLibrary;
use crate::resolvers::{
    ChemicalIndex, HttpResponse, HttpTransport, MockTransport, PlantDb, ReqwestTransport, ResolveError, SmilesResolver,
    TargetResolver, TaxonResolver,
};
use crate::sparql::{
    ChainResources, EndpointError, HttpSparqlEndpoint, MemoryEndpoint, RefinementStore, SchemaDocument, SparqlEndpoint,
};
use crate::wikidata::{GenusQueryConfig, WikidataBridge};

#[derive(Debug, Error)]
pub enum SetupError {
    #[error("{path}: {message}")]
    File { path: String, message: String },
    #[error(transparent)]
    Resolver(#[from] ResolveError),
    #[error("endpoint {spec}: {source}")]
    Endpoint { spec: String, source: EndpointError },
    #[error("invalid configuration: {0}")]
    Config(String),
}

fn file_err(path: &Path, e: impl std::fmt::Display) -> SetupError {
    SetupError::File { path: path.display().to_string(), message: e.to_string() }
}

/// Local files the runtime reads at startup.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AssetPaths {
    pub schema: PathBuf,
    pub plants: PathBuf,
    pub plant_column: String,
    pub chemical_classes: PathBuf,
    pub refinement_store: Option<PathBuf>,
    pub prompt_dir: Option<PathBuf>,
}

/// Directory of the bundled fixture files.
pub fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

impl AssetPaths {
    /// The bundled fixture schema, plant list, class index and store.
    pub fn bundled() -> Self {
        let d = fixture_dir();
        Self {
            schema: d.join("enpkg_schema.ttl"),
            plants: d.join("plants.csv"),
            plant_column: "species".into(),
            chemical_classes: d.join("chemical_classes.csv"),
            refinement_store: Some(d.join("refinement_store.csv")),
            prompt_dir: None,
        }
    }
}

/// A SPARQL endpoint from `file:<path.ttl>` (loaded in memory) or an
/// http(s) URL.
pub fn open_endpoint(spec: &str) -> Result<Arc<dyn SparqlEndpoint>, SetupError> {
    if let Some(path) = spec.strip_prefix("file:") {
        let ep = MemoryEndpoint::from_turtle_file(path).map_err(|source| SetupError::Endpoint { spec: spec.into(), source })?;
        Ok(Arc::new(ep))
    } else {
        Ok(Arc::new(HttpSparqlEndpoint::new(spec)))
    }
}

/// Remote services used by the tools.
#[derive(Clone)]
pub struct Upstreams {
    pub kg: Arc<dyn SparqlEndpoint>,
    pub wikidata: Arc<dyn SparqlEndpoint>,
    pub transport: Arc<dyn HttpTransport>,
    pub chembl_base: String,
    pub gnps_base: String,
}

pub const FIXTURE_CHEMBL_BASE: &str = "http://chembl.fixture/api/data";
pub const FIXTURE_GNPS_BASE: &str = "http://gnps.fixture";
/// Caffeine, the one structure the fixture GNPS service knows.
pub const FIXTURE_SMILES: &str = "CN1C=NC2=C1C(=O)N(C(=O)N2C)C";
pub const FIXTURE_INCHIKEY: &str = "RYYVLZVUVIJVGH-UHFFFAOYSA-N";

/// The fixture graphs served from memory and canned ChEMBL/GNPS replies.
/// Unknown URLs fail like an unreachable host.
pub fn fixture_transport() -> MockTransport {
    let d = fixture_dir();
    let read = |name: &str| std::fs::read_to_string(d.join(name)).expect("bundled fixture");
    let probe: Arc<dyn HttpTransport> = Arc::new(MockTransport::new());
    let target = TargetResolver::new(probe.clone(), FIXTURE_CHEMBL_BASE);
    let smiles = SmilesResolver::new(probe, FIXTURE_GNPS_BASE);
    MockTransport::new()
        .route(format!("{FIXTURE_CHEMBL_BASE}/target/search"), HttpResponse::ok(read("chembl_empty.xml")))
        .route(target.request_url("Leishmania donovani"), HttpResponse::ok(read("chembl_leishmania_donovani.xml")))
        .route(target.request_url("Acetylcholinesterase"), HttpResponse::ok(read("chembl_acetylcholinesterase.xml")))
        .route(smiles.request_url(FIXTURE_SMILES), HttpResponse::ok(format!("{{\"inchikey\": \"{FIXTURE_INCHIKEY}\"}}")))
}

impl Upstreams {
    pub fn fixtures() -> Result<Self, SetupError> {
        let d = fixture_dir();
        let spec = |name: &str| format!("file:{}", d.join(name).display());
        Ok(Self {
            kg: open_endpoint(&spec("enpkg_graph.ttl"))?,
            wikidata: open_endpoint(&spec("wikidata_fixture.ttl"))?,
            transport: Arc::new(fixture_transport()),
            chembl_base: FIXTURE_CHEMBL_BASE.into(),
            gnps_base: FIXTURE_GNPS_BASE.into(),
        })
    }
}

pub fn load_schema(path: &Path) -> Result<SchemaDocument, SetupError> {
    let text = std::fs::read_to_string(path).map_err(|e| file_err(path, e))?;
    let schema = SchemaDocument::parse(&text).map_err(|e| file_err(path, e))?;
    if schema.is_empty() {
        return Err(file_err(path, "schema declares no classes or properties"));
    }
    Ok(schema)
}

pub fn build_runtime(
    gateway: Arc<Gateway>,
    model_ref: &str,
    assets: &AssetPaths,
    up: Upstreams,
) -> Result<Runtime, SetupError> {
    let schema = load_schema(&assets.schema)?;
    let prompts = match &assets.prompt_dir {
        Some(dir) => PromptLibrary::with_overrides(dir).map_err(|e| file_err(dir, e))?,
        None => PromptLibrary::builtin(),
    };
    let store = match &assets.refinement_store {
        Some(p) => RefinementStore::load(p).map_err(|e| file_err(p, e))?,
        None => RefinementStore::default(),
    };
    let res = ChainResources {
        gateway,
        prompts: Arc::new(prompts),
        schema: Arc::new(schema),
        endpoint: up.kg.clone(),
        store: Arc::new(store),
        model_ref: model_ref.to_owned(),
    };
    let tools = Toolbox {
        plant_db: Arc::new(PlantDb::load(&assets.plants, &assets.plant_column)?),
        taxon: Arc::new(TaxonResolver::new(up.wikidata.clone())),
        chemical: Arc::new(ChemicalIndex::load(&assets.chemical_classes)?),
        target: Arc::new(TargetResolver::new(up.transport.clone(), up.chembl_base.clone())),
        smiles: Arc::new(SmilesResolver::new(up.transport.clone(), up.gnps_base.clone())),
        wikidata: Arc::new(WikidataBridge::new(up.wikidata, GenusQueryConfig::default())),
    };
    Ok(Runtime::new(GraphTopology::standard(model_ref), res, tools))
}

/// A runtime over the bundled fixtures.
pub fn fixture_runtime(gateway: Arc<Gateway>, model_ref: &str) -> Result<Runtime, SetupError> {
    build_runtime(gateway, model_ref, &AssetPaths::bundled(), Upstreams::fixtures()?)
}

/// Where model completions come from.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GatewayKind {
    Live,
    Record,
    #[default]
    Replay,
}

/// Value of an endpoint or base URL setting that selects the bundled
/// fixtures.
pub const FIXTURE: &str = "fixture";

/// Everything needed to build a runtime. Defaults point at the bundled
/// fixtures in replay mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RuntimeSettings {
    pub model_ref: String,
    pub mode: GatewayKind,
    /// Cassette read in replay mode and written in record mode.
    pub cassette: Option<PathBuf>,
    /// `fixture`, `file:<graph.ttl>`, or an http(s) SPARQL endpoint.
    pub kg_endpoint: String,
    pub wikidata_endpoint: String,
    /// `fixture` or a ChEMBL API base URL.
    pub chembl_base: String,
    /// `fixture` or a GNPS structure service base URL.
    pub gnps_base: String,
    pub schema: PathBuf,
    pub plants: PathBuf,
    pub plant_column: String,
    pub chemical_classes: PathBuf,
    pub refinement_store: Option<PathBuf>,
    pub prompt_dir: Option<PathBuf>,
    pub rates: RateTable,
    pub request_timeout_secs: u64,
}

impl Default for RuntimeSettings {
    fn default() -> Self {
        let a = AssetPaths::bundled();
        Self {
            model_ref: crate::scenarios::MODEL_REF.into(),
            mode: GatewayKind::Replay,
            cassette: None,
            kg_endpoint: FIXTURE.into(),
            wikidata_endpoint: FIXTURE.into(),
            chembl_base: FIXTURE.into(),
            gnps_base: FIXTURE.into(),
            schema: a.schema,
            plants: a.plants,
            plant_column: a.plant_column,
            chemical_classes: a.chemical_classes,
            refinement_store: a.refinement_store,
            prompt_dir: None,
            rates: RateTable::default(),
            request_timeout_secs: 30,
        }
    }
}

impl RuntimeSettings {
    pub fn assets(&self) -> AssetPaths {
        AssetPaths {
            schema: self.schema.clone(),
            plants: self.plants.clone(),
            plant_column: self.plant_column.clone(),
            chemical_classes: self.chemical_classes.clone(),
            refinement_store: self.refinement_store.clone(),
            prompt_dir: self.prompt_dir.clone(),
        }
    }

    /// Resolves relative file paths against `base`, usually the directory of
    /// the configuration file. Endpoint specs of the form `file:<path>` are
    /// resolved too.
    pub fn relative_to(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for p in [&mut self.schema, &mut self.plants, &mut self.chemical_classes] {
            fix(p);
        }
        for p in [&mut self.cassette, &mut self.refinement_store, &mut self.prompt_dir].into_iter().flatten() {
            fix(p);
        }
        for spec in [&mut self.kg_endpoint, &mut self.wikidata_endpoint] {
            if let Some(rest) = spec.strip_prefix("file:") {
                let mut p = PathBuf::from(rest);
                fix(&mut p);
                *spec = format!("file:{}", p.display());
            }
        }
    }

    /// Checks that every configured file exists and that replay mode has a
    /// cassette.
    pub fn validate(&self) -> Result<(), SetupError> {
        let mut files = vec![&self.schema, &self.plants, &self.chemical_classes];
        files.extend(self.refinement_store.iter());
        for f in files {
            if !f.is_file() {
                return Err(file_err(f, "file not found"));
            }
        }
        if let Some(d) = &self.prompt_dir {
            if !d.is_dir() {
                return Err(file_err(d, "prompt directory not found"));
            }
        }
        match (self.mode, &self.cassette) {
            (GatewayKind::Replay, None) => Err(SetupError::Config("replay mode requires a cassette path".into())),
            (GatewayKind::Replay, Some(c)) if !c.is_file() => Err(file_err(c, "cassette not found")),
            (GatewayKind::Record, None) => Err(SetupError::Config("record mode requires a cassette path".into())),
            _ => Ok(()),
        }
    }

    /// The gateway for the configured mode. Replay never constructs a
    /// provider, so credentials are not read.
    pub fn gateway(&self) -> Result<Gateway, SetupError> {
        let provider = || -> Result<Arc<dyn ChatProvider>, SetupError> {
            OpenAiCompatProvider::from_env()
                .map(|p| Arc::new(p) as Arc<dyn ChatProvider>)
                .ok_or_else(|| SetupError::Config(format!("set {ENV_BASE_URL} and {ENV_API_KEY} for live model calls")))
        };
        let gateway = match self.mode {
            GatewayKind::Replay => {
                let path = self.cassette.as_ref().ok_or_else(|| SetupError::Config("replay mode requires a cassette path".into()))?;
                Gateway::replay(Cassette::load(path).map_err(|e| file_err(path, e))?)
            }
            GatewayKind::Live => Gateway::live(provider()?),
            GatewayKind::Record => {
                let path = self.cassette.clone().ok_or_else(|| SetupError::Config("record mode requires a cassette path".into()))?;
                Gateway::record(provider()?, path)
            }
        };
        Ok(gateway.with_rates(self.rates))
    }

    pub fn upstreams(&self) -> Result<Upstreams, SetupError> {
        let fixtures = Upstreams::fixtures()?;
        let timeout = std::time::Duration::from_secs(self.request_timeout_secs.max(1));
        let endpoint = |spec: &str, fixture: &Arc<dyn SparqlEndpoint>| -> Result<Arc<dyn SparqlEndpoint>, SetupError> {
            match spec {
                FIXTURE => Ok(fixture.clone()),
                s if s.starts_with("file:") => open_endpoint(s),
                s => Ok(Arc::new(HttpSparqlEndpoint::with_timeout(s, timeout))),
            }
        };
        let remote = self.chembl_base != FIXTURE || self.gnps_base != FIXTURE;
        let transport: Arc<dyn HttpTransport> =
            if remote { Arc::new(ReqwestTransport::new(timeout)) } else { fixtures.transport.clone() };
        let base = |value: &str, fixture: &str| if value == FIXTURE { fixture.to_owned() } else { value.to_owned() };
        Ok(Upstreams {
            kg: endpoint(&self.kg_endpoint, &fixtures.kg)?,
            wikidata: endpoint(&self.wikidata_endpoint, &fixtures.wikidata)?,
            transport,
            chembl_base: base(&self.chembl_base, FIXTURE_CHEMBL_BASE),
            gnps_base: base(&self.gnps_base, FIXTURE_GNPS_BASE),
        })
    }

    /// Validates the settings and builds a runtime around `gateway`.
    pub fn runtime(&self, gateway: Arc<Gateway>) -> Result<Runtime, SetupError> {
        build_runtime(gateway, &self.model_ref, &self.assets(), self.upstreams()?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_need_only_a_cassette() {
        let mut s = RuntimeSettings::default();
        assert!(matches!(s.validate(), Err(SetupError::Config(_))));
        s.cassette = Some(crate::scenarios::fig_2a().cassette_path());
        s.validate().unwrap();
        s.gateway().unwrap();
    }

    #[test]
    fn missing_files_are_named() {
        let s = RuntimeSettings { schema: "/nope/schema.ttl".into(), cassette: Some("/x".into()), ..Default::default() };
        assert!(s.validate().unwrap_err().to_string().contains("/nope/schema.ttl"));
    }

    #[test]
    fn relative_paths_follow_the_config() {
        let mut s = RuntimeSettings {
            schema: "schema.ttl".into(),
            cassette: Some("c.jsonl".into()),
            kg_endpoint: "file:g.ttl".into(),
            ..Default::default()
        };
        s.relative_to(Path::new("/etc/mkg"));
        assert_eq!(s.schema, PathBuf::from("/etc/mkg/schema.ttl"));
        assert_eq!(s.cassette, Some(PathBuf::from("/etc/mkg/c.jsonl")));
        assert_eq!(s.kg_endpoint, "file:/etc/mkg/g.ttl");
        assert!(s.plants.is_absolute());
    }

    #[test]
    fn replay_without_credentials_builds() {
        let s = RuntimeSettings { cassette: Some(crate::scenarios::fig_2a().cassette_path()), ..Default::default() };
        let gw = Arc::new(s.gateway().unwrap());
        assert_eq!(gw.mode_name(), "replay");
        s.runtime(gw).unwrap();
    }
}
