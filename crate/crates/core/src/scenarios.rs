//! Scripted conversations over the bundled fixtures, recorded as replay
//! cassettes under `fixtures/cassettes/`.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use crate::agents::{NullSink, SessionState, TurnOutcome};
use crate::llm::{Cassette, ChatProvider, Gateway, ScriptedProvider};
use crate::setup::{fixture_dir, fixture_runtime, SetupError};

pub const MODEL_REF: &str = "fixture-model";

pub const FIG_2A_QUESTION: &str =
    "How many metabolites of Tabernaemontana coffeoides have a ZODIAC score above 0.9 and a COSMIC score above 0.3?";

pub const FIG_2A_QUERY: &str = "PREFIX ns1: <https://enpkg.commons-lab.org/kg/>
SELECT (COUNT(DISTINCT ?feature) AS ?metaboliteCount)
WHERE {
  ?rawMaterial ns1:has_wd_id <http://www.wikidata.org/entity/Q15376858> .
  ?rawMaterial ns1:has_lab_process ?labExtract .
  ?labExtract ns1:has_LCMS ?analysis .
  ?analysis ns1:has_lcms_feature_list ?featureList .
  ?featureList ns1:has_lcms_feature ?feature .
  ?feature ns1:has_sirius_annotation ?annotation .
  ?annotation ns1:has_zodiac_score ?zodiacScore .
  ?annotation ns1:has_cosmic_score ?cosmicScore .
  FILTER(?zodiacScore > 0.9 && ?cosmicScore > 0.3)
}";

pub const REJECTED_QUESTION: &str = "What is the capital of France?";

pub const EXTRACTS_QUESTION: &str = "List the number of features for each lab extract.";
pub const PLOT_QUESTION: &str = "Can you generate a distribution plot for the count of features for those extracts?";

pub const BIOASSAY_QUESTION: &str =
    "Which lab extracts have bioassay results with inhibition percentages above 50% against Leishmania donovani?";

pub const ABSENT_QUESTION: &str = "Which raw materials were collected from the taxon with Wikidata id Q1?";

fn fenced(query: &str) -> String {
    format!("```sparql\n{query}\n```")
}

/// One scripted conversation.
pub struct Scenario {
    pub name: &'static str,
    pub questions: Vec<&'static str>,
    pub replies: Vec<String>,
}

impl Scenario {
    pub fn cassette_path(&self) -> PathBuf {
        cassette_dir().join(format!("{}.jsonl", self.name))
    }

    pub fn load_cassette(&self) -> std::io::Result<Cassette> {
        Cassette::load(self.cassette_path())
    }
}

pub fn cassette_dir() -> PathBuf {
    fixture_dir().join("cassettes")
}

pub fn fig_2a() -> Scenario {
    Scenario {
        name: "fig2a_metabolite_count",
        questions: vec![FIG_2A_QUESTION],
        replies: vec![
            r#"{"verdict": "valid", "feedback": "", "plants": ["Tabernaemontana coffeoides"]}"#.into(),
            r#"{"action": "kg", "mentions": [{"text": "Tabernaemontana coffeoides", "kind": "taxon"}]}"#.into(),
            r#"{"calls": [{"tool": "taxon_resolver", "input": "Tabernaemontana coffeoides"}]}"#.into(),
            r#"{"action": "sparql"}"#.into(),
            format!(r#"{{"tool": "graph_sparql_chain", "question": "{FIG_2A_QUESTION}"}}"#),
            format!("The features are reached from the plant through its extracts and LC-MS analyses.\n{}", fenced(FIG_2A_QUERY)),
            r#"{"action": "finish", "answer": "The corresponding number of metabolites is 3."}"#.into(),
        ],
    }
}

pub fn rejection() -> Scenario {
    Scenario {
        name: "out_of_scope_rejection",
        questions: vec![REJECTED_QUESTION],
        replies: vec![
            r#"{"verdict": "invalid", "feedback": "No entity in the knowledge graph schema describes countries or capital cities.", "plants": []}"#.into(),
        ],
    }
}

/// A per-extract listing, then a follow-up asking for a plot of it.
pub fn follow_up_plot() -> Scenario {
    let query = "PREFIX ns1: <https://enpkg.commons-lab.org/kg/>
PREFIX rdfs: <http://www.w3.org/2000/01/rdf-schema#>
SELECT ?extract (COUNT(DISTINCT ?feature) AS ?featureCount)
WHERE {
  ?e rdfs:label ?extract ; ns1:has_LCMS ?analysis .
  ?analysis ns1:has_lcms_feature_list ?featureList .
  ?featureList ns1:has_lcms_feature ?feature .
}
GROUP BY ?extract
ORDER BY ?extract";
    Scenario {
        name: "extract_listing_then_plot",
        questions: vec![EXTRACTS_QUESTION, PLOT_QUESTION],
        replies: vec![
            r#"{"verdict": "valid", "feedback": "", "plants": []}"#.into(),
            r#"{"action": "sparql"}"#.into(),
            format!(r#"{{"tool": "graph_sparql_chain", "question": "{EXTRACTS_QUESTION}"}}"#),
            fenced(query),
            r#"{"action": "finish", "answer": "Here are the feature counts for each lab extract."}"#.into(),
            r#"{"classification": "help_me_understand"}"#.into(),
            r#"{"action": "interpret", "request": "distribution plot of the feature count per extract"}"#.into(),
            r#"{"action": "finish", "answer": "Here is the distribution plot."}"#.into(),
        ],
    }
}

/// The first query follows a property backwards and returns nothing; the
/// refined one is correct.
pub fn refinement_resolved() -> Scenario {
    let wrong = "PREFIX ns1: <https://enpkg.commons-lab.org/kg/>
SELECT DISTINCT ?extract ?inhibition
WHERE {
  ?results ns1:has_bioassay_results ?extract .
  ?results ns1:target_id <https://www.ebi.ac.uk/chembl/target_report_card/CHEMBL367> .
  ?results ns1:inhibition_percentage ?inhibition .
  FILTER(?inhibition > 50)
}";
    let right = "PREFIX ns1: <https://enpkg.commons-lab.org/kg/>
PREFIX rdfs: <http://www.w3.org/2000/01/rdf-schema#>
SELECT DISTINCT ?label ?inhibition
WHERE {
  ?extract rdfs:label ?label ; ns1:has_bioassay_results ?results .
  ?results ns1:target_id <https://www.ebi.ac.uk/chembl/target_report_card/CHEMBL367> .
  ?results ns1:inhibition_percentage ?inhibition .
  FILTER(?inhibition > 50)
}
ORDER BY ?label";
    Scenario {
        name: "refinement_resolved",
        questions: vec![BIOASSAY_QUESTION],
        replies: vec![
            r#"{"verdict": "valid", "feedback": "", "plants": []}"#.into(),
            r#"{"action": "kg", "mentions": [{"text": "Leishmania donovani", "kind": "target"}]}"#.into(),
            r#"{"calls": [{"tool": "target_resolver", "input": "Leishmania donovani"}]}"#.into(),
            r#"{"action": "sparql"}"#.into(),
            format!(r#"{{"tool": "graph_sparql_chain", "question": "{BIOASSAY_QUESTION}"}}"#),
            fenced(wrong),
            fenced(right),
            r#"{"action": "finish", "answer": "Two lab extracts inhibit Leishmania donovani by more than 50%."}"#.into(),
        ],
    }
}

/// Both the first and the refined query return nothing.
pub fn refinement_absent() -> Scenario {
    let first = "PREFIX ns1: <https://enpkg.commons-lab.org/kg/>
SELECT ?raw WHERE { ?raw ns1:has_wd_id <http://www.wikidata.org/entity/Q1> . }";
    let second = "PREFIX ns1: <https://enpkg.commons-lab.org/kg/>
SELECT DISTINCT ?raw ?extract WHERE { ?raw ns1:has_wd_id <http://www.wikidata.org/entity/Q1> . OPTIONAL { ?raw ns1:has_lab_process ?extract } }";
    Scenario {
        name: "refinement_data_absent",
        questions: vec![ABSENT_QUESTION],
        replies: vec![
            r#"{"verdict": "valid", "feedback": "", "plants": []}"#.into(),
            r#"{"action": "sparql"}"#.into(),
            format!(r#"{{"tool": "graph_sparql_chain", "question": "{ABSENT_QUESTION}"}}"#),
            fenced(first),
            fenced(second),
            r#"{"action": "finish", "answer": "No raw materials were found for that taxon."}"#.into(),
        ],
    }
}

/// The supervisor keeps asking for new resolutions until the step cap.
pub fn oscillation() -> Scenario {
    let mut replies = vec![r#"{"verdict": "valid", "feedback": "", "plants": []}"#.to_owned()];
    for i in 1..=5 {
        replies.push(format!(r#"{{"action": "kg", "mentions": [{{"text": "Unknownia species {i}", "kind": "taxon"}}]}}"#));
        replies.push(format!(r#"{{"calls": [{{"tool": "taxon_resolver", "input": "Unknownia species {i}"}}]}}"#));
    }
    Scenario { name: "supervisor_oscillation", questions: vec!["Which compounds occur in the genus Unknownia?"], replies }
}

pub fn all() -> Vec<Scenario> {
    vec![fig_2a(), rejection(), follow_up_plot(), refinement_resolved(), refinement_absent(), oscillation()]
}

/// Runs `scenario` against a fresh session in `session_dir`.
pub async fn run_with(gateway: Arc<Gateway>, scenario: &Scenario, session_dir: &Path) -> Result<(SessionState, Vec<TurnOutcome>), SetupError> {
    let rt = fixture_runtime(gateway, MODEL_REF)?;
    let mut state = SessionState::new(scenario.name);
    let mut outcomes = Vec::new();
    for q in &scenario.questions {
        outcomes.push(rt.run_turn(&mut state, session_dir, q, &NullSink).await);
    }
    Ok((state, outcomes))
}

/// Re-records the cassette of `scenario` from its scripted replies.
pub async fn record(scenario: &Scenario, session_dir: &Path) -> Result<(SessionState, Vec<TurnOutcome>), SetupError> {
    let path = scenario.cassette_path();
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| SetupError::File { path: dir.display().to_string(), message: e.to_string() })?;
    }
    let _ = std::fs::remove_file(&path);
    let provider = Arc::new(ScriptedProvider::new(scenario.replies.clone()));
    let gateway = Arc::new(Gateway::record(provider as Arc<dyn ChatProvider>, path));
    run_with(gateway, scenario, session_dir).await
}

/// Replays the committed cassette of `scenario`.
pub async fn replay(scenario: &Scenario, session_dir: &Path) -> Result<(SessionState, Vec<TurnOutcome>, Cassette), SetupError> {
    let path = scenario.cassette_path();
    let cassette = scenario.load_cassette().map_err(|e| SetupError::File { path: path.display().to_string(), message: e.to_string() })?;
    let gateway = Arc::new(Gateway::replay(cassette));
    let (state, outcomes) = run_with(gateway.clone(), scenario, session_dir).await?;
    let leftover = gateway.cassette_snapshot().await;
    Ok((state, outcomes, leftover))
}
