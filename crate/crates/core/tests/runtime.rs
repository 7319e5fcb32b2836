use std::sync::Arc;

use metabokg_core::agents::{AgentId, Ledger, NodeRef, SessionState, TraceEvent, TraceKind, TurnOutcome, NullSink, STEP_CAP};
use metabokg_core::llm::{ChatProvider, Gateway, ScriptedProvider};
use metabokg_core::setup::fixture_runtime;
use metabokg_core::sparql::DATA_ABSENT_MESSAGE;

const FIG_2A_QUESTION: &str =
    "How many metabolites of Tabernaemontana coffeoides have a ZODIAC score above 0.9 and a COSMIC score above 0.3?";

const FIG_2A_QUERY: &str = "```sparql
PREFIX ns1: <https://enpkg.commons-lab.org/kg/>
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
}
```";

const EXTRACT_COUNTS: &str = "```sparql
PREFIX ns1: <https://enpkg.commons-lab.org/kg/>
PREFIX rdfs: <http://www.w3.org/2000/01/rdf-schema#>
SELECT ?extract (COUNT(DISTINCT ?feature) AS ?featureCount)
WHERE { ?e rdfs:label ?extract ; ns1:has_LCMS ?a . ?a ns1:has_lcms_feature_list ?fl . ?fl ns1:has_lcms_feature ?feature . }
GROUP BY ?extract ORDER BY ?extract
```";

struct Run {
    outcomes: Vec<TurnOutcome>,
    state: SessionState,
    provider: Arc<ScriptedProvider>,
    _dir: tempfile::TempDir,
    dir_path: std::path::PathBuf,
}

async fn run(script: &[&str], questions: &[&str]) -> Run {
    let provider = Arc::new(ScriptedProvider::new(script.iter().copied()));
    let gateway = Arc::new(Gateway::live(provider.clone() as Arc<dyn ChatProvider>));
    let rt = fixture_runtime(gateway, "test-model").unwrap();
    let dir = tempfile::tempdir().unwrap();
    let mut state = SessionState::new("s1");
    let mut outcomes = Vec::new();
    for q in questions {
        outcomes.push(rt.run_turn(&mut state, dir.path(), q, &NullSink).await);
    }
    let dir_path = dir.path().to_owned();
    Run { outcomes, state, provider, _dir: dir, dir_path }
}

fn count(events: &[TraceEvent], kind: TraceKind) -> usize {
    events.iter().filter(|e| e.kind == kind).count()
}

fn turn_events(state: &SessionState, turn: u32) -> Vec<TraceEvent> {
    state.events_of_turn(turn).cloned().collect()
}

fn fig_2a_script() -> Vec<&'static str> {
    vec![
        r#"{"verdict":"valid","feedback":"","plants":["Tabernaemontana coffeoides"]}"#,
        r#"{"action":"kg","mentions":[{"text":"Tabernaemontana coffeoides","kind":"taxon"}]}"#,
        r#"{"calls":[{"tool":"taxon_resolver","input":"Tabernaemontana coffeoides"}]}"#,
        r#"{"action":"sparql"}"#,
        r#"{"tool":"graph_sparql_chain","question":"How many metabolites of Tabernaemontana coffeoides have a ZODIAC score above 0.9 and a COSMIC score above 0.3?"}"#,
        FIG_2A_QUERY,
        r#"{"action":"finish","answer":"The corresponding number of metabolites is 3."}"#,
    ]
}

#[tokio::test]
async fn fig_2a_flow_counts_three_metabolites() {
    let r = run(&fig_2a_script(), &[FIG_2A_QUESTION]).await;
    let answer = r.outcomes[0].answer();
    assert!(answer.starts_with("The corresponding number of metabolites is 3."), "{answer}");
    assert!(answer.contains("metaboliteCount\n3"), "{answer}");
    assert!(answer.contains("Here is the generated SPARQL query used:"));
    assert!(answer.contains("COUNT(DISTINCT ?feature)"));
    assert!(answer.contains("FILTER(?zodiacScore > 0.9 && ?cosmicScore > 0.3)"));
    assert!(answer.contains("http://www.wikidata.org/entity/Q15376858"));
    assert_eq!(r.provider.remaining(), 0);

    let events = turn_events(&r.state, 1);
    assert_eq!(r.state.ledger.llm_calls, 7);
    assert_eq!(r.state.ledger, Ledger::from_trace(&r.state.trace));
    for agent in [AgentId::Entry, AgentId::Validator, AgentId::Supervisor, AgentId::Kg, AgentId::SparqlRunner] {
        assert!(events.iter().any(|e| e.agent == NodeRef::Agent(agent) && e.kind == TraceKind::AgentStarted), "{agent}");
    }
    assert_eq!(count(&events, TraceKind::QueryGenerated), 1);
    let last = events.last().unwrap();
    assert_eq!((last.agent, last.kind), (NodeRef::Terminal, TraceKind::Answer));
    assert_eq!(last.payload, serde_json::json!(answer));
    assert!(r.dir_path.join("1-results.csv").is_file());
}

#[tokio::test]
async fn replaying_the_same_script_gives_identical_answers() {
    let a = run(&fig_2a_script(), &[FIG_2A_QUESTION]).await;
    let b = run(&fig_2a_script(), &[FIG_2A_QUESTION]).await;
    assert_eq!(a.outcomes[0].answer(), b.outcomes[0].answer());
}

#[tokio::test]
async fn out_of_scope_question_is_rejected_without_queries() {
    let r = run(&[r#"{"verdict":"invalid","feedback":"No schema entity matches a capital city.","plants":[]}"#], &["What is the capital of France?"]).await;
    let answer = r.outcomes[0].answer();
    assert!(answer.contains("No schema entity matches"), "{answer}");
    let events = turn_events(&r.state, 1);
    assert_eq!(events.len(), 3, "{events:#?}");
    assert_eq!(events.iter().filter(|e| e.agent == NodeRef::Agent(AgentId::Validator)).count(), 1);
    assert_eq!(count(&events, TraceKind::QueryGenerated), 0);
    assert_eq!(count(&events, TraceKind::ToolCalled), 0);
    assert_eq!(r.state.ledger.llm_calls, 1);
}

#[tokio::test]
async fn absent_plant_is_rejected_by_name() {
    let r = run(&[r#"{"verdict":"valid","feedback":"","plants":["PlantNotInDb x"]}"#], &["List metabolites of PlantNotInDb x."]).await;
    assert!(r.outcomes[0].answer().contains("\"PlantNotInDb x\""));
    let events = turn_events(&r.state, 1);
    let check = events.iter().find(|e| e.tool.as_deref() == Some("plant_db")).expect("check_plant invoked");
    assert_eq!(check.payload["presence"], "absent");
    assert_eq!(count(&events, TraceKind::QueryGenerated), 0);
}

#[tokio::test]
async fn follow_up_plot_reuses_stored_result() {
    let script = [
        r#"{"verdict":"valid","feedback":"","plants":[]}"#,
        r#"{"action":"sparql"}"#,
        r#"{"tool":"graph_sparql_chain","question":"List the number of features for each lab extract."}"#,
        EXTRACT_COUNTS,
        r#"{"action":"finish","answer":"Here are the feature counts per extract."}"#,
        r#"{"classification":"help_me_understand"}"#,
        r#"{"action":"interpret","request":"distribution plot of the feature counts per extract"}"#,
        r#"{"action":"finish","answer":"Here is the distribution plot."}"#,
    ];
    let r = run(
        &script,
        &[
            "List the number of features for each lab extract.",
            "Can you generate a distribution plot for the count of features for those extracts?",
        ],
    )
    .await;
    assert!(r.outcomes[0].answer().contains("VGF151_A01,6"), "{}", r.outcomes[0].answer());
    let second = &r.outcomes[1];
    assert_eq!(second.classification, Some(metabokg_core::agents::Classification::HelpMeUnderstand));
    let events = turn_events(&r.state, 2);
    assert_eq!(count(&events, TraceKind::QueryGenerated), 0);
    assert!(!events.iter().any(|e| e.agent == NodeRef::Agent(AgentId::Kg)));
    assert!(!events.iter().any(|e| e.agent == NodeRef::Agent(AgentId::Validator)));
    assert!(events.iter().any(|e| e.tool.as_deref() == Some("chart_spec")));
    assert!(second.answer().contains("2-chart.json"));
    assert!(second.message.attachments.contains(&"2-chart.json".to_owned()));
    let spec: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(r.dir_path.join("2-chart.json")).unwrap()).unwrap();
    assert_eq!(spec["chart_type"], "bar");
    assert_eq!(r.provider.remaining(), 0);
}

#[tokio::test]
async fn oscillating_supervisor_hits_the_step_cap() {
    let mut script = vec![r#"{"verdict":"valid","feedback":"","plants":[]}"#.to_owned()];
    for i in 0..20 {
        script.push(format!(r#"{{"action":"kg","mentions":[{{"text":"Unknownia {i}","kind":"taxon"}}]}}"#));
        script.push(format!(r#"{{"calls":[{{"tool":"taxon_resolver","input":"Unknownia {i}"}}]}}"#));
    }
    let refs: Vec<&str> = script.iter().map(String::as_str).collect();
    let r = run(&refs, &["Which compounds are in Unknownia?"]).await;
    let outcome = &r.outcomes[0];
    assert_eq!(outcome.steps, STEP_CAP);
    assert!(outcome.answer().contains("stopped after 12 agent steps"), "{}", outcome.answer());
    assert_eq!(outcome.message.kind, metabokg_core::agents::MessageKind::FinalAnswer);
    // validator + five supervisor/KG pairs
    assert_eq!(r.state.ledger.llm_calls, 11);
    assert_eq!(refs.len() - r.provider.remaining(), 11);
}

#[tokio::test]
async fn both_queries_empty_reports_data_absence() {
    let empty = "```sparql
PREFIX ns1: <https://enpkg.commons-lab.org/kg/>
SELECT ?e WHERE { ?e ns1:has_wd_id <http://www.wikidata.org/entity/Q1> . }
```";
    let script = [
        r#"{"verdict":"valid","feedback":"","plants":[]}"#,
        r#"{"action":"sparql"}"#,
        r#"{"tool":"graph_sparql_chain","question":"Which raw materials come from Q1?"}"#,
        empty,
        empty,
        r#"{"action":"finish","answer":"No such samples."}"#,
    ];
    let r = run(&script, &["Which raw materials come from Q1?"]).await;
    assert!(r.outcomes[0].answer().contains(DATA_ABSENT_MESSAGE));
    assert_eq!(count(&turn_events(&r.state, 1), TraceKind::QueryGenerated), 2);
}

#[tokio::test]
async fn empty_question_is_an_error_without_routing() {
    let r = run(&[], &["   "]).await;
    assert_eq!(r.outcomes[0].message.kind, metabokg_core::agents::MessageKind::Error);
    let events = turn_events(&r.state, 1);
    assert!(!events.iter().any(|e| e.kind == TraceKind::AgentStarted));
    assert_eq!(r.state.ledger.llm_calls, 0);
}

#[tokio::test]
async fn unroutable_and_unknown_kinds_never_crash() {
    let script = [
        r#"{"verdict":"valid","feedback":"","plants":[]}"#,
        r#"{"action":"kg","mentions":[{"text":"malaria","kind":"disease"}]}"#,
        "I am not sure what to do.",
    ];
    let r = run(&script, &["Which extracts are active against malaria?"]).await;
    assert!(r.outcomes[0].answer().starts_with("Sorry, I could not decide"));
    let warnings: Vec<_> = r.state.trace.iter().filter(|e| e.kind == TraceKind::Warning).collect();
    assert!(warnings.iter().any(|w| w.payload["message"].as_str().unwrap().contains("disease")));
    assert!(warnings.iter().any(|w| w.payload["message"].as_str().unwrap().contains("unroutable")));
}

#[tokio::test]
async fn backend_failure_is_surfaced() {
    let r = run(&[], &["List all lab extracts"]).await;
    let o = &r.outcomes[0];
    assert_eq!(o.message.kind, metabokg_core::agents::MessageKind::Error);
    assert_eq!(o.retriable, Some(false));
    assert!(o.answer().contains("script exhausted"));
    assert_eq!(r.state.trace.last().unwrap().kind, TraceKind::Answer);
}
