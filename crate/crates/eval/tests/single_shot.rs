//! Single-shot evaluation of the fixture dataset against a recorded
//! cassette. Set METABOKG_RECORD_CASSETTES=1 to re-record after a prompt
//! change.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use metabokg_core::llm::{ChatProvider, Gateway, ScriptedProvider};
use metabokg_core::setup::RuntimeSettings;
use metabokg_eval::{
    aggregate_metrics, load_dataset, Complexity, Configuration, EvalConfig, ErrorType, Runner, Verdict,
};

const P: &str = "PREFIX ns1: <https://enpkg.commons-lab.org/kg/>\nPREFIX rdfs: <http://www.w3.org/2000/01/rdf-schema#>\n";

/// One generation reply per dataset question, in dataset order.
fn replies() -> Vec<String> {
    let fence = |q: &str| format!("```sparql\n{P}{q}\n```");
    vec![
        fence("SELECT (COUNT(?x) AS ?n) WHERE { ?x a ns1:LabExtract . }"),
        fence("SELECT ?name WHERE { ?e rdfs:label ?name . ?e a ns1:LabExtract . }"),
        fence("SELECT ?name WHERE { ?e a ns1:LabExtract ; rdfs:label ?name . }"),
        fence("SELECT (COUNT(DISTINCT ?e) AS ?n) WHERE { ?r ns1:has_wd_id ?t . ?t rdfs:label \"Tabernaemontana coffeoides\" . ?r ns1:has_lab_process ?e . }"),
        fence("SELECT ?extractLabel (COUNT(DISTINCT ?f) AS ?n) WHERE { ?x rdfs:label ?extractLabel ; ns1:has_LCMS ?a . ?a ns1:has_lcms_feature_list ?l . ?l ns1:has_lcms_feature ?f . } GROUP BY ?extractLabel"),
        fence("SELECT DISTINCT ?extractName WHERE { ?x rdfs:label ?extractName ; ns1:has_LCMS/ns1:has_lcms_feature_list/ns1:has_lcms_feature/ns1:has_sirius_annotation/ns1:has_InChIkey2D/ns1:has_npc_class ?c . ?c rdfs:label \"Aspidosperma type alkaloids\" . }"),
        fence("SELECT (COUNT(DISTINCT ?f) AS ?n) WHERE { ?r ns1:has_lab_process/ns1:has_LCMS/ns1:has_lcms_feature_list/ns1:has_lcms_feature ?f . ?f ns1:has_sirius_annotation ?a . ?a ns1:has_zodiac_score ?z ; ns1:has_cosmic_score ?c . FILTER(?z > 0.8 && ?c > 0.3) }"),
        "I need the ChEMBL identifier of the Leishmania donovani target before I can write this query.".into(),
        fence("SELECT ?label (COUNT(DISTINCT ?f) AS ?n) WHERE { ?x rdfs:label ?label ; ns1:has_LCMS/ns1:has_lcms_feature_list/ns1:has_lcms_feature ?f . ?f ns1:has_sirius_annotation ?a . ?a ns1:has_zodiac_score ?z ; ns1:has_InChIkey2D/ns1:has_npc_class ns1:npc_Aspidosperma_type_alkaloids . FILTER(?z > 0.95) } GROUP BY ?label"),
        fence("SELECT DISTINCT ?u WHERE { ?r ns1:has_wd_id <http://www.wikidata.org/entity/Q15376858> ; ns1:has_lab_process/ns1:has_LCMS/ns1:has_lcms_feature_list/ns1:has_lcms_feature ?f . ?f ns1:has_usi ?u ; ns1:has_sirius_annotation/ns1:has_zodiac_score ?z . FILTER(?z > 0.9) }"),
    ]
}

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

fn config() -> EvalConfig {
    EvalConfig::load(fixtures().join("single_shot.toml")).unwrap()
}

async fn record(cassette: &Path) {
    let _ = std::fs::remove_file(cassette);
    let provider = Arc::new(ScriptedProvider::new(replies())) as Arc<dyn ChatProvider>;
    let gateway = Arc::new(Gateway::record(provider, cassette));
    let runtime = RuntimeSettings::default().runtime(gateway).unwrap();
    let work = tempfile::tempdir().unwrap();
    let runner = Runner::new(runtime, Configuration::SingleShot, "record", work.path());
    runner.run_all(&load_dataset(fixtures().join("eval_dataset.csv")).unwrap(), |_| {}).await;
}

#[tokio::test]
async fn replayed_single_shot_run_is_judged_per_question() {
    let cfg = config();
    let cassette = cfg.runtime.cassette.clone().unwrap();
    if std::env::var_os("METABOKG_RECORD_CASSETTES").is_some() {
        record(&cassette).await;
    }
    let questions = load_dataset(fixtures().join("eval_dataset.csv")).unwrap();
    assert_eq!(questions.len(), 10);
    let work = tempfile::tempdir().unwrap();
    let runner = Runner::from_config(&cfg, work.path()).unwrap();
    let done = runner.run_all(&questions, |_| {}).await;
    let got: Vec<(&str, Verdict, ErrorType)> =
        done.iter().map(|e| (e.record.question_id.as_str(), e.record.verdict, e.record.error_type)).collect();
    use ErrorType::*;
    use Verdict::*;
    assert_eq!(
        got,
        vec![
            ("q01", Correct, None),
            ("q02", Correct, None),
            ("q03", Incorrect, T2),
            ("q04", Incorrect, T3),
            ("q05", Correct, None),
            ("q06", Correct, None),
            ("q07", Incorrect, T3),
            ("q08", NotGenerated, T3),
            ("q09", Incorrect, T3),
            ("q10", Correct, None),
        ]
    );
    for e in &done {
        e.record.check().unwrap();
        assert!(e.trace.is_empty());
        if e.record.verdict != NotGenerated {
            assert_eq!(e.record.usage.llm_calls, 1, "{}", e.record.question_id);
        }
    }

    let report = aggregate_metrics(&done.iter().map(|e| e.record.clone()).collect::<Vec<_>>(), &cfg.exclude).unwrap();
    assert_eq!((report.overall.correct, report.overall.counted), (5, 9));
    assert_eq!((report.overall_without_exclusion.correct, report.overall_without_exclusion.counted), (5, 10));
    let low = &report.strata[&Complexity::Low];
    assert_eq!((low.total, low.excluded, low.accuracy.correct, low.accuracy.counted), (3, 1, 2, 2));
    let high = &report.strata[&Complexity::High];
    assert_eq!((high.accuracy.correct, high.accuracy.counted), (1, 4));
    let back: metabokg_eval::EvalReport = serde_json::from_str(&serde_json::to_string(&report).unwrap()).unwrap();
    assert_eq!(back, report);
}

#[tokio::test]
async fn replay_mode_without_cassette_is_refused() {
    let mut cfg = config();
    cfg.runtime.cassette = None;
    assert!(Runner::from_config(&cfg, "/tmp").is_err());
}
