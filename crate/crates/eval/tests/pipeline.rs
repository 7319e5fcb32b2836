use std::path::Path;
use std::sync::Arc;

use metabokg_core::llm::Gateway;
use metabokg_core::scenarios::{self, Scenario, MODEL_REF};
use metabokg_core::setup::fixture_runtime;
use metabokg_eval::{load_dataset, Complexity, Configuration, ErrorType, EvalQuestion, JudgeStage, Runner, Verdict};

fn runner(s: &Scenario, dir: &Path) -> Runner {
    let gateway = Arc::new(Gateway::replay(s.load_cassette().unwrap()));
    Runner::new(fixture_runtime(gateway, MODEL_REF).unwrap(), Configuration::Pipeline, "pipeline", dir)
}

#[tokio::test]
async fn fig_2a_question_is_correct_against_a_differently_written_reference() {
    let q = load_dataset(Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/eval_dataset.csv"))
        .unwrap()
        .into_iter()
        .find(|q| q.question == scenarios::FIG_2A_QUESTION)
        .unwrap();
    assert_ne!(q.reference_query, scenarios::FIG_2A_QUERY);
    let dir = tempfile::tempdir().unwrap();
    let s = scenarios::fig_2a();
    let e = runner(&s, dir.path()).run_question(&q).await;
    let r = &e.record;
    assert_eq!((r.verdict, r.error_type, r.judge_stage), (Verdict::Correct, ErrorType::None, JudgeStage::ResultSet));
    assert!(r.generated_query.as_deref().unwrap().contains("COUNT(DISTINCT ?feature)"));
    assert_eq!(r.usage.llm_calls as usize, s.replies.len());
    assert!(r.latency_secs > 0.0);
    assert!(dir.path().join(&q.id).join("1-results.csv").is_file());
    assert_eq!(e.trace.last().unwrap().agent.to_string(), "terminal");
}

#[tokio::test]
async fn rejected_dataset_question_is_type_one() {
    let q = EvalQuestion {
        id: "r1".into(),
        question: scenarios::REJECTED_QUESTION.into(),
        reference_query: "SELECT ?s WHERE { ?s ?p ?o } LIMIT 1".into(),
        complexity: Complexity::Low,
        entities: vec![],
    };
    let dir = tempfile::tempdir().unwrap();
    let e = runner(&scenarios::rejection(), dir.path()).run_question(&q).await;
    assert_eq!((e.record.verdict, e.record.error_type), (Verdict::NotGenerated, ErrorType::T1));
    e.record.check().unwrap();
}

#[tokio::test]
async fn gateway_failure_is_recorded_not_raised() {
    let q = EvalQuestion {
        id: "m1".into(),
        question: "A question no cassette has seen?".into(),
        reference_query: "SELECT ?s WHERE { ?s ?p ?o } LIMIT 1".into(),
        complexity: Complexity::Medium,
        entities: vec![],
    };
    let dir = tempfile::tempdir().unwrap();
    let e = runner(&scenarios::fig_2a(), dir.path()).run_question(&q).await;
    assert_eq!((e.record.verdict, e.record.error_type), (Verdict::NotGenerated, ErrorType::T3));
    assert!(e.record.judge_rationale.contains("cassette") || e.record.judge_rationale.contains("replay"), "{}", e.record.judge_rationale);
}
