use std::path::Path;
use std::sync::Arc;

use metabokg_core::llm::{ChatProvider, Gateway, ScriptedProvider};
use metabokg_core::prompts::PromptLibrary;
use metabokg_core::setup::fixture_dir;
use metabokg_core::sparql::{MemoryEndpoint, SelectResults, SparqlEndpoint};
use metabokg_eval::{load_dataset, EvalQuestion, Judge, JudgeStage, LlmJudge, Verdict};

fn endpoint() -> Arc<MemoryEndpoint> {
    Arc::new(MemoryEndpoint::from_turtle_file(fixture_dir().join("enpkg_graph.ttl")).unwrap())
}

fn dataset() -> Vec<EvalQuestion> {
    load_dataset(Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/eval_dataset.csv")).unwrap()
}

/// Rows as sorted CSV lines, header dropped.
fn sorted_rows(r: &SelectResults) -> Vec<String> {
    let mut lines: Vec<String> = r.to_csv().lines().skip(1).map(str::to_owned).collect();
    lines.sort();
    lines
}

#[test]
fn reference_queries_match_the_graph() {
    let ep = endpoint();
    let rows = |id: &str| {
        let q = dataset().into_iter().find(|q| q.id == id).unwrap();
        sorted_rows(&ep.select_sync(&q.reference_query).unwrap())
    };
    assert_eq!(rows("q01"), ["3"]);
    assert_eq!(rows("q02"), ["VGF151_A01", "VGF152_B03", "VGF153_C07"]);
    assert_eq!(rows("q03").len(), 4);
    assert_eq!(rows("q04"), ["1"]);
    assert_eq!(rows("q05"), ["VGF151_A01,6", "VGF152_B03,1", "VGF153_C07,3"]);
    assert_eq!(rows("q06"), ["VGF151_A01", "VGF152_B03", "VGF153_C07"]);
    assert_eq!(rows("q07"), ["3"]);
    assert_eq!(rows("q08"), ["VGF151_A01,72.5", "VGF153_C07,55"]);
    assert_eq!(rows("q09"), ["VGF151_A01,2", "VGF152_B03,1", "VGF153_C07,3"]);
    assert_eq!(rows("q10"), ["mzspec:GNPS:TASK-fixture:scan:1"]);
}

const REFERENCE: &str = "PREFIX ns1: <https://enpkg.commons-lab.org/kg/>
PREFIX rdfs: <http://www.w3.org/2000/01/rdf-schema#>
SELECT ?label ?score WHERE {
  ?extract rdfs:label ?label ; ns1:has_bioassay_results ?r .
  ?r ns1:inhibition_percentage ?score .
  FILTER(?score > 50)
}";

const RENAMED: &str = "PREFIX ns1: <https://enpkg.commons-lab.org/kg/>
PREFIX rdfs: <http://www.w3.org/2000/01/rdf-schema#>
SELECT ?name ?pct WHERE {
  ?e rdfs:label ?name ; ns1:has_bioassay_results ?b .
  ?b ns1:inhibition_percentage ?pct .
  FILTER(?pct > 50)
}";

const PERTURBED: &str = "PREFIX ns1: <https://enpkg.commons-lab.org/kg/>
PREFIX rdfs: <http://www.w3.org/2000/01/rdf-schema#>
SELECT ?label ?score WHERE {
  ?extract rdfs:label ?label ; ns1:has_bioassay_results ?r .
  ?r ns1:inhibition_percentage ?score .
  FILTER(?score > 25)
}";

#[tokio::test]
async fn renamed_variables_are_correct_and_perturbed_constants_are_not() {
    let ep = endpoint();
    let oracle = |a: &str, b: &str| sorted_rows(&ep.select_sync(a).unwrap()) == sorted_rows(&ep.select_sync(b).unwrap());
    assert!(oracle(REFERENCE, RENAMED));
    assert!(!oracle(REFERENCE, PERTURBED));

    let judge = Judge::new(ep.clone());
    let j = judge.judge_answer("q", REFERENCE, Some(RENAMED)).await;
    assert_eq!((j.verdict, j.stage, j.needs_review), (Verdict::Correct, JudgeStage::ResultSet, false));
    let j = judge.judge_answer("q", REFERENCE, Some(PERTURBED)).await;
    assert_eq!((j.verdict, j.stage), (Verdict::Incorrect, JudgeStage::Fallback));
    assert!(!j.endpoint_failed);
    let j = judge.judge_answer("q", REFERENCE, None).await;
    assert_eq!(j.verdict, Verdict::NotGenerated);
}

#[tokio::test]
async fn stage_one_is_symmetric() {
    let ep = endpoint();
    let judge = Judge::new(ep.clone());
    let mut queries: Vec<String> = dataset().into_iter().map(|q| q.reference_query).collect();
    queries.extend([REFERENCE, RENAMED, PERTURBED].map(str::to_owned));
    for a in &queries {
        for b in &queries {
            let ab = judge.judge_answer("q", a, Some(b)).await.verdict;
            let ba = judge.judge_answer("q", b, Some(a)).await.verdict;
            assert_eq!(ab, ba, "{a}\n--\n{b}");
            let oracle = sorted_rows(&ep.select_sync(a).unwrap()) == sorted_rows(&ep.select_sync(b).unwrap());
            let same_width = ep.select_sync(a).unwrap().variables.len() == ep.select_sync(b).unwrap().variables.len();
            assert_eq!(ab == Verdict::Correct, oracle && same_width, "{a}\n--\n{b}");
        }
    }
}

struct Down;

#[async_trait::async_trait]
impl SparqlEndpoint for Down {
    async fn select(&self, _: &str) -> Result<SelectResults, metabokg_core::sparql::EndpointError> {
        Err(metabokg_core::sparql::EndpointError::Http { status: 503, message: "maintenance".into() })
    }

    fn location(&self) -> String {
        "down".into()
    }
}

fn llm(replies: Vec<&str>) -> LlmJudge {
    LlmJudge {
        gateway: Arc::new(Gateway::live(Arc::new(ScriptedProvider::new(replies)) as Arc<dyn ChatProvider>)),
        prompts: Arc::new(PromptLibrary::builtin()),
        model_ref: "m".into(),
    }
}

#[tokio::test]
async fn endpoint_failure_falls_back_to_the_llm_with_a_flag() {
    let judge = Judge::new(Arc::new(Down)).with_llm(llm(vec![r#"{"verdict": "correct", "rationale": "Same pattern."}"#]));
    let j = judge.judge_answer("q", REFERENCE, Some(RENAMED)).await;
    assert_eq!((j.verdict, j.stage), (Verdict::Correct, JudgeStage::Llm));
    assert!(j.needs_review && j.endpoint_failed);
    assert_eq!(j.rationale, "Same pattern.");

    let j = Judge::new(Arc::new(Down)).judge_answer("q", REFERENCE, Some(RENAMED)).await;
    assert_eq!((j.verdict, j.stage), (Verdict::Incorrect, JudgeStage::Fallback));
    assert!(j.needs_review && j.endpoint_failed);
}

#[tokio::test]
async fn llm_decides_when_results_differ() {
    let judge = Judge::new(endpoint()).with_llm(llm(vec![r#"{"verdict": "incorrect", "rationale": "Wrong threshold."}"#]));
    let j = judge.judge_answer("q", REFERENCE, Some(PERTURBED)).await;
    assert_eq!((j.verdict, j.stage, j.needs_review), (Verdict::Incorrect, JudgeStage::Llm, true));

    let judge = Judge::new(endpoint()).with_llm(llm(vec!["looks fine to me"]));
    let j = judge.judge_answer("q", REFERENCE, Some(PERTURBED)).await;
    assert_eq!((j.verdict, j.stage, j.needs_review), (Verdict::Incorrect, JudgeStage::Fallback, true));
}
