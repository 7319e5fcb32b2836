//! Replay mode must not contact a model provider even when credentials
//! point at one. The probe is a local listener that counts connections.

mod common;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use axum::body::Body;
use axum::http::Request;
use common::*;
use metabokg_core::llm::{ENV_API_KEY, ENV_BASE_URL};
use metabokg_core::scenarios;
use metabokg_core::setup::GatewayKind;
use tokio::io::AsyncWriteExt;

async fn probe() -> (String, Arc<AtomicUsize>) {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let url = format!("http://{}/v1", listener.local_addr().unwrap());
    let hits = Arc::new(AtomicUsize::new(0));
    let counter = hits.clone();
    tokio::spawn(async move {
        while let Ok((mut sock, _)) = listener.accept().await {
            counter.fetch_add(1, Ordering::SeqCst);
            let _ = sock.write_all(b"HTTP/1.1 500 Internal Server Error\r\ncontent-length: 0\r\n\r\n").await;
        }
    });
    (url, hits)
}

#[tokio::test]
async fn replay_never_dials_the_provider_but_live_does() {
    let (url, hits) = probe().await;
    std::env::set_var(ENV_BASE_URL, &url);
    std::env::set_var(ENV_API_KEY, "probe-key");

    let t = app(&scenarios::fig_2a());
    let id = create(&t.router).await;
    let reply = ask(&t.router, &id, scenarios::FIG_2A_QUESTION).await;
    assert!(reply.answer.contains("SELECT"));
    let mgf = std::fs::read(fixture("seven_spectra.mgf")).unwrap();
    send(&t.router, Request::post(format!("/sessions/{id}/files?name=s.mgf")).body(Body::from(mgf)).unwrap()).await;
    let missed = ask(&t.router, &id, "A question the cassette has never seen?").await;
    assert!(missed.retriable.is_some());
    assert_eq!(hits.load(Ordering::SeqCst), 0);

    let live = app_with(&scenarios::fig_2a(), |c| {
        c.runtime.mode = GatewayKind::Live;
        c.runtime.cassette = None;
    });
    let id = create(&live.router).await;
    let failed = ask(&live.router, &id, scenarios::FIG_2A_QUESTION).await;
    assert!(failed.retriable.is_some(), "{}", failed.answer);
    assert!(hits.load(Ordering::SeqCst) > 0);
}
