mod common;

use std::path::Path;

use common::*;
use stepwise_core::api::{CreateSession, EventKind, SessionEvent, SessionStatus};
use stepwise_core::codec::transcript_from_value;
use stepwise_core::SystemLabel;
use stepwise_service::LiveSettings;

const RESPOND_SLOW: &str = "<think></think><response>0123456789</response>";

/// Runs `f` on a private runtime that is torn down afterwards, taking every
/// session task with it, the way a process exit would.
fn in_process<T: Send + 'static>(f: impl std::future::Future<Output = T> + Send + 'static) -> T {
    std::thread::spawn(move || {
        tokio::runtime::Builder::new_multi_thread()
            .enable_all()
            .build()
            .unwrap()
            .block_on(f)
    })
    .join()
    .unwrap()
}

async fn events_of(srv: &Server, id: &str) -> Vec<SessionEvent> {
    let mut ev = srv.client.events(id, 0).await.unwrap();
    drain(&mut ev, 0.3).await
}

#[test]
fn sessions_survive_a_restart() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().to_path_buf();

    let (id, before) = in_process({
        let path = path.clone();
        async move {
            let srv = start(&path, scripted(&[RESPOND_HELLO, WAIT]), LiveSettings::default()).await;
            let s = srv
                .client
                .create_session(&CreateSession {
                    seed_id: "s1".into(),
                    system: SystemLabel::S2,
                    human_role: None,
                })
                .await
                .unwrap();
            let mut ev = srv.client.events(&s.id, 0).await.unwrap();
            srv.client.post_message(&s.id, "hi").await.unwrap();
            until(&mut ev, "waiting", 3.0).await;
            let t = srv.client.transcript(&s.id).await.unwrap();
            (s.id, t)
        }
    });

    in_process(async move {
        let srv = start(&path, scripted(&[RESPOND_HELLO, WAIT]), LiveSettings::default()).await;
        let after = srv.client.transcript(&id).await.unwrap();
        assert_eq!(after, before);
        let t = transcript_from_value(&after).unwrap();
        assert_eq!(t.messages.len(), 2);
        assert_eq!(t.steps.len(), 2);
        assert_eq!(srv.client.session(&id).await.unwrap().status, SessionStatus::Active);

        // The restored actor keeps going, and sequence numbers continue.
        let old = events_of(&srv, &id).await;
        let mut ev = srv.client.events(&id, old.len() as u64).await.unwrap();
        let ack = srv.client.post_message(&id, "still there?").await.unwrap();
        assert_eq!(ack.seq, Some(old.len() as u64 + 1));
        let (_, msg) = until(&mut ev, "message", 3.0).await;
        assert!(msg.seq > ack.seq.unwrap());
    });
}

#[test]
fn scheduled_delivery_survives_a_restart() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().to_path_buf();

    let id = in_process({
        let path = path.clone();
        async move {
            let srv = start(&path, scripted(&[RESPOND_SLOW, WAIT]), LiveSettings::default()).await;
            let s = srv
                .client
                .create_session(&CreateSession {
                    seed_id: "s1".into(),
                    system: SystemLabel::S2,
                    human_role: None,
                })
                .await
                .unwrap();
            let mut ev = srv.client.events(&s.id, 0).await.unwrap();
            srv.client.post_message(&s.id, "hi").await.unwrap();
            until(&mut ev, "typing_started", 2.0).await;
            s.id
        }
    });

    in_process(async move {
        let srv = start(&path, scripted(&[WAIT]), LiveSettings::default()).await;
        let mut ev = srv.client.events(&id, 0).await.unwrap();
        let (before, msg) = until(&mut ev, "message", 4.0).await;
        assert!(matches!(msg.kind, EventKind::Message { ref text, .. } if text == "0123456789"));
        // Typing was already announced before the restart.
        assert_eq!(count(&before, "typing_started"), 1);
        let (_, waiting) = until(&mut ev, "waiting", 2.0).await;
        assert!(waiting.seq > msg.seq);
    });
}

#[test]
fn closed_sessions_stay_closed() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().to_path_buf();
    let id = in_process({
        let path = path.clone();
        async move {
            let srv = start(&path, scripted(&[WAIT]), LiveSettings::default()).await;
            let s = srv
                .client
                .create_session(&CreateSession {
                    seed_id: "s1".into(),
                    system: SystemLabel::S2,
                    human_role: None,
                })
                .await
                .unwrap();
            srv.client.close(&s.id, Some("bye")).await.unwrap();
            s.id
        }
    });
    assert!(Path::new(&path).join("sessions").join(format!("{id}.jsonl")).exists());
    in_process(async move {
        let srv = start(&path, scripted(&[WAIT]), LiveSettings::default()).await;
        assert_eq!(srv.client.session(&id).await.unwrap().status, SessionStatus::Closed);
        let err = srv.client.post_message(&id, "hello").await.unwrap_err();
        assert_eq!(err.code(), Some("SessionClosed"));
    });
}
