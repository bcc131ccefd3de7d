mod support;

use std::time::Duration;

use kneesim_core::config::SessionConfig;
use kneesim_core::model::ActivityMode;
use kneesim_core::protocol::ServerMessage;
use kneesim_core::server::{serve, ServeOptions};
use kneesim_core::session::{scripted_session, EventScript};
use serde_json::json;
use support::Client;

const WAIT: Duration = Duration::from_secs(20);

#[test]
fn malformed_messages_get_errors_and_the_loop_continues() {
    let opts = ServeOptions {
        speed: 10.0,
        ..ServeOptions::default()
    };
    let server = serve(SessionConfig::default(), "127.0.0.1:0", opts).unwrap();
    let mut client = Client::connect(server.local_addr());
    assert!(matches!(client.recv(WAIT), Some(ServerMessage::Snapshot { .. })));

    client.send_text("{not json");
    client.send(json!({"kind": "ModeRequest", "seq": 7, "mode": "Moonwalk"}));
    client.send(json!({"kind": "ParamUpdate", "seq": 8, "activity": "SitStand", "phase": "EarlyStance",
        "k": 1.0, "b": 0.0, "theta_eq": 0.0}));
    let mut errors = Vec::new();
    client.until(WAIT, |m| {
        if let ServerMessage::Error { seq, reason, .. } = m {
            errors.push((*seq, reason.clone()));
        }
        errors.len() == 3
    });
    assert_eq!(errors[0].0, None);
    assert_eq!(errors[1].0, Some(7));
    assert!(errors[1].1.contains("Moonwalk"), "{}", errors[1].1);
    assert_eq!(errors[2].0, Some(8));

    let before = match client.until(WAIT, ServerMessage::is_telemetry).pop() {
        Some(ServerMessage::Telemetry { t, .. }) => t,
        other => panic!("{other:?}"),
    };
    let after = client.until(WAIT, |m| matches!(m, ServerMessage::Telemetry { t, .. } if *t > before + 0.2));
    assert!(!after.is_empty());
    client.close();
    server.stop();
    server.wait().unwrap();
}

#[test]
fn observers_do_not_perturb_the_logs() {
    let config = SessionConfig::default();
    let opts = ServeOptions {
        speed: 4.0,
        duration: Some(8.0),
        ..ServeOptions::default()
    };
    let server = serve(config.clone(), "127.0.0.1:0", opts).unwrap();
    let mut client = Client::connect(server.local_addr());
    let _ = client.recv(Duration::from_millis(200));
    client.close();
    let mut second = Client::connect(server.local_addr());
    let _ = second.recv(Duration::from_millis(200));
    let served = server.wait().unwrap();
    drop(second);

    let scripted = scripted_session(&config, &EventScript::default(), 8.0).unwrap();
    assert_eq!(served.sensor_log, scripted.sensor_log);
    assert_eq!(served.state_log, scripted.state_log);
}

#[test]
fn snapshot_echoes_live_table_and_acks_are_ordered() {
    let opts = ServeOptions {
        speed: 10.0,
        ..ServeOptions::default()
    };
    let server = serve(SessionConfig::default(), "127.0.0.1:0", opts).unwrap();
    let mut a = Client::connect(server.local_addr());
    assert!(matches!(a.recv(WAIT), Some(ServerMessage::Snapshot { revision: 0, .. })));
    for seq in 10..20 {
        a.send(json!({"kind": "ParamUpdate", "seq": seq, "activity": "RampAscent", "phase": "LateStance",
            "k": seq as f64 / 10.0, "b": 0.05, "theta_eq": 8.0}));
    }
    let mut acks = Vec::new();
    a.until(WAIT, |m| {
        if let ServerMessage::Ack { seq, revision, .. } = m {
            acks.push((*seq, *revision));
        }
        acks.len() == 10
    });
    let seqs: Vec<u64> = acks.iter().map(|a| a.0).collect();
    assert_eq!(seqs, (10..20).collect::<Vec<_>>());
    assert!(acks.windows(2).all(|w| w[1].1 == w[0].1 + 1));

    let mut b = Client::connect(server.local_addr());
    match b.recv(WAIT) {
        Some(ServerMessage::Snapshot { config, revision, .. }) => {
            assert_eq!(revision, 10);
            let p = config.impedance.lookup(ActivityMode::RampAscent, kneesim_core::fsm::GaitPhase::LateStance).unwrap();
            assert_eq!(p.k, 1.9);
        }
        other => panic!("{other:?}"),
    }
    a.close();
    b.close();
    server.stop();
    server.wait().unwrap();
}
