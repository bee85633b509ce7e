//! Full two-process-style sessions over loopback TCP: node threads and a
//! referee exchanging the real wire protocol, checked for equivalence with
//! the in-process harness and for protocol-error reporting.

use std::net::{TcpListener, TcpStream};
use std::thread;

use detloophole::counts::PairIndex;
use detloophole::harness::{report_to_json, run_experiment};
use detloophole::inequalities::SettingQuadruple;
use detloophole::model::{ModelVariant, Outcome, Side};
use detloophole::net::{
    node_record, node_run_on, read_message, referee_serve_on, signaling_fixture_counts,
    verify_no_signaling, write_message, NetError, Record, SessionConfig, SettingMode,
    WireMessage, PROTOCOL_VERSION,
};

fn session(variant: ModelVariant, mode: SettingMode, n: u64, seed: u64) -> SessionConfig {
    SessionConfig {
        session_id: 77,
        seed,
        variant,
        setting_mode: mode,
        n_trials: n,
        quad: SettingQuadruple::chsh_optimal(),
    }
}

/// Runs referee + both nodes on loopback, returning the referee's report.
fn run_session(cfg: SessionConfig) -> Result<detloophole::ExperimentReport, NetError> {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let referee = thread::spawn(move || referee_serve_on(listener, &cfg));
    let alice = thread::spawn(move || node_run_on(Side::Alice, TcpStream::connect(addr).unwrap()));
    let bob = thread::spawn(move || node_run_on(Side::Bob, TcpStream::connect(addr).unwrap()));
    alice.join().unwrap()?;
    bob.join().unwrap()?;
    referee.join().unwrap()
}

#[test]
fn session_is_bit_identical_to_harness_run() {
    for mode in [SettingMode::RefereeScheduled, SettingMode::NodeRandom] {
        let cfg = session(ModelVariant::Symmetric, mode, 2_000, 4242);
        let net_report = run_session(cfg).unwrap();
        let local_report = run_experiment(&cfg.to_experiment_config()).unwrap();
        assert_eq!(net_report.counts, local_report.counts, "{mode:?}");
        assert_eq!(
            report_to_json(&net_report).unwrap(),
            report_to_json(&local_report).unwrap()
        );
    }
}

#[test]
fn session_violates_chsh_not_ch() {
    let cfg = session(
        ModelVariant::Symmetric,
        SettingMode::NodeRandom,
        100_000,
        91,
    );
    let report = run_session(cfg).unwrap();
    let chsh = report.chsh.unwrap();
    let sigma = report.pair_stats[0].sigma.unwrap();
    assert!(chsh.violated);
    assert!((chsh.s.abs() - 2.0 * 2.0_f64.sqrt()).abs() < 10.0 * sigma);
    assert!(!report.ch.violated);
}

#[test]
fn bob_always_fires_under_asymmetric_variant() {
    let cfg = session(
        ModelVariant::Asymmetric,
        SettingMode::NodeRandom,
        3_000,
        10,
    );
    let mut alice_missing = 0u64;
    for t in 0..cfg.total_trials() {
        let rb = node_record(&cfg, Side::Bob, t).unwrap();
        assert_ne!(rb.outcome, Outcome::NoDetection);
        let ra = node_record(&cfg, Side::Alice, t).unwrap();
        alice_missing += (ra.outcome == Outcome::NoDetection) as u64;
    }
    // Alice misses half the trials: Binomial(12000, 1/2), 5 sigma ~ 274.
    let expect = cfg.total_trials() as f64 / 2.0;
    assert!((alice_missing as f64 - expect).abs() < 5.0 * (expect / 2.0).sqrt());
}

#[test]
fn duplicate_role_aborts_the_session() {
    let cfg = session(ModelVariant::Symmetric, SettingMode::NodeRandom, 10, 1);
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let referee = thread::spawn(move || referee_serve_on(listener, &cfg));

    let hello = |role| {
        let mut s = TcpStream::connect(addr).unwrap();
        write_message(
            &mut s,
            &WireMessage::Hello {
                role,
                version: PROTOCOL_VERSION,
            },
        )
        .unwrap();
        s
    };
    let _a1 = hello(Side::Alice);
    let _a2 = hello(Side::Alice);
    match referee.join().unwrap() {
        Err(NetError::DuplicateRole(Side::Alice)) => {}
        other => panic!("expected duplicate-role error, got {other:?}"),
    }
}

#[test]
fn version_mismatch_is_rejected() {
    let cfg = session(ModelVariant::Symmetric, SettingMode::NodeRandom, 10, 1);
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let referee = thread::spawn(move || referee_serve_on(listener, &cfg));
    let mut s = TcpStream::connect(addr).unwrap();
    write_message(
        &mut s,
        &WireMessage::Hello {
            role: Side::Alice,
            version: PROTOCOL_VERSION + 1,
        },
    )
    .unwrap();
    match referee.join().unwrap() {
        Err(NetError::VersionMismatch { got, want }) => {
            assert_eq!(got, PROTOCOL_VERSION + 1);
            assert_eq!(want, PROTOCOL_VERSION);
        }
        other => panic!("expected version mismatch, got {other:?}"),
    }
}

/// A node that handshakes correctly but then misbehaves per `tamper`.
fn misbehaving_node(
    addr: std::net::SocketAddr,
    role: Side,
    tamper: impl Fn(u64, Record) -> Option<Record> + Send + 'static,
) -> thread::JoinHandle<()> {
    thread::spawn(move || {
        let mut s = TcpStream::connect(addr).unwrap();
        write_message(
            &mut s,
            &WireMessage::Hello {
                role,
                version: PROTOCOL_VERSION,
            },
        )
        .unwrap();
        let cfg = match read_message(&mut s).unwrap() {
            WireMessage::Start(cfg) => cfg,
            _ => panic!("expected Start"),
        };
        let mut checksum = detloophole::net::StreamChecksum::new();
        let mut sent = 0;
        for t in 0..cfg.total_trials() {
            let r = node_record(&cfg, role, t).unwrap();
            match tamper(t, r) {
                Some(r) => {
                    checksum.update(&r);
                    if write_message(&mut s, &WireMessage::Record(r)).is_err() {
                        return; // referee already rejected the stream
                    }
                    sent += 1;
                }
                None => break,
            }
        }
        let _ = write_message(
            &mut s,
            &WireMessage::Done(detloophole::net::DoneSummary {
                record_count: sent,
                checksum: checksum.value(),
            }),
        );
    })
}

fn run_with_bad_alice(
    tamper: impl Fn(u64, Record) -> Option<Record> + Send + 'static,
) -> Result<detloophole::ExperimentReport, NetError> {
    let cfg = session(ModelVariant::Symmetric, SettingMode::NodeRandom, 50, 3);
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let referee = thread::spawn(move || referee_serve_on(listener, &cfg));
    let _alice = misbehaving_node(addr, Side::Alice, tamper);
    let bob = thread::spawn(move || node_run_on(Side::Bob, TcpStream::connect(addr).unwrap()));
    let _ = bob.join().unwrap();
    referee.join().unwrap()
}

#[test]
fn out_of_order_records_are_rejected() {
    let result = run_with_bad_alice(|t, mut r| {
        if t == 5 {
            r.trial_index = 7; // skip ahead
        }
        Some(r)
    });
    match result {
        Err(NetError::OutOfOrderRecord {
            side: Side::Alice,
            expected: 5,
            got: 7,
        }) => {}
        other => panic!("expected out-of-order error, got {other:?}"),
    }
}

#[test]
fn truncated_streams_are_rejected() {
    let result = run_with_bad_alice(|t, r| if t == 20 { None } else { Some(r) });
    match result {
        Err(NetError::MissingTrials {
            side: Side::Alice,
            got: 20,
            ..
        }) => {}
        other => panic!("expected missing-trials error, got {other:?}"),
    }
}

#[test]
fn outcome_tampering_breaks_the_schedule_or_checksum() {
    // Flipping a setting index violates the agreed schedule.
    let result = run_with_bad_alice(|t, mut r| {
        if t == 9 {
            r.setting_index ^= 1;
        }
        Some(r)
    });
    match result {
        Err(NetError::ScheduleViolation {
            side: Side::Alice,
            trial: 9,
            ..
        }) => {}
        other => panic!("expected schedule violation, got {other:?}"),
    }
}

#[test]
fn no_signaling_holds_for_honest_sessions_and_fails_for_the_fixture() {
    let cfg = session(
        ModelVariant::Symmetric,
        SettingMode::NodeRandom,
        50_000,
        777,
    );
    let report = run_session(cfg).unwrap();
    let honest = verify_no_signaling(&report.counts);
    assert!(!honest.insufficient_statistics);
    assert!(honest.max_residual_sigmas < 5.0, "{honest:?}");

    let fixture = signaling_fixture_counts(&cfg).unwrap();
    let broken = verify_no_signaling(&fixture);
    assert!(broken.max_residual_sigmas > 5.0, "{broken:?}");
}

#[test]
fn referee_scheduled_mode_cycles_settings() {
    let cfg = session(ModelVariant::Symmetric, SettingMode::RefereeScheduled, 8, 2);
    for t in 0..cfg.total_trials() {
        let pair = PairIndex::ALL[(t % 4) as usize];
        assert_eq!(
            cfg.setting_index(Side::Alice, t),
            pair.alice_primed() as u8
        );
        assert_eq!(cfg.setting_index(Side::Bob, t), pair.bob_primed() as u8);
    }
}
