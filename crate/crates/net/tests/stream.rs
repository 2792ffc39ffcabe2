use std::net::TcpListener;
use std::sync::atomic::AtomicU64;
use std::sync::mpsc;
use std::thread;
use std::time::{Duration, Instant};

use proptest::prelude::*;
use skylink_core::analysis::synchronize;
use skylink_core::scenario::Scenario;
use skylink_core::sim::simulate_run;
use skylink_core::sync::SyncError;
use skylink_core::timetag::TimeTag;
use skylink_net::{
    receive_tags, run_receiver, send_tags, FaultPlan, Frame, FrameDecoder, NetError, ReceiverConfig, SenderConfig,
    SessionPhase, Stats,
};

const START_MS: u64 = 1_760_000_000_000;

fn synthetic(n: usize) -> Vec<TimeTag> {
    (0..n).map(|i| TimeTag::from_parts((i % 4) as u8, 1_000 + 6_400 * i as u64).unwrap()).collect()
}

fn fast_sender() -> SenderConfig {
    SenderConfig { batch_size: 512, retransmit_timeout: Duration::from_millis(30), idle_timeout: Duration::from_secs(10), ..SenderConfig::default() }
}

fn fast_receiver() -> ReceiverConfig {
    ReceiverConfig { batch_size: 512, idle_timeout: Duration::from_secs(10), ..ReceiverConfig::default() }
}

/// Plain transfer without extraction; returns what Alice received.
fn transfer(tags: &[TimeTag], faults: FaultPlan, bob_start_ms: u64) -> (Result<Vec<TimeTag>, NetError>, Result<skylink_net::SenderReport, NetError>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let rcfg = fast_receiver();
    let (btx, brx) = mpsc::sync_channel(8);
    let (ftx, frx) = mpsc::channel();
    let alice = thread::spawn(move || {
        let rate = AtomicU64::new(0);
        let collector = thread::spawn(move || {
            let mut all = Vec::new();
            for b in brx {
                all.extend(b);
            }
            ftx.send(0).ok();
            all
        });
        let report = receive_tags(&listener, START_MS, &rcfg, btx, &rate, &frx);
        let all = collector.join().unwrap();
        report.map(|_| all)
    });
    let sent = send_tags(addr, tags, bob_start_ms, &fast_sender(), faults);
    (alice.join().unwrap(), sent)
}

#[test]
fn lossy_link_delivers_every_tag_in_order() {
    let tags = synthetic(60_000);
    let (got, sent) = transfer(&tags, FaultPlan { drop_prob: 0.05, seed: 11, ..FaultPlan::default() }, START_MS + 120);
    let sent = sent.unwrap();
    assert_eq!(got.unwrap(), tags);
    assert!(sent.drops > 0);
    assert!(sent.retransmissions >= sent.drops, "{sent:?}");
    assert_eq!(sent.epoch_s, START_MS / 1000);
}

#[test]
fn dropped_connection_resumes_from_last_acknowledged_batch() {
    let tags = synthetic(40_000);
    let (got, sent) = transfer(&tags, FaultPlan { cut_after_frames: Some(30), ..FaultPlan::default() }, START_MS);
    let sent = sent.unwrap();
    assert_eq!(sent.reconnects, 1);
    assert_eq!(got.unwrap(), tags);
}

#[test]
fn epochs_too_far_apart_abort_both_sides() {
    let (got, sent) = transfer(&synthetic(10), FaultPlan::default(), START_MS + 501);
    assert!(matches!(sent, Err(NetError::EpochDisagreement { delta_ms: 501 })), "{sent:?}");
    assert!(matches!(got, Err(NetError::EpochDisagreement { .. })));
}

#[test]
fn throughput_exceeds_link_rate() {
    let tags = synthetic(200_000);
    let t0 = Instant::now();
    let (got, sent) = transfer(&tags, FaultPlan::default(), START_MS);
    let rate = tags.len() as f64 / t0.elapsed().as_secs_f64();
    sent.unwrap();
    assert_eq!(got.unwrap().len(), tags.len());
    assert!(rate >= 2500.0, "{rate} tags/s");
}

#[test]
fn online_session_matches_offline_analysis() {
    let s = Scenario::bundled("paper-144km").unwrap();
    let out = simulate_run(&s.link, 40.0, 21).unwrap();
    let (a, b) = (out.alice.into_tags(), out.bob.into_tags());
    let offline = synchronize(&a, &b, &s.analysis).unwrap();

    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let bob = b.clone();
    let sender = thread::spawn(move || {
        let cfg = SenderConfig { batch_size: 4096, ..fast_sender() };
        send_tags(addr, &bob, START_MS, &cfg, FaultPlan { drop_prob: 0.05, seed: 3, ..FaultPlan::default() })
    });
    let rcfg = ReceiverConfig { batch_size: 4096, stats_every: 4, ..fast_receiver() };
    let outcome = run_receiver(&listener, &a, s.analysis, &rcfg, START_MS).unwrap();
    let sent = sender.join().unwrap().unwrap();

    let online = outcome.result.unwrap();
    assert_eq!(online.synced().unwrap(), offline);
    let phases: Vec<SessionPhase> = outcome.history.iter().map(|h| h.phase).collect();
    assert_eq!(phases, [SessionPhase::Handshake, SessionPhase::Syncing, SessionPhase::Locked]);

    let rate = sent.remote.expect("closing stats").rate_millicps as f64 / 1000.0;
    assert!((20.0..=40.0).contains(&rate), "{rate} cps");
    assert_eq!(outcome.report.tags_received, b.len() as u64);
    assert_eq!(outcome.report.remote.map(|s| s.tags_sent), Some(b.len() as u64));
}

#[test]
fn empty_bob_stream_is_reported_not_hung() {
    let s = Scenario::bundled("paper-144km").unwrap();
    let a = simulate_run(&s.link, 0.5, 1).unwrap().alice.into_tags();
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let sender = thread::spawn(move || send_tags(addr, &[], START_MS, &fast_sender(), FaultPlan::default()));
    let outcome = run_receiver(&listener, &a, s.analysis, &fast_receiver(), START_MS).unwrap();
    let sent = sender.join().unwrap().unwrap();
    assert_eq!(sent.batches, 0);
    assert_eq!(outcome.result.unwrap_err(), SyncError::EmptyStream);
    assert_eq!(sent.remote, Some(Stats::default()));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn decoder_is_indifferent_to_fragmentation(
        n_tags in 0usize..300,
        cuts in proptest::collection::vec(0usize..4000, 0..40),
    ) {
        let frames = vec![
            Frame::EpochSync { start_ms: 7 },
            Frame::TagBatch { seq: 1, retransmit: false, tags: synthetic(n_tags) },
            Frame::Ack { next: 2, gap: true },
            Frame::TagBatch { seq: 2, retransmit: true, tags: synthetic(n_tags / 2) },
            Frame::Bye,
        ];
        let mut bytes = Vec::new();
        for f in &frames {
            f.encode_into(&mut bytes).unwrap();
        }
        let mut cuts: Vec<usize> = cuts.into_iter().map(|c| c % (bytes.len() + 1)).collect();
        cuts.push(0);
        cuts.push(bytes.len());
        cuts.sort_unstable();
        let mut d = FrameDecoder::new();
        let mut got = Vec::new();
        for w in cuts.windows(2) {
            d.feed(&bytes[w[0]..w[1]]);
            while let Some(f) = d.next_frame().unwrap() {
                got.push(f);
            }
        }
        prop_assert_eq!(got, frames);
        prop_assert_eq!(d.pending(), 0);
    }
}

#[test]
fn unreachable_endpoint_times_out() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap();
    let cfg = SenderConfig { connect_timeout: Duration::from_millis(300), ..fast_sender() };
    let t0 = Instant::now();
    let r = send_tags(port, &synthetic(10), START_MS, &cfg, FaultPlan::default());
    assert!(matches!(r, Err(NetError::Timeout)), "{r:?}");
    assert!(t0.elapsed() < Duration::from_secs(5));
}
