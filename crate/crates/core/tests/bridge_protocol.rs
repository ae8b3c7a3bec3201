mod common;

use std::io::{BufReader, BufWriter, Write};
use std::net::TcpListener;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use common::*;
use memometer::score::bridge::{BridgeClient, Frame, HEADER_BYTES, MAX_FRAME_VALUES};
use memometer::{Error, ExactMixtureScore, ScoreProvider};
use ndarray::Array2;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

enum Behaviour {
    Exact(ExactMixtureScore),
    /// Echo zeros of the requested shape and count the frames seen.
    Zeros(Arc<AtomicUsize>),
    /// Answer the handshake, then fail every request.
    Refuse,
    /// Answer the handshake, then close the connection.
    HangUp,
}

/// Single-connection reference responder on an ephemeral port.
fn serve(behaviour: Behaviour) -> String {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap().to_string();
    thread::spawn(move || {
        let (stream, _) = listener.accept().unwrap();
        let mut reader = BufReader::new(stream.try_clone().unwrap());
        let mut writer = BufWriter::new(stream);
        while let Ok(frame) = Frame::decode(&mut reader) {
            let Frame::Request { m, dims, values } = frame else { break };
            let reply = match &behaviour {
                _ if values.is_empty() => Frame::Response { m, dims, values },
                Behaviour::Exact(score) => {
                    let pts = Array2::from_shape_vec(
                        (values.len() / dims as usize, dims as usize),
                        values.iter().map(|&v| v as f64).collect(),
                    )
                    .unwrap();
                    match score.exact_score_batch(pts.view(), m) {
                        Ok(s) => Frame::Response { m, dims, values: s.iter().map(|&v| v as f32).collect() },
                        Err(e) => Frame::Error { m, message: e.to_string() },
                    }
                }
                Behaviour::Zeros(counter) => {
                    counter.fetch_add(1, Ordering::SeqCst);
                    Frame::Response { m, dims, values: vec![0.0; values.len()] }
                }
                Behaviour::Refuse => Frame::Error { m, message: "model unavailable".into() },
                Behaviour::HangUp => break,
            };
            reply.encode(&mut writer).unwrap();
            writer.flush().unwrap();
        }
    });
    addr
}

#[test]
fn exact_bridge_agrees_with_in_process_score() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let centers = uniform_matrix(&mut rng, 5, 2, 1.0);
    let local = ExactMixtureScore::from_centers(centers.clone(), 5.025);
    let addr = serve(Behaviour::Exact(ExactMixtureScore::from_centers(centers, 5.025)));
    let client = BridgeClient::connect_tcp(&addr, 2, Some(Duration::from_secs(10))).unwrap();
    assert!(!client.concurrent());
    // Points representable in f32 so only the response is quantised.
    let pts = uniform_matrix(&mut rng, 100, 2, 1.0).mapv(|v| v as f32 as f64);
    for m in [0.5, 1.0, 3.0] {
        let remote = client.evaluate(pts.view(), m).unwrap();
        let direct = local.evaluate(pts.view(), m).unwrap();
        let diff = (&remote - &direct).iter().fold(0.0f64, |a, v| a.max(v.abs()));
        assert!(diff < 1e-5, "m={m}: {diff}");
    }
}

#[test]
fn large_batches_are_split() {
    let counter = Arc::new(AtomicUsize::new(0));
    let addr = serve(Behaviour::Zeros(counter.clone()));
    let dim = 1 << 19;
    let client = BridgeClient::connect_tcp(&addr, dim, None).unwrap();
    assert_eq!(client.points_per_frame() * dim, MAX_FRAME_VALUES);
    let pts = Array2::<f64>::ones((5, dim));
    let out = client.evaluate(pts.view(), 1.0).unwrap();
    assert_eq!(out.dim(), (5, dim));
    assert_eq!(counter.load(Ordering::SeqCst), 3);
}

#[test]
fn server_errors_surface_as_bridge_errors() {
    let addr = serve(Behaviour::Refuse);
    let client = BridgeClient::connect_tcp(&addr, 3, None).unwrap();
    let err = client.evaluate(Array2::zeros((2, 3)).view(), 1.0).unwrap_err();
    assert!(matches!(&err, Error::Bridge(msg) if msg.contains("model unavailable")), "{err}");
    assert!(client.evaluate(Array2::zeros((2, 4)).view(), 1.0).is_err());
}

#[test]
fn disconnect_mid_integration_names_the_step() {
    let addr = serve(Behaviour::HangUp);
    let client = BridgeClient::connect_tcp(&addr, 2, Some(Duration::from_secs(5))).unwrap();
    let sched = memometer::Schedule::default().with_steps(10).unwrap();
    let err = memometer::ode::integrate_forward(Array2::zeros((3, 2)), &sched, &client, memometer::Method::Euler)
        .unwrap_err();
    assert!(matches!(err, Error::Integration { step: 1, .. }), "{err}");
}

#[test]
fn absent_server_fails_at_connect() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let err = BridgeClient::connect_tcp(&format!("127.0.0.1:{port}"), 2, Some(Duration::from_secs(2))).unwrap_err();
    assert!(matches!(err, Error::Bridge(_)), "{err}");
}

#[test]
fn stdio_peer_that_is_not_a_responder_fails_handshake() {
    assert!(BridgeClient::spawn_stdio("definitely-not-a-real-program-xyz", 2).is_err());
    assert!(BridgeClient::spawn_stdio("", 2).is_err());
    if std::path::Path::new("/bin/cat").exists() {
        // cat echoes our request back, which is not a response.
        assert!(BridgeClient::spawn_stdio("/bin/cat", 2).is_err());
    }
}

fn frames() -> impl Strategy<Value = Frame> {
    let points = (1u32..16, 0usize..20, any::<f64>()).prop_flat_map(|(dims, n, m)| {
        (prop::collection::vec(any::<u32>(), n * dims as usize), Just(dims), Just(m), any::<bool>())
    });
    prop_oneof![
        points.prop_map(|(bits, dims, m, request)| {
            let values = bits.into_iter().map(f32::from_bits).collect();
            if request {
                Frame::Request { m, dims, values }
            } else {
                Frame::Response { m, dims, values }
            }
        }),
        (any::<f64>(), ".{0,64}").prop_map(|(m, message)| Frame::Error { m, message }),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn encode_decode_is_identity(frame in frames()) {
        let bytes = frame.to_bytes();
        let back = Frame::decode(&mut bytes.as_slice()).unwrap();
        // Compare encodings so NaN payloads count as equal bit patterns.
        prop_assert_eq!(back.to_bytes(), bytes.clone());
        prop_assert_eq!(back.kind(), frame.kind());
        prop_assert!(bytes.len() >= HEADER_BYTES);
    }
}
