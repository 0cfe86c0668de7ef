use std::ffi::{CStr, CString};
use std::path::Path;
use std::ptr;
use std::sync::OnceLock;

use steersim::cli::{
    cmd_gen_flows, cmd_gen_radio, cmd_gen_trajectories, cmd_mobility, cmd_train_coverage,
    cmd_train_traffic, RunConfig, COVERAGE_MODEL_FILE, FLOWS_FILE, RADIO_FILE, TRAFFIC_MODEL_FILE,
    TRAJECTORIES_FILE, TRAJECTORY_MODEL_FILE,
};
use steersim::flowdata::{read_flows, Direction, FlowFormat};
use steersim::mobility::{match_trajectory, trajectory_fingerprints, TrajectoryModel};
use steersim::predictors::{
    predict_coverage_from_rsrp, predict_volume_proba, CoveragePredictor, TrafficPredictor,
};
use steersim::radioenv::{read_radio_samples, read_trajectories};
use steersim_ffi::*;

struct Fixture {
    _dir: tempfile::TempDir,
    out: std::path::PathBuf,
}

/// Small models trained once for the whole file.
fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().to_path_buf();
        let mut c = RunConfig::default();
        c.data.flows = 2000;
        c.data.radio_samples = 1000;
        c.forest.n_trees = 10;
        cmd_gen_flows(&c, &out).unwrap();
        cmd_gen_radio(&c, &out).unwrap();
        cmd_gen_trajectories(&c, &out).unwrap();
        cmd_train_traffic(&c, &out.join(FLOWS_FILE), &out).unwrap();
        cmd_train_coverage(&c, &out.join(RADIO_FILE), &out).unwrap();
        cmd_mobility(&c, &out.join(TRAJECTORIES_FILE), &out).unwrap();
        Fixture { _dir: dir, out }
    })
}

fn cpath(p: &Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

fn last_error() -> String {
    let p = steersim_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn version_matches_crate() {
    let v = unsafe { CStr::from_ptr(steersim_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn traffic_prediction_matches_library() {
    let f = fixture();
    let path = f.out.join(TRAFFIC_MODEL_FILE);
    let lib = TrafficPredictor::load(&path).unwrap();
    let flows = read_flows(f.out.join(FLOWS_FILE), FlowFormat::Jsonl).unwrap();

    let mut h = ptr::null_mut();
    let status = unsafe { steersim_traffic_load(cpath(&path).as_ptr(), &mut h) };
    assert_eq!(status, SteersimStatus::Ok);
    for flow in flows.iter().take(50) {
        let k = flow.key();
        let p = flow.first_packet();
        let key = SteersimFlowKey {
            src_addr: u32::from(k.src_addr),
            dst_addr: u32::from(k.dst_addr),
            src_port: k.src_port,
            dst_port: k.dst_port,
            protocol: k.protocol,
        };
        let pkt = SteersimPacket {
            arrival_time: p.arrival_time,
            size: p.size,
            direction: u8::from(p.direction == Direction::Downlink),
        };
        for threshold in [1_000u64, 10_000] {
            let mut out = f64::NAN;
            let s = unsafe { steersim_traffic_predict(h, &key, &pkt, threshold, &mut out) };
            assert_eq!(s, SteersimStatus::Ok, "{}", last_error());
            let expected = predict_volume_proba(&lib, k, p, threshold).unwrap();
            assert_eq!(out.to_bits(), expected.to_bits());
        }
    }
    unsafe { steersim_traffic_free(h) };
}

#[test]
fn traffic_errors_are_reported() {
    let f = fixture();
    let mut h = ptr::null_mut();
    let status =
        unsafe { steersim_traffic_load(cpath(&f.out.join(TRAFFIC_MODEL_FILE)).as_ptr(), &mut h) };
    assert_eq!(status, SteersimStatus::Ok);
    let key = SteersimFlowKey {
        src_addr: 1,
        dst_addr: 2,
        src_port: 3,
        dst_port: 443,
        protocol: 6,
    };
    let mut pkt = SteersimPacket {
        arrival_time: 0.0,
        size: 100,
        direction: 0,
    };
    let mut out = 0.0;

    let s = unsafe { steersim_traffic_predict(h, &key, &pkt, 5_000, &mut out) };
    assert_eq!(s, SteersimStatus::UnknownThreshold);
    assert!(last_error().contains("5000"));

    pkt.direction = 7;
    let s = unsafe { steersim_traffic_predict(h, &key, &pkt, 1_000, &mut out) };
    assert_eq!(s, SteersimStatus::InvalidArgument);

    let s = unsafe { steersim_traffic_predict(h, ptr::null(), &pkt, 1_000, &mut out) };
    assert_eq!(s, SteersimStatus::NullPointer);
    assert!(last_error().contains("key"));

    unsafe { steersim_traffic_free(h) };
    unsafe { steersim_traffic_free(ptr::null_mut()) };
}

#[test]
fn load_failures_map_to_status_codes() {
    let dir = tempfile::tempdir().unwrap();
    let mut h = ptr::null_mut();
    let missing = cpath(&dir.path().join("absent.json"));
    assert_eq!(
        unsafe { steersim_coverage_load(missing.as_ptr(), &mut h) },
        SteersimStatus::Io
    );
    assert!(h.is_null());

    let garbage = dir.path().join("garbage.json");
    std::fs::write(&garbage, "{not json").unwrap();
    assert_eq!(
        unsafe { steersim_coverage_load(cpath(&garbage).as_ptr(), &mut h) },
        SteersimStatus::Parse
    );

    // A traffic model is not a coverage model.
    let f = fixture();
    let wrong = cpath(&f.out.join(TRAFFIC_MODEL_FILE));
    let s = unsafe { steersim_coverage_load(wrong.as_ptr(), &mut h) };
    assert_ne!(s, SteersimStatus::Ok);
    assert!(h.is_null());

    assert_eq!(
        unsafe { steersim_coverage_load(ptr::null(), &mut h) },
        SteersimStatus::NullPointer
    );
}

#[test]
fn coverage_prediction_matches_library() {
    let f = fixture();
    let path = f.out.join(COVERAGE_MODEL_FILE);
    let lib = CoveragePredictor::load(&path).unwrap();
    let samples = read_radio_samples(f.out.join(RADIO_FILE)).unwrap();

    let mut h = ptr::null_mut();
    assert_eq!(
        unsafe { steersim_coverage_load(cpath(&path).as_ptr(), &mut h) },
        SteersimStatus::Ok
    );
    let mut cells = 0usize;
    assert_eq!(
        unsafe { steersim_coverage_cells(h, &mut cells) },
        SteersimStatus::Ok
    );
    assert_eq!(cells, lib.n_cells());

    for s in samples.samples.iter().take(50) {
        let mut out = f64::NAN;
        let st = unsafe {
            steersim_coverage_predict(h, s.primary_rsrp.as_ptr(), s.primary_rsrp.len(), &mut out)
        };
        assert_eq!(st, SteersimStatus::Ok, "{}", last_error());
        let expected = predict_coverage_from_rsrp(&lib, &s.primary_rsrp).unwrap();
        assert_eq!(out.to_bits(), expected.to_bits());
    }

    let short = vec![-90.0; cells - 1];
    let mut out = 0.0;
    let st = unsafe { steersim_coverage_predict(h, short.as_ptr(), short.len(), &mut out) };
    assert_eq!(st, SteersimStatus::SchemaMismatch);

    let bad = vec![f64::NAN; cells];
    let st = unsafe { steersim_coverage_predict(h, bad.as_ptr(), bad.len(), &mut out) };
    assert_eq!(st, SteersimStatus::OutOfRange);
    unsafe { steersim_coverage_free(h) };
}

#[test]
fn trajectory_match_agrees_with_library() {
    let f = fixture();
    let path = f.out.join(TRAJECTORY_MODEL_FILE);
    let lib = TrajectoryModel::load(&path).unwrap();
    let trajs = read_trajectories(f.out.join(TRAJECTORIES_FILE)).unwrap();

    let mut h = ptr::null_mut();
    assert_eq!(
        unsafe { steersim_trajectory_load(cpath(&path).as_ptr(), &mut h) },
        SteersimStatus::Ok
    );
    for traj in trajs.iter().take(10) {
        let steps = 8;
        let n_cells = traj.samples[0].sample.primary_rsrp.len();
        let flat: Vec<f64> = traj.samples[..steps]
            .iter()
            .flat_map(|s| s.sample.primary_rsrp.iter().copied())
            .collect();
        let mut m = SteersimRouteMatch::default();
        let st = unsafe { steersim_trajectory_match(h, flat.as_ptr(), steps, n_cells, &mut m) };
        assert_eq!(st, SteersimStatus::Ok, "{}", last_error());

        let prefix = &trajectory_fingerprints(traj, lib.detection_dbm).unwrap()[..steps];
        let best = &match_trajectory(&lib, prefix).unwrap()[0];
        assert_eq!(m.route_id, best.route_id);
        assert_eq!(m.current_step, best.current_step(steps));
        assert!((0.0..=1.0).contains(&m.score));

        let mut ahead = vec![f64::NAN; 3];
        let st = unsafe {
            steersim_trajectory_coverage_ahead(h, m.route_id, m.current_step, 3, ahead.as_mut_ptr())
        };
        if st == SteersimStatus::Ok {
            assert!(ahead.iter().all(|p| (0.0..=1.0).contains(p)));
        } else {
            assert_eq!(st, SteersimStatus::OutOfRange);
        }
    }

    let mut ahead = [0.0; 1];
    let st = unsafe { steersim_trajectory_coverage_ahead(h, 999, 0, 1, ahead.as_mut_ptr()) };
    assert_ne!(st, SteersimStatus::Ok);
    let mut m = SteersimRouteMatch::default();
    let st = unsafe { steersim_trajectory_match(h, ptr::null(), 0, 4, &mut m) };
    assert_ne!(st, SteersimStatus::Ok);
    unsafe { steersim_trajectory_free(h) };
}

#[test]
fn auc_of_perfect_and_inverted_rankings() {
    let scores = [0.1, 0.4, 0.35, 0.8];
    let mut out = 0.0;
    let st = unsafe { steersim_auc(scores.as_ptr(), [0u8, 1, 0, 1].as_ptr(), 4, &mut out) };
    assert_eq!(st, SteersimStatus::Ok);
    assert_eq!(out, 1.0);
    let st = unsafe { steersim_auc(scores.as_ptr(), [1u8, 0, 1, 0].as_ptr(), 4, &mut out) };
    assert_eq!(st, SteersimStatus::Ok);
    assert_eq!(out, 0.0);
    let st = unsafe { steersim_auc(scores.as_ptr(), [1u8, 1, 1, 1].as_ptr(), 4, &mut out) };
    assert_ne!(st, SteersimStatus::Ok);
    assert!(!last_error().is_empty());
}

#[test]
fn success_clears_last_error() {
    let mut out = 0.0;
    unsafe { steersim_auc(ptr::null(), ptr::null(), 3, &mut out) };
    assert!(!steersim_last_error().is_null());
    let st = unsafe { steersim_auc([0.2, 0.9].as_ptr(), [0u8, 1].as_ptr(), 2, &mut out) };
    assert_eq!(st, SteersimStatus::Ok);
    assert!(steersim_last_error().is_null());
}

#[test]
fn header_declares_every_entry_point() {
    let header =
        std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("include/steersim.h"))
            .unwrap();
    for name in [
        "steersim_last_error",
        "steersim_version",
        "steersim_traffic_load",
        "steersim_traffic_predict",
        "steersim_traffic_free",
        "steersim_coverage_load",
        "steersim_coverage_cells",
        "steersim_coverage_predict",
        "steersim_coverage_free",
        "steersim_trajectory_load",
        "steersim_trajectory_match",
        "steersim_trajectory_coverage_ahead",
        "steersim_trajectory_free",
        "steersim_auc",
    ] {
        assert!(
            header.contains(&format!("{name}(")),
            "{name} missing from header"
        );
    }
    assert!(header.contains("typedef struct SteersimTrafficPredictor SteersimTrafficPredictor"));
}
