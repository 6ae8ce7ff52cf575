//! External analyzer runner against the stub binary and its fault modes.

mod common;

use std::time::{Duration, Instant};

use reduct_core::oracle::{Analyzer, AnalyzerConfig, AnalyzerError, AnalyzerHandle};
use reduct_core::reduce::{code_reduce, ReductionConfig};
use reduct_core::SourceText;

fn stub(args: &[&str], timeout: Duration, max_restarts: u32) -> Analyzer {
    AnalyzerHandle::external(env!("CARGO_BIN_EXE_reduct-analyzer-stub"), args.iter().map(|s| s.to_string()).collect())
        .with_config(AnalyzerConfig { timeout, max_restarts })
        .session()
}

fn fig2() -> SourceText {
    SourceText::new(&common::fixture("fig2/a.js"))
}

#[test]
fn stub_matches_builtin_reports() {
    let mut ext = stub(&[], Duration::from_secs(10), 0);
    let mut builtin = AnalyzerHandle::default().session();
    for rel in ["fig2/a.js", "fig2/c.js", "fig3/original.js", "fig4/prediction.js"] {
        let code = SourceText::new(&common::fixture(rel));
        assert_eq!(ext.analyze(&code).unwrap(), builtin.analyze(&code).unwrap(), "{rel}");
    }
    assert_eq!(ext.calls(), 4);
}

#[test]
fn ping_answers_pong() {
    stub(&[], Duration::from_secs(10), 0).ping().unwrap();
}

#[test]
fn malformed_reply_is_an_error() {
    let err = stub(&["--mode", "malformed"], Duration::from_secs(10), 0).analyze(&fig2()).unwrap_err();
    assert!(matches!(err, AnalyzerError::Malformed(_)), "{err:?}");
}

#[test]
fn hang_times_out() {
    let t = Duration::from_millis(200);
    let start = Instant::now();
    let err = stub(&["--mode", "hang"], t, 0).analyze(&fig2()).unwrap_err();
    assert!(matches!(err, AnalyzerError::Timeout(d) if d == t), "{err:?}");
    assert!(start.elapsed() < Duration::from_secs(5));
}

#[test]
fn crash_without_restarts_reports_exit() {
    let err = stub(&["--mode", "crash"], Duration::from_secs(10), 0).analyze(&fig2()).unwrap_err();
    assert!(matches!(err, AnalyzerError::Exited(_)), "{err:?}");
}

#[test]
fn crash_is_recovered_by_a_restart() {
    let mut a = stub(&["--mode", "crash", "--fail-after", "2"], Duration::from_secs(10), 1);
    // the third request crashes the child; the restarted child answers it
    for _ in 0..5 {
        assert_eq!(a.analyze(&fig2()).unwrap().len(), 1);
    }
}

#[test]
fn missing_command_is_a_spawn_error() {
    let err = AnalyzerHandle::external("/nonexistent/analyzer", Vec::new())
        .session()
        .analyze(&fig2())
        .unwrap_err();
    assert!(matches!(err, AnalyzerError::Spawn { .. }), "{err:?}");
}

#[test]
fn reduction_through_the_stub_matches_builtin() {
    let code = fig2();
    let mut ext = stub(&[], Duration::from_secs(10), 0);
    let target = common::find_report(&mut ext, &code, "PT", 12).unwrap();
    let out = code_reduce(&code, &target, &mut ext, &ReductionConfig::default()).unwrap();
    assert_eq!(out.reduced.to_original_bytes(), common::fixture("fig2/c.js"));
}

#[test]
fn reduction_without_provenance_still_reaches_the_same_result() {
    let code = fig2();
    let mut ext = stub(&["--no-provenance"], Duration::from_secs(10), 0);
    let target = common::find_report(&mut ext, &code, "PT", 12).unwrap();
    assert!(target.provenance_lines.is_none());
    let out = code_reduce(&code, &target, &mut ext, &ReductionConfig::default()).unwrap();
    assert_eq!(out.reduced.to_original_bytes(), common::fixture("fig2/c.js"));
}

#[test]
fn bad_stub_arguments_exit_64() {
    let status = std::process::Command::new(env!("CARGO_BIN_EXE_reduct-analyzer-stub"))
        .arg("--mode")
        .arg("sideways")
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(64));
}
