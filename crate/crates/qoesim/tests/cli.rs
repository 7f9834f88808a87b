//! The `qoesim` binary end to end: config linting, run/batch outputs, trace
//! export and replay, and the compare table.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn qoesim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qoesim"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.display().to_string()
}

const SMALL: &str = r#"
architecture = "cross_layer"
duration_s = 8.0
seeds = [1, 2, 3]

[content]
preset = "grandma-like"
base_rate_kbps = 3000.0

[sources]
video = 3
ftp = 4
ftp_start_window_s = [0.0, 2.0]
"#;

#[test]
fn validate_reports_beta_out_of_range() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "bad.toml",
        "architecture = \"cross_layer\"\n[admission]\nbeta_mode = \"experimental\"\nbeta = 1.3\n",
    );
    let o = qoesim(&["validate", "--config", &cfg]);
    assert!(!o.status.success());
    assert!(
        stderr(&o).contains("admission.beta: β must lie in (0,1]"),
        "{}",
        stderr(&o)
    );
}

#[test]
fn validate_fills_cif_queue_default() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "cif.toml",
        "architecture = \"adaptive\"\n[content]\npreset = \"mad-like\"\n",
    );
    let o = qoesim(&["validate", "--config", &cfg]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("queue_packets = 300"), "{text}");
    assert!(text.contains("capacity_mbps = 32.0"), "{text}");
}

#[test]
fn validate_lists_every_problem_with_its_path() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "dup.toml",
        "architecture = \"adaptive\"\nseeds = [4, 4]\n[link]\nqueue_packets = 0\n",
    );
    let o = qoesim(&["validate", "--config", &cfg]);
    assert!(!o.status.success());
    let err = stderr(&o);
    assert!(err.contains("seeds: duplicate seed 4"), "{err}");
    assert!(err.contains("link.queue_packets"), "{err}");
}

#[test]
fn unknown_keys_and_presets_are_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "typo.toml",
        "architecture = \"adaptive\"\nduraton_s = 3.0\n",
    );
    assert!(!qoesim(&["validate", "--config", &cfg]).status.success());
    assert!(!qoesim(&["validate", "--preset", "nope"]).status.success());
    assert!(qoesim(&["validate", "--preset", "grandma-qcif"])
        .status
        .success());
}

#[test]
fn run_twice_gives_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "small.toml", SMALL);
    let mut outs = Vec::new();
    for k in 0..2 {
        let out = dir.path().join(format!("run{k}"));
        let o = qoesim(&[
            "run",
            "--config",
            &cfg,
            "--seed",
            "2",
            "--out",
            out.to_str().unwrap(),
            "--dump-events",
            "--dump-packets",
            "--dump-admission",
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        outs.push(out);
    }
    for f in [
        "events.log",
        "packets.csv",
        "admission.csv",
        "summary.csv",
        "runs.csv",
        "qp_timeline.csv",
        "effective_config.toml",
    ] {
        let a = fs::read(outs[0].join(f)).unwrap();
        assert!(!a.is_empty(), "{f}");
        assert_eq!(a, fs::read(outs[1].join(f)).unwrap(), "{f}");
    }
    let summary = fs::read_to_string(outs[0].join("summary.csv")).unwrap();
    assert!(summary
        .starts_with("flow,kind,admitted,decoded,mos,mean_delay_ms,loss_ratio,delivered_bits"));
    assert_eq!(summary.lines().count(), 1 + 3 + 4);
    let packets = fs::read_to_string(outs[0].join("packets.csv")).unwrap();
    assert!(packets.starts_with("time,flow,seq,event,queue_occupancy\n"));
    let audit = fs::read_to_string(outs[0].join("admission.csv")).unwrap();
    assert!(audit.starts_with(
        "time,session_id,n_before,mu_s,beta,epsilon,pro_iaar,x_new_tried_list,decision,accepted_qp\n"
    ));
    assert!(audit.lines().count() > 1);
}

#[test]
fn batch_is_independent_of_seed_order() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "small.toml", SMALL);
    let fwd = write(dir.path(), "fwd.txt", "1 2 3\n");
    let rev = write(dir.path(), "rev.txt", "# reversed\n3,2\n1\n");
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for (seeds, out) in [(&fwd, &a), (&rev, &b)] {
        let o = qoesim(&[
            "batch",
            "--config",
            &cfg,
            "--seeds",
            seeds,
            "--out",
            out.to_str().unwrap(),
            "--gnuplot",
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let mut cdfs = 0;
    for e in fs::read_dir(&a).unwrap() {
        let name = e.unwrap().file_name().into_string().unwrap();
        if name.starts_with("cdf_") || name == "runs.csv" || name == "manifest.toml" {
            cdfs += name.starts_with("cdf_") as usize;
            assert_eq!(
                fs::read(a.join(&name)).unwrap(),
                fs::read(b.join(&name)).unwrap(),
                "{name}"
            );
        }
    }
    assert!(cdfs >= 7);
    assert!(a.join("seed_3/summary.csv").exists());
    let cdf = fs::read_to_string(a.join("cdf_utilization.csv")).unwrap();
    assert!(cdf.starts_with("value,cum_fraction\n"));
    assert!(cdf.trim_end().ends_with(",1"));
    let manifest = fs::read_to_string(a.join("manifest.toml")).unwrap();
    assert!(manifest.contains("architecture = \"cross_layer\""));
    assert!(manifest.contains("seeds = [1, 2, 3]"));
    assert!(manifest.contains("config_sha256"));

    let o = qoesim(&["compare", a.to_str().unwrap(), b.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let table = stdout(&o);
    assert_eq!(table.lines().count(), 3);
    assert_eq!(table.lines().nth(1).unwrap(), table.lines().nth(2).unwrap());
}

#[test]
fn single_seed_batch_gives_single_point_cdfs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "small.toml", SMALL);
    let seeds = write(dir.path(), "one.txt", "5");
    let out = dir.path().join("one");
    let o = qoesim(&[
        "batch",
        "--config",
        &cfg,
        "--seeds",
        &seeds,
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let cdf = fs::read_to_string(out.join("cdf_decoded_sessions.csv")).unwrap();
    assert_eq!(cdf.lines().count(), 2);
    assert!(cdf.lines().nth(1).unwrap().ends_with(",1"));
}

#[test]
fn exported_traces_replay_like_synthetic_ones() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "small.toml", SMALL);
    let traces = dir.path().join("traces");
    let o = qoesim(&[
        "traces",
        "--config",
        &cfg,
        "--seed",
        "2",
        "--out",
        traces.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(traces.join("ladder.toml").exists());
    let qp2 = fs::read_to_string(traces.join("grandma-like_qp02.csv")).unwrap();
    assert!(qp2.starts_with("frame_index,frame_type,size_bytes\n0,I,"));
    assert_eq!(qp2.lines().count(), 871);

    let replay = write(
        dir.path(),
        "replay.toml",
        &format!("trace_manifest = \"traces/ladder.toml\"\n{SMALL}"),
    );
    let (a, b) = (dir.path().join("synthetic"), dir.path().join("replayed"));
    for (c, out) in [(&cfg, &a), (&replay, &b)] {
        let o = qoesim(&[
            "run",
            "--config",
            c,
            "--seed",
            "2",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    assert_eq!(
        fs::read(a.join("summary.csv")).unwrap(),
        fs::read(b.join("summary.csv")).unwrap()
    );
}

#[test]
fn broken_trace_manifest_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    write(
        dir.path(),
        "ladder.toml",
        "content = \"x\"\nframe_rate = 30\ngop_length = 30\nvariants = [{ qp = 2, file = \"a.csv\" }]\n",
    );
    write(
        dir.path(),
        "a.csv",
        "frame_index,frame_type,size_bytes\n0,P,100\n",
    );
    let cfg = write(
        dir.path(),
        "c.toml",
        &format!("trace_manifest = \"ladder.toml\"\n{SMALL}"),
    );
    let o = qoesim(&["validate", "--config", &cfg]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("GoP structure"), "{}", stderr(&o));
}
