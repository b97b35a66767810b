use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn iad(args: &[&str]) -> Output {
    iad_env(args, &[])
}

fn iad_env(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_iad"));
    cmd.args(args);
    for (k, _) in std::env::vars() {
        if k.starts_with("IAD_") {
            cmd.env_remove(k);
        }
    }
    cmd.envs(env.iter().copied());
    cmd.output().unwrap()
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "status {:?}\nstderr: {}",
        out.status,
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn generate(dir: &Path, extra: &[&str]) -> (std::path::PathBuf, std::path::PathBuf) {
    let traces = dir.join("traces.csv");
    let labels = dir.join("labels.csv");
    let mut args = vec!["generate", "--traces", s(&traces), "--labels", s(&labels)];
    args.extend_from_slice(extra);
    ok(&iad(&args));
    (traces, labels)
}

#[test]
fn generate_defaults_shape_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let (traces, labels) = generate(dir.path(), &[]);
    let text = fs::read_to_string(&traces).unwrap();
    assert_eq!(text.lines().next().unwrap(), "tick,vmm_id,vm_id,value");
    assert_eq!(text.lines().count(), 1 + 10 * 10 * 1000);
    let label_text = fs::read_to_string(&labels).unwrap();
    assert_eq!(label_text.lines().count(), 11);
    let positives = label_text.lines().filter(|l| l.contains(",true,")).count();
    assert_eq!(positives, 5);

    let again = tempfile::tempdir().unwrap();
    let (traces2, labels2) = generate(again.path(), &[]);
    assert_eq!(fs::read(&traces).unwrap(), fs::read(traces2).unwrap());
    assert_eq!(fs::read(&labels).unwrap(), fs::read(labels2).unwrap());

    let other = tempfile::tempdir().unwrap();
    let (traces3, _) = generate(other.path(), &["--seed", "7"]);
    assert_ne!(fs::read(&traces).unwrap(), fs::read(traces3).unwrap());
}

#[test]
fn no_anomalous_vmms_gives_all_false_labels() {
    let dir = tempfile::tempdir().unwrap();
    let (_, labels) = generate(
        dir.path(),
        &["--percent-anomalous-vmms", "0", "--num-ticks", "200"],
    );
    let text = fs::read_to_string(labels).unwrap();
    assert!(text.lines().skip(1).all(|l| l.contains(",false,")));
}

#[test]
fn detect_echoes_config_and_flags_faults() {
    let dir = tempfile::tempdir().unwrap();
    let (traces, labels) = generate(dir.path(), &[]);
    let results = dir.path().join("results.json");
    ok(&iad(&[
        "detect",
        "--traces",
        s(&traces),
        "--output",
        s(&results),
        "--w",
        "50",
    ]));
    let doc: Value = serde_json::from_str(&fs::read_to_string(&results).unwrap()).unwrap();
    assert_eq!(doc["config"]["detector"]["w"], 50);
    assert_eq!(doc["config"]["detector"]["min_percent_vms_fault"], 90.0);
    assert_eq!(doc["vmms"].as_array().unwrap().len(), 10);

    let eval = ok(&iad(&[
        "evaluate",
        "--results",
        s(&results),
        "--labels",
        s(&labels),
    ]));
    let eval: Value = serde_json::from_str(&eval).unwrap();
    assert!(eval["report"]["f1"].as_f64().unwrap() >= 0.9, "{eval}");
}

#[test]
fn mismatched_lengths_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let traces = dir.path().join("bad.csv");
    let mut body = String::from("tick,vmm_id,vm_id,value\n");
    for t in 1..=100 {
        body.push_str(&format!("{t},h,a,50\n"));
        if t <= 90 {
            body.push_str(&format!("{t},h,b,50\n"));
        }
    }
    fs::write(&traces, body).unwrap();
    let out = iad(&["detect", "--traces", s(&traces)]);
    assert_eq!(code(&out), 2);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("length"), "{err}");
    assert!(err.contains('b'), "{err}");
}

#[test]
fn evaluate_with_missing_vmm_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let (traces, labels) = generate(dir.path(), &["--num-ticks", "300"]);
    let results = dir.path().join("results.json");
    ok(&iad(&[
        "detect",
        "--traces",
        s(&traces),
        "--output",
        s(&results),
    ]));
    let text = fs::read_to_string(&labels).unwrap();
    let trimmed: Vec<&str> = text.lines().take(text.lines().count() - 1).collect();
    fs::write(&labels, trimmed.join("\n") + "\n").unwrap();
    let out = iad(&["evaluate", "--results", s(&results), "--labels", s(&labels)]);
    assert_eq!(code(&out), 2, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn bench_prints_one_row_per_vm_count() {
    let out = ok(&iad(&[
        "bench",
        "--vms",
        "1,10,100",
        "--ticks",
        "1000",
        "--repetitions",
        "1",
    ]));
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines[0], "num_vms,num_ticks,seconds");
    assert_eq!(lines.len(), 4);
    for (line, vms) in lines[1..].iter().zip(["1", "10", "100"]) {
        let cols: Vec<&str> = line.split(',').collect();
        assert_eq!(cols[0], vms);
        assert_eq!(cols[1], "1000");
        assert!(cols[2].parse::<f64>().unwrap() > 0.0);
    }
}

#[test]
fn bench_writes_files() {
    let dir = tempfile::tempdir().unwrap();
    let json = dir.path().join("b.json");
    let csv = dir.path().join("b.csv");
    ok(&iad(&[
        "bench",
        "--vms",
        "2",
        "--ticks",
        "500",
        "--repetitions",
        "1",
        "--output-json",
        s(&json),
        "--output-csv",
        s(&csv),
    ]));
    let doc: Value = serde_json::from_str(&fs::read_to_string(json).unwrap()).unwrap();
    assert_eq!(doc["points"].as_array().unwrap().len(), 1);
    assert_eq!(fs::read_to_string(csv).unwrap().lines().count(), 2);
}

#[test]
fn pipeline_prints_f1_last() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(&iad(&["pipeline", "--out-dir", s(dir.path())]));
    let last = out.lines().last().unwrap();
    let f1: f64 = last.trim().parse().unwrap();
    assert!(f1 >= 0.9, "{out}");
    for name in [
        "traces.csv",
        "labels.csv",
        "results.json",
        "evaluation.json",
    ] {
        assert!(dir.path().join(name).exists(), "{name}");
    }
}

#[test]
fn flag_beats_env_beats_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let (traces, _) = generate(dir.path(), &["--num-ticks", "300", "--num-vmms", "2"]);
    let conf = dir.path().join("iad.conf");
    fs::write(
        &conf,
        "# detector settings\nw = 30\nmin-percent-vms-fault = 80\n",
    )
    .unwrap();
    let window = |args: &[&str], env: &[(&str, &str)]| -> (Value, Value) {
        let mut all = vec!["--config", s(&conf), "detect", "--traces", s(&traces)];
        all.extend_from_slice(args);
        let doc: Value = serde_json::from_str(&ok(&iad_env(&all, env))).unwrap();
        (
            doc["config"]["detector"]["w"].clone(),
            doc["config"]["detector"]["min_percent_vms_fault"].clone(),
        )
    };
    assert_eq!(window(&[], &[]), (30.into(), 80.0.into()));
    assert_eq!(window(&[], &[("IAD_W", "40")]), (40.into(), 80.0.into()));
    assert_eq!(
        window(&["--w", "20"], &[("IAD_W", "40")]),
        (20.into(), 80.0.into())
    );
}

#[test]
fn bad_input_is_a_usage_error() {
    assert_eq!(code(&iad(&["detect", "--no-such-flag"])), 2);
    assert_eq!(code(&iad(&["pipeline", "--w", "0"])), 2);
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("c.conf");
    fs::write(&conf, "bogus = 1\n").unwrap();
    let out = iad(&["--config", s(&conf), "pipeline", "--num-ticks", "200"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("bogus"));
}

#[test]
fn missing_file_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = iad(&["detect", "--traces", s(&dir.path().join("absent.csv"))]);
    assert_eq!(code(&out), 3);
}
