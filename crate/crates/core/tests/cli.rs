//! End-to-end runs of the `inpaint` binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use simgraph_inpaint::audio_io::{read_audio, write_audio, AudioBuffer};
use simgraph_inpaint::synth::{self, Fixture};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_inpaint")).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn save(dir: &Path, name: &str, samples: Vec<f64>, rate: u32) -> PathBuf {
    let path = dir.join(name);
    write_audio(&path, &AudioBuffer::mono(samples, rate).unwrap()).unwrap();
    path
}

fn save_config(dir: &Path, json: &str) -> PathBuf {
    let path = dir.join("config.json");
    std::fs::write(&path, json).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn reversed_gap_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let input = save(dir.path(), "in.wav", synth::white_noise(2.0, 8000, 0.3, 1), 8000);
    let output = dir.path().join("out.wav");
    let out = run(&["inpaint", "--input", s(&input), "--output", s(&output), "--gap-start", "1.2", "--gap-end", "1.0"]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
    assert!(!output.exists());
}

#[test]
fn garbage_input_is_a_format_error() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.wav");
    std::fs::write(&input, b"definitely not audio").unwrap();
    let output = dir.path().join("out.wav");
    let out = run(&["inpaint", "--input", s(&input), "--output", s(&output), "--gap-start", "0.1", "--gap-end", "0.2"]);
    assert_eq!(code(&out), 3, "{}", stderr(&out));
    assert!(!output.exists());

    let out = run(&["inpaint", "--input", s(&dir.path().join("missing.wav")), "--output", s(&output), "--gap-start", "0.1", "--gap-end", "0.2"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn noise_without_strong_edges_reports_no_transition() {
    let dir = tempfile::tempdir().unwrap();
    let input = save(dir.path(), "noise.wav", synth::white_noise(20.0, 44100, 0.3, 77), 44100);
    let config = save_config(dir.path(), r#"{"t_w": 3.0}"#);
    let output = dir.path().join("out.wav");
    let out = run(&[
        "inpaint", "--input", s(&input), "--output", s(&output), "--gap-start", "8", "--gap-end", "10", "--config", s(&config),
    ]);
    assert_eq!(code(&out), 4, "{}", stderr(&out));
    let err = stderr(&out);
    assert!(err.contains("no acceptable transition"), "{err}");
    assert!(err.contains("t_w") || err.contains("K"), "{err}");
    assert!(!output.exists());

    let csv = dir.path().join("ws.csv");
    let config = save_config(dir.path(), r#"{"t_w": 10.0}"#);
    let out = run(&[
        "analyze", "--input", s(&input), "--stage", "ws", "--export", s(&csv), "--gap-start", "8", "--gap-end", "10",
        "--config", s(&config),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = std::fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 2, "{text}");
    assert!(lines[0].starts_with("# N="));
    assert_eq!(lines[1], "l,k,weight");
}

#[test]
fn full_graph_of_three_frames() {
    let dir = tempfile::tempdir().unwrap();
    let input = save(dir.path(), "toy.wav", synth::white_noise(0.032, 12000, 0.5, 3), 12000);
    assert_eq!(read_audio(&input).unwrap().len(), 384);
    let config = save_config(dir.path(), r#"{"K": 1, "min_separation": 0}"#);
    let csv = dir.path().join("w0.csv");
    let out = run(&["analyze", "--input", s(&input), "--full", "--stage", "w0", "--export", s(&csv), "--config", s(&config)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = std::fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("# N=3 stage=w0"));
    assert_eq!(lines.next(), Some("l,k,weight"));
    let rows: Vec<(usize, usize, f64)> = lines
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[0].parse().unwrap(), f[1].parse().unwrap(), f[2].parse().unwrap())
        })
        .collect();
    assert_eq!(rows.len(), 3, "{text}");
    for (l, k, w) in rows {
        assert!(l < 3 && k < 3 && w > 0.0 && w <= 1.0);
    }
}

#[test]
fn analyze_argument_checks() {
    let dir = tempfile::tempdir().unwrap();
    let input = save(dir.path(), "in.wav", synth::white_noise(2.0, 8000, 0.3, 1), 8000);
    let csv = dir.path().join("g.csv");
    let out = run(&["analyze", "--input", s(&input), "--stage", "w", "--export", s(&csv)]);
    assert_eq!(code(&out), 2);
    let out = run(&["analyze", "--input", s(&input), "--full", "--stage", "w", "--export", s(&csv), "--gap-start", "1", "--gap-end", "1.1"]);
    assert_eq!(code(&out), 2);
    assert!(!csv.exists());
}

#[test]
fn repeated_signal_is_restored() {
    let dir = tempfile::tempdir().unwrap();
    let single = Fixture::ToneMixture.render(12.0, 44100, 11);
    let doubled = synth::repeat(&single, 2);
    let input = save(dir.path(), "in.wav", doubled.clone(), 44100);
    let output = dir.path().join("out.wav");
    let report = dir.path().join("report.json");
    let graph = dir.path().join("graph.csv");
    let out = run(&[
        "inpaint", "--input", s(&input), "--output", s(&output), "--gap-start", "17", "--gap-end", "18", "--report", s(&report),
        "--export-graph", s(&graph),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let restored = read_audio(&output).unwrap();
    let original = read_audio(&input).unwrap();
    assert_eq!(restored.sample_rate(), 44100);
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(json["gaps"].as_array().unwrap().len(), 1);
    assert!(json.get("timings").is_none_or(|t| t.is_null()));
    assert!(std::fs::read_to_string(&graph).unwrap().contains("stage=ws"));
    if restored.len() == original.len() {
        let (a, b) = (44100 * 17, 44100 * 18);
        let err: f64 = restored.channel(0)[a..b].iter().zip(&original.channel(0)[a..b]).map(|(x, y)| (x - y).powi(2)).sum();
        let energy: f64 = original.channel(0)[a..b].iter().map(|x| x * x).sum();
        assert!(err / energy < 1e-3, "relative error {}", err / energy);
    }
}

#[test]
fn verify_with_empty_gap_passes() {
    let dir = tempfile::tempdir().unwrap();
    let single = Fixture::ToneMixture.render(8.0, 22050, 4);
    let input = save(dir.path(), "in.wav", single, 22050);
    let out = run(&["verify", "--input", s(&input), "--gap-length", "0", "--trials", "2"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(String::from_utf8_lossy(&out.stdout).lines().last(), Some("PASS"));
}
