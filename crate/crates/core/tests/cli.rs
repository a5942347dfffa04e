use drp_core::experiment::synth::wrapped_frequency;
use drp_core::experiment::{parse_trace_csv, trace_to_csv, SyntheticImage, TRACE_HEADER};
use drp_core::solver::{ConvergenceTrace, TraceEntry};
use drp_core::tensor::{read_image, RngSeed};
use proptest::prelude::*;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const DRP: &str = env!("CARGO_BIN_EXE_drp");

fn drp(args: &[&str]) -> Output {
    Command::new(DRP).args(args).output().expect("drp runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

/// A 16×16 deblur with the analytic prior; `extra` replaces fragments.
fn small_config(dir: &Path, name: &str, edits: &[(&str, &str)]) -> PathBuf {
    let mut text = String::from(
        r#"
[problem]
kind = "deblur"
noise_sigma = 0.01
seed = 4
kernel = { size = 5, std = 1.0 }
synthetic = { kind = "mixed", size = 16, cell = 4 }

[prior]
kind = "gaussian"
mean = 0.5
variance = 0.05
length_scale = 2.0
noise_std = 0.02
stages = [{ q = 2, iters = 5 }, { q = 1, iters = 20 }]

[solver]
gamma = 2.0
tau = 1.0
stop_tol = 1e-6

[output]
dir = "OUT"
"#,
    )
    .replace("OUT", name);
    for (from, to) in edits {
        assert!(text.contains(from), "fragment {from:?} missing");
        text = text.replace(from, to);
    }
    let path = dir.join(format!("{name}.toml"));
    std::fs::write(&path, text).unwrap();
    path
}

fn read(path: impl AsRef<Path>) -> Vec<u8> {
    std::fs::read(path).unwrap()
}

#[test]
fn zero_iterations_write_the_initial_estimate() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(
        tmp.path(),
        "zero",
        &[("stages = [{ q = 2, iters = 5 }, { q = 1, iters = 20 }]", "stages = [{ q = 1, iters = 0 }]")],
    );
    let out = drp(&["run", cfg.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let dir = tmp.path().join("zero");
    assert_eq!(std::fs::read_to_string(dir.join("trace.csv")).unwrap(), format!("{TRACE_HEADER}\n"));
    // deblurring starts from the observation itself
    assert_eq!(read(dir.join("restored.png")), read(dir.join("observation.png")));
    let summary: serde_json::Value = serde_json::from_slice(&read(dir.join("summary.json"))).unwrap();
    assert_eq!(summary["iterations"], 0);
}

#[test]
fn invalid_key_is_a_config_error_with_no_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path(), "bad", &[("tau = 1.0", "tau = 1.0\nmomentum = 0.5")]);
    let out = drp(&["run", cfg.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    assert!(!tmp.path().join("bad").exists());
    assert!(String::from_utf8_lossy(&out.stderr).contains("momentum"));

    let cfg = small_config(tmp.path(), "neg", &[("gamma = 2.0", "gamma = -2.0")]);
    assert_eq!(code(&drp(&["run", cfg.to_str().unwrap()])), 2);
    assert!(!tmp.path().join("neg").exists());
}

#[test]
fn io_errors_exit_three() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("absent.toml");
    assert_eq!(code(&drp(&["run", missing.to_str().unwrap()])), 3);
    let cfg = small_config(
        tmp.path(),
        "noimg",
        &[("synthetic = { kind = \"mixed\", size = 16, cell = 4 }", "image = \"nowhere.png\"")],
    );
    assert_eq!(code(&drp(&["run", cfg.to_str().unwrap()])), 3);
    assert!(!tmp.path().join("noimg").exists());
}

#[test]
fn runs_are_byte_identical_and_improve_psnr() {
    let tmp = tempfile::tempdir().unwrap();
    let a = small_config(tmp.path(), "a", &[]);
    let b = small_config(tmp.path(), "b", &[]);
    let out = drp(&["run", "--jobs", "2", a.to_str().unwrap(), b.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for file in ["restored.png", "observation.png", "trace.csv", "summary.json"] {
        assert_eq!(read(tmp.path().join("a").join(file)), read(tmp.path().join("b").join(file)), "{file}");
    }
    let resolved = |d: &str| std::fs::read_to_string(tmp.path().join(d).join("config.resolved.toml")).unwrap();
    assert_eq!(resolved("a").replace("dir = \"a\"", "dir = \"b\""), resolved("b"));
    let summary: serde_json::Value = serde_json::from_slice(&read(tmp.path().join("a/summary.json"))).unwrap();
    assert!(summary["output_psnr"].as_f64().unwrap() > summary["input_psnr"].as_f64().unwrap());

    let rows = parse_trace_csv(&std::fs::read_to_string(tmp.path().join("a/trace.csv")).unwrap()).unwrap();
    assert_eq!(rows.len(), summary["iterations"].as_u64().unwrap() as usize);
    assert!(rows.iter().all(|r| r.objective.is_some() && r.psnr.is_some() && r.subgrad_norm.is_some()));

    // the resolved copy is itself a valid config that reproduces the run
    let resolved = tmp.path().join("a/config.resolved.toml");
    let text = std::fs::read_to_string(&resolved).unwrap().replace("dir = \"a\"", "dir = \"again\"");
    std::fs::write(&resolved, text).unwrap();
    assert_eq!(code(&drp(&["run", resolved.to_str().unwrap()])), 0);
    assert_eq!(read(tmp.path().join("a/again/restored.png")), read(tmp.path().join("a/restored.png")));
}

#[test]
fn oversized_step_exits_four() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(
        tmp.path(),
        "diverge",
        &[
            ("gamma = 2.0", "gamma = 1000.0"),
            ("tau = 1.0", "tau = 1000.0"),
            ("stop_tol = 1e-6", "stop_tol = 0.0"),
            ("{ q = 1, iters = 20 }", "{ q = 1, iters = 400 }"),
        ],
    );
    let out = drp(&["run", cfg.to_str().unwrap()]);
    assert_eq!(code(&out), 4, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(!tmp.path().join("diverge").exists());
}

fn external(command: &[&str]) -> String {
    let args: Vec<String> = command.iter().map(|a| format!("{a:?}")).collect();
    format!(
        "kind = \"external\"\ncommand = [{}]\ntimeout_ms = 5000\n",
        args.join(", ")
    )
}

const GAUSSIAN_HEAD: &str = "kind = \"gaussian\"\nmean = 0.5\nvariance = 0.05\nlength_scale = 2.0\n";

#[test]
fn external_peers_through_the_cli() {
    let tmp = tempfile::tempdir().unwrap();
    // an echo peer maps the observation space onto itself, so H must be the identity
    let one_stage = ("{ q = 2, iters = 5 }, { q = 1, iters = 20 }", "{ q = 1, iters = 20 }");
    let echo = external(&[DRP, "protocol-echo"]);
    let cfg = small_config(tmp.path(), "echo", &[(GAUSSIAN_HEAD, &echo), one_stage]);
    let out = drp(&["run", cfg.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let rows = parse_trace_csv(&std::fs::read_to_string(tmp.path().join("echo/trace.csv")).unwrap()).unwrap();
    assert!(rows.iter().all(|r| r.objective.is_none() && r.subgrad_norm.is_none() && r.psnr.is_some()));

    for fault in ["wrong-shape", "bad-magic", "truncate", "crash", "error-status", "bad-handshake"] {
        let peer = external(&[DRP, "protocol-echo", "--fault", fault]);
        let name = format!("fault-{fault}");
        let cfg = small_config(tmp.path(), &name, &[(GAUSSIAN_HEAD, &peer), one_stage]);
        let out = drp(&["run", cfg.to_str().unwrap()]);
        assert_eq!(code(&out), 5, "{fault}: {}", String::from_utf8_lossy(&out.stderr));
        assert!(!tmp.path().join(&name).exists(), "{fault} left output");
    }

    let hang = external(&[DRP, "protocol-echo", "--fault", "hang"]).replace("5000", "300");
    let cfg = small_config(tmp.path(), "hang", &[(GAUSSIAN_HEAD, &hang), one_stage]);
    assert_eq!(code(&drp(&["run", cfg.to_str().unwrap()])), 5);
}

#[test]
fn theory_subcommand_reports_clean_checks() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(
        tmp.path(),
        "theory",
        &[
            ("size = 16, cell = 4", "size = 8, cell = 4"),
            ("{ q = 2, iters = 5 }, { q = 1, iters = 20 }", "{ q = 1, iters = 200 }"),
        ],
    );
    let out = drp(&["theory", cfg.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(report["tweedie_max_rel_error"].as_f64().unwrap() <= 1e-10);
    assert_eq!(report["descent_violations"], 0);
    assert_eq!(report["descent_iterations"], 200);
    assert!(report["rate_constant_check"]["holds"].as_array().unwrap().iter().all(|h| h == true));
    assert!(report["fixed_point_residual"].as_f64().unwrap() < 1e-6);
    assert!(report["assumption_audit"]["degradation_well_conditioned"] == true);
    assert!(tmp.path().join("theory/theory.json").exists());

    let ext = small_config(tmp.path(), "ext", &[(GAUSSIAN_HEAD, &external(&[DRP, "protocol-echo"]))]);
    assert_eq!(code(&drp(&["theory", ext.to_str().unwrap()])), 2);
}

#[test]
fn synth_corpus_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = tmp.path().join("corpus.toml");
    std::fs::write(
        &spec,
        r#"
seed = 11
out_dir = "corpus"

[[image]]
kind = "checkerboard"
size = 32
cell = 4

[[image]]
kind = "gradient"
size = 16

[[image]]
kind = "bandlimited"
size = 32
cutoff = 4.0
"#,
    )
    .unwrap();
    let out = drp(&["synth", spec.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let dir = tmp.path().join("corpus");
    let names = ["00-checkerboard-32.png", "01-gradient-16.png", "02-bandlimited-32.png"];
    let first: Vec<Vec<u8>> = names.iter().map(|n| read(dir.join(n))).collect();

    let checker = read_image(dir.join(names[0])).unwrap();
    assert_eq!(checker.get(0, 0, 0), 0.0);
    assert_eq!(checker.get(0, 4, 0), 1.0);
    let gradient = read_image(dir.join(names[1])).unwrap();
    assert_eq!((gradient.get(0, 0, 0), gradient.get(0, 15, 15)), (0.0, 1.0));

    assert_eq!(code(&drp(&["synth", spec.to_str().unwrap()])), 0);
    for (n, bytes) in names.iter().zip(&first) {
        assert_eq!(&read(dir.join(n)), bytes, "{n}");
    }

    std::fs::write(&spec, "out_dir = \"c\"\n[[image]]\nkind = \"stripes\"\nsize = 8\n").unwrap();
    assert_eq!(code(&drp(&["synth", spec.to_str().unwrap()])), 2);
}

/// Energy outside the band, by direct evaluation of the 2-D DFT.
#[test]
fn bandlimited_texture_has_no_energy_above_cutoff() {
    let n = 16;
    let cutoff = 3.0;
    let img = SyntheticImage::Bandlimited { size: n, cutoff }.render(RngSeed(9));
    let (mut inside, mut outside) = (0.0, 0.0);
    let w = 2.0 * std::f64::consts::PI / n as f64;
    for u in 0..n {
        for v in 0..n {
            let (mut re, mut im) = (0.0, 0.0);
            for i in 0..n {
                for j in 0..n {
                    let phase = w * (u * i + v * j) as f64;
                    re += img.get(0, i, j) * phase.cos();
                    im -= img.get(0, i, j) * phase.sin();
                }
            }
            let (fu, fv) = (wrapped_frequency(u, n), wrapped_frequency(v, n));
            let power = re * re + im * im;
            if (fu * fu + fv * fv).sqrt() > cutoff {
                outside += power;
            } else {
                inside += power;
            }
        }
    }
    assert!(inside > 1.0);
    assert!(outside <= 1e-20 * inside, "{outside:e} vs {inside:e}");
}

fn entry(iter: usize, values: [Option<f64>; 4]) -> TraceEntry {
    TraceEntry {
        iter,
        stage: 0,
        gamma: 1.0,
        iterate_change: values[0].unwrap_or(0.0),
        relative_change: 0.0,
        objective: values[1],
        psnr: values[2],
        subgrad_norm: values[3],
    }
}

#[test]
fn trace_csv_line_counts() {
    let empty = ConvergenceTrace::default();
    assert_eq!(trace_to_csv(&empty), format!("{TRACE_HEADER}\n"));
    let three = ConvergenceTrace {
        initial_objective: None,
        entries: (1..=3).map(|k| entry(k, [Some(0.5), None, Some(20.0), None])).collect(),
    };
    let text = trace_to_csv(&three);
    assert_eq!(text.lines().count(), 4);
    assert_eq!(text.lines().nth(1).unwrap(), "1,5e-1,,2e1,");
}

proptest! {
    #[test]
    fn trace_csv_round_trips_exactly(
        values in proptest::collection::vec(
            (any::<f64>().prop_filter("finite", |v| v.is_finite()),
             proptest::option::of(any::<f64>().prop_filter("finite", |v| v.is_finite())),
             proptest::option::of(0.0f64..300.0),
             proptest::option::of(0.0f64..1e6)),
            0..20,
        )
    ) {
        let trace = ConvergenceTrace {
            initial_objective: None,
            entries: values
                .iter()
                .enumerate()
                .map(|(i, &(c, o, p, s))| entry(i + 1, [Some(c), o, p, s]))
                .collect(),
        };
        let rows = parse_trace_csv(&trace_to_csv(&trace)).unwrap();
        prop_assert_eq!(rows.len(), trace.len());
        for (r, e) in rows.iter().zip(&trace.entries) {
            prop_assert_eq!(r.iter, e.iter);
            prop_assert_eq!(r.iterate_change.to_bits(), e.iterate_change.to_bits());
            prop_assert_eq!(r.objective.map(f64::to_bits), e.objective.map(f64::to_bits));
            prop_assert_eq!(r.psnr.map(f64::to_bits), e.psnr.map(f64::to_bits));
            prop_assert_eq!(r.subgrad_norm.map(f64::to_bits), e.subgrad_norm.map(f64::to_bits));
        }
    }
}
