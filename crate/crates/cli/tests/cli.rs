use std::path::Path;
use std::process::Command;

use int4q::matrix::Matrix;
use int4q::rng::{seeded_random_matrix, Distribution};
use int4q::tensor_file::{read_tensor_file, write_tensor_file, TensorData, TensorEntry};
use int4q_cli::{run_with, EXIT_DOMAIN, EXIT_OK, EXIT_USAGE};

fn run(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("int4q").chain(args.iter().copied());
    let code = run_with(argv, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn p(dir: &Path, name: &str) -> String {
    dir.join(name).to_str().unwrap().to_string()
}

fn odd_tensor_file(dir: &Path) -> String {
    let path = p(dir, "odd.nf4");
    let w = seeded_random_matrix(256, 100, 5, Distribution::Uniform);
    write_tensor_file(&path, &[TensorEntry::f32("layer", w)]).unwrap();
    path
}

#[test]
fn shape_mismatch_is_a_domain_error_naming_the_dims() {
    let dir = tempfile::tempdir().unwrap();
    let input = odd_tensor_file(dir.path());
    let out = p(dir.path(), "q.nf4");
    let (code, _, err) = run(&["quantize", "--method", "gsq", "--group-size", "32", "--model", &input, "--out", &out]);
    assert_eq!(code, EXIT_DOMAIN, "{err}");
    assert!(err.contains("ShapeMismatch(256,100,32)"), "{err}");
    assert!(!Path::new(&out).exists());
}

#[test]
fn plain_tensor_files_quantize_every_matrix() {
    let dir = tempfile::tempdir().unwrap();
    let input = odd_tensor_file(dir.path());
    let before = std::fs::read(&input).unwrap();
    let out = p(dir.path(), "q.nf4");
    let (code, _, err) = run(&["quantize", "--method", "rtn", "--group-size", "25", "--model", &input, "--out", &out]);
    assert_eq!(code, EXIT_OK, "{err}");
    let entries = read_tensor_file(&out).unwrap();
    let TensorData::Q4(q) = &entries[0].data else { panic!("expected Q4") };
    assert_eq!((q.rows(), q.cols(), q.group_size()), (256, 100, 25));
    assert_eq!(std::fs::read(&input).unwrap(), before, "input mutated");

    let first = std::fs::read(&out).unwrap();
    assert_eq!(
        run(&["quantize", "--method", "rtn", "--group-size", "25", "--model", &input, "--out", &out]).0,
        EXIT_OK
    );
    assert_eq!(std::fs::read(&out).unwrap(), first, "not idempotent");
}

#[test]
fn usage_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let input = odd_tensor_file(dir.path());
    let out = p(dir.path(), "q.nf4");
    for args in [
        vec!["quantize", "--group-size", "0", "--model", &input, "--out", &out],
        vec!["quantize", "--group-size", "x", "--model", &input, "--out", &out],
        vec!["quantize", "--bits", "8", "--model", &input, "--out", &out],
        vec!["quantize", "--model", &input],
        vec!["quantize", "--method", "rtn", "--group-size", "4", "--model", &input, "--out", &input],
        vec!["frobnicate"],
        vec!["bench", "--runs", "2", "--model", &input, "--out", &out],
        vec!["--preset", "group1024", "eval", "--model", &input],
    ] {
        let (code, _, err) = run(&args);
        assert_eq!(code, EXIT_USAGE, "{args:?}: {err}");
    }
    assert_eq!(run(&["--help"]).0, EXIT_OK);
}

#[test]
fn config_file_sits_below_flags() {
    let dir = tempfile::tempdir().unwrap();
    let input = p(dir.path(), "m.nf4");
    write_tensor_file(&input, &[TensorEntry::f32("w", Matrix::from_fn(4, 128, |r, c| (r + c) as f32))]).unwrap();
    let cfg = p(dir.path(), "exp.cfg");
    std::fs::write(&cfg, "# experiment\nmethod = rtn\ngroup_size = 64\n").unwrap();
    let out = p(dir.path(), "q.nf4");
    let group = || match &read_tensor_file(&out).unwrap()[0].data {
        TensorData::Q4(q) => q.group_size(),
        TensorData::F32(_) => panic!("not quantized"),
    };
    assert_eq!(run(&["--config", &cfg, "quantize", "--model", &input, "--out", &out]).0, EXIT_OK);
    assert_eq!(group(), 64);
    assert_eq!(run(&["--config", &cfg, "quantize", "--group-size", "32", "--model", &input, "--out", &out]).0, EXIT_OK);
    assert_eq!(group(), 32);
    std::fs::write(&cfg, "colour = blue\n").unwrap();
    assert_eq!(run(&["--config", &cfg, "quantize", "--model", &input, "--out", &out]).0, EXIT_USAGE);
}

#[test]
fn gsq_without_calibration_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let model = p(dir.path(), "m.nf4");
    assert_eq!(run(&["gen-model", "--out", &model]).0, EXIT_OK);
    let (code, _, err) = run(&["quantize", "--model", &model, "--out", &p(dir.path(), "q.nf4")]);
    assert_eq!(code, EXIT_DOMAIN);
    assert!(err.contains("missing calibration"), "{err}");
}

#[test]
fn corrupt_inputs_are_domain_errors() {
    let dir = tempfile::tempdir().unwrap();
    let bad = p(dir.path(), "bad.nf4");
    std::fs::write(&bad, b"NF4TENS\0garbage").unwrap();
    let (code, _, err) = run(&["eval", "--model", &bad]);
    assert_eq!(code, EXIT_DOMAIN, "{err}");
    let corpus = p(dir.path(), "c.txt");
    std::fs::write(&corpus, "hello, world").unwrap();
    let model = p(dir.path(), "m.nf4");
    assert_eq!(run(&["gen-model", "--out", &model]).0, EXIT_OK);
    let (code, _, err) = run(&["eval", "--model", &model, "--corpus", &corpus]);
    assert_eq!(code, EXIT_DOMAIN);
    assert!(err.contains("','"), "{err}");
}

#[test]
fn compare_rejects_reports_from_different_corpora() {
    let dir = tempfile::tempdir().unwrap();
    let model = p(dir.path(), "m.nf4");
    let c1 = p(dir.path(), "c1.txt");
    assert_eq!(run(&["gen-model", "--out", &model, "--corpus-out", &c1, "--corpus-len", "600"]).0, EXIT_OK);
    let c2 = p(dir.path(), "c2.txt");
    std::fs::write(&c2, std::fs::read_to_string(&c1).unwrap().replace('a', "b")).unwrap();
    let fast = ["--runs", "3", "--gen-tokens", "2", "--prompts", "1", "--prompt-len", "4"];
    for (corpus, out) in [(&c1, "r1.json"), (&c2, "r2.json")] {
        let mut args = vec!["bench", "--model", &model, "--corpus", corpus, "--out"];
        let out = p(dir.path(), out);
        args.push(&out);
        args.extend(fast);
        assert_eq!(run(&args).0, EXIT_OK);
    }
    let (code, _, err) = run(&["compare", "--pre", &p(dir.path(), "r1.json"), "--post", &p(dir.path(), "r2.json")]);
    assert_eq!(code, EXIT_DOMAIN);
    assert!(err.contains("configuration mismatch"), "{err}");
    let (code, table, _) = run(&["compare", "--pre", &p(dir.path(), "r1.json"), "--post", &p(dir.path(), "r1.json")]);
    assert_eq!(code, EXIT_OK);
    assert!(table.contains("flags: none"), "{table}");
}

#[test]
fn path_env_vars_fill_missing_flags() {
    let dir = tempfile::tempdir().unwrap();
    let model = p(dir.path(), "m.nf4");
    assert_eq!(
        run(&["gen-model", "--out", &model, "--corpus-out", &p(dir.path(), "c.txt"), "--corpus-len", "300"]).0,
        EXIT_OK
    );
    let status = Command::new(env!("CARGO_BIN_EXE_int4q"))
        .args(["eval", "--window", "64"])
        .env("INT4Q_MODEL", &model)
        .env("INT4Q_CORPUS", p(dir.path(), "c.txt"))
        .output()
        .unwrap();
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    let v: serde_json::Value = serde_json::from_slice(&status.stdout).unwrap();
    assert_eq!(v["n_tokens"], 299 - 4);
}

#[test]
fn config_fuzz_seeds_parse_or_fail_cleanly() {
    use int4q_cli::settings::{ConfigFile, Overrides, Settings};
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus/parse_config");
    let mut n = 0;
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        let text = std::fs::read_to_string(&path).unwrap();
        let resolved = ConfigFile::parse(&text).and_then(|c| Settings::resolve(Overrides::default(), None, &c));
        let name = path.file_name().unwrap().to_string_lossy().into_owned();
        assert_eq!(resolved.is_ok(), name != "invalid", "{name}");
        n += 1;
    }
    assert!(n >= 3);
}
