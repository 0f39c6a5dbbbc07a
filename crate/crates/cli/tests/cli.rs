use std::process::Command;

fn coaglab() -> Command {
    Command::new(env!("CARGO_BIN_EXE_coaglab"))
}

fn scratch(name: &str) -> std::path::PathBuf {
    let d = std::env::temp_dir().join(format!("coaglab-cli-{}-{name}", std::process::id()));
    let _ = std::fs::remove_dir_all(&d);
    d
}

#[test]
fn usage_errors_exit_with_two() {
    let st = coaglab().args(["dust"]).output().unwrap();
    assert_eq!(st.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&st.stderr).contains("seed"));

    let st = coaglab().args(["no-such-command", "--seed", "1"]).output().unwrap();
    assert_eq!(st.status.code(), Some(2));

    let st = coaglab().args(["dust", "--seed", "1", "--set", "bogus=3"]).output().unwrap();
    assert_eq!(st.status.code(), Some(2));
}

#[test]
fn missing_bank_names_the_producer() {
    let d = scratch("missing");
    let st = coaglab().args(["speed-cdi", "--seed", "1", "--n", "100", "--t", "1", "--out"]).arg(&d).output().unwrap();
    assert_eq!(st.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&st.stderr).contains("upsilon-bank"));
}

#[test]
fn passing_run_exits_zero_and_is_reproducible() {
    let outs: Vec<_> = ["a", "b"].iter().map(|n| scratch(n)).collect();
    for d in &outs {
        let st = coaglab()
            .args(["profile-ode", "--seed", "3", "--workers", "1", "--out"])
            .arg(d)
            .output()
            .unwrap();
        assert_eq!(st.status.code(), Some(0), "{}", String::from_utf8_lossy(&st.stdout));
        assert!(String::from_utf8_lossy(&st.stdout).contains("PASS exponential_bound"));
    }
    let read = |d: &std::path::Path| std::fs::read(d.join("profile.csv")).unwrap();
    assert_eq!(read(&outs[0]), read(&outs[1]));
}

#[test]
fn failing_check_exits_one() {
    // Too few coalescent replicates at tiny n: the species curve misses its 5% band.
    let d = scratch("fail");
    let st = coaglab()
        .args(["simulate-coalescent", "--seed", "2", "--set", "coalescent.n=3", "--set", "coalescent.init=minimal"])
        .args(["--set", "replicates=2", "--set", "times=5", "--out"])
        .arg(&d)
        .output()
        .unwrap();
    assert_eq!(st.status.code(), Some(1), "{}", String::from_utf8_lossy(&st.stdout));
}

#[test]
fn config_file_and_flags_combine() {
    let d = scratch("conf");
    let conf = d.with_extension("conf");
    std::fs::write(&conf, "seed = 9\nreplicates = 300\ntimes = 1\n").unwrap();
    let st = coaglab().args(["upsilon-bank", "--config"]).arg(&conf).arg("--out").arg(&d).output().unwrap();
    assert_eq!(st.status.code(), Some(0), "{}", String::from_utf8_lossy(&st.stderr));
    let saved = std::fs::read_to_string(d.join("upsilon-bank.config")).unwrap();
    assert!(saved.contains("seed = 9") && saved.contains("replicates = 300"));
}
