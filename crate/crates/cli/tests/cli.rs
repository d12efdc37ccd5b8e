use std::path::Path;
use std::process::{Command, Output};

fn blindeq(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_blindeq")).args(args).env_remove("BLINDEQ_THREADS").output().expect("binary runs")
}

fn small_linear(dir: &Path, equalizers: &str) -> String {
    let text = format!(
        "preset = \"paper-linear-16qam\"\nequalizers = [{equalizers}]\n\n[sweep]\naxis = \"snr_db\"\nvalues = [14.0, 18.0, 22.0]\n\n\
         [training]\nsymbols = 8192\nbatch = 256\nepochs = 2\nvalidation_symbols = 4096\n\n\
         [eval]\nmin_errors = 20\nmin_symbols = 4096\nmax_symbols = 65536\nblock_symbols = 4096\n"
    );
    let path = dir.join("small.toml");
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn sweep_writes_one_row_per_point() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_linear(dir.path(), "{ kind = \"ffe-ls\", taps = 21 }");
    let out = dir.path().join("out");
    let o = blindeq(&["sweep", "--config", &cfg, "--out", out.to_str().unwrap(), "--threads", "1", "--svg", "--constellations"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let stdout = String::from_utf8(o.stdout).unwrap();
    assert_eq!(stdout.lines().count(), 3);
    assert!(stdout.lines().all(|l| l.starts_with("axis_value=") && l.contains("\tser=")));

    let mut r = csv::Reader::from_path(out.join("results.csv")).unwrap();
    let header: Vec<String> = r.headers().unwrap().iter().map(String::from).collect();
    assert_eq!(header, ["axis_value", "equalizer", "ser", "loss_final", "steps", "wall_ms", "seed"]);
    let rows: Vec<csv::StringRecord> = r.records().map(|x| x.unwrap()).collect();
    assert_eq!(rows.len(), 3);
    let ser: Vec<f64> = rows.iter().map(|r| r[2].parse().unwrap()).collect();
    assert!(ser.iter().all(|s| (0.0..=1.0).contains(s)));
    assert!(ser[0] > ser[2]);
    assert!(out.join("details.csv").exists() && out.join("record.json").exists());
    let svg = std::fs::read_to_string(out.join("ser.svg")).unwrap();
    assert!(svg.starts_with("<svg"));
    assert_eq!(std::fs::read_dir(out.join("constellations")).unwrap().count(), 3);
}

#[test]
fn malformed_config_exits_2_with_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, "preset = \"paper-linear-16qam\"\n\n[training]\nepochs = 3\nbatchsize = 5\n").unwrap();
    let o = blindeq(&["sweep", "--config", path.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 5"), "{}", stderr(&o));

    std::fs::write(&path, "name = \"x\"\nequalizers = [\n").unwrap();
    let o = blindeq(&["sweep", "--config", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line "), "{}", stderr(&o));

    let o = blindeq(&["sweep", "--config", "no-such-preset"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn seed_override_changes_checksum_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_linear(dir.path(), "{ kind = \"ffe\", taps = 15, lr = [1e-2] }");
    let run = |seed: &str, threads: &str| {
        let o = blindeq(&["sweep", "--config", &cfg, "--seed", seed, "--threads", threads, "--out", dir.path().join(seed).to_str().unwrap()]);
        assert!(o.status.success(), "{}", stderr(&o));
        String::from_utf8(o.stdout)
            .unwrap()
            .lines()
            .map(|l| l.split('\t').filter(|f| f.starts_with("checksum=") || f.starts_with("ser=")).collect::<Vec<_>>().join(" "))
            .collect::<Vec<_>>()
    };
    let a = run("1", "1");
    assert_eq!(a, run("1", "2"));
    assert_ne!(a, run("2", "1"));
}

#[test]
fn all_diverged_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_linear(dir.path(), "{ kind = \"ffe\", taps = 15, lr = [1e300] }");
    let o = blindeq(&["sweep", "--config", &cfg, "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(String::from_utf8(o.stdout).unwrap().lines().all(|l| l.contains("diverged=true")));
}

#[test]
fn convergence_with_zero_rate_gives_flat_traces() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("conv.toml");
    std::fs::write(
        &path,
        "preset = \"convergence-linear-16qam\"\nequalizers = [{ kind = \"ffe\", taps = 15, lr = [1e-3] }]\n\n\
         [training]\non_the_fly = true\nupdates = 40\ntrace_every = 10\ntrace_symbols = 2048\n\n\
         [eval]\nmin_errors = 10\nmin_symbols = 4096\nmax_symbols = 16384\nblock_symbols = 4096\n",
    )
    .unwrap();
    let out = dir.path().join("out");
    let o = blindeq(&["convergence", "--config", path.to_str().unwrap(), "--grid", "64x0,32x1e-3", "--out", out.to_str().unwrap(), "--svg"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let traces: Vec<_> = std::fs::read_dir(out.join("traces")).unwrap().map(|e| e.unwrap().path()).collect();
    assert_eq!(traces.len(), 2);
    let flat = traces.iter().find(|p| p.to_str().unwrap().contains("N64")).unwrap();
    let mut r = csv::Reader::from_path(flat).unwrap();
    assert_eq!(r.headers().unwrap(), vec!["step", "loss", "ser"]);
    let ser: Vec<String> = r.records().map(|x| x.unwrap()[2].to_string()).collect();
    assert_eq!(ser.len(), 5);
    assert!(ser.iter().all(|s| *s == ser[0]));
    assert!(out.join("traces.svg").exists());

    let o = blindeq(&["convergence", "--config", path.to_str().unwrap(), "--grid", "64"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn gradcheck_exit_codes() {
    let o = blindeq(&["gradcheck", "--module", "all"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let stdout = String::from_utf8(o.stdout).unwrap();
    assert_eq!(stdout.lines().count(), 4);
    assert!(stdout.lines().all(|l| l.ends_with("pass=true")));

    let o = blindeq(&["gradcheck", "--module", "fir", "--inject-fault", "sign-flip"]);
    assert_eq!(o.status.code(), Some(1));

    let o = blindeq(&["gradcheck", "--module", ""]);
    assert_eq!(o.status.code(), Some(2));
    let o = blindeq(&["gradcheck", "--module", "fir,nope"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn threads_fall_back_to_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_linear(dir.path(), "{ kind = \"ffe-ls\", taps = 21 }");
    let o = Command::new(env!("CARGO_BIN_EXE_blindeq"))
        .args(["sweep", "--config", &cfg, "--out", dir.path().join("o").to_str().unwrap()])
        .env("BLINDEQ_THREADS", "0")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
    let o = Command::new(env!("CARGO_BIN_EXE_blindeq"))
        .args(["sweep", "--config", &cfg, "--out", dir.path().join("o").to_str().unwrap()])
        .env("BLINDEQ_THREADS", "1")
        .output()
        .unwrap();
    assert!(o.status.success());
}
