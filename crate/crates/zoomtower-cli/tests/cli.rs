use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_zoomtower");

fn shipped(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs").join(name)
}

fn zoomtower(args: &[&str]) -> Output {
    Command::new(BIN).args(args).env_remove("ZOOMTOWER_OUTPUT").output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// The shipped doubling config with a smaller Monte-Carlo budget.
fn quick_doubling(dir: &Path, drop_seed: bool) -> PathBuf {
    let src = std::fs::read_to_string(shipped("doubling.cfg")).unwrap();
    let text: String = src
        .lines()
        .filter(|l| !(drop_seed && l.starts_with("seed")))
        .map(|l| if l.starts_with("samples") { "samples = 4000" } else { l })
        .collect::<Vec<_>>()
        .join("\n");
    let p = dir.join("quick.cfg");
    std::fs::write(&p, text + "\n").unwrap();
    p
}

#[test]
fn tower_writes_atoms_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let o = zoomtower(&["tower", shipped("doubling.cfg").to_str().unwrap(), "-o", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let atoms = std::fs::read_to_string(out.join("atoms.csv")).unwrap();
    assert!(atoms.starts_with("left,right,ret,image,seed\r\n"));
    assert!(atoms.lines().count() > 10);

    let m: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("tower-manifest.json")).unwrap()).unwrap();
    assert_eq!(m["command"], "tower");
    assert_eq!(m["passed"], true);
    assert_eq!(m["seed"], 20240601);
    // every file in the directory is listed, and every listed file exists
    let listed: Vec<String> = m["outputs"].as_array().unwrap().iter().map(|f| f["file"].as_str().unwrap().to_string()).collect();
    for entry in std::fs::read_dir(&out).unwrap() {
        let name = entry.unwrap().file_name().into_string().unwrap();
        if name != "tower-manifest.json" {
            assert!(listed.contains(&name), "{name} missing from the manifest");
        }
    }
    for f in &listed {
        assert!(out.join(f).exists(), "{f} listed but not written");
    }
}

#[test]
fn stochastic_commands_need_a_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = quick_doubling(tmp.path(), true);
    let o = zoomtower(&["corr", cfg.to_str().unwrap(), "-o", tmp.path().join("x").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("seed"), "{}", stderr(&o));
}

#[test]
fn config_errors_name_the_line() {
    let tmp = tempfile::tempdir().unwrap();
    let p = tmp.path().join("bad.cfg");
    std::fs::write(&p, "[map]\nname = doubling\n\n[caps]\nr_maks = 10\n").unwrap();
    let o = zoomtower(&["tower", p.to_str().unwrap(), "-o", tmp.path().join("x").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("r_maks") && err.contains('5'), "{err}");
}

#[test]
fn verify_flags_a_corrupted_atom_file() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let cfg = shipped("doubling.cfg");
    let o = zoomtower(&["tower", cfg.to_str().unwrap(), "-o", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));

    let o = zoomtower(&["verify", cfg.to_str().unwrap(), "-o", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));

    // push the right end of one atom off its image
    let path = out.join("atoms.csv");
    let text = std::fs::read_to_string(&path).unwrap();
    let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
    let k = lines.len() / 2;
    let mut fields: Vec<String> = lines[k].split(',').map(str::to_string).collect();
    let right: f64 = fields[1].parse().unwrap();
    fields[1] = format!("{:.16e}", right + 1e-6);
    lines[k] = fields.join(",");
    std::fs::write(&path, lines.join("\r\n") + "\r\n").unwrap();

    let o = zoomtower(&["verify", cfg.to_str().unwrap(), "-o", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("FAIL condition"), "{}", stderr(&o));
    let m: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("verify-manifest.json")).unwrap()).unwrap();
    assert_eq!(m["passed"], false);
}

#[test]
fn malformed_atom_file_is_an_input_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let cfg = shipped("doubling.cfg");
    assert!(zoomtower(&["tower", cfg.to_str().unwrap(), "-o", out.to_str().unwrap()]).status.success());
    std::fs::write(out.join("atoms.csv"), "left,right,ret,image,seed\r\n0.4,oops,2,0,0.41\r\n").unwrap();
    let o = zoomtower(&["verify", cfg.to_str().unwrap(), "-o", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn output_is_identical_across_runs_and_thread_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = quick_doubling(tmp.path(), false);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let o = zoomtower(&["--threads", "1", "corr", cfg.to_str().unwrap(), "-o", a.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = zoomtower(&["--threads", "3", "corr", cfg.to_str().unwrap(), "-o", b.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["corr.csv", "tail.csv"] {
        let (x, y) = (std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap());
        assert!(!x.is_empty());
        assert_eq!(x, y, "{f} differs");
    }
}

#[test]
fn environment_overrides_the_config_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let env_dir = tmp.path().join("from-env");
    let o = Command::new(BIN)
        .args(["repeller", shipped("doubling.cfg").to_str().unwrap()])
        .env("ZOOMTOWER_OUTPUT", &env_dir)
        .current_dir(tmp.path())
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(env_dir.join("repeller.csv").exists());
    assert!(!tmp.path().join("out").exists());

    // the flag still wins
    let flag_dir = tmp.path().join("from-flag");
    let o = Command::new(BIN)
        .args(["repeller", shipped("doubling.cfg").to_str().unwrap(), "-o", flag_dir.to_str().unwrap()])
        .env("ZOOMTOWER_OUTPUT", &env_dir)
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(flag_dir.join("repeller-manifest.json").exists());
}

#[test]
fn user_map_file_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("tent");
    let o = zoomtower(&["times", shipped("tent.cfg").to_str().unwrap(), "-o", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let m: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("times-manifest.json")).unwrap()).unwrap();
    assert_eq!(m["map"], "tent-user");
}
