use std::path::Path;
use std::process::Command;

const TINY: [(&str, &str); 6] = [
    ("capacity", "p = 40\np_test = 20\nn_teacher = 50\nm_values = 2,4,6\n"),
    ("width", "n0 = 20\nn_gates = 10\nm_blocks = 2\nn_teacher = 50\np = 20\np_test = 20\nwidths = 20,80\ngd_seeds = 3\nmax_steps = 2000\nstop_train_mse = 1e-2\n"),
    ("sigma", "synthetic_count = 300\np_test = 20\nsigmas = 0.5,1\na_n = 100\na_p = 20\nb_m = 10\nb_n = 40\nb_p = 20\n"),
    ("gating", "synthetic_count = 300\np = 20\np_test = 20\nwidth = 30\nm_values = 2,3\nkmeans_iters = 3\nrelu_seeds = 2\nrelu_stop_train_mse = 1e-2\n"),
    ("depth", "synthetic_count = 300\nm = 3\nn = 50\np = 20\np_test = 20\ndepths = 1,2\n"),
    ("multitask", "synthetic_count = 300\nwidths = 50,200\nperm_m = 8\nperm_p = 20\nperm_p_test = 20\nthresholds = 0\nthreshold_width = 100\ntd_n0 = 20\ntd_m = 5\ntd_p = 20\ntd_p_test = 20\ntemperature = 1e-4\n"),
];

fn ggdln(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_ggdln"))
        .args(args)
        .env("GGDLN_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn csv_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = vec![(
        "results.csv".to_string(),
        std::fs::read(dir.join("results.csv")).unwrap(),
    )];
    if let Ok(entries) = std::fs::read_dir(dir.join("kernels")) {
        let mut names: Vec<String> = entries
            .map(|e| e.unwrap().file_name().into_string().unwrap())
            .collect();
        names.sort();
        for n in names {
            let bytes = std::fs::read(dir.join("kernels").join(&n)).unwrap();
            out.push((n, bytes));
        }
    }
    out
}

#[test]
fn every_subcommand_reruns_byte_identically_from_its_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    for (sub, config) in TINY {
        let cfg = tmp.path().join(format!("{sub}.cfg"));
        std::fs::write(&cfg, config).unwrap();
        let first = tmp.path().join(format!("{sub}-1"));
        let out = ggdln(&[
            sub,
            "--config",
            cfg.to_str().unwrap(),
            "--set",
            "seed=11",
            "--out",
            first.to_str().unwrap(),
        ]);
        assert!(
            out.status.success(),
            "{sub}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        let manifest = first.join("manifest.json");
        let second = tmp.path().join(format!("{sub}-2"));
        let out = ggdln(&[
            sub,
            "--config",
            manifest.to_str().unwrap(),
            "--out",
            second.to_str().unwrap(),
        ]);
        assert!(
            out.status.success(),
            "{sub}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        assert_eq!(csv_files(&first), csv_files(&second), "{sub}");
        let m: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(&manifest).unwrap()).unwrap();
        assert_eq!(m["subcommand"], sub);
        assert_eq!(m["parameters"]["seed"], "11");
    }
}

#[test]
fn rejects_unknown_keys_and_mismatched_manifests() {
    let tmp = tempfile::tempdir().unwrap();
    let out_dir = tmp.path().join("o");
    let out = ggdln(&[
        "depth",
        "--set",
        "detph=3",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("detph"));

    let manifest = tmp.path().join("manifest.json");
    std::fs::write(
        &manifest,
        r#"{"subcommand": "width", "parameters": {"seed": "1"}}"#,
    )
    .unwrap();
    let out = ggdln(&[
        "depth",
        "--config",
        manifest.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("width"));

    let out = ggdln(&["plot", "--out", out_dir.to_str().unwrap()]);
    assert!(!out.status.success());
}
