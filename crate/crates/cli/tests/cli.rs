use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;
use tmloc::datamodel::io::{read_dataset, read_manifest};

const TOY: &str = "\
num_videos = 20
frames_min = 10
frames_max = 16
segments_min = 1
segments_max = 2
segment_len_min = 2
segment_len_max = 4
dims = 6,3,5
hidden = 8
heads = 2
ffn_width = 16
epochs = 2
batch_size = 4
ablation_seeds = 0
";

fn tmloc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tmloc"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = tmloc(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

struct Toy {
    _dir: TempDir,
    root: PathBuf,
    config: String,
    data: String,
}

impl Toy {
    fn new(extra: &str) -> Self {
        let dir = TempDir::new().unwrap();
        let root = dir.path().to_path_buf();
        let config = root.join("toy.cfg");
        fs::write(&config, format!("{TOY}{extra}")).unwrap();
        let data = root.join("data");
        let toy = Self {
            _dir: dir,
            config: config.display().to_string(),
            data: data.display().to_string(),
            root,
        };
        ok(&["gen-data", "--config", &toy.config, "--out", &toy.data]);
        toy
    }

    fn path(&self, rel: &str) -> String {
        self.root.join(rel).display().to_string()
    }

    fn run(&self, cmd: &str, out: &str, extra: &[&str]) -> String {
        let out = self.path(out);
        let mut args = vec![cmd, "--config", &self.config, "--data", &self.data, "--out", &out];
        args.extend_from_slice(extra);
        ok(&args)
    }
}

fn read_json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn check_report(path: &Path) {
    let r = read_json(path);
    for key in ["mAP", "roc_auc", "pr_auc", "positive_fraction"] {
        let v = r[key].as_f64().unwrap_or_else(|| panic!("{key} missing in {}", path.display()));
        assert!((0.0..=1.0).contains(&v), "{key} = {v}");
    }
    assert!(r["frame_count"].as_u64().unwrap() > 0);
}

#[test]
fn generated_dataset_reads_back_cleanly() {
    let toy = Toy::new("");
    let mut total = 0;
    for split in ["train", "val", "test"] {
        let samples = read_dataset(&toy.root.join("data").join(split)).unwrap();
        for s in &samples {
            s.validate().unwrap();
        }
        total += samples.len();
    }
    assert_eq!(total, 20);
}

#[test]
fn all_positive_spec_labels_every_video() {
    let toy = Toy::new("positive_fraction = 1.0\n");
    for split in ["train", "val", "test"] {
        let manifest = read_manifest(&toy.root.join("data").join(split)).unwrap();
        assert!(manifest.iter().all(|e| e.label == 1));
    }
}

#[test]
fn seed_changes_payloads_but_not_schema() {
    let toy = Toy::new("");
    let other = toy.path("data7");
    ok(&["gen-data", "--config", &toy.config, "--seed", "7", "--out", &other]);
    let a = read_json(&toy.root.join("data/train/manifest.json"));
    let b = read_json(&Path::new(&other).join("train/manifest.json"));
    let keys = |v: &serde_json::Value| -> Vec<String> {
        let mut k: Vec<String> = v[0].as_object().unwrap().keys().cloned().collect();
        k.sort();
        k
    };
    assert_eq!(keys(&a), keys(&b));
    let file = a[0]["video_path"].as_str().unwrap();
    let bytes_a = fs::read(toy.root.join("data/train").join(file)).unwrap();
    let bytes_b = fs::read(Path::new(&other).join("train").join(b[0]["video_path"].as_str().unwrap())).unwrap();
    assert_ne!(bytes_a, bytes_b);
}

#[test]
fn toy_training_run_writes_log_checkpoints_and_report() {
    let toy = Toy::new("");
    toy.run("train", "run", &[]);
    let run = toy.root.join("run");
    let log = fs::read_to_string(run.join("train_log.csv")).unwrap();
    let mut lines = log.lines();
    assert_eq!(lines.next().unwrap(), "step,epoch,mil,smooth,con,total,val_mAP");
    let epochs: Vec<&str> = lines.map(|l| l.split(',').nth(1).unwrap()).collect();
    assert_eq!(epochs.first(), Some(&"1"));
    assert_eq!(epochs.last(), Some(&"2"));
    for sub in ["best", "last"] {
        assert!(run.join("checkpoints").join(sub).join("params.json").is_file());
    }
    check_report(&run.join("report.json"));
    let csv = fs::read_to_string(run.join("report.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
}

#[test]
fn repeated_commands_produce_identical_files() {
    let toy = Toy::new("");
    toy.run("train", "a", &[]);
    toy.run("train", "b", &[]);
    for file in ["train_log.csv", "report.json", "report.csv", "checkpoints/best/params.json"] {
        let a = fs::read(toy.root.join("a").join(file)).unwrap();
        let b = fs::read(toy.root.join("b").join(file)).unwrap();
        assert_eq!(a, b, "{file}");
    }
}

#[test]
fn k_div_sweep_emits_one_report_per_value() {
    let toy = Toy::new("");
    toy.run("train", "sweep", &["--k-div", "1,2,3,5"]);
    for k in [1, 2, 3, 5] {
        check_report(&toy.root.join(format!("sweep/k{k}/report.json")));
    }
}

#[test]
fn toggle_flags_reach_the_saved_model() {
    let toy = Toy::new("");
    toy.run("train", "ablated", &["--no-cma", "--no-dms", "--no-contrast", "--no-mamil", "--heads", "4"]);
    let cfg = read_json(&toy.root.join("ablated/checkpoints/best/config.json"));
    assert_eq!(cfg["use_cma"], false);
    assert_eq!(cfg["use_dms"], false);
    assert_eq!(cfg["use_contrast"], false);
    assert_eq!(cfg["use_mamil"], false);
    assert_eq!(cfg["use_encoder"], true);
    assert_eq!(cfg["heads"], 4);
    let params = read_json(&toy.root.join("ablated/checkpoints/best/params.json"));
    let names: Vec<&String> = params.as_object().unwrap().keys().collect();
    assert!(names.iter().all(|n| !n.starts_with("cma.") && !n.contains(".gate.") && !n.contains(".head.")));
}

#[test]
fn eval_scores_checkpoint_and_fresh_model() {
    let toy = Toy::new("");
    toy.run("train", "run", &[]);
    let ckpt = toy.path("run/checkpoints/best");
    toy.run("eval", "eval_trained", &["--checkpoint", &ckpt, "--split", "train"]);
    check_report(&toy.root.join("eval_trained/report.json"));
    toy.run("eval", "eval_fresh", &[]);
    check_report(&toy.root.join("eval_fresh/report.json"));
}

#[test]
fn predict_writes_one_row_per_frame_and_plain_svg() {
    let toy = Toy::new("");
    let manifest = read_manifest(&toy.root.join("data/test")).unwrap();
    let entry = &manifest[0];
    toy.run("predict", "curve", &["--sample", &entry.id]);
    let csv = fs::read_to_string(toy.root.join("curve/curve.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "t,y,p_v,p_a,p_l,alpha_v,alpha_a,alpha_l");
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), entry.frames);
    for row in rows {
        let fields: Vec<f64> = row.split(',').map(|f| f.parse().unwrap()).collect();
        assert_eq!(fields.len(), 8);
        assert!(fields[1..].iter().all(|v| (0.0..=1.0).contains(v)));
    }
    let svg = fs::read_to_string(toy.root.join("curve/curve.svg")).unwrap();
    let doc = roxmltree::Document::parse(&svg).unwrap();
    assert_eq!(doc.root_element().tag_name().name(), "svg");
    for node in doc.descendants() {
        for attr in node.attributes() {
            assert!(attr.name() != "href", "external reference in {}", node.tag_name().name());
        }
    }
    assert!(!svg.contains("url("));
    assert!(doc.descendants().any(|n| n.has_tag_name("polyline")));
}

#[test]
fn predict_unknown_sample_fails() {
    let toy = Toy::new("");
    let out = tmloc(&["predict", "--config", &toy.config, "--data", &toy.data, "--out", &toy.path("x"), "--sample", "nope"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope"));
}

#[test]
fn unknown_config_key_fails() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "hidden = 8\nlearning_rate = 0.1\n").unwrap();
    let out = tmloc(&["keys", "--config", cfg.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("learning_rate"));
}

#[test]
fn thread_cap_is_read_from_environment() {
    let bad = Command::new(env!("CARGO_BIN_EXE_tmloc"))
        .arg("keys")
        .env("MHL_THREADS", "many")
        .output()
        .unwrap();
    assert!(!bad.status.success());
    let good = Command::new(env!("CARGO_BIN_EXE_tmloc"))
        .arg("keys")
        .env("MHL_THREADS", "1")
        .output()
        .unwrap();
    assert!(good.status.success());
}

#[test]
fn ablate_writes_one_row_per_grid_entry() {
    let toy = Toy::new("epochs = 1\n");
    toy.run("ablate", "ablation", &[]);
    let csv = fs::read_to_string(toy.root.join("ablation/ablation.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "variant,seed,mAP,roc_auc,pr_auc");
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 14);
    let variants: Vec<&str> = rows.iter().step_by(2).map(|r| r.split(',').next().unwrap()).collect();
    assert_eq!(
        variants,
        [
            "early_fusion",
            "early_fusion+encoder",
            "late_fusion+encoder",
            "encoder+cma",
            "encoder+cma+dms",
            "encoder+cma+dms+contrast",
            "full"
        ]
    );
}
