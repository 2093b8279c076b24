//! End-to-end runs of the `sare` binary on small synthetic data.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sare::checkpoint::Checkpoint;
use sare::io::load_dataset_dir;
use sare::report::MetricsReport;
use sare_core::model::Owner;
use serde_json::{json, Value};

fn sare(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sare")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn ok(o: Output) -> String {
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout).unwrap()
}

fn generator() -> Value {
    json!({"n_users": 30, "n_items": 60, "n_lists": 300, "list_len": 5, "seed": 1})
}

fn experiment(name: &str, mode: &str, regime: &str) -> Value {
    json!({
        "name": name,
        "dataset": {"generate": generator()},
        "backbone": {"kind": "idmf", "situation_mode": mode},
        "dim": 8,
        "activations": 4,
        "train": {"lr_backbone": 0.01, "lr_sare": 0.01, "lambda_s": 1.0, "lambda_p": 1.0,
                  "epochs": 2, "accumulate": 4, "regime": regime},
        "seeds": [0, 1],
        "output_dir": name
    })
}

fn write_config(dir: &Path, file: &str, v: &Value) -> PathBuf {
    let p = dir.join(file);
    fs::write(&p, serde_json::to_string_pretty(v).unwrap()).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn generate_round_trips_and_is_seeded() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "gen.json", &generator());
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let c = tmp.path().join("c");
    ok(sare(&["generate", "--config", s(&cfg), "--out", s(&a)]));
    ok(sare(&["generate", "--config", s(&cfg), "--out", s(&b)]));
    ok(sare(&["generate", "--config", s(&cfg), "--seed", "2", "--out", s(&c)]));
    let d = load_dataset_dir(&a).unwrap();
    assert_eq!(d.lists.len(), 300);
    let read = |dir: &Path| fs::read(dir.join("impressions.tsv")).unwrap();
    assert_eq!(read(&a), read(&b));
    assert_ne!(read(&a), read(&c));
    // refuses to overwrite
    let again = sare(&["generate", "--config", s(&cfg), "--out", s(&a)]);
    assert_eq!(code(&again), 2);
    ok(sare(&["generate", "--config", s(&cfg), "--out", s(&a), "--force"]));
}

#[test]
fn generate_default_config_parses_back() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("d");
    ok(sare(&["generate", "--out", s(&out)]));
    let d = load_dataset_dir(&out).unwrap();
    assert_eq!(d.lists.len(), 40_000);
}

#[test]
fn invalid_generator_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "gen.json", &json!({"n_lists": 0}));
    let o = sare(&["generate", "--config", s(&cfg), "--out", s(&tmp.path().join("x"))]);
    assert_eq!(code(&o), 2);
    let cfg = write_config(tmp.path(), "gen2.json", &json!({"n_list": 10}));
    let o = sare(&["generate", "--config", s(&cfg), "--out", s(&tmp.path().join("y"))]);
    assert_eq!(code(&o), 2);
}

#[test]
fn train_writes_seed_suffixed_outputs_and_respects_force() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "exp.json", &experiment("sare", "sare", "train_sare"));
    ok(sare(&["train", "--config", s(&cfg), "--quiet"]));
    let out = tmp.path().join("sare");
    for seed in [0, 1] {
        let ck = out.join(format!("checkpoints/seed-{seed}.json"));
        assert_eq!(Checkpoint::load(&ck).unwrap().seed, seed);
        let log = fs::read_to_string(out.join(format!("logs/seed-{seed}.jsonl"))).unwrap();
        assert_eq!(log.lines().count(), 2);
        let first: Value = serde_json::from_str(log.lines().next().unwrap()).unwrap();
        assert!(first["L_br"].is_number() && first["valid_ndcg"].is_number());
    }
    assert_eq!(fs::read_to_string(out.join("config.json")).unwrap(), fs::read_to_string(&cfg).unwrap());
    let before = fs::read(out.join("checkpoints/seed-0.json")).unwrap();
    let again = sare(&["train", "--config", s(&cfg), "--quiet"]);
    assert_eq!(code(&again), 2);
    assert!(String::from_utf8_lossy(&again.stderr).contains("--force"));
    ok(sare(&["train", "--config", s(&cfg), "--quiet", "--force"]));
    // same config and seed reproduce the checkpoint byte for byte
    assert_eq!(fs::read(out.join("checkpoints/seed-0.json")).unwrap(), before);
}

#[test]
fn five_seeds_give_five_checkpoints() {
    let tmp = tempfile::tempdir().unwrap();
    let mut e = experiment("five", "none", "backbone_only");
    e["train"]["epochs"] = json!(1);
    let cfg = write_config(tmp.path(), "exp.json", &e);
    ok(sare(&["train", "--config", s(&cfg), "--seeds", "3,4,5,6,7", "--quiet"]));
    let mut names: Vec<String> = fs::read_dir(tmp.path().join("five/checkpoints"))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(names, ["seed-3.json", "seed-4.json", "seed-5.json", "seed-6.json", "seed-7.json"]);
}

#[test]
fn fix_sare_reuses_backbone_checkpoints() {
    let tmp = tempfile::tempdir().unwrap();
    let base = write_config(tmp.path(), "base.json", &experiment("base", "none", "backbone_only"));
    ok(sare(&["train", "--config", s(&base), "--quiet"]));
    let mut fix = experiment("fix", "sare", "fix_sare");
    fix["pretrained"] = json!("base");
    let fix = write_config(tmp.path(), "fix.json", &fix);
    ok(sare(&["train", "--config", s(&fix), "--quiet"]));
    for seed in [0, 1] {
        let pre = Checkpoint::load(&tmp.path().join(format!("base/checkpoints/seed-{seed}.json"))).unwrap();
        let post = Checkpoint::load(&tmp.path().join(format!("fix/checkpoints/seed-{seed}.json"))).unwrap();
        let backbone: Vec<_> = post.params.iter().filter(|p| p.owner == Owner::Backbone).collect();
        assert_eq!(backbone.len(), pre.params.len());
        for p in backbone {
            let q = pre.params.iter().find(|q| q.name == p.name).unwrap();
            assert_eq!(p.value, q.value, "{}", p.name);
        }
    }
    // fix_sare without the pretrained run is a config error
    let mut orphan = experiment("orphan", "sare", "fix_sare");
    orphan["pretrained"] = json!("missing");
    let orphan = write_config(tmp.path(), "orphan.json", &orphan);
    assert_eq!(code(&sare(&["train", "--config", s(&orphan), "--quiet"])), 2);
}

#[test]
fn evaluate_reports_and_compares() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "exp.json", &experiment("m", "sare", "train_sare"));
    ok(sare(&["train", "--config", s(&cfg), "--quiet"]));
    let table = ok(sare(&["evaluate", "--config", s(&cfg)]));
    assert!(table.contains("NDCG@3") && !table.contains('*'));
    let report_path = tmp.path().join("m/reports/combined.json");
    let report = MetricsReport::load(&report_path).unwrap();
    assert_eq!(report.seed_ids(), [0, 1]);
    assert_eq!(report.k, 3);
    for m in &report.seeds {
        assert!([m.hr, m.map, m.ndcg].iter().all(|v| (0.0..=1.0).contains(v)));
    }

    for variant in ["backbone_only", "sare_only"] {
        ok(sare(&["evaluate", "--config", s(&cfg), "--variant", variant]));
        let r = MetricsReport::load(&tmp.path().join(format!("m/reports/{variant}.json"))).unwrap();
        assert_eq!(r.variant, variant);
    }
    assert_eq!(code(&sare(&["evaluate", "--config", s(&cfg), "--variant", "bogus"])), 2);

    // self comparison: p = 1 everywhere, no stars
    let copy = tmp.path().join("baseline.json");
    fs::copy(&report_path, &copy).unwrap();
    let table = ok(sare(&["evaluate", "--config", s(&cfg), "--baseline-report", s(&copy), "--force"]));
    assert!(!table.contains('*'), "{table}");
    let r = MetricsReport::load(&report_path).unwrap();
    let c = r.comparison.unwrap();
    assert_eq!([c.hr.p, c.map.p, c.ndcg.p], [1.0; 3]);
    assert_eq!(c.ndcg.df, 1);

    // seed mismatch
    let o = sare(&["evaluate", "--config", s(&cfg), "--seeds", "0", "--baseline-report", s(&copy), "--force"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("seed mismatch"));
}

#[test]
fn list_pairing_compares_per_list() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "exp.json", &experiment("m", "sare", "train_sare"));
    ok(sare(&["train", "--config", s(&cfg), "--quiet"]));
    ok(sare(&["evaluate", "--config", s(&cfg), "--variant", "backbone_only", "--pairing", "list"]));
    let base = tmp.path().join("m/reports/backbone_only.json");
    ok(sare(&["evaluate", "--config", s(&cfg), "--pairing", "list", "--baseline-report", s(&base)]));
    let r = MetricsReport::load(&tmp.path().join("m/reports/combined.json")).unwrap();
    assert_eq!(r.lists.len(), 2 * 30);
    assert_eq!(r.comparison.unwrap().ndcg.df, 59);
}

#[test]
fn ablate_emits_one_row_per_ablation_and_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let mut e = experiment("abl", "sare", "train_sare");
    e["train"]["epochs"] = json!(1);
    let cfg = write_config(tmp.path(), "exp.json", &e);
    let table = ok(sare(&["ablate", "--config", s(&cfg), "--quiet"]));
    for label in ["full", "-cb", "-ucpe", "-psf", "-conf"] {
        assert!(table.contains(&format!("abl {label}")), "{table}");
        let r = MetricsReport::load(&tmp.path().join(format!("abl/ablation/{label}/reports/combined.json"))).unwrap();
        assert_eq!(r.comparison.is_some(), label != "full");
        let ck = Checkpoint::load(&tmp.path().join(format!("abl/ablation/{label}/checkpoints/seed-1.json"))).unwrap();
        assert_eq!(ck.spec.ablation.label(), label);
    }
    let rows = fs::read_to_string(tmp.path().join("abl/ablation/per_seed.tsv")).unwrap();
    assert_eq!(rows.lines().count(), 1 + 5 * 2);
}

#[test]
fn count_params_matches_formula() {
    let tmp = tempfile::tempdir().unwrap();
    let mut e = experiment("cp", "sare", "train_sare");
    e["dim"] = json!(64);
    e["activations"] = json!(11);
    e["backbone"]["use_history"] = json!(true);
    let cfg = write_config(tmp.path(), "exp.json", &e);
    let out = ok(sare(&["count-params", "--config", s(&cfg)]));
    let field = |name: &str| -> usize {
        let line = out.lines().find(|l| l.starts_with(name)).unwrap();
        line.split_whitespace().last().unwrap().parse().unwrap()
    };
    assert_eq!(field("sare non-embedding"), 17814);
    assert_eq!(field("  formula"), 17814);
    assert_eq!(field("total"), field("optimizer registered"));
    assert_eq!(
        field("total"),
        field("backbone") + field("sare non-embedding") + field("situation embedding")
    );
    assert_eq!(field("situation embedding"), 64 * (24 + 7 + 4 + 2));
}

#[test]
fn embeddings_dominate_at_generator_defaults() {
    let tmp = tempfile::tempdir().unwrap();
    let mut e = experiment("cp", "sare", "train_sare");
    e["dataset"] = json!({"generate": {}});
    e["backbone"]["kind"] = json!("fm");
    e["dim"] = json!(32);
    let cfg = write_config(tmp.path(), "exp.json", &e);
    let census = sare::commands::count_params(&sare::config::LoadedConfig::read(&cfg).unwrap()).unwrap();
    assert!(census.backbone >= 32 * (2000 + 5000));
    assert!(census.backbone > 50 * census.sare_non_embedding, "{census:?}");
}

#[test]
fn bad_data_and_divergence_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let gen = write_config(tmp.path(), "gen.json", &generator());
    ok(sare(&["generate", "--config", s(&gen), "--out", s(&data)]));
    let imp = data.join("impressions.tsv");
    let text = fs::read_to_string(&imp).unwrap();
    fs::write(&imp, text.replacen(":0", ":7", 1)).unwrap();
    let mut e = experiment("bad", "sare", "train_sare");
    e["dataset"] = json!({"dir": "data"});
    let cfg = write_config(tmp.path(), "bad.json", &e);
    let o = sare(&["train", "--config", s(&cfg), "--quiet"]);
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains(":1:"));

    let mut e = experiment("div", "sare", "train_sare");
    e["train"]["lr_backbone"] = json!(1e305);
    e["train"]["lr_sare"] = json!(1e305);
    let cfg = write_config(tmp.path(), "div.json", &e);
    assert_eq!(code(&sare(&["train", "--config", s(&cfg), "--quiet"])), 4);

    let cfg = write_config(tmp.path(), "typo.json", &json!({"name": "x"}));
    assert_eq!(code(&sare(&["train", "--config", s(&cfg)])), 2);
}

#[test]
fn shipped_configs_load() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for entry in fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        let loaded = sare::config::LoadedConfig::read(&path).unwrap();
        assert_eq!(loaded.config.seeds, [0, 1, 2, 3, 4], "{}", path.display());
        n += 1;
    }
    assert_eq!(n, 5);
}
