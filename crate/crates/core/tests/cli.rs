use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use guided_search::attrseq::{save_checkpoint, ModelDims, SeqModel};
use guided_search::cli::run_with;
use guided_search::synth::{self, CatalogConfig, CatalogFiles};
use guided_search::taxonomy::Taxonomy;
use serde_json::Value;

const DATA: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/data");

fn run(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let code = run_with(std::iter::once("guided-search").chain(args.iter().copied()), &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

/// Compares against tests/golden/<name>; `UPDATE_GOLDEN=1` rewrites it.
fn golden(name: &str, actual: &str) {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name);
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::write(&path, actual).unwrap();
        return;
    }
    let expected = std::fs::read_to_string(&path)
        .unwrap_or_else(|_| panic!("missing golden file {}; rerun with UPDATE_GOLDEN=1", path.display()));
    assert_eq!(actual, expected, "output differs from {}", path.display());
}

fn catalog(dir: &Path, items: usize) -> CatalogFiles {
    let config = CatalogConfig { items, seed: 13, ..CatalogConfig::default() };
    let items = synth::catalog(&Taxonomy::example(), &config);
    synth::write_catalog(&items, dir).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn taxonomy_validate() {
    let path = format!("{DATA}/taxonomy.json");
    let (code, out, _) = run(&["--json", "taxonomy-validate", "--taxonomy", &path]);
    assert_eq!(code, 0);
    golden("taxonomy_validate.json", &out);
    let (code, out, _) = run(&["taxonomy-validate", "--taxonomy", &path]);
    assert_eq!((code, out.as_str()), (0, "OK\n"));

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    let mut def: Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    def["groups"][2]["applicable_categories"][0] = "hat".into();
    def["groups"][1]["classes"][1] = "male".into();
    std::fs::write(&bad, def.to_string()).unwrap();
    let (code, out, _) = run(&["--json", "taxonomy-validate", "--taxonomy", s(&bad)]);
    assert_eq!(code, 1);
    golden("taxonomy_invalid.json", &out);
}

#[test]
fn eval_detector_tables() {
    let dir = tempfile::tempdir().unwrap();
    let files = catalog(dir.path(), 40);
    let items = synth::catalog(&Taxonomy::example(), &CatalogConfig { items: 40, seed: 13, ..CatalogConfig::default() });
    let guides: BTreeMap<_, _> = items.iter().map(|i| (i.item_id.clone(), i.category.clone())).collect();
    let guides_path = dir.path().join("guides.json");
    std::fs::write(&guides_path, serde_json::to_string(&guides).unwrap()).unwrap();
    let args = ["eval-detector", "--pred", s(&files.detections), "--gt", s(&files.ground_truth), "--guides", s(&guides_path)];
    let (code, out, err) = run(&[&["--json"], &args[..]].concat());
    assert_eq!(code, 0, "{err}");
    golden("eval_detector.json", &out);
    let (code, out, _) = run(&args);
    assert_eq!(code, 0);
    golden("eval_detector.txt", &out);

    let v: Value = serde_json::from_str(&run(&[&["--json"], &args[..]].concat()).1).unwrap();
    let map = |m: usize| -> Vec<f64> {
        v["methods"][m]["rows"].as_array().unwrap().iter().map(|r| r["map"].as_f64().unwrap()).collect()
    };
    // Guides only remove decoys, so mAP cannot drop.
    for (plain, guided) in map(0).iter().zip(map(1)) {
        assert!(guided >= *plain);
    }
}

fn checkpoint(dir: &Path) -> PathBuf {
    let t = Taxonomy::example();
    let model = SeqModel::random(ModelDims::with_vocab(t.vocab_size()), 3).unwrap();
    let path = dir.join("model.fpsm");
    save_checkpoint(&model, &t, &path).unwrap();
    path
}

#[test]
fn ingest_then_search() {
    let dir = tempfile::tempdir().unwrap();
    let files = catalog(dir.path(), 30);
    let ckpt = checkpoint(dir.path());
    let index = dir.path().join("catalog.fpsi");
    let assets = ["--checkpoint", s(&ckpt), "--detector-fixture", s(&files.detections)];
    let (code, out, err) = run(&[&["--json", "ingest"], &assets[..], &["--manifest", s(&files.manifest), "--index", s(&index)]].concat());
    assert_eq!(code, 0, "{err}");
    golden("ingest.json", &out);

    let image = dir.path().join("images/item-0004.ppm");
    let feature = dir.path().join("features/item-0004.fpsf");
    let query = ["--index", s(&index), "--image", s(&image), "--feature", s(&feature), "--k", "5"];
    for (name, extra) in [
        ("search_option1.json", vec!["--option", "1"]),
        ("search_option2.json", vec!["--option", "2", "--guided", "skirt"]),
        ("search_option3.json", vec!["--option", "3", "--roi", "4,4,30,24"]),
    ] {
        let (code, out, err) = run(&[&["--json", "search"], &assets[..], &query[..], &extra[..]].concat());
        assert_eq!(code, 0, "{name}: {err}");
        golden(name, &out);
    }
    let (code, out, _) = run(&[&["search"], &assets[..], &query[..], &["--option", "2", "--guided", "skirt"]].concat());
    assert_eq!(code, 0);
    golden("search_option2.txt", &out);

    // Operational failures exit 1 with a message.
    let (code, _, err) = run(&[&["search"], &assets[..], &query[..], &["--option", "2", "--guided", "hat"]].concat());
    assert_eq!(code, 1);
    assert!(err.starts_with("error:"));
    let (code, _, _) = run(&[&["search"], &assets[..], &query[..], &["--option", "3"]].concat());
    assert_eq!(code, 1);
}

#[test]
fn train_then_eval_sequence_model() {
    let dir = tempfile::tempdir().unwrap();
    let files = catalog(dir.path(), 30);
    let ckpt = dir.path().join("trained.fpsm");
    let train = [
        "--json", "--seed", "5", "train-seq", "--manifest", s(&files.dataset), "--checkpoint", s(&ckpt),
        "--epochs", "4", "--hidden", "16", "--embed", "8", "--batch", "4",
    ];
    let (code, out, err) = run(&train);
    assert_eq!(code, 0, "{err}");
    let v: Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["epochs_run"], 4);
    assert!(ckpt.exists());
    let (_, again, _) = run(&train);
    assert_eq!(out, again);

    let (code, out, err) = run(&["--json", "eval-seq", "--manifest", s(&files.dataset), "--checkpoint", s(&ckpt)]);
    assert_eq!(code, 0, "{err}");
    let rows: Vec<Value> = serde_json::from_str(&out).unwrap();
    let splits: Vec<_> = rows.iter().map(|r| r["split"].as_str().unwrap()).collect();
    assert_eq!(splits, ["train", "validation", "test"]);
    assert_eq!(rows.iter().map(|r| r["items"].as_u64().unwrap()).sum::<u64>(), 30);
    let (code, out, _) = run(&["eval-seq", "--manifest", s(&files.dataset), "--checkpoint", s(&ckpt)]);
    assert_eq!(code, 0);
    assert!(out.starts_with("split"));
}

#[test]
fn bench_hamming_agrees() {
    let (code, out, _) = run(&["--json", "bench-hamming", "--bits", "256", "--n", "2000", "--verify", "200"]);
    assert_eq!(code, 0);
    let v: Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["paths_agree"], true);
    assert_eq!(v["oracle_mismatches"], 0);
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(run(&[]).0, 2);
    assert_eq!(run(&["frobnicate"]).0, 2);
    assert_eq!(run(&["search", "--checkpoint", "x", "--index", "y", "--option", "4"]).0, 2);
    assert_eq!(run(&["search", "--checkpoint", "x", "--index", "y", "--option", "3", "--roi", "1,2,3"]).0, 2);
    let (code, out, _) = run(&["--help"]);
    assert_eq!(code, 0);
    for cmd in ["ingest", "search", "serve", "train-seq", "eval-seq", "eval-detector", "taxonomy-validate", "bench-hamming"] {
        assert!(out.contains(cmd), "{cmd}");
    }
    let (code, _, err) = run(&["taxonomy-validate", "--taxonomy", "/no/such.json"]);
    assert_eq!(code, 1);
    assert!(!err.is_empty());
}
