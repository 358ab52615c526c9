use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use lsk_core::io::container;
use tempfile::TempDir;

fn lsk(ws: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lsk"))
        .arg("--workspace")
        .arg(ws)
        .args(args)
        .output()
        .expect("lsk runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[track_caller]
fn ok(o: Output) -> Output {
    assert!(o.status.success(), "exit {:?}\nstdout:\n{}\nstderr:\n{}", o.status.code(), stdout(&o), stderr(&o));
    o
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn files_in(dir: &Path) -> Vec<String> {
    let mut names: Vec<String> = fs::read_dir(dir)
        .map(|it| it.map(|e| e.unwrap().file_name().to_string_lossy().into_owned()).collect())
        .unwrap_or_default();
    names.sort();
    names
}

/// Four small bumped spheres with their correspondences.
fn sphere_family(tmp: &Path, extra: &[&str]) -> PathBuf {
    let data = tmp.join("data");
    let mut args = vec!["generate", "sphere-bump", "--out", p(&data), "--subdiv", "2"];
    args.extend_from_slice(extra);
    ok(lsk(tmp, &args));
    data
}

/// Generated family, spectra, MST network and latent basis in `ws`.
fn latent_workspace(tmp: &Path) -> (PathBuf, PathBuf) {
    let data = sphere_family(tmp, &[]);
    let ws = tmp.join("ws");
    ok(lsk(&ws, &["spectra", "--meshes", p(&data.join("meshes")), "--k", "30"]));
    ok(lsk(&ws, &["fmn", "--correspondences", p(&data.join("correspondences"))]));
    ok(lsk(&ws, &["latent", "--m", "20"]));
    (data, ws)
}

fn first_shape(data: &Path) -> String {
    files_in(&data.join("meshes"))[0].trim_end_matches(".off").to_string()
}

#[test]
fn spectra_computes_then_reports_up_to_date() {
    let tmp = TempDir::new().unwrap();
    let data = sphere_family(tmp.path(), &[]);
    let ws = tmp.path().join("ws");
    let meshes = data.join("meshes");
    let first = ok(lsk(&ws, &["spectra", "--meshes", p(&meshes), "--k", "20"]));
    assert!(stdout(&first).contains("computed 4 shapes"), "{}", stdout(&first));
    assert_eq!(files_in(&ws.join("spectra")).iter().filter(|f| f.ends_with(".evals.lskm")).count(), 4);
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(ws.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["shapes"].as_array().unwrap().len(), 4);
    let again = ok(lsk(&ws, &["spectra", "--meshes", p(&meshes), "--k", "20"]));
    assert!(stdout(&again).contains("up to date (4 shapes)"), "{}", stdout(&again));
}

#[test]
fn corrupt_mesh_fails_with_its_name() {
    let tmp = TempDir::new().unwrap();
    let data = sphere_family(tmp.path(), &[]);
    let meshes = data.join("meshes");
    fs::write(meshes.join("broken.off"), "OFF\n3 1 0\n0 0 0\n1 0 0\n").unwrap();
    let o = lsk(&tmp.path().join("ws"), &["spectra", "--meshes", p(&meshes), "--k", "20"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("broken.off"), "{}", stderr(&o));
}

#[test]
fn chain_topology_has_two_edges_per_link() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("chain");
    ok(lsk(tmp.path(), &["generate", "chain", "--out", p(&data), "--count", "6", "--subdiv", "1"]));
    let ws = tmp.path().join("ws");
    ok(lsk(&ws, &["spectra", "--meshes", p(&data.join("meshes")), "--k", "10"]));
    let o = ok(lsk(&ws, &["fmn", "--topology", "chain", "--correspondences", p(&data.join("correspondences"))]));
    assert!(stdout(&o).contains("10 directed edges"), "{}", stdout(&o));
}

#[test]
fn clique_writes_one_map_per_ordered_pair() {
    let tmp = TempDir::new().unwrap();
    let data = sphere_family(tmp.path(), &["--vertical-heights", "0.1,0.2,0.3,0.4,0.5", "--shapes-per-cluster", "1"]);
    let ws = tmp.path().join("ws");
    ok(lsk(&ws, &["spectra", "--meshes", p(&data.join("meshes")), "--k", "10"]));
    let corr = data.join("correspondences");
    ok(lsk(&ws, &["fmn", "--topology", "clique", "--correspondences", p(&corr)]));
    assert_eq!(files_in(&ws.join("maps")).len(), 20);
}

#[test]
fn saturated_knn_is_noted() {
    let tmp = TempDir::new().unwrap();
    let data = sphere_family(tmp.path(), &[]);
    let ws = tmp.path().join("ws");
    ok(lsk(&ws, &["spectra", "--meshes", p(&data.join("meshes")), "--k", "10"]));
    let o = ok(lsk(&ws, &["fmn", "--topology", "knn:10", "--correspondences", p(&data.join("correspondences"))]));
    assert!(stderr(&o).contains("saturates"), "{}", stderr(&o));
    assert!(stdout(&o).contains("12 directed edges"), "{}", stdout(&o));
}

#[test]
fn latent_checks_m_and_writes_both_kinds() {
    let tmp = TempDir::new().unwrap();
    let data = sphere_family(tmp.path(), &[]);
    let ws = tmp.path().join("ws");
    ok(lsk(&ws, &["spectra", "--meshes", p(&data.join("meshes")), "--k", "20"]));
    ok(lsk(&ws, &["fmn", "--correspondences", p(&data.join("correspondences"))]));
    let too_big = lsk(&ws, &["latent", "--m", "21"]);
    assert_eq!(too_big.status.code(), Some(2));
    let o = ok(lsk(&ws, &["latent", "--m", "12"]));
    assert!(stdout(&o).contains("m = 12"));
    let diffs: Vec<String> = files_in(&ws.join("latent")).into_iter().filter(|f| f.starts_with("D_")).collect();
    assert_eq!(diffs.len(), 8, "{diffs:?}");
    assert_eq!(diffs.iter().filter(|f| f.starts_with("D_area_")).count(), 4);
}

#[test]
fn identical_shapes_give_tiny_canonical_residuals() {
    let tmp = TempDir::new().unwrap();
    let data = sphere_family(tmp.path(), &["--horizontal-height", "0", "--vertical-heights", "0,0", "--jitter", "0"]);
    let ws = tmp.path().join("ws");
    ok(lsk(&ws, &["spectra", "--meshes", p(&data.join("meshes")), "--k", "20"]));
    ok(lsk(&ws, &["fmn", "--correspondences", p(&data.join("correspondences"))]));
    let o = ok(lsk(&ws, &["latent", "--m", "20"]));
    for line in stdout(&o).lines().filter(|l| l.starts_with("constraint") || l.starts_with("diagonality")) {
        let value: f64 = line.rsplit(' ').next().unwrap().parse().unwrap();
        assert!(value <= 1e-8, "{line}");
    }
}

#[test]
fn variability_modes() {
    let tmp = TempDir::new().unwrap();
    let (data, ws) = latent_workspace(tmp.path());
    let missing = lsk(&ws, &["variability", "--mode", "cross"]);
    assert_eq!(missing.status.code(), Some(2));

    ok(lsk(&ws, &["variability", "--count", "3"]));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(ws.join("variability/global.json")).unwrap()).unwrap();
    let values: Vec<f64> = report["result"]["functions"]
        .as_array()
        .unwrap()
        .iter()
        .map(|f| f["eigenvalue"].as_f64().unwrap())
        .collect();
    assert_eq!(values.len(), 3);
    assert!(values.windows(2).all(|w| w[0] >= w[1]), "{values:?}");

    let partition = data.join("partition.json");
    ok(lsk(&ws, &["variability", "--mode", "cross", "--partition", p(&partition), "--emit-fields", "--count", "2"]));
    assert!(ws.join("variability/cross_embedding.csv").exists());
    assert_eq!(files_in(&ws.join("variability/fields")).iter().filter(|f| f.ends_with(".txt")).count(), 8);

    let bad = tmp.path().join("bad_partition.json");
    fs::write(&bad, r#"{"cluster_a": ["nobody"], "cluster_b": ["ghost"]}"#).unwrap();
    assert_ne!(lsk(&ws, &["variability", "--mode", "cross", "--partition", p(&bad)]).status.code(), Some(0));
}

#[test]
fn operator_algebra_commands() {
    let tmp = TempDir::new().unwrap();
    let (data, ws) = latent_workspace(tmp.path());
    let a = first_shape(&data);

    ok(lsk(&ws, &["ops", "interp", &a, &a, "--t", "0.3", "--name", "same"]));
    let out = container::read_matrix(&ws.join("ops/same.lskm")).unwrap();
    let stored = container::read_matrix(&ws.join(format!("latent/D_area_{a}.lskm"))).unwrap();
    assert!((&out - &stored).amax() <= 1e-15 * stored.amax());
    assert!(ws.join("ops/same.recipe.json").exists());

    let mut singular = stored.clone();
    singular.column_mut(0).fill(0.0);
    let sing_path = tmp.path().join("singular.lskm");
    container::write_matrix(&sing_path, &singular).unwrap();
    let o = lsk(&ws, &["ops", "analogy", p(&sing_path), &a, &a]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).to_lowercase().contains("condition"), "{}", stderr(&o));

    let region = data.join("horizontal_region.txt");
    ok(lsk(&ws, &["ops", "mix", &a, &a, "--region", p(&region), "--name", "mixed"]));
    let mixed = container::read_matrix(&ws.join("ops/mixed.lskm")).unwrap();
    assert!((&mixed - &stored).amax() <= 1e-12 * stored.amax());

    let d = ok(lsk(&ws, &["ops", "descriptors"]));
    assert_eq!(stdout(&d).lines().count(), 4);
}

#[test]
fn extend_attaches_a_duplicate_to_its_twin() {
    let tmp = TempDir::new().unwrap();
    let (data, ws) = latent_workspace(tmp.path());
    let twin = first_shape(&data);
    let text = fs::read_to_string(data.join("meshes").join(format!("{twin}.off"))).unwrap();
    let n: usize = text.lines().nth(1).unwrap().split_whitespace().next().unwrap().parse().unwrap();
    let new_dir = tmp.path().join("new");
    fs::create_dir_all(&new_dir).unwrap();
    let mesh = new_dir.join("newcomer.off");
    fs::write(&mesh, &text).unwrap();
    let corr = new_dir.join("identity.txt");
    fs::write(&corr, (0..n).map(|v| format!("{v} {v}\n")).collect::<String>()).unwrap();

    let unknown = lsk(&ws, &["extend", "--mesh", p(&mesh), "--correspondence", p(&corr), "--neighbor", "nobody"]);
    assert_ne!(unknown.status.code(), Some(0));

    let missing = lsk(&ws, &["extend", "--mesh", p(&mesh), "--correspondence", p(&new_dir.join("absent.txt"))]);
    assert_eq!(missing.status.code(), Some(2));

    let o = ok(lsk(&ws, &["extend", "--mesh", p(&mesh), "--correspondence", p(&corr), "--neighbor", "auto"]));
    assert!(stdout(&o).contains(&format!("via neighbor {twin}")), "{}", stdout(&o));
    let mine = container::read_matrix(&ws.join("extended/newcomer/D_area.lskm")).unwrap();
    let theirs = container::read_matrix(&ws.join(format!("latent/D_area_{twin}.lskm"))).unwrap();
    assert!((&mine - &theirs).amax() <= 1e-8);
}

#[test]
fn align_recovers_two_cluster_pairing() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("two");
    ok(lsk(tmp.path(), &["generate", "two-cluster", "--out", p(&data)]));
    for side in ["a", "b"] {
        let ws = tmp.path().join(format!("ws_{side}"));
        ok(lsk(&ws, &["spectra", "--meshes", p(&data.join(side).join("meshes")), "--k", "60"]));
        ok(lsk(&ws, &["fmn", "--correspondences", p(&data.join(side).join("correspondences"))]));
        ok(lsk(&ws, &["latent", "--m", "40", "--kind", "area"]));
    }
    let o = ok(lsk(
        &tmp.path().join("ws_a"),
        &["ops", "align", "--other", p(&tmp.path().join("ws_b")), "--truth", p(&data.join("ground_truth.json"))],
    ));
    assert!(stdout(&o).contains("pairing accuracy 100.0%"), "{}", stdout(&o));
}

#[test]
fn usage_errors_exit_two() {
    let tmp = TempDir::new().unwrap();
    assert_eq!(lsk(tmp.path(), &["fmn"]).status.code(), Some(2));
    assert_eq!(lsk(tmp.path(), &["generate", "chain", "--out", "x", "--count", "2"]).status.code(), Some(2));
    assert_eq!(lsk(tmp.path(), &["frobnicate"]).status.code(), Some(2));
}
