use orchard_core::pipeline::{run_pipeline, FailureKind, Manifest, PipelineConfig, MANIFEST};
use orchard_core::semantic::Label;
use orchard_core::synth::{generate, OrchardSpec, PointSource, Terrain};

const FIXTURE: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/synthetic_fixture.toml");

fn fixture() -> PipelineConfig {
    PipelineConfig::load(std::path::Path::new(FIXTURE)).unwrap()
}

#[test]
fn fused_labels_track_generator_truth() {
    // Lifted boxes reach the ground under each canopy, so the ground patch
    // below a tree is labelled tree. Denser canopies keep that patch small
    // relative to the tree points.
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = fixture();
    cfg.output_dir = dir.path().to_path_buf();
    cfg.synthetic.canopy_density_factor = 16.0;
    let out = run_pipeline::<f64>(&cfg).unwrap();
    let truth = out.truth.unwrap();
    let n = out.map.len() as f64;
    let truth_tree = truth.sources.iter().filter(|s| **s != PointSource::Ground).count();
    let truth_ground = truth.ground_indices.len();

    let tree = out.semantic.count(Label::Tree);
    let ground = out.semantic.count(Label::Ground);
    assert!((tree as f64 - truth_tree as f64).abs() / n <= 0.02, "tree {tree} vs {truth_tree}");
    assert!((ground as f64 - truth_ground as f64).abs() / n <= 0.02, "ground {ground} vs {truth_ground}");
    assert_eq!(out.semantic.labels.len(), out.map.len());
    assert!(out.semantic.unassigned_trees().is_empty());
}

#[test]
fn generator_ground_share_matches_closed_form() {
    for ground in [Terrain::Flat, Terrain::Slope { grade: 0.1 }, Terrain::Rolling { amplitude: 0.5, wavelength: 6.0 }] {
        let spec = OrchardSpec { rows: 2, trees_per_row: 6, ground, ..OrchardSpec::default() };
        let (cloud, truth) = generate::<f64>(&spec).unwrap();
        let g = spec.expected_ground_points() as f64;
        let t = (spec.expected_trunk_points() + spec.expected_canopy_points()) as f64 * spec.tree_count() as f64;
        let want = g / (g + t);
        let got = truth.ground_indices.len() as f64 / cloud.len() as f64;
        assert!((got - want).abs() <= 0.02 * want, "{:?}: {got} vs {want}", spec.ground);
        // every ground point sits on the terrain surface up to noise
        for &i in &truth.ground_indices {
            let p = cloud.points()[i];
            assert!((p.z - spec.ground.height(p.x, p.y)).abs() <= 5.0 * spec.noise_sigma + 1e-12);
        }
    }
}

#[test]
fn truth_boxes_sit_on_the_layout() {
    let spec = OrchardSpec { rows: 3, trees_per_row: 4, ..OrchardSpec::default() };
    let (_, truth) = generate::<f64>(&spec).unwrap();
    assert_eq!(truth.rows.len(), 3);
    for (k, c) in truth.tree_centers().iter().enumerate() {
        let base = spec.tree_base(k);
        assert!((c[0] - base[0]).abs() < 0.1 && (c[1] - base[1]).abs() < 0.1, "tree {k}");
    }
}

#[test]
fn failing_stage_leaves_incomplete_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = fixture();
    cfg.output_dir = dir.path().to_path_buf();
    cfg.input = Some(dir.path().join("missing.xyz"));
    let err = run_pipeline::<f64>(&cfg).err().expect("missing input must fail");
    assert_eq!(err.kind, FailureKind::Io);
    let m: Manifest = serde_json::from_str(&std::fs::read_to_string(dir.path().join(MANIFEST)).unwrap()).unwrap();
    assert!(!m.complete);
    assert!(m.failed_stage.is_some());
    assert!(m.error.is_some());
}

#[test]
fn complete_run_lists_its_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = fixture();
    cfg.output_dir = dir.path().to_path_buf();
    let out = run_pipeline::<f64>(&cfg).unwrap();
    assert!(out.manifest.complete);
    assert_eq!(out.manifest.strongly_connected, Some(true));
    for a in &out.manifest.artifacts {
        assert!(dir.path().join(a).is_file(), "{a} listed but missing");
    }
    // the resolved config reproduces the run
    let again = PipelineConfig::load(&dir.path().join("config.resolved.toml")).unwrap();
    assert_eq!(again.synthetic, cfg.resolved_synthetic());
    assert_eq!(again.window, cfg.window);
}

#[test]
fn single_precision_pipeline_agrees() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = fixture();
    cfg.output_dir = dir.path().to_path_buf();
    let out = run_pipeline::<f32>(&cfg).unwrap();
    assert_eq!(out.detections.trees.len(), 30);
    assert_eq!(out.semantic.rows.len(), 3);
    assert!(out.graph.is_strongly_connected());
}
