use nvsplat_core::config::AblationFlags;
use nvsplat_core::diffusion::{stylize_group, NvDiffusionModel};
use nvsplat_core::fixture::Fixture;
use nvsplat_core::grouping::ViewGroup;
use nvsplat_core::losses::LossWeights;
use nvsplat_core::pipeline::{
    dataset_update, finetune, finetune_with, run_ablation, scratch_scene, AblationVariant, StylizationRun,
};
use nvsplat_core::scene::quat_norm;

fn small_run() -> StylizationRun {
    let f = Fixture::small();
    StylizationRun::new(f.scene, f.cameras, f.style, f.config).unwrap()
}

fn updated(mut run: StylizationRun) -> StylizationRun {
    dataset_update(&mut run).unwrap();
    run
}

#[test]
fn synthetic_fixture_groups_eight_views_in_two() {
    let f = Fixture::synthetic();
    let mut run = StylizationRun::new(f.scene, f.cameras, f.style, f.config).unwrap();
    run.config.diffusion.steps = 2;
    dataset_update(&mut run).unwrap();
    assert_eq!(run.targets.len(), 8);
    assert_eq!(run.groups.len(), 2);
    assert!(run.groups.iter().all(|g| g.view_indices.len() == 4));
}

#[test]
fn dataset_update_is_deterministic() {
    let a = updated(small_run());
    let b = updated(small_run());
    assert_eq!(a.targets, b.targets);
    assert_eq!(a.groups, b.groups);
}

#[test]
fn no_nv_attention_stylizes_each_view_alone() {
    let run = updated(small_run().with_flags(AblationFlags { no_nv_attention: true, ..AblationFlags::default() }));
    assert_eq!(run.groups.len(), run.cameras.len());
    let model = NvDiffusionModel::new(run.config.diffusion.clone()).unwrap();
    for (v, content) in run.contents.iter().enumerate() {
        let g = ViewGroup { view_indices: vec![v] };
        let alone = stylize_group(&model, &g, std::slice::from_ref(content), &run.style, run.config.seed).unwrap();
        assert_eq!(alone[0], run.targets[v]);
    }
}

#[test]
fn finetune_is_deterministic() {
    let run = updated(small_run());
    let a = finetune(&run).unwrap();
    let b = finetune(&run).unwrap();
    assert_eq!(a.scene, b.scene);
    assert_eq!(a.report, b.report);
}

#[test]
fn matching_targets_keep_the_scene_still() {
    let mut run = updated(small_run());
    run.targets = run.contents.clone();
    run.config.losses = LossWeights { rgb: 1.0, nnfm: 0.0 };
    let out = finetune(&run).unwrap();
    assert_eq!(out.report.initial_dataset_loss, 0.0);
    assert_eq!(out.report.final_dataset_loss, 0.0);
    for (a, b) in run.scene.gaussians.iter().zip(&out.scene.gaussians) {
        assert_eq!(a.position, b.position);
        assert_eq!(a.log_scale, b.log_scale);
        assert_eq!(a.opacity_logit, b.opacity_logit);
    }
}

#[test]
fn parameters_stay_valid_during_finetuning() {
    let run = updated(small_run());
    let mut seen = 0;
    finetune_with(&run, |_, scene| {
        seen += 1;
        for g in &scene.gaussians {
            assert!((quat_norm(&g.rotation) - 1.0).abs() < 1e-12);
            assert!(g.color.iter().all(|c| (0.0..=1.0).contains(c)));
            assert!(g.position.iter().chain(g.log_scale.iter()).all(|v| v.is_finite()));
            assert!(g.opacity_logit.is_finite());
        }
    })
    .unwrap();
    assert_eq!(seen, run.config.finetune.iterations);
}

#[test]
fn full_ablation_equals_plain_run() {
    let base = small_run();
    let out = run_ablation(&base, &AblationVariant::Full).unwrap();
    assert_eq!(out.len(), 1);
    assert_eq!(out[0].label, "full");
    let plain = finetune(&updated(small_run())).unwrap();
    assert_eq!(out[0].finetune.scene, plain.scene);
    assert_eq!(out[0].finetune.report, plain.report);
}

#[test]
fn no_nnfm_ablation_equals_zero_nnfm_weight() {
    let out = run_ablation(&small_run(), &AblationVariant::NoNnfm).unwrap();
    let mut run = small_run();
    run.config.losses.nnfm = 0.0;
    let plain = finetune(&updated(run)).unwrap();
    assert_eq!(out[0].finetune.scene, plain.scene);
    assert_eq!(out[0].finetune.report, plain.report);
}

#[test]
fn from_scratch_ablation_starts_from_the_scratch_scene() {
    let out = run_ablation(&small_run(), &AblationVariant::FromScratch).unwrap();
    let o = &out[0];
    let expected = scratch_scene(&o.run.cameras, &o.run.targets, &o.run.config).unwrap();
    assert_eq!(o.finetune.initial_scene, expected);
    assert_eq!(o.finetune.scene.len(), o.run.config.finetune.scratch_gaussians);
}

#[test]
fn n_sweep_runs_once_per_size() {
    let out = run_ablation(&small_run(), &AblationVariant::NSweep(vec![1, 2, 4])).unwrap();
    let labels: Vec<&str> = out.iter().map(|o| o.label.as_str()).collect();
    assert_eq!(labels, ["n_sweep_n1", "n_sweep_n2", "n_sweep_n4"]);
    let group_counts: Vec<usize> = out.iter().map(|o| o.run.groups.len()).collect();
    assert_eq!(group_counts, [4, 2, 1]);
    assert!(out.iter().all(|o| o.report.views == 4 && o.report.cfsd >= 0.0));
}
