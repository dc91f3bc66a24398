//! Acceptance suite: one PASS/FAIL line per criterion. Exits nonzero if any
//! criterion fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, Vector3};
use nvsplat_core::config::AblationFlags;
use nvsplat_core::diffusion::attention::concat_rows;
use nvsplat_core::diffusion::{ddim_update, nv_attention, self_attention, stylize_group, NvDiffusionModel, Tokens};
use nvsplat_core::fixture::Fixture;
use nvsplat_core::grouping::{group_centers, group_views, mean_within_group_distance, ViewGroup};
use nvsplat_core::io::{atomic_write, load_colmap, load_ply, save_colmap, save_ply};
use nvsplat_core::losses::{cosine_distance, nnfm_loss, ExtractorConfig, FeatureExtractor, FeatureMap};
use nvsplat_core::metrics::{cfsd, cfsd_from_features, clip_dc, csd_score, Descriptor, DescriptorSource};
use nvsplat_core::pipeline::{dataset_update, finetune, run_ablation, scratch_scene, AblationVariant, StylizationRun};
use nvsplat_core::raster::{render, render_backward, render_untiled, RasterConfig, RenderPass};
use nvsplat_core::scene::Camera;
use nvsplat_testkit as tk;
use rand::seq::SliceRandom;
use rand::Rng;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("rasterizer gradients vs finite differences", c1_gradients),
        ("tiled compositing oracle, transmittance, bounds", c2_compositing),
        ("NV attention equivalences", c3_attention),
        ("DDIM algebra", c4_ddim),
        ("NNFM suite", c5_nnfm),
        ("view grouping", c6_grouping),
        ("metric kernels", c7_metrics),
        ("end-to-end CLI smoke on the synthetic fixture", c8_end_to_end),
        ("ablation plumbing", c9_ablation),
        ("I/O round trips and atomic writes", c10_io),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("PASS criterion {:>2}: {name} ({detail}; {secs:.1}s)", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL criterion {:>2}: {name} ({why}; {secs:.1}s)", i + 1);
            }
        }
    }
    println!("{} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

// ---------------------------------------------------------------- 1

fn c1_gradients() -> Outcome {
    let start = Instant::now();
    let cfg = RasterConfig::default();
    let mut entries = 0;
    let mut nontrivial = 0;
    for seed in 0..50u64 {
        let mut rng = tk::rng(0xC1_0000 + seed);
        let n = rng.random_range(1..=20);
        let scene = tk::random_scene(&mut rng, n);
        let cam = tk::random_camera(&mut rng, 4.0, 16);
        let upstream: Vec<f64> = (0..16 * 16 * 3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let analytic = render_backward(&scene, &cam, &cfg, &upstream).map_err(|e| e.to_string())?;
        let numeric = tk::render_gradients_fd(&scene, &cam, &cfg, &upstream, 1e-4);
        for (i, (g, num)) in analytic.gaussians.iter().zip(&numeric).enumerate() {
            let a = tk::gaussian_params(&nvsplat_core::Gaussian3D {
                position: g.position,
                rotation: g.rotation,
                log_scale: g.log_scale,
                opacity_logit: g.opacity_logit,
                color: g.color,
            });
            for k in 0..tk::PARAMS_PER_GAUSSIAN {
                ensure!(tk::grad_close(a[k], num[k]), "seed {seed} gaussian {i} param {k}: analytic {} vs numeric {}", a[k], num[k]);
                entries += 1;
                nontrivial += (num[k].abs() >= 1e-4) as usize;
            }
        }
    }
    let elapsed = start.elapsed();
    ensure!(elapsed < Duration::from_secs(120), "took {:.1}s, limit 120s", elapsed.as_secs_f64());
    ensure!(nontrivial > 500, "only {nontrivial} non-trivial gradient entries");
    Ok(format!("50 scenes, {entries} partials ({nontrivial} above 1e-4)"))
}

// ---------------------------------------------------------------- 2

fn c2_compositing() -> Outcome {
    let mut pixels = 0;
    for seed in 0..20u64 {
        let mut rng = tk::rng(0xC2_0000 + seed);
        let n = rng.random_range(1..=60);
        let scene = tk::random_scene(&mut rng, n);
        let size = rng.random_range(8..48);
        let dist = rng.random_range(2.5..6.0);
        let cam = tk::random_camera(&mut rng, dist, size);
        let cfg = RasterConfig { tile_size: [16, 8, 5, 3][seed as usize % 4], ..RasterConfig::default() };
        let tiled = render(&scene, &cam, &cfg).map_err(|e| e.to_string())?;
        let untiled = render_untiled(&scene, &cam, &cfg).map_err(|e| e.to_string())?;
        ensure!(tiled.data.iter().zip(&untiled.data).all(|(a, b)| a.to_bits() == b.to_bits()), "seed {seed}: tiled differs from untiled");
        ensure!(tiled.data.iter().all(|v| (0.0..=1.0).contains(v)), "seed {seed}: pixel outside [0, 1]");
        let pass = RenderPass::new(&scene, &cam, &cfg).map_err(|e| e.to_string())?;
        for y in 0..size {
            for x in 0..size {
                let (contribs, t_final) = pass.contributions(x, y);
                let mut prev = 1.0;
                for c in &contribs {
                    ensure!(c.transmittance <= prev && c.transmittance >= 0.0, "seed {seed} pixel ({x},{y}): transmittance rose");
                    prev = c.transmittance;
                }
                ensure!(t_final <= prev && (0.0..=1.0).contains(&t_final), "seed {seed} pixel ({x},{y}): final transmittance");
                pixels += 1;
            }
        }
    }
    Ok(format!("20 scenes bit-equal, {pixels} pixels checked"))
}

// ---------------------------------------------------------------- 3

fn tokens(rng: &mut impl Rng, n: usize, d: usize) -> Tokens {
    DMatrix::from_fn(n, d, |_, _| rng.random_range(-1.0..1.0))
}

fn rows(t: &Tokens) -> Vec<Vec<f64>> {
    t.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn c3_attention() -> Outcome {
    let mut rng = tk::rng(0xC3);
    for _ in 0..100 {
        let (q, k, v) = (tokens(&mut rng, 6, 8), tokens(&mut rng, 6, 8), tokens(&mut rng, 6, 8));
        let nv = nv_attention(std::slice::from_ref(&q), std::slice::from_ref(&k), std::slice::from_ref(&v)).map_err(|e| e.to_string())?;
        ensure!(nv[0] == self_attention(&q, &k, &v).map_err(|e| e.to_string())?, "group of one differs from self-attention");
    }
    let mut worst_perm = 0.0f64;
    for _ in 0..100 {
        let n = rng.random_range(2..7);
        let q: Vec<Tokens> = (0..n).map(|_| tokens(&mut rng, 4, 8)).collect();
        let k: Vec<Tokens> = (0..n).map(|_| tokens(&mut rng, 4, 8)).collect();
        let v: Vec<Tokens> = (0..n).map(|_| tokens(&mut rng, 4, 8)).collect();
        let base = nv_attention(&q, &k, &v).map_err(|e| e.to_string())?;
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let pick = |x: &[Tokens]| perm.iter().map(|&i| x[i].clone()).collect::<Vec<_>>();
        let out = nv_attention(&pick(&q), &pick(&k), &pick(&v)).map_err(|e| e.to_string())?;
        for (slot, &orig) in perm.iter().enumerate() {
            worst_perm = worst_perm.max((&out[slot] - &base[orig]).abs().max());
        }
    }
    ensure!(worst_perm <= 1e-6, "permutation changed outputs by {worst_perm:e}");
    let mut worst_dense = 0.0f64;
    for _ in 0..100 {
        let q: Vec<Tokens> = (0..2).map(|_| tokens(&mut rng, 2, 4)).collect();
        let k: Vec<Tokens> = (0..2).map(|_| tokens(&mut rng, 2, 4)).collect();
        let v: Vec<Tokens> = (0..2).map(|_| tokens(&mut rng, 2, 4)).collect();
        let ours = nv_attention(&q, &k, &v).map_err(|e| e.to_string())?;
        let kk = rows(&concat_rows(&k).map_err(|e| e.to_string())?);
        let vv = rows(&concat_rows(&v).map_err(|e| e.to_string())?);
        for i in 0..2 {
            let oracle = tk::dense_attention(&rows(&q[i]), &kk, &vv);
            for (a, b) in rows(&ours[i]).iter().flatten().zip(oracle.iter().flatten()) {
                worst_dense = worst_dense.max((a - b).abs());
            }
        }
    }
    ensure!(worst_dense <= 1e-12, "dense oracle deviation {worst_dense:e}");
    Ok(format!("permutation max dev {worst_perm:.1e}, dense oracle max dev {worst_dense:.1e}"))
}

// ---------------------------------------------------------------- 4

fn c4_ddim() -> Outcome {
    let mut rng = tk::rng(0xC4);
    let mut worst = 0.0f64;
    for draw in 0..1000 {
        let z: Vec<f64> = (0..8).map(|_| rng.random_range(-4.0..4.0)).collect();
        let eps: Vec<f64> = (0..8).map(|_| rng.random_range(-4.0..4.0)).collect();
        let a: f64 = rng.random_range(1e-3..1.0);
        let b: f64 = rng.random_range(1e-3..1.0);
        let scaled = ddim_update(&z, &[0.0; 8], a, b).map_err(|e| e.to_string())?;
        let c = (b / a).sqrt();
        ensure!(scaled.iter().zip(&z).all(|(o, zi)| *o == c * zi), "draw {draw}: zero-noise step is not a pure rescale");
        ensure!(ddim_update(&z, &eps, a, a).map_err(|e| e.to_string())? == z, "draw {draw}: equal levels do not fix z");
        for ((o, zi), ei) in ddim_update(&z, &eps, a, b).map_err(|e| e.to_string())?.iter().zip(&z).zip(&eps) {
            let r = tk::ddim_scalar(*zi, *ei, a, b);
            worst = worst.max((o - r).abs() / (1.0 + r.abs()));
        }
    }
    ensure!(worst <= 1e-12, "general step deviates from the scalar oracle by {worst:e}");
    Ok(format!("1000 draws, general-case max dev {worst:.1e}"))
}

// ---------------------------------------------------------------- 5

fn fmap(rows: &[Vec<f64>], w: usize) -> FeatureMap {
    FeatureMap::new(rows.len() / w, w, rows[0].len(), rows.concat(), 0).expect("consistent shape")
}

fn match_gap(render: &[Vec<f64>], style: &[Vec<f64>]) -> f64 {
    render
        .iter()
        .map(|r| {
            let mut d: Vec<f64> = style.iter().map(|s| cosine_distance(r, s)).collect();
            d.sort_by(f64::total_cmp);
            d[1] - d[0]
        })
        .fold(f64::INFINITY, f64::min)
}

fn c5_nnfm() -> Outcome {
    let mut rng = tk::rng(0xC5);
    let nn = |r: &[Vec<f64>], s: &[Vec<f64>]| nnfm_loss(&fmap(r, 3), &fmap(s, 3)).map(|o| o.loss).map_err(|e| e.to_string());
    let mut worst = 0.0f64;
    for pair in 0..100 {
        let r = tk::random_vectors(&mut rng, 9, 4);
        let s = tk::random_vectors(&mut rng, 9, 4);
        ensure!(nn(&r, &r)? == 0.0, "pair {pair}: identical maps give nonzero loss");
        let base = nn(&r, &s)?;
        worst = worst.max((base - tk::nnfm_oracle(&r, &s)).abs());
        let mut shuffled = s.clone();
        shuffled.shuffle(&mut rng);
        ensure!((nn(&r, &shuffled)? - base).abs() <= 1e-12, "pair {pair}: style permutation changed the loss");
        let rescaled: Vec<Vec<f64>> = s.iter().map(|v| { let k = rng.random_range(0.01..100.0); v.iter().map(|x| x * k).collect() }).collect();
        ensure!((nn(&r, &rescaled)? - base).abs() <= 1e-12, "pair {pair}: style rescaling changed the loss");
    }
    ensure!(worst <= 1e-12, "oracle deviation {worst:e}");
    let mut checked = 0;
    while checked < 50 {
        let r = tk::random_vectors(&mut rng, 9, 4);
        let s = tk::random_vectors(&mut rng, 9, 4);
        if match_gap(&r, &s) < 1e-3 {
            continue;
        }
        let style = fmap(&s, 3);
        let out = nnfm_loss(&fmap(&r, 3), &style).map_err(|e| e.to_string())?;
        let numeric = tk::numeric_gradient(&r.concat(), 1e-6, |x| {
            nnfm_loss(&FeatureMap::new(3, 3, 4, x.to_vec(), 0).expect("shape"), &style).expect("valid").loss
        });
        for (a, n) in out.grad.iter().zip(&numeric) {
            ensure!(tk::grad_close(*a, *n), "gradient {a} vs finite difference {n}");
        }
        checked += 1;
    }
    Ok(format!("100 oracle pairs (max dev {worst:.1e}), 50 gradient checks"))
}

// ---------------------------------------------------------------- 6

fn camera_at(c: Vector3<f64>) -> Camera {
    Camera::look_at(c, c + Vector3::z(), -Vector3::y(), 50.0, 8, 8).expect("valid camera")
}

fn c6_grouping() -> Outcome {
    let mut rng = tk::rng(0xC6);
    for set in 0..200 {
        let count = rng.random_range(1..60);
        let n = rng.random_range(1..20);
        let cams: Vec<Camera> = (0..count)
            .map(|_| camera_at(Vector3::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0))))
            .collect();
        let groups = group_views(&cams, n).map_err(|e| e.to_string())?;
        let lists: Vec<Vec<usize>> = groups.iter().map(|g| g.view_indices.clone()).collect();
        ensure!(tk::is_partition(&lists, count), "set {set}: not a partition");
        let sizes_ok = lists.iter().enumerate().all(|(i, g)| if i + 1 < lists.len() { g.len() == n } else { !g.is_empty() && g.len() <= n });
        ensure!(sizes_ok, "set {set}: group sizes wrong");
        ensure!(groups == group_views(&cams, n).map_err(|e| e.to_string())?, "set {set}: not deterministic");
    }
    let mut wins = 0;
    for trial in 0..100 {
        let n = rng.random_range(2..=15);
        let mut centers = Vec::new();
        for offset in [Vector3::zeros(), Vector3::new(100.0, 0.0, 0.0)] {
            for _ in 0..n {
                centers.push(offset + Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
            }
        }
        centers.shuffle(&mut rng);
        let groups = group_centers(&centers, n);
        for g in &groups {
            let side = centers[g.view_indices[0]].x > 50.0;
            ensure!(g.view_indices.iter().all(|&v| (centers[v].x > 50.0) == side), "trial {trial}: a group straddles both clusters");
        }
        let ours = mean_within_group_distance(&centers, &groups);
        let mut perm: Vec<usize> = (0..centers.len()).collect();
        perm.shuffle(&mut rng);
        let random: Vec<ViewGroup> = perm.chunks(n).map(|c| ViewGroup { view_indices: c.to_vec() }).collect();
        wins += (ours <= mean_within_group_distance(&centers, &random)) as usize;
    }
    ensure!(wins == 100, "beat random partitions in only {wins}/100 trials");
    Ok("200 random sets, 100/100 cluster trials".into())
}

// ---------------------------------------------------------------- 7

fn desc(v: Vec<f64>) -> Descriptor {
    Descriptor::new(v, DescriptorSource::Imported)
}

fn c7_metrics() -> Outcome {
    let mut rng = tk::rng(0xC7);
    let ext = FeatureExtractor::new(&ExtractorConfig::default());
    let mut worst_self = 0.0f64;
    for _ in 0..10 {
        let img = tk::random_image(&mut rng, 32, 24);
        worst_self = worst_self.max(cfsd(&img, &img, &ext).map_err(|e| e.to_string())?.abs());
    }
    ensure!(worst_self <= 1e-9, "cfsd(x, x) = {worst_self:e}");

    // Hand-computed: rows of F Fᵀ are [1,0],[0,1] and [4,0],[0,1].
    let e = std::f64::consts::E;
    let (p, q) = ([e / (e + 1.0), 1.0 / (e + 1.0)], [e.powi(4) / (e.powi(4) + 1.0), 1.0 / (e.powi(4) + 1.0)]);
    let expected = (p[0] * (p[0] / q[0]).ln() + p[1] * (p[1] / q[1]).ln()) / 2.0;
    let c = FeatureMap::new(2, 1, 2, vec![1.0, 0.0, 0.0, 1.0], 0).expect("shape");
    let s = FeatureMap::new(2, 1, 2, vec![2.0, 0.0, 0.0, 1.0], 0).expect("shape");
    let got = cfsd_from_features(&c, &s).map_err(|e| e.to_string())?;
    ensure!((got - expected).abs() <= 1e-12, "2x2 CFSD {got} vs {expected}");

    for _ in 0..100 {
        let v = tk::random_vectors(&mut rng, 8, 6);
        let k: f64 = rng.random_range(0.01..100.0);
        let scale = |d: &[f64], k: f64| desc(d.iter().map(|x| x * k).collect());
        let base = csd_score(&desc(v[0].clone()), &desc(v[1].clone())).map_err(|e| e.to_string())?;
        let scaled = csd_score(&scale(&v[0], k), &desc(v[1].clone())).map_err(|e| e.to_string())?;
        ensure!((base - scaled).abs() <= 1e-12, "csd changed under rescaling");
        // Rescale one edit direction by moving its stylized embedding.
        let o: Vec<Descriptor> = v[..4].iter().cloned().map(desc).collect();
        let st: Vec<Descriptor> = v[4..].iter().cloned().map(desc).collect();
        let base = clip_dc(&o, &st).map_err(|e| e.to_string())?.score;
        let mut st2 = st.clone();
        let j = rng.random_range(0..4);
        st2[j] = desc(o[j].values.iter().zip(&st[j].values).map(|(a, b)| a + k * (b - a)).collect());
        let moved = clip_dc(&o, &st2).map_err(|e| e.to_string())?.score;
        ensure!((base - moved).abs() <= 1e-12, "clip-dc changed when one direction was rescaled");
    }
    let frames: Vec<Descriptor> = tk::random_vectors(&mut rng, 6, 5).into_iter().map(desc).collect();
    let r = clip_dc(&frames, &frames).map_err(|e| e.to_string())?;
    ensure!(r.score == 1.0 && r.degenerate_pairs == r.pairs && r.pairs == 5, "degenerate path gave {r:?}");
    Ok(format!("cfsd(x,x) max {worst_self:.1e}, 2x2 oracle dev {:.1e}", (got - expected).abs()))
}

// ---------------------------------------------------------------- 8

fn nvsplat(args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_nvsplat")).args(args).output().map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("nvsplat {} failed: {}", args.join(" "), String::from_utf8_lossy(&out.stderr).trim()));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn key_value(text: &str, key: &str) -> Option<String> {
    text.lines().find_map(|l| l.strip_prefix(key)?.trim_start().strip_prefix('=').map(|v| v.trim().to_string()))
}

/// Every file under `dir` with its bytes, sorted by relative path.
fn snapshot(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).expect("readable dir") {
            let p = e.expect("entry").path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).expect("under dir").to_path_buf(), std::fs::read(&p).expect("readable file")));
            }
        }
    }
    out.sort();
    out
}

fn end_to_end(root: &Path) -> Result<(usize, usize, f64), String> {
    let s = |p: &Path| p.to_str().expect("utf-8 path").to_string();
    let fx = root.join("fixture");
    nvsplat(&["-q", "fixture", "--out", &s(&fx)])?;
    let (cfg, scene, cams, style) = (s(&fx.join("config.toml")), s(&fx.join("scene.ply")), s(&fx.join("sparse")), s(&fx.join("style.png")));
    let styl = root.join("stylized");
    nvsplat(&["-q", "--config", &cfg, "stylize", "--scene", &scene, "--cameras", &cams, "--style", &style, "--n-views", "4", "--out", &s(&styl)])?;
    let pngs = std::fs::read_dir(&styl).map_err(|e| e.to_string())?.filter(|e| e.as_ref().is_ok_and(|e| e.path().extension().is_some_and(|x| x == "png"))).count();
    let groups_txt = std::fs::read_to_string(styl.join("groups.txt")).map_err(|e| e.to_string())?;
    let groups: usize = key_value(&groups_txt, "groups").and_then(|v| v.parse().ok()).ok_or("groups.txt lacks a group count")?;
    let ft = root.join("finetuned");
    nvsplat(&["-q", "--config", &cfg, "finetune", "--scene", &scene, "--cameras", &cams, "--style", &style, "--targets", &s(&styl), "--iterations", "200", "--out", &s(&ft)])?;
    let report = std::fs::read_to_string(ft.join("finetune.txt")).map_err(|e| e.to_string())?;
    let reduction: f64 = key_value(&report, "relative_reduction").and_then(|v| v.parse().ok()).ok_or("report lacks relative_reduction")?;
    Ok((pngs, groups, reduction))
}

fn c8_end_to_end() -> Outcome {
    let start = Instant::now();
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (pngs, groups, reduction) = end_to_end(a.path())?;
    let elapsed = start.elapsed();
    ensure!(pngs == 8, "stylize wrote {pngs} targets, expected 8");
    ensure!(groups == 2, "stylize formed {groups} groups, expected 2");
    ensure!(reduction >= 0.30, "finetuning reduced the loss by {:.1}%, need 30%", 100.0 * reduction);
    ensure!(elapsed < Duration::from_secs(300), "full run took {:.1}s, limit 300s", elapsed.as_secs_f64());
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    end_to_end(b.path())?;
    let (sa, sb) = (snapshot(a.path()), snapshot(b.path()));
    ensure!(sa.len() == sb.len(), "repeat produced {} files vs {}", sb.len(), sa.len());
    for ((pa, da), (pb, db)) in sa.iter().zip(&sb) {
        ensure!(pa == pb && da == db, "repeat differs at {}", pa.display());
    }
    Ok(format!(
        "8 targets in 2 groups, loss reduced {:.1}%, run {:.1}s, {} files byte-identical on repeat",
        100.0 * reduction,
        elapsed.as_secs_f64(),
        sa.len()
    ))
}

// ---------------------------------------------------------------- 9

fn c9_ablation() -> Outcome {
    let f = Fixture::small();
    let base = StylizationRun::new(f.scene, f.cameras, f.style, f.config).map_err(|e| e.to_string())?;
    let one = |v: AblationVariant| run_ablation(&base, &v).map(|mut o| o.remove(0)).map_err(|e| e.to_string());
    let direct = |edit: &dyn Fn(&mut StylizationRun)| -> Result<(StylizationRun, nvsplat_core::pipeline::FinetuneOutcome), String> {
        let mut run = base.clone();
        edit(&mut run);
        dataset_update(&mut run).map_err(|e| e.to_string())?;
        let out = finetune(&run).map_err(|e| e.to_string())?;
        Ok((run, out))
    };

    let full = one(AblationVariant::Full)?;
    let (plain_run, plain) = direct(&|_| {})?;
    ensure!(full.finetune.scene == plain.scene && full.finetune.report == plain.report, "full variant differs from a plain run");

    let no_nnfm = one(AblationVariant::NoNnfm)?;
    let (_, zero_w) = direct(&|r| r.config.losses.nnfm = 0.0)?;
    ensure!(no_nnfm.finetune.scene == zero_w.scene, "no-nnfm differs from a run with nnfm weight 0");
    ensure!(no_nnfm.finetune.scene != plain.scene, "no-nnfm matches the full run");

    let no_nv = one(AblationVariant::NoNvAttention)?;
    ensure!(no_nv.run.groups.iter().all(|g| g.view_indices.len() == 1), "no-nv did not use singleton groups");
    let model = NvDiffusionModel::new(base.config.diffusion.clone()).map_err(|e| e.to_string())?;
    for (v, content) in no_nv.run.contents.iter().enumerate() {
        let alone = stylize_group(&model, &ViewGroup { view_indices: vec![v] }, std::slice::from_ref(content), &base.style, base.config.seed)
            .map_err(|e| e.to_string())?;
        ensure!(alone[0] == no_nv.run.targets[v], "no-nv target {v} differs from single-view stylization");
    }
    ensure!(no_nv.run.targets != plain_run.targets, "no-nv targets match grouped targets");
    let (_, flagged) = direct(&|r| r.config.ablation = AblationFlags { no_nv_attention: true, ..AblationFlags::default() })?;
    ensure!(flagged.scene == no_nv.finetune.scene, "no-nv differs from a directly flagged run");

    let scratch = one(AblationVariant::FromScratch)?;
    let expected = scratch_scene(&scratch.run.cameras, &scratch.run.targets, &scratch.run.config).map_err(|e| e.to_string())?;
    ensure!(scratch.finetune.initial_scene == expected, "from-scratch did not start from the scratch initialization");
    ensure!(scratch.finetune.initial_scene != base.scene, "from-scratch reused the input scene");

    let sweep = run_ablation(&base, &AblationVariant::NSweep(vec![2, 4, 8])).map_err(|e| e.to_string())?;
    ensure!(sweep.len() == 3, "n-sweep produced {} reports", sweep.len());
    Ok("full, no-nnfm, no-nv, from-scratch and n-sweep checked against direct runs".into())
}

// ---------------------------------------------------------------- 10

fn c10_io() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut rng = tk::rng(0xC10);
    for k in 0..50 {
        let n = rng.random_range(1..64);
        let scene = tk::ply_representable_scene(&mut rng, n);
        let path = dir.path().join(format!("scene_{k}.ply"));
        save_ply(&scene, &path).map_err(|e| e.to_string())?;
        let loaded = load_ply(&path).map_err(|e| e.to_string())?;
        ensure!(loaded == scene, "scene {k} did not round-trip bit-exactly");
    }

    let cams: Vec<Camera> = (0..3).map(|_| tk::random_camera(&mut rng, 4.0, 32)).collect();
    let names: Vec<String> = (0..3).map(|i| format!("img_{i}.png")).collect();
    let model = dir.path().join("sparse");
    save_colmap(&model, &cams, &names).map_err(|e| e.to_string())?;
    let (loaded, loaded_names) = load_colmap(&model).map_err(|e| e.to_string())?;
    ensure!(loaded_names == names, "image names changed");
    for (a, b) in cams.iter().zip(&loaded) {
        ensure!((a.fx, a.fy, a.cx, a.cy, a.width, a.height) == (b.fx, b.fy, b.cx, b.cy, b.width, b.height), "intrinsics changed");
        ensure!((a.rotation - b.rotation).abs().max() <= 1e-12 && (a.translation - b.translation).abs().max() <= 1e-12, "pose changed");
    }

    let target = dir.path().join("scene_0.ply");
    let before = std::fs::read(&target).map_err(|e| e.to_string())?;
    let files_before = std::fs::read_dir(dir.path()).map_err(|e| e.to_string())?.count();
    let res = atomic_write(&target, |w| {
        w.write_all(&before[..before.len() / 2])?;
        Err(std::io::Error::other("injected interrupt"))
    });
    ensure!(res.is_err(), "injected failure was swallowed");
    ensure!(std::fs::read(&target).map_err(|e| e.to_string())? == before, "interrupted write changed the file");
    let files_after = std::fs::read_dir(dir.path()).map_err(|e| e.to_string())?.count();
    ensure!(files_after == files_before, "interrupted write left a temporary file");
    Ok("50 PLY scenes bit-exact, 3-view COLMAP equal, interrupt left the old file intact".into())
}
