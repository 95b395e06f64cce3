//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! Runs without the libtest harness so the verdict lines always reach the
//! terminal. `VREMD_CRITERIA=2,4` restricts the run to a subset.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vremd::bmd::Dca;
use vremd::config::ModelConfig;
use vremd::data::skeleton::{HEAD_BOTTOM, HEAD_TOP};
use vremd::data::{generate_windows, prepare, render_gt_heatmaps, AugmentConfig, PoseAnnotation, SceneOptions};
use vremd::eval::{compute_map, decode_heatmaps, evaluate, head_segment, EvalConfig};
use vremd::gradcheck::GradCheckConfig;
use vremd::hkme::{human_mask, keypoint_mask};
use vremd::model::Vremd;
use vremd::nn::Init;
use vremd::params::trunc_normal;
use vremd::trainer::{dataset_loss, Checkpoint, TrainConfig, Trainer};
use vremd::verify::{gradient_suite, GradScale};
use vremd::{Graph, ParamStore, Tensor};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

type Check = fn() -> vremd::Result<Verdict>;

fn main() -> ExitCode {
    let only: Option<Vec<usize>> = std::env::var("VREMD_CRITERIA")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let checks: [(&str, Check, Duration); 10] = [
        ("gradient suite", gradient_suite_check, Duration::from_secs(300)),
        ("DCA zero-offset oracle", dca_zero_offset, Duration::from_secs(30)),
        ("mask loop oracles", mask_oracles, Duration::from_secs(30)),
        ("bilinear oracle", bilinear_oracle_check, Duration::from_secs(10)),
        ("zero-motion propagation", zero_motion, Duration::MAX),
        ("overfit convergence", overfit, Duration::from_secs(600)),
        ("ablation ordering", ablation_ordering, Duration::from_secs(45 * 60)),
        ("checkpoint round trip", checkpoint_round_trip, Duration::MAX),
        ("determinism", determinism, Duration::MAX),
        ("eval correctness", eval_correctness, Duration::MAX),
    ];
    let mut failed = 0;
    for (i, (name, check, budget)) in checks.iter().enumerate() {
        let n = i + 1;
        if only.as_ref().is_some_and(|o| !o.contains(&n)) {
            continue;
        }
        let start = Instant::now();
        let v = check().unwrap_or_else(|e| verdict(false, format!("error: {e}")));
        let took = start.elapsed();
        let pass = v.pass && took <= *budget;
        let over = if took > *budget { " (over time budget)" } else { "" };
        println!(
            "criterion {n:>2} {}: {name}: {} [{:.1}s{over}]",
            if pass { "PASS" } else { "FAIL" },
            v.detail,
            took.as_secs_f64()
        );
        failed += usize::from(!pass);
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}

fn gradient_suite_check() -> vremd::Result<Verdict> {
    let runs = gradient_suite(GradScale::Tiny, &[0, 1, 2, 3, 4], &GradCheckConfig::default())?;
    let params = runs[0].params;
    let worst = runs.iter().map(|r| r.report.max_rel_err()).fold(0.0, f64::max);
    let coords: usize = runs.iter().map(|r| r.report.coords_checked()).sum();
    let pass = runs.iter().all(|r| r.passed()) && params <= 50_000;
    Ok(verdict(
        pass,
        format!("{params} parameters, {coords} coordinates over 5 seeds, max rel err {worst:.2e} (< 1e-4)"),
    ))
}

/// Attention of each query over an explicit list of sample vectors.
fn attention_oracle(q: &[f64], wk: &Tensor, wv: &Tensor, set: &[&[f64]]) -> Vec<f64> {
    let d = q.len();
    let proj = |w: &Tensor, v: &[f64]| -> Vec<f64> { (0..d).map(|o| (0..d).map(|i| v[i] * w.at(&[i, o])).sum()).collect() };
    let logits: Vec<f64> = set
        .iter()
        .map(|s| proj(wk, s).iter().zip(q).map(|(a, b)| a * b).sum::<f64>() / (d as f64).sqrt())
        .collect();
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = logits.iter().map(|l| (l - m).exp()).sum();
    let mut out = vec![0.0; d];
    for (s, l) in set.iter().zip(&logits) {
        for (o, v) in out.iter_mut().zip(proj(wv, s)) {
            *o += (l - m).exp() / z * v;
        }
    }
    out
}

fn dca_zero_offset() -> vremd::Result<Verdict> {
    let d = 6;
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    for (gh, gw) in [(3, 4), (8, 6)] {
        for samples in [1, 4] {
            for seed in 0..20 {
                let cfg = ModelConfig {
                    image_height: gh * 4,
                    image_width: gw * 4,
                    patch: 4,
                    heatmap_stride: 2,
                    dim: d,
                    heads: 2,
                    sample_points: samples,
                    ..ModelConfig::default()
                };
                let mut store = ParamStore::new();
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let dca = {
                    let mut init = Init::new(&mut store, &mut rng, 0.3);
                    Dca::new(&mut init.scoped("dca"), &cfg)?
                };
                let n = gh * gw;
                let x = trunc_normal(&[n, d], 1.0, &mut rng);
                let c = trunc_normal(&[n, d], 1.0, &mut rng);
                let g = Graph::new(&store);
                let (out, field) = dca.forward(&g, g.input(x.clone()), g.input(c))?;
                if field.offsets.value().max_abs() != 0.0 {
                    return Ok(verdict(false, "offset head is not zero at initialisation"));
                }
                let q = x.matmul(store.value(dca.w_q.weight))?;
                let (wk, wv) = (store.value(dca.w_k.weight), store.value(dca.w_v.weight));
                for i in 0..n {
                    let own = &x.data()[i * d..(i + 1) * d];
                    let set = vec![own; samples];
                    let want = attention_oracle(&q.data()[i * d..(i + 1) * d], wk, wv, &set);
                    for (k, w) in want.iter().enumerate() {
                        worst = worst.max((out.value().at(&[i, k]) - w).abs());
                    }
                }
                cases += 1;
            }
        }
    }
    Ok(verdict(worst < 1e-10, format!("{cases} cases, max abs diff {worst:.2e} (< 1e-10)")))
}

fn mask_oracles() -> vremd::Result<Verdict> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (t, n, d, k) = (3, 12, 5, 9);
    let g = Graph::detached();
    let mut worst: f64 = 0.0;
    let mut row_err: f64 = 0.0;
    for _ in 0..20 {
        let fbar = trunc_normal(&[t, n, d], 1.0, &mut rng);
        let token = trunc_normal(&[t, 1, d], 1.0, &mut rng);
        let mh = human_mask(g.input(fbar.clone()), g.input(token.clone()))?.value();
        for f in 0..t {
            for i in 0..n {
                let dot: f64 = (0..d).map(|c| fbar.at(&[f, i, c]) * token.at(&[f, 0, c])).sum();
                worst = worst.max((mh.at(&[f, i, 0]) - dot).abs());
            }
        }

        let tokens = trunc_normal(&[k, d], 1.0, &mut rng);
        let feats = trunc_normal(&[t * n, d], 1.0, &mut rng);
        let (map, mask) = keypoint_mask(g.input(tokens.clone()), g.input(feats.clone()))?;
        let (map, mask) = (map.value(), mask.value());
        let mut col = vec![0.0; t * n];
        for r in 0..k {
            let logits: Vec<f64> = (0..t * n)
                .map(|m| (0..d).map(|c| tokens.at(&[r, c]) * feats.at(&[m, c])).sum())
                .collect();
            let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = logits.iter().map(|l| (l - mx).exp()).sum();
            let mut row = 0.0;
            for (m, l) in logits.iter().enumerate() {
                let p = (l - mx).exp() / z;
                worst = worst.max((map.at(&[r, m]) - p).abs());
                col[m] += p;
                row += map.at(&[r, m]);
            }
            row_err = row_err.max((row - 1.0).abs());
        }
        for (m, c) in col.iter().enumerate() {
            worst = worst.max((mask.at(&[m, 0]) - c).abs());
        }
    }

    // Keypoint mask mass of the full model on a real window.
    let cfg = ModelConfig::default();
    let (model, store) = Vremd::new(cfg.clone(), 0)?;
    let w = &generate_windows(1, 4, &SceneOptions::default())?[0];
    let sample = prepare(w, &cfg, 1.0, None)?;
    let g = Graph::new(&store);
    let out = model.forward(&g, &sample.frames)?;
    let masks = &out.hkme.as_ref().expect("full model").masks;
    let mass = masks.keypoint.value().sum();
    let expected = (3 * cfg.joints) as f64;
    let model_rows = masks.confidence.value();
    let cols = model_rows.shape()[1];
    for r in 0..model_rows.shape()[0] {
        let s: f64 = model_rows.data()[r * cols..(r + 1) * cols].iter().sum();
        row_err = row_err.max((s - 1.0).abs());
    }
    let pass = worst < 1e-10 && row_err < 1e-6 && (mass - expected).abs() < 1e-4;
    Ok(verdict(
        pass,
        format!("loop diff {worst:.2e} (< 1e-10), row sum err {row_err:.2e} (< 1e-6), mask mass {mass:.6} vs {expected}"),
    ))
}

fn bilinear_oracle_check() -> vremd::Result<Verdict> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let g = Graph::detached();
    let mut worst: f64 = 0.0;
    let mut node_exact = true;
    for _ in 0..1000 {
        let (h, w, c) = (rng.random_range(2..9), rng.random_range(2..9), rng.random_range(1..5));
        let grid = trunc_normal(&[h, w, c], 1.0, &mut rng);
        let px = rng.random_range(-1.0..w as f64);
        let py = rng.random_range(-1.0..h as f64);
        let (nx, ny) = (rng.random_range(0..w), rng.random_range(0..h));
        let pts = Tensor::new(vec![2, 2], vec![px, py, nx as f64, ny as f64])?;
        let got = g.input(grid.clone()).bilinear_sample(g.input(pts))?.value();

        let cx = px.clamp(0.0, (w - 1) as f64);
        let cy = py.clamp(0.0, (h - 1) as f64);
        let x0 = (cx.floor() as usize).min(w - 2);
        let y0 = (cy.floor() as usize).min(h - 2);
        let (fx, fy) = (cx - x0 as f64, cy - y0 as f64);
        for k in 0..c {
            let v = |yy: usize, xx: usize| grid.at(&[yy, xx, k]);
            let want = (1.0 - fx) * (1.0 - fy) * v(y0, x0)
                + fx * (1.0 - fy) * v(y0, x0 + 1)
                + (1.0 - fx) * fy * v(y0 + 1, x0)
                + fx * fy * v(y0 + 1, x0 + 1);
            worst = worst.max((got.at(&[0, k]) - want).abs());
            node_exact &= got.at(&[1, k]) == v(ny, nx);
        }
    }
    Ok(verdict(
        worst < 1e-12 && node_exact,
        format!("1000 pairs, max abs diff {worst:.2e} (< 1e-12), grid nodes exact: {node_exact}"),
    ))
}

fn zero_motion() -> vremd::Result<Verdict> {
    let cfg = ModelConfig::default();
    let (model, mut store) = Vremd::new(cfg.clone(), 2)?;
    let names: Vec<String> = store
        .names()
        .into_iter()
        .filter(|n| (n.starts_with("bmd.") || n.starts_with("heads.motion")) && (n.ends_with("bias") || n.ends_with("beta")))
        .map(str::to_string)
        .collect();
    for n in &names {
        let shape = store.value(store.id(n).unwrap()).shape().to_vec();
        store.set(n, Tensor::zeros(&shape))?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let frame = trunc_normal(&[1, 1, cfg.image_height, cfg.image_width], 1.0, &mut rng);
    let mut data = Vec::new();
    for _ in 0..3 {
        data.extend_from_slice(frame.data());
    }
    let frames = Tensor::new(vec![3, 1, cfg.image_height, cfg.image_width], data)?;
    let g = Graph::new(&store);
    let out = model.forward(&g, &frames)?;
    let m = out.bmd.as_ref().expect("full model").motion.value();
    let (ht, hk) = (out.heatmaps.value(), out.pose.value());
    let m_zero = m.data().iter().all(|&v| v == 0.0);
    let half = ht.data().iter().zip(hk.data()).all(|(t, k)| *t == 0.5 * k);
    Ok(verdict(
        m_zero && half && hk.max_abs() > 0.0,
        format!("{} biases zeroed, M == 0: {m_zero}, H_t == 0.5 H_k: {half}", names.len()),
    ))
}

fn overfit() -> vremd::Result<Verdict> {
    let windows = generate_windows(4, 0, &SceneOptions::default())?;
    let mut t = Trainer::new(TrainConfig::default())?;
    let samples = t.prepare_all(&windows)?;
    let before = dataset_loss(&t.model, &t.store, &samples)?;
    t.run(&windows, |_| {})?;
    let after = dataset_loss(&t.model, &t.store, &samples)?;
    let map = evaluate(&t.model, &t.store, &windows, &EvalConfig::default())?.mean_ap;
    let ratio = after / before;
    Ok(verdict(
        ratio <= 0.1 && map >= 90.0,
        format!("loss {before:.6} -> {after:.6} (ratio {ratio:.4} <= 0.1), mAP {map:.2} (>= 90)"),
    ))
}

fn ablation_ordering() -> vremd::Result<Verdict> {
    let opts = SceneOptions {
        distractors: 2,
        background_motion: true,
        ..SceneOptions::default()
    };
    let test = generate_windows(32, 1000, &opts)?;
    let mut means = Vec::new();
    for (masks, bmd) in [(true, true), (false, true), (true, false), (false, false)] {
        let mut total = 0.0;
        for seed in 0..3 {
            let train = generate_windows(64, 100 + seed, &opts)?;
            let mut cfg = TrainConfig {
                seed,
                ..TrainConfig::default()
            };
            cfg.model.ablation.human_mask = masks;
            cfg.model.ablation.keypoint_mask = masks;
            cfg.model.ablation.bmd = bmd;
            let mut t = Trainer::new(cfg)?;
            t.run(&train, |_| {})?;
            total += evaluate(&t.model, &t.store, &test, &EvalConfig::default())?.mean_ap;
        }
        means.push(total / 3.0);
    }
    let [full, no_masks, no_bmd, base] = [means[0], means[1], means[2], means[3]];
    let pass = full >= no_masks && full >= no_bmd && no_masks >= base && no_bmd >= base;
    Ok(verdict(
        pass,
        format!("full {full:.2}, no masks {no_masks:.2}, no BMD {no_bmd:.2}, baseline {base:.2}"),
    ))
}

fn checkpoint_round_trip() -> vremd::Result<Verdict> {
    let windows = generate_windows(4, 8, &SceneOptions::default())?;
    let mut t = Trainer::new(TrainConfig {
        steps: 5,
        ..TrainConfig::default()
    })?;
    t.run(&windows, |_| {})?;
    let dir = tempfile::tempdir().map_err(|e| vremd::Error::Config(e.to_string()))?;
    let path = dir.path().join("model.vrmd");
    t.checkpoint().save(&path)?;
    let (model, store) = Checkpoint::load(&path)?.restore()?;
    let cfg = &model.cfg;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut identical = 0;
    for _ in 0..10 {
        let frames = trunc_normal(&[3, 1, cfg.image_height, cfg.image_width], 1.0, &mut rng);
        let a = t.model.predict(&t.store, &frames)?;
        let b = model.predict(&store, &frames)?;
        identical += usize::from(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
    Ok(verdict(identical == 10, format!("{identical}/10 random inputs bit-identical")))
}

fn determinism() -> vremd::Result<Verdict> {
    let run = || -> vremd::Result<(Vec<u64>, String, u64)> {
        let opts = SceneOptions {
            distractors: 1,
            background_motion: true,
            ..SceneOptions::default()
        };
        let windows = generate_windows(6, 21, &opts)?;
        let mut t = Trainer::new(TrainConfig {
            steps: 12,
            seed: 3,
            augment: Some(AugmentConfig::default()),
            ..TrainConfig::default()
        })?;
        t.run(&windows, |_| {})?;
        let r = evaluate(&t.model, &t.store, &windows, &EvalConfig::default())?;
        Ok((t.log.iter().map(|s| s.loss.to_bits()).collect(), r.to_csv(), r.mean_ap.to_bits()))
    };
    let (a, b) = (run()?, run()?);
    Ok(verdict(
        a == b,
        format!("{} loss values and the eval report identical across two runs: {}", a.0.len(), a == b),
    ))
}

fn skeleton(offset: (f64, f64)) -> PoseAnnotation {
    let mut joints: Vec<(f64, f64)> = (0..15).map(|j| (offset.0 + j as f64, offset.1 + 2.0 * j as f64)).collect();
    joints[HEAD_BOTTOM] = offset;
    joints[HEAD_TOP] = (offset.0, offset.1 + 10.0);
    PoseAnnotation {
        joints,
        visible: vec![true; 15],
        person_id: 0,
        frame_index: 0,
    }
}

fn eval_correctness() -> vremd::Result<Verdict> {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let pts: Vec<(f64, f64)> = (0..15)
            .map(|_| (rng.random_range(0.0..11.0), rng.random_range(0.0..15.0)))
            .collect();
        let hm = render_gt_heatmaps(&pts, &[true; 15], (16, 12), 1.0);
        for (p, q) in decode_heatmaps(&hm).iter().zip(&pts) {
            worst = worst.max((p.x - q.0).abs()).max((p.y - q.1).abs());
        }
    }

    // Head segment 10, threshold 5: half the people are 1 px off, half 8 px.
    let gts: Vec<_> = (0..4).map(|i| skeleton((10.0 * i as f64, 0.0))).collect();
    let preds: Vec<_> = gts
        .iter()
        .enumerate()
        .map(|(i, g)| {
            let dx = if i % 2 == 0 { 1.0 } else { 8.0 };
            PoseAnnotation {
                joints: g.joints.iter().map(|p| (p.0 + dx, p.1)).collect(),
                ..g.clone()
            }
        })
        .collect();
    let r = compute_map(&preds, &gts, &EvalConfig::default(), head_segment)?;
    let fifty = r.per_joint_ap.values().all(|&v| v == 50.0) && r.mean_ap == 50.0;
    Ok(verdict(
        worst <= 0.5 && fifty,
        format!("200 annotations, worst decode error {worst:.3} px (<= 0.5); half-correct fixture all 50.0: {fifty}"),
    ))
}
