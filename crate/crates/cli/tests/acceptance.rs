//! Acceptance suite. Every criterion prints one `PASS`/`FAIL` line and is
//! timed alone (tests share a lock so timings are not skewed by each other).

use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use ndarray::{Array3, Array4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use refinegan_core::losses::{compose, fn_mask, fp_mask, LossWeights};
use refinegan_core::metrics::{
    confusion, dice, fnr, fpr, iou, rvd, sensitivity, specificity, surface_distances, voe, ConfusionCounts,
};
use refinegan_core::pbn::{bn_forward, bn_stats, BnParams};
use refinegan_core::synth::{gen_dataset, Split, SynthSpec};
use refinegan_core::volume::default_class_names;
use refinegan_core::{AcquisitionPlane, Volume};
use refinegan_nets::{Checkpoint, NetConfig, NetKind, Network, NormStats, Scalar, Tensor};
use refinegan_train::data::{dataset_net_config, net_config};
use refinegan_train::steps::{discriminator_pass, generator_pass, refinement_pass};
use refinegan_train::*;

static SERIAL: Mutex<()> = Mutex::new(());

fn lock() -> std::sync::MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

/// Writes straight to stderr so the line survives the harness's output capture.
fn log(line: &str) {
    let _ = writeln!(std::io::stderr(), "{line}");
}

fn verdict(n: u32, ok: bool, detail: String) {
    log(&format!("criterion {n} {}: {detail}", if ok { "PASS" } else { "FAIL" }));
    assert!(ok, "criterion {n} failed: {detail}");
}

fn within(t: Instant, limit: Duration) -> (bool, String) {
    let e = t.elapsed();
    (e < limit, format!("{:.2}s of {}s", e.as_secs_f64(), limit.as_secs()))
}

#[test]
fn criterion_1_composition_identity() {
    let _g = lock();
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut failures = 0;
    for _ in 0..1000 {
        let density: f64 = rng.gen_range(0.0..1.0);
        let truth: Vec<f32> = (0..64 * 64).map(|_| f32::from(rng.gen_bool(density))).collect();
        let pred: Vec<f32> = (0..64 * 64).map(|_| f32::from(rng.gen_bool(0.5))).collect();
        let fp = fp_mask(&truth, &pred).unwrap();
        let fn_ = fn_mask(&truth, &pred).unwrap();
        let out = compose(&pred, &fp, &fn_).unwrap();
        let disjoint = fp.iter().zip(&fn_).all(|(a, b)| a * b == 0.0);
        if out != truth || !disjoint {
            failures += 1;
        }
    }
    let (fast, time) = within(t, Duration::from_secs(5));
    verdict(1, failures == 0 && fast, format!("{failures} of 1000 pairs violate the identity; {time}"));
}

#[test]
fn criterion_2_patient_wise_normalization() {
    let _g = lock();
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut stat_err, mut mean_err, mut std_err) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..100 {
        let c = rng.gen_range(1..=5);
        let m = rng.gen_range(2..=400);
        let scale = rng.gen_range(0.1..50.0);
        let offset = rng.gen_range(-100.0..100.0);
        let data: Vec<f64> = (0..m * c).map(|_| offset + scale * rng.gen_range(-1.0..1.0)).collect();
        let stats = bn_stats(&data, c).unwrap();
        // Flat-loop oracle.
        for ch in 0..c {
            let mut sum = 0.0;
            for i in 0..m {
                sum += data[i * c + ch];
            }
            let mean = sum / m as f64;
            let mut ss = 0.0;
            for i in 0..m {
                ss += (data[i * c + ch] - mean).powi(2);
            }
            let var = ss / m as f64;
            stat_err = stat_err.max((stats.mean[ch] - mean).abs()).max((stats.var[ch] - var).abs());
        }
        let params = BnParams {
            gamma: (0..c).map(|_| rng.gen_range(0.1..3.0)).collect(),
            beta: (0..c).map(|_| rng.gen_range(-2.0..2.0)).collect(),
            eps: 1e-5,
        };
        let y = bn_forward(&data, &params, &stats).unwrap();
        let after = bn_stats(&y, c).unwrap();
        for ch in 0..c {
            let s2 = stats.var[ch];
            let expected_std = params.gamma[ch] * s2.sqrt() / (s2 + params.eps).sqrt();
            mean_err = mean_err.max((after.mean[ch] - params.beta[ch]).abs());
            std_err = std_err.max((after.var[ch].sqrt() - expected_std).abs());
        }
    }
    let (fast, time) = within(t, Duration::from_secs(10));
    verdict(
        2,
        stat_err <= 1e-9 && mean_err <= 1e-5 && std_err <= 1e-5 && fast,
        format!("stats err {stat_err:.2e}, mean err {mean_err:.2e}, std err {std_err:.2e}; {time}"),
    );
}

/// Boundary pixels of a 2-D mask: any 4-neighbour outside the mask or grid.
fn oracle_boundary(m: &Array3<bool>) -> Vec<(f64, f64)> {
    let (_, h, w) = m.dim();
    let mut out = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if !m[[0, y, x]] {
                continue;
            }
            let inside = |yy: isize, xx: isize| {
                yy >= 0 && xx >= 0 && (yy as usize) < h && (xx as usize) < w && m[[0, yy as usize, xx as usize]]
            };
            let (yi, xi) = (y as isize, x as isize);
            if !(inside(yi - 1, xi) && inside(yi + 1, xi) && inside(yi, xi - 1) && inside(yi, xi + 1)) {
                out.push((y as f64, x as f64));
            }
        }
    }
    out
}

fn all_pairs(a: &[(f64, f64)], b: &[(f64, f64)], sy: f64, sx: f64) -> Vec<f64> {
    a.iter()
        .map(|&(ya, xa)| {
            b.iter()
                .map(|&(yb, xb)| (((ya - yb) * sy).powi(2) + ((xa - xb) * sx).powi(2)).sqrt())
                .fold(f64::INFINITY, f64::min)
        })
        .collect()
}

fn oracle_percentile(sorted: &[f64], q: f64) -> f64 {
    let rank = q * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let frac = rank - lo as f64;
    if lo + 1 < sorted.len() {
        sorted[lo] * (1.0 - frac) + sorted[lo + 1] * frac
    } else {
        sorted[lo]
    }
}

fn random_blobs(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Array3<u8> {
    let blobs: Vec<(f64, f64, f64)> = (0..rng.gen_range(1..4))
        .map(|_| (rng.gen_range(0.0..h as f64), rng.gen_range(0.0..w as f64), rng.gen_range(1.0..(h.min(w) as f64 / 2.0).max(1.5))))
        .collect();
    let noise = rng.gen_range(0.0..0.1);
    Array3::from_shape_fn((1, h, w), |(_, y, x)| {
        let inside = blobs.iter().any(|&(cy, cx, r)| (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2) <= r * r);
        u8::from(inside ^ rng.gen_bool(noise))
    })
}

#[test]
fn criterion_3_metric_oracles() {
    let _g = lock();
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut count_mismatch, mut dist_err, mut identity_err) = (0, 0.0f64, 0.0f64);
    let mut distance_cases = 0;
    for case in 0..50 {
        let h = rng.gen_range(2..=32);
        let w = rng.gen_range(2..=32);
        let pred = random_blobs(&mut rng, h, w);
        let truth = if case % 10 == 0 { pred.clone() } else { random_blobs(&mut rng, h, w) };
        let cc = confusion(&pred, &truth, 1).unwrap();
        let mut o = ConfusionCounts::default();
        for (&p, &q) in pred.iter().zip(truth.iter()) {
            match (p == 1, q == 1) {
                (true, true) => o.tp += 1,
                (true, false) => o.fp += 1,
                (false, false) => o.tn += 1,
                (false, true) => o.fn_ += 1,
            }
        }
        let ratio = |a: u64, b: u64| if b == 0 { 1.0 } else { a as f64 / b as f64 };
        let checks = [
            (dice(&cc), ratio(2 * o.tp, 2 * o.tp + o.fp + o.fn_)),
            (iou(&cc), ratio(o.tp, o.tp + o.fp + o.fn_)),
            (voe(&cc), 1.0 - ratio(o.tp, o.tp + o.fp + o.fn_)),
            (sensitivity(&cc), ratio(o.tp, o.tp + o.fn_)),
            (specificity(&cc), ratio(o.tn, o.tn + o.fp)),
            (fnr(&cc), 1.0 - ratio(o.tp, o.tp + o.fn_)),
            (fpr(&cc), 1.0 - ratio(o.tn, o.tn + o.fp)),
        ];
        let (pv, tv) = (o.tp + o.fp, o.tp + o.fn_);
        let rvd_ok = match rvd(cc.pred_volume(), cc.truth_volume()) {
            Some(v) if tv > 0 => v == (pv as f64 - tv as f64) / tv as f64,
            Some(v) => pv == 0 && v == 0.0,
            None => tv == 0 && pv > 0,
        };
        if cc != o || !rvd_ok || checks.iter().any(|(a, b)| a != b) {
            count_mismatch += 1;
        }
        let i = iou(&cc);
        identity_err = identity_err
            .max((voe(&cc) - (1.0 - i)).abs())
            .max((dice(&cc) - 2.0 * i / (1.0 + i)).abs())
            .max((sensitivity(&cc) - (1.0 - fnr(&cc))).abs());

        let (sy, sx) = (rng.gen_range(0.5..2.0), rng.gen_range(0.5..2.0));
        let pm = pred.mapv(|v| v == 1);
        let tm = truth.mapv(|v| v == 1);
        let got = surface_distances(&pm, &tm, [1.0, sy, sx]);
        let (bp, bt) = (oracle_boundary(&pm), oracle_boundary(&tm));
        if bp.is_empty() || bt.is_empty() {
            if got.is_ok() {
                dist_err = f64::INFINITY;
            }
            continue;
        }
        distance_cases += 1;
        let got = got.unwrap();
        let mut pooled = all_pairs(&bp, &bt, sy, sx);
        pooled.extend(all_pairs(&bt, &bp, sy, sx));
        let assd = pooled.iter().sum::<f64>() / pooled.len() as f64;
        pooled.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let max = *pooled.last().unwrap();
        let hd95 = oracle_percentile(&pooled, 0.95);
        for (a, b) in [(got.assd, assd), (got.mssd, max), (got.hd_max, max), (got.hd95, hd95)] {
            dist_err = dist_err.max((a - b).abs());
        }
    }
    let (fast, time) = within(t, Duration::from_secs(60));
    verdict(
        3,
        count_mismatch == 0 && dist_err <= 1e-9 && identity_err <= 1e-12 && distance_cases > 0 && fast,
        format!(
            "{count_mismatch} counting mismatches, max distance err {dist_err:.2e} over {distance_cases} pairs, identity err {identity_err:.2e}; {time}"
        ),
    );
}

const FD_STEP: f64 = 1e-5;
/// Gradients smaller than this are compared absolutely.
const REL_FLOOR: f64 = 1e-6;

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_FLOOR)
}

fn random_tensor<T: Scalar>(shape: [usize; 4], rng: &mut ChaCha8Rng) -> Tensor<T> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| T::lit(rng.gen_range(-1.5..1.5))).collect()).unwrap()
}

fn random_one_hot(n: usize, h: usize, w: usize, c: usize, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let mut data = vec![0.0; n * h * w * c];
    for px in data.chunks_exact_mut(c) {
        px[if rng.gen_bool(0.3) { rng.gen_range(1..c) } else { 0 }] = 1.0;
    }
    Tensor::new([n, h, w, c], data).unwrap()
}

/// Compares analytic gradients against central differences of the loss over
/// at least `samples` evenly spaced parameters.
fn gradient_check(
    which: &str,
    samples: usize,
    mut grads_of: impl FnMut() -> Vec<f64>,
    mut params: impl FnMut() -> Vec<f64>,
    mut loss_at: impl FnMut(&[f64]) -> f64,
) -> (usize, f64) {
    let analytic = grads_of();
    let base = params();
    let stride = (base.len() / samples).max(1);
    let mut worst = 0.0f64;
    let mut checked = 0;
    for i in (0..base.len()).step_by(stride) {
        let mut p = base.clone();
        p[i] = base[i] + FD_STEP;
        let up = loss_at(&p);
        p[i] = base[i] - FD_STEP;
        let down = loss_at(&p);
        let fd = (up - down) / (2.0 * FD_STEP);
        worst = worst.max(rel_err(analytic[i], fd));
        checked += 1;
    }
    loss_at(&base);
    log(&format!("  {which}: {checked} of {} parameters, max relative error {worst:.2e}", base.len()));
    (checked, worst)
}

#[test]
fn criterion_4_gradient_check() {
    let _g = lock();
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let cfg = NetConfig {
        height: 8,
        width: 8,
        in_channels: 2,
        class_count: 3,
        depth: 2,
        base_filters: 4,
        recurrent: false,
        noise_input: false,
        seed: 4,
    };
    let x = random_tensor::<f64>([3, 8, 8, 2], &mut rng);
    let y = random_one_hot(3, 8, 8, 3, &mut rng);
    let weights = LossWeights::default();
    let mut results = Vec::new();

    let g = std::cell::RefCell::new(Network::<f64>::generator(&cfg).unwrap());
    let d = std::cell::RefCell::new(Network::<f64>::discriminator(&cfg).unwrap());
    let r = std::cell::RefCell::new(Network::<f64>::refinement(&cfg).unwrap());

    results.push(gradient_check(
        "generator seg_loss",
        250,
        || {
            generator_pass(&mut g.borrow_mut(), &mut d.borrow_mut(), &x, &y, &weights).unwrap();
            g.borrow().flat_grads()
        },
        || g.borrow().flat_params(),
        |p| {
            g.borrow_mut().set_flat_params(p).unwrap();
            generator_pass(&mut g.borrow_mut(), &mut d.borrow_mut(), &x, &y, &weights).unwrap().total
        },
    ));
    results.push(gradient_check(
        "discriminator d_loss",
        250,
        || {
            discriminator_pass(&mut g.borrow_mut(), &mut d.borrow_mut(), &x, &y).unwrap();
            d.borrow().flat_grads()
        },
        || d.borrow().flat_params(),
        |p| {
            d.borrow_mut().set_flat_params(p).unwrap();
            discriminator_pass(&mut g.borrow_mut(), &mut d.borrow_mut(), &x, &y).unwrap()
        },
    ));
    results.push(gradient_check(
        "refinement bce",
        250,
        || {
            refinement_pass(&mut g.borrow_mut(), &mut r.borrow_mut(), &x, &y).unwrap();
            r.borrow().flat_grads()
        },
        || r.borrow().flat_params(),
        |p| {
            r.borrow_mut().set_flat_params(p).unwrap();
            refinement_pass(&mut g.borrow_mut(), &mut r.borrow_mut(), &x, &y).unwrap()
        },
    ));
    let ok = results.iter().all(|&(n, e)| n >= 200 && e < 1e-4);
    let worst = results.iter().map(|r| r.1).fold(0.0, f64::max);
    let (fast, time) = within(t, Duration::from_secs(300));
    verdict(4, ok && fast, format!("max relative error {worst:.2e} (floor {REL_FLOOR:e}); {time}"));
}

#[test]
fn criterion_5_shapes_and_normalization() {
    let _g = lock();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut problems = Vec::new();
    for (h, w, cin, classes, depth, recurrent) in
        [(64, 64, 4, 4, 3, false), (32, 16, 2, 2, 2, true), (16, 48, 1, 3, 4, false), (8, 8, 3, 5, 2, true)]
    {
        let cfg = NetConfig { height: h, width: w, in_channels: cin, class_count: classes, depth, base_filters: 4, recurrent, noise_input: false, seed: 9 };
        for kind in [NetKind::Generator, NetKind::Discriminator, NetKind::Refinement] {
            let mut net = Network::<f32>::build(kind, &cfg).unwrap();
            let x = random_tensor::<f32>([3, h, w, net.input_channels()], &mut rng);
            let out = net.forward(&x, &NormStats::Batch, false).unwrap().output;
            let expect_c = match kind {
                NetKind::Generator => classes,
                NetKind::Discriminator => 1,
                NetKind::Refinement => 2 * classes,
            };
            if out.shape() != [3, h, w, expect_c] {
                problems.push(format!("{kind} {h}x{w}: shape {:?}", out.shape()));
            }
            if out.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
                problems.push(format!("{kind}: output outside [0,1]"));
            }
            if kind == NetKind::Generator {
                let worst = out
                    .data()
                    .chunks_exact(classes)
                    .map(|px| (px.iter().map(|&v| v as f64).sum::<f64>() - 1.0).abs())
                    .fold(0.0, f64::max);
                if worst > 1e-6 {
                    problems.push(format!("softmax sum off by {worst:e}"));
                }
            }
        }
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("nets.ckpt");
        let mut ck = Checkpoint::new(11);
        let nets: Vec<Network<f32>> = [NetKind::Generator, NetKind::Discriminator, NetKind::Refinement]
            .iter()
            .map(|&k| Network::build(k, &NetConfig { seed: 77, ..cfg.clone() }).unwrap())
            .collect();
        for n in &nets {
            ck.insert(n.kind().name(), n);
        }
        ck.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        for n in &nets {
            let mut a = n.clone();
            let mut b = back.restore::<f32>(n.kind().name(), n.kind(), n.config()).unwrap();
            let x = random_tensor::<f32>([2, h, w, a.input_channels()], &mut rng);
            if a.forward(&x, &NormStats::Batch, false).unwrap().output
                != b.forward(&x, &NormStats::Batch, false).unwrap().output
            {
                problems.push(format!("{} checkpoint round trip differs", n.kind()));
            }
        }
    }
    verdict(5, problems.is_empty(), if problems.is_empty() { "all shape, range, softmax and checkpoint checks hold".into() } else { problems.join("; ") });
}

fn smoke_config(seed: u64) -> RunConfig {
    RunConfig::parse(&format!(
        "seed = {seed}\nepochs = 25\nmax_steps = 200\nrefine_epochs = 25\nrefine_max_steps = 200\n\
         depth = 3\nbase_filters = 8\ng_optimizer = rmsprop\nd_optimizer = rmsprop\n\
         g_lr = 0.003\nd_lr = 0.003\nr_lr = 0.005"
    ))
    .unwrap()
}

fn pooled(counts: &[ConfusionCounts]) -> ConfusionCounts {
    counts.iter().fold(ConfusionCounts::default(), |a, c| ConfusionCounts {
        tp: a.tp + c.tp,
        fp: a.fp + c.fp,
        tn: a.tn + c.tn,
        fn_: a.fn_ + c.fn_,
    })
}

#[test]
fn criterion_6_smoke_training() {
    let _g = lock();
    let t = Instant::now();
    let ds = gen_dataset(&SynthSpec::default()).unwrap();
    let plane = AcquisitionPlane::Axial;
    let train: Vec<_> = ds.split(Split::Train).iter().map(|r| PatientSlices::from_record(r, plane).unwrap()).collect();
    let val = ds.split(Split::Val);
    let mut dice_min = f64::INFINITY;
    let mut fnr_not_worse = 0;
    for seed in [7u64, 8, 9, 10, 11] {
        let run = smoke_config(seed);
        let cfg = dataset_net_config(&run, &train).unwrap();
        let mut cgan = train_cgan(&train, &cfg, &run, |_, _| Ok(())).unwrap();
        assert!(cgan.trace.len() <= 200);
        let mut refined = train_refinement(&mut cgan.generator, &train, &cfg, &run, |_, _| Ok(())).unwrap();
        let (mut plain, mut composed) = (Vec::new(), Vec::new());
        for rec in &val {
            let truth = rec.truth.as_ref().unwrap().labels().unwrap();
            let a = predict(&mut cgan.generator, None, &rec.volume, plane).unwrap();
            let b = predict(&mut cgan.generator, Some(&mut refined.refinement), &rec.volume, plane).unwrap();
            plain.push(confusion(a.labels().unwrap(), truth, 1).unwrap());
            composed.push(confusion(b.labels().unwrap(), truth, 1).unwrap());
        }
        let (p, c) = (pooled(&plain), pooled(&composed));
        log(&format!(
            "  seed {seed}: {} cGAN steps, held-out dice {:.4}, fnr cGAN {:.4} -> composed {:.4} (dice {:.4})",
            cgan.trace.len(),
            dice(&p),
            fnr(&p),
            fnr(&c),
            dice(&c)
        ));
        dice_min = dice_min.min(dice(&p));
        if fnr(&c) <= fnr(&p) {
            fnr_not_worse += 1;
        }
    }
    let (fast, time) = within(t, Duration::from_secs(15 * 60));
    verdict(
        6,
        dice_min >= 0.7 && fnr_not_worse >= 3 && fast,
        format!("lowest held-out dice {dice_min:.4} over 5 seeds; composed FNR <= cGAN FNR for {fnr_not_worse}/5 seeds; {time}"),
    );
}

fn pipeline(root: &Path) -> Vec<Vec<u8>> {
    let s = |p: &Path| p.to_str().unwrap().to_string();
    let data = root.join("data");
    let out = root.join("out");
    let common = [
        "--set", "max_steps=12", "--set", "refine_max_steps=8", "--set", "depth=2", "--set", "base_filters=4",
    ];
    let call = |args: Vec<String>| {
        let mut v = vec!["refinegan".to_string()];
        v.extend(args);
        assert_eq!(refinegan_cli::run(v), 0);
    };
    let own = |a: &[&str]| a.iter().map(|s| s.to_string()).collect::<Vec<_>>();
    call(own(&["synth", "--out", &s(&data), "--patients", "5", "--slices", "8", "--height", "16", "--width", "16", "--fraction", "0.05", "--seed", "7"]));
    let mut train = own(&["train", "--data", &s(&data), "--out", &s(&out), "--seed", "7"]);
    train.extend(own(&common));
    call(train);
    let ck = s(&out.join("cgan.ckpt"));
    let mut refine = own(&["refine", "--data", &s(&data), "--out", &s(&out), "--seed", "7", "--checkpoint", &ck]);
    refine.extend(own(&common));
    call(refine);
    let pred = root.join("pred");
    call(own(&["predict", "--data", &s(&data), "--out", &s(&pred), "--checkpoint", &ck, "--refine-checkpoint", &s(&out.join("refine.ckpt"))]));
    call(own(&["evaluate", "--data", &s(&data), "--pred", &s(&pred), "--out", &s(&out)]));
    ["loss.csv", "refine_loss.csv", "metrics.csv"].iter().map(|f| fs::read(out.join(f)).unwrap()).collect()
}

#[test]
fn criterion_7_determinism() {
    let _g = lock();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let first = pipeline(a.path());
    let second = pipeline(b.path());
    let nonempty = first.iter().all(|f| f.iter().filter(|&&c| c == b'\n').count() > 1);
    verdict(
        7,
        first == second && nonempty,
        format!("loss, refinement loss and metric CSVs byte-identical: {}", first == second),
    );
}

#[test]
fn criterion_8_full_volume_prediction() {
    let _g = lock();
    let run = RunConfig::default();
    let cfg = net_config(&run, 240, 240, 4, 4);
    let mut g = Network::<f32>::generator(&cfg).unwrap();
    let mut r = Network::<f32>::refinement(&cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let voxels = Array4::from_shape_simple_fn((155, 240, 240, 4), || rng.gen_range(0.0f32..1000.0));
    let names = ["t1", "t1c", "t2", "flair"].map(String::from).to_vec();
    let volume = Volume::new(voxels, [1.0; 3], names, "brats-sized").unwrap();
    let t = Instant::now();
    let seg = predict(&mut g, Some(&mut r), &volume, AcquisitionPlane::Axial).unwrap();
    let (fast, time) = within(t, Duration::from_secs(600));
    let ok = seg.spatial_shape() == [155, 240, 240] && seg.class_names() == default_class_names(4).as_slice();
    verdict(8, ok && fast, format!("155x240x240x4 volume with refinement predicted in {time}"));
}
