use std::fs;
use std::process::{Command, ExitCode};
use std::time::Instant;

use provgrad::config::ExperimentConfig;
use provgrad::data::{generate_image_dataset, Split, ToyDatasetSpec};
use provgrad::experiment::run_experiment;
use provgrad::guidance::{input_gradient, provenance_loss_hard, provenance_loss_soft, MaskMode};
use provgrad::models::{batch, Architecture, ModelSpec, ToyModel};
use provgrad::synthesis::{cutmix, diff_mask, one_hot, otsu_threshold, simulated_edit, Label};
use provgrad::tensor::{finite_difference_oracle, Tape, Tensor};
use provgrad::train::{step_gradients, MaskPerturbation, MetricsReport, SynthesisMode, TrainConfig, TrainData};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn random_tensor(rng: &mut impl Rng, shape: Vec<usize>, scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-scale..scale)).collect()).unwrap()
}

fn random_model(rng: &mut impl Rng) -> ToyModel {
    let classes = rng.gen_range(2..=4);
    let (architecture, input_shape) = match rng.gen_range(0..4) {
        0 => (Architecture::Linear, vec![rng.gen_range(2..=6), rng.gen_range(2..=6), rng.gen_range(1..=2)]),
        1 => (
            Architecture::Mlp {
                hidden: (0..rng.gen_range(1..=2)).map(|_| rng.gen_range(2..=6)).collect(),
            },
            vec![rng.gen_range(2..=5), rng.gen_range(2..=5), rng.gen_range(1..=2)],
        ),
        2 => (
            Architecture::TinyConv {
                channels: (0..rng.gen_range(1..=2)).map(|_| rng.gen_range(1..=3)).collect(),
            },
            vec![2 * rng.gen_range(1..=3), 2 * rng.gen_range(1..=3), rng.gen_range(1..=2)],
        ),
        _ => (
            Architecture::Skeleton { embed: rng.gen_range(1..=3) },
            vec![2, rng.gen_range(1..=3), rng.gen_range(2..=4), rng.gen_range(2..=3)],
        ),
    };
    let spec = ModelSpec {
        architecture,
        input_shape,
        num_classes: classes,
    };
    let mut model = ToyModel::init(spec, rng).unwrap();
    let params = model.params().iter().map(|p| random_tensor(rng, p.shape().to_vec(), 0.8)).collect();
    model.set_params(params);
    model
}

fn logit(model: &ToyModel, x: &Tensor, class: usize) -> Result<f64, provgrad::tensor::TensorError> {
    let out = model.predict(&batch(&[x])?)?;
    Ok(out.data()[class])
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut bad = 0;
    let mut checked = 0;
    for _ in 0..100 {
        let model = random_model(&mut rng);
        let x = random_tensor(&mut rng, model.spec().input_shape.clone(), 1.0);
        let class = rng.gen_range(0..model.num_classes());
        let g = input_gradient(&model, &x, class).unwrap();
        let fd = finite_difference_oracle(|x| logit(&model, x, class), &x, 1e-6).unwrap();
        for (a, b) in g.data().iter().zip(fd.data()) {
            checked += 1;
            if (a - b).abs() > (1e-3 * b.abs()).max(1e-5) {
                bad += 1;
            }
        }
    }

    let spec = ToyDatasetSpec {
        image_size: [8, 8],
        patch_size: 3,
        patch_jitter: 1,
        train_size: 16,
        test_size: 8,
        noise_std: 0.3,
        seed: 5,
        ..Default::default()
    };
    let data = TrainData::Image(generate_image_dataset(&spec, Split::Train).unwrap());
    let cfg = TrainConfig {
        synthesis: SynthesisMode::Cutmix,
        alpha: 0.5,
        mixing_probability: 1.0,
        batch_size: 8,
        seed: 3,
        ..Default::default()
    };
    let model_spec = ModelSpec {
        architecture: Architecture::Mlp { hidden: vec![5] },
        input_shape: vec![8, 8, 1],
        num_classes: 2,
    };
    let mut model = ToyModel::init(model_spec, &mut rng).unwrap();
    let params: Vec<Tensor> = model.params().iter().map(|p| random_tensor(&mut rng, p.shape().to_vec(), 0.5)).collect();
    model.set_params(params.clone());
    let indices: Vec<usize> = (0..8).collect();
    let analytic = step_gradients(&model, &data, &cfg, &indices, 0).unwrap();
    let mut diff2 = 0.0;
    let mut norm2 = 0.0;
    for i in 0..params.len() {
        let fd = finite_difference_oracle(
            |p| {
                let mut m = model.clone();
                let mut ps = params.clone();
                ps[i] = p.clone();
                m.set_params(ps);
                step_gradients(&m, &data, &cfg, &indices, 0).map(|s| s.l_total)
            },
            &params[i],
            1e-5,
        )
        .unwrap();
        for (a, b) in analytic.grads[i].data().iter().zip(fd.data()) {
            diff2 += (a - b).powi(2);
            norm2 += b * b;
        }
    }
    let rel = diff2.sqrt() / norm2.sqrt();
    let secs = start.elapsed().as_secs_f64();
    outcome(
        bad == 0 && rel <= 1e-3 && analytic.l_pg.is_some() && secs < 120.0,
        format!(
            "input-gradient mismatches {bad}/{checked}; L_total parameter gradient rel err {rel:.2e} (L_PG {:.4}); {secs:.1}s",
            analytic.l_pg.unwrap_or(f64::NAN)
        ),
    )
}

fn scalar_loss(f: impl FnOnce(&Tape) -> f64) -> f64 {
    f(&Tape::new())
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut failures = 0;
    for _ in 0..1000 {
        let shape = vec![rng.gen_range(1..=12), rng.gen_range(1..=12), rng.gen_range(1..=3)];
        let n = rng.gen_range(2..=5);
        let (ca, cb) = (rng.gen_range(0..n), rng.gen_range(0..n));
        let xa = random_tensor(&mut rng, shape.clone(), 1.0);
        let xb = xa.map(|v| v + 2.5);
        let s = cutmix(&xa, &one_hot(ca, n), &xb, &one_hot(cb, n), &mut rng).unwrap();
        let (ma, mb) = (&s.masks[0], &s.masks[1]);
        let c = shape[2];
        let mut ok = s.classes == [ca, cb] && ma.shape() == [shape[0], shape[1]];
        for p in 0..shape[0] * shape[1] {
            let sum = ma.values().data()[p] + mb.values().data()[p];
            let src = if ma.get(p) { &xa } else { &xb };
            ok &= sum == 1.0 && s.x.data()[p * c..(p + 1) * c] == src.data()[p * c..(p + 1) * c];
        }
        let lambda = ma.fraction();
        ok &= s.lambda == Some(lambda);
        if let Label::Soft(y) = &s.label {
            let mut expect = vec![0.0; n];
            expect[ca] += lambda;
            expect[cb] += 1.0 - lambda;
            ok &= y.iter().zip(&expect).all(|(a, b)| (a - b).abs() < 1e-15);
        } else {
            ok = false;
        }
        if !ok {
            failures += 1;
        }
    }
    let soft = scalar_loss(|t| {
        let ga = t.constant(Tensor::from_vec(vec![3.0, 2.0]));
        let gb = t.constant(Tensor::from_vec(vec![5.0, 7.0]));
        provenance_loss_soft(&ga, &gb, &Tensor::from_vec(vec![1.0, 0.0])).unwrap().value().item()
    });
    let hard = scalar_loss(|t| {
        let g = t.constant(Tensor::from_vec(vec![4.0, 1.0, 2.0]));
        provenance_loss_hard(&g, &Tensor::from_vec(vec![1.0, 0.0, 0.0])).unwrap().value().item()
    });
    outcome(
        failures == 0 && soft == 29.0 && hard == 5.0,
        format!("cutmix provenance failures {failures}/1000; soft example {soft}, hard example {hard}"),
    )
}

/// Between-class variance at every interior edge of a freshly binned
/// histogram; returns the best value and the edges that attain it.
fn exhaustive_otsu(values: &[f64], bins: usize) -> (Vec<f64>, Vec<f64>) {
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for &v in values {
        counts[(((v - lo) / width).floor() as usize).min(bins - 1)] += 1;
    }
    let center = |i: usize| lo + (i as f64 + 0.5) * width;
    let total = values.len() as f64;
    let mut scores = Vec::new();
    let mut edges = Vec::new();
    for k in 1..bins {
        let (below, above) = counts.split_at(k);
        let n0: usize = below.iter().sum();
        let n1: usize = above.iter().sum();
        let score = if n0 == 0 || n1 == 0 {
            0.0
        } else {
            let m0 = below.iter().enumerate().map(|(i, &c)| c as f64 * center(i)).sum::<f64>() / n0 as f64;
            let m1 = above.iter().enumerate().map(|(i, &c)| c as f64 * center(i + k)).sum::<f64>() / n1 as f64;
            (n0 as f64 / total) * (n1 as f64 / total) * (m0 - m1).powi(2)
        };
        scores.push(score);
        edges.push(lo + k as f64 * width);
    }
    (scores, edges)
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut mismatches = 0;
    let mut exact_edge = 0;
    for case in 0..200 {
        let bins = [2, 3, 8, 16, 64, 256][case % 6];
        let n = rng.gen_range(2..=400);
        let modes: Vec<(f64, f64)> = (0..rng.gen_range(1..=3)).map(|_| (rng.gen_range(-5.0..5.0), rng.gen_range(0.05..2.0))).collect();
        let mut values: Vec<f64> = (0..n)
            .map(|_| {
                let (mu, sd) = modes[rng.gen_range(0..modes.len())];
                if case % 4 == 0 {
                    (mu + sd * rng.gen_range(-3.0..3.0)).round()
                } else {
                    mu + sd * rng.gen_range(-3.0..3.0)
                }
            })
            .collect();
        values[0] = -6.0;
        values[1] = 6.0;
        let t = otsu_threshold(&values, bins).unwrap();
        let (scores, edges) = exhaustive_otsu(&values, bins);
        let best = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let first_best = edges[scores.iter().position(|&s| s == best).unwrap()];
        if t == first_best {
            exact_edge += 1;
        }
        let k = edges.iter().position(|&e| e == t);
        let attains = k.is_some_and(|k| best - scores[k] <= 1e-12 * best.abs());
        if !attains {
            mismatches += 1;
        }
    }
    outcome(
        mismatches == 0,
        format!("mismatches {mismatches}/200 (first maximizing edge identical in {exact_edge}/200)"),
    )
}

fn criterion_4() -> Outcome {
    let spec = ToyDatasetSpec {
        train_size: 100,
        seed: 44,
        ..Default::default()
    };
    let ds = generate_image_dataset(&spec, Split::Train).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut total = 0.0;
    let mut worst = f64::INFINITY;
    for i in 0..100 {
        let amplitude = rng.gen_range(0.5..=1.5);
        let (edited, region) = simulated_edit(&ds.images[i], &ds.targets[i], amplitude, &mut rng).unwrap();
        let recovered = diff_mask(&ds.images[i], &edited).unwrap();
        let iou = recovered.mask.complement().iou(&region);
        total += iou;
        worst = worst.min(iou);
    }
    let mean = total / 100.0;
    outcome(mean >= 0.95, format!("mean IoU {mean:.4} (min {worst:.4}) over 100 edits, amplitude in [0.5, 1.5]"))
}

fn run(cfg: &ExperimentConfig) -> MetricsReport {
    run_experiment(&cfg.clone().resolve().unwrap()).unwrap().1
}

fn base(seed: u64, alpha: f64, mask_mode: MaskMode) -> ExperimentConfig {
    let mut cfg = ExperimentConfig {
        seed,
        ..Default::default()
    };
    cfg.train.alpha = alpha;
    cfg.train.mask_mode = mask_mode;
    cfg
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn sample_std(v: &[f64]) -> f64 {
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];
const ALPHAS: [f64; 5] = [0.01, 0.03, 0.05, 0.07, 0.09];

struct AlphaGrid {
    /// `[alpha index][seed]`, alpha index 0 is α = 0.
    reports: Vec<Vec<MetricsReport>>,
}

impl AlphaGrid {
    fn new() -> Self {
        let reports = std::iter::once(0.0)
            .chain(ALPHAS)
            .map(|a| SEEDS.iter().map(|&s| run(&base(s, a, MaskMode::Provenance))).collect())
            .collect();
        Self { reports }
    }

    fn final_metric(&self, alpha: usize, seed: usize, f: impl Fn(&provgrad::eval::Evaluation) -> f64) -> f64 {
        f(&self.reports[alpha][seed].final_epoch().test)
    }
}

fn criterion_5(grid: &AlphaGrid) -> Outcome {
    let start = Instant::now();
    let wga = |e: &provgrad::eval::Evaluation| e.worst_group_accuracy;
    let mass = |e: &provgrad::eval::Evaluation| e.grad_mass.mean;
    let score = |a: usize| {
        let w: Vec<f64> = (0..SEEDS.len()).map(|s| grid.final_metric(a, s, wga)).collect();
        let m: Vec<f64> = (0..SEEDS.len()).map(|s| grid.final_metric(a, s, mass)).collect();
        (mean(&w), mean(&m))
    };
    let best = (1..=ALPHAS.len())
        .max_by(|&a, &b| score(a).partial_cmp(&score(b)).unwrap().then(b.cmp(&a)))
        .unwrap();
    let alpha = ALPHAS[best - 1];
    let random: Vec<MetricsReport> = SEEDS.iter().map(|&s| run(&base(s, alpha, MaskMode::Random))).collect();
    let mut holds = 0;
    let mut rows = Vec::new();
    for s in 0..SEEDS.len() {
        let (gw, gm) = (grid.final_metric(best, s, wga), grid.final_metric(best, s, mass));
        let (zw, zm) = (grid.final_metric(0, s, wga), grid.final_metric(0, s, mass));
        let (rw, rm) = (wga(&random[s].final_epoch().test), mass(&random[s].final_epoch().test));
        if gm > zm && gm > rm && gw > zw && gw > rw {
            holds += 1;
        }
        rows.push(format!("s{s} mass {gm:.2}/{zm:.2}/{rm:.2} wga {gw:.2}/{zw:.2}/{rw:.2}"));
    }
    outcome(
        holds >= 4,
        format!(
            "best alpha {alpha}; ordering holds on {holds}/5 seeds [guided/alpha0/random: {}]; {:.1}s",
            rows.join("; "),
            start.elapsed().as_secs_f64()
        ),
    )
}

fn criterion_6(grid: &AlphaGrid) -> Outcome {
    let box_mean = |a: usize| {
        mean(
            &(0..SEEDS.len())
                .map(|s| grid.final_metric(a, s, |e| e.box_accuracy.as_ref().unwrap().mean))
                .collect::<Vec<_>>(),
        )
    };
    let baseline = box_mean(0);
    let curve: Vec<f64> = (1..=ALPHAS.len()).map(box_mean).collect();
    let above = curve.iter().all(|&b| b > baseline);
    let mut spikes = Vec::new();
    for i in 0..curve.len() {
        let others: Vec<f64> = curve.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, &v)| v).collect();
        if (curve[i] - mean(&others)).abs() > 2.0 * sample_std(&others) {
            spikes.push(ALPHAS[i]);
        }
    }
    let shown: Vec<String> = curve.iter().zip(ALPHAS).map(|(b, a)| format!("{a}:{b:.3}")).collect();
    outcome(
        above && spikes.is_empty(),
        format!("alpha=0 box mean {baseline:.3}; guided [{}]; spikes at {spikes:?}", shown.join(", ")),
    )
}

fn criterion_7() -> Outcome {
    let start = Instant::now();
    let accuracy = |delta: f64| {
        let accs: Vec<f64> = SEEDS
            .iter()
            .map(|&s| {
                let mut cfg = base(s, 0.05, MaskMode::Provenance);
                cfg.data.image_size = [48, 48];
                cfg.data.patch_size = 32;
                cfg.data.patch_amplitude = 0.8;
                cfg.data.background_amplitude = 1.0;
                cfg.train.mask_perturbation = MaskPerturbation::from_signed(delta);
                run(&cfg).final_epoch().test.accuracy
            })
            .collect();
        mean(&accs)
    };
    let reference = accuracy(0.0);
    let mut worst_drop = f64::NEG_INFINITY;
    let mut parts = Vec::new();
    for delta in [0.1, -0.1, 0.3, -0.3] {
        let acc = accuracy(delta);
        let drop = reference - acc;
        worst_drop = worst_drop.max(drop);
        parts.push(format!("{delta:+}:{acc:.4}"));
    }
    outcome(
        worst_drop <= 0.02,
        format!(
            "48x48 edit task, alpha 0.05: unperturbed {reference:.4}, perturbed [{}], worst drop {:.2} pp; {:.1}s",
            parts.join(", "),
            100.0 * worst_drop,
            start.elapsed().as_secs_f64()
        ),
    )
}

fn criterion_8(grid: &AlphaGrid) -> Outcome {
    let report = &grid.reports[3][0];
    let (first, last) = (report.epochs[0].l_pg, report.final_epoch().l_pg);
    outcome(
        last < 0.5 * first,
        format!("alpha 0.05 seed 0: L_PG epoch 0 {first:.4}, final {last:.4} (ratio {:.3})", last / first),
    )
}

fn criterion_9() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let mut csvs = Vec::new();
    for name in ["first", "second"] {
        let out = tmp.path().join(name);
        let status = Command::new(env!("CARGO_BIN_EXE_provgrad"))
            .args(["train", "--seed", "7", "--out", out.to_str().unwrap()])
            .env_remove("PROVGRAD_OUT_ROOT")
            .output()
            .unwrap()
            .status;
        assert!(status.success());
        csvs.push(fs::read(out.join("metrics.csv")).unwrap());
    }
    outcome(
        csvs[0] == csvs[1] && !csvs[0].is_empty(),
        format!("metrics.csv {} bytes, identical: {}", csvs[0].len(), csvs[0] == csvs[1]),
    )
}

fn main() -> ExitCode {
    if std::env::args().any(|a| a == "--list") {
        return ExitCode::SUCCESS;
    }
    let grid = AlphaGrid::new();
    let results = [
        criterion_1(),
        criterion_2(),
        criterion_3(),
        criterion_4(),
        criterion_5(&grid),
        criterion_6(&grid),
        criterion_7(),
        criterion_8(&grid),
        criterion_9(),
    ];
    let mut all = true;
    for (i, r) in results.iter().enumerate() {
        all &= r.pass;
        println!("criterion {}: {} | {}", i + 1, if r.pass { "PASS" } else { "FAIL" }, r.detail);
    }
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
