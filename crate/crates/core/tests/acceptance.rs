//! End-to-end acceptance checks. Each criterion is one test; every test
//! prints a single `criterion NN ... PASS|FAIL` line with the measured
//! numbers (visible with `--nocapture`) before asserting.

use std::path::Path;
use std::process::Command as Proc;
use std::sync::OnceLock;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use specsense::detect;
use specsense::featex::{self, Dataset, FeatureConfig, Normalization};
use specsense::fed::{self, ExperimentReport, FedConfig};
use specsense::harness::{self, BaselineSection, FedsimSection, Scenario};
use specsense::iqgen::{self, GmskParams, SynthConfig};
use specsense::learn::{self, CoefVector, Example, ModelKind, ModelShape};
use specsense::pipeline;

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

fn report(n: u32, name: &str, pass: bool, detail: String, t0: Instant) {
    let line = format!(
        "criterion {n:02} {name:<28} {} ({detail}; {:.1}s)",
        if pass { "PASS" } else { "FAIL" },
        t0.elapsed().as_secs_f64()
    );
    // straight to the handle so libtest's capture doesn't swallow passing lines
    use std::io::Write;
    let _ = writeln!(std::io::stderr(), "{line}");
}

/// Default desk-scale dataset for one master seed.
fn dataset(seed: u64) -> &'static Dataset {
    static CELLS: [OnceLock<Dataset>; 5] = [const { OnceLock::new() }; 5];
    CELLS[seed as usize].get_or_init(|| {
        let features = FeatureConfig::default();
        let synth = pipeline::aligned_synth(
            SynthConfig {
                master_seed: seed,
                ..SynthConfig::default()
            },
            &features,
        );
        pipeline::build_dataset(&synth, &features).expect("default dataset builds")
    })
}

fn scenario_config(seed: u64, faulty: &[usize]) -> FedConfig {
    let scenario = Scenario {
        name: None,
        model: ModelKind::Logistic,
        faulty_ids: faulty.iter().copied().collect(),
    };
    FedsimSection::default().fed_config(seed, &scenario)
}

/// Default-config run for `seed` with `n_faulty` faulty sensors (ids 0..n).
fn run(seed: u64, n_faulty: usize) -> &'static ExperimentReport {
    static CELLS: [[OnceLock<ExperimentReport>; 3]; 5] =
        [const { [const { OnceLock::new() }; 3] }; 5];
    CELLS[seed as usize][n_faulty].get_or_init(|| {
        let faulty: Vec<usize> = (0..n_faulty).collect();
        fed::run_experiment(&dataset(seed).rows, &scenario_config(seed, &faulty))
            .expect("experiment runs")
    })
}

fn gap(r: &ExperimentReport) -> f64 {
    r.final_accuracy.mean_fed - r.final_accuracy.mean_shadow
}

// -------------------------------------------------------------- 1 gradients

/// Reference forward pass written from the coefficient layout alone:
/// LR `[w; b]`, MLP `[W1 (h x n, row-major); b1; w2; b2]`, sigmoid hidden
/// units, sigmoid output.
fn oracle_logit(shape: ModelShape, v: &[f64], x: &[f64]) -> f64 {
    let n = shape.n_inputs;
    match shape.kind {
        ModelKind::Logistic => (0..n).map(|i| v[i] * x[i]).sum::<f64>() + v[n],
        ModelKind::Mlp => {
            let h = shape.n_hidden;
            let mut out = v[2 * h + h * n];
            for j in 0..h {
                let mut a = v[h * n + j];
                for i in 0..n {
                    a += v[j * n + i] * x[i];
                }
                let act = 1.0 / (1.0 + (-a).exp());
                out += v[h * n + h + j] * act;
            }
            out
        }
    }
}

/// Mean negative log-likelihood.
fn oracle_loss(shape: ModelShape, v: &[f64], batch: &[Example]) -> f64 {
    let mut total = 0.0;
    for ex in batch {
        let z = oracle_logit(shape, v, &ex.x);
        // -log sigmoid(z) = log(1 + e^-z); -log(1 - sigmoid(z)) = log(1 + e^z)
        let s = if ex.label == 1 { -z } else { z };
        total += if s > 0.0 { s + (-s).exp().ln_1p() } else { s.exp().ln_1p() };
    }
    total / batch.len() as f64
}

fn random_pair(rng: &mut ChaCha8Rng, shape: ModelShape) -> (CoefVector, Vec<Example>) {
    let values: Vec<f64> = (0..shape.coefficient_count())
        .map(|_| rng.random_range(-1.5..1.5))
        .collect();
    let m = rng.random_range(1..=48);
    let batch = (0..m)
        .map(|_| Example {
            x: (0..shape.n_inputs).map(|_| rng.random_range(-3.0..3.0)).collect(),
            label: rng.random_range(0..2),
        })
        .collect();
    (learn::unflatten(shape, &values).unwrap(), batch)
}

#[test]
fn c01_gradient_correctness() {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0x6ead);
    let h = 1e-5;
    let mut worst = [0.0f64; 2];
    let mut worst_loss = 0.0f64;
    for (k, shape) in [ModelShape::logistic(3), ModelShape::mlp(3, 4)].into_iter().enumerate() {
        for _ in 0..100 {
            let (model, batch) = random_pair(&mut rng, shape);
            let lib = learn::loss(&model, &batch).unwrap();
            let ora = oracle_loss(shape, &model.values, &batch);
            worst_loss = worst_loss.max((lib - ora).abs() / ora.abs().max(1e-12));
            let analytic = learn::gradient(&model, &batch).unwrap().values;
            let mut v = model.values.clone();
            let fd: Vec<f64> = (0..v.len())
                .map(|i| {
                    let base = v[i];
                    v[i] = base + h;
                    let up = oracle_loss(shape, &v, &batch);
                    v[i] = base - h;
                    let down = oracle_loss(shape, &v, &batch);
                    v[i] = base;
                    (up - down) / (2.0 * h)
                })
                .collect();
            let diff: f64 = analytic.iter().zip(&fd).map(|(a, f)| (a - f).powi(2)).sum::<f64>().sqrt();
            let norm = |g: &[f64]| g.iter().map(|x| x * x).sum::<f64>().sqrt();
            let rel = diff / norm(&analytic).max(norm(&fd)).max(1e-12);
            worst[k] = worst[k].max(rel);
        }
    }
    let pass = worst[0] < 1e-5 && worst[1] < 1e-5 && worst_loss < 1e-12;
    report(
        1,
        "gradient correctness",
        pass,
        format!("max rel err lr {:.2e}, mlp {:.2e}; loss vs oracle {:.1e}", worst[0], worst[1], worst_loss),
        t0,
    );
    assert!(pass);
}

// ------------------------------------------------------------------- 2 DSP

#[test]
fn c02_dsp_invariants() {
    let t0 = Instant::now();
    let synth = SynthConfig {
        noise_windows: 4,
        windows_per_gain: 2,
        gains_db: vec![-20.0, 0.0, 10.0],
        ..SynthConfig::default()
    };
    let mut parseval = 0.0f64;
    let mut acf_lo = f64::INFINITY;
    let mut acf_hi = f64::NEG_INFINITY;
    for src in synth.sources().unwrap() {
        for w in 0..src.n_windows {
            let samples = src.window(w).unwrap();
            let total = iqgen::mean_power(&samples);
            let channels = featex::channelize(&samples, 10).unwrap();
            let parts: f64 = channels.iter().map(|c| featex::series_power(c)).sum();
            parseval = parseval.max((parts - total).abs() / total);
            for c in &channels {
                for r in featex::autocorrelation(c, 100).unwrap() {
                    acf_lo = acf_lo.min(r);
                    acf_hi = acf_hi.max(r);
                }
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let bits: Vec<bool> = (0..4000).map(|_| rng.random()).collect();
    let gmsk = iqgen::gmsk_modulate(&bits, &GmskParams::default()).unwrap();
    let envelope = gmsk.iter().map(|s| (s.norm() - 1.0).abs()).fold(0.0, f64::max);

    let pass = parseval < 1e-9 && envelope < 1e-9 && acf_lo >= 0.0 && acf_hi <= 1.0;
    report(
        2,
        "DSP invariants",
        pass,
        format!(
            "parseval rel err {parseval:.1e}, envelope dev {envelope:.1e}, acf in [{acf_lo:.4}, {acf_hi:.4}]"
        ),
        t0,
    );
    assert!(pass);
}

// -------------------------------------------------------- 3 ED calibration

#[test]
fn c03_energy_detector_calibration() {
    let t0 = Instant::now();
    let th = detect::calibrate_on_rows(&dataset(0).rows, 0.01).unwrap();
    // a master seed no dataset here uses
    let fresh = pipeline::noise_powers(1_000_003, 10_000, &FeatureConfig::default()).unwrap();
    let alarms = fresh.iter().filter(|&&p| detect::energy_decide(p, &th) == 1).count();
    let rate = alarms as f64 / fresh.len() as f64;
    let pass = rate <= 0.015;
    report(
        3,
        "energy detector Pfa",
        pass,
        format!(
            "threshold from {} noise rows, false alarms {alarms}/10000 = {:.2}%",
            th.n_calibration,
            rate * 100.0
        ),
        t0,
    );
    assert!(pass);
}

// ------------------------------------------------------- 4 baseline order

#[test]
fn c04_baseline_ordering() {
    let t0 = Instant::now();
    let b = harness::run_baseline(&dataset(0).rows, &BaselineSection::default(), 0).unwrap();
    let (ed, lr, mlp) = (b.energy.accuracy, b.logistic.accuracy, b.mlp.accuracy);
    let pass = lr - ed >= 0.02 && mlp >= lr - 0.005;
    report(
        4,
        "baseline ordering",
        pass,
        format!("energy {:.2}%, LR {:.2}%, MLP {:.2}%", ed * 100.0, lr * 100.0, mlp * 100.0),
        t0,
    );
    assert!(pass);
}

// ------------------------------------------------------ 5 FedAvg consensus

#[test]
fn c05_fedavg_consensus_idempotence() {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut idempotent = true;
    for _ in 0..200 {
        let len = rng.random_range(2..50);
        let v: Vec<f64> = (0..len)
            .map(|_| rng.random_range(-1.0..1.0) * 10f64.powi(rng.random_range(-300..300)))
            .collect();
        let shape = ModelShape::logistic(len - 1);
        let c = learn::unflatten(shape, &v).unwrap();
        for n in 1..8 {
            let avg = fed::fedavg(&vec![c.clone(); n]).unwrap();
            idempotent &= avg.values.iter().zip(&v).all(|(a, b)| a.to_bits() == b.to_bits());
        }
    }

    let mut consensus = true;
    for (shape, faulty) in [(ModelShape::logistic(3), vec![]), (ModelShape::mlp(3, 4), vec![0, 1])] {
        let config = FedConfig {
            shape,
            faulty_ids: faulty.into_iter().collect(),
            ..FedConfig::default()
        };
        let mut states = fed::partition_sensors(&dataset(0).rows, &config).unwrap();
        let train: Vec<_> = states.iter().flat_map(|s| s.train_rows.iter().copied()).collect();
        let stats = Normalization::fit(&train).unwrap();
        let eval_rows: Vec<_> = states.iter().flat_map(|s| s.rows().copied()).collect();
        let eval = learn::examples(&stats.apply(&eval_rows));
        for s in &mut states {
            s.prepare(&stats, config.n_rounds).unwrap();
        }
        for r in 0..config.n_rounds {
            fed::run_round(&mut states, r, &config, &eval).unwrap();
            let first: Vec<u64> = states[0].fed_model.values.iter().map(|v| v.to_bits()).collect();
            consensus &= states
                .iter()
                .all(|s| s.fed_model.values.iter().map(|v| v.to_bits()).eq(first.iter().copied()));
        }
    }
    let pass = idempotent && consensus;
    report(
        5,
        "FedAvg consensus/idempotence",
        pass,
        format!("idempotent {idempotent}, post-round consensus {consensus}"),
        t0,
    );
    assert!(pass);
}

// ------------------------------------------------------ 6 no-fault parity

#[test]
fn c06_no_fault_parity() {
    let t0 = Instant::now();
    let r = run(0, 0);
    let f = r.final_accuracy;
    let central = r.centralized_accuracy.logistic;
    let pass = gap(r).abs() <= 0.03 && (f.mean_fed - central).abs() <= 0.06;
    report(
        6,
        "no-fault parity",
        pass,
        format!(
            "fed {:.2}%, shadow {:.2}%, centralized {:.2}%",
            f.mean_fed * 100.0,
            f.mean_shadow * 100.0,
            central * 100.0
        ),
        t0,
    );
    assert!(pass);
}

// ------------------------------------------------------ 7 one faulty

#[test]
fn c07_one_faulty_robustness() {
    let t0 = Instant::now();
    let gaps: Vec<f64> = SEEDS.iter().map(|&s| gap(run(s, 1))).collect();
    let pass = gaps.iter().all(|&g| g >= 0.05);
    let shown: Vec<String> = gaps.iter().map(|g| format!("{:.2}", g * 100.0)).collect();
    report(
        7,
        "one-faulty robustness",
        pass,
        format!("fed-shadow gap per seed [{}] pts", shown.join(", ")),
        t0,
    );
    assert!(pass);
}

// ------------------------------------------------------ 8 two faulty

#[test]
fn c08_two_faulty_robustness() {
    let t0 = Instant::now();
    let mut pass = true;
    let mut shown = Vec::new();
    for &s in &SEEDS {
        let (one, two) = (run(s, 1), run(s, 2));
        let widened = gap(two) > gap(one);
        let drift = two.final_accuracy.mean_fed - one.final_accuracy.mean_fed;
        let ok = widened && drift.abs() <= 0.02;
        pass &= ok;
        shown.push(format!(
            "s{s}: gap {:.2}->{:.2}, fed drift {:+.2}{}",
            gap(one) * 100.0,
            gap(two) * 100.0,
            drift * 100.0,
            if ok { "" } else { " x" }
        ));
    }
    report(8, "two-faulty robustness", pass, shown.join("; "), t0);
    assert!(pass);
}

// ------------------------------------------------------ 9 outliers

#[test]
fn c09_outlier_detection() {
    let t0 = Instant::now();
    let hit = run(0, 1).flag_rate(0, 10);
    let clean = run(0, 0);
    let quiet = clean
        .rounds
        .iter()
        .filter(|r| r.per_sensor.iter().all(|s| !s.flagged))
        .count() as f64
        / clean.rounds.len() as f64;
    let pass = hit >= 0.8 && quiet >= 0.9;
    report(
        9,
        "outlier detection",
        pass,
        format!(
            "faulty flagged in {:.0}% of last 10 rounds, no-fault rounds without flags {:.0}%",
            hit * 100.0,
            quiet * 100.0
        ),
        t0,
    );
    assert!(pass);
}

// ------------------------------------------------------ 10 coefficients

#[test]
fn c10_coefficient_accounting() {
    let t0 = Instant::now();
    let lr = FedConfig::default().shape.coefficient_count();
    let lr_logistic = FedConfig::default().shape.kind == ModelKind::Logistic;
    let mlp_default = FedConfig {
        shape: ModelShape::mlp(3, FedConfig::default().reference_hidden),
        ..FedConfig::default()
    }
    .shape
    .coefficient_count();

    // eight hidden units over three inputs: 8*3 + 8 + 8 + 1
    let cfg = harness::Config::parse(
        "seed = 0\n[fedsim]\nn_hidden = 8\nn_rounds = 2\nscenarios = [{ model = \"mlp\" }]\n",
        Path::new("."),
    )
    .unwrap();
    let fc = cfg.fedsim.fed_config(0, &cfg.fedsim.scenarios[0]);
    let rep = fed::run_experiment(&dataset(0).rows, &fc).unwrap();
    let pass = lr_logistic && lr == 4 && rep.n_coefficients == 41 && fc.shape.coefficient_count() == 41;
    report(
        10,
        "coefficient accounting",
        pass,
        format!(
            "logistic {lr}, mlp default width {mlp_default}, mlp n_hidden=8 reports {}",
            rep.n_coefficients
        ),
        t0,
    );
    assert!(pass);
}

// ------------------------------------------------------ 11 determinism

fn pipeline_run(dir: &Path) {
    std::fs::write(
        dir.join("run.toml"),
        "seed = 11\n[extract]\niq_dir = \"iq\"\n[fedsim]\ndataset = \"feat/dataset.csv\"\n",
    )
    .unwrap();
    for (cmd, out) in [("generate", "iq"), ("extract", "feat"), ("fedsim", "fed")] {
        let status = Proc::new(env!("CARGO_BIN_EXE_specsense"))
            .current_dir(dir)
            .args([cmd, "--config", "run.toml", "--out", out])
            .stdout(std::process::Stdio::null())
            .status()
            .unwrap();
        assert!(status.success(), "{cmd} failed");
    }
}

fn files(root: &Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    for sub in ["iq", "feat", "fed"] {
        let mut names: Vec<_> = std::fs::read_dir(root.join(sub))
            .unwrap()
            .map(|e| e.unwrap().path().strip_prefix(root).unwrap().to_path_buf())
            .collect();
        names.sort();
        out.extend(names);
    }
    out
}

#[test]
fn c11_determinism() {
    let t0 = Instant::now();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    pipeline_run(a.path());
    pipeline_run(b.path());
    let (fa, fb) = (files(a.path()), files(b.path()));
    let mut differing = Vec::new();
    for f in &fa {
        if std::fs::read(a.path().join(f)).ok() != std::fs::read(b.path().join(f)).ok() {
            differing.push(f.display().to_string());
        }
    }
    let reports = fa
        .iter()
        .filter(|f| {
            let name = f.to_string_lossy();
            f.starts_with("fed") && name.ends_with(".json") && !name.ends_with(".manifest.json")
        })
        .count();
    let pass = fa == fb && differing.is_empty() && reports >= 6;
    report(
        11,
        "determinism",
        pass,
        format!("{} files compared ({reports} report JSONs), {} differ {:?}", fa.len(), differing.len(), differing),
        t0,
    );
    assert!(pass);
}
