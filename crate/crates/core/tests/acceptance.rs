//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use discoq::ansatz::{cup_effect, Circuit};
use discoq::dataset::{enumerate_captions, CaptionRecord, FeatureSpec, Split};
use discoq::diagram::{contract, snake_check, Diagram, Tensor, TensorAssignment};
use discoq::encoders::{amplitude_encode, pca_fit, FeatureSource, FeatureVector};
use discoq::model::{Alignment, EncoderKind, Model, ModelSpec, QuantumConfig, QuantumMatcher};
use discoq::pregroup::{reduce, reduce_any, BasicType, Lexicon, PregroupType};
use discoq::runner::{load_records, report_csv, report_text, train, DataConfig, RunReport, TrainConfig};
use discoq::simulator::{evolve, run, ParameterVector};
use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

type Outcome = Result<String, String>;

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("1 grammar", grammar),
        ("2 snake equations", snakes),
        ("3 oracle equivalence", oracle_equivalence),
        ("4 gradient correctness", gradients),
        ("5 encoding fidelity", encoding_fidelity),
        ("6 parameter count", parameter_count),
        ("7 mhe trend", mhe_trend),
        ("8 synthetic angle/widen", synthetic_angle),
        ("9 determinism", determinism),
    ];
    let only = std::env::var("ACCEPTANCE_ONLY").ok();
    let mut failed = 0;
    for (name, check) in criteria {
        if only.as_deref().is_some_and(|o| !name.starts_with(o)) {
            continue;
        }
        let start = Instant::now();
        let outcome = check();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS [{name}] {detail} ({secs:.1}s)"),
            Err(detail) => {
                failed += 1;
                println!("FAIL [{name}] {detail} ({secs:.1}s)");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn t(s: &str) -> PregroupType {
    s.parse().expect("valid type")
}

fn grammar() -> Outcome {
    let lex = Lexicon::task_default();
    let captions = enumerate_captions();
    for tr in &captions {
        let d = lex.parse(&tr.caption()).map_err(|e| format!("{}: {e}", tr.caption()))?;
        if d.result != PregroupType::sentence() || d.cups.len() != 2 {
            return Err(format!("{}: result {} with {} cups", tr.caption(), d.result, d.cups.len()));
        }
    }
    let seq = ["n.n^l", "n", "n^r.s.p^l", "p.n^l", "n.n^l", "n"].map(t);
    let long = reduce(&seq).map_err(|e| format!("six-word sequence: {e}"))?;
    ensure(
        captions.len() == 24 && long.result == PregroupType::sentence(),
        format!("{} captions reduce to s with 2 cups; six-word sequence reduces to s", captions.len()),
    )
}

fn snakes() -> Outcome {
    let dims = [1, 2, 3, 4, 8];
    let bad: Vec<usize> = dims.into_iter().filter(|&d| !snake_check(d)).collect();
    ensure(bad.is_empty(), format!("dims {dims:?} at 1e-12, failing {bad:?}"))
}

/// Sum over every joint index assignment consistent with the cups.
fn brute_force(diag: &Diagram, assign: &TensorAssignment) -> Vec<f64> {
    let dims: Vec<usize> = diag.wires.iter().map(|w| assign.dims[&w.base]).collect();
    let out_dims: Vec<usize> = diag.outputs.iter().map(|&w| dims[w]).collect();
    let mut result = vec![0.0; out_dims.iter().product()];
    let total: usize = dims.iter().product();
    for code in 0..total {
        let mut idx = vec![0; dims.len()];
        let mut rest = code;
        for w in (0..dims.len()).rev() {
            idx[w] = rest % dims[w];
            rest /= dims[w];
        }
        if diag.cups.iter().any(|&(a, b)| idx[a] != idx[b]) {
            continue;
        }
        let prod: f64 = diag
            .boxes
            .iter()
            .map(|b| assign.tensors[&b.word].get(&b.wires.iter().map(|&w| idx[w]).collect::<Vec<_>>()))
            .product();
        let off = diag.outputs.iter().enumerate().fold(0, |acc, (k, &w)| acc * out_dims[k] + idx[w]);
        result[off] += prod;
    }
    result
}

fn oracle_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let pool = ["n", "n^r.s.n^l", "n.n^l", "n^r.s.p^l", "p.n^l", "n^r.s", "s.s^l", "p", "n^l.s", "n^r"].map(t);
    let (mut checked, mut worst, mut cups) = (0, 0.0f64, 0);
    while checked < 50 {
        let len = rng.random_range(1..=4);
        let words: Vec<(String, PregroupType)> =
            (0..len).map(|i| (format!("w{i}"), pool[rng.random_range(0..pool.len())].clone())).collect();
        let d = reduce_any(&words).map_err(|e| e.to_string())?;
        if words.iter().map(|(_, ty)| ty.len()).sum::<usize>() > 10 {
            continue;
        }
        let diag = Diagram::from_derivation(&d);
        let mut assign = TensorAssignment::new(BasicType::ALL.map(|b| (b, rng.random_range(1..=3))));
        for b in &diag.boxes {
            let shape: Vec<usize> = b.ty.factors().iter().map(|f| assign.dims[&f.base]).collect();
            let n = shape.iter().product();
            assign.tensors.insert(b.word.clone(), Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()));
        }
        let got = contract(&diag, &assign).map_err(|e| e.to_string())?;
        let want = brute_force(&diag, &assign);
        if got.data.len() != want.len() {
            return Err(format!("output size {} vs {}", got.data.len(), want.len()));
        }
        worst = got.data.iter().zip(&want).map(|(g, w)| (g - w).abs()).fold(worst, f64::max);
        cups += diag.cups.len();
        checked += 1;
    }
    if worst > 1e-12 {
        return Err(format!("contract vs brute force max error {worst:e}"));
    }

    // The cup effect as a 2x2 tensor: <00| C |ij> for each basis input.
    let (gates, _) = cup_effect(0, 1);
    let circ = Circuit::new(2, gates);
    let p = ParameterVector::default();
    let mut effect = [[C64::new(0.0, 0.0); 2]; 2];
    for (k, row) in (0..4).map(|k| (k, k / 2)) {
        let mut basis = vec![C64::new(0.0, 0.0); 4];
        basis[k] = C64::new(1.0, 0.0);
        effect[row][k % 2] = evolve(&circ, &p, Some(&basis)).map_err(|e| e.to_string())?[0];
    }
    let scale = effect[0][0];
    let mut eps_err: f64 = 0.0;
    for (i, row) in effect.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            let eps = if i == j { 1.0 } else { 0.0 };
            eps_err = eps_err.max((v - scale * eps).norm());
        }
    }
    ensure(
        eps_err < 1e-12 && scale.norm() > 0.1,
        format!("50 diagrams ({cups} cups) max error {worst:.1e}; cup effect = {:.4} x epsilon, residual {eps_err:.1e}", scale.re),
    )
}

fn records(spec: FeatureSpec, images: usize) -> Result<Vec<CaptionRecord>, String> {
    load_records(&DataConfig { generate: spec, images_per_caption: images, ..Default::default() }).map_err(|e| e.to_string())
}

/// Directional central difference against the adjoint gradient, one random
/// parameter draw and one random unit direction per draw.
fn directional_fd(spec: &ModelSpec, recs: &[CaptionRecord], draws: usize, seed: u64) -> Result<f64, String> {
    let train: Vec<&CaptionRecord> = recs.iter().filter(|r| r.split == Split::Train).collect();
    let model = Model::build(spec, &train).map_err(|e| e.to_string())?;
    let examples = model.prepare(recs).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = 1e-4;
    let mut worst: f64 = 0.0;
    for _ in 0..draws {
        let params = model.init_params(&mut rng);
        let batch: Vec<_> = (0..4).map(|_| &examples[rng.random_range(0..examples.len())]).collect();
        let mut dir: Vec<f64> = (0..params.len()).map(|_| rng.sample(StandardNormal)).collect();
        let norm = dir.iter().map(|x| x * x).sum::<f64>().sqrt();
        dir.iter_mut().for_each(|x| *x /= norm);
        let (_, g) = model.loss_grad(&params, &batch).map_err(|e| e.to_string())?;
        let analytic: f64 = g.iter().zip(&dir).map(|(a, b)| a * b).sum();
        let shifted = |s: f64| -> Result<f64, String> {
            let q: Vec<f64> = params.iter().zip(&dir).map(|(p, d)| p + s * d).collect();
            Ok(model.loss_grad(&q, &batch).map_err(|e| e.to_string())?.0)
        };
        let fd = (shifted(h)? - shifted(-h)?) / (2.0 * h);
        worst = worst.max((fd - analytic).abs() / fd.abs().max(1e-3));
    }
    Ok(worst)
}

fn gradients() -> Outcome {
    let mhe = records(FeatureSpec::Mhe { sigma: 0.1 }, 4)?;
    let synth = records(FeatureSpec::Synthetic { dim: 512, sigma: 0.05 }, 4)?;
    let box_spec = ModelSpec::Quantum(QuantumConfig::default());
    let widen_spec =
        ModelSpec::Quantum(QuantumConfig { encoder: EncoderKind::Angle, alignment: Alignment::Widen, ..Default::default() });
    let a = directional_fd(&box_spec, &mhe, 100, 1)?;
    let b = directional_fd(&widen_spec, &synth, 100, 2)?;
    let c = directional_fd(&ModelSpec::Classical, &mhe, 100, 3)?;
    ensure(
        a < 1e-5 && b < 1e-5 && c < 1e-5,
        format!("h=1e-4, 100 draws each, max rel error mhe/box {a:.1e}, angle/widen {b:.1e}, classical {c:.1e} (< 1e-5)"),
    )
}

/// Cyclic Jacobi eigendecomposition; returns (eigenvalues, eigenvectors as rows).
fn jacobi(mut a: Vec<Vec<f64>>) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = a.len();
    let mut v: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
    for _ in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[i][j].powi(2)).sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let tan = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let tan = if theta == 0.0 { 1.0 } else { tan };
                let (c, s) = (1.0 / (tan * tan + 1.0).sqrt(), tan / (tan * tan + 1.0).sqrt());
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for row in v.iter_mut() {
                    let (vp, vq) = (row[p], row[q]);
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[j][j].total_cmp(&a[i][i]));
    let values = order.iter().map(|&i| a[i][i]).collect();
    let vectors = order.iter().map(|&i| (0..n).map(|k| v[k][i]).collect()).collect();
    (values, vectors)
}

fn encoding_fidelity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let p = ParameterVector::default();
    let mut worst: f64 = 0.0;
    let mut big = 0;
    for k in 0..100 {
        let dim = if k % 10 == 0 { 512 } else { rng.random_range(1..=64) };
        let values: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let qubits = (dim == 512).then_some(12);
        let circ = amplitude_encode(&FeatureVector::new(values.clone(), FeatureSource::External), qubits).map_err(|e| e.to_string())?;
        let state = run(&circ, &p).map_err(|e| e.to_string())?;
        if dim == 512 {
            if state.n_qubits != 12 || state.amplitudes.len() != 4096 {
                return Err(format!("512-dim vector encoded on {} qubits", state.n_qubits));
            }
            big += 1;
        }
        let norm = values.iter().map(|x| x * x).sum::<f64>().sqrt();
        for (i, a) in state.amplitudes.iter().enumerate() {
            let want = values.get(i).map_or(0.0, |x| x / norm);
            worst = worst.max((a - C64::new(want, 0.0)).norm());
        }
    }
    if worst >= 1e-10 {
        return Err(format!("amplitude round trip max error {worst:e}"));
    }

    let scales = [3.0, 2.2, 1.6, 1.1, 0.7, 0.4, 0.2];
    let data: Vec<Vec<f64>> = (0..80)
        .map(|_| {
            let z: Vec<f64> = scales.iter().map(|s| s * rng.sample::<f64, _>(StandardNormal)).collect();
            // mix the axes so components are not coordinate vectors
            (0..z.len()).map(|i| z[i] + 0.5 * z[(i + 1) % z.len()] - 0.3 * z[(i + 3) % z.len()]).collect()
        })
        .collect();
    let d = scales.len();
    let mean: Vec<f64> = (0..d).map(|j| data.iter().map(|r| r[j]).sum::<f64>() / data.len() as f64).collect();
    let cov: Vec<Vec<f64>> = (0..d)
        .map(|i| {
            (0..d)
                .map(|j| data.iter().map(|r| (r[i] - mean[i]) * (r[j] - mean[j])).sum::<f64>() / (data.len() - 1) as f64)
                .collect()
        })
        .collect();
    let (_, oracle) = jacobi(cov);
    let pca = pca_fit(&data, d).map_err(|e| e.to_string())?;
    let mut pca_err: f64 = 0.0;
    for (got, want) in pca.components.iter().zip(&oracle) {
        let dot: f64 = got.iter().zip(want).map(|(a, b)| a * b).sum();
        let sign = dot.signum();
        pca_err = got.iter().zip(want).map(|(a, b)| (a - sign * b).abs()).fold(pca_err, f64::max);
    }
    ensure(
        pca.components.len() == d && pca_err < 1e-6,
        format!("100 vectors ({big} of dim 512 on 12 qubits) max error {worst:.1e}; PCA vs Jacobi max error {pca_err:.1e} over {d} components"),
    )
}

fn parameter_count() -> Outcome {
    let cfg = QuantumConfig { encoder: EncoderKind::Angle, alignment: Alignment::Widen, layers: 3, noun_qubits: 1, ..Default::default() };
    let s = cfg.sentence_qubits();
    let m = QuantumMatcher::new(cfg).map_err(|e| e.to_string())?;
    let counts: Vec<usize> =
        enumerate_captions().iter().map(|tr| m.caption_param_count(&tr.caption())).collect::<Result<_, _>>().map_err(|e| e.to_string())?;
    let (lo, hi) = (counts.iter().min().copied().unwrap_or(0), counts.iter().max().copied().unwrap_or(0));
    ensure(s == 9 && lo == 36 && hi == 36, format!("s={s} qubits, {} captions with {lo}..={hi} parameters each", counts.len()))
}

fn image_acc(r: &RunReport, s: Split) -> f64 {
    r.selected.get(&s).map_or(0.0, |a| a.image)
}

fn mhe_trend() -> Outcome {
    let data = DataConfig { generate: FeatureSpec::Mhe { sigma: 0.0 }, ..Default::default() };
    let recs = load_records(&data).map_err(|e| e.to_string())?;
    let quantum = TrainConfig { seeds: vec![1, 2, 3, 4], data: data.clone(), ..Default::default() };
    let classical = TrainConfig { seeds: vec![1, 2, 3, 4], data, ..TrainConfig::classical(false) };
    let (q, _) = train(&quantum, &recs).map_err(|e| e.to_string())?;
    let (c, _) = train(&classical, &recs).map_err(|e| e.to_string())?;
    let (q_train, q_test) = (image_acc(&q, Split::Train), image_acc(&q, Split::OodTest));
    let (c_train, c_test) = (image_acc(&c, Split::Train), image_acc(&c, Split::OodTest));
    let gap = 100.0 * (q_test - c_test);
    ensure(
        q_train >= 0.98 && q_test >= 0.50 && c_train >= 0.98 && gap >= 10.0,
        format!(
            "quantum (seed {}) train {:.2}% ood_test {:.2}%; classical (seed {}) train {:.2}% ood_test {:.2}%; gap {gap:+.2}pp",
            q.selected_seed,
            100.0 * q_train,
            100.0 * q_test,
            c.selected_seed,
            100.0 * c_train,
            100.0 * c_test
        ),
    )
}

fn synthetic_angle() -> Outcome {
    let qc = QuantumConfig { encoder: EncoderKind::Angle, alignment: Alignment::Widen, ..Default::default() };
    let mut cfg = TrainConfig { model: ModelSpec::Quantum(qc), lr: 0.01, ..Default::default() };
    cfg.data.generate = FeatureSpec::Synthetic { dim: 512, sigma: 0.05 };
    let recs = load_records(&cfg.data).map_err(|e| e.to_string())?;
    let (report, _) = train(&cfg, &recs).map_err(|e| e.to_string())?;
    let epochs = report.selected_run().epochs.len();
    let acc = image_acc(&report, Split::Train);

    let text = report_text(std::slice::from_ref(&report));
    let lines: Vec<&str> = text.lines().collect();
    let csv = report_csv(std::slice::from_ref(&report));
    let csv_rows: Vec<Vec<&str>> = csv.lines().map(|l| l.split(',').collect()).collect();
    let shaped = lines.len() == 2
        && lines[0].split_whitespace().count() == 6
        && lines[1].ends_with(&report.selected_seed.to_string())
        && csv_rows.len() == 2
        && csv_rows.iter().all(|r| r.len() == 10);
    ensure(
        epochs == 100 && acc >= 0.70 && shaped,
        format!("{epochs} epochs at lr 0.01, train {:.2}% (>= 70%), report table {} lines / csv {}x10", 100.0 * acc, lines.len(), csv_rows.len()),
    )
}

fn hash_file(path: &Path) -> Result<u64, String> {
    let bytes = std::fs::read(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let mut h = DefaultHasher::new();
    bytes.hash(&mut h);
    Ok(h.finish())
}

fn discoq(args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_discoq")).args(args).output().map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("discoq {args:?}: {}", String::from_utf8_lossy(&out.stderr)));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut hashes = Vec::new();
    let mut finals = Vec::new();
    for k in 0..2 {
        let data = dir.path().join(format!("data{k}.jsonl"));
        let data = data.to_str().expect("utf-8 path");
        discoq(&["gen-data", "--out", data, "--seed", "7", "--sigma", "0.1"])?;
        hashes.push(hash_file(Path::new(data))?);
        let json = discoq(&["train", "--data", data, "--epochs", "10", "--seeds", "1,2", "--lr", "0.01"])?;
        let report: RunReport = serde_json::from_str(&json).map_err(|e| e.to_string())?;
        let runs: Vec<_> = report.runs.iter().map(|r| (r.seed, r.final_metrics.clone(), r.epochs.last().map(|e| e.loss))).collect();
        finals.push((runs, report.selected_seed));
    }
    ensure(
        hashes[0] == hashes[1] && finals[0] == finals[1],
        format!("dataset hashes {:016x} / {:016x}; final accuracies identical: {}", hashes[0], hashes[1], finals[0] == finals[1]),
    )
}
