//! Acceptance suite: one PASS/FAIL line per criterion. Runs as a plain
//! binary (`harness = false`) so the report stays readable; the process
//! fails when any criterion fails.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value as Json};

use ngm::data::{Column, Dataset, FeatureSchema, FeatureSpec};
use ngm::graph::{dependency_mask, DependencyGraph, DependencyMask, EdgeKind};
use ngm::inference::{
    attach_binned_variant, clip_normalize, conditional_distribution, gradient_map, inference_loss_grad,
    message_passing, InferenceQuery, Value,
};
use ngm::learning::{
    feature_blocks, fit_ngm, holdout_loss, holdout_loss_grad, holdout_predict, init_params, regression_loss,
    regression_loss_grad, segment_penalty_grad, HiddenWidth, NgmModel, Segment, SegmentKind, TrainConfig,
};
use ngm::numerics::{MlpParams, NormKind};
use ngm::projections::{build_projection, init_projected, projected_objective, projection_segments};
use ngm::sampling::{sample_batch, SamplerConfig};
use ngm::synth::{
    adjacency_matrix, chain_precision, dependency_curve, feature_names, linear_fit, marginal_means,
    partial_correlation, precision_graph, recovery_oracle, sample_mvn, score_recovery, sigma_grid, PrecisionMatrix,
};

const FD_REL_TOL: f64 = 1e-4;
const FD_STEP: f64 = 1e-6;
const GRADIENT_BUDGET: Duration = Duration::from_secs(10);
const RATIO_MAX: f64 = 0.05;
const LOSS_FACTOR_MAX: f64 = 1.5;
const FIT_BUDGET: Duration = Duration::from_secs(300);
const R2_MIN: f64 = 0.9;
const SIGN_REPS: u64 = 10;
const SIGN_REPS_MIN: usize = 9;
const AUPR_MIN: f64 = 0.80;
const AUC_MIN: f64 = 0.90;
const SAMPLING_BUDGET: Duration = Duration::from_secs(900);
const MAP_TOL: f64 = 0.15;
const MP_TOL: f64 = 0.1;
const QUERIES: usize = 20;
const SUM_TOL: f64 = 1e-9;
const COND_TOL: f64 = 0.1;
const ACCURACY_MIN: f64 = 0.9;

const CHAIN_D: usize = 10;
const CHAIN_M: usize = 2000;
const CHAIN_H: usize = 30;
const CHAIN_SEED: u64 = 42;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

// ---------------------------------------------------------------- fixtures

struct Chain {
    theta: PrecisionMatrix,
    data: Dataset,
    graph: DependencyGraph,
    names: Vec<String>,
}

fn chain(seed: u64) -> Chain {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let theta = chain_precision(CHAIN_D, &mut rng).unwrap();
    let data = sample_mvn(&theta, CHAIN_M, &mut rng).unwrap();
    let names = feature_names(CHAIN_D);
    let graph = precision_graph(&theta, &names).unwrap();
    Chain {
        theta,
        data,
        graph,
        names,
    }
}

fn chain_config(seed: u64) -> TrainConfig {
    TrainConfig {
        hidden: HiddenWidth::Units(CHAIN_H),
        layers: 2,
        seed,
        ..TrainConfig::default()
    }
}

fn full_mask(names: &[String]) -> DependencyMask {
    DependencyMask::square(names, |i, j| i != j)
}

// ------------------------------------------------------- finite differences

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = a
        .iter()
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt()
        .max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    if scale < 1e-12 {
        diff
    } else {
        diff / scale
    }
}

/// Central differences of `f` over every entry of `params`.
fn fd_params(params: &MlpParams, f: impl Fn(&MlpParams) -> f64) -> Vec<f64> {
    let flat = params.to_flat();
    let mut p = params.clone();
    (0..flat.len())
        .map(|i| {
            let mut v = flat.clone();
            v[i] = flat[i] + FD_STEP;
            p.assign_flat(&v);
            let up = f(&p);
            v[i] = flat[i] - FD_STEP;
            p.assign_flat(&v);
            let down = f(&p);
            (up - down) / (2.0 * FD_STEP)
        })
        .collect()
}

fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.5..1.5))
}

fn chain_mask(d: usize) -> DependencyMask {
    let names = feature_names(d);
    DependencyMask::square(&names, |i, j| i.abs_diff(j) == 1)
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let cfg = TrainConfig {
        hidden: HiddenWidth::Units(8),
        layers: 2,
        ..TrainConfig::default()
    };
    let d = 4;
    let mut worst: BTreeMap<&str, f64> = BTreeMap::new();
    let mut note = |term: &'static str, e: f64| {
        let w = worst.entry(term).or_insert(0.0);
        *w = w.max(e);
    };
    for point in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + point);
        let params = init_params(d, d, &cfg, &mut rng).unwrap();
        let x = random_matrix(&mut rng, 6, d);

        let (_, g) = regression_loss_grad(&params, &x, &x).unwrap();
        let n = fd_params(&params, |p| regression_loss(p, &x, &x).unwrap());
        note("regression", rel_err(&g.to_flat(), &n));

        let widths = vec![1; d];
        let blocks = feature_blocks(&widths, &widths);
        let (_, g) = holdout_loss_grad(&params, &x, &x, &blocks).unwrap();
        let n = fd_params(&params, |p| holdout_loss(p, &x, &x, &blocks).unwrap());
        note("held-out regression", rel_err(&g.to_flat(), &n));

        let mask = chain_mask(d).without_self_paths();
        let seg = Segment {
            kind: SegmentKind::Core,
            start: 0,
            end: params.num_layers(),
            mask,
            lambda: None,
        };
        for norm in [NormKind::L2, NormKind::L1] {
            let (_, g) = segment_penalty_grad(&params, &seg, norm, cfg.eps_log).unwrap();
            let n = fd_params(&params, |p| segment_penalty_grad(p, &seg, norm, cfg.eps_log).unwrap().0);
            note("structure", rel_err(&g.to_flat(), &n));
        }

        // encoder/decoder penalties on a mixed two-numeric, two-categorical schema
        let schema = FeatureSchema::new(vec![
            FeatureSpec::continuous("a"),
            FeatureSpec::categorical("b", vec!["u".into(), "v".into()]),
            FeatureSpec::continuous("c"),
            FeatureSpec::categorical("e", vec!["p".into(), "q".into(), "r".into()]),
        ])
        .unwrap();
        let spec = build_projection(&schema).unwrap();
        let s = chain_mask(d);
        let s = DependencyMask::square(&schema.names(), |i, j| s.get(i, j));
        let segs = projection_segments(&s, &spec, &cfg).unwrap();
        let pp = init_projected(&spec, &cfg, &mut rng).unwrap();
        for seg in &segs {
            let (_, g) = segment_penalty_grad(&pp, seg, NormKind::L2, cfg.eps_log).unwrap();
            let n = fd_params(&pp, |p| {
                segment_penalty_grad(p, seg, NormKind::L2, cfg.eps_log).unwrap().0
            });
            let term = match seg.kind {
                SegmentKind::Encoder => "encoder penalty",
                SegmentKind::Decoder => "decoder penalty",
                SegmentKind::Core => "projected core penalty",
            };
            note(term, rel_err(&g.to_flat(), &n));
        }
        let xp = random_matrix(&mut rng, 5, spec.input_units());
        let lambdas: Vec<f64> = (0..segs.len()).map(|k| 0.3 + 0.2 * k as f64).collect();
        let (_, mut g) = regression_loss_grad(&pp, &xp, &xp).unwrap();
        for (seg, lam) in segs.iter().zip(&lambdas) {
            let (_, gs) = segment_penalty_grad(&pp, seg, NormKind::L2, cfg.eps_log).unwrap();
            for (a, b) in g.layers_mut().iter_mut().zip(gs.layers()) {
                a.weight += &b.weight * *lam;
            }
        }
        let n = fd_params(&pp, |p| {
            projected_objective(p, &xp, &xp, &segs, &lambdas, &cfg).unwrap()
        });
        note("projected objective", rel_err(&g.to_flat(), &n));

        let xq = random_matrix(&mut rng, 3, d);
        let known = DMatrix::from_fn(3, d, |r, c| if (r + c) % 2 == 0 { 1.0 } else { 0.0 });
        let (_, g) = inference_loss_grad(&params, &xq, &known).unwrap();
        let mut an = Vec::new();
        let mut num = Vec::new();
        for r in 0..3 {
            for c in (0..d).filter(|&c| known[(r, c)] == 0.0) {
                let loss_at = |v: f64| {
                    let mut z = xq.clone();
                    z[(r, c)] = v;
                    inference_loss_grad(&params, &z, &known).unwrap().0[r]
                };
                an.push(g[(r, c)]);
                num.push((loss_at(xq[(r, c)] + FD_STEP) - loss_at(xq[(r, c)] - FD_STEP)) / (2.0 * FD_STEP));
            }
        }
        note("inference", rel_err(&an, &num));
    }
    let elapsed = start.elapsed();
    let max = worst.values().cloned().fold(0.0, f64::max);
    let pass = max < FD_REL_TOL && elapsed < GRADIENT_BUDGET;
    let terms: Vec<String> = worst.iter().map(|(k, v)| format!("{k} {v:.1e}")).collect();
    outcome(
        pass,
        format!(
            "max rel err {max:.2e} (< {FD_REL_TOL:e}) in {:.2}s; {}",
            elapsed.as_secs_f64(),
            terms.join(", ")
        ),
    )
}

// ------------------------------------------------------------- chain model

struct Trained {
    fx: Chain,
    model: NgmModel,
    fit_time: Duration,
}

fn criterion_2(t: &Trained, metrics: &mut Json) -> Outcome {
    let start = Instant::now();
    let base = fit_ngm(&t.fx.data, &full_mask(&t.fx.names), &chain_config(CHAIN_SEED)).unwrap();
    let base_time = start.elapsed();
    let ratio = t.model.masked_ratio();
    let loss = t.model.losses.regression;
    let factor = loss / base.losses.regression;
    metrics["criterion_2"] = json!({
        "masked_ratio": ratio,
        "regression_loss": loss,
        "baseline_regression_loss": base.losses.regression,
        "loss_factor": factor,
    });
    outcome(
        ratio < RATIO_MAX && factor <= LOSS_FACTOR_MAX && t.fit_time < FIT_BUDGET,
        format!(
            "masked ratio {ratio:.4} (< {RATIO_MAX}), loss {loss:.4} = {factor:.3}x full graph (<= {LOSS_FACTOR_MAX}), fit {:.0}s, baseline {:.0}s",
            t.fit_time.as_secs_f64(),
            base_time.as_secs_f64()
        ),
    )
}

/// Slope and R^2 of `x_{i+1}` against `x_i` for every chain edge.
fn chain_curves(model: &NgmModel, names: &[String]) -> Vec<(f64, f64)> {
    (0..names.len() - 1)
        .map(|i| {
            let grid = sigma_grid(&model.schema, &names[i], 2.0, 21).unwrap();
            linear_fit(&dependency_curve(model, &names[i + 1], &names[i], &grid).unwrap())
        })
        .collect()
}

fn criterion_3(metrics: &mut Json) -> Outcome {
    let mut good = 0;
    let mut reps = Vec::new();
    let mut min_r2 = f64::INFINITY;
    for seed in 0..SIGN_REPS {
        let fx = chain(seed);
        let s = dependency_mask(&fx.graph).unwrap();
        let model = fit_ngm(&fx.data, &s, &chain_config(seed)).unwrap();
        let pc = partial_correlation(&fx.theta);
        let curves = chain_curves(&model, &fx.names);
        let signs = curves
            .iter()
            .enumerate()
            .filter(|(i, (slope, _))| slope.signum() == pc[(*i, i + 1)].signum())
            .count();
        let r2 = curves.iter().map(|c| c.1).fold(f64::INFINITY, f64::min);
        min_r2 = min_r2.min(r2);
        if signs == CHAIN_D - 1 && r2 > R2_MIN {
            good += 1;
        }
        reps.push(json!({
            "seed": seed,
            "signs_correct": signs,
            "min_r2": r2,
            "slopes": curves.iter().map(|c| c.0).collect::<Vec<_>>(),
            "partial_correlations": (0..CHAIN_D - 1).map(|i| pc[(i, i + 1)]).collect::<Vec<_>>(),
        }));
    }
    metrics["criterion_3"] = json!({ "repetitions": reps, "passing": good });
    outcome(
        good >= SIGN_REPS_MIN,
        format!("{good}/{SIGN_REPS} seeds with all 9 signs right and R2 > {R2_MIN} (need {SIGN_REPS_MIN}); min R2 {min_r2:.3}"),
    )
}

fn criterion_4(t: &mut Trained, metrics: &mut Json) -> Outcome {
    let start = Instant::now();
    attach_binned_variant(&mut t.model, &t.fx.data).unwrap();
    let truth = adjacency_matrix(&t.fx.graph);
    let mut scores = Vec::new();
    for count in [1000, 4000] {
        let cfg = SamplerConfig {
            count,
            seed: CHAIN_SEED,
            ..SamplerConfig::default()
        };
        let table = sample_batch(&t.model, &t.fx.graph, &cfg).unwrap();
        let m = score_recovery(&truth, &recovery_oracle(&table.data.to_matrix(), None).unwrap()).unwrap();
        scores.push((m.aupr, m.auc));
    }
    let elapsed = t.fit_time + start.elapsed();
    let [(p1, a1), (p4, a4)] = [scores[0], scores[1]];
    metrics["criterion_4"] = json!({
        "samples_1000": { "aupr": p1, "auc": a1 },
        "samples_4000": { "aupr": p4, "auc": a4 },
        "paper_2000": { "aupr": 0.86, "auc": 0.93 },
        "paper_4000": { "aupr": 0.96, "auc": 0.99 },
    });
    outcome(
        p4 >= AUPR_MIN && a4 >= AUC_MIN && p4 >= p1 && a4 >= a1 && elapsed < SAMPLING_BUDGET,
        format!(
            "4000: AUPR {p4:.3} (>= {AUPR_MIN}) AUC {a4:.3} (>= {AUC_MIN}); 1000: AUPR {p1:.3} AUC {a1:.3}; {:.0}s",
            elapsed.as_secs_f64()
        ),
    )
}

fn criterion_5(t: &Trained) -> Outcome {
    let schema = &t.model.schema;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let means = marginal_means(schema);
    let mut worst_map: f64 = 0.0;
    let mut worst_mp: f64 = 0.0;
    for _ in 0..QUERIES {
        let i = rng.random_range(0..CHAIN_D - 1);
        let (tgt, nb) = if rng.random_bool(0.5) { (i + 1, i) } else { (i, i + 1) };
        let sn = schema.feature(nb).scaling();
        let v = sn.mean + sn.std * rng.random_range(-2.0..2.0);
        let mut known = means.clone();
        known.remove(&t.fx.names[tgt]);
        known.insert(t.fx.names[nb].clone(), Value::Number(v));
        let oracle_known: Vec<(usize, f64)> = known
            .iter()
            .map(|(k, v)| (schema.index_of(k).unwrap(), v.as_number().unwrap()))
            .collect();
        let oracle = t.fx.theta.conditional_mean(tgt, &oracle_known);
        let q = InferenceQuery::new(known, vec![t.fx.names[tgt].clone()]);
        let gm = gradient_map(&t.model, &q).unwrap().estimates[0]
            .value
            .as_number()
            .unwrap();
        let mp = message_passing(&t.model, &q).unwrap().estimates[0]
            .value
            .as_number()
            .unwrap();
        let st = schema.feature(tgt).scaling().std;
        worst_map = worst_map.max((gm - oracle).abs() / st);
        worst_mp = worst_mp.max((mp - gm).abs() / st);
    }
    outcome(
        worst_map < MAP_TOL && worst_mp < MP_TOL,
        format!("{QUERIES} queries: max |map - gaussian| {worst_map:.3} sd (< {MAP_TOL}), max |mp - map| {worst_mp:.3} sd (< {MP_TOL})"),
    )
}

// --------------------------------------------------------- small fixtures

fn criterion_6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst_sum: f64 = 0.0;
    let mut all_positive = true;
    for _ in 0..2000 {
        let n = rng.random_range(1..24);
        let raw: Vec<f64> = (0..n)
            .map(|_| match rng.random_range(0..10) {
                0 => f64::NAN,
                1 => -rng.random_range(0.0..3.0),
                2 => rng.random_range(1.0..5.0),
                _ => rng.random_range(0.0..1.0),
            })
            .collect();
        let p = clip_normalize(&raw, 1e-4);
        worst_sum = worst_sum.max((p.iter().sum::<f64>() - 1.0).abs());
        all_positive &= p.iter().all(|&v| v > 0.0);
    }

    let n = 2000;
    let a: Vec<usize> = (0..n).map(|_| rng.random_range(0..2)).collect();
    let b: Vec<usize> = a
        .iter()
        .map(|&v| if rng.random_bool(0.95) { v } else { 1 - v })
        .collect();
    let cats = vec!["no".to_string(), "yes".to_string()];
    let schema = FeatureSchema::new(vec![
        FeatureSpec::categorical("A", cats.clone()),
        FeatureSpec::categorical("B", cats.clone()),
    ])
    .unwrap();
    let ds = Dataset::new(
        schema,
        vec![Column::Categorical(a.clone()), Column::Categorical(b.clone())],
    )
    .unwrap();
    let g = DependencyGraph::from_named(&["A", "B"], &[("A", "B", EdgeKind::Undirected)]).unwrap();
    let cfg = TrainConfig {
        hidden: HiddenWidth::Units(8),
        epochs_init: 50,
        epochs: 100,
        seed: 6,
        ..TrainConfig::default()
    };
    let model = fit_ngm(&ds, &dependency_mask(&g).unwrap(), &cfg).unwrap();
    let mut worst_gap: f64 = 0.0;
    for (ai, an) in cats.iter().enumerate() {
        let rows: Vec<usize> = (0..n).filter(|&r| a[r] == ai).collect();
        let yes = rows.iter().filter(|&&r| b[r] == 1).count() as f64 / rows.len() as f64;
        let empirical = [1.0 - yes, yes];
        let mut known = BTreeMap::new();
        known.insert("A".to_string(), Value::Category(an.clone()));
        let q = InferenceQuery::new(known, vec!["B".into()]);
        let dist = conditional_distribution(&model, &q, "B", 1e-4).unwrap();
        worst_sum = worst_sum.max((dist.probabilities.iter().sum::<f64>() - 1.0).abs());
        all_positive &= dist.probabilities.iter().all(|&v| v > 0.0);
        for (p, e) in dist.probabilities.iter().zip(empirical) {
            worst_gap = worst_gap.max((p - e).abs());
        }
    }
    outcome(
        worst_sum <= SUM_TOL && all_positive && worst_gap <= COND_TOL,
        format!(
            "max |sum - 1| {worst_sum:.1e} (<= {SUM_TOL:e}), all positive {all_positive}, max |P(B|A) - counts| {worst_gap:.3} (<= {COND_TOL})"
        ),
    )
}

fn criterion_7() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let n = 1500;
    let classes: Vec<String> = (0..3).map(|k| format!("k{k}")).collect();
    let mut x1 = Vec::with_capacity(n);
    let mut c1 = Vec::with_capacity(n);
    let mut c2 = Vec::with_capacity(n);
    let mut x2 = Vec::with_capacity(n);
    for _ in 0..n {
        let v: f64 = rng.random_range(-1.5..1.5);
        let k = if v < -0.5 {
            0
        } else if v < 0.5 {
            1
        } else {
            2
        };
        let k2 = (k + 1) % 3;
        x1.push(v);
        c1.push(k);
        c2.push(k2);
        x2.push(k2 as f64 + rng.random_range(-0.3..0.3));
    }
    let schema = FeatureSchema::new(vec![
        FeatureSpec::continuous("x1"),
        FeatureSpec::categorical("c1", classes.clone()),
        FeatureSpec::categorical("c2", classes.clone()),
        FeatureSpec::continuous("x2"),
    ])
    .unwrap();
    let ds = Dataset::new(
        schema,
        vec![
            Column::Numeric(x1),
            Column::Categorical(c1.clone()),
            Column::Categorical(c2.clone()),
            Column::Numeric(x2),
        ],
    )
    .unwrap();
    let g = DependencyGraph::from_named(
        &["x1", "c1", "c2", "x2"],
        &[
            ("x1", "c1", EdgeKind::Undirected),
            ("c1", "c2", EdgeKind::Undirected),
            ("c2", "x2", EdgeKind::Undirected),
        ],
    )
    .unwrap();
    let cfg = TrainConfig {
        hidden: HiddenWidth::Units(16),
        epochs_init: 100,
        epochs: 200,
        seed: 7,
        ..TrainConfig::default()
    };
    let schema = ds.schema().fit(&ds, cfg.bins).unwrap();
    let x = schema.encode(&ds).unwrap();
    let spec = build_projection(&schema).unwrap();
    let model = ngm::projections::fit_ngm_generic(&x, &schema, &dependency_mask(&g).unwrap(), &spec, &cfg).unwrap();
    let ratio = model.feature_masked_ratio();
    let widths = schema.unit_widths();
    let out = holdout_predict(&model.params, &x, &feature_blocks(&widths, &widths)).unwrap();
    let offsets = schema.unit_offsets();
    let accuracy = |j: usize, truth: &[usize]| {
        let o = offsets[j];
        let hits = (0..n)
            .filter(|&r| {
                let block: Vec<f64> = (0..3).map(|k| out[(r, o + k)]).collect();
                let best = (0..3).max_by(|&p, &q| block[p].total_cmp(&block[q])).unwrap();
                best == truth[r]
            })
            .count();
        hits as f64 / n as f64
    };
    let (acc1, acc2) = (accuracy(1, &c1), accuracy(2, &c2));
    let elapsed = start.elapsed();
    outcome(
        ratio < RATIO_MAX && acc1.min(acc2) >= ACCURACY_MIN && elapsed < FIT_BUDGET,
        format!(
            "feature-block ratio {ratio:.4} (< {RATIO_MAX}), accuracy c1 {acc1:.3} c2 {acc2:.3} (>= {ACCURACY_MIN}), {:.0}s",
            elapsed.as_secs_f64()
        ),
    )
}

// -------------------------------------------------------------------- CLI

fn ngm(dir: &Path, args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_ngm"))
        .current_dir(dir)
        .env_remove("NGM_THREADS")
        .arg("--threads")
        .arg("1")
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!(
            "`ngm {}` exited {:?}: {}",
            args.join(" "),
            out.status.code(),
            String::from_utf8_lossy(&out.stderr)
        ));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn read_json(path: &Path) -> Json {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

/// Runs every subcommand in `dir` and returns the primary outputs by name.
fn small_pipeline(dir: &Path) -> Result<BTreeMap<String, Vec<u8>>, String> {
    let mut outputs = BTreeMap::new();
    ngm(
        dir,
        &[
            "synth",
            "--nodes",
            "5",
            "--samples",
            "300",
            "--seed",
            "11",
            "--out",
            "d",
        ],
    )?;
    ngm(
        dir,
        &[
            "train",
            "--data",
            "d/data.csv",
            "--graph",
            "d/graph.edges",
            "--hidden",
            "10",
            "--epochs-init",
            "20",
            "--epochs",
            "20",
            "--bins",
            "6",
            "--seed",
            "11",
            "--out",
            "m.ngm",
        ],
    )?;
    ngm(
        dir,
        &[
            "sample", "--model", "m.ngm", "--count", "150", "--seed", "11", "--out", "s.csv",
        ],
    )?;
    outputs.insert("infer gradient".into(), {
        let args = [
            "infer",
            "--model",
            "m.ngm",
            "--known",
            "x1=0.3",
            "--targets",
            "x2,x3",
            "--distribution",
        ];
        ngm(dir, &args)?.into_bytes()
    });
    outputs.insert("infer mp".into(), {
        let args = [
            "infer",
            "--model",
            "m.ngm",
            "--known",
            "x1=0.3",
            "--targets",
            "x2",
            "--method",
            "mp",
        ];
        ngm(dir, &args)?.into_bytes()
    });
    outputs.insert(
        "eval".into(),
        ngm(dir, &["eval", "--true", "d/graph.edges", "--samples", "s.csv"])?.into_bytes(),
    );
    ngm(
        dir,
        &[
            "plot-dependency",
            "--model",
            "m.ngm",
            "--pair",
            "x2,x1",
            "--out",
            "c.csv,c.svg",
        ],
    )?;
    for f in [
        "d/theta.csv",
        "d/data.csv",
        "d/graph.edges",
        "m.ngm",
        "m.ngm.json",
        "s.csv",
        "c.csv",
        "c.svg",
    ] {
        outputs.insert(f.into(), std::fs::read(dir.join(f)).map_err(|e| format!("{f}: {e}"))?);
    }
    Ok(outputs)
}

fn criterion_8() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    std::fs::create_dir_all(&a).unwrap();
    std::fs::create_dir_all(&b).unwrap();
    let run = small_pipeline(&a).and_then(|x| small_pipeline(&b).map(|y| (x, y)));
    match run {
        Err(e) => outcome(false, e),
        Ok((x, y)) => {
            let differing: Vec<&String> = x.keys().filter(|k| x[*k] != y[*k]).collect();
            outcome(
                differing.is_empty(),
                format!("{} outputs compared across two runs, differing: {differing:?}", x.len()),
            )
        }
    }
}

fn criterion_9(metrics: &mut Json, dir: &Path) -> Outcome {
    let run = || -> Result<Json, String> {
        let seed = CHAIN_SEED.to_string();
        let h = CHAIN_H.to_string();
        ngm(
            dir,
            &[
                "synth",
                "--nodes",
                "10",
                "--samples",
                "2000",
                "--seed",
                &seed,
                "--out",
                "chain",
            ],
        )?;
        ngm(
            dir,
            &[
                "train",
                "--data",
                "chain/data.csv",
                "--graph",
                "chain/graph.edges",
                "--hidden",
                &h,
                "--layers",
                "2",
                "--seed",
                &seed,
                "--baseline",
                "--out",
                "chain.ngm",
            ],
        )?;
        let mut recovery = json!({});
        for count in ["1000", "4000"] {
            let samples = format!("samples_{count}.csv");
            let scores = format!("eval_{count}.json");
            ngm(
                dir,
                &[
                    "sample",
                    "--model",
                    "chain.ngm",
                    "--count",
                    count,
                    "--seed",
                    &seed,
                    "--out",
                    &samples,
                ],
            )?;
            ngm(
                dir,
                &[
                    "eval",
                    "--true",
                    "chain/graph.edges",
                    "--samples",
                    &samples,
                    "--out",
                    &scores,
                ],
            )?;
            let m = read_json(&dir.join(&scores));
            recovery[count] = json!({ "aupr": m["aupr"], "auc": m["auc"] });
        }
        let synth = read_json(&dir.join("chain/manifest.json"));
        let mut curves = Vec::new();
        for (i, edge) in synth["results"]["edges"].as_array().unwrap().iter().enumerate() {
            let (src, dst) = (edge["source"].as_str().unwrap(), edge["target"].as_str().unwrap());
            let csv = format!("curve_{dst}_{src}.csv");
            let out = if i == 0 {
                format!("{csv},curve_{dst}_{src}.svg")
            } else {
                csv.clone()
            };
            ngm(
                dir,
                &[
                    "plot-dependency",
                    "--model",
                    "chain.ngm",
                    "--pair",
                    &format!("{dst},{src}"),
                    "--out",
                    &out,
                ],
            )?;
            let r = &read_json(&dir.join(format!("{csv}.manifest.json")))["results"];
            let pc = edge["partial_correlation"].as_f64().unwrap();
            let slope = r["slope"].as_f64().unwrap();
            curves.push(json!({
                "target": dst,
                "neighbor": src,
                "slope": slope,
                "r2": r["r2"],
                "partial_correlation": pc,
                "sign_correct": slope.signum() == pc.signum(),
            }));
        }
        let train = read_json(&dir.join("chain.ngm.manifest.json"));
        Ok(json!({
            "structure": {
                "masked_ratio": train["results"]["model"]["masked_ratio"],
                "regression_loss": train["results"]["model"]["losses"]["regression"],
                "baseline_regression_loss": train["results"]["baseline"]["losses"]["regression"],
                "loss_factor": train["results"]["regression_ratio"],
            },
            "dependency_curves": curves,
            "recovery": recovery,
        }))
    };
    match run() {
        Err(e) => outcome(false, e),
        Ok(m) => {
            let complete = m["structure"].as_object().unwrap().values().all(Json::is_number)
                && m["dependency_curves"].as_array().unwrap().len() == CHAIN_D - 1
                && ["1000", "4000"]
                    .iter()
                    .all(|c| m["recovery"][c]["aupr"].is_number() && m["recovery"][c]["auc"].is_number());
            let summary = format!(
                "ratio {:.4}, loss factor {:.3}, signs {}/9, AUPR/AUC 1000 {:.3}/{:.3}, 4000 {:.3}/{:.3}",
                m["structure"]["masked_ratio"].as_f64().unwrap_or(f64::NAN),
                m["structure"]["loss_factor"].as_f64().unwrap_or(f64::NAN),
                m["dependency_curves"]
                    .as_array()
                    .unwrap()
                    .iter()
                    .filter(|c| c["sign_correct"] == true)
                    .count(),
                m["recovery"]["1000"]["aupr"].as_f64().unwrap_or(f64::NAN),
                m["recovery"]["1000"]["auc"].as_f64().unwrap_or(f64::NAN),
                m["recovery"]["4000"]["aupr"].as_f64().unwrap_or(f64::NAN),
                m["recovery"]["4000"]["auc"].as_f64().unwrap_or(f64::NAN),
            );
            metrics["criterion_9"] = m;
            outcome(
                complete,
                format!("pipeline exited 0; metrics complete {complete}; {summary}"),
            )
        }
    }
}

// ------------------------------------------------------------------ runner

fn run(id: usize, name: &str, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let o = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        let msg = e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        outcome(false, format!("panicked: {msg}"))
    });
    println!(
        "criterion {id} {} {name} [{:.0}s]: {}",
        if o.pass { "PASS" } else { "FAIL" },
        start.elapsed().as_secs_f64(),
        o.detail
    );
    o.pass
}

fn main() {
    // `cargo test -- --list` and name filters come through as arguments
    if std::env::args().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    let out_dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    let _ = std::fs::remove_dir_all(&out_dir);
    std::fs::create_dir_all(&out_dir).unwrap();
    let mut metrics = json!({});
    let mut results = Vec::new();

    results.push(run(1, "gradient correctness", criterion_1));

    let start = Instant::now();
    let fx = chain(CHAIN_SEED);
    let trained = catch_unwind(AssertUnwindSafe(|| {
        let s = dependency_mask(&fx.graph).unwrap();
        fit_ngm(&fx.data, &s, &chain_config(CHAIN_SEED)).unwrap()
    }));
    let fit_time = start.elapsed();
    let mut trained = trained.ok().map(|model| Trained { fx, model, fit_time });
    let missing = || outcome(false, "chain fixture failed to train");

    results.push(run(2, "structure adherence", || match &trained {
        Some(t) => criterion_2(t, &mut metrics),
        None => missing(),
    }));
    results.push(run(3, "dependency linearity and sign", || criterion_3(&mut metrics)));
    results.push(run(4, "sampling fidelity", || match trained.as_mut() {
        Some(t) => criterion_4(t, &mut metrics),
        None => missing(),
    }));
    results.push(run(5, "inference oracle", || match &trained {
        Some(t) => criterion_5(t),
        None => missing(),
    }));
    results.push(run(6, "conditional distributions", criterion_6));
    results.push(run(7, "mixed-type training", criterion_7));
    results.push(run(8, "cli determinism", criterion_8));
    results.push(run(9, "end-to-end pipeline", || criterion_9(&mut metrics, &out_dir)));

    let passed = results.iter().filter(|&&p| p).count();
    metrics["passed"] = json!(passed);
    metrics["total"] = json!(results.len());
    let path = out_dir.join("metrics.json");
    std::fs::write(&path, serde_json::to_string_pretty(&metrics).unwrap() + "\n").unwrap();
    println!(
        "acceptance: {passed}/{} criteria passed; metrics in {}",
        results.len(),
        path.display()
    );
    if passed != results.len() {
        std::process::exit(1);
    }
}
