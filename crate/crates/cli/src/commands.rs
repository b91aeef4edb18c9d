use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value as Json};

use ngm::data::{load_csv, Dataset, FeatureSchema};
use ngm::graph::{dependency_mask, mask_graph, DependencyGraph, DependencyMask};
use ngm::inference::{
    conditional_distribution, gradient_map, message_passing, parse_assignments, InferenceQuery, TargetEstimate,
    DEFAULT_EPS_CLIP,
};
use ngm::learning::{fit_ngm, NgmModel, TrainConfig};
use ngm::model_io::{load_model, save_model, sidecar_path};
use ngm::projections::{build_projection, fit_ngm_generic};
use ngm::sampling::{sample_batch, SamplerConfig};
use ngm::synth::{
    adjacency_matrix, chain_precision, dependency_curve, feature_names, linear_fit, partial_correlation,
    precision_graph, recovery_oracle, sample_mvn, score_recovery, sigma_grid,
};

use crate::manifest::{manifest_path, write_json, Recorder};
use crate::{EvalArgs, InferArgs, Method, PlotArgs, SampleArgs, SynthArgs, TrainArgs, UserError};

fn user(msg: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(UserError(msg.into()))
}

/// Prints to stdout; a closed pipe (`ngm eval ... | head`) is not an error.
fn emit(text: &str) -> anyhow::Result<()> {
    use std::io::Write;
    match writeln!(std::io::stdout().lock(), "{text}") {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        r => Ok(r?),
    }
}

fn train_config(a: &TrainArgs) -> TrainConfig {
    let d = TrainConfig::default();
    TrainConfig {
        hidden: a.hidden.unwrap_or(d.hidden),
        layers: a.layers.unwrap_or(d.layers),
        epochs_init: a.epochs_init.unwrap_or(d.epochs_init),
        epochs: a.epochs.unwrap_or(d.epochs),
        batch_size: a.batch_size.unwrap_or(d.batch_size),
        lambda: a.lambda.unwrap_or(d.lambda),
        binned_lambda: a.binned_lambda.unwrap_or(d.binned_lambda),
        norm: a.norm.unwrap_or(d.norm),
        learning_rate: a.learning_rate.unwrap_or(d.learning_rate),
        validation_split: a.validation_split.unwrap_or(d.validation_split),
        bins: a.bins.unwrap_or(d.bins),
        seed: a.seed,
        self_dependency: a.self_dependency,
        ..d
    }
}

fn fit(data: &Dataset, s: &DependencyMask, cfg: &TrainConfig, projections: bool) -> ngm::Result<NgmModel> {
    if !projections {
        return fit_ngm(data, s, cfg);
    }
    let schema = data.schema().fit(data, cfg.bins)?;
    let x = schema.encode(data)?;
    let spec = build_projection(&schema)?;
    fit_ngm_generic(&x, &schema, s, &spec, cfg)
}

fn model_summary(m: &NgmModel) -> Json {
    json!({
        "losses": m.losses,
        "masked_ratio": m.masked_ratio(),
        "feature_masked_ratio": m.feature_masked_ratio(),
        "best_epoch": m.history.best_epoch,
        "initial_regression": m.history.initial_regression,
        "proximal_regression": m.history.proximal_regression,
        "final_lambda": m.lambda_trace().last(),
    })
}

pub fn train(a: TrainArgs) -> anyhow::Result<()> {
    let rec = Recorder::start("train");
    let cfg = train_config(&a);
    cfg.validate()?;
    let schema = a.schema.as_deref().map(FeatureSchema::load).transpose()?;
    let data = load_csv(&a.data, schema.as_ref())?;
    let names = data.schema().names();
    let graph = DependencyGraph::load(&a.graph, &names)?;
    let s = dependency_mask(&graph)?;

    log::info!("fitting {} rows x {} features", data.rows(), names.len());
    let mut model = fit(&data, &s, &cfg, a.projections)?;
    if !a.no_binned && model.schema.features().iter().any(|f| f.is_numeric()) {
        log::info!("fitting binned variant");
        ngm::inference::attach_binned_variant(&mut model, &data)?;
    }
    save_model(&model, &a.out)?;

    let mut results = json!({ "model": model_summary(&model) });
    if let Some(b) = model.binned.as_deref() {
        results["binned"] = model_summary(b);
    }
    if a.baseline {
        log::info!("fitting full-graph baseline");
        let full = DependencyMask::square(&names, |i, j| i != j);
        let base = fit(&data, &full, &cfg, a.projections)?;
        results["baseline"] = model_summary(&base);
        results["regression_ratio"] = json!(model.losses.regression / base.losses.regression);
    }
    let config = json!({
        "train": cfg,
        "data": a.data,
        "schema": a.schema,
        "graph": a.graph,
        "projections": a.projections,
        "binned": model.binned.is_some(),
        "baseline": a.baseline,
    });
    let outputs = vec![a.out.clone(), sidecar_path(&a.out)];
    write_json(
        &manifest_path(&a.out),
        &rec.finish(Some(a.seed), config, outputs, results),
    )
}

fn estimates_json(estimates: &[TargetEstimate]) -> Json {
    Json::Object(estimates.iter().map(|e| (e.feature.clone(), json!(e.value))).collect())
}

pub fn infer(a: InferArgs) -> anyhow::Result<()> {
    let rec = Recorder::start("infer");
    let model = load_model(&a.model)?;
    let known = parse_assignments(&a.known, &model.schema)?;
    let targets: Vec<String> = a
        .targets
        .iter()
        .map(|t| t.trim().to_string())
        .filter(|t| !t.is_empty())
        .collect();
    if targets.is_empty() {
        return Err(user("--targets names no features"));
    }
    let mut q = InferenceQuery::new(known, targets.clone());
    if let Some(n) = a.max_iterations {
        q.max_iterations = n;
    }
    q.validate(&model.schema)?;

    let mut out = match a.method {
        Method::Gradient => {
            let r = gradient_map(&model, &q)?;
            json!({
                "method": "gradient",
                "assignments": estimates_json(&r.estimates),
                "estimates": r.estimates,
                "diagnostics": {
                    "converged": r.converged,
                    "iterations": r.iterations,
                    "loss": r.loss,
                    "initial_loss": r.initial_loss,
                },
            })
        }
        Method::Mp => {
            let r = message_passing(&model, &q)?;
            json!({
                "method": "mp",
                "assignments": estimates_json(&r.estimates),
                "estimates": r.estimates,
                "diagnostics": {
                    "converged": r.converged,
                    "iterations": r.iterations,
                    "distances": r.distances,
                    "warning": r.warning,
                },
            })
        }
    };
    if a.distribution {
        let dists = targets
            .iter()
            .map(|t| conditional_distribution(&model, &q, t, DEFAULT_EPS_CLIP))
            .collect::<ngm::Result<Vec<_>>>()?;
        out["distributions"] = json!(dists);
    }

    let text = serde_json::to_string_pretty(&out)?;
    match &a.out {
        Some(path) => {
            std::fs::write(path, text + "\n").with_context(|| format!("cannot write {}", path.display()))?;
            let config = json!({
                "model": a.model,
                "known": a.known,
                "targets": targets,
                "method": if a.method == Method::Gradient { "gradient" } else { "mp" },
                "distribution": a.distribution,
                "max_iterations": q.max_iterations,
            });
            let converged = out["diagnostics"]["converged"].clone();
            write_json(
                &manifest_path(path),
                &rec.finish(None, config, vec![path.clone()], json!({ "converged": converged })),
            )?;
        }
        None => emit(&text)?,
    }
    Ok(())
}

pub fn sample(a: SampleArgs) -> anyhow::Result<()> {
    let rec = Recorder::start("sample");
    let model = load_model(&a.model)?;
    let graph = match &a.graph {
        Some(p) => DependencyGraph::load(p, &model.schema.names())?,
        None => mask_graph(&model.feature_mask)?,
    };
    let cfg = SamplerConfig {
        count: a.count,
        ordering: a.ordering,
        seed: a.seed,
        presets: parse_assignments(&a.preset, &model.schema)?,
        ..SamplerConfig::default()
    };
    let table = sample_batch(&model, &graph, &cfg)?;
    for w in &table.warnings {
        log::warn!("{w}");
    }
    table.data.save_csv(&a.out)?;
    let config = json!({
        "model": a.model,
        "graph": a.graph,
        "sampler": cfg,
    });
    let results = json!({ "rows": table.data.rows(), "warnings": table.warnings });
    write_json(
        &manifest_path(&a.out),
        &rec.finish(Some(a.seed), config, vec![a.out.clone()], results),
    )
}

fn matrix_csv(names: &[String], m: &nalgebra::DMatrix<f64>, path: &Path) -> anyhow::Result<()> {
    Dataset::from_matrix(names, m)?.save_csv(path)?;
    Ok(())
}

pub fn synth(a: SynthArgs) -> anyhow::Result<()> {
    let rec = Recorder::start("synth");
    if a.nodes < 2 {
        return Err(user("--nodes must be at least 2"));
    }
    if a.samples < 2 {
        return Err(user("--samples must be at least 2"));
    }
    std::fs::create_dir_all(&a.out).with_context(|| format!("cannot create {}", a.out.display()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let theta = chain_precision(a.nodes, &mut rng)?;
    let data = sample_mvn(&theta, a.samples, &mut rng)?;
    let names = feature_names(a.nodes);
    let graph = precision_graph(&theta, &names)?;

    let theta_path = a.out.join("theta.csv");
    let data_path = a.out.join("data.csv");
    let graph_path = a.out.join("graph.edges");
    matrix_csv(&names, theta.matrix(), &theta_path)?;
    data.save_csv(&data_path)?;
    std::fs::write(&graph_path, graph.to_edge_list())
        .with_context(|| format!("cannot write {}", graph_path.display()))?;

    let pc = partial_correlation(&theta);
    let edges: Vec<Json> = graph
        .edges()
        .iter()
        .map(|e| {
            json!({
                "source": names[e.source],
                "target": names[e.target],
                "partial_correlation": pc[(e.source, e.target)],
            })
        })
        .collect();
    let config = json!({ "nodes": a.nodes, "samples": a.samples, "seed": a.seed });
    let outputs = vec![theta_path, data_path, graph_path];
    write_json(
        &a.out.join("manifest.json"),
        &rec.finish(Some(a.seed), config, outputs, json!({ "edges": edges })),
    )
}

pub fn eval(a: EvalArgs) -> anyhow::Result<()> {
    let rec = Recorder::start("eval");
    let data = load_csv(&a.samples, None)?;
    if let Some(f) = data.schema().features().iter().find(|f| f.is_categorical()) {
        bail!(user(format!("column `{}` is not numeric", f.name)));
    }
    if data.rows() < 2 {
        return Err(user("need at least 2 sample rows"));
    }
    let names = data.schema().names();
    let truth = DependencyGraph::load(&a.truth, &names)?;
    let scores = recovery_oracle(&data.to_matrix(), a.ridge)?;
    let metrics = score_recovery(&adjacency_matrix(&truth), &scores)?;
    let summary = json!({ "aupr": metrics.aupr, "auc": metrics.auc, "rows": data.rows() });
    emit(&serde_json::to_string_pretty(&summary)?)?;
    if let Some(path) = &a.out {
        write_json(path, &metrics)?;
        let config = json!({ "true": a.truth, "samples": a.samples, "ridge": a.ridge });
        write_json(
            &manifest_path(path),
            &rec.finish(None, config, vec![path.clone()], summary),
        )?;
    }
    Ok(())
}

pub fn plot_dependency(a: PlotArgs) -> anyhow::Result<()> {
    let rec = Recorder::start("plot-dependency");
    let [target, neighbor] = a.pair.as_slice() else {
        return Err(user("--pair takes exactly two features, `target,neighbor`"));
    };
    let (csv_path, svg_path): (PathBuf, Option<PathBuf>) = match a.out.as_slice() {
        [c] => (c.clone(), None),
        [c, s] => (c.clone(), Some(s.clone())),
        _ => return Err(user("--out takes `curve.csv` or `curve.csv,curve.svg`")),
    };
    if a.points < 2 {
        return Err(user("--points must be at least 2"));
    }
    if !(a.sigmas > 0.0 && a.sigmas.is_finite()) {
        return Err(user("--sigmas must be positive"));
    }
    let model = load_model(&a.model)?;
    let grid = sigma_grid(&model.schema, neighbor, a.sigmas, a.points)?;
    let curve = dependency_curve(&model, target, neighbor, &grid)?;
    let (slope, r2) = linear_fit(&curve);

    let mut text = format!("{neighbor},{target}\n");
    for (x, y) in &curve {
        text.push_str(&format!("{x},{y}\n"));
    }
    std::fs::write(&csv_path, text).with_context(|| format!("cannot write {}", csv_path.display()))?;
    let mut outputs = vec![csv_path.clone()];
    if let Some(p) = &svg_path {
        let title = format!("{target} vs {neighbor} (slope {slope:.3}, R² {r2:.3})");
        std::fs::write(p, crate::svg::line_plot(&curve, neighbor, target, &title))
            .with_context(|| format!("cannot write {}", p.display()))?;
        outputs.push(p.clone());
    }
    let config = json!({
        "model": a.model,
        "target": target,
        "neighbor": neighbor,
        "points": a.points,
        "sigmas": a.sigmas,
    });
    let results = json!({ "slope": slope, "r2": r2, "grid": [grid.first(), grid.last()] });
    write_json(&manifest_path(&csv_path), &rec.finish(None, config, outputs, results))?;
    Ok(())
}
