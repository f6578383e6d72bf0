//! One driver per subcommand. Each returns the files it wrote.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use omm_core::data_io::{generate_synthetic, load_dataset, load_model, save_dataset, save_model, DatasetBundle};
use omm_core::estimation::{fit_group, parameter_groups, FitResult, OptimDiagnostics};
use omm_core::evaluation::{evaluate_model, run_holdout, HoldoutOptions, HoldoutSplit};
use omm_core::intervention::{elasticities, whatif_sweep, Progress, WhatIfResult, WhatIfScenario};
use omm_core::simulation::{predict, simulate_replicate, SimulationSpec};
use omm_core::{CountPanel, OmmError, OmmModel, Result};
use serde::Serialize;

use crate::cli::{
    Command, ElasticityArgs, EvalArgs, FitArgs, GlobalArgs, ServeArgs, SimulateArgs, SynthArgs, WhatifArgs,
};
use crate::config::RunRecord;
use crate::output::{cell, OutputDir};

fn stage(name: &'static str) -> impl FnOnce(OmmError) -> OmmError {
    move |e| e.in_stage(name)
}

/// Runs one parsed command.
pub fn execute(global: &GlobalArgs, command: &Command, run: &RunRecord) -> Result<Vec<PathBuf>> {
    if let Command::Serve(args) = command {
        serve(global, args, run)?;
        return Ok(Vec::new());
    }
    let mut out = OutputDir::create(&global.out).map_err(stage("output"))?;
    match command {
        Command::Synth(a) => synth(a, run, &mut out),
        Command::Fit(a) => fit(a, run, &mut out),
        Command::Eval(a) => eval(a, run, &mut out),
        Command::Simulate(a) => simulate(a, run, &mut out),
        Command::Elasticity(a) => elasticity(a, run, &mut out),
        Command::Whatif(a) => whatif(a, run, &mut out),
        Command::Serve(_) => unreachable!(),
    }?;
    Ok(out.written().to_vec())
}

// ---------------------------------------------------------------- inputs

/// Dataset directories under `roots`: a root holding `manifest.json` is a
/// dataset, otherwise its subdirectories are searched, in name order.
pub fn expand_datasets(roots: &[PathBuf]) -> Result<Vec<PathBuf>> {
    fn walk(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
        if dir.join("manifest.json").is_file() {
            out.push(dir.to_path_buf());
            return Ok(());
        }
        let entries = fs::read_dir(dir).map_err(|e| OmmError::Io {
            path: dir.to_path_buf(),
            source: e,
        })?;
        let mut subdirs: Vec<PathBuf> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_dir())
            .collect();
        subdirs.sort();
        for sub in subdirs {
            walk(&sub, out)?;
        }
        Ok(())
    }
    let mut out = Vec::new();
    for root in roots {
        let before = out.len();
        walk(root, &mut out)?;
        if out.len() == before {
            return Err(OmmError::InvalidParameter(format!(
                "{}: no dataset (manifest.json) found",
                root.display()
            )));
        }
    }
    Ok(out)
}

fn strip_interventions(bundle: &mut DatasetBundle) {
    bundle.signals = bundle.signals.without_interventions();
    bundle.interventions.clear();
}

fn load_bundle(path: &Path, no_interventions: bool) -> Result<DatasetBundle> {
    let mut bundle = load_dataset(path)?;
    if no_interventions {
        strip_interventions(&mut bundle);
    }
    Ok(bundle)
}

/// A model with its dataset. A model fitted without interventions drops the
/// dataset's intervention series.
pub fn load_model_and_data(model: &Path, data: &Path, no_interventions: bool) -> Result<(FitResult, DatasetBundle)> {
    let fit = load_model(model).map_err(stage("load model"))?;
    let mut bundle = load_bundle(data, no_interventions).map_err(stage("load data"))?;
    if fit.model.interventions() == 0 && !bundle.interventions.is_empty() {
        log::info!("model has no intervention terms; ignoring the dataset's interventions");
        strip_interventions(&mut bundle);
    }
    check_compatible(&fit.model, &bundle).map_err(stage("load data"))?;
    Ok((fit, bundle))
}

fn check_compatible(model: &OmmModel, bundle: &DatasetBundle) -> Result<()> {
    let d = bundle.dimensions();
    if (d.platforms, d.opinions, d.interventions) != (model.platforms(), model.opinions(), model.interventions()) {
        return Err(OmmError::DimensionMismatch(format!(
            "dataset is {}×{}×{} (platforms×opinions×interventions), model is {}×{}×{}",
            d.platforms,
            d.opinions,
            d.interventions,
            model.platforms(),
            model.opinions(),
            model.interventions()
        )));
    }
    Ok(())
}

fn single_dataset(roots: &[PathBuf]) -> Result<PathBuf> {
    let mut found = expand_datasets(roots)?;
    if found.len() != 1 {
        return Err(OmmError::InvalidParameter(format!(
            "expected one dataset, found {}",
            found.len()
        )));
    }
    Ok(found.remove(0))
}

/// Labels carried into reports so tables are readable without the dataset.
#[derive(Debug, Clone, Serialize)]
pub struct Labels {
    pub platforms: Vec<String>,
    pub opinions: Vec<String>,
    pub interventions: Vec<String>,
}

impl Labels {
    pub fn of(bundle: &DatasetBundle) -> Self {
        Self {
            platforms: bundle.platforms.clone(),
            opinions: bundle.opinions.clone(),
            interventions: bundle.interventions.clone(),
        }
    }
}

fn display(path: &Path) -> String {
    path.display().to_string()
}

// ---------------------------------------------------------------- synth

#[derive(Serialize)]
struct SynthReport<'a> {
    labels: Labels,
    truth: &'a OmmModel,
    datasets: Vec<String>,
}

fn synth(_args: &SynthArgs, run: &RunRecord, out: &mut OutputDir) -> Result<()> {
    let config = &run.config.synthetic;
    let data = generate_synthetic(config).map_err(stage("generate"))?;
    let bundles = data.bundles().map_err(stage("generate"))?;
    let (gw, sw) = (digits(config.n_groups), digits(config.n_samples));
    let mut datasets = Vec::with_capacity(bundles.len());
    for (n, bundle) in bundles.iter().enumerate() {
        let (g, s) = (n / config.n_samples, n % config.n_samples);
        let rel = format!("group{g:0gw$}/sample{s:0sw$}");
        save_dataset(bundle, out.path(&rel)).map_err(stage("write datasets"))?;
        datasets.push(rel);
    }
    let report = SynthReport {
        labels: Labels::of(&bundles[0]),
        truth: &data.truth,
        datasets,
    };
    out.report("truth.json", "omm.truth", run, report)
}

fn digits(n: usize) -> usize {
    n.saturating_sub(1).max(1).to_string().len().max(2)
}

// ---------------------------------------------------------------- fit

#[derive(Serialize)]
struct FitReport<'a> {
    datasets: Vec<String>,
    labels: Labels,
    samples: usize,
    converged: bool,
    loglik1: f64,
    loglik2: f64,
    tier1: &'a OptimDiagnostics,
    tier2: &'a OptimDiagnostics,
    warnings: &'a [String],
    parameters: BTreeMap<&'static str, Vec<f64>>,
}

fn fit(args: &FitArgs, run: &RunRecord, out: &mut OutputDir) -> Result<()> {
    let paths = expand_datasets(&args.data.data).map_err(stage("load data"))?;
    let bundles = paths
        .iter()
        .map(|p| load_bundle(p, run.no_interventions))
        .collect::<Result<Vec<_>>>()
        .map_err(stage("load data"))?;
    let first = &bundles[0];
    for (path, b) in paths.iter().zip(&bundles).skip(1) {
        if b.signals != first.signals || b.platforms != first.platforms || b.opinions != first.opinions {
            return Err(OmmError::DimensionMismatch(format!(
                "{} differs from {} in labels or signals; jointly fitted panels must share them",
                path.display(),
                paths[0].display()
            ))
            .in_stage("load data"));
        }
    }
    let panels: Vec<CountPanel> = bundles.iter().map(|b| b.counts.clone()).collect();
    let result = fit_group(&first.signals, &panels, &run.config.fit).map_err(stage("fit"))?;
    let model_path = out.path("model.json");
    save_model(&result, &model_path).map_err(stage("write model"))?;
    out.note(model_path);
    let report = FitReport {
        datasets: paths.iter().map(|p| display(p)).collect(),
        labels: Labels::of(first),
        samples: result.samples,
        converged: result.converged,
        loglik1: result.loglik1,
        loglik2: result.loglik2,
        tier1: &result.tier1,
        tier2: &result.tier2,
        warnings: &result.warnings,
        parameters: parameter_groups(&result.model).into_iter().collect(),
    };
    out.report("fit_report.json", "omm.fit_report", run, report)
}

// ---------------------------------------------------------------- eval

fn eval(args: &EvalArgs, run: &RunRecord, out: &mut OutputDir) -> Result<()> {
    let path = single_dataset(&args.data.data).map_err(stage("load data"))?;
    let options = HoldoutOptions {
        fit: run.config.fit.clone(),
        replicates: run.config.replicates,
        seed: run.seed,
        kl_form: run.config.kl_form,
        share_aggregation: run.config.share_aggregation,
        no_interventions: run.no_interventions,
    };
    let (report, bundle) = match &args.model {
        Some(model) => {
            let (fit, bundle) = load_model_and_data(model, &path, run.no_interventions)?;
            let split = HoldoutSplit::new(args.obs_end, args.pred_end.unwrap_or(bundle.counts.bins()))
                .map_err(stage("split"))?;
            let report = evaluate_model(&fit.model, &bundle.signals, &bundle.counts, split, &options)
                .map_err(stage("evaluate"))?;
            (report, bundle)
        }
        None => {
            let bundle = load_bundle(&path, false).map_err(stage("load data"))?;
            let split = HoldoutSplit::new(args.obs_end, args.pred_end.unwrap_or(bundle.counts.bins()))
                .map_err(stage("split"))?;
            let report =
                run_holdout(&bundle.signals, &bundle.counts, split, &options).map_err(stage("evaluate"))?;
            (report, bundle)
        }
    };
    let start = report.split.obs_end + 1;
    let mut kl_rows = Vec::new();
    for (p, row) in report.kl.iter().enumerate() {
        for (step, v) in row.iter().enumerate() {
            kl_rows.push(vec![bundle.platforms[p].clone(), (start + step).to_string(), cell(*v)]);
        }
    }
    out.table("kl_series.csv", &["platform", "time", "kl"], kl_rows)?;
    let mut vol_rows = Vec::new();
    for p in 0..report.actual_volumes.nrows() {
        for step in 0..report.actual_volumes.ncols() {
            vol_rows.push(vec![
                bundle.platforms[p].clone(),
                (start + step).to_string(),
                report.actual_volumes[[p, step]].to_string(),
                report.prediction.volumes[[p, step]].to_string(),
            ]);
        }
    }
    out.table("volumes.csv", &["platform", "time", "actual", "predicted"], vol_rows)?;
    #[derive(Serialize)]
    struct Body<'a> {
        dataset: String,
        labels: Labels,
        holdout: &'a omm_core::evaluation::HoldoutReport,
    }
    let body = Body {
        dataset: display(&path),
        labels: Labels::of(&bundle),
        holdout: &report,
    };
    out.report("holdout.json", "omm.holdout", run, body)
}

// ---------------------------------------------------------------- simulate

fn simulate(args: &SimulateArgs, run: &RunRecord, out: &mut OutputDir) -> Result<()> {
    let (fit, bundle) = load_model_and_data(&args.model.model, &args.data, run.no_interventions)?;
    let end = args.end.unwrap_or(bundle.signals.bins());
    let history = if args.history == 0 {
        CountPanel::zeros(bundle.platforms.len(), bundle.opinions.len(), 0)
    } else {
        bundle.counts.truncated(args.history).map_err(stage("history"))?
    };
    let mut spec = SimulationSpec::new(
        fit.model.clone(),
        bundle.signals.clone(),
        history,
        end,
        run.config.replicates,
        run.seed,
    )
    .map_err(stage("simulate"))?;
    spec.share_aggregation = run.config.share_aggregation;
    let prediction = predict(&spec).map_err(stage("simulate"))?;
    let first = simulate_replicate(&spec, 0).map_err(stage("simulate"))?;

    let signals = bundle.signals.truncated(end).map_err(stage("write replicate"))?;
    DatasetBundle::new(
        bundle.platforms.clone(),
        bundle.opinions.clone(),
        bundle.interventions.clone(),
        bundle.bin_width.clone(),
        first.counts,
        signals,
    )
    .and_then(|b| save_dataset(&b, out.path("replicate0")))
    .map_err(stage("write replicate"))?;
    out.note(out.path("replicate0"));

    let mut vol_rows = Vec::new();
    let mut share_rows = Vec::new();
    for (p, platform) in bundle.platforms.iter().enumerate() {
        for step in 0..spec.horizon() {
            let t = (spec.start + step).to_string();
            vol_rows.push(vec![platform.clone(), t.clone(), prediction.volumes[[p, step]].to_string()]);
            for (i, opinion) in bundle.opinions.iter().enumerate() {
                share_rows.push(vec![
                    platform.clone(),
                    opinion.clone(),
                    t.clone(),
                    prediction.shares[[p, i, step]].to_string(),
                ]);
            }
        }
    }
    out.table("volumes.csv", &["platform", "time", "volume"], vol_rows)?;
    out.table("shares.csv", &["platform", "opinion", "time", "share"], share_rows)?;
    #[derive(Serialize)]
    struct Body<'a> {
        labels: Labels,
        start: usize,
        end: usize,
        replicates: usize,
        prediction: &'a omm_core::simulation::Prediction,
    }
    let body = Body {
        labels: Labels::of(&bundle),
        start: spec.start,
        end: spec.end,
        replicates: spec.replicates,
        prediction: &prediction,
    };
    out.report("simulation.json", "omm.simulation", run, body)
}

// ---------------------------------------------------------------- elasticity

fn elasticity(args: &ElasticityArgs, run: &RunRecord, out: &mut OutputDir) -> Result<()> {
    let (fit, bundle) = load_model_and_data(&args.model.model, &args.data, run.no_interventions)?;
    let start = args.start.unwrap_or(1);
    let end = args.end.unwrap_or(bundle.counts.bins());
    let report =
        elasticities(&fit.model, &bundle.signals, &bundle.counts, start..=end).map_err(stage("elasticity"))?;
    let (p_n, m_n, k_n) = (bundle.platforms.len(), bundle.opinions.len(), bundle.interventions.len());
    let mut endo_rows = Vec::new();
    for p in 0..p_n {
        for i in 0..m_n {
            for q in 0..p_n {
                for j in 0..m_n {
                    let idx = [p, q, i, j];
                    endo_rows.push(vec![
                        bundle.platforms[p].clone(),
                        bundle.opinions[i].clone(),
                        bundle.platforms[q].clone(),
                        bundle.opinions[j].clone(),
                        cell(report.endogenous_mean.mean[&idx[..]]),
                        report.endogenous_mean.coverage[&idx[..]].to_string(),
                    ]);
                }
            }
        }
    }
    out.table(
        "endogenous_mean.csv",
        &["platform", "opinion", "source_platform", "source_opinion", "elasticity", "coverage"],
        endo_rows,
    )?;
    let mut inter_rows = Vec::new();
    for p in 0..p_n {
        for i in 0..m_n {
            for k in 0..k_n {
                let idx = [p, i, k];
                inter_rows.push(vec![
                    bundle.platforms[p].clone(),
                    bundle.opinions[i].clone(),
                    bundle.interventions[k].clone(),
                    cell(report.intervention_mean.mean[&idx[..]]),
                    report.intervention_mean.coverage[&idx[..]].to_string(),
                ]);
            }
        }
    }
    out.table(
        "intervention_mean.csv",
        &["platform", "opinion", "intervention", "elasticity", "coverage"],
        inter_rows,
    )?;
    #[derive(Serialize)]
    struct Body<'a> {
        labels: Labels,
        report: &'a omm_core::intervention::ElasticityReport,
    }
    let body = Body {
        labels: Labels::of(&bundle),
        report: &report,
    };
    out.report("elasticity.json", "omm.elasticity", run, body)
}

// ---------------------------------------------------------------- whatif

/// Intervention index from a 0-based index or a label.
pub fn resolve_intervention(key: &str, labels: &[String]) -> Result<usize> {
    if let Some(k) = labels.iter().position(|l| l == key) {
        return Ok(k);
    }
    match key.parse::<usize>() {
        Ok(k) if k < labels.len() => Ok(k),
        _ => Err(OmmError::IndexOutOfRange(format!(
            "intervention {key:?} (known: {})",
            labels.join(", ")
        ))),
    }
}

/// Observed bins that condition a what-if run ending its history at the changepoint.
pub fn whatif_history(bundle: &DatasetBundle, changepoint: usize, from_scratch: bool) -> Result<CountPanel> {
    if from_scratch || changepoint == 0 {
        Ok(CountPanel::zeros(bundle.platforms.len(), bundle.opinions.len(), 0))
    } else {
        bundle.counts.truncated(changepoint.min(bundle.counts.bins()))
    }
}

/// Long-form rows `r, platform, opinion, baseline, modulated, percent change, spread`.
pub fn whatif_rows(results: &[WhatIfResult], labels: &Labels) -> Vec<Vec<String>> {
    let mut rows = Vec::new();
    for res in results {
        let (p_n, m_n) = res.percent_change.dim();
        for p in 0..p_n {
            for i in 0..m_n {
                rows.push(vec![
                    res.scenario.r.to_string(),
                    labels.platforms[p].clone(),
                    labels.opinions[i].clone(),
                    res.baseline_share[[p, i]].to_string(),
                    res.modulated_share[[p, i]].to_string(),
                    res.percent_change[[p, i]].to_string(),
                    res.spread[[p, i]].to_string(),
                ]);
            }
        }
    }
    rows
}

pub const WHATIF_HEADER: [&str; 7] = [
    "r",
    "platform",
    "opinion",
    "baseline_share",
    "modulated_share",
    "percent_change",
    "spread",
];

fn whatif(args: &WhatifArgs, run: &RunRecord, out: &mut OutputDir) -> Result<()> {
    let (fit, bundle) = load_model_and_data(&args.model.model, &args.data, run.no_interventions)?;
    let k_star = resolve_intervention(&args.k_star, &bundle.interventions).map_err(stage("scenario"))?;
    let history = whatif_history(&bundle, args.changepoint, args.from_scratch).map_err(stage("scenario"))?;
    let scenario = WhatIfScenario {
        k_star,
        r: 0.0,
        changepoint: args.changepoint,
        n_sims: args.n_sims,
        end: args.end.unwrap_or(bundle.signals.bins()),
        seed: run.seed,
        mean_window: None,
        share_source: run.config.share_source,
    };
    let step = (args.n_sims * (args.r.len() + 1) / 10).max(1);
    let progress = |p: Progress| {
        if p.completed % step == 0 || p.completed == p.total {
            log::info!("whatif: {}/{} replicates", p.completed, p.total);
        }
    };
    let results = whatif_sweep(&fit.model, &bundle.signals, &history, &scenario, &args.r, Some(&progress))
        .map_err(stage("whatif"))?;
    let labels = Labels::of(&bundle);
    out.table("whatif_table.csv", &WHATIF_HEADER, whatif_rows(&results, &labels))?;
    #[derive(Serialize)]
    struct Body<'a> {
        labels: Labels,
        percent_change: Vec<Array2<f64>>,
        results: &'a [WhatIfResult],
    }
    let body = Body {
        labels,
        percent_change: results.iter().map(|r| r.percent_change.clone()).collect(),
        results: &results,
    };
    out.report("whatif.json", "omm.whatif", run, body)
}

// ---------------------------------------------------------------- serve

fn serve(_global: &GlobalArgs, args: &ServeArgs, run: &RunRecord) -> Result<()> {
    let (fit, bundle) = load_model_and_data(&args.model.model, &args.data, run.no_interventions)?;
    let state = crate::service::AppState::new(fit, bundle, run.config.share_source).map_err(stage("serve"))?;
    let runtime = tokio::runtime::Runtime::new().map_err(|e| OmmError::Io {
        path: PathBuf::from(&args.bind),
        source: e,
    })?;
    runtime
        .block_on(crate::service::serve(state, &args.bind))
        .map_err(|e| OmmError::Io {
            path: PathBuf::from(&args.bind),
            source: e,
        })
        .map_err(stage("serve"))
}
