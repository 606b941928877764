use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use dvqr_core::bicop::{parse_candidates, Criterion};
use dvqr_core::dvine::{DVineRegModel, FitConfig, Mode};
use dvqr_core::margins::ColumnKind;
use dvqr_core::npcop::JitterSpec;
use dvqr_core::simkit::{
    averaged_tick_loss, cross_validate, format_num, kfold_assignment, run_grid, sqrt_guard_hits, write_results_csv,
    GridConfig, VarianceCache,
};
use serde_json::json;

use crate::data::Table;
use crate::error::{CliError, CliResult};
use crate::manifest::{default_manifest_path, RunManifest};
use crate::model_file::ModelFile;
use crate::schema::ColumnSchema;
use crate::FitArgs;

/// Parses a comma-separated list of quantile levels, sorted ascending.
pub fn parse_alphas(text: &str) -> CliResult<Vec<f64>> {
    let mut out = Vec::new();
    for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let a: f64 = part
            .parse()
            .map_err(|_| CliError::Usage(format!("'{part}' is not a quantile level")))?;
        if !(a > 0.0 && a < 1.0) {
            return Err(CliError::Usage(format!("quantile level {a} is outside (0,1)")));
        }
        out.push(a);
    }
    if out.is_empty() {
        return Err(CliError::Usage("no quantile levels given".into()));
    }
    out.sort_by(f64::total_cmp);
    out.dedup();
    Ok(out)
}

fn fit_config(fit: &FitArgs, mode: Mode) -> CliResult<FitConfig> {
    let mut cfg = FitConfig {
        mode,
        penalty: fit.penalty,
        jitter: JitterSpec::new(fit.seed, fit.jitter_replicates)?,
        ..FitConfig::default()
    };
    if let Some(f) = &fit.families {
        cfg.candidates = parse_candidates(f)?;
    }
    Ok(cfg)
}

fn fit_config_json(fit: &FitArgs, mode: Mode) -> serde_json::Value {
    json!({
        "schema": fit.schema,
        "mode": mode.to_string(),
        "penalty": fit.penalty.to_string(),
        "seed": fit.seed,
        "jitter_replicates": fit.jitter_replicates,
        "families": fit.families,
    })
}

/// Model columns of a CSV under `schema`: response first, then covariates.
struct Prepared {
    schema: ColumnSchema,
    names: Vec<String>,
    kinds: Vec<ColumnKind>,
    columns: Vec<Vec<f64>>,
    dropped: usize,
}

fn load_training(path: &Path, schema_arg: &str) -> CliResult<Prepared> {
    let schema = ColumnSchema::from_arg(schema_arg)?;
    let table = Table::read(path)?;
    let used = schema.used();
    let idx: Vec<usize> = used
        .iter()
        .map(|c| table.column_index(&c.name))
        .collect::<CliResult<_>>()?;
    let (columns, dropped) = table.complete_columns(&idx)?;
    if dropped > 0 {
        eprintln!("dropped {dropped} row(s) with missing values");
    }
    let n = columns[0].len();
    if n < dvqr_core::dvine::MIN_FIT_OBS {
        return Err(CliError::Data(format!(
            "only {n} complete rows, at least {} required",
            dvqr_core::dvine::MIN_FIT_OBS
        )));
    }
    Ok(Prepared {
        names: used.iter().map(|c| c.name.clone()).collect(),
        kinds: used.iter().map(|c| c.kind).collect(),
        schema: schema.clone(),
        columns,
        dropped,
    })
}

pub fn fit(data: &Path, args: &FitArgs, out: &Path, manifest_path: Option<&Path>) -> CliResult<()> {
    let start = Instant::now();
    let prep = load_training(data, &args.schema)?;
    let load_secs = start.elapsed().as_secs_f64();
    let cfg = fit_config(args, args.mode)?;
    let covariates: Vec<usize> = (1..prep.columns.len()).collect();
    let fit_start = Instant::now();
    let model = DVineRegModel::fit(&prep.columns, &prep.kinds, 0, &covariates, &cfg)?;
    let fit_secs = fit_start.elapsed().as_secs_f64();

    let selected: Vec<&str> = model.covariates().iter().map(|&c| prep.names[c].as_str()).collect();
    println!(
        "selected covariates (in order): {}",
        if selected.is_empty() { "(none)".to_string() } else { selected.join(", ") }
    );
    println!("cll {}", format_num(model.fitted_cll()));
    println!("penalized cll ({}) {}", args.penalty, format_num(model.fitted_penalized_cll()));
    if model.clamp_events() > 0 {
        eprintln!("{} likelihood terms were floored", model.clamp_events());
    }

    ModelFile::new(prep.names.clone(), prep.schema.clone(), prep.dropped, &model)?.write(out)?;

    let mut m = RunManifest::new("fit", fit_config_json(args, args.mode));
    m.add_input("data", data)?;
    m.seeds.insert("seed".into(), args.seed);
    m.timings.insert("load_seconds".into(), load_secs);
    m.timings.insert("fit_seconds".into(), fit_secs);
    m.extra.insert("selected".into(), json!(selected));
    m.extra.insert("dropped_rows".into(), json!(prep.dropped));
    m.extra.insert("penalized_cll".into(), json!(model.fitted_penalized_cll()));
    m.write(&manifest_path.map_or_else(|| default_manifest_path(out), Path::to_path_buf))
}

pub fn predict(model_path: &Path, data: &Path, alphas: &str, out: &Path, manifest_path: Option<&Path>) -> CliResult<()> {
    let start = Instant::now();
    let alphas = parse_alphas(alphas)?;
    let (file, model) = ModelFile::read(model_path)?;
    let table = Table::read(data)?;
    // only the selected covariates are needed; the response may be absent
    let mut source: Vec<Option<usize>> = vec![None; file.columns.len()];
    for &c in model.covariates() {
        source[c] = Some(table.column_index(&file.columns[c]).map_err(|_| {
            CliError::Data(format!("covariate column '{}' not found in CSV header", file.columns[c]))
        })?);
    }
    let header: Vec<String> = alphas.iter().map(|a| format!("q{}", format_num(*a))).collect();
    let mut w = csv::Writer::from_path(out).map_err(|e| CliError::Data(format!("{}: {e}", out.display())))?;
    let wio = |e: csv::Error| CliError::Data(format!("{}: {e}", out.display()));
    w.write_record(&header).map_err(wio)?;
    let mut skipped = 0;
    let mut snapped = 0;
    for r in 0..table.rows.len() {
        let mut row = vec![f64::NAN; file.columns.len()];
        let mut complete = true;
        for (slot, src) in row.iter_mut().zip(&source) {
            if let Some(col) = src {
                match table.value(r, *col)? {
                    Some(v) if v.is_finite() => *slot = v,
                    _ => complete = false,
                }
            }
        }
        if !complete {
            skipped += 1;
            w.write_record(vec![""; alphas.len()]).map_err(wio)?;
            continue;
        }
        if !model.snapped_covariates(&row).is_empty() {
            snapped += 1;
        }
        let q = model.predict_quantiles(&alphas, &row)?;
        w.write_record(q.iter().map(|v| format_num(*v))).map_err(wio)?;
    }
    w.flush().map_err(|e| CliError::io(out, e))?;
    if skipped > 0 {
        eprintln!("{skipped} row(s) with missing covariates left blank");
    }
    if snapped > 0 {
        eprintln!("{snapped} row(s) had discrete covariates off the fitted support");
    }
    let mut m = RunManifest::new("predict", json!({ "alphas": alphas }));
    m.add_input("model", model_path)?;
    m.add_input("data", data)?;
    m.seeds.insert("jitter_seed".into(), model.jitter().seed);
    m.timings.insert("total_seconds".into(), start.elapsed().as_secs_f64());
    m.extra.insert("blank_rows".into(), json!(skipped));
    m.write(&manifest_path.map_or_else(|| default_manifest_path(out), Path::to_path_buf))
}

pub struct CrossvalRequest<'a> {
    pub data: &'a Path,
    pub fit: &'a FitArgs,
    pub folds: usize,
    pub alphas: &'a str,
    pub also_modes: Option<&'a str>,
    pub perfect_predictor: bool,
    pub out: &'a Path,
    pub manifest: Option<&'a Path>,
}

pub fn crossval(req: CrossvalRequest<'_>) -> CliResult<()> {
    let start = Instant::now();
    if req.folds < 2 {
        return Err(CliError::Usage("--folds must be at least 2".into()));
    }
    let alphas = parse_alphas(req.alphas)?;
    let mut modes = vec![req.fit.mode];
    for m in req.also_modes.unwrap_or("").split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let m: Mode = m.parse()?;
        if !modes.contains(&m) {
            modes.push(m);
        }
    }
    let prep = load_training(req.data, &req.fit.schema)?;
    let n = prep.columns[0].len();
    let smallest = n / req.folds;
    if smallest < 30 {
        return Err(CliError::Data(format!(
            "{n} rows in {} folds gives folds of {smallest} rows, at least 30 required",
            req.folds
        )));
    }
    let covariates: Vec<usize> = (1..prep.columns.len()).collect();
    let mut rows = Vec::new();
    let mut timings = BTreeMap::new();
    for &mode in &modes {
        let t = Instant::now();
        let losses = if req.perfect_predictor {
            let y = &prep.columns[0];
            alphas
                .iter()
                .map(|&a| averaged_tick_loss(y, y, a))
                .collect::<dvqr_core::Result<Vec<f64>>>()?
        } else {
            let cfg = fit_config(req.fit, mode)?;
            cross_validate(&prep.columns, &prep.kinds, 0, &covariates, &cfg, req.folds, &alphas, req.fit.seed)?
        };
        timings.insert(format!("{mode}_seconds"), t.elapsed().as_secs_f64());
        for (a, l) in alphas.iter().zip(losses) {
            rows.push((*a, mode, l));
        }
    }
    let mut w = csv::Writer::from_path(req.out).map_err(|e| CliError::Data(format!("{}: {e}", req.out.display())))?;
    let wio = |e: csv::Error| CliError::Data(format!("{}: {e}", req.out.display()));
    w.write_record(["alpha", "mode", "tick_loss", "folds", "n"]).map_err(wio)?;
    for (a, mode, l) in &rows {
        w.write_record([format_num(*a), mode.to_string(), format_num(*l), req.folds.to_string(), n.to_string()])
            .map_err(wio)?;
        println!("alpha {} {mode}: averaged tick loss {}", format_num(*a), format_num(*l));
    }
    w.flush().map_err(|e| CliError::io(req.out, e))?;

    let mut config = fit_config_json(req.fit, req.fit.mode);
    config["folds"] = json!(req.folds);
    config["alphas"] = json!(alphas);
    config["modes"] = json!(modes.iter().map(Mode::to_string).collect::<Vec<_>>());
    let mut m = RunManifest::new("crossval", config);
    m.add_input("data", req.data)?;
    m.seeds.insert("seed".into(), req.fit.seed);
    m.seeds.insert("fold_seed".into(), req.fit.seed);
    m.timings = timings;
    m.timings.insert("total_seconds".into(), start.elapsed().as_secs_f64());
    m.extra.insert("fold_assignment".into(), json!(kfold_assignment(n, req.folds, req.fit.seed)?));
    m.extra.insert("dropped_rows".into(), json!(prep.dropped));
    m.write(&req.manifest.map_or_else(|| default_manifest_path(req.out), Path::to_path_buf))
}

pub fn simulate(
    config_path: &Path,
    out_dir: &Path,
    seed: Option<u64>,
    penalty: Option<Criterion>,
    jitter_replicates: Option<usize>,
) -> CliResult<()> {
    let start = Instant::now();
    let text = std::fs::read_to_string(config_path).map_err(|e| CliError::io(config_path, e))?;
    let mut cfg = GridConfig::parse(&text).map_err(|e| CliError::Usage(format!("{}: {e}", config_path.display())))?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(p) = penalty {
        cfg.penalty = p;
    }
    if let Some(j) = jitter_replicates {
        cfg.jitter_replicates = j;
    }
    cfg.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| CliError::io(out_dir, e))?;

    let cache_path = out_dir.join("variance_cache.json");
    let mut cache: VarianceCache = match std::fs::read_to_string(&cache_path) {
        Ok(t) => serde_json::from_str(&t).map_err(|e| CliError::Data(format!("{}: {e}", cache_path.display())))?,
        Err(_) => VarianceCache::default(),
    };
    let results = run_grid(&cfg, &mut cache)?;
    std::fs::write(&cache_path, serde_json::to_string_pretty(&cache).expect("cache serializes") + "\n")
        .map_err(|e| CliError::io(&cache_path, e))?;

    let results_path = out_dir.join("results.csv");
    let file = std::fs::File::create(&results_path).map_err(|e| CliError::io(&results_path, e))?;
    write_results_csv(&results, file)?;
    let total_fail: usize = results.iter().map(|r| r.failures).sum();
    println!("wrote {} result rows to {}", results.len(), results_path.display());
    if total_fail > 0 {
        eprintln!("{total_fail} replication fits failed and were excluded");
    }

    let mut m = RunManifest::new("simulate", serde_json::to_value(&cfg).expect("config serializes"));
    m.add_input("config", config_path)?;
    m.seeds.insert("master_seed".into(), cfg.seed);
    m.timings.insert("total_seconds".into(), start.elapsed().as_secs_f64());
    let cells: Vec<serde_json::Value> = results
        .iter()
        .map(|r| {
            json!({
                "snr": r.snr, "n_train": r.n_train, "N": r.binom_n, "alpha": r.alpha,
                "method": r.method.to_string(), "seconds": r.seconds,
                "replication_seeds": (0..r.replications).map(|k| cfg.seed.wrapping_add(k as u64)).collect::<Vec<_>>(),
            })
        })
        .collect();
    m.extra.insert("cells".into(), json!(cells));
    m.extra.insert("variance_cache".into(), json!(cache.entries));
    m.extra.insert("sqrt_guard_hits".into(), json!(sqrt_guard_hits()));
    m.write(&out_dir.join("manifest.json"))
}
