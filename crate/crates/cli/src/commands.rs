use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use iida_core::analysis;
use iida_core::control::{
    fixed_goals, goal_reaching_eval, ActionStats, CemConfig, ModelDynamics, OracleDynamics,
};
use iida_core::datastore::{
    load_collection, save_collection, DatasetCollection, Split, SplitCounts,
};
use iida_core::envsim::Family;
use iida_core::model::{
    self, evaluate, EncoderKind, LossKind, Model, ModelSpec, TrainConfig,
};
use iida_core::rng::derive_seed;

use crate::{CliError, Options};

/// Per-family defaults for environment counts and transitions per env.
fn family_defaults(family: Family) -> (SplitCounts, usize, usize, usize) {
    // (counts, train_actions, eval_actions, context_n)
    match family {
        Family::SlidePuck => (
            SplitCounts { train: 1000, val: 100, test: 100 },
            10,
            10,
            8,
        ),
        Family::PushBox => (
            SplitCounts { train: 100, val: 20, test: 20 },
            2000,
            100,
            8,
        ),
        Family::MultiStep => (
            SplitCounts { train: 10, val: 10, test: 10 },
            500,
            500,
            128,
        ),
        Family::Linear => (SplitCounts { train: 2, val: 1, test: 1 }, 50, 50, 4),
    }
}

fn require_file(path: &Path, hint: &str) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::new(
            "missing-input",
            format!("{} not found: {}; {hint}", "input file", path.display()),
        ))
    }
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)
                .map_err(|e| CliError::new("io", format!("{}: {e}", parent.display())))?;
        }
    }
    std::fs::write(path, contents)
        .map_err(|e| CliError::new("io", format!("{}: {e}", path.display())))
}

fn load_dataset(opts: &Options) -> Result<DatasetCollection, CliError> {
    let path = opts.path("dataset")?;
    require_file(&path, "run `iida gen-data` first")?;
    Ok(load_collection(&path)?)
}

fn load_model(path: &Path) -> Result<Model, CliError> {
    require_file(path, "run `iida train` first")?;
    Ok(Model::load(path)?)
}

fn parse_split(opts: &Options) -> Result<Split, CliError> {
    Ok(Split::parse(opts.str_or("split", "test"))?)
}

pub fn gen_data(opts: &Options) -> Result<(), CliError> {
    let family = Family::parse(opts.require("family")?)?;
    let seed: u64 = opts.require_parse("seed")?;
    let out = opts.path("out")?;
    let (default_counts, default_train_actions, default_eval_actions, _) =
        family_defaults(family);
    let counts = SplitCounts {
        train: opts.parse_or("train-envs", default_counts.train)?,
        val: opts.parse_or("val-envs", default_counts.val)?,
        test: opts.parse_or("test-envs", default_counts.test)?,
    };
    let train_actions = opts.parse_or("actions", default_train_actions)?;
    let eval_actions = opts.parse_or("eval-actions", default_eval_actions)?;
    if counts.train == 0 || counts.val == 0 || counts.test == 0 {
        return Err(CliError::usage("every split needs at least one environment"));
    }
    let collection = DatasetCollection::generate_with_eval_actions(
        family,
        counts,
        train_actions,
        eval_actions,
        seed,
    )?;
    save_collection(&collection, &out)?;
    let transitions: usize = collection.envs.iter().map(|e| e.transitions.len()).sum();
    println!(
        "wrote {}: family={} envs={} transitions={}",
        out.display(),
        family.name(),
        collection.envs.len(),
        transitions
    );
    Ok(())
}

fn model_spec_from(opts: &Options, family: Family) -> Result<ModelSpec, CliError> {
    let encoder = EncoderKind::parse(opts.require("encoder")?)?;
    let (_, _, _, default_n) = family_defaults(family);
    let context_n = opts.parse_or("context-n", default_n)?;
    let mut spec = ModelSpec::defaults(family, encoder, context_n);
    spec.loss = match opts.str_or("loss", "mse") {
        "mse" => LossKind::Mse,
        "l2" => LossKind::L2,
        other => return Err(CliError::usage(format!("unknown loss '{other}'"))),
    };
    Ok(spec)
}

pub fn train(opts: &Options) -> Result<(), CliError> {
    let collection = load_dataset(opts)?;
    let seed: u64 = opts.require_parse("seed")?;
    let out = opts.path("out")?;
    let spec = model_spec_from(opts, collection.family)?;
    let cfg = TrainConfig {
        epochs: opts.parse_or("epochs", 20)?,
        batch_size: opts.parse_or("batch", 64)?,
        learning_rate: opts.parse_or("lr", 1e-3)?,
        seed,
    };
    let result = model::train(spec, &collection, &cfg)?;
    result.model.save(&out)?;

    let mut log = String::from("step,train_loss,val_mse,seed\n");
    for row in &result.metrics {
        let _ = writeln!(log, "{},{},{},{}", row.step, row.train_loss, row.val_mse, row.seed);
    }
    let log_path = out.with_extension("metrics.csv");
    write_file(&log_path, &log)?;
    println!(
        "wrote {} (best val mse {}) and {}",
        out.display(),
        result.best_val_mse,
        log_path.display()
    );
    Ok(())
}

pub fn eval(opts: &Options) -> Result<(), CliError> {
    let collection = load_dataset(opts)?;
    let model = load_model(&opts.path("checkpoint")?)?;
    let seed: u64 = opts.require_parse("seed")?;
    let split = parse_split(opts)?;
    let context_n = opts.parse_or("context-n", model.spec.context_n)?;
    let report = evaluate(&model, &collection, split, context_n, derive_seed(seed, "eval"))?;
    let mut csv = String::from("env_id,split,context_n,seed,mse\n");
    let _ = writeln!(csv, "all,{},{},{},{}", split.name(), context_n, seed, report.mse);
    for (env_id, mse) in &report.per_env {
        let _ = writeln!(csv, "{},{},{},{},{}", env_id, split.name(), context_n, seed, mse);
    }
    if let Some(out) = opts.get("out") {
        write_file(Path::new(out), &csv)?;
    }
    println!(
        "split={} context_n={} transitions={} mse={}",
        split.name(),
        context_n,
        report.transitions,
        report.mse
    );
    Ok(())
}

pub fn sweep(opts: &Options) -> Result<(), CliError> {
    let collection = load_dataset(opts)?;
    let model = load_model(&opts.path("checkpoint")?)?;
    let seed: u64 = opts.require_parse("seed")?;
    let split = parse_split(opts)?;
    let sizes: Vec<usize> = opts.parse_list("sizes", &[2, 4, 8, 16])?;
    let eval_seeds = opts.parse_or("eval-seeds", 3)?;
    let rows = analysis::context_sweep(
        &model,
        &collection,
        split,
        &sizes,
        eval_seeds,
        derive_seed(seed, "sweep"),
    )?;
    let mut csv = String::from("context_n,mse_mean,mse_std\n");
    for r in &rows {
        let _ = writeln!(csv, "{},{},{}", r.context_n, r.mse_mean, r.mse_std);
        println!("context_n={} mse={} (+-{})", r.context_n, r.mse_mean, r.mse_std);
    }
    write_file(&opts.path("out")?, &csv)?;
    Ok(())
}

pub fn consistency(opts: &Options) -> Result<(), CliError> {
    let collection = load_dataset(opts)?;
    let model = load_model(&opts.path("checkpoint")?)?;
    let seed: u64 = opts.require_parse("seed")?;
    let split = parse_split(opts)?;
    let envs = opts.parse_or("envs", 10)?;
    let subsamples = opts.parse_or("subsamples", 20)?;
    let context_n = opts.parse_or("context-n", model.spec.context_n)?;
    let out_dir = opts.path("out")?;
    std::fs::create_dir_all(&out_dir)
        .map_err(|e| CliError::new("io", format!("{}: {e}", out_dir.display())))?;

    let bank = analysis::build_latent_bank(
        &model,
        &collection,
        split,
        envs,
        subsamples,
        context_n,
        derive_seed(seed, "consistency"),
    )?;
    let score = analysis::self_consistency(&bank)?;
    let baseline = analysis::random_baseline(&bank);

    analysis::save_latent_csv(&bank, &out_dir.join("latents.csv"))?;

    let latents: Vec<Vec<f64>> = bank.entries.iter().map(|e| e.2.clone()).collect();
    let proj = analysis::project_2d(&latents)?;
    let mut pca = String::from("env_id,subsample,pc1,pc2,variance_explained\n");
    for ((env_id, k, _), coord) in bank.entries.iter().zip(&proj.coords) {
        let _ = writeln!(
            pca,
            "{},{},{},{},{}",
            env_id, k, coord[0], coord[1], proj.variance_explained
        );
    }
    write_file(&out_dir.join("pca.csv"), &pca)?;

    let report = format!(
        "context_n,self_consistency,random_baseline\n{},{},{}\n",
        bank.context_n, score, baseline
    );
    write_file(&out_dir.join("consistency.csv"), &report)?;
    println!(
        "self_consistency={} random_baseline={} (latents, pca, report in {})",
        score,
        baseline,
        out_dir.display()
    );
    Ok(())
}

pub fn slide(opts: &Options) -> Result<(), CliError> {
    let collection = load_dataset(opts)?;
    let seed: u64 = opts.require_parse("seed")?;
    let split = parse_split(opts)?;
    let env_limit = opts.parse_or("envs", 10)?;
    let goals_per_env = opts.parse_or("goals", 20)?;
    let include_oracle = opts.parse_or("oracle", false)?;
    let threshold_ratio = opts.parse_or("threshold-ratio", 0.05)?;
    let out = opts.path("out")?;

    let mut models: Vec<(String, Option<Model>)> = Vec::new();
    for part in opts.require("checkpoint")?.split(',') {
        let path = PathBuf::from(part.trim());
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| part.trim().to_string());
        models.push((name, Some(load_model(&path)?)));
    }
    if include_oracle {
        models.push(("oracle".into(), None));
    }

    let stats = ActionStats::from_collection(&collection)?;
    let cem = CemConfig {
        population: opts.parse_or("population", 256)?,
        iterations: opts.parse_or("iterations", 10)?,
        ..CemConfig::default()
    };
    let bounds = collection.family.action_bounds();
    let envs: Vec<_> = collection
        .envs_of(split)
        .into_iter()
        .take(env_limit)
        .collect();
    if envs.is_empty() {
        return Err(CliError::new("invalid", format!("split '{}' is empty", split.name())));
    }

    let sd = collection.family.state_dim();
    let ad = collection.family.action_dim();
    let mut csv = String::from("model,env_id");
    for d in 0..sd {
        let _ = write!(csv, ",goal_{d}");
    }
    for d in 0..ad {
        let _ = write!(csv, ",action_{d}");
    }
    csv.push_str(
        ",predicted_distance,executed_distance,success,retries_used,threshold,threshold_ratio\n",
    );

    println!("goal reaching on {} {} envs x {} goals", envs.len(), split.name(), goals_per_env);
    let mut summary = Vec::new();
    for (name, model) in &models {
        let mut successes = 0usize;
        let mut total = 0usize;
        for env in &envs {
            // goals are fixed by (dataset, seed) alone: identical for every model
            let goals = fixed_goals(env, goals_per_env, derive_seed(seed, "goals"));
            let outcome = match model {
                Some(m) => {
                    let context: Vec<_> = env.transitions.iter().collect();
                    let z = m.conditioning(&context, Some(&env.params))?;
                    let dynamics = ModelDynamics { model: m, z };
                    goal_reaching_eval(
                        &dynamics,
                        &env.params,
                        env,
                        &goals,
                        &bounds,
                        &stats,
                        &cem,
                        threshold_ratio,
                        derive_seed(seed, "slide"),
                    )?
                }
                None => {
                    let dynamics = OracleDynamics { params: &env.params };
                    goal_reaching_eval(
                        &dynamics,
                        &env.params,
                        env,
                        &goals,
                        &bounds,
                        &stats,
                        &cem,
                        threshold_ratio,
                        derive_seed(seed, "slide"),
                    )?
                }
            };
            for rec in &outcome.records {
                let _ = write!(csv, "{},{}", name, rec.env_id);
                for v in &rec.goal {
                    let _ = write!(csv, ",{v}");
                }
                for v in &rec.action {
                    let _ = write!(csv, ",{v}");
                }
                let _ = writeln!(
                    csv,
                    ",{},{},{},{},{},{}",
                    rec.predicted_distance,
                    rec.executed_distance,
                    rec.success,
                    rec.retries_used,
                    outcome.threshold,
                    outcome.threshold_ratio
                );
            }
            successes += outcome.records.iter().filter(|r| r.success).count();
            total += outcome.records.len();
        }
        let rate = if total == 0 { 1.0 } else { successes as f64 / total as f64 };
        println!("  {name}: success rate {rate}");
        summary.push((name.clone(), rate));
    }
    write_file(&out, &csv)?;

    let mut summary_csv = String::from("model,success_rate\n");
    for (name, rate) in &summary {
        let _ = writeln!(summary_csv, "{name},{rate}");
    }
    write_file(&out.with_extension("summary.csv"), &summary_csv)?;
    Ok(())
}

pub fn table1(opts: &Options) -> Result<(), CliError> {
    let collection = load_dataset(opts)?;
    let seed: u64 = opts.require_parse("seed")?;
    let n_seeds: usize = opts.parse_or("seeds", 3)?;
    let epochs = opts.parse_or("epochs", 20)?;
    let (_, _, _, default_n) = family_defaults(collection.family);
    let context_n = opts.parse_or("context-n", default_n)?;
    let out = opts.path("out")?;

    let mut long = String::from("family,encoder,seed,test_mse\n");
    let mut wide = String::from("family");
    let encoders = [
        EncoderKind::None,
        EncoderKind::Avg,
        EncoderKind::Rnn,
        EncoderKind::Tfm,
        EncoderKind::Explicit,
    ];
    for e in encoders {
        let _ = write!(wide, ",{}_mean,{}_std", e.name(), e.name());
    }
    wide.push('\n');
    let _ = write!(wide, "{}", collection.family.name());

    for encoder in encoders {
        let mut mses = Vec::with_capacity(n_seeds);
        for k in 0..n_seeds {
            let run_seed = derive_seed(seed, &format!("table1/{}/{}", encoder.name(), k));
            let spec = ModelSpec::defaults(collection.family, encoder, context_n);
            let cfg = TrainConfig {
                epochs,
                ..TrainConfig::new(run_seed)
            };
            let result = model::train(spec, &collection, &cfg)?;
            let mse = model::evaluate_mse(
                &result.model,
                &collection,
                Split::Test,
                context_n,
                derive_seed(run_seed, "table1-eval"),
            )?;
            let _ = writeln!(long, "{},{},{},{}", collection.family.name(), encoder.name(), k, mse);
            println!("{} seed {}: test mse {}", encoder.name(), k, mse);
            mses.push(mse);
        }
        let mean = mses.iter().sum::<f64>() / mses.len() as f64;
        let var = mses.iter().map(|m| (m - mean) * (m - mean)).sum::<f64>() / mses.len() as f64;
        let _ = write!(wide, ",{},{}", mean, var.sqrt());
        println!("{}: {} +- {}", encoder.name(), mean, var.sqrt());
    }
    wide.push('\n');
    write_file(&out, &wide)?;
    write_file(&out.with_extension("long.csv"), &long)?;
    println!("wrote {}", out.display());
    Ok(())
}
