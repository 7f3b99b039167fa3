use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use cubeshap::coalition::{load_pair, PairSpec, CHANGE_EPSILON, EXHAUSTIVE_CAP};
use cubeshap::counterfactual::{
    genetic_cf, growing_spheres_cf, nn_pairing, patch_budget_test, random_ranking_band,
    random_search_cf, ranking_by, CfOutcome, CfTarget, Distance, GeneticConfig, MinScore,
    SearchSpace, DEFAULT_PAIR_EPSILON, DEFAULT_THRESHOLD,
};
use cubeshap::explain::{aggregate, explain_local, round_json, ExplainConfig, Resolution, Rule};
use cubeshap::limits::{convergence_curve, saturate_m, SaturationPolicy, DEFAULT_SCHEDULE};
use cubeshap::{bench, load_dataset, load_predictor, CounterfactualPair, Dataset, LoadedModel, McConfig, Predictor};
use rayon::prelude::*;

#[derive(Parser, Debug)]
#[command(name = "cubeshap", version, about = "Counterfactual attribution with interaction pots and grid micro-games")]
struct Cli {
    /// Worker threads; defaults to the available parallelism.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Local attribution of one pair.
    Explain(ExplainArgs),
    /// Averaged attributions over many pairs.
    Global(GlobalArgs),
    /// Generate a counterfactual for one baseline.
    Cf(CfArgs),
    /// Patch-budget curve of a feature ranking.
    PatchTest(PatchArgs),
    /// Monte-Carlo micro-Shapley attribution.
    Mc(McArgs),
    /// Micro-Shapley shares of one pot over a resolution sweep.
    Converge(ConvergeArgs),
    /// Grid-state vs enumeration timing.
    Bench(BenchArgs),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, ValueEnum)]
enum Format {
    #[default]
    Csv,
    Json,
    Table,
}

#[derive(Args, Debug)]
struct Output {
    /// Directory for report files; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Args, Debug)]
struct AttributionArgs {
    /// Uniform resolution, or one comma-separated value per model feature.
    #[arg(long, default_value = "5")]
    m: String,
    /// Choose a uniform resolution with the saturation rule.
    #[arg(long, conflicts_with = "m")]
    saturate: bool,
    /// Largest share movement (fraction of the total change) counted as stable.
    #[arg(long, default_value_t = 1e-3)]
    saturate_tol: f64,
    /// Consecutive stable refinements required.
    #[arg(long, default_value_t = 3)]
    saturate_runs: usize,
    /// Comma-separated subset of equal, shapley, solidarity, es, es-macro.
    #[arg(long, default_value = "equal,shapley,solidarity,es")]
    rules: String,
    /// Pots with more members are split evenly.
    #[arg(long)]
    order_cap: Option<usize>,
    /// Largest changed set handled exhaustively.
    #[arg(long, default_value_t = EXHAUSTIVE_CAP)]
    exhaustive_cap: usize,
    /// Fall back to permutation sampling above the exhaustive cap.
    #[arg(long)]
    mc: bool,
    #[arg(long, default_value_t = 2000)]
    perms: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    antithetic: bool,
    /// Keep rows of features without attribution mass.
    #[arg(long)]
    dense: bool,
}

impl AttributionArgs {
    fn config(&self, d: usize) -> anyhow::Result<ExplainConfig> {
        let resolution = if self.saturate {
            Resolution::Saturate(SaturationPolicy {
                tolerance: self.saturate_tol,
                consecutive: self.saturate_runs,
                ..Default::default()
            })
        } else {
            let ms = parse_list::<usize>(&self.m).context("--m")?;
            match ms.as_slice() {
                [m] => Resolution::Uniform(*m),
                _ if ms.len() == d => Resolution::PerFeature(ms),
                _ => bail!("--m takes one value or {d} comma-separated values, got {}", ms.len()),
            }
        };
        let cfg = ExplainConfig {
            resolution,
            rules: Rule::parse_list(&self.rules)?,
            order_cap: self.order_cap,
            exhaustive_cap: self.exhaustive_cap,
            monte_carlo: self.mc.then(|| self.mc_config()),
            dense: self.dense,
            ..Default::default()
        };
        cfg.validate(d)?;
        Ok(cfg)
    }

    fn mc_config(&self) -> McConfig {
        McConfig {
            permutations: self.perms,
            seed: self.seed,
            antithetic: self.antithetic,
            ..Default::default()
        }
    }
}

#[derive(Args, Debug)]
struct ExplainArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    pair: PathBuf,
    /// Coordinates moving by at most this much are unchanged.
    #[arg(long, default_value_t = CHANGE_EPSILON)]
    epsilon: f64,
    #[command(flatten)]
    attr: AttributionArgs,
    #[command(flatten)]
    output: Output,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Generator {
    /// Nearest row of the target class.
    Nn,
    Random,
    Spheres,
    Genetic,
}

#[derive(Args, Debug)]
struct GeneratorArgs {
    #[arg(long, value_enum, default_value_t = Generator::Random)]
    generator: Generator,
    /// Score the counterfactual must reach.
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    target: f64,
    /// Candidate draws for random search.
    #[arg(long, default_value_t = 2000)]
    budget: usize,
    /// Shell radii for growing spheres, in range-normalised units.
    #[arg(long, default_value = "0.1,0.2,0.3,0.5,0.75,1.0")]
    radii: String,
    #[arg(long, default_value_t = 200)]
    per_shell: usize,
    #[arg(long, default_value_t = 40)]
    population: usize,
    #[arg(long, default_value_t = 50)]
    generations: usize,
}

impl GeneratorArgs {
    fn run<P: Predictor + ?Sized>(&self, model: &P, x0: &[f64], space: &SearchSpace, seed: u64) -> anyhow::Result<CfOutcome> {
        let target = CfTarget::new(self.target)?;
        Ok(match self.generator {
            Generator::Random => random_search_cf(model, x0, space, target, self.budget, seed)?,
            Generator::Spheres => {
                let radii = parse_list::<f64>(&self.radii).context("--radii")?;
                growing_spheres_cf(model, x0, space, target, &radii, self.per_shell, seed)?
            }
            Generator::Genetic => {
                let cfg = GeneticConfig {
                    population: self.population,
                    generations: self.generations,
                    ..Default::default()
                };
                genetic_cf(model, x0, space, target, &cfg, seed)?
            }
            Generator::Nn => bail!("the nn generator pairs dataset rows and needs --dataset"),
        })
    }
}

#[derive(Args, Debug)]
struct GlobalArgs {
    /// Model files; the first is explained and all must reach the target.
    #[arg(long, required = true)]
    model: Vec<PathBuf>,
    /// JSON array of {"x0": [...], "x1": [...]} pairs.
    #[arg(long, conflicts_with = "dataset")]
    pairs: Option<PathBuf>,
    #[arg(long, requires = "label_col")]
    dataset: Option<PathBuf>,
    #[arg(long)]
    label_col: Option<String>,
    /// Baselines are rows with this label; otherwise rows scoring below --target.
    #[arg(long)]
    baseline_class: Option<String>,
    /// Label searched by the nn generator.
    #[arg(long)]
    target_class: Option<String>,
    /// Number of baselines to sample.
    #[arg(long)]
    count: Option<usize>,
    /// Changed-set threshold; 0.05 for nn pairing, 1e-12 otherwise.
    #[arg(long)]
    epsilon: Option<f64>,
    #[command(flatten)]
    generator: GeneratorArgs,
    #[command(flatten)]
    attr: AttributionArgs,
    #[command(flatten)]
    output: Output,
}

#[derive(Args, Debug)]
struct CfArgs {
    /// Repeat to require every model to reach the target.
    #[arg(long, required = true)]
    model: Vec<PathBuf>,
    /// Baseline as comma-separated values.
    #[arg(long, conflicts_with = "row")]
    x0: Option<String>,
    #[arg(long, requires = "label_col")]
    dataset: Option<PathBuf>,
    #[arg(long)]
    label_col: Option<String>,
    /// Dataset row used as baseline.
    #[arg(long, requires = "dataset")]
    row: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = CHANGE_EPSILON)]
    epsilon: f64,
    #[command(flatten)]
    generator: GeneratorArgs,
    #[command(flatten)]
    output: Output,
}

#[derive(Args, Debug)]
struct PatchArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    pair: PathBuf,
    #[arg(long, default_value_t = CHANGE_EPSILON)]
    epsilon: f64,
    /// Explicit ranking of the changed features, most important first.
    #[arg(long)]
    ranking: Option<String>,
    /// Rank by this rule's local attributions.
    #[arg(long, default_value = "shapley", conflicts_with = "ranking")]
    rank_by: String,
    #[arg(long, default_value = "5")]
    m: String,
    /// Random rankings for the baseline band.
    #[arg(long, default_value_t = 10)]
    random_seeds: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    output: Output,
}

#[derive(Args, Debug)]
struct McArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    pair: PathBuf,
    #[arg(long, default_value_t = CHANGE_EPSILON)]
    epsilon: f64,
    /// Steps per changed feature; 1 gives the macro game.
    #[arg(long, default_value_t = 1)]
    m: usize,
    #[arg(long, default_value_t = 2000)]
    perms: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    antithetic: bool,
    #[arg(long, default_value_t = 4096)]
    batch_size: usize,
    #[command(flatten)]
    output: Output,
}

#[derive(Args, Debug)]
struct ConvergeArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    pair: PathBuf,
    #[arg(long, default_value_t = CHANGE_EPSILON)]
    epsilon: f64,
    /// Pot members as comma-separated feature indices.
    #[arg(long)]
    pot: String,
    #[arg(long)]
    schedule: Option<String>,
    /// Also run the saturation rule on the pair's locals.
    #[arg(long)]
    saturate: bool,
    #[arg(long, default_value_t = 1e-3)]
    saturate_tol: f64,
    #[arg(long, default_value_t = 3)]
    saturate_runs: usize,
    #[command(flatten)]
    output: Output,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[arg(long, default_value = "2,3")]
    ks: String,
    #[arg(long, default_value = "2,3,4,5,6,7,8,9,10")]
    ms: String,
    #[arg(long, default_value_t = 5)]
    reps: usize,
    #[arg(long, default_value_t = 20)]
    enum_cap: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    output: Output,
}

fn parse_list<T: std::str::FromStr>(s: &str) -> anyhow::Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    let out = s
        .split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| p.parse::<T>().map_err(|e| anyhow::anyhow!("'{p}': {e}")))
        .collect::<anyhow::Result<Vec<T>>>()?;
    if out.is_empty() {
        bail!("empty list");
    }
    Ok(out)
}

/// Writes one artifact into the output directory, or to stdout.
fn emit(output: &Output, name: &str, content: &str) -> anyhow::Result<()> {
    match &output.out {
        Some(dir) => {
            fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            let path = dir.join(name);
            fs::write(&path, content).with_context(|| format!("writing {}", path.display()))
        }
        None => {
            print!("{content}");
            Ok(())
        }
    }
}

fn emit_json(output: &Output, name: &str, mut v: serde_json::Value) -> anyhow::Result<()> {
    round_json(&mut v);
    emit(output, name, &(serde_json::to_string_pretty(&v)? + "\n"))
}

fn load_model(path: &Path) -> anyhow::Result<LoadedModel> {
    Ok(load_predictor(path)?)
}

fn load_pair_for(path: &Path, model: &LoadedModel, epsilon: f64) -> anyhow::Result<CounterfactualPair> {
    let pair = load_pair(path, epsilon)?;
    if pair.dim() != model.dim() {
        bail!(
            "pair {} has {} features but the model expects {}",
            path.display(),
            pair.dim(),
            model.dim()
        );
    }
    Ok(pair)
}

fn explain_cmd(a: &ExplainArgs) -> anyhow::Result<()> {
    let model = load_model(&a.model)?;
    let pair = load_pair_for(&a.pair, &model, a.epsilon)?;
    let cfg = a.attr.config(model.dim())?;
    let report = explain_local(&model, &pair, &model.feature_kinds(), &cfg)?;
    let names = model.feature_names();
    match a.output.format {
        Format::Csv => {
            emit(&a.output, "locals.csv", &report.locals_csv(&names, cfg.dense))?;
            if a.output.out.is_some() {
                emit(&a.output, "pots.csv", &report.pots_csv(&names))?;
            }
        }
        Format::Json => emit(&a.output, "report.json", &report.to_json(&names))?,
        Format::Table => emit(&a.output, "report.txt", &report.to_table(&names, cfg.dense))?,
    }
    Ok(())
}

fn min_score<'a>(models: &'a [LoadedModel]) -> anyhow::Result<MinScore<'a>> {
    Ok(MinScore::new(models.iter().map(|m| m as &dyn Predictor).collect())?)
}

fn load_models(paths: &[PathBuf]) -> anyhow::Result<Vec<LoadedModel>> {
    let models = paths.iter().map(|p| load_model(p)).collect::<anyhow::Result<Vec<_>>>()?;
    if models.iter().any(|m| m.dim() != models[0].dim()) {
        bail!("models disagree on feature count");
    }
    Ok(models)
}

fn check_dataset(ds: &Dataset, d: usize) -> anyhow::Result<()> {
    if ds.dim() != d {
        bail!("dataset has {} feature columns, model expects {d}", ds.dim());
    }
    Ok(())
}

fn global_cmd(a: &GlobalArgs) -> anyhow::Result<()> {
    let models = load_models(&a.model)?;
    let primary = &models[0];
    let d = primary.dim();
    let kinds = primary.feature_kinds();
    let cfg = a.attr.config(d)?;
    let pairs: Vec<CounterfactualPair> = if let Some(path) = &a.pairs {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let specs: Vec<PairSpec> =
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        let eps = a.epsilon.unwrap_or(CHANGE_EPSILON);
        specs
            .into_iter()
            .map(|s| {
                let p = s.into_pair(eps)?;
                if p.dim() != d {
                    bail!("a pair has {} features, model expects {d}", p.dim());
                }
                Ok(p)
            })
            .collect::<anyhow::Result<_>>()?
    } else if let Some(path) = &a.dataset {
        let ds = load_dataset(path, a.label_col.as_deref().expect("required by clap"))?;
        check_dataset(&ds, d)?;
        dataset_pairs(a, &models, &ds)?
    } else {
        bail!("global needs --pairs or --dataset");
    };
    if pairs.is_empty() {
        bail!("no counterfactual pairs were produced");
    }
    let reports = pairs
        .par_iter()
        .map(|p| explain_local(primary, p, &kinds, &cfg))
        .collect::<cubeshap::Result<Vec<_>>>()?;
    let global = aggregate(&reports);
    let names = primary.feature_names();
    let specs: Vec<PairSpec> = pairs.iter().map(PairSpec::from).collect();
    match a.output.format {
        Format::Csv => emit(&a.output, "global.csv", &global.to_csv(&names, cfg.dense))?,
        Format::Json => emit(&a.output, "global.json", &global.to_json(&names))?,
        Format::Table => emit(&a.output, "global.txt", &global.to_table(&names, cfg.dense))?,
    }
    if a.output.out.is_some() {
        emit_json(&a.output, "pairs.json", serde_json::to_value(&specs)?)?;
    }
    Ok(())
}

fn dataset_pairs(a: &GlobalArgs, models: &[LoadedModel], ds: &Dataset) -> anyhow::Result<Vec<CounterfactualPair>> {
    let seed = a.attr.seed;
    if a.generator.generator == Generator::Nn {
        let (Some(base), Some(tgt)) = (&a.baseline_class, &a.target_class) else {
            bail!("the nn generator needs --baseline-class and --target-class");
        };
        let eps = a.epsilon.unwrap_or(DEFAULT_PAIR_EPSILON);
        return Ok(nn_pairing(ds, base, tgt, a.count, Distance::Euclidean, eps, seed)?);
    }
    let scorer = min_score(models)?;
    let target = CfTarget::new(a.generator.target)?;
    let mut baselines: Vec<usize> = match &a.baseline_class {
        Some(label) => ds.class(label),
        None => {
            let scores = scorer.predict_batch(ds.rows())?;
            (0..ds.len()).filter(|&i| !target.met(scores[i])).collect()
        }
    };
    if baselines.is_empty() {
        bail!("no baseline rows selected");
    }
    if let Some(c) = a.count {
        baselines.truncate(c);
    }
    let space = SearchSpace::from_dataset(ds, models[0].feature_kinds())?;
    let eps = a.epsilon.unwrap_or(CHANGE_EPSILON);
    let outcomes = baselines
        .par_iter()
        .map(|&i| {
            let x0 = &ds.rows()[i];
            let out = a.generator.run(&scorer, x0, &space, seed.wrapping_add(i as u64))?;
            Ok(out.pair(x0, eps)?)
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    Ok(outcomes.into_iter().flatten().collect())
}

fn cf_cmd(a: &CfArgs) -> anyhow::Result<()> {
    let models = load_models(&a.model)?;
    let d = models[0].dim();
    let kinds = models[0].feature_kinds();
    let (x0, space) = match (&a.x0, &a.dataset) {
        (Some(s), ds) => {
            let x0 = parse_list::<f64>(s).context("--x0")?;
            let space = match ds {
                Some(p) => {
                    let ds = load_dataset(p, a.label_col.as_deref().expect("required by clap"))?;
                    check_dataset(&ds, d)?;
                    SearchSpace::from_dataset(&ds, kinds)?
                }
                None => SearchSpace::unit(kinds),
            };
            (x0, space)
        }
        (None, Some(p)) => {
            let ds = load_dataset(p, a.label_col.as_deref().expect("required by clap"))?;
            check_dataset(&ds, d)?;
            let Some(row) = a.row else { bail!("cf needs --x0 or --row") };
            let Some(x0) = ds.rows().get(row) else {
                bail!("row {row} outside a dataset of {} rows", ds.len())
            };
            (x0.clone(), SearchSpace::from_dataset(&ds, kinds)?)
        }
        (None, None) => bail!("cf needs --x0 or --dataset with --row"),
    };
    if x0.len() != d {
        bail!("baseline has {} values, model expects {d}", x0.len());
    }
    let scorer = min_score(&models)?;
    let outcome = a.generator.run(&scorer, &x0, &space, a.seed)?;
    // Success is re-checked on a fresh evaluation, independent of the generator.
    let rescored = scorer.predict(&outcome.x1)?;
    if outcome.success && !CfTarget::new(a.generator.target)?.met(rescored) {
        bail!("generator reported a success that does not meet the target");
    }
    emit_json(&a.output, "cf.json", serde_json::to_value(&outcome)?)?;
    if let Some(pair) = outcome.pair(&x0, a.epsilon)? {
        if a.output.out.is_some() {
            emit_json(&a.output, "pair.json", serde_json::to_value(PairSpec::from(&pair))?)?;
        }
    } else {
        eprintln!("no counterfactual met the target; best score {}", cubeshap::format::fmt_num(outcome.score));
    }
    Ok(())
}

fn patch_cmd(a: &PatchArgs) -> anyhow::Result<()> {
    let model = load_model(&a.model)?;
    let pair = load_pair_for(&a.pair, &model, a.epsilon)?;
    let ranking = match &a.ranking {
        Some(r) => parse_list::<usize>(r).context("--ranking")?,
        None => {
            let rule: Rule = a.rank_by.parse()?;
            let ms = parse_list::<usize>(&a.m).context("--m")?;
            let cfg = ExplainConfig {
                resolution: match ms.as_slice() {
                    [m] => Resolution::Uniform(*m),
                    _ => Resolution::PerFeature(ms),
                },
                rules: vec![rule],
                ..Default::default()
            };
            let report = explain_local(&model, &pair, &model.feature_kinds(), &cfg)?;
            ranking_by(report.locals_of(rule).expect("requested rule"), pair.changed())
        }
    };
    let curve = patch_budget_test(&model, &pair, &ranking)?;
    let seeds: Vec<u64> = (0..a.random_seeds).map(|j| a.seed.wrapping_add(j)).collect();
    let band = if seeds.is_empty() { None } else { Some(random_ranking_band(&model, &pair, &seeds)?) };
    match a.output.format {
        Format::Json => emit_json(&a.output, "patch.json", serde_json::json!({ "curve": curve, "random": band }))?,
        _ => {
            emit(&a.output, "patch.csv", &curve.to_csv())?;
            if let (Some(b), Some(_)) = (&band, &a.output.out) {
                emit(&a.output, "random_band.csv", &b.to_csv())?;
            }
        }
    }
    Ok(())
}

fn mc_cmd(a: &McArgs) -> anyhow::Result<()> {
    let model = load_model(&a.model)?;
    let pair = load_pair_for(&a.pair, &model, a.epsilon)?;
    let cfg = McConfig {
        permutations: a.perms,
        seed: a.seed,
        antithetic: a.antithetic,
        batch_size: a.batch_size,
    };
    let est = cubeshap::mc_micro_shapley(&model, &pair, &model.feature_kinds(), a.m, &cfg)?;
    match a.output.format {
        Format::Json => emit_json(&a.output, "mc.json", serde_json::to_value(&est)?)?,
        _ => emit(&a.output, "mc.csv", &est.to_csv())?,
    }
    Ok(())
}

fn converge_cmd(a: &ConvergeArgs) -> anyhow::Result<()> {
    let model = load_model(&a.model)?;
    let pair = load_pair_for(&a.pair, &model, a.epsilon)?;
    let mut pot = parse_list::<usize>(&a.pot).context("--pot")?;
    pot.sort_unstable();
    pot.dedup();
    if pot.len() < 2 || pot.iter().any(|i| !pair.changed().contains(i)) {
        bail!("--pot needs at least two changed features, got {pot:?}");
    }
    let schedule = match &a.schedule {
        Some(s) => parse_list::<usize>(s).context("--schedule")?,
        None => DEFAULT_SCHEDULE.to_vec(),
    };
    let kinds = model.feature_kinds();
    let trace = convergence_curve(&model, &pair, &kinds, &pot, &schedule)?;
    let saturation = if a.saturate {
        let policy = SaturationPolicy {
            tolerance: a.saturate_tol,
            consecutive: a.saturate_runs,
            schedule: schedule.clone(),
            ..Default::default()
        };
        Some(saturate_m(&model, &pair, &kinds, &policy)?)
    } else {
        None
    };
    match a.output.format {
        Format::Json => emit_json(
            &a.output,
            "converge.json",
            serde_json::json!({ "trace": trace, "saturation": saturation }),
        )?,
        _ => {
            emit(&a.output, "converge.csv", &trace.to_csv())?;
            if let Some(s) = &saturation {
                let line = format!("saturated={} m={}\n", s.saturated, s.m);
                if a.output.out.is_some() {
                    emit(&a.output, "saturation.txt", &line)?;
                } else {
                    eprint!("{line}");
                }
            }
        }
    }
    Ok(())
}

fn bench_cmd(a: &BenchArgs) -> anyhow::Result<()> {
    let cfg = bench::BenchConfig {
        ks: parse_list(&a.ks).context("--ks")?,
        ms: parse_list(&a.ms).context("--ms")?,
        repetitions: a.reps,
        enumeration_cap: a.enum_cap,
        min_sample: Duration::from_millis(2),
        seed: a.seed,
    };
    let result = bench::bench_scaling(&cfg)?;
    match a.output.format {
        Format::Json => emit_json(&a.output, "bench.json", serde_json::to_value(&result)?)?,
        _ => emit(&a.output, "bench.csv", &result.to_csv())?,
    }
    eprint!("{}", result.summary());
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            bail!("--threads must be >= 1");
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    match &cli.command {
        Command::Explain(a) => explain_cmd(a),
        Command::Global(a) => global_cmd(a),
        Command::Cf(a) => cf_cmd(a),
        Command::PatchTest(a) => patch_cmd(a),
        Command::Mc(a) => mc_cmd(a),
        Command::Converge(a) => converge_cmd(a),
        Command::Bench(a) => bench_cmd(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let mut msg = String::new();
            for part in e.chain().map(|c| c.to_string()) {
                if !msg.ends_with(&part) {
                    if !msg.is_empty() {
                        msg.push_str(": ");
                    }
                    msg.push_str(&part);
                }
            }
            eprintln!("error: {msg}");
            let capacity = e
                .chain()
                .any(|c| c.downcast_ref::<cubeshap::Error>().is_some_and(cubeshap::Error::is_capacity));
            ExitCode::from(if capacity { 2 } else { 1 })
        }
    }
}
