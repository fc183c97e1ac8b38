//! Subcommand implementations. Each is generic over the compute precision.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, ValueEnum};
use mcncc::correlate::{rotation_angles, search_prerotated};
use mcncc::eval::synth::{generate, BenchmarkConfig, DOMAIN_A, DOMAIN_B};
use mcncc::eval::{
    channel_stats_report, cmc, mine_pairs, occlusion_binned_report, rank_query, retrieval_run,
};
use mcncc::io::{
    global_stats_bundle, model_bundle, projection_bundle, read_results, write_feature_map,
    write_results, write_series, BestMatch, Manifest, ManifestEntry, QueryRecord, Role,
    RotationMode, RunMeta,
};
use mcncc::learn::{k_fold, train, HingeForm, PairBatch, Regime, SiameseModel, TrainConfig};
use mcncc::normalize::fit_global_stats;
use mcncc::whiten::{fit_cca, fit_pca, Ridge, Samples};
use mcncc::{AlignmentConfig, FeatureMap, NormalizationScheme, Scalar, Scorer};
use serde_json::{json, Value};

use crate::args::{Ctx, FeatureArgs, Matcher, ScorerArgs, SearchArgs};
use crate::inputs::{Dataset, Source};

fn print_json(v: &Value) {
    println!("{}", serde_json::to_string(v).expect("JSON values serialize"));
}

fn config_error(msg: impl Into<String>) -> anyhow::Error {
    mcncc::Error::Config(msg.into()).into()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RoleFilter {
    Query,
    Database,
    All,
}

impl RoleFilter {
    fn accepts(self, role: Role) -> bool {
        match self {
            RoleFilter::All => true,
            RoleFilter::Query => role == Role::Query,
            RoleFilter::Database => role == Role::Database,
        }
    }
}

/// Feature maps of the manifest entries matching `role` and `domain`, and the
/// domain tag they share.
fn select_maps<T: Scalar>(
    data: &Dataset<T>,
    role: RoleFilter,
    domain: Option<&str>,
    feat: &FeatureArgs,
) -> anyhow::Result<(Vec<FeatureMap<T>>, String)> {
    let cfg = feat.config();
    let mut maps = vec![];
    let mut tag: Option<String> = domain.map(str::to_string);
    for (e, s) in data.queries.iter().chain(&data.database) {
        if !role.accepts(e.role) || domain.is_some_and(|d| d != e.domain_tag) {
            continue;
        }
        let t = tag.get_or_insert_with(|| e.domain_tag.clone());
        if *t != e.domain_tag {
            bail!(config_error(format!(
                "entries span domains '{t}' and '{}'; pass --domain",
                e.domain_tag
            )));
        }
        maps.push(
            s.map(&cfg, &e.domain_tag, None)
                .with_context(|| format!("featurizing '{}'", e.id))?,
        );
    }
    if maps.is_empty() {
        bail!(mcncc::Error::Empty("no manifest entries match the selection".into()));
    }
    Ok((maps, tag.unwrap_or_default()))
}

#[derive(Debug, Args)]
pub struct FeaturizeArgs {
    /// A single image (or tensor) to featurize.
    #[arg(long, conflicts_with = "manifest", required_unless_present = "manifest")]
    input: Option<PathBuf>,
    /// Output tensor file for --input.
    #[arg(long, requires = "input")]
    output: Option<PathBuf>,
    /// Featurize every entry of a manifest.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Output directory for --manifest; receives one tensor per entry and a new manifest.json.
    #[arg(long, requires = "manifest")]
    out_dir: Option<PathBuf>,
    /// Domain tag for --input.
    #[arg(long, default_value = "")]
    domain: String,
    #[command(flatten)]
    feat: FeatureArgs,
}

pub fn featurize<T: Scalar>(a: &FeaturizeArgs, ctx: &Ctx) -> anyhow::Result<()> {
    let cfg = a.feat.config();
    if let Some(input) = &a.input {
        let out = a.output.as_ref().ok_or_else(|| config_error("--input needs --output"))?;
        let map = Source::<T>::load(input, &a.domain, ctx)?.map(&cfg, &a.domain, None)?;
        write_feature_map(out, &map)?;
        print_json(&json!({"output": out, "channels": map.channels(),
            "height": map.height(), "width": map.width()}));
        return Ok(());
    }
    let (Some(path), Some(dir)) = (&a.manifest, &a.out_dir) else {
        bail!(config_error("--manifest needs --out-dir"));
    };
    let data = Dataset::<T>::load(path, ctx)?;
    fs::create_dir_all(dir)?;
    let mut entries = vec![];
    for (e, s) in data.queries.iter().chain(&data.database) {
        if e.id.contains(['/', '\\']) || e.id.starts_with('.') {
            bail!(mcncc::Error::Manifest(format!("id '{}' is not usable as a file name", e.id)));
        }
        let file = format!("{}.xct", e.id);
        let map = s.map(&cfg, &e.domain_tag, None)?;
        write_feature_map(dir.join(&file), &map)?;
        entries.push(ManifestEntry {
            path: file.into(),
            ..e.clone()
        });
    }
    // Keep the original entry order.
    let order: Vec<&str> = data.manifest.entries.iter().map(|e| e.id.as_str()).collect();
    entries.sort_by_key(|e| order.iter().position(|&id| id == e.id));
    let n = entries.len();
    Manifest::new(entries, dir.clone())?.save(dir.join("manifest.json"))?;
    print_json(&json!({"entries": n, "manifest": dir.join("manifest.json")}));
    Ok(())
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, value_enum, default_value_t = RoleFilter::All)]
    role: RoleFilter,
    /// Only entries with this domain tag.
    #[arg(long)]
    domain: Option<String>,
    /// Global statistics bundle to write.
    #[arg(long)]
    out: PathBuf,
    /// Series of `(channel, spread of per-item means)`, ascending by spread.
    #[arg(long)]
    spread: Option<PathBuf>,
    /// Directory for per-channel `(mean, std)` scatter series.
    #[arg(long)]
    scatter_dir: Option<PathBuf>,
    #[command(flatten)]
    feat: FeatureArgs,
}

pub fn stats<T: Scalar>(a: &StatsArgs, ctx: &Ctx) -> anyhow::Result<()> {
    let data = Dataset::<T>::load(&a.manifest, ctx)?;
    let (maps, tag) = select_maps(&data, a.role, a.domain.as_deref(), &a.feat)?;
    let g = fit_global_stats(&maps)?;
    global_stats_bundle(&g, &tag)?.write(&a.out)?;
    if a.spread.is_some() || a.scatter_dir.is_some() {
        let report = channel_stats_report(&maps)?;
        if let Some(p) = &a.spread {
            let pts: Vec<(f64, f64)> = report.mean_spread.iter().map(|&(c, s)| (c as f64, s)).collect();
            write_series(p, &pts)?;
        }
        if let Some(dir) = &a.scatter_dir {
            fs::create_dir_all(dir)?;
            for c in 0..g.means.len() {
                let pts: Vec<(f64, f64)> = report.scatter.iter().map(|p| p[c]).collect();
                write_series(dir.join(format!("channel_{c}.txt")), &pts)?;
            }
        }
    }
    print_json(&json!({
        "maps": g.sample_count,
        "domain": tag,
        "means": g.means.iter().map(|v| v.as_f64()).collect::<Vec<_>>(),
        "stddevs": g.stddevs.iter().map(|v| v.as_f64()).collect::<Vec<_>>(),
    }));
    Ok(())
}

#[derive(Debug, Args)]
pub struct FitPcaArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, value_enum, default_value_t = RoleFilter::All)]
    role: RoleFilter,
    #[arg(long)]
    domain: Option<String>,
    /// Output dimension.
    #[arg(long)]
    k: usize,
    /// Ridge as a multiple of the mean covariance diagonal.
    #[arg(long, default_value_t = 1e-4)]
    ridge: f64,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    feat: FeatureArgs,
}

pub fn fit_pca_cmd<T: Scalar>(a: &FitPcaArgs, ctx: &Ctx) -> anyhow::Result<()> {
    let data = Dataset::<T>::load(&a.manifest, ctx)?;
    let (maps, tag) = select_maps(&data, a.role, a.domain.as_deref(), &a.feat)?;
    let samples = Samples::from_pixels(&maps)?;
    let p = fit_pca::<T>(&samples, a.k, Ridge::Relative(a.ridge))?.with_domain(tag);
    projection_bundle(&p)?.write(&a.out)?;
    print_json(&json!({"k": p.rows(), "channels": p.cols(), "samples": samples.len()}));
    Ok(())
}

/// Pairs mined by alignment search over the queries in `subset`.
fn mine<T: Scalar>(
    data: &Dataset<T>,
    subset: &[usize],
    cfg: &AlignmentConfig,
    m: &Matcher<T>,
    feat: &FeatureArgs,
    seed: u64,
) -> anyhow::Result<PairBatch<T>> {
    if m.proj_x.is_some() || m.proj_y.is_some() {
        bail!(config_error("pairs are mined in the input feature space; drop --model/--proj-x/--proj-y"));
    }
    let feat = feat.config();
    let angles = rotation_angles(cfg);
    let db = data.database_maps(&feat, None)?;
    let variants = subset
        .iter()
        .map(|&i| {
            let (e, s) = &data.queries[i];
            s.variants(&angles, &feat, &e.domain_tag, None)
                .with_context(|| format!("featurizing '{}'", e.id))
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    let groups: Vec<usize> = subset.iter().map(|&i| data.query_groups[i]).collect();
    Ok(mine_pairs(&variants, &groups, &db, &data.db_groups, cfg, &m.scorer, seed)?)
}

fn positives<T: Scalar>(pairs: &PairBatch<T>) -> anyhow::Result<(Samples, Samples)> {
    Ok(Samples::paired_pixels(
        pairs.pairs().iter().filter(|p| p.z == 1).map(|p| (&p.x, &p.y)),
    )?)
}

fn domain_of<T>(entries: &[(ManifestEntry, Source<T>)]) -> String {
    entries.first().map(|(e, _)| e.domain_tag.clone()).unwrap_or_default()
}

#[derive(Debug, Args)]
pub struct FitCcaArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    k: usize,
    #[arg(long, default_value_t = 1e-4)]
    ridge: f64,
    /// Projection bundle for the query domain.
    #[arg(long)]
    out_x: PathBuf,
    /// Projection bundle for the database domain.
    #[arg(long)]
    out_y: PathBuf,
    #[command(flatten)]
    search: SearchArgs,
    #[command(flatten)]
    scorer: ScorerArgs,
    #[command(flatten)]
    feat: FeatureArgs,
}

pub fn fit_cca_cmd<T: Scalar>(a: &FitCcaArgs, ctx: &Ctx) -> anyhow::Result<()> {
    let data = Dataset::<T>::load(&a.manifest, ctx)?;
    data.manifest.validate_closed_set()?;
    let cfg = a.search.config()?;
    let m = a.scorer.matcher::<T>(ctx)?;
    let all: Vec<usize> = (0..data.queries.len()).collect();
    let pairs = mine(&data, &all, &cfg, &m, &a.feat, ctx.seed)?;
    let (sx, sy) = positives(&pairs)?;
    let fit = fit_cca::<T>(&sx, &sy, a.k, Ridge::Relative(a.ridge))?;
    projection_bundle(&fit.proj_x.with_domain(domain_of(&data.queries)))?.write(&a.out_x)?;
    projection_bundle(&fit.proj_y.with_domain(domain_of(&data.database)))?.write(&a.out_y)?;
    print_json(&json!({"k": a.k, "samples": sx.len(), "correlations": fit.correlations}));
    Ok(())
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// weights, cca-weights or joint.
    #[arg(long, default_value = "weights")]
    regime: Regime,
    /// Projection dimension; initializes both projections with CCA.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, default_value_t = 1e-4)]
    ridge: f64,
    /// Weight on the squared norm of the channel weights.
    #[arg(long, default_value_t = 100.0)]
    alpha: f64,
    /// Weight on the squared norm of the projections.
    #[arg(long, default_value_t = 1.0)]
    beta: f64,
    #[arg(long, default_value_t = 0.5)]
    learning_rate: f64,
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    #[arg(long, default_value_t = 16)]
    batch_size: usize,
    /// printed: max(0, 1 - z*s + b); margin: max(0, 1 - z*(s - b)).
    #[arg(long, default_value = "printed")]
    hinge: HingeForm,
    /// Learn the bias (frozen at 0 by default).
    #[arg(long)]
    train_bias: bool,
    /// Fraction of queries held out for model selection; 0 disables.
    #[arg(long, default_value_t = 0.2)]
    val_fraction: f64,
    /// Model bundle to write.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    search: SearchArgs,
    #[command(flatten)]
    scorer: ScorerArgs,
    #[command(flatten)]
    feat: FeatureArgs,
}

pub fn train_cmd<T: Scalar>(a: &TrainArgs, ctx: &Ctx) -> anyhow::Result<()> {
    let data = Dataset::<T>::load(&a.manifest, ctx)?;
    data.manifest.validate_closed_set()?;
    let cfg = a.search.config()?;
    let m = a.scorer.matcher::<T>(ctx)?;
    let n = data.queries.len();
    let (train_q, val_q) = if a.val_fraction > 0.0 {
        if !(a.val_fraction < 1.0) {
            bail!(config_error(format!("--val-fraction {} not in [0, 1)", a.val_fraction)));
        }
        let folds = ((1.0 / a.val_fraction).round() as usize).clamp(2, n.max(2));
        k_fold(n, folds, ctx.seed)?.swap_remove(0)
    } else {
        ((0..n).collect(), vec![])
    };
    let pairs = mine(&data, &train_q, &cfg, &m, &a.feat, ctx.seed)?;
    let validation = if val_q.is_empty() {
        None
    } else {
        Some(mine(&data, &val_q, &cfg, &m, &a.feat, ctx.seed.wrapping_add(1))?)
    };

    let channels = pairs.pairs()[0].x.channels();
    let model = match (a.regime, a.k) {
        (Regime::WeightsOnly, Some(_)) => {
            bail!(config_error("--k needs --regime cca-weights or joint"))
        }
        (Regime::CcaThenWeights, None) => bail!(config_error("--regime cca-weights needs --k")),
        (_, Some(k)) => {
            let (sx, sy) = positives(&pairs)?;
            let fit = fit_cca::<T>(&sx, &sy, k, Ridge::Relative(a.ridge))?;
            SiameseModel::from_projections(
                fit.proj_x.with_domain(domain_of(&data.queries)),
                fit.proj_y.with_domain(domain_of(&data.database)),
            )?
        }
        (_, None) => SiameseModel::identity(channels),
    };
    let model = model
        .with_regularization(T::cast_f64(a.alpha), T::cast_f64(a.beta))
        .with_epsilon(T::cast_f64(ctx.epsilon))
        .with_hinge(a.hinge)
        .with_regime(a.regime);

    let mut tc = TrainConfig::<T>::new(a.regime);
    tc.learning_rate = a.learning_rate;
    tc.epochs = a.epochs;
    tc.batch_size = a.batch_size;
    tc.seed = ctx.seed;
    tc.freeze.bias = !a.train_bias;
    let report = train(model, &pairs, validation.as_ref(), &tc)?;
    model_bundle(&report.model, ctx.seed)?.write(&a.out)?;
    print_json(&json!({
        "pairs": pairs.len(),
        "validation_pairs": validation.as_ref().map_or(0, |v| v.len()),
        "best_epoch": report.best_epoch,
        "history": report.history.iter().map(|h| json!({
            "epoch": h.epoch, "train_loss": h.train_loss, "selection_loss": h.selection_loss,
        })).collect::<Vec<_>>(),
    }));
    Ok(())
}

#[derive(Debug, Args)]
pub struct MatchArgs {
    /// Query image or tensor.
    #[arg(long)]
    query: PathBuf,
    /// Target image or tensor.
    #[arg(long)]
    target: PathBuf,
    #[command(flatten)]
    search: SearchArgs,
    #[command(flatten)]
    scorer: ScorerArgs,
    #[command(flatten)]
    feat: FeatureArgs,
}

pub fn match_cmd<T: Scalar>(a: &MatchArgs, ctx: &Ctx) -> anyhow::Result<()> {
    let cfg = a.search.config()?;
    let m = a.scorer.matcher::<T>(ctx)?;
    let feat = a.feat.config();
    let q = Source::<T>::load(&a.query, "", ctx)?;
    let t = Source::<T>::load(&a.target, "", ctx)?;
    let variants = q.variants(&rotation_angles(&cfg), &feat, "", m.proj_x.as_ref())?;
    let target = t.map(&feat, "", m.proj_y.as_ref())?;
    let best = search_prerotated(variants, &target, &cfg, &m.scorer)?;
    print_json(&json!({
        "score": best.score, "dy": best.dy, "dx": best.dx,
        "angle": best.angle, "overlap": best.overlap,
    }));
    Ok(())
}

#[derive(Debug, Args)]
pub struct RetrieveArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Results file (one JSON record per line, preceded by a meta record).
    #[arg(long)]
    out: PathBuf,
    /// CMC series `(items reviewed, recall)`.
    #[arg(long)]
    cmc: Option<PathBuf>,
    #[command(flatten)]
    search: SearchArgs,
    #[command(flatten)]
    scorer: ScorerArgs,
    #[command(flatten)]
    feat: FeatureArgs,
}

fn scorer_name(a: &ScorerArgs) -> String {
    if a.model.is_some() || a.weights.is_some() {
        "weighted".into()
    } else {
        a.scheme.to_string()
    }
}

pub fn retrieve<T: Scalar>(a: &RetrieveArgs, ctx: &Ctx) -> anyhow::Result<()> {
    let data = Dataset::<T>::load(&a.manifest, ctx)?;
    data.manifest.validate_closed_set()?;
    let cfg = a.search.config()?;
    let m = a.scorer.matcher::<T>(ctx)?;
    let feat = a.feat.config();
    let angles = rotation_angles(&cfg);

    let images = data.queries.iter().filter(|(_, s)| s.is_image()).count();
    let rotation_mode = if angles == [0.0] {
        RotationMode::None
    } else if images == data.queries.len() {
        RotationMode::Pixel
    } else if images == 0 {
        RotationMode::Feature
    } else {
        bail!(mcncc::Error::Manifest(
            "queries mix images and tensors; rotation would be inconsistent".into()
        ));
    };

    let db = data.database_maps(&feat, m.proj_y.as_ref())?;
    let variants = data.query_variants(&angles, &feat, m.proj_x.as_ref())?;
    let mut records = Vec::with_capacity(variants.len());
    for ((v, &g), (e, _)) in variants.into_iter().zip(&data.query_groups).zip(&data.queries) {
        let out = rank_query(v, g, &db, &data.db_groups, &cfg, &m.scorer, None)
            .with_context(|| format!("query '{}'", e.id))?;
        let (best_i, best) = out.best();
        records.push(QueryRecord {
            query_id: e.id.clone(),
            group_id: Some(e.group_id.clone()),
            rank: out.rank,
            db_size: db.len(),
            ap: Some(out.ap),
            best: Some(BestMatch {
                id: data.database[best_i].0.id.clone(),
                score: best.score,
                dy: best.dy,
                dx: best.dx,
                angle: best.angle,
            }),
            area_ratio: e.area_ratio,
        });
    }
    let meta = RunMeta {
        record: "meta".into(),
        scheme: scorer_name(&a.scorer),
        stride: cfg.translation_stride,
        rot_min: cfg.rotation_min,
        rot_max: cfg.rotation_max,
        rot_stride: cfg.rotation_stride,
        min_overlap: cfg.min_overlap_fraction,
        epsilon: ctx.epsilon,
        rotation_mode,
        db_size: db.len(),
        queries: records.len(),
        model: m.label.clone(),
    };
    write_results(&a.out, &meta, &records)?;
    let ranks: Vec<usize> = records.iter().map(|r| r.rank).collect();
    let curve = cmc(&ranks, db.len())?;
    if let Some(p) = &a.cmc {
        write_series(p, &cmc_points(&curve.recall_at_k))?;
    }
    let mean_ap = records.iter().filter_map(|r| r.ap).sum::<f64>() / records.len() as f64;
    print_json(&json!({
        "queries": records.len(), "db_size": db.len(),
        "mean_ap": mean_ap, "top1": curve.recall_at(1),
    }));
    Ok(())
}

fn cmc_points(recall: &[f64]) -> Vec<(f64, f64)> {
    recall.iter().enumerate().map(|(k, &r)| ((k + 1) as f64, r)).collect()
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Results file written by `retrieve` (or by hand).
    #[arg(long)]
    results: PathBuf,
    /// CMC series to write.
    #[arg(long)]
    cmc: Option<PathBuf>,
}

pub fn eval(a: &EvalArgs) -> anyhow::Result<()> {
    let (meta, records) =
        read_results(&a.results).with_context(|| format!("reading {}", a.results.display()))?;
    let Some(first) = records.first() else {
        bail!(mcncc::Error::Empty("results file has no query records".into()));
    };
    let db_size = meta.as_ref().map_or(first.db_size, |m| m.db_size);
    if let Some(r) = records.iter().find(|r| r.db_size != db_size) {
        bail!(mcncc::Error::Format {
            offset: 0,
            message: format!("query '{}' has db_size {}, expected {db_size}", r.query_id, r.db_size),
        });
    }
    let ranks: Vec<usize> = records.iter().map(|r| r.rank).collect();
    let curve = cmc(&ranks, db_size)?;
    if let Some(p) = &a.cmc {
        write_series(p, &cmc_points(&curve.recall_at_k))?;
    }
    let aps: Option<Vec<f64>> = records.iter().map(|r| r.ap).collect();
    let ratios: Option<Vec<(usize, f64)>> =
        records.iter().map(|r| r.area_ratio.map(|a| (r.rank, a))).collect();
    let occlusion = match ratios {
        Some(o) => serde_json::to_value(occlusion_binned_report(&o, db_size)?)?,
        None => Value::Null,
    };
    print_json(&json!({
        "queries": records.len(),
        "db_size": db_size,
        "mean_ap": aps.map(|v| v.iter().sum::<f64>() / v.len() as f64),
        "top1": curve.recall_at(1),
        "recall_at_1pct": curve.recall_at_fraction(0.01),
        "recall_at_10pct": curve.recall_at_fraction(0.10),
        "cmc": curve.recall_at_k,
        "occlusion": occlusion,
    }));
    Ok(())
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Directory receiving the tensors and manifest.json.
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 60)]
    groups: usize,
    #[arg(long, default_value_t = 2)]
    items_per_group: usize,
    #[arg(long, default_value_t = 24)]
    item_size: usize,
    #[arg(long, default_value_t = 12)]
    query_size: usize,
    /// Also score every normalization scheme of the ablation and report mAP.
    #[arg(long)]
    ablation: bool,
}

fn write_entries<T: Scalar>(
    dir: &Path,
    prefix: &str,
    role: Role,
    domain: &str,
    items: impl Iterator<Item = (FeatureMap<T>, usize, Option<f64>)>,
) -> anyhow::Result<Vec<ManifestEntry>> {
    items
        .enumerate()
        .map(|(i, (map, g, area_ratio))| {
            let id = format!("{prefix}{i:04}");
            let path = PathBuf::from(format!("{id}.xct"));
            write_feature_map(dir.join(&path), &map)?;
            Ok(ManifestEntry {
                id,
                role,
                domain_tag: domain.into(),
                path,
                group_id: g.to_string(),
                area_ratio,
            })
        })
        .collect()
}

pub fn bench<T: Scalar>(a: &BenchArgs, ctx: &Ctx) -> anyhow::Result<()> {
    let cfg = BenchmarkConfig {
        groups: a.groups,
        items_per_group: a.items_per_group,
        item_size: a.item_size,
        query_size: a.query_size,
        seed: ctx.seed,
        ..BenchmarkConfig::default()
    };
    let b = generate::<T>(&cfg)?;
    fs::create_dir_all(&a.out_dir)?;
    let mut entries = write_entries(
        &a.out_dir,
        "q",
        Role::Query,
        DOMAIN_B,
        b.queries.iter().map(|q| (q.map.clone(), q.group, Some(q.area_ratio))),
    )?;
    entries.extend(write_entries(
        &a.out_dir,
        "d",
        Role::Database,
        DOMAIN_A,
        b.database.iter().cloned().zip(b.db_groups.iter().copied()).map(|(m, g)| (m, g, None)),
    )?);
    let manifest = a.out_dir.join("manifest.json");
    Manifest::new(entries, a.out_dir.clone())?.save(&manifest)?;

    let mut summary = json!({
        "manifest": manifest,
        "queries": b.queries.len(),
        "db_size": b.database.len(),
        "channels": cfg.channels(),
        "stride": cfg.pose_stride,
    });
    if a.ablation {
        let queries = b.query_maps();
        let groups = b.query_groups();
        let eps = T::cast_f64(ctx.epsilon);
        let mut rows = vec![];
        for scheme in NormalizationScheme::ABLATION {
            let scorer = if scheme.needs_global() {
                Scorer::scheme_with_global(
                    scheme,
                    fit_global_stats(&queries)?,
                    fit_global_stats(&b.database)?,
                )
            } else {
                Scorer::scheme(scheme)
            };
            let run = retrieval_run(
                &queries,
                &groups,
                &b.database,
                &b.db_groups,
                &b.alignment,
                &scorer.with_epsilon(eps),
            )?;
            rows.push(json!({"scheme": scheme.label(), "mean_ap": run.mean_ap}));
        }
        summary["ablation"] = Value::Array(rows);
    }
    print_json(&summary);
    Ok(())
}
