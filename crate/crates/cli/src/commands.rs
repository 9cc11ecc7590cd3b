use std::path::{Path, PathBuf};
use std::str::FromStr;

use seqrec_core::ablation::{
    ablation_csv, function_rows, map_rows, run_ablation, AblationRow, MAP_ROWS,
};
use seqrec_core::bench::{
    bench_bias_construction, bench_block, machine_fingerprint, markdown_summary, to_csv,
    BenchConfig,
};
use seqrec_core::bias::{bias_curve, curve_csv, is_non_increasing, BiasFunctionSpec, BiasKind};
use seqrec_core::data::split_file::{self, PrepareConfig};
use seqrec_core::data::{
    build_sequences, cyclic_dataset, parse_movielens, seeded_rng, CyclicConfig, SplitDataset,
};
use seqrec_core::mixer::MixerConfig;
use seqrec_core::model::{flop_count, Model};
use seqrec_core::numerics::Real;
use seqrec_core::train::{evaluate, fit, load_model, RunFiles};
use seqrec_core::Error;

use crate::config::ExperimentConfig;
use crate::failure::{CmdResult, Context, Failure};
use crate::manifest::{write_atomic, ManifestWriter};
use crate::{
    AblateArgs, BenchArgs, DataArgs, DescribeArgs, EvalArgs, OverrideArgs, PlotBiasArgs,
    PrepareArgs, TrainArgs, OUT_ENV,
};

fn out_root() -> PathBuf {
    std::env::var_os(OUT_ENV).map_or_else(|| PathBuf::from("runs"), PathBuf::from)
}

fn run_dir(command: &str, name: Option<&str>) -> PathBuf {
    let name = name.map_or_else(
        || {
            format!(
                "{command}-{}-{}",
                crate::manifest::unix_now(),
                std::process::id()
            )
        },
        String::from,
    );
    out_root().join(name)
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> CmdResult {
    let bytes = serde_json::to_vec_pretty(value).map_err(Failure::runtime)?;
    write_atomic(path, &bytes)?;
    Ok(())
}

fn parse_mixer(name: &str, heads: usize) -> CmdResult<MixerConfig> {
    match name {
        "aftm" => Ok(MixerConfig::aftm()),
        "qk_channels" => Ok(MixerConfig::qk_channels(heads)),
        "qk_summed" => Ok(MixerConfig::qk_summed(heads)),
        other => Err(Failure::usage(anyhow::anyhow!(
            "unknown mixer `{other}` (valid mixers: aftm, qk_channels, qk_summed)"
        ))),
    }
}

/// Config file plus flag overrides; flags win.
fn resolve_config(o: &OverrideArgs) -> CmdResult<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(o.config.as_deref())?;
    let (m, t) = (&mut cfg.model, &mut cfg.train);
    if let Some(seed) = o.seed {
        m.seed = seed;
        t.seed = seed;
    }
    if let Some(v) = o.epochs {
        t.max_epochs = v;
    }
    if let Some(v) = o.batch_size {
        t.batch_size = v;
    }
    if let Some(v) = o.lr {
        t.optim.lr = v as Real;
    }
    if let Some(v) = o.patience {
        t.patience = v;
    }
    if let Some(v) = o.max_len {
        m.n = v;
    }
    if let Some(v) = o.dim {
        m.d = v;
        m.d_ffn = m.d_ffn.max(v);
    }
    if let Some(v) = o.layers {
        m.layers = v;
    }
    if let Some(v) = o.negatives {
        m.n_neg = v;
    }
    if let Some(kind) = &o.bias_kind {
        m.bias.kind = BiasKind::from_str(kind)?;
    }
    if let Some(name) = &o.mixer {
        let heads = m.mixer.heads.max(1);
        m.mixer = MixerConfig {
            scale_by_n: m.mixer.scale_by_n,
            ..parse_mixer(name, heads)?
        };
    }
    Ok(cfg)
}

struct LoadedData {
    split: SplitDataset,
    source: String,
    hash: String,
}

/// Reads the split file or builds the synthetic dataset, windowed to `n`.
fn load_data(args: &DataArgs, n: usize) -> CmdResult<Option<LoadedData>> {
    let (log, source, hash) = if let Some(path) = &args.data {
        let bytes = std::fs::read(path)
            .map_err(Failure::usage)
            .context(format!("reading split file {}", path.display()))?;
        let (log, _) =
            split_file::decode(&bytes).context(format!("decoding {}", path.display()))?;
        (
            log,
            path.display().to_string(),
            split_file::sha256_hex(&bytes),
        )
    } else if args.synthetic {
        let log = cyclic_dataset(&CyclicConfig {
            users: args.synthetic_users,
            ..CyclicConfig::default()
        })?;
        let prepare = PrepareConfig {
            max_len: n,
            min_interactions: 3,
        };
        let hash = split_file::sha256_hex(&split_file::encode(&log, prepare));
        (
            log,
            format!("synthetic:cyclic:users={}", args.synthetic_users),
            hash,
        )
    } else {
        return Ok(None);
    };
    let split = build_sequences(&log, n)?;
    Ok(Some(LoadedData {
        split,
        source,
        hash,
    }))
}

fn require_data(args: &DataArgs, n: usize) -> CmdResult<LoadedData> {
    load_data(args, n)?
        .ok_or_else(|| Failure::usage(anyhow::anyhow!("pass --data <split file> or --synthetic")))
}

pub fn prepare(a: PrepareArgs) -> CmdResult {
    if !a.input.is_file() {
        return Err(Failure::usage(anyhow::anyhow!(
            "input file {} does not exist",
            a.input.display()
        )));
    }
    let log = parse_movielens(&a.input, a.min_interactions)?;
    if let Some(parent) = a.output.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    let config = PrepareConfig {
        max_len: a.max_len,
        min_interactions: a.min_interactions,
    };
    let sidecar = split_file::write(&log, config, &a.input.display().to_string(), &a.output)?;
    println!(
        "{} users, {} items, {} interactions, average length {:.2}",
        sidecar.users, sidecar.items, sidecar.interactions, sidecar.average_length
    );
    println!("dataset hash {}", sidecar.dataset_hash);
    println!(
        "wrote {} and {}",
        a.output.display(),
        split_file::sidecar_path(&a.output).display()
    );
    Ok(())
}

fn param_audit(model: &Model) -> String {
    let mut s = format!("{:<32} {:>12} {:>10}\n", "parameter", "shape", "count");
    for (name, p) in model.params.iter() {
        let (r, c) = p.value.shape();
        s.push_str(&format!(
            "{name:<32} {:>12} {:>10}\n",
            format!("{r}x{c}"),
            r * c
        ));
    }
    let total = model.param_count();
    let expected = model.config.expected_param_count();
    s.push_str(&format!(
        "total {total} parameters (closed form {expected})\n"
    ));
    s
}

pub fn train(a: TrainArgs) -> CmdResult {
    let mut cfg = resolve_config(&a.overrides)?;
    let data = load_data(&a.data, cfg.model.n)?;
    if let Some(d) = &data {
        cfg.model.item_count = d.split.item_count;
    }
    cfg.model.validate()?;
    cfg.train.validate()?;
    if a.dry_run {
        let model = Model::new(cfg.model.clone())?;
        print!("{}", param_audit(&model));
        if model.param_count() != cfg.model.expected_param_count() {
            return Err(Failure::runtime(anyhow::anyhow!(
                "parameter count does not match the closed form"
            )));
        }
        return Ok(());
    }
    let data = data.ok_or_else(|| {
        Failure::usage(anyhow::anyhow!("pass --data <split file> or --synthetic"))
    })?;
    let dir = run_dir("train", a.run_name.as_deref());
    let mut manifest = ManifestWriter::start(
        &dir,
        "train",
        serde_json::to_value(&cfg).map_err(Failure::runtime)?,
        cfg.train.seed,
    )?;
    manifest.set_dataset(data.source.clone(), data.hash.clone())?;
    write_json(&dir.join("config.json"), &cfg)?;

    let mut model = Model::new(cfg.model.clone())?;
    let files = RunFiles::new(&dir)?;
    eprintln!(
        "training {} parameters on {} users; run directory {}",
        model.param_count(),
        data.split.user_count,
        dir.display()
    );
    let result = fit(&mut model, &data.split, &cfg.train, Some(&files), |r| {
        eprintln!(
            "epoch {:>3}  loss {:.4}  val ndcg@10 {:.4}  hr@10 {:.4}  ({:.1}s)",
            r.epoch, r.loss, r.ndcg10, r.hr10, r.wall_seconds
        )
    });
    match result {
        Ok(out) => {
            write_json(
                &dir.join("final.json"),
                &serde_json::json!({
                    "best_epoch": out.best_epoch,
                    "validation": out.best_validation,
                    "test": out.test,
                    "checkpoint": out.checkpoint,
                }),
            )?;
            manifest.finish("complete")?;
            println!(
                "{}",
                serde_json::to_string_pretty(&out.test).map_err(Failure::runtime)?
            );
            Ok(())
        }
        Err(e) => {
            if let Error::NonFinite(msg) = &e {
                std::fs::write(dir.join("diagnostics.txt"), format!("{msg}\n"))?;
            }
            manifest.finish("failed")?;
            Err(Failure::runtime(e))
        }
    }
}

pub fn eval(a: EvalArgs) -> CmdResult {
    let mut cfg = ExperimentConfig::load(Some(&a.config))?;
    let data = require_data(&a.data, cfg.model.n)?;
    cfg.model.item_count = data.split.item_count;
    let model = load_model(cfg.model.clone(), &a.checkpoint)
        .context(format!("loading {}", a.checkpoint.display()))?;
    let dir = run_dir("eval", a.run_name.as_deref());
    let mut manifest = ManifestWriter::start(
        &dir,
        "eval",
        serde_json::to_value(&cfg).map_err(Failure::runtime)?,
        cfg.train.seed,
    )?;
    manifest.set_dataset(data.source, data.hash)?;
    let examples = if a.split == "test" {
        &data.split.test
    } else {
        &data.split.validation
    };
    let report = evaluate(&model, examples)?;
    write_json(&dir.join("metrics.json"), &report)?;
    manifest.finish("complete")?;
    println!(
        "{}",
        serde_json::to_string_pretty(&report).map_err(Failure::runtime)?
    );
    Ok(())
}

pub fn bench(a: BenchArgs) -> CmdResult {
    let config = BenchConfig {
        warmup: a.warmup,
        repetitions: a.reps,
        min_ticks: 100,
    };
    config.validate()?;
    let dir = run_dir("bench", a.run_name.as_deref());
    let manifest = ManifestWriter::start(
        &dir,
        "bench",
        serde_json::to_value(config).map_err(Failure::runtime)?,
        0,
    )?;
    let mut records = Vec::new();
    if a.kernels.iter().any(|k| k == "bias") {
        records.extend(bench_bias_construction(&a.sweep_n, &config)?);
    }
    if a.kernels.iter().any(|k| k == "block") {
        records.extend(bench_block(&a.sweep_n, &a.sweep_d, &config)?);
    }
    let fingerprint = machine_fingerprint();
    let summary = markdown_summary(&records, &fingerprint);
    std::fs::write(dir.join("bench.csv"), to_csv(&records))?;
    std::fs::write(dir.join("bench.md"), &summary)?;
    write_json(&dir.join("fingerprint.json"), &fingerprint)?;
    manifest.finish("complete")?;
    print!("{summary}");
    eprintln!("wrote {}", dir.join("bench.csv").display());
    Ok(())
}

fn ablation_rows(
    a: &AblateArgs,
    base: &seqrec_core::model::ModelConfig,
) -> CmdResult<Vec<AblationRow>> {
    let everything = a.functions.is_empty() && a.maps.is_empty();
    let mut rows = Vec::new();
    if everything || a.maps.iter().any(|m| m == "all") {
        rows.extend(map_rows(base));
    } else {
        let all = map_rows(base);
        for name in &a.maps {
            let row = all.iter().find(|r| &r.name == name).ok_or_else(|| {
                Failure::usage(anyhow::anyhow!(
                    "unknown map row `{name}` (valid rows: {})",
                    MAP_ROWS.join(", ")
                ))
            })?;
            rows.push(row.clone());
        }
    }
    let kinds: Vec<BiasKind> = if everything || a.functions.iter().any(|f| f == "all") {
        BiasKind::ALL.to_vec()
    } else {
        a.functions
            .iter()
            .map(|f| BiasKind::from_str(f))
            .collect::<Result<_, _>>()?
    };
    rows.extend(function_rows(base, &kinds));
    Ok(rows)
}

pub fn ablate(a: AblateArgs) -> CmdResult {
    let mut cfg = resolve_config(&a.overrides)?;
    let data = require_data(&a.data, cfg.model.n)?;
    cfg.model.item_count = data.split.item_count;
    cfg.model.validate()?;
    cfg.train.validate()?;
    let rows = ablation_rows(&a, &cfg.model)?;
    let dir = run_dir("ablate", a.run_name.as_deref());
    let mut manifest = ManifestWriter::start(
        &dir,
        "ablate",
        serde_json::to_value(&cfg).map_err(Failure::runtime)?,
        cfg.train.seed,
    )?;
    manifest.set_dataset(data.source, data.hash)?;
    write_json(&dir.join("config.json"), &cfg)?;
    write_json(&dir.join("rows.json"), &rows)?;
    let results = run_ablation(&rows, &data.split, &cfg.train, |row, r| {
        eprintln!(
            "{row:<14} epoch {:>3}  loss {:.4}  val ndcg@10 {:.4}",
            r.epoch, r.loss, r.ndcg10
        )
    })?;
    let csv = ablation_csv(&results);
    std::fs::write(dir.join("ablation.csv"), &csv)?;
    manifest.finish("complete")?;
    print!("{csv}");
    Ok(())
}

pub fn plot_bias(a: PlotBiasArgs) -> CmdResult {
    let dir = run_dir("plot-bias", a.run_name.as_deref());
    let mut curves: Vec<(String, BiasFunctionSpec)> = Vec::new();
    let (config_value, seed) = if let Some(ckpt) = &a.checkpoint {
        let cfg = ExperimentConfig::load(a.config.as_deref())?;
        let store = seqrec_core::numerics::checkpoint::load(ckpt)
            .context(format!("loading {}", ckpt.display()))?;
        let bias = cfg.model.bias;
        for l in 0..cfg.model.layers {
            let spec = BiasFunctionSpec::from_store(
                &store,
                &format!("block{l}.frab"),
                bias.kind,
                bias.softplus_exponent,
                bias.max_bucket,
            )
            .context(format!(
                "reading block {l} temporal bias from {}",
                ckpt.display()
            ))?;
            curves.push((format!("block{l}_{}", bias.kind), spec));
        }
        (
            serde_json::to_value(&cfg).map_err(Failure::runtime)?,
            cfg.model.seed,
        )
    } else {
        let mut rng = seeded_rng(0);
        for name in &a.kinds {
            let kind = BiasKind::from_str(name)?;
            curves.push((
                kind.name().to_string(),
                BiasFunctionSpec::init(kind, true, seqrec_core::bias::DEFAULT_MAX_BUCKET, &mut rng),
            ));
        }
        (
            serde_json::json!({ "kinds": a.kinds, "max_delta": a.max_delta, "points": a.points }),
            0,
        )
    };
    let mut manifest = ManifestWriter::start(&dir, "plot-bias", config_value, seed)?;
    for (label, spec) in &curves {
        let curve = bias_curve(spec, a.max_delta as Real, a.points)?;
        let path = dir.join(format!("bias_{label}.csv"));
        std::fs::write(&path, curve_csv(&curve))?;
        manifest.add(&path);
        let shape = if is_non_increasing(&curve) {
            "non-increasing"
        } else {
            "not monotone"
        };
        println!(
            "{label}: {shape}, f(0) = {:.4}, f({}) = {:.4} -> {}",
            curve[0].1,
            a.max_delta,
            curve[curve.len() - 1].1,
            path.display()
        );
    }
    manifest.finish("complete")?;
    Ok(())
}

pub fn describe(a: DescribeArgs) -> CmdResult {
    let mut cfg = ExperimentConfig::load(a.config.as_deref())?;
    let placeholder = cfg.model.item_count == 0;
    if placeholder {
        cfg.model.item_count = 1;
    }
    cfg.model.validate()?;
    let model = Model::new(cfg.model.clone())?;
    println!(
        "{}",
        serde_json::to_string_pretty(&cfg).map_err(Failure::runtime)?
    );
    if placeholder {
        println!("item_count is taken from the dataset; the audit below uses 1 item");
    }
    print!("{}", param_audit(&model));
    let m = &cfg.model;
    let terms = flop_count(&m.mixer, m.n, m.d, m.d_ffn)?;
    println!(
        "per-block multiplies at n={}, d={}, d_ffn={}: {} = {}·n·d² + {}·n²·d + {}·n·d_ffn·d{}",
        m.n,
        m.d,
        m.d_ffn,
        terms.total,
        terms.nd2,
        terms.n2d,
        terms.ffn,
        if terms.exact { "" } else { " (inexact fit)" }
    );
    Ok(())
}
