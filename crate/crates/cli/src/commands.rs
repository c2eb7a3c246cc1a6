use std::path::Path;
use std::time::Instant;

use tailclip::config;
use tailclip::corpus::{generate_corpus, load_corpus, write_corpus, Corpus, CorpusConfig};
use tailclip::evaluation::{
    self, linear_probe, mean_average_precision, per_class_recall_at_k, recall_at_k, retrieve, tail_head_breakdown,
    zero_shot_classify, EvalReport, ProbeConfig, RetrievalMode,
};
use tailclip::sampling::{class_sampling_probs, SamplerState};
use tailclip::trainer::{self, ensure_compatible, load_checkpoint, write_checkpoint, write_trace, Checkpoint, TrainConfig};

use crate::manifest::{manifest_path, sha256_hex, write_atomic, RunManifest};
use crate::{AuditArgs, BreakdownMetric, CliError, ClassifyMode, EvalCommon, EvalTask, GenDataArgs, TrainArgs};

pub const SEED_ENV: &str = "TOOLKIT_SEED";

/// Seed from the environment, if set.
fn env_seed() -> Result<Option<u64>, CliError> {
    match std::env::var(SEED_ENV) {
        Ok(s) => s
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| CliError::usage(format!("{SEED_ENV} must be an unsigned integer, got {s:?}"))),
        Err(_) => Ok(None),
    }
}

fn read_corpus(path: &Path) -> Result<Corpus, CliError> {
    load_corpus(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

fn read_checkpoint(path: &Path) -> Result<Checkpoint, CliError> {
    load_checkpoint(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

fn holdout(corpus: Corpus, every: Option<usize>, keep_eval: bool) -> Result<Corpus, CliError> {
    match every {
        None => Ok(corpus),
        Some(k) => {
            let (train, eval) = corpus.stratified_split(k)?;
            Ok(if keep_eval { eval } else { train })
        }
    }
}

pub fn gen_data(a: GenDataArgs) -> Result<(), CliError> {
    let start = Instant::now();
    let seed = a.seed.or(env_seed()?).unwrap_or(CorpusConfig::default().seed);
    let cfg = CorpusConfig {
        n_records: a.records,
        n_classes: a.classes,
        top6_share: a.top6_share,
        seed,
        view_dropout: a.view_dropout,
        image_side: a.image_side,
        noise_std: a.noise,
    };
    let corpus = generate_corpus(&cfg)?;
    let mut buf = Vec::new();
    write_corpus(&corpus, &mut buf).map_err(|e| CliError::input(e.to_string()))?;
    write_atomic(&a.out, &buf)?;

    let mut m = RunManifest::new("gen-data");
    m.set("records", cfg.n_records);
    m.set("classes", cfg.n_classes);
    m.set("top6_share", format!("{:?}", cfg.top6_share));
    m.set("seed", cfg.seed);
    m.set("view_dropout", format!("{:?}", cfg.view_dropout));
    m.set("image_side", cfg.image_side);
    m.set("noise", format!("{:?}", cfg.noise_std));
    m.output(&a.out)?;
    m.finish(start.elapsed(), &manifest_path(a.manifest.as_deref(), &a.out))?;
    println!("wrote {} records in {} classes to {}", corpus.len(), corpus.n_classes(), a.out.display());
    Ok(())
}

fn resolve_train_config(a: &TrainArgs) -> Result<TrainConfig, CliError> {
    let mut cfg = TrainConfig::default();
    if let Some(s) = env_seed()? {
        cfg.seed = s;
    }
    if let Some(path) = &a.config {
        let pairs = config::load_config(path).map_err(|e| match e {
            tailclip::Error::Io { .. } => CliError::input(e.to_string()),
            other => CliError::usage(format!("{}: {other}", path.display())),
        })?;
        for (k, v) in &pairs {
            config::set(&mut cfg, k, v)?;
        }
    }
    let overrides: [(&str, Option<String>); 11] = [
        ("beta", a.beta.map(|x| x.to_string())),
        ("lambda1", a.lambda1.map(|x| x.to_string())),
        ("lambda2", a.lambda2.map(|x| x.to_string())),
        ("lambda3", a.lambda3.map(|x| x.to_string())),
        ("tau", a.tau.map(|x| x.to_string())),
        ("lr", a.lr.map(|x| x.to_string())),
        ("weight_decay", a.wd.map(|x| x.to_string())),
        ("steps", a.steps.map(|x| x.to_string())),
        ("batch_size", a.batch.map(|x| x.to_string())),
        ("seed", a.seed.map(|x| x.to_string())),
        ("freq_scope", a.freq_scope.clone()),
    ];
    for (k, v) in overrides {
        if let Some(v) = v {
            config::set(&mut cfg, k, &v)?;
        }
    }
    if a.symmetric {
        cfg.symmetric_loss = true;
    }
    if a.uniform_sampling {
        cfg.class_aware_sampling = false;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn train(a: TrainArgs) -> Result<(), CliError> {
    let start = Instant::now();
    let cfg = resolve_train_config(&a)?;
    let corpus = holdout(read_corpus(&a.corpus)?, a.holdout_every, false)?;
    let out = trainer::train(&corpus, &cfg)?;

    let mut buf = Vec::new();
    write_checkpoint(&out.checkpoint, &mut buf).map_err(|e| CliError::input(e.to_string()))?;
    write_atomic(&a.out, &buf)?;
    let trace_path = a.trace.clone().unwrap_or_else(|| {
        let mut p = a.out.as_os_str().to_owned();
        p.push(".trace.csv");
        p.into()
    });
    let mut tbuf = Vec::new();
    write_trace(&out.trace, &mut tbuf).map_err(|e| CliError::input(e.to_string()))?;
    write_atomic(&trace_path, &tbuf)?;

    let mut m = RunManifest::new("train");
    for (k, v) in config::to_pairs(&cfg) {
        m.set(&k, v);
    }
    m.set(
        "holdout_every",
        a.holdout_every.map_or_else(|| "none".to_string(), |k| k.to_string()),
    );
    if let Some(p) = &a.config {
        m.input(p)?;
    }
    m.input(&a.corpus)?;
    m.output(&a.out)?;
    m.output(&trace_path)?;
    m.finish(start.elapsed(), &manifest_path(a.manifest.as_deref(), &a.out))?;
    println!(
        "trained {} steps on {} records; final loss {:.6}",
        cfg.steps,
        corpus.len(),
        out.checkpoint.final_loss
    );
    Ok(())
}

struct EvalContext {
    checkpoint: Checkpoint,
    corpus: Corpus,
    manifest: RunManifest,
}

fn open_eval(common: &EvalCommon, command: &str) -> Result<EvalContext, CliError> {
    let checkpoint = read_checkpoint(&common.checkpoint)?;
    let corpus = holdout(read_corpus(&common.corpus)?, common.holdout_every, true)?;
    ensure_compatible(&checkpoint.config.encoder, &corpus)?;
    let mut manifest = RunManifest::new(command);
    manifest.input(&common.checkpoint)?;
    manifest.input(&common.corpus)?;
    manifest.set(
        "holdout_every",
        common.holdout_every.map_or_else(|| "none".to_string(), |k| k.to_string()),
    );
    Ok(EvalContext {
        checkpoint,
        corpus,
        manifest,
    })
}

fn config_digest(ckpt: &Checkpoint, settings: &str) -> String {
    sha256_hex(format!("{}{settings}", config::render(&ckpt.config)).as_bytes())
}

fn finish_eval(
    mut ctx: EvalContext,
    common: &EvalCommon,
    reports: &[EvalReport],
    per_class: Option<&[Option<f64>]>,
    start: Instant,
) -> Result<(), CliError> {
    let mut buf = Vec::new();
    evaluation::write_reports(reports, &mut buf).map_err(|e| CliError::input(e.to_string()))?;
    write_atomic(&common.out, &buf)?;
    ctx.manifest.output(&common.out)?;
    if let (Some(path), Some(values)) = (&common.table, per_class) {
        let mut t = Vec::new();
        evaluation::write_per_class_table(&ctx.corpus.class_names, &ctx.corpus.class_counts, values, &mut t)
            .map_err(|e| CliError::input(e.to_string()))?;
        write_atomic(path, &t)?;
        ctx.manifest.output(path)?;
    }
    for r in reports.iter().filter(|r| !r.metric.contains('[')) {
        println!("{} {} = {:.6} (n = {})", r.task, r.metric, r.value, r.n_queries);
    }
    ctx.manifest
        .finish(start.elapsed(), &manifest_path(common.manifest.as_deref(), &common.out))
}

fn per_class_rows(task: &str, metric: &str, values: &[Option<f64>], counts: &[usize], digest: &str) -> Vec<EvalReport> {
    values
        .iter()
        .enumerate()
        .filter_map(|(c, v)| {
            v.map(|value| EvalReport {
                task: task.to_string(),
                metric: format!("{metric}[class={c}]"),
                value,
                n_queries: counts[c],
                config_digest: digest.to_string(),
            })
        })
        .collect()
}

pub fn eval(task: EvalTask) -> Result<(), CliError> {
    let start = Instant::now();
    match task {
        EvalTask::Retrieval { common, mode, k } => {
            let mode: RetrievalMode = mode.parse()?;
            if k.is_empty() || k.contains(&0) {
                return Err(CliError::usage("--k needs positive integers"));
            }
            let mut ctx = open_eval(&common, "eval retrieval")?;
            ctx.manifest.set("mode", mode);
            ctx.manifest.set("k", format!("{k:?}"));
            let model = ctx.checkpoint.model();
            let results = retrieve(&model, &ctx.corpus, mode)?;
            let digest = config_digest(&ctx.checkpoint, &format!("retrieval:{mode}:{k:?}"));
            let task = format!("retrieval-{mode}");
            let mut reports = Vec::new();
            for &kk in &k {
                reports.push(EvalReport {
                    task: task.clone(),
                    metric: format!("recall@{kk}"),
                    value: recall_at_k(&results, kk)?,
                    n_queries: results.len(),
                    config_digest: digest.clone(),
                });
            }
            if mode == RetrievalMode::I2i {
                let m = mean_average_precision(&results);
                reports.push(EvalReport {
                    task: task.clone(),
                    metric: "mAP".into(),
                    value: m.value,
                    n_queries: m.n_queries,
                    config_digest: digest.clone(),
                });
                if m.n_excluded > 0 {
                    eprintln!("note: {} queries had no relevant items and were excluded from mAP", m.n_excluded);
                }
            }
            let per_class = if mode == RetrievalMode::I2i {
                None
            } else {
                let classes: Vec<usize> = ctx.corpus.records.iter().map(|r| r.class_id).collect();
                Some(per_class_recall_at_k(&results, &classes, ctx.corpus.n_classes(), k[0])?)
            };
            finish_eval(ctx, &common, &reports, per_class.as_deref(), start)
        }
        EvalTask::Classify {
            common,
            mode,
            template,
            probe_split_every,
            probe_seed,
        } => {
            let mut ctx = open_eval(&common, "eval classify")?;
            let model = ctx.checkpoint.model();
            let (task, report, counts) = match mode {
                ClassifyMode::ZeroShot => {
                    ctx.manifest.set("mode", "zero-shot");
                    ctx.manifest.set("template", &template);
                    let r = zero_shot_classify(&model, &ctx.corpus, &template)?;
                    (format!("classify-zero-shot:{template}"), r, ctx.corpus.class_counts.clone())
                }
                ClassifyMode::LinearProbe => {
                    ctx.manifest.set("mode", "linear-probe");
                    ctx.manifest.set("probe_split_every", probe_split_every);
                    ctx.manifest.set("probe_seed", probe_seed);
                    let (tr, te) = ctx.corpus.stratified_split(probe_split_every)?;
                    let cfg = ProbeConfig {
                        seed: probe_seed,
                        ..ProbeConfig::default()
                    };
                    let r = linear_probe(&model, &tr, &te, &cfg)?;
                    for w in &r.warnings {
                        eprintln!("warning: {w}");
                    }
                    (format!("classify-linear-probe:{probe_split_every}:{probe_seed}"), r, te.class_counts.clone())
                }
            };
            let digest = config_digest(&ctx.checkpoint, &task);
            let name = task.split(':').next().unwrap_or_default().to_string();
            let mut reports = vec![EvalReport {
                task: name.clone(),
                metric: "accuracy".into(),
                value: report.accuracy,
                n_queries: report.n_samples,
                config_digest: digest.clone(),
            }];
            reports.extend(per_class_rows(&name, "accuracy", &report.per_class, &counts, &digest));
            finish_eval(ctx, &common, &reports, Some(&report.per_class), start)
        }
        EvalTask::Breakdown {
            common,
            head_k,
            metric,
            k,
            template,
        } => {
            if k == 0 {
                return Err(CliError::usage("--k must be positive"));
            }
            let mut ctx = open_eval(&common, "eval breakdown")?;
            ctx.manifest.set("head_k", head_k);
            let model = ctx.checkpoint.model();
            let classes: Vec<usize> = ctx.corpus.records.iter().map(|r| r.class_id).collect();
            let (label, per_class) = match metric {
                BreakdownMetric::T2i | BreakdownMetric::I2t => {
                    let mode = if matches!(metric, BreakdownMetric::T2i) {
                        RetrievalMode::T2i
                    } else {
                        RetrievalMode::I2t
                    };
                    ctx.manifest.set("metric", format!("{mode}-recall@{k}"));
                    let results = retrieve(&model, &ctx.corpus, mode)?;
                    (
                        format!("{mode}-recall@{k}"),
                        per_class_recall_at_k(&results, &classes, ctx.corpus.n_classes(), k)?,
                    )
                }
                BreakdownMetric::ZeroShot => {
                    ctx.manifest.set("metric", "zero-shot-accuracy");
                    ctx.manifest.set("template", &template);
                    let r = zero_shot_classify(&model, &ctx.corpus, &template)?;
                    ("zero-shot-accuracy".to_string(), r.per_class)
                }
            };
            let b = tail_head_breakdown(&per_class, &ctx.corpus.class_counts, head_k)?;
            let digest = config_digest(&ctx.checkpoint, &format!("breakdown:{label}:{head_k}:{template}"));
            let reports = vec![
                EvalReport {
                    task: "breakdown".into(),
                    metric: format!("head{head_k}-{label}"),
                    value: b.head,
                    n_queries: b.head_classes.len(),
                    config_digest: digest.clone(),
                },
                EvalReport {
                    task: "breakdown".into(),
                    metric: format!("tail-{label}"),
                    value: b.tail,
                    n_queries: b.tail_classes.len(),
                    config_digest: digest,
                },
            ];
            finish_eval(ctx, &common, &reports, Some(&per_class), start)
        }
    }
}

pub fn audit_sampler(a: AuditArgs) -> Result<(), CliError> {
    let start = Instant::now();
    let seed = a.seed.or(env_seed()?).unwrap_or(0);
    let corpus = read_corpus(&a.corpus)?;
    let c = corpus.n_classes();
    let analytic = class_sampling_probs(&vec![0; c], a.beta, a.smoothing)?;
    let mut state = SamplerState::new(&corpus, a.beta, a.smoothing, seed)?;
    let mut counts = vec![0usize; c];
    for _ in 0..a.batches {
        let b = state.sample_batch(a.batch)?;
        counts[corpus.records[b.indices[0]].class_id] += 1;
    }
    let mut text = String::from("class_id,class_name,count,analytic,empirical,abs_dev\n");
    let mut max_dev: f64 = 0.0;
    for k in 0..c {
        let emp = counts[k] as f64 / a.batches.max(1) as f64;
        let dev = (emp - analytic[k]).abs();
        max_dev = max_dev.max(dev);
        text.push_str(&format!(
            "{k},{},{},{:?},{:?},{:?}\n",
            corpus.class_names[k].replace(',', " "),
            corpus.class_counts[k],
            analytic[k],
            emp,
            dev
        ));
    }
    write_atomic(&a.out, text.as_bytes())?;

    let mut m = RunManifest::new("audit-sampler");
    m.set("beta", format!("{:?}", a.beta));
    m.set("batches", a.batches);
    m.set("batch", a.batch);
    m.set("smoothing", format!("{:?}", a.smoothing));
    m.set("seed", seed);
    m.input(&a.corpus)?;
    m.output(&a.out)?;
    m.finish(start.elapsed(), &manifest_path(a.manifest.as_deref(), &a.out))?;
    println!("max abs deviation {max_dev:.6} over {} batches", a.batches);
    Ok(())
}
