//! The three pipeline stages. `prepare` builds the instruction and prompt
//! datasets from a CSV, `generate` samples synthetic tables through the
//! configured backend (one per seed), and `evaluate` scores privacy and
//! utility. Stages communicate only through files in the run directory,
//! so an external fine-tuning step can slot in between prepare and
//! generate.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use tabforge_core::backend::{BackendKind, GenerationBackend, MockBackend};
use tabforge_core::codec::{write_instruction_jsonl, InstructionSample, TemplateConfig};
use tabforge_core::efficacy::{lle_prepare, lle_score, mle, ClassifierKind, EfficacyReport};
use tabforge_core::neighbors::{
    build_prompt_groups, filter_decisions, knn_groups, read_groups_jsonl, write_groups_jsonl,
    GroupPurpose, GroupSet, NeighborGroup,
};
use tabforge_core::privacy::{dcr, dcr_minima, nrs, perplexity, record_texts, PrivacyReport};
use tabforge_core::sampler::{render_prompt_sample, sample_synthetic, SamplerOptions, SamplingReport};
use tabforge_core::seeds;
use tabforge_core::table::{
    apply_preprocess, ingest_csv, ingest_csv_with_schema, read_snapshot, split, write_csv,
    write_snapshot, Split,
};

use crate::config::EffectiveConfig;
use crate::error::CliError;

/// Recommended external trainer settings, written next to the emitted
/// instruction datasets.
#[derive(Debug, Serialize)]
struct TrainerMeta {
    purpose: &'static str,
    epochs: u32,
    learning_rate: f64,
    batch_size: u32,
    loss_mask: &'static str,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub subject: String,
    pub k: usize,
    pub split_seed: u64,
    pub seeds: Vec<u64>,
    pub counts: SplitCounts,
    pub groups_total: usize,
    pub groups_kept: usize,
    pub groups_discarded: usize,
    pub prompt_count: usize,
    pub target_synthetic: usize,
    pub render_seed: u64,
    pub permute: bool,
    pub filter: bool,
    pub temperature: f64,
    pub nrs_tolerance: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitCounts {
    pub total: usize,
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

pub struct PrepareSummary {
    pub manifest: Manifest,
}

fn config_err<E: std::fmt::Display>(stage: &str) -> impl Fn(E) -> CliError + '_ {
    move |e| CliError::Config(format!("{stage}: {e}"))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Other(anyhow::anyhow!("serialize {}: {e}", path.display())))?;
    fs::write(path, text + "\n")
        .map_err(|e| CliError::Other(anyhow::anyhow!("write {}: {e}", path.display())))?;
    Ok(())
}

fn manifest_path(run_dir: &Path) -> PathBuf {
    run_dir.join("manifest.json")
}

fn read_manifest(run_dir: &Path) -> Result<Manifest, CliError> {
    let path = manifest_path(run_dir);
    let text = fs::read_to_string(&path).map_err(|_| {
        CliError::Config(format!(
            "missing {}; run `tabforge prepare` first",
            path.display()
        ))
    })?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("manifest: {e}")))
}

fn check_hash(manifest: &Manifest, config: &EffectiveConfig) -> Result<(), CliError> {
    if manifest.config_hash != config.config_hash {
        return Err(CliError::Config(format!(
            "run directory was prepared with config hash {} but the current config hashes to {}",
            manifest.config_hash, config.config_hash
        )));
    }
    Ok(())
}

fn template_for(config: &EffectiveConfig) -> TemplateConfig {
    TemplateConfig::with_subject(config.identity.subject.clone())
}

/// ingest -> preprocess -> split -> kNN -> filter -> render; writes the
/// split snapshot, both instruction datasets, group audit exports, and
/// the manifest.
pub fn cmd_prepare(config: &EffectiveConfig) -> Result<PrepareSummary, CliError> {
    let identity = &config.identity;
    fs::create_dir_all(&config.run_dir)
        .map_err(|e| CliError::Config(format!("run dir: {e}")))?;

    let dataset = ingest_csv(
        &identity.dataset_path,
        &identity.label_column,
        &identity.overrides,
    )
    .map_err(config_err("ingest"))?;
    let dataset =
        apply_preprocess(&dataset, &identity.preprocess).map_err(config_err("preprocess"))?;
    let dataset = split(&dataset, identity.split_ratios, identity.split_seed)
        .map_err(config_err("split"))?;
    write_snapshot(&dataset, config.run_dir.join("splits.jsonl")).map_err(config_err("split"))?;

    let counts = SplitCounts {
        total: dataset.len(),
        train: dataset.indices_of(Split::Train).len(),
        val: dataset.indices_of(Split::Val).len(),
        test: dataset.indices_of(Split::Test).len(),
    };

    // Fine-tuning groups.
    let groups = knn_groups(&dataset, identity.k).map_err(config_err("knn"))?;
    let groups_total = groups.groups.len();
    let (finetune_set, kept, discarded) = if identity.filter {
        let decisions = filter_decisions(&groups, &dataset);
        let audited = GroupSet {
            groups: groups
                .groups
                .iter()
                .zip(&decisions)
                .map(|(g, &keep)| NeighborGroup {
                    kept: keep,
                    ..g.clone()
                })
                .collect(),
            ..groups.clone()
        };
        write_groups_jsonl(&audited, config.run_dir.join("groups_finetune.jsonl"))
            .map_err(config_err("knn"))?;
        let kept_set = tabforge_core::neighbors::filter_groups(&groups, &dataset);
        let kept = kept_set.groups.len();
        (kept_set, kept, groups_total - kept)
    } else {
        write_groups_jsonl(&groups, config.run_dir.join("groups_finetune.jsonl"))
            .map_err(config_err("knn"))?;
        (groups.clone(), groups_total, 0)
    };

    let template = template_for(config);
    let render_seed = seeds::derive(identity.split_seed, "render", 0);
    let finetune_samples: Vec<InstructionSample> = finetune_set
        .groups
        .iter()
        .enumerate()
        .map(|(i, group)| {
            tabforge_core::codec::render_generator_instruction(
                group,
                &dataset,
                &template,
                i as u64,
                seeds::derive(render_seed, "finetune", i as u64),
                identity.permute,
            )
        })
        .collect();
    write_instruction_jsonl(&finetune_samples, config.run_dir.join("finetune.jsonl"))
        .map_err(config_err("render"))?;
    write_json(
        &config.run_dir.join("finetune.meta.json"),
        &TrainerMeta {
            purpose: "generator fine-tuning",
            epochs: 5,
            learning_rate: 3e-4,
            batch_size: 16,
            loss_mask: "compute loss on the assistant turn only",
        },
    )?;

    // Prompt groups: oversampled so decode failures cannot starve the
    // generation stage.
    let target = identity.target_synthetic.unwrap_or_else(|| {
        if counts.train > 10_000 {
            5_000
        } else {
            counts.train
        }
    });
    let prompt_count = ((target as f64) * identity.oversample_factor).ceil() as usize;
    let prompt_set = build_prompt_groups(
        &dataset,
        identity.k,
        prompt_count,
        seeds::derive(identity.split_seed, "prompt-groups", 0),
    )
    .map_err(config_err("prompt-groups"))?;
    write_groups_jsonl(&prompt_set, config.run_dir.join("groups_prompt.jsonl"))
        .map_err(config_err("prompt-groups"))?;
    let prompt_samples: Vec<InstructionSample> = (0..prompt_set.groups.len())
        .map(|i| {
            render_prompt_sample(
                &prompt_set,
                &dataset,
                &template,
                render_seed,
                identity.permute,
                i,
            )
        })
        .collect();
    write_instruction_jsonl(&prompt_samples, config.run_dir.join("prompt.jsonl"))
        .map_err(config_err("render"))?;

    let manifest = Manifest {
        config_hash: config.config_hash.clone(),
        subject: identity.subject.clone(),
        k: identity.k,
        split_seed: identity.split_seed,
        seeds: identity.seeds.clone(),
        counts,
        groups_total,
        groups_kept: kept,
        groups_discarded: discarded,
        prompt_count,
        target_synthetic: target,
        render_seed,
        permute: identity.permute,
        filter: identity.filter,
        temperature: identity.temperature,
        nrs_tolerance: identity.nrs_tolerance,
    };
    write_json(&manifest_path(&config.run_dir), &manifest)?;

    log::info!(
        "prepared {} finetune samples ({} discarded) and {} prompts",
        manifest.groups_kept,
        manifest.groups_discarded,
        manifest.prompt_count
    );
    Ok(PrepareSummary { manifest })
}

#[derive(Debug, Serialize)]
struct SamplingReportFile<'a> {
    config_hash: &'a str,
    seed: u64,
    backend_kind: BackendKind,
    report: &'a SamplingReport,
}

pub struct GenerateSummary {
    pub reports: Vec<SamplingReport>,
}

/// Runs the sampler once per configured seed, writing one synthetic CSV
/// and one sampling report each. A shortfall on any seed exits with code
/// 4 after all seeds have run; artifacts are still written.
pub fn cmd_generate(config: &EffectiveConfig) -> Result<GenerateSummary, CliError> {
    let manifest = read_manifest(&config.run_dir)?;
    check_hash(&manifest, config)?;
    let dataset = read_snapshot(config.run_dir.join("splits.jsonl"))
        .map_err(|e| CliError::Config(format!("splits.jsonl: {e}")))?;
    let prompts = read_groups_jsonl(
        config.run_dir.join("groups_prompt.jsonl"),
        manifest.k,
        GroupPurpose::Prompt,
        false,
    )
    .map_err(|e| CliError::Config(format!("groups_prompt.jsonl: {e}")))?;

    let template = TemplateConfig::with_subject(manifest.subject.clone());
    let mut reports = Vec::new();
    let mut shortfall: Option<(u64, usize)> = None;
    for &seed in &manifest.seeds {
        let options = SamplerOptions {
            target_n: manifest.target_synthetic,
            temperature: manifest.temperature,
            run_seed: seed,
            render_seed: manifest.render_seed,
            permute: manifest.permute,
            retry_failed: false,
            max_new_tokens: config.identity.max_new_tokens,
        };
        let (synthetic, report) =
            sample_synthetic(&prompts, &dataset, &template, &config.backend, &options)
                .map_err(|e| CliError::Backend(e.to_string()))?;
        write_csv(&synthetic, config.run_dir.join(format!("synthetic_{seed}.csv")))
            .map_err(|e| CliError::Other(anyhow::anyhow!("write synthetic csv: {e}")))?;
        write_json(
            &config.run_dir.join(format!("sampling_report_{seed}.json")),
            &SamplingReportFile {
                config_hash: &config.config_hash,
                seed,
                backend_kind: config.backend.kind,
                report: &report,
            },
        )?;
        log::info!(
            "seed {seed}: produced {}/{} rows ({} parse failures)",
            report.produced,
            report.requested,
            report.parse_failure_count()
        );
        if report.shortfall {
            shortfall = Some((seed, report.produced));
        }
        reports.push(report);
    }

    if let Some((seed, produced)) = shortfall {
        return Err(CliError::Shortfall {
            seed,
            produced,
            requested: manifest.target_synthetic,
        });
    }
    Ok(GenerateSummary { reports })
}

#[derive(Debug, Serialize)]
struct Stat {
    mean: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    std: Option<f64>,
}

fn stat(values: &[f64]) -> Stat {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() > 1 {
        Some((values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt())
    } else {
        None
    };
    Stat { mean, std }
}

fn stat_of(values: &[Option<f64>]) -> Option<Stat> {
    let collected: Option<Vec<f64>> = values.iter().copied().collect();
    collected.map(|v| stat(&v))
}

#[derive(Debug, Serialize)]
struct PrivacyReportFile {
    config_hash: String,
    backend_kind: BackendKind,
    per_seed: Vec<PerSeedPrivacy>,
    aggregate: PrivacyAggregate,
}

#[derive(Debug, Serialize)]
struct PerSeedPrivacy {
    seed: u64,
    report: PrivacyReport,
}

#[derive(Debug, Serialize)]
struct PrivacyAggregate {
    dcr_mean: Stat,
    dcr_median: Stat,
    nrs: Stat,
    #[serde(skip_serializing_if = "Option::is_none")]
    ppl_train: Option<Stat>,
    #[serde(skip_serializing_if = "Option::is_none")]
    ppl_syn: Option<Stat>,
    #[serde(skip_serializing_if = "Option::is_none")]
    dlt: Option<Stat>,
}

#[derive(Debug, Serialize)]
struct EfficacyReportFile {
    config_hash: String,
    evaluators: Vec<String>,
    per_seed: Vec<PerSeedEfficacy>,
    aggregate: Vec<EvaluatorStat>,
}

#[derive(Debug, Serialize)]
struct PerSeedEfficacy {
    seed: u64,
    reports: Vec<EfficacyReport>,
}

#[derive(Debug, Serialize)]
struct EvaluatorStat {
    evaluator: String,
    weighted_f1: Stat,
}

pub struct EvaluateOptions {
    /// Score the configured backend on the real test set.
    pub lle: bool,
    /// Emit downstream fine-tuning JSONL per synthetic dataset.
    pub emit_downstream: bool,
    /// Write per-row DCR minima CSVs.
    pub dcr_csv: bool,
}

pub struct EvaluateSummary {
    pub privacy_seeds: usize,
    pub dlt_available: bool,
    pub lle_f1: Option<f64>,
}

/// Computes DCR/NRS (always), DLT (when the backend can score), and MLE
/// per seed; aggregates mean and std across seeds the way multi-trial
/// results are usually reported.
pub fn cmd_evaluate(
    config: &EffectiveConfig,
    options: &EvaluateOptions,
) -> Result<EvaluateSummary, CliError> {
    let manifest = read_manifest(&config.run_dir)?;
    check_hash(&manifest, config)?;
    let dataset = read_snapshot(config.run_dir.join("splits.jsonl"))
        .map_err(|e| CliError::Config(format!("splits.jsonl: {e}")))?;
    let train = dataset.split_subset(Split::Train);
    let test = dataset.split_subset(Split::Test);

    // Synthetic datasets, one per seed; missing files are listed explicitly.
    let mut synthetic_sets = Vec::new();
    let mut missing = Vec::new();
    for &seed in &manifest.seeds {
        let path = config.run_dir.join(format!("synthetic_{seed}.csv"));
        if !path.exists() {
            missing.push(path.display().to_string());
            continue;
        }
        let synthetic = ingest_csv_with_schema(&path, &dataset.schema)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        synthetic_sets.push((seed, synthetic));
    }
    if !missing.is_empty() {
        return Err(CliError::Config(format!(
            "missing synthetic artifacts: {}; run `tabforge generate` first",
            missing.join(", ")
        )));
    }

    // Scoring backend for perplexity-based metrics. The mock fits its
    // unigram on the train encodings, mirroring a generator that was
    // fine-tuned on them; HTTP backends are used as configured.
    let train_texts = record_texts(&train);
    let scorer: Option<Box<dyn GenerationBackend>> = match config.backend.kind {
        BackendKind::Mock => {
            let spec = config
                .backend
                .mock
                .clone()
                .fit_unigram(train_texts.iter().map(String::as_str));
            Some(Box::new(MockBackend::new(spec)))
        }
        BackendKind::Http => config.backend.build().ok(),
    };
    let scorer = scorer.filter(|s| s.supports_scoring());

    let mut per_seed_privacy = Vec::new();
    let mut per_seed_efficacy = Vec::new();
    for (seed, synthetic) in &synthetic_sets {
        let (dcr_mean, dcr_median) =
            dcr(synthetic, &train).map_err(|e| CliError::Config(format!("dcr: {e}")))?;
        let nrs_value = nrs(synthetic, &train, manifest.nrs_tolerance)
            .map_err(|e| CliError::Config(format!("nrs: {e}")))?;
        let (ppl_train, ppl_syn, dlt) = match &scorer {
            Some(backend) => {
                let syn_texts = record_texts(synthetic);
                let ppl_train = perplexity(&train_texts, backend.as_ref())
                    .map_err(|e| CliError::Backend(e.to_string()))?;
                let ppl_syn = perplexity(&syn_texts, backend.as_ref())
                    .map_err(|e| CliError::Backend(e.to_string()))?;
                (Some(ppl_train), Some(ppl_syn), Some(ppl_train - ppl_syn))
            }
            None => (None, None, None),
        };
        if options.dcr_csv {
            let minima = dcr_minima(synthetic, &train)
                .map_err(|e| CliError::Config(format!("dcr: {e}")))?;
            let mut text = String::from("row,dcr_min\n");
            for (i, d) in minima.iter().enumerate() {
                text.push_str(&format!("{i},{d}\n"));
            }
            fs::write(config.run_dir.join(format!("dcr_rows_{seed}.csv")), text)
                .map_err(|e| CliError::Other(anyhow::anyhow!("write dcr csv: {e}")))?;
        }
        per_seed_privacy.push(PerSeedPrivacy {
            seed: *seed,
            report: PrivacyReport {
                dcr_mean,
                dcr_median,
                nrs: nrs_value,
                ppl_train,
                ppl_syn,
                dlt,
                nrs_tolerance: manifest.nrs_tolerance,
                distance_metric: "gower-normalized-with-label".to_string(),
            },
        });

        let classifiers = [ClassifierKind::LogisticRegression, ClassifierKind::DecisionTree];
        let reports = mle(synthetic, &test, &classifiers, *seed)
            .map_err(|e| CliError::Config(format!("mle (seed {seed}): {e}")))?;
        per_seed_efficacy.push(PerSeedEfficacy {
            seed: *seed,
            reports,
        });

        if options.emit_downstream {
            let task = config.task_for(dataset.schema.classes());
            let samples = lle_prepare(synthetic, &task)
                .map_err(|e| CliError::Config(format!("downstream render: {e}")))?;
            let path = config.run_dir.join(format!("downstream_train_{seed}.jsonl"));
            write_instruction_jsonl(&samples, &path)
                .map_err(|e| CliError::Other(anyhow::anyhow!("write downstream jsonl: {e}")))?;
        }
    }

    if options.emit_downstream {
        let task = config.task_for(dataset.schema.classes());
        let samples = lle_prepare(&test, &task)
            .map_err(|e| CliError::Config(format!("downstream render: {e}")))?;
        write_instruction_jsonl(&samples, config.run_dir.join("downstream_test.jsonl"))
            .map_err(|e| CliError::Other(anyhow::anyhow!("write downstream jsonl: {e}")))?;
        write_json(
            &config.run_dir.join("downstream.meta.json"),
            &TrainerMeta {
                purpose: "downstream-task fine-tuning",
                epochs: 5,
                learning_rate: 1e-4,
                batch_size: 32,
                loss_mask: "compute loss on the assistant turn only",
            },
        )?;
    }

    let privacy_file = PrivacyReportFile {
        config_hash: config.config_hash.clone(),
        backend_kind: config.backend.kind,
        aggregate: PrivacyAggregate {
            dcr_mean: stat(&per_seed_privacy.iter().map(|p| p.report.dcr_mean).collect::<Vec<_>>()),
            dcr_median: stat(
                &per_seed_privacy.iter().map(|p| p.report.dcr_median).collect::<Vec<_>>(),
            ),
            nrs: stat(&per_seed_privacy.iter().map(|p| p.report.nrs).collect::<Vec<_>>()),
            ppl_train: stat_of(
                &per_seed_privacy.iter().map(|p| p.report.ppl_train).collect::<Vec<_>>(),
            ),
            ppl_syn: stat_of(
                &per_seed_privacy.iter().map(|p| p.report.ppl_syn).collect::<Vec<_>>(),
            ),
            dlt: stat_of(&per_seed_privacy.iter().map(|p| p.report.dlt).collect::<Vec<_>>()),
        },
        per_seed: per_seed_privacy,
    };
    let dlt_available = privacy_file.aggregate.dlt.is_some();
    write_json(&config.run_dir.join("privacy_report.json"), &privacy_file)?;

    // LLE: score the configured backend on the real test set.
    let mut lle_f1 = None;
    let mut lle_reports = Vec::new();
    if options.lle {
        let task = config.task_for(dataset.schema.classes());
        let (report, predictions) =
            lle_score(&test, &task, &config.backend, manifest.seeds[0])
                .map_err(|e| CliError::Backend(e.to_string()))?;
        let mut text = String::from("row,gold,parsed,raw\n");
        for p in &predictions {
            let raw: String = p.raw_text.replace(['\n', ','], " ");
            text.push_str(&format!(
                "{},{},{},{}\n",
                p.row,
                p.gold,
                p.parsed.as_deref().unwrap_or("<unparseable>"),
                raw
            ));
        }
        fs::write(config.run_dir.join("lle_predictions.csv"), text)
            .map_err(|e| CliError::Other(anyhow::anyhow!("write predictions: {e}")))?;
        lle_f1 = Some(report.weighted_f1);
        lle_reports.push(report);
    }

    let mut evaluators: Vec<String> = Vec::new();
    if let Some(first) = per_seed_efficacy.first() {
        evaluators.extend(first.reports.iter().map(|r| r.evaluator.clone()));
    }
    let mut aggregate = Vec::new();
    for evaluator in &evaluators {
        let values: Vec<f64> = per_seed_efficacy
            .iter()
            .flat_map(|p| p.reports.iter())
            .filter(|r| &r.evaluator == evaluator)
            .map(|r| r.weighted_f1)
            .collect();
        aggregate.push(EvaluatorStat {
            evaluator: evaluator.clone(),
            weighted_f1: stat(&values),
        });
    }
    // Mean across classifier evaluators, the usual summary row.
    let classifier_means: Vec<f64> = per_seed_efficacy
        .iter()
        .map(|p| {
            p.reports.iter().map(|r| r.weighted_f1).sum::<f64>() / p.reports.len().max(1) as f64
        })
        .collect();
    if !classifier_means.is_empty() {
        aggregate.push(EvaluatorStat {
            evaluator: "mle_mean".to_string(),
            weighted_f1: stat(&classifier_means),
        });
    }
    if let Some(lle) = lle_reports.first() {
        aggregate.push(EvaluatorStat {
            evaluator: lle.evaluator.clone(),
            weighted_f1: stat(&[lle.weighted_f1]),
        });
    }
    for report in lle_reports {
        per_seed_efficacy.push(PerSeedEfficacy {
            seed: report.seed,
            reports: vec![report],
        });
    }
    let efficacy_file = EfficacyReportFile {
        config_hash: config.config_hash.clone(),
        evaluators,
        per_seed: per_seed_efficacy,
        aggregate,
    };
    write_json(&config.run_dir.join("efficacy_report.json"), &efficacy_file)?;

    Ok(EvaluateSummary {
        privacy_seeds: synthetic_sets.len(),
        dlt_available,
        lle_f1,
    })
}
