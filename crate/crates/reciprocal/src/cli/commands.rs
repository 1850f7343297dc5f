//! The five pipeline commands. Each one resolves its configuration,
//! reads earlier stages' artifacts from the run directory, does its work,
//! and writes its own artifacts plus a metadata record and a manifest
//! entry.

use super::artifacts::{
    load_events, load_run, write_json, write_lists_tsv, Metadata, RunDir,
};
use super::config::ExperimentConfig;
use super::{EvaluateMode, Stage};
use crate::backbone::{init_model, train, EpochRecord, LatentFactorModel, StopMetric, TrainData};
use crate::crrs::{counterfactual_finetune, init_from_pretrained, ScoreWeights, TreatmentModels};
use crate::dataset::{
    self, derive_treatment_sets, generate_synthetic, k_core_filter, load_interactions,
    DatasetSplit, InteractionLog, LogFormat,
};
use crate::error::{Error, Result};
use crate::harness::{
    adjust_rep, adjust_uni, full_rank_evaluate, positive_exclusion_maps,
    redundancy_rank_histogram, run_baseline_dual, AdjustmentReport, BackboneScorer,
    RerankScorer, SimpleCrrsScorer,
};
use crate::metrics::streaming::{streaming_init, streaming_process_user, StreamingSnapshot};
use crate::metrics::{compute_report, MatchSet, MetricReport};
use crate::seed::{derive_seed, SeedStream};
use crate::types::Side;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::Serialize;
use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;

/// Generate or load the interaction log, k-core filter it, split it, and
/// write the three split TSVs.
pub fn cmd_prepare(config: &ExperimentConfig) -> Result<()> {
    config.validate()?;
    let run = RunDir::new(config.out_dir()?);
    if config.synthetic && config.data_path.is_some() {
        return Err(Error::Config(
            "--synthetic and --data are mutually exclusive".into(),
        ));
    }

    let raw = if config.synthetic {
        generate_synthetic(
            config.synthetic_n,
            config.synthetic_m,
            config.synthetic_dim,
            config.density,
            derive_seed(config.seed, SeedStream::Synthetic),
        )?
    } else {
        let path = config.data_path.as_deref().ok_or_else(|| {
            Error::Config(
                "prepare needs either --synthetic or a dataset (--data / data_path)".into(),
            )
        })?;
        if !path.exists() {
            return Err(Error::Config(format!(
                "dataset {} does not exist",
                path.display()
            )));
        }
        load_interactions(path, LogFormat::Tsv)?
    };

    let mut meta = Metadata::new("prepare", config)?;
    let log = if config.kcore > 0 {
        let filtered = k_core_filter(&raw, config.kcore)?;
        if filtered.emptied {
            return Err(Error::Validation(format!(
                "k-core filtering with k = {} removed every user",
                config.kcore
            )));
        }
        meta.insert_detail("kcore_removed_a", filtered.removed_a)?;
        meta.insert_detail("kcore_removed_b", filtered.removed_b)?;
        meta.insert_detail("original_ids_a", &filtered.original_ids_a)?;
        meta.insert_detail("original_ids_b", &filtered.original_ids_b)?;
        filtered.log
    } else {
        raw
    };

    let split = dataset::split(
        &log,
        (
            config.train_fraction,
            config.validation_fraction,
            config.test_fraction,
        ),
        derive_seed(config.seed, SeedStream::Split),
    )?;

    let dir = run.prepare_dir();
    std::fs::create_dir_all(&dir)?;
    let parts = [
        ("train.tsv", &split.train),
        ("validation.tsv", &split.validation),
        ("test.tsv", &split.test),
    ];
    let mut files = Vec::new();
    for (name, part) in parts {
        let path = dir.join(name);
        part.write_tsv(&path)?;
        files.push(path);
    }

    meta.insert_detail("side_a_count", log.side_a_count)?;
    meta.insert_detail("side_b_count", log.side_b_count)?;
    meta.insert_detail("interactions_total", log.interactions.len())?;
    meta.insert_detail("interactions_train", split.train.interactions.len())?;
    meta.insert_detail("interactions_validation", split.validation.interactions.len())?;
    meta.insert_detail("interactions_test", split.test.interactions.len())?;
    meta.insert_detail("matched_pairs_test", split.matched_pairs_test.len())?;
    let meta_path = dir.join("metadata.json");
    meta.write(&meta_path)?;
    files.push(meta_path);
    run.update_manifest("prepare", &files)?;

    println!(
        "prepared {} interactions over {} x {} users into {}",
        log.interactions.len(),
        log.side_a_count,
        log.side_b_count,
        dir.display()
    );
    Ok(())
}

/// Reassemble the split written by `prepare`. The metadata's side counts
/// are authoritative: a part file only shows the ids that interact in it.
fn load_split(run: &RunDir) -> Result<DatasetSplit> {
    let dir = run.prepare_dir();
    let meta_path = dir.join("metadata.json");
    if !meta_path.exists() {
        return Err(Error::Validation(format!(
            "no prepared dataset under {} (run `prepare` first)",
            dir.display()
        )));
    }
    let meta = Metadata::read(&meta_path)?;
    let n = meta.detail_usize("side_a_count")?;
    let m = meta.detail_usize("side_b_count")?;
    let load_part = |name: &str| -> Result<InteractionLog> {
        let path = dir.join(name);
        if !path.exists() {
            return Err(Error::Validation(format!(
                "missing split file {} (run `prepare` first)",
                path.display()
            )));
        }
        if std::fs::metadata(&path)?.len() == 0 {
            return InteractionLog::new(n, m, Vec::new());
        }
        let loaded = load_interactions(&path, LogFormat::Tsv)?;
        InteractionLog::new(n, m, loaded.interactions)
    };
    let train = load_part("train.tsv")?;
    let validation = load_part("validation.tsv")?;
    let test = load_part("test.tsv")?;
    let matched_pairs_test = test.matched_pairs();
    Ok(DatasetSplit {
        train,
        validation,
        test,
        matched_pairs_test,
    })
}

#[derive(Serialize)]
struct HistoryFile<'a> {
    best_epoch: usize,
    epochs: &'a [EpochRecord],
}

/// Pre-train the backbone and (unless `--stage pretrain-only`) finetune
/// the per-treatment models; write checkpoints and histories.
pub fn cmd_train(config: &ExperimentConfig, stage: Stage) -> Result<()> {
    config.validate()?;
    let run = RunDir::new(config.out_dir()?);
    let split = load_split(&run)?;
    let dir = run.train_dir();
    std::fs::create_dir_all(&dir)?;

    let valset = MatchSet::from_pairs(split.validation.matched_pairs());
    let pretrain_cfg = config.pretrain_config();
    if valset.is_empty() && pretrain_cfg.eval_metric == StopMetric::ValidationRecall {
        log::warn!(
            "validation split has no matched pairs; the recall stopping metric is constant"
        );
    }
    let data = TrainData::from_log(&split.train);
    let init = init_model(
        split.train.side_a_count,
        split.train.side_b_count,
        config.dim,
        config.init_seed(),
    )?;
    let outcome = train(&init, &data, Some(&valset), &pretrain_cfg)?;
    let backbone_path = dir.join("backbone.json");
    outcome.model.save(&backbone_path)?;
    let pretrain_history = dir.join("pretrain_history.json");
    write_json(
        &pretrain_history,
        &HistoryFile {
            best_epoch: outcome.best_epoch,
            epochs: &outcome.history,
        },
    )?;
    let mut files = vec![backbone_path, pretrain_history];

    let mut meta = Metadata::new("train", config)?;
    meta.insert_detail(
        "stage",
        match stage {
            Stage::Both => "both",
            Stage::PretrainOnly => "pretrain-only",
        },
    )?;
    meta.insert_detail("pretrain_epochs_run", outcome.history.len())?;
    meta.insert_detail("pretrain_best_epoch", outcome.best_epoch)?;

    if stage == Stage::Both {
        let sets = derive_treatment_sets(&split.train);
        let bundle = init_from_pretrained(&outcome.model);
        let finetuned =
            counterfactual_finetune(&bundle, &sets, &split.train, Some(&valset), &config.finetune_config())?;
        let treatments_path = dir.join("treatments.json");
        finetuned.models.save(&treatments_path)?;
        let finetune_history = dir.join("finetune_history.json");
        write_json(
            &finetune_history,
            &HistoryFile {
                best_epoch: finetuned.best_epoch,
                epochs: &finetuned.history,
            },
        )?;
        files.push(treatments_path);
        files.push(finetune_history);
        meta.insert_detail("finetune_epochs_run", finetuned.history.len())?;
        meta.insert_detail("finetune_best_epoch", finetuned.best_epoch)?;
        meta.insert_detail("treatment_set_sizes", [sets.d11.len(), sets.d10.len(), sets.d01.len()])?;
    }

    let meta_path = dir.join("metadata.json");
    meta.write(&meta_path)?;
    files.push(meta_path);
    run.update_manifest("train", &files)?;

    println!(
        "trained {} epoch(s) (best {}), artifacts in {}",
        outcome.history.len(),
        outcome.best_epoch,
        dir.display()
    );
    Ok(())
}

fn check_shape(model_n: usize, model_m: usize, n: usize, m: usize, what: &str) -> Result<()> {
    if model_n != n || model_m != m {
        return Err(Error::Validation(format!(
            "{what} was trained for {model_n} x {model_m} users but the prepared dataset has \
             {n} x {m}"
        )));
    }
    Ok(())
}

fn load_backbone(run: &RunDir) -> Result<LatentFactorModel> {
    let path = run.train_dir().join("backbone.json");
    if !path.exists() {
        return Err(Error::Validation(format!(
            "missing checkpoint {} (run `train` first)",
            path.display()
        )));
    }
    LatentFactorModel::load(&path)
}

fn load_treatments(run: &RunDir) -> Result<TreatmentModels> {
    let path = run.train_dir().join("treatments.json");
    if !path.exists() {
        return Err(Error::Validation(format!(
            "missing checkpoint {} (run `train` with both stages first)",
            path.display()
        )));
    }
    TreatmentModels::load(&path)
}

/// Build top-K lists with the chosen scoring rule; write the metric
/// report (JSON and TSV), the per-side run dumps, and the redundant-rank
/// histogram.
pub fn cmd_evaluate(config: &ExperimentConfig, mode: EvaluateMode) -> Result<()> {
    config.validate()?;
    let run = RunDir::new(config.out_dir()?);
    let split = load_split(&run)?;
    let eval_cfg = config.eval_config();
    let n = split.train.side_a_count;
    let m = split.train.side_b_count;

    let (scored, report) = match mode {
        EvaluateMode::Backbone => {
            let model = load_backbone(&run)?;
            check_shape(model.n(), model.m(), n, m, "the backbone checkpoint")?;
            full_rank_evaluate(&mut BackboneScorer::new(&model), &split, &eval_cfg)?
        }
        EvaluateMode::Dual => run_baseline_dual(
            &split,
            config.dim,
            config.init_seed(),
            &config.pretrain_config(),
            &eval_cfg,
        )?,
        EvaluateMode::CrrsSimple => {
            let bundle = load_treatments(&run)?;
            check_shape(bundle.n(), bundle.m(), n, m, "the treatment checkpoint")?;
            let weights = ScoreWeights {
                w10: config.w10,
                w11: config.w11,
                w01: config.w01,
            };
            full_rank_evaluate(&mut SimpleCrrsScorer::new(&bundle, weights)?, &split, &eval_cfg)?
        }
        EvaluateMode::CrrsRerank => {
            let bundle = load_treatments(&run)?;
            check_shape(bundle.n(), bundle.m(), n, m, "the treatment checkpoint")?;
            let (excl_a, excl_b) = positive_exclusion_maps(&[&split.train]);
            let mut scorer = RerankScorer::new(
                &bundle,
                eval_cfg.vacant_slot_config(),
                &excl_a,
                &excl_b,
                eval_cfg.seed,
            )?;
            full_rank_evaluate(&mut scorer, &split, &eval_cfg)?
        }
    };

    let dir = run.evaluate_dir(mode.dir_name());
    std::fs::create_dir_all(&dir)?;
    let report_json = dir.join("report.json");
    write_json(&report_json, &report)?;
    let report_tsv = dir.join("report.tsv");
    std::fs::write(&report_tsv, report.to_tsv())?;
    let run_a = dir.join("run_a.tsv");
    let run_b = dir.join("run_b.tsv");
    scored.write_tsv(Side::A, &run_a)?;
    scored.write_tsv(Side::B, &run_b)?;
    let matches = MatchSet::from_pairs(split.matched_pairs_test.iter().copied());
    let histogram = redundancy_rank_histogram(&scored.run, &matches);
    let histogram_path = dir.join("histogram.json");
    histogram.write_json(&histogram_path)?;

    let mut meta = Metadata::new("evaluate", config)?;
    meta.insert_detail("mode", mode.dir_name())?;
    meta.insert_detail("evaluable_a", matches.evaluable_count(Side::A))?;
    meta.insert_detail("evaluable_b", matches.evaluable_count(Side::B))?;
    let meta_path = dir.join("metadata.json");
    meta.write(&meta_path)?;
    run.update_manifest(
        &format!("evaluate/{}", mode.dir_name()),
        &[report_json, report_tsv, run_a, run_b, histogram_path, meta_path],
    )?;

    println!(
        "{}: recall_avg {:.4} ndcg_avg {:.4} crecall {:.4} srecall {:.4} rndcg {:.4}",
        mode.dir_name(),
        report.recall_avg,
        report.ndcg_avg,
        report.crecall,
        report.srecall,
        report.rndcg
    );
    Ok(())
}

/// Load the lists an earlier `evaluate --mode <mode>` produced, using the
/// list length K recorded in that evaluation's metadata (the current
/// config's K has no bearing on an already-built run).
fn load_eval_run(run: &RunDir, mode: EvaluateMode) -> Result<(crate::metrics::RecommendationRun, usize)> {
    let eval_dir = run.evaluate_dir(mode.dir_name());
    let run_a = eval_dir.join("run_a.tsv");
    let run_b = eval_dir.join("run_b.tsv");
    let meta_path = eval_dir.join("metadata.json");
    if !run_a.exists() || !run_b.exists() || !meta_path.exists() {
        return Err(Error::Validation(format!(
            "no evaluation run under {} (run `evaluate --mode {}` first)",
            eval_dir.display(),
            mode.dir_name()
        )));
    }
    let k = Metadata::read(&meta_path)?.config_usize("k")?;
    let lists = load_run(&run_a, &run_b, k)?;
    Ok((lists, k))
}

fn write_snapshot(
    out: &mut impl Write,
    snapshot: &StreamingSnapshot,
    side: &str,
    user: &str,
) -> Result<()> {
    writeln!(
        out,
        "{}\t{side}\t{user}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
        snapshot.t,
        snapshot.exact.crecall,
        snapshot.exact.cprecision,
        snapshot.exact.srecall,
        snapshot.exact.sprecision,
        snapshot.mirror.crecall,
        snapshot.mirror.cprecision,
        snapshot.mirror.srecall,
        snapshot.mirror.sprecision,
    )?;
    Ok(())
}

/// Replay an evaluation's lists as a stream of per-user events, writing
/// one metric snapshot per event (plus the initial zero snapshot).
pub fn cmd_stream(config: &ExperimentConfig, mode: EvaluateMode, events_path: &Path) -> Result<()> {
    config.validate()?;
    let run = RunDir::new(config.out_dir()?);
    let split = load_split(&run)?;
    let (lists, k) = load_eval_run(&run, mode)?;
    let matches = MatchSet::from_pairs(split.matched_pairs_test.iter().copied());
    let events = load_events(events_path)?;

    let dir = run.stream_dir();
    std::fs::create_dir_all(&dir)?;
    let trajectory_path = dir.join("trajectory.tsv");
    let mut out = std::io::BufWriter::new(std::fs::File::create(&trajectory_path)?);
    writeln!(
        out,
        "t\tside\tuser\texact_crecall\texact_cprecision\texact_srecall\texact_sprecision\t\
         mirror_crecall\tmirror_cprecision\tmirror_srecall\tmirror_sprecision"
    )?;
    let mut state = streaming_init(k)?;
    write_snapshot(&mut out, &state.snapshot(), "-", "-")?;
    let no_matches = BTreeSet::new();
    for (side, user) in &events {
        let user_matches = matches.matches_of(*side, *user).unwrap_or(&no_matches);
        streaming_process_user(&mut state, *side, *user, lists.list(*side, *user), user_matches)?;
        write_snapshot(&mut out, &state.snapshot(), &side.to_string(), &user.to_string())?;
    }
    out.flush()?;
    drop(out);

    let final_snapshot = state.snapshot();
    let mut meta = Metadata::new("stream", config)?;
    meta.insert_detail("mode", mode.dir_name())?;
    meta.insert_detail("events", events.len())?;
    meta.insert_detail("final", final_snapshot)?;
    let meta_path = dir.join("metadata.json");
    meta.write(&meta_path)?;
    run.update_manifest("stream", &[trajectory_path, meta_path])?;

    println!(
        "replayed {} event(s): crecall {:.4} srecall {:.4}",
        events.len(),
        final_snapshot.exact.crecall,
        final_snapshot.exact.srecall
    );
    Ok(())
}

#[derive(Serialize)]
struct AdjustedOutcome {
    adjustment: AdjustmentReport,
    report: MetricReport,
}

#[derive(Serialize)]
struct AdjustOutputs {
    original: MetricReport,
    uni: AdjustedOutcome,
    rep: AdjustedOutcome,
}

/// Run both list adjusters over an evaluation's run and report the metric
/// movement.
pub fn cmd_adjust(config: &ExperimentConfig, mode: EvaluateMode) -> Result<()> {
    config.validate()?;
    let run = RunDir::new(config.out_dir()?);
    let split = load_split(&run)?;
    let (lists, _) = load_eval_run(&run, mode)?;
    let matches = MatchSet::from_pairs(split.matched_pairs_test.iter().copied());
    let original = compute_report(&lists, &matches);

    let mut rng = ChaCha20Rng::seed_from_u64(derive_seed(config.seed, SeedStream::Adjust));
    let (uni_run, uni_adjustment) = adjust_uni(&lists, &matches, &mut rng);
    let (rep_run, rep_adjustment) = adjust_rep(&lists, &matches, &mut rng);
    let uni_report = compute_report(&uni_run, &matches);
    let rep_report = compute_report(&rep_run, &matches);

    let dir = run.adjust_dir(mode.dir_name());
    std::fs::create_dir_all(&dir)?;
    let mut files = Vec::new();
    for (name, lists) in [
        ("uni_a.tsv", &uni_run.lists_a),
        ("uni_b.tsv", &uni_run.lists_b),
        ("rep_a.tsv", &rep_run.lists_a),
        ("rep_b.tsv", &rep_run.lists_b),
    ] {
        let path = dir.join(name);
        write_lists_tsv(lists, &path)?;
        files.push(path);
    }
    let reports_path = dir.join("reports.json");
    write_json(
        &reports_path,
        &AdjustOutputs {
            original: original.clone(),
            uni: AdjustedOutcome {
                adjustment: uni_adjustment,
                report: uni_report.clone(),
            },
            rep: AdjustedOutcome {
                adjustment: rep_adjustment,
                report: rep_report.clone(),
            },
        },
    )?;
    files.push(reports_path);

    let mut meta = Metadata::new("adjust", config)?;
    meta.insert_detail("mode", mode.dir_name())?;
    let meta_path = dir.join("metadata.json");
    meta.write(&meta_path)?;
    files.push(meta_path);
    run.update_manifest(&format!("adjust/{}", mode.dir_name()), &files)?;

    println!(
        "adjusted {}: crecall {:.4} (rep) <= {:.4} (original) <= {:.4} (uni); srecall {:.4} >= {:.4} >= {:.4}",
        mode.dir_name(),
        rep_report.crecall,
        original.crecall,
        uni_report.crecall,
        rep_report.srecall,
        original.srecall,
        uni_report.srecall
    );
    Ok(())
}
