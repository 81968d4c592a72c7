//! The six pipeline stages and the artifact readers they share.
//!
//! Every stage function takes the validated configuration and the output
//! directory, reads its inputs from files written by earlier stages, and
//! returns the relative paths of the artifacts it wrote. Randomness is
//! drawn from per-purpose ChaCha streams (one seed, distinct stream
//! numbers), so rerunning a single bias mode reproduces exactly the rows a
//! combined run would have produced for that mode.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bayes_factor::{
    aggregate_bayes_factors, bayes_factors, ensemble_evidence, write_aggregated_csv, write_bf_csv,
    AggregatedBf, BayesFactorRow, BfOptions,
};
use crate::bma::{
    bma_weights, ensemble_prediction_stats, error_report, mix_predictions, write_error_csv,
    write_prediction_csv, ErrorRow, PredictionStats,
};
use crate::config::RunConfig;
use crate::data::{Dataset, DomainTag};
use crate::error::{CalvalError, Result};
use crate::iuq::bias::{estimate_bias, BiasModel};
use crate::iuq::mcmc::{
    chain_diagnostics, posterior_moments, run_mcmc, McmcChain, McmcConfig,
};
use crate::iuq::{log_posterior, LikelihoodContext};
use crate::model::generator::{generate_dataset, GeneratorSettings};
use crate::model::{BenchmarkModel, ParamVector, PriorSpec, THETA_DIM};
use crate::pipeline::BiasMode;
use crate::surrogate::{build_training_design, SurrogateModel};

/// Sub-stream of a stage seed holding uniform prior parameter draws.
pub const STREAM_PRIOR: u64 = 0;
/// Sub-stream holding resampling indices into the no-discrepancy chain.
pub const STREAM_CHAIN_OFF: u64 = 1;
/// Sub-stream holding resampling indices into the with-discrepancy chain.
pub const STREAM_CHAIN_ON: u64 = 2;

/// Draw `m` parameter vectors uniformly from the prior box, as ensemble
/// rows. Stream [`STREAM_PRIOR`] of `seed`.
pub fn prior_ensemble(prior: &PriorSpec, m: usize, seed: u64) -> Result<DMatrix<f64>> {
    if m == 0 {
        return Err(CalvalError::TooFew {
            context: "prior ensemble".into(),
            needed: 1,
            got: 0,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(STREAM_PRIOR);
    let dim = prior.lower.len();
    let mut out = DMatrix::zeros(m, dim);
    for i in 0..m {
        let th = prior.sample(&mut rng);
        for d in 0..dim {
            out[(i, d)] = th.values[d];
        }
    }
    Ok(out)
}

/// Resample `m` states from a stored chain, as ensemble rows. The index
/// draw comes from sub-stream `stream` of `seed`, so every ensemble has
/// its own reproducible stream regardless of which bias modes run.
pub fn resample_chain(
    chain: &McmcChain,
    m: usize,
    seed: u64,
    stream: u64,
) -> Result<DMatrix<f64>> {
    if chain.is_empty() {
        return Err(CalvalError::TooFew {
            context: "chain resampling source".into(),
            needed: 1,
            got: 0,
        });
    }
    if m == 0 {
        return Err(CalvalError::TooFew {
            context: "chain resampling ensemble".into(),
            needed: 1,
            got: 0,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let n = chain.len();
    let mut out = DMatrix::zeros(m, chain.dim);
    for i in 0..m {
        let j = rng.random_range(0..n);
        for d in 0..chain.dim {
            out[(i, d)] = chain.samples[j][d];
        }
    }
    Ok(out)
}

fn to_ranges(pairs: &[[f64; 2]]) -> Vec<(f64, f64)> {
    pairs.iter().map(|r| (r[0], r[1])).collect()
}

fn require_artifact(out: &Path, name: &str, produced_by: &str) -> Result<PathBuf> {
    let p = out.join(name);
    if !p.exists() {
        return Err(CalvalError::MissingStage {
            stage: format!("reading {name}"),
            missing: produced_by.to_string(),
        });
    }
    Ok(p)
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

/// Generate the synthetic measurement campaign: a calibration set and an
/// experiment pool split into validation and prediction sets.
pub fn stage_generate(cfg: &RunConfig, out: &Path) -> Result<Vec<String>> {
    let model = BenchmarkModel::new();
    let mut settings = if cfg.generator.inject_bias {
        GeneratorSettings::biased(cfg.theta_star(), cfg.generator.noise_sd)
    } else {
        GeneratorSettings::unbiased(cfg.theta_star(), cfg.generator.noise_sd)
    };
    settings.distortion = cfg.distortion_family()?;

    let iuq = generate_dataset(
        &model,
        &settings,
        &to_ranges(&cfg.generator.iuq_ranges),
        cfg.generator.n_iuq,
        "C",
        DomainTag::Iuq,
        cfg.seeds.iuq,
    )?;
    iuq.write_csv(&out.join("iuq_raw.csv"))?;

    let pool = generate_dataset(
        &model,
        &settings,
        &to_ranges(&cfg.generator.experiment_ranges),
        cfg.generator.n_experiments,
        "E",
        DomainTag::Validation,
        cfg.seeds.experiments,
    )?;
    let (validation, prediction) = pool.split(cfg.seeds.split)?;
    validation.write_csv(&out.join("validation.csv"))?;
    prediction.write_csv(&out.join("prediction.csv"))?;
    log::info!(
        "generate: {} calibration, {} validation, {} prediction observations",
        iuq.len(),
        validation.len(),
        prediction.len()
    );
    Ok(vec![
        "iuq_raw.csv".into(),
        "validation.csv".into(),
        "prediction.csv".into(),
    ])
}

/// Fit the per-QoI Gaussian-process surrogate on a Latin hypercube over
/// the joint design-parameter box.
pub fn stage_surrogate(cfg: &RunConfig, out: &Path) -> Result<Vec<String>> {
    let model = BenchmarkModel::new();
    let theta_ranges =
        vec![(cfg.surrogate.theta_range[0], cfg.surrogate.theta_range[1]); THETA_DIM];
    let design = build_training_design(
        &to_ranges(&cfg.surrogate.x_ranges),
        &theta_ranges,
        cfg.surrogate.n_train,
        cfg.seeds.surrogate,
    )?;
    let opts = crate::gp::FitOptions::interpolating(cfg.seeds.surrogate);
    let surrogate = SurrogateModel::fit(&model, &design, &opts)?;
    surrogate.save(&out.join("surrogate.json"))?;
    log::info!(
        "surrogate: fitted {} QoI emulators on {} runs",
        surrogate.qoi_dim(),
        cfg.surrogate.n_train
    );
    Ok(vec!["surrogate.json".into()])
}

fn resolve_exempt_indices(names: &[String], qoi_names: &[String]) -> Result<Vec<usize>> {
    names
        .iter()
        .map(|n| {
            qoi_names.iter().position(|q| q == n).ok_or_else(|| {
                CalvalError::Config(format!(
                    "exempt QoI '{n}' is not one of the dataset QoIs {qoi_names:?}"
                ))
            })
        })
        .collect()
}

/// Ingest the calibration data (applying the configured instrument
/// correction), fit the discrepancy model where requested, and sample the
/// posterior for each requested bias mode.
pub fn stage_iuq(cfg: &RunConfig, out: &Path, mode: BiasMode) -> Result<Vec<String>> {
    let raw = Dataset::read_csv(&require_artifact(out, "iuq_raw.csv", "generate")?)?;
    let data = match cfg.correction_family()? {
        Some((family, exempt_names)) => {
            let exempt = resolve_exempt_indices(&exempt_names, &raw.qoi_names)?;
            log::info!(
                "iuq: applying {family} correction to {} of {} QoIs",
                raw.qoi_dim() - exempt.len(),
                raw.qoi_dim()
            );
            raw.apply_correction(family, &exempt)?
        }
        None => raw,
    };
    data.write_csv(&out.join("iuq.csv"))?;

    let surrogate = SurrogateModel::load(&require_artifact(out, "surrogate.json", "surrogate")?)?;
    let prior = cfg.prior_spec()?;
    let mut artifacts = vec!["iuq.csv".to_string()];

    for label in mode.labels() {
        let with_bias = *label == "on";
        let bias_model = if with_bias {
            let theta_ref = ParamVector::new(cfg.prior.initial.clone());
            let bm = estimate_bias(&data, &surrogate, &theta_ref, cfg.seeds.bias)?;
            write_json(&out.join("bias_model.json"), &bm)?;
            artifacts.push("bias_model.json".into());
            bm
        } else {
            BiasModel::disabled(data.qoi_dim())
        };

        let ctx = LikelihoodContext::new(&data, &surrogate, &bias_model)?;
        let seed = if with_bias {
            cfg.seeds.chain + 1
        } else {
            cfg.seeds.chain
        };
        let mut mc = McmcConfig::new(
            cfg.mcmc.n_steps,
            cfg.mcmc.burn_in,
            seed,
            cfg.prior.initial.clone(),
        );
        mc.thin = cfg.mcmc.thin;
        let chain = run_mcmc(&prior, |th| log_posterior(&prior, &ctx, th), &mc)?;
        if !(0.1..=0.6).contains(&chain.acceptance_rate) {
            log::warn!(
                "iuq ({label}): acceptance rate {:.3} outside the healthy band",
                chain.acceptance_rate
            );
        }
        let chain_name = format!("chain_{label}.csv");
        chain.write_csv(&out.join(&chain_name))?;
        artifacts.push(chain_name);

        let moments = posterior_moments(&chain)?;
        let diag = chain_diagnostics(&chain)?;
        for d in 0..chain.dim {
            if diag.degenerate[d] {
                log::warn!("iuq ({label}): parameter theta_{} never moved", d + 1);
            } else if diag.psrf[d] > 1.2 {
                log::warn!(
                    "iuq ({label}): theta_{} split-PSRF {:.3} suggests poor mixing",
                    d + 1,
                    diag.psrf[d]
                );
            }
        }
        let post_name = format!("posterior_{label}.csv");
        let mut w = csv::Writer::from_path(out.join(&post_name))?;
        w.write_record(["bias_mode", "param", "mean", "std", "ess", "psrf"])?;
        for d in 0..chain.dim {
            w.write_record([
                *label,
                &format!("theta_{}", d + 1),
                &format!("{:.17e}", moments.mean[d]),
                &format!("{:.17e}", moments.std[d]),
                &format!("{:.17e}", diag.ess[d]),
                &format!("{:.17e}", diag.psrf[d]),
            ])?;
        }
        w.flush()?;
        artifacts.push(post_name);
        log::info!(
            "iuq ({label}): {} retained samples, acceptance {:.3}",
            chain.len(),
            chain.acceptance_rate
        );
    }
    Ok(artifacts)
}

fn read_bf_rows(path: &Path) -> Result<Vec<BayesFactorRow>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut rows = Vec::new();
    for rec in rdr.deserialize::<(String, String, String, String, f64, f64, usize, usize)>() {
        let (dataset, bias_mode, test_id, qoi, bf, mc_se, n0, n1) = rec?;
        rows.push(BayesFactorRow {
            dataset,
            bias_mode,
            test_id,
            qoi,
            bf,
            mc_se,
            n0,
            n1,
        });
    }
    Ok(rows)
}

/// Score validation-set evidence for each requested bias mode against the
/// prior-predictive ensemble and write per-test and aggregated Bayes
/// factors. Rows from modes not being recomputed are preserved.
pub fn stage_validate(cfg: &RunConfig, out: &Path, mode: BiasMode) -> Result<Vec<String>> {
    let data = Dataset::read_csv(&require_artifact(out, "validation.csv", "generate")?)?;
    let surrogate = SurrogateModel::load(&require_artifact(out, "surrogate.json", "surrogate")?)?;
    let prior = cfg.prior_spec()?;
    let m = cfg.validation.ensemble_size;
    let h_prior = prior_ensemble(&prior, m, cfg.seeds.bayes_factor)?;
    let aggregation = cfg.aggregation()?;

    let mut new_rows: Vec<BayesFactorRow> = Vec::new();
    for label in mode.labels() {
        let with_bias = *label == "on";
        let chain_name = format!("chain_{label}.csv");
        let chain = McmcChain::read_csv(&require_artifact(out, &chain_name, "iuq")?)?;
        let stream = if with_bias {
            STREAM_CHAIN_ON
        } else {
            STREAM_CHAIN_OFF
        };
        let h_post = resample_chain(&chain, m, cfg.seeds.bayes_factor, stream)?;

        let bias_model: Option<BiasModel> = if with_bias && cfg.validation.include_bias_variance {
            Some(read_json(&require_artifact(
                out,
                "bias_model.json",
                "iuq",
            )?)?)
        } else {
            None
        };
        let opts = BfOptions {
            include_bias_variance: bias_model.is_some(),
            joint_qoi: cfg.validation.joint_qoi,
            aggregation,
        };
        let ev_prior = ensemble_evidence(&data, &surrogate, &h_prior, bias_model.as_ref(), &opts)?;
        let ev_post = ensemble_evidence(&data, &surrogate, &h_post, bias_model.as_ref(), &opts)?;
        new_rows.extend(bayes_factors(
            &cfg.dataset_label,
            label,
            &ev_post,
            &ev_prior,
        )?);
    }

    // Merge with rows from modes computed in earlier invocations, keeping
    // the canonical off-then-on block order.
    let bf_path = out.join("bf.csv");
    let mut kept: Vec<BayesFactorRow> = Vec::new();
    if bf_path.exists() {
        let recomputed: Vec<&str> = mode.labels().to_vec();
        kept = read_bf_rows(&bf_path)?
            .into_iter()
            .filter(|r| !recomputed.contains(&r.bias_mode.as_str()))
            .collect();
    }
    let mut all_rows = Vec::with_capacity(kept.len() + new_rows.len());
    for label in ["off", "on"] {
        all_rows.extend(
            kept.iter()
                .chain(new_rows.iter())
                .filter(|r| r.bias_mode == label)
                .cloned(),
        );
    }
    write_bf_csv(&bf_path, &all_rows)?;

    let aggregated = aggregate_bayes_factors(&all_rows, aggregation);
    for a in &aggregated {
        if a.bf < 1.0 {
            log::info!(
                "validate: prior favored for {}/{}/{} (aggregated BF {:.3})",
                a.dataset,
                a.bias_mode,
                a.qoi,
                a.bf
            );
        }
    }
    write_aggregated_csv(&out.join("bf_aggregated.csv"), &aggregated)?;
    Ok(vec!["bf.csv".into(), "bf_aggregated.csv".into()])
}

fn read_aggregated_rows(path: &Path) -> Result<Vec<AggregatedBf>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut rows = Vec::new();
    for rec in rdr.deserialize::<(String, String, String, f64)>() {
        let (dataset, bias_mode, qoi, bf) = rec?;
        rows.push(AggregatedBf {
            dataset,
            bias_mode,
            qoi,
            bf,
        });
    }
    Ok(rows)
}

/// Aggregated calibrated-model weight per QoI for one bias mode, in the
/// dataset's QoI order.
fn calibrated_weights(
    aggregated: &[AggregatedBf],
    dataset: &str,
    bias_mode: &str,
    qoi_names: &[String],
) -> Result<Vec<f64>> {
    let mut weights = Vec::with_capacity(qoi_names.len());
    for q in qoi_names {
        let row = aggregated
            .iter()
            .find(|a| a.dataset == dataset && a.bias_mode == bias_mode && &a.qoi == q)
            .ok_or_else(|| {
                CalvalError::MissingStage {
                    stage: format!("aggregated Bayes factor for {bias_mode}/{q}"),
                    missing: "validate".into(),
                }
            })?;
        let (_, w_cal) = bma_weights(row.bf)?;
        weights.push(w_cal);
    }
    Ok(weights)
}

fn read_prediction_stats(path: &Path) -> Result<Vec<PredictionStats>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut order: Vec<String> = Vec::new();
    let mut by_model: BTreeMap<String, Vec<(String, String, f64, f64)>> = BTreeMap::new();
    for rec in rdr.deserialize::<(String, String, String, String, f64, f64)>() {
        let (_dataset, model, test_id, qoi, mean, std) = rec?;
        if !by_model.contains_key(&model) {
            order.push(model.clone());
        }
        by_model
            .entry(model)
            .or_default()
            .push((test_id, qoi, mean, std));
    }
    let mut out = Vec::new();
    for model in order {
        let rows = &by_model[&model];
        let mut test_ids: Vec<String> = Vec::new();
        let mut qoi_names: Vec<String> = Vec::new();
        for (t, q, _, _) in rows {
            if !test_ids.contains(t) {
                test_ids.push(t.clone());
            }
            if !qoi_names.contains(q) {
                qoi_names.push(q.clone());
            }
        }
        let mut mean = vec![vec![0.0; qoi_names.len()]; test_ids.len()];
        let mut std = vec![vec![0.0; qoi_names.len()]; test_ids.len()];
        for (t, q, m, s) in rows {
            let ti = test_ids.iter().position(|x| x == t).unwrap();
            let qi = qoi_names.iter().position(|x| x == q).unwrap();
            mean[ti][qi] = *m;
            std[ti][qi] = *s;
        }
        out.push(PredictionStats {
            model,
            test_ids,
            qoi_names,
            mean,
            std,
        });
    }
    Ok(out)
}

/// Predict the held-out set under the prior model (A), the calibrated
/// models (B without discrepancy, C with), and their validation-weighted
/// averages (D and E). Models from modes not being recomputed are kept.
pub fn stage_predict(cfg: &RunConfig, out: &Path, mode: BiasMode) -> Result<Vec<String>> {
    let data = Dataset::read_csv(&require_artifact(out, "prediction.csv", "generate")?)?;
    if data.is_empty() {
        return Err(CalvalError::Dataset(
            "prediction set is empty; refusing to predict over nothing".into(),
        ));
    }
    let surrogate = SurrogateModel::load(&require_artifact(out, "surrogate.json", "surrogate")?)?;
    let prior = cfg.prior_spec()?;
    let m = cfg.prediction.ensemble_size;
    let mixture = cfg.mixture_mode()?;
    let aggregated = read_aggregated_rows(&require_artifact(out, "bf_aggregated.csv", "validate")?)?;

    let ens_a = prior_ensemble(&prior, m, cfg.seeds.bma)?;
    let stats_a = ensemble_prediction_stats("A", &data, &surrogate, &ens_a)?;

    let mut fresh: Vec<PredictionStats> = vec![stats_a.clone()];
    let mut recomputed: Vec<&str> = vec!["A"];
    for label in mode.labels() {
        let with_bias = *label == "on";
        let (cal_name, mix_name, stream) = if with_bias {
            ("C", "E", STREAM_CHAIN_ON)
        } else {
            ("B", "D", STREAM_CHAIN_OFF)
        };
        let chain_name = format!("chain_{label}.csv");
        let chain = McmcChain::read_csv(&require_artifact(out, &chain_name, "iuq")?)?;
        let ens = resample_chain(&chain, m, cfg.seeds.bma, stream)?;
        let stats_cal = ensemble_prediction_stats(cal_name, &data, &surrogate, &ens)?;
        let w_cal = calibrated_weights(&aggregated, &cfg.dataset_label, label, &data.qoi_names)?;
        let stats_mix = mix_predictions(mix_name, &stats_a, &stats_cal, &w_cal, mixture)?;
        fresh.push(stats_cal);
        fresh.push(stats_mix);
        recomputed.push(cal_name);
        recomputed.push(mix_name);
    }

    // Keep models from earlier invocations of the other mode.
    let pred_path = out.join("predictions.csv");
    let mut stats_all: Vec<PredictionStats> = fresh;
    if pred_path.exists() {
        for old in read_prediction_stats(&pred_path)? {
            if !recomputed.contains(&old.model.as_str()) {
                stats_all.push(old);
            }
        }
    }
    stats_all.sort_by(|a, b| a.model.cmp(&b.model));
    let refs: Vec<&PredictionStats> = stats_all.iter().collect();
    write_prediction_csv(&pred_path, &cfg.dataset_label, &refs)?;

    let mut errors: Vec<ErrorRow> = Vec::new();
    for s in &stats_all {
        errors.extend(error_report(&cfg.dataset_label, s, &data)?);
    }
    write_error_csv(&out.join("prediction_errors.csv"), &errors)?;
    log::info!(
        "predict: {} models over {} held-out tests",
        stats_all.len(),
        data.len()
    );
    Ok(vec!["predictions.csv".into(), "prediction_errors.csv".into()])
}

fn fmt4(v: f64) -> String {
    format!("{v:.4}")
}

/// Render the campaign's summary tables with fixed four-decimal formatting
/// under `report/`.
pub fn stage_report(cfg: &RunConfig, out: &Path) -> Result<Vec<String>> {
    let report_dir = out.join("report");
    fs::create_dir_all(&report_dir)?;
    let mut artifacts: Vec<String> = Vec::new();

    let bf_rows = read_bf_rows(&require_artifact(out, "bf.csv", "validate")?)?;
    let mut w = csv::Writer::from_path(report_dir.join("bf_per_test.csv"))?;
    w.write_record(["dataset", "bias_mode", "test_id", "qoi", "bf", "prior_favored"])?;
    for r in &bf_rows {
        w.write_record([
            r.dataset.as_str(),
            r.bias_mode.as_str(),
            r.test_id.as_str(),
            r.qoi.as_str(),
            &fmt4(r.bf),
            if r.bf < 1.0 { "true" } else { "false" },
        ])?;
    }
    w.flush()?;
    artifacts.push("report/bf_per_test.csv".into());

    let mut w = csv::Writer::from_path(report_dir.join("weights_per_test.csv"))?;
    w.write_record(["dataset", "bias_mode", "test_id", "qoi", "w_prior", "w_post"])?;
    for r in &bf_rows {
        let (wp, wc) = bma_weights(r.bf).unwrap_or((f64::NAN, f64::NAN));
        w.write_record([
            r.dataset.as_str(),
            r.bias_mode.as_str(),
            r.test_id.as_str(),
            r.qoi.as_str(),
            &fmt4(wp),
            &fmt4(wc),
        ])?;
    }
    w.flush()?;
    artifacts.push("report/weights_per_test.csv".into());

    let aggregated = read_aggregated_rows(&require_artifact(out, "bf_aggregated.csv", "validate")?)?;
    let mut w = csv::Writer::from_path(report_dir.join("bf_aggregated.csv"))?;
    w.write_record(["dataset", "bias_mode", "qoi", "bf", "w_prior", "w_post"])?;
    for a in &aggregated {
        let (wp, wc) = bma_weights(a.bf).unwrap_or((f64::NAN, f64::NAN));
        w.write_record([
            a.dataset.as_str(),
            a.bias_mode.as_str(),
            a.qoi.as_str(),
            &fmt4(a.bf),
            &fmt4(wp),
            &fmt4(wc),
        ])?;
    }
    w.flush()?;
    artifacts.push("report/bf_aggregated.csv".into());

    let mut w = csv::Writer::from_path(report_dir.join("posterior.csv"))?;
    w.write_record(["dataset", "bias_mode", "param", "mean", "std"])?;
    let mut any_posterior = false;
    for label in ["off", "on"] {
        let p = out.join(format!("posterior_{label}.csv"));
        if !p.exists() {
            continue;
        }
        any_posterior = true;
        let mut rdr = csv::Reader::from_path(&p)?;
        for rec in rdr.deserialize::<(String, String, f64, f64, f64, f64)>() {
            let (bias_mode, param, mean, std, _ess, _psrf) = rec?;
            w.write_record([
                cfg.dataset_label.as_str(),
                bias_mode.as_str(),
                param.as_str(),
                &fmt4(mean),
                &fmt4(std),
            ])?;
        }
    }
    if !any_posterior {
        return Err(CalvalError::MissingStage {
            stage: "report posterior table".into(),
            missing: "iuq".into(),
        });
    }
    w.flush()?;
    artifacts.push("report/posterior.csv".into());

    let stats = read_prediction_stats(&require_artifact(out, "predictions.csv", "predict")?)?;
    if stats.is_empty() {
        return Err(CalvalError::Dataset(
            "predictions.csv has no rows; nothing to report".into(),
        ));
    }
    let mut w = csv::Writer::from_path(report_dir.join("predictions.csv"))?;
    w.write_record(["dataset", "model", "test_id", "qoi", "mean", "std"])?;
    for s in &stats {
        for (t, id) in s.test_ids.iter().enumerate() {
            for (k, q) in s.qoi_names.iter().enumerate() {
                w.write_record([
                    cfg.dataset_label.as_str(),
                    s.model.as_str(),
                    id.as_str(),
                    q.as_str(),
                    &fmt4(s.mean[t][k]),
                    &fmt4(s.std[t][k]),
                ])?;
            }
        }
    }
    w.flush()?;
    artifacts.push("report/predictions.csv".into());

    let mut rdr =
        csv::Reader::from_path(require_artifact(out, "prediction_errors.csv", "predict")?)?;
    let mut w = csv::Writer::from_path(report_dir.join("prediction_errors.csv"))?;
    w.write_record(["dataset", "model", "qoi", "mean_abs_error"])?;
    for rec in rdr.deserialize::<(String, String, String, f64)>() {
        let (dataset, model, qoi, mae) = rec?;
        w.write_record([dataset.as_str(), model.as_str(), qoi.as_str(), &fmt4(mae)])?;
    }
    w.flush()?;
    artifacts.push("report/prediction_errors.csv".into());

    log::info!("report: {} tables rendered", artifacts.len());
    Ok(artifacts)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prior_ensemble_stays_inside_the_box_and_is_deterministic() {
        let prior = PriorSpec::new(vec![0.0; 5], vec![5.0; 5], vec![1.0; 5]).unwrap();
        let a = prior_ensemble(&prior, 40, 77).unwrap();
        let b = prior_ensemble(&prior, 40, 77).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|v| (0.0..5.0).contains(v)));
        let c = prior_ensemble(&prior, 40, 78).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn resample_chain_draws_existing_states_per_stream() {
        let chain = McmcChain {
            samples: vec![vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]],
            log_posterior: vec![0.0; 3],
            steps: vec![0, 1, 2],
            acceptance_rate: 0.3,
            final_scale: 1.0,
            dim: 2,
        };
        let a = resample_chain(&chain, 25, 9, STREAM_CHAIN_OFF).unwrap();
        let b = resample_chain(&chain, 25, 9, STREAM_CHAIN_ON).unwrap();
        assert_ne!(a, b);
        for i in 0..25 {
            let row: Vec<f64> = a.row(i).iter().copied().collect();
            assert!(chain.samples.contains(&row));
        }
    }

    #[test]
    fn summary_tables_render_values_at_four_decimals() {
        for (v, s) in [
            (0.6162, "0.6162"),
            (0.2113, "0.2113"),
            (4.2967, "4.2967"),
            (1.6851, "1.6851"),
            (2.7487, "2.7487"),
            (3.4627, "3.4627"),
            (0.4616, "0.4616"),
            (0.7521, "0.7521"),
            (0.6967, "0.6967"),
            (0.4730, "0.4730"),
            (1.7724, "1.7724"),
            (2.0249, "2.0249"),
            (2.7713, "2.7713"),
            (1.8043, "1.8043"),
            (2.0, "2.0000"),
            (1.23456, "1.2346"),
        ] {
            assert_eq!(fmt4(v), s);
        }
    }

    #[test]
    fn exempt_names_resolve_to_indices() {
        let qois = vec!["VoidF1".to_string(), "VoidF2".into(), "VoidF4".into()];
        let idx = resolve_exempt_indices(&["VoidF4".to_string()], &qois).unwrap();
        assert_eq!(idx, vec![2]);
        assert!(resolve_exempt_indices(&["VoidF9".to_string()], &qois).is_err());
    }

    #[test]
    fn prediction_stats_round_trip_through_csv() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("predictions.csv");
        let stats = PredictionStats {
            model: "A".into(),
            test_ids: vec!["E001".into(), "E002".into()],
            qoi_names: vec!["VoidF1".into(), "VoidF2".into()],
            mean: vec![vec![1.5, 2.5], vec![3.5, 4.5]],
            std: vec![vec![0.1, 0.2], vec![0.3, 0.4]],
        };
        write_prediction_csv(&p, "demo", &[&stats]).unwrap();
        let back = read_prediction_stats(&p).unwrap();
        assert_eq!(back.len(), 1);
        assert_eq!(back[0].model, "A");
        assert_eq!(back[0].test_ids, stats.test_ids);
        assert_eq!(back[0].mean, stats.mean);
        assert_eq!(back[0].std, stats.std);
    }
}
