//! Adaptive random-walk Metropolis sampling over a box prior, with chain
//! persistence and convergence diagnostics.

use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{CalvalError, Result};
use crate::model::PriorSpec;
use crate::stats::{effective_sample_size, mean, split_psrf, std_dev};

/// Scale multiplier below which adaptation is declared collapsed.
pub const SCALE_COLLAPSE_FLOOR: f64 = 1e-12;

/// Configuration for one Metropolis chain.
#[derive(Debug, Clone)]
pub struct McmcConfig {
    /// Total steps, including burn-in.
    pub n_steps: usize,
    /// Steps discarded from the front; adaptation happens only here.
    pub burn_in: usize,
    /// Keep every `thin`-th post-burn-in state.
    pub thin: usize,
    pub seed: u64,
    /// Starting point; must lie inside the prior box.
    pub initial: Vec<f64>,
    /// Initial per-dimension proposal width as a fraction of prior width.
    pub proposal_scale_fraction: f64,
    /// Acceptance rate the burn-in adaptation steers toward.
    pub target_acceptance: f64,
    /// Steps between adaptation updates during burn-in.
    pub adapt_interval: usize,
}

impl McmcConfig {
    pub fn new(n_steps: usize, burn_in: usize, seed: u64, initial: Vec<f64>) -> Self {
        McmcConfig {
            n_steps,
            burn_in,
            thin: 1,
            seed,
            initial,
            proposal_scale_fraction: 0.1,
            target_acceptance: 0.3,
            adapt_interval: 100,
        }
    }

    fn check(&self, prior: &PriorSpec) -> Result<()> {
        if self.n_steps == 0 || self.burn_in >= self.n_steps {
            return Err(CalvalError::invalid(format!(
                "burn-in {} must be shorter than the chain ({} steps)",
                self.burn_in, self.n_steps
            )));
        }
        if self.thin == 0 {
            return Err(CalvalError::invalid("thinning stride must be at least 1"));
        }
        if self.initial.len() != prior.dim() {
            return Err(CalvalError::DimensionMismatch {
                context: "chain initial point".into(),
                expected: prior.dim(),
                actual: self.initial.len(),
            });
        }
        if !prior.contains(&self.initial) {
            return Err(CalvalError::invalid(
                "chain initial point lies outside the prior box",
            ));
        }
        if !(self.proposal_scale_fraction > 0.0 && self.proposal_scale_fraction.is_finite()) {
            return Err(CalvalError::invalid("proposal scale fraction must be positive"));
        }
        if !(self.target_acceptance > 0.0 && self.target_acceptance < 1.0) {
            return Err(CalvalError::invalid(
                "target acceptance must lie strictly between 0 and 1",
            ));
        }
        if self.adapt_interval == 0 {
            return Err(CalvalError::invalid("adaptation interval must be positive"));
        }
        Ok(())
    }
}

/// Stored posterior samples from one chain.
#[derive(Debug, Clone)]
pub struct McmcChain {
    /// Retained states, one row per sample.
    pub samples: Vec<Vec<f64>>,
    /// Log posterior at each retained state.
    pub log_posterior: Vec<f64>,
    /// Absolute step index of each retained state.
    pub steps: Vec<usize>,
    /// Acceptance rate over post-burn-in steps.
    pub acceptance_rate: f64,
    /// Final adapted scale multiplier.
    pub final_scale: f64,
    pub dim: usize,
}

/// Posterior mean and standard deviation per parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorMoments {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Convergence diagnostics for one chain.
#[derive(Debug, Clone)]
pub struct ChainDiagnostics {
    pub acceptance_rate: f64,
    /// Effective sample size per parameter.
    pub ess: Vec<f64>,
    /// Split potential-scale-reduction factor per parameter.
    pub psrf: Vec<f64>,
    /// Marks parameters whose retained samples never moved.
    pub degenerate: Vec<bool>,
}

/// Run an adaptive random-walk Metropolis chain.
///
/// Proposals are independent Gaussians per dimension with width
/// `scale * fraction * prior_width`. The global `scale` multiplier adapts
/// every `adapt_interval` steps during burn-in by
/// `scale *= exp(0.66 * (window_rate - target))` and is frozen afterwards,
/// so the post-burn-in kernel is a fixed Metropolis kernel. Proposals
/// outside the prior box are rejected without evaluating the posterior.
///
/// `log_post` is only called inside the box. It may return negative
/// infinity; non-finite positive values are errors.
pub fn run_mcmc<F>(prior: &PriorSpec, log_post: F, cfg: &McmcConfig) -> Result<McmcChain>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    cfg.check(prior)?;
    let dim = prior.dim();
    let widths = prior.widths();
    let base: Vec<f64> = widths
        .iter()
        .map(|w| w * cfg.proposal_scale_fraction)
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut current = cfg.initial.clone();
    let mut current_lp = log_post(&current)?;
    if current_lp.is_nan() || current_lp == f64::INFINITY {
        return Err(CalvalError::NonFinite(
            "log posterior at the chain's initial point".into(),
        ));
    }

    let mut scale = 1.0;
    let mut window_accepts = 0usize;
    let mut post_accepts = 0usize;
    let mut samples = Vec::new();
    let mut lps = Vec::new();
    let mut steps = Vec::new();
    let mut proposal = vec![0.0; dim];

    for step in 0..cfg.n_steps {
        for d in 0..dim {
            let z: f64 = StandardNormal.sample(&mut rng);
            proposal[d] = current[d] + scale * base[d] * z;
        }
        let u: f64 = rng.random::<f64>();
        if prior.contains(&proposal) {
            let lp = log_post(&proposal)?;
            if lp.is_nan() || lp == f64::INFINITY {
                return Err(CalvalError::NonFinite(format!(
                    "log posterior at step {step}"
                )));
            }
            if lp - current_lp >= u.ln() {
                current.copy_from_slice(&proposal);
                current_lp = lp;
                if step < cfg.burn_in {
                    window_accepts += 1;
                } else {
                    post_accepts += 1;
                }
            }
        }

        if step < cfg.burn_in && (step + 1) % cfg.adapt_interval == 0 {
            let rate = window_accepts as f64 / cfg.adapt_interval as f64;
            scale *= (0.66 * (rate - cfg.target_acceptance)).exp();
            window_accepts = 0;
            if scale < SCALE_COLLAPSE_FLOOR {
                return Err(CalvalError::StepSizeCollapse {
                    scale,
                    steps: step + 1,
                });
            }
        }

        if step >= cfg.burn_in && (step - cfg.burn_in) % cfg.thin == 0 {
            samples.push(current.clone());
            lps.push(current_lp);
            steps.push(step);
        }
    }

    let post_steps = cfg.n_steps - cfg.burn_in;
    Ok(McmcChain {
        samples,
        log_posterior: lps,
        steps,
        acceptance_rate: post_accepts as f64 / post_steps as f64,
        final_scale: scale,
        dim,
    })
}

impl McmcChain {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Values of parameter `d` across retained samples.
    pub fn column(&self, d: usize) -> Vec<f64> {
        self.samples.iter().map(|s| s[d]).collect()
    }

    /// Write the chain as CSV: `step, theta_1..theta_d, log_posterior`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["step".to_string()];
        for d in 0..self.dim {
            header.push(format!("theta_{}", d + 1));
        }
        header.push("log_posterior".to_string());
        w.write_record(&header)?;
        for i in 0..self.samples.len() {
            let mut rec = vec![self.steps[i].to_string()];
            for v in &self.samples[i] {
                rec.push(format!("{v:.17e}"));
            }
            rec.push(format!("{:.17e}", self.log_posterior[i]));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Read a chain written by [`McmcChain::write_csv`]. Acceptance rate and
    /// final scale are not stored in the CSV and come back as NaN.
    pub fn read_csv(path: &Path) -> Result<McmcChain> {
        let mut r = csv::Reader::from_path(path)?;
        let header = r.headers()?.clone();
        let ncols = header.len();
        if ncols < 3 || &header[0] != "step" || &header[ncols - 1] != "log_posterior" {
            return Err(CalvalError::Dataset(format!(
                "not a chain CSV: {}",
                path.display()
            )));
        }
        let dim = ncols - 2;
        for d in 0..dim {
            let want = format!("theta_{}", d + 1);
            if header[d + 1] != want {
                return Err(CalvalError::Dataset(format!(
                    "chain CSV column {} is '{}', expected '{}'",
                    d + 1,
                    &header[d + 1],
                    want
                )));
            }
        }
        let mut samples = Vec::new();
        let mut lps = Vec::new();
        let mut steps = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            steps.push(rec[0].parse::<usize>().map_err(|e| {
                CalvalError::Dataset(format!("bad step index '{}': {e}", &rec[0]))
            })?);
            let mut row = Vec::with_capacity(dim);
            for d in 0..dim {
                row.push(rec[d + 1].parse::<f64>().map_err(|e| {
                    CalvalError::Dataset(format!("bad sample value '{}': {e}", &rec[d + 1]))
                })?);
            }
            samples.push(row);
            lps.push(rec[dim + 1].parse::<f64>().map_err(|e| {
                CalvalError::Dataset(format!("bad log posterior '{}': {e}", &rec[dim + 1]))
            })?);
        }
        Ok(McmcChain {
            samples,
            log_posterior: lps,
            steps,
            acceptance_rate: f64::NAN,
            final_scale: f64::NAN,
            dim,
        })
    }
}

/// Mean and standard deviation of each parameter over retained samples.
pub fn posterior_moments(chain: &McmcChain) -> Result<PosteriorMoments> {
    if chain.len() < 2 {
        return Err(CalvalError::TooFew {
            context: "posterior moment samples".into(),
            needed: 2,
            got: chain.len(),
        });
    }
    let mut means = Vec::with_capacity(chain.dim);
    let mut stds = Vec::with_capacity(chain.dim);
    for d in 0..chain.dim {
        let col = chain.column(d);
        means.push(mean(&col));
        stds.push(std_dev(&col));
    }
    Ok(PosteriorMoments {
        mean: means,
        std: stds,
    })
}

/// Effective sample size, split potential-scale-reduction factor, and
/// degeneracy flags per parameter.
pub fn chain_diagnostics(chain: &McmcChain) -> Result<ChainDiagnostics> {
    if chain.len() < 4 {
        return Err(CalvalError::TooFew {
            context: "chain diagnostic samples".into(),
            needed: 4,
            got: chain.len(),
        });
    }
    let mut ess = Vec::with_capacity(chain.dim);
    let mut psrf = Vec::with_capacity(chain.dim);
    let mut degenerate = Vec::with_capacity(chain.dim);
    for d in 0..chain.dim {
        let col = chain.column(d);
        let first = col[0];
        let stuck = col.iter().all(|v| *v == first);
        degenerate.push(stuck);
        ess.push(effective_sample_size(&col));
        psrf.push(split_psrf(&col));
    }
    Ok(ChainDiagnostics {
        acceptance_rate: chain.acceptance_rate,
        ess,
        psrf,
        degenerate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use tempfile::tempdir;

    fn gaussian_prior() -> PriorSpec {
        PriorSpec::new(vec![-10.0, -10.0], vec![10.0, 10.0], vec![0.0, 0.0]).unwrap()
    }

    fn gaussian_lp(theta: &[f64]) -> Result<f64> {
        // Independent normals: N(1, 0.5^2) and N(-2, 1.5^2).
        let a = (theta[0] - 1.0) / 0.5;
        let b = (theta[1] + 2.0) / 1.5;
        Ok(-0.5 * (a * a + b * b))
    }

    #[test]
    fn recovers_gaussian_moments() {
        let prior = gaussian_prior();
        let cfg = McmcConfig::new(40_000, 5_000, 42, vec![0.0, 0.0]);
        let chain = run_mcmc(&prior, gaussian_lp, &cfg).unwrap();
        let m = posterior_moments(&chain).unwrap();
        assert_relative_eq!(m.mean[0], 1.0, epsilon = 0.05);
        assert_relative_eq!(m.mean[1], -2.0, epsilon = 0.1);
        assert_relative_eq!(m.std[0], 0.5, epsilon = 0.05);
        assert_relative_eq!(m.std[1], 1.5, epsilon = 0.15);
        assert!(chain.acceptance_rate > 0.1 && chain.acceptance_rate < 0.6);
    }

    #[test]
    fn all_samples_stay_inside_the_prior_box() {
        let prior = PriorSpec::new(vec![0.9, -2.1], vec![1.05, -1.95], vec![1.0, -2.0]).unwrap();
        let cfg = McmcConfig::new(4_000, 1_000, 7, vec![1.0, -2.0]);
        let chain = run_mcmc(&prior, gaussian_lp, &cfg).unwrap();
        for s in &chain.samples {
            assert!(prior.contains(s));
        }
    }

    #[test]
    fn same_seed_reproduces_same_chain() {
        let prior = gaussian_prior();
        let cfg = McmcConfig::new(3_000, 500, 99, vec![0.5, 0.5]);
        let a = run_mcmc(&prior, gaussian_lp, &cfg).unwrap();
        let b = run_mcmc(&prior, gaussian_lp, &cfg).unwrap();
        assert_eq!(a.samples, b.samples);
        assert_eq!(a.log_posterior, b.log_posterior);
    }

    #[test]
    fn different_seeds_differ() {
        let prior = gaussian_prior();
        let mut cfg = McmcConfig::new(3_000, 500, 1, vec![0.5, 0.5]);
        let a = run_mcmc(&prior, gaussian_lp, &cfg).unwrap();
        cfg.seed = 2;
        let b = run_mcmc(&prior, gaussian_lp, &cfg).unwrap();
        assert_ne!(a.samples, b.samples);
    }

    #[test]
    fn thinning_keeps_every_kth_state() {
        let prior = gaussian_prior();
        let mut cfg = McmcConfig::new(2_000, 1_000, 3, vec![0.0, 0.0]);
        cfg.thin = 10;
        let chain = run_mcmc(&prior, gaussian_lp, &cfg).unwrap();
        assert_eq!(chain.len(), 100);
        assert_eq!(chain.steps[0], 1_000);
        assert_eq!(chain.steps[1], 1_010);
    }

    #[test]
    fn unacceptable_posterior_collapses_the_step_size() {
        // Only the initial point has positive density, so no proposal is
        // ever accepted and adaptation shrinks the scale until it trips
        // the collapse guard.
        let prior = gaussian_prior();
        let lp = |theta: &[f64]| -> Result<f64> {
            if theta == [0.0, 0.0] {
                Ok(0.0)
            } else {
                Ok(f64::NEG_INFINITY)
            }
        };
        let cfg = McmcConfig::new(200_000, 180_000, 5, vec![0.0, 0.0]);
        let err = run_mcmc(&prior, lp, &cfg).unwrap_err();
        assert!(
            matches!(err, CalvalError::StepSizeCollapse { .. }),
            "got {err}"
        );
    }

    #[test]
    fn initial_point_outside_box_is_rejected_up_front() {
        let prior = PriorSpec::new(vec![0.0, 0.0], vec![1.0, 1.0], vec![0.5, 0.5]).unwrap();
        let cfg = McmcConfig::new(100, 10, 1, vec![2.0, 0.5]);
        assert!(run_mcmc(&prior, gaussian_lp, &cfg).is_err());
    }

    #[test]
    fn chain_round_trips_through_csv_bitwise() {
        let prior = gaussian_prior();
        let mut cfg = McmcConfig::new(2_000, 500, 11, vec![0.0, 0.0]);
        cfg.thin = 5;
        let chain = run_mcmc(&prior, gaussian_lp, &cfg).unwrap();
        let dir = tempdir().unwrap();
        let path = dir.path().join("chain.csv");
        chain.write_csv(&path).unwrap();
        let back = McmcChain::read_csv(&path).unwrap();
        assert_eq!(chain.samples, back.samples);
        assert_eq!(chain.log_posterior, back.log_posterior);
        assert_eq!(chain.steps, back.steps);
    }

    #[test]
    fn diagnostics_flag_stuck_parameters() {
        let chain = McmcChain {
            samples: (0..64)
                .map(|i| vec![1.0, (i as f64 * 0.7).sin()])
                .collect(),
            log_posterior: vec![0.0; 64],
            steps: (0..64).collect(),
            acceptance_rate: 0.25,
            final_scale: 1.0,
            dim: 2,
        };
        let diag = chain_diagnostics(&chain).unwrap();
        assert!(diag.degenerate[0]);
        assert!(!diag.degenerate[1]);
        assert_eq!(diag.ess.len(), 2);
        assert_eq!(diag.psrf.len(), 2);
    }

    #[test]
    fn healthy_chain_has_reasonable_diagnostics() {
        let prior = gaussian_prior();
        let cfg = McmcConfig::new(20_000, 4_000, 17, vec![0.0, 0.0]);
        let chain = run_mcmc(&prior, gaussian_lp, &cfg).unwrap();
        let diag = chain_diagnostics(&chain).unwrap();
        assert!(diag.ess.iter().all(|e| *e > 100.0), "ess {:?}", diag.ess);
        assert!(
            diag.psrf.iter().all(|r| *r < 1.2),
            "psrf {:?}",
            diag.psrf
        );
        assert!(diag.degenerate.iter().all(|d| !d));
    }
}
