//! Small numeric helpers shared by the surrogate, calibration, and
//! validation modules: moments, Gaussian densities, Latin hypercube
//! sampling, rank statistics, and chain diagnostics.

use crate::error::{CalvalError, Result};
use rand::Rng;
use statrs::distribution::{ContinuousCDF, Normal};

/// Natural log of 2π, used by Gaussian densities.
pub const LN_2PI: f64 = 1.837_877_066_409_345_6;

/// Sample mean. Returns 0 for an empty slice.
pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance (n − 1 denominator). Returns 0 for fewer than
/// two values.
pub fn variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
}

/// Sample standard deviation.
pub fn std_dev(xs: &[f64]) -> f64 {
    variance(xs).sqrt()
}

/// Log density of a univariate normal with the given variance evaluated at
/// the residual `r`, i.e. log N(r; 0, var).
pub fn normal_logpdf(r: f64, var: f64) -> Result<f64> {
    if !(var.is_finite() && var > 0.0) {
        return Err(CalvalError::SingularCovariance(format!(
            "scalar variance {var} is not positive"
        )));
    }
    Ok(-0.5 * (LN_2PI + var.ln() + r * r / var))
}

/// Density of a univariate normal, exp of [`normal_logpdf`].
pub fn normal_pdf(r: f64, var: f64) -> Result<f64> {
    Ok(normal_logpdf(r, var)?.exp())
}

/// Log density of a multivariate normal with diagonal covariance.
pub fn diag_mvn_logpdf(residual: &[f64], variances: &[f64]) -> Result<f64> {
    if residual.len() != variances.len() {
        return Err(CalvalError::DimensionMismatch {
            context: "diag_mvn_logpdf".into(),
            expected: residual.len(),
            actual: variances.len(),
        });
    }
    let mut acc = 0.0;
    for (r, v) in residual.iter().zip(variances) {
        acc += normal_logpdf(*r, *v)?;
    }
    Ok(acc)
}

/// Standard normal CDF.
pub fn std_normal_cdf(z: f64) -> f64 {
    // Unit normal construction cannot fail.
    let n = Normal::new(0.0, 1.0).unwrap();
    n.cdf(z)
}

/// Standard normal quantile function.
pub fn std_normal_inv_cdf(p: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) {
        return Err(CalvalError::invalid(format!(
            "quantile argument {p} outside [0, 1]"
        )));
    }
    let n = Normal::new(0.0, 1.0).unwrap();
    Ok(n.inverse_cdf(p))
}

/// Latin hypercube sample of `n` points over the given per-dimension bounds.
///
/// Each dimension is divided into `n` equal strata; every stratum receives
/// exactly one point, jittered uniformly within the stratum, and the strata
/// are permuted independently per dimension.
pub fn latin_hypercube<R: Rng>(bounds: &[(f64, f64)], n: usize, rng: &mut R) -> Result<Vec<Vec<f64>>> {
    if n < 2 {
        return Err(CalvalError::TooFew {
            context: "latin_hypercube sample size".into(),
            needed: 2,
            got: n,
        });
    }
    for (i, (lo, hi)) in bounds.iter().enumerate() {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(CalvalError::invalid(format!(
                "latin_hypercube bounds for dimension {i} must satisfy lower < upper, got ({lo}, {hi})"
            )));
        }
    }
    let d = bounds.len();
    let mut columns: Vec<Vec<f64>> = Vec::with_capacity(d);
    for (lo, hi) in bounds {
        let width = (hi - lo) / n as f64;
        let mut strata: Vec<usize> = (0..n).collect();
        // Fisher-Yates keeps the draw order independent of d.
        for i in (1..n).rev() {
            let j = rng.random_range(0..=i);
            strata.swap(i, j);
        }
        let col: Vec<f64> = strata
            .iter()
            .map(|s| lo + (*s as f64 + rng.random::<f64>()) * width)
            .collect();
        columns.push(col);
    }
    Ok((0..n).map(|i| columns.iter().map(|c| c[i]).collect()).collect())
}

/// Average ranks (1-based) of the values, with ties receiving the mean of
/// the ranks they span.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).expect("non-NaN values"));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // Ranks i+1 ..= j+1 share the same value.
        let avg = (i + 1 + j + 1) as f64 / 2.0;
        for k in i..=j {
            ranks[order[k]] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation between two equally long samples.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(CalvalError::DimensionMismatch {
            context: "spearman".into(),
            expected: a.len(),
            actual: b.len(),
        });
    }
    if a.len() < 2 {
        return Err(CalvalError::TooFew {
            context: "spearman sample size".into(),
            needed: 2,
            got: a.len(),
        });
    }
    let ra = average_ranks(a);
    let rb = average_ranks(b);
    pearson(&ra, &rb)
}

/// Pearson correlation of two samples. Degenerate (zero-variance) inputs
/// yield 0.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(CalvalError::DimensionMismatch {
            context: "pearson".into(),
            expected: a.len(),
            actual: b.len(),
        });
    }
    let ma = mean(a);
    let mb = mean(b);
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return Ok(0.0);
    }
    Ok(sab / (saa * sbb).sqrt())
}

/// Two-sample Kolmogorov-Smirnov statistic, the supremum distance between
/// the two empirical CDFs.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(CalvalError::TooFew {
            context: "ks_two_sample".into(),
            needed: 1,
            got: 0,
        });
    }
    let mut sa = a.to_vec();
    let mut sb = b.to_vec();
    sa.sort_by(|x, y| x.partial_cmp(y).expect("non-NaN values"));
    sb.sort_by(|x, y| x.partial_cmp(y).expect("non-NaN values"));
    let (na, nb) = (sa.len() as f64, sb.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < sa.len() && j < sb.len() {
        let x = sa[i].min(sb[j]);
        while i < sa.len() && sa[i] <= x {
            i += 1;
        }
        while j < sb.len() && sb[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    Ok(d)
}

/// Inverse empirical CDF with linear interpolation between order statistics.
///
/// `sorted` must be ascending; `u` in [0, 1] maps onto the closed range
/// [min, max] of the sample, so resampled values never escape the observed
/// range.
pub fn empirical_inv_cdf(sorted: &[f64], u: f64) -> Result<f64> {
    if sorted.is_empty() {
        return Err(CalvalError::TooFew {
            context: "empirical_inv_cdf".into(),
            needed: 1,
            got: 0,
        });
    }
    if !(0.0..=1.0).contains(&u) {
        return Err(CalvalError::invalid(format!(
            "empirical_inv_cdf argument {u} outside [0, 1]"
        )));
    }
    let n = sorted.len();
    if n == 1 {
        return Ok(sorted[0]);
    }
    let pos = u * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        return Ok(sorted[lo]);
    }
    let w = pos - lo as f64;
    Ok(sorted[lo] * (1.0 - w) + sorted[hi] * w)
}

/// Effective sample size of a (possibly autocorrelated) scalar chain using
/// Geyer's initial positive sequence on the sample autocovariances.
pub fn effective_sample_size(chain: &[f64]) -> f64 {
    let n = chain.len();
    if n < 4 {
        return n as f64;
    }
    let m = mean(chain);
    let c0 = chain.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n as f64;
    if c0 == 0.0 {
        // A constant chain carries no information beyond one sample.
        return 1.0;
    }
    let autocov = |t: usize| -> f64 {
        chain[..n - t]
            .iter()
            .zip(&chain[t..])
            .map(|(x, y)| (x - m) * (y - m))
            .sum::<f64>()
            / n as f64
    };
    let mut sum_pairs = 0.0;
    let mut t = 1;
    while t + 1 < n {
        let pair = (autocov(t) + autocov(t + 1)) / c0;
        if pair <= 0.0 {
            break;
        }
        sum_pairs += pair;
        t += 2;
    }
    let ess = n as f64 / (1.0 + 2.0 * sum_pairs);
    ess.clamp(1.0, n as f64)
}

/// Split-chain potential scale reduction factor: the chain is halved and the
/// two halves treated as independent chains in the usual R-hat formula.
/// Values near 1 indicate the two halves explore the same distribution.
pub fn split_psrf(chain: &[f64]) -> f64 {
    let n2 = chain.len() / 2;
    if n2 < 2 {
        return f64::NAN;
    }
    let halves = [&chain[..n2], &chain[chain.len() - n2..]];
    let means: Vec<f64> = halves.iter().map(|h| mean(h)).collect();
    let vars: Vec<f64> = halves.iter().map(|h| variance(h)).collect();
    let w = mean(&vars);
    let grand = mean(&means);
    let b = n2 as f64
        * means.iter().map(|m| (m - grand) * (m - grand)).sum::<f64>()
        / (halves.len() - 1) as f64;
    if w == 0.0 {
        return if b == 0.0 { 1.0 } else { f64::INFINITY };
    }
    let var_hat = (n2 as f64 - 1.0) / n2 as f64 * w + b / n2 as f64;
    (var_hat / w).sqrt()
}
