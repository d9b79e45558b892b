//! Gaussian kernel density estimates of replication outcomes.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Bandwidth {
    /// Silverman's rule of thumb.
    Auto,
    Fixed(f64),
}

fn mean_sd(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let ss: f64 = x.iter().map(|v| (v - mean) * (v - mean)).sum();
    (mean, (ss / (n - 1.0)).sqrt())
}

/// Linearly interpolated quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// `0.9 min(sd, IQR / 1.34) n^(-1/5)`, falling back to the standard
/// deviation when the interquartile range vanishes.
pub fn silverman_bandwidth(samples: &[f64]) -> Result<f64> {
    if samples.len() < 2 {
        return Err(Error::domain("at least two samples are needed"));
    }
    if samples.iter().all(|&v| v == samples[0]) {
        return Err(Error::PointMass(samples[0]));
    }
    let (_, sd) = mean_sd(samples);
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let iqr = quantile(&sorted, 0.75) - quantile(&sorted, 0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    Ok(0.9 * spread * (samples.len() as f64).powf(-0.2))
}

/// Density of `samples` evaluated at each grid point.
pub fn kde(samples: &[f64], grid: &[f64], bandwidth: Bandwidth) -> Result<Vec<f64>> {
    if samples.len() < 2 {
        return Err(Error::domain("at least two samples are needed"));
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::domain("samples must be finite"));
    }
    let h = match bandwidth {
        Bandwidth::Auto => silverman_bandwidth(samples)?,
        Bandwidth::Fixed(b) if b > 0.0 && b.is_finite() => b,
        Bandwidth::Fixed(b) => {
            return Err(Error::domain(format!(
                "bandwidth must be positive, got {b}"
            )))
        }
    };
    let norm = 1.0 / (samples.len() as f64 * h * (2.0 * std::f64::consts::PI).sqrt());
    Ok(grid
        .iter()
        .map(|&g| {
            let s: f64 = samples
                .iter()
                .map(|&v| {
                    let u = (g - v) / h;
                    (-0.5 * u * u).exp()
                })
                .sum();
            s * norm
        })
        .collect())
}

/// Grid of `points` values covering the samples plus three bandwidths on
/// each side, with the densities there.
pub fn density_curve(samples: &[f64], points: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if points < 2 {
        return Err(Error::domain(
            "a density curve needs at least two grid points",
        ));
    }
    let h = silverman_bandwidth(samples)?;
    let lo = samples.iter().copied().fold(f64::INFINITY, f64::min) - 3.0 * h;
    let hi = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max) + 3.0 * h;
    let step = (hi - lo) / (points - 1) as f64;
    let grid: Vec<f64> = (0..points).map(|i| lo + step * i as f64).collect();
    let dens = kde(samples, &grid, Bandwidth::Fixed(h))?;
    Ok((grid, dens))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn trapezoid(x: &[f64], y: &[f64]) -> f64 {
        x.windows(2)
            .zip(y.windows(2))
            .map(|(a, b)| (a[1] - a[0]) * (b[0] + b[1]) / 2.0)
            .sum()
    }

    #[test]
    fn repeated_value_with_fixed_bandwidth_is_a_bump() {
        let grid = [-1.0, 2.0, 2.5];
        let d = kde(&[2.0; 5], &grid, Bandwidth::Fixed(0.5)).unwrap();
        let phi = |u: f64| (-0.5 * u * u).exp() / (2.0 * std::f64::consts::PI).sqrt();
        for (g, v) in grid.iter().zip(&d) {
            assert!((v - phi((g - 2.0) / 0.5) / 0.5).abs() < 1e-14);
        }
        assert!(
            matches!(kde(&[2.0; 5], &grid, Bandwidth::Auto), Err(Error::PointMass(v)) if v == 2.0)
        );
    }

    #[test]
    fn recovers_the_normal_density() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s: Vec<f64> = (0..10_000).map(|_| rng.sample(StandardNormal)).collect();
        let grid: Vec<f64> = (0..=60).map(|i| -3.0 + 0.1 * i as f64).collect();
        let d = kde(&s, &grid, Bandwidth::Auto).unwrap();
        let dev = grid
            .iter()
            .zip(&d)
            .map(|(x, v)| (v - (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()).abs())
            .fold(0.0, f64::max);
        assert!(dev <= 0.02, "{dev}");
    }

    #[test]
    fn integrates_to_one() {
        let s = [0.1, 0.15, 0.2, 0.4, 0.22, 0.19];
        let grid: Vec<f64> = (0..=4000).map(|i| -2.0 + 0.001 * i as f64).collect();
        let d = kde(&s, &grid, Bandwidth::Auto).unwrap();
        assert!((trapezoid(&grid, &d) - 1.0).abs() < 1e-3);
        let (g, d) = density_curve(&s, 512).unwrap();
        assert!((trapezoid(&g, &d) - 1.0).abs() < 5e-3);
    }

    #[test]
    fn silverman_reference_value() {
        // sd = 1.5811 and IQR / 1.34 = 1.4925.
        let h = silverman_bandwidth(&[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        assert!((h - 0.9 * (2.0 / 1.34) * 5f64.powf(-0.2)).abs() < 1e-15);
        // Zero IQR falls back to the standard deviation.
        let h = silverman_bandwidth(&[0.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
        assert!((h - 0.9 * 0.2f64.sqrt() * 5f64.powf(-0.2)).abs() < 1e-15);
        assert!(silverman_bandwidth(&[1.0]).is_err());
    }
}
