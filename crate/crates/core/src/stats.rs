//! Mergeable sample statistics. Blocks are merged in a fixed order, so the
//! results do not depend on how blocks were scheduled across threads.

/// Count, mean and central moments up to order four.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Moments {
    pub n: u64,
    pub mean: f64,
    m2: f64,
    m3: f64,
    m4: f64,
}

impl Moments {
    pub fn push(&mut self, x: f64) {
        let n1 = self.n as f64;
        self.n += 1;
        let n = self.n as f64;
        let delta = x - self.mean;
        let dn = delta / n;
        let dn2 = dn * dn;
        let term1 = delta * dn * n1;
        self.mean += dn;
        self.m4 += term1 * dn2 * (n * n - 3.0 * n + 3.0) + 6.0 * dn2 * self.m2 - 4.0 * dn * self.m3;
        self.m3 += term1 * dn * (n - 2.0) - 3.0 * dn * self.m2;
        self.m2 += term1;
    }

    pub fn merge(&mut self, other: &Moments) {
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = *other;
            return;
        }
        let na = self.n as f64;
        let nb = other.n as f64;
        let n = na + nb;
        let delta = other.mean - self.mean;
        let d2 = delta * delta;
        let m2 = self.m2 + other.m2 + d2 * na * nb / n;
        let m3 = self.m3
            + other.m3
            + d2 * delta * na * nb * (na - nb) / (n * n)
            + 3.0 * delta * (na * other.m2 - nb * self.m2) / n;
        let m4 = self.m4
            + other.m4
            + d2 * d2 * na * nb * (na * na - na * nb + nb * nb) / (n * n * n)
            + 6.0 * d2 * (na * na * other.m2 + nb * nb * self.m2) / (n * n)
            + 4.0 * delta * (na * other.m3 - nb * self.m3) / n;
        self.n += other.n;
        self.mean += delta * nb / n;
        self.m2 = m2;
        self.m3 = m3;
        self.m4 = m4;
    }

    /// Unbiased sample variance.
    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            return 0.0;
        }
        self.m2 / (self.n as f64 - 1.0)
    }

    /// Standard error of the sample mean.
    pub fn se_mean(&self) -> f64 {
        if self.n < 2 {
            return 0.0;
        }
        (self.variance() / self.n as f64).sqrt()
    }

    /// Asymptotic standard error of the sample variance, √((μ4 - σ⁴)/n).
    pub fn se_variance(&self) -> f64 {
        if self.n < 2 {
            return 0.0;
        }
        let n = self.n as f64;
        let mu4 = self.m4 / n;
        let s2 = self.m2 / n;
        ((mu4 - s2 * s2).max(0.0) / n).sqrt()
    }
}

/// |estimate - target| in units of `se`; zero when both the deviation and
/// the standard error vanish.
pub fn z_score(estimate: f64, target: f64, se: f64) -> f64 {
    let dev = (estimate - target).abs();
    if dev == 0.0 {
        0.0
    } else if se == 0.0 {
        f64::INFINITY
    } else {
        dev / se
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(xs: &[f64]) -> (f64, f64, f64) {
        let n = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / n;
        let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
        let m4 = xs.iter().map(|x| (x - m).powi(4)).sum::<f64>() / n;
        (m, v, m4)
    }

    #[test]
    fn merge_matches_single_pass() {
        let xs: Vec<f64> = (0..1000).map(|i| ((i * 7919) % 1013) as f64 / 97.0 + (i as f64).sin()).collect();
        let mut all = Moments::default();
        xs.iter().for_each(|&x| all.push(x));
        let mut a = Moments::default();
        let mut b = Moments::default();
        xs[..313].iter().for_each(|&x| a.push(x));
        xs[313..].iter().for_each(|&x| b.push(x));
        a.merge(&b);
        let (m, v, m4) = naive(&xs);
        for s in [all, a] {
            assert!((s.mean - m).abs() < 1e-12);
            assert!((s.variance() - v).abs() < 1e-10 * v);
            let n = s.n as f64;
            assert!((s.m4 / n - m4).abs() < 1e-9 * m4);
        }
    }

    #[test]
    fn z_score_edge_cases() {
        assert_eq!(z_score(1.0, 1.0, 0.0), 0.0);
        assert!(z_score(1.1, 1.0, 0.0).is_infinite());
        assert!((z_score(1.3, 1.0, 0.1) - 3.0).abs() < 1e-12);
    }
}
