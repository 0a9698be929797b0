//! Nonparametric bootstrap over grouped samples.
//!
//! A sample is stored as its distinct values with multiplicities. For data
//! with few distinct values (integer counts) a resample is drawn as a
//! multinomial over the groups, which is equivalent to drawing indices with
//! replacement but independent of the sample size.

use rand::Rng;

use crate::par::{self, domain};
use crate::sources::binomial_draw;

pub const RESAMPLES: usize = 200;

#[derive(Debug, Clone, PartialEq)]
pub struct Grouped<T> {
    pub values: Vec<T>,
    pub counts: Vec<u64>,
}

impl<T: Copy> Grouped<T> {
    /// Groups `data` by `key`; the first element of each group represents it.
    pub fn new<K: Ord, F: Fn(&T) -> K>(data: &[T], key: F) -> Self {
        let mut idx: Vec<usize> = (0..data.len()).collect();
        idx.sort_by_key(|&i| key(&data[i]));
        let mut values = Vec::new();
        let mut counts: Vec<u64> = Vec::new();
        for (j, &i) in idx.iter().enumerate() {
            if j > 0 && key(&data[idx[j - 1]]) == key(&data[i]) {
                *counts.last_mut().expect("group exists") += 1;
            } else {
                values.push(data[i]);
                counts.push(1);
            }
        }
        Grouped { values, counts }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// One resample of the same size, as new multiplicities.
    pub fn resample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<u64> {
        let n = self.total();
        let groups = self.values.len();
        let mut out = vec![0u64; groups];
        if (groups as u64) * 4 < n {
            let mut left = n;
            let mut mass_left = n as f64;
            for (o, &c) in out.iter_mut().zip(&self.counts) {
                if left == 0 {
                    break;
                }
                let p = (c as f64 / mass_left).min(1.0);
                let d = binomial_draw(left, p, rng);
                *o = d;
                left -= d;
                mass_left -= c as f64;
            }
        } else if groups as u64 == n {
            for _ in 0..n {
                out[rng.random_range(0..groups)] += 1;
            }
        } else {
            let cum: Vec<u64> = self
                .counts
                .iter()
                .scan(0u64, |s, &c| {
                    *s += c;
                    Some(*s)
                })
                .collect();
            for _ in 0..n {
                let u = rng.random_range(0..n);
                let g = cum.partition_point(|&c| c <= u);
                out[g] += 1;
            }
        }
        out
    }
}

/// Statistic evaluated on `n_resamples` bootstrap resamples.
pub fn replicate<T, F>(g: &Grouped<T>, n_resamples: usize, seed: u64, stat: F) -> Vec<f64>
where
    T: Copy + Sync,
    F: Fn(&[T], &[u64]) -> f64 + Sync + Send,
{
    par::map_indexed(n_resamples, |r| {
        let mut rng = par::substream(seed, domain::BOOTSTRAP, r as u64);
        let w = g.resample(&mut rng);
        stat(&g.values, &w)
    })
}

/// Sample standard deviation (n - 1), ignoring non-finite replicates.
pub fn std_dev(xs: &[f64]) -> f64 {
    let v: Vec<f64> = xs.iter().copied().filter(|x| x.is_finite()).collect();
    if v.len() < 2 {
        return 0.0;
    }
    let m = v.iter().sum::<f64>() / v.len() as f64;
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

/// Weighted mean and population variance.
pub fn weighted_moments(values: &[f64], w: &[u64]) -> (f64, f64) {
    let n: f64 = w.iter().map(|&c| c as f64).sum();
    if n == 0.0 {
        return (f64::NAN, f64::NAN);
    }
    let m = values.iter().zip(w).map(|(v, &c)| v * c as f64).sum::<f64>() / n;
    let var = values.iter().zip(w).map(|(v, &c)| (v - m).powi(2) * c as f64).sum::<f64>() / n;
    (m, var)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grouping_counts() {
        let g = Grouped::new(&[3u64, 1, 3, 3, 0], |v| *v);
        assert_eq!(g.values, vec![0, 1, 3]);
        assert_eq!(g.counts, vec![1, 1, 3]);
    }

    #[test]
    fn resamples_preserve_size() {
        let data: Vec<u64> = (0..10_000).map(|i| i % 7).collect();
        let g = Grouped::new(&data, |v| *v);
        let mut rng = par::substream(1, 2, 3);
        assert_eq!(g.resample(&mut rng).iter().sum::<u64>(), 10_000);
        let cont: Vec<f64> = (0..500).map(|i| i as f64 * 0.37).collect();
        let gc = Grouped::new(&cont, |v| v.to_bits());
        assert_eq!(gc.resample(&mut rng).iter().sum::<u64>(), 500);
    }

    #[test]
    fn bootstrap_error_of_mean_matches_standard_error() {
        let data: Vec<u64> = (0..20_000).map(|i| (i * 7919 % 11) as u64).collect();
        let g = Grouped::new(&data, |v| *v);
        let vals: Vec<f64> = g.values.iter().map(|&v| v as f64).collect();
        let gf = Grouped { values: vals, counts: g.counts.clone() };
        let reps = replicate(&gf, 400, 5, |v, w| weighted_moments(v, w).0);
        let (_, var) = weighted_moments(&gf.values, &gf.counts);
        let se = (var / 20_000.0).sqrt();
        assert!((std_dev(&reps) / se - 1.0).abs() < 0.15);
    }
}
