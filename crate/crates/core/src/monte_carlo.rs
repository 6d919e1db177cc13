//! Data-parallel Monte Carlo means with CLT error bars.
//!
//! Samples are split into contiguous index ranges, one per worker; worker
//! `w` draws from `rng.derive(w)`. Partial results are merged pairwise in a
//! fixed tree, so a run is reproducible for a given worker count.

use crate::error::{Error, Result};
use crate::matrix::{ComplexMatrix, RngState, C64};

const BLOCK: usize = 1024;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct McConfig {
    pub samples: usize,
    pub workers: usize,
}

impl McConfig {
    pub fn new(samples: usize) -> Self {
        Self { samples, workers: 1 }
    }

    pub fn with_workers(mut self, workers: usize) -> Self {
        self.workers = workers.max(1);
        self
    }
}

/// Componentwise sample mean of a complex vector-valued statistic, with the
/// per-component variance `E|x − μ|²`.
#[derive(Clone, Debug, PartialEq)]
pub struct MeanEstimate {
    pub mean: Vec<C64>,
    pub variance: Vec<f64>,
    pub samples: usize,
}

impl MeanEstimate {
    /// RMS Euclidean error of the mean vector, `sqrt(Σ var / N)`.
    pub fn std_error(&self) -> f64 {
        if self.samples < 2 {
            return 0.0;
        }
        (self.variance.iter().sum::<f64>() / self.samples as f64).sqrt()
    }

    pub fn three_sigma(&self) -> f64 {
        3.0 * self.std_error()
    }

    /// Standard error of one component.
    pub fn component_std_error(&self, k: usize) -> f64 {
        if self.samples < 2 {
            return 0.0;
        }
        (self.variance[k] / self.samples as f64).sqrt()
    }

    pub fn scaled(mut self, s: f64) -> Self {
        for m in &mut self.mean {
            *m *= s;
        }
        for v in &mut self.variance {
            *v *= s * s;
        }
        self
    }

    /// Interprets the first `rows·cols` components as a row-major matrix.
    pub fn mean_matrix(&self, rows: usize, cols: usize) -> ComplexMatrix {
        ComplexMatrix::from_fn(rows, cols, |r, c| self.mean[r * cols + c])
    }
}

#[derive(Clone, Debug)]
struct Partial {
    count: usize,
    mean: Vec<C64>,
    m2: Vec<f64>,
}

impl Partial {
    fn empty(len: usize) -> Self {
        Self {
            count: 0,
            mean: vec![C64::new(0.0, 0.0); len],
            m2: vec![0.0; len],
        }
    }

    fn from_block(block: &[C64], len: usize, count: usize) -> Self {
        let mut mean = vec![C64::new(0.0, 0.0); len];
        for row in block.chunks_exact(len) {
            for (m, x) in mean.iter_mut().zip(row) {
                *m += x;
            }
        }
        for m in &mut mean {
            *m /= count as f64;
        }
        let mut m2 = vec![0.0; len];
        for row in block.chunks_exact(len) {
            for ((s, x), m) in m2.iter_mut().zip(row).zip(&mean) {
                *s += (x - m).norm_sqr();
            }
        }
        Self { count, mean, m2 }
    }

    fn merge(a: Partial, b: Partial) -> Partial {
        if a.count == 0 {
            return b;
        }
        if b.count == 0 {
            return a;
        }
        let n = (a.count + b.count) as f64;
        let wa = a.count as f64 / n;
        let wb = b.count as f64 / n;
        let cross = a.count as f64 * b.count as f64 / n;
        let mean = a.mean.iter().zip(&b.mean).map(|(x, y)| x * wa + y * wb).collect();
        let m2 = a
            .m2
            .iter()
            .zip(&b.m2)
            .zip(a.mean.iter().zip(&b.mean))
            .map(|((sa, sb), (ma, mb))| sa + sb + (mb - ma).norm_sqr() * cross)
            .collect();
        Partial {
            count: a.count + b.count,
            mean,
            m2,
        }
    }
}

fn pairwise(mut parts: Vec<Partial>, len: usize) -> Partial {
    if parts.is_empty() {
        return Partial::empty(len);
    }
    while parts.len() > 1 {
        let mut next = Vec::with_capacity(parts.len().div_ceil(2));
        let mut it = parts.into_iter();
        while let Some(a) = it.next() {
            match it.next() {
                Some(b) => next.push(Partial::merge(a, b)),
                None => next.push(a),
            }
        }
        parts = next;
    }
    parts.pop().expect("non-empty")
}

fn run_range<F>(range: std::ops::Range<usize>, len: usize, rng: &mut RngState, sample: &F) -> Result<Partial>
where
    F: Fn(&mut RngState, usize, &mut [C64]) -> Result<()> + Sync,
{
    let mut blocks = Vec::new();
    let mut buf = vec![C64::new(0.0, 0.0); BLOCK * len];
    let mut start = range.start;
    while start < range.end {
        let count = BLOCK.min(range.end - start);
        for k in 0..count {
            let slot = &mut buf[k * len..(k + 1) * len];
            slot.fill(C64::new(0.0, 0.0));
            sample(rng, start + k, slot)?;
        }
        blocks.push(Partial::from_block(&buf[..count * len], len, count));
        start += count;
    }
    Ok(pairwise(blocks, len))
}

/// Mean of `len`-component samples. `sample(rng, index, out)` writes one
/// sample into `out`, which arrives zeroed.
pub fn estimate_mean<F>(mc: &McConfig, rng: &RngState, len: usize, sample: F) -> Result<MeanEstimate>
where
    F: Fn(&mut RngState, usize, &mut [C64]) -> Result<()> + Sync,
{
    if mc.samples == 0 {
        return Err(Error::Contract("Monte Carlo sample count must be positive".into()));
    }
    let workers = mc.workers.clamp(1, mc.samples);
    let bounds: Vec<usize> = (0..=workers).map(|w| w * mc.samples / workers).collect();
    let partials: Vec<Result<Partial>> = if workers == 1 {
        vec![run_range(0..mc.samples, len, &mut rng.derive(0), &sample)]
    } else {
        std::thread::scope(|scope| {
            let handles: Vec<_> = (0..workers)
                .map(|w| {
                    let range = bounds[w]..bounds[w + 1];
                    let mut local = rng.derive(w as u64);
                    let sample = &sample;
                    scope.spawn(move || run_range(range, len, &mut local, sample))
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("Monte Carlo worker panicked"))
                .collect()
        })
    };
    let partials = partials.into_iter().collect::<Result<Vec<_>>>()?;
    let total = pairwise(partials, len);
    let denom = (total.count.max(2) - 1) as f64;
    Ok(MeanEstimate {
        mean: total.mean,
        variance: total.m2.iter().map(|s| s / denom).collect(),
        samples: total.count,
    })
}

/// A Monte Carlo residual together with its 3σ CLT bound.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundedResidual {
    pub residual: f64,
    pub bound: f64,
    pub samples: usize,
}

impl BoundedResidual {
    pub fn passed(&self) -> bool {
        self.residual <= self.bound
    }
}

/// Writes a matrix row-major into a sample slot.
pub fn write_matrix(out: &mut [C64], m: &ComplexMatrix, scale: C64) {
    for (o, x) in out.iter_mut().zip(m.as_slice()) {
        *o = x * scale;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform_mean(mc: McConfig, seed: u64) -> MeanEstimate {
        estimate_mean(&mc, &RngState::new(seed), 2, |rng, _, out| {
            out[0] = C64::new(rng.uniform(), 0.0);
            out[1] = C64::new(rng.normal(), rng.normal());
            Ok(())
        })
        .unwrap()
    }

    #[test]
    fn moments_of_known_distributions() {
        let est = uniform_mean(McConfig::new(200_000), 1);
        assert!((est.mean[0].re - 0.5).abs() < 4.0 * est.component_std_error(0));
        assert!((est.variance[0] - 1.0 / 12.0).abs() < 1e-3);
        assert!((est.variance[1] - 2.0).abs() < 0.03);
    }

    #[test]
    fn deterministic_per_worker_count() {
        let a = uniform_mean(McConfig::new(10_000).with_workers(3), 7);
        let b = uniform_mean(McConfig::new(10_000).with_workers(3), 7);
        assert_eq!(a, b);
        let c = uniform_mean(McConfig::new(10_000).with_workers(1), 7);
        assert_eq!(c.samples, a.samples);
    }

    #[test]
    fn merged_statistics_match_direct_computation() {
        let xs: Vec<f64> = (0..5000).map(|k| ((k * 37) % 101) as f64 / 7.0).collect();
        let est = estimate_mean(&McConfig::new(xs.len()), &RngState::new(0), 1, |_, i, out| {
            out[0] = C64::new(xs[i], 0.0);
            Ok(())
        })
        .unwrap();
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
        assert!((est.mean[0].re - mean).abs() < 1e-12);
        assert!((est.variance[0] - var).abs() < 1e-10);
    }

    #[test]
    fn errors_propagate() {
        let r = estimate_mean(&McConfig::new(10), &RngState::new(0), 1, |_, i, _| {
            if i == 5 {
                Err(Error::Contract("boom".into()))
            } else {
                Ok(())
            }
        });
        assert!(r.is_err());
        assert!(estimate_mean(&McConfig::new(0), &RngState::new(0), 1, |_, _, _| Ok(())).is_err());
    }
}
