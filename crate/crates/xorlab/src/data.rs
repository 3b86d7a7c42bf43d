//! The XOR distribution on the hypercube: sampling, exact enumeration and the `z + ξ` split.

use crate::error::{Error, Result};
use crate::rng::{self, Purpose};
use rand::RngCore;

/// Largest number of noise coordinates that exact enumeration accepts.
pub const ENUM_CAP: usize = 24;

/// The four cluster centers `±μ1 = ±(e1 - e2)` and `±μ2 = ±(e1 + e2)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Cluster {
    PlusMu1,
    MinusMu1,
    PlusMu2,
    MinusMu2,
}

impl Cluster {
    /// Fixed reporting order: μ1, −μ1, μ2, −μ2.
    pub const ALL: [Cluster; 4] = [Cluster::PlusMu1, Cluster::MinusMu1, Cluster::PlusMu2, Cluster::MinusMu2];

    /// The first two coordinates of the center.
    pub fn signal(self) -> [f64; 2] {
        match self {
            Cluster::PlusMu1 => [1.0, -1.0],
            Cluster::MinusMu1 => [-1.0, 1.0],
            Cluster::PlusMu2 => [1.0, 1.0],
            Cluster::MinusMu2 => [-1.0, -1.0],
        }
    }

    pub fn label(self) -> f64 {
        let s = self.signal();
        -s[0] * s[1]
    }

    /// The center embedded in `d` dimensions.
    pub fn vector(self, d: usize) -> Vec<f64> {
        let mut v = vec![0.0; d];
        v[..2].copy_from_slice(&self.signal());
        v
    }

    /// Cluster of a point from its first two coordinates.
    pub fn of(x1: f64, x2: f64) -> Cluster {
        match (x1 > 0.0, x2 > 0.0) {
            (true, false) => Cluster::PlusMu1,
            (false, true) => Cluster::MinusMu1,
            (true, true) => Cluster::PlusMu2,
            (false, false) => Cluster::MinusMu2,
        }
    }

    /// Position in [`Cluster::ALL`].
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Cluster::PlusMu1 => "mu1",
            Cluster::MinusMu1 => "neg_mu1",
            Cluster::PlusMu2 => "mu2",
            Cluster::MinusMu2 => "neg_mu2",
        }
    }
}

/// Label `y = -x1·x2`.
pub fn label(x: &[f64]) -> f64 {
    -x[0] * x[1]
}

fn check_dim(d: usize) -> Result<()> {
    if d < 3 {
        return Err(Error::InvalidDimension(d));
    }
    Ok(())
}

fn check_enum(d: usize) -> Result<()> {
    check_dim(d)?;
    if d - 2 > ENUM_CAP {
        return Err(Error::EnumerationTooLarge { noise_dims: d - 2, cap: ENUM_CAP });
    }
    Ok(())
}

/// A labelled hypercube point.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub x: Vec<f64>,
    pub y: f64,
}

impl Sample {
    pub fn new(x: Vec<f64>) -> Self {
        let y = label(&x);
        Sample { x, y }
    }

    /// Signal part: the first two coordinates.
    pub fn z(&self) -> [f64; 2] {
        [self.x[0], self.x[1]]
    }

    /// Noise part: coordinates 3..d.
    pub fn xi(&self) -> &[f64] {
        &self.x[2..]
    }

    pub fn cluster(&self) -> Cluster {
        Cluster::of(self.x[0], self.x[1])
    }
}

/// Splits a hypercube point into `(z, ξ)`, both embedded in `d` dimensions, with `z + ξ = x`.
pub fn split(x: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    check_dim(x.len())?;
    if x.iter().any(|&v| v != 1.0 && v != -1.0) {
        return Err(Error::InvalidArgument("point is not on the hypercube".into()));
    }
    let mut z = vec![0.0; x.len()];
    let mut xi = x.to_vec();
    z[0] = x[0];
    z[1] = x[1];
    xi[0] = 0.0;
    xi[1] = 0.0;
    Ok((z, xi))
}

/// A row-major block of `m` points in `d` dimensions with labels and cluster ids.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub d: usize,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub cluster: Vec<Cluster>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.d..(i + 1) * self.d]
    }

    /// Builds a batch from raw rows; labels and clusters are derived.
    pub fn from_rows(d: usize, x: Vec<f64>) -> Result<Self> {
        check_dim(d)?;
        if x.len() % d != 0 {
            return Err(Error::DimensionMismatch { expected: d, got: x.len() % d });
        }
        let m = x.len() / d;
        let mut y = Vec::with_capacity(m);
        let mut cluster = Vec::with_capacity(m);
        for i in 0..m {
            let r = &x[i * d..(i + 1) * d];
            y.push(label(r));
            cluster.push(Cluster::of(r[0], r[1]));
        }
        Ok(Batch { d, x, y, cluster })
    }

    pub fn from_samples(d: usize, samples: &[Sample]) -> Result<Self> {
        let mut x = Vec::with_capacity(samples.len() * d);
        for s in samples {
            if s.x.len() != d {
                return Err(Error::DimensionMismatch { expected: d, got: s.x.len() });
            }
            x.extend_from_slice(&s.x);
        }
        Batch::from_rows(d, x)
    }

    /// `m` i.i.d. uniform points drawn from `rng`.
    pub fn sample<R: RngCore>(d: usize, m: usize, rng: &mut R) -> Result<Self> {
        check_dim(d)?;
        let mut x = vec![0.0; m * d];
        rng::fill_signs(rng, &mut x);
        Batch::from_rows(d, x)
    }

    /// Points with enumeration indices `start..end` (see [`enumerated_point`]).
    pub fn enumerated(d: usize, start: u64, end: u64) -> Result<Self> {
        check_enum(d)?;
        let total = enumeration_size(d)?;
        if start > end || end > total {
            return Err(Error::InvalidArgument(format!("range {start}..{end} outside 0..{total}")));
        }
        let mut x = Vec::with_capacity((end - start) as usize * d);
        for k in start..end {
            x.extend(enumerated_point(d, k));
        }
        Batch::from_rows(d, x)
    }

    pub fn samples(&self) -> Vec<Sample> {
        (0..self.len()).map(|i| Sample { x: self.row(i).to_vec(), y: self.y[i] }).collect()
    }
}

/// Number of points `4·2^(d-2)` in the full enumeration.
pub fn enumeration_size(d: usize) -> Result<u64> {
    check_enum(d)?;
    Ok(1u64 << d)
}

/// The `k`-th hypercube point: bit `b` of `k` set means coordinate `b` is −1.
pub fn enumerated_point(d: usize, k: u64) -> impl Iterator<Item = f64> {
    (0..d).map(move |b| if (k >> b) & 1 == 0 { 1.0 } else { -1.0 })
}

/// Iterates the full enumeration in fixed-size batches; every point has mass `2^-d`.
pub fn enumerate_batches(d: usize, chunk: u64) -> Result<impl Iterator<Item = Batch>> {
    let total = enumeration_size(d)?;
    let chunk = chunk.max(1);
    Ok((0..total.div_ceil(chunk)).map(move |c| {
        let start = c * chunk;
        let end = (start + chunk).min(total);
        Batch::enumerated(d, start, end).expect("range checked")
    }))
}

/// `m` i.i.d. samples from stream `(seed, Data, 0)`.
pub fn sample_batch(d: usize, m: usize, seed: u64) -> Result<Vec<Sample>> {
    if m == 0 {
        return Err(Error::EmptyBatch);
    }
    let mut rng = rng::stream(seed, Purpose::Data, 0);
    Ok(Batch::sample(d, m, &mut rng)?.samples())
}

/// Largest vector length accepted by [`sign_projections`].
pub const PROJECTION_CAP: usize = 26;

/// All `2^n` values of `ξᵀu` for `ξ ∈ {±1}^n`, `n = u.len()`.
///
/// Entry `k` corresponds to the sign pattern whose bit `b` set means `ξ_b = -1`. The sum is
/// assembled as a low-half partial sum plus a high-half partial sum.
pub fn sign_projections(u: &[f64]) -> Result<Vec<f64>> {
    let n = u.len();
    if n > PROJECTION_CAP {
        return Err(Error::EnumerationTooLarge { noise_dims: n, cap: PROJECTION_CAP });
    }
    let lo = n / 2;
    let partial = |v: &[f64]| {
        let mut s = vec![0.0; 1usize << v.len()];
        for k in 0..s.len() {
            s[k] = v.iter().enumerate().map(|(b, &c)| if (k >> b) & 1 == 0 { c } else { -c }).sum();
        }
        s
    };
    let left = partial(&u[..lo]);
    let right = partial(&u[lo..]);
    let mut out = Vec::with_capacity(1usize << n);
    for r in &right {
        for l in &left {
            out.push(l + r);
        }
    }
    Ok(out)
}

/// Iterator over every `ξ ∈ {±1}^(d-2)` embedded in coordinates 3..d.
#[derive(Debug, Clone)]
pub struct NoiseIter {
    d: usize,
    next: u64,
    end: u64,
}

impl Iterator for NoiseIter {
    type Item = Vec<f64>;

    fn next(&mut self) -> Option<Vec<f64>> {
        if self.next >= self.end {
            return None;
        }
        let k = self.next;
        self.next += 1;
        let mut v = vec![0.0; self.d];
        for (b, slot) in v[2..].iter_mut().enumerate() {
            *slot = if (k >> b) & 1 == 0 { 1.0 } else { -1.0 };
        }
        Some(v)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let n = (self.end - self.next) as usize;
        (n, Some(n))
    }
}

impl ExactSizeIterator for NoiseIter {}

pub fn enumerate_noise(d: usize) -> Result<NoiseIter> {
    check_enum(d)?;
    Ok(NoiseIter { d, next: 0, end: 1u64 << (d - 2) })
}

/// Hands out one fresh batch per step from disjoint streams and records how much of each
/// stream was consumed.
#[derive(Debug, Clone)]
pub struct DataStream {
    seed: u64,
    d: usize,
    m: usize,
    next_step: u64,
    words_per_step: u128,
}

impl DataStream {
    pub fn new(seed: u64, d: usize, m: usize) -> Result<Self> {
        check_dim(d)?;
        if m == 0 {
            return Err(Error::EmptyBatch);
        }
        Ok(DataStream { seed, d, m, next_step: 0, words_per_step: 0 })
    }

    /// The batch for the next step.
    pub fn next_batch(&mut self) -> Batch {
        let mut rng = rng::stream(self.seed, Purpose::Data, self.next_step);
        let b = Batch::sample(self.d, self.m, &mut rng).expect("dimensions checked");
        self.words_per_step = rng.get_word_pos();
        self.next_step += 1;
        b
    }

    /// Steps served so far; step `t` always reads stream `t` from word 0.
    pub fn steps_served(&self) -> u64 {
        self.next_step
    }

    /// Words read from the most recent stream.
    pub fn words_per_step(&self) -> u128 {
        self.words_per_step
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn labels_follow_xor() {
        let mut x = vec![1.0; 6];
        assert_eq!(label(&x), -1.0);
        x[1] = -1.0;
        let s = Sample::new(x);
        assert_eq!(s.y, 1.0);
        assert_eq!(s.cluster(), Cluster::PlusMu1);
    }

    #[test]
    fn split_examples() {
        let (z, xi) = split(&[1.0, -1.0, 1.0, -1.0]).unwrap();
        assert_eq!(z, Cluster::PlusMu1.vector(4));
        assert_eq!(xi, vec![0.0, 0.0, 1.0, -1.0]);
        let (z, _) = split(&[1.0, 1.0, 1.0]).unwrap();
        assert_eq!(z, Cluster::PlusMu2.vector(3));
        let (z, _) = split(&[-1.0, -1.0, 1.0]).unwrap();
        assert_eq!(z, Cluster::MinusMu2.vector(3));
        assert!(split(&[1.0, 0.5, 1.0]).is_err());
    }

    #[test]
    fn cluster_directions() {
        for c in Cluster::ALL {
            let v = c.vector(5);
            assert_eq!(v.iter().map(|t| t * t).sum::<f64>(), 2.0);
        }
        assert_eq!(Cluster::PlusMu1.label(), 1.0);
        assert_eq!(Cluster::MinusMu1.label(), 1.0);
        assert_eq!(Cluster::PlusMu2.label(), -1.0);
        assert_eq!(Cluster::MinusMu2.label(), -1.0);
    }

    #[test]
    fn sample_batch_rejects_small_d() {
        assert!(matches!(sample_batch(2, 4, 0), Err(Error::InvalidDimension(2))));
    }

    #[test]
    fn label_mean_is_zero() {
        let s = sample_batch(5, 1_000_000, 11).unwrap();
        let mean = s.iter().map(|s| s.y).sum::<f64>() / s.len() as f64;
        assert!(mean.abs() < 0.005, "{mean}");
    }

    #[test]
    fn sample_batch_is_deterministic() {
        assert_eq!(sample_batch(9, 50, 3).unwrap(), sample_batch(9, 50, 3).unwrap());
        assert_ne!(sample_batch(9, 50, 3).unwrap(), sample_batch(9, 50, 4).unwrap());
    }

    #[test]
    fn coordinate_means_within_five_se() {
        let n = 1_000_000usize;
        let d = 4;
        let mut rng = rng::stream(21, Purpose::Data, 0);
        let b = Batch::sample(d, n, &mut rng).unwrap();
        for k in 0..d {
            let mean = (0..n).map(|i| b.x[i * d + k]).sum::<f64>() / n as f64;
            assert!(mean.abs() < 5.0 / (n as f64).sqrt(), "coordinate {k}: {mean}");
        }
    }

    #[test]
    fn noise_enumeration_counts() {
        let v: Vec<_> = enumerate_noise(3).unwrap().collect();
        assert_eq!(v, vec![vec![0.0, 0.0, 1.0], vec![0.0, 0.0, -1.0]]);
        assert_eq!(enumerate_noise(4).unwrap().count(), 4);
        let all: HashSet<Vec<i8>> =
            enumerate_noise(10).unwrap().map(|v| v.iter().map(|&t| t as i8).collect()).collect();
        assert_eq!(all.len(), 256);
        assert!(matches!(enumerate_noise(27), Err(Error::EnumerationTooLarge { .. })));
    }

    #[test]
    fn enumeration_mass_and_symmetry() {
        let d = 7;
        let n = enumeration_size(d).unwrap();
        let mut per_cluster = [0u64; 4];
        for b in enumerate_batches(d, 19).unwrap() {
            for i in 0..b.len() {
                per_cluster[b.cluster[i].index()] += 1;
                let neg: Vec<f64> = b.row(i).iter().map(|v| -v).collect();
                assert_eq!(label(&neg), b.y[i]);
            }
        }
        assert_eq!(per_cluster.iter().sum::<u64>(), n);
        assert!(per_cluster.iter().all(|&c| c * 4 == n));
    }

    #[test]
    fn projections_match_direct_sums() {
        let u = [0.3, -1.25, 2.0, 0.7, 0.05];
        let v = sign_projections(&u).unwrap();
        assert_eq!(v.len(), 32);
        for (k, got) in v.iter().enumerate() {
            let direct: f64 = u.iter().enumerate().map(|(b, &c)| if (k >> b) & 1 == 0 { c } else { -c }).sum();
            assert!((got - direct).abs() < 1e-14);
        }
        assert_eq!(sign_projections(&[]).unwrap(), vec![0.0]);
    }

    #[test]
    fn data_stream_uses_fixed_stream_per_step() {
        let mut s = DataStream::new(5, 10, 32).unwrap();
        let b0 = s.next_batch();
        let w0 = s.words_per_step();
        let b1 = s.next_batch();
        assert_eq!(s.steps_served(), 2);
        assert_eq!(w0, s.words_per_step());
        assert_eq!(w0, (32 * 10u128).div_ceil(64) * 2);
        assert_ne!(b0, b1);
        let mut again = DataStream::new(5, 10, 32).unwrap();
        assert_eq!(again.next_batch(), b0);
    }
}
