//! Replay buffer of self-labeled training pairs with kernel-novelty admission.

use std::io::{Read, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::adapt::{adaptive_element, FastWeights};
use crate::bnn::NetworkVersion;
use crate::error::{AdaptError, IoError};
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ScoreSpace {
    /// Kernel distance between raw states.
    #[default]
    State,
    /// Kernel distance between mean feature vectors at admission.
    Feature,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct BufferRecord<T> {
    pub x: Vec<T>,
    /// `Wᵀ φ` at admission; never relabeled.
    pub y: Vec<T>,
    pub phi_at_storage: Vec<T>,
    pub sigma_at_storage: u64,
    pub t: T,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BufferConfig {
    pub capacity: usize,
    pub eps_tol: f64,
    pub kernel_width: f64,
    pub space: ScoreSpace,
}

impl Default for BufferConfig {
    fn default() -> Self {
        Self {
            capacity: 250,
            eps_tol: 0.1,
            kernel_width: 0.5,
            space: ScoreSpace::State,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReplayBuffer<T> {
    records: Vec<BufferRecord<T>>,
    capacity: usize,
    eps_tol: T,
    kernel_width: T,
    space: ScoreSpace,
    admitted_total: u64,
}

fn sq_dist<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum()
}

impl<T: Real> ReplayBuffer<T> {
    pub fn new(cfg: &BufferConfig) -> Self {
        assert!(cfg.capacity >= 1, "buffer capacity must be positive");
        assert!(cfg.kernel_width > 0.0, "kernel width must be positive");
        Self {
            records: Vec::new(),
            capacity: cfg.capacity,
            eps_tol: T::lit(cfg.eps_tol),
            kernel_width: T::lit(cfg.kernel_width),
            space: cfg.space,
            admitted_total: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn eps_tol(&self) -> T {
        self.eps_tol
    }

    pub fn space(&self) -> ScoreSpace {
        self.space
    }

    pub fn records(&self) -> &[BufferRecord<T>] {
        &self.records
    }

    /// Admissions since creation, including ones that caused an eviction.
    pub fn admitted_total(&self) -> u64 {
        self.admitted_total
    }

    fn key<'a>(&self, r: &'a BufferRecord<T>) -> &'a [T] {
        match self.space {
            ScoreSpace::State => &r.x,
            ScoreSpace::Feature => &r.phi_at_storage,
        }
    }

    /// `1 - max_j exp(-‖p - p_j‖² / (2 w²))`, or 1 for an empty buffer. `p` is a
    /// state or a feature vector depending on the configured [`ScoreSpace`].
    pub fn independence_score(&self, p: &[T]) -> T {
        let two_w2 = T::lit(2.0) * self.kernel_width * self.kernel_width;
        let nearest = self
            .records
            .iter()
            .map(|r| sq_dist(p, self.key(r)))
            .fold(T::infinity(), T::min);
        if nearest == T::infinity() {
            return T::one();
        }
        T::one() - (-nearest / two_w2).exp()
    }

    /// Admission with features already computed at `x` (the N-draw mean from
    /// the live network version). Labels the point with `y = Wᵀ φ`.
    pub fn admit_with_features(
        &mut self,
        x: &[T],
        t: T,
        w: &FastWeights<T>,
        phi: &[T],
        sigma: u64,
    ) -> Result<bool, AdaptError> {
        let probe = match self.space {
            ScoreSpace::State => x,
            ScoreSpace::Feature => phi,
        };
        if self.independence_score(probe) < self.eps_tol {
            return Ok(false);
        }
        let y = adaptive_element(w, phi)?;
        self.push(BufferRecord {
            x: x.to_vec(),
            y,
            phi_at_storage: phi.to_vec(),
            sigma_at_storage: sigma,
            t,
        });
        Ok(true)
    }

    /// Scores `x`; if novel, computes the feature mean over `draws` posterior
    /// samples of `version`, labels with the live `W` and stores it.
    pub fn try_admit<R: Rng + ?Sized>(
        &mut self,
        x: &[T],
        t: T,
        w: &FastWeights<T>,
        version: &NetworkVersion<T>,
        draws: usize,
        rng: &mut R,
    ) -> Result<bool, AdaptError> {
        let feature_mean = |rng: &mut R| {
            version
                .network()
                .feature_mean(x, draws, rng)
                .map_err(|e| AdaptError::Dimension(e.to_string()))
        };
        if self.space == ScoreSpace::State && self.independence_score(x) < self.eps_tol {
            return Ok(false);
        }
        let phi = feature_mean(rng)?;
        self.admit_with_features(x, t, w, &phi, version.sigma())
    }

    fn push(&mut self, record: BufferRecord<T>) {
        self.records.push(record);
        self.admitted_total += 1;
        if self.records.len() > self.capacity {
            let victim = self.eviction_candidate();
            self.records.remove(victim);
        }
    }

    /// Existing record whose removal leaves the largest minimum pairwise
    /// distance. Only the endpoints of the closest pair can raise that minimum,
    /// so they are the only candidates examined.
    fn eviction_candidate(&self) -> usize {
        let newest = self.records.len() - 1;
        let n = self.records.len();
        if n <= 2 {
            return 0;
        }
        let (mut a, mut b, mut best) = (0, 1, T::infinity());
        for i in 0..n {
            for j in i + 1..n {
                let d = sq_dist(self.key(&self.records[i]), self.key(&self.records[j]));
                if d < best {
                    best = d;
                    a = i;
                    b = j;
                }
            }
        }
        let min_without = |skip: usize| {
            let mut m = T::infinity();
            for i in 0..n {
                if i == skip {
                    continue;
                }
                for j in i + 1..n {
                    if j == skip {
                        continue;
                    }
                    m = m.min(sq_dist(self.key(&self.records[i]), self.key(&self.records[j])));
                }
            }
            m
        };
        match (a == newest, b == newest) {
            (true, _) => b,
            (_, true) => a,
            _ => {
                if min_without(b) > min_without(a) {
                    b
                } else {
                    a
                }
            }
        }
    }

    /// Deep copy of the `(x, y)` pairs for training.
    pub fn snapshot(&self) -> Vec<(Vec<T>, Vec<T>)> {
        self.records.iter().map(|r| (r.x.clone(), r.y.clone())).collect()
    }

    /// Smallest pairwise distance among stored keys, `None` below two records.
    pub fn min_pairwise_distance(&self) -> Option<T> {
        let n = self.records.len();
        if n < 2 {
            return None;
        }
        let mut m = T::infinity();
        for i in 0..n {
            for j in i + 1..n {
                m = m.min(sq_dist(self.key(&self.records[i]), self.key(&self.records[j])));
            }
        }
        Some(m.sqrt())
    }

    /// Distance below which the kernel score falls under `eps_tol`.
    pub fn admission_radius(&self) -> T {
        let one = T::one();
        if self.eps_tol >= one {
            return T::infinity();
        }
        self.kernel_width * (-T::lit(2.0) * (one - self.eps_tol).ln()).sqrt()
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), IoError> {
        write_buffer_csv(&self.records, writer)
    }
}

/// CSV with columns `x1..xn, y1..ym, sigma, t`.
pub fn write_buffer_csv<T: Real, W: Write>(records: &[BufferRecord<T>], writer: W) -> Result<(), IoError> {
    let mut w = csv::Writer::from_writer(writer);
    let (n, m) = records.first().map_or((0, 0), |r| (r.x.len(), r.y.len()));
    let mut header: Vec<String> = (1..=n).map(|i| format!("x{i}")).collect();
    header.extend((1..=m).map(|i| format!("y{i}")));
    header.push("sigma".into());
    header.push("t".into());
    w.write_record(&header)?;
    for r in records {
        let mut rec: Vec<String> = r.x.iter().chain(&r.y).map(|v| v.to_string()).collect();
        rec.push(r.sigma_at_storage.to_string());
        rec.push(r.t.to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads `(x, y)` pairs back from [`write_buffer_csv`] output.
pub fn read_buffer_csv<T: Real, R: Read>(reader: R) -> Result<Vec<(Vec<T>, Vec<T>)>, IoError> {
    let mut r = csv::Reader::from_reader(reader);
    let header = r.headers()?.clone();
    let n = header.iter().filter(|h| h.starts_with('x')).count();
    let m = header.iter().filter(|h| h.starts_with('y')).count();
    if header.len() != n + m + 2 {
        return Err(IoError::Format("buffer CSV needs x*, y*, sigma, t columns".into()));
    }
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let vals = rec
            .iter()
            .take(n + m)
            .map(|s| s.parse::<f64>().map(T::lit))
            .collect::<Result<Vec<T>, _>>()
            .map_err(|e| IoError::Format(e.to_string()))?;
        out.push((vals[..n].to_vec(), vals[n..].to_vec()));
    }
    Ok(out)
}
