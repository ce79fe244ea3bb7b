//! Brute-force k-nearest-neighbour classifier under the Euclidean metric.

use std::cmp::Ordering;

use thiserror::Error;

use crate::codec::{ByteReader, ByteWriter, CodecError};
use crate::dataset::{Dataset, Label, LabeledSample};
use crate::hog::FeatureVector;

pub const DEFAULT_K: usize = 5;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum KnnError {
    #[error("k = {k} exceeds the {n} training samples")]
    KTooLarge { k: usize, n: usize },
    #[error("k must be at least 1")]
    ZeroK,
    #[error("cannot fit on an empty dataset")]
    EmptyDataset,
    #[error("query has dimension {got}, model expects {expected}")]
    DimMismatch { expected: usize, got: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct KnnModel {
    k: usize,
    feature_dim: usize,
    train: Vec<LabeledSample>,
}

pub fn knn_fit(ds: &Dataset, k: usize) -> Result<KnnModel, KnnError> {
    if ds.is_empty() {
        return Err(KnnError::EmptyDataset);
    }
    if k == 0 {
        return Err(KnnError::ZeroK);
    }
    if k > ds.len() {
        return Err(KnnError::KTooLarge { k, n: ds.len() });
    }
    Ok(KnnModel {
        k,
        feature_dim: ds.feature_dim(),
        train: ds.samples().to_vec(),
    })
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

// smaller distance first, then smaller training index
fn neighbour_order(a: &(f64, usize), b: &(f64, usize)) -> Ordering {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
}

impl KnnModel {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn train(&self) -> &[LabeledSample] {
        &self.train
    }

    /// Indices of the k nearest training samples, nearest first.
    pub fn neighbours(&self, x: &FeatureVector) -> Result<Vec<usize>, KnnError> {
        if x.dim() != self.feature_dim {
            return Err(KnnError::DimMismatch {
                expected: self.feature_dim,
                got: x.dim(),
            });
        }
        let mut dist: Vec<(f64, usize)> = self
            .train
            .iter()
            .enumerate()
            .map(|(i, s)| (squared_distance(s.features.values(), x.values()), i))
            .collect();
        if self.k < dist.len() {
            dist.select_nth_unstable_by(self.k - 1, neighbour_order);
            dist.truncate(self.k);
        }
        dist.sort_unstable_by(neighbour_order);
        Ok(dist.into_iter().map(|(_, i)| i).collect())
    }

    /// Majority vote; a tied vote goes to the single nearest neighbour.
    pub fn predict(&self, x: &FeatureVector) -> Result<Label, KnnError> {
        let nn = self.neighbours(x)?;
        let drones = nn
            .iter()
            .filter(|&&i| self.train[i].label == Label::Drone)
            .count();
        let birds = nn.len() - drones;
        Ok(match drones.cmp(&birds) {
            Ordering::Greater => Label::Drone,
            Ordering::Less => Label::Bird,
            Ordering::Equal => self.train[nn[0]].label,
        })
    }

    pub fn write_payload(&self, w: &mut ByteWriter) {
        w.u64(self.k as u64);
        w.u64(self.feature_dim as u64);
        w.u64(self.train.len() as u64);
        for s in &self.train {
            w.str(&s.id);
            w.label(s.label);
            w.f64s(s.features.values());
        }
    }

    pub fn read_payload(r: &mut ByteReader<'_>) -> Result<Self, CodecError> {
        let k = r.usize()?;
        let feature_dim = r.usize()?;
        let n = r.usize()?;
        let mut train = Vec::with_capacity(n.min(1 << 20));
        for _ in 0..n {
            let id = r.str()?;
            let label = r.label()?;
            let features = FeatureVector::new(r.f64s(feature_dim)?);
            train.push(LabeledSample {
                id,
                features,
                label,
            });
        }
        if k == 0 || k > n || feature_dim == 0 {
            return Err(CodecError::Invalid(format!(
                "knn payload: k={k}, n={n}, dim={feature_dim}"
            )));
        }
        Ok(KnnModel {
            k,
            feature_dim,
            train,
        })
    }
}

pub fn knn_predict(m: &KnnModel, x: &FeatureVector) -> Result<Label, KnnError> {
    m.predict(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample(i: usize, xs: &[f64], label: Label) -> LabeledSample {
        LabeledSample {
            id: format!("s{i}"),
            features: FeatureVector::new(xs.to_vec()),
            label,
        }
    }

    fn points(rows: &[(&[f64], Label)]) -> Dataset {
        Dataset::new(
            rows.iter()
                .enumerate()
                .map(|(i, (x, l))| sample(i, x, *l))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn fit_stores_everything_and_checks_k() {
        let xs: Vec<[f64; 1]> = (0..10).map(|i| [i as f64]).collect();
        let ds = points(&xs.iter().map(|x| (&x[..], Label::Bird)).collect::<Vec<_>>());
        let m = knn_fit(&ds, 3).unwrap();
        assert_eq!(m.train().len(), 10);
        assert_eq!(knn_fit(&ds, 11), Err(KnnError::KTooLarge { k: 11, n: 10 }));
        assert_eq!(knn_fit(&ds, 0), Err(KnnError::ZeroK));
        let empty = Dataset::new(vec![]).unwrap();
        assert_eq!(knn_fit(&empty, 1), Err(KnnError::EmptyDataset));
    }

    #[test]
    fn small_majority() {
        let ds = points(&[
            (&[0.0, 0.0], Label::Bird),
            (&[0.0, 1.0], Label::Bird),
            (&[5.0, 5.0], Label::Drone),
        ]);
        let m = knn_fit(&ds, 3).unwrap();
        assert_eq!(m.predict(&vec![0.0, 0.4].into()).unwrap(), Label::Bird);
        let m1 = knn_fit(&ds, 1).unwrap();
        assert_eq!(m1.predict(&vec![5.0, 5.0].into()).unwrap(), Label::Drone);
        assert_eq!(
            m.predict(&vec![1.0].into()),
            Err(KnnError::DimMismatch {
                expected: 2,
                got: 1
            })
        );
    }

    #[test]
    fn sixteen_neighbour_vote() {
        // Five of one class and eleven of the other around the query; all 16 vote.
        let mut rows = Vec::new();
        for i in 0..16 {
            let ang = i as f64 * std::f64::consts::TAU / 16.0;
            let label = if i % 3 == 0 && i < 15 {
                Label::Drone
            } else {
                Label::Bird
            };
            rows.push((vec![ang.cos() * (1.0 + i as f64 * 0.01), ang.sin()], label));
        }
        let drones = rows.iter().filter(|r| r.1 == Label::Drone).count();
        assert_eq!(drones, 5);
        let ds = Dataset::new(
            rows.iter()
                .enumerate()
                .map(|(i, (x, l))| sample(i, x, *l))
                .collect(),
        )
        .unwrap();
        let m = knn_fit(&ds, 16).unwrap();
        assert_eq!(m.predict(&vec![0.0, 0.0].into()).unwrap(), Label::Bird);
    }

    #[test]
    fn even_k_tie_goes_to_nearest() {
        let ds = points(&[
            (&[0.0], Label::Drone),
            (&[1.0], Label::Bird),
            (&[3.0], Label::Bird),
            (&[-2.0], Label::Drone),
        ]);
        let m = knn_fit(&ds, 2).unwrap();
        assert_eq!(m.predict(&vec![0.4].into()).unwrap(), Label::Drone);
        assert_eq!(m.predict(&vec![0.6].into()).unwrap(), Label::Bird);
        // equidistant neighbours: the lower training index is nearer
        assert_eq!(m.predict(&vec![0.5].into()).unwrap(), Label::Drone);
    }

    #[test]
    fn payload_round_trip() {
        let ds = points(&[(&[0.0, 1.5], Label::Bird), (&[2.0, -1.0], Label::Drone)]);
        let m = knn_fit(&ds, 2).unwrap();
        let mut w = ByteWriter::default();
        m.write_payload(&mut w);
        let bytes = w.into_bytes();
        let back = KnnModel::read_payload(&mut ByteReader::new(&bytes)).unwrap();
        assert_eq!(back, m);
    }

    proptest! {
        #[test]
        fn self_prediction_with_k1(xs in proptest::collection::vec((-100i32..100, -100i32..100, any::<bool>()), 1..40)) {
            let mut seen = std::collections::HashSet::new();
            let rows: Vec<_> = xs.into_iter().filter(|(a, b, _)| seen.insert((*a, *b))).collect();
            let ds = Dataset::new(rows.iter().enumerate().map(|(i, (a, b, d))| {
                sample(i, &[*a as f64, *b as f64], if *d { Label::Drone } else { Label::Bird })
            }).collect()).unwrap();
            let m = knn_fit(&ds, 1).unwrap();
            for s in ds.samples() {
                prop_assert_eq!(m.predict(&s.features).unwrap(), s.label);
            }
        }

        #[test]
        fn permutation_invariance(seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            use rand::Rng;
            let mut rng = crate::rng::stream_rng(seed, 1);
            let rows: Vec<LabeledSample> = (0..30).map(|i| {
                let x: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
                sample(i, &x, if rng.random_bool(0.5) { Label::Drone } else { Label::Bird })
            }).collect();
            let mut shuffled = rows.clone();
            shuffled.shuffle(&mut rng);
            let a = knn_fit(&Dataset::new(rows).unwrap(), 5).unwrap();
            let b = knn_fit(&Dataset::new(shuffled).unwrap(), 5).unwrap();
            for _ in 0..20 {
                let q: FeatureVector = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<_>>().into();
                prop_assert_eq!(a.predict(&q).unwrap(), b.predict(&q).unwrap());
            }
        }
    }
}
