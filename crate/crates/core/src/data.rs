//! Synthetic datasets for the desk-scale experiments.

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Row-major feature matrix with integer class labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    x: Tensor,
    y: Vec<usize>,
    classes: usize,
}

impl Dataset {
    pub fn new(x: Tensor, y: Vec<usize>, classes: usize) -> Result<Self> {
        if x.rank() != 2 || x.shape()[0] != y.len() {
            return Err(Error::dim("dataset", x.shape(), &[y.len()]));
        }
        if let Some(&bad) = y.iter().find(|&&c| c >= classes) {
            return Err(Error::Validation(format!("label {bad} out of range for {classes} classes")));
        }
        Ok(Dataset { x, y, classes })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn features(&self) -> usize {
        self.x.shape()[1]
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn x(&self) -> &Tensor {
        &self.x
    }

    pub fn labels(&self) -> &[usize] {
        &self.y
    }

    /// Gathers the given rows into a batch.
    pub fn batch(&self, rows: &[usize]) -> Result<(Tensor, Vec<usize>)> {
        let f = self.features();
        let mut data = Vec::with_capacity(rows.len() * f);
        let mut labels = Vec::with_capacity(rows.len());
        for &r in rows {
            if r >= self.len() {
                return Err(Error::Validation(format!("row {r} out of range for {} rows", self.len())));
            }
            data.extend_from_slice(&self.x.data()[r * f..(r + 1) * f]);
            labels.push(self.y[r]);
        }
        Ok((Tensor::new(vec![rows.len(), f], data)?, labels))
    }
}

/// Teacher weights on the three useful toy features.
pub const TOY_TEACHER: [f64; 3] = [1.0, -1.0, 0.5];

/// Five standard normal features; the label is `w·x[0..3] + noise > 0`.
/// Features 3 and 4 carry no information about the label.
pub fn toy(samples: usize, noise: f64, rng: &mut impl Rng) -> Result<Dataset> {
    let noise_dist = Normal::new(0.0, noise)
        .map_err(|e| Error::Validation(format!("toy noise: {e}")))?;
    let mut x = Vec::with_capacity(samples * 5);
    let mut y = Vec::with_capacity(samples);
    for _ in 0..samples {
        let row: [f64; 5] = std::array::from_fn(|_| rng.sample(StandardNormal));
        let score: f64 = TOY_TEACHER.iter().zip(&row).map(|(w, v)| w * v).sum::<f64>()
            + noise_dist.sample(rng);
        x.extend_from_slice(&row);
        y.push(usize::from(score > 0.0));
    }
    Dataset::new(Tensor::new(vec![samples, 5], x)?, y, 2)
}

/// Parameters of one two-cluster continual task.
#[derive(Clone, Debug, PartialEq)]
pub struct ClusterSpec {
    pub dims: usize,
    /// Distance between the two class means.
    pub separation: f64,
    pub train: usize,
    pub test: usize,
}

impl Default for ClusterSpec {
    fn default() -> Self {
        ClusterSpec {
            dims: 16,
            separation: 6.0,
            train: 1000,
            test: 400,
        }
    }
}

/// A train/test pair for one task.
#[derive(Clone, Debug)]
pub struct TaskData {
    pub train: Dataset,
    pub test: Dataset,
}

/// One task per entry: unit-variance Gaussian clusters at `±separation/2`
/// along a random direction that differs per task. Classes are balanced and
/// interleaved.
pub fn cluster_tasks(tasks: usize, spec: &ClusterSpec, rng: &mut impl Rng) -> Result<Vec<TaskData>> {
    if spec.dims == 0 {
        return Err(Error::Validation("clusters need at least one dimension".into()));
    }
    (0..tasks)
        .map(|_| {
            let mut dir: Vec<f64> = (0..spec.dims).map(|_| rng.sample(StandardNormal)).collect();
            let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
            dir.iter_mut().for_each(|v| *v /= norm);
            let train = clusters(&dir, spec.separation, spec.train, rng)?;
            let test = clusters(&dir, spec.separation, spec.test, rng)?;
            Ok(TaskData { train, test })
        })
        .collect()
}

fn clusters(dir: &[f64], separation: f64, n: usize, rng: &mut impl Rng) -> Result<Dataset> {
    let d = dir.len();
    let mut x = Vec::with_capacity(n * d);
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let label = i % 2;
        let sign = if label == 1 { 0.5 } else { -0.5 };
        for &u in dir {
            let z: f64 = rng.sample(StandardNormal);
            x.push(sign * separation * u + z);
        }
        y.push(label);
    }
    Dataset::new(Tensor::new(vec![n, d], x)?, y, 2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn toy_labels_follow_teacher() {
        let d = toy(500, 0.0, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        for (row, &label) in d.x().data().chunks(5).zip(d.labels()) {
            let score: f64 = TOY_TEACHER.iter().zip(row).map(|(w, v)| w * v).sum();
            assert_eq!(label, usize::from(score > 0.0));
        }
        let ones = d.labels().iter().filter(|&&c| c == 1).count();
        assert!(ones > 200 && ones < 300);
    }

    #[test]
    fn clusters_are_balanced_and_reproducible() {
        let spec = ClusterSpec {
            train: 10,
            test: 4,
            ..ClusterSpec::default()
        };
        let a = cluster_tasks(2, &spec, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let b = cluster_tasks(2, &spec, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(a[1].train, b[1].train);
        assert_eq!(a[0].test.labels(), &[0, 1, 0, 1]);
        assert_ne!(a[0].train.x(), a[1].train.x());
    }

    #[test]
    fn batch_gathers_rows() {
        let d = Dataset::new(Tensor::matrix(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap(), vec![0, 1, 0], 2)
            .unwrap();
        let (x, y) = d.batch(&[2, 0]).unwrap();
        assert_eq!(x.data(), &[5.0, 6.0, 1.0, 2.0]);
        assert_eq!(y, vec![0, 0]);
        assert!(d.batch(&[3]).is_err());
    }

    #[test]
    fn bad_labels_rejected() {
        let x = Tensor::zeros(&[2, 1]);
        assert!(Dataset::new(x.clone(), vec![0, 2], 2).is_err());
        assert!(Dataset::new(x, vec![0], 2).is_err());
    }
}
