//! Dataset construction. Every dataset is a deterministic function of its
//! spec and the data seed, materialized as dense row-major batches.

use crate::dynamics::{DatasetSpec, LabelMode, LossKind};
use crate::error::Result;
use crate::linalg::{synthesize_with_spectrum, Matrix};
use crate::rng::Stream;

/// Cluster geometry: unit-scale centers, noise well inside the typical
/// center separation so true labels are learnable.
const CENTER_SCALE: f64 = 1.0;
const NOISE_STD: f64 = 0.5;

/// Teacher spectra live in this band: comfortably away from zero so the
/// student has to place energy in every direction.
const TEACHER_SIGMA_LO: f64 = 1.0;
const TEACHER_SIGMA_HI: f64 = 3.0;

#[derive(Clone, Debug)]
pub enum Targets {
    /// Class indices, one per row.
    Labels(Vec<usize>),
    /// Dense regression targets, one row per sample.
    Values(Matrix),
}

#[derive(Clone, Debug)]
pub struct Batch {
    pub x: Matrix,
    pub targets: Targets,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.rows() == 0
    }

    /// Rows of this batch selected by index, in the given order.
    pub fn subset(&self, idx: &[usize]) -> Batch {
        let cols = self.x.cols();
        let mut x = Matrix::zeros(idx.len(), cols);
        for (r, &i) in idx.iter().enumerate() {
            x.row_mut(r).copy_from_slice(self.x.row(i));
        }
        let targets = match &self.targets {
            Targets::Labels(l) => Targets::Labels(idx.iter().map(|&i| l[i]).collect()),
            Targets::Values(v) => {
                let mut out = Matrix::zeros(idx.len(), v.cols());
                for (r, &i) in idx.iter().enumerate() {
                    out.row_mut(r).copy_from_slice(v.row(i));
                }
                Targets::Values(out)
            }
        };
        Batch { x, targets }
    }
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub train: Batch,
    pub val: Option<Batch>,
}

pub fn build_dataset(spec: &DatasetSpec, loss: LossKind, data_seed: u64) -> Result<Dataset> {
    spec.validate()?;
    match spec {
        DatasetSpec::ModularAddition { p, train_fraction } => {
            modular_addition(*p, *train_fraction, loss, data_seed)
        }
        DatasetSpec::GaussianClusters {
            n,
            d,
            classes,
            label_mode,
        } => gaussian_clusters(*n, *d, *classes, *label_mode, loss, data_seed),
        DatasetSpec::LinearTeacher { dim } => linear_teacher(*dim, data_seed),
    }
}

/// One-hot labels, one row per entry of `labels`.
fn one_hot(labels: &[usize], classes: usize) -> Matrix {
    let mut m = Matrix::zeros(labels.len(), classes);
    for (r, &c) in labels.iter().enumerate() {
        m.set(r, c, 1.0);
    }
    m
}

fn targets_for(labels: Vec<usize>, classes: usize, loss: LossKind) -> Targets {
    match loss {
        LossKind::CrossEntropy => Targets::Labels(labels),
        LossKind::Mse => Targets::Values(one_hot(&labels, classes)),
    }
}

fn modular_addition(p: usize, fraction: f64, loss: LossKind, data_seed: u64) -> Result<Dataset> {
    let total = p * p;
    let n_train = ((fraction * total as f64).round() as usize).clamp(1, total);
    let mut order: Vec<usize> = (0..total).collect();
    Stream::new(data_seed, "split").shuffle(&mut order);

    let build = |pairs: &[usize]| -> Batch {
        let mut x = Matrix::zeros(pairs.len(), 2 * p);
        let mut labels = Vec::with_capacity(pairs.len());
        for (r, &pair) in pairs.iter().enumerate() {
            let (a, b) = (pair / p, pair % p);
            x.set(r, a, 1.0);
            x.set(r, p + b, 1.0);
            labels.push((a + b) % p);
        }
        Batch {
            x,
            targets: targets_for(labels, p, loss),
        }
    };

    let val = if n_train < total {
        Some(build(&order[n_train..]))
    } else {
        None
    };
    Ok(Dataset {
        train: build(&order[..n_train]),
        val,
    })
}

fn gaussian_clusters(
    n: usize,
    d: usize,
    classes: usize,
    label_mode: LabelMode,
    loss: LossKind,
    data_seed: u64,
) -> Result<Dataset> {
    let mut center_stream = Stream::new(data_seed, "centers");
    let centers: Vec<Vec<f64>> = (0..classes)
        .map(|_| {
            (0..d)
                .map(|_| CENTER_SCALE * center_stream.normal())
                .collect()
        })
        .collect();

    let mut point_stream = Stream::new(data_seed, "points");
    let mut x = Matrix::zeros(n, d);
    let mut true_labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % classes;
        true_labels.push(c);
        let row = x.row_mut(i);
        for (j, center_j) in centers[c].iter().enumerate() {
            row[j] = center_j + NOISE_STD * point_stream.normal();
        }
    }

    let labels = match label_mode {
        LabelMode::True => true_labels,
        LabelMode::Random => {
            let mut label_stream = Stream::new(data_seed, "labels");
            (0..n).map(|_| label_stream.below(classes as u64) as usize).collect()
        }
    };

    Ok(Dataset {
        train: Batch {
            x,
            targets: targets_for(labels, classes, loss),
        },
        val: None,
    })
}

fn linear_teacher(dim: usize, data_seed: u64) -> Result<Dataset> {
    let mut stream = Stream::new(data_seed, "teacher");
    let mut sigma: Vec<f64> = (0..dim)
        .map(|_| TEACHER_SIGMA_LO + (TEACHER_SIGMA_HI - TEACHER_SIGMA_LO) * stream.uniform())
        .collect();
    sigma.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let teacher = synthesize_with_spectrum(dim, dim, &sigma, &mut stream);
    // Inputs are the standard basis as rows; with predictions X W^T the
    // matching targets are the transposed teacher, so the training loss is
    // exactly the factorization gap (1/dim) * |W - A|_F^2.
    Ok(Dataset {
        train: Batch {
            x: Matrix::identity(dim),
            targets: Targets::Values(teacher.transpose()),
        },
        val: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{DatasetSpec, LabelMode, LossKind};

    #[test]
    fn modular_addition_splits_and_encodes() {
        let spec = DatasetSpec::ModularAddition {
            p: 7,
            train_fraction: 0.4,
        };
        let ds = build_dataset(&spec, LossKind::CrossEntropy, 5).unwrap();
        let val = ds.val.as_ref().unwrap();
        assert_eq!(ds.train.len(), 20); // round(0.4 * 49)
        assert_eq!(val.len(), 29);
        for batch in [&ds.train, val] {
            let labels = match &batch.targets {
                Targets::Labels(l) => l,
                _ => panic!("expected labels"),
            };
            for r in 0..batch.len() {
                let row = batch.x.row(r);
                assert_eq!(row.len(), 14);
                let a = row[..7].iter().position(|&v| v == 1.0).unwrap();
                let b = row[7..].iter().position(|&v| v == 1.0).unwrap();
                assert_eq!(row.iter().sum::<f64>(), 2.0);
                assert_eq!(labels[r], (a + b) % 7);
            }
        }
    }

    #[test]
    fn modular_addition_splits_are_disjoint_and_seed_stable() {
        let spec = DatasetSpec::ModularAddition {
            p: 5,
            train_fraction: 0.5,
        };
        let ds = build_dataset(&spec, LossKind::CrossEntropy, 9).unwrap();
        let ds2 = build_dataset(&spec, LossKind::CrossEntropy, 9).unwrap();
        assert_eq!(ds.train.x.data(), ds2.train.x.data());

        // Decode (a, b) pairs from both splits; together they must cover all 25.
        let decode = |batch: &Batch| -> Vec<(usize, usize)> {
            (0..batch.len())
                .map(|r| {
                    let row = batch.x.row(r);
                    let a = row[..5].iter().position(|&v| v == 1.0).unwrap();
                    let b = row[5..].iter().position(|&v| v == 1.0).unwrap();
                    (a, b)
                })
                .collect()
        };
        let mut all = decode(&ds.train);
        all.extend(decode(ds.val.as_ref().unwrap()));
        all.sort_unstable();
        all.dedup();
        assert_eq!(all.len(), 25);

        let other = build_dataset(&spec, LossKind::CrossEntropy, 10).unwrap();
        assert_ne!(ds.train.x.data(), other.train.x.data());
    }

    #[test]
    fn clusters_are_deterministic_and_labeled_in_range() {
        let spec = DatasetSpec::GaussianClusters {
            n: 40,
            d: 6,
            classes: 4,
            label_mode: LabelMode::True,
        };
        let ds = build_dataset(&spec, LossKind::CrossEntropy, 3).unwrap();
        assert!(ds.val.is_none());
        assert_eq!(ds.train.len(), 40);
        let labels = match &ds.train.targets {
            Targets::Labels(l) => l.clone(),
            _ => panic!(),
        };
        assert!(labels.iter().all(|&c| c < 4));
        // Points of the same class sit near a common center: the spread
        // around the class mean is bounded by a few noise standard
        // deviations in every coordinate.
        for c in 0..4 {
            let members: Vec<usize> = (0..40).filter(|i| labels[*i] == c).collect();
            for j in 0..6 {
                let mean: f64 = members.iter().map(|&i| ds.train.x.get(i, j)).sum::<f64>()
                    / members.len() as f64;
                for &i in &members {
                    assert!((ds.train.x.get(i, j) - mean).abs() < 6.0 * NOISE_STD);
                }
            }
        }
    }

    #[test]
    fn random_labels_break_the_cluster_structure() {
        let base = DatasetSpec::GaussianClusters {
            n: 60,
            d: 5,
            classes: 3,
            label_mode: LabelMode::True,
        };
        let shuffled = DatasetSpec::GaussianClusters {
            n: 60,
            d: 5,
            classes: 3,
            label_mode: LabelMode::Random,
        };
        let a = build_dataset(&base, LossKind::CrossEntropy, 7).unwrap();
        let b = build_dataset(&shuffled, LossKind::CrossEntropy, 7).unwrap();
        // Same points, different labels.
        assert_eq!(a.train.x.data(), b.train.x.data());
        let (la, lb) = match (&a.train.targets, &b.train.targets) {
            (Targets::Labels(la), Targets::Labels(lb)) => (la, lb),
            _ => panic!(),
        };
        assert_ne!(la, lb);
        assert!(lb.iter().all(|&c| c < 3));
    }

    #[test]
    fn mse_mode_produces_one_hot_targets() {
        let spec = DatasetSpec::GaussianClusters {
            n: 10,
            d: 3,
            classes: 2,
            label_mode: LabelMode::True,
        };
        let ds = build_dataset(&spec, LossKind::Mse, 1).unwrap();
        match &ds.train.targets {
            Targets::Values(v) => {
                assert_eq!((v.rows(), v.cols()), (10, 2));
                for r in 0..10 {
                    assert_eq!(v.row(r).iter().sum::<f64>(), 1.0);
                }
            }
            _ => panic!("expected one-hot values"),
        }
    }

    #[test]
    fn linear_teacher_pins_the_optimum() {
        let ds = build_dataset(&DatasetSpec::LinearTeacher { dim: 6 }, LossKind::Mse, 11).unwrap();
        assert_eq!(ds.train.len(), 6);
        let y = match &ds.train.targets {
            Targets::Values(v) => v,
            _ => panic!(),
        };
        // Identity inputs: the target matrix is the transposed teacher, and
        // its spectrum sits in the configured band.
        let teacher = y.transpose();
        let f = crate::linalg::svd(&teacher).unwrap();
        assert!(f.sigma[0] <= TEACHER_SIGMA_HI + 1e-9);
        assert!(*f.sigma.last().unwrap() >= TEACHER_SIGMA_LO - 1e-9);
        for r in 0..6 {
            for c in 0..6 {
                let want = if r == c { 1.0 } else { 0.0 };
                assert_eq!(ds.train.x.get(r, c), want);
            }
        }
    }

    #[test]
    fn subset_reorders_rows_and_targets() {
        let spec = DatasetSpec::GaussianClusters {
            n: 8,
            d: 3,
            classes: 2,
            label_mode: LabelMode::True,
        };
        let ds = build_dataset(&spec, LossKind::CrossEntropy, 2).unwrap();
        let sub = ds.train.subset(&[5, 1]);
        assert_eq!(sub.len(), 2);
        assert_eq!(sub.x.row(0), ds.train.x.row(5));
        assert_eq!(sub.x.row(1), ds.train.x.row(1));
        match (&sub.targets, &ds.train.targets) {
            (Targets::Labels(s), Targets::Labels(full)) => {
                assert_eq!(s[0], full[5]);
                assert_eq!(s[1], full[1]);
            }
            _ => panic!(),
        }
    }
}
