//! Synthetic Gaussian-mixture classes split into incremental tasks.

use ndarray::{Array1, Array2, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TalError};
use crate::stream::TaskSchedule;

const MEAN_ATTEMPTS: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianTaskParams {
    pub classes: usize,
    pub dim: usize,
    pub tasks: usize,
    /// Training samples per class.
    pub per_class: usize,
    /// Test samples per class (balanced).
    pub test_per_class: usize,
    /// Minimum pairwise distance between class means; also the sphere radius.
    pub sep: f64,
    /// Isotropic standard deviation around each mean.
    pub noise: f64,
    pub replay_per_class: usize,
}

impl Default for GaussianTaskParams {
    fn default() -> Self {
        Self {
            classes: 10,
            dim: 16,
            tasks: 5,
            per_class: 100,
            test_per_class: 100,
            sep: 3.0,
            noise: 1.0,
            replay_per_class: 20,
        }
    }
}

impl GaussianTaskParams {
    pub fn validate(&self) -> Result<()> {
        if self.classes == 0 || self.dim == 0 || self.per_class == 0 || self.test_per_class == 0 {
            return Err(TalError::Generation("class count, dimension and sample counts must be positive".into()));
        }
        if self.tasks == 0 || !self.classes.is_multiple_of(self.tasks) {
            return Err(TalError::Schedule(format!(
                "{} classes not divisible into {} tasks",
                self.classes, self.tasks
            )));
        }
        if !(self.sep > 0.0 && self.sep.is_finite()) {
            return Err(TalError::Generation(format!("separation {} must be positive", self.sep)));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(TalError::Generation(format!("noise {} must be nonnegative", self.noise)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub class_means: Array2<f64>,
    pub noise: f64,
    pub train_x: Array2<f64>,
    pub train_y: Vec<usize>,
    pub test_x: Array2<f64>,
    pub test_y: Vec<usize>,
    pub seed: u64,
}

impl SyntheticDataset {
    pub fn dim(&self) -> usize {
        self.class_means.ncols()
    }

    pub fn class_count(&self) -> usize {
        self.class_means.nrows()
    }

    /// Training row indices of `class`, in generation order.
    pub fn train_indices(&self, class: usize) -> Vec<usize> {
        self.train_y.iter().enumerate().filter(|(_, &y)| y == class).map(|(i, _)| i).collect()
    }
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn distance(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn draw_means(params: &GaussianTaskParams, rng: &mut ChaCha8Rng) -> Result<Array2<f64>> {
    let mut means = Array2::<f64>::zeros((params.classes, params.dim));
    for c in 0..params.classes {
        let mut placed = false;
        for _ in 0..MEAN_ATTEMPTS {
            let mut v: Array1<f64> = (0..params.dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let norm = v.dot(&v).sqrt();
            if norm == 0.0 {
                continue;
            }
            v *= params.sep / norm;
            if (0..c).all(|o| distance(means.row(o), v.view()) >= params.sep) {
                means.row_mut(c).assign(&v);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(TalError::Generation(format!(
                "could not place class {c} at separation {} in {} dimensions",
                params.sep, params.dim
            )));
        }
    }
    Ok(means)
}

fn draw_split(means: &Array2<f64>, noise: f64, per_class: usize, rng: &mut ChaCha8Rng) -> (Array2<f64>, Vec<usize>) {
    let (classes, dim) = means.dim();
    let mut x = Array2::<f64>::zeros((classes * per_class, dim));
    let mut y = Vec::with_capacity(classes * per_class);
    for c in 0..classes {
        for i in 0..per_class {
            let mut row = x.row_mut(c * per_class + i);
            for (dst, &m) in row.iter_mut().zip(means.row(c).iter()) {
                *dst = m + noise * rng.sample::<f64, _>(StandardNormal);
            }
            y.push(c);
        }
    }
    (x, y)
}

/// Draws class means on a sphere of radius `sep` with pairwise distance at
/// least `sep`, samples balanced train and test splits from independent
/// generator streams, and splits the classes into equal consecutive tasks.
pub fn make_gaussian_tasks(params: &GaussianTaskParams, seed: u64) -> Result<(SyntheticDataset, TaskSchedule)> {
    params.validate()?;
    let means = draw_means(params, &mut stream_rng(seed, 0))?;
    let (train_x, train_y) = draw_split(&means, params.noise, params.per_class, &mut stream_rng(seed, 1));
    let (test_x, test_y) = draw_split(&means, params.noise, params.test_per_class, &mut stream_rng(seed, 2));
    let schedule = TaskSchedule::uniform(params.classes, params.tasks, params.per_class, params.replay_per_class, seed)?;
    let dataset = SyntheticDataset { class_means: means, noise: params.noise, train_x, train_y, test_x, test_y, seed };
    Ok((dataset, schedule))
}

/// Training indices of `class` ordered by distance to the class's empirical
/// mean in input space; replay takes a prefix of this list.
pub fn exemplar_priority(dataset: &SyntheticDataset, class: usize) -> Vec<usize> {
    let idx = dataset.train_indices(class);
    if idx.is_empty() {
        return idx;
    }
    let mut mean = Array1::<f64>::zeros(dataset.dim());
    for &i in &idx {
        mean += &dataset.train_x.row(i);
    }
    mean /= idx.len() as f64;
    let mut scored: Vec<(f64, usize)> = idx.iter().map(|&i| (distance(dataset.train_x.row(i), mean.view()), i)).collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    scored.into_iter().map(|(_, i)| i).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shapes_and_schedule() {
        let (data, schedule) = make_gaussian_tasks(&GaussianTaskParams::default(), 3).unwrap();
        assert_eq!(data.train_x.dim(), (1000, 16));
        assert_eq!(data.test_x.dim(), (1000, 16));
        assert_eq!(schedule.tasks().len(), 5);
        assert!(schedule.tasks().iter().all(|t| t.new_classes.len() == 2));
    }

    #[test]
    fn deterministic_in_seed() {
        let p = GaussianTaskParams::default();
        let a = make_gaussian_tasks(&p, 42).unwrap();
        let b = make_gaussian_tasks(&p, 42).unwrap();
        assert_eq!(a, b);
        let c = make_gaussian_tasks(&p, 43).unwrap();
        assert_ne!(a.0.class_means, c.0.class_means);
    }

    #[test]
    fn means_respect_separation() {
        let p = GaussianTaskParams { sep: 4.0, ..Default::default() };
        let (data, _) = make_gaussian_tasks(&p, 1).unwrap();
        for a in 0..10 {
            for b in 0..a {
                assert!(distance(data.class_means.row(a), data.class_means.row(b)) >= 4.0);
            }
        }
    }

    #[test]
    fn train_and_test_differ() {
        let (data, _) = make_gaussian_tasks(&GaussianTaskParams::default(), 0).unwrap();
        assert_ne!(data.train_x.row(0), data.test_x.row(0));
    }

    #[test]
    fn infeasible_separation_fails() {
        // More than two antipodal points on a 1-d sphere cannot all be 1 apart at radius 1.
        let p = GaussianTaskParams { classes: 3, dim: 1, tasks: 1, ..Default::default() };
        let p = GaussianTaskParams { sep: 1.0, ..p };
        assert!(matches!(make_gaussian_tasks(&p, 0), Err(TalError::Generation(_))));
    }

    #[test]
    fn invalid_params() {
        let p = GaussianTaskParams { tasks: 3, ..Default::default() };
        assert!(make_gaussian_tasks(&p, 0).is_err());
        let p = GaussianTaskParams { sep: 0.0, ..Default::default() };
        assert!(make_gaussian_tasks(&p, 0).is_err());
    }

    #[test]
    fn exemplars_sorted_by_distance() {
        let (data, _) = make_gaussian_tasks(&GaussianTaskParams::default(), 5).unwrap();
        let order = exemplar_priority(&data, 2);
        assert_eq!(order.len(), 100);
        assert!(order.iter().all(|&i| data.train_y[i] == 2));
    }
}
