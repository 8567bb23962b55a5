//! One-pass progressive evaluation, stepsize sweeps and eigenvalue
//! recovery tracking.

use std::time::{Duration, Instant};

use crate::baselines::{AdaGrad, DiagPrecondition, Ogd};
use crate::data::Example;
use crate::error::{Error, Result};
use crate::linalg::{eig_sym, SymMatrix};
use crate::loss::LossSpec;
use crate::oja::{OjaConfig, OjaSketch};
use crate::sketch::Sketch;
use crate::son::{EtaMode, FullOns, OnlineLearner, SonConfig};
use crate::sparse::{SparseFdSon, SparseOjaSon};
use crate::sparse_vec::SparseVec;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Algo {
    SonOja,
    SonFd,
    SonFull,
    AdaGrad,
    Ogd,
}

impl Algo {
    pub fn name(self) -> &'static str {
        match self {
            Algo::SonOja => "son-oja",
            Algo::SonFd => "son-fd",
            Algo::SonFull => "son-full",
            Algo::AdaGrad => "adagrad",
            Algo::Ogd => "ogd",
        }
    }
}

/// Stepsize grid `2^j` for `j = -3..=6`.
pub fn stepsize_grid() -> Vec<f64> {
    (-3..=6).map(|j| 2f64.powi(j)).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub algo: Algo,
    pub sketch_size: usize,
    /// Regularizer of the Newton learners. Gradient descent uses stepsize
    /// `1 / alpha`; AdaGrad scales its gradient matrix by `1 / alpha`.
    pub alpha: f64,
    pub c: f64,
    pub eta_mode: EtaMode,
    pub diag_precondition: bool,
    pub checkpoint_every: usize,
    /// Seed of the data stream, echoed in reports. Learners start from fixed
    /// states.
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            algo: Algo::SonOja,
            sketch_size: 10,
            alpha: 1.0,
            c: 1.0,
            eta_mode: EtaMode::Curvature,
            diag_precondition: false,
            checkpoint_every: 100,
            seed: 0,
        }
    }
}

impl RunConfig {
    /// The config with its stepsize parameter set to `p`.
    pub fn with_stepsize(&self, p: f64) -> RunConfig {
        RunConfig { alpha: 1.0 / p, ..self.clone() }
    }
}

pub fn build_learner(cfg: &RunConfig, dim: usize) -> Result<Box<dyn OnlineLearner + Send>> {
    let loss = LossSpec::square(cfg.c)?;
    let son = SonConfig::new(loss, cfg.alpha, cfg.eta_mode);
    if !(cfg.alpha > 0.0 && cfg.alpha.is_finite()) {
        return Err(Error::config(format!("alpha must be positive, got {}", cfg.alpha)));
    }
    fn wrap<L: OnlineLearner + Send + 'static>(l: L, diag: bool) -> Box<dyn OnlineLearner + Send> {
        if diag {
            Box::new(DiagPrecondition::new(l))
        } else {
            Box::new(l)
        }
    }
    let diag = cfg.diag_precondition;
    Ok(match cfg.algo {
        Algo::SonOja => wrap(SparseOjaSon::new(son, cfg.sketch_size, dim)?, diag),
        Algo::SonFd => wrap(SparseFdSon::new(son, cfg.sketch_size, dim)?, diag),
        Algo::SonFull => wrap(FullOns::new(son, dim)?, diag),
        Algo::AdaGrad => wrap(AdaGrad::new(loss, cfg.alpha.sqrt(), dim)?, diag),
        Algo::Ogd => wrap(Ogd::new(loss, 1.0 / cfg.alpha, dim)?, diag),
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Checkpoint {
    pub round: usize,
    pub progressive_error: f64,
    pub cumulative_loss: f64,
}

#[derive(Clone, Debug)]
pub struct RunReport {
    pub config: RunConfig,
    pub rounds: usize,
    pub mistakes: usize,
    pub cumulative_loss: f64,
    pub checkpoints: Vec<Checkpoint>,
    pub wall_time: Duration,
}

impl RunReport {
    /// Fraction of misclassified examples over the pass.
    pub fn final_error(&self) -> f64 {
        if self.rounds == 0 {
            0.0
        } else {
            self.mistakes as f64 / self.rounds as f64
        }
    }

    /// Equality of everything except timing.
    pub fn same_outcome(&self, other: &RunReport) -> bool {
        self.config == other.config
            && self.rounds == other.rounds
            && self.mistakes == other.mistakes
            && self.cumulative_loss.to_bits() == other.cumulative_loss.to_bits()
            && self.checkpoints == other.checkpoints
    }
}

fn sign(v: f64) -> f64 {
    if v >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

/// Drives `learner` through one pass. Each example is pulled from `data`
/// only after the previous label has been learned.
pub fn run_with<I>(learner: &mut dyn OnlineLearner, cfg: &RunConfig, data: I) -> Result<RunReport>
where
    I: IntoIterator<Item = Result<Example>>,
{
    let start = Instant::now();
    let every = cfg.checkpoint_every.max(1);
    let mut report = RunReport {
        config: cfg.clone(),
        rounds: 0,
        mistakes: 0,
        cumulative_loss: 0.0,
        checkpoints: Vec::new(),
        wall_time: Duration::ZERO,
    };
    for ex in data {
        let ex = ex?;
        let p = learner.predict(&ex.features)?;
        if sign(p) != ex.label {
            report.mistakes += 1;
        }
        let fb = learner.learn(ex.label)?;
        report.cumulative_loss += fb.loss;
        report.rounds += 1;
        if report.rounds % every == 0 {
            report.checkpoints.push(Checkpoint {
                round: report.rounds,
                progressive_error: report.final_error(),
                cumulative_loss: report.cumulative_loss,
            });
        }
    }
    if report.checkpoints.last().is_none_or(|c| c.round != report.rounds) && report.rounds > 0 {
        report.checkpoints.push(Checkpoint {
            round: report.rounds,
            progressive_error: report.final_error(),
            cumulative_loss: report.cumulative_loss,
        });
    }
    report.wall_time = start.elapsed();
    Ok(report)
}

pub fn run_experiment(cfg: &RunConfig, data: &[Example]) -> Result<RunReport> {
    let dim = data.first().map_or(0, |e| e.features.dim());
    let mut learner = build_learner(cfg, dim)?;
    run_with(learner.as_mut(), cfg, data.iter().cloned().map(Ok))
}

#[derive(Clone, Debug)]
pub struct SweepReport {
    pub runs: Vec<RunReport>,
    /// Index into `runs` of the lowest final error; ties go to the smaller
    /// stepsize.
    pub best: usize,
}

impl SweepReport {
    pub fn best_run(&self) -> &RunReport {
        &self.runs[self.best]
    }
}

/// Runs every stepsize of the grid in parallel.
pub fn sweep(cfg: &RunConfig, data: &[Example]) -> Result<SweepReport> {
    let configs: Vec<RunConfig> = stepsize_grid().into_iter().map(|p| cfg.with_stepsize(p)).collect();
    let results: Vec<Result<RunReport>> = std::thread::scope(|s| {
        let handles: Vec<_> = configs.iter().map(|c| s.spawn(move || run_experiment(c, data))).collect();
        handles.into_iter().map(|h| h.join().expect("sweep worker panicked")).collect()
    });
    let runs = results.into_iter().collect::<Result<Vec<_>>>()?;
    let best = (0..runs.len())
        .min_by(|&a, &b| runs[a].final_error().total_cmp(&runs[b].final_error()))
        .unwrap_or(0);
    Ok(SweepReport { runs, best })
}

/// One point of an eigenvalue recovery trace.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EigenPoint {
    pub round: usize,
    /// `max_i |lambda_i - est_i| / lambda_i` over the top `m` eigenvalues.
    pub max_rel_error: f64,
}

/// Runs Oja's sketch with `1/t` rates over `stream` and at each checkpoint
/// compares its eigenvalue estimates, sorted, with the top `m` eigenvalues of the
/// empirical second moment of the vectors seen so far.
pub fn eigen_recovery_track(stream: &[SparseVec], m: usize, checkpoints: &[usize]) -> Result<Vec<EigenPoint>> {
    let dim = stream.first().map_or(0, |v| v.dim());
    let mut sketch = OjaSketch::new(OjaConfig::new(1.0, m), dim)?;
    let mut second = SymMatrix::zeros(dim);
    let mut out = Vec::new();
    for (t, g) in stream.iter().enumerate() {
        sketch.update(g)?;
        for (i, vi) in g.iter() {
            for (j, vj) in g.iter() {
                if j >= i {
                    second.add_to(i, j, vi * vj);
                }
            }
        }
        let round = t + 1;
        if checkpoints.contains(&round) {
            let n = round as f64;
            let truth = eig_sym(&SymMatrix::from_mat(second.as_mat().scale(1.0 / n))?)?;
            let mut est = sketch.lambda().to_vec();
            est.sort_by(|a, b| b.total_cmp(a));
            let err = est
                .iter()
                .zip(&truth.values)
                .map(|(est, l)| if *l > 0.0 { (l - est).abs() / l } else { est.abs() })
                .fold(0.0, f64::max);
            out.push(EigenPoint { round, max_rel_error: err });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_synthetic, SyntheticSpec};
    use std::cell::Cell;
    use std::rc::Rc;

    fn toy_separable() -> Vec<Example> {
        let pts = [(1.0, 0.2), (-1.0, 0.1), (0.8, -0.3), (-0.9, -0.2), (1.2, 0.5)];
        (0..20)
            .map(|i| {
                let (a, b) = pts[i % pts.len()];
                Example { features: SparseVec::from_dense(&[a, b]), label: sign(a) }
            })
            .collect()
    }

    #[test]
    fn ogd_learns_separable_toy() {
        let cfg = RunConfig { algo: Algo::Ogd, alpha: 1.0, checkpoint_every: 5, ..RunConfig::default() };
        let r = run_experiment(&cfg, &toy_separable()).unwrap();
        assert!(r.final_error() <= 0.2, "{}", r.final_error());
        assert_eq!(r.checkpoints.len(), 4);
        assert!(r.checkpoints.iter().all(|c| (0.0..=1.0).contains(&c.progressive_error)));
        assert!(r.checkpoints.windows(2).all(|w| w[0].round < w[1].round));
    }

    #[test]
    fn zero_prediction_counts_as_positive() {
        let cfg = RunConfig { algo: Algo::Ogd, ..RunConfig::default() };
        let data = vec![Example { features: SparseVec::from_dense(&[1.0]), label: 1.0 }];
        assert_eq!(run_experiment(&cfg, &data).unwrap().mistakes, 0);
    }

    #[test]
    fn repeated_runs_agree() {
        let data = gen_synthetic(&SyntheticSpec { t: 500, d: 20, kappa: 10.0, seed: 4 }).unwrap();
        for algo in [Algo::SonOja, Algo::SonFd, Algo::SonFull, Algo::AdaGrad, Algo::Ogd] {
            let cfg = RunConfig { algo, sketch_size: 4, diag_precondition: true, ..RunConfig::default() };
            let a = run_experiment(&cfg, &data).unwrap();
            let b = run_experiment(&cfg, &data).unwrap();
            assert!(a.same_outcome(&b), "{algo:?}");
        }
    }

    #[test]
    fn sweep_covers_grid_and_picks_minimum() {
        let data = gen_synthetic(&SyntheticSpec { t: 300, d: 15, kappa: 5.0, seed: 1 }).unwrap();
        let cfg = RunConfig { algo: Algo::AdaGrad, ..RunConfig::default() };
        let s = sweep(&cfg, &data).unwrap();
        assert_eq!(s.runs.len(), 10);
        let best = s.best_run().final_error();
        assert!(s.runs.iter().all(|r| r.final_error() >= best));
        assert_eq!(s.runs[0].config.alpha, 8.0);
    }

    /// Hands out examples only once the previous one has been learned.
    struct Tripwire<L> {
        inner: L,
        learned: Rc<Cell<usize>>,
    }

    impl<L: OnlineLearner> OnlineLearner for Tripwire<L> {
        fn dim(&self) -> usize {
            self.inner.dim()
        }

        fn predict(&mut self, x: &SparseVec) -> Result<f64> {
            self.inner.predict(x)
        }

        fn learn(&mut self, y: f64) -> Result<crate::son::Feedback> {
            self.learned.set(self.learned.get() + 1);
            self.inner.learn(y)
        }
    }

    #[test]
    fn examples_are_pulled_one_round_at_a_time() {
        let data = toy_separable();
        let learned = Rc::new(Cell::new(0));
        let seen = learned.clone();
        let source = data.into_iter().enumerate().map(move |(i, ex)| {
            assert_eq!(seen.get(), i, "example {i} read ahead of the protocol");
            Ok(ex)
        });
        let cfg = RunConfig { algo: Algo::Ogd, ..RunConfig::default() };
        let mut l = Tripwire { inner: build_learner(&cfg, 2).unwrap(), learned };
        run_with(&mut l, &cfg, source).unwrap();
    }

    #[test]
    fn data_errors_surface() {
        let cfg = RunConfig { algo: Algo::Ogd, ..RunConfig::default() };
        let mut l = build_learner(&cfg, 1).unwrap();
        let src = vec![Err(Error::Parse { line: 3, msg: "bad".into() })];
        assert!(matches!(run_with(l.as_mut(), &cfg, src), Err(Error::Parse { line: 3, .. })));
    }

    #[test]
    fn eigen_recovery_identical_vectors() {
        let stream = vec![SparseVec::from_dense(&[1.0, 0.0, 0.0]); 5];
        let tr = eigen_recovery_track(&stream, 1, &[1, 5]).unwrap();
        assert_eq!(tr[0].max_rel_error, 0.0);
        assert_eq!(tr[1].max_rel_error, 0.0);
    }

    #[test]
    fn eigen_recovery_full_sketch_on_small_stream() {
        use rand::SeedableRng;
        use rand_distr::{Distribution, StandardNormal};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        let scales = [2.0, 1.4, 1.0, 0.7];
        let stream: Vec<SparseVec> = (0..5000)
            .map(|_| {
                let z: Vec<f64> = scales.iter().map(|s| s * Distribution::<f64>::sample(&StandardNormal, &mut rng)).collect();
                // rotate by a fixed orthogonal map
                let x = [z[0] + z[1], z[0] - z[1], z[2] + z[3], z[2] - z[3]].map(|v| v / 2f64.sqrt());
                SparseVec::from_dense(&x)
            })
            .collect();
        let tr = eigen_recovery_track(&stream, 4, &[5000]).unwrap();
        assert!(tr[0].max_rel_error <= 0.1, "{}", tr[0].max_rel_error);
    }
}
