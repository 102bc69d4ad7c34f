//! Dataset representation, IHDP-format CSV ingestion, semi-synthetic data
//! generation, and the split-and-repeat experimental plan.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::array::Array;
use crate::error::{Error, Result};

pub const IHDP_COVARIATES: usize = 25;
const CSV_COLUMNS: usize = 5 + IHDP_COVARIATES;

/// Units with observed (x, t, y) plus oracle potential outcomes used only
/// for evaluation. Training code paths see a [`TrainView`], which carries
/// no oracle fields.
#[derive(Clone, Debug)]
pub struct CausalDataset {
    x: Array,
    t: Vec<u8>,
    y: Vec<f64>,
    y_cf: Vec<f64>,
    mu0: Option<Vec<f64>>,
    mu1: Option<Vec<f64>>,
}

impl CausalDataset {
    pub fn new(
        x: Array,
        t: Vec<u8>,
        y: Vec<f64>,
        y_cf: Vec<f64>,
        mu0: Option<Vec<f64>>,
        mu1: Option<Vec<f64>>,
    ) -> Result<CausalDataset> {
        let n = x.rows();
        if t.len() != n || y.len() != n || y_cf.len() != n {
            return Err(Error::contract("dataset column lengths disagree"));
        }
        if !t.iter().any(|&f| f == 1) || !t.iter().any(|&f| f == 0) {
            return Err(Error::contract("both treatment groups must be nonempty"));
        }
        Ok(CausalDataset {
            x,
            t,
            y,
            y_cf,
            mu0,
            mu1,
        })
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.cols()
    }

    pub fn covariates(&self) -> &Array {
        &self.x
    }

    pub fn treatment(&self) -> &[u8] {
        &self.t
    }

    pub fn factual(&self) -> &[f64] {
        &self.y
    }

    pub fn counterfactual(&self) -> &[f64] {
        &self.y_cf
    }

    pub fn mu0(&self) -> Option<&[f64]> {
        self.mu0.as_deref()
    }

    pub fn mu1(&self) -> Option<&[f64]> {
        self.mu1.as_deref()
    }

    pub fn n_treated(&self) -> usize {
        self.t.iter().filter(|&&f| f == 1).count()
    }

    /// Potential outcome under control, reconstructed from (t, y, y_cf).
    pub fn potential_y0(&self, i: usize) -> f64 {
        if self.t[i] == 0 {
            self.y[i]
        } else {
            self.y_cf[i]
        }
    }

    /// Potential outcome under treatment.
    pub fn potential_y1(&self, i: usize) -> f64 {
        if self.t[i] == 1 {
            self.y[i]
        } else {
            self.y_cf[i]
        }
    }

    /// True individual effect Y1 - Y0 per unit.
    pub fn true_effects(&self, indices: &[usize]) -> Vec<f64> {
        indices
            .iter()
            .map(|&i| self.potential_y1(i) - self.potential_y0(i))
            .collect()
    }

    /// Training projection over a row subset: covariates, treatment flags
    /// and factual outcomes only.
    pub fn view(&self, indices: &[usize]) -> TrainView {
        TrainView {
            x: self.x.select_rows(indices),
            t: indices.iter().map(|&i| self.t[i]).collect(),
            y: indices.iter().map(|&i| self.y[i]).collect(),
        }
    }

    pub fn full_view(&self) -> TrainView {
        self.view(&(0..self.len()).collect::<Vec<_>>())
    }
}

/// What training is allowed to see: no counterfactuals, no noiseless means.
#[derive(Clone, Debug)]
pub struct TrainView {
    pub x: Array,
    pub t: Vec<u8>,
    pub y: Vec<f64>,
}

impl TrainView {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn control_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.t[i] == 0).collect()
    }

    pub fn treated_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.t[i] == 1).collect()
    }
}

// ---- CSV ---------------------------------------------------------------

/// Headerless rows: t, y_factual, y_cfactual, mu0, mu1, x1..x25.
pub fn load_ihdp_csv(path: &Path, has_header: bool) -> Result<CausalDataset> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let reader = BufReader::new(file);
    let mut t = Vec::new();
    let mut y = Vec::new();
    let mut y_cf = Vec::new();
    let mut mu0 = Vec::new();
    let mut mu1 = Vec::new();
    let mut xs = Vec::new();
    let skip = usize::from(has_header);
    let mut row = 0usize;
    for (line_no, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path.display().to_string(), e))?;
        if line_no < skip || line.trim().is_empty() {
            continue;
        }
        row += 1;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != CSV_COLUMNS {
            return Err(Error::Format {
                row,
                msg: format!("expected {CSV_COLUMNS} columns, found {}", fields.len()),
            });
        }
        let parse = |s: &str, col: &str| -> Result<f64> {
            s.trim().parse::<f64>().map_err(|_| Error::Format {
                row,
                msg: format!("cannot parse {col} value {s:?}"),
            })
        };
        let t_val = parse(fields[0], "t")?;
        if t_val != 0.0 && t_val != 1.0 {
            return Err(Error::Format {
                row,
                msg: format!("treatment flag must be 0 or 1, got {t_val}"),
            });
        }
        t.push(t_val as u8);
        y.push(parse(fields[1], "y_factual")?);
        y_cf.push(parse(fields[2], "y_cfactual")?);
        mu0.push(parse(fields[3], "mu0")?);
        mu1.push(parse(fields[4], "mu1")?);
        for (j, field) in fields[5..].iter().enumerate() {
            xs.push(parse(field, &format!("x{}", j + 1))?);
        }
    }
    if row == 0 {
        return Err(Error::Format {
            row: 0,
            msg: "empty file".into(),
        });
    }
    let x = Array::from_vec(row, IHDP_COVARIATES, xs);
    CausalDataset::new(x, t, y, y_cf, Some(mu0), Some(mu1))
}

/// Write the same layout [`load_ihdp_csv`] reads. Decimal text is Rust's
/// shortest round-trip formatting, so reload-and-rewrite is bit-exact.
pub fn export_ihdp_csv(dataset: &CausalDataset, path: &Path) -> Result<()> {
    if dataset.dim() != IHDP_COVARIATES {
        return Err(Error::contract(format!(
            "IHDP layout requires {IHDP_COVARIATES} covariates, dataset has {}",
            dataset.dim()
        )));
    }
    let mut out = String::new();
    let zeros = vec![0.0; dataset.len()];
    let mu0 = dataset.mu0().unwrap_or(&zeros);
    let mu1 = dataset.mu1().unwrap_or(&zeros);
    for i in 0..dataset.len() {
        out.push_str(&format!(
            "{},{},{},{},{}",
            dataset.t[i], dataset.y[i], dataset.y_cf[i], mu0[i], mu1[i]
        ));
        for j in 0..IHDP_COVARIATES {
            out.push_str(&format!(",{}", dataset.x.get(i, j)));
        }
        out.push('\n');
    }
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    file.write_all(out.as_bytes())
        .map_err(|e| Error::io(path.display().to_string(), e))
}

// ---- synthetic generator ----------------------------------------------

/// Semi-synthetic generator: real-looking covariates, logistic confounded
/// treatment, exp/linear response surfaces with known noiseless means.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n: usize,
    pub d: usize,
    /// Target share of treated units; the logistic intercept is calibrated
    /// to it before sampling.
    pub treated_fraction: f64,
    /// Probability that a response coefficient is zero.
    pub coefficient_sparsity: f64,
    pub noise_scale: f64,
    /// The offset omega in mu1 = x.beta - omega is set so the sample mean
    /// of mu1 - mu0 equals this constant.
    pub target_mean_effect: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n: 747,
            d: IHDP_COVARIATES,
            treated_fraction: 139.0 / 747.0,
            coefficient_sparsity: 0.6,
            noise_scale: 0.1,
            target_mean_effect: 0.25,
            seed: 0,
        }
    }
}

impl SynthConfig {
    fn validate(&self) -> Result<()> {
        if self.n < 10 {
            return Err(Error::contract(format!("synth_generate: n must be >= 10, got {}", self.n)));
        }
        if !(self.treated_fraction > 0.0 && self.treated_fraction < 1.0) {
            return Err(Error::contract(format!(
                "treated_fraction must be in (0, 1), got {}",
                self.treated_fraction
            )));
        }
        if self.noise_scale < 0.0 {
            return Err(Error::contract("noise_scale must be nonnegative"));
        }
        if self.d == 0 {
            return Err(Error::contract("d must be positive"));
        }
        Ok(())
    }
}

pub fn synth_generate(config: &SynthConfig) -> Result<CausalDataset> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (n, d) = (config.n, config.d);

    // covariate mix mirrors IHDP's 6-of-25 continuous share
    let n_continuous = ((d * 6 + 24) / 25).max(1);
    let mut xs = Vec::with_capacity(n * d);
    for _ in 0..n {
        for j in 0..d {
            if j < n_continuous {
                let v: f64 = StandardNormal.sample(&mut rng);
                xs.push(v);
            } else {
                xs.push(f64::from(rng.gen_bool(0.5)));
            }
        }
    }
    let x = Array::from_vec(n, d, xs);

    // sparse response coefficients, Hill-style magnitudes
    let magnitudes = [0.01, 0.02, 0.03, 0.04];
    let beta: Vec<f64> = (0..d)
        .map(|_| {
            if rng.gen_bool(config.coefficient_sparsity) {
                0.0
            } else {
                magnitudes[rng.gen_range(0..magnitudes.len())]
            }
        })
        .collect();

    let dot = |i: usize, coef: &[f64], shift: f64| -> f64 {
        (0..d).map(|j| (x.get(i, j) + shift) * coef[j]).sum()
    };

    // confounded treatment: logistic on a noisy projection aligned with the
    // response coefficients (so treatment actually confounds the outcome),
    // standardized, intercept calibrated by bisection to the target treated
    // fraction
    let beta_norm = beta.iter().map(|b| b * b).sum::<f64>().sqrt().max(1e-12);
    let proj: Vec<f64> = beta
        .iter()
        .map(|&b| {
            let g: f64 = StandardNormal.sample(&mut rng);
            b / beta_norm + 0.4 * g
        })
        .collect();
    let raw: Vec<f64> = (0..n).map(|i| dot(i, &proj, 0.0)).collect();
    let mean_raw = raw.iter().sum::<f64>() / n as f64;
    let sd_raw = (raw.iter().map(|v| (v - mean_raw) * (v - mean_raw)).sum::<f64>() / n as f64)
        .sqrt()
        .max(1e-12);
    let slope = 3.0;
    let scores: Vec<f64> = raw.iter().map(|v| slope * (v - mean_raw) / sd_raw).collect();
    let mean_prob = |c: f64| -> f64 {
        scores.iter().map(|&s| crate::diffcore::sigmoid(s + c)).sum::<f64>() / n as f64
    };
    let (mut lo, mut hi) = (-30.0, 30.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mean_prob(mid) < config.treated_fraction {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let intercept = 0.5 * (lo + hi);
    let mut t: Vec<u8> = scores
        .iter()
        .map(|&s| u8::from(rng.gen_bool(crate::diffcore::sigmoid(s + intercept).clamp(0.0, 1.0))))
        .collect();
    // a degenerate draw would make training impossible; flip the most
    // extreme unit of the other side
    if !t.contains(&1) {
        let best = (0..n).max_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap()).unwrap();
        t[best] = 1;
    }
    if !t.contains(&0) {
        let best = (0..n).min_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap()).unwrap();
        t[best] = 0;
    }

    // response surfaces: mu0 = exp((x + 0.5).beta), mu1 = x.beta - omega
    let mu0: Vec<f64> = (0..n).map(|i| dot(i, &beta, 0.5).exp()).collect();
    let mu1_raw: Vec<f64> = (0..n).map(|i| dot(i, &beta, 0.0)).collect();
    let mean_gap = (0..n).map(|i| mu1_raw[i] - mu0[i]).sum::<f64>() / n as f64;
    let omega = mean_gap - config.target_mean_effect;
    let mu1: Vec<f64> = mu1_raw.iter().map(|v| v - omega).collect();

    let mut y = Vec::with_capacity(n);
    let mut y_cf = Vec::with_capacity(n);
    for i in 0..n {
        let noise0: f64 = StandardNormal.sample(&mut rng);
        let noise1: f64 = StandardNormal.sample(&mut rng);
        let y0 = mu0[i] + config.noise_scale * noise0;
        let y1 = mu1[i] + config.noise_scale * noise1;
        if t[i] == 1 {
            y.push(y1);
            y_cf.push(y0);
        } else {
            y.push(y0);
            y_cf.push(y1);
        }
    }
    CausalDataset::new(x, t, y, y_cf, Some(mu0), Some(mu1))
}

// ---- split plan --------------------------------------------------------

pub const TRAIN_SUBSETS: usize = 5;
pub const INITS_PER_SUBSET: usize = 4;

/// Fixed 20% test set plus 5 x 4 (train subset, init seed) runs.
#[derive(Clone, Debug)]
pub struct SplitPlan {
    pub test_indices: Vec<usize>,
    pub train_subsets: Vec<Vec<usize>>,
    pub init_seeds: Vec<Vec<u64>>,
}

impl SplitPlan {
    pub fn runs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.train_subsets.len())
            .flat_map(|s| (0..self.init_seeds[s].len()).map(move |i| (s, i)))
    }

    pub fn run_count(&self) -> usize {
        self.init_seeds.iter().map(|s| s.len()).sum()
    }
}

/// splitmix64-style mix of (master seed, subset index, init index).
pub fn derive_seed(master_seed: u64, subset: usize, init: usize) -> u64 {
    let mut z = master_seed
        ^ (subset as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (init as u64).wrapping_mul(0xBF58_476D_1CE4_E5B9).rotate_left(17);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn make_split_plan(n: usize, master_seed: u64) -> Result<SplitPlan> {
    if n < 10 {
        return Err(Error::contract(format!("make_split_plan: n must be >= 10, got {n}")));
    }
    let test_size = (0.2 * n as f64).round() as usize;
    let train_size = (0.6 * n as f64).round() as usize;
    if train_size > n - test_size {
        return Err(Error::contract(format!(
            "train subset size {train_size} exceeds non-test pool {}",
            n - test_size
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(master_seed, usize::MAX, 0));
    let mut indices: Vec<usize> = (0..n).collect();
    indices.shuffle(&mut rng);
    let test_indices: Vec<usize> = indices[..test_size].to_vec();
    let pool: Vec<usize> = indices[test_size..].to_vec();
    let mut train_subsets = Vec::with_capacity(TRAIN_SUBSETS);
    let mut init_seeds = Vec::with_capacity(TRAIN_SUBSETS);
    for subset in 0..TRAIN_SUBSETS {
        let mut candidates = pool.clone();
        candidates.shuffle(&mut rng);
        train_subsets.push(candidates[..train_size].to_vec());
        init_seeds.push(
            (0..INITS_PER_SUBSET)
                .map(|init| derive_seed(master_seed, subset, init))
                .collect(),
        );
    }
    Ok(SplitPlan {
        test_indices,
        train_subsets,
        init_seeds,
    })
}

/// Shuffled minibatch index lists for one epoch; the final partial batch is
/// kept. Deterministic in (epoch_seed, epoch).
pub fn minibatch_indices(
    n: usize,
    batch_size: usize,
    epoch_seed: u64,
    epoch: usize,
) -> Result<Vec<Vec<usize>>> {
    if batch_size < 2 {
        return Err(Error::contract(format!("batch_size must be >= 2, got {batch_size}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(epoch_seed, epoch, 0x5eed));
    let mut indices: Vec<usize> = (0..n).collect();
    indices.shuffle(&mut rng);
    Ok(indices.chunks(batch_size).map(|c| c.to_vec()).collect())
}
