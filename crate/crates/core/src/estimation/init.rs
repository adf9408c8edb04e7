//! Starting points: the latent basis (NNDSVDar, k-means, or user supplied)
//! and the feed-forward fit `Y1 ~ X0 Theta0 Y2` built on top of it.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::updates::{self, Moments};
use super::{FitConfig, Penalties};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::matrix::NonNegMatrix;

/// Singular values below this fraction of the largest count as zero.
const RANK_TOL: f64 = 1e-12;
/// Additive smoothing for k-means membership indicators.
const KMEANS_SMOOTHING: f64 = 1e-2;
const KMEANS_MAX_ITER: usize = 100;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "method", content = "basis")]
pub enum InitMethod {
    #[default]
    Nndsvdar,
    Kmeans,
    /// Caller-supplied P1 x Q basis; columns are renormalized.
    Given(NonNegMatrix),
}


fn check_rank(p1: usize, n: usize, q: usize) -> Result<()> {
    if q == 0 {
        return Err(Error::InvalidConfig("latent dimension q must be >= 1".into()));
    }
    if q > p1.min(n) {
        return Err(Error::InvalidConfig(format!(
            "latent dimension q = {q} exceeds min(P1, N) = {}",
            p1.min(n)
        )));
    }
    Ok(())
}

fn normalize_columns(mut w: DMatrix<f64>) -> DMatrix<f64> {
    for mut c in w.column_iter_mut() {
        let s = c.sum();
        c.scale_mut(1.0 / s);
    }
    w
}

/// Initial P1 x Q basis with columns summing to one and every entry at
/// least `epsilon_floor`.
pub fn init_basis(
    y1: &NonNegMatrix,
    q: usize,
    method: &InitMethod,
    seed: u64,
    epsilon_floor: f64,
) -> Result<NonNegMatrix> {
    check_rank(y1.nrows(), y1.ncols(), q)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = match method {
        InitMethod::Nndsvdar => match nndsvd(y1, q) {
            Some(w) => fill_zeros(w, y1.mean(), &mut rng),
            None => {
                log::warn!("Y1 has rank below q = {q}; falling back to a random basis");
                random_basis(y1, q, &mut rng)
            }
        },
        InitMethod::Kmeans => kmeans_basis(y1, q, &mut rng),
        InitMethod::Given(b) => {
            if b.nrows() != y1.nrows() || b.ncols() != q {
                return Err(Error::Dimension(format!(
                    "given basis is {}x{}, expected {}x{q}",
                    b.nrows(),
                    b.ncols(),
                    y1.nrows()
                )));
            }
            if b.column_iter().any(|c| c.sum() == 0.0) {
                return Err(Error::DegenerateInput("given basis has a zero column".into()));
            }
            b.as_matrix().clone()
        }
    };
    let w = w.map(|v| v.max(epsilon_floor));
    Ok(NonNegMatrix::from_trusted(normalize_columns(w)))
}

/// Non-negative double SVD basis (Boutsidis & Gallopoulos): the leading
/// singular pair contributes `|u1|`, each later pair contributes the
/// dominant of its positive and negative sections. Returns `None` if `Y1`
/// has fewer than `q` non-negligible singular values.
fn nndsvd(y1: &DMatrix<f64>, q: usize) -> Option<DMatrix<f64>> {
    let svd = y1.clone().svd(true, false);
    let u = svd.u.as_ref()?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let s0 = svd.singular_values[order[0]];
    if !(s0 > 0.0) || order.len() < q {
        return None;
    }
    // Right singular vectors are recovered as Y1' u / s, which avoids a
    // full N x N factor for long data.
    let mut w = DMatrix::zeros(y1.nrows(), q);
    for (j, &k) in order.iter().take(q).enumerate() {
        let s = svd.singular_values[k];
        if s <= RANK_TOL * s0 {
            return None;
        }
        let uj = u.column(k).into_owned();
        if j == 0 {
            w.set_column(0, &(uj.abs() * s.sqrt()));
            continue;
        }
        let vj = y1.transpose() * &uj / s;
        let (up, un) = (uj.map(|v| v.max(0.0)), uj.map(|v| (-v).max(0.0)));
        let (vp, vn) = (vj.map(|v| v.max(0.0)), vj.map(|v| (-v).max(0.0)));
        let (up_n, un_n, vp_n, vn_n) = (up.norm(), un.norm(), vp.norm(), vn.norm());
        let (mp, mn) = (up_n * vp_n, un_n * vn_n);
        let col = if mp >= mn {
            if up_n == 0.0 {
                return None;
            }
            up / up_n * (s * mp).sqrt()
        } else {
            un / un_n * (s * mn).sqrt()
        };
        w.set_column(j, &col);
    }
    Some(w)
}

/// The "ar" variant: exact zeros become small uniform draws scaled to the
/// data mean.
fn fill_zeros(mut w: DMatrix<f64>, mean: f64, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let scale = mean / 100.0;
    for v in w.iter_mut() {
        if *v == 0.0 {
            *v = scale * rng.gen::<f64>();
        }
    }
    w
}

fn random_basis(y1: &DMatrix<f64>, q: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let scale = y1.mean().max(f64::MIN_POSITIVE);
    DMatrix::from_fn(y1.nrows(), q, |_, _| scale * rng.gen::<f64>())
}

/// Clusters the rows of `Y1` (variables) into `q` groups with k-means++
/// seeding and Lloyd iterations, then returns smoothed membership
/// indicators.
fn kmeans_basis(y1: &DMatrix<f64>, q: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let p = y1.nrows();
    let rows: Vec<_> = (0..p).map(|i| y1.row(i).into_owned()).collect();
    let dist = |a: &nalgebra::RowDVector<f64>, b: &nalgebra::RowDVector<f64>| (a - b).norm_squared();

    let mut centers = vec![rows[rng.gen_range(0..p)].clone()];
    while centers.len() < q {
        let d: Vec<f64> = rows
            .iter()
            .map(|r| centers.iter().map(|c| dist(r, c)).fold(f64::INFINITY, f64::min))
            .collect();
        let total: f64 = d.iter().sum();
        let pick = if total > 0.0 {
            let mut t = rng.gen::<f64>() * total;
            let mut idx = p - 1;
            for (i, &di) in d.iter().enumerate() {
                if t < di {
                    idx = i;
                    break;
                }
                t -= di;
            }
            idx
        } else {
            rng.gen_range(0..p)
        };
        centers.push(rows[pick].clone());
    }

    let mut assign = vec![usize::MAX; p];
    for _ in 0..KMEANS_MAX_ITER {
        let mut changed = false;
        for (i, r) in rows.iter().enumerate() {
            let best = (0..q)
                .min_by(|&a, &b| dist(r, &centers[a]).total_cmp(&dist(r, &centers[b])))
                .unwrap();
            if assign[i] != best {
                assign[i] = best;
                changed = true;
            }
        }
        for (g, center) in centers.iter_mut().enumerate() {
            let members: Vec<usize> = (0..p).filter(|&i| assign[i] == g).collect();
            if members.is_empty() {
                continue;
            }
            let mut c = nalgebra::RowDVector::zeros(y1.ncols());
            for &i in &members {
                c += &rows[i];
            }
            *center = c / members.len() as f64;
        }
        // Empty clusters take the point farthest from its own center.
        for g in 0..q {
            if assign.contains(&g) {
                continue;
            }
            let far = (0..p)
                .max_by(|&a, &b| {
                    dist(&rows[a], &centers[assign[a]]).total_cmp(&dist(&rows[b], &centers[assign[b]]))
                })
                .unwrap();
            assign[far] = g;
            centers[g] = rows[far].clone();
            changed = true;
        }
        if !changed {
            break;
        }
    }
    DMatrix::from_fn(p, q, |i, g| if assign[i] == g { 1.0 } else { 0.0 } + KMEANS_SMOOTHING)
}

/// Converged feed-forward pair.
#[derive(Debug, Clone)]
pub struct FeedForward {
    pub x0: NonNegMatrix,
    pub theta0: NonNegMatrix,
    pub iterations: usize,
    pub converged: bool,
}

/// Fits `Y1 ~ X0 Theta0 Y2` with the `Theta1 = 0` special case of the
/// multiplicative rules, starting from [`init_basis`] and a constant
/// `Theta0` matched to the data scale.
pub fn init_feedforward(data: &Dataset, config: &FitConfig) -> Result<FeedForward> {
    config.validate()?;
    check_rank(data.p1(), data.n(), config.q)?;
    let y2 = data.y2();
    if let Some(r) = (0..y2.nrows()).find(|&r| y2.row(r).iter().all(|&v| v == 0.0)) {
        return Err(Error::DegenerateInput(format!(
            "exogenous variable {r} is identically zero"
        )));
    }
    let q = config.q;
    let mut x = init_basis(data.y1(), q, &config.init, config.seed, config.epsilon_floor)?.into_inner();

    // Constant Theta0 = s so that mean(X Theta0 Y2) = mean(Y1); for
    // column-stochastic X that mean is s * (Q / P1) * mean column sum of Y2.
    let y2_mean_colsum = y2.sum() / data.n() as f64;
    let denom = (q as f64 / data.p1() as f64) * y2_mean_colsum;
    let s = (data.y1().mean() / denom).max(config.epsilon_floor);
    let mut t = DMatrix::from_element(q, data.p2(), s);

    let mom = Moments::new(data);
    let pen = Penalties { lambda_1: 0.0, ..config.penalties };
    let zero_t1 = DMatrix::zeros(q, data.p1());
    let y1 = data.y1().as_matrix();
    let mut prev = updates::loss_parts(&x, &zero_t1, &t, y1, y2, &pen);
    let mut converged = false;
    let mut iterations = 0;
    for it in 1..=config.max_iter {
        updates::feedforward_step_in_place(&mut x, &mut t, &mom, &pen, config.epsilon_floor);
        iterations = it;
        let l = updates::loss_parts(&x, &zero_t1, &t, y1, y2, &pen);
        if !l.is_finite() {
            return Err(Error::NumericalFailure { iteration: it });
        }
        if relative_change(prev, l) < config.rel_tol {
            converged = true;
            break;
        }
        prev = l;
    }
    Ok(FeedForward {
        x0: NonNegMatrix::from_trusted(x),
        theta0: NonNegMatrix::from_trusted(t),
        iterations,
        converged,
    })
}

pub(crate) fn relative_change(prev: f64, cur: f64) -> f64 {
    if prev == 0.0 {
        return if cur == 0.0 { 0.0 } else { f64::INFINITY };
    }
    (prev - cur).abs() / prev.abs()
}
