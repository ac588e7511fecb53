//! Independent oracles shared by the integration tests and the acceptance suite.
#![allow(dead_code)]

use causalref::gaussian::MvnParams;
use causalref::{Arm, PatientRecord, TrialDataset, VisitSchedule};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// ML mean and covariance (divisor n) of rows with arbitrary missing values, by plain EM.
pub fn em_mle(rows: &[Vec<Option<f64>>], tol: f64, max_iter: usize) -> (DVector<f64>, DMatrix<f64>) {
    let p = rows[0].len();
    let n = rows.len() as f64;
    // start from observed-case moments with identity-ish covariance
    let mut mu = DVector::from_fn(p, |j, _| {
        let obs: Vec<f64> = rows.iter().filter_map(|r| r[j]).collect();
        obs.iter().sum::<f64>() / obs.len() as f64
    });
    let mut sigma = DMatrix::from_fn(p, p, |i, j| {
        if i != j {
            return 0.0;
        }
        let obs: Vec<f64> = rows.iter().filter_map(|r| r[i]).collect();
        obs.iter().map(|v| (v - mu[i]).powi(2)).sum::<f64>() / obs.len() as f64
    });
    for _ in 0..max_iter {
        let mut s1 = DVector::zeros(p);
        let mut s2 = DMatrix::zeros(p, p);
        for r in rows {
            let o: Vec<usize> = (0..p).filter(|&j| r[j].is_some()).collect();
            let m: Vec<usize> = (0..p).filter(|&j| r[j].is_none()).collect();
            let mut y = DVector::zeros(p);
            let mut extra = DMatrix::zeros(p, p);
            for &j in &o {
                y[j] = r[j].unwrap();
            }
            if !m.is_empty() {
                let soo = sigma.select_rows(&o).select_columns(&o);
                let smo = sigma.select_rows(&m).select_columns(&o);
                let smm = sigma.select_rows(&m).select_columns(&m);
                let inv = soo.try_inverse().expect("observed block invertible");
                let beta = &smo * &inv;
                let dev = DVector::from_iterator(o.len(), o.iter().map(|&j| y[j] - mu[j]));
                let cond_mean = DVector::from_iterator(m.len(), m.iter().map(|&j| mu[j])) + &beta * dev;
                let cond_cov = smm - &beta * smo.transpose();
                for (a, &ja) in m.iter().enumerate() {
                    y[ja] = cond_mean[a];
                    for (b, &jb) in m.iter().enumerate() {
                        extra[(ja, jb)] = cond_cov[(a, b)];
                    }
                }
            }
            s1 += &y;
            s2 += &y * y.transpose() + extra;
        }
        let new_mu = s1 / n;
        let new_sigma = s2 / n - &new_mu * new_mu.transpose();
        let change = (&new_mu - &mu).amax().max((&new_sigma - &sigma).amax());
        mu = new_mu;
        sigma = new_sigma;
        if change < tol {
            break;
        }
    }
    (mu, sigma)
}

/// Conditional mean and covariance of the unobserved coordinates by brute-force
/// integration of the joint density on a regular grid (one or two unobserved dims).
pub fn grid_conditional(
    params: &MvnParams,
    observed: &[usize],
    values: &[f64],
) -> (DVector<f64>, DMatrix<f64>) {
    let p = params.dim();
    let free: Vec<usize> = (0..p).filter(|j| !observed.contains(j)).collect();
    let k = free.len();
    assert!(k == 1 || k == 2, "grid oracle handles one or two free coordinates");
    let prec = params.cov().clone().try_inverse().unwrap();
    let points = if k == 1 { 4001 } else { 601 };
    let axes: Vec<Vec<f64>> = free
        .iter()
        .map(|&j| {
            let sd = params.cov()[(j, j)].sqrt();
            let center = params.mean()[j];
            let half = 14.0 * sd;
            (0..points)
                .map(|i| center - half + 2.0 * half * i as f64 / (points - 1) as f64)
                .collect()
        })
        .collect();
    let mut x = DVector::zeros(p);
    for (&j, &v) in observed.iter().zip(values) {
        x[j] = v;
    }
    let mut w_sum = 0.0;
    let mut m1 = DVector::zeros(k);
    let mut m2 = DMatrix::zeros(k, k);
    let mut visit = |coords: &[f64]| {
        for (a, &j) in free.iter().enumerate() {
            x[j] = coords[a];
        }
        let d = &x - params.mean();
        let w = (-0.5 * (d.transpose() * &prec * &d)[(0, 0)]).exp();
        let c = DVector::from_column_slice(coords);
        w_sum += w;
        m1 += w * &c;
        m2 += w * &c * c.transpose();
    };
    if k == 1 {
        for &a in &axes[0] {
            visit(&[a]);
        }
    } else {
        for &a in &axes[0] {
            for &b in &axes[1] {
                visit(&[a, b]);
            }
        }
    }
    let mean = m1 / w_sum;
    let cov = m2 / w_sum - &mean * mean.transpose();
    (mean, cov)
}

/// Random mean and well-conditioned covariance in dimension `p`.
pub fn random_params(p: usize, rng: &mut ChaCha8Rng) -> MvnParams {
    let a = DMatrix::from_fn(p, p, |_, _| rng.sample::<f64, _>(StandardNormal));
    let cov = &a * a.transpose() + DMatrix::identity(p, p) * 0.5;
    let mean = DVector::from_fn(p, |_, _| 3.0 * rng.sample::<f64, _>(StandardNormal));
    MvnParams::new(mean, cov).unwrap()
}

/// Two-arm dataset with random parameters and random monotone dropout.
pub fn random_monotone_dataset(seed: u64, n_per_arm: usize, p: usize) -> TrialDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let schedule = VisitSchedule::new((0..p).map(|j| j as f64).collect()).unwrap();
    let hazard = 0.06 + 0.06 * rng.random::<f64>();
    let mut patients = Vec::new();
    for arm in Arm::BOTH {
        let params = random_params(p, &mut rng);
        let chol = params.chol().unwrap();
        for i in 0..n_per_arm {
            let y = params.mean() + chol.draw(&mut rng);
            let mut last = p - 1;
            for j in 1..p {
                if rng.random::<f64>() < hazard {
                    last = j - 1;
                    break;
                }
            }
            let outcomes = (0..p).map(|j| (j <= last).then_some(y[j])).collect();
            patients.push(PatientRecord::new(format!("{}{i}", arm.as_str()), arm, outcomes).unwrap());
        }
    }
    TrialDataset::new(schedule, patients).unwrap()
}

pub fn rows_of(data: &TrialDataset, arm: Arm) -> Vec<Vec<Option<f64>>> {
    data.patients()
        .iter()
        .filter(|r| r.arm() == arm)
        .map(|r| r.outcomes().to_vec())
        .collect()
}

/// Largest absolute elementwise difference between two parameter sets.
pub fn max_param_diff(a: &MvnParams, mean: &DVector<f64>, cov: &DMatrix<f64>) -> f64 {
    (a.mean() - mean).amax().max((a.cov() - cov).amax())
}
