use super::score::ScoreNet;
use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::scalar::Real;
use crate::sde::{analytic_score, forward_sample, DiffusionSchedule, T_EPS};

/// Weighted denoising score matching loss and its parameter gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct DsmOutput<T> {
    pub loss: T,
    pub grads: Vec<T>,
}

/// Batched DSM: row `i` is perturbed to `x_t = m(t_i) x0_i + s(t_i) z_i` and
/// contributes `s(t_i)^2 ||net(x_t, c_i, t_i) - score(x_t | x0_i)||^2`. The
/// loss is the mean over rows.
pub fn dsm_loss_batch<T: Real>(
    net: &mut ScoreNet<T>,
    schedule: &DiffusionSchedule<T>,
    x0: &DenseMatrix<T>,
    cond: &DenseMatrix<T>,
    times: &[T],
    noise: &DenseMatrix<T>,
) -> Result<DsmOutput<T>> {
    let rows = x0.rows();
    if rows == 0 {
        return Err(Error::Empty("dsm batch".into()));
    }
    if noise.shape() != x0.shape() || times.len() != rows {
        return Err(Error::Shape("dsm batch: x0, noise and times disagree".into()));
    }
    let t_eps = T::lit(T_EPS);
    let dim = x0.cols();
    let mut xt = DenseMatrix::zeros(rows, dim);
    let mut target = DenseMatrix::zeros(rows, dim);
    let mut weight = Vec::with_capacity(rows);
    for i in 0..rows {
        let t = times[i];
        if t < t_eps - T::epsilon() {
            return Err(Error::TimeOutOfRange(t.to_f64_lossy()));
        }
        let x = forward_sample(schedule, x0.row(i), t, noise.row(i))?;
        let s = analytic_score(schedule, &x, x0.row(i), t)?;
        xt.row_mut(i).copy_from_slice(&x);
        target.row_mut(i).copy_from_slice(&s);
        let std = schedule.std(t);
        weight.push(std * std);
    }
    let pred = net.forward(&xt, cond, times)?;
    let inv_rows = T::one() / T::lit(rows as f64);
    let mut loss = T::zero();
    let mut upstream = DenseMatrix::zeros(rows, dim);
    for i in 0..rows {
        for j in 0..dim {
            let r = pred[(i, j)] - target[(i, j)];
            loss += weight[i] * r * r;
            upstream[(i, j)] = T::lit(2.0) * weight[i] * r * inv_rows;
        }
    }
    let (grads, _, _) = net.backward(&upstream)?;
    Ok(DsmOutput { loss: loss * inv_rows, grads })
}

/// Single-vector DSM loss.
pub fn dsm_loss<T: Real>(
    net: &mut ScoreNet<T>,
    schedule: &DiffusionSchedule<T>,
    x0: &[T],
    cond: &[T],
    t: T,
    noise: &[T],
) -> Result<DsmOutput<T>> {
    let x0 = DenseMatrix::from_vec(1, x0.len(), x0.to_vec())?;
    let cond = DenseMatrix::from_vec(1, cond.len(), cond.to_vec())?;
    let noise = DenseMatrix::from_vec(1, noise.len(), noise.to_vec())?;
    dsm_loss_batch(net, schedule, &x0, &cond, &[t], &noise)
}

/// Loss only, without touching the net's tape.
pub fn dsm_loss_value<T: Real>(
    net: &ScoreNet<T>,
    schedule: &DiffusionSchedule<T>,
    x0: &DenseMatrix<T>,
    cond: &DenseMatrix<T>,
    times: &[T],
    noise: &DenseMatrix<T>,
) -> Result<T> {
    let rows = x0.rows();
    let dim = x0.cols();
    let mut xt = DenseMatrix::zeros(rows, dim);
    let mut target = DenseMatrix::zeros(rows, dim);
    for i in 0..rows {
        let x = forward_sample(schedule, x0.row(i), times[i], noise.row(i))?;
        let s = analytic_score(schedule, &x, x0.row(i), times[i])?;
        xt.row_mut(i).copy_from_slice(&x);
        target.row_mut(i).copy_from_slice(&s);
    }
    let pred = net.infer(&xt, cond, times)?;
    let mut loss = T::zero();
    for i in 0..rows {
        let std = schedule.std(times[i]);
        for j in 0..dim {
            let r = pred[(i, j)] - target[(i, j)];
            loss += std * std * r * r;
        }
    }
    Ok(loss / T::lit(rows as f64))
}
