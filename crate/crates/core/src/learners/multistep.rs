use rand::seq::SliceRandom;
use rand::Rng;

use crate::autodiff::{gaussian_nll, Graph, Tensor};
use crate::dynamics::{select_elites, EnsembleModel, Normalizer, TrainReport};
use crate::env::{DatasetBuffer, Transition};
use crate::error::{Error, Result};
use crate::rng::{substream, SimRng};

/// Indices `i` such that transitions `i..i + len` chain into one another
/// without an episode end in between.
pub fn contiguous_starts(dataset: &DatasetBuffer, len: usize) -> Vec<usize> {
    let items: Vec<&Transition> = dataset.iter().collect();
    starts_in(&items, len)
}

fn starts_in(items: &[&Transition], len: usize) -> Vec<usize> {
    if len == 0 || items.len() < len {
        return Vec::new();
    }
    // run[i]: how many chained transitions begin at i
    let mut run = vec![1usize; items.len()];
    for i in (0..items.len() - 1).rev() {
        if !items[i].done && items[i].s_next == items[i + 1].s {
            run[i] = run[i + 1] + 1;
        }
    }
    (0..items.len()).filter(|&i| run[i] >= len).collect()
}

/// Summed per-step NLL of `member` unrolled `horizon` steps from each start,
/// feeding its own mean next state back in, with gradients in parameter
/// order. At `horizon == 1` this is the one-step loss.
pub fn multistep_gradients(
    model: &EnsembleModel,
    member: usize,
    items: &[&Transition],
    starts: &[usize],
    horizon: usize,
) -> Result<(f64, Vec<Tensor>)> {
    if horizon == 0 || starts.is_empty() {
        return Err(Error::InvalidArgument(
            "need a positive horizon and at least one start".into(),
        ));
    }
    let norm = model.normalizer().ok_or(Error::Untrained("dynamics model"))?;
    let sd = items[starts[0]].s.len();
    let rows = |k: usize, f: &dyn Fn(&Transition) -> Vec<f64>| -> Result<Tensor> {
        Tensor::from_rows(&starts.iter().map(|&i| f(items[i + k])).collect::<Vec<_>>())
    };
    let shift = Tensor::row(&norm.out_mean.iter().map(|m| -m).collect::<Vec<_>>())?;
    let inv = Tensor::row(&norm.out_std.iter().map(|s| 1.0 / s).collect::<Vec<_>>())?;
    let std_s = Tensor::row(&norm.out_std[..sd])?;
    let mean_s = Tensor::row(&norm.out_mean[..sd])?;

    let mut g = Graph::new();
    let bound = model.members()[member].bind(&mut g);
    let (shift, inv, std_s, mean_s) = (
        g.constant(shift),
        g.constant(inv),
        g.constant(std_s),
        g.constant(mean_s),
    );
    let mut s_hat = g.constant(rows(0, &|t| t.s.clone())?);
    let mut total = None;
    for k in 0..horizon {
        let a = g.constant(rows(k, &|t| t.a.clone())?);
        let (mean, logvar) = model.forward_raw(&bound, &mut g, s_hat, a)?;
        let s_next = g.constant(rows(k, &|t| t.s_next.clone())?);
        let r = g.constant(rows(k, &|t| vec![t.r])?);
        let delta = g.sub(s_next, s_hat)?;
        let target = g.concat_cols(delta, r)?;
        let target = g.add_row(target, shift)?;
        let target = g.mul_row(target, inv)?;
        let nll = gaussian_nll(&mut g, mean, logvar, target)?;
        total = Some(match total {
            None => nll,
            Some(t) => g.add(t, nll)?,
        });
        if k + 1 < horizon {
            let step = g.slice_cols(mean, 0, sd)?;
            let step = g.mul_row(step, std_s)?;
            let step = g.add_row(step, mean_s)?;
            s_hat = g.add(s_hat, step)?;
        }
    }
    let loss = total.expect("horizon >= 1");
    let value = g.value(loss).item()?;
    if !value.is_finite() {
        return Err(Error::NonFinite(format!("member {member} multi-step loss")));
    }
    let grads = g.backward(loss)?.collect(&bound.params)?;
    Ok((value, grads))
}

/// Trains every member on the unrolled loss over stored trajectory segments
/// of length `horizon`, then reselects elites by one-step holdout NLL.
pub fn dataset_multistep_update(
    model: &mut EnsembleModel,
    dataset: &DatasetBuffer,
    horizon: usize,
    epochs: usize,
    rng: &mut SimRng,
) -> Result<TrainReport> {
    let items: Vec<&Transition> = dataset.iter().collect();
    let starts = starts_in(&items, horizon);
    if starts.is_empty() {
        return Err(Error::Dataset(format!("no contiguous segment of length {horizon}")));
    }
    let e = model.n_members();
    model.set_normalizer(Normalizer::fit(items.iter().copied())?);
    let call_seed: u64 = rng.random();
    let holdout_frac = model.config().holdout_frac;
    let mut order = starts.clone();
    order.shuffle(&mut substream(call_seed, u64::MAX));
    let n_hold = if holdout_frac > 0.0 && order.len() > 1 {
        ((order.len() as f64 * holdout_frac).round() as usize).clamp(1, order.len() - 1)
    } else {
        0
    };
    let (hold, train) = order.split_at(n_hold);
    let eval: Vec<&Transition> = if n_hold > 0 { hold } else { train }
        .iter()
        .map(|&i| items[i])
        .collect();
    let initial = model.evaluate_nll(&eval)?;
    let batch = model.config().batch_size;
    let mut last = Vec::with_capacity(e);
    for m in 0..e {
        let mut mrng = substream(call_seed, m as u64);
        let nt = train.len();
        let mut boot: Vec<usize> = (0..nt).map(|_| train[mrng.random_range(0..nt)]).collect();
        let mut epoch_loss = f64::NAN;
        for _ in 0..epochs {
            boot.shuffle(&mut mrng);
            let (mut sum, mut count) = (0.0, 0usize);
            for chunk in boot.chunks(batch) {
                let (loss, grads) = multistep_gradients(model, m, &items, chunk, horizon)?;
                model.apply_gradients(m, &grads)?;
                sum += loss;
                count += 1;
            }
            epoch_loss = sum / count.max(1) as f64;
        }
        last.push(epoch_loss);
    }
    let holdout_nll = model.evaluate_nll(&eval)?;
    let elites = select_elites(&holdout_nll, model.config().n_elites());
    model.set_elites(elites.clone())?;
    Ok(TrainReport {
        initial_holdout_nll: initial.iter().sum::<f64>() / e as f64,
        holdout_state_rmse: model.state_rmse(&eval)?,
        holdout_nll,
        elites,
        final_train_loss: last.iter().sum::<f64>() / e as f64,
        n_train: train.len(),
        n_holdout: n_hold,
    })
}
