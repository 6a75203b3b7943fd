//! Euler ODE inference and the end-to-end prediction pipeline.

use crate::error::{Error, Result};
use crate::geom::{Conformer, DistanceMatrix};
use crate::numerics::Tensor;
use crate::reconstruct::reconstruct;
use crate::tsdvnet::ModelParams;

use super::initial_guess;

/// Anything that can produce a velocity matrix for a transition-state
/// geometry at time t, conditioned on the reaction.
pub trait VelocityField {
    fn velocity(
        &self,
        z: &[u8],
        d_r: &DistanceMatrix,
        d_p: &DistanceMatrix,
        d_ts: &DistanceMatrix,
        t: f64,
    ) -> Result<Tensor>;
}

impl VelocityField for ModelParams {
    fn velocity(
        &self,
        z: &[u8],
        d_r: &DistanceMatrix,
        d_p: &DistanceMatrix,
        d_ts: &DistanceMatrix,
        t: f64,
    ) -> Result<Tensor> {
        self.forward(z, d_r, d_p, d_ts, t)
    }
}

/// Closure adapter, mainly for oracle fields in tests:
/// `(d_ts, t) -> velocity`.
pub struct FnField<F>(pub F)
where
    F: Fn(&DistanceMatrix, f64) -> Result<Tensor>;

impl<F> VelocityField for FnField<F>
where
    F: Fn(&DistanceMatrix, f64) -> Result<Tensor>,
{
    fn velocity(
        &self,
        _z: &[u8],
        _d_r: &DistanceMatrix,
        _d_p: &DistanceMatrix,
        d_ts: &DistanceMatrix,
        t: f64,
    ) -> Result<Tensor> {
        (self.0)(d_ts, t)
    }
}

#[derive(Clone, Debug)]
pub struct IntegrationResult {
    pub d_ts: DistanceMatrix,
    pub steps: usize,
}

/// Explicit Euler from the midpoint guess at t = 0 to t = 1.
///
/// When `dt` divides 1 the stepping is uniform; otherwise the final partial
/// step lands on t = 1. Every intermediate state is re-symmetrized, the
/// diagonal zeroed, and negative entries clamped.
pub fn integrate(
    field: &dyn VelocityField,
    z: &[u8],
    d_r: &DistanceMatrix,
    d_p: &DistanceMatrix,
    dt: f64,
) -> Result<IntegrationResult> {
    if !(dt > 0.0 && dt <= 1.0) {
        return Err(Error::InvalidArgument(format!("dt = {dt} outside (0, 1]")));
    }
    let n = d_r.n();
    let mut state = initial_guess(d_r, d_p)?;
    let mut steps = 0;
    let mut t = 0.0;
    while t < 1.0 - 1e-12 {
        let step = dt.min(1.0 - t);
        let v = field.velocity(z, d_r, d_p, &state, t)?;
        if !v.all_finite() {
            return Err(Error::NonFinite(format!("velocity at t = {t}")));
        }
        if v.shape() != [n, n] {
            return Err(Error::ShapeMismatch(format!(
                "velocity shape {:?} for {n} atoms",
                v.shape()
            )));
        }
        let values: Vec<f64> = state
            .values()
            .iter()
            .zip(v.data())
            .map(|(d, vel)| d + vel * step)
            .collect();
        state = DistanceMatrix::from_raw(n, values)?;
        t += step;
        steps += 1;
    }
    Ok(IntegrationResult { d_ts: state, steps })
}

#[derive(Clone, Debug)]
pub struct Prediction {
    pub conformer: Conformer,
    pub d_ts: DistanceMatrix,
    pub steps: usize,
    /// Final weighted reconstruction stress.
    pub stress: f64,
}

/// Full inference: integrate the learned field, then recover coordinates.
/// Deterministic given (field, reaction, dt); nothing is sampled.
pub fn predict_ts(
    field: &dyn VelocityField,
    z: &[u8],
    d_r: &DistanceMatrix,
    d_p: &DistanceMatrix,
    dt: f64,
) -> Result<Prediction> {
    let integrated = integrate(field, z, d_r, d_p, dt)?;
    let rec = reconstruct(&integrated.d_ts)?;
    let conformer = Conformer::new(z.to_vec(), rec.coords)?;
    Ok(Prediction {
        conformer,
        d_ts: integrated.d_ts,
        steps: integrated.steps,
        stress: rec.final_stress,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{pairwise_distances, random_conformer, rmsd};
    use crate::numerics::Rng;

    fn constant_field(d0: &DistanceMatrix, d1: &DistanceMatrix) -> Tensor {
        Tensor::new(
            vec![d0.n(), d0.n()],
            d1.values()
                .iter()
                .zip(d0.values())
                .map(|(a, b)| a - b)
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn constant_field_reaches_target_for_any_step_count() {
        let mut rng = Rng::new(11);
        let r = random_conformer(&mut rng, 5, 2.0);
        let p = random_conformer(&mut rng, 5, 2.0);
        let ts = random_conformer(&mut rng, 5, 2.0);
        let (dr, dp, dts) = (
            pairwise_distances(&r),
            pairwise_distances(&p),
            pairwise_distances(&ts),
        );
        let d0 = initial_guess(&dr, &dp).unwrap();
        let u = constant_field(&d0, &dts);
        let field = FnField(move |_: &DistanceMatrix, _| Ok(u.clone()));
        for &steps in &[1usize, 4, 10] {
            let dt = 1.0 / steps as f64;
            let out = integrate(&field, r.atomic_numbers(), &dr, &dp, dt).unwrap();
            assert_eq!(out.steps, steps);
            assert!(
                out.d_ts.max_abs_diff(&dts) < 1e-12,
                "steps {steps}: {}",
                out.d_ts.max_abs_diff(&dts)
            );
        }
    }

    #[test]
    fn euler_error_scales_linearly_on_time_dependent_field() {
        // v(t) = 2t (D1 - D0) has exact endpoint D0 + (D1 - D0); Euler error
        // is O(dt) and halving dt halves it (within 20%).
        let mut rng = Rng::new(12);
        let r = random_conformer(&mut rng, 4, 2.0);
        let p = random_conformer(&mut rng, 4, 2.0);
        let ts = random_conformer(&mut rng, 4, 2.0);
        let (dr, dp, dts) = (
            pairwise_distances(&r),
            pairwise_distances(&p),
            pairwise_distances(&ts),
        );
        let d0 = initial_guess(&dr, &dp).unwrap();
        let u = constant_field(&d0, &dts);
        let field = FnField(move |_: &DistanceMatrix, t: f64| {
            Ok(u.map(|v| 2.0 * t * v))
        });

        let err = |steps: usize| {
            let out = integrate(&field, r.atomic_numbers(), &dr, &dp, 1.0 / steps as f64).unwrap();
            out.d_ts.max_abs_diff(&dts)
        };
        let e20 = err(20);
        let e40 = err(40);
        let ratio = e20 / e40;
        assert!(
            (ratio - 2.0).abs() < 0.4,
            "halving dt should halve the error, ratio {ratio}"
        );
    }

    #[test]
    fn partial_final_step() {
        let mut rng = Rng::new(13);
        let r = random_conformer(&mut rng, 4, 2.0);
        let p = random_conformer(&mut rng, 4, 2.0);
        let ts = random_conformer(&mut rng, 4, 2.0);
        let (dr, dp, dts) = (
            pairwise_distances(&r),
            pairwise_distances(&p),
            pairwise_distances(&ts),
        );
        let d0 = initial_guess(&dr, &dp).unwrap();
        let u = constant_field(&d0, &dts);
        let field = FnField(move |_: &DistanceMatrix, _| Ok(u.clone()));
        // 0.3 does not divide 1: steps are 0.3, 0.3, 0.3, 0.1.
        let out = integrate(&field, r.atomic_numbers(), &dr, &dp, 0.3).unwrap();
        assert_eq!(out.steps, 4);
        assert!(out.d_ts.max_abs_diff(&dts) < 1e-12);
    }

    #[test]
    fn trajectory_states_stay_valid() {
        // A violently negative field cannot push states off the manifold:
        // every intermediate is clamped and symmetric.
        let mut rng = Rng::new(14);
        let r = random_conformer(&mut rng, 4, 1.0);
        let p = random_conformer(&mut rng, 4, 1.0);
        let (dr, dp) = (pairwise_distances(&r), pairwise_distances(&p));
        let field = FnField(|d: &DistanceMatrix, _| {
            Ok(Tensor::new(vec![d.n(), d.n()], vec![-50.0; d.n() * d.n()]).unwrap())
        });
        let out = integrate(&field, r.atomic_numbers(), &dr, &dp, 0.25).unwrap();
        // Constructor would reject invalid output.
        DistanceMatrix::new(out.d_ts.n(), out.d_ts.values().to_vec()).unwrap();
        assert!(out.d_ts.values().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn oracle_prediction_recovers_true_ts() {
        let mut rng = Rng::new(15);
        let r = random_conformer(&mut rng, 6, 1.8);
        let p = random_conformer(&mut rng, 6, 1.8);
        let ts = random_conformer(&mut rng, 6, 1.8);
        let (dr, dp, dts) = (
            pairwise_distances(&r),
            pairwise_distances(&p),
            pairwise_distances(&ts),
        );
        let d0 = initial_guess(&dr, &dp).unwrap();
        let u = constant_field(&d0, &dts);
        let field = FnField(move |_: &DistanceMatrix, _| Ok(u.clone()));
        let pred = predict_ts(&field, r.atomic_numbers(), &dr, &dp, 0.1).unwrap();
        // Compare as geometry, resolving the enantiomer.
        let rec = crate::reconstruct::reconstruct(&pred.d_ts).unwrap();
        let oriented = rec.oriented_toward(&ts).unwrap();
        let rebuilt = ts.with_coords(oriented).unwrap();
        assert!(rmsd(&ts, &rebuilt).unwrap() < 1e-3);
        assert!(pred.stress < 1e-8);
    }

    #[test]
    fn degenerate_reaction_with_zero_field_reconstructs_reactant() {
        let mut rng = Rng::new(16);
        let r = random_conformer(&mut rng, 5, 1.5);
        let dr = pairwise_distances(&r);
        let field = FnField(|d: &DistanceMatrix, _| Ok(Tensor::zeros(&[d.n(), d.n()])));
        let pred = predict_ts(&field, r.atomic_numbers(), &dr, &dr, 0.1).unwrap();
        assert!(pred.d_ts.max_abs_diff(&dr) < 1e-12);
        let rec = crate::reconstruct::reconstruct(&pred.d_ts).unwrap();
        let oriented = rec.oriented_toward(&r).unwrap();
        assert!(rmsd(&r, &r.with_coords(oriented).unwrap()).unwrap() < 1e-6);
    }

    #[test]
    fn invalid_dt_rejected() {
        let d = DistanceMatrix::new(1, vec![0.0]).unwrap();
        let field = FnField(|dm: &DistanceMatrix, _| Ok(Tensor::zeros(&[dm.n(), dm.n()])));
        assert!(integrate(&field, &[1], &d, &d, 0.0).is_err());
        assert!(integrate(&field, &[1], &d, &d, 1.5).is_err());
    }
}
