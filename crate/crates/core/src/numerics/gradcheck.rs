use super::{NumericsError, Tape, Tensor, Var};

/// Compares reverse-mode gradients of a scalar function against central
/// differences and returns the worst relative error over all coordinates.
///
/// The error per coordinate is `|analytic - numeric| / max(1, |analytic|)`.
pub fn grad_check<F>(f: F, x: &Tensor, h: f64) -> Result<f64, NumericsError>
where
    F: Fn(&mut Tape, Var) -> Result<Var, NumericsError>,
{
    grad_check_many(
        |tape, vars| f(tape, vars[0]),
        std::slice::from_ref(x),
        h,
    )
}

/// Multi-input variant of [`grad_check`]: every tensor in `inputs` is a
/// differentiable leaf and every coordinate of every input is perturbed.
pub fn grad_check_many<F>(f: F, inputs: &[Tensor], h: f64) -> Result<f64, NumericsError>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, NumericsError>,
{
    if !(1e-7..=1e-3).contains(&h) {
        return Err(NumericsError::StepSize { h });
    }
    let eval = |inputs: &[Tensor]| -> Result<(Tape, Vec<Var>, Var), NumericsError> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = f(&mut tape, &vars).map_err(|e| NumericsError::Evaluation(e.to_string()))?;
        let value = tape.value(out);
        if value.len() != 1 {
            return Err(NumericsError::NotScalar {
                shape: value.shape().to_vec(),
            });
        }
        if !value.data()[0].is_finite() {
            return Err(NumericsError::Evaluation("non-finite function value".into()));
        }
        Ok((tape, vars, out))
    };

    let (tape, vars, out) = eval(inputs)?;
    let grads = tape.backward(out)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .zip(inputs)
        .map(|(v, x)| grads.get_or_zeros(*v, x))
        .collect();

    let scalar_at = |perturbed: &[Tensor]| -> Result<f64, NumericsError> {
        let (tape, _, out) = eval(perturbed)?;
        Ok(tape.value(out).data()[0])
    };

    let mut worst = 0.0f64;
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (which, input) in inputs.iter().enumerate() {
        for coord in 0..input.len() {
            let orig = input.data()[coord];
            work[which].data_mut()[coord] = orig + h;
            let plus = scalar_at(&work)?;
            work[which].data_mut()[coord] = orig - h;
            let minus = scalar_at(&work)?;
            work[which].data_mut()[coord] = orig;

            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic[which].data()[coord];
            let err = (a - numeric).abs() / a.abs().max(1.0);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}
