use super::{NumError, Tape, Tensor, Var};

fn evaluate<F>(f: &F, params: &[Tensor], at: impl Fn() -> String) -> Result<f64, NumError>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, NumError>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().cloned().map(|p| tape.leaf(p)).collect();
    let out = f(&mut tape, &vars)?;
    let value = tape.scalar(out);
    if !value.is_finite() {
        return Err(NumError::NonFinite { value, at: at() });
    }
    Ok(value)
}

/// Compares reverse-mode gradients of `f` against central differences.
///
/// The numeric derivative uses the symmetric five-point stencil
/// `(8(f(x+h) - f(x-h)) - (f(x+2h) - f(x-2h))) / 12h`, whose `O(h⁴)`
/// truncation error allows a step large enough that rounding in `f` stays
/// well below the tolerance even for gradients near `1e-8`.
///
/// Returns the maximum over every parameter element of
/// `|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)`.
pub fn finite_diff_check<F>(f: F, params: &[Tensor], step: f64) -> Result<f64, NumError>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, NumError>,
{
    if !(step > 0.0 && step.is_finite()) {
        return Err(NumError::InvalidStep(step));
    }
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().cloned().map(|p| tape.leaf(p)).collect();
    let out = f(&mut tape, &vars)?;
    let value = tape.scalar(out);
    if !value.is_finite() {
        return Err(NumError::NonFinite {
            value,
            at: "base point".into(),
        });
    }
    let grads = tape.backward(out)?;

    let mut probe = params.to_vec();
    let mut worst = 0.0f64;
    for (p, &var) in vars.iter().enumerate() {
        let analytic = grads.tensor(var);
        for i in 0..params[p].len() {
            let origin = params[p].data()[i];
            let mut at = |k: f64| {
                probe[p].data_mut()[i] = origin + k * step;
                let v = evaluate(&f, &probe, || format!("param {p}[{i}] {k:+} step"));
                probe[p].data_mut()[i] = origin;
                v
            };
            let near = at(1.0)? - at(-1.0)?;
            let far = at(2.0)? - at(-2.0)?;
            let numeric = (8.0 * near - far) / (12.0 * step);
            let a = analytic.data()[i];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}
