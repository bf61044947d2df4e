use super::{Array, Graph, NumericsError, Real, Var};

/// Outcome of comparing a graph's gradient against central differences.
#[derive(Debug, Clone)]
pub struct GradCheck {
    /// `max_i |analytic_i - numeric_i| / (|numeric_i| + 1e-8)`.
    pub max_rel_error: Real,
    /// Coordinate where the maximum was attained.
    pub worst_index: usize,
    pub analytic: Array,
    pub numeric: Array,
}

/// Builds `f` on a fresh graph with `x` as the only gradient-carrying leaf,
/// then compares the backward-pass gradient with `(f(x + h e_i) - f(x - h e_i)) / 2h`
/// for every coordinate `i`.
pub fn check_gradient<F, E>(f: F, x: &Array, h: Real) -> Result<GradCheck, E>
where
    F: Fn(&mut Graph, Var) -> Result<Var, E>,
    E: From<NumericsError>,
{
    if !(h > 0.0) {
        return Err(NumericsError::InvalidArgument {
            op: "check_gradient",
            reason: format!("step must be positive, got {h}"),
        }
        .into());
    }
    let eval = |point: &Array, index: usize| -> Result<Real, E> {
        let mut g = Graph::new();
        let leaf = g.constant(point.clone());
        let out = f(&mut g, leaf)?;
        let v = g.value(out).item();
        if !v.is_finite() {
            return Err(NumericsError::NonFiniteProbe { index }.into());
        }
        Ok(v)
    };

    let mut g = Graph::new();
    let leaf = g.leaf(x.clone());
    let out = f(&mut g, leaf)?;
    g.backward(out)?;
    let analytic = g
        .grad(leaf)
        .cloned()
        .unwrap_or_else(|| Array::zeros(x.rows(), x.cols()));

    let mut numeric = Array::zeros(x.rows(), x.cols());
    let mut probe = x.clone();
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = eval(&probe, i)?;
        probe.data_mut()[i] = orig - h;
        let down = eval(&probe, i)?;
        probe.data_mut()[i] = orig;
        numeric.data_mut()[i] = (up - down) / (2.0 * h);
    }

    let mut max_rel_error = 0.0;
    let mut worst_index = 0;
    for (i, (a, n)) in analytic.data().iter().zip(numeric.data()).enumerate() {
        let rel = (a - n).abs() / (n.abs() + 1e-8);
        if rel > max_rel_error {
            max_rel_error = rel;
            worst_index = i;
        }
    }
    Ok(GradCheck {
        max_rel_error,
        worst_index,
        analytic,
        numeric,
    })
}
