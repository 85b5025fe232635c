//! Derivative-free simplex minimisation.

/// Outcome of a Nelder-Mead run.
#[derive(Debug, Clone, PartialEq)]
pub struct NelderMeadResult {
    pub best: Vec<f64>,
    pub value: f64,
    pub evaluations: usize,
}

/// Minimises `f` starting from a simplex around `start` with edge lengths
/// `steps`. Non-finite values are treated as +infinity. Stops after
/// `max_evals` evaluations or when the simplex values spread less than `ftol`.
pub fn nelder_mead(
    mut f: impl FnMut(&[f64]) -> f64,
    start: &[f64],
    steps: &[f64],
    max_evals: usize,
    ftol: f64,
) -> NelderMeadResult {
    let dim = start.len();
    let mut evals = 0usize;
    let mut eval = |x: &[f64], evals: &mut usize| {
        *evals += 1;
        let v = f(x);
        if v.is_nan() { f64::INFINITY } else { v }
    };

    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(dim + 1);
    if max_evals == 0 {
        return NelderMeadResult { best: start.to_vec(), value: f64::INFINITY, evaluations: 0 };
    }
    let v0 = eval(start, &mut evals);
    simplex.push((start.to_vec(), v0));
    for i in 0..dim {
        if evals >= max_evals {
            break;
        }
        let mut x = start.to_vec();
        x[i] += steps[i];
        let v = eval(&x, &mut evals);
        simplex.push((x, v));
    }

    let sort = |s: &mut Vec<(Vec<f64>, f64)>| s.sort_by(|a, b| a.1.total_cmp(&b.1));
    if simplex.len() == dim + 1 {
        loop {
            sort(&mut simplex);
            let spread = simplex[dim].1 - simplex[0].1;
            if evals >= max_evals || (spread.is_finite() && spread.abs() <= ftol) {
                break;
            }
            let centroid: Vec<f64> = (0..dim)
                .map(|j| simplex[..dim].iter().map(|(x, _)| x[j]).sum::<f64>() / dim as f64)
                .collect();
            let worst = simplex[dim].clone();
            let toward = |t: f64| -> Vec<f64> {
                centroid.iter().zip(&worst.0).map(|(c, w)| c + t * (w - c)).collect()
            };

            let xr = toward(-1.0);
            let fr = eval(&xr, &mut evals);
            if fr < simplex[0].1 {
                if evals >= max_evals {
                    simplex[dim] = (xr, fr);
                    continue;
                }
                let xe = toward(-2.0);
                let fe = eval(&xe, &mut evals);
                simplex[dim] = if fe < fr { (xe, fe) } else { (xr, fr) };
                continue;
            }
            if fr < simplex[dim - 1].1 {
                simplex[dim] = (xr, fr);
                continue;
            }
            if evals >= max_evals {
                break;
            }
            let (xc, fc) = if fr < worst.1 {
                let xc = toward(-0.5);
                let fc = eval(&xc, &mut evals);
                (xc, fc)
            } else {
                let xc = toward(0.5);
                let fc = eval(&xc, &mut evals);
                (xc, fc)
            };
            if fc < worst.1.min(fr) {
                simplex[dim] = (xc, fc);
                continue;
            }
            // Shrink toward the best vertex.
            let best = simplex[0].0.clone();
            for vertex in simplex.iter_mut().skip(1) {
                if evals >= max_evals {
                    break;
                }
                let x: Vec<f64> = best.iter().zip(&vertex.0).map(|(b, v)| b + 0.5 * (v - b)).collect();
                let v = eval(&x, &mut evals);
                *vertex = (x, v);
            }
        }
    }
    sort(&mut simplex);
    let (best, value) = simplex.swap_remove(0);
    NelderMeadResult { best, value, evaluations: evals }
}
