//! Matrix-free restarted GMRES used to accelerate source iteration.

/// Outcome of a GMRES run.
#[derive(Debug, Clone, Copy)]
pub struct GmresOutcome {
    /// Relative residual `|b - A x| / |b|` at exit.
    pub relative_residual: f64,
    /// Number of operator applications performed.
    pub applications: usize,
    pub converged: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn givens(a: f64, b: f64) -> (f64, f64) {
    if b == 0.0 {
        (1.0, 0.0)
    } else if a.abs() > b.abs() {
        let t = b / a;
        let c = 1.0 / (1.0 + t * t).sqrt();
        (c, c * t)
    } else {
        let t = a / b;
        let s = 1.0 / (1.0 + t * t).sqrt();
        (s * t, s)
    }
}

/// Solve `A x = b` with restarted GMRES, `apply` computing `y = A x`.
///
/// `x` holds the initial guess on entry and the solution on exit. Iteration
/// stops when the relative residual drops below `tol` or `max_applications`
/// operator applications have been spent.
pub fn gmres(
    apply: &mut dyn FnMut(&[f64], &mut [f64]),
    b: &[f64],
    x: &mut [f64],
    tol: f64,
    restart: usize,
    max_applications: usize,
) -> GmresOutcome {
    let n = b.len();
    let bnorm = norm(b);
    if bnorm == 0.0 {
        x.fill(0.0);
        return GmresOutcome {
            relative_residual: 0.0,
            applications: 0,
            converged: true,
        };
    }
    let m = restart.min(n).max(1);
    let mut applications = 0usize;
    let mut ax = vec![0.0; n];

    loop {
        apply(x, &mut ax);
        applications += 1;
        let mut r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
        let beta = norm(&r);
        if beta / bnorm <= tol {
            return GmresOutcome {
                relative_residual: beta / bnorm,
                applications,
                converged: true,
            };
        }
        if applications >= max_applications {
            return GmresOutcome {
                relative_residual: beta / bnorm,
                applications,
                converged: false,
            };
        }

        for v in &mut r {
            *v /= beta;
        }
        let mut basis: Vec<Vec<f64>> = vec![r];
        let mut h = vec![vec![0.0; m]; m + 1];
        let mut cs = vec![0.0; m];
        let mut sn = vec![0.0; m];
        let mut g = vec![0.0; m + 1];
        g[0] = beta;
        let mut k_done = 0;

        for k in 0..m {
            let mut w = vec![0.0; n];
            apply(&basis[k], &mut w);
            applications += 1;
            for j in 0..=k {
                h[j][k] = dot(&w, &basis[j]);
                for (wi, vj) in w.iter_mut().zip(&basis[j]) {
                    *wi -= h[j][k] * vj;
                }
            }
            h[k + 1][k] = norm(&w);
            if h[k + 1][k] > 0.0 {
                for wi in &mut w {
                    *wi /= h[k + 1][k];
                }
            }
            basis.push(w);

            for j in 0..k {
                let t = cs[j] * h[j][k] + sn[j] * h[j + 1][k];
                h[j + 1][k] = -sn[j] * h[j][k] + cs[j] * h[j + 1][k];
                h[j][k] = t;
            }
            let (c, s) = givens(h[k][k], h[k + 1][k]);
            cs[k] = c;
            sn[k] = s;
            h[k][k] = c * h[k][k] + s * h[k + 1][k];
            h[k + 1][k] = 0.0;
            let t = c * g[k] + s * g[k + 1];
            g[k + 1] = -s * g[k] + c * g[k + 1];
            g[k] = t;

            k_done = k + 1;
            if g[k_done].abs() / bnorm <= tol || applications >= max_applications {
                break;
            }
        }

        // Back-substitute and update x.
        let mut y = vec![0.0; k_done];
        for i in (0..k_done).rev() {
            let mut sum = g[i];
            for j in (i + 1)..k_done {
                sum -= h[i][j] * y[j];
            }
            y[i] = sum / h[i][i];
        }
        for j in 0..k_done {
            for (xi, vj) in x.iter_mut().zip(&basis[j]) {
                *xi += y[j] * vj;
            }
        }

        if applications >= max_applications {
            apply(x, &mut ax);
            let res = b
                .iter()
                .zip(&ax)
                .map(|(bi, ai)| (bi - ai) * (bi - ai))
                .sum::<f64>()
                .sqrt();
            return GmresOutcome {
                relative_residual: res / bnorm,
                applications: applications + 1,
                converged: res / bnorm <= tol,
            };
        }
    }
}
