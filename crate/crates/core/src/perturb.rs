//! Linearised index-equation system.
//!
//! Equating the perturbed indices `I(mu_k + eps_k, n_k + omega_k, T)` to
//! first order around the fluid point, together with `sum_k omega_k = 0`,
//! gives the K x K system
//!
//! ```text
//! [  1        1      ...    1     ] [omega_1]   [           0             ]
//! [ -I'_12   I'_22   ...    0     ] [omega_2] = [ I'_11 eps_1 - I'_21 eps_2 ]
//! [  ...                          ] [  ...  ]   [           ...           ]
//! [ -I'_12    0      ...   I'_K2  ] [omega_K]   [ I'_11 eps_1 - I'_K1 eps_K ]
//! ```
//!
//! whose arrow structure admits the closed form implemented here.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fluid::FluidSolution;

/// Relative size below which the closed form's denominator is treated as zero.
pub const SINGULARITY_THRESHOLD: f64 = 1e-14;

/// Partial derivatives of the index at each arm's fluid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexDerivatives {
    /// `dI/dmu` per arm.
    pub d_mu: Vec<f64>,
    /// `dI/dn` per arm.
    pub d_n: Vec<f64>,
}

impl IndexDerivatives {
    /// Generalized UCB1, `I(mu, n, T) = mu + f(T)/sqrt(n)`.
    pub fn ucb(n_star: &[f64], f_t: f64) -> Self {
        Self {
            d_mu: vec![1.0; n_star.len()],
            d_n: n_star.iter().map(|n| -0.5 * n.powf(-1.5) * f_t).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationSolution {
    /// Pull-count deviations `omega_k`.
    pub omega: Vec<f64>,
    /// Sample-mean deviations `eps_k` the solution was computed for.
    pub eps_bar: Vec<f64>,
}

impl PerturbationSolution {
    pub fn total(&self) -> f64 {
        crate::numeric::compensated_sum(self.omega.iter().copied())
    }
}

fn check_dims(k: usize, other: usize) -> Result<()> {
    if k < 2 {
        return Err(Error::Domain(format!("need at least two arms, got {k}")));
    }
    if other != k {
        return Err(Error::Dimension { expected: k, found: other });
    }
    Ok(())
}

/// Closed-form solution for a generic index.
pub fn solve_perturbation_closed_form(deriv: &IndexDerivatives, eps_bar: &[f64]) -> Result<PerturbationSolution> {
    let k = deriv.d_n.len();
    check_dims(k, deriv.d_mu.len())?;
    check_dims(k, eps_bar.len())?;
    if let Some(i) = deriv.d_n.iter().position(|&d| d == 0.0 || !d.is_finite()) {
        return Err(Error::Domain(format!("dI/dn of arm {} must be finite and non-zero", i + 1)));
    }
    let (d1_mu, d1_n) = (deriv.d_mu[0], deriv.d_n[0]);
    let ratios: Vec<f64> = deriv.d_n[1..].iter().map(|dk| d1_n / dk).collect();
    let denominator = 1.0 + ratios.iter().sum::<f64>();
    let threshold = SINGULARITY_THRESHOLD * (1.0 + ratios.iter().map(|r| r.abs()).sum::<f64>());
    if denominator.abs() < threshold {
        return Err(Error::Singular { denominator, threshold });
    }
    // rhs_i = I'_11 eps_1 - I'_i1 eps_i
    let rhs: Vec<f64> = (1..k)
        .map(|i| d1_mu * eps_bar[0] - deriv.d_mu[i] * eps_bar[i])
        .collect();
    let weighted: f64 = (1..k).map(|i| rhs[i - 1] / deriv.d_n[i]).sum();
    let omega_1 = -weighted / denominator;
    let mut omega = Vec::with_capacity(k);
    omega.push(omega_1);
    for i in 1..k {
        omega.push(rhs[i - 1] / deriv.d_n[i] + ratios[i - 1] * omega_1);
    }
    Ok(PerturbationSolution {
        omega,
        eps_bar: eps_bar.to_vec(),
    })
}

/// Specialisation to generalized UCB1 in terms of the fluid pull counts.
pub fn solve_perturbation_ucb(fluid: &FluidSolution, f_t: f64, eps_bar: &[f64]) -> Result<PerturbationSolution> {
    let k = fluid.n_star.len();
    check_dims(k, eps_bar.len())?;
    if !(f_t > 0.0 && f_t.is_finite()) {
        return Err(Error::Domain(format!("f(T) = {f_t} must be positive")));
    }
    let n = &fluid.n_star;
    let mut omega = vec![0.0; k];
    ucb_omega_into(n, f_t, eps_bar, &mut omega);
    Ok(PerturbationSolution {
        omega,
        eps_bar: eps_bar.to_vec(),
    })
}

/// Allocation-free kernel of [`solve_perturbation_ucb`].
#[inline]
pub(crate) fn ucb_omega_into(n: &[f64], f_t: f64, eps_bar: &[f64], omega: &mut [f64]) {
    let k = n.len();
    let scale = 2.0 / f_t;
    let mut share = 1.0;
    let mut weighted = 0.0;
    for i in 1..k {
        share += (n[i] / n[0]).powf(1.5);
        weighted += n[i].powf(1.5) * (eps_bar[0] - eps_bar[i]);
    }
    let omega_1 = scale * weighted / share;
    omega[0] = omega_1;
    for i in 1..k {
        omega[i] = scale * n[i].powf(1.5) * (eps_bar[i] - eps_bar[0]) + (n[i] / n[0]).powf(1.5) * omega_1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn homogeneous_rhs_gives_zero() {
        let d = IndexDerivatives::ucb(&[600.0, 300.0, 100.0], 4.0);
        let sol = solve_perturbation_closed_form(&d, &[0.0; 3]).unwrap();
        assert!(sol.omega.iter().all(|w| *w == 0.0));
    }

    #[test]
    fn equal_deviations_give_zero() {
        let fluid = crate::fluid::solve_fluid_with_scale(
            &crate::env::BanditInstance::gaussian(vec![1.0, 0.9, 0.5], vec![1.0; 3]).unwrap(),
            4.0,
            10_000,
        )
        .unwrap();
        let sol = solve_perturbation_ucb(&fluid, 4.0, &[0.3; 3]).unwrap();
        assert!(sol.omega.iter().all(|w| w.abs() < 1e-9), "{:?}", sol.omega);
    }

    #[test]
    fn singular_configuration_is_rejected() {
        let d = IndexDerivatives {
            d_mu: vec![1.0, 1.0],
            d_n: vec![1.0, -1.0],
        };
        assert!(matches!(
            solve_perturbation_closed_form(&d, &[0.1, 0.2]),
            Err(Error::Singular { .. })
        ));
        let zero = IndexDerivatives {
            d_mu: vec![1.0, 1.0],
            d_n: vec![-1.0, 0.0],
        };
        assert!(solve_perturbation_closed_form(&zero, &[0.1, 0.2]).is_err());
    }

    #[test]
    fn dimension_mismatch() {
        let d = IndexDerivatives::ucb(&[10.0, 5.0], 2.0);
        assert!(matches!(
            solve_perturbation_closed_form(&d, &[0.0; 3]),
            Err(Error::Dimension { expected: 2, found: 3 })
        ));
    }

    #[test]
    fn pulls_rise_with_own_sample_mean() {
        let fluid = crate::fluid::solve_fluid_with_scale(
            &crate::env::BanditInstance::gaussian(vec![1.0, 0.99], vec![1.0; 2]).unwrap(),
            5.0,
            100_000,
        )
        .unwrap();
        let mut last = f64::NEG_INFINITY;
        for step in -5..=5 {
            let eps2 = step as f64 * 1e-3;
            let w = solve_perturbation_ucb(&fluid, 5.0, &[0.0, eps2]).unwrap().omega[1];
            assert!(w > last);
            last = w;
        }
    }
}
