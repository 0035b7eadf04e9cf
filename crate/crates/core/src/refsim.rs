//! Dense statevector simulator, used as a reference for the DD engines.
//!
//! RZ(θ) acts as `diag(e^{−iθ/2}, e^{iθ/2})`, the same convention as the gate DDs.

use num_complex::Complex64;

use crate::circuit::{Circuit, Gate};
use crate::error::DdError;

/// Largest qubit count the dense simulator accepts.
pub const DENSE_CAP: usize = 20;

#[derive(Clone, Debug, PartialEq)]
pub struct DenseState {
    pub n: usize,
    pub amps: Vec<Complex64>,
}

impl DenseState {
    pub fn basis(n: usize, index: u64) -> Result<Self, DdError> {
        if n > DENSE_CAP {
            return Err(DdError::CapExceeded { n, cap: DENSE_CAP });
        }
        if index >> n != 0 {
            return Err(DdError::BasisOutOfRange { n, bits: index });
        }
        let mut amps = vec![Complex64::new(0.0, 0.0); 1 << n];
        amps[index as usize] = Complex64::new(1.0, 0.0);
        Ok(DenseState { n, amps })
    }

    pub fn norm2(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum()
    }

    pub fn probability(&self, index: usize) -> f64 {
        self.amps[index].norm_sqr()
    }

    fn apply_1q(&mut self, q: usize, u: [Complex64; 4], control: Option<usize>) {
        let bit = 1usize << q;
        for i in 0..self.amps.len() {
            if i & bit != 0 {
                continue;
            }
            if let Some(c) = control {
                if i & (1 << c) == 0 {
                    continue;
                }
            }
            let (a0, a1) = (self.amps[i], self.amps[i | bit]);
            self.amps[i] = u[0] * a0 + u[1] * a1;
            self.amps[i | bit] = u[2] * a0 + u[3] * a1;
        }
    }
}

/// Applies one gate in place.
pub fn dense_apply(s: &mut DenseState, g: &Gate) -> Result<(), DdError> {
    if s.n > DENSE_CAP {
        return Err(DdError::CapExceeded { n: s.n, cap: DENSE_CAP });
    }
    g.validate(s.n)?;
    match *g {
        Gate::Cnot { control, target } => {
            let bit = 1usize << target;
            for i in 0..s.amps.len() {
                if i & bit == 0 && i & (1 << control) != 0 {
                    s.amps.swap(i, i | bit);
                }
            }
        }
        Gate::Oracle(o) => {
            let m = o.marked as usize;
            s.amps[m] = -s.amps[m];
        }
        Gate::GroverIteration(o) => {
            let m = o.marked as usize;
            s.amps[m] = -s.amps[m];
            // inversion about the mean
            let mean = s.amps.iter().sum::<Complex64>() / s.amps.len() as f64;
            for a in &mut s.amps {
                *a = 2.0 * mean - *a;
            }
        }
        Gate::H(q) | Gate::X(q) | Gate::Z(q) | Gate::Rx(q, _) | Gate::Ry(q, _) | Gate::Rz(q, _) => {
            s.apply_1q(q, g.matrix().expect("single-qubit gate"), None);
        }
    }
    Ok(())
}

/// Runs `c` on basis state `input`.
pub fn dense_run(c: &Circuit, input: u64) -> Result<DenseState, DdError> {
    let mut s = DenseState::basis(c.n, input)?;
    for g in &c.gates {
        dense_apply(&mut s, g)?;
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circuit::{build_grover, OracleSpec};
    use std::f64::consts::FRAC_1_SQRT_2;

    fn close(a: Complex64, b: Complex64) -> bool {
        (a - b).norm() < 1e-12
    }

    #[test]
    fn hadamard_on_zero() {
        let mut s = DenseState::basis(1, 0).unwrap();
        dense_apply(&mut s, &Gate::H(0)).unwrap();
        assert!(close(s.amps[0], Complex64::new(FRAC_1_SQRT_2, 0.0)));
        assert!(close(s.amps[1], Complex64::new(FRAC_1_SQRT_2, 0.0)));
    }

    #[test]
    fn cnot_flips_target_when_control_set() {
        // |10⟩: qubit 1 set
        let mut s = DenseState::basis(2, 0b10).unwrap();
        dense_apply(&mut s, &Gate::Cnot { control: 1, target: 0 }).unwrap();
        assert!(close(s.amps[0b11], Complex64::new(1.0, 0.0)));
    }

    #[test]
    fn rz_phase_convention() {
        let t = 0.7;
        let mut s = DenseState::basis(1, 0).unwrap();
        dense_apply(&mut s, &Gate::Rz(0, t)).unwrap();
        assert!(close(s.amps[0], Complex64::from_polar(1.0, -t / 2.0)));
    }

    #[test]
    fn empty_circuit_keeps_input() {
        let s = dense_run(&Circuit::new(3), 5).unwrap();
        assert_eq!(s, DenseState::basis(3, 5).unwrap());
    }

    #[test]
    fn grover_success() {
        let s = dense_run(&build_grover(2, OracleSpec { marked: 3 }).unwrap(), 0).unwrap();
        assert!((s.probability(3) - 1.0).abs() < 1e-12);
        for n in [5, 8] {
            let s = dense_run(&build_grover(n, OracleSpec { marked: 7 }).unwrap(), 0).unwrap();
            assert!(s.probability(7) >= 0.99);
        }
    }

    #[test]
    fn cap_is_enforced() {
        assert!(DenseState::basis(21, 0).is_err());
    }
}
