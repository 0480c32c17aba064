//! Deterministic fixtures shared by the benchmarks.

use superq_core::{generate_synthetic, ObjectiveKind, Problem, SynthSpec};

/// A generated instance and the constraint values of block 0 at a point
/// outside the feasible set, so projections have real work to do.
pub struct Fixture {
    pub problem: Problem,
    pub witness: Vec<f64>,
    pub values: Vec<f64>,
}

pub fn fixture(m: usize, n: usize, k_fraction: f64, objective: ObjectiveKind, seed: u64) -> Fixture {
    let spec = SynthSpec {
        m,
        n,
        l: 1,
        k_fraction,
        objective,
        seed,
    };
    let (problem, witness) = generate_synthetic(&spec).expect("valid benchmark spec");
    // the box corner opposite the witness is typically infeasible
    let x: Vec<f64> = witness.iter().map(|w| if *w > 0.0 { -1.0 } else { 1.0 }).collect();
    let values = problem.blocks[0].eval(&x);
    Fixture {
        problem,
        witness,
        values,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use superq_core::topk_sum;

    #[test]
    fn fixture_values_are_infeasible() {
        let f = fixture(1 << 10, 16, 0.01, ObjectiveKind::Linear, 1);
        let k = f.problem.blocks[0].k;
        assert!(topk_sum(&f.values, k).unwrap() > 0.0);
        assert!(topk_sum(&f.problem.blocks[0].eval(&f.witness), k).unwrap() <= 1e-10);
    }
}
