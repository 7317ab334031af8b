//! The `check` subcommand: a seeded battery of internal-consistency
//! probes, covering the identities the library is built around. Each row
//! reports one instance; the battery is deterministic in the seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::block::{BlockMeasure, GammaWeights, DEFAULT_TRUNCATION_DEPTH};
use crate::conditioning::{cond_expect, disintegrate};
use crate::entropy::{dual_maximize, entropy_decompose};
use crate::measure::{FiniteMeasure, FiniteSpace, MeasurableMap};
use crate::schrodinger::{sinkhorn, EndpointMeasure, SinkhornOptions};

#[derive(Serialize)]
pub struct CheckRow {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

#[derive(Serialize)]
pub struct CheckResults {
    pub seed: u64,
    pub total: usize,
    pub failed: usize,
    pub checks: Vec<CheckRow>,
}

fn space_of(n: usize) -> FiniteSpace {
    FiniteSpace::new((0..n).map(|i| format!("s{i}"))).expect("distinct labels")
}

fn random_measure(rng: &mut ChaCha8Rng, space: &FiniteSpace) -> FiniteMeasure {
    let weights = (0..space.len())
        .map(|_| rng.random_range(0.05..2.0))
        .collect();
    FiniteMeasure::new(space.clone(), weights).expect("positive weights")
}

fn random_probability(rng: &mut ChaCha8Rng, space: &FiniteSpace) -> FiniteMeasure {
    random_measure(rng, space)
        .normalized()
        .expect("positive mass")
}

fn random_map(rng: &mut ChaCha8Rng, space: &FiniteSpace) -> MeasurableMap {
    let m = rng.random_range(1..=space.len());
    let target = FiniteSpace::new((0..m).map(|j| format!("z{j}"))).expect("distinct labels");
    let assign = (0..space.len()).map(|_| rng.random_range(0..m)).collect();
    MeasurableMap::new(space.clone(), target, assign).expect("indices in range")
}

struct Battery {
    rng: ChaCha8Rng,
    rows: Vec<CheckRow>,
}

impl Battery {
    fn record(&mut self, name: String, pass: bool, detail: String) {
        self.rows.push(CheckRow { name, pass, detail });
    }

    fn residual(&mut self, name: String, residual: f64, tol: f64) {
        self.record(
            name,
            residual.is_finite() && residual <= tol,
            format!("residual {residual:.3e} (tolerance {tol:.1e})"),
        );
    }

    fn error(&mut self, name: String, err: impl std::fmt::Display) {
        self.record(name, false, format!("failed: {err}"));
    }
}

pub fn run_battery(seed: u64) -> CheckResults {
    let mut b = Battery {
        rng: ChaCha8Rng::seed_from_u64(seed),
        rows: Vec::new(),
    };

    // image measures keep the total mass
    for i in 0..5 {
        let name = format!("pushforward-mass-{i}");
        let n = b.rng.random_range(2..=6);
        let space = space_of(n);
        let mu = random_measure(&mut b.rng, &space);
        let phi = random_map(&mut b.rng, &space);
        match mu.pushforward(&phi) {
            Ok(image) => b.residual(name, (image.mass() - mu.mass()).abs(), 1e-12),
            Err(e) => b.error(name, e),
        }
    }

    // disintegrating and remixing reproduces the measure
    for i in 0..5 {
        let name = format!("reconstruction-{i}");
        let n = b.rng.random_range(2..=6);
        let space = space_of(n);
        let mu = random_measure(&mut b.rng, &space);
        let phi = random_map(&mut b.rng, &space);
        let outcome = disintegrate(&mu, &phi)
            .and_then(|(marginal, kernel)| kernel.mixture(&marginal));
        match outcome {
            Ok(back) => {
                let worst = mu
                    .weights()
                    .iter()
                    .zip(back.weights())
                    .map(|(a, c)| (a - c).abs())
                    .fold(0.0f64, f64::max);
                b.residual(name, worst, 1e-12);
            }
            Err(e) => b.error(name, e),
        }
    }

    // integrating the conditional expectation recovers the integral
    for i in 0..4 {
        let name = format!("tower-{i}");
        let n = b.rng.random_range(2..=6);
        let space = space_of(n);
        let mu = random_measure(&mut b.rng, &space);
        let phi = random_map(&mut b.rng, &space);
        let f: Vec<f64> = (0..n).map(|_| b.rng.random_range(-3.0..3.0)).collect();
        let outcome = cond_expect(&mu, &phi, &f).and_then(|cond| {
            let pulled: Vec<f64> = cond
                .pullback(&phi)?
                .into_iter()
                .map(|v| v.unwrap_or(0.0))
                .collect();
            Ok((mu.integrate(&pulled)?, mu.integrate(&f)?))
        });
        match outcome {
            Ok((via_cond, direct)) => b.residual(name, (via_cond - direct).abs(), 1e-12),
            Err(e) => b.error(name, e),
        }
    }

    // entropy splits into marginal and fiber parts
    for i in 0..3 {
        let name = format!("decomposition-{i}");
        let n = b.rng.random_range(3..=6);
        let space = space_of(n);
        let p = random_probability(&mut b.rng, &space);
        let r = random_measure(&mut b.rng, &space);
        let phi = random_map(&mut b.rng, &space);
        match entropy_decompose(&p, &r, &phi) {
            Ok(d) => {
                let residual =
                    (d.marginal.value() + d.conditional.value() - d.total.value()).abs();
                b.residual(name, residual, 1e-10);
            }
            Err(e) => b.error(name, e),
        }
    }

    // the variational dual attains the entropy
    for i in 0..3 {
        let name = format!("dual-gap-{i}");
        let n = b.rng.random_range(2..=6);
        let space = space_of(n);
        let p = random_probability(&mut b.rng, &space);
        let r = random_probability(&mut b.rng, &space);
        match dual_maximize(&p, &r, 1000, 1e-9) {
            Ok(sol) => b.residual(name, sol.gap.abs(), 1e-9),
            Err(e) => b.error(name, e),
        }
    }

    // endpoint fitting hits both marginals
    for i in 0..2 {
        let name = format!("bridge-marginals-{i}");
        let x = space_of(3);
        let y = space_of(3);
        let weights: Vec<f64> = (0..9).map(|_| b.rng.random_range(0.05..1.0)).collect();
        let total: f64 = weights.iter().sum();
        let weights: Vec<f64> = weights.into_iter().map(|w| w / total).collect();
        let r01 = EndpointMeasure::new(x.clone(), y.clone(), weights).expect("valid weights");
        let mu0 = random_probability(&mut b.rng, &x);
        let mu1 = random_probability(&mut b.rng, &y);
        match sinkhorn(&r01, &mu0, &mu1, &SinkhornOptions::default()) {
            Ok(sol) => b.residual(
                name,
                sol.marginal_errors.0.max(sol.marginal_errors.1),
                1e-10,
            ),
            Err(e) => b.error(name, e),
        }
    }

    // the summable reweighting bounds any block sequence
    for i in 0..2 {
        let name = format!("gamma-bound-{i}");
        let space = space_of(4);
        let scale = if i == 0 { 1.0 } else { 1e9 };
        let blocks: Vec<FiniteMeasure> = (0..6)
            .map(|_| {
                let weights = (0..4)
                    .map(|_| b.rng.random_range(0.0..scale))
                    .collect();
                FiniteMeasure::new(space.clone(), weights).expect("nonnegative weights")
            })
            .collect();
        match BlockMeasure::from_blocks(blocks) {
            Ok(nu) => {
                let gamma = GammaWeights::for_blocks(&nu);
                let mass = gamma.bounded_mass(&nu);
                b.record(
                    name,
                    mass <= 1.0 + 1e-9,
                    format!("reweighted mass {mass:.6} (bound 1)"),
                );
            }
            Err(e) => b.error(name, e),
        }
    }

    // a doubling atom shared across blocks is caught by the probe
    {
        let name = "probe-divergent".to_string();
        let nu = BlockMeasure::new(
            move |n| {
                FiniteMeasure::new(space_of(1), vec![(2.0f64).powi(n as i32)])
                    .expect("positive weight")
            },
            DEFAULT_TRUNCATION_DEPTH,
        )
        .expect("positive depth");
        let outcome = nu.sigma_finite_probe(1e3, 32);
        b.record(
            name,
            !outcome.is_sigma_finite(),
            format!("probe outcome {outcome:?}"),
        );
    }

    // disjoint blocks always pass the probe
    {
        let name = "probe-disjoint".to_string();
        let nu = BlockMeasure::new(
            move |n| {
                FiniteMeasure::new(
                    FiniteSpace::new([format!("a{n}")]).expect("one label"),
                    vec![1e9],
                )
                .expect("positive weight")
            },
            DEFAULT_TRUNCATION_DEPTH,
        )
        .expect("positive depth");
        let outcome = nu.sigma_finite_probe(1e3, 32);
        b.record(
            name,
            outcome.is_sigma_finite(),
            format!("probe outcome {outcome:?}"),
        );
    }

    let failed = b.rows.iter().filter(|row| !row.pass).count();
    CheckResults {
        seed,
        total: b.rows.len(),
        failed,
        checks: b.rows,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn battery_passes_with_default_seed() {
        let results = run_battery(0);
        for row in &results.checks {
            assert!(row.pass, "{}: {}", row.name, row.detail);
        }
        assert_eq!(results.failed, 0);
        assert_eq!(results.total, 26);
    }

    #[test]
    fn battery_is_deterministic_in_the_seed() {
        let a = run_battery(7);
        let c = run_battery(7);
        for (x, y) in a.checks.iter().zip(&c.checks) {
            assert_eq!(x.name, y.name);
            assert_eq!(x.pass, y.pass);
            assert_eq!(x.detail, y.detail);
        }
    }
}
