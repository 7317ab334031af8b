//! Randomized invariants: structural laws the library promises for every
//! input, exercised with proptest. Tolerances are pinned next to each
//! property; exact (`==`) claims use dyadic weights so every intermediate
//! sum is representable.

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use pathmeasure::block::{BlockMeasure, GammaWeights};
use pathmeasure::conditioning::cond_expect;
use pathmeasure::conditioning::cond_expect_block;
use pathmeasure::entropy::{dual_value, rel_entropy};
use pathmeasure::measure::{FiniteMeasure, FiniteSpace, MeasurableMap};
use pathmeasure::pathspace::{check_markov, markov_factorization, MarkovSpec, PathMeasure};
use pathmeasure::MeasureError;

fn space_of(n: usize) -> FiniteSpace {
    FiniteSpace::new((0..n).map(|i| format!("s{i}"))).unwrap()
}

/// A measure, a map out of its space, and a test function on its space.
fn instance() -> impl Strategy<Value = (FiniteMeasure, MeasurableMap, Vec<f64>)> {
    (2usize..=10).prop_flat_map(|n| {
        (1usize..=n).prop_flat_map(move |m| {
            (
                prop::collection::vec((0.0f64..3.0, prop::bool::weighted(0.25)), n),
                prop::collection::vec(0usize..m, n),
                prop::collection::vec(-4.0f64..4.0, n),
            )
                .prop_map(move |(w, assign, f)| {
                    let weights = w
                        .into_iter()
                        .map(|(v, zero)| if zero { 0.0 } else { v })
                        .collect();
                    let space = space_of(n);
                    let target =
                        FiniteSpace::new((0..m).map(|j| format!("z{j}"))).unwrap();
                    let measure = FiniteMeasure::new(space.clone(), weights).unwrap();
                    let map = MeasurableMap::new(space, target, assign).unwrap();
                    (measure, map, f)
                })
        })
    })
}

fn assert_least_squares_projection(r: &FiniteMeasure, phi: &MeasurableMap, f: &[f64]) {
    const TOL: f64 = 1e-10;
    let m = phi.target().len();
    let support = r.support();
    // columns only for charged cells: a zero column would make the system
    // rank deficient (nalgebra's SVD solve mishandles exact zero singular
    // values), and the projection is unconstrained on uncharged cells
    // anyway
    let charged: Vec<usize> = (0..m)
        .filter(|&z| support.iter().any(|&i| phi.apply(i) == z))
        .collect();
    let col_of = |z: usize| charged.iter().position(|&c| c == z).unwrap();
    let mut a = DMatrix::zeros(support.len(), charged.len());
    let mut b = DVector::zeros(support.len());
    for (row, &i) in support.iter().enumerate() {
        let s = r.weight(i).sqrt();
        a[(row, col_of(phi.apply(i)))] = s;
        b[row] = s * f[i];
    }
    let projected = a.svd(true, true).solve(&b, 1e-13).unwrap();
    let cond = cond_expect(r, phi, f).unwrap();
    for z in 0..m {
        if let Some(v) = cond.value(z) {
            let p = projected[col_of(z)];
            assert!((v - p).abs() <= TOL, "cell {z}: {v} vs {p}");
        }
    }
}

/// Pinned configuration that once tripped a rank-deficient oracle: two
/// cells of the map receive no mass at all.
#[test]
fn least_squares_projection_with_uncharged_cells() {
    let space = space_of(9);
    let target = FiniteSpace::new((0..5).map(|j| format!("z{j}"))).unwrap();
    let r = FiniteMeasure::new(
        space.clone(),
        vec![
            0.2527377258562243,
            2.3500292284382156,
            1.1653873261572674,
            2.4432138829498626,
            0.0,
            0.0,
            0.6974843119063983,
            0.0,
            0.0,
        ],
    )
    .unwrap();
    let phi = MeasurableMap::new(space, target, vec![2, 4, 1, 4, 0, 0, 1, 0, 0]).unwrap();
    let mut f = vec![0.0; 9];
    f[6] = 1.6926186720643663;
    assert_least_squares_projection(&r, &phi, &f);
}

fn markov_instance() -> impl Strategy<Value = MarkovSpec> {
    (2usize..=4, 1usize..=3).prop_flat_map(|(n, steps)| {
        (
            prop::collection::vec(0.05f64..2.0, n),
            prop::collection::vec(prop::collection::vec(0.05f64..1.0, n * n), steps),
        )
            .prop_map(move |(init, kernels)| {
                let initial = FiniteMeasure::new(space_of(n), init)
                    .unwrap()
                    .normalized()
                    .unwrap();
                let kernels = kernels
                    .into_iter()
                    .map(|flat| {
                        let mut k = flat;
                        for x in 0..n {
                            let row = &mut k[x * n..(x + 1) * n];
                            let total: f64 = row.iter().sum();
                            row.iter_mut().for_each(|v| *v /= total);
                        }
                        k
                    })
                    .collect();
                MarkovSpec::new(initial, kernels).unwrap()
            })
    })
}

proptest! {
    // summation is pinned to label order, so dyadic inputs push forward
    // with no rounding at all
    #[test]
    fn pushforward_preserves_dyadic_mass_exactly(
        (n, ks, assign) in (2usize..=12).prop_flat_map(|n| {
            (
                Just(n),
                prop::collection::vec(0u32..512, n),
                prop::collection::vec(0usize..4, n),
            )
        })
    ) {
        let space = space_of(n);
        let target = FiniteSpace::new(["a", "b", "c", "d"]).unwrap();
        let weights: Vec<f64> = ks.iter().map(|&k| k as f64 / 64.0).collect();
        let mu = FiniteMeasure::new(space.clone(), weights).unwrap();
        let phi = MeasurableMap::new(space, target, assign).unwrap();
        let image = mu.pushforward(&phi).unwrap();
        prop_assert_eq!(image.mass(), mu.mass());
    }

    // dQ = theta dR means integrals against Q are integrals of theta
    // times the integrand against R
    #[test]
    fn densities_reproduce_integrals(
        (r, _, f) in instance(),
        theta_seed in prop::collection::vec(0.0f64..4.0, 10),
    ) {
        const TOL: f64 = 1e-12;
        let n = r.space().len();
        let theta: Vec<f64> = (0..n).map(|i| theta_seed[i % 10]).collect();
        let q = r.mul_density(&theta).unwrap();
        let weighted: Vec<f64> = (0..n).map(|i| f[i] * theta[i]).collect();
        let lhs = q.integrate(&f).unwrap();
        let rhs = r.integrate(&weighted).unwrap();
        prop_assert!((lhs - rhs).abs() <= TOL, "{lhs} vs {rhs}");
    }

    // splitting off the singular part is exact, exhaustive, and stable
    // under repetition
    #[test]
    fn lebesgue_decomposition_is_exact_and_idempotent(
        (q, _, _) in instance(),
        r_weights in prop::collection::vec((0.0f64..3.0, prop::bool::weighted(0.4)), 10),
    ) {
        let n = q.space().len();
        let rw: Vec<f64> = (0..n)
            .map(|i| {
                let (v, zero) = r_weights[i % 10];
                if zero { 0.0 } else { v }
            })
            .collect();
        let r = FiniteMeasure::new(q.space().clone(), rw).unwrap();
        let (abs, sing) = q.lebesgue_decompose(&r).unwrap();
        for i in 0..n {
            prop_assert_eq!(abs.weight(i) + sing.weight(i), q.weight(i));
            if abs.weight(i) > 0.0 {
                prop_assert!(r.weight(i) > 0.0, "absolute part escaped the reference");
            }
            if sing.weight(i) > 0.0 {
                prop_assert!(r.weight(i) == 0.0, "singular part touches the reference");
            }
        }
        prop_assert!(abs.density_wrt(&r).is_ok());
        let again = abs.add(&sing).unwrap().lebesgue_decompose(&r).unwrap();
        prop_assert_eq!(again.0.weights(), abs.weights());
        prop_assert_eq!(again.1.weights(), sing.weights());
        let (abs2, sing2) = abs.lebesgue_decompose(&r).unwrap();
        prop_assert_eq!(abs2.weights(), abs.weights());
        prop_assert_eq!(sing2.mass(), 0.0);
    }

    // a density against r exists exactly when no charged atom escapes
    // the support of r
    #[test]
    fn density_exists_iff_support_is_included(
        (q, _, _) in instance(),
        r_weights in prop::collection::vec((0.0f64..3.0, prop::bool::weighted(0.4)), 10),
    ) {
        let n = q.space().len();
        let rw: Vec<f64> = (0..n)
            .map(|i| {
                let (v, zero) = r_weights[i % 10];
                if zero { 0.0 } else { v }
            })
            .collect();
        let r = FiniteMeasure::new(q.space().clone(), rw).unwrap();
        let included = (0..n).all(|i| q.weight(i) == 0.0 || r.weight(i) > 0.0);
        prop_assert_eq!(q.density_wrt(&r).is_ok(), included);
    }

    // the block reweighting always lands in the finite-mass regime and
    // never kills an atom
    #[test]
    fn gamma_reweighting_is_summable_and_positive(
        blocks in prop::collection::vec(
            (prop::collection::vec(0.0f64..2.0, 5), 0i32..8),
            1..=6,
        )
    ) {
        let space = space_of(5);
        let blocks: Vec<FiniteMeasure> = blocks
            .into_iter()
            .map(|(w, scale_pow)| {
                let s = 3f64.powi(scale_pow);
                FiniteMeasure::new(space.clone(), w.into_iter().map(|v| v * s).collect())
                    .unwrap()
            })
            .collect();
        let nu = BlockMeasure::from_blocks(blocks).unwrap();
        let gamma = GammaWeights::for_blocks(&nu);
        prop_assert!(gamma.bounded_mass(&nu) <= 1.0 + 1e-9);
        for n in 0..gamma.len() {
            prop_assert!(gamma.factor(n) > 0.0);
        }
    }

    // conditioning a single-block measure routes through the reweighting
    // and must agree with the direct finite computation
    #[test]
    fn single_block_routing_matches_finite_conditioning(
        (r, phi, f) in instance(),
    ) {
        const TOL: f64 = 1e-12;
        prop_assume!(r.mass() > 0.0);
        let nu = BlockMeasure::from_blocks(vec![r.clone()]).unwrap();
        let space = r.space().clone();
        let phi_label = {
            let space = space.clone();
            let phi = phi.clone();
            move |label: &str| {
                let idx = space.index_of(label).unwrap();
                phi.target().label(phi.apply(idx)).to_string()
            }
        };
        let f_label = {
            let space = space.clone();
            let f = f.clone();
            move |label: &str| f[space.index_of(label).unwrap()]
        };
        let routed = cond_expect_block(&nu, phi_label, f_label, 1e12).unwrap();
        let direct = cond_expect(&r, &phi, &f).unwrap();
        for (z, label) in routed.space().labels().iter().enumerate() {
            let a = routed.value(z);
            let c = direct.value_of(label).unwrap();
            match (a, c) {
                (Some(a), Some(c)) => prop_assert!((a - c).abs() <= TOL, "{a} vs {c}"),
                (None, None) => {}
                other => prop_assert!(false, "definedness split: {other:?}"),
            }
        }
    }

    // E(f | phi) is the weighted least-squares projection of f onto
    // functions of phi; checked against an SVD solve of the design system
    #[test]
    fn conditioning_is_the_weighted_least_squares_projection(
        (r, phi, f) in instance(),
    ) {
        prop_assume!(r.mass() > 0.0);
        assert_least_squares_projection(&r, &phi, &f);
    }

    // integrating the conditioned function against the image measure
    // reproduces the plain integral, and conditioning contracts L1
    #[test]
    fn conditioning_satisfies_tower_and_contraction(
        (r, phi, f) in instance(),
    ) {
        const TOL: f64 = 1e-10;
        let cond = cond_expect(&r, &phi, &f).unwrap();
        let image = r.pushforward(&phi).unwrap();
        let mut tower = 0.0;
        let mut l1 = 0.0;
        for z in 0..phi.target().len() {
            let w = image.weight(z);
            if w == 0.0 {
                continue;
            }
            let v = cond.value(z).expect("charged cells carry a value");
            tower += w * v;
            l1 += w * v.abs();
        }
        let direct = r.integrate(&f).unwrap();
        prop_assert!((tower - direct).abs() <= TOL, "{tower} vs {direct}");
        let abs_f: Vec<f64> = f.iter().map(|v| v.abs()).collect();
        prop_assert!(l1 <= r.integrate(&abs_f).unwrap() + 1e-12);
    }

    // pointwise laws on the support: positivity, unit preservation,
    // linearity
    #[test]
    fn conditioning_is_positive_unital_and_linear(
        (r, phi, f) in instance(),
        g_seed in prop::collection::vec(-4.0f64..4.0, 10),
        (ca, cb) in (-3.0f64..3.0, -3.0f64..3.0),
    ) {
        const TOL: f64 = 1e-10;
        let n = r.space().len();
        let g: Vec<f64> = (0..n).map(|i| g_seed[i % 10]).collect();

        let nonneg: Vec<f64> = f.iter().map(|v| v.abs()).collect();
        let pos = cond_expect(&r, &phi, &nonneg).unwrap();
        let ones = vec![1.0; n];
        let unit = cond_expect(&r, &phi, &ones).unwrap();
        let ef = cond_expect(&r, &phi, &f).unwrap();
        let eg = cond_expect(&r, &phi, &g).unwrap();
        let combo: Vec<f64> = (0..n).map(|i| ca * f[i] + cb * g[i]).collect();
        let ecombo = cond_expect(&r, &phi, &combo).unwrap();

        for z in 0..phi.target().len() {
            if let Some(v) = pos.value(z) {
                prop_assert!(v >= 0.0);
            }
            if let Some(v) = unit.value(z) {
                prop_assert!((v - 1.0).abs() <= 1e-12);
            }
            if let (Some(a), Some(b), Some(c)) = (ef.value(z), eg.value(z), ecombo.value(z)) {
                prop_assert!((ca * a + cb * b - c).abs() <= TOL);
            }
        }
    }

    // values off the support never influence the conditional expectation
    #[test]
    fn conditioning_ignores_null_sets(
        (r, phi, f) in instance(),
        junk in prop::collection::vec(-100.0f64..100.0, 10),
    ) {
        let n = r.space().len();
        let mut altered = f.clone();
        for i in 0..n {
            if r.weight(i) == 0.0 {
                altered[i] = junk[i % 10];
            }
        }
        let base = cond_expect(&r, &phi, &f).unwrap();
        let modified = cond_expect(&r, &phi, &altered).unwrap();
        for z in 0..phi.target().len() {
            prop_assert_eq!(base.value(z), modified.value(z));
        }
    }

    // chain construction: the measure passes the Markov check at every
    // time and its time marginals are the Chapman-Kolmogorov products
    #[test]
    fn chains_are_markov_with_product_marginals(spec in markov_instance()) {
        const TOL: f64 = 1e-12;
        let pm = PathMeasure::from_markov(&spec).unwrap();
        let report = check_markov(&pm);
        prop_assert!(report.is_markov, "max deviation {}", report.max_deviation);

        let n = pm.states().len();
        let mut v: Vec<f64> = spec.initial().weights().to_vec();
        for t in 0..=spec.steps() {
            let marginal = pm.time_marginal(t).unwrap();
            prop_assert!((marginal.mass() - pm.measure().mass()).abs() <= TOL);
            for x in 0..n {
                prop_assert!(
                    (marginal.weight(x) - v[x]).abs() <= TOL,
                    "time {t}, state {x}: {} vs {}",
                    marginal.weight(x),
                    v[x]
                );
            }
            if t < spec.steps() {
                let k = spec.kernel(t);
                let mut next = vec![0.0; n];
                for x in 0..n {
                    for y in 0..n {
                        next[y] += v[x] * k[x * n + y];
                    }
                }
                v = next;
            }
        }
    }

    // strictly positive past/future observables keep strictly positive,
    // finite conditional factors at every charged state
    #[test]
    fn positive_factors_stay_positive_and_finite(
        spec in markov_instance(),
        a_seed in prop::collection::vec(0.1f64..4.0, 64),
        b_seed in prop::collection::vec(0.1f64..4.0, 64),
        t_pick in 0usize..=3,
    ) {
        let pm = PathMeasure::from_markov(&spec).unwrap();
        let steps = spec.steps();
        let t = t_pick.min(steps);
        let n = pm.states().len();
        let alpha = {
            let a_seed = a_seed.clone();
            move |d: &[usize]| {
                let key = d[..=t].iter().fold(0usize, |acc, &x| acc * n + x);
                a_seed[key % 64]
            }
        };
        let beta = {
            let b_seed = b_seed.clone();
            move |d: &[usize]| {
                let key = d[t..].iter().fold(0usize, |acc, &x| acc * n + x);
                b_seed[key % 64]
            }
        };
        let report = markov_factorization(&pm, alpha, beta, t).unwrap();
        prop_assert!(!report.rows.is_empty());
        for row in &report.rows {
            prop_assert!(row.e_alpha > 0.0 && row.e_alpha.is_finite());
            prop_assert!(row.e_beta > 0.0 && row.e_beta.is_finite());
        }
    }

    // a "past" observable that actually reads a future coordinate is
    // rejected, never silently accepted
    #[test]
    fn future_dependence_is_rejected(spec in markov_instance(), t_pick in 0usize..=2) {
        let pm = PathMeasure::from_markov(&spec).unwrap();
        let steps = spec.steps();
        prop_assume!(steps >= 1);
        let t = t_pick.min(steps - 1);
        let leaky = move |d: &[usize]| d[t + 1] as f64 + 1.0;
        let err = markov_factorization(&pm, leaky, |_| 1.0, t).unwrap_err();
        prop_assert!(
            matches!(err, MeasureError::MeasurabilityViolation { .. }),
            "got {err:?}"
        );
    }

    // relative entropy is jointly convex in the pair
    #[test]
    fn relative_entropy_is_jointly_convex(
        n in 2usize..=8,
        seeds in prop::collection::vec(0.05f64..3.0, 4 * 8),
        lambda in 0.0f64..=1.0,
    ) {
        const TOL: f64 = 1e-12;
        let chunk = |k: usize| {
            FiniteMeasure::new(space_of(n), seeds[k * 8..k * 8 + n].to_vec())
                .unwrap()
                .normalized()
                .unwrap()
        };
        let (p1, p2, r1, r2) = (chunk(0), chunk(1), chunk(2), chunk(3));
        let p = p1.scale(lambda).unwrap().add(&p2.scale(1.0 - lambda).unwrap()).unwrap();
        let r = r1.scale(lambda).unwrap().add(&r2.scale(1.0 - lambda).unwrap()).unwrap();
        let mixed = rel_entropy(&p, &r).unwrap().value();
        let h1 = rel_entropy(&p1, &r1).unwrap().value();
        let h2 = rel_entropy(&p2, &r2).unwrap().value();
        prop_assert!(mixed <= lambda * h1 + (1.0 - lambda) * h2 + TOL);
    }

    // every admissible potential gives a lower bound on the entropy
    #[test]
    fn dual_values_never_exceed_the_entropy(
        n in 2usize..=8,
        seeds in prop::collection::vec(0.05f64..3.0, 2 * 8),
        u_seed in prop::collection::vec(-6.0f64..6.0, 8),
    ) {
        const TOL: f64 = 1e-12;
        let chunk = |k: usize| {
            FiniteMeasure::new(space_of(n), seeds[k * 8..k * 8 + n].to_vec())
                .unwrap()
                .normalized()
                .unwrap()
        };
        let (p, r) = (chunk(0), chunk(1));
        let h = rel_entropy(&p, &r).unwrap().value();
        let value = dual_value(&p, &r, &u_seed[..n]).unwrap();
        prop_assert!(value <= h + TOL, "{value} beats {h}");
    }

    // with dyadic weights the marginal masses equal the path mass with
    // no rounding at any time
    #[test]
    fn path_marginal_masses_are_exact_for_dyadic_weights(
        (n, steps, ks) in (2usize..=3, 1usize..=3).prop_flat_map(|(n, steps)| {
            let count = n.pow(steps as u32 + 1);
            (Just(n), Just(steps), prop::collection::vec(0u32..128, count))
        })
    ) {
        let weights: Vec<f64> = ks.iter().map(|&k| k as f64 / 32.0).collect();
        let pm = PathMeasure::new(
            space_of(n),
            pathmeasure::pathspace::TimeGrid::new(steps).unwrap(),
            weights,
        )
        .unwrap();
        for t in 0..=steps {
            prop_assert_eq!(pm.time_marginal(t).unwrap().mass(), pm.measure().mass());
        }
    }
}
