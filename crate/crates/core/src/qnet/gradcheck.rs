//! Central finite-difference verification of [`NetworkParams::backward`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    init_params, HeadActivation, NetDims, NetworkParams, QNetError, N_ACTIONS, TENSOR_NAMES,
};

pub const DEFAULT_STEP: f64 = 1e-5;
pub const DEFAULT_TOLERANCE: f64 = 1e-4;
/// Gradient components smaller than this are compared absolutely.
pub const MAGNITUDE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_tensor: &'static str,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub n_params: usize,
}

/// `|a - n| / max(|a|, |n|, MAGNITUDE_FLOOR)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(MAGNITUDE_FLOOR)
}

/// Compares the analytic gradient of `⟨output_grad, Q(market, position)⟩`
/// with central differences of step `h` on every parameter.
///
/// `corrupt` perturbs the analytic gradient first and exists only as a
/// negative control for the checker itself.
pub fn check_gradients(
    params: &NetworkParams,
    market: &[f64],
    position: &[f64; 3],
    output_grad: &[f64; N_ACTIONS],
    h: f64,
    corrupt: bool,
) -> Result<GradCheckReport, QNetError> {
    let (_, cache) = params.forward_cached(market, position)?;
    let mut analytic = params.backward(&cache, output_grad);
    if corrupt {
        for t in analytic.tensors_mut() {
            for v in t.iter_mut() {
                *v = *v * 1.01 + 1e-3;
            }
        }
    }

    let objective = |p: &NetworkParams| -> Result<f64, QNetError> {
        let q = p.forward(market, position)?;
        Ok(q.0.iter().zip(output_grad).map(|(a, b)| a * b).sum())
    };

    let mut probe = params.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_tensor: TENSOR_NAMES[0],
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        n_params: params.num_params(),
    };
    for (k, name) in TENSOR_NAMES.iter().enumerate() {
        let len = params.tensors()[k].len();
        for i in 0..len {
            let orig = params.tensors()[k][i];
            probe.tensors_mut()[k][i] = orig + h;
            let plus = objective(&probe)?;
            probe.tensors_mut()[k][i] = orig - h;
            let minus = objective(&probe)?;
            probe.tensors_mut()[k][i] = orig;

            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic.tensors()[k][i];
            let err = relative_error(a, numeric);
            if err > report.max_rel_error {
                report = GradCheckReport {
                    max_rel_error: err,
                    worst_tensor: name,
                    worst_index: i,
                    analytic: a,
                    numeric,
                    ..report
                };
            }
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckCase {
    pub seed: u64,
    pub window: usize,
    pub head: HeadActivation,
}

/// Seeded cases: every seed against every window length, alternating the
/// head activation by seed.
pub fn suite_cases(seeds: &[u64], windows: &[usize]) -> Vec<GradCheckCase> {
    let mut cases = Vec::new();
    for &seed in seeds {
        for &window in windows {
            let head = if seed % 2 == 0 {
                HeadActivation::Linear
            } else {
                HeadActivation::Softmax
            };
            cases.push(GradCheckCase { seed, window, head });
        }
    }
    cases
}

/// Runs one case with parameters, inputs and output weights all drawn from
/// the case seed.
pub fn run_case(
    dims: NetDims,
    case: &GradCheckCase,
    h: f64,
    corrupt: bool,
) -> Result<GradCheckReport, QNetError> {
    let params = init_params(dims, case.head, case.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(case.seed ^ 0x9E37_79B9_7F4A_7C15);
    let market: Vec<f64> = (0..case.window * dims.features)
        .map(|_| rng.gen_range(0.1..=1.0))
        .collect();
    let position = [
        rng.gen_range(0.0..=1.0),
        rng.gen_range(0.0..=1.0),
        rng.gen_range(-1.0..=1.0),
    ];
    let output_grad = [
        rng.gen_range(-1.0..=1.0),
        rng.gen_range(-1.0..=1.0),
        rng.gen_range(-1.0..=1.0),
    ];
    check_gradients(&params, &market, &position, &output_grad, h, corrupt)
}

/// Runs all cases on scoped threads; results are returned in case order.
pub fn run_suite(
    dims: NetDims,
    cases: &[GradCheckCase],
    h: f64,
    corrupt: bool,
) -> Result<Vec<GradCheckReport>, QNetError> {
    std::thread::scope(|s| {
        let handles: Vec<_> = cases
            .iter()
            .map(|case| s.spawn(move || run_case(dims, case, h, corrupt)))
            .collect();
        handles
            .into_iter()
            .map(|handle| handle.join().expect("gradient check worker panicked"))
            .collect()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> NetDims {
        NetDims {
            features: 3,
            lstm1: 4,
            lstm2: 4,
            position: 3,
            merge1: 5,
            merge2: 4,
        }
    }

    #[test]
    fn small_network_passes() {
        for case in suite_cases(&[1, 2, 3, 4], &[1, 3, 8]) {
            let r = run_case(small(), &case, DEFAULT_STEP, false).unwrap();
            assert!(r.max_rel_error <= DEFAULT_TOLERANCE, "{case:?}: {r:?}");
        }
    }

    #[test]
    fn corrupted_gradient_fails() {
        let case = GradCheckCase {
            seed: 5,
            window: 3,
            head: HeadActivation::Linear,
        };
        let r = run_case(small(), &case, DEFAULT_STEP, true).unwrap();
        assert!(r.max_rel_error > DEFAULT_TOLERANCE);
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(2.0, 2.0), 0.0);
        assert!((relative_error(1.0, 1.1) - 0.1 / 1.1).abs() < 1e-15);
        assert!((relative_error(0.0, 1e-9) - 1e-3).abs() < 1e-15);
    }
}
