//! Acceptance suite: one PASS/FAIL line per criterion, exit status 1 on any
//! FAIL. Runs without the libtest harness so the lines always reach stdout.

mod common;

use std::f64::consts::LN_2;
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{four_node_example, random_graph, random_instance, random_stochastic, spec};
use return_entropy::gradient::{
    entropy_and_gradient, finite_difference_gradient, truncated_entropy_gradient,
};
use return_entropy::graphs::{build_graph, is_irreducible, random_feasible_chain, Edge, GraphKind};
use return_entropy::hitting::{hitting_series, oracle_first_hitting, return_time_distributions};
use return_entropy::intruder::{
    capture_curve, capture_probability, simulate_capture, IntruderParams,
};
use return_entropy::metrics::{
    closed_form_return_entropy, conditional_return_entropy, entropy_rate, kemeny_constant,
    kemeny_constant_spectral, max_entropy_upper_bound, return_entropy_estimate,
    truncated_return_entropy, truncation_error_bound, ChainMetrics, ClosedForm,
};
use return_entropy::optimize::{
    evaluate_all, kkt_residuals, optimize_chain, Objective, OptimizerConfig, Projector,
};
use return_entropy::{FeasibleSetSpec, StationaryDistribution, TransitionMatrix, WeightedDigraph};

const ETA_EVAL: f64 = 0.01;
const TABLE_STARTS: usize = 10;
const ESTIMATE_TOL: f64 = 1e-10;
/// Upper end of the small attack durations compared on SF.
const SF_SMALL_TAU: u32 = 30;

#[derive(Clone, Copy, PartialEq, Eq)]
enum Status {
    Pass,
    Fail,
    /// Outside the numeric band in the way the criterion's caveat clause allows.
    Caveat,
}

struct Outcome {
    status: Status,
    detail: String,
}

impl Outcome {
    fn check(ok: bool, detail: String) -> Self {
        Self {
            status: if ok { Status::Pass } else { Status::Fail },
            detail,
        }
    }
}

fn within_budget(elapsed: Duration, limit_s: u64) -> bool {
    elapsed <= Duration::from_secs(limit_s)
}

fn rel(x: f64, target: f64) -> f64 {
    (x - target).abs() / target.abs()
}

fn table_config(eta: f64) -> OptimizerConfig {
    OptimizerConfig {
        eta,
        starts: TABLE_STARTS,
        ..Default::default()
    }
}

struct Run {
    chain: TransitionMatrix,
    metrics: ChainMetrics,
}

fn run(objective: Objective, s: &FeasibleSetSpec) -> Run {
    let r = optimize_chain(objective, s, &table_config(0.1)).expect("optimization succeeds");
    let metrics = evaluate_all(&r.chain, s, ETA_EVAL).expect("metrics evaluate");
    Run {
        chain: r.chain,
        metrics,
    }
}

fn builtin(kind: GraphKind, eps: f64) -> FeasibleSetSpec {
    let (g, pi) = build_graph(kind).unwrap();
    FeasibleSetSpec::new(g, pi, eps).unwrap()
}

fn oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    let instances = 60;
    for t in 0..instances {
        let n = rng.gen_range(2..=5);
        let max_w = if t % 2 == 0 { 1 } else { 3 };
        let g = random_graph(&mut rng, n, max_w, 0.4);
        let p = random_stochastic(&mut rng, &g, 0.0);
        let horizon = rng.gen_range(4..=10);
        let series = hitting_series(&p, &g, horizon).unwrap();
        for i in 0..n {
            for j in 0..n {
                let oracle = oracle_first_hitting(&p, &g, i, j, horizon).unwrap();
                for k in 1..=horizon {
                    worst = worst.max((series.entry(k as i64, i, j) - oracle[k - 1]).abs());
                }
            }
        }
    }
    let elapsed = start.elapsed();
    Outcome::check(
        worst <= 1e-12 && within_budget(elapsed, 10),
        format!("{instances} instances, max |F - oracle| = {worst:.2e} (tol 1e-12), {elapsed:.2?}"),
    )
}

fn gradient_correctness() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    let instances = 60;
    for t in 0..instances {
        let n = rng.gen_range(2..=5);
        let max_w = if t % 3 == 0 { 2 } else { 1 };
        let g = random_graph(&mut rng, n, max_w, 0.4);
        // keep entries away from 0 and 1 so the difference stencil stays inside
        let p = random_stochastic(&mut rng, &g, 0.2);
        let pi = return_entropy::graphs::stationary_of(&p).unwrap();
        let eta = [0.3, 0.2, 0.1][t % 3];
        let fd = finite_difference_gradient(&p, &g, &pi, eta, 1e-6).unwrap();
        let forward = truncated_entropy_gradient(&p, &g, &pi, eta).unwrap();
        let (_, adjoint) = entropy_and_gradient(&p, &g, &pi, eta).unwrap();
        worst = worst
            .max(forward.max_abs_diff(&fd))
            .max(adjoint.max_abs_diff(&fd));
    }
    let elapsed = start.elapsed();
    Outcome::check(
        worst <= 1e-5 && within_budget(elapsed, 60),
        format!(
            "{instances} triples, max |grad - central FD| = {worst:.2e} (tol 1e-5), {elapsed:.2?}"
        ),
    )
}

fn closed_forms() -> Outcome {
    let mut ok = true;
    let mut notes = Vec::new();
    let mut other_maximizer = false;
    let closed = closed_form_return_entropy(ClosedForm::TwoNode { p11: 0.5, p22: 0.5 }).unwrap();
    let s2 = builtin(GraphKind::Complete { n: 2 }, 0.0);
    let half = TransitionMatrix::from_row_major(2, &[0.5, 0.5, 0.5, 0.5]).unwrap();
    let (j, _) = return_entropy_estimate(&half, &s2.graph, &s2.pi, ESTIMATE_TOL).unwrap();
    let err = (closed - 2.0 * LN_2).abs().max((j - 2.0 * LN_2).abs());
    ok &= err <= 1e-6;
    notes.push(format!("2-node p=1/2 err {err:.1e}"));
    for n in 2..=4 {
        let s = builtin(GraphKind::Complete { n }, 0.0);
        // the optimum is quartic-flat along circulant directions; a tight stop
        // is needed to get within 1e-2 of 1 pi^T
        let cfg = OptimizerConfig {
            eta: ETA_EVAL,
            tol: 1e-10,
            max_iters: 5000,
            ..Default::default()
        };
        let r = optimize_chain(Objective::ReturnEntropy, &s, &cfg).unwrap();
        let (j, _) = return_entropy_estimate(&r.chain, &s.graph, &s.pi, ESTIMATE_TOL).unwrap();
        let gap = max_entropy_upper_bound(&s.pi) - j;
        let dist = (r.chain.matrix() - TransitionMatrix::rank_one(&s.pi).matrix()).amax();
        ok &= gap.abs() <= 1e-3;
        if dist <= 1e-2 {
            notes.push(format!("complete:{n} gap {gap:.1e} dist {dist:.1e}"));
            continue;
        }
        // from four nodes on the bound is also attained by other chains whose
        // return times are still exactly geometric
        let geo = geometric_return_gap(&r.chain, &s.graph, &s.pi);
        if n >= 4 && geo <= 1e-4 {
            other_maximizer = true;
        } else {
            ok = false;
        }
        notes.push(format!(
            "complete:{n} gap {gap:.1e} dist {dist:.1e} (return-time pmf vs geometric {geo:.1e})"
        ));
    }
    let mut out = Outcome::check(ok, notes.join(", "));
    if ok && other_maximizer {
        out.status = Status::Caveat;
    }
    out
}

/// Largest deviation of any return-time pmf from `Geometric(pi_i)`.
fn geometric_return_gap(
    p: &TransitionMatrix,
    g: &WeightedDigraph,
    pi: &StationaryDistribution,
) -> f64 {
    let dists = return_time_distributions(p, g, 200).unwrap();
    let mut worst = 0.0f64;
    for (i, d) in dists.iter().enumerate() {
        for k in 1..=d.horizon() {
            let geo = pi[i] * (1.0 - pi[i]).powi(k as i32 - 1);
            worst = worst.max((d.prob(k) - geo).abs());
        }
    }
    worst
}

fn ring_table(ring: &[Run; 3], elapsed: Duration) -> Outcome {
    let [re, rate, kem] = ring;
    let j = re.metrics.j;
    let jt = re.metrics.j_trunc;
    let h = rate.metrics.h_rate;
    let k = kem.metrics.kemeny;
    let ok = (2.44..=2.52).contains(&j)
        && (2.44..=2.52).contains(&jt)
        && (h - 0.9883).abs() <= 1e-3
        && (5.86..=6.47).contains(&k)
        && within_budget(elapsed, 300);
    Outcome::check(
        ok,
        format!(
            "J {j:.4} / J_trunc {jt:.4} in [2.44, 2.52], H_rate {h:.5} vs 0.9883 +- 1e-3, \
             Kemeny {k:.4} in [5.86, 6.47], {elapsed:.2?}"
        ),
    )
}

fn grid_table(grid: &[Run; 2], elapsed: Duration) -> Outcome {
    let [re, rate] = grid;
    let j = re.metrics.j;
    let jt = re.metrics.j_trunc;
    let h = rate.metrics.h_rate;
    let ok = (3.58..=3.73).contains(&j)
        && (3.58..=3.73).contains(&jt)
        && (h - 1.4021).abs() <= 2e-3
        && within_budget(elapsed, 900);
    Outcome::check(
        ok,
        format!(
            "J {j:.4} / J_trunc {jt:.4} in [3.58, 3.73], H_rate {h:.5} vs 1.4021 +- 2e-3, {elapsed:.2?}"
        ),
    )
}

/// Unit-weight Kemeny constants agree with the eigenvalue formula.
fn kemeny_identity_holds(ring_chain: &TransitionMatrix) -> bool {
    let (g, pi) = build_graph(GraphKind::Ring { n: 8 }).unwrap();
    let mut ok = (kemeny_constant(ring_chain, &g, &pi).unwrap()
        - kemeny_constant_spectral(ring_chain).unwrap())
    .abs()
        <= 1e-8;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..10 {
        let (g, p, pi) = random_instance(&mut rng, 5, 1);
        let direct = kemeny_constant(&p, &g, &pi).unwrap();
        ok &= (direct - kemeny_constant_spectral(&p).unwrap()).abs() <= 1e-8 * direct;
    }
    ok
}

fn sf_table(
    re: &Run,
    kem: &Run,
    ring_kemeny_chain: &TransitionMatrix,
    elapsed: Duration,
) -> Outcome {
    let j = re.metrics.j;
    let h = re.metrics.h_rate;
    let k = kem.metrics.kemeny;
    let main_ok = rel(j, 5.0078) <= 0.03 && rel(h, 1.7810) <= 0.05 && within_budget(elapsed, 3600);
    let kemeny_ok = rel(k, 24.2824) <= 0.05;
    let identity = kemeny_identity_holds(ring_kemeny_chain);
    let detail = format!(
        "J {j:.4} ({:+.2}% of 5.0078, tol 3%), H_rate {h:.4} ({:+.2}% of 1.7810, tol 5%), \
         MinKemeny weighted Kemeny {k:.4} ({:+.2}% of 24.2824, tol 5%), {elapsed:.2?}",
        100.0 * (j - 5.0078) / 5.0078,
        100.0 * (h - 1.7810) / 1.7810,
        100.0 * (k - 24.2824) / 24.2824,
    );
    let status = match (main_ok, kemeny_ok) {
        (true, true) => Status::Pass,
        (true, false) if identity => Status::Caveat,
        _ => Status::Fail,
    };
    let detail = if status == Status::Caveat {
        format!(
            "{detail}; Kemeny outside the band while the unit-weight Kemeny identity holds \
             (lower value = different local minimum of a nonconvex problem)"
        )
    } else {
        detail
    };
    Outcome { status, detail }
}

fn cycle(n: usize) -> (WeightedDigraph, TransitionMatrix, StationaryDistribution) {
    let g = WeightedDigraph::new(
        n,
        (0..n)
            .map(|u| Edge {
                u,
                v: (u + 1) % n,
                w: 1,
            })
            .collect(),
    )
    .unwrap();
    let p =
        TransitionMatrix::permutation(&(0..n).map(|u| (u + 1) % n).collect::<Vec<_>>()).unwrap();
    (g, p, StationaryDistribution::uniform(n).unwrap())
}

/// Random feasible chains: half on random digraphs (the chain's own
/// stationary distribution), half projected on the builtin graphs.
fn random_chains(
    count: usize,
    seed: u64,
    max_weight: u32,
) -> Vec<(WeightedDigraph, TransitionMatrix, StationaryDistribution)> {
    let kinds = [
        GraphKind::Ring { n: 4 },
        GraphKind::Ring { n: 8 },
        GraphKind::Grid { rows: 2, cols: 3 },
        GraphKind::Grid { rows: 3, cols: 3 },
        GraphKind::Complete { n: 3 },
        GraphKind::Complete { n: 5 },
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|t| {
            if t % 2 == 0 {
                let n = rng.gen_range(2..=6);
                random_instance(&mut rng, n, max_weight)
            } else {
                let s = builtin(kinds[(t / 2) % kinds.len()], 0.01);
                let p = random_feasible_chain(&s, rng.gen()).unwrap();
                (s.graph, p, s.pi)
            }
        })
        .collect()
}

fn entropy_rate_bounds() -> Outcome {
    let mut ok = true;
    let mut slack = f64::INFINITY;
    let chains = random_chains(200, 7, 1);
    for (g, p, pi) in &chains {
        let (j, bound) = return_entropy_estimate(p, g, pi, ESTIMATE_TOL).unwrap();
        let h = entropy_rate(p, pi).unwrap();
        let n = g.node_count() as f64;
        ok &= h <= j + bound + 1e-9 && j <= n * h + 1e-9;
        slack = slack.min((j + bound - h).min(n * h - j));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut eq_err = 0.0f64;
    let s2 = builtin(GraphKind::Complete { n: 2 }, 0.0);
    for _ in 0..5 {
        let a = rng.gen_range(0.05..0.95);
        let b = rng.gen_range(0.05..0.95);
        let p = TransitionMatrix::from_row_major(2, &[a, 1.0 - a, 1.0 - b, b]).unwrap();
        let pi = return_entropy::graphs::stationary_of(&p).unwrap();
        let (j, _) = return_entropy_estimate(&p, &s2.graph, &pi, ESTIMATE_TOL).unwrap();
        eq_err = eq_err.max((j - 2.0 * entropy_rate(&p, &pi).unwrap()).abs());
        let (g, p, pi) = four_node_example(a, b);
        let (j, _) = return_entropy_estimate(&p, &g, &pi, ESTIMATE_TOL).unwrap();
        eq_err = eq_err.max((j - 4.0 * entropy_rate(&p, &pi).unwrap()).abs());
    }
    ok &= eq_err <= 1e-6;
    let mut perm_exact = true;
    for n in 1..=6 {
        let (g, p, pi) = cycle(n);
        let (j, _) = return_entropy_estimate(&p, &g, &pi, ESTIMATE_TOL).unwrap();
        perm_exact &= j == 0.0 && entropy_rate(&p, &pi).unwrap() == 0.0;
    }
    ok &= perm_exact;
    Outcome::check(
        ok,
        format!(
            "{} chains, min slack {slack:.2e}; equality cases max |J - n H_rate| = {eq_err:.1e} \
             (tol 1e-6); permutations exactly zero: {perm_exact}",
            chains.len()
        ),
    )
}

fn sandwich() -> Outcome {
    let mut ok = true;
    let mut checks = 0;
    let mut worst_ratio = 0.0f64;
    let chains = random_chains(200, 9, 3);
    for (g, p, pi) in &chains {
        let (j, est_bound) = return_entropy_estimate(p, g, pi, ESTIMATE_TOL).unwrap();
        for eta in [0.2, 0.1, 0.05] {
            let jt = truncated_return_entropy(p, g, pi, eta).unwrap();
            let jc = conditional_return_entropy(p, g, pi, eta).unwrap();
            if jt > 0.0 {
                ok &= jt + (1.0 - eta).ln() < jc && jc < jt / (1.0 - eta);
            }
            ok &= jt <= j + est_bound + 1e-12;
            let n_eta =
                return_entropy::metrics::duration_for_accuracy(eta, pi.min(), g.w_max()).unwrap();
            let tail = truncation_error_bound(p, g, pi, n_eta).unwrap();
            let gap = (j - jt).abs();
            ok &= gap <= tail + est_bound + 1e-12;
            if tail + est_bound > 0.0 {
                worst_ratio = worst_ratio.max(gap / (tail + est_bound));
            }
            checks += 1;
        }
    }
    Outcome::check(
        ok,
        format!(
            "{} chains x 3 eta = {checks} checks; worst |J - J_trunc| / certified bound = {worst_ratio:.2e}",
            chains.len()
        ),
    )
}

fn curve(run: &Run, s: &FeasibleSetSpec, taus: &[u32]) -> Vec<f64> {
    capture_curve(&run.chain, &s.graph, &s.pi, 0.1, taus)
        .unwrap()
        .into_iter()
        .map(|(_, c)| c)
        .collect()
}

fn fmt_curve(c: &[f64]) -> String {
    c.iter()
        .map(|x| format!("{x:.3}"))
        .collect::<Vec<_>>()
        .join(" ")
}

fn intruder_curves(
    grid: (&Run, &Run),
    sf: (&Run, &Run),
    grid_spec: &FeasibleSetSpec,
    sf_spec: &FeasibleSetSpec,
) -> Outcome {
    let grid_taus: Vec<u32> = (1..=6).collect();
    let g_re = curve(grid.0, grid_spec, &grid_taus);
    let g_mk = curve(grid.1, grid_spec, &grid_taus);
    let grid_ok = g_re.iter().zip(&g_mk).all(|(a, b)| a >= b);
    // SF travel times are long: both curves are zero for the first few tau
    let sf_taus: Vec<u32> = (1..=60).collect();
    let s_re = curve(sf.0, sf_spec, &sf_taus);
    let s_mk = curve(sf.1, sf_spec, &sf_taus);
    let small = SF_SMALL_TAU as usize;
    let sf_ok = s_re[..small]
        .iter()
        .zip(&s_mk[..small])
        .all(|(a, b)| a >= b)
        && s_re[..small].iter().zip(&s_mk[..small]).any(|(a, b)| a > b);
    let crossover = sf_taus
        .iter()
        .zip(s_re.iter().zip(&s_mk))
        .find(|(_, (a, b))| b > a)
        .map_or("none up to 60".to_string(), |(t, _)| t.to_string());

    let mut mc_ok = true;
    let mut mc = Vec::new();
    for (label, run, s, tau) in [
        ("grid RE", grid.0, grid_spec, 3),
        ("grid MK", grid.1, grid_spec, 3),
        ("SF RE", sf.0, sf_spec, 5),
    ] {
        let params = IntruderParams::new(tau, 0.1).unwrap();
        let exact = capture_probability(&run.chain, &s.graph, &s.pi, params)
            .unwrap()
            .total;
        let sim = simulate_capture(&run.chain, &s.graph, &s.pi, params, 100_000, 11).unwrap();
        mc_ok &= sim.contains(exact);
        mc.push(format!(
            "{label} tau={tau} {exact:.4} in [{:.4}, {:.4}]",
            sim.ci_low, sim.ci_high
        ));
    }
    Outcome::check(
        grid_ok && sf_ok && mc_ok,
        format!(
            "grid RE [{}] >= MK [{}]; SF RE >= MK for tau <= {SF_SMALL_TAU} \
             (tau 10/20/30: RE [{}] MK [{}]), first tau with MK > RE: {crossover}; MC: {}",
            fmt_curve(&g_re),
            fmt_curve(&g_mk),
            fmt_curve(&[s_re[9], s_re[19], s_re[29]]),
            fmt_curve(&[s_mk[9], s_mk[19], s_mk[29]]),
            mc.join("; ")
        ),
    )
}

fn projection_correctness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut kkt = 0.0f64;
    let mut idem = 0.0f64;
    let instances = 30;
    for t in 0..instances {
        let n = rng.gen_range(2..=4);
        let (g, _, pi) = random_instance(&mut rng, n, 1);
        let s = spec(&g, &pi, if t % 2 == 0 { 0.0 } else { 0.02 });
        let proj = Projector::new(&s).unwrap();
        let q = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-0.5..1.5));
        let p = proj.project(&q).unwrap();
        kkt = kkt.max(kkt_residuals(&q, &p, &s, 1e-9).unwrap().max());
        let again = proj.project(p.matrix()).unwrap();
        idem = idem.max((again.matrix() - p.matrix()).amax());
    }
    Outcome::check(
        kkt <= 1e-7 && idem <= 1e-9,
        format!("{instances} instances, max KKT residual {kkt:.2e} (tol 1e-7), idempotence {idem:.2e} (tol 1e-9)"),
    )
}

fn report(results: &mut Vec<(usize, Outcome)>, id: usize, outcome: Outcome) {
    let tag = match outcome.status {
        Status::Pass => "PASS",
        Status::Fail => "FAIL",
        Status::Caveat => "CAVEAT",
    };
    println!("criterion {id:>2} {tag}: {}", outcome.detail);
    results.push((id, outcome));
}

fn main() {
    // honour libtest-style name filters so `cargo test <name>` can skip the suite
    let filters: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    if !filters.is_empty() && !filters.iter().any(|f| "acceptance".contains(f.as_str())) {
        return;
    }
    let mut results = Vec::new();
    report(&mut results, 1, oracle_equivalence());
    report(&mut results, 2, gradient_correctness());
    report(&mut results, 3, closed_forms());

    let start = Instant::now();
    let ring_spec = builtin(GraphKind::Ring { n: 8 }, 0.0);
    let ring = [
        run(Objective::ReturnEntropy, &ring_spec),
        run(Objective::EntropyRate, &ring_spec),
        run(Objective::MinKemeny, &ring_spec),
    ];
    report(&mut results, 4, ring_table(&ring, start.elapsed()));

    let start = Instant::now();
    let grid_spec = builtin(GraphKind::Grid { rows: 4, cols: 4 }, 0.0);
    let grid = [
        run(Objective::ReturnEntropy, &grid_spec),
        run(Objective::EntropyRate, &grid_spec),
    ];
    report(&mut results, 5, grid_table(&grid, start.elapsed()));

    let start = Instant::now();
    let sf_spec = builtin(GraphKind::SfCrimeMap, 0.0);
    let sf_re = run(
        Objective::ReturnEntropy,
        &builtin(GraphKind::SfCrimeMap, 0.01),
    );
    let sf_mk = run(Objective::MinKemeny, &sf_spec);
    report(
        &mut results,
        6,
        sf_table(&sf_re, &sf_mk, &ring[2].chain, start.elapsed()),
    );

    report(&mut results, 7, entropy_rate_bounds());
    report(&mut results, 8, sandwich());

    let grid_mk = run(Objective::MinKemeny, &grid_spec);
    for (label, chain) in [("grid RE", &grid[0].chain), ("SF RE", &sf_re.chain)] {
        assert!(is_irreducible(chain, 0.0), "{label} chain is reducible");
    }
    report(
        &mut results,
        9,
        intruder_curves((&grid[0], &grid_mk), (&sf_re, &sf_mk), &grid_spec, &sf_spec),
    );
    report(&mut results, 10, projection_correctness());

    let failed: Vec<usize> = results
        .iter()
        .filter(|(_, o)| o.status == Status::Fail)
        .map(|(id, _)| *id)
        .collect();
    let caveats = results
        .iter()
        .filter(|(_, o)| o.status == Status::Caveat)
        .count();
    println!(
        "acceptance: {} passed, {caveats} caveat, {} failed",
        results.len() - failed.len() - caveats,
        failed.len()
    );
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
