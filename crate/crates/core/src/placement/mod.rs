//! Sensor placement: the worst-case central metric of a placement and
//! greedy, exhaustive and random searches over it.

use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Instant;

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::linalg::{select_rows, smallest_left_singular};
use crate::model::{BusId, PartitionedSystem, Placement, SystemMatrix};
use crate::phasor::Complex64;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Solver {
    Greedy,
    Exhaustive,
    Random,
}

impl std::str::FromStr for Solver {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "greedy" => Ok(Solver::Greedy),
            "exhaustive" => Ok(Solver::Exhaustive),
            "random" => Ok(Solver::Random),
            _ => Err(format!("unknown solver {s:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlacementResult {
    pub placement: Placement,
    pub objective: f64,
    pub solver: Solver,
    /// Wall-clock seconds.
    pub elapsed: f64,
    /// Objective evaluations performed.
    pub evaluations: u64,
}

/// Default ceiling on exhaustive enumeration.
pub const DEFAULT_BUDGET: u128 = 2_000_000;

/// Relative tolerance under which two objective values tie in greedy.
pub const TIE_RELATIVE: f64 = 1e-12;

/// Left singular vector of `H_u` for its smallest singular value, computed
/// over the rows of existing phases and re-embedded into all `3B` rows.
pub fn weakest_direction(part: &PartitionedSystem) -> (nalgebra::DVector<Complex64>, f64) {
    let rows: Vec<usize> = (0..part.present_rows().len()).filter(|&r| part.present_rows()[r]).collect();
    let hu = select_rows(&part.h_u, &rows);
    let (u_small, sigma) = smallest_left_singular(&hu);
    let mut u = nalgebra::DVector::zeros(part.present_rows().len());
    for (j, &r) in rows.iter().enumerate() {
        u[r] = u_small[j];
    }
    (u, sigma)
}

/// `lambda_max(H_a^H u u^H H_a)`, i.e. `||u^H H_a||^2`; zero when every bus
/// is sensed.
pub fn objective(system: &SystemMatrix, placement: &Placement) -> Result<f64> {
    let part = system.partition(placement)?;
    Ok(objective_of(&part))
}

pub fn objective_of(part: &PartitionedSystem) -> f64 {
    if part.h_u.ncols() == 0 {
        return 0.0;
    }
    let (u, _) = weakest_direction(part);
    (u.adjoint() * &part.h_a).norm_squared()
}

/// `W = H_a^H u u^H H_a` as a dense matrix, for oracles and reports.
pub fn w_matrix(part: &PartitionedSystem) -> DMatrix<Complex64> {
    let (u, _) = weakest_direction(part);
    let row = u.adjoint() * &part.h_a;
    row.adjoint() * row
}

/// Evaluations counted across all solver calls in this process.
static EVALUATIONS: AtomicU64 = AtomicU64::new(0);

pub fn evaluation_count() -> u64 {
    EVALUATIONS.load(Ordering::Relaxed)
}

fn counted(system: &SystemMatrix, buses: &[BusId], counter: &AtomicU64) -> f64 {
    counter.fetch_add(1, Ordering::Relaxed);
    EVALUATIONS.fetch_add(1, Ordering::Relaxed);
    let placement = Placement::new(buses.iter().copied()).expect("distinct candidates");
    objective(system, &placement).expect("candidates are feeder buses")
}

fn check_k(k: usize, candidates: &[BusId]) -> Result<()> {
    if k == 0 || k > candidates.len() {
        return Err(Error::Placement(format!(
            "k must be between 1 and {} candidates, got {k}",
            candidates.len()
        )));
    }
    Ok(())
}

fn normalized(candidates: &[BusId], system: &SystemMatrix) -> Result<Vec<BusId>> {
    let mut c = candidates.to_vec();
    c.sort();
    c.dedup();
    if let Some(b) = c.iter().find(|&&b| system.bus_index(b).is_none()) {
        return Err(Error::Placement(format!("candidate bus {b} is not in the feeder")));
    }
    Ok(c)
}

/// K rounds; each adds the candidate with the smallest objective given the
/// buses already chosen. Ties within [`TIE_RELATIVE`] go to the lower id.
pub fn greedy_place(system: &SystemMatrix, k: usize, candidates: &[BusId]) -> Result<PlacementResult> {
    let start = Instant::now();
    let mut remaining = normalized(candidates, system)?;
    check_k(k, &remaining)?;
    let counter = AtomicU64::new(0);
    let mut chosen: Vec<BusId> = Vec::with_capacity(k);
    let mut best_value = f64::INFINITY;
    for _ in 0..k {
        let scores: Vec<(BusId, f64)> = remaining
            .par_iter()
            .map(|&c| {
                let mut set = chosen.clone();
                set.push(c);
                (c, counted(system, &set, &counter))
            })
            .collect();
        // scores follow `remaining`, which is sorted by id
        let mut best = scores[0];
        for &(bus, value) in &scores[1..] {
            if value < best.1 && (best.1 - value) > TIE_RELATIVE * best.1.abs() {
                best = (bus, value);
            }
        }
        chosen.push(best.0);
        best_value = best.1;
        remaining.retain(|&b| b != best.0);
    }
    let placement = Placement::new(chosen)?;
    Ok(PlacementResult {
        objective: best_value,
        placement,
        solver: Solver::Greedy,
        elapsed: start.elapsed().as_secs_f64(),
        evaluations: counter.into_inner(),
    })
}

/// Binomial coefficient, saturating.
pub fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut c: u128 = 1;
    for i in 0..k {
        c = c.saturating_mul((n - i) as u128) / (i as u128 + 1);
    }
    c
}

/// Lexicographic enumeration of every K-subset of the candidates.
pub fn exhaustive_place(
    system: &SystemMatrix,
    k: usize,
    candidates: &[BusId],
    budget: u128,
) -> Result<PlacementResult> {
    let start = Instant::now();
    let cand = normalized(candidates, system)?;
    check_k(k, &cand)?;
    let count = binomial(cand.len(), k);
    if count > budget {
        return Err(Error::Budget { count, budget });
    }
    let mut subsets = Vec::with_capacity(count as usize);
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        subsets.push(idx.clone());
        // advance to the next combination in lexicographic order
        let mut i = k;
        while i > 0 && idx[i - 1] == cand.len() - k + i - 1 {
            i -= 1;
        }
        if i == 0 {
            break;
        }
        idx[i - 1] += 1;
        for j in i..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
    let counter = AtomicU64::new(0);
    let scores: Vec<f64> = subsets
        .par_iter()
        .map(|s| {
            let buses: Vec<BusId> = s.iter().map(|&i| cand[i]).collect();
            counted(system, &buses, &counter)
        })
        .collect();
    let mut best = 0;
    for (i, &v) in scores.iter().enumerate() {
        if v < scores[best] {
            best = i;
        }
    }
    Ok(PlacementResult {
        placement: Placement::new(subsets[best].iter().map(|&i| cand[i]))?,
        objective: scores[best],
        solver: Solver::Exhaustive,
        elapsed: start.elapsed().as_secs_f64(),
        evaluations: counter.into_inner(),
    })
}

/// Uniform K-subset of the candidates drawn from a seeded generator.
pub fn random_place(system: &SystemMatrix, k: usize, candidates: &[BusId], seed: u64) -> Result<PlacementResult> {
    let start = Instant::now();
    let cand = normalized(candidates, system)?;
    check_k(k, &cand)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picked: Vec<BusId> = sample(&mut rng, cand.len(), k).into_iter().map(|i| cand[i]).collect();
    let placement = Placement::new(picked)?;
    let objective = objective(system, &placement)?;
    EVALUATIONS.fetch_add(1, Ordering::Relaxed);
    Ok(PlacementResult {
        placement,
        objective,
        solver: Solver::Random,
        elapsed: start.elapsed().as_secs_f64(),
        evaluations: 1,
    })
}

/// Smallest pairwise hop distance between sensors, for placement reports.
pub fn min_pairwise_hops(feeder: &crate::FeederModel, placement: &Placement) -> Option<usize> {
    let b = placement.buses();
    let mut best = None;
    for i in 0..b.len() {
        for j in i + 1..b.len() {
            let d = feeder.hop_distance(b[i], b[j])?;
            best = Some(best.map_or(d, |x: usize| x.min(d)));
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::hermitian_lambda_max;
    use crate::model::{FeederModel, SystemMatrix};

    pub(crate) fn chain(n: u32) -> FeederModel {
        graded_chain(n, 0.3)
    }

    /// Chain feeder whose line admittance grows by `grade` per segment.
    pub(crate) fn graded_chain(n: u32, grade: f64) -> FeederModel {
        let edges: Vec<(u32, u32)> = (1..n).map(|b| (b, b + 1)).collect();
        toy(n, &edges, grade)
    }

    /// Three-phase feeder over `edges`; bus 1 is the slack.
    pub(crate) fn toy(n: u32, edges: &[(u32, u32)], grade: f64) -> FeederModel {
        let mut buses = Vec::new();
        let mut lines = Vec::new();
        for b in 1..=n {
            let kind = if b == 1 { "slack" } else { "pq" };
            buses.push(format!(r#"{{"id": {b}, "kv_base": 12.47, "type": "{kind}"}}"#));
        }
        for (seg, &(b, to)) in edges.iter().enumerate() {
            let g = 1.0 + grade * (seg + 1) as f64;
            let s = format!(
                "[[{g},-{g2}],[-0.2,0.6],[-0.1,0.5],[-0.2,0.6],[{g},-{g2}],[-0.15,0.55],[-0.1,0.5],[-0.15,0.55],[{g},-{g2}]]",
                g2 = 3.0 * g
            );
            let sh = "[[0,1e-5],[0,0],[0,0],[0,0],[0,1e-5],[0,0],[0,0],[0,0],[0,1e-5]]";
            lines.push(format!(
                r#"{{"from": {b}, "to": {to}, "phases": "abc", "series": {s}, "shunt": {sh}, "rating_amps": 300}}"#
            ));
        }
        let json = format!(
            r#"{{"name": "chain", "base_mva": 1.0, "slack": 1, "buses": [{}], "lines": [{}]}}"#,
            buses.join(","),
            lines.join(",")
        );
        FeederModel::from_json(&json).unwrap()
    }

    fn all(system: &SystemMatrix) -> Vec<BusId> {
        system.bus_ids().to_vec()
    }

    #[test]
    fn rank_one_shortcut_matches_eigensolver() {
        let f = chain(6);
        let s = SystemMatrix::build(&f);
        for ids in [[1u32, 4].as_slice(), &[2], &[3, 5, 6]] {
            let part = s.partition(&Placement::from_ids(ids).unwrap()).unwrap();
            let fast = objective_of(&part);
            let dense = hermitian_lambda_max(&w_matrix(&part));
            assert!((fast - dense).abs() <= 1e-10 * fast.max(1e-300), "{fast} vs {dense}");
        }
    }

    #[test]
    fn full_placement_scores_zero() {
        let s = SystemMatrix::build(&chain(3));
        let r = random_place(&s, 3, &all(&s), 7).unwrap();
        assert_eq!(r.objective, 0.0);
    }

    #[test]
    fn greedy_matches_exhaustive_at_b_minus_one() {
        // uniform mesh: every pair is equivalent, so the first pick cannot mislead
        let s = SystemMatrix::build(&toy(3, &[(1, 2), (2, 3), (1, 3)], 0.0));
        let g = greedy_place(&s, 2, &all(&s)).unwrap();
        let e = exhaustive_place(&s, 2, &all(&s), DEFAULT_BUDGET).unwrap();
        assert!((g.objective - e.objective).abs() <= 1e-12 * e.objective.max(1e-300), "{g:?} {e:?}");
    }

    #[test]
    fn greedy_can_miss_the_endpoints_of_a_chain() {
        // the middle bus wins round one, which rules out {1, 3}
        let s = SystemMatrix::build(&graded_chain(3, 0.0));
        let g = greedy_place(&s, 2, &all(&s)).unwrap();
        let e = exhaustive_place(&s, 2, &all(&s), DEFAULT_BUDGET).unwrap();
        assert_eq!(e.placement.buses(), &[BusId(1), BusId(3)]);
        assert!(e.objective < g.objective);
    }

    #[test]
    fn exhaustive_never_worse_than_greedy() {
        let s = SystemMatrix::build(&chain(7));
        for k in 1..=3 {
            let g = greedy_place(&s, k, &all(&s)).unwrap();
            let e = exhaustive_place(&s, k, &all(&s), DEFAULT_BUDGET).unwrap();
            assert!(e.objective <= g.objective * (1.0 + 1e-12));
            assert_eq!(e.evaluations as u128, binomial(7, k));
        }
    }

    #[test]
    fn greedy_evaluation_count() {
        let s = SystemMatrix::build(&chain(8));
        let g = greedy_place(&s, 3, &all(&s)).unwrap();
        assert_eq!(g.evaluations, 8 + 7 + 6);
        assert_eq!(g.placement.len(), 3);
    }

    #[test]
    fn k1_on_two_buses_picks_better() {
        let s = SystemMatrix::build(&chain(2));
        let e = exhaustive_place(&s, 1, &all(&s), DEFAULT_BUDGET).unwrap();
        let a = objective(&s, &Placement::from_ids(&[1]).unwrap()).unwrap();
        let b = objective(&s, &Placement::from_ids(&[2]).unwrap()).unwrap();
        assert_eq!(e.objective, a.min(b));
    }

    #[test]
    fn random_is_reproducible() {
        let s = SystemMatrix::build(&chain(10));
        let a = random_place(&s, 3, &all(&s), 42).unwrap();
        let b = random_place(&s, 3, &all(&s), 42).unwrap();
        assert_eq!(a.placement, b.placement);
    }

    #[test]
    fn budget_is_enforced() {
        let s = SystemMatrix::build(&chain(10));
        let err = exhaustive_place(&s, 5, &all(&s), 100).unwrap_err();
        assert!(matches!(err, Error::Budget { count: 252, budget: 100 }));
    }

    #[test]
    fn binomial_values() {
        assert_eq!(binomial(34, 3), 5984);
        assert_eq!(binomial(5, 0), 1);
        assert_eq!(binomial(3, 4), 0);
    }
}
