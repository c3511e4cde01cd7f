//! Exact dynamic-programming ground truth for a tabular MDP: optimal values,
//! policy evaluation, suboptimality gaps, the maximal conditional variance of
//! the optimal value, and visiting-probability statistics under the canonical
//! optimal policy.
//!
//! Everything here is a pure function of the MDP in double precision; the
//! assembled [`OracleTables`] are read-only and freely shareable.

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::jsonio;
use crate::mdp::{DeterministicPolicy, TabularMdp};

/// Tolerance used by the Bellman-residual and distribution-sum invariants.
pub const ORACLE_TOL: f64 = 1e-10;

/// Ground-truth tables derived from a [`TabularMdp`].
///
/// `v_star` has `H + 1` rows; the terminal row is identically zero. Gaps are
/// `v_star - q_star` and therefore nonnegative with at least one zero per
/// `(h, s)`. `delta_min` is `None` exactly when no gap is strictly positive
/// (the degenerate case where every action is optimal). `c_st` is the minimum
/// positive visiting probability under the canonical optimal policy; it is
/// reported as `None` when a state-step pair on the support of that policy
/// has more than one optimal action, which voids the uniqueness conditions
/// the statistic is defined under.
#[derive(Debug, Clone)]
pub struct OracleTables {
    pub v_star: Array2<f64>,
    pub q_star: Array3<f64>,
    pub gaps: Array3<f64>,
    pub delta_min: Option<f64>,
    pub q_var_max: f64,
    pub p_star: Array2<f64>,
    pub c_st: Option<f64>,
    pub canonical_policy: DeterministicPolicy,
    pub optimal_action_sets: Vec<Vec<Vec<usize>>>,
    pub uniqueness: UniquenessReport,
}

/// Multiplicity diagnostics for the optimal-action structure.
///
/// Uniqueness of visiting probabilities across *all* optimal policies is not
/// certified; the statistics are computed under the canonical (lowest-index
/// argmax) policy and this report records where other optimal policies exist.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct UniquenessReport {
    /// State-step pairs with more than one optimal action.
    pub multiple_optimal: Vec<(usize, usize)>,
    /// True when some pair in `multiple_optimal` has positive visiting
    /// probability under the canonical policy.
    pub multiplicity_on_support: bool,
}

/// Backward induction for the optimal values.
///
/// Returns `(v_star, q_star)` with `v_star` of shape `[H + 1, S]` (zero
/// terminal row) and `q_star` of shape `[H, S, A]`.
pub fn optimal_values(mdp: &TabularMdp) -> (Array2<f64>, Array3<f64>) {
    let (h, s, a) = (mdp.horizon(), mdp.num_states(), mdp.num_actions());
    let mut v = Array2::<f64>::zeros((h + 1, s));
    let mut q = Array3::<f64>::zeros((h, s, a));
    for hh in (0..h).rev() {
        for ss in 0..s {
            let mut best = f64::NEG_INFINITY;
            for aa in 0..a {
                let mut expected = 0.0;
                let row = mdp.transition_row(hh, ss, aa);
                for (sn, &p) in row.iter().enumerate() {
                    expected += p * v[[hh + 1, sn]];
                }
                let value = mdp.reward(hh, ss, aa) + expected;
                q[[hh, ss, aa]] = value;
                if value > best {
                    best = value;
                }
            }
            v[[hh, ss]] = best;
        }
    }
    (v, q)
}

/// Backward recursion for the value of a fixed deterministic policy.
/// Returns shape `[H + 1, S]` with a zero terminal row.
pub fn evaluate_policy(mdp: &TabularMdp, policy: &DeterministicPolicy) -> Array2<f64> {
    let (h, s) = (mdp.horizon(), mdp.num_states());
    let mut v = Array2::<f64>::zeros((h + 1, s));
    for hh in (0..h).rev() {
        for ss in 0..s {
            let aa = policy.action(hh, ss);
            let mut expected = 0.0;
            let row = mdp.transition_row(hh, ss, aa);
            for (sn, &p) in row.iter().enumerate() {
                expected += p * v[[hh + 1, sn]];
            }
            v[[hh, ss]] = mdp.reward(hh, ss, aa) + expected;
        }
    }
    v
}

/// Suboptimality gaps and the minimum positive gap.
///
/// Returns `(gaps, delta_min)` where `delta_min` is `None` for degenerate
/// MDPs (no strictly positive gap anywhere).
pub fn gap_quantities(v_star: &Array2<f64>, q_star: &Array3<f64>) -> (Array3<f64>, Option<f64>) {
    let (h, s, a) = q_star.dim();
    let mut gaps = Array3::<f64>::zeros((h, s, a));
    let mut delta_min: Option<f64> = None;
    for hh in 0..h {
        for ss in 0..s {
            for aa in 0..a {
                let gap = v_star[[hh, ss]] - q_star[[hh, ss, aa]];
                gaps[[hh, ss, aa]] = gap;
                if gap > 0.0 {
                    delta_min = Some(match delta_min {
                        Some(d) => d.min(gap),
                        None => gap,
                    });
                }
            }
        }
    }
    (gaps, delta_min)
}

/// The maximal conditional variance of the optimal next-step value over all
/// `(s, a, h)`: `max P(V*^2) - (P V*)^2`, a value in `[0, H^2]`.
pub fn max_conditional_variance(mdp: &TabularMdp, v_star: &Array2<f64>) -> f64 {
    let (h, s, a) = (mdp.horizon(), mdp.num_states(), mdp.num_actions());
    let mut best = 0.0_f64;
    for hh in 0..h {
        for ss in 0..s {
            for aa in 0..a {
                let row = mdp.transition_row(hh, ss, aa);
                let mut mean = 0.0;
                let mut second = 0.0;
                for (sn, &p) in row.iter().enumerate() {
                    let v = v_star[[hh + 1, sn]];
                    mean += p * v;
                    second += p * (v * v);
                }
                let var = second - mean * mean;
                if var > best {
                    best = var;
                }
            }
        }
    }
    best
}

/// Visiting-probability statistics under the canonical optimal policy.
pub struct GmdpStats {
    pub p_star: Array2<f64>,
    pub c_st: Option<f64>,
    pub canonical_policy: DeterministicPolicy,
    pub optimal_action_sets: Vec<Vec<Vec<usize>>>,
    pub uniqueness: UniquenessReport,
}

/// Forward propagation of the uniform initial distribution under the
/// canonical optimal policy (argmax with ties to the lowest action index).
///
/// `c_st` is the minimum positive entry of the visiting table, or `None`
/// when a pair with multiple optimal actions lies on the support. Condition
/// (a) of the uniqueness definition is checked under the canonical policy
/// only; the report records multiplicities instead of certifying.
pub fn gmdp_statistics(mdp: &TabularMdp, v_star: &Array2<f64>, q_star: &Array3<f64>) -> GmdpStats {
    let (h, s, a) = (mdp.horizon(), mdp.num_states(), mdp.num_actions());
    let mut optimal_action_sets: Vec<Vec<Vec<usize>>> = Vec::with_capacity(h);
    let mut canonical = DeterministicPolicy::lowest_action(h, s);
    for hh in 0..h {
        let mut per_state = Vec::with_capacity(s);
        for ss in 0..s {
            let best = v_star[[hh, ss]];
            let set: Vec<usize> = (0..a).filter(|&aa| q_star[[hh, ss, aa]] == best).collect();
            canonical.set_action(hh, ss, set[0]);
            per_state.push(set);
        }
        optimal_action_sets.push(per_state);
    }

    let mut p_star = Array2::<f64>::zeros((h, s));
    for ss in 0..s {
        p_star[[0, ss]] = 1.0 / s as f64;
    }
    for hh in 0..h.saturating_sub(1) {
        for ss in 0..s {
            let mass = p_star[[hh, ss]];
            if mass == 0.0 {
                continue;
            }
            let aa = canonical.action(hh, ss);
            let row = mdp.transition_row(hh, ss, aa);
            for (sn, &p) in row.iter().enumerate() {
                p_star[[hh + 1, sn]] += mass * p;
            }
        }
    }

    let mut multiple_optimal = Vec::new();
    let mut on_support = false;
    for hh in 0..h {
        for ss in 0..s {
            if optimal_action_sets[hh][ss].len() > 1 {
                multiple_optimal.push((hh, ss));
                if p_star[[hh, ss]] > 0.0 {
                    on_support = true;
                }
            }
        }
    }

    let mut min_positive: Option<f64> = None;
    for &p in p_star.iter() {
        if p > 0.0 {
            min_positive = Some(match min_positive {
                Some(m) => m.min(p),
                None => p,
            });
        }
    }
    let c_st = if on_support { None } else { min_positive };

    GmdpStats {
        p_star,
        c_st,
        canonical_policy: canonical,
        optimal_action_sets,
        uniqueness: UniquenessReport {
            multiple_optimal,
            multiplicity_on_support: on_support,
        },
    }
}

impl OracleTables {
    /// Compute every table for `mdp`.
    pub fn compute(mdp: &TabularMdp) -> Self {
        let (v_star, q_star) = optimal_values(mdp);
        let (gaps, delta_min) = gap_quantities(&v_star, &q_star);
        let q_var_max = max_conditional_variance(mdp, &v_star);
        let stats = gmdp_statistics(mdp, &v_star, &q_star);
        Self {
            v_star,
            q_star,
            gaps,
            delta_min,
            q_var_max,
            p_star: stats.p_star,
            c_st: stats.c_st,
            canonical_policy: stats.canonical_policy,
            optimal_action_sets: stats.optimal_action_sets,
            uniqueness: stats.uniqueness,
        }
    }

    /// Serialize alongside the MDP's content hash for caching between runs.
    pub fn to_json(&self, mdp_hash: &str) -> String {
        let (h1, s) = self.v_star.dim();
        let h = h1 - 1;
        let a = self.q_star.dim().2;
        let file = OracleFile {
            mdp_hash: mdp_hash.to_string(),
            h,
            s,
            a,
            v_star: self.v_star.iter().copied().collect(),
            q_star: self.q_star.iter().copied().collect(),
            gaps: self.gaps.iter().copied().collect(),
            delta_min: self.delta_min,
            q_var_max: self.q_var_max,
            p_star: self.p_star.iter().copied().collect(),
            c_st: self.c_st,
            canonical_policy: self.canonical_policy.actions().iter().copied().collect(),
            optimal_action_sets: self.optimal_action_sets.clone(),
            uniqueness: self.uniqueness.clone(),
        };
        jsonio::to_string_precise(&file).expect("oracle serialization cannot fail")
    }

    /// Load a cached oracle; returns `None` when the stored hash does not
    /// match `mdp_hash` (the cache is stale for this environment).
    pub fn from_json(text: &str, mdp_hash: &str) -> Result<Option<Self>, serde_json::Error> {
        let file: OracleFile = serde_json::from_str(text)?;
        if file.mdp_hash != mdp_hash {
            return Ok(None);
        }
        let (h, s, a) = (file.h, file.s, file.a);
        let v_star = Array2::from_shape_vec((h + 1, s), file.v_star).expect("v_star shape");
        let q_star = Array3::from_shape_vec((h, s, a), file.q_star).expect("q_star shape");
        let gaps = Array3::from_shape_vec((h, s, a), file.gaps).expect("gaps shape");
        let p_star = Array2::from_shape_vec((h, s), file.p_star).expect("p_star shape");
        let canonical_policy = DeterministicPolicy::new(
            Array2::from_shape_vec((h, s), file.canonical_policy).expect("policy shape"),
        );
        Ok(Some(Self {
            v_star,
            q_star,
            gaps,
            delta_min: file.delta_min,
            q_var_max: file.q_var_max,
            p_star,
            c_st: file.c_st,
            canonical_policy,
            optimal_action_sets: file.optimal_action_sets,
            uniqueness: file.uniqueness,
        }))
    }
}

#[derive(Serialize, Deserialize)]
struct OracleFile {
    mdp_hash: String,
    h: usize,
    s: usize,
    a: usize,
    v_star: Vec<f64>,
    q_star: Vec<f64>,
    gaps: Vec<f64>,
    delta_min: Option<f64>,
    q_var_max: f64,
    p_star: Vec<f64>,
    c_st: Option<f64>,
    canonical_policy: Vec<usize>,
    optimal_action_sets: Vec<Vec<Vec<usize>>>,
    uniqueness: UniquenessReport,
}
