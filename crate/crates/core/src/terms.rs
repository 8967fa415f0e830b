//! Martingale term families for the control variates.
//!
//! A control variate is a sum over steps `j` and terms `t` of
//! `a_{j,t}(X_{j-1}) * factor_t(increment_j)`, where the factors form an
//! orthonormal family with mean zero under the one-step noise law:
//!
//! * **Euler.** For a nonempty subset `S` of noise indices the factor is the
//!   product of the signs in `S`:
//!
//!   ```text
//!   factor_S = prod_{k in S} y^k,   y^k in {-1, +1}
//!   ```
//!
//! * **Second order.** For Hermite orders `o_r in {0, 1, 2}` per noise
//!   index and a set `U` of strictly-upper pairs the factor is
//!
//!   ```text
//!   factor = prod_r H_{o_r}(xi^r) * prod_{(k,l) in U} V^{kl}
//!   ```
//!
//!   with the orthonormal Hermite polynomials `H_0 = 1`, `H_1(x) = x`,
//!   `H_2(x) = (x^2 - 1) / sqrt 2`. The three-point law matches the normal
//!   moments up to order four, so this family is exactly orthonormal too.
//!
//! Each term has a **weight**: 1/2 per plain sign or `H_1` factor, 1 per
//! `H_2` or `V` factor. The weight governs the size of the optimal
//! coefficient (`a ~ delta^w`) and drives both the truncation rule — the
//! truncated family keeps `weight <= order/2`, i.e. the terms whose
//! coefficients decay slowest — and the clamping thresholds used by
//! regression training.

use crate::error::{Error, Result};
use crate::scheme::{step_outcomes, Increment, Scheme};
use serde::{Deserialize, Serialize};

/// Which part of the term family to enumerate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TermSet {
    /// Every term of the scheme's martingale representation.
    Full,
    /// Only the slowest-decaying terms: weight `<= 1/2` for Euler,
    /// `<= 1` for the second-order scheme.
    Truncated,
}

/// Index of a single martingale term.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TermIndex {
    /// Product of the signs at the listed noise indices
    /// (strictly increasing, nonempty).
    Euler { signs: Vec<u8> },
    /// Product of Hermite factors `(noise index, order in {1,2})`, sorted by
    /// index, and V entries at the listed strictly-upper pairs, sorted
    /// lexicographically. At least one factor present.
    SecondOrder {
        hermite: Vec<(u8, u8)>,
        v_pairs: Vec<(u8, u8)>,
    },
}

/// Orthonormal Hermite polynomial of the given order (0, 1 or 2).
#[inline]
pub fn hermite(order: u8, x: f64) -> f64 {
    match order {
        0 => 1.0,
        1 => x,
        2 => (x * x - 1.0) * std::f64::consts::FRAC_1_SQRT_2,
        _ => panic!("Hermite order {order} not supported (schemes here need at most 2)"),
    }
}

impl TermIndex {
    /// Twice the term weight, as an integer: 1 per sign or `H_1` factor,
    /// 2 per `H_2` or `V` factor.
    pub fn weight_class(&self) -> u32 {
        match self {
            TermIndex::Euler { signs } => signs.len() as u32,
            TermIndex::SecondOrder { hermite, v_pairs } => {
                let h: u32 = hermite.iter().map(|&(_, o)| o as u32).sum();
                h + 2 * v_pairs.len() as u32
            }
        }
    }

    /// Term weight `w`; the optimal coefficient scales like `delta^w`.
    pub fn weight(&self) -> f64 {
        self.weight_class() as f64 / 2.0
    }

    pub fn scheme(&self) -> Scheme {
        match self {
            TermIndex::Euler { .. } => Scheme::Euler,
            TermIndex::SecondOrder { .. } => Scheme::SecondOrder,
        }
    }

    /// Evaluate the factor on one increment.
    #[inline]
    pub fn factor(&self, inc: &Increment) -> f64 {
        match (self, inc) {
            (TermIndex::Euler { signs }, Increment::Euler { signs: s }) => {
                let mut prod = 1i32;
                for &k in signs {
                    prod *= s[k as usize] as i32;
                }
                prod as f64
            }
            (TermIndex::SecondOrder { hermite: h, v_pairs }, inc @ Increment::SecondOrder { .. }) => {
                let mut prod = 1.0;
                for &(r, o) in h {
                    prod *= hermite(o, inc.y(r as usize));
                }
                for &(k, l) in v_pairs {
                    prod *= inc.v_entry(k as usize, l as usize);
                }
                prod
            }
            _ => panic!("term/increment scheme mismatch"),
        }
    }

    fn validate(&self, m: usize) -> Result<()> {
        match self {
            TermIndex::Euler { signs } => {
                if signs.is_empty() || !signs.windows(2).all(|w| w[0] < w[1]) {
                    return Err(Error::InvalidConfig(format!(
                        "Euler term indices must be nonempty and strictly increasing: {signs:?}"
                    )));
                }
                if signs.iter().any(|&k| k as usize >= m) {
                    return Err(Error::InvalidConfig(format!(
                        "Euler term index out of range for {m} noise components: {signs:?}"
                    )));
                }
            }
            TermIndex::SecondOrder { hermite, v_pairs } => {
                if hermite.is_empty() && v_pairs.is_empty() {
                    return Err(Error::InvalidConfig("empty second-order term".into()));
                }
                if !hermite.windows(2).all(|w| w[0].0 < w[1].0)
                    || hermite.iter().any(|&(r, o)| r as usize >= m || o == 0 || o > 2)
                {
                    return Err(Error::InvalidConfig(format!(
                        "bad Hermite factor list: {hermite:?}"
                    )));
                }
                if !v_pairs.windows(2).all(|w| w[0] < w[1])
                    || v_pairs.iter().any(|&(k, l)| k >= l || l as usize >= m)
                {
                    return Err(Error::InvalidConfig(format!(
                        "bad V pair list: {v_pairs:?}"
                    )));
                }
            }
        }
        Ok(())
    }
}

impl std::fmt::Display for TermIndex {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TermIndex::Euler { signs } => {
                let parts: Vec<String> = signs.iter().map(|k| format!("s{k}")).collect();
                f.write_str(&parts.join("*"))
            }
            TermIndex::SecondOrder { hermite, v_pairs } => {
                let mut parts: Vec<String> =
                    hermite.iter().map(|(r, o)| format!("H{o}(x{r})")).collect();
                parts.extend(v_pairs.iter().map(|(k, l)| format!("V({k},{l})")));
                f.write_str(&parts.join("*"))
            }
        }
    }
}

/// Largest weight class kept by [`TermSet::Truncated`]: the scheme's weak
/// order (classes are twice the weight).
pub fn truncation_class_cap(scheme: Scheme) -> u32 {
    match scheme {
        Scheme::Euler => 1,
        Scheme::SecondOrder => 2,
    }
}

/// Enumerate the term family in canonical order: ascending weight class,
/// then structural lexicographic order. `drop_v` removes every term with a
/// V factor, leaving the family driven by the three-point variables alone.
pub fn enumerate_terms(scheme: Scheme, m: usize, set: TermSet, drop_v: bool) -> Vec<TermIndex> {
    let cap = match set {
        TermSet::Full => u32::MAX,
        TermSet::Truncated => truncation_class_cap(scheme),
    };
    let mut terms = Vec::new();
    match scheme {
        Scheme::Euler => {
            for mask in 1usize..(1 << m) {
                if (mask.count_ones()) > cap {
                    continue;
                }
                let signs: Vec<u8> = (0..m as u8).filter(|k| (mask >> k) & 1 == 1).collect();
                terms.push(TermIndex::Euler { signs });
            }
        }
        Scheme::SecondOrder => {
            let pairs = m * (m - 1) / 2;
            let pow3 = 3usize.pow(m as u32);
            let pair_masks = if drop_v { 1usize } else { 1 << pairs };
            let all_pairs: Vec<(u8, u8)> = (0..m as u8)
                .flat_map(|i| ((i + 1)..m as u8).map(move |l| (i, l)))
                .collect();
            for t in 0..pow3 {
                let mut orders = Vec::with_capacity(m);
                let mut rest = t;
                let mut h_class = 0u32;
                for _ in 0..m {
                    let o = (rest % 3) as u8;
                    rest /= 3;
                    h_class += o as u32;
                    orders.push(o);
                }
                if h_class > cap {
                    continue;
                }
                let hermite: Vec<(u8, u8)> = orders
                    .iter()
                    .enumerate()
                    .filter(|&(_, &o)| o > 0)
                    .map(|(r, &o)| (r as u8, o))
                    .collect();
                for b in 0..pair_masks {
                    let class = h_class + 2 * b.count_ones();
                    if class > cap || (t == 0 && b == 0) {
                        continue;
                    }
                    let v_pairs: Vec<(u8, u8)> = (0..pairs)
                        .filter(|p| (b >> p) & 1 == 1)
                        .map(|p| all_pairs[p])
                        .collect();
                    terms.push(TermIndex::SecondOrder {
                        hermite: hermite.clone(),
                        v_pairs,
                    });
                }
            }
        }
    }
    terms.sort_by(|a, b| {
        a.weight_class()
            .cmp(&b.weight_class())
            .then_with(|| a.cmp(b))
    });
    terms
}

/// Validate a user-supplied term list against the scheme and noise dimension.
pub fn validate_terms(terms: &[TermIndex], scheme: Scheme, m: usize) -> Result<()> {
    for t in terms {
        if t.scheme() != scheme {
            return Err(Error::InvalidConfig(format!(
                "term '{t}' does not belong to scheme '{scheme}'"
            )));
        }
        t.validate(m)?;
    }
    Ok(())
}

/// Exhaustively verify orthonormality of a term family: returns the largest
/// deviation of `E[factor_i factor_j]` from the identity matrix, together
/// with the largest `|E factor_i|`. Cost grows with the one-step outcome
/// count, so keep `m` small (<= 3 Euler, <= 2 second order is instant).
pub fn orthonormality_defect(scheme: Scheme, m: usize, terms: &[TermIndex]) -> (f64, f64) {
    let outcomes = step_outcomes(scheme, m);
    let factors: Vec<Vec<f64>> = outcomes
        .iter()
        .map(|o| terms.iter().map(|t| t.factor(&o.increment)).collect())
        .collect();
    let mut max_gram = 0.0f64;
    let mut max_mean = 0.0f64;
    for i in 0..terms.len() {
        let mean: f64 = outcomes
            .iter()
            .zip(&factors)
            .map(|(o, f)| o.weight * f[i])
            .sum();
        max_mean = max_mean.max(mean.abs());
        for j in i..terms.len() {
            let g: f64 = outcomes
                .iter()
                .zip(&factors)
                .map(|(o, f)| o.weight * f[i] * f[j])
                .sum();
            let target = if i == j { 1.0 } else { 0.0 };
            max_gram = max_gram.max((g - target).abs());
        }
    }
    (max_gram, max_mean)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn family_sizes_match_closed_forms() {
        // Euler: nonempty subsets, truncated keeps the singles.
        assert_eq!(enumerate_terms(Scheme::Euler, 5, TermSet::Full, false).len(), 31);
        assert_eq!(enumerate_terms(Scheme::Euler, 5, TermSet::Truncated, false).len(), 5);
        assert_eq!(enumerate_terms(Scheme::Euler, 2, TermSet::Full, false).len(), 3);

        // Second order: 3^m 2^(m(m-1)/2) - 1 in full, m(m+1) truncated.
        assert_eq!(
            enumerate_terms(Scheme::SecondOrder, 5, TermSet::Full, false).len(),
            248_831
        );
        assert_eq!(
            enumerate_terms(Scheme::SecondOrder, 5, TermSet::Truncated, false).len(),
            30
        );
        assert_eq!(
            enumerate_terms(Scheme::SecondOrder, 5, TermSet::Full, true).len(),
            242
        );
        assert_eq!(
            enumerate_terms(Scheme::SecondOrder, 5, TermSet::Truncated, true).len(),
            20
        );
        assert_eq!(
            enumerate_terms(Scheme::SecondOrder, 1, TermSet::Full, false).len(),
            2
        );
        assert_eq!(
            enumerate_terms(Scheme::SecondOrder, 1, TermSet::Truncated, false).len(),
            2
        );
    }

    #[test]
    fn canonical_order_is_by_weight_then_structure() {
        let terms = enumerate_terms(Scheme::SecondOrder, 3, TermSet::Full, false);
        let classes: Vec<u32> = terms.iter().map(TermIndex::weight_class).collect();
        assert!(classes.windows(2).all(|w| w[0] <= w[1]));
        // The first m terms are the H1 singles in index order.
        assert_eq!(
            terms[0],
            TermIndex::SecondOrder { hermite: vec![(0, 1)], v_pairs: vec![] }
        );
        assert_eq!(
            terms[1],
            TermIndex::SecondOrder { hermite: vec![(1, 1)], v_pairs: vec![] }
        );
        // No duplicates anywhere.
        let mut sorted = terms.clone();
        sorted.dedup();
        assert_eq!(sorted.len(), terms.len());
    }

    #[test]
    fn weight_classes_count_factor_orders() {
        let t = TermIndex::SecondOrder {
            hermite: vec![(0, 1), (2, 2)],
            v_pairs: vec![(0, 1)],
        };
        assert_eq!(t.weight_class(), 5);
        assert_eq!(t.weight(), 2.5);
        let e = TermIndex::Euler { signs: vec![0, 3] };
        assert_eq!(e.weight_class(), 2);
        assert_eq!(e.weight(), 1.0);
    }

    #[test]
    fn factors_match_hand_values() {
        let e = TermIndex::Euler { signs: vec![0, 1] };
        let inc = Increment::Euler { signs: vec![1, -1, 1] };
        assert_eq!(e.factor(&inc), -1.0);

        let t = TermIndex::SecondOrder {
            hermite: vec![(0, 2)],
            v_pairs: vec![(0, 1)],
        };
        let inc = Increment::SecondOrder {
            xi: vec![1, 0],
            v_upper: vec![-1],
        };
        // H2(sqrt 3) = (3 - 1)/sqrt 2 = sqrt 2, times V = -1.
        let expect = -(3.0f64.sqrt().powi(2) - 1.0) * std::f64::consts::FRAC_1_SQRT_2;
        assert!((t.factor(&inc) - expect).abs() < 1e-15);
    }

    #[test]
    fn hermite_polynomials_are_orthonormal_under_the_three_point_law() {
        // E H_a(xi) H_b(xi) over the exact three-point measure.
        let xs = [(-(3.0f64.sqrt()), 1.0 / 6.0), (0.0, 2.0 / 3.0), (3.0f64.sqrt(), 1.0 / 6.0)];
        for a in 0..=2u8 {
            for b in 0..=2u8 {
                let e: f64 = xs.iter().map(|&(x, w)| w * hermite(a, x) * hermite(b, x)).sum();
                let target = if a == b { 1.0 } else { 0.0 };
                assert!((e - target).abs() < 1e-15, "H{a} H{b}: {e}");
            }
        }
    }

    #[test]
    #[should_panic(expected = "Hermite order")]
    fn hermite_rejects_high_orders() {
        hermite(3, 0.0);
    }

    #[test]
    fn full_families_are_orthonormal() {
        for m in 1..=3 {
            let terms = enumerate_terms(Scheme::Euler, m, TermSet::Full, false);
            let (gram, mean) = orthonormality_defect(Scheme::Euler, m, &terms);
            assert!(gram < 1e-14 && mean < 1e-14, "euler m={m}: {gram} {mean}");
        }
        for m in 1..=2 {
            let terms = enumerate_terms(Scheme::SecondOrder, m, TermSet::Full, false);
            let (gram, mean) = orthonormality_defect(Scheme::SecondOrder, m, &terms);
            assert!(gram < 1e-14 && mean < 1e-14, "order2 m={m}: {gram} {mean}");
        }
    }

    #[test]
    fn validation_catches_malformed_terms() {
        let bad = TermIndex::Euler { signs: vec![1, 1] };
        assert!(validate_terms(&[bad], Scheme::Euler, 3).is_err());
        let bad = TermIndex::Euler { signs: vec![] };
        assert!(validate_terms(&[bad], Scheme::Euler, 3).is_err());
        let bad = TermIndex::SecondOrder { hermite: vec![(0, 3)], v_pairs: vec![] };
        assert!(validate_terms(&[bad], Scheme::SecondOrder, 2).is_err());
        let bad = TermIndex::SecondOrder { hermite: vec![], v_pairs: vec![(1, 0)] };
        assert!(validate_terms(&[bad], Scheme::SecondOrder, 2).is_err());
        let wrong_scheme = TermIndex::Euler { signs: vec![0] };
        assert!(validate_terms(&[wrong_scheme], Scheme::SecondOrder, 2).is_err());
        let good = enumerate_terms(Scheme::SecondOrder, 2, TermSet::Full, false);
        assert!(validate_terms(&good, Scheme::SecondOrder, 2).is_ok());
    }

    #[test]
    fn display_keys_are_readable_and_unique() {
        let terms = enumerate_terms(Scheme::SecondOrder, 2, TermSet::Full, false);
        let keys: Vec<String> = terms.iter().map(|t| t.to_string()).collect();
        let mut dedup = keys.clone();
        dedup.sort();
        dedup.dedup();
        assert_eq!(dedup.len(), keys.len());
        assert!(keys.contains(&"H1(x0)".to_string()));
        assert!(keys.contains(&"H2(x1)*V(0,1)".to_string()));
    }

    #[test]
    fn pair_index_agrees_with_enumeration_order() {
        use crate::scheme::pair_index;
        // The V component layout used when sampling matches all_pairs order.
        let m = 4;
        let all_pairs: Vec<(u8, u8)> = (0..m as u8)
            .flat_map(|i| ((i + 1)..m as u8).map(move |l| (i, l)))
            .collect();
        for (p, &(i, l)) in all_pairs.iter().enumerate() {
            assert_eq!(pair_index(i as usize, l as usize, m), p);
        }
    }
}
