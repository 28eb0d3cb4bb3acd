//! Design-row recipes shared by the intensity regression, the cost
//! regression and the NPV profile builders.
//!
//! A formula is a list of terms. Each term is a product of factors
//! (covariates and powers of time) and optionally applies only to some record
//! kinds; on other kinds it evaluates to zero. A term with no factors and a
//! single-kind filter is a transition-type dummy, a term with no factors and
//! no filter is the intercept.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// What a design row describes: a direct transition or a sojourn in a state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordKind {
    Transition { from: usize, to: usize },
    Sojourn { state: usize },
}

impl RecordKind {
    pub fn transition(from: usize, to: usize) -> Self {
        RecordKind::Transition { from, to }
    }

    pub fn sojourn(state: usize) -> Self {
        RecordKind::Sojourn { state }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Factor {
    Covariate(String),
    /// `t^k` at the record time.
    Time(u32),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Term {
    #[serde(default)]
    pub name: Option<String>,
    /// Record kinds the term is active on; `None` means all.
    #[serde(default)]
    pub applies_to: Option<Vec<RecordKind>>,
    #[serde(default)]
    pub factors: Vec<Factor>,
}

impl Term {
    pub fn intercept() -> Self {
        Term {
            name: Some("intercept".into()),
            applies_to: None,
            factors: Vec::new(),
        }
    }

    pub fn dummy(kind: RecordKind) -> Self {
        Term {
            name: Some(kind_label(kind)),
            applies_to: Some(vec![kind]),
            factors: Vec::new(),
        }
    }

    pub fn covariate(name: &str) -> Self {
        Term {
            name: Some(name.to_string()),
            applies_to: None,
            factors: vec![Factor::Covariate(name.to_string())],
        }
    }

    pub fn time(power: u32) -> Self {
        Term {
            name: Some(format!("t^{power}")),
            applies_to: None,
            factors: vec![Factor::Time(power)],
        }
    }

    pub fn only(mut self, kinds: Vec<RecordKind>) -> Self {
        if let Some(base) = &self.name {
            let suffix: Vec<String> = kinds.iter().map(|&k| kind_label(k)).collect();
            self.name = Some(format!("{base}:{}", suffix.join("|")));
        }
        self.applies_to = Some(kinds);
        self
    }

    pub fn times(mut self, factor: Factor) -> Self {
        self.factors.push(factor);
        self
    }

    pub fn applies(&self, kind: RecordKind) -> bool {
        match &self.applies_to {
            None => true,
            Some(kinds) => kinds.contains(&kind),
        }
    }

    pub fn label(&self) -> String {
        if let Some(n) = &self.name {
            return n.clone();
        }
        let mut parts: Vec<String> = self
            .factors
            .iter()
            .map(|f| match f {
                Factor::Covariate(c) => c.clone(),
                Factor::Time(k) => format!("t^{k}"),
            })
            .collect();
        if parts.is_empty() {
            parts.push("1".into());
        }
        parts.join("*")
    }

    fn value(&self, kind: RecordKind, t: f64, covs: &dyn CovariateLookup) -> Result<f64> {
        if !self.applies(kind) {
            return Ok(0.0);
        }
        let mut v = 1.0;
        for f in &self.factors {
            v *= match f {
                Factor::Covariate(name) => covs
                    .covariate(name, t)
                    .ok_or_else(|| Error::UnknownCovariate(name.clone()))?,
                Factor::Time(k) => t.powi(*k as i32),
            };
        }
        Ok(v)
    }
}

pub fn kind_label(kind: RecordKind) -> String {
    match kind {
        RecordKind::Transition { from, to } => format!("{from}->{to}"),
        RecordKind::Sojourn { state } => format!("in{state}"),
    }
}

/// Source of covariate values by name at a time.
pub trait CovariateLookup {
    fn covariate(&self, name: &str, t: f64) -> Option<f64>;
}

impl CovariateLookup for BTreeMap<String, f64> {
    fn covariate(&self, name: &str, _t: f64) -> Option<f64> {
        self.get(name).copied()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DesignFormula {
    pub terms: Vec<Term>,
}

impl DesignFormula {
    pub fn new(terms: Vec<Term>) -> Self {
        Self { terms }
    }

    /// One dummy per kind (no common intercept).
    pub fn dummies(kinds: &[RecordKind]) -> Self {
        Self::new(kinds.iter().map(|&k| Term::dummy(k)).collect())
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn labels(&self) -> Vec<String> {
        self.terms.iter().map(Term::label).collect()
    }

    pub fn row(&self, kind: RecordKind, t: f64, covs: &dyn CovariateLookup) -> Result<Vec<f64>> {
        self.terms.iter().map(|term| term.value(kind, t, covs)).collect()
    }

    /// Whether some term is active for `kind`.
    pub fn covers(&self, kind: RecordKind) -> bool {
        self.terms.iter().any(|t| t.applies(kind))
    }

    pub fn uses_time(&self) -> bool {
        self.terms
            .iter()
            .any(|t| t.factors.iter().any(|f| matches!(f, Factor::Time(k) if *k > 0)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rows_respect_filters_and_interactions() {
        let k01 = RecordKind::transition(0, 1);
        let k02 = RecordKind::transition(0, 2);
        let f = DesignFormula::new(vec![
            Term::dummy(k01),
            Term::dummy(k02),
            Term::time(1).only(vec![k01]),
            Term::covariate("x").times(Factor::Time(2)),
        ]);
        let covs: BTreeMap<String, f64> = [("x".to_string(), 2.0)].into_iter().collect();
        assert_eq!(f.row(k01, 3.0, &covs).unwrap(), vec![1.0, 0.0, 3.0, 18.0]);
        assert_eq!(f.row(k02, 3.0, &covs).unwrap(), vec![0.0, 1.0, 0.0, 18.0]);
        assert!(f.covers(k02));
        assert!(f.uses_time());
    }

    #[test]
    fn missing_covariate_is_an_error() {
        let f = DesignFormula::new(vec![Term::covariate("age")]);
        let covs = BTreeMap::new();
        let err = f.row(RecordKind::sojourn(0), 1.0, &covs).unwrap_err();
        assert_eq!(err.invariant(), "UnknownCovariate");
    }

    #[test]
    fn formula_round_trips_through_json() {
        let f = DesignFormula::new(vec![
            Term::intercept(),
            Term::dummy(RecordKind::sojourn(1)),
            Term::covariate("z").only(vec![RecordKind::transition(1, 2)]),
        ]);
        let s = serde_json::to_string(&f).unwrap();
        let back: DesignFormula = serde_json::from_str(&s).unwrap();
        assert_eq!(f, back);
    }
}
