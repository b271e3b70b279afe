use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

/// Outcome of one formula-versus-oracle comparison.
///
/// Maps are ordered so that serialisation is byte-stable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub check_name: String,
    pub inputs: BTreeMap<String, Value>,
    pub values: BTreeMap<String, f64>,
    pub residuals: BTreeMap<String, f64>,
    pub tolerances: BTreeMap<String, f64>,
    pub pass: bool,
}

impl VerificationReport {
    pub fn new(check_name: impl Into<String>) -> Self {
        VerificationReport {
            check_name: check_name.into(),
            inputs: BTreeMap::new(),
            values: BTreeMap::new(),
            residuals: BTreeMap::new(),
            tolerances: BTreeMap::new(),
            pass: true,
        }
    }

    pub fn input(mut self, key: &str, value: impl Into<Value>) -> Self {
        self.inputs.insert(key.to_owned(), value.into());
        self
    }

    pub fn value(mut self, key: &str, value: f64) -> Self {
        self.values.insert(key.to_owned(), value);
        self
    }

    /// Record `residual` and require `residual <= tol` (NaN fails).
    pub fn at_most(mut self, key: &str, residual: f64, tol: f64) -> Self {
        self.residuals.insert(key.to_owned(), residual);
        self.tolerances.insert(key.to_owned(), tol);
        self.pass &= residual <= tol;
        self
    }

    /// Record `value` and require `value > bound`. The bound is stored under
    /// `<key>_min`.
    pub fn greater_than(mut self, key: &str, value: f64, bound: f64) -> Self {
        self.values.insert(key.to_owned(), value);
        self.tolerances.insert(format!("{key}_min"), bound);
        self.pass &= value > bound;
        self
    }

    pub fn fail(mut self) -> Self {
        self.pass = false;
        self
    }

    pub fn seed(&self) -> Option<u64> {
        self.inputs.get("seed").and_then(Value::as_u64)
    }

    pub fn trial(&self) -> Option<u64> {
        self.inputs.get("trial").and_then(Value::as_u64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pass_tracks_every_check() {
        let r = VerificationReport::new("x")
            .at_most("a", 1e-13, 1e-12)
            .greater_than("b", 0.2, 0.05);
        assert!(r.pass);
        assert_eq!(r.tolerances["b_min"], 0.05);
        assert!(!r.clone().at_most("c", f64::NAN, 1.0).pass);
        assert!(!r.clone().greater_than("d", 0.01, 0.05).pass);
    }

    #[test]
    fn json_layout_is_stable() {
        let r = VerificationReport::new("demo")
            .input("seed", 3u64)
            .input("n", 2u64)
            .value("det", 0.5)
            .at_most("err", 0.0, 1e-10);
        let s = serde_json::to_string(&r).unwrap();
        assert_eq!(
            s,
            r#"{"check_name":"demo","inputs":{"n":2,"seed":3},"values":{"det":0.5},"residuals":{"err":0.0},"tolerances":{"err":1e-10},"pass":true}"#
        );
        assert_eq!(r.seed(), Some(3));
    }
}
