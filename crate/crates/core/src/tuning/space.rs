use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::TuningError;
use crate::models::{GbtParams, KnnParams, MlpParams, ModelFamily, ModelParams, ModelSpec, RmlpParams};
use crate::rng::derive_rng;

/// Distribution of one hyperparameter. Integer and continuous ranges are
/// inclusive of `lo`; integer ranges also include `hi`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Param {
    Continuous {
        lo: f64,
        hi: f64,
        #[serde(default)]
        log: bool,
    },
    Integer {
        lo: i64,
        hi: i64,
    },
    Nominal {
        values: Vec<Value>,
    },
    Binary,
}

impl Param {
    fn validate(&self, name: &str) -> Result<(), TuningError> {
        let err = |m: &str| Err(TuningError::Space(format!("{name}: {m}")));
        match *self {
            Param::Continuous { lo, hi, log } => {
                if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                    return err("needs finite lo < hi");
                }
                if log && lo <= 0.0 {
                    return err("log scale needs a positive range");
                }
            }
            Param::Integer { lo, hi } if lo >= hi => return err("needs lo < hi"),
            Param::Nominal { ref values } if values.is_empty() => return err("no values"),
            _ => {}
        }
        Ok(())
    }

    fn sample(&self, rng: &mut impl Rng) -> Value {
        match self {
            Param::Continuous { lo, hi, log: true } => json!(rng.random_range(lo.ln()..hi.ln()).exp().clamp(*lo, *hi)),
            Param::Continuous { lo, hi, log: false } => json!(rng.random_range(*lo..*hi)),
            Param::Integer { lo, hi } => json!(rng.random_range(*lo..=*hi)),
            Param::Nominal { values } => values.choose(rng).expect("validated non-empty").clone(),
            Param::Binary => json!(rng.random::<bool>()),
        }
    }

    fn contains(&self, v: &Value) -> bool {
        match self {
            Param::Continuous { lo, hi, .. } => v.as_f64().is_some_and(|x| x >= *lo && x <= *hi),
            // integer parameters stored as floats serialize as e.g. `3.0`
            Param::Integer { lo, hi } => v
                .as_f64()
                .is_some_and(|x| x.fract() == 0.0 && x >= *lo as f64 && x <= *hi as f64),
            Param::Nominal { values } => values.iter().any(|c| same_value(c, v)),
            Param::Binary => v.is_boolean(),
        }
    }
}

/// Numbers compare by value so `3` and `3.0` match.
fn same_value(a: &Value, b: &Value) -> bool {
    match (a.as_f64(), b.as_f64()) {
        (Some(x), Some(y)) => x == y,
        _ => a == b,
    }
}

/// Hyperparameter distributions for one model family. Parameters not listed
/// keep the family defaults unless pinned in `fixed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub family: ModelFamily,
    #[serde(default)]
    pub params: BTreeMap<String, Param>,
    #[serde(default)]
    pub fixed: BTreeMap<String, Value>,
}

fn cont(lo: f64, hi: f64, log: bool) -> Param {
    Param::Continuous { lo, hi, log }
}

fn ints(lo: i64, hi: i64) -> Param {
    Param::Integer { lo, hi }
}

fn nominal<T: Into<Value>>(values: impl IntoIterator<Item = T>) -> Param {
    Param::Nominal {
        values: values.into_iter().map(Into::into).collect(),
    }
}

fn default_params(family: ModelFamily) -> ModelParams {
    match family {
        ModelFamily::Knn => ModelParams::Knn(KnnParams::default()),
        ModelFamily::Gbt => ModelParams::Gbt(GbtParams::default()),
        ModelFamily::Mlp => ModelParams::Mlp(MlpParams::default()),
        ModelFamily::Rmlp => ModelParams::Rmlp(RmlpParams::default()),
    }
}

impl SearchSpace {
    /// The published search space for `family`.
    pub fn published(family: ModelFamily) -> Self {
        let mut p = BTreeMap::new();
        let mut put = |k: &str, v: Param| {
            p.insert(k.to_string(), v);
        };
        match family {
            ModelFamily::Knn => {
                put("k", ints(1, 33));
                put("metric", nominal(["L1", "L2"]));
            }
            ModelFamily::Gbt => {
                put("eta", cont(1e-3, 1.0, true));
                put("lambda", cont(1e-10, 1.0, true));
                put("alpha", cont(1e-10, 1.0, true));
                put("gamma", cont(1e-1, 1.0, true));
                put("num_round", ints(1, 100));
                put("max_depth", ints(1, 20));
                put("max_delta_step", ints(0, 10));
                put("min_child_weight", cont(0.1, 20.0, true));
                put("subsample", cont(0.01, 1.0, false));
                put("colsample_bylevel", cont(0.1, 1.0, false));
                put("colsample_bynode", cont(0.1, 1.0, false));
                put("colsample_bytree", cont(0.5, 1.0, false));
            }
            ModelFamily::Mlp | ModelFamily::Rmlp => {
                put("hidden_layers", nominal([3, 6, 9]));
                put("units", nominal([128, 256, 512]));
                put("learning_rate", cont(1e-3, 1e-1, true));
                if family == ModelFamily::Rmlp {
                    put("dropout", cont(0.0, 0.5, false));
                    put("weight_decay", cont(1e-6, 1e-1, true));
                    // a log scale cannot include 0, so this one is linear
                    put("stddev", cont(0.0, 0.5, false));
                    put("skip", Param::Binary);
                    put("swa", Param::Binary);
                }
            }
        }
        SearchSpace {
            family,
            params: p,
            fixed: BTreeMap::new(),
        }
    }

    /// Check the ranges and that every key names a parameter of the family.
    pub fn validate(&self) -> Result<(), TuningError> {
        for (name, p) in &self.params {
            p.validate(name)?;
        }
        let defaults = self.defaults_json();
        for key in self.params.keys().chain(self.fixed.keys()) {
            if key == "family" || key == "seed" || defaults.get(key).is_none() {
                return Err(TuningError::Space(format!("'{key}' is not a {} parameter", self.family)));
            }
        }
        self.build(BTreeMap::new(), 0).map(|_| ())
    }

    fn defaults_json(&self) -> serde_json::Map<String, Value> {
        match serde_json::to_value(ModelSpec::new(default_params(self.family), 0)) {
            Ok(Value::Object(m)) => m,
            _ => unreachable!("model spec serializes to an object"),
        }
    }

    /// Family defaults, then `fixed`, then `values`.
    fn build(&self, values: BTreeMap<String, Value>, seed: u64) -> Result<ModelSpec, TuningError> {
        let mut obj = self.defaults_json();
        for (k, v) in self.fixed.iter().chain(&values) {
            obj.insert(k.clone(), v.clone());
        }
        obj.insert("seed".into(), json!(seed));
        let spec: ModelSpec =
            serde_json::from_value(Value::Object(obj)).map_err(|e| TuningError::Space(e.to_string()))?;
        spec.params.validate().map_err(|e| TuningError::Space(e.to_string()))?;
        Ok(spec)
    }

    /// True when every searched parameter of `spec` lies in its range.
    pub fn contains(&self, spec: &ModelSpec) -> bool {
        let Ok(Value::Object(obj)) = serde_json::to_value(spec) else {
            return false;
        };
        spec.family() == self.family
            && self
                .params
                .iter()
                .all(|(k, p)| obj.get(k).is_some_and(|v| p.contains(v)))
    }

    pub fn from_toml(text: &str) -> Result<Self, TuningError> {
        let s: SearchSpace = toml::from_str(text).map_err(|e| TuningError::Space(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("search space serializes")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, crate::Error> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| crate::Error::io(path, e))?;
        Ok(Self::from_toml(&text)?)
    }
}

/// Draw every parameter independently; the model seed is `seed`.
pub fn sample_config(space: &SearchSpace, seed: u64) -> Result<ModelSpec, TuningError> {
    space.validate()?;
    let mut rng = derive_rng(seed, &[0x5eac]);
    let values = space
        .params
        .iter()
        .map(|(k, p)| (k.clone(), p.sample(&mut rng)))
        .collect();
    space.build(values, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::Metric;
    use proptest::prelude::*;

    #[test]
    fn nominal_draws_are_balanced() {
        let space = SearchSpace::published(ModelFamily::Knn);
        let l1 = (0..10_000)
            .filter(|&s| match sample_config(&space, s).unwrap().params {
                ModelParams::Knn(p) => p.metric == Metric::L1,
                _ => unreachable!(),
            })
            .count();
        assert!(l1 >= 4500 && l1 <= 5500, "{l1}");
    }

    #[test]
    fn log_uniform_median() {
        let p = cont(1e-3, 1.0, true);
        let mut rng = derive_rng(5, &[]);
        let mut v: Vec<f64> = (0..10_000).map(|_| p.sample(&mut rng).as_f64().unwrap()).collect();
        v.sort_by(f64::total_cmp);
        let median = v[v.len() / 2];
        assert!((0.02..=0.05).contains(&median), "{median}");
    }

    #[test]
    fn same_seed_same_config() {
        for family in ModelFamily::ALL {
            let space = SearchSpace::published(family);
            assert_eq!(sample_config(&space, 9).unwrap(), sample_config(&space, 9).unwrap());
        }
        let gbt = SearchSpace::published(ModelFamily::Gbt);
        assert_ne!(sample_config(&gbt, 1).unwrap(), sample_config(&gbt, 2).unwrap());
    }

    #[test]
    fn fixed_values_are_applied() {
        let mut space = SearchSpace::published(ModelFamily::Mlp);
        space.fixed.insert("max_epochs".into(), json!(7));
        match sample_config(&space, 1).unwrap().params {
            ModelParams::Mlp(p) => assert_eq!(p.max_epochs, 7),
            _ => unreachable!(),
        }
    }

    #[test]
    fn invalid_spaces() {
        let mut s = SearchSpace::published(ModelFamily::Gbt);
        s.params.insert("eta".into(), cont(0.0, 1.0, true));
        assert!(s.validate().is_err());
        let mut s = SearchSpace::published(ModelFamily::Gbt);
        s.params.insert("eta".into(), cont(1.0, 1.0, false));
        assert!(s.validate().is_err());
        let mut s = SearchSpace::published(ModelFamily::Knn);
        s.params.insert("kk".into(), ints(1, 3));
        assert!(s.validate().is_err());
        let mut s = SearchSpace::published(ModelFamily::Knn);
        s.params.insert("metric".into(), nominal(Vec::<Value>::new()));
        assert!(s.validate().is_err());
    }

    #[test]
    fn toml_round_trip() {
        for family in ModelFamily::ALL {
            let s = SearchSpace::published(family);
            assert_eq!(SearchSpace::from_toml(&s.to_toml()).unwrap(), s);
        }
        let s = SearchSpace::from_toml("family = \"knn\"\n[params.k]\ntype = \"integer\"\nlo = 1\nhi = 5\n").unwrap();
        assert_eq!(s.params["k"], ints(1, 5));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]
        #[test]
        fn samples_stay_in_range(seed in any::<u64>(), f in 0usize..4) {
            let space = SearchSpace::published(ModelFamily::ALL[f]);
            let spec = sample_config(&space, seed).unwrap();
            prop_assert!(space.contains(&spec));
        }
    }
}
