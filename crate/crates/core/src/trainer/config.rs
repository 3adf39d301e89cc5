use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::diffkernel::ModelDims;
use crate::error::{Error, Result};
use crate::model::{Ablation, ModelOptions};
use crate::objective::{check_lambda, RecomLoss};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Flags {
    /// Plain cross-entropy instead of binary cross-entropy over the softmax.
    pub ce_loss: bool,
    /// Attention value is the user embedding rather than the sessions.
    pub simnet_literal_eq15: bool,
    /// One message transform for both GGNN edge directions.
    pub ggnn_shared_w: bool,
}

/// Where per-epoch validation metrics come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValidationSource {
    /// The last `val_fraction` of each user's training sessions, held out
    /// from fitting.
    #[default]
    Holdout,
    /// The test sessions; nothing is held out.
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub d: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Epochs between learning-rate decays.
    pub lr_step: usize,
    pub lr_gamma: f64,
    pub epochs: usize,
    pub lambda: f64,
    pub neg_ratio: usize,
    pub tau: f64,
    #[serde(rename = "K_local", alias = "k_local")]
    pub k_local: usize,
    #[serde(rename = "K_global", alias = "k_global")]
    pub k_global: usize,
    pub seed: u64,
    pub validation: ValidationSource,
    pub val_fraction: f64,
    /// Batch size used for scoring; does not affect results.
    pub eval_batch_size: usize,
    pub flags: Flags,
    pub ablation: Ablation,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            d: 128,
            batch_size: 128,
            lr: 1e-4,
            lr_step: 3,
            lr_gamma: 0.1,
            epochs: 10,
            lambda: 0.3,
            neg_ratio: 2,
            tau: 0.5,
            k_local: 1,
            k_global: 1,
            seed: 0,
            validation: ValidationSource::Holdout,
            val_fraction: 0.1,
            eval_batch_size: 512,
            flags: Flags::default(),
            ablation: Ablation::default(),
        }
    }
}

/// The reference hyperparameter grid.
pub const REFERENCE_D: [usize; 3] = [128, 256, 512];
pub const REFERENCE_BATCH: [usize; 3] = [128, 256, 512];
pub const REFERENCE_LR: [f64; 3] = [1e-4, 5e-5, 1e-5];

impl TrainConfig {
    /// Parses a JSON document, reporting keys that do not exist as
    /// [`Error::UnknownKey`].
    pub fn from_value(value: Value) -> Result<Self> {
        let template = serde_json::to_value(TrainConfig::default())?;
        check_known_keys(&template, &value, "")?;
        let config: TrainConfig = serde_json::from_value(value)?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        Self::from_value(serde_json::from_str(text)?)
    }

    /// Applies `key.path=value` overrides; values parse as JSON and fall
    /// back to plain strings.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self> {
        let parsed = overrides
            .iter()
            .map(|o| {
                let o = o.as_ref();
                let (key, raw) = o
                    .split_once('=')
                    .ok_or_else(|| Error::Config(format!("override {o:?} is not key=value")))?;
                let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_owned()));
                Ok((key.to_owned(), value))
            })
            .collect::<Result<Vec<_>>>()?;
        self.with_values(&parsed)
    }

    /// Sets dotted keys to JSON values.
    pub fn with_values(&self, values: &[(String, Value)]) -> Result<Self> {
        let mut doc = serde_json::to_value(self)?;
        for (key, v) in values {
            set_dotted(&mut doc, key, v.clone())?;
        }
        Self::from_value(doc)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.d == 0 {
            return bad("d must be positive".into());
        }
        if self.batch_size == 0 || self.eval_batch_size == 0 {
            return bad("batch sizes must be positive".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if self.lr_step == 0 {
            return bad("lr_step must be positive".into());
        }
        if !(self.lr_gamma > 0.0 && self.lr_gamma <= 1.0) {
            return bad(format!("lr_gamma must lie in (0, 1], got {}", self.lr_gamma));
        }
        if self.epochs == 0 {
            return bad("epochs must be positive".into());
        }
        check_lambda(self.lambda)?;
        if self.neg_ratio == 0 {
            return bad("neg_ratio must be a positive integer".into());
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return bad(format!("tau must be positive, got {}", self.tau));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return bad(format!("val_fraction must lie in [0, 1), got {}", self.val_fraction));
        }
        Ok(())
    }

    /// Whether `d`, `batch_size` and `lr` all lie on the reference grid.
    pub fn in_reference_grid(&self) -> bool {
        REFERENCE_D.contains(&self.d) && REFERENCE_BATCH.contains(&self.batch_size) && REFERENCE_LR.contains(&self.lr)
    }

    pub fn model_dims(&self, n_items: usize, n_users: usize) -> ModelDims {
        ModelDims {
            d: self.d,
            n_items,
            n_users,
            k_global: self.k_global,
            ggnn_shared_w: self.flags.ggnn_shared_w,
        }
    }

    pub fn model_options(&self) -> ModelOptions {
        ModelOptions {
            k_local: self.k_local,
            k_global: self.k_global,
            ggnn_shared_w: self.flags.ggnn_shared_w,
            simnet_literal_value: self.flags.simnet_literal_eq15,
            recom_loss: if self.flags.ce_loss {
                RecomLoss::CrossEntropy
            } else {
                RecomLoss::BceOverSoftmax
            },
            ablation: self.ablation,
            lambda: if self.ablation.no_contrastive { 0.0 } else { self.lambda },
            tau: self.tau,
        }
    }

    /// Learning rate used during epoch `epoch` (0-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr * self.lr_gamma.powi((epoch / self.lr_step) as i32)
    }

    /// First 16 hex digits of the SHA-256 of the canonical JSON form.
    pub fn config_hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        hex::encode(&Sha256::digest(canonical.as_bytes())[..8])
    }
}

fn check_known_keys(template: &Value, value: &Value, prefix: &str) -> Result<()> {
    let (Value::Object(t), Value::Object(v)) = (template, value) else {
        return Ok(());
    };
    for (k, child) in v {
        let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        let canonical = match k.as_str() {
            "k_local" => "K_local",
            "k_global" => "K_global",
            other => other,
        };
        match t.get(canonical) {
            Some(tc) => check_known_keys(tc, child, &path)?,
            None => return Err(Error::UnknownKey(path)),
        }
    }
    Ok(())
}

fn set_dotted(root: &mut Value, key: &str, new: Value) -> Result<()> {
    let mut cur = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let part = match *part {
            "k_local" => "K_local",
            "k_global" => "K_global",
            p => p,
        };
        let obj = cur.as_object_mut().ok_or_else(|| Error::UnknownKey(key.to_owned()))?;
        let slot = obj.get_mut(part).ok_or_else(|| Error::UnknownKey(key.to_owned()))?;
        if i + 1 == parts.len() {
            *slot = new;
            return Ok(());
        }
        cur = slot;
    }
    Err(Error::UnknownKey(key.to_owned()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_and_validate() {
        let c = TrainConfig::default();
        c.validate().unwrap();
        assert!(c.in_reference_grid());
        let text = serde_json::to_string(&c).unwrap();
        assert!(text.contains("\"K_local\""));
        assert_eq!(TrainConfig::from_json_str(&text).unwrap(), c);
    }

    #[test]
    fn overrides_reach_nested_fields() {
        let c = TrainConfig::default()
            .with_overrides(&["lambda=0.7", "ablation.no_local=true", "validation=test", "K_global=2"])
            .unwrap();
        assert_eq!(c.lambda, 0.7);
        assert!(c.ablation.no_local);
        assert_eq!(c.validation, ValidationSource::Test);
        assert_eq!(c.k_global, 2);
        assert_ne!(c.config_hash(), TrainConfig::default().config_hash());
    }

    #[test]
    fn unknown_keys_are_reported() {
        let err = TrainConfig::default().with_overrides(&["ablation.no_thing=true"]).unwrap_err();
        assert!(matches!(err, Error::UnknownKey(k) if k == "ablation.no_thing"));
        let err = TrainConfig::from_json_str(r#"{"learning_rate": 0.1}"#).unwrap_err();
        assert!(matches!(err, Error::UnknownKey(_)));
        assert!(matches!(
            TrainConfig::from_json_str(r#"{"lambda": 1.5}"#),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn step_schedule() {
        let c = TrainConfig {
            lr: 1e-3,
            lr_step: 3,
            lr_gamma: 0.1,
            ..TrainConfig::default()
        };
        let expect = [1e-3, 1e-3, 1e-3, 1e-3 * 0.1, 1e-3 * 0.1, 1e-3 * 0.1, 1e-3 * 0.1 * 0.1];
        for (e, want) in expect.iter().enumerate() {
            assert_eq!(c.lr_at(e), 1e-3 * 0.1f64.powi((e / 3) as i32));
            assert!((c.lr_at(e) - want).abs() < 1e-18);
        }
    }
}
