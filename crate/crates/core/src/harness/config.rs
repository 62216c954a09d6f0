use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::kv;
use crate::losses::LossWeights;
use crate::networks::Ablation;

/// Environment variable that overrides the master seed.
pub const SEED_ENV: &str = "DASFFT_SEED";

/// Every knob of a training or evaluation run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub resolution: usize,
    pub train_size: usize,
    pub test_size: usize,
    pub pretrain_steps: usize,
    pub dafe_steps: usize,
    pub gan_steps: usize,
    pub lr_generator: f64,
    pub lr_discriminator: f64,
    pub lr_encoder: f64,
    pub batch_size: usize,
    pub weights: LossWeights,
    pub m_range: (usize, usize),
    pub ablation: Ablation,
    pub model_path: PathBuf,
    pub log_path: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            resolution: 64,
            train_size: 200,
            test_size: 50,
            pretrain_steps: 1000,
            dafe_steps: 2000,
            gan_steps: 2000,
            lr_generator: 1e-4,
            lr_discriminator: 4e-4,
            lr_encoder: 1e-3,
            batch_size: 4,
            weights: LossWeights::default(),
            m_range: (1, 3),
            ablation: Ablation::SfftDafe,
            model_path: PathBuf::from("model.dasfft"),
            log_path: PathBuf::from("train_log.csv"),
        }
    }
}

impl RunConfig {
    pub const KEYS: [&'static str; 19] = [
        "seed",
        "resolution",
        "train_size",
        "test_size",
        "pretrain_steps",
        "dafe_steps",
        "gan_steps",
        "lr_generator",
        "lr_discriminator",
        "lr_encoder",
        "batch_size",
        "lambda_s",
        "lambda_rec",
        "lambda_g",
        "m_min",
        "m_max",
        "ablation",
        "model_path",
        "log_path",
    ];

    /// Sets one field from its `key = value` spelling.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "seed" => self.seed = kv::parse_value(key, v)?,
            "resolution" => self.resolution = kv::parse_value(key, v)?,
            "train_size" => self.train_size = kv::parse_value(key, v)?,
            "test_size" => self.test_size = kv::parse_value(key, v)?,
            "pretrain_steps" => self.pretrain_steps = kv::parse_value(key, v)?,
            "dafe_steps" => self.dafe_steps = kv::parse_value(key, v)?,
            "gan_steps" => self.gan_steps = kv::parse_value(key, v)?,
            "lr_generator" => self.lr_generator = kv::parse_value(key, v)?,
            "lr_discriminator" => self.lr_discriminator = kv::parse_value(key, v)?,
            "lr_encoder" => self.lr_encoder = kv::parse_value(key, v)?,
            "batch_size" => self.batch_size = kv::parse_value(key, v)?,
            "lambda_s" => self.weights.lambda_s = kv::parse_value(key, v)?,
            "lambda_rec" => self.weights.lambda_rec = kv::parse_value(key, v)?,
            "lambda_g" => self.weights.lambda_g = kv::parse_value(key, v)?,
            "m_min" => self.m_range.0 = kv::parse_value(key, v)?,
            "m_max" => self.m_range.1 = kv::parse_value(key, v)?,
            "ablation" => self.ablation = v.parse()?,
            "model_path" => self.model_path = PathBuf::from(v),
            "log_path" => self.log_path = PathBuf::from(v),
            other => return Err(Error::invalid(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Parses a `key = value` assignment such as a `--set` argument.
    pub fn set_assignment(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| Error::invalid(format!("expected key=value, got {assignment:?}")))?;
        self.set(k, v)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (k, v) in kv::parse(text)? {
            self.set(&k, &v)?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.apply_text(&text)
    }

    /// Applies the seed override when the variable is set.
    pub fn apply_env_seed(&mut self, value: Option<&str>) -> Result<()> {
        if let Some(v) = value {
            self.seed = kv::parse_value(SEED_ENV, v.trim())?;
        }
        Ok(())
    }

    /// Corpus sizes and batch size must be positive; step counts may be 0.
    pub fn validate(&self) -> Result<()> {
        if self.train_size == 0 || self.test_size == 0 || self.batch_size == 0 {
            return Err(Error::invalid("train_size, test_size and batch_size must be positive"));
        }
        if self.m_range.0 > self.m_range.1 {
            return Err(Error::invalid(format!("m_min {} exceeds m_max {}", self.m_range.0, self.m_range.1)));
        }
        for (name, lr) in [("lr_generator", self.lr_generator), ("lr_discriminator", self.lr_discriminator), ("lr_encoder", self.lr_encoder)] {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(Error::invalid(format!("{name} must be positive, got {lr}")));
            }
        }
        self.weights.validate()?;
        crate::networks::GeneratorConfig::for_resolution(self.resolution)?;
        Ok(())
    }

    pub fn to_kv_text(&self) -> String {
        let mut s = String::new();
        let w = &self.weights;
        let rows: [(&str, String); 19] = [
            ("seed", self.seed.to_string()),
            ("resolution", self.resolution.to_string()),
            ("train_size", self.train_size.to_string()),
            ("test_size", self.test_size.to_string()),
            ("pretrain_steps", self.pretrain_steps.to_string()),
            ("dafe_steps", self.dafe_steps.to_string()),
            ("gan_steps", self.gan_steps.to_string()),
            ("lr_generator", self.lr_generator.to_string()),
            ("lr_discriminator", self.lr_discriminator.to_string()),
            ("lr_encoder", self.lr_encoder.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("lambda_s", w.lambda_s.to_string()),
            ("lambda_rec", w.lambda_rec.to_string()),
            ("lambda_g", w.lambda_g.to_string()),
            ("m_min", self.m_range.0.to_string()),
            ("m_max", self.m_range.1.to_string()),
            ("ablation", self.ablation.to_string()),
            ("model_path", self.model_path.display().to_string()),
            ("log_path", self.log_path.display().to_string()),
        ];
        for (k, v) in rows {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_roundtrip() {
        let c = RunConfig::default();
        assert_eq!((c.lr_generator, c.lr_discriminator, c.batch_size), (1e-4, 4e-4, 4));
        c.validate().unwrap();
        let mut back = RunConfig { seed: 99, ..RunConfig::default() };
        back.apply_text(&c.to_kv_text()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn precedence_file_then_env_then_set() {
        let mut c = RunConfig::default();
        c.apply_text("seed = 5\nbatch_size = 2\n").unwrap();
        c.apply_env_seed(Some("7")).unwrap();
        assert_eq!(c.seed, 7);
        c.set_assignment("seed=9").unwrap();
        assert_eq!((c.seed, c.batch_size), (9, 2));
        c.apply_env_seed(None).unwrap();
        assert_eq!(c.seed, 9);
    }

    #[test]
    fn rejects_bad_values() {
        let mut c = RunConfig::default();
        assert!(c.set("nope", "1").is_err());
        assert!(c.set("ablation", "full").is_err());
        assert!(c.set_assignment("seed").is_err());
        c.batch_size = 0;
        assert!(c.validate().is_err());
        let c = RunConfig { resolution: 48, ..RunConfig::default() };
        assert!(c.validate().is_err());
    }

    #[test]
    fn every_key_is_settable() {
        let mut c = RunConfig::default();
        for k in RunConfig::KEYS {
            let v = match k {
                "ablation" => "sfft_only",
                "model_path" => "m.bin",
                _ => "1",
            };
            c.set(k, v).unwrap();
        }
    }
}
