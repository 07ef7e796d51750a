//! Flat `key = value` config files: the run config shared by train/ablate
//! and the generator spec. One key per line, `#` comments, no nesting.

use std::path::{Path, PathBuf};

use cdcl_core::data::WindowSpec;
use cdcl_core::encoder::EncoderConfig;
use cdcl_core::losses::{LossConfig, Mode};
use cdcl_core::synth::{SynthSpec, TypeMix};
use cdcl_core::trainer::TrainConfig;
use cdcl_core::{Error, Result};

/// Everything a training run needs, with library defaults filled in.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub train_csv: Option<PathBuf>,
    pub test_csv: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub window: usize,
    pub suspect_offset: usize,
    pub stride: usize,
    pub hidden_dim: usize,
    pub block_count: usize,
    pub kernel_set: Vec<usize>,
    pub dilation_base: usize,
    pub transform_count: usize,
    pub mode: Mode,
    pub temperature: f64,
    pub hinge_target: f64,
    pub epsilon: f64,
    pub lambda: f64,
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub val_fraction: f64,
    pub seed: u64,
    pub normalize: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            train_csv: None,
            test_csv: None,
            out_dir: PathBuf::from("."),
            window: 30,
            suspect_offset: 5,
            stride: 1,
            hidden_dim: 32,
            block_count: 8,
            kernel_set: vec![2, 3, 6, 7],
            dilation_base: 2,
            transform_count: 6,
            mode: Mode::Cdcl,
            temperature: 0.1,
            hinge_target: 1.0,
            epsilon: 1e-4,
            lambda: 1e-4,
            learning_rate: 1e-3,
            max_epochs: 50,
            patience: 10,
            batch_size: 64,
            val_fraction: 0.2,
            seed: 0,
            normalize: true,
        }
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (row, key, value) in read_kv_file(path)? {
            cfg.apply(&key, &value).map_err(|e| Error::Parse {
                path: path.display().to_string(),
                row,
                message: e.to_string(),
            })?;
        }
        Ok(cfg)
    }

    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "train_csv" => self.train_csv = Some(PathBuf::from(value)),
            "test_csv" => self.test_csv = Some(PathBuf::from(value)),
            "out_dir" => self.out_dir = PathBuf::from(value),
            "window" => self.window = parse_num("window", value)?,
            "suspect_offset" => self.suspect_offset = parse_num("suspect_offset", value)?,
            "stride" => self.stride = parse_num("stride", value)?,
            "hidden_dim" => self.hidden_dim = parse_num("hidden_dim", value)?,
            "block_count" => self.block_count = parse_num("block_count", value)?,
            "kernel_set" => self.kernel_set = parse_list("kernel_set", value)?,
            "dilation_base" => self.dilation_base = parse_num("dilation_base", value)?,
            "transform_count" => self.transform_count = parse_num("transform_count", value)?,
            "mode" => self.mode = value.parse()?,
            "temperature" => self.temperature = parse_num("temperature", value)?,
            "hinge_target" => self.hinge_target = parse_num("hinge_target", value)?,
            "epsilon" => self.epsilon = parse_num("epsilon", value)?,
            "lambda" => self.lambda = parse_num("lambda", value)?,
            "learning_rate" => self.learning_rate = parse_num("learning_rate", value)?,
            "max_epochs" => self.max_epochs = parse_num("max_epochs", value)?,
            "patience" => self.patience = parse_num("patience", value)?,
            "batch_size" => self.batch_size = parse_num("batch_size", value)?,
            "val_fraction" => self.val_fraction = parse_num("val_fraction", value)?,
            "seed" => self.seed = parse_num("seed", value)?,
            "normalize" => self.normalize = parse_bool("normalize", value)?,
            other => {
                return Err(Error::InvalidArgument {
                    field: "config",
                    message: format!("unknown key `{other}`"),
                })
            }
        }
        Ok(())
    }

    /// Full echo in a fixed key order; `from_text` on the result reproduces
    /// the config, which is what the checkpoint header relies on.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        if let Some(p) = &self.train_csv {
            out.push_str(&format!("train_csv = {}\n", p.display()));
        }
        if let Some(p) = &self.test_csv {
            out.push_str(&format!("test_csv = {}\n", p.display()));
        }
        out.push_str(&format!("out_dir = {}\n", self.out_dir.display()));
        out.push_str(&format!("window = {}\n", self.window));
        out.push_str(&format!("suspect_offset = {}\n", self.suspect_offset));
        out.push_str(&format!("stride = {}\n", self.stride));
        out.push_str(&format!("hidden_dim = {}\n", self.hidden_dim));
        out.push_str(&format!("block_count = {}\n", self.block_count));
        let kernels: Vec<String> = self.kernel_set.iter().map(|k| k.to_string()).collect();
        out.push_str(&format!("kernel_set = {}\n", kernels.join(",")));
        out.push_str(&format!("dilation_base = {}\n", self.dilation_base));
        out.push_str(&format!("transform_count = {}\n", self.transform_count));
        out.push_str(&format!("mode = {}\n", self.mode));
        out.push_str(&format!("temperature = {}\n", self.temperature));
        out.push_str(&format!("hinge_target = {}\n", self.hinge_target));
        out.push_str(&format!("epsilon = {}\n", self.epsilon));
        out.push_str(&format!("lambda = {}\n", self.lambda));
        out.push_str(&format!("learning_rate = {}\n", self.learning_rate));
        out.push_str(&format!("max_epochs = {}\n", self.max_epochs));
        out.push_str(&format!("patience = {}\n", self.patience));
        out.push_str(&format!("batch_size = {}\n", self.batch_size));
        out.push_str(&format!("val_fraction = {}\n", self.val_fraction));
        out.push_str(&format!("seed = {}\n", self.seed));
        out.push_str(&format!("normalize = {}\n", self.normalize));
        out
    }

    pub fn window_spec(&self) -> Result<WindowSpec> {
        WindowSpec::new(self.window, self.suspect_offset, self.stride)
    }

    pub fn encoder_config(&self) -> EncoderConfig {
        EncoderConfig {
            hidden_dim: self.hidden_dim,
            block_count: self.block_count,
            kernel_set: self.kernel_set.clone(),
            dilation_base: self.dilation_base,
            seed: self.seed,
        }
    }

    pub fn loss_config(&self) -> LossConfig<f64> {
        let mut lc = LossConfig::new(self.mode);
        lc.temperature = self.temperature;
        lc.hinge_target = self.hinge_target;
        lc.epsilon = self.epsilon;
        lc.lambda = self.lambda;
        lc
    }

    pub fn train_config(&self) -> TrainConfig<f64> {
        TrainConfig {
            learning_rate: self.learning_rate,
            max_epochs: self.max_epochs,
            patience: self.patience,
            batch_size: self.batch_size,
            val_fraction: self.val_fraction,
            seed: self.seed,
        }
    }

    /// Seed for the transformation bank, decorrelated from the encoder's.
    pub fn bank_seed(&self) -> u64 {
        self.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) | 1
    }

    /// Range checks via the owning types plus path existence for any path
    /// that is set. `require_test` is on for commands that score.
    pub fn validate(&self, require_test: bool) -> Result<()> {
        self.window_spec()?;
        self.encoder_config().validate()?;
        self.loss_config().validate()?;
        self.train_config().validate()?;
        if self.transform_count < 1 {
            return Err(Error::invalid("transform_count", "need K >= 1"));
        }
        let train = self
            .train_csv
            .as_ref()
            .ok_or_else(|| Error::invalid("train_csv", "no training data path set"))?;
        if !train.exists() {
            return Err(Error::invalid("train_csv", format!("{} does not exist", train.display())));
        }
        if require_test && self.test_csv.is_none() {
            return Err(Error::invalid("test_csv", "no test data path set"));
        }
        if let Some(test) = &self.test_csv {
            if !test.exists() {
                return Err(Error::invalid("test_csv", format!("{} does not exist", test.display())));
            }
        }
        Ok(())
    }
}

/// Generator spec file; same line format, synthetic-data keys.
pub fn synth_spec_from_file(path: &Path) -> Result<SynthSpec<f64>> {
    let mut spec = SynthSpec::default();
    let mut mix = TypeMix {
        global_point: 0.5,
        contextual_point: 0.5,
        shapelet: 0.0,
        seasonal: 0.0,
        trend: 0.0,
    };
    for (row, key, value) in read_kv_file(path)? {
        let res = match key.as_str() {
            "train_length" => parse_num("train_length", &value).map(|v| spec.train_length = v),
            "test_length" => parse_num("test_length", &value).map(|v| spec.test_length = v),
            "period" => parse_num("period", &value).map(|v| spec.period = v),
            "amplitude" => parse_num("amplitude", &value).map(|v| spec.amplitude = v),
            "noise_std" => parse_num("noise_std", &value).map(|v| spec.noise_std = v),
            "anomaly_ratio" => parse_num("anomaly_ratio", &value).map(|v| spec.anomaly_ratio = v),
            "seed" => parse_num("seed", &value).map(|v| spec.seed = v),
            "mix_global" => parse_num("mix_global", &value).map(|v| mix.global_point = v),
            "mix_contextual" => parse_num("mix_contextual", &value).map(|v| mix.contextual_point = v),
            "mix_shapelet" => parse_num("mix_shapelet", &value).map(|v| mix.shapelet = v),
            "mix_seasonal" => parse_num("mix_seasonal", &value).map(|v| mix.seasonal = v),
            "mix_trend" => parse_num("mix_trend", &value).map(|v| mix.trend = v),
            other => Err(Error::InvalidArgument {
                field: "config",
                message: format!("unknown key `{other}`"),
            }),
        };
        res.map_err(|e| Error::Parse {
            path: path.display().to_string(),
            row,
            message: e.to_string(),
        })?;
    }
    spec.mix = mix;
    Ok(spec)
}

/// Lines of `key = value`, with the 1-based row kept for error messages.
pub fn read_kv_file(path: &Path) -> Result<Vec<(usize, String, String)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    parse_kv_text(&text, &path.display().to_string())
}

pub fn parse_kv_text(text: &str, origin: &str) -> Result<Vec<(usize, String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::Parse {
                path: origin.to_string(),
                row: i + 1,
                message: format!("expected `key = value`, got `{line}`"),
            });
        };
        out.push((i + 1, k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

fn parse_num<T: std::str::FromStr>(field: &'static str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::invalid(field, format!("cannot parse `{value}`")))
}

fn parse_bool(field: &'static str, value: &str) -> Result<bool> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        other => Err(Error::invalid(field, format!("expected true or false, got `{other}`"))),
    }
}

fn parse_list(field: &'static str, value: &str) -> Result<Vec<usize>> {
    value
        .split(',')
        .map(|part| parse_num(field, part.trim()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_echo_and_reparse() {
        let cfg = RunConfig::default();
        let mut re = RunConfig::default();
        for (_, k, v) in parse_kv_text(&cfg.to_text(), "echo").unwrap() {
            re.apply(&k, &v).unwrap();
        }
        assert_eq!(cfg, re);
    }

    #[test]
    fn unknown_mode_names_the_field() {
        let mut cfg = RunConfig::default();
        let err = cfg.apply("mode", "FOO").unwrap_err().to_string();
        assert!(err.contains("mode") && err.contains("FOO"), "{err}");
    }

    #[test]
    fn unknown_key_rejected() {
        let mut cfg = RunConfig::default();
        let err = cfg.apply("wibble", "3").unwrap_err().to_string();
        assert!(err.contains("wibble"), "{err}");
    }

    #[test]
    fn kernel_list_and_comments_parse() {
        let text = "# comment\n\nkernel_set = 2, 3, 5\nwindow=26\n";
        let mut cfg = RunConfig::default();
        for (_, k, v) in parse_kv_text(text, "inline").unwrap() {
            cfg.apply(&k, &v).unwrap();
        }
        assert_eq!(cfg.kernel_set, vec![2, 3, 5]);
        assert_eq!(cfg.window, 26);
    }

    #[test]
    fn missing_equals_reports_row() {
        let err = parse_kv_text("window = 3\nnonsense", "x").unwrap_err().to_string();
        assert!(err.contains("row 2"), "{err}");
    }

    #[test]
    fn bad_number_names_field() {
        let mut cfg = RunConfig::default();
        let err = cfg.apply("window", "abc").unwrap_err().to_string();
        assert!(err.contains("window"), "{err}");
    }
}
