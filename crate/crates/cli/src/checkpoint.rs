//! Trained-model container: a text header (format version, config echo,
//! training summary, array directory) followed by raw little-endian f64
//! arrays. Self-describing, language-neutral, and byte-deterministic —
//! identical runs produce identical files, so wall time stays out of it.

use std::path::Path;

use cdcl_core::data::NormalizationStats;
use cdcl_core::encoder::EncoderState;
use cdcl_core::losses::LossConfig;
use cdcl_core::tensor::Tensor;
use cdcl_core::trainer::TrainReport;
use cdcl_core::transforms::TransformBank;
use cdcl_core::{Error, Result};

use crate::config::{parse_kv_text, RunConfig};

const MAGIC: &str = "CDCLCKPT v1";

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub in_channels: usize,
    /// Training summary; `wall_seconds` is not serialized and loads as 0.
    pub report: TrainReport<f64>,
    pub encoder: EncoderState<f64>,
    pub bank: TransformBank<f64>,
    pub occ_center: Option<Tensor<f64>>,
    pub norm: Option<NormalizationStats<f64>>,
}

impl Checkpoint {
    /// Loss configuration for scoring: config fields plus the frozen
    /// one-class center when the checkpoint carries one.
    pub fn loss_config(&self) -> LossConfig<f64> {
        let mut lc = self.config.loss_config();
        lc.occ_center = self.occ_center.clone();
        lc
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut names: Vec<String> = Vec::new();
        let mut arrays: Vec<&Tensor<f64>> = Vec::new();
        for (name, t) in self.encoder.param_names().into_iter().zip(self.encoder.params()) {
            names.push(name);
            arrays.push(t);
        }
        for (bi, block) in self.encoder.blocks.iter().enumerate() {
            names.push(format!("encoder.block{bi}.bn_running_mean"));
            arrays.push(&block.bn_running_mean);
            names.push(format!("encoder.block{bi}.bn_running_var"));
            arrays.push(&block.bn_running_var);
        }
        for (name, t) in self.bank.param_names().into_iter().zip(self.bank.params()) {
            names.push(name);
            arrays.push(t);
        }
        if let Some(c) = &self.occ_center {
            names.push("loss.occ_center".into());
            arrays.push(c);
        }
        let norm_tensors;
        if let Some(n) = &self.norm {
            norm_tensors = (
                Tensor::from_vec(vec![n.min.len()], n.min.clone())?,
                Tensor::from_vec(vec![n.max.len()], n.max.clone())?,
            );
            names.push("norm.min".into());
            arrays.push(&norm_tensors.0);
            names.push("norm.max".into());
            arrays.push(&norm_tensors.1);
        }

        let mut header = String::new();
        header.push_str(MAGIC);
        header.push('\n');
        header.push_str("[config]\n");
        header.push_str(&self.config.to_text());
        header.push_str("[meta]\n");
        header.push_str(&format!("in_channels = {}\n", self.in_channels));
        header.push_str("[report]\n");
        header.push_str(&format!("best_epoch = {}\n", self.report.best_epoch));
        header.push_str(&format!("stopped_early = {}\n", self.report.stopped_early));
        header.push_str(&format!("train_losses = {}\n", join_floats(&self.report.train_losses)));
        header.push_str(&format!("val_losses = {}\n", join_floats(&self.report.val_losses)));
        header.push_str("[arrays]\n");

        let mut blob: Vec<u8> = Vec::new();
        for (name, t) in names.iter().zip(&arrays) {
            let dims: Vec<String> = t.shape().iter().map(|d| d.to_string()).collect();
            header.push_str(&format!(
                "{name} {} {} {}\n",
                dims.join(","),
                blob.len(),
                t.numel()
            ));
            for &v in t.data() {
                blob.extend_from_slice(&v.to_le_bytes());
            }
        }
        header.push_str("[end]\n");

        let mut bytes = header.into_bytes();
        bytes.extend_from_slice(&blob);
        std::fs::write(path, bytes).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let origin = path.display().to_string();
        let bytes = std::fs::read(path).map_err(|e| Error::io(origin.clone(), e))?;
        // The marker must own a whole line, so look for it newline-anchored.
        let marker = b"\n[end]\n";
        let end = find_subslice(&bytes, marker).ok_or_else(|| parse_err(&origin, "missing [end] marker"))?;
        let header = std::str::from_utf8(&bytes[..end + 1])
            .map_err(|_| parse_err(&origin, "header is not UTF-8"))?;
        let blob = &bytes[end + marker.len()..];

        let mut lines = header.lines();
        let first = lines.next().unwrap_or_default();
        if first != MAGIC {
            return Err(parse_err(
                &origin,
                format!("unsupported checkpoint version `{first}` (expected `{MAGIC}`)"),
            ));
        }

        let mut section = String::new();
        let mut config_text = String::new();
        let mut in_channels: Option<usize> = None;
        let mut report = TrainReport::<f64> {
            train_losses: Vec::new(),
            val_losses: Vec::new(),
            best_epoch: 0,
            stopped_early: false,
            wall_seconds: 0.0,
        };
        struct Entry {
            shape: Vec<usize>,
            offset: usize,
            len: usize,
        }
        let mut directory: Vec<(String, Entry)> = Vec::new();
        for raw in lines {
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            if line.starts_with('[') {
                section = line.to_string();
                continue;
            }
            match section.as_str() {
                "[config]" => {
                    config_text.push_str(line);
                    config_text.push('\n');
                }
                "[meta]" | "[report]" => {
                    let (k, v) = line
                        .split_once('=')
                        .ok_or_else(|| parse_err(&origin, format!("bad metadata line `{line}`")))?;
                    let (k, v) = (k.trim(), v.trim());
                    match k {
                        "in_channels" => in_channels = Some(parse_field(&origin, k, v)?),
                        "best_epoch" => report.best_epoch = parse_field(&origin, k, v)?,
                        "stopped_early" => report.stopped_early = parse_field(&origin, k, v)?,
                        "train_losses" => report.train_losses = split_floats(&origin, v)?,
                        "val_losses" => report.val_losses = split_floats(&origin, v)?,
                        other => return Err(parse_err(&origin, format!("unknown metadata key `{other}`"))),
                    }
                }
                "[arrays]" => {
                    let parts: Vec<&str> = line.split_whitespace().collect();
                    if parts.len() != 4 {
                        return Err(parse_err(&origin, format!("bad array line `{line}`")));
                    }
                    let shape: Vec<usize> = parts[1]
                        .split(',')
                        .map(|d| parse_field(&origin, "shape", d))
                        .collect::<Result<_>>()?;
                    directory.push((
                        parts[0].to_string(),
                        Entry {
                            shape,
                            offset: parse_field(&origin, "offset", parts[2])?,
                            len: parse_field(&origin, "len", parts[3])?,
                        },
                    ));
                }
                other => return Err(parse_err(&origin, format!("content outside a known section: `{other}`"))),
            }
        }

        let mut config = RunConfig::default();
        for (_, k, v) in parse_kv_text(&config_text, &origin)? {
            config.apply(&k, &v)?;
        }
        let in_channels = in_channels.ok_or_else(|| parse_err(&origin, "missing in_channels"))?;

        let fetch = |name: &str, want_shape: &[usize]| -> Result<Tensor<f64>> {
            let entry = directory
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, e)| e)
                .ok_or_else(|| parse_err(&origin, format!("missing array `{name}`")))?;
            if entry.shape != want_shape {
                return Err(parse_err(
                    &origin,
                    format!("array `{name}` has shape {:?}, expected {:?}", entry.shape, want_shape),
                ));
            }
            let bytes_needed = entry
                .len
                .checked_mul(8)
                .and_then(|n| entry.offset.checked_add(n))
                .filter(|&end| end <= blob.len())
                .ok_or_else(|| parse_err(&origin, format!("array `{name}` exceeds the data blob")))?;
            let data: Vec<f64> = blob[entry.offset..bytes_needed]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
                .collect();
            Tensor::from_vec(entry.shape.clone(), data)
        };

        let has_bias = !config.mode.strips_bias();
        let mut encoder = EncoderState::init(config.encoder_config(), in_channels, has_bias)?;
        let names = encoder.param_names();
        for (name, slot) in names.iter().zip(encoder.params_mut()) {
            *slot = fetch(name, slot.shape())?;
        }
        for (bi, block) in encoder.blocks.iter_mut().enumerate() {
            block.bn_running_mean = fetch(
                &format!("encoder.block{bi}.bn_running_mean"),
                block.bn_running_mean.shape(),
            )?;
            block.bn_running_var = fetch(
                &format!("encoder.block{bi}.bn_running_var"),
                block.bn_running_var.shape(),
            )?;
        }
        let mut bank = TransformBank::init(config.transform_count, config.hidden_dim, config.bank_seed())?;
        let bank_names = bank.param_names();
        for (name, slot) in bank_names.iter().zip(bank.params_mut()) {
            *slot = fetch(name, slot.shape())?;
        }
        let occ_center = if directory.iter().any(|(n, _)| n == "loss.occ_center") {
            Some(fetch("loss.occ_center", &[config.hidden_dim])?)
        } else {
            None
        };
        let norm = if directory.iter().any(|(n, _)| n == "norm.min") {
            Some(NormalizationStats {
                min: fetch("norm.min", &[in_channels])?.data().to_vec(),
                max: fetch("norm.max", &[in_channels])?.data().to_vec(),
            })
        } else {
            None
        };

        Ok(Checkpoint {
            config,
            in_channels,
            report,
            encoder,
            bank,
            occ_center,
            norm,
        })
    }
}

fn join_floats(vals: &[f64]) -> String {
    vals.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

fn split_floats(origin: &str, text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .filter(|p| !p.trim().is_empty())
        .map(|p| parse_field(origin, "loss value", p.trim()))
        .collect()
}

fn parse_field<T: std::str::FromStr>(origin: &str, what: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| parse_err(origin, format!("cannot parse {what} from `{value}`")))
}

fn parse_err(origin: &str, message: impl Into<String>) -> Error {
    Error::Parse {
        path: origin.to_string(),
        row: 0,
        message: message.into(),
    }
}

fn find_subslice(haystack: &[u8], needle: &[u8]) -> Option<usize> {
    haystack.windows(needle.len()).position(|w| w == needle)
}
