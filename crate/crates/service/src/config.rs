use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("config line {line}: {msg}")]
    Line { line: usize, msg: String },
    #[error("cannot read config {path}: {msg}")]
    Read { path: String, msg: String },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ServiceConfig {
    pub host: String,
    pub port: u16,
    pub weights: Option<PathBuf>,
    /// When set, the weight file must carry exactly these labels.
    pub labels: Option<Vec<String>>,
    pub examples_dir: Option<PathBuf>,
    /// Web client bundle served under `/` and `/static/`.
    pub static_dir: Option<PathBuf>,
    pub max_upload_bytes: usize,
    pub gradcam_enabled: bool,
    pub gradcam_concurrency: usize,
    /// Largest accepted image side, in pixels.
    pub max_image_side: u32,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            host: "127.0.0.1".into(),
            port: 8080,
            weights: None,
            labels: None,
            examples_dir: None,
            static_dir: None,
            max_upload_bytes: 10 * 1024 * 1024,
            gradcam_enabled: true,
            gradcam_concurrency: 2,
            max_image_side: 8192,
        }
    }
}

fn parse_bool(v: &str) -> Option<bool> {
    match v.to_ascii_lowercase().as_str() {
        "true" | "yes" | "on" | "1" => Some(true),
        "false" | "no" | "off" | "0" => Some(false),
        _ => None,
    }
}

impl ServiceConfig {
    /// Set one `key` from its text value. Keys use `snake_case`; `-` is
    /// accepted in their place.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let bad = |what: &str| format!("{key}: expected {what}, got {value:?}");
        let path = || (!value.is_empty()).then(|| PathBuf::from(value));
        match key.replace('-', "_").as_str() {
            "host" => self.host = value.to_string(),
            "port" => self.port = value.parse().map_err(|_| bad("a port number"))?,
            "weights" => self.weights = path(),
            "labels" => {
                let names: Vec<String> = value.split(['|', ',']).map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect();
                self.labels = (!names.is_empty()).then_some(names);
            }
            "examples_dir" => self.examples_dir = path(),
            "static_dir" => self.static_dir = path(),
            "max_upload_bytes" => self.max_upload_bytes = value.parse().map_err(|_| bad("a byte count"))?,
            "gradcam_enabled" => self.gradcam_enabled = parse_bool(value).ok_or_else(|| bad("true or false"))?,
            "gradcam_concurrency" => self.gradcam_concurrency = value.parse().map_err(|_| bad("a count"))?,
            "max_image_side" => self.max_image_side = value.parse().map_err(|_| bad("a pixel count"))?,
            _ => return Err(format!("unknown key {key:?}")),
        }
        Ok(())
    }

    /// `key: value` lines over the defaults; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split_once('#').map_or(raw, |(l, _)| l).trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once(':')
                .ok_or_else(|| ConfigError::Line { line: i + 1, msg: format!("expected `key: value`, got {line:?}") })?;
            cfg.set(key.trim(), value.trim()).map_err(|msg| ConfigError::Line { line: i + 1, msg })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Read { path: path.display().to_string(), msg: e.to_string() })?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.max_upload_bytes == 0 {
            return Err(ConfigError::Invalid("max_upload_bytes must be positive".into()));
        }
        if self.gradcam_concurrency == 0 {
            return Err(ConfigError::Invalid("gradcam_concurrency must be at least 1".into()));
        }
        if self.max_image_side == 0 {
            return Err(ConfigError::Invalid("max_image_side must be positive".into()));
        }
        Ok(())
    }
}
