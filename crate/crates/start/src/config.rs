//! Experiment configuration files.
//!
//! The text format is a flat list of `key = value` lines grouped under
//! `[section]` headers; see the README for the full grammar. A file whose
//! first non-blank character is `{` is read as JSON with the same sections
//! as objects.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use start_core::augment::AugmentVariant;
use start_core::gap::GammaMode;
use start_core::harness::LodoConfig;
use start_core::ssm::Discretization;

use crate::error::CliError;

pub const SECTIONS: [&str; 5] = ["benchmark", "model", "train", "augment", "gap"];

/// A parse or validation problem; `line` is 0 when it has no single source line.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{}{msg}", if *.line > 0 { format!("line {}: ", .line) } else { String::new() })]
pub struct ConfigError {
    pub line: usize,
    pub msg: String,
}

fn err(line: usize, msg: impl Into<String>) -> ConfigError {
    ConfigError { line, msg: msg.into() }
}

#[derive(Debug, Clone)]
struct Entry {
    line: usize,
    value: String,
}

type Entries = BTreeMap<(String, String), Entry>;

fn insert(entries: &mut Entries, section: &str, key: &str, value: String, line: usize) -> Result<(), ConfigError> {
    if !SECTIONS.contains(&section) {
        return Err(err(line, format!("unknown section [{section}]")));
    }
    let slot = (section.to_string(), key.to_string());
    if let Some(prev) = entries.get(&slot) {
        return Err(err(
            line,
            format!("duplicate key {section}.{key} (first set on line {})", prev.line),
        ));
    }
    entries.insert(slot, Entry { line, value });
    Ok(())
}

fn read_text(text: &str) -> Result<Entries, ConfigError> {
    let mut entries = Entries::new();
    let mut section: Option<String> = None;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let s = raw.trim();
        if s.is_empty() || s.starts_with('#') || s.starts_with(';') {
            continue;
        }
        if let Some(rest) = s.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .ok_or_else(|| err(line, "section header must end with ']'"))?
                .trim();
            if !SECTIONS.contains(&name) {
                return Err(err(line, format!("unknown section [{name}]")));
            }
            section = Some(name.to_string());
            continue;
        }
        let (key, value) = s
            .split_once('=')
            .ok_or_else(|| err(line, format!("expected `key = value`, got `{s}`")))?;
        let (key, value) = (key.trim(), value.trim());
        if key.is_empty() || value.is_empty() {
            return Err(err(line, "empty key or value"));
        }
        let sec = section
            .as_deref()
            .ok_or_else(|| err(line, format!("key `{key}` appears before any section")))?;
        insert(&mut entries, sec, key, value.to_string(), line)?;
    }
    Ok(entries)
}

fn read_json(text: &str) -> Result<Entries, ConfigError> {
    let root: serde_json::Value =
        serde_json::from_str(text).map_err(|e| err(e.line(), format!("invalid JSON: {e}")))?;
    let obj = root.as_object().ok_or_else(|| err(0, "JSON config must be an object"))?;
    let mut entries = Entries::new();
    for (section, body) in obj {
        if !SECTIONS.contains(&section.as_str()) {
            return Err(err(0, format!("unknown section [{section}]")));
        }
        let body = body
            .as_object()
            .ok_or_else(|| err(0, format!("section `{section}` must be an object")))?;
        for (key, v) in body {
            let value = match v {
                serde_json::Value::String(s) => s.clone(),
                serde_json::Value::Number(n) => n.to_string(),
                serde_json::Value::Bool(b) => b.to_string(),
                serde_json::Value::Array(items) => items
                    .iter()
                    .map(|x| match x {
                        serde_json::Value::String(s) => s.clone(),
                        other => other.to_string(),
                    })
                    .map(|x| x + ",")
                    .collect::<String>(),
                _ => return Err(err(0, format!("{section}.{key}: unsupported value"))),
            };
            insert(&mut entries, section, key, value, 0)?;
        }
    }
    Ok(entries)
}

fn parse_num<T: std::str::FromStr>(e: &Entry, what: &str) -> Result<T, ConfigError> {
    e.value
        .parse()
        .map_err(|_| err(e.line, format!("{what}: cannot parse `{}`", e.value)))
}

fn apply(mut entries: Entries) -> Result<LodoConfig, ConfigError> {
    let mut cfg = LodoConfig::default();
    let mut model_dim = None;
    let mut model_classes = None;
    let mut seed_base = 0u64;
    let mut seeds: Option<Entry> = None;

    let keys: Vec<(String, String)> = entries.keys().cloned().collect();
    for (section, key) in keys {
        let e = entries.remove(&(section.clone(), key.clone())).unwrap();
        let what = format!("{section}.{key}");
        let b = &mut cfg.synth;
        let m = &mut cfg.model;
        let t = &mut cfg.train;
        match (section.as_str(), key.as_str()) {
            ("benchmark", "num_domains") => b.num_domains = parse_num(&e, &what)?,
            ("benchmark", "num_classes") => b.num_classes = parse_num(&e, &what)?,
            ("benchmark", "len") => b.len = parse_num(&e, &what)?,
            ("benchmark", "dim") => b.dim = parse_num(&e, &what)?,
            ("benchmark", "samples_per_domain_per_class") => b.samples_per_domain_per_class = parse_num(&e, &what)?,
            ("benchmark", "domain_style_strength") => b.domain_style_strength = parse_num(&e, &what)?,
            ("benchmark", "noise_std") => b.noise_std = parse_num(&e, &what)?,
            ("benchmark", "seed") => b.seed = parse_num(&e, &what)?,
            ("model", "depth") => m.depth = parse_num(&e, &what)?,
            ("model", "dim") => model_dim = Some(parse_num(&e, &what)?),
            ("model", "state") => m.state = parse_num(&e, &what)?,
            ("model", "num_classes") => model_classes = Some(parse_num(&e, &what)?),
            ("model", "discretization") => {
                m.discretization = match e.value.as_str() {
                    "zoh" => Discretization::Zoh,
                    "euler" => Discretization::Euler,
                    v => return Err(err(e.line, format!("{what}: expected zoh or euler, got `{v}`"))),
                }
            }
            ("train", "epochs") => t.epochs = parse_num(&e, &what)?,
            ("train", "batch_size") => t.batch_size = parse_num(&e, &what)?,
            ("train", "lr0") => t.lr0 = parse_num(&e, &what)?,
            ("train", "lr_min") => t.lr_min = parse_num(&e, &what)?,
            ("train", "weight_decay") => t.adamw.weight_decay = parse_num(&e, &what)?,
            ("train", "beta1") => t.adamw.beta1 = parse_num(&e, &what)?,
            ("train", "beta2") => t.adamw.beta2 = parse_num(&e, &what)?,
            ("train", "adam_eps") => t.adamw.eps = parse_num(&e, &what)?,
            ("train", "seed") => seed_base = parse_num(&e, &what)?,
            ("train", "seeds") => seeds = Some(e),
            ("augment", "variant") => {
                t.policy.variant = AugmentVariant::parse(&e.value).ok_or_else(|| {
                    err(e.line, format!("{what}: unknown variant `{}`", e.value))
                })?
            }
            ("augment", "p_token") => t.policy.p_token = parse_num(&e, &what)?,
            ("augment", "apply_prob") => t.policy.apply_prob = parse_num(&e, &what)?,
            ("augment", "beta") => t.policy.beta_param = parse_num(&e, &what)?,
            ("gap", "layer") => {
                cfg.gap_layer = match e.value.as_str() {
                    "last" => None,
                    _ => Some(parse_num(&e, &what)?),
                }
            }
            ("gap", "samples_per_class") => cfg.gap_samples_per_class = parse_num(&e, &what)?,
            ("gap", "gamma") => cfg.gap_gamma = parse_gamma(&e.value).map_err(|m| err(e.line, format!("{what}: {m}")))?,
            _ => return Err(err(e.line, format!("unknown key `{key}` in [{section}]"))),
        }
    }
    cfg.model.dim = model_dim.unwrap_or(cfg.synth.dim);
    cfg.model.num_classes = model_classes.unwrap_or(cfg.synth.num_classes);
    cfg.seeds = match seeds {
        None => (seed_base..seed_base + 5).collect(),
        Some(e) if e.value.contains(',') => e
            .value
            .split(',')
            .filter(|s| !s.trim().is_empty())
            .map(|s| s.trim().parse().map_err(|_| err(e.line, format!("train.seeds: bad seed `{s}`"))))
            .collect::<Result<_, _>>()?,
        Some(e) => {
            let n: u64 = parse_num(&e, "train.seeds")?;
            (seed_base..seed_base + n).collect()
        }
    };
    cfg.validate().map_err(|e| err(0, e.to_string()))?;
    Ok(cfg)
}

pub fn parse_gamma(s: &str) -> Result<GammaMode, String> {
    if s == "median" {
        return Ok(GammaMode::Median);
    }
    match s.parse::<f64>() {
        Ok(g) if g > 0.0 && g.is_finite() => Ok(GammaMode::Fixed(g)),
        _ => Err(format!("expected `median` or a positive number, got `{s}`")),
    }
}

/// Parses either format; JSON is recognised by a leading `{`.
pub fn parse(text: &str) -> Result<LodoConfig, ConfigError> {
    let entries = if text.trim_start().starts_with('{') {
        read_json(text)?
    } else {
        read_text(text)?
    };
    apply(entries)
}

pub fn load(path: &Path) -> Result<LodoConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Config {
        path: path.display().to_string(),
        msg: format!("cannot read config file: {e}"),
    })?;
    parse(&text).map_err(|e| CliError::Config {
        path: path.display().to_string(),
        msg: e.to_string(),
    })
}

fn gamma_text(g: GammaMode) -> String {
    match g {
        GammaMode::Median => "median".into(),
        GammaMode::Fixed(v) => format!("{v:?}"),
    }
}

/// Canonical text form; `parse(&render(c)) == c` for every valid config.
pub fn render(cfg: &LodoConfig) -> String {
    let (b, m, t) = (&cfg.synth, &cfg.model, &cfg.train);
    let mut s = String::new();
    let f = |v: f64| format!("{v:?}");
    let _ = writeln!(s, "[benchmark]");
    let _ = writeln!(s, "num_domains = {}", b.num_domains);
    let _ = writeln!(s, "num_classes = {}", b.num_classes);
    let _ = writeln!(s, "len = {}", b.len);
    let _ = writeln!(s, "dim = {}", b.dim);
    let _ = writeln!(s, "samples_per_domain_per_class = {}", b.samples_per_domain_per_class);
    let _ = writeln!(s, "domain_style_strength = {}", f(b.domain_style_strength));
    let _ = writeln!(s, "noise_std = {}", f(b.noise_std));
    let _ = writeln!(s, "seed = {}", b.seed);
    let _ = writeln!(s, "\n[model]");
    let _ = writeln!(s, "depth = {}", m.depth);
    let _ = writeln!(s, "dim = {}", m.dim);
    let _ = writeln!(s, "state = {}", m.state);
    let _ = writeln!(s, "num_classes = {}", m.num_classes);
    let disc = match m.discretization {
        Discretization::Zoh => "zoh",
        Discretization::Euler => "euler",
    };
    let _ = writeln!(s, "discretization = {disc}");
    let _ = writeln!(s, "\n[train]");
    let _ = writeln!(s, "epochs = {}", t.epochs);
    let _ = writeln!(s, "batch_size = {}", t.batch_size);
    let _ = writeln!(s, "lr0 = {}", f(t.lr0));
    let _ = writeln!(s, "lr_min = {}", f(t.lr_min));
    let _ = writeln!(s, "weight_decay = {}", f(t.adamw.weight_decay));
    let _ = writeln!(s, "beta1 = {}", f(t.adamw.beta1));
    let _ = writeln!(s, "beta2 = {}", f(t.adamw.beta2));
    let _ = writeln!(s, "adam_eps = {}", f(t.adamw.eps));
    let contiguous = cfg.seeds.windows(2).all(|w| w[1] == w[0] + 1);
    if contiguous && !cfg.seeds.is_empty() {
        let _ = writeln!(s, "seed = {}", cfg.seeds[0]);
        let _ = writeln!(s, "seeds = {}", cfg.seeds.len());
    } else {
        let list: Vec<String> = cfg.seeds.iter().map(|v| v.to_string()).collect();
        let _ = writeln!(s, "seeds = {}", list.join(","));
    }
    let p = &t.policy;
    let _ = writeln!(s, "\n[augment]");
    let _ = writeln!(s, "variant = {}", p.variant.name());
    let _ = writeln!(s, "p_token = {}", f(p.p_token));
    let _ = writeln!(s, "apply_prob = {}", f(p.apply_prob));
    let _ = writeln!(s, "beta = {}", f(p.beta_param));
    let _ = writeln!(s, "\n[gap]");
    match cfg.gap_layer {
        None => {
            let _ = writeln!(s, "layer = last");
        }
        Some(l) => {
            let _ = writeln!(s, "layer = {l}");
        }
    }
    let _ = writeln!(s, "samples_per_class = {}", cfg.gap_samples_per_class);
    let _ = writeln!(s, "gamma = {}", gamma_text(cfg.gap_gamma));
    s
}
