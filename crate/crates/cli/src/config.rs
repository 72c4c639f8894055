//! Run configuration: one JSON file plus command-line overrides.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use medfaith_core::metrics::LabelMode;
use medfaith_core::{
    CommandParaphraser, IdentityParaphraser, LossConfig, Paraphraser, RuleProfile,
};
use serde::{Deserialize, Serialize};

/// A built-in profile name or a full inline profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ProfileSpec {
    Named(String),
    Inline(Box<RuleProfile>),
}

impl Default for ProfileSpec {
    fn default() -> Self {
        ProfileSpec::Named("hqs".into())
    }
}

/// External paraphrase command: text on stdin, paraphrase on stdout.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParaphraserSpec {
    pub program: String,
    #[serde(default)]
    pub args: Vec<String>,
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

fn default_fd_step() -> f64 {
    1e-6
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub corpus: Option<PathBuf>,
    #[serde(default)]
    pub lexicon: Option<PathBuf>,
    #[serde(default)]
    pub vocab: Option<PathBuf>,
    #[serde(default)]
    pub profile: ProfileSpec,
    #[serde(default)]
    pub loss: LossConfig,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    /// Overrides the profile's own seed.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub paraphraser: Option<ParaphraserSpec>,
    /// Loss evaluation inputs. `mki` defaults to `<out>/mki.jsonl`.
    #[serde(default)]
    pub representations: Option<PathBuf>,
    #[serde(default)]
    pub logits: Option<PathBuf>,
    #[serde(default)]
    pub ce: Option<PathBuf>,
    #[serde(default)]
    pub mki: Option<PathBuf>,
    #[serde(default = "default_fd_step")]
    pub fd_step: f64,
    /// Metrics inputs.
    #[serde(default)]
    pub predictions: Option<PathBuf>,
    #[serde(default)]
    pub annotations: Option<PathBuf>,
    #[serde(default)]
    pub annotation_total: Option<usize>,
    #[serde(default)]
    pub label_mode: LabelMode,
}

impl Default for RunConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("every field has a default")
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub profile: Option<String>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    /// Reads a config file. Relative paths inside it resolve against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        let mut cfg: RunConfig = serde_json::from_str(&text)
            .with_context(|| format!("invalid config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.rebase(base);
        Ok(cfg)
    }

    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for p in [
            &mut self.corpus,
            &mut self.lexicon,
            &mut self.vocab,
            &mut self.representations,
            &mut self.logits,
            &mut self.ce,
            &mut self.mki,
            &mut self.predictions,
            &mut self.annotations,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
        fix(&mut self.out);
    }

    pub fn apply(&mut self, o: Overrides) {
        if let Some(p) = o.profile {
            self.profile = ProfileSpec::Named(p);
        }
        if o.seed.is_some() {
            self.seed = o.seed;
        }
        if let Some(out) = o.out {
            self.out = out;
        }
    }

    pub fn resolve_profile(&self) -> Result<RuleProfile> {
        let mut profile = match &self.profile {
            ProfileSpec::Named(name) => {
                let seed = self.seed.unwrap_or(0);
                match RuleProfile::builtin(name, seed) {
                    Some(p) => p,
                    None => bail!(
                        "unknown profile {name:?}; built-in profiles are {}",
                        RuleProfile::BUILTIN.join(", ")
                    ),
                }
            }
            ProfileSpec::Inline(p) => (**p).clone(),
        };
        if let Some(seed) = self.seed {
            profile.seed = seed;
        }
        profile.validate()?;
        Ok(profile)
    }

    pub fn paraphraser(&self) -> Box<dyn Paraphraser> {
        match &self.paraphraser {
            Some(spec) => Box::new(CommandParaphraser::new(
                spec.program.clone(),
                spec.args.clone(),
            )),
            None => Box::new(IdentityParaphraser),
        }
    }

    pub fn mki_path(&self) -> PathBuf {
        self.mki
            .clone()
            .unwrap_or_else(|| self.out.join("mki.jsonl"))
    }
}

/// The path in `field`, or an error naming the missing key.
pub fn required<'a>(field: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
    match field {
        Some(p) if p.exists() => Ok(p),
        Some(p) => bail!("{key} file {} does not exist", p.display()),
        None => bail!("config is missing {key:?}"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_uses_defaults() {
        let cfg = RunConfig::default();
        assert_eq!(cfg.profile, ProfileSpec::Named("hqs".into()));
        assert_eq!(cfg.loss, LossConfig::default());
        assert_eq!(cfg.out, PathBuf::from("out"));
        assert_eq!(cfg.resolve_profile().unwrap().name, "hqs");
    }

    #[test]
    fn inline_profile_and_seed_override() {
        let mut inline = RuleProfile::rrs(3);
        inline.name = "custom".into();
        let json = serde_json::json!({ "profile": inline, "seed": 9 });
        let cfg: RunConfig = serde_json::from_value(json).unwrap();
        let p = cfg.resolve_profile().unwrap();
        assert_eq!(p.name, "custom");
        assert_eq!(p.seed, 9);
    }

    #[test]
    fn unknown_keys_and_profiles_are_rejected() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"corpsu": "x"}"#).is_err());
        let mut cfg = RunConfig::default();
        cfg.apply(Overrides {
            profile: Some("nope".into()),
            ..Overrides::default()
        });
        assert!(cfg.resolve_profile().is_err());
    }

    #[test]
    fn relative_paths_follow_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.json");
        fs::write(&path, r#"{"corpus": "c.jsonl", "out": "o"}"#).unwrap();
        let cfg = RunConfig::load(&path).unwrap();
        assert_eq!(cfg.corpus.unwrap(), dir.path().join("c.jsonl"));
        assert_eq!(cfg.out, dir.path().join("o"));
    }
}
