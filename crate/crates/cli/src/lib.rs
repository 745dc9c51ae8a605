//! Configuration layering and the HTTP service behind the `factcheck` binary.

pub mod server;

use std::path::Path;

use factcheck_core::config::{ConfigError, PipelineConfig};

/// Builds the effective config: defaults, then the key-value file, then the
/// environment, then command-line overrides (applied in that order).
pub fn layered_config(
    file: Option<&Path>,
    env: impl Fn(&str) -> Option<String>,
    overrides: &[(&str, String)],
) -> Result<PipelineConfig, ConfigError> {
    let mut config = PipelineConfig::default();
    if let Some(path) = file {
        config.apply_file(path)?;
    }
    config.apply_env(env)?;
    for (key, value) in overrides {
        config.set(key, value)?;
    }
    config.validate()?;
    Ok(config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use factcheck_core::config::StageMode;
    use std::collections::HashMap;

    #[test]
    fn flags_beat_env_beat_file() {
        let dir = std::env::temp_dir().join(format!("factcheck-layer-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let file = dir.join("pipeline.conf");
        std::fs::write(&file, "k = 3\nsparql_endpoint = http://file.example/sparql\nscorer_url = http://file.example\n")
            .unwrap();
        let env: HashMap<&str, &str> = [
            ("SPARQL_ENDPOINT", "http://env.example/sparql"),
            ("SCORER_URL", "http://env.example"),
        ]
        .into();
        let lookup = |k: &str| env.get(k).map(|v| v.to_string());

        let c = layered_config(Some(&file), lookup, &[("scorer_url", "http://flag.example".into())]).unwrap();
        assert_eq!(c.k, 3);
        assert_eq!(c.endpoints.sparql, "http://env.example/sparql");
        assert_eq!(c.endpoints.scorer.as_deref(), Some("http://flag.example"));
        assert_eq!(c.stages, StageMode::Full);
        std::fs::remove_dir_all(dir).ok();
    }

    #[test]
    fn readme_sample_config_parses() {
        let readme = include_str!("../../../README.md");
        let start = readme.find("```ini\n").expect("ini block") + 7;
        let len = readme[start..].find("```").unwrap();
        let mut c = PipelineConfig::default();
        c.apply_file_text(&readme[start..start + len]).unwrap();
        c.validate().unwrap();
        assert_eq!(c.k, 5);
        assert!(c.blacklist.is_none());
        assert_eq!(c.endpoints.scorer.as_deref(), Some("http://localhost:8002"));
    }

    #[test]
    fn invalid_override_is_rejected() {
        assert!(layered_config(None, |_| None, &[("k", "0".into())]).is_err());
    }
}
