//! Settings file. Command-line flags and `CONTACTPSI_*` environment variables
//! are resolved by clap; anything they leave unset falls back to this file and
//! then to built-in defaults.

use std::path::{Path, PathBuf};

use contactpsi::client::RiskThresholds;
use contactpsi::server::ServerConfig;
use contactpsi::Mode;
use serde::Deserialize;

use crate::CliError;

pub const DEFAULT_SERVER_URL: &str = "http://127.0.0.1:8080";
pub const DEFAULT_BIND: &str = "127.0.0.1:8080";

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default)]
pub struct FileConfig {
    pub server_url: Option<String>,
    pub region: Option<String>,
    pub token: Option<String>,
    pub zones: Option<PathBuf>,
    pub server: ServerSection,
    pub client: ClientSection,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default)]
pub struct ServerSection {
    pub bind: Option<String>,
    pub store: Option<PathBuf>,
    pub purge_interval_sec: Option<u64>,
    #[serde(flatten)]
    pub config: Option<ServerConfig>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default)]
pub struct ClientSection {
    pub mode: Option<Mode>,
    pub client_key_id: Option<String>,
    pub thresholds: Option<RiskThresholds>,
    /// Grid the client expects; a server advertising anything else is refused.
    pub delta_deg: Option<f64>,
    pub tau_sec: Option<u64>,
    pub temporal_k: Option<u32>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(FileConfig::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::new("config_error", format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::new("config_error", format!("{}: {e}", path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_full_file() {
        let text = r#"
            server_url = "http://example:9000"
            region = "nyc"

            [server]
            bind = "0.0.0.0:9000"
            regions = ["nyc", "bos"]
            d_days = 10
            upload_token = "secret"

            [server.limits]
            max_queries_per_day = 2

            [client]
            mode = "shuffled"
            client_key_id = "phone-1"
            delta_deg = 0.001
        "#;
        let cfg: FileConfig = toml::from_str(text).unwrap();
        assert_eq!(cfg.region.as_deref(), Some("nyc"));
        assert_eq!(cfg.server.bind.as_deref(), Some("0.0.0.0:9000"));
        let server = cfg.server.config.unwrap();
        assert_eq!(server.regions, vec!["nyc", "bos"]);
        assert_eq!(server.d_days, 10);
        assert_eq!(server.limits.max_queries_per_day, 2);
        assert_eq!(server.limits.max_elems_per_exchange, 120_000);
        assert_eq!(cfg.client.mode, Some(Mode::Shuffled));
        assert_eq!(cfg.client.delta_deg, Some(0.001));
    }

    #[test]
    fn empty_file_is_all_defaults() {
        let cfg: FileConfig = toml::from_str("").unwrap();
        assert_eq!(cfg.server_url, None);
        assert_eq!(cfg.server.config.unwrap_or_default(), ServerConfig::default());
    }
}
