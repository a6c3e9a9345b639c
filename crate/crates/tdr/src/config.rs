//! Text configuration for experiment sweeps: one `key = value` per line,
//! `#` comments, dotted section prefixes. Unknown and duplicate keys are
//! errors so typos fail loudly instead of silently running defaults.

use crate::error::{Result, TdrError};
use crate::estimators::TruncationSchedule;
use crate::experiment::{
    ExperimentConfig, NuisanceConfig, ObjectiveConfig, P0Config, QSource, RatioSource,
    SetupConfig, DEFAULT_BURN_IN, DEFAULT_ORACLE_S_MAX, DEFAULT_ORACLE_TOL,
};
use crate::lepski::LepskiConfig;
use std::collections::BTreeMap;
use std::path::Path;

struct ConfigMap {
    entries: BTreeMap<String, (String, usize)>,
}

impl ConfigMap {
    fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            };
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(TdrError::Config(format!(
                    "line {line_no}: expected `key = value`, got `{line}`"
                )));
            };
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            if key.is_empty() {
                return Err(TdrError::Config(format!("line {line_no}: empty key")));
            }
            if let Some((_, first)) = entries.insert(key.clone(), (value, line_no)) {
                return Err(TdrError::Config(format!(
                    "line {line_no}: duplicate key `{key}` (first set on line {first})"
                )));
            }
        }
        Ok(Self { entries })
    }

    fn take(&mut self, key: &str) -> Option<String> {
        self.entries.remove(key).map(|(v, _)| v)
    }

    fn require(&mut self, key: &str) -> Result<String> {
        self.take(key)
            .ok_or_else(|| TdrError::Config(format!("missing required key `{key}`")))
    }

    fn take_parsed<T: std::str::FromStr>(&mut self, key: &str) -> Result<Option<T>> {
        match self.take(key) {
            None => Ok(None),
            Some(raw) => raw.parse::<T>().map(Some).map_err(|_| {
                TdrError::Config(format!("key `{key}`: cannot parse `{raw}`"))
            }),
        }
    }

    fn require_parsed<T: std::str::FromStr>(&mut self, key: &str) -> Result<T> {
        let raw = self.require(key)?;
        raw.parse::<T>()
            .map_err(|_| TdrError::Config(format!("key `{key}`: cannot parse `{raw}`")))
    }

    fn finish(self) -> Result<()> {
        if let Some((key, (_, line_no))) = self.entries.into_iter().next() {
            return Err(TdrError::Config(format!(
                "line {line_no}: unknown key `{key}`"
            )));
        }
        Ok(())
    }
}

fn parse_schedule_list(key: &str, raw: &str) -> Result<Vec<TruncationSchedule>> {
    let items: Vec<&str> =
        raw.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
    if items.is_empty() {
        return Err(TdrError::Config(format!("key `{key}`: empty schedule list")));
    }
    items
        .into_iter()
        .map(|item| {
            TruncationSchedule::parse(item)
                .map_err(|e| TdrError::Config(format!("key `{key}`: {e}")))
        })
        .collect()
}

fn parse_usize_list(key: &str, raw: &str) -> Result<Vec<usize>> {
    raw.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|item| {
            item.parse::<usize>()
                .map_err(|_| TdrError::Config(format!("key `{key}`: cannot parse `{item}`")))
        })
        .collect()
}

/// Parses a full experiment configuration from text. See the repository
/// README for the schema; every key is validated and unknown keys are
/// rejected.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let mut map = ConfigMap::parse(text)?;

    let setup = match map.require("setup.kind")?.as_str() {
        "chain" => SetupConfig::Chain {
            num_states: map.require_parsed("setup.num_states")?,
            reset_prob: map.require_parsed("setup.reset_prob")?,
        },
        "queue" => SetupConfig::Queue {
            lambda0: map.require_parsed("setup.lambda0")?,
            lambda1: map.require_parsed("setup.lambda1")?,
        },
        other => {
            return Err(TdrError::Config(format!(
                "setup.kind must be `chain` or `queue`, got `{other}`"
            )))
        }
    };

    let objective = match map.require("objective.kind")?.as_str() {
        "discounted" => {
            let gamma = map.require_parsed("objective.gamma")?;
            let p0 = match map.take("objective.p0").as_deref().unwrap_or("eval") {
                "eval" => P0Config::EvalStationary,
                "behavior" => P0Config::BehaviorStationary,
                other => match other.strip_prefix("state:") {
                    Some(s) => P0Config::State(s.trim().parse().map_err(|_| {
                        TdrError::Config(format!("objective.p0: cannot parse state `{s}`"))
                    })?),
                    None => {
                        return Err(TdrError::Config(format!(
                            "objective.p0 must be `eval`, `behavior`, or `state:<n>`, got `{other}`"
                        )))
                    }
                },
            };
            ObjectiveConfig::Discounted { gamma, p0 }
        }
        "longrun" => ObjectiveConfig::LongRun,
        other => {
            return Err(TdrError::Config(format!(
                "objective.kind must be `discounted` or `longrun`, got `{other}`"
            )))
        }
    };

    let q = match map.take("nuisance.q").as_deref().unwrap_or("oracle") {
        "oracle" => QSource::Oracle,
        "td" => QSource::Td {
            train_len: map.require_parsed("nuisance.q_train_len")?,
            rate: map.require_parsed("nuisance.q_rate")?,
            rate2: map.take_parsed("nuisance.q_rate2")?.unwrap_or(0.0),
            epochs: map.take_parsed("nuisance.q_epochs")?.unwrap_or(1),
        },
        other => {
            return Err(TdrError::Config(format!(
                "nuisance.q must be `oracle` or `td`, got `{other}`"
            )))
        }
    };
    let ratio = match map.take("nuisance.ratio").as_deref().unwrap_or("oracle") {
        "oracle" => RatioSource::Oracle,
        "moment-matching" => RatioSource::MomentMatching {
            train_len: map.require_parsed("nuisance.ratio_train_len")?,
        },
        other => {
            return Err(TdrError::Config(format!(
                "nuisance.ratio must be `oracle` or `moment-matching`, got `{other}`"
            )))
        }
    };

    let schedules = match map.take("schedules") {
        Some(raw) => parse_schedule_list("schedules", &raw)?,
        None => vec![TruncationSchedule::Untruncated],
    };

    let lepski = match map.take("lepski.grid") {
        Some(raw) => Some(LepskiConfig {
            grid: parse_schedule_list("lepski.grid", &raw)?,
            bootstrap_draws: map.take_parsed("lepski.draws")?.unwrap_or(100),
            z: map.take_parsed("lepski.z")?.unwrap_or(1.96),
            block_len: map.take_parsed("lepski.block_len")?,
        }),
        None => {
            for key in ["lepski.draws", "lepski.z", "lepski.block_len"] {
                if map.take(key).is_some() {
                    return Err(TdrError::Config(format!(
                        "`{key}` requires `lepski.grid`"
                    )));
                }
            }
            None
        }
    };

    let horizons = parse_usize_list("horizons", &map.require("horizons")?)?;

    let cfg = ExperimentConfig {
        name: map.take("name").unwrap_or_else(|| "experiment".to_string()),
        setup,
        objective,
        behavior_prob: map.require_parsed("policy.behavior")?,
        eval_prob: map.require_parsed("policy.eval")?,
        nuisance: NuisanceConfig { q, ratio },
        schedules,
        lepski,
        horizons,
        replications: map.require_parsed("replications")?,
        seed: map.take_parsed("seed")?.unwrap_or(0),
        oracle_s_max: map.take_parsed("oracle.s_max")?.unwrap_or(DEFAULT_ORACLE_S_MAX),
        oracle_tol: map.take_parsed("oracle.tol")?.unwrap_or(DEFAULT_ORACLE_TOL),
        burn_in: map.take_parsed("burn_in")?.unwrap_or(DEFAULT_BURN_IN),
    };
    map.finish()?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)?;
    parse_config(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    const CHAIN_TEXT: &str = "\
# Experiment-1 style chain sweep.
name = exp1
setup.kind = chain
setup.num_states = 20
setup.reset_prob = 0.5
objective.kind = discounted
objective.gamma = 0.5
policy.behavior = 0.2
policy.eval = 1.0
schedules = none, t^0.7, T^0.7
horizons = 50, 600, 7200
replications = 500
seed = 1
";

    #[test]
    fn parses_a_chain_config() {
        let cfg = parse_config(CHAIN_TEXT).unwrap();
        assert_eq!(cfg.name, "exp1");
        assert_eq!(cfg.setup, SetupConfig::Chain { num_states: 20, reset_prob: 0.5 });
        assert_eq!(
            cfg.objective,
            ObjectiveConfig::Discounted { gamma: 0.5, p0: P0Config::EvalStationary }
        );
        assert_eq!(cfg.behavior_prob, 0.2);
        assert_eq!(cfg.eval_prob, 1.0);
        assert_eq!(cfg.schedules.len(), 3);
        assert_eq!(cfg.schedules[0], TruncationSchedule::Untruncated);
        assert_eq!(cfg.schedules[1].to_string(), "t^0.7");
        assert_eq!(cfg.schedules[2].to_string(), "T^0.7");
        assert_eq!(cfg.horizons, vec![50, 600, 7200]);
        assert_eq!(cfg.replications, 500);
        assert_eq!(cfg.seed, 1);
        assert_eq!(cfg.oracle_s_max, DEFAULT_ORACLE_S_MAX);
        assert!(cfg.lepski.is_none());
    }

    #[test]
    fn parses_a_queue_config_with_lepski_and_nuisances() {
        let text = "\
name = exp4
setup.kind = queue
setup.lambda0 = 0.1
setup.lambda1 = 0.9
objective.kind = longrun
policy.behavior = 0.1
policy.eval = 1.0
nuisance.q = td
nuisance.q_train_len = 5000
nuisance.q_rate = 0.01
nuisance.q_rate2 = 0.005
nuisance.ratio = moment-matching
nuisance.ratio_train_len = 5000
schedules = t^0.5
lepski.grid = none, t^0.9, t^0.7, t^0.5
lepski.draws = 50
lepski.z = 1.0
horizons = 500
replications = 100
burn_in = 200
oracle.s_max = 300
oracle.tol = 1e-9
";
        let cfg = parse_config(text).unwrap();
        assert_eq!(cfg.setup, SetupConfig::Queue { lambda0: 0.1, lambda1: 0.9 });
        assert_eq!(cfg.objective, ObjectiveConfig::LongRun);
        assert_eq!(
            cfg.nuisance.q,
            QSource::Td { train_len: 5000, rate: 0.01, rate2: 0.005, epochs: 1 }
        );
        assert_eq!(cfg.nuisance.ratio, RatioSource::MomentMatching { train_len: 5000 });
        let lepski = cfg.lepski.unwrap();
        assert_eq!(lepski.grid.len(), 4);
        assert_eq!(lepski.bootstrap_draws, 50);
        assert_eq!(lepski.z, 1.0);
        assert_eq!(lepski.block_len, None);
        assert_eq!(cfg.seed, 0);
        assert_eq!(cfg.burn_in, 200);
        assert_eq!(cfg.oracle_s_max, 300);
        assert_eq!(cfg.oracle_tol, 1e-9);
    }

    #[test]
    fn rejects_unknown_keys() {
        let text = format!("{CHAIN_TEXT}setup.non_states = 3\n");
        let err = parse_config(&text).unwrap_err();
        assert!(err.to_string().contains("unknown key `setup.non_states`"), "{err}");
    }

    #[test]
    fn rejects_duplicate_keys() {
        let text = format!("{CHAIN_TEXT}seed = 2\n");
        let err = parse_config(&text).unwrap_err();
        assert!(err.to_string().contains("duplicate key `seed`"), "{err}");
    }

    #[test]
    fn rejects_missing_required_keys() {
        let text = CHAIN_TEXT.replace("policy.behavior = 0.2\n", "");
        let err = parse_config(&text).unwrap_err();
        assert!(err.to_string().contains("missing required key `policy.behavior`"), "{err}");
    }

    #[test]
    fn rejects_queue_keys_on_chain_setups() {
        let text = format!("{CHAIN_TEXT}setup.lambda0 = 0.1\n");
        let err = parse_config(&text).unwrap_err();
        assert!(err.to_string().contains("unknown key `setup.lambda0`"), "{err}");
    }

    #[test]
    fn rejects_malformed_lines_and_values() {
        assert!(parse_config("just words\n").is_err());
        assert!(parse_config(&CHAIN_TEXT.replace("= 500", "= many")).is_err());
        let bad_schedule = CHAIN_TEXT.replace("t^0.7, T^0.7", "t^fast");
        assert!(parse_config(&bad_schedule).is_err());
    }

    #[test]
    fn rejects_lepski_options_without_a_grid() {
        let text = format!("{CHAIN_TEXT}lepski.z = 1.0\n");
        let err = parse_config(&text).unwrap_err();
        assert!(err.to_string().contains("requires `lepski.grid`"), "{err}");
    }

    #[test]
    fn comments_and_blank_lines_are_ignored() {
        let text = format!("\n  # leading comment\n{CHAIN_TEXT}\n\nburn_in = 7 # trailing\n");
        let cfg = parse_config(&text).unwrap();
        assert_eq!(cfg.burn_in, 7);
    }

    #[test]
    fn validation_runs_after_parsing() {
        let text = CHAIN_TEXT.replace("horizons = 50, 600, 7200", "horizons = 7200, 600");
        assert!(matches!(parse_config(&text), Err(TdrError::Config(_))));
    }

    #[test]
    fn shipped_configs_parse() {
        let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs");
        let mut seen = 0;
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.extension().and_then(|e| e.to_str()) != Some("conf") {
                continue;
            }
            let cfg = load_config(&path).unwrap_or_else(|e| {
                panic!("{} failed to parse: {e}", path.display());
            });
            assert!(!cfg.name.is_empty());
            seen += 1;
        }
        assert_eq!(seen, 6, "expected the six shipped experiment configs");
    }
}
