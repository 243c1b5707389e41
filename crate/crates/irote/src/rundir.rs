//! Run directory layout.
//!
//! ```text
//! <run>/
//!   config.toml              config snapshot
//!   run_log.json             full log, rewritten after every step
//!   iterations/000.json      initialization
//!   iterations/001.json ...  one file per iteration
//!   cache/responses.jsonl    response cache (unless cache_dir is set)
//!   final/reflection.txt     best reflection, rendered
//!   final/reflection.json    best reflection with its score
//!   evaluation.json/.txt     questionnaire report, when requested
//! ```

use std::path::{Path, PathBuf};

use anyhow::{Context as _, Result};
use irote_core::evocativeness::Scored;
use irote_core::orchestrator::{InitLog, IterationLog, RunLog};
use irote_core::RunConfig;
use serde::{Deserialize, Serialize};

use crate::settings;

pub const CONFIG_FILE: &str = "config.toml";
pub const LOG_FILE: &str = "run_log.json";

#[derive(Debug, Clone)]
pub struct RunDir {
    root: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalReflection {
    pub rendered: String,
    pub reflection: irote_core::Reflection,
    pub r2_total: f64,
    pub word_count: usize,
    pub system_id: String,
    pub dimension_id: String,
    pub config_digest: String,
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).with_context(|| format!("writing {}", tmp.display()))?;
    std::fs::rename(&tmp, path).with_context(|| format!("replacing {}", path.display()))?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn create(&self) -> Result<()> {
        for d in [self.root.clone(), self.root.join("iterations"), self.root.join("final")] {
            std::fs::create_dir_all(&d).with_context(|| format!("creating {}", d.display()))?;
        }
        Ok(())
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn config_path(&self) -> PathBuf {
        self.root.join(CONFIG_FILE)
    }

    pub fn log_path(&self) -> PathBuf {
        self.root.join(LOG_FILE)
    }

    pub fn final_text_path(&self) -> PathBuf {
        self.root.join("final").join("reflection.txt")
    }

    pub fn final_json_path(&self) -> PathBuf {
        self.root.join("final").join("reflection.json")
    }

    pub fn evaluation_path(&self, ext: &str) -> PathBuf {
        self.root.join(format!("evaluation.{ext}"))
    }

    /// Cache location: `cache_dir` from the config if set, else `<run>/cache`.
    pub fn cache_dir(&self, config: &RunConfig) -> PathBuf {
        config.cache_dir.as_ref().map_or_else(|| self.root.join("cache"), PathBuf::from)
    }

    pub fn has_log(&self) -> bool {
        self.log_path().exists()
    }

    pub fn write_config(&self, config: &RunConfig) -> Result<()> {
        let text = format!("# digest {}\n{}", config.digest(), settings::config_to_toml(config));
        write_atomic(&self.config_path(), text.as_bytes())
    }

    pub fn read_config(&self) -> Result<RunConfig> {
        settings::read_config(&self.config_path())
    }

    pub fn write_log(&self, log: &RunLog) -> Result<()> {
        write_json(&self.log_path(), log)
    }

    /// Reads and checks the log; a damaged log is refused with the reason.
    pub fn read_log(&self) -> Result<RunLog> {
        let path = self.log_path();
        let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        let log: RunLog = serde_json::from_str(&text).with_context(|| format!("corrupt run log {}", path.display()))?;
        log.check().with_context(|| format!("refusing {}", path.display()))?;
        Ok(log)
    }

    pub fn write_initial(&self, init: &InitLog) -> Result<()> {
        write_json(&self.root.join("iterations").join("000.json"), init)
    }

    pub fn write_iteration(&self, it: &IterationLog) -> Result<()> {
        write_json(&self.root.join("iterations").join(format!("{:03}.json", it.iteration)), it)
    }

    pub fn write_final(&self, best: &Scored, log: &RunLog) -> Result<FinalReflection> {
        let rendered = best.reflection.render();
        let record = FinalReflection {
            rendered: rendered.clone(),
            reflection: best.reflection.clone(),
            r2_total: best.total,
            word_count: best.reflection.word_count(),
            system_id: log.system_id.clone(),
            dimension_id: log.dimension_id.clone(),
            config_digest: log.config_digest.clone(),
        };
        write_atomic(&self.final_text_path(), format!("{rendered}\n").as_bytes())?;
        write_json(&self.final_json_path(), &record)?;
        Ok(record)
    }

    pub fn write_evaluation(&self, report: &crate::report::EvaluationExport) -> Result<()> {
        write_json(&self.evaluation_path("json"), report)?;
        write_atomic(&self.evaluation_path("txt"), crate::report::dimension_table(&report.dimensions).as_bytes())
    }
}
