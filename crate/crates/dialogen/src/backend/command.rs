//! Fine-tuning by shelling out to a training command.
//!
//! The command is invoked as
//! `<program> --base <model> --data <dataset> --batch-size <n> --lr <f>`
//! and must exit 0 and print a `MODEL_ID=<id>` line on stdout to succeed.
//! The run is synchronous: `submit` blocks until the process exits and
//! records the terminal status, which `poll` then reports.

use super::{
    check_dataset, BackendError, FineTuneJob, FineTuner, JobStatus, TrainingParams,
};
use std::collections::HashMap;
use std::path::Path;
use std::process::Command;
use std::sync::Mutex;

pub struct CmdFineTuner {
    program: String,
    jobs: Mutex<HashMap<String, JobStatus>>,
    counter: Mutex<usize>,
}

impl CmdFineTuner {
    pub fn new(program: impl Into<String>) -> Self {
        CmdFineTuner {
            program: program.into(),
            jobs: Mutex::new(HashMap::new()),
            counter: Mutex::new(0),
        }
    }
}

fn extract_model_id(stdout: &str) -> Option<String> {
    stdout
        .lines()
        .rev()
        .find_map(|line| line.trim().strip_prefix("MODEL_ID="))
        .map(|id| id.trim().to_string())
        .filter(|id| !id.is_empty())
}

impl FineTuner for CmdFineTuner {
    fn submit(
        &self,
        base_model: &str,
        dataset: &Path,
        params: &TrainingParams,
    ) -> Result<FineTuneJob, BackendError> {
        check_dataset(dataset)?;
        let output = Command::new(&self.program)
            .arg("--base")
            .arg(base_model)
            .arg("--data")
            .arg(dataset)
            .arg("--batch-size")
            .arg(params.batch_size.to_string())
            .arg("--lr")
            .arg(params.learning_rate.to_string())
            .output()
            .map_err(|e| BackendError::FineTune(format!("cannot run {}: {e}", self.program)))?;

        let stdout = String::from_utf8_lossy(&output.stdout);
        let status = if !output.status.success() {
            let stderr = String::from_utf8_lossy(&output.stderr);
            let snippet: String = stderr.chars().take(200).collect();
            JobStatus::Failed {
                message: format!("exit status {}: {}", output.status, snippet.trim()),
            }
        } else {
            match extract_model_id(&stdout) {
                Some(model) => JobStatus::Succeeded { model },
                None => JobStatus::Failed {
                    message: "command exited 0 but printed no MODEL_ID= line".into(),
                },
            }
        };

        let mut counter = self.counter.lock().expect("counter lock");
        *counter += 1;
        let id = format!("cmd-{}", *counter);
        self.jobs.lock().expect("jobs lock").insert(id.clone(), status);
        Ok(FineTuneJob { id })
    }

    fn poll(&self, job: &FineTuneJob) -> Result<JobStatus, BackendError> {
        self.jobs
            .lock()
            .expect("jobs lock")
            .get(&job.id)
            .cloned()
            .ok_or_else(|| BackendError::UnknownJob(job.id.clone()))
    }
}
