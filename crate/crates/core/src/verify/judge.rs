//! External judge hook.
//!
//! Captions that pass the rule checks may be forwarded to a judge whose
//! retain/filter reply is final. The wire contract is a JSON POST of
//! `{caption, checklist}` answered by `{verdict, rationale}`.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{Decision, Evidence, Item, Result, Verdict, VerifyError};

pub const CHECKLIST: [&str; 5] = [
    "Does not describe background sounds, environmental noise or recording quality.",
    "Does not explicitly declare that something is absent.",
    "Does not transcribe speech without describing how it is spoken.",
    "Incorporates the human-annotated tags.",
    "Describes a single speaker in a single role.",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeRequest {
    pub caption: String,
    pub checklist: Vec<String>,
}

impl JudgeRequest {
    pub fn new(caption: &str) -> Self {
        Self {
            caption: caption.to_string(),
            checklist: CHECKLIST.iter().map(|s| s.to_string()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeReply {
    pub verdict: Verdict,
    #[serde(default)]
    pub rationale: String,
}

pub trait Judge {
    fn judge(&self, request: &JudgeRequest) -> Result<JudgeReply>;

    /// Forwards a rule-retained caption; filtered decisions are returned
    /// unchanged without a call.
    fn review(&self, caption: &str, decision: Decision) -> Result<Decision> {
        if !decision.retained() {
            return Ok(decision);
        }
        let reply = self.judge(&JudgeRequest::new(caption))?;
        Ok(match reply.verdict {
            Verdict::Retain => decision,
            Verdict::Filter => decision.merge([Evidence {
                item: Item::Judge,
                span: reply.rationale,
                caption_index: None,
            }]),
        })
    }
}

/// Judge reached over HTTP.
pub struct HttpJudge {
    url: String,
    agent: ureq::Agent,
}

impl HttpJudge {
    pub fn new(url: &str, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .build()
            .into();
        Self {
            url: url.to_string(),
            agent,
        }
    }
}

impl Judge for HttpJudge {
    fn judge(&self, request: &JudgeRequest) -> Result<JudgeReply> {
        self.agent
            .post(&self.url)
            .send_json(request)
            .and_then(|mut r| r.body_mut().read_json::<JudgeReply>())
            .map_err(|e| VerifyError::Judge(format!("{}: {e}", self.url)))
    }
}
