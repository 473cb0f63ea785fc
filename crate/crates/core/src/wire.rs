//! Newline-delimited JSON protocol exposing one environment per connection.
//!
//! Every request is a single JSON object on one line, tagged by `"type"`:
//!
//! ```text
//! {"type":"hello","version":"guardsim/1","config":{"n_agents":3,"mode":"I"}}
//! {"type":"reset","seed":7}
//! {"type":"step","actions":{"0":{"offers":[0,1,1],"demands":[0,0,0]}, ...}}
//! {"type":"close"}
//! ```
//!
//! Responses are `spec`, `obs`, `transition` and `error`. Bit vectors are
//! written as 0/1 integers; booleans are accepted on input. Actions are keyed
//! by agent id and blacklisted agents must be left out. `close` ends the
//! connection without a reply. A request that yields `error` never changes
//! the server state.

use std::collections::BTreeMap;
use std::io::{self, BufRead, BufReader, Write};
use std::net::{TcpListener, TcpStream};
use std::thread;

use serde::{Deserialize, Serialize};

use crate::env::{
    AgentAction, EnvConfig, EnvError, EpisodeOutcome, JointAction, Mode, NegotiationEnv,
    Observation, RewardSchedule, StepInfo,
};
use crate::regulator::BlacklistConfig;

pub const PROTOCOL_VERSION: &str = "guardsim/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ErrorCode {
    BadRequest,
    BadAction,
    EpisodeDone,
    NoEpisode,
    VersionMismatch,
    BadConfig,
}

/// Wire form of a bit: `0`, `1`, `false` or `true`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Bit {
    Bool(bool),
    Int(i64),
}

impl Bit {
    fn value(self) -> Option<bool> {
        match self {
            Bit::Bool(b) => Some(b),
            Bit::Int(0) => Some(false),
            Bit::Int(1) => Some(true),
            Bit::Int(_) => None,
        }
    }
}

fn encode_bits(bits: &[bool]) -> Vec<u8> {
    bits.iter().map(|&b| b as u8).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireAction {
    pub offers: Vec<Bit>,
    pub demands: Vec<Bit>,
}

impl From<&AgentAction> for WireAction {
    fn from(a: &AgentAction) -> Self {
        WireAction {
            offers: a.offers.iter().map(|&b| Bit::Int(b as i64)).collect(),
            demands: a.demands.iter().map(|&b| Bit::Int(b as i64)).collect(),
        }
    }
}

/// Overrides applied on top of the server's default configuration.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WireConfig {
    pub n_agents: Option<usize>,
    pub mode: Option<Mode>,
    pub max_steps: Option<usize>,
    pub rewards: Option<RewardSchedule<f64>>,
    pub blacklist: Option<BlacklistConfig>,
    pub seed: Option<u64>,
}

impl WireConfig {
    pub fn apply(&self, base: &EnvConfig<f64>) -> EnvConfig<f64> {
        let mut cfg = base.clone();
        if let Some(n) = self.n_agents {
            cfg.n_agents = n;
        }
        if let Some(mode) = self.mode {
            cfg.mode = mode;
            cfg.blacklist = BlacklistConfig {
                enabled: mode == Mode::Imposed,
                ..cfg.blacklist
            };
        }
        if let Some(m) = self.max_steps {
            cfg.max_steps = m;
        }
        if let Some(r) = self.rewards {
            cfg.rewards = r;
        }
        if let Some(b) = self.blacklist {
            cfg.blacklist = b;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        cfg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Request {
    Hello {
        version: String,
        #[serde(default)]
        config: Option<WireConfig>,
    },
    Reset {
        #[serde(default)]
        seed: Option<u64>,
    },
    Step {
        actions: BTreeMap<String, WireAction>,
    },
    Close,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireObservation {
    pub offers_to_me: Vec<u8>,
    pub demands_to_me: Vec<u8>,
    pub recommended_onehot: Vec<u8>,
    pub i_am_recommended: u8,
    pub i_am_blacklisted: u8,
}

impl From<&Observation> for WireObservation {
    fn from(o: &Observation) -> Self {
        WireObservation {
            offers_to_me: encode_bits(&o.offers_to_me),
            demands_to_me: encode_bits(&o.demands_to_me),
            recommended_onehot: encode_bits(&o.recommended_onehot),
            i_am_recommended: o.i_am_recommended as u8,
            i_am_blacklisted: o.i_am_blacklisted as u8,
        }
    }
}

impl WireObservation {
    pub fn to_observation(&self) -> Observation {
        let bits = |v: &[u8]| v.iter().map(|&b| b != 0).collect();
        Observation {
            offers_to_me: bits(&self.offers_to_me),
            demands_to_me: bits(&self.demands_to_me),
            recommended_onehot: bits(&self.recommended_onehot),
            i_am_recommended: self.i_am_recommended != 0,
            i_am_blacklisted: self.i_am_blacklisted != 0,
        }
    }
}

fn keyed<T, U>(items: &[T], f: impl Fn(&T) -> U) -> BTreeMap<String, U> {
    items
        .iter()
        .enumerate()
        .map(|(i, x)| (i.to_string(), f(x)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Response {
    Spec {
        version: String,
        n_agents: usize,
        mode: Mode,
        action_len: usize,
        obs_len: usize,
        max_steps: usize,
        rewards: RewardSchedule<f64>,
    },
    Obs {
        episode: u64,
        obs: BTreeMap<String, WireObservation>,
    },
    Transition {
        obs: BTreeMap<String, WireObservation>,
        rewards: BTreeMap<String, f64>,
        done: bool,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        outcome: Option<EpisodeOutcome<f64>>,
        info: StepInfo,
    },
    Error {
        code: ErrorCode,
        message: String,
    },
}

impl Response {
    fn error(code: ErrorCode, message: impl Into<String>) -> Self {
        Response::Error {
            code,
            message: message.into(),
        }
    }
}

/// Protocol state of one connection.
#[derive(Debug)]
pub struct Session {
    config: EnvConfig<f64>,
    env: NegotiationEnv<f64>,
}

impl Session {
    pub fn new(config: EnvConfig<f64>) -> Result<Self, EnvError> {
        let env = NegotiationEnv::new(config.clone())?;
        Ok(Session { config, env })
    }

    pub fn env(&self) -> &NegotiationEnv<f64> {
        &self.env
    }

    fn spec(&self) -> Response {
        Response::Spec {
            version: PROTOCOL_VERSION.to_string(),
            n_agents: self.config.n_agents,
            mode: self.config.mode,
            action_len: self.config.action_len(),
            obs_len: self.config.observation_len(),
            max_steps: self.config.max_steps,
            rewards: self.config.rewards,
        }
    }

    /// Answers one request line. `None` means the client closed.
    pub fn handle_line(&mut self, line: &str) -> Option<Response> {
        match serde_json::from_str::<Request>(line) {
            Ok(req) => self.handle(req),
            Err(e) => Some(Response::error(ErrorCode::BadRequest, e.to_string())),
        }
    }

    pub fn handle(&mut self, request: Request) -> Option<Response> {
        Some(match request {
            Request::Close => return None,
            Request::Hello { version, config } => self.hello(&version, config),
            Request::Reset { seed } => self.reset(seed),
            Request::Step { actions } => self.step(&actions),
        })
    }

    fn hello(&mut self, version: &str, config: Option<WireConfig>) -> Response {
        if version != PROTOCOL_VERSION {
            return Response::error(
                ErrorCode::VersionMismatch,
                format!("server speaks {PROTOCOL_VERSION}, client asked for {version}"),
            );
        }
        if let Some(overrides) = config {
            let cfg = overrides.apply(&self.config);
            match NegotiationEnv::new(cfg.clone()) {
                Ok(env) => {
                    self.config = cfg;
                    self.env = env;
                }
                Err(e) => return Response::error(ErrorCode::BadConfig, e.to_string()),
            }
        }
        self.spec()
    }

    /// With a seed, restarts from a fresh environment (ledger and regulator
    /// included) seeded with it; otherwise starts the next negotiation.
    fn reset(&mut self, seed: Option<u64>) -> Response {
        if let Some(seed) = seed {
            let cfg = EnvConfig {
                seed,
                ..self.config.clone()
            };
            match NegotiationEnv::new(cfg) {
                Ok(env) => self.env = env,
                Err(e) => return Response::error(ErrorCode::BadConfig, e.to_string()),
            }
        }
        let episode = self.env.episode_index();
        let obs = self.env.reset();
        Response::Obs {
            episode,
            obs: keyed(&obs, |o| WireObservation::from(o)),
        }
    }

    fn decode_actions(
        &self,
        actions: &BTreeMap<String, WireAction>,
    ) -> Result<JointAction, String> {
        let n = self.config.n_agents;
        let mut joint = vec![None; n];
        for (key, action) in actions {
            let agent: usize = key
                .parse()
                .ok()
                .filter(|&a| a < n)
                .ok_or_else(|| format!("unknown agent id {key:?}"))?;
            let decode = |bits: &[Bit], what: &str| -> Result<Vec<bool>, String> {
                if bits.len() != n {
                    return Err(format!(
                        "agent {agent}: {what} has length {}, expected {n}",
                        bits.len()
                    ));
                }
                bits.iter()
                    .map(|b| {
                        b.value().ok_or_else(|| {
                            format!("agent {agent}: {what} holds a non-binary value")
                        })
                    })
                    .collect()
            };
            joint[agent] = Some(AgentAction {
                offers: decode(&action.offers, "offers")?,
                demands: decode(&action.demands, "demands")?,
            });
        }
        Ok(JointAction(joint))
    }

    fn step(&mut self, actions: &BTreeMap<String, WireAction>) -> Response {
        let joint = match self.decode_actions(actions) {
            Ok(j) => j,
            Err(msg) => return Response::error(ErrorCode::BadAction, msg),
        };
        match self.env.step(&joint) {
            Ok(res) => Response::Transition {
                obs: keyed(&res.observations, |o| WireObservation::from(o)),
                rewards: keyed(&res.rewards, |&r| r),
                done: res.done,
                outcome: res.outcome,
                info: res.info,
            },
            Err(e) => {
                let code = match e {
                    EnvError::EpisodeDone => ErrorCode::EpisodeDone,
                    EnvError::NotReset => ErrorCode::NoEpisode,
                    _ => ErrorCode::BadAction,
                };
                Response::error(code, e.to_string())
            }
        }
    }
}

/// Serves requests from `reader` until `close` or end of input. Blank lines
/// are skipped.
pub fn serve_connection<R: BufRead, W: Write>(
    config: EnvConfig<f64>,
    reader: R,
    mut writer: W,
) -> io::Result<()> {
    let mut session = Session::new(config)
        .map_err(|e| io::Error::new(io::ErrorKind::InvalidInput, e.to_string()))?;
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let Some(response) = session.handle_line(&line) else {
            break;
        };
        serde_json::to_writer(&mut writer, &response)?;
        writer.write_all(b"\n")?;
        writer.flush()?;
    }
    Ok(())
}

pub fn serve_stdio(config: EnvConfig<f64>) -> io::Result<()> {
    let stdin = io::stdin();
    serve_connection(config, stdin.lock(), io::stdout().lock())
}

/// Accepts connections forever, each on its own thread with its own
/// environment.
pub fn serve_tcp(config: EnvConfig<f64>, listener: TcpListener) -> io::Result<()> {
    NegotiationEnv::new(config.clone())
        .map_err(|e| io::Error::new(io::ErrorKind::InvalidInput, e.to_string()))?;
    for stream in listener.incoming() {
        let stream = stream?;
        let config = config.clone();
        thread::spawn(move || {
            let _ = handle_tcp(config, stream);
        });
    }
    Ok(())
}

fn handle_tcp(config: EnvConfig<f64>, stream: TcpStream) -> io::Result<()> {
    let reader = BufReader::new(stream.try_clone()?);
    serve_connection(config, reader, stream)
}
