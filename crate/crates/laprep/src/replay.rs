//! Trajectory collection under the uniform policy and the three sampling
//! primitives used by the stochastic objective: states `u ~ rho_hat`,
//! positive pairs `(u, v)` with `v` a geometric number of steps after `u`,
//! and independent negative pairs.

use crate::grid::{uniform_policy_action, GridSpec, GridState};
use rand::Rng;
use std::io::{BufRead, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("replay buffer is empty")]
    EmptyBuffer,
    #[error("pair sampling exceeded {0} retries; episode length too short for lambda")]
    SamplingStuck(usize),
    #[error("trajectory {0} has length {1}, expected {2}")]
    LengthMismatch(usize, usize, usize),
    #[error("trajectory {traj} step {step}: {from:?} -> {to:?} is not a valid transition")]
    InvalidTransition {
        traj: usize,
        step: usize,
        from: (usize, usize),
        to: (usize, usize),
    },
    #[error("buffer file parse error at line {0}")]
    Parse(usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One episode: `episode_len` transitions, `episode_len + 1` states.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trajectory {
    pub states: Vec<GridState>,
}

/// A positive sample: `v` is exactly `tau` steps after `u` within a single
/// trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairSample {
    pub u: GridState,
    pub v: GridState,
    pub tau: u32,
}

const RETRY_CAP: usize = 10_000;

/// Pre-discard draw of the multi-step offset: `Pr(tau) = lambda^(tau-1) (1-lambda)`,
/// sampled by inverse CDF. `lambda = 0` always gives 1.
pub fn draw_tau<R: Rng>(lambda: f64, rng: &mut R) -> u32 {
    debug_assert!((0.0..1.0).contains(&lambda));
    if lambda == 0.0 {
        return 1;
    }
    let u: f64 = rng.gen::<f64>();
    let tau = 1.0 + ((1.0 - u).ln() / lambda.ln()).floor();
    tau as u32
}

#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    trajectories: Vec<Trajectory>,
    episode_len: usize,
}

impl ReplayBuffer {
    /// Rolls out `n_episodes` uniform-policy episodes of `episode_len`
    /// transitions each, starting from uniformly random states.
    pub fn collect<R: Rng>(
        spec: &GridSpec,
        n_episodes: usize,
        episode_len: usize,
        rng: &mut R,
    ) -> ReplayBuffer {
        assert!(episode_len >= 1, "episodes need at least one transition");
        let mut trajectories = Vec::with_capacity(n_episodes);
        for _ in 0..n_episodes {
            let mut states = Vec::with_capacity(episode_len + 1);
            let mut s = spec.state(rng.gen_range(0..spec.n_states()));
            states.push(s);
            for _ in 0..episode_len {
                s = spec.step(s, uniform_policy_action(rng));
                states.push(s);
            }
            trajectories.push(Trajectory { states });
        }
        ReplayBuffer {
            trajectories,
            episode_len,
        }
    }

    /// Builds a buffer from explicit trajectories, validating lengths and
    /// that consecutive states are reachable in one step.
    pub fn from_trajectories(
        spec: &GridSpec,
        trajectories: Vec<Trajectory>,
        episode_len: usize,
    ) -> Result<ReplayBuffer, ReplayError> {
        for (i, traj) in trajectories.iter().enumerate() {
            if traj.states.len() != episode_len + 1 {
                return Err(ReplayError::LengthMismatch(
                    i,
                    traj.states.len(),
                    episode_len + 1,
                ));
            }
            for (t, pair) in traj.states.windows(2).enumerate() {
                let reachable = crate::grid::Action::ALL
                    .iter()
                    .any(|&a| spec.step(pair[0], a) == pair[1]);
                if !reachable {
                    return Err(ReplayError::InvalidTransition {
                        traj: i,
                        step: t,
                        from: pair[0].xy,
                        to: pair[1].xy,
                    });
                }
            }
        }
        Ok(ReplayBuffer {
            trajectories,
            episode_len,
        })
    }

    pub fn trajectories(&self) -> &[Trajectory] {
        &self.trajectories
    }

    pub fn episode_len(&self) -> usize {
        self.episode_len
    }

    pub fn total_transitions(&self) -> usize {
        self.trajectories.len() * self.episode_len
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    /// Uniform draw over the time-indexed states `t in 0..episode_len` of
    /// every trajectory (the last state of an episode is never returned, so
    /// every sample has at least one forward step).
    pub fn sample_state<R: Rng>(&self, rng: &mut R) -> Result<GridState, ReplayError> {
        if self.is_empty() {
            return Err(ReplayError::EmptyBuffer);
        }
        let traj = rng.gen_range(0..self.trajectories.len());
        let t = rng.gen_range(0..self.episode_len);
        Ok(self.trajectories[traj].states[t])
    }

    /// Positive pair: uniform `(trajectory, t)`, geometric `tau`; the draw is
    /// discarded and retried from scratch whenever `t + tau` runs past the
    /// episode end, so pairs never straddle a reset.
    pub fn sample_pair<R: Rng>(
        &self,
        lambda: f64,
        rng: &mut R,
    ) -> Result<PairSample, ReplayError> {
        if self.is_empty() {
            return Err(ReplayError::EmptyBuffer);
        }
        for _ in 0..RETRY_CAP {
            let traj = rng.gen_range(0..self.trajectories.len());
            let t = rng.gen_range(0..self.episode_len);
            let tau = draw_tau(lambda, rng);
            if t + tau as usize > self.episode_len {
                continue;
            }
            let states = &self.trajectories[traj].states;
            return Ok(PairSample {
                u: states[t],
                v: states[t + tau as usize],
                tau,
            });
        }
        Err(ReplayError::SamplingStuck(RETRY_CAP))
    }

    /// Negative pair: two independent `sample_state` draws (they may
    /// coincide).
    pub fn sample_negative_pair<R: Rng>(
        &self,
        rng: &mut R,
    ) -> Result<(GridState, GridState), ReplayError> {
        let a = self.sample_state(rng)?;
        let b = self.sample_state(rng)?;
        Ok((a, b))
    }

    /// Writes `traj,step,state` rows. `extra_header` lines (e.g. a config
    /// hash) are emitted as leading `#` comments.
    pub fn save_csv(&self, path: &Path, extra_header: &[String]) -> Result<(), ReplayError> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        for line in extra_header {
            writeln!(out, "# {line}")?;
        }
        writeln!(out, "traj,step,state")?;
        for (i, traj) in self.trajectories.iter().enumerate() {
            for (t, s) in traj.states.iter().enumerate() {
                writeln!(out, "{i},{t},{}", s.index)?;
            }
        }
        Ok(())
    }

    pub fn load_csv(path: &Path, spec: &GridSpec) -> Result<ReplayBuffer, ReplayError> {
        let file = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut rows: Vec<(usize, usize, usize)> = Vec::new();
        for (lineno, line) in file.lines().enumerate() {
            let line = line?;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') || trimmed.starts_with("traj,") {
                continue;
            }
            let mut parts = trimmed.split(',');
            let parse = |s: Option<&str>| -> Option<usize> { s?.trim().parse().ok() };
            match (
                parse(parts.next()),
                parse(parts.next()),
                parse(parts.next()),
            ) {
                (Some(a), Some(b), Some(c)) if c < spec.n_states() => rows.push((a, b, c)),
                _ => return Err(ReplayError::Parse(lineno + 1)),
            }
        }
        if rows.is_empty() {
            return Err(ReplayError::EmptyBuffer);
        }
        let n_traj = rows.iter().map(|r| r.0).max().unwrap() + 1;
        let len = rows.len() / n_traj;
        if len < 2 || rows.len() != n_traj * len {
            return Err(ReplayError::Parse(0));
        }
        let mut trajectories = vec![
            Trajectory {
                states: Vec::with_capacity(len)
            };
            n_traj
        ];
        for (traj, step, state) in rows {
            if trajectories[traj].states.len() != step {
                return Err(ReplayError::Parse(0));
            }
            trajectories[traj].states.push(spec.state(state));
        }
        ReplayBuffer::from_trajectories(spec, trajectories, len - 1)
    }
}
