//! Fixed reference opponents, league evaluation, normalized-return
//! thresholds and the time-to-threshold benchmark.

use rand::{Rng, RngCore};
use thiserror::Error;

use crate::agents::checkpoint::{AgentSnapshot, CheckpointError, CheckpointMeta};
use crate::agents::{sample_action, ActorParams};
use crate::envs::{
    normalized_return, wrapped_manhattan, CoinEnv, CoinState, Environment, IpdEnv, IpdState,
    IpdTag, Seat, COIN_MOVES, COOPERATE, DEFECT,
};
use crate::graphdiff::{Tape, Tensor};
use crate::rng;
use crate::trainer::EnvChoice;

#[derive(Debug, Error)]
pub enum LeagueError {
    #[error("tit-for-tat is only defined for the iterated prisoner's dilemma")]
    TftNotSupported,
    #[error("checkpoint env '{got}' does not match league env '{expected}'")]
    EnvMismatch { expected: String, got: String },
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

/// Stateless reference policies (tit-for-tat keeps one step of memory,
/// supplied by the environment state).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FixedPolicy {
    AlwaysCooperate,
    AlwaysDefect,
    Random,
    TitForTat,
}

impl FixedPolicy {
    pub fn parse(name: &str) -> Option<FixedPolicy> {
        match name.to_ascii_lowercase().as_str() {
            "ac" | "always_cooperate" | "cooperate" => Some(FixedPolicy::AlwaysCooperate),
            "ad" | "always_defect" | "defect" => Some(FixedPolicy::AlwaysDefect),
            "random" | "rand" => Some(FixedPolicy::Random),
            "tft" | "tit_for_tat" => Some(FixedPolicy::TitForTat),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            FixedPolicy::AlwaysCooperate => "AC",
            FixedPolicy::AlwaysDefect => "AD",
            FixedPolicy::Random => "Random",
            FixedPolicy::TitForTat => "TFT",
        }
    }
}

/// Environments that can drive the fixed reference policies.
pub trait FixedPolicyEnv: Environment {
    fn fixed_action(
        &self,
        kind: FixedPolicy,
        state: &Self::State,
        seat: Seat,
        rng: &mut dyn RngCore,
    ) -> Result<usize, LeagueError>;
}

impl FixedPolicyEnv for IpdEnv {
    fn fixed_action(
        &self,
        kind: FixedPolicy,
        state: &IpdState,
        seat: Seat,
        rng: &mut dyn RngCore,
    ) -> Result<usize, LeagueError> {
        Ok(match kind {
            FixedPolicy::AlwaysCooperate => COOPERATE,
            FixedPolicy::AlwaysDefect => DEFECT,
            FixedPolicy::Random => rng.gen_range(0..2),
            FixedPolicy::TitForTat => match (state.tag, seat) {
                (IpdTag::Start, _) => COOPERATE,
                // copy the opponent's previous move
                (IpdTag::CC, _) => COOPERATE,
                (IpdTag::DD, _) => DEFECT,
                (IpdTag::CD, Seat::One) | (IpdTag::DC, Seat::Two) => DEFECT,
                (IpdTag::DC, Seat::One) | (IpdTag::CD, Seat::Two) => COOPERATE,
            },
        })
    }
}

impl FixedPolicyEnv for CoinEnv {
    /// Always-defect paths greedily to the coin regardless of color;
    /// always-cooperate paths to its own-color coin but never steps onto the
    /// other color, holding a distance-preserving move instead. Ties break
    /// in the fixed move order up, down, left, right.
    fn fixed_action(
        &self,
        kind: FixedPolicy,
        state: &CoinState,
        seat: Seat,
        rng: &mut dyn RngCore,
    ) -> Result<usize, LeagueError> {
        let g = self.grid();
        let me = match seat {
            Seat::One => state.agent1,
            Seat::Two => state.agent2,
        };
        let own_color = match seat {
            Seat::One => state.coin_red,
            Seat::Two => !state.coin_red,
        };
        let dist_after = |mv: usize| wrapped_manhattan(self.apply_move(me, mv), state.coin, g);
        Ok(match kind {
            FixedPolicy::Random => rng.gen_range(0..COIN_MOVES),
            FixedPolicy::AlwaysDefect => {
                (0..COIN_MOVES).min_by_key(|&mv| (dist_after(mv), mv)).expect("moves")
            }
            FixedPolicy::AlwaysCooperate => {
                if own_color {
                    (0..COIN_MOVES).min_by_key(|&mv| (dist_after(mv), mv)).expect("moves")
                } else {
                    // Never pick up the other agent's coin; among non-pickup
                    // moves, keep the current distance where possible.
                    let here = wrapped_manhattan(me, state.coin, g);
                    (0..COIN_MOVES)
                        .filter(|&mv| self.apply_move(me, mv) != state.coin)
                        .min_by_key(|&mv| (dist_after(mv).abs_diff(here), mv))
                        .expect("at most one move lands on the coin")
                }
            }
            FixedPolicy::TitForTat => return Err(LeagueError::TftNotSupported),
        })
    }
}

/// A league participant: either loaded trained parameters or a fixed policy.
pub enum LeaguePlayer {
    Trained { label: String, snapshot: AgentSnapshot, meta: CheckpointMeta },
    Fixed(FixedPolicy),
}

impl LeaguePlayer {
    pub fn label(&self) -> String {
        match self {
            LeaguePlayer::Trained { label, .. } => label.clone(),
            LeaguePlayer::Fixed(k) => k.name().to_string(),
        }
    }
}

enum SeatPolicy<'a> {
    Net(&'a ActorParams),
    Fixed(FixedPolicy),
}

impl LeaguePlayer {
    fn seat_policy(&self) -> SeatPolicy<'_> {
        match self {
            LeaguePlayer::Trained { snapshot, .. } => SeatPolicy::Net(&snapshot.actor),
            LeaguePlayer::Fixed(k) => SeatPolicy::Fixed(*k),
        }
    }
}

type NetSeat<'t> = (crate::agents::ActorVars<'t>, Option<crate::graphdiff::Var<'t>>);

fn seat_actions<'t, E: FixedPolicyEnv>(
    env: &E,
    tape: &'t Tape,
    policy: &SeatPolicy<'_>,
    net: &mut Option<NetSeat<'t>>,
    seat: Seat,
    states: &[E::State],
    rngs: &mut [rand_chacha::ChaCha8Rng],
) -> Result<Vec<usize>, LeagueError> {
    let actions = env.num_actions();
    match policy {
        SeatPolicy::Net(_) => {
            let (vars, hidden) = net.as_mut().expect("net state present for net policy");
            let dim = env.obs_dim();
            let mut data = Vec::with_capacity(states.len() * dim);
            for s in states {
                data.extend_from_slice(&env.encode(s, seat));
            }
            let obs = tape.constant(Tensor::matrix(states.len(), dim, data));
            let (lp, h_next) = vars.step(tape, obs, *hidden);
            *hidden = h_next;
            let lpv = lp.value();
            Ok((0..states.len())
                .map(|e| sample_action(&lpv.data()[e * actions..(e + 1) * actions], 0.0, &mut rngs[e]))
                .collect())
        }
        SeatPolicy::Fixed(kind) => (0..states.len())
            .map(|e| env.fixed_action(*kind, &states[e], seat, &mut rngs[e]))
            .collect(),
    }
}

/// Mean per-step reward for both seats in each of `episodes` episodes.
/// Evaluation always samples the pure policy (no exploration mix).
fn run_pairing<E: FixedPolicyEnv>(
    env: &E,
    one: &SeatPolicy<'_>,
    two: &SeatPolicy<'_>,
    episodes: usize,
    steps: usize,
    master_seed: u64,
    lane: u64,
) -> Result<Vec<(f64, f64)>, LeagueError> {
    let mut rngs: Vec<_> =
        (0..episodes).map(|e| rng::stream(master_seed, rng::DOMAIN_LEAGUE, lane, e as u64)).collect();
    let mut states: Vec<E::State> = rngs.iter_mut().map(|r| env.reset(r)).collect();

    let tape = Tape::new();
    let mut net1: Option<NetSeat<'_>> = match one {
        SeatPolicy::Net(actor) => {
            let vars = actor.insert(&tape, false);
            let hidden = vars.initial_hidden(&tape, episodes);
            Some((vars, hidden))
        }
        SeatPolicy::Fixed(_) => None,
    };
    let mut net2: Option<NetSeat<'_>> = match two {
        SeatPolicy::Net(actor) => {
            let vars = actor.insert(&tape, false);
            let hidden = vars.initial_hidden(&tape, episodes);
            Some((vars, hidden))
        }
        SeatPolicy::Fixed(_) => None,
    };

    let mut totals = vec![(0.0f64, 0.0f64); episodes];
    for _t in 0..steps {
        let a = seat_actions(env, &tape, one, &mut net1, Seat::One, &states, &mut rngs)?;
        let b = seat_actions(env, &tape, two, &mut net2, Seat::Two, &states, &mut rngs)?;
        for e in 0..episodes {
            let (next, r1, r2) = env.step(&states[e], a[e], b[e], &mut rngs[e]);
            states[e] = next;
            totals[e].0 += r1;
            totals[e].1 += r2;
        }
    }
    Ok(totals.into_iter().map(|(r1, r2)| (r1 / steps as f64, r2 / steps as f64)).collect())
}

/// One league pairing's summary: seat-one is the reported agent.
#[derive(Debug, Clone, PartialEq)]
pub struct LeagueRow {
    pub agent: String,
    pub opponent: String,
    pub mean_reward: f64,
    pub stderr: f64,
    pub episodes: usize,
    pub steps: usize,
    /// Present in the coin game only.
    pub normalized_mean: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LeagueReport {
    pub rows: Vec<LeagueRow>,
    /// Mean of per-agent means against each opponent label.
    pub aggregates: Vec<(String, f64)>,
}

impl LeagueReport {
    pub const CSV_HEADER: &'static str =
        "seed,opponent,mean_reward,stderr,episodes,T,normalized_mean";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for row in &self.rows {
            let norm = row.normalized_mean.map(|v| v.to_string()).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                row.agent, row.opponent, row.mean_reward, row.stderr, row.episodes, row.steps, norm
            ));
        }
        for (opp, mean) in &self.aggregates {
            out.push_str(&format!("aggregate,{opp},{mean},,,,\n"));
        }
        out
    }

    pub fn row(&self, agent: &str, opponent: &str) -> Option<&LeagueRow> {
        self.rows.iter().find(|r| r.agent == agent && r.opponent == opponent)
    }
}

#[derive(Debug, Clone)]
pub struct LeagueConfig {
    pub env: EnvChoice,
    pub episodes: usize,
    pub steps: usize,
    pub seed: u64,
    /// Fixed opponents every agent faces. `None` plays the default set
    /// (always-cooperate, always-defect, random) plus a self-copy and every
    /// other listed agent; an explicit list is played verbatim.
    pub opponents: Option<Vec<FixedPolicy>>,
}

/// Verify a trained player's checkpoint matches the league environment.
pub fn check_env_match(meta: &CheckpointMeta, env: &EnvChoice) -> Result<(), LeagueError> {
    let expected = match env {
        EnvChoice::Ipd => "ipd".to_string(),
        EnvChoice::Coin { grid } => format!("coin-{grid}"),
    };
    let got = match meta.env.as_str() {
        "coin" => format!("coin-{}", meta.grid),
        other => other.to_string(),
    };
    if expected != got {
        return Err(LeagueError::EnvMismatch { expected, got });
    }
    Ok(())
}

/// Round-robin evaluation: every agent against the fixed opponents, itself,
/// and every other agent. Deterministic given the seed; pairings run with
/// exploration off.
pub fn run_league(agents: &[LeaguePlayer], cfg: &LeagueConfig) -> Result<LeagueReport, LeagueError> {
    for player in agents {
        if let LeaguePlayer::Trained { meta, .. } = player {
            check_env_match(meta, &cfg.env)?;
        }
    }

    // Deterministic pairing order: agents in input order, opponents fixed
    // first, then self, then the other agents.
    enum Opp<'a> {
        Fixed(FixedPolicy),
        SelfCopy,
        Other(&'a LeaguePlayer),
    }
    let mut pairings: Vec<(usize, Opp, String)> = Vec::new();
    for (i, agent) in agents.iter().enumerate() {
        match &cfg.opponents {
            Some(list) => {
                for &k in list {
                    pairings.push((i, Opp::Fixed(k), k.name().to_string()));
                }
            }
            None => {
                for k in [FixedPolicy::AlwaysCooperate, FixedPolicy::AlwaysDefect, FixedPolicy::Random] {
                    pairings.push((i, Opp::Fixed(k), k.name().to_string()));
                }
                pairings.push((i, Opp::SelfCopy, "Self".to_string()));
                for (j, other) in agents.iter().enumerate() {
                    if j != i {
                        pairings.push((i, Opp::Other(other), other.label()));
                    }
                }
                let _ = agent;
            }
        }
    }

    let mut rows = Vec::with_capacity(pairings.len());
    for (lane, (i, opp, opp_label)) in pairings.iter().enumerate() {
        let agent = &agents[*i];
        let one = agent.seat_policy();
        let two = match opp {
            Opp::Fixed(k) => SeatPolicy::Fixed(*k),
            Opp::SelfCopy => agent.seat_policy(),
            Opp::Other(p) => p.seat_policy(),
        };
        let per_episode = match cfg.env {
            EnvChoice::Ipd => {
                run_pairing(&IpdEnv, &one, &two, cfg.episodes, cfg.steps, cfg.seed, lane as u64)?
            }
            EnvChoice::Coin { grid } => {
                let env = CoinEnv::new(grid).expect("league grid validated upstream");
                run_pairing(&env, &one, &two, cfg.episodes, cfg.steps, cfg.seed, lane as u64)?
            }
        };
        let means: Vec<f64> = per_episode.iter().map(|(r1, _)| *r1).collect();
        let mean = means.iter().sum::<f64>() / means.len() as f64;
        let var = means.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / means.len() as f64;
        let stderr = (var / means.len() as f64).sqrt();
        let normalized_mean = match cfg.env {
            EnvChoice::Coin { grid } => Some(normalized_return(mean, grid)),
            EnvChoice::Ipd => None,
        };
        rows.push(LeagueRow {
            agent: agent.label(),
            opponent: opp_label.clone(),
            mean_reward: mean,
            stderr,
            episodes: cfg.episodes,
            steps: cfg.steps,
            normalized_mean,
        });
    }

    // Aggregate means per opponent label, in first-appearance order.
    let mut aggregates: Vec<(String, f64)> = Vec::new();
    for row in &rows {
        if !aggregates.iter().any(|(l, _)| *l == row.opponent) {
            let group: Vec<f64> =
                rows.iter().filter(|r| r.opponent == row.opponent).map(|r| r.mean_reward).collect();
            aggregates.push((row.opponent.clone(), group.iter().sum::<f64>() / group.len() as f64));
        }
    }

    Ok(LeagueReport { rows, aggregates })
}

/// Mean per-step rewards of a snapshot against a copy of itself and against
/// the always-defect policy, for threshold checks during benchmarks.
pub fn eval_self_and_defect(
    snapshot: &AgentSnapshot,
    env: EnvChoice,
    episodes: usize,
    steps: usize,
    seed: u64,
    lane: u64,
) -> Result<(f64, f64), LeagueError> {
    let net = SeatPolicy::Net(&snapshot.actor);
    let net2 = SeatPolicy::Net(&snapshot.actor);
    let ad = SeatPolicy::Fixed(FixedPolicy::AlwaysDefect);
    let run = |one: &SeatPolicy<'_>, two: &SeatPolicy<'_>, sublane: u64| match env {
        EnvChoice::Ipd => run_pairing(&IpdEnv, one, two, episodes, steps, seed, lane * 2 + sublane),
        EnvChoice::Coin { grid } => {
            let env = CoinEnv::new(grid).expect("grid validated upstream");
            run_pairing(&env, one, two, episodes, steps, seed, lane * 2 + sublane)
        }
    };
    let mean = |rows: Vec<(f64, f64)>| rows.iter().map(|(r1, _)| r1).sum::<f64>() / rows.len() as f64;
    let vs_self = mean(run(&net, &net2, 0)?);
    let vs_ad = mean(run(&net, &ad, 1)?);
    Ok((vs_self, vs_ad))
}

// ---- thresholds ----

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ThresholdLevel {
    Weak,
    Medium,
    Strong,
}

impl ThresholdLevel {
    pub fn name(&self) -> &'static str {
        match self {
            ThresholdLevel::Weak => "weak",
            ThresholdLevel::Medium => "medium",
            ThresholdLevel::Strong => "strong",
        }
    }
}

/// Normalized-return requirements for one level; both inequalities are
/// inclusive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdSpec {
    pub level: ThresholdLevel,
    pub min_vs_each_other: f64,
    pub min_vs_always_defect: f64,
}

pub fn standard_thresholds() -> [ThresholdSpec; 3] {
    [
        ThresholdSpec { level: ThresholdLevel::Weak, min_vs_each_other: 0.05, min_vs_always_defect: -1.2 },
        ThresholdSpec { level: ThresholdLevel::Medium, min_vs_each_other: 0.1, min_vs_always_defect: -0.5 },
        ThresholdSpec { level: ThresholdLevel::Strong, min_vs_each_other: 0.2, min_vs_always_defect: -0.2 },
    ]
}

/// Both normalized returns at or above the level's minima.
pub fn threshold_check(norm_vs_each_other: f64, norm_vs_always_defect: f64, spec: &ThresholdSpec) -> bool {
    norm_vs_each_other >= spec.min_vs_each_other && norm_vs_always_defect >= spec.min_vs_always_defect
}

/// One periodic evaluation during a benchmark run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalPoint {
    pub iteration: u64,
    pub wall_clock_s: f64,
    pub norm_vs_self: f64,
    pub norm_vs_always_defect: f64,
}

/// First crossing of one threshold level, if the stream ever passed it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Crossing {
    pub level: ThresholdLevel,
    pub passed: bool,
    pub iteration: Option<u64>,
    pub wall_clock_s: Option<f64>,
}

/// Earliest evaluation at which each level's check passes; later regressions
/// do not erase a recorded crossing.
pub fn time_to_threshold(points: &[EvalPoint], specs: &[ThresholdSpec]) -> Vec<Crossing> {
    specs
        .iter()
        .map(|spec| {
            match points.iter().find(|p| threshold_check(p.norm_vs_self, p.norm_vs_always_defect, spec)) {
                Some(p) => Crossing {
                    level: spec.level,
                    passed: true,
                    iteration: Some(p.iteration),
                    wall_clock_s: Some(p.wall_clock_s),
                },
                None => Crossing { level: spec.level, passed: false, iteration: None, wall_clock_s: None },
            }
        })
        .collect()
}

pub const THRESHOLD_CSV_HEADER: &str = "seed,level,passed,iteration,wall_clock_s";

pub fn threshold_csv_rows(seed: u64, crossings: &[Crossing]) -> String {
    let mut out = String::new();
    for c in crossings {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            seed,
            c.level.name(),
            c.passed,
            c.iteration.map(|i| i.to_string()).unwrap_or_else(|| "not_reached".into()),
            c.wall_clock_s.map(|w| w.to_string()).unwrap_or_else(|| "not_reached".into()),
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::ipd_reset;

    #[test]
    fn tft_stream_against_always_defect() {
        // (-3, 0) at the first step, then (-2, -2) forever.
        let env = IpdEnv;
        let mut rng = rng::stream(1, rng::DOMAIN_LEAGUE, 0, 0);
        let mut state = ipd_reset();
        let mut rewards = Vec::new();
        for _ in 0..5 {
            let a = env.fixed_action(FixedPolicy::TitForTat, &state, Seat::One, &mut rng).unwrap();
            let b = env.fixed_action(FixedPolicy::AlwaysDefect, &state, Seat::Two, &mut rng).unwrap();
            let (next, r1, r2) = env.step(&state, a, b, &mut rng);
            state = next;
            rewards.push((r1, r2));
        }
        assert_eq!(rewards[0], (-3.0, 0.0));
        for &(r1, r2) in &rewards[1..] {
            assert_eq!((r1, r2), (-2.0, -2.0));
        }
    }

    #[test]
    fn coin_greedy_takes_adjacent_coin() {
        let env = CoinEnv::new(3).unwrap();
        let state = CoinState {
            agent1: (0, 0),
            agent2: (2, 2),
            coin: (0, 1),
            coin_red: false,
            prev_actions: None,
            t: 0,
        };
        let mut rng = rng::stream(1, rng::DOMAIN_LEAGUE, 1, 0);
        let mv = env.fixed_action(FixedPolicy::AlwaysDefect, &state, Seat::One, &mut rng).unwrap();
        assert_eq!(env.apply_move(state.agent1, mv), state.coin);
    }

    #[test]
    fn coin_cooperator_avoids_other_color_and_holds_distance() {
        let env = CoinEnv::new(3).unwrap();
        // agent one (red) next to a blue coin: must not step on it, and must
        // keep its wrapped distance of 1 where possible.
        let state = CoinState {
            agent1: (0, 0),
            agent2: (2, 2),
            coin: (0, 1),
            coin_red: false,
            prev_actions: None,
            t: 0,
        };
        let mut rng = rng::stream(1, rng::DOMAIN_LEAGUE, 2, 0);
        let mv = env.fixed_action(FixedPolicy::AlwaysCooperate, &state, Seat::One, &mut rng).unwrap();
        let dest = env.apply_move(state.agent1, mv);
        assert_ne!(dest, state.coin);
        assert_eq!(wrapped_manhattan(dest, state.coin, 3), 1, "distance preserved");
    }

    #[test]
    fn tft_rejected_for_coin() {
        let env = CoinEnv::new(3).unwrap();
        let mut rng = rng::stream(1, rng::DOMAIN_LEAGUE, 3, 0);
        let state = env.reset(&mut rng);
        assert!(matches!(
            env.fixed_action(FixedPolicy::TitForTat, &state, Seat::One, &mut rng),
            Err(LeagueError::TftNotSupported)
        ));
    }

    #[test]
    fn ipd_fixed_league_rows_are_analytic() {
        let agents = vec![
            LeaguePlayer::Fixed(FixedPolicy::AlwaysDefect),
            LeaguePlayer::Fixed(FixedPolicy::AlwaysCooperate),
        ];
        let cfg = LeagueConfig {
            env: EnvChoice::Ipd,
            episodes: 4,
            steps: 10,
            seed: 5,
            opponents: None,
        };
        let report = run_league(&agents, &cfg).unwrap();
        let ad_self = report.row("AD", "Self").unwrap();
        assert_eq!(ad_self.mean_reward, -2.0);
        assert_eq!(ad_self.stderr, 0.0);
        let ac_self = report.row("AC", "Self").unwrap();
        assert_eq!(ac_self.mean_reward, -1.0);
        let ac_vs_ad = report.row("AC", "AD").unwrap();
        assert_eq!(ac_vs_ad.mean_reward, -3.0);
        let ad_vs_ac = report.row("AD", "AC").unwrap();
        assert_eq!(ad_vs_ac.mean_reward, 0.0);
    }

    #[test]
    fn league_bytes_reproducible() {
        let agents = vec![LeaguePlayer::Fixed(FixedPolicy::Random)];
        let cfg = LeagueConfig {
            env: EnvChoice::Coin { grid: 3 },
            episodes: 6,
            steps: 12,
            seed: 9,
            opponents: None,
        };
        let a = run_league(&agents, &cfg).unwrap().to_csv();
        let b = run_league(&agents, &cfg).unwrap().to_csv();
        assert_eq!(a, b);
    }

    #[test]
    fn explicit_opponent_list_row_counting() {
        let agents = vec![
            LeaguePlayer::Fixed(FixedPolicy::Random),
            LeaguePlayer::Fixed(FixedPolicy::Random),
            LeaguePlayer::Fixed(FixedPolicy::Random),
        ];
        let cfg = LeagueConfig {
            env: EnvChoice::Ipd,
            episodes: 2,
            steps: 4,
            seed: 3,
            opponents: Some(vec![
                FixedPolicy::AlwaysCooperate,
                FixedPolicy::AlwaysDefect,
                FixedPolicy::Random,
                FixedPolicy::TitForTat,
            ]),
        };
        let report = run_league(&agents, &cfg).unwrap();
        assert_eq!(report.rows.len(), 12, "3 agents x 4 opponents");
        assert_eq!(report.aggregates.len(), 4);
    }

    #[test]
    fn threshold_table_semantics() {
        let [weak, medium, strong] = standard_thresholds();
        // passes all three
        assert!(threshold_check(0.25, -0.1, &weak));
        assert!(threshold_check(0.25, -0.1, &medium));
        assert!(threshold_check(0.25, -0.1, &strong));
        // weak only
        assert!(threshold_check(0.07, -1.0, &weak));
        assert!(!threshold_check(0.07, -1.0, &medium));
        assert!(!threshold_check(0.07, -1.0, &strong));
        // fails everything: vs-self at zero
        assert!(!threshold_check(0.0, 0.0, &weak));
        // equality passes
        assert!(threshold_check(0.05, -1.2, &weak));
        assert!(threshold_check(0.2, -0.2, &strong));
    }

    #[test]
    fn time_to_threshold_first_crossings_only() {
        let specs = standard_thresholds();
        let points = [
            EvalPoint { iteration: 10, wall_clock_s: 1.0, norm_vs_self: 0.06, norm_vs_always_defect: -1.0 },
            EvalPoint { iteration: 20, wall_clock_s: 2.0, norm_vs_self: 0.02, norm_vs_always_defect: -2.0 },
            EvalPoint { iteration: 30, wall_clock_s: 3.0, norm_vs_self: 0.12, norm_vs_always_defect: -0.4 },
        ];
        let crossings = time_to_threshold(&points, &specs);
        assert_eq!(crossings[0].iteration, Some(10), "weak crossed first at 10 despite the dip");
        assert_eq!(crossings[1].iteration, Some(30));
        assert!(!crossings[2].passed, "strong never reached");
        assert_eq!(crossings[2].wall_clock_s, None);
    }
}
