//! Configuration search with the graph held fixed: a factored-UCB
//! surrogate, a Pareto-archive evolutionary strategy and a random
//! baseline, all scored on one common seed schedule.

use std::collections::{BTreeMap, BTreeSet};
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{grid_points, ConfigAssignment, ConfigSpace, ParamKind, ParamSpec, ParamValue};
use crate::eval::{CachedEstimate, EvalCache, EvalError, Evaluator, RowTag, Schedule, UtilityEstimate};
use crate::feedback::{collect, EditProposal, ProposalTarget};
use crate::graph::ValidatedGraph;
use crate::seed;

/// Score assumed for buckets never observed: the midpoint of `[0, 100]`.
pub const PRIOR_MEAN: f64 = 50.0;

/// Largest discretized space the C-step walks in enumeration order once
/// its strategy starts repeating itself.
const ENUMERATION_LIMIT: usize = 100_000;

/// Tries at replacing a repeated proposal before moving on.
const REPEAT_ATTEMPTS: u64 = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    Smbo,
    Evolutionary,
    Random,
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "smbo" => Ok(Strategy::Smbo),
            "evolutionary" => Ok(Strategy::Evolutionary),
            "random" => Ok(Strategy::Random),
            other => Err(format!("unknown strategy {other:?}")),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BucketStats {
    pub count: u64,
    pub mean: f64,
    pub mean_cost: f64,
}

/// Per-(parameter, bucket) running means of observed utility.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SurrogateModel {
    pub buckets: BTreeMap<String, BTreeMap<String, BucketStats>>,
    pub observations: u64,
}

impl SurrogateModel {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn stats(&self, param: &str, bucket: &str) -> BucketStats {
        self.buckets
            .get(param)
            .and_then(|b| b.get(bucket))
            .copied()
            .unwrap_or_default()
    }

    /// UCB score of one bucket.
    pub fn ucb(&self, param: &str, bucket: &str, explore: f64) -> f64 {
        let s = self.stats(param, bucket);
        let mean = if s.count == 0 { PRIOR_MEAN } else { s.mean };
        let n = self.observations as f64;
        mean + explore * ((1.0 + n).ln() / (1.0 + s.count as f64)).sqrt()
    }
}

fn decile(x: f64, lo: f64, hi: f64) -> usize {
    if hi <= lo {
        return 0;
    }
    (((x - lo) / (hi - lo) * 10.0).floor() as i64).clamp(0, 9) as usize
}

fn int_decile(v: i64, lo: i64, hi: i64) -> usize {
    let width = (hi - lo) as f64 + 1.0;
    ((((v - lo) as f64) * 10.0 / width).floor() as usize).min(9)
}

/// Bucket labels a value falls into. Text values fall into one
/// presence bucket per vocabulary token.
pub fn buckets_of(spec: &ParamSpec, value: &ParamValue) -> Vec<String> {
    match (&spec.kind, value) {
        (ParamKind::Choice { .. }, ParamValue::Choice(v)) => vec![v.clone()],
        (ParamKind::IntRange { lo, hi }, ParamValue::Int(v)) => vec![format!("d{}", int_decile(*v, *lo, *hi))],
        (ParamKind::FloatRange { lo, hi, .. }, ParamValue::Float(v)) => vec![format!("d{}", decile(*v, *lo, *hi))],
        (ParamKind::Text { vocabulary, .. }, ParamValue::Text(tokens)) => vocabulary
            .iter()
            .map(|t| format!("{t}:{}", u8::from(tokens.contains(t))))
            .collect(),
        _ => Vec::new(),
    }
}

/// Records one observation in every bucket the assignment touches.
pub fn smbo_update(
    surrogate: &mut SurrogateModel,
    space: &ConfigSpace,
    assignment: &ConfigAssignment,
    utility: f64,
    cost: f64,
) {
    for p in &space.params {
        let Some(v) = assignment.get(&p.name) else { continue };
        let per = surrogate.buckets.entry(p.name.clone()).or_default();
        for b in buckets_of(p, v) {
            let s = per.entry(b).or_default();
            s.count += 1;
            let n = s.count as f64;
            s.mean += (utility - s.mean) / n;
            s.mean_cost += (cost - s.mean_cost) / n;
        }
    }
    surrogate.observations += 1;
}

/// Picks the index of the maximum, breaking exact ties uniformly.
fn argmax_seeded<R: Rng>(scores: &[f64], rng: &mut R) -> usize {
    let best = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let ties: Vec<usize> = (0..scores.len()).filter(|&i| scores[i] == best).collect();
    ties[rng.random_range(0..ties.len())]
}

fn propose_param<R: Rng>(s: &SurrogateModel, p: &ParamSpec, explore: f64, rng: &mut R) -> ParamValue {
    match &p.kind {
        ParamKind::Choice { values } => {
            let scores: Vec<f64> = values.iter().map(|v| s.ucb(&p.name, v, explore)).collect();
            ParamValue::Choice(values[argmax_seeded(&scores, rng)].clone())
        }
        ParamKind::IntRange { lo, hi } => {
            let mut by_bucket: BTreeMap<usize, (i64, i64)> = BTreeMap::new();
            if hi - lo < 10 {
                for v in *lo..=*hi {
                    let e = by_bucket.entry(int_decile(v, *lo, *hi)).or_insert((v, v));
                    e.1 = v;
                }
            } else {
                // each decile covers a contiguous integer run
                let mut start = *lo;
                for b in 0..10usize {
                    let end = if b == 9 {
                        *hi
                    } else {
                        let mut e = start;
                        while e < *hi && int_decile(e + 1, *lo, *hi) == b {
                            e += 1;
                        }
                        e
                    };
                    by_bucket.insert(b, (start, end));
                    start = end + 1;
                    if start > *hi {
                        break;
                    }
                }
            }
            let keys: Vec<usize> = by_bucket.keys().copied().collect();
            let scores: Vec<f64> = keys.iter().map(|b| s.ucb(&p.name, &format!("d{b}"), explore)).collect();
            let (a, b) = by_bucket[&keys[argmax_seeded(&scores, rng)]];
            ParamValue::Int(rng.random_range(a..=b))
        }
        ParamKind::FloatRange { lo, hi, grid } => {
            let points = grid.map(|n| grid_points(*lo, *hi, n));
            let keys: Vec<usize> = match &points {
                Some(pts) => pts
                    .iter()
                    .map(|x| decile(*x, *lo, *hi))
                    .collect::<BTreeSet<_>>()
                    .into_iter()
                    .collect(),
                None if lo == hi => vec![0],
                None => (0..10).collect(),
            };
            let scores: Vec<f64> = keys.iter().map(|b| s.ucb(&p.name, &format!("d{b}"), explore)).collect();
            let b = keys[argmax_seeded(&scores, rng)];
            match points {
                Some(pts) => {
                    let inside: Vec<f64> = pts.into_iter().filter(|x| decile(*x, *lo, *hi) == b).collect();
                    ParamValue::Float(inside[rng.random_range(0..inside.len())])
                }
                None if lo == hi => ParamValue::Float(*lo),
                None => {
                    let w = (hi - lo) / 10.0;
                    let a = lo + w * b as f64;
                    let z = if b == 9 { *hi } else { a + w };
                    ParamValue::Float(rng.random_range(a..=z).clamp(*lo, *hi))
                }
            }
        }
        ParamKind::Text {
            vocabulary, max_tokens, ..
        } => {
            // include a token when its presence bucket wins; keep the
            // strongest margins if more win than fit
            let mut wanted: Vec<(f64, usize)> = Vec::new();
            for (i, t) in vocabulary.iter().enumerate() {
                let on = s.ucb(&p.name, &format!("{t}:1"), explore);
                let off = s.ucb(&p.name, &format!("{t}:0"), explore);
                let include = if on == off { rng.random_bool(0.5) } else { on > off };
                if include {
                    wanted.push((on - off, i));
                }
            }
            wanted.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            wanted.truncate(*max_tokens);
            let mut idx: Vec<usize> = wanted.into_iter().map(|(_, i)| i).collect();
            idx.sort_unstable();
            ParamValue::Text(idx.into_iter().map(|i| vocabulary[i].clone()).collect())
        }
    }
}

/// Per parameter, the bucket maximizing
/// `mean + w * sqrt(ln(1 + N) / (1 + n))`, then a value inside it.
pub fn smbo_propose(surrogate: &SurrogateModel, space: &ConfigSpace, seed: u64, explore: f64) -> ConfigAssignment {
    let mut rng = seed::rng(seed);
    ConfigAssignment(
        space
            .params
            .iter()
            .map(|p| (p.name.clone(), propose_param(surrogate, p, explore, &mut rng)))
            .collect(),
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchiveMember {
    pub id: String,
    pub assignment: ConfigAssignment,
    pub utility: f64,
    pub cost: f64,
}

fn dominates(a: &ArchiveMember, b: &ArchiveMember) -> bool {
    a.utility >= b.utility && a.cost <= b.cost && (a.utility > b.utility || a.cost < b.cost)
}

/// Members mutually non-dominated in (utility up, cost down), at most
/// `capacity` of them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParetoArchive {
    pub capacity: usize,
    pub members: Vec<ArchiveMember>,
}

impl ParetoArchive {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity: capacity.max(1),
            members: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Whether any member dominates another.
    pub fn is_sound(&self) -> bool {
        self.members
            .iter()
            .all(|a| self.members.iter().all(|b| !dominates(a, b)))
    }
}

/// One-dimensional crowding distances on utility; boundary members are
/// infinitely far.
pub fn crowding_distances(members: &[ArchiveMember]) -> Vec<f64> {
    let n = members.len();
    let mut d = vec![0.0; n];
    if n <= 2 {
        return vec![f64::INFINITY; n];
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| members[a].utility.total_cmp(&members[b].utility).then(a.cmp(&b)));
    let span = members[order[n - 1]].utility - members[order[0]].utility;
    d[order[0]] = f64::INFINITY;
    d[order[n - 1]] = f64::INFINITY;
    for k in 1..n - 1 {
        let gap = members[order[k + 1]].utility - members[order[k - 1]].utility;
        d[order[k]] = if span > 0.0 { gap / span } else { 0.0 };
    }
    d
}

/// Inserts unless dominated, drops members the newcomer dominates, then
/// evicts the least crowded member while over capacity (ties: the more
/// expensive one). Returns whether the candidate is in the archive.
pub fn pareto_insert(archive: &mut ParetoArchive, candidate: ArchiveMember) -> bool {
    if archive.members.iter().any(|m| dominates(m, &candidate)) {
        return false;
    }
    archive.members.retain(|m| !dominates(&candidate, m));
    let id = candidate.id.clone();
    archive.members.push(candidate);
    while archive.members.len() > archive.capacity {
        let d = crowding_distances(&archive.members);
        let victim = (0..archive.members.len())
            .min_by(|&a, &b| {
                d[a].total_cmp(&d[b])
                    .then(archive.members[b].cost.total_cmp(&archive.members[a].cost))
                    .then(b.cmp(&a))
            })
            .expect("nonempty");
        archive.members.remove(victim);
    }
    archive.members.iter().any(|m| m.id == id)
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CStepError {
    #[error("the archive is empty")]
    EmptyArchive,
    #[error("budget {budget} is below one minibatch of {minibatch}")]
    BudgetBelowMinibatch { budget: u64, minibatch: usize },
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// The parameter and hint a child will mutate: the highest-priority
/// applicable proposal, else a uniformly chosen parameter.
pub fn child_target<R: Rng>(
    space: &ConfigSpace,
    parent: &ConfigAssignment,
    proposals: &[EditProposal],
    rng: &mut R,
) -> Option<(String, Option<String>)> {
    for p in proposals {
        let ProposalTarget::Param(name) = &p.target else {
            continue;
        };
        let Some(spec) = space.get(name) else { continue };
        let Some(value) = parent.get(name) else { continue };
        if p.hint.is_empty() || spec.hint_applies(value, &p.hint) {
            let hint = (!p.hint.is_empty()).then(|| p.hint.clone());
            return Some((name.clone(), hint));
        }
    }
    if space.is_empty() {
        return None;
    }
    let i = rng.random_range(0..space.len());
    Some((space.params[i].name.clone(), None))
}

/// `n` children, parents taken round-robin from the archive, each one
/// intensity-1 mutation of its parent.
pub fn evolve_population(
    archive: &ParetoArchive,
    space: &ConfigSpace,
    proposals: &[EditProposal],
    seed: u64,
    n: usize,
) -> Result<Vec<ConfigAssignment>, CStepError> {
    if archive.is_empty() {
        return Err(CStepError::EmptyArchive);
    }
    Ok((0..n)
        .map(|i| {
            let parent = &archive.members[i % archive.len()].assignment;
            let child_seed = seed::derive(seed, "child", i as u64);
            let mut rng = seed::rng(child_seed);
            match child_target(space, parent, proposals, &mut rng) {
                Some((name, hint)) => space.mutate_param(parent, &name, hint.as_deref(), rng.random()),
                None => parent.clone(),
            }
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateConfig {
    pub id: String,
    pub assignment: ConfigAssignment,
    pub estimate: Option<UtilityEstimate>,
    pub feasible: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<String>,
    pub edit: String,
}

impl CandidateConfig {
    pub fn mean(&self) -> Option<f64> {
        self.estimate.as_ref().map(|e| e.mean)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CStepParams {
    pub explore_weight: f64,
    /// Archive capacity k.
    pub population: usize,
    /// Candidates proposed per wave.
    pub wave: usize,
}

impl Default for CStepParams {
    fn default() -> Self {
        Self {
            explore_weight: 10.0,
            population: 4,
            wave: 4,
        }
    }
}

pub struct CStepInput<'a> {
    pub graph: &'a ValidatedGraph,
    pub space: &'a ConfigSpace,
    pub incumbent: &'a ConfigAssignment,
    pub strategy: Strategy,
    pub budget: u64,
    pub seed: u64,
    pub proposals: &'a [EditProposal],
    pub schedule: &'a Schedule,
    pub kappa: Option<f64>,
    pub params: CStepParams,
    pub iter: u32,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CStepReport {
    pub strategy: Option<Strategy>,
    pub rollouts: u64,
    pub candidates: Vec<CandidateConfig>,
    /// No evaluated candidate met the cost bound.
    pub infeasible_step: bool,
}

#[derive(Clone, Debug)]
pub struct CStepOutcome {
    pub best: CandidateConfig,
    pub report: CStepReport,
}

struct Proposal {
    assignment: ConfigAssignment,
    parent: Option<String>,
    edit: String,
}

/// Optimizes the assignment with the graph fixed. The incumbent is
/// evaluated first; candidates are scored on the same schedule and the
/// feasible one with the highest mean wins (earliest on ties).
pub fn run_c_step(
    input: &CStepInput<'_>,
    evaluator: &Evaluator<'_>,
    cache: &mut EvalCache,
) -> Result<CStepOutcome, CStepError> {
    let mb = input.schedule.len();
    let spec = input.graph.spec();
    let mut budget = input.budget;
    let mut report = CStepReport {
        strategy: Some(input.strategy),
        ..CStepReport::default()
    };
    let feasible = |e: &UtilityEstimate| input.kappa.is_none_or(|k| e.mean_cost <= k);

    let incumbent_id = format!("t{}/c/incumbent", input.iter);
    let incumbent_est = match cache.get(spec, input.incumbent) {
        Some(hit) => hit.estimate.clone(),
        None => {
            if budget < mb as u64 {
                return Err(CStepError::BudgetBelowMinibatch { budget, minibatch: mb });
            }
            let tag = RowTag::new(input.iter, "c-step", incumbent_id.clone());
            let (est, records) = evaluator.estimate(input.graph, input.incumbent, input.schedule, &tag)?;
            cache.insert(
                spec,
                input.incumbent,
                CachedEstimate {
                    estimate: est.clone(),
                    feedback: collect(&records),
                },
            );
            budget -= mb as u64;
            report.rollouts += mb as u64;
            est
        }
    };
    report.candidates.push(CandidateConfig {
        id: incumbent_id.clone(),
        assignment: input.incumbent.clone(),
        feasible: feasible(&incumbent_est),
        estimate: Some(incumbent_est.clone()),
        parent: None,
        edit: "incumbent".into(),
    });

    let mut seen: BTreeSet<String> = BTreeSet::new();
    seen.insert(input.incumbent.key());
    let mut surrogate = SurrogateModel::new();
    smbo_update(
        &mut surrogate,
        input.space,
        input.incumbent,
        incumbent_est.mean,
        incumbent_est.mean_cost,
    );
    let mut archive = ParetoArchive::new(input.params.population);
    pareto_insert(
        &mut archive,
        ArchiveMember {
            id: incumbent_id.clone(),
            assignment: input.incumbent.clone(),
            utility: incumbent_est.mean,
            cost: incumbent_est.mean_cost,
        },
    );
    let enumeration = if input.space.grid_size() <= ENUMERATION_LIMIT {
        input.space.enumerate(ENUMERATION_LIMIT).ok()
    } else {
        None
    };
    let mut cursor = 0usize;
    let mut reflective: Vec<&EditProposal> = input
        .proposals
        .iter()
        .filter(|p| matches!(&p.target, ProposalTarget::Param(n) if input.space.contains(n)))
        .collect();
    reflective.reverse();

    let mut wave_no = 0u64;
    let mut counter = 0usize;
    let mut exhausted = false;
    while !exhausted && budget >= mb as u64 && evaluator.ledger.remaining() >= mb as u64 {
        let room = ((budget / mb as u64) as usize).min(input.params.wave.max(1));
        let wave_seed = seed::derive(input.seed, "wave", wave_no);
        wave_no += 1;

        let mut raw: Vec<Proposal> = Vec::new();
        // feedback-directed edits of the best candidate so far go first
        let best_now = best_of(&report.candidates).assignment.clone();
        let best_id = best_of(&report.candidates).id.clone();
        while raw.len() < room {
            let Some(p) = reflective.pop() else { break };
            let name = p.target.name();
            let hint = (!p.hint.is_empty()).then_some(p.hint.as_str());
            raw.push(Proposal {
                assignment: input
                    .space
                    .mutate_param(&best_now, name, hint, seed::derive(wave_seed, name, 0)),
                parent: Some(best_id.clone()),
                edit: format!("feedback {name} {}", p.hint).trim_end().to_string(),
            });
        }
        let need = room - raw.len();
        match input.strategy {
            Strategy::Smbo => {
                for k in 0..need {
                    raw.push(Proposal {
                        assignment: smbo_propose(
                            &surrogate,
                            input.space,
                            seed::derive(wave_seed, "smbo", k as u64),
                            input.params.explore_weight,
                        ),
                        parent: None,
                        edit: "smbo".into(),
                    });
                }
            }
            Strategy::Evolutionary => {
                let children = evolve_population(&archive, input.space, input.proposals, wave_seed, need)?;
                for (k, c) in children.into_iter().enumerate() {
                    raw.push(Proposal {
                        assignment: c,
                        parent: Some(archive.members[k % archive.len()].id.clone()),
                        edit: "mutate".into(),
                    });
                }
            }
            Strategy::Random => {
                for k in 0..need {
                    raw.push(Proposal {
                        assignment: input.space.sample(seed::derive(wave_seed, "random", k as u64)),
                        parent: None,
                        edit: "sample".into(),
                    });
                }
            }
        }

        // replace repeats: first mutations of the best candidate so far,
        // then the
        // enumeration (or fresh samples) so an exhaustive budget covers
        // the whole space
        let mut wave: Vec<Proposal> = Vec::new();
        for (k, mut p) in raw.into_iter().enumerate() {
            if seen.contains(&p.assignment.key()) {
                let mut replacement = None;
                for attempt in 0..REPEAT_ATTEMPTS {
                    let s = seed::derive(wave_seed, "nearby", (k as u64) * REPEAT_ATTEMPTS + attempt);
                    let intensity = 1 + (attempt as usize) / 4;
                    let m = input.space.mutate(&best_now, intensity, s);
                    if !seen.contains(&m.key()) {
                        replacement = Some((m, "nearby"));
                        break;
                    }
                }
                if replacement.is_none() {
                    if let Some(all) = &enumeration {
                        while cursor < all.len() {
                            let c = &all[cursor];
                            cursor += 1;
                            if !seen.contains(&c.key()) {
                                replacement = Some((c.clone(), "enumerate"));
                                break;
                            }
                        }
                    } else {
                        for attempt in 0..REPEAT_ATTEMPTS {
                            let s = input.space.sample(seed::derive(
                                wave_seed,
                                "resample",
                                (k as u64) * REPEAT_ATTEMPTS + attempt,
                            ));
                            if !seen.contains(&s.key()) {
                                replacement = Some((s, "sample"));
                                break;
                            }
                        }
                    }
                }
                let Some((assignment, edit)) = replacement else {
                    continue;
                };
                p = Proposal {
                    assignment,
                    parent: p.parent,
                    edit: edit.into(),
                };
            }
            seen.insert(p.assignment.key());
            wave.push(p);
        }
        if wave.is_empty() {
            log::debug!(
                "c-step {}: space exhausted after {} candidates",
                input.iter,
                report.candidates.len()
            );
            exhausted = true;
            continue;
        }

        let results = evaluate_wave(input, evaluator, cache, &wave);
        for (p, result) in wave.into_iter().zip(results) {
            let id = format!("t{}/c/{counter}", input.iter);
            counter += 1;
            let (est, records, charged) = result?;
            if let Some(records) = &records {
                evaluator.log(&RowTag::new(input.iter, "c-step", id.clone()), records);
                cache.insert(
                    spec,
                    &p.assignment,
                    CachedEstimate {
                        estimate: est.clone(),
                        feedback: collect(records),
                    },
                );
            }
            budget -= charged;
            report.rollouts += charged;
            smbo_update(&mut surrogate, input.space, &p.assignment, est.mean, est.mean_cost);
            if feasible(&est) {
                pareto_insert(
                    &mut archive,
                    ArchiveMember {
                        id: id.clone(),
                        assignment: p.assignment.clone(),
                        utility: est.mean,
                        cost: est.mean_cost,
                    },
                );
            }
            report.candidates.push(CandidateConfig {
                id,
                feasible: feasible(&est),
                assignment: p.assignment,
                estimate: Some(est),
                parent: p.parent,
                edit: p.edit,
            });
        }
    }

    let any_feasible = report.candidates.iter().any(|c| c.feasible);
    report.infeasible_step = !any_feasible;
    let best = if any_feasible {
        best_of(&report.candidates).clone()
    } else {
        report.candidates[0].clone()
    };
    Ok(CStepOutcome { best, report })
}

/// Feasible candidate with the highest mean, earliest on ties; the first
/// candidate when none is feasible.
fn best_of(candidates: &[CandidateConfig]) -> &CandidateConfig {
    let mut best = &candidates[0];
    for c in candidates.iter().filter(|c| c.feasible) {
        if !best.feasible || c.mean() > best.mean() {
            best = c;
        }
    }
    best
}

type WaveResult = Result<(UtilityEstimate, Option<Vec<crate::eval::RolloutRecord>>, u64), EvalError>;

/// Evaluates a wave concurrently. The caller logs results in wave order,
/// so the history does not depend on thread timing.
fn evaluate_wave(
    input: &CStepInput<'_>,
    evaluator: &Evaluator<'_>,
    cache: &EvalCache,
    wave: &[Proposal],
) -> Vec<WaveResult> {
    let spec = input.graph.spec();
    std::thread::scope(|scope| {
        let handles: Vec<_> = wave
            .iter()
            .map(|p| {
                let cached = cache.get(spec, &p.assignment).map(|c| c.estimate.clone());
                scope.spawn(move || -> WaveResult {
                    if let Some(est) = cached {
                        return Ok((est, None, 0));
                    }
                    let (est, records) = evaluator.estimate_quiet(input.graph, &p.assignment, input.schedule)?;
                    let charged = records.len() as u64;
                    Ok((est, Some(records), charged))
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("evaluation thread panicked"))
            .collect()
    })
}
