//! Desk-scale hybrid RL: a tabular policy answering single-digit addition
//! prompts in either a short (direct answer) or long (think, then answer)
//! mode, trained with group-relative policy gradients.
//!
//! A rollout is three decisions:
//!
//! 1. style: emit a think block or answer directly (conditioned on prompt
//!    and mode, so each mode has to learn its own format);
//! 2. think value: a guess of the sum written into the think block;
//! 3. answer digit: prompt logits shared by both modes, plus a learned copy
//!    weight on the think value when there is one.
//!
//! Responses are rendered to text and scored by the same reward functions
//! used for real responses.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::grpo::{grpo_advantages, sample_mode_with, RolloutGroup, DEFAULT_P_LONG};
use super::prob::TokenModel;
use super::reward::{
    score_group, HeuristicScorer, PreferenceScorer, RewardBreakdown, RewardContext,
};
use super::verify::rule_reward;
use super::{Mode, RlError, THINK_CLOSE, THINK_OPEN};
use crate::numerics::softmax_in_place;

pub const STYLE_DIRECT: usize = 0;
pub const STYLE_THINK: usize = 1;

/// Addition prompts over operands `0..=max_operand`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToyTask {
    pub max_operand: usize,
}

impl Default for ToyTask {
    fn default() -> Self {
        Self { max_operand: 4 }
    }
}

impl ToyTask {
    pub fn num_prompts(&self) -> usize {
        (self.max_operand + 1).pow(2)
    }

    /// Answer vocabulary: the digits `0..=vocab-1`.
    pub fn vocab(&self) -> usize {
        (2 * self.max_operand + 1).max(10)
    }

    pub fn operands(&self, prompt_id: usize) -> (usize, usize) {
        (
            prompt_id / (self.max_operand + 1),
            prompt_id % (self.max_operand + 1),
        )
    }

    pub fn prompt_id(&self, a: usize, b: usize) -> Option<usize> {
        (a <= self.max_operand && b <= self.max_operand).then(|| a * (self.max_operand + 1) + b)
    }

    pub fn reference(&self, prompt_id: usize) -> String {
        let (a, b) = self.operands(prompt_id);
        (a + b).to_string()
    }

    pub fn prompt(&self, prompt_id: usize, mode: Mode) -> String {
        let (a, b) = self.operands(prompt_id);
        format!("{a} + {b} = ? {}", mode.tag())
    }
}

/// The decisions behind one rollout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ToyRollout {
    pub style: usize,
    pub think: Option<usize>,
    pub answer: usize,
}

impl ToyRollout {
    pub fn render(&self, task: &ToyTask, prompt_id: usize) -> String {
        let (a, b) = task.operands(prompt_id);
        match self.think {
            Some(t) => format!(
                "{THINK_OPEN} {a} + {b} = {t} {THINK_CLOSE} answer: {}",
                self.answer
            ),
            None => format!("answer: {}", self.answer),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyPolicy {
    pub task: ToyTask,
    /// `[prompt][mode] → 2` style logits.
    pub style: Vec<[[f64; 2]; 2]>,
    /// `[prompt] → vocab` think-value logits.
    pub think: Vec<Vec<f64>>,
    /// `[prompt] → vocab` answer logits.
    pub answer: Vec<Vec<f64>>,
    /// Added to the answer logit equal to the think value.
    pub copy: f64,
}

fn mode_slot(mode: Mode) -> usize {
    match mode {
        Mode::Short => 0,
        Mode::Long => 1,
    }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let mut p = logits.to_vec();
    softmax_in_place(&mut p);
    p
}

fn sample_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

impl ToyPolicy {
    /// Uniform policy: every logit zero.
    pub fn new(task: ToyTask) -> Self {
        let n = task.num_prompts();
        let v = task.vocab();
        Self {
            task,
            style: vec![[[0.0; 2]; 2]; n],
            think: vec![vec![0.0; v]; n],
            answer: vec![vec![0.0; v]; n],
            copy: 0.0,
        }
    }

    pub fn style_probs(&self, prompt_id: usize, mode: Mode) -> Vec<f64> {
        softmax(&self.style[prompt_id][mode_slot(mode)])
    }

    pub fn think_probs(&self, prompt_id: usize) -> Vec<f64> {
        softmax(&self.think[prompt_id])
    }

    pub fn answer_logits(&self, prompt_id: usize, think: Option<usize>) -> Vec<f64> {
        let mut logits = self.answer[prompt_id].clone();
        if let Some(t) = think {
            logits[t] += self.copy;
        }
        logits
    }

    pub fn answer_probs(&self, prompt_id: usize, think: Option<usize>) -> Vec<f64> {
        softmax(&self.answer_logits(prompt_id, think))
    }

    pub fn sample<R: Rng + ?Sized>(&self, prompt_id: usize, mode: Mode, rng: &mut R) -> ToyRollout {
        let style = sample_index(&self.style_probs(prompt_id, mode), rng);
        let think = (style == STYLE_THINK).then(|| sample_index(&self.think_probs(prompt_id), rng));
        let answer = sample_index(&self.answer_probs(prompt_id, think), rng);
        ToyRollout {
            style,
            think,
            answer,
        }
    }

    pub fn log_prob(&self, prompt_id: usize, mode: Mode, r: &ToyRollout) -> f64 {
        let mut lp = self.style_probs(prompt_id, mode)[r.style].ln();
        if let Some(t) = r.think {
            lp += self.think_probs(prompt_id)[t].ln();
        }
        lp + self.answer_probs(prompt_id, r.think)[r.answer].ln()
    }

    /// Adds `scale · ∇ log π(rollout)` to `grad`.
    fn accumulate_grad(
        &self,
        grad: &mut ToyPolicy,
        prompt_id: usize,
        mode: Mode,
        r: &ToyRollout,
        scale: f64,
    ) {
        let slot = mode_slot(mode);
        let ps = self.style_probs(prompt_id, mode);
        for (i, p) in ps.iter().enumerate() {
            grad.style[prompt_id][slot][i] += scale * (f64::from(u8::from(i == r.style)) - p);
        }
        if let Some(t) = r.think {
            for (i, p) in self.think_probs(prompt_id).iter().enumerate() {
                grad.think[prompt_id][i] += scale * (f64::from(u8::from(i == t)) - p);
            }
        }
        let pa = self.answer_probs(prompt_id, r.think);
        for (i, p) in pa.iter().enumerate() {
            grad.answer[prompt_id][i] += scale * (f64::from(u8::from(i == r.answer)) - p);
        }
        if let Some(t) = r.think {
            grad.copy += scale * (f64::from(u8::from(r.answer == t)) - pa[t]);
        }
    }

    fn apply(&mut self, grad: &ToyPolicy, lr: f64) {
        for (s, g) in self.style.iter_mut().zip(&grad.style) {
            for m in 0..2 {
                for i in 0..2 {
                    s[m][i] += lr * g[m][i];
                }
            }
        }
        for (rows, grows) in [
            (&mut self.think, &grad.think),
            (&mut self.answer, &grad.answer),
        ] {
            for (row, grow) in rows.iter_mut().zip(grows) {
                for (v, g) in row.iter_mut().zip(grow) {
                    *v += lr * g;
                }
            }
        }
        self.copy += lr * grad.copy;
    }

    pub fn is_finite(&self) -> bool {
        self.copy.is_finite()
            && self.style.iter().flatten().flatten().all(|v| v.is_finite())
            && self
                .think
                .iter()
                .chain(&self.answer)
                .flatten()
                .all(|v| v.is_finite())
    }

    fn zeroed(&self) -> ToyPolicy {
        ToyPolicy::new(self.task)
    }

    /// Probability of the answer the policy would give by greedy decoding
    /// being correct, averaged over prompts.
    pub fn greedy_accuracy(&self, mode: Mode) -> f64 {
        let argmax = |p: &[f64]| {
            p.iter()
                .enumerate()
                .fold(
                    (0, f64::NEG_INFINITY),
                    |b, (i, v)| if *v > b.1 { (i, *v) } else { b },
                )
                .0
        };
        let n = self.task.num_prompts();
        let correct = (0..n)
            .filter(|&pid| {
                let style = argmax(&self.style_probs(pid, mode));
                let think = (style == STYLE_THINK).then(|| argmax(&self.think_probs(pid)));
                let r = ToyRollout {
                    style,
                    think,
                    answer: argmax(&self.answer_probs(pid, think)),
                };
                rule_reward(&r.render(&self.task, pid), &self.task.reference(pid)) == 1.0
            })
            .count();
        correct as f64 / n as f64
    }
}

impl TokenModel for ToyPolicy {
    /// Reads the context as `a + b = ? <mode> [<think> a + b = t </think>] answer:`
    /// and returns the answer-digit probability; anything else is uniform.
    fn token_prob(&self, context: &[&str], token: &str) -> f64 {
        let v = self.task.vocab();
        let uniform = 1.0 / v as f64;
        let parse = |s: &str| s.parse::<usize>().ok();
        let (Some(a), Some(b)) = (
            context.first().and_then(|s| parse(s)),
            context.get(2).and_then(|s| parse(s)),
        ) else {
            return uniform;
        };
        let Some(pid) = self.task.prompt_id(a, b) else {
            return uniform;
        };
        if context.last() != Some(&"answer:") {
            return uniform;
        }
        let think = context
            .iter()
            .position(|t| *t == THINK_CLOSE)
            .and_then(|i| i.checked_sub(1))
            .and_then(|i| parse(context[i]))
            .filter(|t| *t < v);
        match parse(token) {
            Some(d) if d < v => self.answer_probs(pid, think)[d],
            _ => 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub prompts_per_batch: usize,
    pub group_size: usize,
    pub p_long: f64,
    pub lr: f64,
    pub temperature: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 500,
            prompts_per_batch: 16,
            group_size: 8,
            p_long: DEFAULT_P_LONG,
            lr: 0.5,
            temperature: 1.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), RlError> {
        if self.group_size < 2 {
            return Err(RlError::Input("group size must be >= 2".into()));
        }
        if self.prompts_per_batch == 0 {
            return Err(RlError::Input("prompts per batch must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.p_long) {
            return Err(RlError::Input(format!(
                "p_long must be in [0, 1], got {}",
                self.p_long
            )));
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(RlError::Input(format!(
                "learning rate must be finite and >= 0, got {}",
                self.lr
            )));
        }
        if self.temperature != 1.0 {
            return Err(RlError::Input(
                "only temperature 1.0 sampling is implemented".into(),
            ));
        }
        Ok(())
    }
}

/// Per-step, per-mode means. A mode with no prompts in a step has no row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    pub mode: Mode,
    pub mean_r_acc: f64,
    pub mean_r_format: f64,
    pub mean_r_rep: f64,
    pub mean_r_rm_std: f64,
    pub mean_total: f64,
}

pub const TRACE_HEADER: [&str; 7] = [
    "step",
    "mode",
    "mean_r_acc",
    "mean_r_format",
    "mean_r_rep",
    "mean_r_rm_std",
    "mean_total",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingTrace {
    pub config: TrainConfig,
    pub rows: Vec<TraceRow>,
}

impl TrainingTrace {
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> csv::Result<()> {
        let mut out = csv::Writer::from_writer(w);
        if self.rows.is_empty() {
            out.write_record(TRACE_HEADER)?;
        }
        for row in &self.rows {
            out.serialize(row)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv output is utf-8")
    }

    /// Mean of `mean_r_acc` over the rows of `mode` with `step` in `steps`.
    pub fn windowed_accuracy(&self, mode: Mode, steps: std::ops::Range<usize>) -> Option<f64> {
        let vals: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.mode == mode && steps.contains(&r.step))
            .map(|r| r.mean_r_acc)
            .collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }
}

fn mean_of(rewards: &[&RewardBreakdown], f: impl Fn(&RewardBreakdown) -> f64) -> f64 {
    rewards.iter().map(|r| f(r)).sum::<f64>() / rewards.len() as f64
}

pub fn train_toy(task: ToyTask, cfg: &TrainConfig) -> Result<(ToyPolicy, TrainingTrace), RlError> {
    train_toy_with(task, cfg, &HeuristicScorer::default(), |_, _| {})
}

/// Full training loop. `observer` sees every scored group with the step it
/// belongs to, before the update.
pub fn train_toy_with(
    task: ToyTask,
    cfg: &TrainConfig,
    scorer: &dyn PreferenceScorer,
    mut observer: impl FnMut(usize, &RolloutGroup),
) -> Result<(ToyPolicy, TrainingTrace), RlError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut policy = ToyPolicy::new(task);
    let mut rows = Vec::new();
    let all_prompts: Vec<usize> = (0..task.num_prompts()).collect();

    for step in 0..cfg.steps {
        let mut grad = policy.zeroed();
        let mut by_mode: [Vec<RewardBreakdown>; 2] = [Vec::new(), Vec::new()];
        for _ in 0..cfg.prompts_per_batch {
            let prompt_id = *all_prompts.choose(&mut rng).expect("task has prompts");
            let mode = sample_mode_with(&mut rng, cfg.p_long);
            let rollouts: Vec<ToyRollout> = (0..cfg.group_size)
                .map(|_| policy.sample(prompt_id, mode, &mut rng))
                .collect();
            let responses: Vec<String> = rollouts
                .iter()
                .map(|r| r.render(&task, prompt_id))
                .collect();
            let prompt = task.prompt(prompt_id, mode);
            let reference = task.reference(prompt_id);
            let ctx = RewardContext {
                prompt: &prompt,
                reference: &reference,
                mode,
                scorer,
                model: Some(&policy),
            };
            let rewards = score_group(&ctx, &responses)?;
            let group = RolloutGroup {
                prompt_id,
                mode,
                responses,
                rewards,
            };
            observer(step, &group);
            let advantages = grpo_advantages(&group)?;
            // sequence-level: each response's log-prob gradient weighted by its
            // advantage, averaged over the group, summed over prompts
            for (r, a) in rollouts.iter().zip(&advantages) {
                if *a != 0.0 {
                    policy.accumulate_grad(
                        &mut grad,
                        prompt_id,
                        mode,
                        r,
                        a / cfg.group_size as f64,
                    );
                }
            }
            by_mode[mode_slot(mode)].extend(group.rewards);
        }
        if cfg.lr != 0.0 {
            policy.apply(&grad, cfg.lr);
        }
        if !policy.is_finite() {
            return Err(RlError::Divergence(format!(
                "non-finite policy logits after step {step}"
            )));
        }
        for mode in [Mode::Short, Mode::Long] {
            let rewards: Vec<&RewardBreakdown> = by_mode[mode_slot(mode)].iter().collect();
            if rewards.is_empty() {
                continue;
            }
            rows.push(TraceRow {
                step,
                mode,
                mean_r_acc: mean_of(&rewards, |r| r.r_acc),
                mean_r_format: mean_of(&rewards, |r| r.r_format),
                mean_r_rep: mean_of(&rewards, |r| r.r_rep),
                mean_r_rm_std: mean_of(&rewards, |r| r.r_rm_std),
                mean_total: mean_of(&rewards, |r| r.total),
            });
        }
    }
    Ok((policy, TrainingTrace { config: *cfg, rows }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rl::prob::prob_reward;
    use crate::rl::reward::standardize;

    fn short_cfg(steps: usize) -> TrainConfig {
        TrainConfig {
            steps,
            ..Default::default()
        }
    }

    #[test]
    fn task_layout() {
        let t = ToyTask::default();
        assert_eq!(t.num_prompts(), 25);
        assert_eq!(t.vocab(), 10);
        assert_eq!(t.operands(7), (1, 2));
        assert_eq!(t.prompt_id(1, 2), Some(7));
        assert_eq!(t.reference(7), "3");
        assert_eq!(t.prompt(7, Mode::Long), "1 + 2 = ? /long");
    }

    #[test]
    fn rendered_rollouts_score_as_expected() {
        let t = ToyTask::default();
        let long = ToyRollout {
            style: STYLE_THINK,
            think: Some(3),
            answer: 3,
        };
        assert_eq!(long.render(&t, 7), "<think> 1 + 2 = 3 </think> answer: 3");
        assert_eq!(rule_reward(&long.render(&t, 7), "3"), 1.0);
        let short = ToyRollout {
            style: STYLE_DIRECT,
            think: None,
            answer: 4,
        };
        assert_eq!(short.render(&t, 7), "answer: 4");
    }

    #[test]
    fn uniform_policy_prob_reward() {
        let p = ToyPolicy::new(ToyTask::default());
        let r = prob_reward(&p, "1 + 2 = ? /short", "answer:", "3").unwrap();
        assert!((r - 0.1).abs() < 1e-15);
    }

    #[test]
    fn analytic_log_prob_gradient_matches_finite_differences() {
        let task = ToyTask::default();
        let mut p = ToyPolicy::new(task);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for row in p.answer.iter_mut().chain(p.think.iter_mut()) {
            for v in row.iter_mut() {
                *v = rng.gen_range(-1.0..1.0);
            }
        }
        p.copy = 0.7;
        p.style[3][1] = [0.2, -0.4];
        let r = ToyRollout {
            style: STYLE_THINK,
            think: Some(2),
            answer: 5,
        };
        let mut g = p.zeroed();
        p.accumulate_grad(&mut g, 3, Mode::Long, &r, 1.0);
        let eps = 1e-6;
        let fd = |f: &dyn Fn(&mut ToyPolicy, f64)| {
            let (mut a, mut b) = (p.clone(), p.clone());
            f(&mut a, eps);
            f(&mut b, -eps);
            (a.log_prob(3, Mode::Long, &r) - b.log_prob(3, Mode::Long, &r)) / (2.0 * eps)
        };
        assert!((fd(&|q, e| q.copy += e) - g.copy).abs() < 1e-8);
        for i in 0..10 {
            assert!(
                (fd(&|q, e| q.answer[3][i] += e) - g.answer[3][i]).abs() < 1e-8,
                "answer[{i}]"
            );
            assert!(
                (fd(&|q, e| q.think[3][i] += e) - g.think[3][i]).abs() < 1e-8,
                "think[{i}]"
            );
        }
        for i in 0..2 {
            assert!((fd(&|q, e| q.style[3][1][i] += e) - g.style[3][1][i]).abs() < 1e-8);
        }
    }

    #[test]
    fn zero_learning_rate_leaves_policy_unchanged() {
        let cfg = TrainConfig {
            lr: 0.0,
            ..short_cfg(5)
        };
        let (p, trace) = train_toy(ToyTask::default(), &cfg).unwrap();
        assert_eq!(p, ToyPolicy::new(ToyTask::default()));
        assert!(!trace.rows.is_empty());
    }

    #[test]
    fn constant_reward_gives_no_update() {
        // every group whose totals tie must produce all-zero advantages
        let task = ToyTask { max_operand: 0 };
        let cfg = TrainConfig {
            p_long: 0.0,
            ..short_cfg(20)
        };
        let unreachable = |_: &str| -> f64 { 0.0 };
        let mut seen = 0;
        let (p, _) = train_toy_with(task, &cfg, &unreachable, |_, g| {
            seen += 1;
            let totals: Vec<f64> = g.rewards.iter().map(|r| r.total).collect();
            if totals.iter().all(|t| *t == totals[0]) {
                assert_eq!(grpo_advantages(g).unwrap(), vec![0.0; totals.len()]);
            }
        })
        .unwrap();
        assert!(seen > 0);
        assert!(p.is_finite());
    }

    #[test]
    fn constant_rewards_leave_policy_unchanged() {
        let task = ToyTask::default();
        let p0 = ToyPolicy::new(task);
        let mut g = p0.zeroed();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let group: Vec<ToyRollout> = (0..8).map(|_| p0.sample(5, Mode::Long, &mut rng)).collect();
        let adv = standardize(&[1.5; 8]).unwrap();
        for (r, a) in group.iter().zip(&adv) {
            p0.accumulate_grad(&mut g, 5, Mode::Long, r, a / 8.0);
        }
        let mut p1 = p0.clone();
        p1.apply(&g, 0.5);
        assert_eq!(p0, p1);
    }

    #[test]
    fn seeded_training_is_reproducible() {
        let cfg = short_cfg(30);
        let (pa, ta) = train_toy(ToyTask::default(), &cfg).unwrap();
        let (pb, tb) = train_toy(ToyTask::default(), &cfg).unwrap();
        assert_eq!(pa, pb);
        assert_eq!(ta.to_csv(), tb.to_csv());
    }

    #[test]
    fn trace_csv_has_header_and_rows() {
        let (_, t) = train_toy(ToyTask::default(), &short_cfg(3)).unwrap();
        let csv = t.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), TRACE_HEADER.join(","));
        assert!(lines.all(|l| l.split(',').count() == 7));
    }

    #[test]
    fn both_modes_learn_the_task() {
        let (p, t) = train_toy(ToyTask::default(), &TrainConfig::default()).unwrap();
        for mode in [Mode::Short, Mode::Long] {
            let start = t.windowed_accuracy(mode, 0..5).unwrap();
            let end = t.windowed_accuracy(mode, 450..500).unwrap();
            assert!(start < 0.3, "{mode} starts at {start}");
            assert!(end > 0.9, "{mode} ends at {end}");
            assert_eq!(p.greedy_accuracy(mode), 1.0);
        }
    }

    #[test]
    fn trained_policy_ranks_the_reference_first() {
        let task = ToyTask::default();
        let (p, _) = train_toy(task, &TrainConfig::default()).unwrap();
        for pid in 0..task.num_prompts() {
            let (a, b) = task.operands(pid);
            let prompt = task.prompt(pid, Mode::Long);
            let prefix = format!("<think> {a} + {b} = {} </think> answer:", a + b);
            let right = prob_reward(&p, &prompt, &prefix, &task.reference(pid)).unwrap();
            for wrong in (0..10).filter(|d| *d != a + b) {
                let r = prob_reward(&p, &prompt, &prefix, &wrong.to_string()).unwrap();
                assert!(right > r, "prompt {pid}: {right} vs {wrong} -> {r}");
            }
        }
    }
}
