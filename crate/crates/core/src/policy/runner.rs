//! The chunked autoregressive denoising loop.
//!
//! Chunk `i` runs exactly `T` Euler steps on the global step clock starting
//! at its window start, so windows of neighbouring chunks overlap. At every
//! global step, decisions for all active chunks are made first and then
//! executed in chunk order, which lets a later chunk attend to the K/V its
//! predecessor produced in the same step.

use crate::analysis::flops::{step_flops, FlopsModel};
use crate::error::{Error, Result};
use crate::field::{EvalContext, KvBlock, KvCache, Scenario, VelocityField};
use crate::model::{euler_step, NoiseSchedule, StepWindow};
use crate::tensor::{Shape, Tensor, TokenMask};
use crate::trace::{KvRefresh, RunTrace, Snapshot, SnapshotKind, StepRecord, TraceHeader, TraceRecord, Verbosity};

use super::decision::{phase1_chunk_decision, ChunkGate, Phase, PolicyConfig, PolicyKind, StepDecision, StepMode};
use super::importance::{importance_map, soft_map_frames, ImportanceState};
use super::residual::{relative_l1, ResidualCache};

#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    pub verbosity: Verbosity,
    pub kv_refresh: KvRefresh,
    /// Record a paired true/cached Euler output every `probe_every` global
    /// steps for each chunk that has a residual cache; 0 disables probing.
    pub probe_every: usize,
    pub flops: FlopsModel,
    /// Stored in the trace header only.
    pub seed: u64,
}

impl RunOptions {
    pub fn new(flops: FlopsModel) -> Self {
        RunOptions {
            verbosity: Verbosity::Decisions,
            kv_refresh: KvRefresh::Stale,
            probe_every: 0,
            flops,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub final_latents: Vec<Tensor>,
    pub trace: RunTrace,
}

struct ChunkState {
    window: StepWindow,
    x: Tensor,
    t: usize,
    steps_taken: usize,
    prev: Option<Tensor>,
    cache: ResidualCache,
    gate: ChunkGate,
    importance: Option<ImportanceState>,
    own_kv: Option<KvBlock>,
    /// Last frame of the input latent at each timestep, for the next chunk's
    /// frame-0 importance.
    last_frames: Vec<Option<Vec<f64>>>,
    done: bool,
}

impl ChunkState {
    fn active_at(&self, g: usize) -> bool {
        !self.done && g >= self.window.start && g < self.window.start + self.steps_total()
    }

    fn steps_total(&self) -> usize {
        self.last_frames.len() - 1
    }
}

/// Current `M` and `W` of a chunk, computed from its previous-step latent.
struct Maps {
    importance: Vec<f64>,
    weights: Vec<f64>,
}

struct Runner<'a> {
    policy: &'a PolicyConfig,
    field: &'a dyn VelocityField,
    sched: &'a NoiseSchedule,
    opts: &'a RunOptions,
    shape: Shape,
    chunks: Vec<ChunkState>,
    kv: KvCache,
    step_gate: ChunkGate,
    records: Vec<TraceRecord>,
}

pub fn run_denoise(
    policy: &PolicyConfig,
    field: &dyn VelocityField,
    scenario: &Scenario,
    sched: &NoiseSchedule,
    opts: &RunOptions,
) -> Result<RunOutput> {
    policy.validate()?;
    sched.validate()?;
    let shape = scenario.shape();
    let n = scenario.num_chunks();
    let total = sched.total_steps;
    let chunks = (0..n)
        .map(|i| {
            Ok(ChunkState {
                window: sched.window_of(i)?,
                x: scenario.noise(i).clone(),
                t: total,
                steps_taken: 0,
                prev: None,
                cache: ResidualCache::new(shape),
                gate: ChunkGate::default(),
                importance: None,
                own_kv: None,
                last_frames: vec![None; total + 1],
                done: false,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut runner = Runner {
        policy,
        field,
        sched,
        opts,
        shape,
        chunks,
        kv: KvCache::new(),
        step_gate: ChunkGate::default(),
        records: Vec::new(),
    };
    let horizon = sched.horizon(n)?;
    for g in 0..horizon {
        runner.global_step(g)?;
    }

    let degenerate = policy.kind == PolicyKind::MotionCache && runner.chunks.iter().any(|c| c.importance.is_none());
    let mut notes = Vec::new();
    if degenerate {
        notes.push(format!(
            "phase 1 never completed {} full computations for at least one chunk",
            policy.k
        ));
        log::warn!("degenerate motioncache run: phase 1 never completed");
    }
    let header = TraceHeader {
        format: "MCTR".into(),
        version: crate::trace::VERSION,
        config_hash: String::new(),
        scenario_hash: scenario.digest(),
        seed: opts.seed,
        policy: policy.clone(),
        field: field.kind(),
        shape,
        num_chunks: n,
        schedule: *sched,
        verbosity: opts.verbosity,
        kv_refresh: opts.kv_refresh,
        flops_model: opts.flops,
        degenerate,
        notes,
    };
    let final_latents = runner.chunks.into_iter().map(|c| c.x).collect();
    Ok(RunOutput {
        final_latents,
        trace: RunTrace {
            header,
            records: runner.records,
        },
    })
}

impl<'a> Runner<'a> {
    fn tokens(&self) -> usize {
        self.shape.tokens()
    }

    fn global_step(&mut self, g: usize) -> Result<()> {
        let active: Vec<usize> = (0..self.chunks.len()).filter(|&i| self.chunks[i].active_at(g)).collect();
        let mut plans = Vec::with_capacity(active.len());
        let step_level = if self.policy.kind == PolicyKind::StepLevel {
            Some(self.step_level_decision(&active)?)
        } else {
            None
        };
        for &i in &active {
            let maps = self.maps(i)?;
            let decision = match step_level {
                Some((compute, phase)) => self.baseline_decision(i, compute, phase)?,
                None => self.chunk_decision(i, maps.as_ref())?,
            };
            plans.push((i, decision, maps));
        }
        for (i, decision, maps) in plans {
            self.execute(g, i, decision, maps)?;
        }
        Ok(())
    }

    fn delta(&self, i: usize) -> Result<Option<f64>> {
        let c = &self.chunks[i];
        c.prev.as_ref().map(|p| relative_l1(&c.x, p)).transpose()
    }

    /// One whole-step gate over all active chunks.
    fn step_level_decision(&mut self, active: &[usize]) -> Result<(bool, Phase)> {
        let warm = self.policy.m.max(1);
        if active.iter().any(|&i| self.chunks[i].steps_taken < warm) {
            return Ok((true, Phase::Warmup));
        }
        let (mut num, mut den) = (0.0, 0.0);
        for &i in active {
            let c = &self.chunks[i];
            let prev = c.prev.as_ref().expect("past warm-up");
            num += c.x.data().iter().zip(prev.data()).map(|(a, b)| (a - b).abs()).sum::<f64>();
            den += prev.l1_norm();
        }
        let delta = if den == 0.0 {
            log::warn!("step-level gate: previous latents have zero L1 norm; forcing a compute");
            f64::INFINITY
        } else {
            num / den
        };
        let out = phase1_chunk_decision(self.step_gate, delta, self.policy.tau, usize::MAX, 0)?;
        self.step_gate = out.gate;
        Ok((out.compute, Phase::Gated))
    }

    fn baseline_decision(&mut self, i: usize, compute: bool, phase: Phase) -> Result<StepDecision> {
        let delta = self.delta(i)?;
        let mask = if compute {
            TokenMask::all(self.tokens())
        } else {
            TokenMask::none(self.tokens())
        };
        let c = &mut self.chunks[i];
        if compute && phase == Phase::Gated {
            c.gate.full_count += 1;
        }
        Ok(StepDecision::from_mask(mask, phase, delta, c.gate.full_count))
    }

    fn chunk_decision(&mut self, i: usize, maps: Option<&Maps>) -> Result<StepDecision> {
        let tokens = self.tokens();
        let p = self.policy;
        let delta = self.delta(i)?;
        let c = &mut self.chunks[i];
        let all = TokenMask::all(tokens);
        let Some(delta_v) = delta else {
            let phase = if p.kind == PolicyKind::Vanilla {
                Phase::Uncached
            } else {
                Phase::Warmup
            };
            return Ok(StepDecision::from_mask(all, phase, None, c.gate.full_count));
        };
        match p.kind {
            PolicyKind::Vanilla => Ok(StepDecision::from_mask(all, Phase::Uncached, delta, 0)),
            PolicyKind::StepLevel => unreachable!("step-level decisions are global"),
            PolicyKind::ChunkLevel => {
                let out = phase1_chunk_decision(c.gate, delta_v, p.tau_chunk(), c.steps_taken, p.m)?;
                c.gate = out.gate;
                let phase = if out.warmup { Phase::Warmup } else { Phase::Gated };
                let mask = if out.compute { all } else { TokenMask::none(tokens) };
                Ok(StepDecision::from_mask(mask, phase, delta, c.gate.full_count))
            }
            PolicyKind::MotionCache => {
                if c.steps_taken < p.m || c.gate.full_count < p.k {
                    let out = phase1_chunk_decision(c.gate, delta_v, p.tau_chunk(), c.steps_taken, p.m)?;
                    c.gate = out.gate;
                    let phase = if out.warmup { Phase::Warmup } else { Phase::Phase1 };
                    let mask = if out.compute { all } else { TokenMask::none(tokens) };
                    return Ok(StepDecision::from_mask(mask, phase, delta, c.gate.full_count));
                }
                let maps = maps.expect("maps exist once a previous latent does");
                let initial = c.gate.accumulator;
                let state = c
                    .importance
                    .get_or_insert_with(|| ImportanceState::new(tokens, initial, p.eps_num));
                let mask = state
                    .step(maps.importance.clone(), self.shape.tokens_per_frame(), p.alpha, delta_v, p.tau)?
                    .clone();
                Ok(StepDecision::from_mask(mask, Phase::Phase2, delta, c.gate.full_count))
            }
        }
    }

    /// Importance and weight maps for motioncache chunks with a previous latent.
    fn maps(&self, i: usize) -> Result<Option<Maps>> {
        if self.policy.kind != PolicyKind::MotionCache {
            return Ok(None);
        }
        let c = &self.chunks[i];
        let Some(prev) = &c.prev else { return Ok(None) };
        let reference = if i > 0 {
            let r = self.chunks[i - 1].last_frames[c.t + 1]
                .as_deref()
                .ok_or_else(|| Error::state(format!("chunk {} has no latent at timestep {}", i - 1, c.t + 1)))?;
            Some(r)
        } else {
            None
        };
        let importance = importance_map(prev, reference, i)?;
        let weights = soft_map_frames(
            &importance,
            self.shape.tokens_per_frame(),
            self.policy.alpha,
            self.policy.eps_num,
        );
        Ok(Some(Maps { importance, weights }))
    }

    fn fresh_block(&self, x: &Tensor, t: usize) -> Option<KvBlock> {
        let tokens: Vec<usize> = (0..self.tokens()).collect();
        self.field
            .project_kv(x, t, self.sched, &tokens)
            .map(|r| KvBlock::new(self.tokens(), r.dim, r.keys, r.values).expect("rows sized by construction"))
    }

    fn push_snapshot(&mut self, s: Snapshot) {
        self.records.push(TraceRecord::Snapshot(s));
    }

    fn probe(&mut self, g: usize, i: usize) -> Result<()> {
        let (chunk, dt) = (&self.chunks[i], self.sched.dt());
        let t = chunk.t;
        let ctx = EvalContext::new(i, t, self.sched).with_kv(&self.kv);
        let v = self.field.eval_full(&chunk.x, &ctx)?;
        let true_out = euler_step(&chunk.x, &v, dt)?;
        let true_r = v.zip_map(&chunk.x, "probe", |a, b| a - b)?;
        let cached_r = chunk.cache.residual().clone();
        let cached_out = euler_step(&chunk.x, &chunk.cache.approximate(&chunk.x)?, dt)?;
        for (kind, tensor) in [
            (SnapshotKind::ProbeTrueOutput, &true_out),
            (SnapshotKind::ProbeCachedOutput, &cached_out),
            (SnapshotKind::ProbeTrueResidual, &true_r),
            (SnapshotKind::ProbeCachedResidual, &cached_r),
        ] {
            self.push_snapshot(Snapshot::from_tensor(i, t, g, kind, tensor));
        }
        Ok(())
    }

    fn execute(&mut self, g: usize, i: usize, decision: StepDecision, maps: Option<Maps>) -> Result<()> {
        let tokens = self.tokens();
        let dt = self.sched.dt();
        let verbose = self.opts.verbosity >= Verbosity::Latents;
        let t = self.chunks[i].t;
        let step_in_window = self.chunks[i].steps_taken;

        let last = self.chunks[i].x.frame(self.shape.frames - 1).to_vec();
        self.chunks[i].last_frames[t] = Some(last);
        if verbose {
            let s = Snapshot::from_tensor(i, t, g, SnapshotKind::InputLatent, &self.chunks[i].x);
            self.push_snapshot(s);
            if let Some(m) = &maps {
                self.push_snapshot(Snapshot::from_map(i, t, g, SnapshotKind::Importance, self.shape, &m.importance));
                self.push_snapshot(Snapshot::from_map(i, t, g, SnapshotKind::Weight, self.shape, &m.weights));
            }
        }
        if self.opts.probe_every > 0 && g % self.opts.probe_every == 0 && self.chunks[i].cache.is_complete() {
            self.probe(g, i)?;
        }

        let (x_next, n_q, kv_projected) = match decision.mode {
            StepMode::FullCompute => {
                let x = &self.chunks[i].x;
                let ctx = EvalContext::new(i, t, self.sched).with_kv(&self.kv);
                let v = self.field.eval_full(x, &ctx)?;
                let x_next = euler_step(x, &v, dt)?;
                let block = self.fresh_block(x, t);
                let c = &mut self.chunks[i];
                c.cache.store_full(&v, &c.x, t)?;
                if let Some(b) = block {
                    self.kv.set_live(i, b.clone())?;
                    self.chunks[i].own_kv = Some(b);
                }
                (x_next, tokens, tokens)
            }
            StepMode::FullSkip => {
                let c = &self.chunks[i];
                let v = c.cache.approximate(&c.x)?;
                (euler_step(&c.x, &v, dt)?, 0, 0)
            }
            StepMode::TokenSparse => {
                let active = decision.mask.active_indices();
                let refresh: Vec<usize> = match self.opts.kv_refresh {
                    KvRefresh::Stale => active.clone(),
                    KvRefresh::Fresh => (0..tokens).collect(),
                };
                let x = &self.chunks[i].x;
                let own = match (&self.chunks[i].own_kv, self.field.project_kv(x, t, self.sched, &refresh)) {
                    (Some(stale), Some(rows)) => {
                        let mut b = stale.clone();
                        b.update_rows(&rows)?;
                        Some(b)
                    }
                    (None, Some(_)) => return Err(Error::state(format!("chunk {i} has no K/V to sparsify"))),
                    (_, None) => None,
                };
                let mut ctx = EvalContext::new(i, t, self.sched).with_kv(&self.kv);
                if let Some(b) = &own {
                    ctx = ctx.with_own_kv(b);
                }
                let sv = self.field.eval_sparse(x, &ctx, &decision.mask)?;
                let c = &mut self.chunks[i];
                c.cache.store_rows(&sv, &c.x, t)?;
                let mut v = c.cache.approximate(&c.x)?;
                for (r, &p) in sv.tokens.iter().enumerate() {
                    v.token_mut(p).copy_from_slice(sv.row(r));
                }
                let x_next = euler_step(&c.x, &v, dt)?;
                if let Some(b) = own {
                    self.kv.set_live(i, b.clone())?;
                    self.chunks[i].own_kv = Some(b);
                }
                (x_next, active.len(), refresh.len())
            }
        };

        let n_kv = i * tokens + tokens;
        let flops = step_flops(&self.opts.flops, n_q, n_kv, kv_projected, tokens);
        self.records.push(TraceRecord::Step(StepRecord {
            global_step: g as u64,
            chunk: i as u32,
            t: t as u32,
            step_in_window: step_in_window as u32,
            mode: decision.mode,
            phase: decision.phase,
            delta: decision.delta,
            active_count: n_q as u32,
            tokens: tokens as u32,
            n_kv: n_kv as u32,
            kv_projected: kv_projected as u32,
            full_count: decision.full_count as u32,
            mask: decision.mask,
            flops,
        }));
        if self.opts.verbosity >= Verbosity::Residuals {
            let s = Snapshot::from_tensor(i, t, g, SnapshotKind::Residual, self.chunks[i].cache.residual());
            self.push_snapshot(s);
        }

        let c = &mut self.chunks[i];
        c.prev = Some(std::mem::replace(&mut c.x, x_next));
        c.t -= 1;
        c.steps_taken += 1;
        if c.t == 0 {
            c.done = true;
            let block = self.fresh_block(&self.chunks[i].x, 0);
            if let Some(b) = block {
                self.kv.finalize_chunk(i, b)?;
            }
            if verbose {
                let s = Snapshot::from_tensor(i, 0, g, SnapshotKind::FinalLatent, &self.chunks[i].x);
                self.push_snapshot(s);
            }
        }
        Ok(())
    }
}
