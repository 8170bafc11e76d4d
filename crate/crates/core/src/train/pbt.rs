//! Population based training with truncation selection on validation loss
//! and multiplicative learning-rate perturbation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::network::{Architecture, Network};

use super::{evaluate_loss, train_epoch, AdamState, PatchSet};

/// Stream index of the orchestrator RNG; member streams use their ids.
const ORCHESTRATOR_STREAM: u64 = 1 << 40;

#[derive(Debug, Clone, PartialEq)]
pub struct PbtConfig {
    pub population: usize,
    pub iterations: usize,
    pub interval: usize,
    pub lr_grid: Vec<f64>,
    pub epochs_per_iteration: usize,
    pub perturb_factors: Vec<f64>,
    pub batch_size: usize,
    /// Random flips and transposes of training patches.
    pub augment: bool,
    pub seed: u64,
}

impl Default for PbtConfig {
    fn default() -> Self {
        Self {
            population: 6,
            iterations: 100,
            interval: 20,
            lr_grid: (2..=7).map(|i| 10f64.powi(-i)).collect(),
            epochs_per_iteration: 1,
            perturb_factors: vec![0.8, 1.25],
            batch_size: 16,
            augment: true,
            seed: 0,
        }
    }
}

impl PbtConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.population == 0 {
            return bad("population must be at least 1".into());
        }
        if self.lr_grid.len() != self.population {
            return bad(format!(
                "lr grid has {} entries for a population of {}",
                self.lr_grid.len(),
                self.population
            ));
        }
        if self.lr_grid.iter().any(|&lr| !(lr > 0.0 && lr.is_finite())) {
            return bad("learning rates must be positive".into());
        }
        if self.iterations == 0 || self.interval == 0 || self.iterations % self.interval != 0 {
            return bad(format!(
                "interval {} must divide iterations {}",
                self.interval, self.iterations
            ));
        }
        if self.epochs_per_iteration == 0 || self.batch_size == 0 {
            return bad("epochs per iteration and batch size must be at least 1".into());
        }
        if self.perturb_factors.is_empty() || self.perturb_factors.iter().any(|&f| !(f > 0.0)) {
            return bad("perturb factors must be positive".into());
        }
        Ok(())
    }
}

pub struct Member {
    pub id: usize,
    pub net: Network,
    pub adam: AdamState,
    pub val_loss: f64,
    rng: ChaCha8Rng,
}

impl Member {
    pub fn lr(&self) -> f64 {
        self.adam.lr
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HistoryRow {
    pub iteration: usize,
    pub member: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: f64,
}

/// One member replaced by a copy of a better one.
#[derive(Debug, Clone, PartialEq)]
pub struct ExploitEvent {
    pub iteration: usize,
    pub member: usize,
    pub source: usize,
    pub lr_copied: f64,
    pub lr_after: f64,
    /// Population minimum validation loss before and after the exchange.
    pub min_before: f64,
    pub min_after: f64,
}

pub struct PbtResult {
    pub best: Network,
    pub best_member: usize,
    pub best_val_loss: f64,
    pub history: Vec<HistoryRow>,
    pub events: Vec<ExploitEvent>,
}

pub fn history_csv(rows: &[HistoryRow]) -> String {
    let mut out = String::from("iteration,member,lr,train_loss,val_loss\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.iteration, r.member, r.lr, r.train_loss, r.val_loss
        ));
    }
    out
}

fn member_rng(seed: u64, id: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id as u64);
    rng
}

/// Trains one member for an iteration. Divergence marks the member with an
/// infinite loss instead of aborting the population.
fn step_member(m: &mut Member, cfg: &PbtConfig, train: &PatchSet, val: &PatchSet) -> Result<f64> {
    let mut train_loss = 0.0;
    for _ in 0..cfg.epochs_per_iteration {
        match train_epoch(&mut m.net, &mut m.adam, train, cfg.batch_size, cfg.augment, &mut m.rng) {
            Ok(l) => train_loss += l,
            Err(Error::Data(_)) | Err(Error::ZeroKernel(_)) => {
                m.val_loss = f64::INFINITY;
                return Ok(f64::INFINITY);
            }
            Err(e) => return Err(e),
        }
    }
    m.val_loss = match evaluate_loss(&m.net, val) {
        Ok(l) if l.is_finite() => l,
        Ok(_) | Err(Error::Data(_)) => f64::INFINITY,
        Err(e) => return Err(e),
    };
    Ok(train_loss / cfg.epochs_per_iteration as f64)
}

fn population_min(members: &[Member]) -> f64 {
    members.iter().map(|m| m.val_loss).fold(f64::INFINITY, f64::min)
}

/// Ranks members by validation loss, ties broken by id.
fn ranking(members: &[Member]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..members.len()).collect();
    idx.sort_by(|&a, &b| {
        members[a]
            .val_loss
            .total_cmp(&members[b].val_loss)
            .then(a.cmp(&b))
    });
    idx
}

pub fn pbt_run(
    cfg: &PbtConfig,
    arch: Architecture,
    train: &PatchSet,
    val: &PatchSet,
) -> Result<PbtResult> {
    pbt_run_observed(cfg, arch, train, val, &mut |_, _| {})
}

/// Like [`pbt_run`], calling `observer` after every exploit event while the
/// population is still exactly as the exchange left it.
pub fn pbt_run_observed(
    cfg: &PbtConfig,
    arch: Architecture,
    train: &PatchSet,
    val: &PatchSet,
    observer: &mut dyn FnMut(&ExploitEvent, &[Member]),
) -> Result<PbtResult> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::Data("training and validation patch sets must be non-empty".into()));
    }
    let mut members = Vec::with_capacity(cfg.population);
    for (id, &lr) in cfg.lr_grid.iter().enumerate() {
        let mut init = member_rng(cfg.seed, id);
        let net = Network::new(arch, init.random())?;
        members.push(Member {
            id,
            adam: AdamState::new(net.param_count(), lr),
            net,
            val_loss: f64::INFINITY,
            rng: init,
        });
    }
    let mut orchestrator = member_rng(cfg.seed, 0);
    orchestrator.set_stream(ORCHESTRATOR_STREAM);
    let mut history = Vec::with_capacity(cfg.iterations * cfg.population);
    let mut events = Vec::new();

    for iteration in 1..=cfg.iterations {
        let train_losses: Vec<Result<f64>> = members
            .par_iter_mut()
            .map(|m| step_member(m, cfg, train, val))
            .collect();
        for (m, tl) in members.iter().zip(train_losses) {
            history.push(HistoryRow {
                iteration,
                member: m.id,
                lr: m.lr(),
                train_loss: tl?,
                val_loss: m.val_loss,
            });
        }

        if cfg.population < 2 || iteration % cfg.interval != 0 || iteration == cfg.iterations {
            continue;
        }
        let order = ranking(&members);
        let half = cfg.population / 2;
        let top = &order[..half];
        let bottom = &order[cfg.population - half..];
        for &dst in bottom {
            let src = top[orchestrator.random_range(0..top.len())];
            let factor = cfg.perturb_factors[orchestrator.random_range(0..cfg.perturb_factors.len())];
            let min_before = population_min(&members);
            let (net, adam, val_loss) = {
                let s = &members[src];
                (s.net.clone(), s.adam.clone(), s.val_loss)
            };
            let lr_copied = adam.lr;
            let m = &mut members[dst];
            m.net = net;
            m.adam = adam;
            m.val_loss = val_loss;
            let event = ExploitEvent {
                iteration,
                member: dst,
                source: src,
                lr_copied,
                lr_after: lr_copied * factor,
                min_before,
                min_after: population_min(&members),
            };
            observer(&event, &members);
            members[dst].adam.lr = event.lr_after;
            events.push(event);
        }
    }

    let best = ranking(&members)[0];
    let m = &members[best];
    Ok(PbtResult {
        best: m.net.clone(),
        best_member: best,
        best_val_loss: m.val_loss,
        history,
        events,
    })
}
