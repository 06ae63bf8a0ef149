//! Synthetic multi-behavior logs with a planted context-to-target dependency.
//!
//! Each user owns a random subset of preferred items. At every time step each
//! context behavior fires with its base rate on a random preferred item. Each
//! preferred item is then bought with probability `base_rate[target]`, raised
//! by `kappa` while the item has an unconsumed context event from the last
//! `window` steps. A purchase consumes the boost.

use rand::seq::index::sample;
use rand::Rng as _;

use super::InteractionRecord;
use crate::error::ConfigError;
use crate::rng::stream;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub users: usize,
    pub items: usize,
    /// Per-behavior event rate per step; its length is the number of behaviors.
    pub base_rates: Vec<f64>,
    pub target: usize,
    pub kappa: f64,
    /// Steps during which a context event boosts the purchase probability.
    pub window: usize,
    pub horizon: usize,
    pub preferred_items: usize,
    pub step_seconds: i64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            users: 1000,
            items: 500,
            base_rates: vec![0.2, 0.05, 0.05, 0.002],
            target: 3,
            kappa: 0.5,
            window: 3,
            horizon: 60,
            preferred_items: 30,
            step_seconds: 3600,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn behaviors(&self) -> usize {
        self.base_rates.len()
    }

    pub fn labels(&self) -> Vec<String> {
        if self.behaviors() == 4 {
            ["view", "fav", "cart", "buy"].map(String::from).to_vec()
        } else {
            (0..self.behaviors()).map(|b| format!("b{b}")).collect()
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.base_rates.is_empty() || self.target >= self.base_rates.len() {
            return bad(format!(
                "target behavior {} outside {} behaviors",
                self.target,
                self.base_rates.len()
            ));
        }
        if let Some(p) = self
            .base_rates
            .iter()
            .chain(std::iter::once(&self.kappa))
            .find(|p| !(0.0..=1.0).contains(*p))
        {
            return bad(format!("probability {p} outside [0, 1]"));
        }
        if self.items == 0 || self.preferred_items == 0 || self.preferred_items > self.items {
            return bad(format!(
                "preferred_items {} must be in 1..={}",
                self.preferred_items, self.items
            ));
        }
        if self.window == 0 || self.step_seconds <= 0 {
            return bad("window and step_seconds must be positive".into());
        }
        // Events inside one step are spread over distinct seconds.
        let per_step = self.behaviors() - 1 + self.preferred_items;
        if per_step as i64 >= self.step_seconds {
            return bad("step_seconds too small for events per step".into());
        }
        Ok(())
    }
}

/// Generate records sorted by user then timestamp. Deterministic in `cfg.seed`.
pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<Vec<InteractionRecord>, ConfigError> {
    cfg.validate()?;
    let context: Vec<usize> = (0..cfg.behaviors()).filter(|&b| b != cfg.target).collect();
    let mut out = Vec::new();
    for user in 0..cfg.users {
        let mut rng = stream(cfg.seed, "synth", user as u64);
        let preferred: Vec<usize> = sample(&mut rng, cfg.items, cfg.preferred_items).into_vec();
        // step of the latest unconsumed context event per preferred slot
        let mut boosted_at: Vec<Option<usize>> = vec![None; preferred.len()];
        for step in 0..cfg.horizon {
            let base = step as i64 * cfg.step_seconds;
            let mut offset = 0;
            let mut fresh = Vec::new();
            for &b in &context {
                if rng.gen::<f64>() < cfg.base_rates[b] {
                    let slot = rng.gen_range(0..preferred.len());
                    out.push(InteractionRecord::new(
                        user,
                        preferred[slot],
                        b,
                        base + offset,
                    ));
                    offset += 1;
                    fresh.push(slot);
                }
            }
            for (slot, &item) in preferred.iter().enumerate() {
                let active = boosted_at[slot].is_some_and(|s| step - s <= cfg.window);
                let p =
                    (cfg.base_rates[cfg.target] + if active { cfg.kappa } else { 0.0 }).min(1.0);
                if rng.gen::<f64>() < p {
                    out.push(InteractionRecord::new(
                        user,
                        item,
                        cfg.target,
                        base + offset,
                    ));
                    offset += 1;
                    boosted_at[slot] = None;
                }
            }
            // context events of this step boost purchases from the next step on
            for slot in fresh {
                boosted_at[slot] = Some(step);
            }
        }
    }
    Ok(out)
}
