//! Browser bindings for three interactive views: the token bonus filter
//! pipeline, group advantage shaping, and the exploration-coefficient
//! schedule. Inputs and outputs cross the boundary as JSON strings; the
//! static page in `www/` renders them.
//!
//! The plain-Rust logic lives in [`logic`] so it can run and be tested on
//! any target; the `#[wasm_bindgen]` exports are thin adapters.

use wasm_bindgen::prelude::*;

pub mod logic {
    use serde::Serialize;

    use merci_core::shaping::{self, FilterConfig, GammaSchedule, NoiseRule, ShapingConfig};

    fn parse_f64s(json: &str) -> Result<Vec<f64>, String> {
        serde_json::from_str(json).map_err(|e| e.to_string())
    }

    #[derive(Serialize)]
    pub struct FilterStages {
        pub percentile: Vec<usize>,
        pub coherence: Vec<usize>,
        pub noise: Vec<usize>,
    }

    /// Runs the three filter stages over one response's per-token bonuses.
    /// `filler_token < 0` disables the filler rule; `repeat_min == 0`
    /// disables the repetition rule.
    pub fn filter_pipeline(
        bonuses_json: &str,
        tokens_json: &str,
        top_percentile: f64,
        min_run: usize,
        filler_token: i32,
        repeat_min: usize,
    ) -> Result<String, String> {
        let bonuses = parse_f64s(bonuses_json)?;
        let tokens: Vec<u32> = serde_json::from_str(tokens_json).map_err(|e| e.to_string())?;
        if bonuses.len() != tokens.len() {
            return Err("bonuses and tokens must have the same length".into());
        }
        let mut rules = Vec::new();
        if filler_token >= 0 {
            rules.push(NoiseRule::Filler {
                token: filler_token as u32,
            });
        }
        if repeat_min >= 2 {
            rules.push(NoiseRule::RepeatRun {
                min_len: repeat_min,
            });
        }
        let percentile = shaping::percentile_filter(&bonuses, top_percentile.clamp(0.01, 1.0));
        let coherence = shaping::coherence_filter(&percentile, min_run.max(1));
        let noise = shaping::noise_filter(&coherence, &tokens, &rules);
        serde_json::to_string(&FilterStages {
            percentile,
            coherence,
            noise,
        })
        .map_err(|e| e.to_string())
    }

    #[derive(Serialize)]
    pub struct ShapedAdvantages {
        pub a_old: Vec<f64>,
        pub a_exploration: Vec<f64>,
        pub a_new: Vec<f64>,
    }

    /// Group-normalizes rewards, standardizes the trajectory bonuses, and
    /// integrates them under the cap.
    pub fn shape_advantages(
        rewards_json: &str,
        bonuses_json: &str,
        gamma: f64,
        alpha: f64,
        literal_cap: bool,
    ) -> Result<String, String> {
        let rewards = parse_f64s(rewards_json)?;
        let bonuses = parse_f64s(bonuses_json)?;
        if rewards.len() != bonuses.len() || rewards.len() < 2 {
            return Err("need matching rewards and bonuses for a group of >= 2".into());
        }
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err("alpha must lie in (0, 1)".into());
        }
        let a_old = shaping::group_advantage(&rewards);
        let a_exploration = shaping::standardize_bonuses(&bonuses);
        let a_new = a_old
            .iter()
            .zip(&a_exploration)
            .map(|(&old, &exp)| shaping::apply_integration(old, exp, gamma, alpha, literal_cap))
            .collect();
        serde_json::to_string(&ShapedAdvantages {
            a_old,
            a_exploration,
            a_new,
        })
        .map_err(|e| e.to_string())
    }

    /// Exploration-coefficient schedule values for iterations `0..=t_max`.
    pub fn gamma_curve(
        gamma_max: f64,
        t_start: u64,
        t_end: u64,
        beta_floor: f64,
        t_max: u64,
    ) -> Result<String, String> {
        if t_start >= t_end {
            return Err("warm-up end must precede decay end".into());
        }
        if !(0.0..=1.0).contains(&beta_floor) || gamma_max < 0.0 {
            return Err("beta_floor in [0,1] and gamma_max >= 0 required".into());
        }
        let cfg = ShapingConfig {
            gamma_max,
            schedule: GammaSchedule {
                t_start_decay: t_start,
                t_end_decay: t_end,
                beta_floor,
            },
            ..ShapingConfig::default()
        };
        let curve: Vec<f64> = (0..=t_max)
            .map(|t| shaping::gamma_schedule(t, &cfg))
            .collect();
        serde_json::to_string(&curve).map_err(|e| e.to_string())
    }

    pub fn default_filter_settings() -> String {
        let f = FilterConfig::default();
        format!(
            "{{\"top_percentile\":{},\"min_run\":{}}}",
            f.top_percentile, f.min_run
        )
    }
}

fn to_js(result: Result<String, String>) -> Result<String, JsValue> {
    result.map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn filter_pipeline(
    bonuses_json: &str,
    tokens_json: &str,
    top_percentile: f64,
    min_run: usize,
    filler_token: i32,
    repeat_min: usize,
) -> Result<String, JsValue> {
    to_js(logic::filter_pipeline(
        bonuses_json,
        tokens_json,
        top_percentile,
        min_run,
        filler_token,
        repeat_min,
    ))
}

#[wasm_bindgen]
pub fn shape_advantages(
    rewards_json: &str,
    bonuses_json: &str,
    gamma: f64,
    alpha: f64,
    literal_cap: bool,
) -> Result<String, JsValue> {
    to_js(logic::shape_advantages(
        rewards_json,
        bonuses_json,
        gamma,
        alpha,
        literal_cap,
    ))
}

#[wasm_bindgen]
pub fn gamma_curve(
    gamma_max: f64,
    t_start: u64,
    t_end: u64,
    beta_floor: f64,
    t_max: u64,
) -> Result<String, JsValue> {
    to_js(logic::gamma_curve(gamma_max, t_start, t_end, beta_floor, t_max))
}

#[wasm_bindgen]
pub fn default_filter_settings() -> String {
    logic::default_filter_settings()
}
