use std::collections::BTreeMap;

use thiserror::Error;

use super::{Collective, CommDescriptor, KernelSpec, ReplayPlan};

/// Communication delay for one collective at an emulated world size.
pub trait CommCostModel {
    fn duration_us(&self, comm: &CommDescriptor, recorded_us: u64, emulated_world: u32, actual_world: u32) -> u64;
}

/// Keeps recorded durations.
#[derive(Clone, Copy, Debug, Default)]
pub struct IdentityModel;

impl CommCostModel for IdentityModel {
    fn duration_us(&self, _: &CommDescriptor, recorded_us: u64, _: u32, _: u32) -> u64 {
        recorded_us
    }
}

/// Communication costs nothing.
#[derive(Clone, Copy, Debug, Default)]
pub struct ZeroModel;

impl CommCostModel for ZeroModel {
    fn duration_us(&self, _: &CommDescriptor, _: u64, _: u32, _: u32) -> u64 {
        0
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct AlphaBeta {
    pub alpha_us: f64,
    pub beta_us_per_kb: f64,
}

/// Latency-bandwidth model. Ring-style collectives cost
/// `alpha + beta * KB * (w - 1) / w`, point-to-point `alpha + beta * KB`,
/// barrier `alpha`. One KB is 1024 bytes.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AlphaBetaModel {
    pub base: AlphaBeta,
    pub overrides: BTreeMap<Collective, AlphaBeta>,
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("cost model config: {0}")]
pub struct CostModelError(pub String);

impl AlphaBetaModel {
    pub fn new(alpha_us: f64, beta_us_per_kb: f64) -> Self {
        AlphaBetaModel { base: AlphaBeta { alpha_us, beta_us_per_kb }, overrides: BTreeMap::new() }
    }

    /// Reads `alpha_us`, `beta_us_per_kb` and optional per-collective tables
    /// (`[all_reduce]` or dotted `all_reduce.alpha_us = ...`) that override
    /// either parameter.
    pub fn from_toml(text: &str) -> Result<Self, CostModelError> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| CostModelError(e.to_string()))?;
        let num = |v: &toml::Value, key: &str| -> Result<f64, CostModelError> {
            let x = v
                .as_float()
                .or_else(|| v.as_integer().map(|i| i as f64))
                .ok_or_else(|| CostModelError(format!("`{key}` must be a number")))?;
            if x < 0.0 || !x.is_finite() {
                return Err(CostModelError(format!("`{key}` must be finite and non-negative")));
            }
            Ok(x)
        };
        let mut model = AlphaBetaModel::default();
        let mut per: BTreeMap<Collective, (Option<f64>, Option<f64>)> = BTreeMap::new();
        for (key, value) in &table {
            match key.as_str() {
                "alpha_us" => model.base.alpha_us = num(value, key)?,
                "beta_us_per_kb" => model.base.beta_us_per_kb = num(value, key)?,
                name => {
                    let c = Collective::ALL
                        .into_iter()
                        .find(|c| c.name() == name)
                        .ok_or_else(|| CostModelError(format!("unknown key `{name}`")))?;
                    let sub = value.as_table().ok_or_else(|| CostModelError(format!("`{name}` must be a table")))?;
                    let slot = per.entry(c).or_default();
                    for (k, v) in sub {
                        match k.as_str() {
                            "alpha_us" => slot.0 = Some(num(v, k)?),
                            "beta_us_per_kb" => slot.1 = Some(num(v, k)?),
                            other => return Err(CostModelError(format!("unknown key `{name}.{other}`"))),
                        }
                    }
                }
            }
        }
        for (c, (a, b)) in per {
            model.overrides.insert(
                c,
                AlphaBeta {
                    alpha_us: a.unwrap_or(model.base.alpha_us),
                    beta_us_per_kb: b.unwrap_or(model.base.beta_us_per_kb),
                },
            );
        }
        Ok(model)
    }

    pub fn params(&self, c: Collective) -> AlphaBeta {
        self.overrides.get(&c).copied().unwrap_or(self.base)
    }

    /// Unrounded delay in microseconds.
    pub fn delay_us(&self, c: Collective, bytes: u64, world: u32) -> f64 {
        let AlphaBeta { alpha_us, beta_us_per_kb } = self.params(c);
        let kb = bytes as f64 / 1024.0;
        let w = world.max(1) as f64;
        match c {
            Collective::Barrier => alpha_us,
            Collective::Send | Collective::Recv => alpha_us + beta_us_per_kb * kb,
            _ => alpha_us + beta_us_per_kb * kb * (w - 1.0) / w,
        }
    }
}

impl CommCostModel for AlphaBetaModel {
    fn duration_us(&self, comm: &CommDescriptor, _: u64, emulated_world: u32, _: u32) -> u64 {
        (self.delay_us(comm.collective, comm.message_bytes, emulated_world) + 0.5).floor() as u64
    }
}

/// Replaces every communication op's kernel time with the model's duration
/// for `emulated_world` ranks. Compute ops are untouched. When the model
/// returns the recorded duration the op is left exactly as it was.
pub fn scale_comm(plan: &ReplayPlan, model: &dyn CommCostModel, emulated_world: u32) -> ReplayPlan {
    let mut out = plan.clone();
    for op in &mut out.ops {
        let Some(comm) = &op.comm else { continue };
        let recorded = op.kernel_time_us();
        let d = model.duration_us(comm, recorded, emulated_world, plan.world_size);
        if d == recorded {
            continue;
        }
        let stream = op.kernels.first().map(|k| k.stream).unwrap_or(op.stream);
        op.kernels = vec![KernelSpec { stream, dur_us: d }];
    }
    out
}
