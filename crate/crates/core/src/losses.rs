//! Adversarial, cycle-consistency, identity and two-step adversarial losses
//! and their weighted sums.

use cycledance_autodiff::{Graph, Var};
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};

/// Discriminator outputs are clamped to `[CLAMP_EPS, 1 - CLAMP_EPS]` before
/// taking logs.
pub const CLAMP_EPS: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub lambda_cyc: f64,
    pub lambda_id: f64,
    /// First step at which the identity weight is zero. `None` means 20% of
    /// the total step budget.
    pub id_anneal_step: Option<u64>,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_cyc: 10.0,
            lambda_id: 5.0,
            id_anneal_step: None,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.lambda_cyc.is_finite() && self.lambda_cyc >= 0.0 && self.lambda_id.is_finite() && self.lambda_id >= 0.0,
            "loss weights must be finite and non-negative"
        );
        Ok(())
    }

    pub fn anneal_step(&self, total_steps: u64) -> u64 {
        self.id_anneal_step.unwrap_or_else(|| (total_steps as f64 * 0.2).ceil() as u64)
    }

    /// Identity weight in effect at `step`.
    pub fn lambda_id_at(&self, step: u64, total_steps: u64) -> f64 {
        if step >= self.anneal_step(total_steps) {
            0.0
        } else {
            self.lambda_id
        }
    }
}

fn clamped_log(g: &mut Graph, p: Var) -> Result<Var> {
    let p = g.clamp(p, CLAMP_EPS, 1.0 - CLAMP_EPS)?;
    Ok(g.log(p)?)
}

/// `-mean(log d_real) - mean(log(1 - d_fake))`.
pub fn adv_d_term(g: &mut Graph, d_real: Var, d_fake: Var) -> Result<Var> {
    let lr = clamped_log(g, d_real)?;
    let lr = g.mean(lr)?;
    let inv = g.affine(d_fake, -1.0, 1.0)?;
    let lf = clamped_log(g, inv)?;
    let lf = g.mean(lf)?;
    let s = g.add(lr, lf)?;
    Ok(g.scale(s, -1.0)?)
}

/// Non-saturating generator term `-mean(log d_fake)`.
pub fn adv_g_term(g: &mut Graph, d_fake: Var) -> Result<Var> {
    let l = clamped_log(g, d_fake)?;
    let l = g.mean(l)?;
    Ok(g.scale(l, -1.0)?)
}

/// `(d_term, g_term)` for one discriminator.
pub fn adv_loss(g: &mut Graph, d_real: Var, d_fake: Var) -> Result<(Var, Var)> {
    Ok((adv_d_term(g, d_real, d_fake)?, adv_g_term(g, d_fake)?))
}

/// The two-step term has the same form, judging cycled reconstructions
/// against real samples.
pub fn adv2_loss(g: &mut Graph, d2_real: Var, d2_cycled: Var) -> Result<(Var, Var)> {
    adv_loss(g, d2_real, d2_cycled)
}

fn paired_l1(g: &mut Graph, a: Var, a_hat: Var, b: Var, b_hat: Var) -> Result<Var> {
    for (u, v) in [(a, a_hat), (b, b_hat)] {
        ensure!(
            g.shape(u) == g.shape(v),
            "shape mismatch: {:?} vs {:?}",
            g.shape(u),
            g.shape(v)
        );
    }
    let la = g.l1(a, a_hat)?;
    let lb = g.l1(b, b_hat)?;
    Ok(g.add(la, lb)?)
}

/// `mean|x - x_cycled| + mean|y - y_cycled|`.
pub fn cycle_loss(g: &mut Graph, x: Var, x_cycled: Var, y: Var, y_cycled: Var) -> Result<Var> {
    paired_l1(g, x, x_cycled, y, y_cycled)
}

/// `mean|x - G_yx(x)| + mean|y - G_xy(y)|`.
pub fn identity_loss(g: &mut Graph, x: Var, g_yx_of_x: Var, y: Var, g_xy_of_y: Var) -> Result<Var> {
    paired_l1(g, x, g_yx_of_x, y, g_xy_of_y)
}

/// Generator-side loss terms of one step. Absent terms contribute nothing.
#[derive(Debug, Clone, Copy)]
pub struct GeneratorTerms {
    pub adv_xy: Var,
    pub adv_yx: Var,
    pub cycle: Var,
    pub identity: Option<Var>,
    pub adv2_x: Option<Var>,
    pub adv2_y: Option<Var>,
}

/// `adv_xy + adv_yx + λ_cyc·cycle + λ_id·identity + adv2_x + adv2_y`.
pub fn generator_objective(g: &mut Graph, t: &GeneratorTerms, lambda_cyc: f64, lambda_id: f64) -> Result<Var> {
    let mut total = g.add(t.adv_xy, t.adv_yx)?;
    let c = g.scale(t.cycle, lambda_cyc)?;
    total = g.add(total, c)?;
    if let Some(id) = t.identity {
        let c = g.scale(id, lambda_id)?;
        total = g.add(total, c)?;
    }
    for v in [t.adv2_x, t.adv2_y].into_iter().flatten() {
        total = g.add(total, v)?;
    }
    Ok(total)
}

/// Sum of the discriminator terms.
pub fn discriminator_objective(g: &mut Graph, d_terms: &[Var]) -> Result<Var> {
    ensure!(!d_terms.is_empty(), "no discriminator terms");
    let mut total = d_terms[0];
    for &d in &d_terms[1..] {
        total = g.add(total, d)?;
    }
    Ok(total)
}

/// Scalar values of every loss in one training step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: u64,
    pub adv_xy: f64,
    pub adv_yx: f64,
    pub cycle: f64,
    pub identity: Option<f64>,
    pub adv2_x: Option<f64>,
    pub adv2_y: Option<f64>,
    pub d_x: f64,
    pub d_y: f64,
    pub d2_x: Option<f64>,
    pub d2_y: Option<f64>,
    pub generator_total: f64,
}

impl LossRecord {
    /// `(name, value)` pairs in a fixed order, skipping absent terms.
    pub fn entries(&self) -> Vec<(&'static str, f64)> {
        let mut out = vec![("adv_xy", self.adv_xy), ("adv_yx", self.adv_yx), ("cycle", self.cycle)];
        let optional = [
            ("identity", self.identity),
            ("adv2_x", self.adv2_x),
            ("adv2_y", self.adv2_y),
        ];
        out.extend(optional.into_iter().filter_map(|(n, v)| v.map(|v| (n, v))));
        out.push(("d_x", self.d_x));
        out.push(("d_y", self.d_y));
        out.extend([("d2_x", self.d2_x), ("d2_y", self.d2_y)].into_iter().filter_map(|(n, v)| v.map(|v| (n, v))));
        out.push(("generator_total", self.generator_total));
        out
    }

    pub fn generator_adv(&self) -> f64 {
        self.adv_xy + self.adv_yx
    }
}

/// Rows `step,loss_name,value`.
pub fn losses_to_csv(records: &[LossRecord], config_hash: &str) -> String {
    let mut s = format!("# config_hash={config_hash}\nstep,loss_name,value\n");
    for r in records {
        for (name, v) in r.entries() {
            s.push_str(&format!("{},{name},{v}\n", r.step));
        }
    }
    s
}
