use serde::{Deserialize, Serialize};

use super::network::{SsmNetwork, TokenMap};
use crate::error::{Error, Result};

/// The seven parameters of the network class S(M,U,D,L,W,S,B).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassBudget {
    #[serde(rename = "M")]
    pub m: usize,
    #[serde(rename = "U")]
    pub u: usize,
    #[serde(rename = "D")]
    pub d: usize,
    #[serde(rename = "L")]
    pub l: usize,
    #[serde(rename = "W")]
    pub w: usize,
    #[serde(rename = "S")]
    pub s: usize,
    #[serde(rename = "B")]
    pub b: f64,
}

impl ClassBudget {
    pub fn new(m: usize, u: usize, d: usize, l: usize, w: usize, s: usize, b: f64) -> Result<Self> {
        let budget = Self { m, u, d, l, w, s, b };
        budget.validate()?;
        Ok(budget)
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.d == 0 || self.l == 0 || self.w == 0 || self.s == 0 {
            return Err(Error::InvalidArgument("class budget parameters must be positive".into()));
        }
        if !(self.b >= 1.0) {
            return Err(Error::InvalidArgument(format!("norm bound B must be >= 1, got {}", self.b)));
        }
        Ok(())
    }

    /// Smallest budget containing `net` (idealized readouts ignored).
    pub fn fitting(net: &SsmNetwork) -> Self {
        let mut budget = Self { m: net.m(), u: 0, d: net.emb.d_out(), l: 1, w: 1, s: 1, b: 1.0 };
        budget.b = budget.b.max(net.emb.e1.max_abs()).max(max_abs(&net.emb.e2));
        for block in &net.blocks {
            budget.u = budget.u.max(block.conv.window);
            budget.d = budget.d.max(block.conv.d());
            budget.b = budget.b.max(block.conv.max_param());
            if let TokenMap::Fnn(f) = &block.map {
                budget.l = budget.l.max(f.depth());
                budget.w = budget.w.max(f.width());
                budget.s = budget.s.max(f.sparsity());
                budget.b = budget.b.max(f.max_param());
            }
        }
        budget
    }
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintCheck {
    pub name: String,
    pub measured: f64,
    pub limit: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MembershipReport {
    pub checks: Vec<ConstraintCheck>,
    /// 1-based indices of blocks whose token map is an idealized readout;
    /// those maps carry no ReLU parameters to budget.
    pub idealized_blocks: Vec<usize>,
    pub pass: bool,
}

impl MembershipReport {
    pub fn failures(&self) -> Vec<&ConstraintCheck> {
        self.checks.iter().filter(|c| !c.pass).collect()
    }
}

pub fn validate_class_membership(net: &SsmNetwork, budget: &ClassBudget) -> MembershipReport {
    let mut checks = Vec::new();
    let mut push = |name: String, measured: f64, limit: f64| {
        checks.push(ConstraintCheck { name, measured, limit, pass: measured <= limit });
    };
    let b = budget.b;
    push("M".into(), net.m() as f64, budget.m as f64);
    push("emb.D".into(), net.emb.d_out() as f64, budget.d as f64);
    push("emb.B(E1)".into(), net.emb.e1.max_abs(), b);
    push("emb.B(E2)".into(), max_abs(&net.emb.e2), b);
    let mut idealized_blocks = Vec::new();
    for (i, block) in net.blocks.iter().enumerate() {
        let k = i + 1;
        let c = &block.conv;
        push(format!("block{k}.conv.U"), c.window as f64, budget.u as f64);
        push(format!("block{k}.conv.D"), c.d() as f64, budget.d as f64);
        push(format!("block{k}.conv.B(W)"), c.w_mix.max_abs(), b);
        let filter_max = [&c.c1, &c.c2, &c.a1, &c.a2].iter().map(|v| max_abs(v)).fold(0.0, f64::max);
        push(format!("block{k}.conv.B(c,a)"), filter_max, b);
        match &block.map {
            TokenMap::Fnn(f) => {
                push(format!("block{k}.fnn.L"), f.depth() as f64, budget.l as f64);
                push(format!("block{k}.fnn.W"), f.width() as f64, budget.w as f64);
                push(format!("block{k}.fnn.S"), f.sparsity() as f64, budget.s as f64);
                push(format!("block{k}.fnn.B"), f.max_param(), b);
            }
            TokenMap::Readout(_) => idealized_blocks.push(k),
        }
    }
    let pass = checks.iter().all(|c| c.pass);
    MembershipReport { checks, idealized_blocks, pass }
}
