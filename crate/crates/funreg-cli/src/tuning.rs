//! Tuning rules mapping (N, M, R) to (K, eta1, eta2) per the rate-table
//! prescriptions, with unit proportionality constants by default.

use crate::config::{TuningConsts, TuningOverrides};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RuleTable {
    Reduced,
    Graph,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rule {
    pub table: RuleTable,
    pub row: usize,
}

/// Parse `table1:i` .. `table1:iv` and `table2:i` .. `table2:vi`.
pub fn parse_rule(name: &str) -> Result<Rule, String> {
    let (table, row_str) = name
        .split_once(':')
        .ok_or_else(|| format!("tuning rule `{name}` is not of the form table<1|2>:<roman>"))?;
    let row = match row_str {
        "i" => 1,
        "ii" => 2,
        "iii" => 3,
        "iv" => 4,
        "v" => 5,
        "vi" => 6,
        _ => return Err(format!("unknown rule row `{row_str}`")),
    };
    match table {
        "table1" if row <= 4 => Ok(Rule {
            table: RuleTable::Reduced,
            row,
        }),
        "table2" if row <= 6 => Ok(Rule {
            table: RuleTable::Graph,
            row,
        }),
        _ => Err(format!("unknown tuning rule `{name}`")),
    }
}

/// Derived exponents shared by the rules.
#[derive(Debug, Clone, Copy)]
pub struct Exponents {
    pub tau: f64,
    pub iota: f64,
    pub kappa: f64,
    pub r1: f64,
    pub r2: f64,
}

pub fn exponents(c: &TuningConsts) -> Exponents {
    let sp1 = (c.order) as f64; // spline order = degree + 1
    let tau = (c.nu as f64).min(sp1) + (c.q as f64).min(sp1) / 2.0;
    let iota = (c.q + c.d) as f64;
    let kappa = tau + c.d as f64 - c.nu as f64;
    let mu = c.mu as f64;
    let r1 = tau / (tau * (2.0 + mu) + 1.0);
    let r2 = iota / (iota * (2.0 + mu) + 1.0);
    Exponents {
        tau,
        iota,
        kappa,
        r1,
        r2,
    }
}

/// Tuned (K, eta1, eta2) for a grid point.
pub fn tuning_rule(
    rule: Rule,
    n: usize,
    m: usize,
    r: usize,
    c: &TuningConsts,
    ov: &TuningOverrides,
) -> (usize, f64, f64) {
    let e = exponents(c);
    let (tau, iota, kappa) = (e.tau, e.iota, e.kappa);
    let mu = c.mu as f64;
    let nf = n as f64;
    let mf = m as f64;
    let (k_raw, eta1, eta2) = match rule.table {
        RuleTable::Reduced => {
            let base = mf * nf / r as f64;
            match rule.row {
                1 => (
                    base.powf(1.0 / (2.0 * tau + 1.0)),
                    base.powf(-2.0 * iota.max(tau) / (2.0 * tau + 1.0)),
                    0.0,
                ),
                2 => (
                    base.powf(iota / ((2.0 * iota + 1.0) * iota.min(tau))),
                    base.powf(-2.0 * iota / (2.0 * iota + 1.0)),
                    0.0,
                ),
                3 => (
                    base.powf(1.0 / (2.0 * tau + 1.0)),
                    base.powf(-2.0 * iota / (2.0 * tau + 1.0)),
                    0.0,
                ),
                _ => (
                    base.powf(iota / (kappa + 2.0 * iota * tau)),
                    base.powf(-2.0 * iota * kappa / (kappa + 2.0 * iota * tau)),
                    0.0,
                ),
            }
        }
        RuleTable::Graph => {
            let mn = mf * nf;
            match rule.row {
                1 => (
                    nf.powf(1.0 / (2.0 * tau + 1.0)),
                    nf.powf(-2.0 * iota.max(tau) / (2.0 * tau + 1.0)),
                    mf.powf(-2.0 / mu).min(nf.powf(-2.0 * tau / (2.0 * tau + 1.0))),
                ),
                2 => (
                    nf.powf(iota / ((2.0 * iota + 1.0) * iota.max(tau))),
                    nf.powf(-2.0 * iota / (2.0 * iota + 1.0)),
                    mf.powf(-2.0 / mu).min(nf.powf(-2.0 * iota / (2.0 * iota + 1.0))),
                ),
                3 | 4 => {
                    let k = mn.powf(e.r1 / tau);
                    let eta1 = mn.powf(-2.0 * iota.max(tau) * e.r1 / tau);
                    let eta2 = if rule.row == 3 {
                        mn.powf(-2.0 * e.r1)
                    } else {
                        mf.powf(-2.0 / mu)
                    };
                    (k, eta1, eta2)
                }
                _ => {
                    let k = mn.powf(e.r2 / iota.min(tau));
                    let eta1 = mn.powf(-2.0 * e.r2);
                    let eta2 = if rule.row == 5 {
                        mn.powf(-2.0 * e.r2)
                    } else {
                        mf.powf(-2.0 / mu)
                    };
                    (k, eta1, eta2)
                }
            }
        }
    };
    let k = ((ov.c_k * k_raw).round() as usize).max(c.order);
    (k, ov.c_eta1 * eta1, ov.c_eta2 * eta2)
}
