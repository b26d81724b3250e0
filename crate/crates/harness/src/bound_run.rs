//! Bound sweep runner: one CSV row per `(M, Ka)` in input order.

use std::path::Path;

use anyhow::{Context, Result};
use skp_ura::bound::{required_ebn0, BoundError};

use crate::config::BoundSweep;

pub const HEADER: [&str; 6] = ["M", "Ka", "eps", "realizations", "required_EbN0_dB", "status"];

#[derive(Debug, Clone, PartialEq)]
pub struct BoundRow {
    pub m: usize,
    pub ka: usize,
    pub eps: f64,
    pub realizations: usize,
    /// `None` when the target is not met inside the search interval.
    pub required_ebn0_db: Option<f64>,
}

impl BoundRow {
    fn record(&self) -> [String; 6] {
        let (db, status) = match self.required_ebn0_db {
            Some(db) => (format!("{db:.4}"), "ok"),
            None => ("inf".to_string(), "unbounded"),
        };
        [
            self.m.to_string(),
            self.ka.to_string(),
            self.eps.to_string(),
            self.realizations.to_string(),
            db,
            status.to_string(),
        ]
    }
}

pub fn compute(sweep: &BoundSweep) -> Result<Vec<BoundRow>> {
    sweep
        .configs
        .iter()
        .map(|cfg| {
            let required_ebn0_db = match required_ebn0(cfg) {
                Ok(db) => Some(db),
                Err(BoundError::Unbounded { .. }) => None,
                Err(e) => return Err(e.into()),
            };
            Ok(BoundRow {
                m: cfg.m,
                ka: cfg.k_active,
                eps: cfg.eps,
                realizations: cfg.realizations,
                required_ebn0_db,
            })
        })
        .collect()
}

pub fn write(path: &Path, rows: &[BoundRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    w.write_record(HEADER)?;
    for r in rows {
        w.write_record(r.record())?;
    }
    w.flush()?;
    Ok(())
}

pub fn run_bound(sweep: &BoundSweep) -> Result<Vec<BoundRow>> {
    let rows = compute(sweep)?;
    write(&sweep.output, &rows)?;
    Ok(rows)
}
