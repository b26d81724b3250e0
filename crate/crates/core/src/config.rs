//! Code and system parameterization.

use std::fmt;
use std::str::FromStr;

use crate::constellation::QPSK_ORDER;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("invalid parameter `{field}`: {reason}")]
    Invalid { field: &'static str, reason: String },
    #[error("unknown scheme `{0}` (expected one of skp-cc, skp-pcc, skp-u)")]
    UnknownScheme(String),
}

fn invalid(field: &'static str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field,
        reason: reason.into(),
    }
}

/// Channel code applied to the `x` part of the packet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FecMode {
    /// Rate-1/2 tail-biting convolutional code.
    Rate1_2,
    /// Rate-3/4, punctured from the rate-1/2 mother code.
    Rate3_4,
    /// No coding: bit pairs map straight onto QPSK symbols.
    Uncoded,
}

impl FecMode {
    /// Information bits carried by `coded_bits` channel bits.
    pub fn info_bits(self, coded_bits: usize) -> Option<usize> {
        match self {
            FecMode::Rate1_2 => (coded_bits % 2 == 0).then_some(coded_bits / 2),
            FecMode::Rate3_4 => (coded_bits % 4 == 0).then_some(coded_bits / 4 * 3),
            FecMode::Uncoded => Some(coded_bits),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FecMode::Rate1_2 => "1/2",
            FecMode::Rate3_4 => "3/4",
            FecMode::Uncoded => "uncoded",
        }
    }
}

impl FromStr for FecMode {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "1/2" | "rate-1/2" => Ok(FecMode::Rate1_2),
            "3/4" | "rate-3/4" => Ok(FecMode::Rate3_4),
            "uncoded" => Ok(FecMode::Uncoded),
            other => Err(invalid("fec", format!("unknown FEC mode `{other}`"))),
        }
    }
}

/// The three published SKP parameter sets (all use the `(h ⊗ a) ⊗ x` split).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scheme {
    /// `L_IM = 8, L_a = 40, L_x = 80, e_ref = 7`, rate-1/2 CC.
    SkpCc,
    /// `L_IM = 14, L_a = 56, L_x = 57, e_ref = 5`, rate-3/4 punctured CC.
    SkpPcc,
    /// `L_IM = 26, L_a = 78, L_x = 41, e_ref = 1`, uncoded.
    SkpU,
}

impl Scheme {
    pub const ALL: [Scheme; 3] = [Scheme::SkpCc, Scheme::SkpPcc, Scheme::SkpU];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::SkpCc => "skp-cc",
            Scheme::SkpPcc => "skp-pcc",
            Scheme::SkpU => "skp-u",
        }
    }

    /// `(L_IM, L_a, L_x, e_ref, fec)`.
    pub fn code_params(self) -> (usize, usize, usize, usize, FecMode) {
        match self {
            Scheme::SkpCc => (8, 40, 80, 7, FecMode::Rate1_2),
            Scheme::SkpPcc => (14, 56, 57, 5, FecMode::Rate3_4),
            Scheme::SkpU => (26, 78, 41, 1, FecMode::Uncoded),
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Scheme::ALL
            .into_iter()
            .find(|sc| sc.name() == s)
            .ok_or_else(|| ConfigError::UnknownScheme(s.to_string()))
    }
}

/// Channel uses per frame in every published setting.
pub const DEFAULT_T_TOT: usize = 3200;
/// Packet length in every published setting.
pub const DEFAULT_B: usize = 96;

/// Free parameters from which a [`SkpConfig`] is derived.
#[derive(Debug, Clone, PartialEq)]
pub struct SkpParams {
    pub m: usize,
    pub k_total: usize,
    pub k_active: usize,
    pub t_tot: usize,
    pub b: usize,
    pub l_im: usize,
    pub l_a: usize,
    pub l_x: usize,
    pub e_ref: usize,
    pub fec: FecMode,
    pub ebn0_db: f64,
}

impl SkpParams {
    pub fn from_scheme(scheme: Scheme, m: usize, k_active: usize, ebn0_db: f64) -> Self {
        let (l_im, l_a, l_x, e_ref, fec) = scheme.code_params();
        SkpParams {
            m,
            k_total: k_active,
            k_active,
            t_tot: DEFAULT_T_TOT,
            b: DEFAULT_B,
            l_im,
            l_a,
            l_x,
            e_ref,
            fec,
            ebn0_db,
        }
    }
}

/// Validated system parameterization with derived bit budgets.
#[derive(Debug, Clone, PartialEq)]
pub struct SkpConfig {
    pub m: usize,
    pub k_total: usize,
    pub k_active: usize,
    pub t_tot: usize,
    pub b: usize,
    pub b_a: usize,
    pub b_x: usize,
    pub i_im: usize,
    pub l_im: usize,
    pub l_x: usize,
    pub e_ref: usize,
    pub fec: FecMode,
    pub ebn0_db: f64,
}

/// `floor(log2(prod bases))`, saturating at 127.
fn index_entropy_bits(l_im: usize, i_im: usize) -> usize {
    let mut prod: u128 = 1;
    let bases = std::iter::repeat_n(l_im as u128, i_im)
        .chain(std::iter::repeat_n(QPSK_ORDER as u128, i_im - 1));
    for base in bases {
        match prod.checked_mul(base) {
            Some(p) => prod = p,
            None => return 127,
        }
    }
    (127 - prod.leading_zeros() as usize).min(127)
}

impl SkpConfig {
    pub fn new(p: SkpParams) -> Result<Self, ConfigError> {
        if p.m == 0 {
            return Err(invalid("M", "must be at least 1"));
        }
        if p.k_active == 0 {
            return Err(invalid("Ka", "must be at least 1"));
        }
        if p.k_total < p.k_active {
            return Err(invalid("K", "total users must be >= active users"));
        }
        if p.l_im < 2 {
            return Err(invalid("L_IM", "segment length must be at least 2"));
        }
        if p.l_a == 0 || p.l_a % p.l_im != 0 {
            return Err(invalid("L_a", format!("{} is not a multiple of L_IM={}", p.l_a, p.l_im)));
        }
        if p.e_ref == 0 || p.e_ref >= p.l_x {
            return Err(invalid("e_ref", "need 1 <= e_ref < L_x"));
        }
        if p.l_a * p.l_x > p.t_tot {
            return Err(invalid(
                "T_tot",
                format!("L_a*L_x = {} exceeds T_tot = {}", p.l_a * p.l_x, p.t_tot),
            ));
        }
        if !p.ebn0_db.is_finite() {
            return Err(invalid("EbN0_dB", "must be finite"));
        }
        let i_im = p.l_a / p.l_im;
        let coded_bits = 2 * (p.l_x - p.e_ref);
        let b_x = p.fec.info_bits(coded_bits).ok_or_else(|| {
            invalid(
                "L_x",
                format!("{coded_bits} coded bits incompatible with rate {}", p.fec.name()),
            )
        })?;
        if p.fec != FecMode::Uncoded && b_x < crate::fec::MEMORY {
            return Err(invalid("L_x", "too few information bits for the tail-biting code"));
        }
        if b_x > p.b {
            return Err(invalid("B", format!("B_x = {b_x} exceeds B = {}", p.b)));
        }
        let b_a = p.b - b_x;
        let budget = index_entropy_bits(p.l_im, i_im);
        if b_a > budget {
            return Err(invalid(
                "B",
                format!("B_a = {b_a} exceeds the index-modulation budget of {budget} bits"),
            ));
        }
        Ok(SkpConfig {
            m: p.m,
            k_total: p.k_total,
            k_active: p.k_active,
            t_tot: p.t_tot,
            b: p.b,
            b_a,
            b_x,
            i_im,
            l_im: p.l_im,
            l_x: p.l_x,
            e_ref: p.e_ref,
            fec: p.fec,
            ebn0_db: p.ebn0_db,
        })
    }

    pub fn from_scheme(scheme: Scheme, m: usize, k_active: usize, ebn0_db: f64) -> Self {
        Self::new(SkpParams::from_scheme(scheme, m, k_active, ebn0_db))
            .expect("published parameter sets are valid")
    }

    pub fn with_ebn0(&self, ebn0_db: f64) -> Self {
        SkpConfig {
            ebn0_db,
            ..self.clone()
        }
    }

    #[inline]
    pub fn l_a(&self) -> usize {
        self.i_im * self.l_im
    }

    /// Rows of the observation matrix, `M * L_a`.
    #[inline]
    pub fn rows(&self) -> usize {
        self.m * self.l_a()
    }

    /// Non-reference symbols of `x`.
    #[inline]
    pub fn coded_symbols(&self) -> usize {
        self.l_x - self.e_ref
    }

    /// Codeword energy `P = I_IM * L_x` (unit-energy symbols).
    #[inline]
    pub fn power(&self) -> f64 {
        (self.i_im * self.l_x) as f64
    }

    /// Noise density `N0 = P / (B * 10^(EbN0/10))`.
    pub fn n0(&self) -> f64 {
        self.power() / (self.b as f64 * 10f64.powf(self.ebn0_db / 10.0))
    }

    /// Upper bound on `B_a` from the index-modulation alphabet.
    pub fn index_budget(&self) -> usize {
        index_entropy_bits(self.l_im, self.i_im)
    }
}
