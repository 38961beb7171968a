//! Flat `key = value` run configuration with `#` comments.
//!
//! Unspecified keys keep their defaults. Stiffness matrices are given as
//! either 9 row-major entries or the 6 upper-triangle entries
//! `c11 c12 c13 c22 c23 c33`, separated by commas or whitespace.

use crate::discretization::TimeDisc;
use crate::error::{Error, Result};
use crate::physics::{MaterialParams, ScalarSource, SourceData, Voigt};
use crate::solvers::SolverConfig;
use std::collections::HashSet;

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub solver: SolverConfig,
    pub params: MaterialParams,
    pub sources: SourceData,
    /// Cells per side of the mesh.
    pub n: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            solver: SolverConfig::default(),
            params: MaterialParams::default(),
            sources: SourceData::default(),
            n: 64,
        }
    }
}

fn err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

fn number(line: usize, key: &str, v: &str) -> Result<f64> {
    let x: f64 = v
        .parse()
        .map_err(|_| err(line, format!("{key}: '{v}' is not a number")))?;
    if !x.is_finite() {
        return Err(err(line, format!("{key} must be finite")));
    }
    Ok(x)
}

fn positive(line: usize, key: &str, v: &str) -> Result<f64> {
    let x = number(line, key, v)?;
    if x <= 0.0 {
        return Err(err(line, format!("{key} must be positive, got {x}")));
    }
    Ok(x)
}

fn count(line: usize, key: &str, v: &str) -> Result<usize> {
    v.parse()
        .map_err(|_| err(line, format!("{key}: '{v}' is not a non-negative integer")))
}

fn coefficient(line: usize, key: &str, v: &str) -> Result<f64> {
    let x = positive(line, key, v)?;
    if x > 1.0 {
        return Err(err(line, format!("{key} must lie in (0, 1], got {x}")));
    }
    Ok(x)
}

fn stiffness(line: usize, key: &str, v: &str) -> Result<Voigt> {
    let vals: Vec<f64> = v
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(|s| number(line, key, s))
        .collect::<Result<_>>()?;
    let c = match vals.len() {
        9 => {
            let c = [
                [vals[0], vals[1], vals[2]],
                [vals[3], vals[4], vals[5]],
                [vals[6], vals[7], vals[8]],
            ];
            for i in 0..3 {
                for j in 0..i {
                    if c[i][j] != c[j][i] {
                        return Err(err(line, format!("{key} must be symmetric")));
                    }
                }
            }
            c
        }
        6 => [
            [vals[0], vals[1], vals[2]],
            [vals[1], vals[3], vals[4]],
            [vals[2], vals[4], vals[5]],
        ],
        k => return Err(err(line, format!("{key} needs 6 or 9 entries, got {k}"))),
    };
    let probe = MaterialParams {
        c_minus: c,
        c_plus: c,
        ..MaterialParams::default()
    };
    probe
        .validate()
        .map_err(|_| err(line, format!("{key} must be symmetric positive definite")))?;
    Ok(c)
}

pub fn parse_config(text: &str) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    let mut seen = HashSet::new();
    let mut last_line = 0;
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        last_line = line;
        let (key, value) = content
            .split_once('=')
            .ok_or_else(|| err(line, format!("expected 'key = value', got '{content}'")))?;
        let (key, v) = (key.trim(), value.trim());
        if !seen.insert(key.to_string()) {
            return Err(err(line, format!("duplicate key '{key}'")));
        }
        let p = &mut cfg.params;
        let s = &mut cfg.solver;
        match key {
            "gamma" => p.gamma = positive(line, key, v)?,
            "ell" => p.ell = positive(line, key, v)?,
            "m" => p.mobility = positive(line, key, v)?,
            "kappa" => p.kappa = positive(line, key, v)?,
            "xi" => p.xi = number(line, key, v)?,
            "beta_cut" | "beta" => {
                p.beta_cut = number(line, key, v)?;
                if p.beta_cut <= 1.0 {
                    return Err(err(line, format!("{key} must exceed 1")));
                }
            }
            "M_minus" => p.modulus_minus = positive(line, key, v)?,
            "M_plus" => p.modulus_plus = positive(line, key, v)?,
            "alpha_minus" => p.alpha_minus = coefficient(line, key, v)?,
            "alpha_plus" => p.alpha_plus = coefficient(line, key, v)?,
            "C_minus" => p.c_minus = stiffness(line, key, v)?,
            "C_plus" => p.c_plus = stiffness(line, key, v)?,
            "tau" => s.tau = positive(line, key, v)?,
            "n" => {
                cfg.n = count(line, key, v)?;
                if cfg.n == 0 {
                    return Err(err(line, "n must be at least 1"));
                }
            }
            "n_steps" => s.n_steps = count(line, key, v)?,
            "max_iter" => {
                s.max_iter = count(line, key, v)?;
                if s.max_iter == 0 {
                    return Err(err(line, "max_iter must be at least 1"));
                }
            }
            "newton_max" => {
                s.newton_max = count(line, key, v)?;
                if s.newton_max == 0 {
                    return Err(err(line, "newton_max must be at least 1"));
                }
            }
            "tol" => s.tol = positive(line, key, v)?,
            "newton_tol" => s.newton_tol = positive(line, key, v)?,
            "scheme" => s.scheme = v.parse().map_err(|e: Error| err(line, e.to_string()))?,
            "time_disc" => {
                s.time_disc = v.parse::<TimeDisc>().map_err(|e| err(line, e.to_string()))?
            }
            "trace_potential" => {
                s.trace_potential = v
                    .parse()
                    .map_err(|_| err(line, format!("{key}: expected true or false")))?
            }
            "R" => cfg.sources.r = ScalarSource::Uniform(number(line, key, v)?),
            "S_f" => cfg.sources.s_f = ScalarSource::Uniform(number(line, key, v)?),
            "f_x" => cfg.sources.f[0] = ScalarSource::Uniform(number(line, key, v)?),
            "f_y" => cfg.sources.f[1] = ScalarSource::Uniform(number(line, key, v)?),
            _ => return Err(err(line, format!("unknown key '{key}'"))),
        }
    }
    cfg.params
        .validate()
        .and_then(|_| cfg.solver.validate())
        .map_err(|e| err(last_line, e.to_string()))?;
    Ok(cfg)
}
