//! Plain-text persistence for environments.
//!
//! Line-oriented, binary-free format; vectors are decimal rows. Floats are
//! written with Rust's shortest round-trip formatting, so save → load is
//! bit-exact.
//!
//! ```text
//! fedcon-env v1
//! dim 3
//! noise_std 1.0
//! theta 0.1 0.2 0.3
//! arms 2
//! 1.0 0.0 0.0
//! 0.0 1.0 0.0
//! keyterms 1
//! 0.0 0.0 1.0
//! clients 1
//! 0 1
//! ```

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::DVector;

use super::{EnvError, Environment};

const MAGIC: &str = "fedcon-env v1";

pub fn save_environment(env: &Environment, path: &Path) -> Result<(), EnvError> {
    let file = std::fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    writeln!(w, "{MAGIC}")?;
    writeln!(w, "dim {}", env.dim)?;
    writeln!(w, "noise_std {:?}", env.noise_std)?;
    writeln!(w, "theta {}", join_floats(&env.theta_star))?;
    writeln!(w, "arms {}", env.arms.len())?;
    for a in &env.arms {
        writeln!(w, "{}", join_floats(a))?;
    }
    writeln!(w, "keyterms {}", env.key_terms.len())?;
    for k in &env.key_terms {
        writeln!(w, "{}", join_floats(k))?;
    }
    writeln!(w, "clients {}", env.clients.len())?;
    for ids in &env.clients {
        let row: Vec<String> = ids.iter().map(|i| i.to_string()).collect();
        writeln!(w, "{}", row.join(" "))?;
    }
    Ok(())
}

pub fn load_environment(path: &Path) -> Result<Environment, EnvError> {
    let file = std::fs::File::open(path)?;
    let mut lines = BufReader::new(file).lines();
    let mut next = || -> Result<String, EnvError> {
        lines
            .next()
            .ok_or_else(|| EnvError::BadFormat("unexpected end of file".into()))?
            .map_err(EnvError::from)
    };
    if next()?.trim() != MAGIC {
        return Err(EnvError::BadFormat(format!("missing `{MAGIC}` header")));
    }
    let dim = parse_keyed_usize(&next()?, "dim")?;
    let noise_std = parse_keyed_f64(&next()?, "noise_std")?;
    let theta_line = next()?;
    let theta_str = theta_line
        .strip_prefix("theta ")
        .ok_or_else(|| EnvError::BadFormat("expected theta row".into()))?;
    let theta_star = parse_vector(theta_str, dim)?;

    let num_arms = parse_keyed_usize(&next()?, "arms")?;
    let mut arms = Vec::with_capacity(num_arms);
    for _ in 0..num_arms {
        arms.push(parse_vector(&next()?, dim)?);
    }
    let num_kt = parse_keyed_usize(&next()?, "keyterms")?;
    let mut key_terms = Vec::with_capacity(num_kt);
    for _ in 0..num_kt {
        key_terms.push(parse_vector(&next()?, dim)?);
    }
    let num_clients = parse_keyed_usize(&next()?, "clients")?;
    let mut clients = Vec::with_capacity(num_clients);
    for _ in 0..num_clients {
        let line = next()?;
        let ids: Result<Vec<usize>, _> = line.split_whitespace().map(str::parse).collect();
        clients.push(ids.map_err(|_| EnvError::BadFormat(format!("bad client row: {line}")))?);
    }
    let env = Environment { dim, arms, key_terms, clients, theta_star, noise_std };
    env.validate()?;
    Ok(env)
}

fn join_floats(v: &DVector<f64>) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:?}")).collect();
    parts.join(" ")
}

fn parse_vector(line: &str, dim: usize) -> Result<DVector<f64>, EnvError> {
    let vals: Result<Vec<f64>, _> = line.split_whitespace().map(str::parse).collect();
    let vals = vals.map_err(|_| EnvError::BadFormat(format!("bad vector row: {line}")))?;
    if vals.len() != dim {
        return Err(EnvError::BadFormat(format!(
            "vector row has {} entries, expected {dim}",
            vals.len()
        )));
    }
    Ok(DVector::from_vec(vals))
}

fn parse_keyed_usize(line: &str, key: &str) -> Result<usize, EnvError> {
    parse_keyed(line, key)?.parse().map_err(|_| EnvError::BadFormat(format!("bad {key} line")))
}

fn parse_keyed_f64(line: &str, key: &str) -> Result<f64, EnvError> {
    parse_keyed(line, key)?.parse().map_err(|_| EnvError::BadFormat(format!("bad {key} line")))
}

fn parse_keyed<'a>(line: &'a str, key: &str) -> Result<&'a str, EnvError> {
    let mut it = line.split_whitespace();
    match (it.next(), it.next(), it.next()) {
        (Some(k), Some(v), None) if k == key => Ok(v),
        _ => Err(EnvError::BadFormat(format!("expected `{key} <value>`, got {line:?}"))),
    }
}
