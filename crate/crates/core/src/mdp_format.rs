//! Plain-text serialization of [`FiniteMdp`].
//!
//! ```text
//! n_states 2
//! n_actions 1
//! discount 0.9
//! horizon 10
//! transition        # one dense row per (state, action), state-major
//! 0 1
//! 1 0
//! reward            # one row per state, one column per action
//! 1
//! 0
//! cost
//! 0 0.5
//! initial
//! 1 0
//! absorbing         # state indices, may be empty
//! ```
//!
//! Numbers are written with the shortest representation that parses back to
//! the same `f64`, so a write/read cycle is exact.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::mdp::FiniteMdp;

pub fn to_text(mdp: &FiniteMdp) -> String {
    let (n, m) = (mdp.n_states(), mdp.n_actions());
    let mut out = String::new();
    let _ = writeln!(out, "n_states {n}");
    let _ = writeln!(out, "n_actions {m}");
    let _ = writeln!(out, "discount {}", mdp.discount());
    let _ = writeln!(out, "horizon {}", mdp.horizon());
    out.push_str("transition\n");
    let mut row = vec![0.0; n];
    for s in 0..n {
        for a in 0..m {
            row.iter_mut().for_each(|x| *x = 0.0);
            for &(next, p) in mdp.successors(s, a) {
                row[next] = p;
            }
            push_row(&mut out, row.iter().copied());
        }
    }
    out.push_str("reward\n");
    for s in 0..n {
        push_row(&mut out, (0..m).map(|a| mdp.reward(s, a)));
    }
    out.push_str("cost\n");
    push_row(&mut out, mdp.costs().iter().copied());
    out.push_str("initial\n");
    push_row(&mut out, mdp.initial_distribution().iter().copied());
    out.push_str("absorbing\n");
    let abs: Vec<String> = (0..n)
        .filter(|&s| mdp.is_absorbing(s))
        .map(|s| s.to_string())
        .collect();
    out.push_str(&abs.join(" "));
    out.push('\n');
    out
}

fn push_row(out: &mut String, values: impl Iterator<Item = f64>) {
    let mut first = true;
    for v in values {
        if !first {
            out.push(' ');
        }
        first = false;
        let _ = write!(out, "{v}");
    }
    out.push('\n');
}

struct Lines<'a> {
    inner: std::iter::Peekable<Box<dyn Iterator<Item = (usize, &'a str)> + 'a>>,
    last: usize,
}

impl<'a> Lines<'a> {
    fn new(text: &'a str) -> Self {
        let it: Box<dyn Iterator<Item = (usize, &'a str)>> = Box::new(
            text.lines()
                .enumerate()
                .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
                .filter(|(_, l)| !l.is_empty()),
        );
        Self { inner: it.peekable(), last: 0 }
    }

    fn next(&mut self, what: &str) -> Result<(usize, &'a str)> {
        match self.inner.next() {
            Some((n, l)) => {
                self.last = n;
                Ok((n, l))
            }
            None => Err(Error::Parse {
                line: self.last + 1,
                message: format!("unexpected end of file, expected {what}"),
            }),
        }
    }

    fn keyword(&mut self, key: &str) -> Result<()> {
        let (line, l) = self.next(key)?;
        if l != key {
            return Err(Error::Parse { line, message: format!("expected '{key}', found '{l}'") });
        }
        Ok(())
    }

    fn header<T: std::str::FromStr>(&mut self, key: &str) -> Result<T> {
        let (line, l) = self.next(key)?;
        let mut parts = l.split_whitespace();
        if parts.next() != Some(key) {
            return Err(Error::Parse { line, message: format!("expected '{key} <value>'") });
        }
        let v = parts.next().ok_or_else(|| Error::Parse {
            line,
            message: format!("missing value for '{key}'"),
        })?;
        v.parse().map_err(|_| Error::Parse { line, message: format!("bad value '{v}' for '{key}'") })
    }

    fn row(&mut self, len: usize, what: &str) -> Result<Vec<f64>> {
        let (line, l) = self.next(what)?;
        let vals = l
            .split_whitespace()
            .map(|t| {
                t.parse::<f64>()
                    .map_err(|_| Error::Parse { line, message: format!("bad number '{t}'") })
            })
            .collect::<Result<Vec<f64>>>()?;
        if vals.len() != len {
            return Err(Error::Parse {
                line,
                message: format!("{what}: expected {len} values, found {}", vals.len()),
            });
        }
        Ok(vals)
    }
}

pub fn from_text(text: &str) -> Result<FiniteMdp> {
    let mut lines = Lines::new(text);
    let n: usize = lines.header("n_states")?;
    let m: usize = lines.header("n_actions")?;
    let discount: f64 = lines.header("discount")?;
    let horizon: usize = lines.header("horizon")?;
    lines.keyword("transition")?;
    let mut transitions = Vec::with_capacity(n * m);
    for _ in 0..n * m {
        let row = lines.row(n, "transition row")?;
        transitions.push(
            row.into_iter()
                .enumerate()
                .filter(|e| e.1 != 0.0)
                .collect::<Vec<_>>(),
        );
    }
    lines.keyword("reward")?;
    let mut reward = Vec::with_capacity(n * m);
    for _ in 0..n {
        reward.extend(lines.row(m, "reward row")?);
    }
    lines.keyword("cost")?;
    let cost = lines.row(n, "cost row")?;
    lines.keyword("initial")?;
    let initial = lines.row(n, "initial distribution")?;
    lines.keyword("absorbing")?;
    let mut absorbing = vec![false; n];
    if let Some(&(line, l)) = lines.inner.peek() {
        for t in l.split_whitespace() {
            let s: usize = t
                .parse()
                .ok()
                .filter(|&s: &usize| s < n)
                .ok_or_else(|| Error::Parse { line, message: format!("bad absorbing state '{t}'") })?;
            absorbing[s] = true;
        }
        lines.inner.next();
    }
    if let Some((line, l)) = lines.inner.next() {
        return Err(Error::Parse { line, message: format!("trailing content '{l}'") });
    }
    FiniteMdp::from_parts(n, m, transitions, reward, cost, discount, initial, horizon, absorbing)
}

pub fn read(path: &Path) -> Result<FiniteMdp> {
    from_text(&std::fs::read_to_string(path)?)
}

pub fn write(mdp: &FiniteMdp, path: &Path) -> Result<()> {
    std::fs::write(path, to_text(mdp))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::FiniteMdpBuilder;

    #[test]
    fn round_trip_is_exact() {
        let mut b = FiniteMdpBuilder::new(3, 2);
        b.transition(0, 0, &[(1, 0.1), (2, 0.9)])
            .transition(0, 1, &[(0, 1.0 / 3.0), (1, 2.0 / 3.0)])
            .deterministic(1, 0, 2)
            .deterministic(1, 1, 0)
            .absorbing(2)
            .reward(0, 1, 0.1 + 0.2)
            .cost(1, 1e-300)
            .discount(0.987654321)
            .horizon(17)
            .initial(&[0.25, 0.75, 0.0]);
        let mdp = b.build().unwrap();
        let back = from_text(&to_text(&mdp)).unwrap();
        assert_eq!(mdp, back);
    }

    #[test]
    fn diagnostics_carry_line_numbers() {
        let text = "n_states 1\nn_actions 1\ndiscount 0.9\nhorizon 5\ntransition\n1 x\n";
        match from_text(text) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 6),
            other => panic!("unexpected {other:?}"),
        }
    }
}
