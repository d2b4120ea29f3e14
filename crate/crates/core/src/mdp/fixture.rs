//! Plain-text MDP fixtures.
//!
//! ```text
//! factored-mdp 1
//! states 2
//! dims 2 3
//! gamma 0.9
//! initial 0
//! t 0 1,2 1 1.0 0.25 0      # state, action tuple, next, prob, reward, done
//! x 1 0,0                   # infeasible joint action
//! ```
//!
//! Every (state, joint action) pair must have at least one `t` row.

use std::fmt::Write as _;

use super::{ActionSpace, FactoredMdp, MdpError, Outcome};

const MAGIC: &str = "factored-mdp 1";

pub fn to_fixture(mdp: &FactoredMdp) -> String {
    let space = mdp.action_space();
    let mut out = String::new();
    let _ = writeln!(out, "{MAGIC}");
    let _ = writeln!(out, "states {}", mdp.num_states());
    let dims: Vec<String> = space.dims().iter().map(|d| d.to_string()).collect();
    let _ = writeln!(out, "dims {}", dims.join(" "));
    let _ = writeln!(out, "gamma {:?}", mdp.gamma());
    let _ = writeln!(out, "initial {}", mdp.initial_state());
    for s in 0..mdp.num_states() {
        for j in 0..space.size() {
            let tuple: Vec<String> = space.decode(j).iter().map(|a| a.to_string()).collect();
            let tuple = tuple.join(",");
            for o in mdp.outcomes(s, j) {
                let _ = writeln!(out, "t {s} {tuple} {} {:?} {:?} {}", o.next, o.prob, o.reward, u8::from(o.done));
            }
            if !mdp.is_feasible(s, j) {
                let _ = writeln!(out, "x {s} {tuple}");
            }
        }
    }
    out
}

fn err(line: usize, message: impl Into<String>) -> MdpError {
    MdpError::Fixture { line, message: message.into() }
}

fn parse_num<T: std::str::FromStr>(line: usize, tok: Option<&str>, what: &str) -> Result<T, MdpError> {
    let tok = tok.ok_or_else(|| err(line, format!("missing {what}")))?;
    tok.parse().map_err(|_| err(line, format!("invalid {what} `{tok}`")))
}

pub fn from_fixture(text: &str) -> Result<FactoredMdp, MdpError> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty());

    match lines.next() {
        Some((_, l)) if l == MAGIC => {}
        Some((n, l)) => return Err(err(n, format!("expected `{MAGIC}`, got `{l}`"))),
        None => return Err(err(0, "empty fixture")),
    }

    let mut num_states = None;
    let mut dims: Option<Vec<usize>> = None;
    let mut gamma = None;
    let mut initial = 0;
    let mut rows: Vec<(usize, usize, Vec<usize>, Outcome)> = Vec::new();
    let mut infeasible: Vec<(usize, usize, Vec<usize>)> = Vec::new();

    for (n, line) in lines {
        let mut toks = line.split_whitespace();
        match toks.next() {
            Some("states") => num_states = Some(parse_num::<usize>(n, toks.next(), "state count")?),
            Some("dims") => {
                dims = Some(toks.map(|t| parse_num::<usize>(n, Some(t), "dimension")).collect::<Result<_, _>>()?)
            }
            Some("gamma") => gamma = Some(parse_num::<f64>(n, toks.next(), "gamma")?),
            Some("initial") => initial = parse_num::<usize>(n, toks.next(), "initial state")?,
            Some(kind @ ("t" | "x")) => {
                let state = parse_num::<usize>(n, toks.next(), "state")?;
                let tuple = toks
                    .next()
                    .ok_or_else(|| err(n, "missing action tuple"))?
                    .split(',')
                    .map(|t| parse_num::<usize>(n, Some(t), "action component"))
                    .collect::<Result<Vec<_>, _>>()?;
                if kind == "x" {
                    infeasible.push((n, state, tuple));
                    continue;
                }
                let next = parse_num::<usize>(n, toks.next(), "next state")?;
                let prob = parse_num::<f64>(n, toks.next(), "probability")?;
                let reward = parse_num::<f64>(n, toks.next(), "reward")?;
                let done = match toks.next() {
                    Some("0") => false,
                    Some("1") => true,
                    other => return Err(err(n, format!("invalid done flag {other:?}"))),
                };
                rows.push((n, state, tuple, Outcome { next, prob, reward, done }));
            }
            Some(other) => return Err(err(n, format!("unknown record `{other}`"))),
            None => {}
        }
    }

    let num_states = num_states.ok_or_else(|| err(0, "missing `states`"))?;
    let space = ActionSpace::new(dims.ok_or_else(|| err(0, "missing `dims`"))?)?;
    let gamma = gamma.ok_or_else(|| err(0, "missing `gamma`"))?;
    let joint = space.size();
    let mut table = vec![Vec::new(); num_states * joint];
    let locate = |line: usize, state: usize, tuple: &[usize]| -> Result<usize, MdpError> {
        if state >= num_states || !space.contains(tuple) {
            return Err(err(line, format!("state {state} / action {tuple:?} out of range")));
        }
        Ok(state * joint + space.encode(tuple))
    };
    for (line, state, tuple, outcome) in rows {
        table[locate(line, state, &tuple)?].push(outcome);
    }
    let mut feasible = vec![true; num_states * joint];
    for (line, state, tuple) in infeasible {
        feasible[locate(line, state, &tuple)?] = false;
    }
    if let Some(idx) = table.iter().position(|d| d.is_empty()) {
        return Err(err(0, format!("no transition for state {} action {:?}", idx / joint, space.decode(idx % joint))));
    }
    FactoredMdp::from_table(num_states, space, gamma, initial, table, Some(feasible))
}
