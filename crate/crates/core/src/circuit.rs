//! Gates, circuits, gate DDs and the circuit text format.
//!
//! Text format, one item per line, `#` starts a comment:
//!
//! ```text
//! qubits 3
//! h 0
//! rx 1 0.5
//! cnot 0 2
//! grover 5     # one full Grover iteration marking basis state 5
//! ```
//!
//! `oracle m` applies the phase oracle alone. Angles are radians.

use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::fmt::Write as _;

use num_complex::Complex64;
use rand_xoshiro::rand_core::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256StarStar;

use crate::dd::{Edge, Kind, Package};
use crate::error::{DdError, ParseError};
use crate::ops::{MulKind, OpContext, REdge};

/// Single marked basis state of a phase oracle.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct OracleSpec {
    pub marked: u64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Gate {
    H(usize),
    X(usize),
    Z(usize),
    Rx(usize, f64),
    Ry(usize, f64),
    Rz(usize, f64),
    Cnot { control: usize, target: usize },
    /// Diagonal ±1 phase flip of the marked state.
    Oracle(OracleSpec),
    /// Oracle followed by the diffusion operator.
    GroverIteration(OracleSpec),
}

/// Hashable identity of a gate, used to share gate DDs between repetitions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct GateKey(u8, u64, u64);

impl Gate {
    pub fn key(&self) -> GateKey {
        match *self {
            Gate::H(q) => GateKey(0, q as u64, 0),
            Gate::X(q) => GateKey(1, q as u64, 0),
            Gate::Z(q) => GateKey(2, q as u64, 0),
            Gate::Rx(q, t) => GateKey(3, q as u64, t.to_bits()),
            Gate::Ry(q, t) => GateKey(4, q as u64, t.to_bits()),
            Gate::Rz(q, t) => GateKey(5, q as u64, t.to_bits()),
            Gate::Cnot { control, target } => GateKey(6, control as u64, target as u64),
            Gate::Oracle(o) => GateKey(7, o.marked, 0),
            Gate::GroverIteration(o) => GateKey(8, o.marked, 0),
        }
    }

    pub fn validate(&self, n: usize) -> Result<(), DdError> {
        let bad = |m: String| Err(DdError::InvalidGate(m));
        match *self {
            Gate::H(q) | Gate::X(q) | Gate::Z(q) if q >= n => bad(format!("qubit {q} on {n} qubits")),
            Gate::Rx(q, t) | Gate::Ry(q, t) | Gate::Rz(q, t) => {
                if q >= n {
                    bad(format!("qubit {q} on {n} qubits"))
                } else if !t.is_finite() {
                    bad(format!("angle {t}"))
                } else {
                    Ok(())
                }
            }
            Gate::Cnot { control, target } => {
                if control >= n || target >= n {
                    bad(format!("cnot {control} {target} on {n} qubits"))
                } else if control == target {
                    bad(format!("cnot control equals target ({control})"))
                } else {
                    Ok(())
                }
            }
            Gate::Oracle(o) | Gate::GroverIteration(o) => {
                if n >= 64 || o.marked >> n != 0 {
                    bad(format!("marked state {} on {n} qubits", o.marked))
                } else if matches!(self, Gate::GroverIteration(_)) && n < 2 {
                    bad("grover iteration needs at least 2 qubits".into())
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }

    /// 2x2 matrix of a single-qubit gate, row-major.
    pub fn matrix(&self) -> Option<[Complex64; 4]> {
        let c = |re: f64, im: f64| Complex64::new(re, im);
        Some(match *self {
            Gate::H(_) => [c(FRAC_1_SQRT_2, 0.0), c(FRAC_1_SQRT_2, 0.0), c(FRAC_1_SQRT_2, 0.0), c(-FRAC_1_SQRT_2, 0.0)],
            Gate::X(_) => [c(0.0, 0.0), c(1.0, 0.0), c(1.0, 0.0), c(0.0, 0.0)],
            Gate::Z(_) => [c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(-1.0, 0.0)],
            Gate::Rx(_, t) => {
                let (s, co) = (t / 2.0).sin_cos();
                [c(co, 0.0), c(0.0, -s), c(0.0, -s), c(co, 0.0)]
            }
            Gate::Ry(_, t) => {
                let (s, co) = (t / 2.0).sin_cos();
                [c(co, 0.0), c(-s, 0.0), c(s, 0.0), c(co, 0.0)]
            }
            Gate::Rz(_, t) => {
                let (s, co) = (t / 2.0).sin_cos();
                [c(co, -s), c(0.0, 0.0), c(0.0, 0.0), c(co, s)]
            }
            _ => return None,
        })
    }
}

/// An ordered gate list on `n` qubits; the first gate is applied first.
#[derive(Clone, Debug, PartialEq)]
pub struct Circuit {
    pub n: usize,
    pub gates: Vec<Gate>,
}

impl Circuit {
    pub fn new(n: usize) -> Self {
        Circuit { n, gates: Vec::new() }
    }

    pub fn validate(&self) -> Result<(), DdError> {
        if self.n == 0 {
            return Err(DdError::InvalidGate("circuit needs at least one qubit".into()));
        }
        self.gates.iter().try_for_each(|g| g.validate(self.n))
    }
}

// ---- gate DDs ----

fn identity_chain(ctx: &mut OpContext, levels: usize) -> Vec<REdge> {
    // ids[k] spans levels 0..k, ids[0] is the terminal
    let mut ids = vec![REdge::unit(0)];
    for z in 0..levels {
        let below = ids[z];
        let e = ctx.make_node_r(z, Kind::Matrix, &[below, REdge::ZERO, REdge::ZERO, below]);
        ids.push(e);
    }
    ids
}

/// Controlled single-qubit gate: `u` on `target` when every qubit in
/// `controls` is 1, identity otherwise.
pub(crate) fn controlled_gate(ctx: &mut OpContext, n: usize, u: [Complex64; 4], target: usize, controls: &[usize]) -> REdge {
    let ident = identity_chain(ctx, n);
    let mut em: [REdge; 4] = std::array::from_fn(|k| {
        if crate::cnum::approx_zero(u[k]) {
            REdge::ZERO
        } else {
            REdge { node: 0, w: u[k] }
        }
    });
    for z in 0..target {
        let control = controls.contains(&z);
        for (k, e) in em.iter_mut().enumerate() {
            let diag = k == 0 || k == 3;
            *e = if control {
                let off = if diag { ident[z] } else { REdge::ZERO };
                ctx.make_node_r(z, Kind::Matrix, &[off, REdge::ZERO, REdge::ZERO, *e])
            } else {
                ctx.make_node_r(z, Kind::Matrix, &[*e, REdge::ZERO, REdge::ZERO, *e])
            };
        }
    }
    let mut e = ctx.make_node_r(target, Kind::Matrix, &em);
    for z in target + 1..n {
        e = if controls.contains(&z) {
            ctx.make_node_r(z, Kind::Matrix, &[ident[z], REdge::ZERO, REdge::ZERO, e])
        } else {
            ctx.make_node_r(z, Kind::Matrix, &[e, REdge::ZERO, REdge::ZERO, e])
        };
    }
    e
}

/// `I − 2|m⟩⟨m|` built level by level, one extra node per level.
fn oracle_dd(ctx: &mut OpContext, n: usize, marked: u64) -> REdge {
    let ident = identity_chain(ctx, n);
    let mut d = REdge {
        node: 0,
        w: Complex64::new(-1.0, 0.0),
    };
    for z in 0..n {
        let children = if (marked >> z) & 1 == 0 {
            [d, REdge::ZERO, REdge::ZERO, ident[z]]
        } else {
            [ident[z], REdge::ZERO, REdge::ZERO, d]
        };
        d = ctx.make_node_r(z, Kind::Matrix, &children);
    }
    d
}

fn layer(ctx: &mut OpContext, n: usize, u: [Complex64; 4]) -> REdge {
    let mut acc = controlled_gate(ctx, n, u, 0, &[]);
    for q in 1..n {
        let g = controlled_gate(ctx, n, u, q, &[]);
        acc = ctx.mul(MulKind::Mm, g, acc);
    }
    acc
}

/// `2|s⟩⟨s| − I` as `−(H X MCZ X H)` on all qubits.
fn diffusion_dd(ctx: &mut OpContext, n: usize) -> REdge {
    let hs = layer(ctx, n, Gate::H(0).matrix().unwrap());
    let xs = layer(ctx, n, Gate::X(0).matrix().unwrap());
    let controls: Vec<usize> = (0..n - 1).collect();
    let mcz = controlled_gate(ctx, n, Gate::Z(0).matrix().unwrap(), n - 1, &controls);
    let mut d = ctx.mul(MulKind::Mm, xs, hs);
    d = ctx.mul(MulKind::Mm, mcz, d);
    d = ctx.mul(MulKind::Mm, xs, d);
    d = ctx.mul(MulKind::Mm, hs, d);
    d.scaled(Complex64::new(-1.0, 0.0))
}

pub(crate) fn gate_dd_r(ctx: &mut OpContext, g: &Gate, n: usize) -> REdge {
    match *g {
        Gate::H(q) | Gate::X(q) | Gate::Z(q) | Gate::Rx(q, _) | Gate::Ry(q, _) | Gate::Rz(q, _) => {
            controlled_gate(ctx, n, g.matrix().unwrap(), q, &[])
        }
        Gate::Cnot { control, target } => {
            controlled_gate(ctx, n, Gate::X(0).matrix().unwrap(), target, &[control])
        }
        Gate::Oracle(o) => oracle_dd(ctx, n, o.marked),
        Gate::GroverIteration(o) => {
            let oracle = oracle_dd(ctx, n, o.marked);
            let diff = diffusion_dd(ctx, n);
            ctx.mul(MulKind::Mm, diff, oracle)
        }
    }
}

impl OpContext {
    /// Matrix DD of `g` acting on `n` qubits.
    pub fn gate_to_dd(&mut self, g: &Gate, n: usize) -> Result<Edge, DdError> {
        g.validate(n)?;
        self.guarded(|ctx| {
            let r = gate_dd_r(ctx, g, n);
            ctx.to_edge(r)
        })
    }

    /// One Grover iteration: diffusion after the phase oracle.
    pub fn grover_iteration_dd(&mut self, n: usize, oracle: OracleSpec) -> Result<Edge, DdError> {
        self.gate_to_dd(&Gate::GroverIteration(oracle), n)
    }
}

impl Package {
    pub fn gate_to_dd(&self, g: &Gate, n: usize) -> Result<Edge, DdError> {
        self.context().gate_to_dd(g, n)
    }

    pub fn grover_iteration_dd(&self, n: usize, oracle: OracleSpec) -> Result<Edge, DdError> {
        self.context().grover_iteration_dd(n, oracle)
    }
}

// ---- circuit builders ----

/// `⌊π·√(2ⁿ)/4⌋`.
pub fn grover_iterations(n: usize) -> usize {
    (PI * 2f64.powf(n as f64 / 2.0) / 4.0).floor() as usize
}

/// `H` on every qubit, then `grover_iterations(n)` Grover iterations.
pub fn build_grover(n: usize, oracle: OracleSpec) -> Result<Circuit, DdError> {
    if n < 2 {
        return Err(DdError::InvalidGate("grover needs at least 2 qubits".into()));
    }
    let mut c = Circuit::new(n);
    c.gates.extend((0..n).map(Gate::H));
    c.gates.extend(std::iter::repeat_n(Gate::GroverIteration(oracle), grover_iterations(n)));
    c.validate()?;
    Ok(c)
}

/// Uniform `x ∈ [0, bound)` from 64 random bits.
#[inline]
fn below(r: u64, bound: usize) -> usize {
    ((u128::from(r) * bound as u128) >> 64) as usize
}

/// `depth` gates drawn uniformly from RX, RY, RZ and CNOT with uniform
/// targets, controls and angles in `[0, 2π)`.
///
/// The generator is xoshiro256** seeded with `seed_from_u64(seed)`. Each gate
/// takes, in order: a kind from the top two bits of one draw (RX, RY, RZ,
/// CNOT), a target from a second draw as `⌊r·n/2⁶⁴⌋`, then either an angle
/// `(r >> 11)·2⁻⁵³·2π` or a control `⌊r·(n−1)/2⁶⁴⌋`, shifted up by one when it
/// is not below the target.
pub fn random_circuit(n: usize, depth: usize, seed: u64) -> Result<Circuit, DdError> {
    if n < 2 || depth == 0 {
        return Err(DdError::InvalidGate("random circuits need n >= 2 and depth >= 1".into()));
    }
    let mut rng = Xoshiro256StarStar::seed_from_u64(seed);
    let mut c = Circuit::new(n);
    for _ in 0..depth {
        let kind = rng.next_u64() >> 62;
        let target = below(rng.next_u64(), n);
        let g = if kind == 3 {
            let mut control = below(rng.next_u64(), n - 1);
            if control >= target {
                control += 1;
            }
            Gate::Cnot { control, target }
        } else {
            let theta = (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64) * 2.0 * PI;
            match kind {
                0 => Gate::Rx(target, theta),
                1 => Gate::Ry(target, theta),
                _ => Gate::Rz(target, theta),
            }
        };
        c.gates.push(g);
    }
    Ok(c)
}

// ---- text format ----

pub fn parse_circuit(text: &str) -> Result<Circuit, ParseError> {
    let mut circuit: Option<Circuit> = None;
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let err = |message: String| ParseError { line, message };
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let mut tok = body.split_whitespace();
        let word = tok.next().unwrap().to_ascii_lowercase();
        let args: Vec<&str> = tok.collect();
        let Some(c) = circuit.as_mut() else {
            if word != "qubits" {
                return Err(err(format!("expected `qubits <n>`, found `{word}`")));
            }
            let [n] = args[..] else {
                return Err(err("`qubits` takes one argument".into()));
            };
            let n: usize = n.parse().map_err(|_| err(format!("bad qubit count `{n}`")))?;
            if n == 0 || n > 63 {
                return Err(err(format!("qubit count {n} outside 1..=63")));
            }
            circuit = Some(Circuit::new(n));
            continue;
        };
        let qubit = |s: &str| -> Result<usize, ParseError> { s.parse().map_err(|_| err(format!("bad qubit `{s}`"))) };
        let angle = |s: &str| -> Result<f64, ParseError> {
            s.parse::<f64>()
                .ok()
                .filter(|t| t.is_finite())
                .ok_or_else(|| err(format!("bad angle `{s}`")))
        };
        let arity = |k: usize| -> Result<(), ParseError> {
            if args.len() == k {
                Ok(())
            } else {
                Err(err(format!("`{word}` takes {k} argument(s), got {}", args.len())))
            }
        };
        let gate = match word.as_str() {
            "h" | "x" | "z" => {
                arity(1)?;
                let q = qubit(args[0])?;
                match word.as_str() {
                    "h" => Gate::H(q),
                    "x" => Gate::X(q),
                    _ => Gate::Z(q),
                }
            }
            "rx" | "ry" | "rz" => {
                arity(2)?;
                let (q, t) = (qubit(args[0])?, angle(args[1])?);
                match word.as_str() {
                    "rx" => Gate::Rx(q, t),
                    "ry" => Gate::Ry(q, t),
                    _ => Gate::Rz(q, t),
                }
            }
            "cnot" => {
                arity(2)?;
                Gate::Cnot {
                    control: qubit(args[0])?,
                    target: qubit(args[1])?,
                }
            }
            "oracle" | "grover" => {
                arity(1)?;
                let marked: u64 = args[0].parse().map_err(|_| err(format!("bad basis index `{}`", args[0])))?;
                if word == "oracle" {
                    Gate::Oracle(OracleSpec { marked })
                } else {
                    Gate::GroverIteration(OracleSpec { marked })
                }
            }
            "qubits" => return Err(err("`qubits` given twice".into())),
            other => return Err(err(format!("unknown gate `{other}`"))),
        };
        gate.validate(c.n).map_err(|e| err(e.to_string()))?;
        c.gates.push(gate);
    }
    circuit.ok_or(ParseError {
        line: text.lines().count().max(1),
        message: "missing `qubits <n>` line".into(),
    })
}

pub fn serialize_circuit(c: &Circuit) -> String {
    let mut s = format!("qubits {}\n", c.n);
    for g in &c.gates {
        // `{}` on f64 prints the shortest text that parses back to the same bits
        let _ = match *g {
            Gate::H(q) => writeln!(s, "h {q}"),
            Gate::X(q) => writeln!(s, "x {q}"),
            Gate::Z(q) => writeln!(s, "z {q}"),
            Gate::Rx(q, t) => writeln!(s, "rx {q} {t}"),
            Gate::Ry(q, t) => writeln!(s, "ry {q} {t}"),
            Gate::Rz(q, t) => writeln!(s, "rz {q} {t}"),
            Gate::Cnot { control, target } => writeln!(s, "cnot {control} {target}"),
            Gate::Oracle(o) => writeln!(s, "oracle {}", o.marked),
            Gate::GroverIteration(o) => writeln!(s, "grover {}", o.marked),
        };
    }
    s
}
