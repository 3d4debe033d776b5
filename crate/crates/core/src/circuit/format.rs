//! Line-oriented netlist text format.
//!
//! ```text
//! # comment
//! NETLIST g=<garbler inputs> e=<evaluator inputs> o=<outputs>
//! G <id> <KIND> <in0> [<in1>] -> <out>
//! OUT <w0> <w1> ...
//! ```
//!
//! `#` starts a comment anywhere on a line. The canonical form written by
//! [`write_netlist`] has no comments, single spaces and a trailing newline.

use std::fmt::Write as _;

use super::{CircuitError, Gate, GateKind, Netlist, WireId};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("line {line}, column {column}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub column: usize,
    pub message: String,
}

pub fn write_netlist(n: &Netlist) -> String {
    let mut s = String::with_capacity(32 * (n.gates().len() + 2));
    let _ = writeln!(
        s,
        "NETLIST g={} e={} o={}",
        n.n_garbler_inputs(),
        n.n_evaluator_inputs(),
        n.n_outputs()
    );
    for g in n.gates() {
        let _ = write!(s, "G {} {} {}", g.id, g.kind, g.in0);
        if let Some(b) = g.in1 {
            let _ = write!(s, " {b}");
        }
        let _ = writeln!(s, " -> {}", g.out);
    }
    s.push_str("OUT");
    for w in n.output_wires() {
        let _ = write!(s, " {w}");
    }
    s.push('\n');
    s
}

struct Tokens<'a> {
    line: usize,
    items: Vec<(usize, &'a str)>,
    pos: usize,
}

impl<'a> Tokens<'a> {
    fn new(line: usize, text: &'a str) -> Tokens<'a> {
        let mut items = Vec::new();
        let mut start = None;
        for (i, c) in text.char_indices() {
            if c.is_whitespace() {
                if let Some(s) = start.take() {
                    items.push((s, &text[s..i]));
                }
            } else if start.is_none() {
                start = Some(i);
            }
        }
        if let Some(s) = start {
            items.push((s, &text[s..]));
        }
        Tokens {
            line,
            items,
            pos: 0,
        }
    }

    fn err(&self, column: usize, message: impl Into<String>) -> ParseError {
        ParseError {
            line: self.line,
            column: column + 1,
            message: message.into(),
        }
    }

    fn end_column(&self) -> usize {
        self.items.last().map_or(0, |(c, t)| c + t.len())
    }

    fn next(&mut self, what: &str) -> Result<(usize, &'a str), ParseError> {
        let t = self
            .items
            .get(self.pos)
            .copied()
            .ok_or_else(|| self.err(self.end_column(), format!("expected {what}")))?;
        self.pos += 1;
        Ok(t)
    }

    fn peek(&self) -> Option<&'a str> {
        self.items.get(self.pos).map(|(_, t)| *t)
    }

    fn number(&mut self, what: &str) -> Result<u32, ParseError> {
        let (c, t) = self.next(what)?;
        t.parse()
            .map_err(|_| self.err(c, format!("expected {what}, found `{t}`")))
    }

    fn keyed(&mut self, key: &str) -> Result<u32, ParseError> {
        let (c, t) = self.next(key)?;
        let v = t
            .strip_prefix(key)
            .and_then(|r| r.strip_prefix('='))
            .ok_or_else(|| self.err(c, format!("expected `{key}=<n>`, found `{t}`")))?;
        v.parse()
            .map_err(|_| self.err(c + key.len() + 1, format!("bad count `{v}`")))
    }

    fn expect(&mut self, lit: &str) -> Result<(), ParseError> {
        let (c, t) = self.next(lit)?;
        if t == lit {
            Ok(())
        } else {
            Err(self.err(c, format!("expected `{lit}`, found `{t}`")))
        }
    }

    fn finish(&self) -> Result<(), ParseError> {
        match self.items.get(self.pos) {
            None => Ok(()),
            Some((c, t)) => Err(self.err(*c, format!("unexpected token `{t}`"))),
        }
    }
}

/// Parses and validates a netlist file.
pub fn parse_netlist(text: &str) -> Result<Netlist, CircuitError> {
    let mut header: Option<(u32, u32, u32)> = None;
    let mut gates = Vec::new();
    let mut outputs: Option<Vec<WireId>> = None;
    let mut last_line = 0;

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        last_line = line;
        let content = raw.split('#').next().unwrap_or("");
        let mut t = Tokens::new(line, content);
        let Some(first) = t.peek() else { continue };
        if outputs.is_some() {
            return Err(t.err(0, "content after OUT line").into());
        }
        match first {
            "NETLIST" => {
                if header.is_some() {
                    return Err(t.err(0, "duplicate NETLIST header").into());
                }
                t.next("NETLIST")?;
                let g = t.keyed("g")?;
                let e = t.keyed("e")?;
                let o = t.keyed("o")?;
                t.finish()?;
                header = Some((g, e, o));
            }
            "G" => {
                if header.is_none() {
                    return Err(t.err(0, "gate before NETLIST header").into());
                }
                t.next("G")?;
                let id = t.number("gate id")?;
                let (kc, kt) = t.next("gate kind")?;
                let kind = GateKind::from_name(kt)
                    .ok_or_else(|| t.err(kc, format!("unknown gate kind `{kt}`")))?;
                let in0 = t.number("input wire")?;
                let in1 = if kind.is_unary() {
                    None
                } else {
                    Some(t.number("second input wire")?)
                };
                t.expect("->")?;
                let out = t.number("output wire")?;
                t.finish()?;
                gates.push(Gate {
                    id,
                    kind,
                    in0,
                    in1,
                    out,
                });
            }
            "OUT" => {
                let Some((_, _, o)) = header else {
                    return Err(t.err(0, "OUT before NETLIST header").into());
                };
                t.next("OUT")?;
                let mut ws = Vec::new();
                while t.peek().is_some() {
                    ws.push(t.number("output wire")?);
                }
                if ws.len() != o as usize {
                    return Err(t
                        .err(0, format!("header declares {o} outputs, OUT lists {}", ws.len()))
                        .into());
                }
                outputs = Some(ws);
            }
            other => {
                return Err(t.err(0, format!("unknown record `{other}`")).into());
            }
        }
    }

    let missing = |what: &str| ParseError {
        line: last_line.max(1),
        column: 1,
        message: format!("missing {what}"),
    };
    let (g, e, _) = header.ok_or_else(|| missing("NETLIST header"))?;
    let outputs = outputs.ok_or_else(|| missing("OUT line"))?;
    Netlist::checked(g, e, gates, outputs)
}

impl Netlist {
    pub fn to_text(&self) -> String {
        write_netlist(self)
    }

    pub fn from_text(text: &str) -> Result<Netlist, CircuitError> {
        parse_netlist(text)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<(), CircuitError> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Netlist, CircuitError> {
        parse_netlist(&std::fs::read_to_string(path)?)
    }
}
