//! IF/ELSE program emission, a reference interpreter for the emitted text,
//! and per-node interpretation reports.
//!
//! Emitted programs read raw features: the scaler is folded into the
//! coefficients with [`ObliqueTree::raw_hyperplane`]. Numbers are printed in
//! shortest round-trip form, so parsing them back yields the same doubles,
//! and terms appear in the order [`crate::tree::linear_value`] adds them.
//! Together this makes the interpreter agree with [`ObliqueTree::predict`]
//! bit for bit, boundary cases included.

use std::io::Write;

use crate::dataset::RadioClass;
use crate::error::{Error, Result};
use crate::tree::{Node, NodeId, ObliqueTree, MODEL_FORMAT_VERSION};
use crate::FEATURE_NAMES;

const INDENT: &str = "    ";

fn label_token(l: RadioClass) -> &'static str {
    match l {
        RadioClass::Zigbee => "ZIGBEE",
        RadioClass::Lora => "LORA",
    }
}

fn feature_name(j: usize) -> String {
    FEATURE_NAMES.get(j).map(|s| s.to_string()).unwrap_or_else(|| format!("x{j}"))
}

/// `a1*hn + a2*rssi - a3*prr + b` with zero terms left out.
fn condition(a: &[f64], b: f64) -> String {
    let mut s = String::new();
    for (j, c) in a.iter().enumerate() {
        if *c == 0.0 {
            continue;
        }
        if s.is_empty() {
            s.push_str(&format!("{c}*{}", feature_name(j)));
        } else if c.is_sign_negative() {
            s.push_str(&format!(" - {}*{}", -c, feature_name(j)));
        } else {
            s.push_str(&format!(" + {c}*{}", feature_name(j)));
        }
    }
    if s.is_empty() {
        s.push_str(&b.to_string());
    } else if b.is_sign_negative() {
        s.push_str(&format!(" - {}", -b));
    } else {
        s.push_str(&format!(" + {b}"));
    }
    s
}

fn emit(tree: &ObliqueTree, id: NodeId, depth: usize, out: &mut String) {
    let pad = INDENT.repeat(depth);
    match tree.node(id) {
        Node::Leaf(l) => out.push_str(&format!("{pad}return {};\n", label_token(*l))),
        Node::Decision(d) => {
            let (a, b) = tree.raw_hyperplane(d);
            out.push_str(&format!("{pad}if ({} < 0) {{\n", condition(&a, b)));
            emit(tree, d.left, depth + 1, out);
            out.push_str(&format!("{pad}}} else {{\n"));
            emit(tree, d.right, depth + 1, out);
            out.push_str(&format!("{pad}}}\n"));
        }
    }
}

/// Emits the nested IF/ELSE program of `tree`.
pub fn codegen(tree: &ObliqueTree) -> String {
    let dim = tree.dim().unwrap_or(FEATURE_NAMES.len());
    let inputs: Vec<String> = (0..dim).map(feature_name).collect();
    let mut out = format!(
        "// radio selector\n// model_hash: {}\n// format_version: {}\n// inputs (raw): {}\n",
        tree.hash(),
        MODEL_FORMAT_VERSION,
        inputs.join(", ")
    );
    emit(tree, tree.root(), 0, &mut out);
    out
}

#[derive(Debug, Clone, PartialEq)]
enum Stmt {
    Return(RadioClass),
    If {
        /// `(coefficient, feature index)`; `None` marks the constant.
        terms: Vec<(f64, Option<usize>)>,
        then: Box<Stmt>,
        otherwise: Box<Stmt>,
    },
}

/// A parsed decision program.
#[derive(Debug, Clone, PartialEq)]
pub struct Program {
    body: Stmt,
    dim: usize,
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Num(f64),
    Sym(char),
}

fn tokenize(text: &str) -> Result<Vec<(Tok, usize)>> {
    let mut toks = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line_no = ln + 1;
        let code = line.split("//").next().unwrap_or("");
        let chars: Vec<char> = code.chars().collect();
        let mut i = 0;
        while i < chars.len() {
            let c = chars[i];
            if c.is_whitespace() {
                i += 1;
            } else if c.is_ascii_alphabetic() || c == '_' {
                let st = i;
                while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                    i += 1;
                }
                toks.push((Tok::Ident(chars[st..i].iter().collect()), line_no));
            } else if c.is_ascii_digit() || c == '.' {
                let st = i;
                while i < chars.len() {
                    if chars[i].is_ascii_digit() || chars[i] == '.' {
                        i += 1;
                    } else if matches!(chars[i], 'e' | 'E') {
                        i += 1;
                        if i < chars.len() && matches!(chars[i], '+' | '-') {
                            i += 1;
                        }
                    } else {
                        break;
                    }
                }
                let s: String = chars[st..i].iter().collect();
                let v: f64 = s.parse().map_err(|_| Error::Format(format!("line {line_no}: bad number {s:?}")))?;
                toks.push((Tok::Num(v), line_no));
            } else if "(){};<+-*".contains(c) {
                toks.push((Tok::Sym(c), line_no));
                i += 1;
            } else {
                return Err(Error::Format(format!("line {line_no}: unexpected character {c:?}")));
            }
        }
    }
    Ok(toks)
}

struct Parser {
    toks: Vec<(Tok, usize)>,
    pos: usize,
    dim: usize,
}

impl Parser {
    fn err<T>(&self, msg: &str) -> Result<T> {
        let line = self.toks.get(self.pos).or(self.toks.last()).map(|t| t.1).unwrap_or(0);
        Err(Error::Format(format!("line {line}: {msg}")))
    }

    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|t| &t.0)
    }

    fn next(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).map(|t| t.0.clone());
        self.pos += 1;
        t
    }

    fn expect_sym(&mut self, c: char) -> Result<()> {
        match self.next() {
            Some(Tok::Sym(s)) if s == c => Ok(()),
            _ => {
                self.pos -= 1;
                self.err(&format!("expected '{c}'"))
            }
        }
    }

    fn expect_ident(&mut self, name: &str) -> Result<()> {
        match self.next() {
            Some(Tok::Ident(s)) if s == name => Ok(()),
            _ => {
                self.pos -= 1;
                self.err(&format!("expected '{name}'"))
            }
        }
    }

    fn stmt(&mut self) -> Result<Stmt> {
        match self.next() {
            Some(Tok::Ident(k)) if k == "return" => {
                let label = match self.next() {
                    Some(Tok::Ident(l)) if l == "ZIGBEE" => RadioClass::Zigbee,
                    Some(Tok::Ident(l)) if l == "LORA" => RadioClass::Lora,
                    _ => {
                        self.pos -= 1;
                        return self.err("expected ZIGBEE or LORA");
                    }
                };
                self.expect_sym(';')?;
                Ok(Stmt::Return(label))
            }
            Some(Tok::Ident(k)) if k == "if" => {
                self.expect_sym('(')?;
                let terms = self.expr()?;
                self.expect_sym('<')?;
                match self.next() {
                    Some(Tok::Num(0.0)) => {}
                    _ => {
                        self.pos -= 1;
                        return self.err("expected '0'");
                    }
                }
                self.expect_sym(')')?;
                self.expect_sym('{')?;
                let then = self.stmt()?;
                self.expect_sym('}')?;
                self.expect_ident("else")?;
                self.expect_sym('{')?;
                let otherwise = self.stmt()?;
                self.expect_sym('}')?;
                Ok(Stmt::If {
                    terms,
                    then: Box::new(then),
                    otherwise: Box::new(otherwise),
                })
            }
            _ => {
                self.pos -= 1;
                self.err("expected 'if' or 'return'")
            }
        }
    }

    fn expr(&mut self) -> Result<Vec<(f64, Option<usize>)>> {
        let mut terms = Vec::new();
        let mut sign = 1.0;
        if self.peek() == Some(&Tok::Sym('-')) {
            self.pos += 1;
            sign = -1.0;
        }
        loop {
            let coef = match self.next() {
                Some(Tok::Num(v)) => sign * v,
                _ => {
                    self.pos -= 1;
                    return self.err("expected a number");
                }
            };
            let feature = if self.peek() == Some(&Tok::Sym('*')) {
                self.pos += 1;
                match self.next() {
                    Some(Tok::Ident(name)) => match FEATURE_NAMES.iter().position(|f| *f == name) {
                        Some(j) => Some(j),
                        None => match name.strip_prefix('x').and_then(|s| s.parse::<usize>().ok()) {
                            Some(j) => Some(j),
                            None => {
                                self.pos -= 1;
                                return self.err(&format!("unknown feature {name:?}"));
                            }
                        },
                    },
                    _ => {
                        self.pos -= 1;
                        return self.err("expected a feature name");
                    }
                }
            } else {
                None
            };
            if let Some(j) = feature {
                self.dim = self.dim.max(j + 1);
            }
            terms.push((coef, feature));
            match self.peek() {
                Some(Tok::Sym('+')) => sign = 1.0,
                Some(Tok::Sym('-')) => sign = -1.0,
                _ => break,
            }
            self.pos += 1;
        }
        match terms.iter().filter(|t| t.1.is_none()).count() {
            0 => Ok(terms),
            1 if terms.last().is_some_and(|t| t.1.is_none()) => Ok(terms),
            _ => self.err("the constant must be the single last term"),
        }
    }
}

impl Program {
    pub fn parse(text: &str) -> Result<Program> {
        let mut p = Parser {
            toks: tokenize(text)?,
            pos: 0,
            dim: 0,
        };
        let body = p.stmt()?;
        if p.pos != p.toks.len() {
            return p.err("trailing input after program");
        }
        Ok(Program { body, dim: p.dim })
    }

    /// Number of features the program reads.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Runs the program on raw features, adding terms left to right.
    pub fn eval(&self, x: &[f64]) -> Result<RadioClass> {
        if x.len() < self.dim {
            return Err(Error::Dimension {
                expected: self.dim,
                got: x.len(),
            });
        }
        let mut s = &self.body;
        loop {
            match s {
                Stmt::Return(l) => return Ok(*l),
                Stmt::If { terms, then, otherwise } => {
                    let mut acc: Option<f64> = None;
                    for (c, f) in terms {
                        let t = match f {
                            Some(j) => c * x[*j],
                            None => *c,
                        };
                        acc = Some(match acc {
                            Some(a) => a + t,
                            None => t,
                        });
                    }
                    s = if acc.unwrap_or(0.0) < 0.0 { then } else { otherwise };
                }
            }
        }
    }
}

/// Parses and runs an emitted program on one input.
pub fn interpret(program: &str, x: &[f64]) -> Result<RadioClass> {
    Program::parse(program)?.eval(x)
}

/// Interpretation of one decision node, with model-space weights.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeReport {
    pub node: NodeId,
    pub w: Vec<f64>,
    pub w0: f64,
    pub nonzero: usize,
    /// Features with `|w_j| >= 0.5 max |w|`, largest first.
    pub dominant: Vec<String>,
}

pub fn report(tree: &ObliqueTree) -> Vec<NodeReport> {
    tree.decision_ids()
        .map(|id| {
            let d = tree.node(id).as_decision().expect("decision id");
            let max = d.w.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let mut dom: Vec<usize> = (0..d.w.len()).filter(|&j| max > 0.0 && d.w[j].abs() >= 0.5 * max).collect();
            dom.sort_by(|&a, &b| d.w[b].abs().total_cmp(&d.w[a].abs()).then(a.cmp(&b)));
            NodeReport {
                node: id,
                w: d.w.clone(),
                w0: d.w0,
                nonzero: d.w.iter().filter(|v| **v != 0.0).count(),
                dominant: dom.into_iter().map(feature_name).collect(),
            }
        })
        .collect()
}

pub fn write_report_csv<W: Write>(rows: &[NodeReport], w: W) -> Result<()> {
    let dim = rows.first().map(|r| r.w.len()).unwrap_or(FEATURE_NAMES.len());
    let mut wtr = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w);
    let mut header = vec!["node".to_string()];
    header.extend((0..dim).map(feature_name));
    header.extend(["constant", "nonzero", "dominant"].map(String::from));
    wtr.write_record(&header).map_err(|e| Error::Format(e.to_string()))?;
    for r in rows {
        let mut rec = vec![r.node.to_string()];
        rec.extend(r.w.iter().map(|v| v.to_string()));
        rec.extend([r.w0.to_string(), r.nonzero.to_string(), r.dominant.join(";")]);
        wtr.write_record(&rec).map_err(|e| Error::Format(e.to_string()))?;
    }
    wtr.flush().map_err(|e| Error::Format(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cart_init::random_complete;
    use crate::dataset::Scaler;
    use crate::tree::DecisionNode;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn body(program: &str) -> String {
        program.lines().filter(|l| !l.starts_with("//")).collect::<Vec<_>>().join("\n")
    }

    #[test]
    fn single_leaf() {
        let t = ObliqueTree::leaf(RadioClass::Lora);
        let p = codegen(&t);
        assert_eq!(body(&p), "return LORA;");
        assert_eq!(interpret(&p, &[1.0, 2.0, 3.0, 4.0]).unwrap(), RadioClass::Lora);
        assert!(p.contains(&t.hash()));
    }

    #[test]
    fn sparse_node_row() {
        let t = ObliqueTree::new(
            vec![
                Node::Decision(DecisionNode {
                    w: vec![1.415681867042, 0.0, 0.0, 0.0],
                    w0: 0.143560158843,
                    left: 1,
                    right: 2,
                }),
                Node::Leaf(RadioClass::Zigbee),
                Node::Leaf(RadioClass::Lora),
            ],
            0,
            0.0,
            None,
        )
        .unwrap();
        let p = codegen(&t);
        assert!(p.contains("if (1.415681867042*hn + 0.143560158843 < 0) {"), "{p}");
        assert!(!p.contains("rssi") || p.lines().filter(|l| !l.starts_with("//")).all(|l| !l.contains("rssi")));
    }

    #[test]
    fn negative_terms_and_boundary() {
        let t = ObliqueTree::new(
            vec![
                Node::Decision(DecisionNode {
                    w: vec![-1.0, 0.0, 2.0, 0.0],
                    w0: -0.5,
                    left: 1,
                    right: 2,
                }),
                Node::Leaf(RadioClass::Zigbee),
                Node::Leaf(RadioClass::Lora),
            ],
            0,
            0.0,
            None,
        )
        .unwrap();
        let p = codegen(&t);
        assert!(p.contains("if (-1*hn + 2*prr - 0.5 < 0)"), "{p}");
        // Exactly on the hyperplane goes to the else branch.
        assert_eq!(interpret(&p, &[0.5, 0.0, 0.5, 0.0]).unwrap(), RadioClass::Lora);
        assert_eq!(t.predict(&[0.5, 0.0, 0.5, 0.0]).unwrap(), RadioClass::Lora);
    }

    #[test]
    fn interpreter_matches_scaled_random_trees() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for seed in 0..5 {
            let mut t = random_complete(4, 3, seed).unwrap();
            t.set_scaler(Some(Scaler {
                mean: vec![2.0, -110.0, 0.8, 1.3],
                std: vec![1.3, 6.0, 0.1, 0.4],
            }))
            .unwrap();
            let prog = Program::parse(&codegen(&t)).unwrap();
            for _ in 0..2000 {
                let x = [
                    rng.random_range(1.0..6.0),
                    rng.random_range(-130.0..-95.0),
                    rng.random_range(0.0..1.0),
                    rng.random_range(1.0..4.0),
                ];
                assert_eq!(prog.eval(&x).unwrap(), t.predict(&x).unwrap());
            }
        }
    }

    #[test]
    fn parse_errors_carry_lines() {
        let e = Program::parse("// c\nif (1*hn + 2 < 0) {\n return ZIGBEE;\n} else {\n return MAYBE;\n}\n").unwrap_err();
        assert!(e.to_string().contains("line 5"), "{e}");
        assert!(Program::parse("return LORA; return LORA;").is_err());
        assert!(Program::parse("if (1*hn + 2 + 3 < 0) { return LORA; } else { return LORA; }").is_err());
    }

    #[test]
    fn dominant_features() {
        let t = ObliqueTree::new(
            vec![
                Node::Decision(DecisionNode {
                    w: vec![0.9587, 1.0253, -0.0748, 0.0775],
                    w0: 0.1,
                    left: 1,
                    right: 2,
                }),
                Node::Decision(DecisionNode {
                    w: vec![0.0, 0.0, 0.0, 2.0],
                    w0: 0.1,
                    left: 3,
                    right: 4,
                }),
                Node::Leaf(RadioClass::Lora),
                Node::Leaf(RadioClass::Zigbee),
                Node::Leaf(RadioClass::Lora),
            ],
            0,
            0.0,
            None,
        )
        .unwrap();
        let r = report(&t);
        assert_eq!(r.len(), t.num_decisions());
        assert_eq!(r[0].dominant, vec!["rssi", "hn"]);
        assert_eq!(r[0].nonzero, 4);
        assert_eq!(r[1].dominant, vec!["rnp"]);
        assert_eq!(r[1].nonzero, 1);
        let mut out = Vec::new();
        write_report_csv(&r, &mut out).unwrap();
        let s = String::from_utf8(out).unwrap();
        assert_eq!(s.lines().next().unwrap(), "node,hn,rssi,prr,rnp,constant,nonzero,dominant");
        assert_eq!(s.lines().count(), 3);
    }
}
