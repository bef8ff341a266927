//! Parameter-less boolean predicates over the state space.
//!
//! Grammar:
//!
//! ```text
//! expr    := and ("||" and)*
//! and     := term ("&&" term)*
//! term    := "!" term | operand (cmp number)?
//! operand := label ("[" index "]")?
//! cmp     := "==" | "!=" | "<" | "<=" | ">" | ">="
//! ```
//!
//! An operand without an index applies to every element of the array. A bare
//! operand is true when its elements are nonzero.

use std::fmt;

use thiserror::Error;

use crate::state::{StateError, StateSpace};

#[derive(Debug, Clone, PartialEq, Error)]
#[error("predicate {expr:?} at column {col}: {message}")]
pub struct PredicateError {
    pub expr: String,
    pub col: usize,
    pub message: String,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Cmp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl Cmp {
    fn apply(self, a: f64, b: f64) -> bool {
        match self {
            Cmp::Eq => a == b,
            Cmp::Ne => a != b,
            Cmp::Lt => a < b,
            Cmp::Le => a <= b,
            Cmp::Gt => a > b,
            Cmp::Ge => a >= b,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Expr {
    Or(Vec<Expr>),
    And(Vec<Expr>),
    Not(Box<Expr>),
    Test {
        label: String,
        index: Option<usize>,
        cmp: Option<(Cmp, f64)>,
    },
}

impl Expr {
    fn labels(&self, out: &mut Vec<String>) {
        match self {
            Expr::Or(xs) | Expr::And(xs) => xs.iter().for_each(|x| x.labels(out)),
            Expr::Not(x) => x.labels(out),
            Expr::Test { label, .. } => {
                if !out.contains(label) {
                    out.push(label.clone());
                }
            }
        }
    }

    fn eval(&self, space: &StateSpace) -> Result<bool, StateError> {
        Ok(match self {
            Expr::Or(xs) => {
                for x in xs {
                    if x.eval(space)? {
                        return Ok(true);
                    }
                }
                false
            }
            Expr::And(xs) => {
                for x in xs {
                    if !x.eval(space)? {
                        return Ok(false);
                    }
                }
                true
            }
            Expr::Not(x) => !x.eval(space)?,
            Expr::Test { label, index, cmp } => {
                let values = space.read_f64(label)?;
                let picked: &[f64] = match index {
                    Some(i) => match values.get(*i) {
                        Some(v) => std::slice::from_ref(v),
                        None => {
                            return Err(StateError::GatherOutOfBounds {
                                index: *i,
                                source_len: values.len(),
                            })
                        }
                    },
                    None => &values,
                };
                match cmp {
                    Some((op, rhs)) => picked.iter().all(|&v| op.apply(v, *rhs)),
                    None => picked.iter().all(|&v| v != 0.0),
                }
            }
        })
    }
}

struct Parser<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Parser<'a> {
    fn error(&self, message: impl Into<String>) -> PredicateError {
        PredicateError {
            expr: self.src.to_string(),
            col: self.pos + 1,
            message: message.into(),
        }
    }

    fn rest(&self) -> &'a str {
        &self.src[self.pos..]
    }

    fn skip_ws(&mut self) {
        let trimmed = self.rest().trim_start();
        self.pos = self.src.len() - trimmed.len();
    }

    fn eat(&mut self, token: &str) -> bool {
        self.skip_ws();
        if self.rest().starts_with(token) {
            self.pos += token.len();
            true
        } else {
            false
        }
    }

    fn or(&mut self) -> Result<Expr, PredicateError> {
        let mut terms = vec![self.and()?];
        while self.eat("||") {
            terms.push(self.and()?);
        }
        Ok(if terms.len() == 1 {
            terms.pop().expect("one term")
        } else {
            Expr::Or(terms)
        })
    }

    fn and(&mut self) -> Result<Expr, PredicateError> {
        let mut terms = vec![self.term()?];
        while self.eat("&&") {
            terms.push(self.term()?);
        }
        Ok(if terms.len() == 1 {
            terms.pop().expect("one term")
        } else {
            Expr::And(terms)
        })
    }

    fn term(&mut self) -> Result<Expr, PredicateError> {
        self.skip_ws();
        if self.rest().starts_with('!') && !self.rest().starts_with("!=") {
            self.pos += 1;
            return Ok(Expr::Not(Box::new(self.term()?)));
        }
        let label = self.ident()?;
        let index = if self.eat("[") {
            self.skip_ws();
            let digits: String = self.rest().chars().take_while(char::is_ascii_digit).collect();
            let i = digits.parse().map_err(|_| self.error("expected an index"))?;
            self.pos += digits.len();
            if !self.eat("]") {
                return Err(self.error("expected ']'"));
            }
            Some(i)
        } else {
            None
        };
        let ops = [
            ("==", Cmp::Eq),
            ("!=", Cmp::Ne),
            ("<=", Cmp::Le),
            (">=", Cmp::Ge),
            ("<", Cmp::Lt),
            (">", Cmp::Gt),
        ];
        let mut cmp = None;
        for (tok, op) in ops {
            if self.eat(tok) {
                cmp = Some((op, self.number()?));
                break;
            }
        }
        Ok(Expr::Test { label, index, cmp })
    }

    fn ident(&mut self) -> Result<String, PredicateError> {
        self.skip_ws();
        let rest = self.rest();
        let len = rest
            .char_indices()
            .find(|&(i, c)| !(c == '_' || c.is_ascii_alphabetic() || (i > 0 && (c.is_ascii_digit() || c == '.'))))
            .map_or(rest.len(), |(i, _)| i);
        if len == 0 {
            return Err(self.error("expected a label"));
        }
        self.pos += len;
        Ok(rest[..len].to_string())
    }

    fn number(&mut self) -> Result<f64, PredicateError> {
        self.skip_ws();
        let rest = self.rest();
        let len = rest
            .find(|c: char| !(c.is_ascii_digit() || matches!(c, '.' | '-' | '+' | 'e' | 'E')))
            .unwrap_or(rest.len());
        let v = rest[..len]
            .parse()
            .map_err(|_| self.error("expected a number"))?;
        self.pos += len;
        Ok(v)
    }
}

type PredFn = Box<dyn FnMut(&StateSpace) -> Result<bool, StateError> + Send>;

/// A boolean over the state space used as a loop's termination condition.
pub struct Predicate {
    expr: String,
    reads: Vec<String>,
    eval: PredFn,
}

impl fmt::Debug for Predicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Predicate")
            .field("expr", &self.expr)
            .field("reads", &self.reads)
            .finish()
    }
}

impl Predicate {
    pub fn parse(expr: &str) -> Result<Self, PredicateError> {
        let mut p = Parser { src: expr, pos: 0 };
        let ast = p.or()?;
        p.skip_ws();
        if p.pos != expr.len() {
            return Err(p.error("unexpected trailing input"));
        }
        let mut reads = Vec::new();
        ast.labels(&mut reads);
        Ok(Predicate {
            expr: expr.to_string(),
            reads,
            eval: Box::new(move |s| ast.eval(s)),
        })
    }

    /// Wraps an arbitrary function; `name` is used in traces and errors.
    pub fn from_fn(
        name: &str,
        reads: Vec<String>,
        f: impl FnMut(&StateSpace) -> bool + Send + 'static,
    ) -> Self {
        let mut f = f;
        Predicate {
            expr: name.to_string(),
            reads,
            eval: Box::new(move |s| Ok(f(s))),
        }
    }

    /// True on the `k`-th evaluation and never before.
    pub fn after_calls(k: usize) -> Self {
        let mut n = 0;
        Self::from_fn(&format!("calls>={k}"), Vec::new(), move |_| {
            n += 1;
            n >= k
        })
    }

    pub fn expr(&self) -> &str {
        &self.expr
    }

    pub fn reads(&self) -> &[String] {
        &self.reads
    }

    pub fn eval(&mut self, space: &StateSpace) -> Result<bool, StateError> {
        (self.eval)(space)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::state::DType;

    fn space() -> StateSpace {
        let s = StateSpace::in_process();
        s.register_zeros("s_c", DType::I64, &[1]).unwrap();
        s.register_zeros("v", DType::F64, &[3]).unwrap();
        s.register_zeros("done_flag", DType::Bool, &[1]).unwrap();
        s
    }

    #[test]
    fn comparisons() {
        let s = space();
        let mut p = Predicate::parse("s_c == 5").unwrap();
        assert_eq!(p.reads(), &["s_c".to_string()]);
        assert!(!p.eval(&s).unwrap());
        s.write("s_c", &[5i64]).unwrap();
        assert!(p.eval(&s).unwrap());
        assert!(Predicate::parse("s_c>=5&&s_c<6").unwrap().eval(&s).unwrap());
        assert!(!Predicate::parse("s_c != 5").unwrap().eval(&s).unwrap());
    }

    #[test]
    fn indexing_and_truthiness() {
        let s = space();
        s.write("v", &[0.0, 2.5, -1.0]).unwrap();
        assert!(Predicate::parse("v[1] > 2").unwrap().eval(&s).unwrap());
        assert!(!Predicate::parse("v > -2 && v[0] != 0").unwrap().eval(&s).unwrap());
        assert!(Predicate::parse("v > -2").unwrap().eval(&s).unwrap());
        let mut flag = Predicate::parse("done_flag").unwrap();
        assert!(!flag.eval(&s).unwrap());
        assert!(Predicate::parse("!done_flag || v[9] > 0").unwrap().eval(&s).unwrap());
        s.write("done_flag", &[true]).unwrap();
        assert!(flag.eval(&s).unwrap());
        assert!(Predicate::parse("v[9] > 0").unwrap().eval(&s).is_err());
    }

    #[test]
    fn parse_errors_have_columns() {
        let e = Predicate::parse("s_c == ").unwrap_err();
        assert_eq!(e.col, 8);
        let e = Predicate::parse("s_c == 1 )").unwrap_err();
        assert_eq!(e.col, 10);
        assert!(Predicate::parse("").is_err());
        assert!(Predicate::parse("v[x]").is_err());
    }
}
