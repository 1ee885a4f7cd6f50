//! Linear-predictor formulas and design matrices.
//!
//! Grammar (whitespace is insignificant):
//!
//! ```text
//! spec    := sum | "(" vars ")" "^2"
//! sum     := product ("+" product)*
//! product := factor ("*" factor)*
//! factor  := name | "1"
//! vars    := name ("+" name)*
//! ```
//!
//! Every formula has an intercept. `(x1 + ... + xk)^2` expands to main
//! effects plus all pairwise products. Interaction factors are ordered by
//! first appearance in the source text.

use std::collections::HashMap;
use std::fmt;

use thiserror::Error;

use crate::data::{ColumnRole, LongitudinalDataset};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FormulaError {
    #[error("empty formula")]
    Empty,
    #[error("syntax error at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unknown operator {operator:?} at byte {offset}")]
    UnknownOperator { operator: char, offset: usize },
    #[error("empty parenthesis at byte {offset}")]
    EmptyParenthesis { offset: usize },
    #[error("variable {0:?} is not bound to a dataset column")]
    Unbound(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Term {
    Intercept,
    Main(String),
    Interaction(Vec<String>),
}

impl Term {
    fn factors(&self) -> Vec<&str> {
        match self {
            Term::Intercept => Vec::new(),
            Term::Main(v) => vec![v.as_str()],
            Term::Interaction(vs) => vs.iter().map(String::as_str).collect(),
        }
    }

    pub fn label(&self) -> String {
        match self {
            Term::Intercept => "1".into(),
            Term::Main(v) => v.clone(),
            Term::Interaction(vs) => vs.join("*"),
        }
    }
}

/// Parsed term list. Equality ignores the source text.
#[derive(Debug, Clone)]
pub struct Formula {
    terms: Vec<Term>,
    source: String,
}

impl PartialEq for Formula {
    fn eq(&self, other: &Self) -> bool {
        self.terms == other.terms
    }
}

impl Formula {
    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn n_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn labels(&self) -> Vec<String> {
        self.terms.iter().map(Term::label).collect()
    }

    /// Distinct variables in first-appearance order.
    pub fn variables(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for t in &self.terms {
            for f in t.factors() {
                if !out.contains(&f) {
                    out.push(f);
                }
            }
        }
        out
    }

    /// Intercept only.
    pub fn intercept_only() -> Self {
        Self { terms: vec![Term::Intercept], source: "1".into() }
    }

    /// All interactions of every order over `vars`: one parameter per cell of
    /// the cross-classification of binary variables.
    pub fn saturated(vars: &[&str]) -> Self {
        let k = vars.len();
        let mut subsets: Vec<u32> = (1..(1u32 << k)).collect();
        subsets.sort_by_key(|s| (s.count_ones(), std::cmp::Reverse(s.reverse_bits())));
        let mut terms = vec![Term::Intercept];
        for s in subsets {
            let fs: Vec<String> = (0..k)
                .filter(|&i| s >> i & 1 == 1)
                .map(|i| vars[i].to_string())
                .collect();
            terms.push(if fs.len() == 1 {
                Term::Main(fs.into_iter().next().unwrap())
            } else {
                Term::Interaction(fs)
            });
        }
        let mut f = Self { terms, source: String::new() };
        f.source = f.to_string();
        f
    }

    /// Bind variables to dataset columns.
    pub fn bind(&self, bindings: &ColumnBindings) -> Result<BoundFormula, FormulaError> {
        let mut terms = Vec::with_capacity(self.terms.len());
        for t in &self.terms {
            let cols = t
                .factors()
                .into_iter()
                .map(|f| bindings.get(f).ok_or_else(|| FormulaError::Unbound(f.to_string())))
                .collect::<Result<Vec<_>, _>>()?;
            terms.push(cols);
        }
        Ok(BoundFormula { terms, labels: self.labels() })
    }
}

impl fmt::Display for Formula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let body: Vec<String> = self
            .terms
            .iter()
            .filter(|t| **t != Term::Intercept)
            .map(Term::label)
            .collect();
        if body.is_empty() {
            write!(f, "1")
        } else {
            write!(f, "{}", body.join(" + "))
        }
    }
}

impl std::str::FromStr for Formula {
    type Err = FormulaError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_formula(s)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Name(String),
    Num(String),
    Plus,
    Star,
    Caret,
    LParen,
    RParen,
}

fn tokenize(text: &str) -> Result<Vec<(Tok, usize)>, FormulaError> {
    let mut out = Vec::new();
    let bytes = text.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        let c = text[i..].chars().next().unwrap();
        match c {
            c if c.is_whitespace() => i += c.len_utf8(),
            '+' => {
                out.push((Tok::Plus, i));
                i += 1;
            }
            '*' => {
                out.push((Tok::Star, i));
                i += 1;
            }
            '^' => {
                out.push((Tok::Caret, i));
                i += 1;
            }
            '(' => {
                out.push((Tok::LParen, i));
                i += 1;
            }
            ')' => {
                out.push((Tok::RParen, i));
                i += 1;
            }
            c if c.is_ascii_digit() => {
                let start = i;
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
                out.push((Tok::Num(text[start..i].to_string()), start));
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let start = i;
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                out.push((Tok::Name(text[start..i].to_string()), start));
            }
            other => return Err(FormulaError::UnknownOperator { operator: other, offset: i }),
        }
    }
    Ok(out)
}

struct Parser {
    toks: Vec<(Tok, usize)>,
    pos: usize,
    end: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(t, _)| t)
    }

    fn offset(&self) -> usize {
        self.toks.get(self.pos).map(|(_, o)| *o).unwrap_or(self.end)
    }

    fn syntax<T>(&self, message: impl Into<String>) -> Result<T, FormulaError> {
        Err(FormulaError::Syntax { offset: self.offset(), message: message.into() })
    }

    fn bump(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).map(|(t, _)| t.clone());
        self.pos += 1;
        t
    }

    /// `None` stands for the explicit intercept `1`.
    fn factor(&mut self) -> Result<Option<String>, FormulaError> {
        match self.peek() {
            Some(Tok::Name(_)) => match self.bump() {
                Some(Tok::Name(n)) => Ok(Some(n)),
                _ => unreachable!(),
            },
            Some(Tok::Num(n)) if n == "1" => {
                self.pos += 1;
                Ok(None)
            }
            Some(Tok::Num(n)) => {
                let n = n.clone();
                self.syntax(format!("unexpected number {n}; only 1 may appear as a term"))
            }
            Some(_) => self.syntax("expected a variable name"),
            None => self.syntax("unexpected end of formula"),
        }
    }

    fn product(&mut self) -> Result<Vec<Option<String>>, FormulaError> {
        let mut fs = vec![self.factor()?];
        while self.peek() == Some(&Tok::Star) {
            self.pos += 1;
            fs.push(self.factor()?);
        }
        Ok(fs)
    }

    fn squared(&mut self) -> Result<Vec<String>, FormulaError> {
        let open = self.offset();
        self.pos += 1;
        if self.peek() == Some(&Tok::RParen) {
            return Err(FormulaError::EmptyParenthesis { offset: open });
        }
        let mut vars = Vec::new();
        loop {
            match self.bump() {
                Some(Tok::Name(n)) => {
                    if !vars.contains(&n) {
                        vars.push(n);
                    }
                }
                _ => {
                    self.pos -= 1;
                    return self.syntax("expected a variable name inside parentheses");
                }
            }
            match self.peek() {
                Some(Tok::Plus) => self.pos += 1,
                Some(Tok::RParen) => {
                    self.pos += 1;
                    break;
                }
                Some(Tok::Star) => return self.syntax("products are not allowed inside (...)^2"),
                Some(_) => return self.syntax("expected + or )"),
                None => return self.syntax("unclosed parenthesis"),
            }
        }
        if self.peek() != Some(&Tok::Caret) {
            return self.syntax("expected ^2 after parenthesised sum");
        }
        self.pos += 1;
        match self.bump() {
            Some(Tok::Num(n)) if n == "2" => {}
            _ => {
                self.pos -= 1;
                return self.syntax("only ^2 is supported");
            }
        }
        if self.peek().is_some() {
            return self.syntax("unexpected input after ^2");
        }
        Ok(vars)
    }
}

/// Parse a formula string.
pub fn parse_formula(text: &str) -> Result<Formula, FormulaError> {
    if text.trim().is_empty() {
        return Err(FormulaError::Empty);
    }
    let toks = tokenize(text)?;
    let mut p = Parser { toks, pos: 0, end: text.len() };

    let mut order: Vec<String> = Vec::new();
    for (t, _) in &p.toks {
        if let Tok::Name(n) = t {
            if !order.contains(n) {
                order.push(n.clone());
            }
        }
    }
    let rank = |v: &String| order.iter().position(|o| o == v).unwrap();

    let mut terms = vec![Term::Intercept];
    let push = |terms: &mut Vec<Term>, t: Term| {
        if !terms.contains(&t) {
            terms.push(t);
        }
    };

    if p.peek() == Some(&Tok::LParen) {
        let vars = p.squared()?;
        for v in &vars {
            push(&mut terms, Term::Main(v.clone()));
        }
        for i in 0..vars.len() {
            for j in (i + 1)..vars.len() {
                push(&mut terms, Term::Interaction(vec![vars[i].clone(), vars[j].clone()]));
            }
        }
    } else {
        loop {
            let start = p.offset();
            let fs = p.product()?;
            let mut names: Vec<String> = fs.into_iter().flatten().collect();
            names.sort_by_key(|n| rank(n));
            if names.windows(2).any(|w| w[0] == w[1]) {
                return Err(FormulaError::Syntax {
                    offset: start,
                    message: "a variable appears twice in one product".into(),
                });
            }
            match names.len() {
                0 => {}
                1 => push(&mut terms, Term::Main(names.pop().unwrap())),
                _ => push(&mut terms, Term::Interaction(names)),
            }
            match p.peek() {
                None => break,
                Some(Tok::Plus) => p.pos += 1,
                Some(Tok::LParen) => return p.syntax("parentheses must enclose the whole formula"),
                Some(Tok::Caret) => return p.syntax("^ must follow a parenthesised sum"),
                Some(_) => return p.syntax("expected + or *"),
            }
        }
    }
    Ok(Formula { terms, source: text.to_string() })
}

/// Name → dataset column map, including `L<j>` aliases for `L0_<j>`.
#[derive(Debug, Clone, Default)]
pub struct ColumnBindings {
    map: HashMap<String, usize>,
}

impl ColumnBindings {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn for_dataset(data: &LongitudinalDataset) -> Self {
        let mut b = Self::new();
        for (idx, (name, role)) in data.names().iter().zip(data.roles()).enumerate() {
            b.insert(name, idx);
            match role {
                ColumnRole::Baseline(j) => b.insert(&format!("L{j}"), idx),
                ColumnRole::Mediator(t, 0) => b.insert(&format!("M{t}_1"), idx),
                _ => {}
            }
        }
        b
    }

    pub fn insert(&mut self, name: &str, column: usize) {
        self.map.insert(name.to_string(), column);
    }

    pub fn get(&self, name: &str) -> Option<usize> {
        self.map.get(name).copied()
    }
}

/// Formula with variables resolved to column indices.
#[derive(Debug, Clone)]
pub struct BoundFormula {
    terms: Vec<Vec<usize>>,
    labels: Vec<String>,
}

impl BoundFormula {
    pub fn n_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn uses_column(&self, col: usize) -> bool {
        self.terms.iter().any(|t| t.contains(&col))
    }

    /// Design matrix on `data` with `overrides` substituting constant values
    /// for selected columns (used to evaluate at a treatment regime).
    pub fn design(&self, data: &LongitudinalDataset, overrides: &[(usize, f64)]) -> DesignMatrix {
        let n = data.n_rows();
        let mut values = Vec::with_capacity(n * self.terms.len());
        for cols in &self.terms {
            let start = values.len();
            values.resize(start + n, 1.0);
            let out = &mut values[start..];
            for &c in cols {
                match overrides.iter().find(|(o, _)| *o == c) {
                    Some(&(_, v)) => out.iter_mut().for_each(|x| *x *= v),
                    None => {
                        for (x, &d) in out.iter_mut().zip(data.column(c)) {
                            *x *= d;
                        }
                    }
                }
            }
        }
        DesignMatrix { n_rows: n, n_cols: self.terms.len(), values, labels: self.labels.clone() }
    }
}

/// Column-major `n_rows x n_cols` matrix with term labels.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    n_rows: usize,
    n_cols: usize,
    values: Vec<f64>,
    labels: Vec<String>,
}

impl DesignMatrix {
    /// From row-major data.
    pub fn from_rows(rows: &[Vec<f64>], labels: Vec<String>) -> Self {
        let n_rows = rows.len();
        let n_cols = labels.len();
        let mut values = vec![0.0; n_rows * n_cols];
        for (i, r) in rows.iter().enumerate() {
            assert_eq!(r.len(), n_cols, "row {i} has wrong length");
            for (j, &v) in r.iter().enumerate() {
                values[j * n_rows + i] = v;
            }
        }
        Self { n_rows, n_cols, values, labels }
    }

    pub fn from_columns(columns: Vec<Vec<f64>>, labels: Vec<String>) -> Self {
        let n_cols = columns.len();
        assert_eq!(n_cols, labels.len());
        let n_rows = columns.first().map_or(0, Vec::len);
        let mut values = Vec::with_capacity(n_rows * n_cols);
        for c in columns {
            assert_eq!(c.len(), n_rows);
            values.extend(c);
        }
        Self { n_rows, n_cols, values, labels }
    }

    pub fn intercept(n_rows: usize) -> Self {
        Self { n_rows, n_cols: 1, values: vec![1.0; n_rows], labels: vec!["1".into()] }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn column(&self, j: usize) -> &[f64] {
        &self.values[j * self.n_rows..(j + 1) * self.n_rows]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[j * self.n_rows + i]
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        (0..self.n_cols).map(|j| self.get(i, j)).collect()
    }

    /// `X beta`.
    pub fn mul_vec(&self, beta: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_rows];
        for (j, &b) in beta.iter().enumerate() {
            if b == 0.0 {
                continue;
            }
            for (o, &x) in out.iter_mut().zip(self.column(j)) {
                *o += x * b;
            }
        }
        out
    }

    /// `X^T v`.
    pub fn tmul_vec(&self, v: &[f64]) -> Vec<f64> {
        (0..self.n_cols)
            .map(|j| self.column(j).iter().zip(v).map(|(x, y)| x * y).sum())
            .collect()
    }
}

/// Expand `f` on `data` using `bindings`.
pub fn build_design_matrix(
    f: &Formula,
    data: &LongitudinalDataset,
    bindings: &ColumnBindings,
) -> Result<DesignMatrix, FormulaError> {
    Ok(f.bind(bindings)?.design(data, &[]))
}
