//! Symbolic discovery of purchasing formulas: a seeded evolutionary search
//! over a small expression grammar with per-candidate affine constant
//! fitting by least squares.
//!
//! Grammar: +, -, *, protected /, protected log, constants, and the five
//! features price / discount / hist_volume / trend / review. Protected
//! division returns the numerator-independent value 1 when |denominator|
//! <= 1e-9; protected log is ln(|x| + 1e-9). Every expression is total.

use std::collections::BTreeMap;
use std::fmt;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::seed;

pub const FEATURE_NAMES: [&str; 5] = ["price", "discount", "hist_volume", "trend", "review"];

pub const COMPLEXITY_PENALTY: f64 = 0.01;

#[derive(Debug, Error)]
pub enum SymbolicError {
    #[error("dataset must have at least {min} points, got {got}")]
    TooFewPoints { min: usize, got: usize },
    #[error("evaluation budget must be at least 1")]
    ZeroBudget,
    #[error("row {row} has a missing or non-finite feature")]
    BadFeature { row: usize },
    #[error("cannot parse expression {text:?}: {reason}")]
    Parse { text: String, reason: String },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    Feature(usize),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Log(Box<Expr>),
}

impl Expr {
    pub fn eval(&self, row: &[f64; 5]) -> f64 {
        match self {
            Expr::Const(c) => *c,
            Expr::Feature(i) => row[*i],
            Expr::Add(l, r) => l.eval(row) + r.eval(row),
            Expr::Sub(l, r) => l.eval(row) - r.eval(row),
            Expr::Mul(l, r) => l.eval(row) * r.eval(row),
            Expr::Div(l, r) => {
                let d = r.eval(row);
                if d.abs() > 1e-9 {
                    l.eval(row) / d
                } else {
                    1.0
                }
            }
            Expr::Log(x) => (x.eval(row).abs() + 1e-9).ln(),
        }
    }

    pub fn node_count(&self) -> usize {
        match self {
            Expr::Const(_) | Expr::Feature(_) => 1,
            Expr::Add(l, r) | Expr::Sub(l, r) | Expr::Mul(l, r) | Expr::Div(l, r) => {
                1 + l.node_count() + r.node_count()
            }
            Expr::Log(x) => 1 + x.node_count(),
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            Expr::Const(_) | Expr::Feature(_) => 1,
            Expr::Add(l, r) | Expr::Sub(l, r) | Expr::Mul(l, r) | Expr::Div(l, r) => {
                1 + l.depth().max(r.depth())
            }
            Expr::Log(x) => 1 + x.depth(),
        }
    }

    fn children(&self) -> Vec<&Expr> {
        match self {
            Expr::Const(_) | Expr::Feature(_) => vec![],
            Expr::Add(l, r) | Expr::Sub(l, r) | Expr::Mul(l, r) | Expr::Div(l, r) => {
                vec![l, r]
            }
            Expr::Log(x) => vec![x],
        }
    }

    /// Subtree at a preorder index (0 = the root).
    fn subtree(&self, index: usize) -> &Expr {
        fn walk<'a>(e: &'a Expr, index: usize, seen: &mut usize) -> Option<&'a Expr> {
            if *seen == index {
                return Some(e);
            }
            *seen += 1;
            for child in e.children() {
                if let Some(found) = walk(child, index, seen) {
                    return Some(found);
                }
            }
            None
        }
        let mut seen = 0;
        walk(self, index, &mut seen).expect("index in range")
    }

    /// Copy with the subtree at a preorder index replaced.
    fn with_replacement(&self, index: usize, replacement: &Expr) -> Expr {
        fn walk(e: &Expr, index: usize, replacement: &Expr, seen: &mut usize) -> Expr {
            if *seen == index {
                *seen += e.node_count();
                return replacement.clone();
            }
            *seen += 1;
            match e {
                Expr::Const(_) | Expr::Feature(_) => e.clone(),
                Expr::Add(l, r) => {
                    let nl = walk(l, index, replacement, seen);
                    let nr = walk(r, index, replacement, seen);
                    Expr::Add(Box::new(nl), Box::new(nr))
                }
                Expr::Sub(l, r) => {
                    let nl = walk(l, index, replacement, seen);
                    let nr = walk(r, index, replacement, seen);
                    Expr::Sub(Box::new(nl), Box::new(nr))
                }
                Expr::Mul(l, r) => {
                    let nl = walk(l, index, replacement, seen);
                    let nr = walk(r, index, replacement, seen);
                    Expr::Mul(Box::new(nl), Box::new(nr))
                }
                Expr::Div(l, r) => {
                    let nl = walk(l, index, replacement, seen);
                    let nr = walk(r, index, replacement, seen);
                    Expr::Div(Box::new(nl), Box::new(nr))
                }
                Expr::Log(x) => Expr::Log(Box::new(walk(x, index, replacement, seen))),
            }
        }
        let mut seen = 0;
        walk(self, index, replacement, &mut seen)
    }

    fn precedence(&self) -> u8 {
        match self {
            Expr::Add(..) | Expr::Sub(..) => 1,
            Expr::Mul(..) | Expr::Div(..) => 2,
            _ => 3,
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fn side(f: &mut fmt::Formatter<'_>, child: &Expr, min: u8) -> fmt::Result {
            if child.precedence() < min {
                write!(f, "({child})")
            } else {
                write!(f, "{child}")
            }
        }
        match self {
            Expr::Const(c) => write!(f, "{c}"),
            Expr::Feature(i) => write!(f, "{}", FEATURE_NAMES[*i]),
            Expr::Add(l, r) => {
                side(f, l, 1)?;
                write!(f, " + ")?;
                side(f, r, 1)
            }
            Expr::Sub(l, r) => {
                side(f, l, 1)?;
                write!(f, " - ")?;
                side(f, r, 2)
            }
            Expr::Mul(l, r) => {
                side(f, l, 2)?;
                write!(f, " * ")?;
                side(f, r, 2)
            }
            Expr::Div(l, r) => {
                side(f, l, 2)?;
                write!(f, " / ")?;
                side(f, r, 3)
            }
            Expr::Log(x) => write!(f, "log({x})"),
        }
    }
}

impl Serialize for Expr {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Expr {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Expr, D::Error> {
        let text = String::deserialize(deserializer)?;
        parse_expression(&text).map_err(serde::de::Error::custom)
    }
}

// ---------------------------------------------------------------------------
// Parsing (for counter-proposals arriving as dialogue text)
// ---------------------------------------------------------------------------

struct Parser<'a> {
    tokens: Vec<Token>,
    pos: usize,
    text: &'a str,
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Num(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    LParen,
    RParen,
}

fn tokenize(text: &str) -> Result<Vec<Token>, String> {
    let mut tokens = Vec::new();
    let chars: Vec<char> = text.chars().collect();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        match c {
            ' ' | '\t' | '\n' | '\r' => i += 1,
            '+' => {
                tokens.push(Token::Plus);
                i += 1;
            }
            '-' => {
                tokens.push(Token::Minus);
                i += 1;
            }
            '*' => {
                tokens.push(Token::Star);
                i += 1;
            }
            '/' => {
                tokens.push(Token::Slash);
                i += 1;
            }
            '(' => {
                tokens.push(Token::LParen);
                i += 1;
            }
            ')' => {
                tokens.push(Token::RParen);
                i += 1;
            }
            c if c.is_ascii_digit() || c == '.' => {
                let start = i;
                while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                    i += 1;
                }
                let lit: String = chars[start..i].iter().collect();
                tokens.push(Token::Num(lit.parse().map_err(|_| format!("bad number {lit}"))?));
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let start = i;
                while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                    i += 1;
                }
                tokens.push(Token::Ident(chars[start..i].iter().collect()));
            }
            other => return Err(format!("unexpected character {other:?}")),
        }
    }
    Ok(tokens)
}

impl Parser<'_> {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn next(&mut self) -> Option<Token> {
        let t = self.tokens.get(self.pos).cloned();
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn err(&self, reason: impl Into<String>) -> SymbolicError {
        SymbolicError::Parse {
            text: self.text.to_string(),
            reason: reason.into(),
        }
    }

    fn expr(&mut self) -> Result<Expr, SymbolicError> {
        let mut left = self.term()?;
        while let Some(op) = self.peek().cloned() {
            match op {
                Token::Plus => {
                    self.next();
                    left = Expr::Add(Box::new(left), Box::new(self.term()?));
                }
                Token::Minus => {
                    self.next();
                    left = Expr::Sub(Box::new(left), Box::new(self.term()?));
                }
                _ => break,
            }
        }
        Ok(left)
    }

    fn term(&mut self) -> Result<Expr, SymbolicError> {
        let mut left = self.factor()?;
        while let Some(op) = self.peek().cloned() {
            match op {
                Token::Star => {
                    self.next();
                    left = Expr::Mul(Box::new(left), Box::new(self.factor()?));
                }
                Token::Slash => {
                    self.next();
                    left = Expr::Div(Box::new(left), Box::new(self.factor()?));
                }
                _ => break,
            }
        }
        Ok(left)
    }

    fn factor(&mut self) -> Result<Expr, SymbolicError> {
        match self.next() {
            Some(Token::Num(v)) => Ok(Expr::Const(v)),
            Some(Token::Minus) => {
                let inner = self.factor()?;
                Ok(match inner {
                    Expr::Const(c) => Expr::Const(-c),
                    other => Expr::Sub(Box::new(Expr::Const(0.0)), Box::new(other)),
                })
            }
            Some(Token::LParen) => {
                let inner = self.expr()?;
                match self.next() {
                    Some(Token::RParen) => Ok(inner),
                    _ => Err(self.err("missing closing parenthesis")),
                }
            }
            Some(Token::Ident(name)) if name == "log" => match self.next() {
                Some(Token::LParen) => {
                    let inner = self.expr()?;
                    match self.next() {
                        Some(Token::RParen) => Ok(Expr::Log(Box::new(inner))),
                        _ => Err(self.err("missing closing parenthesis after log")),
                    }
                }
                _ => Err(self.err("log must be followed by (")),
            },
            Some(Token::Ident(name)) => FEATURE_NAMES
                .iter()
                .position(|f| *f == name)
                .map(Expr::Feature)
                .ok_or_else(|| self.err(format!("unknown feature {name:?}"))),
            other => Err(self.err(format!("unexpected token {other:?}"))),
        }
    }
}

pub fn parse_expression(text: &str) -> Result<Expr, SymbolicError> {
    let tokens = tokenize(text).map_err(|reason| SymbolicError::Parse {
        text: text.to_string(),
        reason,
    })?;
    let mut parser = Parser {
        tokens,
        pos: 0,
        text,
    };
    let expr = parser.expr()?;
    if parser.pos != parser.tokens.len() {
        return Err(parser.err("trailing tokens"));
    }
    Ok(expr)
}

// ---------------------------------------------------------------------------
// Datasets and error statistics
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RuleDataset {
    pub rows: Vec<[f64; 5]>,
    pub targets: Vec<f64>,
    pub id: String,
}

impl RuleDataset {
    pub fn new(rows: Vec<[f64; 5]>, targets: Vec<f64>, id: impl Into<String>) -> RuleDataset {
        assert_eq!(rows.len(), targets.len(), "rows and targets must align");
        RuleDataset {
            rows,
            targets,
            id: id.into(),
        }
    }

    fn check_finite(&self) -> Result<(), SymbolicError> {
        for (i, (row, target)) in self.rows.iter().zip(&self.targets).enumerate() {
            if !target.is_finite() || row.iter().any(|v| !v.is_finite()) {
                return Err(SymbolicError::BadFeature { row: i });
            }
        }
        Ok(())
    }
}

/// Exact (rmse, mean absolute error) of an expression over a dataset.
pub fn evaluate_rule(expr: &Expr, dataset: &RuleDataset) -> Result<(f64, f64), SymbolicError> {
    if dataset.rows.is_empty() {
        return Err(SymbolicError::TooFewPoints { min: 1, got: 0 });
    }
    dataset.check_finite()?;
    let mut sq = 0.0;
    let mut abs = 0.0;
    for (row, target) in dataset.rows.iter().zip(&dataset.targets) {
        let err = expr.eval(row) - target;
        sq += err * err;
        abs += err.abs();
    }
    let n = dataset.rows.len() as f64;
    Ok(((sq / n).sqrt(), abs / n))
}

/// A discovered purchasing formula with its fit statistics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RuleFit {
    pub expression: Expr,
    pub rmse: f64,
    pub complexity: usize,
    pub dataset_id: String,
}

impl RuleFit {
    /// Search score: rmse plus the compactness penalty.
    pub fn penalized_score(&self) -> f64 {
        self.rmse + COMPLEXITY_PENALTY * self.complexity as f64
    }
}

// ---------------------------------------------------------------------------
// Affine constant fit (least squares) and simplification
// ---------------------------------------------------------------------------

/// Least-squares fit of target ~ a + b * expr(x); returns the embedded
/// expression and its rmse. Degenerate (constant) regressors fall back to
/// the intercept-only fit.
fn affine_fit(structure: &Expr, dataset: &RuleDataset) -> Option<(Expr, f64)> {
    let n = dataset.rows.len() as f64;
    let mut values = Vec::with_capacity(dataset.rows.len());
    for row in &dataset.rows {
        let v = structure.eval(row);
        if !v.is_finite() {
            return None;
        }
        values.push(v);
    }
    let mean_v = values.iter().sum::<f64>() / n;
    let mean_y = dataset.targets.iter().sum::<f64>() / n;
    let mut var_v = 0.0;
    let mut cov = 0.0;
    for (v, y) in values.iter().zip(&dataset.targets) {
        var_v += (v - mean_v) * (v - mean_v);
        cov += (v - mean_v) * (y - mean_y);
    }
    let (a, b) = if var_v < 1e-12 {
        (mean_y, 0.0)
    } else {
        let b = cov / var_v;
        (mean_y - b * mean_v, b)
    };
    let mut sq = 0.0;
    for (v, y) in values.iter().zip(&dataset.targets) {
        let e = a + b * v - y;
        sq += e * e;
    }
    let rmse = (sq / n).sqrt();
    Some((embed_affine(a, b, structure), rmse))
}

/// Build the printable form of a + b * e with the obvious simplifications
/// (b < 0 renders as a subtraction of |b| * e).
fn embed_affine(a: f64, b: f64, structure: &Expr) -> Expr {
    if b == 0.0 {
        return Expr::Const(a);
    }
    if let Expr::Const(c) = structure {
        return Expr::Const(a + b * c);
    }
    let magnitude = b.abs();
    let scaled = if (magnitude - 1.0).abs() < 1e-12 {
        structure.clone()
    } else {
        Expr::Mul(Box::new(Expr::Const(magnitude)), Box::new(structure.clone()))
    };
    match (a.abs() < 1e-12, b < 0.0) {
        (true, false) => scaled,
        (true, true) => Expr::Sub(Box::new(Expr::Const(0.0)), Box::new(scaled)),
        (false, false) => Expr::Add(Box::new(Expr::Const(a)), Box::new(scaled)),
        (false, true) => Expr::Sub(Box::new(Expr::Const(a)), Box::new(scaled)),
    }
}

// ---------------------------------------------------------------------------
// Evolutionary search
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct SearchConfig {
    pub population: usize,
    pub tournament: usize,
    pub elite: usize,
    pub crossover_p: f64,
    pub mutation_p: f64,
    /// Stop early once the best rmse falls below this.
    pub stop_rmse: f64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            population: 200,
            tournament: 3,
            elite: 10,
            crossover_p: 0.9,
            mutation_p: 0.3,
            stop_rmse: 1e-12,
        }
    }
}

#[derive(Debug, Clone)]
struct Scored {
    structure: Expr,
    fitted: Expr,
    rmse: f64,
    score: f64,
    order: usize,
}

fn random_tree(rng: &mut ChaCha8Rng, depth_budget: usize) -> Expr {
    if depth_budget <= 1 || rng.random::<f64>() < 0.3 {
        if rng.random::<f64>() < 0.7 {
            Expr::Feature(rng.random_range(0..FEATURE_NAMES.len()))
        } else {
            Expr::Const((rng.random_range(-10..=10) as f64) / 2.0)
        }
    } else {
        let l = Box::new(random_tree(rng, depth_budget - 1));
        let r = Box::new(random_tree(rng, depth_budget - 1));
        match rng.random_range(0..10) {
            0..=2 => Expr::Add(l, r),
            3..=5 => Expr::Sub(l, r),
            6..=7 => Expr::Mul(l, r),
            8 => Expr::Div(l, r),
            _ => Expr::Log(l),
        }
    }
}

fn mutate(rng: &mut ChaCha8Rng, expr: &Expr, depth_budget: usize) -> Expr {
    let nodes = expr.node_count();
    let idx = rng.random_range(0..nodes);
    match rng.random_range(0..10) {
        0..=5 => {
            let replacement = random_tree(rng, depth_budget.saturating_sub(1).max(1));
            expr.with_replacement(idx, &replacement)
        }
        6..=7 => match expr.subtree(idx) {
            Expr::Const(c) => {
                let jitter = crate::data::sample_normal(rng);
                expr.with_replacement(idx, &Expr::Const(c + jitter))
            }
            _ => expr.with_replacement(
                idx,
                &Expr::Const((rng.random_range(-10..=10) as f64) / 2.0),
            ),
        },
        _ => expr.with_replacement(
            idx,
            &Expr::Feature(rng.random_range(0..FEATURE_NAMES.len())),
        ),
    }
}

fn crossover(rng: &mut ChaCha8Rng, a: &Expr, b: &Expr) -> Expr {
    let idx_a = rng.random_range(0..a.node_count());
    let idx_b = rng.random_range(0..b.node_count());
    a.with_replacement(idx_a, b.subtree(idx_b))
}

fn tournament<'a>(rng: &mut ChaCha8Rng, population: &'a [Scored], k: usize) -> &'a Scored {
    let mut best: Option<&Scored> = None;
    for _ in 0..k {
        let pick = &population[rng.random_range(0..population.len())];
        let better = match best {
            None => true,
            Some(b) => {
                (pick.score, pick.fitted.node_count(), pick.order)
                    < (b.score, b.fitted.node_count(), b.order)
            }
        };
        if better {
            best = Some(pick);
        }
    }
    best.expect("tournament over non-empty population")
}

/// Search the expression space for the best affine-fitted formula within
/// an evaluation budget. Deterministic for a fixed seed. The search is
/// seeded with the constant-mean candidate and each bare feature, so the
/// returned rmse never exceeds the constant-mean rmse.
pub fn discover_rule(
    dataset: &RuleDataset,
    budget: u64,
    seed_value: u64,
    max_depth: usize,
) -> Result<RuleFit, SymbolicError> {
    discover_rule_with(dataset, budget, seed_value, max_depth, &SearchConfig::default())
}

pub fn discover_rule_with(
    dataset: &RuleDataset,
    budget: u64,
    seed_value: u64,
    max_depth: usize,
    config: &SearchConfig,
) -> Result<RuleFit, SymbolicError> {
    if dataset.rows.is_empty() {
        return Err(SymbolicError::TooFewPoints { min: 10, got: 0 });
    }
    if dataset.rows.len() < 10 {
        return Err(SymbolicError::TooFewPoints {
            min: 10,
            got: dataset.rows.len(),
        });
    }
    if budget < 1 {
        return Err(SymbolicError::ZeroBudget);
    }
    dataset.check_finite()?;

    // The affine wrapper adds two levels; keep final depth within max_depth.
    let depth_budget = max_depth.saturating_sub(2).max(1);
    let mut rng = seed::rng(&[0x73796d62, seed_value]);
    let mut evals: u64 = 0;
    let mut order: usize = 0;
    let mut population: Vec<Scored> = Vec::with_capacity(config.population);
    let mut best: Option<Scored> = None;

    let lambda = COMPLEXITY_PENALTY;
    let consider = |structure: Expr,
                        evals: &mut u64,
                        order: &mut usize,
                        best: &mut Option<Scored>|
     -> Option<Scored> {
        if *evals >= budget {
            return None;
        }
        *evals += 1;
        let (fitted, rmse) = affine_fit(&structure, dataset)?;
        let score = rmse + lambda * fitted.node_count() as f64;
        let scored = Scored {
            structure,
            fitted,
            rmse,
            score,
            order: *order,
        };
        *order += 1;
        let improves = match best {
            None => true,
            Some(b) => {
                (scored.score, scored.fitted.node_count(), scored.order)
                    < (b.score, b.fitted.node_count(), b.order)
            }
        };
        if improves {
            *best = Some(scored.clone());
        }
        Some(scored)
    };

    // Seed candidates: constant mean, then each bare feature.
    let mut seeds: Vec<Expr> = vec![Expr::Const(1.0)];
    seeds.extend((0..FEATURE_NAMES.len()).map(Expr::Feature));
    for s in seeds {
        if let Some(scored) = consider(s, &mut evals, &mut order, &mut best) {
            population.push(scored);
        }
        if evals >= budget {
            break;
        }
    }

    let done = |best: &Option<Scored>, evals: u64| {
        evals >= budget
            || best
                .as_ref()
                .map(|b| b.rmse < config.stop_rmse)
                .unwrap_or(false)
    };

    while !done(&best, evals) && population.len() < config.population {
        let t = random_tree(&mut rng, depth_budget);
        if let Some(scored) = consider(t, &mut evals, &mut order, &mut best) {
            population.push(scored);
        }
    }

    while !done(&best, evals) {
        let mut next: Vec<Scored> = Vec::with_capacity(config.population);
        let mut ranked: Vec<&Scored> = population.iter().collect();
        ranked.sort_by(|a, b| {
            (a.score, a.fitted.node_count(), a.order)
                .partial_cmp(&(b.score, b.fitted.node_count(), b.order))
                .expect("finite scores")
        });
        for elite in ranked.iter().take(config.elite) {
            next.push((*elite).clone());
        }
        while next.len() < config.population && !done(&best, evals) {
            let p1 = tournament(&mut rng, &population, config.tournament);
            let child_structure = if rng.random::<f64>() < config.crossover_p {
                let p2 = tournament(&mut rng, &population, config.tournament);
                crossover(&mut rng, &p1.structure, &p2.structure)
            } else {
                p1.structure.clone()
            };
            let child_structure = if rng.random::<f64>() < config.mutation_p {
                mutate(&mut rng, &child_structure, depth_budget)
            } else {
                child_structure
            };
            let child_structure = if child_structure.depth() > depth_budget {
                random_tree(&mut rng, depth_budget)
            } else {
                child_structure
            };
            if let Some(scored) = consider(child_structure, &mut evals, &mut order, &mut best) {
                next.push(scored);
            }
        }
        if next.is_empty() {
            break;
        }
        population = next;
    }

    let best = best.expect("budget >= 1 evaluates at least one candidate");
    let complexity = best.fitted.node_count();
    Ok(RuleFit {
        expression: best.fitted,
        rmse: best.rmse,
        complexity,
        dataset_id: dataset.id.clone(),
    })
}

// ---------------------------------------------------------------------------
// Polynomial expansion for algebraic-equivalence checks
// ---------------------------------------------------------------------------

/// Exponent vector over the five features.
pub type Monomial = [u8; 5];

/// Expand into a multivariate polynomial when possible (no log, divisions
/// only by constant-valued subexpressions). Used by recovery tests to
/// compare coefficients after constant fitting.
pub fn expand_polynomial(expr: &Expr) -> Option<BTreeMap<Monomial, f64>> {
    const MAX_DEGREE: u32 = 16;
    fn merge(
        mut a: BTreeMap<Monomial, f64>,
        b: BTreeMap<Monomial, f64>,
        sign: f64,
    ) -> BTreeMap<Monomial, f64> {
        for (k, v) in b {
            *a.entry(k).or_insert(0.0) += sign * v;
        }
        a
    }
    match expr {
        Expr::Const(c) => Some(BTreeMap::from([([0; 5], *c)])),
        Expr::Feature(i) => {
            let mut m = [0u8; 5];
            m[*i] = 1;
            Some(BTreeMap::from([(m, 1.0)]))
        }
        Expr::Add(l, r) => Some(merge(expand_polynomial(l)?, expand_polynomial(r)?, 1.0)),
        Expr::Sub(l, r) => Some(merge(expand_polynomial(l)?, expand_polynomial(r)?, -1.0)),
        Expr::Mul(l, r) => {
            let pl = expand_polynomial(l)?;
            let pr = expand_polynomial(r)?;
            let mut out: BTreeMap<Monomial, f64> = BTreeMap::new();
            for (ml, cl) in &pl {
                for (mr, cr) in &pr {
                    let mut m = [0u8; 5];
                    let mut degree = 0u32;
                    for i in 0..5 {
                        m[i] = ml[i].checked_add(mr[i])?;
                        degree += m[i] as u32;
                    }
                    if degree > MAX_DEGREE {
                        return None;
                    }
                    *out.entry(m).or_insert(0.0) += cl * cr;
                }
            }
            Some(out)
        }
        Expr::Div(l, r) => {
            let pr = expand_polynomial(r)?;
            let constant: f64 = match (pr.len(), pr.get(&[0; 5])) {
                (1, Some(c)) => *c,
                (0, _) => 0.0,
                _ => return None,
            };
            if constant.abs() <= 1e-9 {
                return None;
            }
            let pl = expand_polynomial(l)?;
            Some(pl.into_iter().map(|(m, c)| (m, c / constant)).collect())
        }
        Expr::Log(_) => None,
    }
}

/// Coefficient-wise comparison of two expanded polynomials.
pub fn polynomials_match(
    a: &BTreeMap<Monomial, f64>,
    b: &BTreeMap<Monomial, f64>,
    tol: f64,
) -> bool {
    let keys: std::collections::BTreeSet<&Monomial> = a.keys().chain(b.keys()).collect();
    keys.into_iter().all(|k| {
        let ca = a.get(k).copied().unwrap_or(0.0);
        let cb = b.get(k).copied().unwrap_or(0.0);
        (ca - cb).abs() <= tol
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn linear_price_dataset(n: usize) -> RuleDataset {
        // q = 10 - 2 * price on a noiseless grid.
        let rows: Vec<[f64; 5]> = (0..n)
            .map(|i| {
                let price = 1.0 + (i as f64) * 0.08;
                [price, 0.1, 5.0 + (i % 7) as f64, 3.0, 4.0]
            })
            .collect();
        let targets = rows.iter().map(|r| 10.0 - 2.0 * r[0]).collect();
        RuleDataset::new(rows, targets, "planted-linear")
    }

    #[test]
    fn recovers_planted_linear_rule() {
        let ds = linear_price_dataset(50);
        let fit = discover_rule(&ds, 100_000, 7, 6).unwrap();
        assert!(fit.rmse < 1e-9, "rmse {}", fit.rmse);
        let expanded = expand_polynomial(&fit.expression).expect("polynomial form");
        let mut expected = BTreeMap::new();
        expected.insert([0u8; 5], 10.0);
        expected.insert([1, 0, 0, 0, 0], -2.0);
        assert!(
            polynomials_match(&expanded, &expected, 1e-6),
            "got {}",
            fit.expression
        );
    }

    #[test]
    fn recovery_is_deterministic_per_seed() {
        let ds = linear_price_dataset(50);
        let a = discover_rule(&ds, 5_000, 3, 6).unwrap();
        let b = discover_rule(&ds, 5_000, 3, 6).unwrap();
        assert_eq!(a.expression.to_string(), b.expression.to_string());
        assert_eq!(a.rmse, b.rmse);
    }

    #[test]
    fn constant_target_yields_constant_expression() {
        let rows: Vec<[f64; 5]> = (0..50)
            .map(|i| [i as f64, 0.0, 0.0, 0.0, 0.0])
            .collect();
        let targets = vec![5.0; 50];
        let ds = RuleDataset::new(rows, targets, "constant");
        let fit = discover_rule(&ds, 1_000, 1, 6).unwrap();
        assert_eq!(fit.expression.to_string(), "5");
        assert!(fit.rmse < 1e-12);
        assert_eq!(fit.complexity, 1);
    }

    #[test]
    fn budget_one_returns_single_candidate() {
        let ds = linear_price_dataset(50);
        let fit = discover_rule(&ds, 1, 1, 6).unwrap();
        assert!(fit.rmse.is_finite());
        // The single evaluated candidate is the constant-mean seed.
        assert_eq!(fit.complexity, 1);
    }

    #[test]
    fn rmse_never_exceeds_constant_mean_baseline() {
        for seed_value in 0..5u64 {
            let ds = linear_price_dataset(37);
            let mean = ds.targets.iter().sum::<f64>() / ds.targets.len() as f64;
            let (mean_rmse, _) = evaluate_rule(&Expr::Const(mean), &ds).unwrap();
            let fit = discover_rule(&ds, 600, seed_value, 6).unwrap();
            assert!(fit.rmse <= mean_rmse + 1e-12);
        }
    }

    #[test]
    fn evaluate_rule_exact_cases() {
        let ds = linear_price_dataset(20);
        let exact = parse_expression("10 - 2 * price").unwrap();
        let (rmse, mae) = evaluate_rule(&exact, &ds).unwrap();
        assert!(rmse < 1e-12);
        assert!(mae < 1e-12);

        let off = parse_expression("11 - 2 * price").unwrap();
        let (rmse, mae) = evaluate_rule(&off, &ds).unwrap();
        assert!((rmse - 1.0).abs() < 1e-12);
        assert!((mae - 1.0).abs() < 1e-12);
    }

    #[test]
    fn evaluate_rule_matches_independent_reimplementation() {
        let mut rng = seed::rng(&[555]);
        let rows: Vec<[f64; 5]> = (0..100)
            .map(|_| std::array::from_fn(|_| rng.random::<f64>() * 10.0 - 5.0))
            .collect();
        let targets: Vec<f64> = (0..100).map(|_| rng.random::<f64>() * 20.0).collect();
        let ds = RuleDataset::new(rows.clone(), targets.clone(), "random");
        let expr = parse_expression("log(price) + discount * hist_volume - trend / 2").unwrap();
        let (rmse, mae) = evaluate_rule(&expr, &ds).unwrap();

        // Brute-force re-implementation straight from the definitions.
        let mut sq = 0.0;
        let mut ab = 0.0;
        for (row, y) in rows.iter().zip(&targets) {
            let pred = (row[0].abs() + 1e-9).ln() + row[1] * row[2] - row[3] / 2.0;
            sq += (pred - y) * (pred - y);
            ab += (pred - y).abs();
        }
        assert!((rmse - (sq / 100.0).sqrt()).abs() < 1e-12);
        assert!((mae - ab / 100.0).abs() < 1e-12);
    }

    #[test]
    fn protected_operations_are_total() {
        let div = parse_expression("price / discount").unwrap();
        assert_eq!(div.eval(&[3.0, 0.0, 0.0, 0.0, 0.0]), 1.0);
        let log = parse_expression("log(discount)").unwrap();
        assert!(log.eval(&[0.0, 0.0, 0.0, 0.0, 0.0]).is_finite());
    }

    #[test]
    fn display_parse_round_trip() {
        for text in [
            "10 - 2 * price",
            "price + discount * review",
            "log(price + 1) / 3",
            "(price - trend) * (discount + 2)",
            "0 - price",
        ] {
            let e = parse_expression(text).unwrap();
            let printed = e.to_string();
            let reparsed = parse_expression(&printed).unwrap();
            assert_eq!(e, reparsed, "{text} -> {printed}");
        }
    }

    #[test]
    fn dataset_preconditions() {
        let ds = RuleDataset::new(vec![[1.0; 5]; 5], vec![1.0; 5], "tiny");
        assert!(matches!(
            discover_rule(&ds, 10, 1, 6),
            Err(SymbolicError::TooFewPoints { .. })
        ));
        let ds2 = linear_price_dataset(50);
        assert!(matches!(
            discover_rule(&ds2, 0, 1, 6),
            Err(SymbolicError::ZeroBudget)
        ));
        let mut bad = linear_price_dataset(50);
        bad.rows[3][2] = f64::NAN;
        assert!(matches!(
            discover_rule(&bad, 10, 1, 6),
            Err(SymbolicError::BadFeature { row: 3 })
        ));
    }
}
