//! An exact decimal calculator for model-emitted formulas.
//!
//! Arithmetic runs over arbitrary-precision rationals. After every
//! operation, a result that is exactly representable as a finite decimal
//! (denominator of the form 2^a * 5^b) is kept exact; anything else is
//! rounded half-to-even to [`SIGNIFICANT_DIGITS`] significant digits, so
//! repeated divisions stay bounded and every intermediate remains a plain
//! decimal. Values print as plain decimals — no exponent notation, no
//! trailing fractional zeros.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use num::bigint::BigInt;
use num::rational::BigRational;
use num::{One, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Precision kept when an operation result is not decimal-representable.
pub const SIGNIFICANT_DIGITS: u32 = 12;

/// Errors raised by formula parsing and evaluation.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CalcError {
    #[error("formula is empty")]
    Empty,
    #[error("syntax error at offset {position}: {message}")]
    Syntax { position: usize, message: String },
    #[error("division by zero")]
    DivisionByZero,
}

/// An exact decimal number (rational with denominator 2^a * 5^b).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct Decimal(BigRational);

impl Decimal {
    pub fn zero() -> Self {
        Decimal(BigRational::zero())
    }

    pub fn is_zero(&self) -> bool {
        self.0.is_zero()
    }

    pub fn is_negative(&self) -> bool {
        self.0.is_negative()
    }

    /// Wrap a rational, rounding half-to-even to [`SIGNIFICANT_DIGITS`]
    /// significant digits when it is not decimal-representable.
    fn normalized(r: BigRational) -> Self {
        if is_decimal_representable(&r) {
            Decimal(r)
        } else {
            Decimal(round_significant_half_even(&r, SIGNIFICANT_DIGITS))
        }
    }

    pub fn add(&self, other: &Decimal) -> Decimal {
        Decimal::normalized(&self.0 + &other.0)
    }

    pub fn sub(&self, other: &Decimal) -> Decimal {
        Decimal::normalized(&self.0 - &other.0)
    }

    pub fn mul(&self, other: &Decimal) -> Decimal {
        Decimal::normalized(&self.0 * &other.0)
    }

    pub fn div(&self, other: &Decimal) -> Result<Decimal, CalcError> {
        if other.0.is_zero() {
            return Err(CalcError::DivisionByZero);
        }
        Ok(Decimal::normalized(&self.0 / &other.0))
    }

    pub fn neg(&self) -> Decimal {
        Decimal(-self.0.clone())
    }

    /// Nearest f64; used only for tolerance comparisons, never display.
    pub fn to_f64(&self) -> f64 {
        self.0.to_f64().unwrap_or_else(|| {
            self.0.numer().to_f64().unwrap_or(f64::NAN)
                / self.0.denom().to_f64().unwrap_or(f64::NAN)
        })
    }

    /// Round to `dp` decimal places, ties to even.
    pub fn round_dp_half_even(&self, dp: u32) -> Decimal {
        let scale = pow10(dp as i64);
        let scaled = &self.0 * &scale;
        let negative = scaled.is_negative();
        let n = round_half_even_to_int(&scaled.abs());
        let r = BigRational::from_integer(n) / scale;
        Decimal(if negative { -r } else { r })
    }

    /// Plain decimal string: optional sign, no exponent, no trailing
    /// fractional zeros (`1`, `-0.5`, `9.29184363353`).
    pub fn to_plain_string(&self) -> String {
        let r = &self.0;
        if r.is_zero() {
            return "0".to_string();
        }
        let mut den = r.denom().clone();
        let two = BigInt::from(2);
        let five = BigInt::from(5);
        let mut twos = 0u32;
        let mut fives = 0u32;
        while (&den % &two).is_zero() {
            den /= &two;
            twos += 1;
        }
        while (&den % &five).is_zero() {
            den /= &five;
            fives += 1;
        }
        debug_assert!(den.is_one(), "Decimal invariant violated: {r}");
        let k = twos.max(fives);
        let scaled = r.numer() * two.pow(k - twos) * five.pow(k - fives);
        let negative = scaled.is_negative();
        let digits = scaled.abs().to_string();
        let body = if k == 0 {
            digits
        } else {
            let width = k as usize + 1;
            let padded = if digits.len() < width {
                format!("{}{}", "0".repeat(width - digits.len()), digits)
            } else {
                digits
            };
            let point = padded.len() - k as usize;
            let mut s = format!("{}.{}", &padded[..point], &padded[point..]);
            while s.ends_with('0') {
                s.pop();
            }
            if s.ends_with('.') {
                s.pop();
            }
            s
        };
        if negative {
            format!("-{body}")
        } else {
            body
        }
    }
}

impl fmt::Display for Decimal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_plain_string())
    }
}

impl FromStr for Decimal {
    type Err = CalcError;

    /// Parse a plain decimal literal with optional leading `-`.
    fn from_str(s: &str) -> Result<Self, CalcError> {
        let t = s.trim();
        if t.is_empty() {
            return Err(CalcError::Empty);
        }
        let (negative, body) = match t.strip_prefix('-') {
            Some(rest) => (true, rest),
            None => (false, t),
        };
        let (int_part, frac_part) = match body.split_once('.') {
            Some((i, f)) => (i, f),
            None => (body, ""),
        };
        if int_part.is_empty() && frac_part.is_empty() {
            return Err(CalcError::Syntax {
                position: 0,
                message: format!("not a decimal literal: {s:?}"),
            });
        }
        if !int_part.bytes().all(|b| b.is_ascii_digit())
            || !frac_part.bytes().all(|b| b.is_ascii_digit())
        {
            return Err(CalcError::Syntax {
                position: 0,
                message: format!("not a decimal literal: {s:?}"),
            });
        }
        let digits = format!("{int_part}{frac_part}");
        let numer = BigInt::from_str(&digits).map_err(|e| CalcError::Syntax {
            position: 0,
            message: format!("bad digits: {e}"),
        })?;
        let denom = BigInt::from(10).pow(frac_part.len() as u32);
        let r = BigRational::new(numer, denom);
        Ok(Decimal(if negative { -r } else { r }))
    }
}

impl Serialize for Decimal {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_plain_string())
    }
}

impl<'de> Deserialize<'de> for Decimal {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        Decimal::from_str(&s).map_err(serde::de::Error::custom)
    }
}

fn is_decimal_representable(r: &BigRational) -> bool {
    let mut den = r.denom().abs();
    let two = BigInt::from(2);
    let five = BigInt::from(5);
    while (&den % &two).is_zero() {
        den /= &two;
    }
    while (&den % &five).is_zero() {
        den /= &five;
    }
    den.is_one()
}

fn pow10(k: i64) -> BigRational {
    let ten = BigInt::from(10);
    if k >= 0 {
        BigRational::from_integer(ten.pow(k as u32))
    } else {
        BigRational::new(BigInt::one(), ten.pow((-k) as u32))
    }
}

/// Round a non-negative rational to the nearest integer, ties to even.
fn round_half_even_to_int(v: &BigRational) -> BigInt {
    let floor = v.floor().to_integer();
    let frac = v - BigRational::from_integer(floor.clone());
    match (&frac + &frac).cmp(&BigRational::one()) {
        Ordering::Less => floor,
        Ordering::Greater => floor + 1,
        Ordering::Equal => {
            if (&floor % BigInt::from(2)).is_zero() {
                floor
            } else {
                floor + 1
            }
        }
    }
}

/// Round `r` to `sig` significant digits, ties to even.
fn round_significant_half_even(r: &BigRational, sig: u32) -> BigRational {
    if r.is_zero() {
        return r.clone();
    }
    let negative = r.is_negative();
    let a = r.abs();
    // Locate e with 10^e <= a < 10^(e+1) starting from a digit-count guess.
    let mut e = a.numer().to_string().len() as i64 - a.denom().to_string().len() as i64;
    while a < pow10(e) {
        e -= 1;
    }
    while a >= pow10(e + 1) {
        e += 1;
    }
    let shift = sig as i64 - 1 - e;
    let scaled = &a * pow10(shift);
    let n = round_half_even_to_int(&scaled);
    let rounded = BigRational::from_integer(n) / pow10(shift);
    if negative {
        -rounded
    } else {
        rounded
    }
}

/// A parsed arithmetic formula.
///
/// Literal values are non-negative (sign is carried by [`FormulaAst::Neg`]),
/// so [`fmt::Display`] output always re-parses to a structurally identical
/// tree.
#[derive(Debug, Clone, PartialEq)]
pub enum FormulaAst {
    Number(Decimal),
    Neg(Box<FormulaAst>),
    Add(Box<FormulaAst>, Box<FormulaAst>),
    Sub(Box<FormulaAst>, Box<FormulaAst>),
    Mul(Box<FormulaAst>, Box<FormulaAst>),
    Div(Box<FormulaAst>, Box<FormulaAst>),
}

impl FormulaAst {
    /// Evaluate with exact decimal arithmetic.
    pub fn evaluate(&self) -> Result<Decimal, CalcError> {
        match self {
            FormulaAst::Number(d) => Ok(d.clone()),
            FormulaAst::Neg(x) => Ok(x.evaluate()?.neg()),
            FormulaAst::Add(l, r) => Ok(l.evaluate()?.add(&r.evaluate()?)),
            FormulaAst::Sub(l, r) => Ok(l.evaluate()?.sub(&r.evaluate()?)),
            FormulaAst::Mul(l, r) => Ok(l.evaluate()?.mul(&r.evaluate()?)),
            FormulaAst::Div(l, r) => l.evaluate()?.div(&r.evaluate()?),
        }
    }

    fn precedence(&self) -> u8 {
        match self {
            FormulaAst::Add(..) | FormulaAst::Sub(..) => 1,
            FormulaAst::Mul(..) | FormulaAst::Div(..) => 2,
            FormulaAst::Neg(..) => 3,
            FormulaAst::Number(..) => 4,
        }
    }

    fn fmt_child(
        &self,
        f: &mut fmt::Formatter<'_>,
        parent: u8,
        right_operand: bool,
    ) -> fmt::Result {
        let mine = self.precedence();
        let parens = mine < parent || (right_operand && mine == parent);
        if parens {
            write!(f, "(")?;
        }
        self.fmt_node(f)?;
        if parens {
            write!(f, ")")?;
        }
        Ok(())
    }

    fn fmt_node(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FormulaAst::Number(d) => f.write_str(&d.to_plain_string()),
            FormulaAst::Neg(x) => {
                write!(f, "-")?;
                x.fmt_child(f, self.precedence(), true)
            }
            FormulaAst::Add(l, r) => {
                l.fmt_child(f, self.precedence(), false)?;
                write!(f, "+")?;
                r.fmt_child(f, self.precedence(), true)
            }
            FormulaAst::Sub(l, r) => {
                l.fmt_child(f, self.precedence(), false)?;
                write!(f, "-")?;
                r.fmt_child(f, self.precedence(), true)
            }
            FormulaAst::Mul(l, r) => {
                l.fmt_child(f, self.precedence(), false)?;
                write!(f, "*")?;
                r.fmt_child(f, self.precedence(), true)
            }
            FormulaAst::Div(l, r) => {
                l.fmt_child(f, self.precedence(), false)?;
                write!(f, "/")?;
                r.fmt_child(f, self.precedence(), true)
            }
        }
    }
}

impl fmt::Display for FormulaAst {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.fmt_node(f)
    }
}

/// Parse a formula: `+ - * /` with the usual precedence and left
/// associativity, unary minus, parentheses, and decimal literals with an
/// optional fraction part and an optional trailing `%` (scales by 0.01).
/// The Unicode variants `−` (minus), `×`, and `÷` are accepted.
pub fn parse_formula(text: &str) -> Result<FormulaAst, CalcError> {
    let mut parser = Parser::new(text);
    parser.skip_ws();
    if parser.at_end() {
        return Err(CalcError::Empty);
    }
    let ast = parser.expr()?;
    parser.skip_ws();
    if !parser.at_end() {
        return Err(parser.error("unexpected trailing input"));
    }
    Ok(ast)
}

/// Parse and evaluate a formula in one step.
pub fn evaluate_formula(text: &str) -> Result<Decimal, CalcError> {
    parse_formula(text)?.evaluate()
}

struct Parser<'a> {
    chars: Vec<char>,
    pos: usize,
    text: &'a str,
}

impl<'a> Parser<'a> {
    fn new(text: &'a str) -> Self {
        Parser {
            chars: text.chars().collect(),
            pos: 0,
            text,
        }
    }

    fn error(&self, message: impl Into<String>) -> CalcError {
        // Report a byte offset so the message can point into the original.
        let byte = self
            .text
            .char_indices()
            .nth(self.pos)
            .map(|(b, _)| b)
            .unwrap_or(self.text.len());
        CalcError::Syntax {
            position: byte,
            message: message.into(),
        }
    }

    fn at_end(&self) -> bool {
        self.pos >= self.chars.len()
    }

    fn peek(&self) -> Option<char> {
        self.chars.get(self.pos).copied()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek();
        if c.is_some() {
            self.pos += 1;
        }
        c
    }

    fn skip_ws(&mut self) {
        while self.peek().is_some_and(char::is_whitespace) {
            self.pos += 1;
        }
    }

    /// Next operator character, with Unicode arithmetic symbols folded to
    /// their ASCII equivalents.
    fn peek_op(&self) -> Option<char> {
        self.peek().map(|c| match c {
            '−' => '-',
            '×' => '*',
            '÷' => '/',
            other => other,
        })
    }

    fn expr(&mut self) -> Result<FormulaAst, CalcError> {
        let mut node = self.term()?;
        loop {
            self.skip_ws();
            match self.peek_op() {
                Some('+') => {
                    self.bump();
                    node = FormulaAst::Add(Box::new(node), Box::new(self.term()?));
                }
                Some('-') => {
                    self.bump();
                    node = FormulaAst::Sub(Box::new(node), Box::new(self.term()?));
                }
                _ => return Ok(node),
            }
        }
    }

    fn term(&mut self) -> Result<FormulaAst, CalcError> {
        let mut node = self.unary()?;
        loop {
            self.skip_ws();
            match self.peek_op() {
                Some('*') => {
                    self.bump();
                    node = FormulaAst::Mul(Box::new(node), Box::new(self.unary()?));
                }
                Some('/') => {
                    self.bump();
                    node = FormulaAst::Div(Box::new(node), Box::new(self.unary()?));
                }
                _ => return Ok(node),
            }
        }
    }

    fn unary(&mut self) -> Result<FormulaAst, CalcError> {
        self.skip_ws();
        if self.peek_op() == Some('-') {
            self.bump();
            return Ok(FormulaAst::Neg(Box::new(self.unary()?)));
        }
        self.primary()
    }

    fn primary(&mut self) -> Result<FormulaAst, CalcError> {
        self.skip_ws();
        match self.peek() {
            Some('(') => {
                self.bump();
                let inner = self.expr()?;
                self.skip_ws();
                if self.peek() != Some(')') {
                    return Err(self.error("expected closing parenthesis"));
                }
                self.bump();
                Ok(inner)
            }
            Some(c) if c.is_ascii_digit() => self.number(),
            Some(c) => Err(self.error(format!("unexpected character {c:?}"))),
            None => Err(self.error("unexpected end of formula")),
        }
    }

    fn number(&mut self) -> Result<FormulaAst, CalcError> {
        let mut literal = String::new();
        while self.peek().is_some_and(|c| c.is_ascii_digit()) {
            literal.push(self.bump().unwrap());
        }
        if self.peek() == Some('.') {
            literal.push('.');
            self.bump();
            let mut any = false;
            while self.peek().is_some_and(|c| c.is_ascii_digit()) {
                literal.push(self.bump().unwrap());
                any = true;
            }
            if !any {
                return Err(self.error("expected digits after decimal point"));
            }
        }
        let mut value: Decimal = literal.parse()?;
        if self.peek() == Some('%') {
            self.bump();
            value = value
                .div(&Decimal::from_str("100").expect("literal"))
                .expect("divisor is non-zero");
        }
        Ok(FormulaAst::Number(value))
    }
}
