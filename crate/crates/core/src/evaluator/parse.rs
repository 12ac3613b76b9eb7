//! Text grammar:
//!
//! ```text
//! POINT attr=val [attr=val ...]
//! GROUP BY a1[,a2 ...] AGG count|sum:attr|avg:attr [WHERE cond [AND cond ...]]
//! cond := attr = val | attr IN (v1, v2 ...) | attr BETWEEN lo AND hi
//!       | attr (< | <= | > | >=) number
//! ```
//!
//! Keywords are case-insensitive. Values may be double-quoted. Ranges compare
//! bucket representatives when the bounds are numbers, otherwise domain order.

use super::{representatives, AggFn, Filter, Query};
use crate::error::{Error, Result};
use crate::schema::Schema;

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Word(String),
    Quoted(String),
    Sym(&'static str),
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    col: usize,
}

fn parse_err(column: usize, message: impl Into<String>) -> Error {
    Error::Parse { column, message: message.into() }
}

fn lex(text: &str) -> Result<Vec<Token>> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let col = i + 1;
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        let two: String = chars[i..chars.len().min(i + 2)].iter().collect();
        if two == "<=" || two == ">=" {
            out.push(Token { tok: Tok::Sym(if two == "<=" { "<=" } else { ">=" }), col });
            i += 2;
            continue;
        }
        let sym = match c {
            '=' => Some("="),
            ',' => Some(","),
            '(' => Some("("),
            ')' => Some(")"),
            '<' => Some("<"),
            '>' => Some(">"),
            _ => None,
        };
        if let Some(s) = sym {
            out.push(Token { tok: Tok::Sym(s), col });
            i += 1;
            continue;
        }
        if c == '"' {
            let mut s = String::new();
            let mut j = i + 1;
            loop {
                match chars.get(j) {
                    None => return Err(parse_err(col, "unterminated quoted value")),
                    Some('"') if chars.get(j + 1) == Some(&'"') => {
                        s.push('"');
                        j += 2;
                    }
                    Some('"') => break,
                    Some(&ch) => {
                        s.push(ch);
                        j += 1;
                    }
                }
            }
            out.push(Token { tok: Tok::Quoted(s), col });
            i = j + 1;
            continue;
        }
        let start = i;
        while i < chars.len() && !chars[i].is_whitespace() && !"=,()<>\"".contains(chars[i]) {
            i += 1;
        }
        out.push(Token { tok: Tok::Word(chars[start..i].iter().collect()), col });
    }
    Ok(out)
}

struct Parser<'a> {
    toks: Vec<Token>,
    pos: usize,
    end_col: usize,
    schema: &'a Schema,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&Token> {
        self.toks.get(self.pos)
    }

    fn col(&self) -> usize {
        self.peek().map_or(self.end_col, |t| t.col)
    }

    fn next(&mut self) -> Option<Token> {
        let t = self.toks.get(self.pos).cloned();
        self.pos += 1;
        t
    }

    fn at_keyword(&self, kw: &str) -> bool {
        matches!(self.peek(), Some(Token { tok: Tok::Word(w), .. }) if w.eq_ignore_ascii_case(kw))
    }

    fn keyword(&mut self, kw: &str) -> Result<()> {
        if self.at_keyword(kw) {
            self.pos += 1;
            Ok(())
        } else {
            Err(parse_err(self.col(), format!("expected {kw}")))
        }
    }

    fn at_sym(&self, s: &str) -> bool {
        matches!(self.peek(), Some(Token { tok: Tok::Sym(x), .. }) if *x == s)
    }

    fn sym(&mut self, s: &str) -> Result<()> {
        if self.at_sym(s) {
            self.pos += 1;
            Ok(())
        } else {
            Err(parse_err(self.col(), format!("expected `{s}`")))
        }
    }

    fn word(&mut self, what: &str) -> Result<(String, usize)> {
        let col = self.col();
        match self.next() {
            Some(Token { tok: Tok::Word(w), .. }) => Ok((w, col)),
            _ => Err(parse_err(col, format!("expected {what}"))),
        }
    }

    fn value(&mut self) -> Result<(String, usize)> {
        let col = self.col();
        match self.next() {
            Some(Token { tok: Tok::Word(w) | Tok::Quoted(w), .. }) => Ok((w, col)),
            _ => Err(parse_err(col, "expected a value")),
        }
    }

    fn attr(&mut self) -> Result<usize> {
        let (name, _) = self.word("an attribute name")?;
        self.schema.index_of(&name)
    }

    fn finish(&self) -> Result<()> {
        match self.peek() {
            None => Ok(()),
            Some(t) => Err(parse_err(t.col, "unexpected trailing input")),
        }
    }

    fn point(&mut self) -> Result<Query> {
        let mut assignment = Vec::new();
        while self.peek().is_some() {
            let a = self.attr()?;
            self.sym("=")?;
            let (v, _) = self.value()?;
            assignment.push((a, self.schema.resolve_value(a, &v)?));
        }
        if assignment.is_empty() {
            return Err(parse_err(self.col(), "POINT needs at least one attr=val"));
        }
        let mut seen = std::collections::BTreeSet::new();
        for &(a, _) in &assignment {
            if !seen.insert(a) {
                return Err(Error::InvalidInput(format!("attribute `{}` given twice", self.schema.name(a))));
            }
        }
        Query::point(self.schema, &assignment)
    }

    fn agg(&mut self) -> Result<AggFn> {
        let (w, col) = self.word("count, sum:attr or avg:attr")?;
        let lower = w.to_ascii_lowercase();
        if lower == "count" {
            return Ok(AggFn::Count);
        }
        let (f, arg) = lower
            .split_once(':')
            .map(|(f, _)| (f.to_string(), &w[f.len() + 1..]))
            .ok_or_else(|| parse_err(col, "expected count, sum:attr or avg:attr"))?;
        if arg.is_empty() {
            return Err(parse_err(col + f.len() + 1, "expected an attribute name"));
        }
        let a = self.schema.index_of(arg)?;
        match f.as_str() {
            "sum" => Ok(AggFn::Sum(a)),
            "avg" => Ok(AggFn::Avg(a)),
            _ => Err(parse_err(col, format!("unknown aggregate `{f}`"))),
        }
    }

    fn number(&self, raw: &str, col: usize) -> Result<f64> {
        raw.trim().parse().map_err(|_| parse_err(col, format!("expected a number, found `{raw}`")))
    }

    fn condition(&mut self) -> Result<Filter> {
        let a = self.attr()?;
        let card = self.schema.cardinality(a);
        let op_col = self.col();
        let allowed = if self.at_sym("=") {
            self.pos += 1;
            let (v, _) = self.value()?;
            let idx = self.schema.resolve_value(a, &v)?;
            (0..card).map(|i| i == idx).collect()
        } else if self.at_keyword("in") {
            self.pos += 1;
            self.sym("(")?;
            let mut mask = vec![false; card];
            loop {
                let (v, _) = self.value()?;
                mask[self.schema.resolve_value(a, &v)?] = true;
                if self.at_sym(",") {
                    self.pos += 1;
                } else {
                    break;
                }
            }
            self.sym(")")?;
            mask
        } else if self.at_keyword("between") {
            self.pos += 1;
            let (lo, _) = self.value()?;
            self.keyword("and")?;
            let (hi, _) = self.value()?;
            match (lo.trim().parse::<f64>(), hi.trim().parse::<f64>()) {
                (Ok(l), Ok(h)) if self.schema.attributes[a].domain.representative(0).is_some() => {
                    representatives(self.schema, a)?.iter().map(|&r| l <= r && r <= h).collect()
                }
                _ => {
                    let l = self.schema.resolve_value(a, &lo)?;
                    let h = self.schema.resolve_value(a, &hi)?;
                    (0..card).map(|i| l <= i && i <= h).collect()
                }
            }
        } else {
            let op = match self.next() {
                Some(Token { tok: Tok::Sym(s @ ("<" | "<=" | ">" | ">=")), .. }) => s,
                _ => return Err(parse_err(op_col, "expected =, IN, BETWEEN or a comparison")),
            };
            let (v, col) = self.value()?;
            let x = self.number(&v, col)?;
            let reps = representatives(self.schema, a)?;
            reps.iter()
                .map(|&r| match op {
                    "<" => r < x,
                    "<=" => r <= x,
                    ">" => r > x,
                    _ => r >= x,
                })
                .collect()
        };
        Ok(Filter { attr: a, allowed })
    }

    fn group_by(&mut self) -> Result<Query> {
        self.keyword("by")?;
        let mut attrs = vec![self.attr()?];
        while self.at_sym(",") {
            self.pos += 1;
            attrs.push(self.attr()?);
        }
        self.keyword("agg")?;
        let agg = self.agg()?;
        let mut filters = Vec::new();
        if self.at_keyword("where") {
            self.pos += 1;
            filters.push(self.condition()?);
            while self.at_keyword("and") {
                self.pos += 1;
                filters.push(self.condition()?);
            }
        }
        self.finish()?;
        Query::group_by(self.schema, attrs, agg, filters)
    }
}

/// Parse a query against `schema`. Syntax errors carry a 1-based column;
/// unknown attributes and values surface as data errors.
pub fn parse_query(text: &str, schema: &Schema) -> Result<Query> {
    let toks = lex(text)?;
    let mut p = Parser { toks, pos: 0, end_col: text.chars().count() + 1, schema };
    if p.at_keyword("point") {
        p.pos += 1;
        p.point()
    } else if p.at_keyword("group") {
        p.pos += 1;
        p.group_by()
    } else {
        Err(parse_err(p.col(), "expected POINT or GROUP BY"))
    }
}
