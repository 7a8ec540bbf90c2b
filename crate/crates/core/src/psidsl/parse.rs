//! Recursive-descent parser for curvature expressions.
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := unary (('*' | '/') unary)*
//! unary   := '-' unary | power
//! power   := primary ('^' unary)?
//! primary := number | variable | func '(' expr (',' expr)* ')' | '(' expr ')'
//! ```

use super::{BinOp, Expr, Func, PsiError};

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(char),
    LParen,
    RParen,
    Comma,
    End,
}

struct Lexer<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Lexer<'a> {
    fn tokens(src: &'a str) -> Result<Vec<(Tok, usize)>, PsiError> {
        let mut lx = Lexer { src, pos: 0 };
        let mut out = Vec::new();
        loop {
            let t = lx.next()?;
            let end = t.0 == Tok::End;
            out.push(t);
            if end {
                return Ok(out);
            }
        }
    }

    fn peek(&self) -> Option<char> {
        self.src[self.pos..].chars().next()
    }

    fn next(&mut self) -> Result<(Tok, usize), PsiError> {
        while let Some(c) = self.peek() {
            if c.is_whitespace() {
                self.pos += c.len_utf8();
            } else {
                break;
            }
        }
        let start = self.pos;
        let Some(c) = self.peek() else {
            return Ok((Tok::End, start));
        };
        let tok = match c {
            '0'..='9' | '.' => return self.number(start),
            'a'..='z' | 'A'..='Z' | '_' => {
                while matches!(self.peek(), Some(c) if c.is_ascii_alphanumeric() || c == '_') {
                    self.pos += 1;
                }
                return Ok((Tok::Ident(self.src[start..self.pos].to_string()), start));
            }
            '+' | '-' | '*' | '/' | '^' => Tok::Op(c),
            '(' => Tok::LParen,
            ')' => Tok::RParen,
            ',' => Tok::Comma,
            other => {
                return Err(PsiError::Syntax {
                    offset: start,
                    message: format!("unexpected character '{other}'"),
                })
            }
        };
        self.pos += 1;
        Ok((tok, start))
    }

    fn number(&mut self, start: usize) -> Result<(Tok, usize), PsiError> {
        let bytes = self.src.as_bytes();
        let digits = |p: &mut usize| {
            while *p < bytes.len() && bytes[*p].is_ascii_digit() {
                *p += 1;
            }
        };
        let mut p = self.pos;
        digits(&mut p);
        if p < bytes.len() && bytes[p] == b'.' {
            p += 1;
            digits(&mut p);
        }
        if p < bytes.len() && (bytes[p] == b'e' || bytes[p] == b'E') {
            let mut q = p + 1;
            if q < bytes.len() && (bytes[q] == b'+' || bytes[q] == b'-') {
                q += 1;
            }
            let before = q;
            digits(&mut q);
            if q > before {
                p = q;
            }
        }
        let text = &self.src[start..p];
        let value: f64 = text.parse().map_err(|_| PsiError::Syntax {
            offset: start,
            message: format!("malformed number '{text}'"),
        })?;
        self.pos = p;
        Ok((Tok::Num(value), start))
    }
}

pub(super) struct Parser {
    toks: Vec<(Tok, usize)>,
    at: usize,
}

impl Parser {
    pub(super) fn parse(src: &str) -> Result<Expr, PsiError> {
        let mut p = Parser { toks: Lexer::tokens(src)?, at: 0 };
        let e = p.expr()?;
        match p.peek() {
            Tok::End => Ok(e),
            t => Err(p.error(format!("unexpected {}", describe(t)))),
        }
    }

    fn peek(&self) -> &Tok {
        &self.toks[self.at].0
    }

    fn offset(&self) -> usize {
        self.toks[self.at].1
    }

    fn bump(&mut self) -> (Tok, usize) {
        let t = self.toks[self.at].clone();
        if t.0 != Tok::End {
            self.at += 1;
        }
        t
    }

    fn error(&self, message: String) -> PsiError {
        PsiError::Syntax { offset: self.offset(), message }
    }

    fn expr(&mut self) -> Result<Expr, PsiError> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Tok::Op('+') => BinOp::Add,
                Tok::Op('-') => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.term()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn term(&mut self) -> Result<Expr, PsiError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Tok::Op('*') => BinOp::Mul,
                Tok::Op('/') => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.unary()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn unary(&mut self) -> Result<Expr, PsiError> {
        if *self.peek() == Tok::Op('-') {
            self.bump();
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, PsiError> {
        let base = self.primary()?;
        if *self.peek() == Tok::Op('^') {
            self.bump();
            let exp = self.unary()?;
            return Ok(Expr::Bin(BinOp::Pow, Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn primary(&mut self) -> Result<Expr, PsiError> {
        let (tok, offset) = self.bump();
        match tok {
            Tok::Num(v) => Ok(Expr::Num(v)),
            Tok::LParen => {
                let e = self.expr()?;
                self.expect_rparen()?;
                Ok(e)
            }
            Tok::Ident(name) => match name.as_str() {
                "nx" => Ok(Expr::Var(0)),
                "ny" => Ok(Expr::Var(1)),
                "nz" => Ok(Expr::Var(2)),
                _ => {
                    let func = Func::from_name(&name)
                        .ok_or(PsiError::UnknownIdentifier { name: name.clone(), offset })?;
                    if *self.peek() != Tok::LParen {
                        return Err(self.error(format!("expected '(' after {name}")));
                    }
                    self.bump();
                    let mut args = vec![self.expr()?];
                    while *self.peek() == Tok::Comma {
                        self.bump();
                        args.push(self.expr()?);
                    }
                    self.expect_rparen()?;
                    if args.len() != func.arity() {
                        return Err(PsiError::Arity {
                            name,
                            offset,
                            expected: func.arity(),
                            got: args.len(),
                        });
                    }
                    Ok(Expr::Call(func, args))
                }
            },
            t => Err(PsiError::Syntax {
                offset,
                message: format!("expected a value, found {}", describe(&t)),
            }),
        }
    }

    fn expect_rparen(&mut self) -> Result<(), PsiError> {
        match self.peek() {
            Tok::RParen => {
                self.bump();
                Ok(())
            }
            t => Err(self.error(format!("expected ')', found {}", describe(t)))),
        }
    }
}

fn describe(t: &Tok) -> String {
    match t {
        Tok::Num(v) => format!("number {v}"),
        Tok::Ident(s) => format!("identifier '{s}'"),
        Tok::Op(c) => format!("'{c}'"),
        Tok::LParen => "'('".into(),
        Tok::RParen => "')'".into(),
        Tok::Comma => "','".into(),
        Tok::End => "end of input".into(),
    }
}
