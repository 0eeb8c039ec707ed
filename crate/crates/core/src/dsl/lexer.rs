use std::fmt;

use num_bigint::BigInt;

use super::DslError;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Tok {
    Ident(String),
    Int(BigInt),
    Sym(String),
    Assign,
    Colon,
    Semi,
    Comma,
    Dot,
    Slash,
    LParen,
    RParen,
    LBrace,
    RBrace,
    Eq,
    Lt,
    Plus,
    Minus,
    Eof,
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Ident(s) => write!(f, "`{s}`"),
            Tok::Int(i) => write!(f, "`{i}`"),
            Tok::Sym(s) => write!(f, "`'{s}`"),
            Tok::Assign => f.write_str("`:=`"),
            Tok::Colon => f.write_str("`:`"),
            Tok::Semi => f.write_str("`;`"),
            Tok::Comma => f.write_str("`,`"),
            Tok::Dot => f.write_str("`.`"),
            Tok::Slash => f.write_str("`/`"),
            Tok::LParen => f.write_str("`(`"),
            Tok::RParen => f.write_str("`)`"),
            Tok::LBrace => f.write_str("`{`"),
            Tok::RBrace => f.write_str("`}`"),
            Tok::Eq => f.write_str("`=`"),
            Tok::Lt => f.write_str("`<`"),
            Tok::Plus => f.write_str("`+`"),
            Tok::Minus => f.write_str("`-`"),
            Tok::Eof => f.write_str("end of input"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Token {
    pub tok: Tok,
    pub line: usize,
    pub col: usize,
}

pub fn lex(src: &str) -> Result<Vec<Token>, DslError> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0, 1, 1);
    while i < chars.len() {
        let c = chars[i];
        let (start_line, start_col) = (line, col);
        if c == '\n' {
            i += 1;
            line += 1;
            col = 1;
            continue;
        }
        if c.is_whitespace() {
            i += 1;
            col += 1;
            continue;
        }
        if c == '#' || (c == '/' && chars.get(i + 1) == Some(&'/')) {
            while i < chars.len() && chars[i] != '\n' {
                i += 1;
            }
            continue;
        }
        let tok = if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            col += i - start;
            Tok::Ident(chars[start..i].iter().collect())
        } else if c.is_ascii_digit() {
            let start = i;
            while i < chars.len() && chars[i].is_ascii_digit() {
                i += 1;
            }
            col += i - start;
            let text: String = chars[start..i].iter().collect();
            Tok::Int(text.parse().unwrap())
        } else if c == '\'' {
            let start = i + 1;
            i += 1;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            col += i + 1 - start;
            let name: String = chars[start..i].iter().collect();
            if !crate::value::is_ident(&name) {
                return Err(DslError::parse(start_line, start_col, "expected a symbol name after `'`"));
            }
            Tok::Sym(name)
        } else if c == ':' && chars.get(i + 1) == Some(&'=') {
            i += 2;
            col += 2;
            Tok::Assign
        } else {
            let t = match c {
                ':' => Tok::Colon,
                ';' => Tok::Semi,
                ',' => Tok::Comma,
                '.' => Tok::Dot,
                '/' => Tok::Slash,
                '(' => Tok::LParen,
                ')' => Tok::RParen,
                '{' => Tok::LBrace,
                '}' => Tok::RBrace,
                '=' => Tok::Eq,
                '<' => Tok::Lt,
                '+' => Tok::Plus,
                '-' => Tok::Minus,
                _ => return Err(DslError::parse(line, col, format!("unexpected character `{c}`"))),
            };
            i += 1;
            col += 1;
            t
        };
        out.push(Token {
            tok,
            line: start_line,
            col: start_col,
        });
    }
    out.push(Token { tok: Tok::Eof, line, col });
    Ok(out)
}
