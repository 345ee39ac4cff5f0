use super::{GrammarError, Location};

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) enum Tok {
    Ident(String),
    Capture(String),
    Str(String),
    Assign,
    Arrow,
    Semi,
    LParen,
    RParen,
    Comma,
    Bar,
    At,
    Dot,
    LBrace,
    RBrace,
    LBracket,
    RBracket,
    Eof,
}

impl Tok {
    pub(crate) fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("`{s}`"),
            Tok::Capture(s) => format!("`${s}`"),
            Tok::Str(s) => format!("\"{s}\""),
            Tok::Assign => "`:=`".into(),
            Tok::Arrow => "`=>`".into(),
            Tok::Semi => "`;`".into(),
            Tok::LParen => "`(`".into(),
            Tok::RParen => "`)`".into(),
            Tok::Comma => "`,`".into(),
            Tok::Bar => "`|`".into(),
            Tok::At => "`@`".into(),
            Tok::Dot => "`.`".into(),
            Tok::LBrace => "`{`".into(),
            Tok::RBrace => "`}`".into(),
            Tok::LBracket => "`[`".into(),
            Tok::RBracket => "`]`".into(),
            Tok::Eof => "end of input".into(),
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Token {
    pub tok: Tok,
    pub line: u32,
    pub col: u32,
}

fn is_ident(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_'
}

/// Splits source text into tokens. `#` and `//` start line comments.
pub(crate) fn lex(file: &str, src: &str) -> Result<Vec<Token>, GrammarError> {
    let chars: Vec<char> = src.chars().collect();
    let (mut i, mut line, mut col) = (0usize, 1u32, 1u32);
    let mut out = Vec::new();
    let err = |line, col, message: String| GrammarError::Parse {
        loc: Location {
            file: file.to_string(),
            line,
            col,
        },
        message,
    };
    while i < chars.len() {
        let c = chars[i];
        let (tl, tc) = (line, col);
        let advance = |n: usize, i: &mut usize, col: &mut u32| {
            *i += n;
            *col += n as u32;
        };
        if c == '\n' {
            i += 1;
            line += 1;
            col = 1;
            continue;
        }
        if c.is_whitespace() {
            advance(1, &mut i, &mut col);
            continue;
        }
        if c == '#' || (c == '/' && chars.get(i + 1) == Some(&'/')) {
            while i < chars.len() && chars[i] != '\n' {
                i += 1;
            }
            continue;
        }
        let two: String = chars[i..(i + 2).min(chars.len())].iter().collect();
        let tok = match (c, two.as_str()) {
            (_, ":=") => {
                advance(2, &mut i, &mut col);
                Tok::Assign
            }
            (_, "=>") => {
                advance(2, &mut i, &mut col);
                Tok::Arrow
            }
            ('"', _) => {
                advance(1, &mut i, &mut col);
                let mut s = String::new();
                loop {
                    match chars.get(i) {
                        None | Some('\n') => {
                            return Err(err(tl, tc, "unterminated string literal".into()))
                        }
                        Some('"') => {
                            advance(1, &mut i, &mut col);
                            break;
                        }
                        Some('\\') => match chars.get(i + 1) {
                            Some(&e @ ('"' | '\\')) => {
                                s.push(e);
                                advance(2, &mut i, &mut col);
                            }
                            _ => return Err(err(line, col, "invalid escape sequence".into())),
                        },
                        Some(&ch) => {
                            s.push(ch);
                            advance(1, &mut i, &mut col);
                        }
                    }
                }
                Tok::Str(s)
            }
            ('$', _) => {
                advance(1, &mut i, &mut col);
                let start = i;
                while i < chars.len() && is_ident(chars[i]) {
                    advance(1, &mut i, &mut col);
                }
                if start == i {
                    return Err(err(tl, tc, "expected a capture name after `$`".into()));
                }
                Tok::Capture(chars[start..i].iter().collect())
            }
            (c, _) if is_ident(c) => {
                let start = i;
                while i < chars.len() && is_ident(chars[i]) {
                    advance(1, &mut i, &mut col);
                }
                Tok::Ident(chars[start..i].iter().collect())
            }
            (c, _) => {
                let t = match c {
                    ';' => Tok::Semi,
                    '(' => Tok::LParen,
                    ')' => Tok::RParen,
                    ',' => Tok::Comma,
                    '|' => Tok::Bar,
                    '@' => Tok::At,
                    '.' => Tok::Dot,
                    '{' => Tok::LBrace,
                    '}' => Tok::RBrace,
                    '[' => Tok::LBracket,
                    ']' => Tok::RBracket,
                    other => return Err(err(tl, tc, format!("unexpected character `{other}`"))),
                };
                advance(1, &mut i, &mut col);
                t
            }
        };
        out.push(Token {
            tok,
            line: tl,
            col: tc,
        });
    }
    out.push(Token {
        tok: Tok::Eof,
        line,
        col,
    });
    Ok(out)
}
