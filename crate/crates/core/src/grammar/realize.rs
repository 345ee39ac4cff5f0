/// Joins surface pieces with single spaces. Literal pieces starting with
/// `.`, `,`, `?` or `!` attach to the previous piece, and a literal ending in
/// the article "a" becomes "an" before a vowel-initial piece.
pub fn realize<'a>(pieces: impl IntoIterator<Item = (&'a str, bool)>) -> String {
    let mut out = String::new();
    let mut prev_literal = false;
    for (piece, literal) in pieces {
        if piece.is_empty() {
            continue;
        }
        if out.is_empty() {
            out.push_str(piece);
            prev_literal = literal;
            continue;
        }
        let first = piece.chars().next().unwrap();
        if literal && matches!(first, '.' | ',' | '?' | '!') {
            out.push_str(piece);
        } else {
            if prev_literal && "aeiouAEIOU".contains(first) && ends_with_article(&out) {
                out.push('n');
            }
            out.push(' ');
            out.push_str(piece);
        }
        prev_literal = literal;
    }
    out
}

/// Upper-cases the first letter of the utterance and of every sentence
/// following `.`, `?` or `!` and a space.
pub fn sentence_case(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut start = true;
    let mut prev = ' ';
    for c in s.chars() {
        if start && c.is_alphabetic() {
            out.extend(c.to_uppercase());
            start = false;
        } else {
            if !c.is_whitespace() {
                start = false;
            }
            if c == ' ' && matches!(prev, '.' | '?' | '!') {
                start = true;
            }
            out.push(c);
        }
        prev = c;
    }
    out
}

fn ends_with_article(s: &str) -> bool {
    let last = s.rsplit(' ').next().unwrap_or("");
    last == "a" || last == "A"
}
