use std::ops::Range;

/// One word of a document.
///
/// `span` is a half-open byte range into the document text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Word {
    pub surface: String,
    pub normal: String,
    pub span: Range<usize>,
    pub index: usize,
}

impl Word {
    /// Single non-alphanumeric character words.
    pub fn is_punct(&self) -> bool {
        is_punct_surface(&self.surface)
    }
}

pub(crate) fn is_punct_surface(surface: &str) -> bool {
    let mut chars = surface.chars();
    match (chars.next(), chars.next()) {
        (Some(c), None) => !c.is_alphanumeric(),
        _ => false,
    }
}

/// Case-folding used for all identifier matching.
pub fn normalize(surface: &str) -> String {
    surface.to_lowercase()
}

fn is_apostrophe(c: char) -> bool {
    matches!(c, '\'' | '\u{2019}')
}

/// Split text into words: maximal alphanumeric runs (an apostrophe between
/// two alphanumerics stays inside the run), every other non-whitespace
/// character on its own.
pub fn tokenize(text: &str) -> Vec<Word> {
    let mut words = Vec::new();
    let mut iter = text.char_indices().peekable();
    let mut push = |start: usize, end: usize| {
        let surface = &text[start..end];
        words.push(Word {
            surface: surface.to_string(),
            normal: normalize(surface),
            span: start..end,
            index: words.len(),
        });
    };

    while let Some((start, c)) = iter.next() {
        if c.is_whitespace() {
            continue;
        }
        if !c.is_alphanumeric() {
            push(start, start + c.len_utf8());
            continue;
        }
        let mut end = start + c.len_utf8();
        while let Some(&(pos, next)) = iter.peek() {
            if next.is_alphanumeric() {
                end = pos + next.len_utf8();
                iter.next();
            } else if is_apostrophe(next) {
                let after = text[pos + next.len_utf8()..].chars().next();
                if after.is_some_and(char::is_alphanumeric) {
                    end = pos + next.len_utf8();
                    iter.next();
                } else {
                    break;
                }
            } else {
                break;
            }
        }
        push(start, end);
    }
    words
}
