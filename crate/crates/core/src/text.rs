//! Shared text utilities: tokenizers, sentence segmentation and the
//! heading-line grammar used by structured answers.

/// Anything that can cut a string into tokens.
pub trait Tokenize: Sync {
    fn tokenize(&self, text: &str) -> Vec<String>;

    fn count(&self, text: &str) -> usize {
        self.tokenize(text).len()
    }
}

/// Splits on unicode whitespace and keeps tokens verbatim.
///
/// This is the counting tokenizer used for corpus and plan statistics.
#[derive(Debug, Clone, Copy, Default)]
pub struct WhitespaceTokenizer;

impl Tokenize for WhitespaceTokenizer {
    fn tokenize(&self, text: &str) -> Vec<String> {
        text.split_whitespace().map(str::to_owned).collect()
    }

    fn count(&self, text: &str) -> usize {
        text.split_whitespace().count()
    }
}

/// Lowercases and keeps maximal runs of alphanumeric characters.
///
/// Used as the retrieval analyzer and as the overlap tokenizer of the
/// evaluation metrics, so punctuation and heading markers never count as
/// matches.
#[derive(Debug, Clone, Copy, Default)]
pub struct WordTokenizer;

impl Tokenize for WordTokenizer {
    fn tokenize(&self, text: &str) -> Vec<String> {
        analyze(text)
    }
}

/// Lowercase + split on anything that is not alphanumeric.
pub fn analyze(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Collapses every whitespace run to a single space and trims both ends.
pub fn normalize_whitespace(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn is_terminator(c: char) -> bool {
    matches!(c, '.' | '!' | '?')
}

/// Byte offset just past the first sentence terminator that is followed by
/// whitespace or the end of the string.
fn first_boundary(text: &str) -> Option<usize> {
    let mut chars = text.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        if is_terminator(c) {
            match chars.peek() {
                None => return Some(i + c.len_utf8()),
                Some((_, next)) if next.is_whitespace() => return Some(i + c.len_utf8()),
                _ => {}
            }
        }
    }
    None
}

/// Prefix of `text` up to and including the first terminator (`.`, `!`,
/// `?`) that is followed by whitespace or end-of-string. Text without such
/// a terminator is returned unchanged.
///
/// Abbreviations split early: `"E. coli is ..."` yields `"E."`.
pub fn first_sentence(text: &str) -> &str {
    match first_boundary(text) {
        Some(end) => &text[..end],
        None => text,
    }
}

/// Segments a single line of prose with the same rule as [`first_sentence`].
pub fn split_line_sentences(line: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut rest = line.trim_start();
    while !rest.is_empty() {
        match first_boundary(rest) {
            Some(end) => {
                let sentence = rest[..end].trim();
                if !sentence.is_empty() {
                    out.push(sentence);
                }
                rest = rest[end..].trim_start();
            }
            None => {
                let sentence = rest.trim();
                if !sentence.is_empty() {
                    out.push(sentence);
                }
                break;
            }
        }
    }
    out
}

/// Parses a heading line `#{level} text`. Returns `None` for body lines.
pub fn parse_heading_line(line: &str) -> Option<(u32, &str)> {
    let line = line.strip_suffix('\r').unwrap_or(line);
    let hashes = line.bytes().take_while(|b| *b == b'#').count();
    if hashes == 0 {
        return None;
    }
    let rest = line[hashes..].strip_prefix(' ')?;
    let text = rest.trim();
    if text.is_empty() {
        return None;
    }
    Some((hashes as u32, text))
}

/// Renders a heading line.
pub fn heading_line(level: u32, text: &str) -> String {
    let mut line = "#".repeat(level as usize);
    line.push(' ');
    line.push_str(text);
    line
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_sentence_cases() {
        assert_eq!(first_sentence("Hello world. Second sentence."), "Hello world.");
        assert_eq!(first_sentence("No terminator here"), "No terminator here");
        // known limitation: abbreviations end the sentence
        assert_eq!(first_sentence("E. coli is a bacterium. More."), "E.");
        assert_eq!(first_sentence("Version 2.5 is out! Yes."), "Version 2.5 is out!");
        assert_eq!(first_sentence("Really?"), "Really?");
    }

    #[test]
    fn first_sentence_is_idempotent() {
        for s in ["a. b", "no end", "x? y! z.", "3.14 is pi. ok"] {
            let once = first_sentence(s);
            assert_eq!(first_sentence(once), once);
        }
    }

    #[test]
    fn line_segmentation() {
        assert_eq!(split_line_sentences("A b. C d."), vec!["A b.", "C d."]);
        assert!(split_line_sentences("").is_empty());
        assert_eq!(split_line_sentences("  one  two "), vec!["one  two"]);
    }

    #[test]
    fn heading_grammar() {
        assert_eq!(parse_heading_line("# A"), Some((1, "A")));
        assert_eq!(parse_heading_line("### Deep one"), Some((3, "Deep one")));
        assert_eq!(parse_heading_line("#NoSpace"), None);
        assert_eq!(parse_heading_line("# "), None);
        assert_eq!(parse_heading_line("body # text"), None);
        assert_eq!(heading_line(2, "B"), "## B");
    }

    #[test]
    fn analyzer_lowercases_and_strips_punctuation() {
        assert_eq!(analyze("Cat cat."), vec!["cat", "cat"]);
        assert_eq!(analyze("# History, of Rome!"), vec!["history", "of", "rome"]);
        assert_eq!(WhitespaceTokenizer.count("# History\nRome fell."), 4);
    }
}
