//! Extraction of fenced blocks from model replies.
//!
//! Agents instruct the model to answer inside one fenced block. Replies are
//! scanned for ```-fences; prose around them is ignored.

use serde::de::DeserializeOwned;

const FENCE: &str = "```";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FencedBlock<'a> {
    /// Info string after the opening fence, e.g. `json` or `python`.
    pub lang: &'a str,
    pub body: &'a str,
}

/// All closed fenced blocks in order of appearance. An unclosed trailing
/// fence is ignored.
pub fn fenced_blocks(text: &str) -> Vec<FencedBlock<'_>> {
    let mut blocks = Vec::new();
    let mut rest = text;
    while let Some(open) = find_fence_at_line_start(rest) {
        let after_open = &rest[open + FENCE.len()..];
        let info_end = after_open.find('\n').unwrap_or(after_open.len());
        let lang = after_open[..info_end].trim();
        if info_end == after_open.len() {
            break;
        }
        let body_start = &after_open[info_end + 1..];
        let Some(close) = find_fence_at_line_start(body_start) else {
            break;
        };
        let body = body_start[..close].strip_suffix('\n').unwrap_or(&body_start[..close]);
        blocks.push(FencedBlock { lang, body });
        let after_close = &body_start[close + FENCE.len()..];
        rest = match after_close.find('\n') {
            Some(nl) => &after_close[nl + 1..],
            None => "",
        };
    }
    blocks
}

fn find_fence_at_line_start(text: &str) -> Option<usize> {
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        let indent = line.len() - line.trim_start_matches([' ', '\t']).len();
        if line[indent..].starts_with(FENCE) {
            return Some(offset + indent);
        }
        offset += line.len();
    }
    None
}

/// First fenced block whose body deserializes as `T`. A reply with no
/// fences at all is tried as bare JSON.
pub fn first_json_block<T: DeserializeOwned>(text: &str) -> Option<T> {
    let blocks = fenced_blocks(text);
    if blocks.is_empty() {
        return serde_json::from_str(text.trim()).ok();
    }
    blocks.iter().find_map(|b| serde_json::from_str(b.body).ok())
}

/// First fenced block with a non-blank body whose language tag is not
/// `json`. Used for code replies.
pub fn first_code_block(text: &str) -> Option<&str> {
    fenced_blocks(text)
        .into_iter()
        .find(|b| !b.lang.eq_ignore_ascii_case("json") && !b.body.trim().is_empty())
        .map(|b| b.body)
}

/// Makes arbitrary text safe to embed in a prompt as a JSON string literal:
/// quotes and control characters are escaped by JSON, backticks are escaped
/// as ``` so no fence can appear inside the literal.
pub fn embed_literal(text: &str) -> String {
    let json = serde_json::to_string(text).expect("string serialization cannot fail");
    json.replace('`', "\\u0060")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use serde::Deserialize;

    #[derive(Debug, Deserialize, PartialEq)]
    struct Probe {
        a: u32,
    }

    #[test]
    fn extracts_blocks_and_ignores_prose() {
        let text = "Sure!\n```json\n{\"a\": 1}\n```\nand also\n```python\nprint(1)\n```\n";
        let blocks = fenced_blocks(text);
        assert_eq!(blocks.len(), 2);
        assert_eq!(blocks[0], FencedBlock { lang: "json", body: "{\"a\": 1}" });
        assert_eq!(blocks[1].body, "print(1)");
        assert_eq!(first_json_block::<Probe>(text), Some(Probe { a: 1 }));
        assert_eq!(first_code_block(text), Some("print(1)"));
    }

    #[test]
    fn skips_malformed_blocks() {
        let text = "```json\n{not json}\n```\n```json\n{\"a\": 7}\n```";
        assert_eq!(first_json_block::<Probe>(text), Some(Probe { a: 7 }));
    }

    #[test]
    fn bare_json_without_fences() {
        assert_eq!(first_json_block::<Probe>("  {\"a\": 3} "), Some(Probe { a: 3 }));
        assert_eq!(first_json_block::<Probe>("no json here"), None);
    }

    #[test]
    fn unclosed_fence_yields_nothing() {
        assert!(fenced_blocks("```python\nprint(1)\n").is_empty());
        assert_eq!(first_code_block("```python\n\n```"), None);
    }

    proptest! {
        #[test]
        fn embedded_literal_round_trips_without_fences(s in ".*") {
            let lit = embed_literal(&s);
            prop_assert!(!lit.contains('`'));
            prop_assert!(!lit.contains('\n'));
            let back: String = serde_json::from_str(&lit).unwrap();
            prop_assert_eq!(back, s);
        }
    }
}
