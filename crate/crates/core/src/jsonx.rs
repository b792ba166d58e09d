//! Extraction of fenced JSON objects from model replies.
//!
//! Model templates ask for a ```json fenced block; replies may carry
//! reasoning text and multiple fences, so the last fenced block wins.

/// Return the contents of the last fenced code block (```json … ``` or
/// bare ``` … ```), if any.
pub fn last_fenced_block(raw: &str) -> Option<String> {
    let mut blocks = Vec::new();
    let mut rest = raw;
    while let Some(start) = rest.find("```") {
        let after = &rest[start + 3..];
        let body_start = match after.find('\n') {
            // Language tag (e.g. "json") on the fence line.
            Some(nl) if after[..nl].trim().chars().all(|c| c.is_ascii_alphanumeric()) => nl + 1,
            _ => 0,
        };
        let body = &after[body_start..];
        match body.find("```") {
            Some(end) => {
                blocks.push(body[..end].trim().to_string());
                rest = &body[end + 3..];
            }
            None => break,
        }
    }
    blocks.pop()
}

/// Parse the last fenced block of a reply as a JSON value.
pub fn last_fenced_json(raw: &str) -> Option<serde_json::Value> {
    let block = last_fenced_block(raw)?;
    serde_json::from_str(&block).ok()
}
