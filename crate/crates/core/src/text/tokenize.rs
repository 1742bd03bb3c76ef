/// Lowercases, splits on whitespace, then splits every punctuation
/// character into its own token.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for word in text.split_whitespace() {
        let mut current = String::new();
        for ch in word.chars() {
            if ch.is_ascii_punctuation() || (!ch.is_alphanumeric() && !ch.is_ascii()) {
                if !current.is_empty() {
                    out.push(std::mem::take(&mut current));
                }
                out.extend(ch.to_lowercase().map(String::from));
            } else {
                current.extend(ch.to_lowercase());
            }
        }
        if !current.is_empty() {
            out.push(current);
        }
    }
    out
}
