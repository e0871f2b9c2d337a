//! Tokenization and URL normalization shared across modules.

use url::Url;

/// Splits on non-alphanumeric boundaries and lowercases every token.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Lowercase and strip everything that is not alphanumeric.
///
/// `Gene Names`, `gene_names` and `GeneNames` all normalize to `genenames`.
pub fn normalize_name(name: &str) -> String {
    name.chars()
        .filter(|c| c.is_alphanumeric())
        .flat_map(char::to_lowercase)
        .collect()
}

/// Parses an absolute URL, or a host-relative one such as `uniprot.org/help`
/// (which is read as `http://uniprot.org/help`).
pub fn parse_loose_url(raw: &str) -> Option<Url> {
    let raw = raw.trim();
    if raw.is_empty() || raw.chars().any(char::is_whitespace) {
        return None;
    }
    if let Ok(url) = Url::parse(raw) {
        return match url.scheme() {
            "http" | "https" if url.host_str().is_some() => Some(url),
            _ => None,
        };
    }
    let url = Url::parse(&format!("http://{raw}")).ok()?;
    let host = url.host_str()?;
    // a bare word is not a host
    if host.contains('.') || host == "localhost" {
        Some(url)
    } else {
        None
    }
}

/// Key used to compare source links: lowercase host without `www.`, plus the
/// path without a trailing slash.
pub fn link_key(raw: &str) -> Option<(String, String)> {
    let url = parse_loose_url(raw)?;
    let host = url.host_str()?.to_lowercase();
    let host = host.strip_prefix("www.").unwrap_or(&host).to_string();
    let path = url.path().trim_end_matches('/').to_string();
    Some((host, path))
}
