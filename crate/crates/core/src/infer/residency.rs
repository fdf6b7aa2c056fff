/// Private (anonymous) resident memory of this process in bytes, from
/// `RssAnon` in `/proc/self/status`. `None` where that file is unavailable.
pub fn private_resident_bytes() -> Option<u64> {
    let status = std::fs::read_to_string("/proc/self/status").ok()?;
    parse_rss_anon(&status)
}

fn parse_rss_anon(status: &str) -> Option<u64> {
    let line = status.lines().find(|l| l.starts_with("RssAnon:"))?;
    let kb: u64 = line.split_whitespace().nth(1)?.parse().ok()?;
    Some(kb * 1024)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_status_line() {
        let s = "Name:\tx\nRssAnon:\t    1234 kB\nRssFile:\t 9 kB\n";
        assert_eq!(parse_rss_anon(s), Some(1234 * 1024));
        assert_eq!(parse_rss_anon("Name: x\n"), None);
    }

    #[test]
    #[cfg(target_os = "linux")]
    fn probe_grows_with_allocation() {
        let before = private_resident_bytes().unwrap();
        let big = std::hint::black_box(vec![1u8; 64 << 20]);
        let after = private_resident_bytes().unwrap();
        assert!(after > before + (32 << 20), "{before} -> {after}");
        drop(big);
    }
}
