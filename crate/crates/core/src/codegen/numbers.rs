//! English number words for 0–999, one-decimal style fractions and signs.
//!
//! This table is shared by the reference argument extractor and the dataset
//! generator, so everything the generator can render the extractor can read.

pub const UNITS: [&str; 10] = [
    "zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine",
];
pub const TEENS: [&str; 10] = [
    "ten", "eleven", "twelve", "thirteen", "fourteen", "fifteen", "sixteen", "seventeen",
    "eighteen", "nineteen",
];
/// Index `i` holds the word for `10 * i`; entries 0 and 1 are unused.
pub const TENS: [&str; 10] = [
    "", "", "twenty", "thirty", "forty", "fifty", "sixty", "seventy", "eighty", "ninety",
];

pub const HUNDRED: &str = "hundred";
pub const POINT: &str = "point";
pub const NEGATIVES: [&str; 2] = ["minus", "negative"];

fn unit_value(word: &str) -> Option<u32> {
    UNITS.iter().position(|w| *w == word).map(|i| i as u32)
}

fn teen_value(word: &str) -> Option<u32> {
    TEENS.iter().position(|w| *w == word).map(|i| 10 + i as u32)
}

fn tens_value(word: &str) -> Option<u32> {
    TENS.iter()
        .position(|w| !w.is_empty() && *w == word)
        .map(|i| 10 * i as u32)
}

/// True for any word that can appear inside a number phrase.
pub fn is_number_word(word: &str) -> bool {
    let w = word.to_ascii_lowercase();
    unit_value(&w).is_some()
        || teen_value(&w).is_some()
        || tens_value(&w).is_some()
        || w == HUNDRED
        || w == POINT
        || NEGATIVES.contains(&w.as_str())
        || w.split('-').count() > 1 && w.split('-').all(is_number_word)
}

/// Spell out an integer in `0..=999`, e.g. 126 -> "one hundred twenty-six".
pub fn integer_to_words(n: u32) -> String {
    assert!(n <= 999, "number words cover 0..=999");
    let below_hundred = |n: u32| -> String {
        match n {
            0..=9 => UNITS[n as usize].to_string(),
            10..=19 => TEENS[(n - 10) as usize].to_string(),
            _ if n.is_multiple_of(10) => TENS[(n / 10) as usize].to_string(),
            _ => format!("{}-{}", TENS[(n / 10) as usize], UNITS[(n % 10) as usize]),
        }
    };
    if n < 100 {
        return below_hundred(n);
    }
    let head = format!("{} {HUNDRED}", UNITS[(n / 100) as usize]);
    match n % 100 {
        0 => head,
        rest => format!("{head} {}", below_hundred(rest)),
    }
}

/// Spell out a canonical value string ("26", "12.5", "-3") in words.
pub fn value_to_words(canonical: &str) -> Option<String> {
    let (negative, body) = match canonical.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, canonical),
    };
    let (int_part, frac_part) = match body.split_once('.') {
        Some((i, f)) => (i, Some(f)),
        None => (body, None),
    };
    let n: u32 = int_part.parse().ok().filter(|n| *n <= 999)?;
    let mut words = integer_to_words(n);
    if let Some(frac) = frac_part {
        if frac.is_empty() || !frac.bytes().all(|b| b.is_ascii_digit()) {
            return None;
        }
        words.push(' ');
        words.push_str(POINT);
        for d in frac.bytes() {
            words.push(' ');
            words.push_str(UNITS[(d - b'0') as usize]);
        }
    }
    if negative {
        words = format!("{} {words}", NEGATIVES[0]);
    }
    Some(words)
}

/// Canonical decimal text: no leading zeros, no trailing fractional zeros,
/// no decimal point for whole numbers, no negative zero.
pub fn canonical_decimal(negative: bool, int_digits: &str, frac_digits: &str) -> String {
    let int = int_digits.trim_start_matches('0');
    let int = if int.is_empty() { "0" } else { int };
    let frac = frac_digits.trim_end_matches('0');
    let mut out = String::new();
    let zero = int == "0" && frac.is_empty();
    if negative && !zero {
        out.push('-');
    }
    out.push_str(int);
    if !frac.is_empty() {
        out.push('.');
        out.push_str(frac);
    }
    out
}

/// Canonicalize a digit literal such as "026", "12.50" or "-4".
pub fn canonical_literal(literal: &str) -> Option<String> {
    let (negative, body) = match literal.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, literal.strip_prefix('+').unwrap_or(literal)),
    };
    let (int, frac) = body.split_once('.').unwrap_or((body, ""));
    let digits = |s: &str| s.bytes().all(|b| b.is_ascii_digit());
    if int.is_empty() || !digits(int) || !digits(frac) || (body.contains('.') && frac.is_empty()) {
        return None;
    }
    Some(canonical_decimal(negative, int, frac))
}

/// Parse a number phrase from the start of `words` (already lowercased, with
/// hyphenated compounds kept as single words). Returns the canonical value and
/// the number of words consumed, or `None` when no number starts here.
pub fn parse_number_words(words: &[&str]) -> Option<(String, usize)> {
    let mut i = 0;
    let negative = match words.first() {
        Some(w) if NEGATIVES.contains(w) => {
            i = 1;
            true
        }
        _ => false,
    };
    let (int_value, used) = parse_integer(&words[i..])?;
    i += used;
    let mut frac = String::new();
    if words.get(i) == Some(&POINT) {
        let mut j = i + 1;
        while let Some(d) = words.get(j).and_then(|w| unit_value(w)) {
            frac.push(char::from(b'0' + d as u8));
            j += 1;
        }
        if !frac.is_empty() {
            i = j;
        }
    }
    Some((canonical_decimal(negative, &int_value.to_string(), &frac), i))
}

// 0..=999 from words; hyphenated ("twenty-six") or spaced ("twenty six").
fn parse_integer(words: &[&str]) -> Option<(u32, usize)> {
    let first = *words.first()?;
    if let Some(u) = unit_value(first).filter(|u| *u > 0) {
        if words.get(1) == Some(&HUNDRED) {
            let base = 100 * u;
            return match parse_below_hundred(&words[2..]) {
                Some((rest, used)) if rest > 0 => Some((base + rest, 2 + used)),
                _ => Some((base, 2)),
            };
        }
    }
    parse_below_hundred(words)
}

fn parse_below_hundred(words: &[&str]) -> Option<(u32, usize)> {
    let first = *words.first()?;
    if let Some((tens, unit)) = first.split_once('-') {
        let t = tens_value(tens)?;
        let u = unit_value(unit).filter(|u| *u > 0)?;
        return Some((t + u, 1));
    }
    if let Some(t) = tens_value(first) {
        if let Some(u) = words.get(1).and_then(|w| unit_value(w)).filter(|u| *u > 0) {
            return Some((t + u, 2));
        }
        return Some((t, 1));
    }
    if let Some(v) = teen_value(first) {
        return Some((v, 1));
    }
    unit_value(first).map(|u| (u, 1))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str) -> Option<(String, usize)> {
        let words: Vec<&str> = s.split_whitespace().collect();
        parse_number_words(&words)
    }

    #[test]
    fn words_for_integers() {
        assert_eq!(integer_to_words(0), "zero");
        assert_eq!(integer_to_words(26), "twenty-six");
        assert_eq!(integer_to_words(40), "forty");
        assert_eq!(integer_to_words(105), "one hundred five");
        assert_eq!(integer_to_words(999), "nine hundred ninety-nine");
    }

    #[test]
    fn parse_examples() {
        assert_eq!(parse("twenty-six"), Some(("26".into(), 1)));
        assert_eq!(parse("twenty six"), Some(("26".into(), 2)));
        assert_eq!(parse("one"), Some(("1".into(), 1)));
        assert_eq!(parse("one hundred twenty-six and"), Some(("126".into(), 3)));
        assert_eq!(parse("three hundred"), Some(("300".into(), 2)));
        assert_eq!(parse("twelve point five"), Some(("12.5".into(), 3)));
        assert_eq!(parse("minus three"), Some(("-3".into(), 2)));
        assert_eq!(parse("negative zero"), Some(("0".into(), 2)));
        assert_eq!(parse("zero point zero"), Some(("0".into(), 3)));
        assert_eq!(parse("shelf"), None);
        assert_eq!(parse("minus"), None);
        // A dangling "point" is not consumed.
        assert_eq!(parse("four point"), Some(("4".into(), 1)));
    }

    #[test]
    fn literals() {
        assert_eq!(canonical_literal("026"), Some("26".into()));
        assert_eq!(canonical_literal("12.50"), Some("12.5".into()));
        assert_eq!(canonical_literal("26.0"), Some("26".into()));
        assert_eq!(canonical_literal("-0"), Some("0".into()));
        assert_eq!(canonical_literal("1."), None);
        assert_eq!(canonical_literal("abc"), None);
    }

    #[test]
    fn every_integer_round_trips_through_words() {
        for n in 0..=999u32 {
            let words = integer_to_words(n);
            let split: Vec<&str> = words.split_whitespace().collect();
            assert_eq!(parse_number_words(&split), Some((n.to_string(), split.len())), "{words}");
        }
    }

    #[test]
    fn one_decimal_values_round_trip() {
        for tenths in (1..=9999u32).filter(|t| t % 10 != 0) {
            let canonical = format!("{}.{}", tenths / 10, tenths % 10);
            let words = value_to_words(&canonical).unwrap();
            let split: Vec<&str> = words.split_whitespace().collect();
            assert_eq!(parse_number_words(&split), Some((canonical, split.len())));
        }
    }

    #[test]
    fn number_word_classification() {
        assert!(is_number_word("twenty-six"));
        assert!(is_number_word("Hundred"));
        assert!(!is_number_word("shelf"));
        assert!(!is_number_word("twenty-shelf"));
    }
}
