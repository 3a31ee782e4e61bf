//! Hashed tokenization and sentence-aware passage splitting.

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

/// Lowercased alphanumeric runs.
pub fn words(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
}

/// Hashes each lowercased alphanumeric run into `buckets`, keeping at most
/// `max_tokens` ids.
pub fn tokenize(text: &str, buckets: usize, max_tokens: usize) -> Vec<u32> {
    debug_assert!(buckets > 0 && buckets <= u32::MAX as usize);
    words(text)
        .take(max_tokens)
        .map(|w| (fnv1a64(w.as_bytes()) % buckets as u64) as u32)
        .collect()
}

fn ends_sentence(word: &str) -> bool {
    word.ends_with(['.', '!', '?'])
}

/// Greedily packs sentences into passages of about `target_words` words.
///
/// A passage is closed when the next sentence would push it past the
/// target. Sentences longer than twice the target are cut into
/// `target_words`-word chunks. Joining the output with spaces reproduces
/// the input's whitespace-separated word sequence.
pub fn split_into_passages(text: &str, target_words: usize) -> Vec<String> {
    let target = target_words.max(1);
    let mut sentences: Vec<Vec<&str>> = Vec::new();
    let mut current: Vec<&str> = Vec::new();
    for word in text.split_whitespace() {
        current.push(word);
        if ends_sentence(word) {
            sentences.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        sentences.push(current);
    }

    let mut passages = Vec::new();
    let mut open: Vec<&str> = Vec::new();
    for sentence in sentences {
        if sentence.len() > 2 * target {
            if !open.is_empty() {
                passages.push(open.join(" "));
                open.clear();
            }
            passages.extend(sentence.chunks(target).map(|c| c.join(" ")));
            continue;
        }
        if !open.is_empty() && open.len() + sentence.len() > target {
            passages.push(open.join(" "));
            open.clear();
        }
        open.extend(sentence);
    }
    if !open.is_empty() {
        passages.push(open.join(" "));
    }
    passages
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn tokenize_examples() {
        assert!(tokenize("", 1024, 128).is_empty());
        let t = tokenize("A a", 1024, 128);
        assert_eq!(t.len(), 2);
        assert_eq!(t[0], t[1]);
        let t = tokenize("graph-attention nets", 1 << 15, 128);
        let expected: Vec<u32> = ["graph", "attention", "nets"]
            .iter()
            .map(|w| (fnv1a64(w.as_bytes()) % (1 << 15)) as u32)
            .collect();
        assert_eq!(t, expected);
        assert_eq!(tokenize("a b c d", 64, 2).len(), 2);
    }

    #[test]
    fn fnv_reference_values() {
        // Published FNV-1a 64 test vectors.
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
    }

    fn sentence(n: usize, tag: usize) -> String {
        let mut words: Vec<String> = (0..n).map(|i| format!("w{tag}x{i}")).collect();
        words.last_mut().unwrap().push('.');
        words.join(" ")
    }

    #[test]
    fn splitting_examples() {
        assert!(split_into_passages("", 100).is_empty());
        assert_eq!(split_into_passages(&sentence(10, 0), 100).len(), 1);

        let text: Vec<String> = (0..30).map(|i| sentence(10, i)).collect();
        let passages = split_into_passages(&text.join(" "), 100);
        assert_eq!(passages.len(), 3);
        assert!(passages.iter().all(|p| p.split_whitespace().count() == 100));

        let long = sentence(250, 0);
        let passages = split_into_passages(&long, 100);
        let counts: Vec<usize> = passages.iter().map(|p| p.split_whitespace().count()).collect();
        assert_eq!(counts, vec![100, 100, 50]);
    }

    #[test]
    fn question_and_exclamation_end_sentences() {
        let text = "one two? three four! five six.";
        assert_eq!(split_into_passages(text, 2), vec!["one two?", "three four!", "five six."]);
    }

    proptest! {
        #[test]
        fn splitting_preserves_words_and_bounds(
            lens in proptest::collection::vec(1usize..60, 0..25),
            target in 1usize..40,
        ) {
            let text: Vec<String> = lens.iter().enumerate().map(|(i, &n)| sentence(n, i)).collect();
            let text = text.join(" ");
            let passages = split_into_passages(&text, target);
            let rejoined = passages.join(" ");
            prop_assert_eq!(
                rejoined.split_whitespace().collect::<Vec<_>>(),
                text.split_whitespace().collect::<Vec<_>>()
            );
            let longest = lens.iter().copied().max().unwrap_or(0);
            let bound = (2 * target).max(longest);
            for p in &passages {
                let n = p.split_whitespace().count();
                prop_assert!(n >= 1 && n <= bound);
            }
        }
    }
}
