use unicode_general_category::{get_general_category, GeneralCategory};

fn is_punctuation(c: char) -> bool {
    matches!(
        get_general_category(c),
        GeneralCategory::ConnectorPunctuation
            | GeneralCategory::DashPunctuation
            | GeneralCategory::OpenPunctuation
            | GeneralCategory::ClosePunctuation
            | GeneralCategory::InitialPunctuation
            | GeneralCategory::FinalPunctuation
            | GeneralCategory::OtherPunctuation
    )
}

/// Splits on Unicode whitespace and trims punctuation from both ends of
/// each piece. Case is preserved.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|piece| piece.trim_matches(is_punctuation))
        .filter(|t| !t.is_empty())
        .map(str::to_owned)
        .collect()
}
