use std::collections::{BTreeMap, BTreeSet};
use std::sync::OnceLock;

use clsp::verify::{
    check_caption, compile_rules, parse_corpus, verify_corpus, CorpusRecord, DecisionRecord, Item,
    RuleConfig, RuleSet, Verdict,
};
use proptest::prelude::*;

const FIXTURES: &str = include_str!("fixtures/verify_corpus.jsonl");

fn fixtures() -> Vec<CorpusRecord> {
    parse_corpus(FIXTURES).unwrap()
}

fn rules() -> &'static RuleSet {
    static RULES: OnceLock<RuleSet> = OnceLock::new();
    RULES.get_or_init(RuleSet::default)
}

fn run(rules: &RuleSet) -> Vec<DecisionRecord> {
    verify_corpus(&fixtures(), rules, None).unwrap()
}

const FRAGMENTS: &[&str] = &[
    "A calm male voice speaks slowly.",
    "There is faint background noise.",
    "No other voices are heard.",
    "The room reverberation is noticeable.",
    "He says \"we will meet again at the old station tonight\".",
    "A woman with a Jamaican accent speaks quickly.",
    "Several speakers talk at once.",
    "The tone is warm and expressive.",
    "there are no pauses",
    "a microphone pop",
];

fn caption() -> impl Strategy<Value = String> {
    prop::collection::vec(prop::sample::select(FRAGMENTS), 1..5).prop_map(|v| v.join(" "))
}

fn tags() -> impl Strategy<Value = Option<BTreeMap<String, String>>> {
    prop::option::of(prop::sample::select(vec!["Jamaican", "Australian", "Welsh"]).prop_map(|v| {
        BTreeMap::from([("accent".to_string(), v.to_string())])
    }))
}

fn transcript() -> impl Strategy<Value = Option<&'static str>> {
    prop::option::of(Just("we will meet again at the old station tonight"))
}

proptest! {
    #[test]
    fn verdict_iff_violations(c in caption(), t in tags(), tr in transcript()) {
        let d = check_caption(&c, t.as_ref(), tr, rules()).unwrap();
        prop_assert_eq!(d.verdict == Verdict::Filter, !d.violated_items.is_empty());
        let cited: BTreeSet<Item> = d.evidence.iter().map(|e| e.item).collect();
        prop_assert_eq!(cited, d.violated_items);
    }

    #[test]
    fn decisions_are_deterministic(c in caption(), t in tags(), tr in transcript()) {
        static PARSED: OnceLock<RuleSet> = OnceLock::new();
        let parsed = PARSED.get_or_init(|| RuleSet::from_toml(clsp::verify::DEFAULT_RULES).unwrap());
        let a = check_caption(&c, t.as_ref(), tr, rules()).unwrap();
        let b = check_caption(&c, t.as_ref(), tr, parsed).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn adding_patterns_never_unfilters(
        c in caption(),
        t in tags(),
        extra in prop::collection::vec(prop::sample::select(vec![r"\bslowly\b", r"\bwarm\b", r"\bquickly\b", "zzz"]), 1..3),
        section in 0..4usize,
    ) {
        let base = rules();
        let mut cfg = base.to_config();
        let list = match section {
            0 => &mut cfg.item1.patterns,
            1 => &mut cfg.item2.patterns,
            2 => &mut cfg.clip.multi_speaker_patterns,
            _ => &mut cfg.clip.multi_role_patterns,
        };
        list.extend(extra.iter().map(|s| s.to_string()));
        let more = compile_rules(&cfg).unwrap();
        let before = check_caption(&c, t.as_ref(), None, base).unwrap();
        let after = check_caption(&c, t.as_ref(), None, &more).unwrap();
        if before.verdict == Verdict::Filter {
            prop_assert_eq!(after.verdict, Verdict::Filter);
        }
        prop_assert!(before.violated_items.is_subset(&after.violated_items));
    }

    #[test]
    fn item1_follows_its_patterns(c in caption()) {
        static ITEM1: OnceLock<Vec<regex::Regex>> = OnceLock::new();
        let item1 = ITEM1.get_or_init(|| {
            rules().config().item1.patterns.iter()
                .map(|p| regex::RegexBuilder::new(p).case_insensitive(true).build().unwrap())
                .collect()
        });
        let direct = item1.iter().any(|re| re.is_match(&c));
        let d = check_caption(&c, None, None, rules()).unwrap();
        prop_assert_eq!(d.violated_items.contains(&Item::Environment), direct);
    }
}

fn without(items: &BTreeSet<Item>, drop: Item) -> BTreeSet<Item> {
    items.iter().copied().filter(|&i| i != drop).collect()
}

#[test]
fn disabling_an_item_clears_only_that_item() {
    let full = run(&RuleSet::default());
    for item in [Item::Environment, Item::Absence, Item::Transcription, Item::Tags, Item::Clip] {
        let mut cfg = RuleSet::default().to_config();
        match item {
            Item::Environment => cfg.item1.enabled = false,
            Item::Absence => cfg.item2.enabled = false,
            Item::Transcription => cfg.item3.enabled = false,
            Item::Tags => cfg.item4.enabled = false,
            _ => cfg.clip.enabled = false,
        }
        let reduced = run(&compile_rules(&cfg).unwrap());
        for (a, b) in full.iter().zip(&reduced) {
            assert_eq!(without(&a.violated_items, item), b.violated_items, "{item:?} {}", a.clip_id);
        }
        assert!(full.iter().any(|d| d.violated_items.contains(&item)), "fixtures exercise {item:?}");
    }
}

#[test]
fn serialized_rules_give_identical_decisions() {
    let rules = RuleSet::default();
    let text = rules.to_config().to_toml();
    let again = compile_rules(&RuleConfig::from_toml(&text).unwrap()).unwrap();
    assert_eq!(run(&rules), run(&again));
}

#[test]
fn mixed_clip_cites_the_violating_caption() {
    let out = run(&RuleSet::default());
    let mixed: Vec<&DecisionRecord> = out.iter().filter(|d| d.clip_id == "mixed_clip").collect();
    assert_eq!(mixed.len(), 5);
    for d in &mixed {
        assert_eq!(d.verdict, Verdict::Filter);
        let cited: Vec<Option<usize>> = d
            .evidence
            .iter()
            .filter(|e| e.item == Item::Clip)
            .map(|e| e.caption_index)
            .collect();
        assert!(!cited.is_empty() && cited.iter().all(|&c| c == Some(4)), "{cited:?}");
    }
}

#[test]
fn multi_positive_captions_keep_their_accent() {
    let out = run(&RuleSet::default());
    assert!(out
        .iter()
        .filter(|d| d.clip_id == "multi_positive")
        .all(|d| d.verdict == Verdict::Retain));
}
