//! Deterministic synthetic data: dialogue partitions, a general
//! instruction corpus, interaction logs, and agreement labels.
//!
//! Everything is seeded, so tests and the committed sample dataset can
//! be regenerated byte-identically.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::engagement::{EventKind, ExperimentArm, InteractionEvent};
use crate::model::{
    ClickLabel, ClickRecord, DialogueContext, Intent, Partition, PartitionName, QaPair,
    SuggestionSet, Turn,
};

const SMALL_TALK_QUERIES: [&str; 6] = [
    "hello there",
    "good morning",
    "are you a real person?",
    "what can you do?",
    "thanks for the help earlier",
    "tell me something interesting",
];

const RECOMMENDATION_QUERIES: [&str; 6] = [
    "I want to buy flowers",
    "recommend a phone under 10,000 PHP",
    "looking for a birthday gift for my mom",
    "I need new running shoes",
    "show me kitchen appliances on sale",
    "buy something for a housewarming",
];

const PRODUCT_QA_QUERIES: [&str; 6] = [
    "does this laptop come with a charger?",
    "is this blender dishwasher safe?",
    "how long does the battery last on this speaker?",
    "what sizes does this jacket come in?",
    "is this watch waterproof?",
    "does the desk require assembly?",
];

const PLATFORM_QA_QUERIES: [&str; 6] = [
    "how do I track my order?",
    "can I change my delivery address?",
    "what payment methods do you accept?",
    "how do returns work?",
    "where do I enter a voucher code?",
    "why was my payment declined?",
];

const PROFILES: [&str; 5] = [
    "",
    "frequent electronics buyer",
    "new user, first week on the app",
    "bargain hunter, browses flash sales daily",
    "parent shopping for a family of five",
];

const HISTORY_OPENERS: [&str; 4] = [
    "I was browsing your deals page",
    "my last order arrived yesterday",
    "I'm comparing a few options",
    "I have a question about a product",
];

const HISTORY_REPLIES: [&str; 4] = [
    "Happy to help with that.",
    "Sure, could you tell me more?",
    "Here is what I found for you.",
    "Let me check that for you.",
];

const CANDIDATE_POOL: [&str; 12] = [
    "Can you show me the best sellers in this category?",
    "Are there bundle deals if I buy two?",
    "Which option has the fastest delivery?",
    "Is there a version under 2,000 PHP?",
    "What do the reviews say about durability?",
    "Can you compare the top two choices?",
    "Does it come with a warranty?",
    "Are there color options in stock?",
    "Which one is best for beginners?",
    "Can I pick it up in a store?",
    "Is there a newer model coming soon?",
    "What accessories should I add?",
];

const GENERAL_PROMPTS: [&str; 8] = [
    "Summarize the plot of a mystery novel in two sentences.",
    "Explain why the sky appears blue.",
    "Write a short thank-you note to a colleague.",
    "List three tips for keeping houseplants alive.",
    "Describe the difference between weather and climate.",
    "Explain how to budget for a monthly grocery run.",
    "Give directions for brewing a pot of tea.",
    "Explain what a library late fee is.",
];

const GENERAL_COMPLETIONS: [&str; 8] = [
    "A detective returns to a coastal town and reopens a cold case. The culprit turns out to be the town's beloved lighthouse keeper.",
    "Sunlight scatters off air molecules, and shorter blue wavelengths scatter the most, so blue light reaches your eyes from every direction.",
    "Thank you for stepping in during the release last week. Your help made the difference, and I'm grateful.",
    "Water only when the topsoil is dry, match each plant to its light needs, and repot once roots circle the container.",
    "Weather is the state of the atmosphere right now; climate is the pattern of weather averaged over decades.",
    "Total your fixed costs first, set a weekly cap for food, plan meals before shopping, and track receipts against the cap.",
    "Warm the pot, add one spoon of leaves per cup, pour water just off the boil, and steep for three to five minutes.",
    "A small charge a library adds when a borrowed item is returned after its due date.",
];

fn intent_for(index: usize) -> Intent {
    match index % 4 {
        0 => Intent::SmallTalk,
        1 => Intent::ProductRecommendation,
        2 => Intent::ProductQa,
        _ => Intent::PlatformQa,
    }
}

fn query_pool(intent: Intent) -> &'static [&'static str] {
    match intent {
        Intent::SmallTalk => &SMALL_TALK_QUERIES,
        Intent::ProductRecommendation => &RECOMMENDATION_QUERIES,
        Intent::ProductQa => &PRODUCT_QA_QUERIES,
        Intent::PlatformQa | Intent::Unknown => &PLATFORM_QA_QUERIES,
    }
}

fn dialogue(rng: &mut ChaCha8Rng, record_id: String, intent: Intent) -> DialogueContext {
    let query = *query_pool(intent).choose(rng).expect("pool non-empty");
    let mut history = Vec::new();
    for _ in 0..rng.gen_range(0..=2) {
        history.push(Turn::user(*HISTORY_OPENERS.choose(rng).expect("pool non-empty")));
        history.push(Turn::assistant(*HISTORY_REPLIES.choose(rng).expect("pool non-empty")));
    }
    DialogueContext::new(record_id, query)
        .with_intent(intent)
        .with_profile(*PROFILES.choose(rng).expect("pool non-empty"))
        .with_history(history)
}

fn candidate_set(rng: &mut ChaCha8Rng, context_ref: &str, k: usize) -> SuggestionSet {
    let mut pool: Vec<String> = CANDIDATE_POOL.iter().map(|s| (*s).to_owned()).collect();
    pool.shuffle(rng);
    while pool.len() < k {
        let i = pool.len();
        pool.push(format!("Could you narrow this down further? (angle {i})"));
    }
    pool.truncate(k);
    SuggestionSet {
        context_ref: context_ref.to_owned(),
        candidates: pool,
        k,
        format_ok: true,
        raw_output: String::new(),
    }
}

fn exposure_partition(
    seed: u64,
    count: usize,
    name: PartitionName,
    prefix: &str,
    label: ClickLabel,
) -> Partition<ClickRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let records = (0..count)
        .map(|i| {
            let id = format!("{prefix}-{i:04}");
            let context = dialogue(&mut rng, id.clone(), intent_for(i)).with_click_label(label);
            let suggestions = candidate_set(&mut rng, &id, 3);
            ClickRecord { context, suggestions }
        })
        .collect();
    Partition::new(name, records)
}

/// Clicked exposure log: contexts whose shown suggestions drew a click.
pub fn click_partition(seed: u64, count: usize) -> Partition<ClickRecord> {
    exposure_partition(seed, count, PartitionName::Click, "click", ClickLabel::Clicked)
}

/// Unclicked exposure log, the pool pseudo-labeling draws from.
pub fn unclick_partition(seed: u64, count: usize) -> Partition<ClickRecord> {
    exposure_partition(seed, count, PartitionName::Unclick, "unclick", ClickLabel::Unclicked)
}

/// Held-out test queries, intents cycling through all four classes.
pub fn test_partition(seed: u64, count: usize) -> Partition<DialogueContext> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let records = (0..count)
        .map(|i| dialogue(&mut rng, format!("test-{i:04}"), intent_for(i)))
        .collect();
    Partition::new(PartitionName::Test, records)
}

/// General instruction corpus used to balance the supervised mix.
pub fn general_corpus(seed: u64, count: usize) -> Vec<QaPair> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let pick = rng.gen_range(0..GENERAL_PROMPTS.len());
            QaPair {
                record_id: format!("gen-{i:04}"),
                prompt: format!("{} (variant {i})", GENERAL_PROMPTS[pick]),
                completion: GENERAL_COMPLETIONS[pick].to_owned(),
            }
        })
        .collect()
}

/// Two-arm interaction log. The treatment arm gets `uplift` extra
/// distinct users so the growth gap is positive by construction.
pub fn event_log(seed: u64, users_per_arm: usize, uplift: usize) -> Vec<InteractionEvent> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut events = Vec::new();
    let base_ts: i64 = 1_755_000_000_000;
    let emit = |arm: ExperimentArm, user: String, rng: &mut ChaCha8Rng, events: &mut Vec<InteractionEvent>| {
        let burst = rng.gen_range(1..=4);
        for j in 0..burst {
            let kind = match rng.gen_range(0..3) {
                0 => EventKind::MessageSent,
                1 => EventKind::Reply,
                _ => EventKind::OtherChatInteraction,
            };
            events.push(InteractionEvent {
                user_id: user.clone(),
                timestamp: base_ts + rng.gen_range(0..86_400_000) + j,
                event_kind: kind,
                experiment_arm: arm,
            });
        }
    };
    for i in 0..users_per_arm + uplift {
        emit(ExperimentArm::Treatment, format!("t-user-{i:04}"), &mut rng, &mut events);
    }
    for i in 0..users_per_arm {
        emit(ExperimentArm::Control, format!("c-user-{i:04}"), &mut rng, &mut events);
    }
    events
}

/// Aligned judge/human pass labels with an exact number of agreements.
pub fn agreement_labels(seed: u64, total: usize, agreements: usize) -> (Vec<bool>, Vec<bool>) {
    assert!(agreements <= total, "cannot agree on more items than exist");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut agree_slots: Vec<bool> = (0..total).map(|i| i < agreements).collect();
    agree_slots.shuffle(&mut rng);
    let mut judge = Vec::with_capacity(total);
    let mut human = Vec::with_capacity(total);
    for agrees in agree_slots {
        let human_label = rng.gen_bool(0.5);
        human.push(human_label);
        judge.push(if agrees { human_label } else { !human_label });
    }
    (judge, human)
}
