//! Regenerates `data/toy/toy_pii.txt`, the bundled synthetic support-ticket
//! corpus. Output is fully determined by the seed below.
//!
//! ```text
//! cargo run --example gen_toy_corpus -- crates/core/data/toy/toy_pii.txt
//! ```

use std::fmt::Write as _;
use std::fs;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEED: u64 = 20_260_301;
const TARGET_TOKENS: usize = 20_000;

const FIRST: &[&str] = &[
    "Alice", "Amara", "Anika", "Benjamin", "Carlos", "Chioma", "Daniel", "Diego", "Elena", "Emeka", "Fatima",
    "Hannah", "Hiroshi", "Ibrahim", "Isabel", "Jamal", "Jonas", "Kofi", "Laura", "Miguel", "Nadia", "Olivia",
    "Priya", "Rahul", "Sakura", "Sofia", "Tomas", "Yusuf", "Zara",
];
const LAST: &[&str] = &[
    "Chen", "Garcia", "Johnson", "Lopez", "Mbeki", "Mehta", "Nguyen", "Okafor", "Patel", "Rossi", "Santos", "Smith",
    "Tanaka", "Williams",
];
const ITEMS: &[&str] = &[
    "invoice", "order", "package", "refund", "account", "password", "subscription", "laptop", "printer", "router",
    "license", "report",
];
const STATES: &[&str] = &["delayed", "missing", "broken", "ready", "closed", "pending", "approved", "damaged"];
const DAYS: &[&str] = &["monday", "tuesday", "wednesday", "thursday", "friday"];
const TEAMS: &[&str] = &["billing", "support", "shipping", "security", "sales"];

/// Sentence templates. Slots: `{item} {state} {day} {team} {n}` are filler,
/// `{name} {email} {phone} {ssn} {dob} {ip} {card}` are PII.
const PLAIN: &[&str] = &[
    "the {item} is {state} and the customer wants an update .",
    "please check the {item} before {day} .",
    "our {team} team will review the {item} on {day} .",
    "the customer says the {item} is still {state} .",
    "we sent the {item} to the {team} team .",
    "the {item} was {state} when it arrived .",
    "thank you for your patience with the {item} .",
    "the ticket was moved to the {team} queue on {day} .",
    "we will call back on {day} about the {item} .",
    "the {item} status changed to {state} .",
    "customer asked for a new {item} because the old one is {state} .",
    "the {team} team closed the ticket on {day} .",
    "please do not reply to this message .",
    "the {item} number is {n} and it is {state} .",
    "we expect the {item} to be ready by {day} .",
];
const WITH_PII: &[&str] = &[
    "customer {name} reported that the {item} is {state} .",
    "please contact {name} at {email} about the {item} .",
    "the callback number is {phone} .",
    "{name} can be reached at {phone} on {day} .",
    "send the {item} details to {email} .",
    "the form lists ssn {ssn} for verification .",
    "date of birth on file is {dob} .",
    "login attempts came from {ip} on {day} .",
    "the card ending {card} was charged for the {item} .",
    "{name} asked the {team} team about the {item} .",
];

fn fill(template: &str, rng: &mut ChaCha8Rng) -> String {
    let first = *FIRST.choose(rng).unwrap();
    let last = *LAST.choose(rng).unwrap();
    let mut out = String::new();
    for word in template.split(' ') {
        let piece = match word {
            "{item}" => ITEMS.choose(rng).unwrap().to_string(),
            "{state}" => STATES.choose(rng).unwrap().to_string(),
            "{day}" => DAYS.choose(rng).unwrap().to_string(),
            "{team}" => TEAMS.choose(rng).unwrap().to_string(),
            "{n}" => rng.random_range(10..40).to_string(),
            "{name}" => format!("{first} {last}"),
            "{email}" => format!("{}.{}@example.com", first.to_lowercase(), last.to_lowercase()),
            "{phone}" => format!("555-{:03}-{:04}", rng.random_range(100..1000), rng.random_range(0..10_000)),
            "{ssn}" => format!(
                "{:03}-{:02}-{:04}",
                rng.random_range(100..900),
                rng.random_range(10..100),
                rng.random_range(1000..10_000)
            ),
            "{dob}" => format!(
                "{}-{:02}-{:02}",
                rng.random_range(1950..2005),
                rng.random_range(1..13),
                rng.random_range(1..29)
            ),
            "{ip}" => format!("10.{}.{}.{}", rng.random_range(0..256), rng.random_range(0..256), rng.random_range(1..255)),
            "{card}" => {
                let g: Vec<String> = (0..4).map(|_| format!("{:04}", rng.random_range(0..10_000))).collect();
                g.join("-")
            }
            other => other.to_string(),
        };
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(&piece);
    }
    out
}

fn main() {
    let path = std::env::args().nth(1).unwrap_or_else(|| "crates/core/data/toy/toy_pii.txt".into());
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut text = String::new();
    let mut tokens = 0;
    while tokens < TARGET_TOKENS {
        let mut line = String::new();
        for _ in 0..rng.random_range(3..7) {
            // roughly one sentence in fifty mentions PII
            let template = if rng.random_bool(1.0 / 50.0) {
                WITH_PII.choose(&mut rng).unwrap()
            } else {
                PLAIN.choose(&mut rng).unwrap()
            };
            if !line.is_empty() {
                line.push(' ');
            }
            line.push_str(&fill(template, &mut rng));
        }
        tokens += line.split_whitespace().count();
        writeln!(text, "{line}").unwrap();
    }
    fs::write(&path, text).expect("write corpus");
    eprintln!("wrote {tokens} tokens to {path}");
}
