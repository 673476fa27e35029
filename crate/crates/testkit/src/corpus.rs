//! The synthetic planted-facts corpus.
//!
//! Three sessions, twenty turns each: ten user turns that each state one
//! plantable fact, each followed by an assistant acknowledgement echoing
//! it. Facts are built from per-session-disjoint token sets so the
//! synthetic embedding geometry is controlled: a turn scores high against
//! its own fact and near zero against every other, and distinct facts stay
//! well below the dedup and eval thresholds. `verify_geometry` asserts all
//! of those margins numerically.

use memloop_core::dialogue::{turn_text_for_embedding, DialogueSession, DialogueTurn, Speaker};
use memloop_core::eval::{GoldAnnotation, QaItem};
use memloop_core::gateway::fixture_embed;
use serde::{Deserialize, Serialize};

pub const FIXTURE_DIMENSION: usize = 4096;
pub const COMPRESSION_RATIO: f64 = 0.2;

/// Fact indices the initial extraction pass omits (recovered by the
/// completion stage).
pub const OMITTED_INITIAL: [usize; 2] = [3, 7];

/// Where the hallucination sits in the initial extraction response.
pub const HALLUCINATION_POSITION: usize = 4;

#[derive(Debug, Clone)]
pub struct Fact {
    /// Third-person verb in the fact text.
    pub verb_fact: &'static str,
    /// First-person verb in the user's turn.
    pub verb_turn: &'static str,
    /// Seven content tokens shared verbatim between turn, ack and fact.
    pub topic: &'static str,
    /// Two-word handle used in the QA question.
    pub qa_handle: &'static str,
}

impl Fact {
    pub fn text(&self) -> String {
        format!("User {} {}", self.verb_fact, self.topic)
    }

    pub fn user_turn_text(&self) -> String {
        format!("I {} {}", self.verb_turn, self.topic)
    }

    pub fn ack_turn_text(&self, ack_word: &str) -> String {
        format!("{ack_word}, {}", self.topic)
    }
}

#[derive(Debug, Clone)]
pub struct SessionSpec {
    pub session_id: &'static str,
    pub owner_name: &'static str,
    /// RFC3339 prefix; minutes are the turn index.
    pub timestamp_prefix: &'static str,
    pub facts: Vec<Fact>,
    pub hallucination: &'static str,
}

const ACK_WORDS: [&str; 10] = [
    "Noted",
    "Logged",
    "Interesting",
    "Understood",
    "Nice",
    "Impressive",
    "Recorded",
    "Fascinating",
    "Remarkable",
    "Classic",
];

fn alex() -> SessionSpec {
    SessionSpec {
        session_id: "alex",
        owner_name: "Alex",
        timestamp_prefix: "2025-03-10T09",
        facts: vec![
            Fact {
                verb_fact: "climbs",
                verb_turn: "climb",
                topic: "granite spires above kettlewood reservoir each solstice",
                qa_handle: "granite spires",
            },
            Fact {
                verb_fact: "brews",
                verb_turn: "brew",
                topic: "smoked juniper porter during deep winter blackouts",
                qa_handle: "juniper porter",
            },
            Fact {
                verb_fact: "maps",
                verb_turn: "map",
                topic: "forgotten quarry tunnels beneath hazelmere county fairgrounds",
                qa_handle: "quarry tunnels",
            },
            Fact {
                verb_fact: "races",
                verb_turn: "race",
                topic: "tandem paragliders along coastal thermal corridors sundays",
                qa_handle: "tandem paragliders",
            },
            Fact {
                verb_fact: "repairs",
                verb_turn: "repair",
                topic: "antique barometers salvaged from decommissioned lighthouse stations",
                qa_handle: "antique barometers",
            },
            Fact {
                verb_fact: "teaches",
                verb_turn: "teach",
                topic: "orienteering basics to novice scout troops springtime",
                qa_handle: "orienteering basics",
            },
            Fact {
                verb_fact: "photographs",
                verb_turn: "photograph",
                topic: "nesting peregrine falcons on limestone cliff ledges",
                qa_handle: "peregrine falcons",
            },
            Fact {
                verb_fact: "carves",
                verb_turn: "carve",
                topic: "cedar walking staffs for elderly trail volunteers",
                qa_handle: "cedar staffs",
            },
            Fact {
                verb_fact: "tracks",
                verb_turn: "track",
                topic: "wolverine prints across subalpine snowfields by headlamp",
                qa_handle: "wolverine prints",
            },
            Fact {
                verb_fact: "ferments",
                verb_turn: "ferment",
                topic: "wild elderberry shrub soda in oak casks",
                qa_handle: "elderberry soda",
            },
        ],
        hallucination: "User pilots experimental racing submarines under arctic ice floes",
    }
}

fn briar() -> SessionSpec {
    SessionSpec {
        session_id: "briar",
        owner_name: "Briar",
        timestamp_prefix: "2025-04-14T15",
        facts: vec![
            Fact {
                verb_fact: "bakes",
                verb_turn: "bake",
                topic: "rye galettes with foraged chanterelle duxelles fridays",
                qa_handle: "rye galettes",
            },
            Fact {
                verb_fact: "cures",
                verb_turn: "cure",
                topic: "citrus bergamot marmalade inside repurposed cellar crocks",
                qa_handle: "bergamot marmalade",
            },
            Fact {
                verb_fact: "weaves",
                verb_turn: "weave",
                topic: "indigo linen table runners on drawloom frames",
                qa_handle: "linen runners",
            },
            Fact {
                verb_fact: "restores",
                verb_turn: "restore",
                topic: "chipped majolica platters from flooded estate auctions",
                qa_handle: "majolica platters",
            },
            Fact {
                verb_fact: "grinds",
                verb_turn: "grind",
                topic: "heirloom blue cornmeal using quarried basalt querns",
                qa_handle: "blue cornmeal",
            },
            Fact {
                verb_fact: "smokes",
                verb_turn: "smoke",
                topic: "lake trout over orchard applewood embers weekends",
                qa_handle: "smoked trout",
            },
            Fact {
                verb_fact: "binds",
                verb_turn: "bind",
                topic: "marbled recipe journals for the bakery guild",
                qa_handle: "recipe journals",
            },
            Fact {
                verb_fact: "grafts",
                verb_turn: "graft",
                topic: "quince scions onto hawthorn rootstock behind greenhouses",
                qa_handle: "quince scions",
            },
            Fact {
                verb_fact: "crushes",
                verb_turn: "crush",
                topic: "windfall perry pears through antique screw presses",
                qa_handle: "perry pears",
            },
            Fact {
                verb_fact: "teaches",
                verb_turn: "teach",
                topic: "sourdough lamination workshops at riverside community kitchens",
                qa_handle: "lamination workshops",
            },
        ],
        hallucination: "User judges international molecular gastronomy finals in monaco yearly",
    }
}

fn chen() -> SessionSpec {
    SessionSpec {
        session_id: "chen",
        owner_name: "Chen",
        timestamp_prefix: "2025-05-02T19",
        facts: vec![
            Fact {
                verb_fact: "audits",
                verb_turn: "audit",
                topic: "solar microgrid inverters for island ferry terminals",
                qa_handle: "microgrid inverters",
            },
            Fact {
                verb_fact: "sketches",
                verb_turn: "sketch",
                topic: "brutalist tram depots in fading overnight ink",
                qa_handle: "tram depots",
            },
            Fact {
                verb_fact: "studies",
                verb_turn: "study",
                topic: "cantonese opera percussion notation every tuesday evening",
                qa_handle: "opera percussion",
            },
            Fact {
                verb_fact: "archives",
                verb_turn: "archive",
                topic: "typhoon season shipping manifests from grandfather's freighter",
                qa_handle: "shipping manifests",
            },
            Fact {
                verb_fact: "volunteers",
                verb_turn: "volunteer",
                topic: "repairing braille embossers at the harbor library",
                qa_handle: "braille embossers",
            },
            Fact {
                verb_fact: "collects",
                verb_turn: "collect",
                topic: "misprinted transit tokens traded across night markets",
                qa_handle: "transit tokens",
            },
            Fact {
                verb_fact: "translates",
                verb_turn: "translate",
                topic: "hakka lullabies into annotated bilingual verse chapbooks",
                qa_handle: "hakka lullabies",
            },
            Fact {
                verb_fact: "maintains",
                verb_turn: "maintain",
                topic: "tide gauge telemetry loggers along mangrove boardwalks",
                qa_handle: "tide gauges",
            },
            Fact {
                verb_fact: "brews",
                verb_turn: "brew",
                topic: "aged pu-erh bricks gifted by retired dockworkers",
                qa_handle: "pu-erh bricks",
            },
            Fact {
                verb_fact: "organizes",
                verb_turn: "organize",
                topic: "rooftop stargazing socials when monsoon clouds clear",
                qa_handle: "stargazing socials",
            },
        ],
        hallucination: "User smuggled championship racing pigeons through customs blockades twice",
    }
}

#[derive(Debug, Clone)]
pub struct Corpus {
    pub specs: Vec<SessionSpec>,
    pub sessions: Vec<DialogueSession>,
}

pub fn build_corpus() -> Corpus {
    let specs = vec![alex(), briar(), chen()];
    let sessions = specs.iter().map(build_session).collect();
    Corpus { specs, sessions }
}

fn build_session(spec: &SessionSpec) -> DialogueSession {
    let mut turns = Vec::with_capacity(spec.facts.len() * 2);
    for (i, fact) in spec.facts.iter().enumerate() {
        turns.push(DialogueTurn {
            turn_index: 2 * i,
            speaker: Speaker::User,
            text: fact.user_turn_text(),
            timestamp: Some(format!("{}:{:02}:00Z", spec.timestamp_prefix, 2 * i)),
        });
        turns.push(DialogueTurn {
            turn_index: 2 * i + 1,
            speaker: Speaker::Assistant,
            text: fact.ack_turn_text(ACK_WORDS[i % ACK_WORDS.len()]),
            timestamp: Some(format!("{}:{:02}:00Z", spec.timestamp_prefix, 2 * i + 1)),
        });
    }
    DialogueSession {
        session_id: spec.session_id.to_string(),
        turns,
    }
}

impl Corpus {
    pub fn sessions_jsonl(&self) -> String {
        memloop_core::dialogue::serialize_sessions(&self.sessions)
    }

    pub fn gold(&self) -> Vec<GoldAnnotation> {
        self.specs
            .iter()
            .map(|spec| GoldAnnotation {
                session_id: spec.session_id.to_string(),
                gold_facts: spec.facts.iter().map(Fact::text).collect(),
                qa_items: self.qa_items(spec),
            })
            .collect()
    }

    pub fn gold_jsonl(&self) -> String {
        self.gold()
            .iter()
            .map(|g| serde_json::to_string(g).expect("gold serializes") + "\n")
            .collect()
    }

    fn qa_items(&self, spec: &SessionSpec) -> Vec<QaItem> {
        spec.facts
            .iter()
            .map(|fact| QaItem {
                question: format!(
                    "What does {} do involving {}?",
                    spec.owner_name, fact.qa_handle
                ),
                gold_answer: fact.text(),
            })
            .collect()
    }
}

/// What the acceptance suite needs to know about the planted corpus,
/// shipped alongside the fixtures as `manifest.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub fixture_dimension: usize,
    pub compression: CompressionManifest,
    pub sessions: Vec<SessionManifest>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompressionManifest {
    pub ratio: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SessionManifest {
    pub session_id: String,
    pub facts: Vec<String>,
    pub omitted_initial: Vec<usize>,
    pub hallucination: String,
    pub qa: Vec<QaItem>,
}

pub fn manifest(corpus: &Corpus, compression_seed: u64) -> CorpusManifest {
    CorpusManifest {
        fixture_dimension: FIXTURE_DIMENSION,
        compression: CompressionManifest {
            ratio: COMPRESSION_RATIO,
            seed: compression_seed,
        },
        sessions: corpus
            .specs
            .iter()
            .map(|spec| SessionManifest {
                session_id: spec.session_id.to_string(),
                facts: spec.facts.iter().map(Fact::text).collect(),
                omitted_initial: OMITTED_INITIAL.to_vec(),
                hallucination: spec.hallucination.to_string(),
                qa: corpus.qa_items(spec),
            })
            .collect(),
    }
}

// fixture_embed vectors are L2-normalized, so the dot product is cosine.
fn cosine(a: &str, b: &str) -> f64 {
    let va = fixture_embed(a, FIXTURE_DIMENSION).expect("embeddable");
    let vb = fixture_embed(b, FIXTURE_DIMENSION).expect("embeddable");
    va.values.iter().zip(&vb.values).map(|(x, y)| x * y).sum()
}

/// Assert every embedding-geometry margin the fixtures rely on. Panics
/// with the offending pair, so corpus wording mistakes fail fast at
/// generation time, not deep inside an acceptance run.
pub fn verify_geometry(corpus: &Corpus) {
    for (spec, session) in corpus.specs.iter().zip(&corpus.sessions) {
        assert_eq!(
            spec.facts.len(),
            10,
            "{}: ten facts per session",
            spec.session_id
        );
        assert_eq!(session.turns.len(), 20, "{}: twenty turns", spec.session_id);

        // Token bookkeeping: topics pairwise disjoint, verbs distinct.
        let token_sets: Vec<std::collections::HashSet<String>> = spec
            .facts
            .iter()
            .map(|f| {
                f.topic
                    .split_whitespace()
                    .map(|t| t.to_lowercase())
                    .collect()
            })
            .collect();
        for set in &token_sets {
            assert_eq!(
                set.len(),
                7,
                "{}: topics are seven distinct tokens",
                spec.session_id
            );
        }
        for i in 0..token_sets.len() {
            for j in i + 1..token_sets.len() {
                let overlap: Vec<_> = token_sets[i].intersection(&token_sets[j]).collect();
                assert!(
                    overlap.is_empty(),
                    "{}: facts {i} and {j} share tokens {overlap:?}",
                    spec.session_id
                );
            }
        }
        let verbs: std::collections::HashSet<&str> =
            spec.facts.iter().map(|f| f.verb_fact).collect();
        assert_eq!(
            verbs.len(),
            10,
            "{}: fact verbs are distinct",
            spec.session_id
        );

        let initial_entries: Vec<String> = spec
            .facts
            .iter()
            .enumerate()
            .filter(|(i, _)| !OMITTED_INITIAL.contains(i))
            .map(|(_, f)| f.text())
            .collect();

        for (i, fact) in spec.facts.iter().enumerate() {
            let fact_text = fact.text();
            let user_turn = turn_text_for_embedding(&session.turns[2 * i]);
            let ack_turn = turn_text_for_embedding(&session.turns[2 * i + 1]);
            let su = cosine(&user_turn, &fact_text);
            let sa = cosine(&ack_turn, &fact_text);
            assert!(
                su > 0.65,
                "{}: fact {i} user turn sim {su:.3} <= 0.65",
                spec.session_id
            );
            assert!(
                sa > 0.65,
                "{}: fact {i} ack turn sim {sa:.3} <= 0.65",
                spec.session_id
            );

            if OMITTED_INITIAL.contains(&i) {
                // Turns of omitted facts must stay uncovered against
                // everything the initial pass produced.
                for entry in initial_entries
                    .iter()
                    .chain(std::iter::once(&spec.hallucination.to_string()))
                {
                    for turn in [&user_turn, &ack_turn] {
                        let s = cosine(turn, entry);
                        assert!(
                            s < 0.55,
                            "{}: omitted fact {i} turn scores {s:.3} against {entry:?}",
                            spec.session_id
                        );
                    }
                }
            }
        }

        // Distinct facts (and the hallucination) stay below dedup and
        // eval thresholds against each other.
        let mut all_texts: Vec<String> = spec.facts.iter().map(Fact::text).collect();
        all_texts.push(spec.hallucination.to_string());
        for i in 0..all_texts.len() {
            for j in i + 1..all_texts.len() {
                let s = cosine(&all_texts[i], &all_texts[j]);
                assert!(
                    s < 0.75,
                    "{}: {:?} vs {:?} sim {s:.3} >= 0.75",
                    spec.session_id,
                    all_texts[i],
                    all_texts[j]
                );
            }
        }

        // The hallucination matches no turn.
        for turn in &session.turns {
            let s = cosine(&turn_text_for_embedding(turn), spec.hallucination);
            assert!(
                s < 0.55,
                "{}: hallucination scores {s:.3} against turn {}",
                spec.session_id,
                turn.turn_index
            );
        }
    }

    // Fact texts are unique corpus-wide (embedding cache correctness and
    // unambiguous oracle lookups depend on it).
    let mut seen = std::collections::HashSet::new();
    for spec in &corpus.specs {
        for fact in &spec.facts {
            assert!(
                seen.insert(fact.text()),
                "duplicate fact text {:?}",
                fact.text()
            );
        }
        assert!(
            seen.insert(spec.hallucination.to_string()),
            "duplicate hallucination"
        );
    }
}
