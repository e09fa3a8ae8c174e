//! The structured multi-round dialogue: background, append-only history,
//! and a fixed role schedule.
//!
//! Schedule for n rounds (n >= 4): round 1 dealer, round 2 service,
//! round 3 manufacturer, rounds 4..n-1 cycle dealer -> service ->
//! manufacturer, round n dealer (final synthesis).

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{
    chat, parse_wholesale, select_backend, BackendError, ChatRole, DialogueRole, Message,
    ModelPool, ParseError, ParseStatus, WholesaleDecision,
};

#[derive(Debug, Error)]
pub enum DialogueError {
    #[error("dialogue needs at least 4 rounds, got {0}")]
    TooFewRounds(usize),
    #[error("dialogue already complete at round {0}")]
    AlreadyComplete(usize),
    #[error("backend failure at round {round}: {source}")]
    Backend {
        round: usize,
        source: BackendError,
        partial: Vec<(DialogueRole, String)>,
    },
    #[error("decision parse failure: {source}")]
    Parse {
        source: ParseError,
        transcript: Vec<(DialogueRole, String)>,
    },
    #[error("template io error: {0}")]
    TemplateIo(std::io::Error),
}

/// Role instruction templates; loadable from a directory of plain text
/// files (dealer.txt, service.txt, manufacturer.txt, dealer_final.txt).
#[derive(Debug, Clone)]
pub struct RoleTemplates {
    pub dealer: String,
    pub service: String,
    pub manufacturer: String,
    pub dealer_final: String,
}

impl Default for RoleTemplates {
    fn default() -> Self {
        RoleTemplates {
            dealer: include_str!("../../templates/dealer.txt").to_string(),
            service: include_str!("../../templates/service.txt").to_string(),
            manufacturer: include_str!("../../templates/manufacturer.txt").to_string(),
            dealer_final: include_str!("../../templates/dealer_final.txt").to_string(),
        }
    }
}

impl RoleTemplates {
    pub fn from_dir(dir: &Path) -> Result<RoleTemplates, DialogueError> {
        let read = |name: &str| {
            std::fs::read_to_string(dir.join(name)).map_err(DialogueError::TemplateIo)
        };
        Ok(RoleTemplates {
            dealer: read("dealer.txt")?,
            service: read("service.txt")?,
            manufacturer: read("manufacturer.txt")?,
            dealer_final: read("dealer_final.txt")?,
        })
    }

    fn for_role(&self, role: DialogueRole, is_final: bool) -> &str {
        if is_final {
            return &self.dealer_final;
        }
        match role {
            DialogueRole::Dealer => &self.dealer,
            DialogueRole::Service => &self.service,
            DialogueRole::Manufacturer => &self.manufacturer,
            DialogueRole::Background => &self.dealer,
        }
    }
}

pub const WHOLESALE_SIDECAR_PREFIX: &str = "[wholesale-sidecar] ";

/// Machine-readable candidate table embedded in dialogue backgrounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WholesaleSidecar {
    pub candidates: Vec<WholesaleCandidate>,
    pub target_volume: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WholesaleCandidate {
    pub product_id: String,
    pub price: crate::money::Money,
}

impl WholesaleSidecar {
    pub fn render(&self) -> String {
        format!(
            "{WHOLESALE_SIDECAR_PREFIX}{}",
            serde_json::to_string(self).expect("sidecar serializes")
        )
    }
}

pub fn find_wholesale_sidecar(text: &str) -> Option<WholesaleSidecar> {
    for line in text.lines() {
        if let Some(json) = line.strip_prefix(WHOLESALE_SIDECAR_PREFIX) {
            return serde_json::from_str(json).ok();
        }
    }
    None
}

/// Append-only dialogue state. `history[0]` is the background entry and
/// `history.len() == round + 1` always holds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DialogueState {
    pub background: String,
    pub history: Vec<(DialogueRole, String)>,
    pub round: usize,
    pub n_rounds: usize,
    /// Offset into the pool's selection stream, so concurrent dialogues
    /// draw independent backends.
    #[serde(default)]
    pub selection_offset: u64,
}

/// Scheduled speaker for a 1-based round index.
pub fn role_for_round(round: usize, n_rounds: usize) -> DialogueRole {
    debug_assert!(round >= 1 && round <= n_rounds);
    if round == n_rounds {
        return DialogueRole::Dealer;
    }
    match round {
        1 => DialogueRole::Dealer,
        2 => DialogueRole::Service,
        3 => DialogueRole::Manufacturer,
        r => match (r - 4) % 3 {
            0 => DialogueRole::Dealer,
            1 => DialogueRole::Service,
            _ => DialogueRole::Manufacturer,
        },
    }
}

pub fn init_dialogue(background: &str, n_rounds: usize) -> Result<DialogueState, DialogueError> {
    if n_rounds < 4 {
        return Err(DialogueError::TooFewRounds(n_rounds));
    }
    Ok(DialogueState {
        background: background.to_string(),
        history: vec![(DialogueRole::Background, background.to_string())],
        round: 0,
        n_rounds,
        selection_offset: 0,
    })
}

fn serialize_history(state: &DialogueState) -> String {
    let mut out = String::new();
    for (i, (role, text)) in state.history.iter().enumerate() {
        if i == 0 {
            out.push_str("[background]\n");
        } else {
            out.push_str(&format!("[round {i} | {role}]\n"));
        }
        out.push_str(text);
        out.push_str("\n\n");
    }
    out
}

/// Run one round: the scheduled role's agent sees the full serialized
/// history plus its role instruction; its analysis is appended. The input
/// state is left untouched — a new state is returned.
pub fn advance_round(
    state: &DialogueState,
    pool: &ModelPool,
    templates: &RoleTemplates,
) -> Result<DialogueState, DialogueError> {
    if state.round >= state.n_rounds {
        return Err(DialogueError::AlreadyComplete(state.round));
    }
    let round = state.round + 1;
    let role = role_for_round(round, state.n_rounds);
    let is_final = round == state.n_rounds;

    let system = format!(
        "[role] {role}\n[round] {round}/{n}\n[final] {is_final}\n{instruction}",
        n = state.n_rounds,
        instruction = templates.for_role(role, is_final),
    );
    let user = format!(
        "Dialogue so far:\n\n{}Provide your round-{round} analysis as the {role}.",
        serialize_history(state)
    );
    let messages: Vec<Message> = vec![(ChatRole::System, system), (ChatRole::User, user)];

    let backend = select_backend(pool, state.selection_offset + round as u64);
    let analysis = chat(backend, &messages).map_err(|source| DialogueError::Backend {
        round,
        source,
        partial: state.history.clone(),
    })?;

    let mut next = state.clone();
    next.history.push((role, analysis));
    next.round = round;
    Ok(next)
}

/// Execute rounds 1..n; the returned history has n+1 entries and ends
/// with the dealer's synthesis.
pub fn run_dialogue(
    background: &str,
    n_rounds: usize,
    pool: &ModelPool,
    templates: &RoleTemplates,
) -> Result<DialogueState, DialogueError> {
    run_dialogue_with_offset(background, n_rounds, pool, templates, 0)
}

pub fn run_dialogue_with_offset(
    background: &str,
    n_rounds: usize,
    pool: &ModelPool,
    templates: &RoleTemplates,
    selection_offset: u64,
) -> Result<DialogueState, DialogueError> {
    let mut state = init_dialogue(background, n_rounds)?;
    state.selection_offset = selection_offset;
    while state.round < state.n_rounds {
        state = advance_round(&state, pool, templates)?;
    }
    Ok(state)
}

/// Full wholesale simulation: dialogue plus decision extraction.
pub fn simulate_wholesale(
    background: &str,
    n_rounds: usize,
    pool: &ModelPool,
    templates: &RoleTemplates,
) -> Result<(WholesaleDecision, ParseStatus, DialogueState), DialogueError> {
    let state = run_dialogue(background, n_rounds, pool, templates)?;
    match parse_wholesale(&state.history) {
        Ok((decision, status)) => Ok((decision, status, state)),
        Err(source) => Err(DialogueError::Parse {
            source,
            transcript: state.history,
        }),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub round: usize,
    pub role: String,
    pub text: String,
}

pub fn write_transcript_jsonl(path: &Path, state: &DialogueState) -> Result<(), std::io::Error> {
    let mut out = String::new();
    for (i, (role, text)) in state.history.iter().enumerate() {
        let entry = TranscriptEntry {
            round: i,
            role: role.to_string(),
            text: text.clone(),
        };
        out.push_str(&serde_json::to_string(&entry).expect("entry serializes"));
        out.push('\n');
    }
    std::fs::write(path, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{Backend, MockBehavior};

    fn mock_pool() -> ModelPool {
        ModelPool::single(Backend::mock(
            "roles",
            MockBehavior::WholesaleRole { proposal: None },
        ))
    }

    fn background_with_sidecar() -> String {
        let sidecar = WholesaleSidecar {
            candidates: vec![
                WholesaleCandidate {
                    product_id: "P9".into(),
                    price: "4.00".parse().unwrap(),
                },
                WholesaleCandidate {
                    product_id: "P2".into(),
                    price: "3.00".parse().unwrap(),
                },
            ],
            target_volume: 120,
        };
        format!("Quarterly replenishment for region west.\n{}", sidecar.render())
    }

    #[test]
    fn init_requires_four_rounds() {
        assert!(matches!(init_dialogue("bg", 3), Err(DialogueError::TooFewRounds(3))));
        let state = init_dialogue("bg", 5).unwrap();
        assert_eq!(state.history.len(), 1);
        assert_eq!(state.history[0].1, "bg");
        assert_eq!(state.round, 0);
    }

    #[test]
    fn schedule_for_small_and_cycled_rounds() {
        let roles: Vec<DialogueRole> = (1..=4).map(|r| role_for_round(r, 4)).collect();
        assert_eq!(
            roles,
            vec![
                DialogueRole::Dealer,
                DialogueRole::Service,
                DialogueRole::Manufacturer,
                DialogueRole::Dealer
            ]
        );
        let roles7: Vec<DialogueRole> = (1..=7).map(|r| role_for_round(r, 7)).collect();
        assert_eq!(
            roles7,
            vec![
                DialogueRole::Dealer,
                DialogueRole::Service,
                DialogueRole::Manufacturer,
                DialogueRole::Dealer,
                DialogueRole::Service,
                DialogueRole::Manufacturer,
                DialogueRole::Dealer
            ]
        );
    }

    #[test]
    fn advance_appends_exactly_one_scheduled_turn() {
        let pool = mock_pool();
        let templates = RoleTemplates::default();
        let s0 = init_dialogue(&background_with_sidecar(), 4).unwrap();
        let s1 = advance_round(&s0, &pool, &templates).unwrap();
        assert_eq!(s1.history.len(), 2);
        assert_eq!(s1.history[1].0, DialogueRole::Dealer);
        // Input state untouched.
        assert_eq!(s0.history.len(), 1);
        let s2 = advance_round(&s1, &pool, &templates).unwrap();
        assert_eq!(s2.history.len(), 3);
        assert_eq!(s2.history[2].0, DialogueRole::Service);
    }

    #[test]
    fn run_dialogue_full_protocol_and_parse() {
        let pool = mock_pool();
        let templates = RoleTemplates::default();
        let state = run_dialogue(&background_with_sidecar(), 4, &pool, &templates).unwrap();
        assert_eq!(state.history.len(), 5);
        assert_eq!(state.history.last().unwrap().0, DialogueRole::Dealer);
        let (decision, _) = parse_wholesale(&state.history).unwrap();
        assert_eq!(decision, WholesaleDecision { product_id: "P2".into(), quantity: 120 });
    }

    #[test]
    fn simulate_wholesale_scripted_convergence_and_replay() {
        let pool = mock_pool();
        let templates = RoleTemplates::default();
        let bg = background_with_sidecar();
        let (d1, _, t1) = simulate_wholesale(&bg, 6, &pool, &templates).unwrap();
        assert_eq!(d1.product_id, "P2");
        assert_eq!(d1.quantity, 120);
        let (d2, _, t2) = simulate_wholesale(&bg, 6, &pool, &templates).unwrap();
        assert_eq!(d1, d2);
        assert_eq!(t1.history, t2.history);
    }

    #[test]
    fn missing_final_decision_block_keeps_transcript() {
        // Canned agent never emits a decision block.
        let pool = ModelPool::single(Backend::mock("c", MockBehavior::Canned("chatter".into())));
        let templates = RoleTemplates::default();
        let err = simulate_wholesale("bg", 4, &pool, &templates).unwrap_err();
        match err {
            DialogueError::Parse { source, transcript } => {
                assert!(matches!(source, ParseError::NoDecisionFound { .. }));
                assert_eq!(transcript.len(), 5);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn history_serialization_is_prefix_stable() {
        let pool = mock_pool();
        let templates = RoleTemplates::default();
        let mut state = init_dialogue(&background_with_sidecar(), 6).unwrap();
        let mut serials = vec![serialize_history(&state)];
        while state.round < state.n_rounds {
            state = advance_round(&state, &pool, &templates).unwrap();
            serials.push(serialize_history(&state));
        }
        for pair in serials.windows(2) {
            assert!(pair[1].starts_with(&pair[0]));
        }
    }
}
