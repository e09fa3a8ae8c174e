//! Wholesale simulation: the multi-round dealer/service/manufacturer
//! dialogue state machine and symbolic discovery of purchasing formulas.

mod dialogue;
mod refine;
mod symbolic;

pub use dialogue::{
    advance_round, find_wholesale_sidecar, init_dialogue, role_for_round, run_dialogue,
    simulate_wholesale, write_transcript_jsonl, DialogueError, DialogueState, RoleTemplates,
    TranscriptEntry, WholesaleCandidate, WholesaleSidecar, WHOLESALE_SIDECAR_PREFIX,
};
pub use refine::{refine_rule_via_dialogue, RefineOutcome};
pub use symbolic::{
    discover_rule, discover_rule_with, evaluate_rule, expand_polynomial, parse_expression,
    polynomials_match, Expr, RuleDataset, RuleFit, SearchConfig, SymbolicError,
    COMPLEXITY_PENALTY, FEATURE_NAMES,
};
