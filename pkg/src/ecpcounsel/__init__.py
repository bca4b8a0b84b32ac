"""Multi-agent counseling runtime for emergency contraceptive pill sales.

A conversationalist agent fronts the customer, a symptom assessor resolves
lay mentions of allergies, medications, and diseases to canonical terms, and
a medicine interpreter splits the product range into safe and excluded pills.
Progress is tracked against a step-graph conversation procedure, and every
action lands in an append-only transcript that fully determines the state.
"""
from .conversation_spec import (
    ConversationSpec,
    ProgressTracker,
    Step,
    StepKind,
    StepStatus,
    RiskLevel,
    coverage_report,
    load_spec,
    mandatory_coverage,
    mark_step,
    next_pending_steps,
    parse_spec,
)
from .knowledge_base import KnowledgeBase, Partition, Table, load_kb, products_excluded_by
from .matching_tools import (
    MatchThresholds,
    classify_contraindication,
    check_pill_contraindicating_allergies,
    check_pill_contraindicating_medications_and_diseases,
    find_most_similar_word_allergies,
    find_most_similar_word_regular_medications_and_diseases,
    similarity,
)
from .agent_graph import Runtime, SharedMemory, run_turn, standard_graph
from .agents import build_runtime, load_default_profiles

__version__ = "0.1.0"

__all__ = [
    "ConversationSpec",
    "ProgressTracker",
    "Step",
    "StepKind",
    "StepStatus",
    "RiskLevel",
    "coverage_report",
    "load_spec",
    "mandatory_coverage",
    "mark_step",
    "next_pending_steps",
    "parse_spec",
    "KnowledgeBase",
    "Partition",
    "Table",
    "load_kb",
    "products_excluded_by",
    "MatchThresholds",
    "classify_contraindication",
    "check_pill_contraindicating_allergies",
    "check_pill_contraindicating_medications_and_diseases",
    "find_most_similar_word_allergies",
    "find_most_similar_word_regular_medications_and_diseases",
    "similarity",
    "Runtime",
    "SharedMemory",
    "run_turn",
    "standard_graph",
    "build_runtime",
    "load_default_profiles",
    "__version__",
]
