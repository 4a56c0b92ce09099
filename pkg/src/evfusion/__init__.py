"""Evidence-weighted fusion of audio-language-model observations and tool measurements."""

from .evidence import (
    ContentType,
    EvidenceItem,
    EvidenceStatus,
    Observation,
    ReliabilityTier,
    RiskLevel,
    ScoringConfig,
    domain_factor,
    evidence_weight,
    score_evidence,
    tier_policy,
)
from .pipeline import Runtime, SampleSpec, run_batch, run_sample
from .stats import holm_bonferroni, mcnemar_chi2, mcnemar_exact

__version__ = "0.1.0"

__all__ = [
    "ContentType",
    "EvidenceItem",
    "EvidenceStatus",
    "Observation",
    "ReliabilityTier",
    "RiskLevel",
    "Runtime",
    "SampleSpec",
    "ScoringConfig",
    "domain_factor",
    "evidence_weight",
    "holm_bonferroni",
    "mcnemar_chi2",
    "mcnemar_exact",
    "run_batch",
    "run_sample",
    "score_evidence",
    "tier_policy",
]
