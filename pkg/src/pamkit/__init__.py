"""Portable agent memory toolkit.

Signed, content-addressed memory artifacts; capability-scoped access;
an injection-resistant re-hydration pipeline; and the evaluation
harness that keeps the security properties honest.
"""

from .capability import (
    CapabilityToken,
    Permission,
    RevocationList,
    ScopeExpression,
    authorize,
    issue_token,
    resolve_scope,
    validate_token,
)
from .errors import (
    CanonicalizationError,
    CapabilityError,
    DecodeError,
    PamError,
    ProvenanceError,
    RehydrationError,
)
from .framing import (
    DataBlock,
    DIRECTIVE_BLOCK,
    InjectionFinding,
    enforce_content_type,
    escape_content,
    frame,
    scan_injection,
)
from .keys import KeyPair, KeyRegistry, generate_keypair, keypair_from_seed
from .model import (
    Components,
    EpisodicEntry,
    Entry,
    IdentityEntry,
    MemoryArtifact,
    ProceduralEntry,
    RedactedEntry,
    SemanticEntry,
    SourceAgent,
    WorkingEntry,
    artifact_from_record,
    entry_from_record,
    new_artifact,
    validate_entry,
    validate_envelope,
)
from .provenance import (
    ProvenanceDag,
    VerificationReport,
    build_dag,
    compute_entry_id,
    compute_root_hash,
    derive,
    redact_entry,
    selective_disclose,
    sign_artifact,
    verify_artifact,
)
from .rehydrate import (
    CompressionPlan,
    RehydrationConfig,
    RehydrationResult,
    RelevanceWeights,
    TaskContext,
    compress,
    estimate_tokens,
    rank,
    rehydrate,
    render_entry,
    score_relevance,
)
from .serialization import (
    MAGIC_HEADER,
    WireFormat,
    decode_artifact,
    encode_artifact,
    read_artifact,
    write_artifact,
)

__version__ = "0.1.0"

__all__ = [
    "CanonicalizationError", "CapabilityError", "CapabilityToken", "Components",
    "CompressionPlan", "DataBlock", "DecodeError", "DIRECTIVE_BLOCK", "Entry",
    "EpisodicEntry", "IdentityEntry", "InjectionFinding", "KeyPair", "KeyRegistry",
    "MAGIC_HEADER", "MemoryArtifact", "PamError", "Permission", "ProceduralEntry",
    "ProvenanceDag", "ProvenanceError", "RedactedEntry", "RehydrationConfig",
    "RehydrationError", "RehydrationResult", "RelevanceWeights", "RevocationList",
    "ScopeExpression", "SemanticEntry", "SourceAgent", "TaskContext",
    "VerificationReport", "WireFormat", "WorkingEntry",
    "artifact_from_record", "authorize", "build_dag", "compress", "compute_entry_id",
    "compute_root_hash", "decode_artifact", "derive", "encode_artifact",
    "enforce_content_type", "entry_from_record", "escape_content", "estimate_tokens",
    "frame", "generate_keypair", "issue_token", "keypair_from_seed", "new_artifact", "rank",
    "read_artifact", "redact_entry", "rehydrate", "render_entry", "resolve_scope",
    "scan_injection", "score_relevance", "selective_disclose", "sign_artifact",
    "validate_entry", "validate_envelope", "validate_token", "verify_artifact",
    "write_artifact",
]
