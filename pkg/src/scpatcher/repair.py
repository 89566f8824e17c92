"""Prompt assembly and the two-stage repair orchestrator.

Stage 1 asks for a patch guided by retrieved reference implementations,
their trust scores, and the target's signature constraints. If the patch
fails verification, Stage 2 re-prompts with an explicit step-by-step
reasoning scaffold plus the verbatim failure feedback, then verifies again.
Prompt wording is frozen by golden-file tests; bump PROMPT_TEMPLATE_VERSION
when changing it.
"""

from __future__ import annotations

import hashlib
import logging
import re
from dataclasses import dataclass, field
from typing import Optional

from .embedding import Candidate, index_from_graph, knn, provider_from_meta
from .graph import PropertyGraph
from .ingest import SourceUnit
from .llm import LlmError, LlmRequest
from .model import (
    VULN_CLASS_SUMMARIES,
    FunctionUnit,
    PatchCandidate,
    RepairOutcome,
    RepairStage,
    SignatureFeatures,
    VulnClass,
    VulnerabilityReport,
)
from .rerank import DEFAULT_EPSILON, DEFAULT_K, DEFAULT_TOP_N, QueryContext, RerankConfig, rerank
from .verify import BUILTIN_PARSE, CompileMode, VerificationResult, verify_patch

log = logging.getLogger(__name__)

PROMPT_TEMPLATE_VERSION = "1"

_SYSTEM_TEXT = (
    "You are an expert Solidity security engineer. You repair exactly one "
    "vulnerability per request, change as little code as possible, and answer "
    "with one fenced code block containing the complete patched source file."
)

_COT_SCAFFOLD = (
    "Reason step by step before patching:\n"
    "1. Locate the flawed statement or statements.\n"
    "2. Explain the exploit path an attacker would take.\n"
    "3. Plan the minimal fix that preserves intended behavior.\n"
    "4. Emit the complete patched source file in one fenced code block."
)

_FENCE_RE = re.compile(r"```[a-zA-Z]*\n(.*?)```", re.DOTALL)

_VISIBILITY_AND_MUTABILITY = {
    "public", "private", "internal", "external",
    "pure", "view", "payable", "nonpayable",
}


@dataclass(frozen=True)
class Reference:
    """One retrieved reference implementation, ready for prompting."""

    code: str
    s_final: float
    guf: int
    signature: SignatureFeatures


@dataclass(frozen=True)
class Prompt:
    system_text: str
    user_text: str
    slots: dict

    def digest(self) -> str:
        payload = self.system_text + "\0" + self.user_text
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def references_from(candidates: list[Candidate], graph: PropertyGraph) -> list[Reference]:
    """Resolve reranked candidates to their source text via the graph."""
    refs = []
    for candidate in candidates:
        payload = graph.node(candidate.function_id).payload
        if payload is None:
            continue
        refs.append(Reference(
            code=payload.source_text,
            s_final=candidate.s_final if candidate.s_final is not None else candidate.s_sem,
            guf=candidate.guf,
            signature=candidate.signature,
        ))
    return refs


def required_signature(fn: FunctionUnit) -> SignatureFeatures:
    """The feature subset a reference must share: visibility and mutability."""
    kept = fn.signature.feature_set & _VISIBILITY_AND_MUTABILITY
    return SignatureFeatures(frozenset(kept))


def _render_references(refs: list[Reference]) -> str:
    if not refs:
        return "none retrieved"
    blocks = []
    for rank, ref in enumerate(refs, start=1):
        features = ", ".join(ref.signature.sorted_features()) or "(none)"
        blocks.append(
            f"[{rank}] trust-adjusted distance {ref.s_final:.4f}, "
            f"usage frequency {ref.guf}, signature: {features}\n"
            f"```solidity\n{ref.code}\n```"
        )
    return "\n".join(blocks)


def _stage1_user_text(vuln_fn: FunctionUnit, vuln_class: VulnClass,
                      refs: list[Reference]) -> str:
    constraints = ", ".join(vuln_fn.signature.sorted_features()) or "(none)"
    return (
        "Task: repair the vulnerability below and return the complete patched "
        "Solidity source file.\n"
        "\n"
        f"Vulnerability class: {vuln_class}\n"
        f"Definition: {VULN_CLASS_SUMMARIES[vuln_class]}\n"
        "\n"
        f"Vulnerable function (contract {vuln_fn.contract_name}):\n"
        f"```solidity\n{vuln_fn.source_text}\n```\n"
        "\n"
        f"Signature constraints to preserve: {constraints}\n"
        "\n"
        "Reference implementations, most trustworthy first (lower distance is "
        "closer, higher usage frequency is more trusted):\n"
        f"{_render_references(refs)}\n"
        "\n"
        "Return only one fenced code block with the full patched source file. "
        "No commentary outside the block."
    )


def build_stage1_prompt(vuln_fn: FunctionUnit, vuln_class: VulnClass,
                        refs: list[Reference]) -> Prompt:
    """Knowledge-guided prompt: class, target code, references, constraints."""
    return Prompt(
        system_text=_SYSTEM_TEXT,
        user_text=_stage1_user_text(vuln_fn, vuln_class, refs),
        slots={
            "vulnerable_code": vuln_fn.source_text,
            "vuln_class": str(vuln_class),
            "references": [
                {"code": r.code, "s_final": r.s_final, "guf": r.guf,
                 "signature": r.signature.sorted_features()}
                for r in refs
            ],
            "signature_constraints": vuln_fn.signature.sorted_features(),
            "stage": RepairStage.KNOWLEDGE_GUIDED.value,
            "failure_feedback": None,
        },
    )


def build_cot_prompt(vuln_fn: FunctionUnit, vuln_class: VulnClass,
                     refs: list[Reference], feedback: list[str]) -> Prompt:
    """Stage-2 prompt: stage-1 content plus scaffold and verbatim feedback."""
    if not feedback:
        raise ValueError("chain-of-thought prompt requires non-empty feedback")
    feedback_block = "\n".join(feedback)
    user_text = (
        _stage1_user_text(vuln_fn, vuln_class, refs)
        + "\n\n"
        + "A previous patch attempt failed verification. Verbatim failure "
          "feedback:\n"
        + feedback_block
        + "\n\n"
        + _COT_SCAFFOLD
    )
    stage1 = build_stage1_prompt(vuln_fn, vuln_class, refs)
    slots = dict(stage1.slots)
    slots["stage"] = RepairStage.CHAIN_OF_THOUGHT.value
    slots["failure_feedback"] = list(feedback)
    return Prompt(system_text=_SYSTEM_TEXT, user_text=user_text, slots=slots)


def extract_patch_source(response_text: str) -> str:
    """First fenced code block, or the whole response if none."""
    match = _FENCE_RE.search(response_text)
    if match:
        return match.group(1)
    return response_text


def generate(prompt: Prompt, backend, model: str = "default",
             temperature: float = 0.0, max_tokens: int = 4096) -> PatchCandidate:
    """Send one prompt and wrap the reply as a patch candidate."""
    request = LlmRequest(
        messages=(("system", prompt.system_text), ("user", prompt.user_text)),
        model=model,
        temperature=temperature,
        max_tokens=max_tokens,
    )
    digest = prompt.digest()
    response = backend.complete(request, prompt_digest=digest)
    if not response.text.strip():
        raise LlmError("EmptyResponse", f"backend returned no text for prompt {digest[:12]}")
    return PatchCandidate(
        patched_source=extract_patch_source(response.text),
        stage=RepairStage(prompt.slots["stage"]),
        prompt_digest=digest,
    )


@dataclass
class RepairConfig:
    k: int = DEFAULT_K
    top_n: int = DEFAULT_TOP_N
    epsilon: float = DEFAULT_EPSILON
    stage1_attempts: int = 1
    stage2_attempts: int = 1
    backend: object = None
    model: str = "default"
    temperature: float = 0.0
    max_tokens: int = 4096
    compile_mode: CompileMode = BUILTIN_PARSE

    def __post_init__(self) -> None:
        if self.stage1_attempts < 1 or self.stage2_attempts < 1:
            raise ValueError("attempt budgets must be >= 1")


@dataclass
class _AttemptRecord:
    patch: Optional[PatchCandidate] = None
    result: Optional[VerificationResult] = None
    feedback: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.result is not None and self.result.passed


def _attempt(prompt: Prompt, stage: RepairStage, original: str,
             report: VulnerabilityReport, target_name: str,
             cfg: RepairConfig, diagnostics: list[str]) -> _AttemptRecord:
    record = _AttemptRecord()
    try:
        record.patch = generate(prompt, cfg.backend, model=cfg.model,
                                temperature=cfg.temperature, max_tokens=cfg.max_tokens)
    except LlmError as exc:
        line = f"{stage.value}: generation failed: {exc.code}: {exc}"
        diagnostics.append(line)
        record.feedback = [line]
        return record
    record.result = verify_patch(original, record.patch, report,
                                 mode=cfg.compile_mode, target_name=target_name)
    record.feedback = record.result.failure_feedback()
    for line in record.feedback:
        diagnostics.append(f"{stage.value}: {line}")
    return record


def repair(contract: SourceUnit, report: VulnerabilityReport,
           kb: PropertyGraph, cfg: RepairConfig) -> RepairOutcome:
    """Retrieve references, prompt, verify; escalate to stage 2 on failure."""
    fn = contract.find_function_by_id(report.function_id)
    if fn is None:
        raise ValueError(
            f"function {report.function_id!r} not found in {contract.path}")
    diagnostics: list[str] = []

    provider = provider_from_meta(kb.embedder_meta)
    query_vector = provider.embed(fn.source_text)
    index = index_from_graph(kb)
    candidates = knn(index, query_vector, cfg.top_n)
    context = QueryContext(
        query_vector=query_vector,
        sig_req=required_signature(fn),
        vuln_class=report.vuln_class,
    )
    selected = rerank(candidates, context,
                      RerankConfig(epsilon=cfg.epsilon, k=cfg.k, top_n=cfg.top_n))
    refs = references_from(selected, kb)
    log.debug("repair %s: %d references after rerank", fn.qualified_name, len(refs))

    original = contract.source_text
    last = _AttemptRecord()
    stage_used = RepairStage.KNOWLEDGE_GUIDED
    stage1 = build_stage1_prompt(fn, report.vuln_class, refs)
    for _ in range(cfg.stage1_attempts):
        last = _attempt(stage1, RepairStage.KNOWLEDGE_GUIDED, original,
                        report, fn.name, cfg, diagnostics)
        if last.passed:
            break

    if not last.passed:
        feedback = last.feedback or ["verification failed with no diagnostics"]
        stage_used = RepairStage.CHAIN_OF_THOUGHT
        cot = build_cot_prompt(fn, report.vuln_class, refs, feedback)
        for _ in range(cfg.stage2_attempts):
            last = _attempt(cot, RepairStage.CHAIN_OF_THOUGHT, original,
                            report, fn.name, cfg, diagnostics)
            if last.passed:
                break

    compiled = last.result.compiled if last.result is not None else False
    return RepairOutcome(
        report=report,
        compiled=compiled,
        fixed=last.passed,
        stage_used=stage_used,
        patch=last.patch,
        diagnostics=tuple(diagnostics),
    )
