"""Prompt assembly and reply parsing for heuristic design queries.

Prompts are built from plain-text template files, one directory per
problem, one section per file, so the wording can be changed without
touching code. Replies are parsed into a (thought, code) pair with
deliberately strict extraction rules: a brace-delimited description and
a fenced code block defining the requested function name.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

from .core import CROSSOVER_STRATEGIES, INIT, REPRESENTATION_MODES, STRATEGY_ORDER, Heuristic

TEMPLATE_ROOT = Path(__file__).parent / "templates"

_COUNT_WORDS = {2: "two", 3: "three", 4: "four", 5: "five", 6: "six",
                7: "seven", 8: "eight", 9: "nine", 10: "ten"}

_FENCE_RE = re.compile(r"```[^\n]*\n(.*?)```", re.DOTALL)
_BRACE_RE = re.compile(r"\{(.*?)\}", re.DOTALL)


class ArityMismatch(ValueError):
    """Parent count does not match what the strategy expects."""


class ParseError(ValueError):
    """A reply could not be split into the requested parts."""


class MissingCode(ParseError):
    pass


class MissingFunctionName(ParseError):
    pass


class MissingThought(ParseError):
    pass


@dataclass(frozen=True)
class FunctionSpec:
    """Callable interface the generated code must implement."""

    function_name: str
    inputs: tuple[tuple[str, str], ...]
    outputs: tuple[tuple[str, str], ...]
    language_name: str = "Python"

    def __post_init__(self) -> None:
        names = [self.function_name] + [n for n, _ in self.inputs] + [n for n, _ in self.outputs]
        if not self.inputs or not self.outputs:
            raise ValueError("inputs and outputs must be non-empty")
        for name in names:
            if not name.isidentifier():
                raise ValueError("not an identifier: %r" % name)

    @property
    def input_names(self) -> tuple[str, ...]:
        return tuple(n for n, _ in self.inputs)


@dataclass(frozen=True)
class PromptTemplateSet:
    """Text sections for one problem, loaded from a template directory."""

    task_description: str
    strategy_instructions: Mapping[str, str]
    request_description: str
    request_description_e2: str
    request_code: str
    note: str
    parent_block: str
    parent_block_code: str
    parent_block_thought: str
    parent_intro_many: str
    parent_intro_one: str
    parent_intro_thoughts_many: str
    parent_intro_thoughts_one: str
    materialize_intro: str

    def __post_init__(self) -> None:
        for strategy in (INIT,) + STRATEGY_ORDER:
            if not self.strategy_instructions.get(strategy):
                raise ValueError("missing instruction for strategy %s" % strategy)
        for name, value in vars(self).items():
            if isinstance(value, str) and not value.strip():
                raise ValueError("empty template section: %s" % name)


@dataclass(frozen=True)
class ParsedReply:
    thought: str | None = None
    code: str | None = None


def load_template_set(problem: str | Path) -> PromptTemplateSet:
    """Load a template directory, either a shipped problem name or a path."""
    directory = Path(problem)
    if not directory.is_dir():
        directory = TEMPLATE_ROOT / str(problem)
    if not directory.is_dir():
        raise FileNotFoundError("no template directory for %r" % str(problem))

    def section(name: str) -> str:
        path = directory / (name + ".txt")
        if not path.is_file():
            raise FileNotFoundError("template section missing: %s" % path)
        return path.read_text(encoding="utf-8").rstrip("\n")

    instructions = {INIT: section("strategy_init")}
    for strategy in STRATEGY_ORDER:
        instructions[strategy] = section("strategy_" + strategy.lower())
    return PromptTemplateSet(
        task_description=section("task"),
        strategy_instructions=instructions,
        request_description=section("request_desc"),
        request_description_e2=section("request_desc_e2"),
        request_code=section("request_code"),
        note=section("note"),
        parent_block=section("parent_block"),
        parent_block_code=section("parent_block_code"),
        parent_block_thought=section("parent_block_thought"),
        parent_intro_many=section("parent_intro"),
        parent_intro_one=section("parent_intro_one"),
        parent_intro_thoughts_many=section("parent_intro_thoughts"),
        parent_intro_thoughts_one=section("parent_intro_thoughts_one"),
        materialize_intro=section("materialize_intro"),
    )


def _count_word(n: int) -> str:
    return _COUNT_WORDS.get(n, str(n))


def _capitalized(sentence: str) -> str:
    sentence = sentence.lstrip()
    return sentence[:1].upper() + sentence[1:]


def _parent_sections(templates: PromptTemplateSet, parents: Sequence[Heuristic],
                     mode: str) -> list[str]:
    if not parents:
        return []
    thoughts_only = mode == "T2T2C"
    if len(parents) == 1:
        intro = (templates.parent_intro_thoughts_one if thoughts_only
                 else templates.parent_intro_one)
    else:
        intro = (templates.parent_intro_thoughts_many if thoughts_only
                 else templates.parent_intro_many)
        intro = intro.format(count=_count_word(len(parents)))
    if mode == "C2C":
        block = templates.parent_block_code
    elif thoughts_only:
        block = templates.parent_block_thought
    else:
        block = templates.parent_block
    sections = [intro]
    for index, parent in enumerate(parents, start=1):
        sections.append(block.format(index=index, thought=parent.thought,
                                     code=parent.code))
    return sections


def _check_arity(strategy: str, n_parents: int) -> None:
    if strategy == INIT:
        if n_parents != 0:
            raise ArityMismatch("%s takes no parents, got %d" % (strategy, n_parents))
    elif strategy in CROSSOVER_STRATEGIES:
        if n_parents < 1:
            raise ArityMismatch("%s needs at least one parent" % strategy)
    elif strategy in STRATEGY_ORDER:
        if n_parents != 1:
            raise ArityMismatch("%s takes exactly one parent, got %d" % (strategy, n_parents))
    else:
        raise ValueError("unknown strategy %r" % strategy)


def build_prompt(templates: PromptTemplateSet, spec: FunctionSpec, strategy: str,
                 parents: Sequence[Heuristic], mode: str = "FULL") -> str:
    """Assemble the first (or only) query for one design attempt.

    Section order: task, parent block, strategy instruction, requested
    outputs, note. Under T2T2C and TC2T2C only the description is
    requested here; the code is asked for by a follow-up prompt built
    with build_code_prompt.
    """
    if mode not in REPRESENTATION_MODES:
        raise ValueError("unknown representation mode %r" % mode)
    _check_arity(strategy, len(parents))

    instruction = templates.strategy_instructions[strategy]
    # Instructions with a built-in "Firstly," step keep the numbering going.
    has_prelim = "Firstly," in instruction
    two_call = mode in ("T2T2C", "TC2T2C")

    sections = [templates.task_description]
    sections.extend(_parent_sections(templates, parents, mode))
    sections.append(instruction)

    want_description = mode != "C2C"
    if want_description:
        request = (templates.request_description_e2 if strategy == "E2"
                   else templates.request_description)
        ordinal = "Secondly, " if has_prelim else "Firstly, "
        if two_call and not has_prelim:
            sections.append(_capitalized(request.format(ordinal="")))
        else:
            sections.append(request.format(ordinal=ordinal))

    if not two_call:
        if want_description:
            ordinal = "Thirdly, " if has_prelim else "Next, "
        else:
            ordinal = "Secondly, " if has_prelim else ""
        code_request = templates.request_code.format(
            ordinal=ordinal, language=spec.language_name,
            function_name=spec.function_name)
        if not ordinal:
            code_request = _capitalized(code_request)
        sections.append(code_request)
        sections.append(templates.note)
    return "\n".join(sections)


def build_code_prompt(templates: PromptTemplateSet, spec: FunctionSpec,
                      thought: str) -> str:
    """Assemble the follow-up query that turns a description into code."""
    code_request = _capitalized(templates.request_code.format(
        ordinal="", language=spec.language_name,
        function_name=spec.function_name))
    return "\n".join([templates.task_description, templates.materialize_intro,
                      thought, code_request, templates.note])


def _find_code(reply: str, spec: FunctionSpec) -> tuple[str | None, int, bool]:
    """Return (code, block start offset, saw a def with the wrong name)."""
    wanted = re.compile(r"\bdef\s+%s\s*\(" % re.escape(spec.function_name))
    any_def = re.compile(r"\bdef\s+\w+\s*\(")
    saw_other = False
    for match in _FENCE_RE.finditer(reply):
        body = match.group(1).strip("\n")
        if wanted.search(body):
            return body, match.start(), saw_other
        if any_def.search(body):
            saw_other = True
    return None, len(reply), saw_other


def parse_response(reply: str, spec: FunctionSpec, mode: str = "FULL") -> ParsedReply:
    """Split a reply into description and code per the extraction rules.

    The thought is the first brace-delimited segment outside code fences,
    falling back to the first non-empty line before the code block. The
    code is the first fenced block defining the requested function.
    """
    if mode not in REPRESENTATION_MODES:
        raise ValueError("unknown representation mode %r" % mode)
    if not reply.strip():
        raise ParseError("empty reply")
    code_required = mode in ("FULL", "C2C")
    thought_required = mode != "C2C"

    code, code_start, saw_other = _find_code(reply, spec)
    if code is None and code_required:
        if saw_other:
            raise MissingFunctionName("no fenced block defines %r" % spec.function_name)
        raise MissingCode("no fenced code block defining %r" % spec.function_name)

    outside = _FENCE_RE.sub("", reply)
    thought = None
    brace = _BRACE_RE.search(outside)
    if brace and brace.group(1).strip():
        thought = brace.group(1).strip()
    else:
        for line in reply[:code_start].splitlines():
            if line.strip():
                thought = line.strip()
                break
    if thought is None and thought_required:
        raise MissingThought("no description found before the code block")
    return ParsedReply(thought=thought, code=code)


def parse_code_response(reply: str, spec: FunctionSpec) -> str:
    """Extract just the code from a follow-up materialization reply."""
    code, _, saw_other = _find_code(reply, spec)
    if code is None:
        if saw_other:
            raise MissingFunctionName("no fenced block defines %r" % spec.function_name)
        raise MissingCode("no fenced code block defining %r" % spec.function_name)
    return code
