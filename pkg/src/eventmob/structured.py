"""Lenient extraction of JSON objects from chat replies, plus the bounded re-ask."""

from __future__ import annotations

import json
from dataclasses import replace
from typing import Callable, TypeVar

from .providers import ChatRequest, Provider

T = TypeVar("T")

_decoder = json.JSONDecoder()


class StructuredParseError(ValueError):
    """Reply text could not be turned into the expected structure."""

    def __init__(self, message: str, violations=()):
        super().__init__(message)
        self.violations = list(violations) or [message]


def extract_json_object(text: str) -> dict:
    """Return the first decodable JSON object in ``text``.

    Surrounding prose and markdown fences are ignored because decoding starts
    at each ``{`` in turn; the earliest one that decodes wins.
    """
    if not isinstance(text, str):
        raise StructuredParseError("reply is not text")
    pos = text.find("{")
    while pos != -1:
        try:
            obj, _ = _decoder.raw_decode(text, pos)
        except json.JSONDecodeError:
            pos = text.find("{", pos + 1)
            continue
        if isinstance(obj, dict):
            return obj
        pos = text.find("{", pos + 1)
    raise StructuredParseError("no JSON object found in reply")


class RepairFailed(RuntimeError):
    """Both the first reply and the corrective re-ask were unusable."""

    def __init__(self, tag: str, responses: list[str], errors: list[str]):
        super().__init__(f"{tag}: unusable reply after re-ask: {errors[-1]}")
        self.tag = tag
        self.responses = responses
        self.errors = errors


def corrective_prompt(request: ChatRequest, reply: str, error: str) -> ChatRequest:
    note = (
        "\n\nYour previous reply could not be used.\n"
        f"Previous reply:\n{reply}\n"
        f"Problem: {error}\n"
        "Reply again with a single corrected JSON object and nothing else."
    )
    return replace(request, user_prompt=request.user_prompt + note)


def ask_structured(provider: Provider, request: ChatRequest, parse: Callable[[str], T]) -> T:
    """Call ``provider`` and parse the reply, allowing one corrective re-ask.

    ``parse`` must raise ``StructuredParseError`` (or ``ValueError``) on bad
    input; any other exception propagates unchanged.
    """
    replies, errors = [], []
    for attempt in range(2):
        req = request if attempt == 0 else corrective_prompt(request, replies[-1], errors[-1])
        text = provider.complete(req).text
        replies.append(text)
        try:
            return parse(text)
        except ValueError as exc:
            errors.append(str(exc))
    raise RepairFailed(request.tag, replies, errors)
