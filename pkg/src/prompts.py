"""
Prompt templates and rendering for the three scoring modes.

- Groupwise reranking: one query + a group of documents, integer 0-10 score per document
- Pointwise labeling: one query-document pair, ``Relevance score: X.``
- Listwise labeling: one query + the whole candidate list, a JSON array of ids

Templates use literal placeholders replaced with ``str.replace`` (the prompt
bodies contain JSON braces, so ``str.format`` is not an option).
"""

from __future__ import annotations

from collections.abc import Sequence
from pathlib import Path

from pydantic import BaseModel, ConfigDict, model_validator

from src.models import Document, Query

# ============================================================================
# DEFAULT PROMPTS
# ============================================================================

GROUPWISE_USER_TEXT = """Your task is to evaluate and rank documents based on how well they help answer the given query. Follow this evaluation priority:
1. PRIMARY: Usefulness & Helpfulness - Does the document provide actionable information, solutions, or direct answers that help address the user's needs?
2. SECONDARY: Relevance - Does the document contain information related to the query topic?

Evaluation Process:
1. First, identify the user's core intent and what kind of help they need from the query
2. For each document, assess:
   - How directly it addresses the user's intent
   - What actionable information or answers it provides
   - How much it helps solve the user's problem or need
3. Compare documents against each other to ensure proper ranking
4. Assign scores that reflect the relative usefulness ranking

Scoring Scale (0-10):
- 9-10: Extremely helpful, directly answers the query with actionable information
- 7-8: Very helpful, provides substantial useful information for the query
- 5-6: Moderately helpful, contains some useful information but incomplete
- 3-4: Minimally helpful, limited useful information despite topic relevance
- 1-2: Barely helpful, mentions related topics but provides little useful information
- 0: Not helpful at all, cannot assist with answering the query
'''

I will provide you {TOPK} documents, each indicated by a numerical identifier []. Score these documents based on their Usefulness and Relevance to the query.
Query:
{QUERY}

Documents:
{PASSAGES}

## Final Output Format
You must structure your response in exactly two parts: provide your brief reasoning process first, then output final scores in JSON format like below, with document IDs as string keys and integer scores as values for all {TOPK} documents.
The reasoning process and answer are enclosed within <reason> </reason> and <answer> </answer> tags, respectively. Do NOT output anything outside the specified tags. Follow this exact format:
<reason>
[ Analyze each document's usefulness and relevance to the query, explaining your scoring  rationale ]
</reason>
<answer>
```json
{"[1]": 5, "[2]": 3, "[3]": 8, ...}
```
</answer>"""

POINTWISE_TEMPLATE = """Your task is to rate how relevant and useful the document is for the query.
A document is **relevant and useful** if its content directly helps answer or address the query. A document is **not relevant or useful** if it does not provide content that helps answer the query, even if it mentions similar topics.
The answer should be 'Relevance score: X.' where X is a number from 0-10. 0 means completely irrelevant, and 10 means highly relevant and provides a complete, useful answer.

Here is the query:
{your_query}

Here is the document:
{your_passage}

Note that your answer must ONLY be in the format 'Relevance score: X.', where X is a number from 0-10. Don't output anything else."""

LISTWISE_TEMPLATE = """You are an expert passage reranker. Your task is to rank the provided passages based on how well they address the user's query, considering both **relevance and usefulness**.
Follow these steps:
1.  **Understand the Query:** Identify the core question or intent behind the user's query.
2.  **Evaluate Passages:** Think step-by-step to assess each passage. A passage is **valuable** if it directly and effectively helps answer the query. It is **not valuable** if it merely discusses similar topics without providing a direct answer.
3.  **Rank & Output:**
*   First, briefly explain your reasoning process for the ranking.
*   Then, output a single JSON array containing the integer IDs of **all** provided passages. The array must be sorted from the most valuable passage to the least valuable.

The final output should look like this:
<Your reasoning here>
```json
[ ... integer ids here ... ]
```

The user's query is:
{your_query}

Here are the passages to evaluate:
{your_passages_list}"""

_GROUP_PLACEHOLDERS = ("{TOPK}", "{QUERY}", "{PASSAGES}")


# ============================================================================
# GROUPWISE TEMPLATE
# ============================================================================


class PromptTemplate(BaseModel):
    """Groupwise prompt with literal ``{TOPK}``, ``{QUERY}`` and ``{PASSAGES}`` placeholders."""

    model_config = ConfigDict(frozen=True)

    system_text: str = ""
    user_text: str = GROUPWISE_USER_TEXT

    @model_validator(mode="after")
    def has_placeholders(self) -> PromptTemplate:
        missing = [p for p in _GROUP_PLACEHOLDERS if p not in self.user_text]
        if missing:
            raise ValueError(f"template is missing placeholders: {', '.join(missing)}")
        return self

    @classmethod
    def from_files(
        cls, user_path: str | Path, system_path: str | Path | None = None
    ) -> PromptTemplate:
        """Load a template from plain-text files."""
        user_text = Path(user_path).read_text(encoding="utf-8")
        system_text = Path(system_path).read_text(encoding="utf-8") if system_path else ""
        return cls(system_text=system_text, user_text=user_text)


DEFAULT_GROUP_TEMPLATE = PromptTemplate()


def format_passages(docs: Sequence[Document]) -> str:
    """``[i] <text>`` lines, 1-based, in input order; newlines inside a passage become spaces."""
    return "\n".join(f"[{i}] {' '.join(doc.text.split())}" for i, doc in enumerate(docs, start=1))


def render_group_prompt(
    template: PromptTemplate,
    query: Query,
    docs: Sequence[Document],
    use_rewritten: bool = False,
    max_group_size: int | None = None,
) -> str:
    """
    Render the groupwise prompt for one group of documents.

    Raises:
        ValueError: empty group, or more documents than ``max_group_size``
    """
    if not docs:
        raise ValueError("a group needs at least one document")
    if max_group_size is not None and len(docs) > max_group_size:
        raise ValueError(f"group of {len(docs)} exceeds the maximum group size {max_group_size}")
    prompt = (
        template.user_text.replace("{TOPK}", str(len(docs)))
        .replace("{QUERY}", query.prompt_text(use_rewritten))
        .replace("{PASSAGES}", format_passages(docs))
    )
    if template.system_text:
        return f"{template.system_text.rstrip()}\n\n{prompt}"
    return prompt


# ============================================================================
# LABELING PROMPTS
# ============================================================================


def render_pointwise_prompt(
    query: Query, doc: Document, template: str = POINTWISE_TEMPLATE, use_rewritten: bool = False
) -> str:
    """Pointwise labeling prompt for one query-document pair."""
    return template.replace("{your_query}", query.prompt_text(use_rewritten)).replace(
        "{your_passage}", doc.text
    )


def render_listwise_prompt(
    query: Query,
    docs: Sequence[Document],
    template: str = LISTWISE_TEMPLATE,
    use_rewritten: bool = False,
) -> str:
    """Listwise labeling prompt over the whole candidate list."""
    if not docs:
        raise ValueError("listwise labeling needs at least one document")
    return template.replace("{your_query}", query.prompt_text(use_rewritten)).replace(
        "{your_passages_list}", format_passages(docs)
    )
