"""
Pytest Configuration and Fixtures
Shared test fixtures and configurations for all test modules
"""

import json

import pytest
from loguru import logger

from src.models import Document, Qrels, Query, RunList

# ============================================================================
# PYTEST CONFIGURATION
# ============================================================================


def pytest_configure(config):
    """Configure pytest"""
    config.addinivalue_line("markers", "unit: mark test as unit test")
    config.addinivalue_line("markers", "integration: mark test as integration test")
    config.addinivalue_line("markers", "slow: mark test as slow running")


# ============================================================================
# FIXTURES - Logging
# ============================================================================


@pytest.fixture
def log_records():
    """
    Captura os registros do loguru emitidos durante o teste.
    Scope: function
    """
    records = []
    handler_id = logger.add(lambda message: records.append(message.record), level="DEBUG")
    yield records
    try:
        logger.remove(handler_id)
    except ValueError:
        # setup_logging (CLI) já removeu todos os handlers
        pass


# ============================================================================
# FIXTURES - Case study (groupwise response)
# ============================================================================

CASE_STUDY_QUERY = (
    "How to recognize products with neonicotinoid pesticides in them?\n\n"
    "Recently, the EU has temporarily banned neonicotinoid pesticides because there are strong "
    "indications that these pesticides are responsible for the decline in bee populations. "
    "I've heard that this pesticide is not only used in bug sprays, but also in seemingly "
    "innocent products like flower bulbs, plant plugs and certain types of compost.\n\n"
    "Is this true? If so, how do I make sure I don't already have this stuff at home? "
    "How can I recognise products or brands that contain/use these pesticides?"
)

CASE_STUDY_SCORES = [0, 1, 0, 4, 0, 8, 0, 0, 0, 0, 5, 0, 2, 0, 9, 8, 0, 0, 0, 7]

CASE_STUDY_RESPONSE = """<reason>
The user is asking how to recognize products containing neonicotinoid pesticides, specifically in items like flower bulbs, plant plugs, and compost. They also want to know if this is true and how to avoid them at home. I will prioritize documents that confirm the presence of neonics in these products, explain their persistence, and offer actionable advice on how to identify or avoid them.

*   **[1]**: This document discusses PFAS in compostable food packaging and biosolids. It is completely irrelevant to neonicotinoid pesticides.
*   **[2]**: This is a list of product categories, including "Bulbs" and "Soil and Fertilizers." While it lists relevant product types, it provides no information about neonicotinoids or how to identify them. It's barely helpful as a list of product types.
*   **[3]**: This document discusses composting dairy products. It is irrelevant to neonicotinoids.
*   **[4]**: This document mentions concerns about pesticides in straw and the desire to find organic sources. While it doesn't name neonics, it highlights the general problem of pesticides in garden products and the need for organic alternatives, which is a relevant strategy for avoiding neonics.
*   **[5]**: This document discusses horses in cities and electric carts. It is completely irrelevant.
*   **[6]**: This document is highly relevant. It explains that neonics remain active in soil for years and contaminate water, directly addressing the user's concern about their persistence and environmental impact.
*   **[7]**: This document lists various carbamate pesticides. It is irrelevant to neonicotinoids.
*   **[8]**: This document discusses moisture content in compost piles. It is irrelevant to neonicotinoids.
*   **[9]**: This document discusses composting in place and mentions avoiding cooked food, meat, grains, or dairy. It is irrelevant to neonicotinoids.
*   **[10]**: This document discusses pottery glaze chemistry. It is completely irrelevant.
*   **[11]**: This document discusses the widespread exposure to neonicotinoids and links them to various health effects. It is moderately helpful for context.
*   **[12]**: This document discusses synthetic pyrethroid barrier treatments for mosquitoes. It is irrelevant to neonicotinoids.
*   **[13]**: This document lists various certifications like FSC, GREENGUARD, and Oeko-Tex. It's minimally helpful as a general concept of certification but not specific enough.
*   **[14]**: This document discusses plant-derived pyrethrins for mosquito control. It is irrelevant to neonicotinoids.
*   **[15]**: This document is extremely helpful. It directs the user to the EPA for pesticide registration and the National Pesticide Information Center (NPIC).
*   **[16]**: This document is very helpful. It confirms that neonicotinoids are used as seed treatments.
*   **[17]**: This document is a personal anecdote with no relevance to the query.
*   **[18]**: This document discusses global warming. It is completely irrelevant.
*   **[19]**: This document discusses the properties of pure compost. It is irrelevant to neonicotinoids.
*   **[20]**: This document is a table of contents for a Wikipedia page on neonicotinoids. It is very helpful for context and further research.
</reason>

<answer>
```json
{"[1]": 0, "[2]": 1, "[3]": 0, "[4]": 4, "[5]": 0, "[6]": 8, "[7]": 0, "[8]": 0, "[9]": 0, "[10]": 0, "[11]": 5, "[12]": 0, "[13]": 2, "[14]": 0, "[15]": 9, "[16]": 8, "[17]": 0, "[18]": 0, "[19]": 0, "[20]": 7}
```
</answer>"""


@pytest.fixture
def case_study_response():
    """Resposta groupwise de 20 documentos (caso 'Sustainable Living')."""
    return CASE_STUDY_RESPONSE


@pytest.fixture
def case_study_query():
    return Query(id="sustainable-living", text=CASE_STUDY_QUERY)


# ============================================================================
# FIXTURES - Tiny retrieval world
# ============================================================================


@pytest.fixture
def tiny_corpus():
    """Six passages, one topic each."""
    texts = {
        "d1": "Neonicotinoids are applied as seed treatments on many garden plants.",
        "d2": "Bee populations declined sharply in regions with heavy pesticide use.",
        "d3": "Pottery glaze chemistry depends on silica and fluxes.",
        "d4": "The EPA keeps a public register of approved pesticide products.",
        "d5": "Compost piles need moisture and regular turning.",
        "d6": "Electric carts replaced horses in some historic city centres.",
    }
    return {doc_id: Document(id=doc_id, text=text) for doc_id, text in texts.items()}


@pytest.fixture
def tiny_qrels():
    """Graded judgments for q1 (d6 unjudged)."""
    return Qrels(judgments={"q1": {"d1": 3, "d2": 1, "d3": 0, "d4": 2, "d5": 0}})


@pytest.fixture
def tiny_query():
    return Query(id="q1", text="How do I avoid neonicotinoid pesticides at home?")


@pytest.fixture
def tiny_run():
    """Retriever run for q1 in a deliberately poor order."""
    return RunList.from_scores(
        "q1",
        {"d6": 9.0, "d3": 8.0, "d5": 7.0, "d2": 6.0, "d4": 5.0, "d1": 4.0},
        tag="bm25",
    )


@pytest.fixture
def tiny_files(tmp_path, tiny_corpus, tiny_qrels, tiny_query, tiny_run):
    """Os arquivos em disco correspondentes ao mundo acima."""
    corpus = tmp_path / "corpus.jsonl"
    corpus.write_text(
        "".join(json.dumps({"id": d.id, "text": d.text}) + "\n" for d in tiny_corpus.values()),
        encoding="utf-8",
    )
    queries = tmp_path / "queries.jsonl"
    queries.write_text(
        json.dumps({"id": tiny_query.id, "text": tiny_query.text}) + "\n", encoding="utf-8"
    )
    qrels = tmp_path / "qrels.txt"
    qrels.write_text(
        "".join(
            f"q1 0 {doc_id} {grade}\n" for doc_id, grade in tiny_qrels.for_query("q1").items()
        ),
        encoding="utf-8",
    )
    run = tmp_path / "bm25.run"
    run.write_text(
        "".join(
            f"q1 Q0 {e.doc_id} {e.rank} {e.score} bm25\n" for e in tiny_run.entries
        ),
        encoding="utf-8",
    )
    return {"corpus": corpus, "queries": queries, "qrels": qrels, "run": run, "dir": tmp_path}
