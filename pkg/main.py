"""
GroupRank toolkit - ponto de entrada.

Uso:
    python main.py rerank --run bm25.run --corpus corpus.jsonl --queries queries.jsonl
    python main.py cost -n 100 -c 20
"""

from src.cli import main

if __name__ == "__main__":
    raise SystemExit(main())
