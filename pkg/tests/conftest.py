import json
import shutil
from pathlib import Path

import pytest

ROOT = Path(__file__).resolve().parent.parent
CORPUS = ROOT / "corpus"


def corpus_files():
    return sorted(p for p in CORPUS.glob("*.json") if p.name != "expected.json")


def expected():
    return json.loads((CORPUS / "expected.json").read_text())


requires_solver = pytest.mark.skipif(shutil.which("z3") is None, reason="z3 not on PATH")
