import pytest


@pytest.fixture()
def tiny_corpus(tmp_path):
    path = tmp_path / "corpus.tsv"
    path.write_text(
        "s1\tthe cat sat on the mat\n"
        "s2\ta dog chased the cat\n"
        "s3\tthe cat sat on the mat\n",
        encoding="utf-8",
    )
    return path
