"""Builds the committed FICO EmbeddingTable fixture from descriptions.csv.

Word-level TF-IDF over the cleaned description text, L2-normalised.
Re-run only if descriptions.csv changes:

    python3 make_embeddings.py descriptions.csv embeddings.json
"""
import csv
import json
import re
import sys

import numpy as np
from sklearn.feature_extraction.text import TfidfVectorizer


def main(src, dst):
    with open(src, newline="") as fh:
        rows = list(csv.DictReader(fh))
    text = [re.sub(r"[^A-Za-z0-9 ]", " ", r["description"]).lower() for r in rows]
    mat = TfidfVectorizer(analyzer="word").fit_transform(text).toarray()
    mat /= np.linalg.norm(mat, axis=1, keepdims=True)
    vectors = {r["id"]: [float(v) for v in mat[i]] for i, r in enumerate(rows)}
    doc = {"dim": mat.shape[1], "provenance": "fixture:tfidf-word", "vectors": vectors}
    with open(dst, "w") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


if __name__ == "__main__":
    main(sys.argv[1], sys.argv[2])
