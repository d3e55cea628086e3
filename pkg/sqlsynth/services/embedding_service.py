import hashlib
import logging
from typing import List, Optional

import numpy as np

# sentence-transformers is an optional extra; the hashed embedder needs only numpy
try:
    from sentence_transformers import SentenceTransformer
    ML_AVAILABLE = True
except ImportError:
    ML_AVAILABLE = False

from sqlsynth.core.config import settings
from sqlsynth.core.exceptions import EmbedderError
from sqlsynth.utils.text_tokenizer import WordTokenizer


logger = logging.getLogger(__name__)

HASHED = "hashed"
SENTENCE_TRANSFORMERS = "sentence-transformers"


class EmbeddingService:
    def __init__(self, kind: Optional[str] = None, dimension: Optional[int] = None,
                 model_name: Optional[str] = None):
        self.kind = kind or settings.EMBEDDER
        self.dimension = dimension or settings.EMBEDDING_DIM
        self.tokenizer = WordTokenizer()
        self.model = None
        if self.kind == SENTENCE_TRANSFORMERS:
            if not ML_AVAILABLE:
                raise EmbedderError("sentence-transformers is not installed; use the hashed embedder")
            self.model = SentenceTransformer(model_name or settings.EMBEDDING_MODEL)
            self.dimension = self.model.get_sentence_embedding_dimension()
        elif self.kind != HASHED:
            raise EmbedderError(f"Unknown embedder {self.kind}")

    def _bucket(self, word: str) -> int:
        digest = hashlib.sha256(word.encode("utf-8")).digest()
        return int.from_bytes(digest[:8], "big") % self.dimension

    def generate_embeddings(self, texts: List[str]) -> np.ndarray:
        """One row per text; rows are L2-normalized so dot products are cosine similarities"""
        if not texts:
            return np.zeros((0, self.dimension))

        if self.model is not None:
            embeddings = np.asarray(self.model.encode(texts, show_progress_bar=False), dtype=float)
        else:
            # Hashed bag of words
            embeddings = np.zeros((len(texts), self.dimension))
            for row, text in enumerate(texts):
                for word in self.tokenizer.split_words(text):
                    embeddings[row, self._bucket(word)] += 1.0

        norms = np.linalg.norm(embeddings, axis=1, keepdims=True)
        norms[norms == 0] = 1.0
        return embeddings / norms

