import re
import string
from typing import List


EDGE_PUNCTUATION = string.punctuation + "“”‘’«»…"


class WordTokenizer:
    def __init__(self, lowercase: bool = True):
        self.lowercase = lowercase

    def split_words(self, text: str) -> List[str]:
        """Whitespace-separated words with edge punctuation stripped; empty words are dropped"""
        if not text or not text.strip():
            return []

        text = self._clean_text(text)
        words = []
        for raw in text.split(" "):
            word = raw.strip(EDGE_PUNCTUATION)
            if not word:
                continue
            words.append(word.lower() if self.lowercase else word)
        return words

    def _clean_text(self, text: str) -> str:
        """Clean and normalize whitespace"""
        text = re.sub(r"[\r\n\t]", " ", text)
        text = re.sub(r"\s+", " ", text)
        return text.strip()

