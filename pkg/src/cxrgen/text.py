"""Report cleaning, tokenization, and vocabulary construction.

The cleaning pass turns a raw findings narrative into a lowercase token
sequence bracketed by start/end markers. Rule order is fixed and documented
here because downstream golden tests depend on it:

1. reject when the raw text has fewer than ``min_raw_words`` whitespace words;
2. lowercase, then reject when any configured rejection pattern matches
   (default patterns target references to prior studies);
3. replace punctuation characters with spaces and split on whitespace;
4. drop tokens containing any digit;
5. drop stop words;
6. apply the standardization map, longest phrase first;
7. reject if nothing remains, otherwise wrap in start/end markers.

Rejection is a normal outcome carrying a machine-readable reason code, not
an exception.
"""

from __future__ import annotations

import re
import string
from collections import Counter
from dataclasses import dataclass
from importlib import resources

from .errors import ConfigError, ContractError, IntegrityError

PAD_TOKEN = "<pad>"
START_TOKEN = "<start>"
END_TOKEN = "<end>"
UNK_TOKEN = "<unk>"
RESERVED_TOKENS = (PAD_TOKEN, START_TOKEN, END_TOKEN, UNK_TOKEN)
PAD_ID, START_ID, END_ID, UNK_ID = 0, 1, 2, 3

REASON_TOO_SHORT = "too_short"
REASON_PRIOR_REFERENCE = "prior_reference"
REASON_EMPTY = "empty_after_cleaning"

_PUNCT_TABLE = str.maketrans({c: " " for c in string.punctuation})


@dataclass(frozen=True)
class RawReport:
    """An unprocessed findings narrative."""
    id: str
    text: str


@dataclass(frozen=True)
class CleanReport:
    """A cleaned report: lowercase word tokens bracketed by start/end markers."""
    id: str
    tokens: tuple[str, ...]

    @property
    def interior(self) -> tuple[str, ...]:
        return self.tokens[1:-1]

    def validate(self) -> None:
        if len(self.tokens) < 2 or self.tokens[0] != START_TOKEN or self.tokens[-1] != END_TOKEN:
            raise ContractError(f"report {self.id}: missing start/end markers")
        if not self.interior:
            raise ContractError(f"report {self.id}: empty interior")
        for token in self.interior:
            if _bad_token(token):
                raise ContractError(f"report {self.id}: malformed token {token!r}")

    def text(self) -> str:
        """Interior tokens joined by single spaces (a fixed point of cleaning)."""
        return " ".join(self.interior)


@dataclass(frozen=True)
class Rejected:
    """A report dropped by the pipeline, with the rule that dropped it."""
    id: str
    reason: str
    detail: str = ""


def _bad_token(token: str) -> bool:
    return (
        not token
        or any(c.isupper() or c.isdigit() for c in token)
        or any(c in string.punctuation for c in token)
    )


class StandardizationMap:
    """Phrase rewrites applied to the token stream, longest source first.

    Canonical phrases must be fixed points of the map, which rules out
    rewrite cycles.
    """

    def __init__(self, rules: dict[str, str] | list[tuple[str, str]] | None = None):
        pairs = rules.items() if isinstance(rules, dict) else (rules or [])
        self._rules: list[tuple[tuple[str, ...], tuple[str, ...]]] = [
            (tuple(src.split()), tuple(dst.split())) for src, dst in pairs
        ]
        self._rules.sort(key=lambda r: (-len(r[0]), r[0]))
        for src, dst in self._rules:
            if not src or not dst:
                raise ConfigError("standardization rules may not have empty sides")
            if self.apply(dst) != list(dst):
                raise ConfigError(
                    f"canonical phrase {' '.join(dst)!r} is not a fixed point of the map"
                )

    def __len__(self):
        return len(self._rules)

    def apply(self, tokens) -> list[str]:
        tokens = list(tokens)
        out: list[str] = []
        i = 0
        while i < len(tokens):
            for src, dst in self._rules:
                if tuple(tokens[i:i + len(src)]) == src:
                    out.extend(dst)
                    i += len(src)
                    break
            else:
                out.append(tokens[i])
                i += 1
        return out

    @classmethod
    def from_file(cls, path) -> "StandardizationMap":
        """Parse lines of the form ``source phrase => canonical phrase``."""
        pairs = []
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                if "=>" not in line:
                    raise ConfigError(f"{path}:{lineno}: expected 'source => canonical'")
                src, dst = (part.strip() for part in line.split("=>", 1))
                pairs.append((src, dst))
        return cls(pairs)


def _resource_text(name: str) -> str:
    return resources.files("cxrgen").joinpath("resources", name).read_text(encoding="utf-8")


def load_stopwords(path=None) -> frozenset[str]:
    """One stop word per line; blank lines and # comments ignored."""
    if path is None:
        raw = _resource_text("stopwords.txt")
    else:
        with open(path, encoding="utf-8") as fh:
            raw = fh.read()
    words = {line.strip().lower() for line in raw.splitlines()}
    return frozenset(w for w in words if w and not w.startswith("#"))


def default_standardization_map() -> StandardizationMap:
    pairs = []
    for line in _resource_text("standardization.txt").splitlines():
        line = line.strip()
        if line and not line.startswith("#") and "=>" in line:
            src, dst = (part.strip() for part in line.split("=>", 1))
            pairs.append((src, dst))
    return StandardizationMap(pairs)


def load_reject_patterns(path=None) -> list[re.Pattern]:
    """One regular expression per line, matched against the lowercased raw text."""
    if path is None:
        raw = _resource_text("reject_patterns.txt")
    else:
        with open(path, encoding="utf-8") as fh:
            raw = fh.read()
    patterns = []
    for line in raw.splitlines():
        line = line.strip()
        if line and not line.startswith("#"):
            patterns.append(re.compile(line))
    return patterns


def clean_report(raw: RawReport, stopwords, std_map: StandardizationMap,
                 reject_patterns=(), min_raw_words: int = 9) -> CleanReport | Rejected:
    """Clean one raw report, or return a Rejected with the dropping rule."""
    if len(raw.text.split()) < min_raw_words:
        return Rejected(raw.id, REASON_TOO_SHORT,
                        f"raw report has fewer than {min_raw_words} words")
    lowered = raw.text.lower()
    for pattern in reject_patterns:
        if pattern.search(lowered):
            return Rejected(raw.id, REASON_PRIOR_REFERENCE,
                            f"matched rejection pattern {pattern.pattern!r}")
    tokens = lowered.translate(_PUNCT_TABLE).split()
    tokens = [t for t in tokens if not any(c.isdigit() for c in t)]
    tokens = [t for t in tokens if t not in stopwords]
    tokens = std_map.apply(tokens)
    if not tokens:
        return Rejected(raw.id, REASON_EMPTY, "no tokens survived cleaning")
    report = CleanReport(raw.id, (START_TOKEN, *tokens, END_TOKEN))
    report.validate()
    return report


class Vocabulary:
    """Frequency-ranked token inventory with four fixed reserved ids.

    Ids 0..3 are pad, start, end, unknown, in that order; real tokens follow
    in rank order. The on-disk format is one token per line, line number
    equal to id.
    """

    def __init__(self, tokens: list[str]):
        if tuple(tokens[:4]) != RESERVED_TOKENS:
            raise ConfigError(f"vocabulary must start with the reserved tokens {RESERVED_TOKENS}")
        if len(set(tokens)) != len(tokens):
            raise ConfigError("vocabulary contains duplicate tokens")
        self.tokens = list(tokens)
        self.token_to_id = {t: i for i, t in enumerate(tokens)}

    def __len__(self):
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self.token_to_id

    def id_of(self, token: str) -> int:
        return self.token_to_id.get(token, UNK_ID)

    def token_of(self, idx: int) -> str:
        return self.tokens[idx]

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(self.tokens) + "\n")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        with open(path, encoding="utf-8") as fh:
            tokens = [line.rstrip("\n") for line in fh if line.rstrip("\n")]
        if tuple(tokens[:4]) != RESERVED_TOKENS:
            raise IntegrityError(f"{path}: first four lines must be {RESERVED_TOKENS}")
        return cls(tokens)


def build_vocabulary(corpus, cap: int = 2212) -> Vocabulary:
    """Rank interior tokens by frequency (ties lexicographic) and keep the top cap-4."""
    if cap < 5:
        raise ConfigError(f"vocabulary cap must leave room beyond the 4 reserved ids, got {cap}")
    if not corpus:
        raise ContractError("cannot build a vocabulary from an empty corpus")
    counts = Counter()
    for report in corpus:
        counts.update(report.interior)
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    kept = [token for token, _ in ranked[: cap - 4]]
    return Vocabulary(list(RESERVED_TOKENS) + kept)


def encode_tokens(report: CleanReport, vocab: Vocabulary, max_len: int):
    """Map a cleaned report to a fixed-length id sequence.

    Longer sequences are truncated to ``max_len`` with the end id forced
    into the final slot; shorter ones are right-padded with the pad id.
    """
    import numpy as np

    if max_len < 3:
        raise ContractError(f"max_len must be at least 3, got {max_len}")
    ids = [vocab.id_of(t) for t in report.tokens]
    if len(ids) > max_len:
        ids = ids[:max_len]
        ids[-1] = END_ID
    else:
        ids = ids + [PAD_ID] * (max_len - len(ids))
    return np.asarray(ids, dtype=np.int64)


def decode_ids(ids, vocab: Vocabulary, strip_markers: bool = True) -> list[str]:
    """Inverse of encode_tokens up to unknown-token replacement and truncation."""
    tokens = [vocab.token_of(int(i)) for i in ids if int(i) != PAD_ID]
    if strip_markers:
        tokens = [t for t in tokens if t not in (START_TOKEN, END_TOKEN)]
    return tokens
