"""Tweet text pipeline: tokenization, super-tweet assembly, embeddings.

Raw tweets arrive as JSON-lines records; 20 consecutive tweets of one user
are concatenated into a super-tweet (windows shorter than 100 tokens are
discarded), each token is looked up in a pretrained embedding table, and
the result is a D x T sequence matrix where T defaults to 150 timesteps:
longer token streams are truncated, shorter ones padded with Normal(0,
variance 0.1) columns drawn from a seeded stream.
"""

import json
import logging
import re
from dataclasses import dataclass, field

import numpy as np

from .numerics import Rng, derive_seed

log = logging.getLogger(__name__)

PAD_STD = np.sqrt(0.1)  # padding columns ~ Normal(0, variance 0.1)

# Tokenizer rules, in priority order: URLs, @mentions and #hashtags are
# atomic; words may contain internal apostrophes; any other run of
# non-space punctuation is one token.  URLs swallow trailing punctuation.
_TOKEN_RE = re.compile(
    r"https?://\S+"
    r"|www\.\S+"
    r"|@\w+"
    r"|#\w+"
    r"|\w+(?:['’]\w+)*"
    r"|[^\w\s]+",
    re.UNICODE,
)

OOV_POLICIES = ("skip", "zero", "random-fixed-per-token")


class TweetFormatError(ValueError):
    """Malformed tweet JSONL input; message carries the line number."""


class EmbeddingFormatError(ValueError):
    """Malformed embedding file; message carries the line number."""


@dataclass(frozen=True)
class Tweet:
    user_id: str
    text: str
    order_index: int


@dataclass(frozen=True)
class SuperTweet:
    user_id: str
    tokens: tuple
    label: str


@dataclass
class SequenceMatrix:
    """Embedded super-tweet: D x T values, first real_token_count columns real."""

    values: np.ndarray
    real_token_count: int


def tokenize(text: str) -> list:
    """Split text into tokens under the documented Twitter-aware rules."""
    return _TOKEN_RE.findall(text)


def read_tweets_jsonl(path):
    """Load tweets and the user -> label map from a JSONL file.

    Each line is an object {"user_id", "text", "order", "label"}; a user
    carrying two different labels is an error.
    """
    tweets = []
    labels = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise TweetFormatError(f"line {lineno}: invalid JSON ({exc})")
            try:
                uid = str(obj["user_id"])
                text = str(obj["text"])
                order = int(obj["order"])
                label = str(obj["label"])
            except (KeyError, TypeError, ValueError) as exc:
                raise TweetFormatError(f"line {lineno}: bad record ({exc})")
            if label not in ("A", "B"):
                raise TweetFormatError(f"line {lineno}: label must be A or B, got {label!r}")
            if uid in labels and labels[uid] != label:
                raise TweetFormatError(f"line {lineno}: user {uid} carries two labels")
            labels[uid] = label
            tweets.append(Tweet(user_id=uid, text=text, order_index=order))
    return tweets, labels


def assemble_supertweets(tweets, labels, group_size=20, min_tokens=100):
    """Concatenate consecutive windows of group_size tweets per user.

    Tweets whose text trims to empty are dropped before windowing; a
    trailing window with fewer than group_size tweets is dropped; a window
    whose concatenated token count is below min_tokens is dropped.
    """
    if group_size <= 0 or min_tokens < 0:
        raise ValueError("group_size must be positive and min_tokens non-negative")
    by_user = {}
    for tw in tweets:
        if not tw.text.strip():
            continue
        by_user.setdefault(tw.user_id, []).append(tw)
    out = []
    for uid in sorted(by_user):
        rows = sorted(by_user[uid], key=lambda t: t.order_index)
        label = labels.get(uid)
        if label is None:
            raise KeyError(f"user {uid} has tweets but no label")
        for start in range(0, len(rows) - group_size + 1, group_size):
            window = rows[start : start + group_size]
            tokens = []
            for tw in window:
                tokens.extend(tokenize(tw.text))
            if len(tokens) >= min_tokens:
                out.append(SuperTweet(user_id=uid, tokens=tuple(tokens), label=label))
    return out


@dataclass
class EmbeddingTable:
    """token -> D-vector map with a fixed lookup rule.

    Lookup tries the lowercased token first and falls back to the raw
    token.  Misses follow oov_policy: 'skip' consumes no timestep, 'zero'
    yields a zero vector, 'random-fixed-per-token' yields a Normal(0,
    variance 0.1) vector derived from the token itself (stable across
    runs and tables).
    """

    dim: int
    entries: dict
    oov_policy: str = "skip"
    _oov_cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.oov_policy not in OOV_POLICIES:
            raise ValueError(f"oov_policy must be one of {OOV_POLICIES}")

    def __len__(self):
        return len(self.entries)

    def lookup(self, token: str):
        """Vector for a token, or None when the policy says skip."""
        vec = self.entries.get(token.lower())
        if vec is None:
            vec = self.entries.get(token)
        if vec is not None:
            return vec
        if self.oov_policy == "skip":
            return None
        if self.oov_policy == "zero":
            return np.zeros(self.dim)
        cached = self._oov_cache.get(token)
        if cached is None:
            cached = Rng(derive_seed(0, f"oov/{token}")).normal(size=self.dim, std=PAD_STD)
            self._oov_cache[token] = cached
        return cached


def load_embeddings(path, expected_dim, oov_policy="skip") -> EmbeddingTable:
    """Parse a plain-text embedding file: token then D floats per line."""
    entries = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.rstrip("\n").split(" ")
            if parts == [""]:
                continue
            token, floats = parts[0], parts[1:]
            if len(floats) != expected_dim:
                raise EmbeddingFormatError(
                    f"line {lineno}: expected {expected_dim} floats, got {len(floats)}"
                )
            try:
                vec = np.array([float(v) for v in floats], dtype=np.float64)
            except ValueError as exc:
                raise EmbeddingFormatError(f"line {lineno}: {exc}")
            if token in entries:
                log.warning("duplicate embedding token %r at line %d kept first", token, lineno)
                continue
            entries[token] = vec
    return EmbeddingTable(dim=expected_dim, entries=entries, oov_policy=oov_policy)


def embed_sequence(tokens, table: EmbeddingTable, timesteps=150, rng: Rng = None) -> SequenceMatrix:
    """Embed a token stream into a D x T matrix.

    The first min(#vectors, T) columns are looked-up vectors (OOV handling
    per the table's policy); extra vectors are truncated; remaining
    columns are Normal(0, variance 0.1) padding drawn column by column
    from rng.
    """
    if rng is None:
        rng = Rng(0)
    d = table.dim
    values = np.empty((d, timesteps), dtype=np.float64)
    count = 0
    for token in tokens:
        if count == timesteps:
            break
        vec = table.lookup(token)
        if vec is None:
            continue
        values[:, count] = vec
        count += 1
    n_pad = timesteps - count
    if n_pad > 0:
        pad = rng.normal(size=(n_pad, d), std=PAD_STD)
        values[:, count:] = pad.T
    return SequenceMatrix(values=values, real_token_count=count)


def average_representation(m: SequenceMatrix) -> np.ndarray:
    """Mean embedding over all T columns, padding included; divisor is T."""
    t = m.values.shape[1]
    return m.values.sum(axis=1) / t
