"""Canonical data model and ingestion for author corpora and label streams.

Three record kinds move through the pipeline:

* :class:`UserRecord` -- one Twitter author with raw tweets (the unit the
  gender model predicts on);
* :class:`LabeledTweet` -- one construct-labeled tweet consumed by the
  contingency statistics;
* :class:`GenderPrediction` -- one voted ensemble prediction with per-fold
  probabilities.

The canonical on-disk format is JSONL, one object per line.  PAN-style
author directories (``<id>.xml`` + ``truth.txt``) are import-only.
"""

from __future__ import annotations

import math
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CorpusError
from .ioutil import iter_jsonl, write_jsonl

# Label encoding is fixed package-wide: female = 0, male = 1.
GENDERS = ("female", "male")
HBM_CONSTRUCTS = ("susceptibility", "severity", "benefits", "barriers")
TPB_ATTITUDES = ("positive", "negative", "neutral")


def gender_index(gender: str) -> int:
    return GENDERS.index(gender)


def _parse_gender(token, *, where: str):
    """Case-insensitive gender parsing; anything but female/male is an error."""
    if token is None:
        return None
    g = str(token).strip().lower()
    if g not in GENDERS:
        raise CorpusError(f"{where}: unknown gender token {token!r} (expected one of {GENDERS})")
    return g


@dataclass
class UserRecord:
    """One author: opaque id, optional gender label, raw tweet texts."""

    user_id: str
    gender: str | None
    tweets: list[str]

    def __post_init__(self):
        if not self.user_id:
            raise CorpusError("user_id must be non-empty")
        if self.gender is not None and self.gender not in GENDERS:
            raise CorpusError(f"user {self.user_id!r}: bad gender {self.gender!r}")
        if not self.tweets:
            raise CorpusError(f"user {self.user_id!r}: tweets list is empty")
        for t in self.tweets:
            if not t.strip():
                raise CorpusError(f"user {self.user_id!r}: contains an empty tweet")


@dataclass(slots=True)
class LabeledTweet:
    """One tweet with HBM construct labels and an optional TPB attitude."""

    tweet_id: str
    user_id: str
    year: int
    hbm_constructs: frozenset = field(default_factory=frozenset)
    tpb_attitude: str | None = None

    def __post_init__(self):
        if self.year <= 0:
            raise CorpusError(f"tweet {self.tweet_id!r}: year must be positive")
        self.hbm_constructs = frozenset(self.hbm_constructs)
        bad = self.hbm_constructs - set(HBM_CONSTRUCTS)
        if bad:
            raise CorpusError(f"tweet {self.tweet_id!r}: unknown HBM constructs {sorted(bad)}")
        if self.tpb_attitude is not None and self.tpb_attitude not in TPB_ATTITUDES:
            raise CorpusError(f"tweet {self.tweet_id!r}: bad TPB attitude {self.tpb_attitude!r}")


@dataclass
class GenderPrediction:
    """Voted ensemble label with the per-fold probability of that label."""

    user_id: str
    voted_gender: str
    fold_probs: list[float]
    avg_prob: float

    def __post_init__(self):
        if self.voted_gender not in GENDERS:
            raise CorpusError(f"prediction {self.user_id!r}: bad gender {self.voted_gender!r}")
        if not self.fold_probs:
            raise CorpusError(f"prediction {self.user_id!r}: fold_probs is empty")
        for p in self.fold_probs:
            if not 0.0 <= p <= 1.0:
                raise CorpusError(f"prediction {self.user_id!r}: probability {p} outside [0,1]")
        if not math.isclose(self.avg_prob, sum(self.fold_probs) / len(self.fold_probs),
                            rel_tol=0.0, abs_tol=1e-12):
            raise CorpusError(f"prediction {self.user_id!r}: avg_prob is not the mean of fold_probs")

    @classmethod
    def from_fold_probs(cls, user_id: str, voted_gender: str, fold_probs) -> "GenderPrediction":
        fold_probs = [float(p) for p in fold_probs]
        return cls(user_id, voted_gender, fold_probs, sum(fold_probs) / len(fold_probs))


# ---------------------------------------------------------------------------
# PAN-style import
# ---------------------------------------------------------------------------

def import_pan(author_dir, truth_path) -> tuple[list[UserRecord], list[str]]:
    """Read a directory of per-author XML files plus an ``id:::gender`` truth file.

    Returns ``(corpus, warnings)``.  Authors missing from the truth file get
    an absent gender and a warning; malformed XML raises naming the file.
    """
    author_dir = Path(author_dir)
    truth = {}
    if truth_path is not None and Path(truth_path).exists():
        with open(truth_path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                parts = line.split(":::")
                if len(parts) < 2:
                    raise CorpusError(f"{truth_path}: bad truth row {line!r} (expected id:::gender)")
                uid = parts[0].strip()
                truth[uid] = _parse_gender(parts[1], where=f"{truth_path} (author {uid!r})")

    users: list[UserRecord] = []
    warnings: list[str] = []
    for xml_path in sorted(author_dir.glob("*.xml")):
        try:
            tree = ET.parse(xml_path)
        except ET.ParseError as exc:
            raise CorpusError(f"malformed XML in {xml_path.name}: {exc}") from exc
        tweets = [(el.text or "").strip() for el in tree.getroot().iter("document")]
        tweets = [t for t in tweets if t]
        uid = xml_path.stem
        if not tweets:
            warnings.append(f"{xml_path.name}: no non-empty tweets, author skipped")
            continue
        gender = truth.get(uid)
        if gender is None:
            warnings.append(f"{uid}: not listed in truth file, gender left unset")
        users.append(UserRecord(uid, gender, tweets))
    return users, warnings


# ---------------------------------------------------------------------------
# JSONL serialization
# ---------------------------------------------------------------------------

def write_users_jsonl(corpus, path) -> None:
    write_jsonl(path, ({"user_id": u.user_id, "gender": u.gender, "tweets": u.tweets}
                       for u in corpus))


def read_users_jsonl(path) -> list[UserRecord]:
    users: list[UserRecord] = []
    seen: dict[str, int] = {}
    for lineno, obj in iter_jsonl(path):
        try:
            user = UserRecord(
                user_id=obj["user_id"],
                gender=_parse_gender(obj.get("gender"), where=f"{path}, line {lineno}"),
                tweets=list(obj["tweets"]),
            )
        except KeyError as exc:
            raise CorpusError(f"{path}, line {lineno}: missing field {exc}") from exc
        if user.user_id in seen:
            raise CorpusError(
                f"{path}: duplicate user_id {user.user_id!r} on lines "
                f"{seen[user.user_id]} and {lineno}")
        seen[user.user_id] = lineno
        users.append(user)
    return users


def write_labeled_tweets_jsonl(tweets, path) -> None:
    write_jsonl(path, ({"tweet_id": t.tweet_id, "user_id": t.user_id, "year": t.year,
                        "hbm": sorted(t.hbm_constructs), "tpb": t.tpb_attitude}
                       for t in tweets))


def read_labeled_tweets_jsonl(path) -> list[LabeledTweet]:
    tweets = []
    for lineno, obj in iter_jsonl(path):
        try:
            tweets.append(LabeledTweet(
                tweet_id=obj["tweet_id"],
                user_id=obj["user_id"],
                year=int(obj["year"]),
                hbm_constructs=frozenset(obj.get("hbm", ())),
                tpb_attitude=obj.get("tpb"),
            ))
        except KeyError as exc:
            raise CorpusError(f"{path}, line {lineno}: missing field {exc}") from exc
    return tweets


def write_predictions_jsonl(preds, path) -> None:
    write_jsonl(path, ({"user_id": p.user_id, "gender": p.voted_gender,
                        "fold_probs": p.fold_probs, "avg_prob": p.avg_prob}
                       for p in preds))


def read_predictions_jsonl(path) -> list[GenderPrediction]:
    preds = []
    seen: dict[str, int] = {}
    for lineno, obj in iter_jsonl(path):
        try:
            pred = GenderPrediction(
                user_id=obj["user_id"],
                voted_gender=_parse_gender(obj["gender"], where=f"{path}, line {lineno}"),
                fold_probs=[float(p) for p in obj["fold_probs"]],
                avg_prob=float(obj["avg_prob"]),
            )
        except KeyError as exc:
            raise CorpusError(f"{path}, line {lineno}: missing field {exc}") from exc
        if pred.user_id in seen:
            raise CorpusError(f"{path}: duplicate user_id {pred.user_id!r} on lines "
                              f"{seen[pred.user_id]} and {lineno}")
        seen[pred.user_id] = lineno
        preds.append(pred)
    return preds


# ---------------------------------------------------------------------------
# Fold splitting
# ---------------------------------------------------------------------------

def split_folds(corpus, k: int, seed: int) -> list[list[int]]:
    """Partition corpus indices into ``k`` gender-stratified folds.

    Fold sizes differ by at most one, as do per-gender counts per fold.
    Deterministic for a fixed seed and corpus order.
    """
    if k < 2:
        raise CorpusError(f"fold count must be >= 2, got {k}")
    if len(corpus) < k:
        raise CorpusError(f"corpus of {len(corpus)} users cannot be split into {k} folds")
    for u in corpus:
        if u.gender is None:
            raise CorpusError(f"cannot split: user {u.user_id!r} has no gender label")

    rng = np.random.default_rng(seed)
    folds: list[list[int]] = [[] for _ in range(k)]
    cursor = 0
    # Dealing each gender round-robin, continuing the cursor across genders,
    # keeps both the per-gender and the overall fold sizes within 1.
    for gender in GENDERS:
        idx = np.array([i for i, u in enumerate(corpus) if u.gender == gender], dtype=np.int64)
        rng.shuffle(idx)
        for i in idx:
            folds[cursor % k].append(int(i))
            cursor += 1
    return [sorted(f) for f in folds]
