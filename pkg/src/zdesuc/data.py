"""Click-log and labeled-utterance corpora, filtering, splitting, synthetic data."""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .text import Vocabulary, featurize, tokenize


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class QclRecord:
    query: str
    url: str


@dataclass(frozen=True)
class LabeledUtterance:
    utterance: str
    class_name: str


def _read_pairs(path, what: str) -> list[tuple[str, str]]:
    try:
        text = Path(path).read_bytes().decode("utf-8")
    except UnicodeDecodeError as e:
        raise DataError(f"{path}: not UTF-8 ({e})") from None
    pairs = []
    for lineno, line in enumerate(text.split("\n"), start=1):
        line = line.rstrip("\r")
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise DataError(f"{path}:{lineno}: expected '{what}', got {len(parts)} TAB-separated fields")
        a, b = parts[0].strip(), parts[1].strip()
        if not a or not b:
            raise DataError(f"{path}:{lineno}: empty field")
        pairs.append((a, b))
    return pairs


def index_urls(records: Iterable[QclRecord]) -> dict[str, int]:
    """Dense URL indices in order of first appearance."""
    index: dict[str, int] = {}
    for r in records:
        index.setdefault(r.url, len(index))
    return index


def load_qcl(path) -> tuple[list[QclRecord], dict[str, int]]:
    records = [QclRecord(q, u) for q, u in _read_pairs(path, "query<TAB>url")]
    return records, index_urls(records)


def load_suc(path) -> list[LabeledUtterance]:
    return [LabeledUtterance(u, c) for u, c in _read_pairs(path, "utterance<TAB>class_name")]


def _check_field(s: str) -> str:
    if "\t" in s or "\n" in s:
        raise DataError(f"field contains TAB or newline: {s!r}")
    return s


def save_qcl(records: Sequence[QclRecord], path) -> None:
    lines = "".join(f"{_check_field(r.query)}\t{_check_field(r.url)}\n" for r in records)
    Path(path).write_bytes(lines.encode("utf-8"))


def save_suc(records: Sequence[LabeledUtterance], path) -> None:
    lines = "".join(f"{_check_field(r.utterance)}\t{_check_field(r.class_name)}\n" for r in records)
    Path(path).write_bytes(lines.encode("utf-8"))


def restrict_top_urls(records: Sequence[QclRecord], k: int) -> list[QclRecord]:
    """Keep records whose URL is among the ``k`` most clicked (ties lexicographic)."""
    if k < 1:
        raise ValueError("k must be >= 1")
    counts = Counter(r.url for r in records)
    keep = {u for u, _ in sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[:k]}
    return [r for r in records if r.url in keep]


def filter_unknown_queries(records: Sequence[QclRecord], vocab: Vocabulary) -> list[QclRecord]:
    """Drop queries made only of unknown or stop words."""
    return [r for r in records if featurize(r.query, vocab)]


def split(records: Sequence, fractions: Sequence[float], seed: int) -> tuple[list, ...]:
    """Shuffle by ``seed`` and cut into contiguous slices of the given fractions."""
    fr = np.asarray(fractions, dtype=np.float64)
    if fr.size == 0 or (fr < 0).any() or abs(fr.sum() - 1.0) > 1e-9:
        raise ValueError(f"fractions must be non-negative and sum to 1, got {list(fractions)}")
    n = len(records)
    order = np.random.default_rng(seed).permutation(n)
    bounds = np.rint(np.concatenate([[0.0], np.cumsum(fr)]) * n).astype(int)
    bounds[-1] = n
    return tuple([records[i] for i in order[lo:hi]] for lo, hi in zip(bounds, bounds[1:]))


# -- synthetic corpora ----------------------------------------------------------

_ONSETS = "b c d f g h j k l m n p r s t v z br dr gr kl pl st tr".split()
_VOWELS = "a e i o u ai ou".split()


@dataclass(frozen=True)
class SyntheticSpec:
    """Generative model for a click-log corpus with known class structure.

    Each class owns a word pool split into ``subtopics``; each subtopic owns a
    share of the class's URLs.  A query picks one subtopic, draws 3-8 words
    (shared-pool noise with probability ``noise_rate``; else a class-name word
    with probability ``name_rate``; else mostly from its subtopic) and clicks
    one of the subtopic's URLs.  With probability
    ``url_confusion`` the click goes to a URL of the partner class instead
    (classes are paired 0-1, 2-3, ...), which makes those classes hard to
    separate from clicks alone.
    """

    num_classes: int = 5
    words_per_class: int = 40
    shared_words: int = 30
    urls_per_class: int = 6
    queries_per_class: int = 2000
    utterances_per_class: int = 400
    class_name_tokens: int = 2
    noise_rate: float = 0.2
    subtopics: int = 3
    subtopic_purity: float = 0.9
    name_rate: float = 0.0
    url_confusion: float = 0.0
    min_words: int = 3
    max_words: int = 8
    seed: int = 0

    def validate(self) -> None:
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        if self.subtopics < 1 or self.words_per_class < self.subtopics:
            raise ValueError("need at least one word per subtopic")
        if self.urls_per_class < self.subtopics:
            raise ValueError("need at least one URL per subtopic")
        if not 1 <= self.class_name_tokens <= 2:
            raise ValueError("class names have 1 or 2 words")
        if self.class_name_tokens > self.words_per_class:
            raise ValueError("class name longer than the word pool")
        if self.shared_words < 1 and self.noise_rate > 0:
            raise ValueError("noise_rate > 0 needs a shared pool")
        for name in ("noise_rate", "url_confusion", "name_rate"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise ValueError(f"{name} must be in [0, 1)")
        if not 0.0 <= self.subtopic_purity <= 1.0:
            raise ValueError("subtopic_purity must be in [0, 1]")
        if not 1 <= self.min_words <= self.max_words:
            raise ValueError("bad query length range")
        if self.queries_per_class < 1 or self.utterances_per_class < 0:
            raise ValueError("bad corpus sizes")


@dataclass
class SyntheticCorpus:
    qcl: list[QclRecord]
    suc: list[LabeledUtterance]
    meta: dict

    @property
    def class_names(self) -> list[str]:
        return list(self.meta["class_names"])


def _make_words(rng: np.random.Generator, n: int) -> list[str]:
    seen: set[str] = set()
    out = []
    while len(out) < n:
        k = int(rng.integers(2, 4))
        w = "".join(_ONSETS[rng.integers(len(_ONSETS))] + _VOWELS[rng.integers(len(_VOWELS))] for _ in range(k))
        if w not in seen:
            seen.add(w)
            out.append(w)
    return out


def generate_synthetic(spec: SyntheticSpec) -> SyntheticCorpus:
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    M, S = spec.num_classes, spec.subtopics
    words = _make_words(rng, M * spec.words_per_class + spec.shared_words)
    pools = [words[i * spec.words_per_class:(i + 1) * spec.words_per_class] for i in range(M)]
    shared = words[M * spec.words_per_class:]
    # subtopic s of class i owns pool words j with j % S == s
    subpools = [[pool[j::S] for j in range(S)] for pool in pools]
    urls = [[f"www.site{i}-{j}.com" for j in range(spec.urls_per_class)] for i in range(M)]
    suburls = [[u[j::S] for j in range(S)] for u in urls]
    partner = [i ^ 1 if (i ^ 1) < M else i for i in range(M)]

    names, name_words = [], []
    for i in range(M):
        picks = rng.choice(spec.words_per_class, size=spec.class_name_tokens, replace=False)
        name_words.append([pools[i][j] for j in sorted(picks)])
        names.append(" ".join(name_words[i]))

    def draw_words(i: int, s: int) -> list[str]:
        L = int(rng.integers(spec.min_words, spec.max_words + 1))
        out = []
        for _ in range(L):
            if rng.random() < spec.noise_rate:
                out.append(shared[rng.integers(len(shared))])
            elif rng.random() < spec.name_rate:
                out.append(name_words[i][rng.integers(len(name_words[i]))])
            elif rng.random() < spec.subtopic_purity:
                sp = subpools[i][s]
                out.append(sp[rng.integers(len(sp))])
            else:
                out.append(pools[i][rng.integers(len(pools[i]))])
        return out

    qcl = []
    for i in range(M):
        for _ in range(spec.queries_per_class):
            s = int(rng.integers(S))
            q = draw_words(i, s)
            if rng.random() < spec.url_confusion and partner[i] != i:
                pu = urls[partner[i]]
                url = pu[rng.integers(len(pu))]
            else:
                su = suburls[i][s]
                url = su[rng.integers(len(su))]
            qcl.append(QclRecord(" ".join(q), url))
    qcl = [qcl[j] for j in rng.permutation(len(qcl))]

    suc = []
    for i in range(M):
        for _ in range(spec.utterances_per_class):
            s = int(rng.integers(S))
            suc.append(LabeledUtterance(" ".join(draw_words(i, s)), names[i]))
    suc = [suc[j] for j in rng.permutation(len(suc))]

    meta = {
        "spec": asdict(spec),
        "class_names": names,
        "word_pools": {names[i]: pools[i] for i in range(M)},
        "shared_words": shared,
        "url_to_class": {u: names[i] for i in range(M) for u in urls[i]},
        "representative_url": {names[i]: urls[i][0] for i in range(M)},
        "partner_class": {names[i]: names[partner[i]] for i in range(M)},
        "bayes_error": bayes_error(spec),
    }
    return SyntheticCorpus(qcl, suc, meta)


def bayes_error(spec: SyntheticSpec) -> float:
    """Exact Bayes error of the utterance-classification task.

    Any class word identifies the class; an utterance made only of shared
    words is uninformative, so the optimal rule errs with probability
    (M - 1) / M on those.
    """
    lengths = range(spec.min_words, spec.max_words + 1)
    p_all_noise = sum(spec.noise_rate ** L for L in lengths) / len(lengths)
    return p_all_noise * (spec.num_classes - 1) / spec.num_classes


def bayes_classify(meta: dict, text: str) -> str:
    """Optimal class for ``text`` under the generative model (ties -> first class)."""
    owner = {w: c for c, pool in meta["word_pools"].items() for w in pool}
    votes = Counter(owner[t] for t in tokenize(text) if t in owner)
    if not votes:
        return meta["class_names"][0]
    return votes.most_common(1)[0][0]


def save_synthetic(corpus: SyntheticCorpus, outdir) -> dict[str, Path]:
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "qcl": out / "qcl.tsv",
        "suc": out / "suc.tsv",
        "classes": out / "classes.txt",
        "class_urls": out / "class_urls.tsv",
        "meta": out / "meta.json",
    }
    save_qcl(corpus.qcl, paths["qcl"])
    save_suc(corpus.suc, paths["suc"])
    paths["classes"].write_bytes("".join(f"{c}\n" for c in corpus.class_names).encode("utf-8"))
    rep = corpus.meta["representative_url"]
    paths["class_urls"].write_bytes("".join(f"{c}\t{rep[c]}\n" for c in corpus.class_names).encode("utf-8"))
    paths["meta"].write_bytes((json.dumps(corpus.meta, indent=2) + "\n").encode("utf-8"))
    return paths
