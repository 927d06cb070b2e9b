"""Unigram-language-model subword tokenizer.

A vocabulary is a fixed inventory of string pieces, each carrying a
log-probability. Training seeds the inventory with frequent substrings,
re-estimates probabilities by EM over per-word segmentation lattices,
and alternates pruning rounds until the target size is reached. Encoding
picks the maximum-probability segmentation by Viterbi search.

Words are the whitespace-separated units of the input; each is prefixed
with the boundary marker so decoding can restore spaces. All probability
arithmetic is double-precision natural log.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from functools import cached_property

from .corpus import RawCorpus
from .errors import CoverageError, DataError, UsageError

BOUNDARY = "▁"

PAD, UNK, BOS, EOS = "<pad>", "<unk>", "<s>", "</s>"
PAD_ID, UNK_ID, BOS_ID, EOS_ID = 0, 1, 2, 3
SPECIALS = (PAD, UNK, BOS, EOS)
_SPECIAL_PIECES = tuple((s, 0.0) for s in SPECIALS)

DEFAULT_TARGET_SIZE = 32000
DEFAULT_MAX_PIECE_LEN = 16
DEFAULT_CHARACTER_COVERAGE = 0.9995
DEFAULT_SEED_FACTOR = 8
DEFAULT_SHRINK_FACTOR = 0.75
DEFAULT_EM_ITERS_PER_ROUND = 2

# margin below the worst real piece, so an unknown character never
# displaces a segmentation made of covered pieces
_UNK_PENALTY = 10.0


@dataclass(frozen=True)
class UnigramVocab:
    """Immutable piece inventory with log-probabilities.

    ``pieces[i]`` is ``(surface, logprob)`` for token id ``i``. Ids 0..3
    are the specials PAD, UNK, BOS, EOS in that order; segmentation
    never produces PAD, BOS, or EOS on its own, and UNK appears only as
    the substitute for uncovered characters.
    """

    pieces: tuple[tuple[str, float], ...]
    warning: str | None = field(default=None, compare=False)

    def __post_init__(self):
        surfaces = [s for s, _ in self.pieces]
        if tuple(surfaces[:4]) != SPECIALS:
            raise UsageError("vocabulary must start with the four special pieces")
        if len(set(surfaces)) != len(surfaces):
            raise UsageError("piece surfaces must be unique")
        for s, lp in self.pieces:
            if not (math.isfinite(lp) and lp <= 0.0):
                raise UsageError(f"piece {s!r} has invalid log-probability {lp!r}")

    def __len__(self) -> int:
        return len(self.pieces)

    @cached_property
    def piece_to_id(self) -> dict[str, int]:
        return {s: i for i, (s, _) in enumerate(self.pieces)}

    @cached_property
    def single_chars(self) -> frozenset[str]:
        return frozenset(s for s, _ in self.pieces[4:] if len(s) == 1)

    @cached_property
    def max_piece_len(self) -> int:
        return max((len(s) for s, _ in self.pieces[4:]), default=1)

    @cached_property
    def unk_logprob(self) -> float:
        return min((lp for _, lp in self.pieces[4:]), default=0.0) - _UNK_PENALTY

    @cached_property
    def _viterbi_cache(self) -> dict[str, list[int]]:
        return {}


@dataclass(frozen=True)
class SegmentationLattice:
    """Segmentation graph of one word.

    ``edges[i]`` lists ``(end, piece_id, logprob)`` for every piece that
    matches ``text[i:end]``; every edge spans at least one character.
    """

    text: str
    edges: tuple[tuple[tuple[int, int, float], ...], ...]


def build_lattice(vocab: UnigramVocab, word: str, *,
                  with_unk: bool = False) -> SegmentationLattice:
    """Collect the piece matches at every start position of ``word``.

    With ``with_unk`` a position with no match gets a single-character
    UNK edge at a penalty log-probability, which keeps every word
    segmentable end to end.
    """
    n = len(word)
    maxlen = vocab.max_piece_len
    index = vocab.piece_to_id
    pieces = vocab.pieces
    rows = []
    for i in range(n):
        row = []
        for j in range(i + 1, min(i + maxlen, n) + 1):
            pid = index.get(word[i:j])
            if pid is not None and pid >= 4:
                row.append((j, pid, pieces[pid][1]))
        if not row and with_unk:
            row.append((i + 1, UNK_ID, vocab.unk_logprob))
        rows.append(tuple(row))
    return SegmentationLattice(text=word, edges=tuple(rows))


def _logsumexp(vals: list[float]) -> float:
    m = max(vals)
    if m == -math.inf:
        return m
    return m + math.log(sum(math.exp(v - m) for v in vals))


def _logadd2(a: float, b: float) -> float:
    if a < b:
        a, b = b, a
    if b == -math.inf:
        return a
    return a + math.log1p(math.exp(b - a))


def _alphas(lat: SegmentationLattice) -> list[float]:
    """Forward log-sums; ``alpha[j]`` covers text[:j], ``alpha[n]`` is log Z."""
    n = len(lat.text)
    incoming: list[list[tuple[int, float]]] = [[] for _ in range(n + 1)]
    for i, row in enumerate(lat.edges):
        for j, _, lp in row:
            incoming[j].append((i, lp))
    alpha = [-math.inf] * (n + 1)
    alpha[0] = 0.0
    for j in range(1, n + 1):
        vals = [alpha[i] + lp for i, lp in incoming[j] if alpha[i] > -math.inf]
        if vals:
            alpha[j] = _logsumexp(vals)
    return alpha


def _betas(lat: SegmentationLattice) -> list[float]:
    n = len(lat.text)
    beta = [-math.inf] * (n + 1)
    beta[n] = 0.0
    for i in range(n - 1, -1, -1):
        vals = [lp + beta[j] for j, _, lp in lat.edges[i] if beta[j] > -math.inf]
        if vals:
            beta[i] = _logsumexp(vals)
    return beta


def _word_counts(corpus: RawCorpus) -> Counter:
    counts: Counter = Counter()
    for doc in corpus.documents:
        for w in doc.split():
            counts[BOUNDARY + w] += 1
    return counts


def _check_covered(vocab: UnigramVocab, corpus: RawCorpus) -> None:
    covered = vocab.single_chars
    if corpus.documents and BOUNDARY not in covered:
        raise CoverageError("vocabulary lacks the word-boundary piece")
    for d, doc in enumerate(corpus.documents):
        for o, ch in enumerate(doc):
            if not ch.isspace() and ch not in covered:
                raise CoverageError(
                    f"character {ch!r} at document {d} offset {o} "
                    f"is not covered by the vocabulary")


def _covered_fragments(word_counts: Counter, coverage: float) -> Counter:
    """Split words on characters below the coverage threshold.

    Characters are admitted most-frequent first until the admitted mass
    reaches ``coverage``; the rest become word separators here and UNK
    at encode time.
    """
    char_counts: Counter = Counter()
    for w in sorted(word_counts):
        f = word_counts[w]
        for ch in w:
            char_counts[ch] += f
    total = sum(char_counts.values())
    covered: set[str] = set()
    cum = 0
    for ch in sorted(char_counts, key=lambda c: (-char_counts[c], c)):
        if cum / total >= coverage:
            break
        covered.add(ch)
        cum += char_counts[ch]
    fragments: Counter = Counter()
    for w in sorted(word_counts):
        f = word_counts[w]
        run: list[str] = []
        for ch in w:
            if ch in covered:
                run.append(ch)
            elif run:
                fragments["".join(run)] += f
                run = []
        if run:
            fragments["".join(run)] += f
    return fragments


def _seed_from_fragments(fragments: Counter, max_seed_size: int,
                         max_piece_len: int) -> list[tuple[str, int]]:
    occurrences: Counter = Counter()
    for frag in sorted(fragments):
        f = fragments[frag]
        n = len(frag)
        for i in range(n):
            for j in range(i + 1, min(i + max_piece_len, n) + 1):
                occurrences[frag[i:j]] += f
    for sp in SPECIALS:
        occurrences.pop(sp, None)
    singles = sorted(s for s in occurrences if len(s) == 1)
    if max_seed_size < len(singles):
        raise UsageError(
            f"max_seed_size {max_seed_size} is below the {len(singles)} "
            f"required character pieces")

    def score(s: str):
        return (-occurrences[s] * len(s), s)

    multis = sorted((s for s in occurrences if len(s) > 1), key=score)
    chosen = singles + multis[:max_seed_size - len(singles)]
    return [(s, occurrences[s]) for s in sorted(chosen, key=score)]


def seed_vocabulary(corpus: RawCorpus, max_seed_size: int, *,
                    max_piece_len: int = DEFAULT_MAX_PIECE_LEN,
                    character_coverage: float = DEFAULT_CHARACTER_COVERAGE,
                    ) -> list[tuple[str, int]]:
    """Enumerate candidate pieces with occurrence counts.

    Candidates are all substrings of covered word fragments up to
    ``max_piece_len`` characters, ranked by count times length and cut
    to ``max_seed_size``; single characters are always kept so any
    covered input stays segmentable.
    """
    wc = _word_counts(corpus)
    if not wc:
        raise DataError("cannot seed a vocabulary from an empty corpus")
    fragments = _covered_fragments(wc, character_coverage)
    return _seed_from_fragments(fragments, max_seed_size, max_piece_len)


def _em_words(vocab: UnigramVocab, word_counts: Counter) -> UnigramVocab:
    """One EM step on a word-frequency table; piece order is preserved."""
    expected: dict[int, float] = {}
    for word in sorted(word_counts):
        freq = word_counts[word]
        lat = build_lattice(vocab, word)
        alpha = _alphas(lat)
        beta = _betas(lat)
        z = alpha[len(word)]
        for i, row in enumerate(lat.edges):
            ai = alpha[i]
            if ai == -math.inf:
                continue
            for j, pid, lp in row:
                if beta[j] == -math.inf:
                    continue
                post = freq * math.exp(ai + lp + beta[j] - z)
                expected[pid] = expected.get(pid, 0.0) + post
    total = sum(expected[pid] for pid in sorted(expected))
    log_total = math.log(total)
    new_pieces = list(vocab.pieces[:4])
    for pid in range(4, len(vocab.pieces)):
        surface = vocab.pieces[pid][0]
        # pieces the lattices never touched keep a finite floor
        c = max(expected.get(pid, 0.0), 1e-300)
        new_pieces.append((surface, min(math.log(c) - log_total, 0.0)))
    return UnigramVocab(pieces=tuple(new_pieces), warning=vocab.warning)


def _loglik_words(vocab: UnigramVocab, word_counts: Counter) -> float:
    total = 0.0
    for word in sorted(word_counts):
        total += word_counts[word] * _alphas(build_lattice(vocab, word))[len(word)]
    return total


def corpus_log_likelihood(vocab: UnigramVocab, corpus: RawCorpus) -> float:
    """Total log-probability of the corpus, summed over all segmentations."""
    _check_covered(vocab, corpus)
    return _loglik_words(vocab, _word_counts(corpus))


def em_iterate(vocab: UnigramVocab, corpus: RawCorpus) -> UnigramVocab:
    """Re-estimate piece log-probabilities from expected lattice counts.

    Corpus log-likelihood under the result is never lower than under the
    input, up to numerical slack.
    """
    _check_covered(vocab, corpus)
    wc = _word_counts(corpus)
    if not wc:
        raise DataError("corpus has no words")
    return _em_words(vocab, wc)


def _loglik_without(lat: SegmentationLattice, banned: int) -> float:
    alpha = [0.0] + [-math.inf] * len(lat.text)
    for i, row in enumerate(lat.edges):
        ai = alpha[i]
        if ai == -math.inf:
            continue
        for j, pid, lp in row:
            if pid != banned:
                alpha[j] = _logadd2(alpha[j], ai + lp)
    return alpha[len(lat.text)]


def _removal_losses(vocab: UnigramVocab, word_counts: Counter) -> dict[int, float]:
    """Exact likelihood drop from deleting each multi-character piece.

    The remaining log-probabilities are held fixed, with no
    renormalization; only words whose lattice contains the piece
    contribute to its loss.
    """
    multi = {pid for pid in range(4, len(vocab.pieces))
             if len(vocab.pieces[pid][0]) > 1}
    losses = {pid: 0.0 for pid in multi}
    for word in sorted(word_counts):
        freq = word_counts[word]
        lat = build_lattice(vocab, word)
        z = _alphas(lat)[len(word)]
        present = sorted({pid for row in lat.edges for _, pid, _ in row
                          if pid in multi})
        for pid in present:
            losses[pid] += freq * (z - _loglik_without(lat, pid))
    return losses


def _prune_to(vocab: UnigramVocab, word_counts: Counter,
              target: int) -> UnigramVocab:
    n_required = 4 + sum(1 for s, _ in vocab.pieces[4:] if len(s) == 1)
    if target < n_required:
        raise UsageError(
            f"cannot prune to {target} pieces; {n_required} single-character "
            f"and special pieces must remain")
    n_remove = len(vocab) - target
    if n_remove <= 0:
        return vocab
    losses = _removal_losses(vocab, word_counts)
    order = sorted(losses, key=lambda pid: (losses[pid], vocab.pieces[pid][0]))
    drop = set(order[:n_remove])
    keep = tuple(p for pid, p in enumerate(vocab.pieces) if pid not in drop)
    return UnigramVocab(pieces=keep, warning=vocab.warning)


def prune_vocabulary(vocab: UnigramVocab, corpus: RawCorpus,
                     shrink_factor: float) -> UnigramVocab:
    """Drop the lowest-impact pieces until ceil(size * shrink_factor) remain.

    Impact is the exact corpus likelihood loss from removing the piece
    alone. Single-character pieces and specials are never candidates.
    """
    if not 0.0 < shrink_factor <= 1.0:
        raise UsageError(f"shrink_factor must lie in (0, 1], got {shrink_factor}")
    _check_covered(vocab, corpus)
    return _prune_to(vocab, _word_counts(corpus),
                     math.ceil(len(vocab) * shrink_factor))


def train_unigram(corpus: RawCorpus, target_size: int = DEFAULT_TARGET_SIZE,
                  em_iters_per_round: int = DEFAULT_EM_ITERS_PER_ROUND,
                  shrink_factor: float = DEFAULT_SHRINK_FACTOR, *,
                  max_seed_size: int | None = None,
                  max_piece_len: int = DEFAULT_MAX_PIECE_LEN,
                  character_coverage: float = DEFAULT_CHARACTER_COVERAGE,
                  ) -> UnigramVocab:
    """Fit a vocabulary of at most ``target_size`` pieces.

    Alternates ``em_iters_per_round`` EM steps with a pruning round
    (never cutting below ``target_size``) until the target is reached,
    ending on EM so the surviving probabilities are settled. The run is
    deterministic for fixed inputs. A corpus too small to fill the
    target yields the largest attainable vocabulary with ``warning``
    set.
    """
    if not 0.0 < shrink_factor < 1.0:
        raise UsageError(f"shrink_factor must lie in (0, 1), got {shrink_factor}")
    if em_iters_per_round < 1:
        raise UsageError(f"em_iters_per_round must be >= 1, got {em_iters_per_round}")
    if max_seed_size is None:
        max_seed_size = DEFAULT_SEED_FACTOR * target_size
    wc = _word_counts(corpus)
    if not wc:
        raise DataError("cannot train a tokenizer on an empty corpus")
    fragments = _covered_fragments(wc, character_coverage)
    candidates = _seed_from_fragments(fragments, max_seed_size, max_piece_len)
    n_singles = sum(1 for s, _ in candidates if len(s) == 1)
    if target_size < n_singles + 4:
        raise UsageError(
            f"target_size {target_size} is below the minimum of {n_singles + 4} "
            f"(character pieces plus specials)")
    warning = None
    if len(candidates) + 4 < target_size:
        warning = (f"corpus supports only {len(candidates) + 4} pieces, "
                   f"short of the target {target_size}")
    total = sum(c for _, c in candidates)
    pieces = list(_SPECIAL_PIECES)
    for s, c in candidates:
        pieces.append((s, math.log(c) - math.log(total)))
    vocab = UnigramVocab(pieces=tuple(pieces), warning=warning)
    while True:
        for _ in range(em_iters_per_round):
            vocab = _em_words(vocab, fragments)
        if len(vocab) <= target_size:
            break
        next_size = max(math.ceil(len(vocab) * shrink_factor), target_size)
        vocab = _prune_to(vocab, fragments, next_size)
    ordered = sorted(vocab.pieces[4:], key=lambda p: (-p[1], p[0]))
    return UnigramVocab(pieces=vocab.pieces[:4] + tuple(ordered),
                        warning=vocab.warning)


def _viterbi(vocab: UnigramVocab, word: str) -> list[int]:
    cache = vocab._viterbi_cache
    hit = cache.get(word)
    if hit is not None:
        return hit
    lat = build_lattice(vocab, word, with_unk=True)
    n = len(word)
    best_lp = [-math.inf] * (n + 1)
    best_lp[n] = 0.0
    best_cnt = [0] * (n + 1)
    choice: list[tuple[int, int]] = [(0, 0)] * n
    for i in range(n - 1, -1, -1):
        best_key = None
        for j, pid, lp in lat.edges[i]:
            if best_lp[j] == -math.inf:
                continue
            # maximize log-prob, then fewest pieces, then longest first piece
            key = (lp + best_lp[j], -(1 + best_cnt[j]), j - i)
            if best_key is None or key > best_key:
                best_key = key
                choice[i] = (j, pid)
        best_lp[i] = best_key[0]
        best_cnt[i] = -best_key[1]
    out = []
    i = 0
    while i < n:
        j, pid = choice[i]
        out.append(pid)
        i = j
    cache[word] = out
    return out


def encode(vocab: UnigramVocab, text: str, *, add_markers: bool = False) -> list[int]:
    """Segment ``text`` into piece ids by maximum total log-probability.

    Ties go to the segmentation with fewest pieces, then the leftmost
    longest piece. Uncovered characters come out as UNK. The input is
    expected to be normalized already. With ``add_markers`` the result
    is wrapped in BOS and EOS.
    """
    ids: list[int] = [BOS_ID] if add_markers else []
    for w in text.split():
        ids.extend(_viterbi(vocab, BOUNDARY + w))
    if add_markers:
        ids.append(EOS_ID)
    return ids


def decode(vocab: UnigramVocab, ids) -> str:
    """Invert ``encode``: join surfaces, drop specials, restore spaces."""
    parts = []
    n = len(vocab.pieces)
    for raw in ids:
        i = int(raw)
        if not 0 <= i < n:
            raise UsageError(
                f"token id {i} is out of range for a vocabulary of {n} pieces")
        if i >= 4:
            parts.append(vocab.pieces[i][0])
    return "".join(parts).replace(BOUNDARY, " ").lstrip(" ")
