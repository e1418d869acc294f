"""Byte-level signature analysis over populations of images.

Shared substrings come from a generalized suffix array: member texts are
joined with unique separators, the suffix array is built by prefix
doubling and the LCP array by Kasai's algorithm. A bottom-up walk over
the LCP-interval tree yields every substring that is maximal for its
set of supporting members.
"""
import hashlib
import logging
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, FrozenSet, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from divlab.encoding import ByteImage, Decoded, code_layout, decode, instruction_size, sweep
from divlab.errors import DecodeError, PopulationError
from divlab.rng import Rng

log = logging.getLogger(__name__)

DEFAULT_MIN_LEN = 10
SIGNATURE_MIN_LEN = 25
MAX_MEMBERS = 64
MOV_LIKE = frozenset({"mov", "movi", "lea", "load", "store"})


# --- suffix structures --------------------------------------------------------------

def suffix_array(text: np.ndarray) -> np.ndarray:
    """Suffix array of an integer sequence by prefix doubling."""
    n = len(text)
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    _, rank = np.unique(np.asarray(text), return_inverse=True)
    rank = rank.astype(np.int64).reshape(-1)
    k = 1
    while True:
        second = np.full(n, -1, dtype=np.int64)
        if k < n:
            second[:n - k] = rank[k:]
        sa = np.lexsort((second, rank))
        first_sorted, second_sorted = rank[sa], second[sa]
        step = np.zeros(n, dtype=np.int64)
        step[1:] = (first_sorted[1:] != first_sorted[:-1]) | (second_sorted[1:] != second_sorted[:-1])
        rank = np.empty(n, dtype=np.int64)
        rank[sa] = np.cumsum(step)
        if rank[sa[-1]] == n - 1 or k >= n:
            return sa
        k *= 2


def lcp_array(text: Sequence[int], sa: Sequence[int]) -> List[int]:
    """lcp[i] = longest common prefix of suffixes sa[i-1] and sa[i]; lcp[0] = 0."""
    n = len(sa)
    rank = [0] * n
    for i, s in enumerate(sa):
        rank[s] = i
    lcp = [0] * n
    h = 0
    for i in range(n):
        r = rank[i]
        if r == 0:
            h = 0
            continue
        j = sa[r - 1]
        while i + h < n and j + h < n and text[i + h] == text[j + h]:
            h += 1
        lcp[r] = h
        if h:
            h -= 1
    return lcp


@dataclass(frozen=True)
class SharedSubstring:
    data: bytes
    support: FrozenSet[int]
    occurrences: Tuple[Tuple[int, int], ...]

    @property
    def length(self):
        return len(self.data)

    def __len__(self):
        return len(self.data)


def maximal_repeats(texts: Sequence[bytes], min_len: int = DEFAULT_MIN_LEN, quorum: int = 2) -> List[SharedSubstring]:
    """Substrings of length >= min_len found in >= quorum texts, maximal per support set."""
    if not texts:
        raise PopulationError("no texts to search")
    if len(texts) > MAX_MEMBERS:
        raise PopulationError(f"at most {MAX_MEMBERS} members per search, got {len(texts)}")
    if min_len < 1:
        raise PopulationError("min_len must be >= 1")
    if not 2 <= quorum <= len(texts):
        raise PopulationError(f"quorum {quorum} outside 2..{len(texts)}")

    joined, owner, starts = [], [], []
    for m, t in enumerate(texts):
        starts.append(len(joined))
        joined.extend(t)
        joined.append(256 + m)
        owner.extend([m] * (len(t) + 1))
    n = len(joined)
    sa = suffix_array(np.asarray(joined, dtype=np.int64)).tolist()
    lcp = lcp_array(joined, sa)

    found = []

    def emit(depth, lb, rb, mask, children):
        if depth < min_len or mask.bit_count() < quorum or mask in children:
            return
        preceding: Dict[int, set] = {}
        for k in range(lb, rb + 1):
            p = sa[k]
            preceding.setdefault(owner[p], set()).add(joined[p - 1] if p > 0 else -1)
        if set.intersection(*preceding.values()):
            return
        occurrences = sorted((owner[sa[k]], sa[k] - starts[owner[sa[k]]]) for k in range(lb, rb + 1))
        m, off = occurrences[0]
        found.append(SharedSubstring(
            bytes(texts[m][off:off + depth]),
            frozenset(preceding),
            tuple(occurrences),
        ))

    # entries: [depth, left bound, member mask, child masks]
    stack = [[0, 0, 0, []]]
    for i in range(1, n + 1):
        depth = lcp[i] if i < n else 0
        leaf = 1 << owner[sa[i - 1]]
        if depth > stack[-1][0]:
            stack.append([depth, i - 1, leaf, []])
            continue
        stack[-1][2] |= leaf
        while depth < stack[-1][0]:
            node = stack.pop()
            emit(node[0], node[1], i - 1, node[2], node[3])
            if depth <= stack[-1][0]:
                stack[-1][2] |= node[2]
                stack[-1][3].append(node[2])
            else:
                stack.append([depth, node[1], node[2], [node[2]]])
                break

    found.sort(key=lambda s: (-s.length, s.data, sorted(s.support)))
    return found


def shared_substrings(images: Sequence[ByteImage], min_len: int = DEFAULT_MIN_LEN, quorum: int = 2) -> List[SharedSubstring]:
    """Maximal shared substrings over the code and data bytes of each image."""
    if not images:
        raise PopulationError("population is empty")
    if quorum > len(images):
        raise PopulationError(f"quorum {quorum} exceeds population size {len(images)}")
    return maximal_repeats([img.searchable for img in images], min_len, quorum)


def length_histogram(subs: Sequence[SharedSubstring]) -> Dict[int, int]:
    return dict(sorted(Counter(s.length for s in subs).items()))


def region_annotation(s: SharedSubstring, images: Sequence[ByteImage]) -> str:
    kinds = set()
    for m, off in s.occurrences:
        kinds.add(images[m].region_of(off))
        kinds.add(images[m].region_of(off + s.length - 1))
    return "+".join(k for k in ("code", "data") if k in kinds)


SUBSTRING_COLUMNS = ("length", "hex", "support", "occurrences", "regions")


def substrings_frame(subs: Sequence[SharedSubstring], images: Sequence[ByteImage]) -> pd.DataFrame:
    rows = []
    for s in subs:
        rows.append({
            "length": s.length,
            "hex": s.data.hex(),
            "support": ";".join(str(m) for m in sorted(s.support)),
            "occurrences": len(s.occurrences),
            "regions": region_annotation(s, images),
        })
    return pd.DataFrame(rows, columns=list(SUBSTRING_COLUMNS))


# --- classification -------------------------------------------------------------------

class Tag(Enum):
    NOP_SLED = "nop_sled"
    CALL_SEQUENCE = "call_sequence"
    MOV_SEQUENCE = "mov_sequence"
    START_CODE = "start_code"
    POTENTIAL_SIGNATURE = "potential_signature"


@dataclass(frozen=True)
class SubseqCategory:
    tag: Tag
    undecodable: bool = False


@dataclass(frozen=True)
class ImageView:
    """Instruction boundaries and start-code ranges of one image's code region."""
    image: ByteImage
    instructions: Tuple[Decoded, ...] = ()
    start_code: Tuple[Tuple[int, int], ...] = ()
    decodable: bool = True

    def covered(self, begin, end):
        return [d for d in self.instructions if d.offset >= begin and d.end <= end]


def view_image(img: ByteImage) -> ImageView:
    """Decode `img`; start code is the entry block plus the function its first call enters."""
    try:
        instructions = tuple(sweep(img.code))
        program = decode(img)
    except DecodeError as e:
        log.debug("image not decodable: %s", e)
        return ImageView(img, decodable=False)
    functions, blocks, code_end = code_layout(program)
    bounds = sorted(functions.values()) + [code_end]

    def function_range(name):
        begin = functions[name]
        return begin, bounds[bounds.index(begin) + 1]

    entry = program.function(program.entry_function)
    first = entry.blocks[0]
    begin = blocks[(entry.name, first.label)]
    ranges = [(begin, begin + sum(instruction_size(i.mnemonic) for i in first.instructions))]
    calls = [i for i in first.instructions if i.mnemonic == "call"]
    if calls:
        ranges.append(function_range(calls[0].target))
    return ImageView(img, instructions, tuple(sorted(ranges)))


def classify_subsequence(s: SharedSubstring, views: Sequence[ImageView]) -> SubseqCategory:
    if s.data and all(b == 0 for b in s.data):
        return SubseqCategory(Tag.NOP_SLED)
    in_code = []
    undecodable = False
    for m, off in s.occurrences:
        view = views[m]
        code = view.image.region("code")
        if code is None or off >= code.end:
            continue
        if not view.decodable:
            undecodable = True
            continue
        in_code.append((view, off, min(off + s.length, code.end)))
    if not in_code:
        if undecodable:
            log.warning("undecodable occurrence for substring of length %d", s.length)
        return SubseqCategory(Tag.POTENTIAL_SIGNATURE, undecodable)

    view, begin, end = in_code[0]
    covered = view.covered(begin, end)
    mnemonics = [d.mnemonic for d in covered]
    if "call" in mnemonics and "push" in mnemonics[:mnemonics.index("call")]:
        return SubseqCategory(Tag.CALL_SEQUENCE)
    if mnemonics and sum(m in MOV_LIKE for m in mnemonics) >= 0.8 * len(mnemonics):
        return SubseqCategory(Tag.MOV_SEQUENCE)
    for view, begin, end in in_code:
        if any(begin < hi and lo < end for lo, hi in view.start_code):
            return SubseqCategory(Tag.START_CODE)
    return SubseqCategory(Tag.POTENTIAL_SIGNATURE)


def category_counts(subs: Sequence[SharedSubstring], images: Sequence[ByteImage]) -> Dict[str, int]:
    views = [view_image(img) for img in images]
    counts = Counter(classify_subsequence(s, views).tag.value for s in subs)
    return {tag.value: counts.get(tag.value, 0) for tag in Tag}


# --- signatures ------------------------------------------------------------------------

@dataclass(frozen=True)
class Signature:
    data: bytes
    origin: Tuple[int, ...]

    def __len__(self):
        return len(self.data)


def extract_signature(images_subset: Sequence[ByteImage], min_len: int = SIGNATURE_MIN_LEN,
                      origin: Sequence[int] = None) -> Optional[Signature]:
    """Longest substring common to every member, potential signatures first at equal length."""
    if len(images_subset) < 2:
        raise PopulationError("signature extraction needs at least two images")
    origin = tuple(origin) if origin is not None else tuple(range(len(images_subset)))
    subs = shared_substrings(images_subset, min_len, quorum=len(images_subset))
    if not subs:
        return None
    longest = max(s.length for s in subs)
    candidates = [s for s in subs if s.length == longest]
    views = [view_image(img) for img in images_subset]

    def rank(s):
        tag = classify_subsequence(s, views).tag
        return (0 if tag is Tag.POTENTIAL_SIGNATURE else 1, s.data)

    best = min(candidates, key=rank)
    return Signature(best.data, origin)


def match_signature(sig: Signature, img: ByteImage) -> bool:
    if not sig.data:
        raise ValueError("empty signature")
    return sig.data in img.searchable


def section_hashes(img: ByteImage) -> Dict[str, str]:
    """SHA-256 per region plus the whole raw image."""
    hashes = {r.kind: hashlib.sha256(img.region_bytes(r.kind)).hexdigest() for r in img.layout}
    hashes["image"] = hashlib.sha256(img.raw).hexdigest()
    return hashes


def hash_match(a: ByteImage, b: ByteImage, region: str = None) -> bool:
    key = region or "image"
    ha, hb = section_hashes(a), section_hashes(b)
    return key in ha and ha.get(key) == hb.get(key)


# --- evasion experiment ---------------------------------------------------------------------

@dataclass(frozen=True)
class EvasionTrial:
    trial: int
    members: Tuple[int, ...]
    signature_length: Optional[int]
    held_out_matches: int
    held_out_total: int
    false_positives: int
    benign_total: int

    @property
    def has_signature(self):
        return self.signature_length is not None

    @property
    def match_rate(self):
        if not self.has_signature or not self.held_out_total:
            return float("nan")
        return self.held_out_matches / self.held_out_total

    @property
    def false_positive_rate(self):
        if not self.has_signature or not self.benign_total:
            return float("nan")
        return self.false_positives / self.benign_total


@dataclass(frozen=True)
class EvasionReport:
    k: int
    min_len: int
    trials: Tuple[EvasionTrial, ...] = field(default_factory=tuple)

    def to_frame(self) -> pd.DataFrame:
        rows = [{
            "trial": t.trial,
            "members": ";".join(str(m) for m in t.members),
            "signature_length": t.signature_length,
            "held_out_matches": t.held_out_matches,
            "held_out_total": t.held_out_total,
            "match_rate": t.match_rate,
            "false_positives": t.false_positives,
            "benign_total": t.benign_total,
            "false_positive_rate": t.false_positive_rate,
        } for t in self.trials]
        return pd.DataFrame(rows)

    @property
    def mean_match_rate(self):
        rates = [t.match_rate for t in self.trials if t.has_signature]
        return float(np.mean(rates)) if rates else float("nan")

    @property
    def mean_false_positive_rate(self):
        rates = [t.false_positive_rate for t in self.trials if t.has_signature and t.benign_total]
        return float(np.mean(rates)) if rates else float("nan")

    @property
    def no_signature_trials(self):
        return sum(not t.has_signature for t in self.trials)


def evasion_experiment(population: Sequence[ByteImage], k: int = 2, min_len: int = SIGNATURE_MIN_LEN,
                       trials: int = 20, benign: Sequence[ByteImage] = (), seed: int = 0) -> EvasionReport:
    """Extract a signature from k sampled members and scan the rest and a benign pool."""
    if not 2 <= k < len(population):
        raise PopulationError(f"need 2 <= k < population size, got k={k} for {len(population)} images")
    results = []
    for t in range(trials):
        rng = Rng.derive(seed, "trial", t)
        members = tuple(sorted(rng.sample(range(len(population)), k)))
        held_out = [i for i in range(len(population)) if i not in members]
        sig = extract_signature([population[i] for i in members], min_len, origin=members)
        if sig is None:
            results.append(EvasionTrial(t, members, None, 0, len(held_out), 0, len(benign)))
            continue
        matches = sum(match_signature(sig, population[i]) for i in held_out)
        false_positives = sum(match_signature(sig, img) for img in benign)
        results.append(EvasionTrial(t, members, len(sig), matches, len(held_out), false_positives, len(benign)))
        log.debug("trial %d: signature %d bytes, %d/%d held-out matches", t, len(sig), matches, len(held_out))
    return EvasionReport(k, min_len, tuple(results))
