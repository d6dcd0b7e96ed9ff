"""Recollision patterns, Wick pairings, peaks/staircases, and counting lemmas.

Conventions: a pairing is a permutation pi of {1..n}, stored as a sequence
``pi`` with ``pi[a-1]`` the image of position ``a``.  Positions and images are
1-based throughout, matching the index sets of the collision histories.

The module provides exhaustive verification of the counting statements
(number of pairings with few peaks, Ramsey-type staircase existence, the
exceptional-fraction bound) for small n, and sampling estimates beyond.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from multiprocessing import Pool

import numpy as np

from .errors import ParityMismatch, TooLarge

EXHAUSTIVE_LIMIT = 10  # 10! ~ 3.6e6 permutations is feasible; 13! is not


# ---------------------------------------------------------------------------
# Recollision patterns m in M(n, N)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RecollisionPattern:
    """Immediate-recollision pattern: n external collisions out of N total.

    ``m[j]`` counts the immediate-recollision pairs between the j-th and
    (j+1)-th external collision; n + 2*sum(m) = N.
    """

    n: int
    N: int
    m: tuple

    def __post_init__(self):
        if self.n > self.N or (self.N - self.n) % 2 != 0:
            raise ParityMismatch(f"need n <= N of equal parity, got ({self.n}, {self.N})")
        if len(self.m) != self.n + 1 or any(v < 0 for v in self.m):
            raise ValueError("m must be an (n+1)-tuple of nonnegative integers")
        if self.n + 2 * sum(self.m) != self.N:
            raise ValueError("n + 2|m| must equal N")

    @property
    def mu(self) -> tuple:
        """Positions of the external collisions: mu(j+1) - mu(j) = 2 m_j + 1."""
        out = []
        pos = 0
        for j in range(self.n):
            pos += 2 * self.m[j] + 1
            out.append(pos)
        return tuple(out)

    @property
    def I(self) -> tuple:
        return self.mu

    def I_j(self, j: int) -> tuple:
        """Odd offsets after mu(j): the left feet of the immediate pairs."""
        base = 0 if j == 0 else self.mu[j - 1]
        return tuple(base + 1 + 2 * i for i in range(self.m[j]))

    def I_j_c(self, j: int) -> tuple:
        """Even offsets from mu(j), of size m_j + 1."""
        base = 0 if j == 0 else self.mu[j - 1]
        return tuple(base + 2 * i for i in range(self.m[j] + 1))

    @property
    def J(self) -> frozenset:
        out = []
        for j in range(self.n + 1):
            out.extend(self.I_j(j))
        return frozenset(out)

    @property
    def J_c(self) -> frozenset:
        out = []
        for j in range(self.n + 1):
            out.extend(self.I_j_c(j))
        return frozenset(out)


def enumerate_patterns(n: int, N: int) -> list:
    """All patterns in M(n, N); their number is C((N-n)/2 + n, n)."""
    if n > N or (N - n) % 2 != 0:
        raise ParityMismatch(f"need n <= N of equal parity, got ({n}, {N})")
    total = (N - n) // 2
    out = []
    for m in _compositions(total, n + 1):
        out.append(RecollisionPattern(n, N, m))
    return out


def pattern_count(n: int, N: int) -> int:
    """Closed form |M(n, N)| = C((N-n)/2 + n, n)."""
    return math.comb((N - n) // 2 + n, n)


def _compositions(total: int, parts: int):
    """All tuples of `parts` nonnegative integers summing to `total`."""
    if parts == 1:
        yield (total,)
        return
    for head in range(total + 1):
        for rest in _compositions(total - head, parts - 1):
            yield (head,) + rest


def marked_patterns(n: int, N: int, a: int) -> list:
    """Patterns in M_a(n, N): m0 = 0, mu(a) >= 3, and m1 >= 1 when a = 2."""
    if not 2 <= a <= n:
        raise ValueError("recollision marker a must lie in {2..n}")
    out = []
    for pat in enumerate_patterns(n, N):
        if pat.m[0] != 0:
            continue
        if pat.mu[a - 1] < 3:
            continue
        if a == 2 and pat.m[1] < 1:
            continue
        out.append(pat)
    return out


# ---------------------------------------------------------------------------
# Pairings (permutations) and their classification
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Pairing:
    """A pairing of external lines; optionally marked with a recollision index a."""

    pi: tuple
    marker: int | None = None

    def __post_init__(self):
        n = len(self.pi)
        if sorted(self.pi) != list(range(1, n + 1)):
            raise ValueError("pi must be a permutation of {1..n}")
        if self.marker is not None and not 2 <= self.marker <= n:
            raise ValueError("marker a must lie in {2..n}")

    @property
    def n(self) -> int:
        return len(self.pi)


@dataclass(frozen=True)
class Classification:
    direct: bool
    crossing_pairs: tuple
    minimal_pair: tuple | None


def classify(pi) -> Classification:
    """Direct iff pi == id; else list all crossing pairs and the minimal one.

    A crossing pair is (a, b) with a < b and pi(b) < pi(a).  The minimal pair
    takes the smallest such b, then the smallest a; by construction pi(c) <
    pi(b) for every c < a.
    """
    pi = tuple(pi)
    n = len(pi)
    pairs = []
    minimal = None
    for b in range(2, n + 1):
        for a in range(1, b):
            if pi[b - 1] < pi[a - 1]:
                pairs.append((a, b))
                if minimal is None:
                    minimal = (a, b)
    if not pairs:
        return Classification(True, (), None)
    return Classification(False, tuple(pairs), minimal)


def peaks_valleys(pi) -> tuple:
    """Interior peaks and valleys of the permutation (endpoints excluded)."""
    pi = tuple(pi)
    n = len(pi)
    peaks, valleys = [], []
    for a in range(2, n):
        left, mid, right = pi[a - 2], pi[a - 1], pi[a]
        if left < mid > right:
            peaks.append(a)
        elif left > mid < right:
            valleys.append(a)
    return tuple(peaks), tuple(valleys)


# ---------------------------------------------------------------------------
# Pairing graphs and skeletons
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PairingGraph:
    """Perfect matching of the 2N phonon half-edges (k_1..k_N, kt_1..kt_N).

    Half-edges are (side, index) with side 0 for k and 1 for kt, index 1..N.
    """

    N: int
    matching: frozenset  # of frozensets {(side, a), (side', b)}

    def __post_init__(self):
        seen = set()
        for line in self.matching:
            if len(line) != 2:
                raise ValueError("matching must pair distinct half-edges")
            for he in line:
                if he in seen:
                    raise ValueError(f"half-edge {he} used twice")
                seen.add(he)
        expected = {(s, i) for s in (0, 1) for i in range(1, self.N + 1)}
        if seen != expected:
            raise ValueError("matching must cover all 2N half-edges exactly once")

    @classmethod
    def from_lines(cls, N: int, lines) -> "PairingGraph":
        return cls(N, frozenset(frozenset(line) for line in lines))

    @classmethod
    def from_pattern(cls, upper: RecollisionPattern, lower: RecollisionPattern,
                     pi) -> "PairingGraph":
        """Graph with immediate pairs from the patterns and external lines by pi."""
        if upper.n != lower.n or upper.N != lower.N:
            raise ValueError("patterns must share (n, N)")
        pi = tuple(pi)
        lines = []
        for side, pat in ((0, upper), (1, lower)):
            for b in sorted(pat.J):
                lines.append(((side, b), (side, b + 1)))
        mu, mut = upper.mu, lower.mu
        for j in range(upper.n):
            lines.append(((0, mu[j]), (1, mut[pi[j] - 1])))
        return cls.from_lines(upper.N, lines)

    def partner(self, he) -> tuple:
        for line in self.matching:
            if he in line:
                (other,) = line - {he}
                return other
        raise KeyError(he)

    def internal_lines(self) -> frozenset:
        """Lines pairing (k_a, k_{a+1}) or (kt_a, kt_{a+1})."""
        out = []
        for line in self.matching:
            (s1, a1), (s2, a2) = sorted(line)
            if s1 == s2 and abs(a1 - a2) == 1:
                out.append(line)
        return frozenset(out)

    def has_genuine_recollision(self) -> bool:
        """Some same-side pair at distance >= 2 (in the original labelling)."""
        for line in self.matching:
            (s1, a1), (s2, a2) = sorted(line)
            if s1 == s2 and abs(a1 - a2) >= 2:
                return True
        return False

    def is_nested(self) -> bool:
        """Indices j1<j2<j3<j4 with (k_j1, k_j4) and (k_j2, k_j3) paired same-side."""
        for side in (0, 1):
            spans = []
            for line in self.matching:
                (s1, a1), (s2, a2) = sorted(line)
                if s1 == s2 == side:
                    spans.append((a1, a2))
            for (a1, a2), (b1, b2) in itertools.permutations(spans, 2):
                if a1 < b1 and b2 < a2:
                    return True
        return False

    def skeleton(self):
        """Remove internal lines with their vertices; relabel the survivors.

        Returns (upper_pattern, lower_pattern, pi) when each side's internal
        pairs are immediate and the surviving lines run between the sides;
        raises ValueError otherwise (the skeleton is defined in one pass on
        the original labelling).
        """
        internal = self.internal_lines()
        removed = {he for line in internal for he in line}
        survivors = {0: [], 1: []}
        for side in (0, 1):
            for idx in range(1, self.N + 1):
                if (side, idx) not in removed:
                    survivors[side].append(idx)
        if len(survivors[0]) != len(survivors[1]):
            raise ValueError("sides have different external-line counts")
        n = len(survivors[0])
        pos = {(side, idx): i + 1
               for side in (0, 1)
               for i, idx in enumerate(survivors[side])}
        pi = [None] * n
        for j, idx in enumerate(survivors[0]):
            other = self.partner((0, idx))
            if other in removed or other[0] != 1:
                raise ValueError("survivor paired same-side: genuine recollision")
            pi[j] = pos[other]
        upper = _pattern_from_survivors(self.N, survivors[0])
        lower = _pattern_from_survivors(self.N, survivors[1])
        return upper, lower, tuple(pi)


def _pattern_from_survivors(N: int, survivors) -> RecollisionPattern:
    n = len(survivors)
    gaps = []
    prev = 0
    for s in survivors:
        gaps.append((s - prev - 1) // 2)
        prev = s
    gaps.append((N + 1 - prev - 1) // 2)
    return RecollisionPattern(n, N, tuple(gaps))


def detect_nested(graph: PairingGraph) -> bool:
    return graph.is_nested()


# ---------------------------------------------------------------------------
# Peak counting
# ---------------------------------------------------------------------------

def peak_count_bound(n: int, K: int) -> int:
    """Counting bound n^(4K+3) (2K+2)^n for pairings with at most K peaks."""
    return n ** (4 * K + 3) * (2 * K + 2) ** n


def _peak_counts_array(perms: np.ndarray) -> np.ndarray:
    mid = perms[:, 1:-1]
    return np.sum((mid > perms[:, :-2]) & (mid > perms[:, 2:]), axis=1)


def _iter_perm_chunks(n: int, chunk: int = 100_000):
    buf = []
    for p in itertools.permutations(range(1, n + 1)):
        buf.append(p)
        if len(buf) == chunk:
            yield np.array(buf, dtype=np.int8)
            buf = []
    if buf:
        yield np.array(buf, dtype=np.int8)


@dataclass(frozen=True)
class PeakCountResult:
    n: int
    K: int
    count: float
    bound: int
    bound_ok: bool
    exact: bool
    stderr: float = 0.0


def count_by_max_peaks(n: int, K: int, mode: str = "exhaustive",
                       samples: int = 100_000, seed: int = 0) -> PeakCountResult:
    """Count pairings with at most K peaks; exhaustive for n <= 10.

    Exhaustive mode asserts the bound n^(4K+3) (2K+2)^n; sampling mode
    returns an estimated count with a binomial standard error.
    """
    bound = peak_count_bound(n, K)
    if mode == "exhaustive":
        if n > EXHAUSTIVE_LIMIT:
            raise TooLarge(f"exhaustive enumeration limited to n <= {EXHAUSTIVE_LIMIT}")
        count = 0
        for chunk in _iter_perm_chunks(n):
            count += int(np.sum(_peak_counts_array(chunk) <= K))
        return PeakCountResult(n, K, count, bound, count <= bound, True)
    if mode != "sampling":
        raise ValueError("mode must be 'exhaustive' or 'sampling'")
    rng = np.random.default_rng(seed)
    perms = np.argsort(rng.random((samples, n)), axis=1) + 1
    frac = float(np.mean(_peak_counts_array(perms) <= K))
    total = math.factorial(n)
    stderr = math.sqrt(max(frac * (1 - frac), 1e-300) / samples) * total
    return PeakCountResult(n, K, frac * total, bound, frac * total <= bound,
                           False, stderr)


def peak_histogram(n: int) -> dict:
    """Exact number of pairings with exactly K peaks, for each K (n <= 10)."""
    if n > EXHAUSTIVE_LIMIT:
        raise TooLarge(f"exhaustive enumeration limited to n <= {EXHAUSTIVE_LIMIT}")
    hist: dict[int, int] = {}
    for chunk in _iter_perm_chunks(n):
        counts, freq = np.unique(_peak_counts_array(chunk), return_counts=True)
        for c, f in zip(counts, freq):
            hist[int(c)] = hist.get(int(c), 0) + int(f)
    return hist


# ---------------------------------------------------------------------------
# Staircases
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Staircase:
    kind: str                 # "increasing" | "decreasing"
    stairs: tuple             # ((a_j, h_j), ...)

    @property
    def tips(self) -> tuple:
        if self.kind == "increasing":
            return tuple(a + h for a, h in self.stairs)
        return tuple(a + h for a, h in self.stairs)

    @property
    def bottoms(self) -> tuple:
        return tuple(a for a, _ in self.stairs)

    @property
    def peak_positions(self) -> tuple:
        """The peaks carrying the staircase: tips if increasing, bottoms if not."""
        if self.kind == "increasing":
            return tuple(a + h for a, h in self.stairs)
        return tuple(a for a, _ in self.stairs)


def validate_staircase(pi, stair: Staircase) -> bool:
    """Literal check of conditions (i)-(v); independent of the search."""
    pi = tuple(pi)
    n = len(pi)
    peaks = set(peaks_valleys(pi)[0])
    stairs = stair.stairs
    if not stairs:
        return False
    val = lambda a: pi[a - 1]
    for a, h in stairs:
        if h < 1 or a < 1 or a + h > n:
            return False
        run = [val(a + i) for i in range(h + 1)]
        if stair.kind == "increasing" and any(x >= y for x, y in zip(run, run[1:])):
            return False
        if stair.kind == "decreasing" and any(x <= y for x, y in zip(run, run[1:])):
            return False
    # (i) disjoint and ordered
    for (a1, h1), (a2, _) in zip(stairs, stairs[1:]):
        if not a1 + h1 < a2:
            return False
    if stair.kind == "increasing":
        tips = [a + h for a, h in stairs]
        # (ii) tips are peaks, (iii) increasing images
        if any(t not in peaks for t in tips):
            return False
        if any(val(t1) >= val(t2) for t1, t2 in zip(tips, tips[1:])):
            return False
        # (iv) no higher peak strictly between consecutive bottoms
        for (a1, h1), (a2, _) in zip(stairs, stairs[1:]):
            top = val(a1 + h1)
            for p in peaks:
                if a1 < p < a2 and val(p) > top:
                    return False
        # (v) minimal overlap
        for (a1, h1), (a2, _) in zip(stairs, stairs[1:]):
            if not (val(a2 + 1) > val(a1 + h1) > val(a2)):
                return False
        return True
    if stair.kind == "decreasing":
        heads = [a for a, _ in stairs]
        # (ii) the stair heads are peaks, (iii) decreasing images
        if any(a not in peaks for a in heads):
            return False
        if any(val(a1) <= val(a2) for a1, a2 in zip(heads, heads[1:])):
            return False
        # (iv) no peak above the next head strictly between consecutive heads
        for (a1, _), (a2, _) in zip(stairs, stairs[1:]):
            for p in peaks:
                if a1 < p < a2 and val(p) > val(a2):
                    return False
        # (v) minimal overlap
        for (a1, h1), (a2, _) in zip(stairs, stairs[1:]):
            if not (val(a1 + h1 - 1) > val(a2) > val(a1 + h1)):
                return False
        return True
    return False


def find_staircase(pi, kind: str, kappa: int) -> Staircase | None:
    """Backtracking search for a kappa-staircase of the given kind.

    Candidate tips are peaks taken in image-monotone order; the bottoms (or
    stair lengths) are then forced by the minimal-overlap condition.  Any
    result is re-checked with :func:`validate_staircase` before returning.
    """
    pi = tuple(pi)
    if kind not in ("increasing", "decreasing"):
        raise ValueError("kind must be 'increasing' or 'decreasing'")
    if kappa < 1:
        raise ValueError("kappa must be >= 1")
    peaks = list(peaks_valleys(pi)[0])
    if len(peaks) < kappa:
        return None
    found = (_search_increasing if kind == "increasing" else _search_decreasing)(
        pi, peaks, kappa)
    if found is None:
        return None
    stair = Staircase(kind, tuple(found))
    if not validate_staircase(pi, stair):
        raise AssertionError(f"search produced an invalid staircase for {pi}")
    return stair


def _search_increasing(pi, peaks, kappa):
    n = len(pi)
    val = lambda a: pi[a - 1]

    def extend(chosen_tips):
        if len(chosen_tips) == kappa:
            return _force_increasing(pi, chosen_tips)
        last = chosen_tips[-1] if chosen_tips else None
        for t in peaks:
            if last is not None and (t <= last or val(t) <= val(last)):
                continue
            # condition (iv) pruning: peaks between the previous tip region and
            # this one are rechecked after the bottoms are known
            out = extend(chosen_tips + [t])
            if out is not None:
                return out
        return None

    return extend([])


def _force_increasing(pi, tips):
    val = lambda a: pi[a - 1]
    peaks = set(peaks_valleys(pi)[0])
    stairs = [(tips[0] - 1, 1)]
    for t_prev, t in zip(tips, tips[1:]):
        level = val(t_prev)
        # ascending run ending at t: walk backwards
        start = t
        while start - 1 >= 1 and val(start - 1) < val(start):
            start -= 1
        # unique index a in the run with pi(a) < level < pi(a+1)
        a = None
        for s in range(start, t):
            if val(s) < level < val(s + 1):
                a = s
                break
        if a is None or a <= t_prev:
            return None
        stairs.append((a, t - a))
    # condition (iv) between consecutive bottoms
    for (a1, h1), (a2, _) in zip(stairs, stairs[1:]):
        top = val(a1 + h1)
        for p in peaks:
            if a1 < p < a2 and val(p) > top:
                return None
    return stairs


def _search_decreasing(pi, peaks, kappa):
    val = lambda a: pi[a - 1]

    def extend(chosen):
        if len(chosen) == kappa:
            return _force_decreasing(pi, chosen)
        last = chosen[-1] if chosen else None
        for a in peaks:
            if last is not None and (a <= last or val(a) >= val(last)):
                continue
            out = extend(chosen + [a])
            if out is not None:
                return out
        return None

    return extend([])


def _force_decreasing(pi, heads):
    n = len(pi)
    val = lambda a: pi[a - 1]
    peaks = set(peaks_valleys(pi)[0])
    stairs = []
    for a, a_next in zip(heads, heads[1:]):
        # descending run from the peak a; choose h with
        # pi(a+h-1) > pi(a_next) > pi(a+h)
        level = val(a_next)
        h = None
        i = 1
        while a + i <= n and val(a + i) < val(a + i - 1):
            if val(a + i - 1) > level > val(a + i):
                h = i
                break
            i += 1
        if h is None or a + h >= a_next:
            return None
        stairs.append((a, h))
    last = heads[-1]
    if last + 1 > n or val(last + 1) >= val(last):
        return None
    stairs.append((last, 1))
    # condition (iv)
    for (a1, _), (a2, _) in zip(stairs, stairs[1:]):
        for p in peaks:
            if a1 < p < a2 and val(p) > val(a2):
                return None
    return stairs


def brute_force_has_staircase(pi, kind: str, kappa: int) -> bool:
    """Existence check by trying every tip subset and stair length (slow)."""
    pi = tuple(pi)
    n = len(pi)
    peaks = peaks_valleys(pi)[0]
    for combo in itertools.combinations(peaks, kappa):
        ranges = []
        for a in combo:
            if kind == "increasing":
                # stair ends at the peak; any start of an ascending run
                opts = []
                start = a
                while start - 1 >= 1 and pi[start - 2] < pi[start - 1]:
                    start -= 1
                    opts.append((start, a - start))
                ranges.append(opts)
            else:
                opts = []
                end = a
                while end + 1 <= n and pi[end] < pi[end - 1]:
                    end += 1
                    opts.append((a, end - a))
                ranges.append(opts)
        for stairs in itertools.product(*ranges):
            if validate_staircase(pi, Staircase(kind, tuple(stairs))):
                return True
    return False


# ---------------------------------------------------------------------------
# Ramsey-type checks and the exceptional fraction
# ---------------------------------------------------------------------------

@dataclass
class RamseyReport:
    alpha: int
    beta: int
    threshold: int
    results: list = field(default_factory=list)  # (n, checked, applicable, counterexamples)

    @property
    def counterexamples(self) -> list:
        out = []
        for _, _, _, ces in self.results:
            out.extend(ces)
        return out

    @property
    def passed(self) -> bool:
        return not self.counterexamples


def _longest_monotone(seq, increasing: bool) -> int:
    best = []
    for x in seq:
        lengths = [1 + b for v, b in best if (v < x if increasing else v > x)]
        best.append((x, max(lengths, default=1)))
    return max((b for _, b in best), default=0)


def _ramsey_block(args):
    n, alpha, beta, threshold, first = args
    rest = [v for v in range(1, n + 1) if v != first]
    checked = applicable = 0
    ces = []
    for tail in itertools.permutations(rest):
        pi = (first,) + tail
        checked += 1
        peaks, _ = peaks_valleys(pi)
        if len(peaks) < threshold:
            continue
        applicable += 1
        if find_staircase(pi, "increasing", alpha + 1) is None and \
           find_staircase(pi, "decreasing", beta + 1) is None:
            ces.append(("staircase", pi))
        # monotone-subsequence version on the peak heights
        heights = [pi[a - 1] for a in peaks]
        if len(heights) >= alpha * beta + 1:
            if _longest_monotone(heights, True) < alpha + 1 and \
               _longest_monotone(heights, False) < beta + 1:
                ces.append(("monotone", pi))
    return checked, applicable, ces


def ramsey_check(alpha: int, beta: int, n_values, mode: str = "exhaustive",
                 samples: int = 100_000, seed: int = 0,
                 processes: int | None = None) -> RamseyReport:
    """Verify the staircase Ramsey lemma and its monotone-subsequence form.

    Every pairing with at least C(alpha+beta, alpha) peaks must contain an
    increasing (alpha+1)-staircase or a decreasing (beta+1)-staircase; on the
    peak-height sequence, alpha*beta + 1 peaks force a monotone subsequence.
    Exhaustive up to n = 10 (parallel over first-entry blocks); sampling mode
    spot-checks larger n.
    """
    threshold = math.comb(alpha + beta, alpha)
    report = RamseyReport(alpha, beta, threshold)
    for n in n_values:
        if mode == "exhaustive":
            if n > EXHAUSTIVE_LIMIT:
                raise TooLarge(f"exhaustive enumeration limited to n <= {EXHAUSTIVE_LIMIT}")
            blocks = [(n, alpha, beta, threshold, first) for first in range(1, n + 1)]
            if processes is not None and processes > 1 and n >= 8:
                with Pool(processes) as pool:
                    parts = pool.map(_ramsey_block, blocks)
            else:
                parts = [_ramsey_block(b) for b in blocks]
            checked = sum(p[0] for p in parts)
            applicable = sum(p[1] for p in parts)
            ces = [ce for p in parts for ce in p[2]]
        elif mode == "sampling":
            rng = np.random.default_rng(seed)
            checked = applicable = 0
            ces = []
            for _ in range(samples):
                pi = tuple(int(v) for v in rng.permutation(n) + 1)
                checked += 1
                peaks, _ = peaks_valleys(pi)
                if len(peaks) < threshold:
                    continue
                applicable += 1
                if find_staircase(pi, "increasing", alpha + 1) is None and \
                   find_staircase(pi, "decreasing", beta + 1) is None:
                    ces.append(("staircase", pi))
        else:
            raise ValueError("mode must be 'exhaustive' or 'sampling'")
        report.results.append((n, checked, applicable, sorted(ces)))
    return report


def exceptional_bound(n: int, kappa: int) -> int:
    """Bound on pairings lacking both kappa-staircases."""
    four = 4 ** (kappa - 1)
    return n ** (4 * four + 3) * (2 * four + 2) ** n


@dataclass(frozen=True)
class ExceptionalResult:
    n: int
    kappa: int
    fraction: float
    stderr: float
    count: float
    bound: int
    bound_ok: bool | None
    exact: bool


def exceptional_fraction(n: int, kappa: int, samples: int | None = None,
                         seed: int = 0) -> ExceptionalResult:
    """Fraction of pairings with neither an increasing nor a decreasing
    kappa-staircase; exhaustive when samples is None and n <= 10."""
    total = math.factorial(n)
    if samples is None:
        if n > EXHAUSTIVE_LIMIT:
            raise TooLarge(f"exhaustive enumeration limited to n <= {EXHAUSTIVE_LIMIT}")
        count = 0
        for pi in itertools.permutations(range(1, n + 1)):
            if find_staircase(pi, "increasing", kappa) is None and \
               find_staircase(pi, "decreasing", kappa) is None:
                count += 1
        bound = exceptional_bound(n, kappa)
        return ExceptionalResult(n, kappa, count / total, 0.0, count, bound,
                                 count <= bound, True)
    rng = np.random.default_rng(seed)
    hits = 0
    for _ in range(samples):
        pi = tuple(int(v) for v in rng.permutation(n) + 1)
        if find_staircase(pi, "increasing", kappa) is None and \
           find_staircase(pi, "decreasing", kappa) is None:
            hits += 1
    frac = hits / samples
    stderr = math.sqrt(max(frac * (1 - frac), 1e-300) / samples)
    return ExceptionalResult(n, kappa, frac, stderr, frac * total,
                             exceptional_bound(n, kappa), None, False)
