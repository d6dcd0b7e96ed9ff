import itertools
import math

import numpy as np
import pytest

from phonboltz.diagrams import (EXHAUSTIVE_LIMIT, Pairing, PairingGraph,
                                RecollisionPattern, Staircase,
                                brute_force_has_staircase, classify,
                                count_by_max_peaks, detect_nested,
                                enumerate_patterns, exceptional_fraction,
                                find_staircase, marked_patterns,
                                pattern_count, peak_histogram, peaks_valleys,
                                ramsey_check, validate_staircase)
from phonboltz.errors import ParityMismatch, TooLarge


# ---------------------------------------------------------------------------
# Patterns
# ---------------------------------------------------------------------------

def test_patterns_n_equals_N():
    pats = enumerate_patterns(3, 3)
    assert len(pats) == 1 and pats[0].m == (0, 0, 0, 0)


def test_patterns_1_3():
    pats = enumerate_patterns(1, 3)
    assert sorted(p.m for p in pats) == [(0, 1), (1, 0)]
    assert pattern_count(1, 3) == 2


def test_pattern_index_sets():
    for n, N in [(1, 3), (2, 6), (3, 7), (0, 4)]:
        for p in enumerate_patterns(n, N):
            assert len(p.J_c) == n + sum(p.m) + 1
            assert p.J | p.J_c == set(range(N + 1))
            assert not (p.J & p.J_c)
            mu = p.mu
            assert all((b - a) % 2 == 1
                       for a, b in zip((0,) + mu, mu + (N + 1,)))
            for j in range(n + 1):
                assert len(p.I_j(j)) == p.m[j]
                assert len(p.I_j_c(j)) == p.m[j] + 1


def test_pattern_counts_match_formula():
    for n in range(0, 5):
        for extra in range(0, 4):
            N = n + 2 * extra
            assert len(enumerate_patterns(n, N)) == pattern_count(n, N)


def test_parity_mismatch():
    with pytest.raises(ParityMismatch):
        enumerate_patterns(1, 4)
    with pytest.raises(ParityMismatch):
        RecollisionPattern(3, 2, (0, 0, 0, 0))


def test_marked_patterns_constraints():
    for p in marked_patterns(3, 7, 2):
        assert p.m[0] == 0 and p.mu[1] >= 3 and p.m[1] >= 1
    for p in marked_patterns(3, 7, 3):
        assert p.m[0] == 0 and p.mu[2] >= 3


def test_pairing_validation():
    with pytest.raises(ValueError):
        Pairing((1, 1, 2))
    with pytest.raises(ValueError):
        Pairing((1, 2, 3), marker=1)
    assert Pairing((2, 1, 3), marker=2).n == 3


# ---------------------------------------------------------------------------
# Classification, peaks
# ---------------------------------------------------------------------------

def test_classify_direct():
    assert classify((1, 2, 3)).direct


def test_classify_swap():
    c = classify((2, 1))
    assert not c.direct and c.crossing_pairs == ((1, 2),) and c.minimal_pair == (1, 2)


def test_classify_brute_force_n7():
    rng = np.random.default_rng(3)
    for _ in range(60):
        pi = tuple(int(v) for v in rng.permutation(7) + 1)
        c = classify(pi)
        brute = tuple((a, b) for b in range(2, 8) for a in range(1, b)
                      if pi[b - 1] < pi[a - 1])
        assert set(c.crossing_pairs) == set(brute)
        if brute:
            a, b = c.minimal_pair
            assert all(pi[c0 - 1] < pi[b - 1] for c0 in range(1, a))


def test_peaks_examples():
    assert peaks_valleys((1, 2, 3)) == ((), ())
    assert peaks_valleys((1, 3, 2)) == ((2,), ())


def test_peaks_valleys_alternate():
    rng = np.random.default_rng(11)
    for _ in range(10_000):
        n = int(rng.integers(3, 10))
        pi = tuple(int(v) for v in rng.permutation(n) + 1)
        peaks, valleys = peaks_valleys(pi)
        merged = sorted([(a, "p") for a in peaks] + [(a, "v") for a in valleys])
        kinds = [k for _, k in merged]
        assert all(x != y for x, y in zip(kinds, kinds[1:]))


def test_count_by_max_peaks_small():
    assert count_by_max_peaks(3, 0).count == 4
    assert count_by_max_peaks(3, 1).count == 6


def test_peak_histogram_sums_to_factorial():
    for n in (4, 6):
        hist = peak_histogram(n)
        assert sum(hist.values()) == math.factorial(n)


def test_count_bound_n8():
    res = count_by_max_peaks(8, 2)
    assert res.bound_ok and res.count <= 8**11 * 6**8


def test_count_sampling_mode():
    res = count_by_max_peaks(12, 1, mode="sampling", samples=20_000, seed=0)
    assert not res.exact and res.stderr > 0


def test_count_too_large():
    with pytest.raises(TooLarge):
        count_by_max_peaks(EXHAUSTIVE_LIMIT + 1, 0)


# ---------------------------------------------------------------------------
# Graphs and skeletons
# ---------------------------------------------------------------------------

def _all_matchings(elements):
    if not elements:
        yield []
        return
    first = elements[0]
    for i in range(1, len(elements)):
        rest = elements[1:i] + elements[i + 1:]
        for sub in _all_matchings(rest):
            yield [(first, elements[i])] + sub


def test_ladder_graph_not_nested():
    g = PairingGraph.from_lines(3, [((0, i), (1, i)) for i in (1, 2, 3)])
    assert not detect_nested(g)
    assert not g.has_genuine_recollision()


def test_nested_by_definition():
    g = PairingGraph.from_lines(4, [((0, 1), (0, 4)), ((0, 2), (0, 3)),
                                    ((1, 1), (1, 2)), ((1, 3), (1, 4))])
    assert detect_nested(g)
    assert g.has_genuine_recollision()


def test_nested_exhaustive_N5_matches_brute_force():
    # independent oracle: scan index quadruples directly
    def brute(g):
        for side in (0, 1):
            for j1, j2, j3, j4 in itertools.combinations(range(1, 6), 4):
                if g.partner((side, j1)) == (side, j4) and \
                   g.partner((side, j2)) == (side, j3):
                    return True
        return False

    elements = [(s, i) for s in (0, 1) for i in range(1, 6)]
    count_fast = count_brute = total = 0
    for lines in _all_matchings(elements):
        g = PairingGraph.from_lines(5, lines)
        total += 1
        count_fast += detect_nested(g)
        count_brute += brute(g)
    assert total == 945
    assert count_fast == count_brute > 0


def test_skeleton_roundtrip():
    # pattern -> graph -> skeleton -> pattern is the identity
    rng = np.random.default_rng(5)
    for _ in range(200):
        n = int(rng.integers(0, 4))
        N = n + 2 * int(rng.integers(0, 3))
        if N == 0:
            continue
        pats = enumerate_patterns(n, N)
        up = pats[int(rng.integers(len(pats)))]
        lo = pats[int(rng.integers(len(pats)))]
        pi = tuple(int(v) for v in rng.permutation(n) + 1)
        g = PairingGraph.from_pattern(up, lo, pi)
        u2, l2, pi2 = g.skeleton()
        assert (u2.m, l2.m, pi2) == (up.m, lo.m, pi)


def test_skeleton_rejects_genuine_recollision():
    g = PairingGraph.from_lines(4, [((0, 1), (0, 3)), ((0, 2), (0, 4)),
                                    ((1, 1), (1, 2)), ((1, 3), (1, 4))])
    assert g.has_genuine_recollision()
    with pytest.raises(ValueError):
        g.skeleton()


# ---------------------------------------------------------------------------
# Staircases
# ---------------------------------------------------------------------------

def test_identity_has_no_staircase():
    for kind in ("increasing", "decreasing"):
        for kappa in (1, 2):
            assert find_staircase((1, 2, 3, 4, 5), kind, kappa) is None


def test_two_increasing_peaks_give_staircase():
    # constructive Appendix-style observation, checked exhaustively
    for n in range(4, 8):
        for pi in itertools.permutations(range(1, n + 1)):
            peaks, _ = peaks_valleys(pi)
            has_inc_pair = any(pi[a - 1] < pi[b - 1]
                               for a, b in itertools.combinations(peaks, 2))
            if has_inc_pair:
                assert find_staircase(pi, "increasing", 2) is not None, pi


def test_staircase_search_sound_and_complete():
    # sound: any found staircase passes the literal validator (asserted in
    # find_staircase itself); complete: agrees with brute force over all
    # tip subsets for n <= 6
    for n in range(2, 7):
        for pi in itertools.permutations(range(1, n + 1)):
            for kind in ("increasing", "decreasing"):
                for kappa in (1, 2):
                    found = find_staircase(pi, kind, kappa)
                    brute = brute_force_has_staircase(pi, kind, kappa)
                    assert (found is not None) == brute, (pi, kind, kappa)


def test_validator_rejects_malformed():
    pi = (1, 3, 2, 5, 4)
    assert not validate_staircase(pi, Staircase("increasing", ()))
    assert not validate_staircase(pi, Staircase("increasing", ((1, 0),)))
    assert not validate_staircase(pi, Staircase("increasing", ((2, 1),)))  # run not ascending


def test_ramsey_small_exhaustive():
    rep = ramsey_check(1, 1, [4, 5, 6, 7])
    assert rep.passed and rep.threshold == 2
    rep = ramsey_check(2, 1, [7])
    assert rep.passed and rep.threshold == 3


def test_ramsey_vacuous_below_threshold():
    # one peak with threshold 2: the lemma imposes nothing
    rep = ramsey_check(1, 1, [3])
    n, checked, applicable, ces = rep.results[0]
    assert checked == 6 and applicable == 0 and not ces


def test_ramsey_sampling_mode():
    rep = ramsey_check(1, 1, [12], mode="sampling", samples=2000, seed=4)
    assert rep.passed


def test_exceptional_fraction_kappa1():
    # peak-free permutations: count 4 of 6 at n = 3
    res = exceptional_fraction(3, 1)
    assert res.count == 4 and res.fraction == pytest.approx(4 / 6)
    assert res.bound_ok


def test_exceptional_fraction_impossible_kappa():
    # a kappa-staircase needs >= kappa peaks, impossible for n < 2 kappa + 1
    res = exceptional_fraction(4, 2)
    assert res.fraction == 1.0


def test_exceptional_fraction_sampling():
    res = exceptional_fraction(12, 2, samples=400, seed=1)
    assert not res.exact and 0.0 <= res.fraction <= 1.0 and res.stderr > 0
