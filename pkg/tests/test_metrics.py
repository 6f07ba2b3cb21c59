import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lamassu.decode import EmissionTrace
from lamassu.metrics import (bleu, corpus_token_error_rate, edit_distance, latency_metrics, token_error_rate,
                             trace_latency)
from lamassu.oracles import levenshtein


def test_token_error_rate_examples():
    assert token_error_rate(list("abc"), list("abc")) == 0.0
    assert token_error_rate(list("ac"), list("abc")) == pytest.approx(33.33, abs=5e-3)
    assert token_error_rate(list("xyzw"), list("abc")) == pytest.approx(133.33, abs=5e-3)
    with pytest.raises(ValueError):
        token_error_rate(["a"], [])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.sampled_from("abcd"), max_size=8), st.lists(st.sampled_from("abcd"), max_size=8))
def test_edit_distance_matches_reference(a, b):
    assert edit_distance(a, b) == levenshtein(a, b)
    assert edit_distance(a, b) == edit_distance(b, a)


def test_corpus_ter_pools_edits():
    assert corpus_token_error_rate([list("ac"), list("xy")], [list("abc"), list("x")]) == pytest.approx(50.0)


def _bleu_by_hand(hyp, ref):
    # single sentence pair, all orders matched: precisions 1
    bp = math.exp(1 - len(ref) / len(hyp)) if len(hyp) < len(ref) else 1.0
    return 100 * bp


def test_bleu_examples():
    refs = [list("abcde"), list("xyzw")]
    assert bleu(refs, refs) == pytest.approx(100.0)
    hyp, ref = "a b c d".split(), "a b c d e".split()
    assert bleu([hyp], [ref]) == pytest.approx(_bleu_by_hand(hyp, ref))
    assert bleu([hyp], [ref]) == pytest.approx(77.88, abs=5e-3)
    no_overlap = bleu([list("pqrs")], [list("abcd")])
    assert no_overlap == 0.0 and no_overlap < 5
    with pytest.raises(ValueError):
        bleu([], [])
    with pytest.raises(ValueError):
        bleu([["a"]], [])


def test_bleu_smooths_missing_higher_orders():
    # unigram matches only: p1 = 1, p2..p4 add-one smoothed
    hyp, ref = list("abcd"), list("dcba")
    want = 100 * math.exp((math.log(1) + math.log(1 / 4) + math.log(1 / 3) + math.log(1 / 2)) / 4)
    assert bleu([hyp], [ref]) == pytest.approx(want)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.lists(st.sampled_from("abc"), min_size=1, max_size=6), min_size=1, max_size=4), st.data())
def test_bleu_bounded(refs, data):
    hyps = [data.draw(st.lists(st.sampled_from("abcd"), max_size=6)) for _ in refs]
    assert 0.0 <= bleu(hyps, refs) <= 100.0


def _al_by_hand(delays, src_len):
    rate = src_len / len(delays)
    tau = next((i + 1 for i, d in enumerate(delays) if d >= src_len), len(delays))
    return sum(delays[i] - i * rate for i in range(tau)) / tau


def _dal_by_hand(delays, src_len):
    rate = src_len / len(delays)
    spaced = []
    for d in delays:
        spaced.append(d if not spaced else max(d, spaced[-1] + rate))
    return sum(g - i * rate for i, g in enumerate(spaced)) / len(delays)


def test_latency_examples():
    lat = latency_metrics([2, 4], 4)
    assert lat.ap == pytest.approx(0.75)
    assert lat.al == pytest.approx(2.0)
    assert lat.al == pytest.approx(_al_by_hand([2, 4], 4))
    assert latency_metrics([9, 9, 9], 9).ap == 1.0
    with pytest.raises(ValueError):
        latency_metrics([], 4)


def test_dal_adds_minimum_spacing():
    # all emitted at once at frame 4 of 4 with rate 2: g' = 4, 6
    lat = latency_metrics([4, 4], 4)
    assert lat.dal == pytest.approx(((4 - 0) + (6 - 2)) / 2)
    assert lat.al == pytest.approx(4.0)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 20), st.data())
def test_latency_matches_hand_formulas(src_len, data):
    n = data.draw(st.integers(1, 10))
    delays = sorted(data.draw(st.lists(st.integers(1, src_len), min_size=n, max_size=n)))
    lat = latency_metrics(delays, src_len)
    assert 0 < lat.ap <= 1
    assert lat.al == pytest.approx(_al_by_hand(delays, src_len))
    assert lat.dal == pytest.approx(_dal_by_hand(delays, src_len))
    assert all(d == src_len for d in delays) or lat.ap < 1


def test_trace_latency_in_milliseconds():
    trace = EmissionTrace(tokens=[3, 4], frames=[2, 4], total_frames=4)
    lat = trace_latency(trace, frame_ms=40.0)
    assert lat.ap == pytest.approx(0.75) and lat.al == pytest.approx(80.0)
