"""Behavioural examples on trained default-size models from the experiment cache."""

import numpy as np
import pytest

from lamassu import experiments
from lamassu.data import ToyLanguageSpec, source_language_of
from lamassu.decode import greedy_decode_streaming
from lamassu.metrics import corpus_token_error_rate, token_error_rate
from lamassu.train import Trainer

pytestmark = pytest.mark.slow

SPEC = ToyLanguageSpec.build()


@pytest.fixture(scope="module")
def clustered(grid):
    res = grid("clustered", 0)
    return res, Trainer.load(res.checkpoint).model


def test_reversal_direction_is_exact(clustered):
    res, model = clustered
    utts = [u for u in experiments.split_corpus(res.config, "test")
            if u.k == 1 and source_language_of(u.source, SPEC) == 0]
    exact = 0
    for u in utts:
        expected = [SPEC.maps[(0, 1)][s] for s in u.source][::-1]
        assert u.labels == expected
        hyp = greedy_decode_streaming(model, u.features, 1).tokens
        exact += token_error_rate(hyp, expected) == 0
    assert exact / len(utts) >= 0.95, f"{exact}/{len(utts)} utterances exact"


def test_uni_with_ctc_learns_identity_on_dev(grid):
    res = grid("ctc", 0)
    model = Trainer.load(res.checkpoint).model
    utts = [u for u in experiments.split_corpus(res.config, "dev") if u.k == 0]
    hyps = [greedy_decode_streaming(model, u.features, 0).tokens for u in utts]
    assert corpus_token_error_rate(hyps, [u.labels for u in utts]) < 10.0


def test_target_id_selects_output_language(clustered):
    res, model = clustered
    only = [set(SPEC.targets[0]) - set(SPEC.targets[1]), set(SPEC.targets[1]) - set(SPEC.targets[0])]
    for u in experiments.split_corpus(res.config, "test").utterances[:30]:
        outs = [greedy_decode_streaming(model, u.features, k).tokens for k in (0, 1)]
        assert outs[0] != outs[1]
        for k in (0, 1):
            assert set(outs[k]) <= set(SPEC.targets[k])
        # shared tokens aside, each output is recognisably its own language
        assert not set(outs[0]) & only[1] and not set(outs[1]) & only[0]


def test_target_id_changes_encoder_output(clustered):
    res, model = clustered
    u = experiments.split_corpus(res.config, "test").utterances[0]
    gates = np.ones((1, model.encoder.clusters), np.float32)
    h0, h1 = (model.encode(u.features[None], k, gates).h_enc.data for k in (0, 1))
    assert np.max(np.abs(h0 - h1)) > 0
