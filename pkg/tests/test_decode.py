import itertools
import json
import math
import random

import numpy as np
import pytest

from dualasr.decode import BeamConfig, Hypothesis, collapse_ctc, ctc_beam_search
from dualasr.lm import train_ngram
from dualasr.vocab import BLANK, Vocabulary, build_grapheme_vocab


def _vocab(v):
    return Vocabulary("grapheme", (BLANK, *"abc"[: v - 1]))


def _posteriors(t, v, rng, sharp=2.0):
    x = rng.standard_normal((t, v)) * sharp
    return x - np.logaddexp.reduce(x, axis=1, keepdims=True)


def _oracle(lp, vocab, lm, lam):
    """Every collapsed label sequence with its exact CTC mass and fused score."""
    t, v = lp.shape
    mass = {}
    for path in itertools.product(range(v), repeat=t):
        key = tuple(collapse_ctc(path))
        mass[key] = np.logaddexp(mass.get(key, -np.inf), sum(lp[i, s] for i, s in enumerate(path)))
    out = {}
    for key, lc in mass.items():
        ll = lm.score([vocab.symbols[i] for i in key]) if lm is not None else 0.0
        out[key] = (lc, ll, lc + lam * ll)
    return out


def test_collapse_examples():
    assert collapse_ctc([1, 1, 0, 2]) == [1, 2]
    assert collapse_ctc([0, 0]) == []
    assert collapse_ctc([1, 0, 1]) == [1, 1]


def test_config_validation():
    with pytest.raises(ValueError):
        BeamConfig(beam_size=0)
    with pytest.raises(ValueError):
        BeamConfig(lm_weight=-1)
    assert BeamConfig() == BeamConfig(20, 1.4)


def test_single_frame_is_argmax():
    rng = np.random.default_rng(0)
    for _ in range(20):
        lp = _posteriors(1, 3, rng)
        top = ctc_beam_search(lp, _vocab(3), None, BeamConfig(20, 0.0))[0]
        assert list(top.labels) == collapse_ctc([int(lp[0].argmax())])


@pytest.mark.parametrize("lam", [0.0, 1.4])
def test_exhaustive_search_matches_oracle(lam):
    rng = np.random.default_rng(1)
    rnd = random.Random(1)
    lm = train_ngram([[rnd.choice("ab") for _ in range(rnd.randint(0, 4))] for _ in range(12)])
    for n in range(250):
        t, v = int(rng.integers(1, 5)), int(rng.integers(2, 4))
        vocab = _vocab(v)
        lp = _posteriors(t, v, rng)
        oracle = _oracle(lp, vocab, lm, lam)
        hyps = ctc_beam_search(lp, vocab, lm, BeamConfig(None, lam))
        assert {h.labels for h in hyps} == set(oracle)
        for h in hyps:
            lc, ll, fused = oracle[h.labels]
            assert abs(h.log_p_ctc - lc) < 1e-9 and abs(h.log_p_lm - ll) < 1e-9
            assert abs(h.fused - fused) < 1e-9
        best = min(oracle, key=lambda k: (-oracle[k][2], k))
        assert hyps[0].labels == best, (n, t, v)


def test_beam_of_full_width_matches_oracle():
    # T=4, V=3: beam at least V^T keeps every prefix
    rng = np.random.default_rng(2)
    for _ in range(20):
        lp = _posteriors(4, 3, rng)
        oracle = _oracle(lp, _vocab(3), None, 0.0)
        top = ctc_beam_search(lp, _vocab(3), None, BeamConfig(81, 0.0))[0]
        assert top.labels == min(oracle, key=lambda k: (-oracle[k][2], k))


def test_lm_flips_ranking():
    vocab = _vocab(3)  # blank, a, b
    p = np.array([
        [0.1, 0.8, 0.1],
        [0.5, 0.1, 0.4],
        [0.1, 0.4, 0.5],
    ])
    lp = np.log(p)
    lm = train_ngram([["a", "a"]] * 20 + [["b"]])
    ctc_only = _oracle(lp, vocab, lm, 0.0)
    assert max(ctc_only, key=lambda k: ctc_only[k][0]) == (1, 2)
    fused = _oracle(lp, vocab, lm, 5.0)
    assert max(fused, key=lambda k: fused[k][2]) == (1, 1)
    assert ctc_beam_search(lp, vocab, lm, BeamConfig(20, 0.0))[0].labels == (1, 2)
    assert ctc_beam_search(lp, vocab, lm, BeamConfig(20, 5.0))[0].labels == (1, 1)


def test_fused_recomputable():
    rng = np.random.default_rng(3)
    lm = train_ngram([["a", "b"], ["b"]])
    for h in ctc_beam_search(_posteriors(5, 3, rng), _vocab(3), lm, BeamConfig(5, 1.4)):
        assert h.fused == h.log_p_ctc + 1.4 * h.log_p_lm


def test_probability_mass_bounded_every_step():
    rng = np.random.default_rng(4)
    for _ in range(30):
        lp = _posteriors(6, 3, rng)
        for t in range(1, 7):
            hyps = ctc_beam_search(lp[:t], _vocab(3), None, BeamConfig(None, 0.0))
            mass = sum(math.exp(h.log_p_ctc) for h in hyps)
            assert mass <= 1 + 1e-6
            assert mass >= 1 - 1e-6  # nothing pruned: every path is accounted for


def test_exact_search_bounds_every_beam():
    # a pruned beam only ever under-counts a prefix's path mass, so no finite
    # beam can beat the exhaustive search
    rng = np.random.default_rng(5)
    rnd = random.Random(5)
    lm = train_ngram([[rnd.choice("abc") for _ in range(rnd.randint(1, 5))] for _ in range(30)])
    for _ in range(200):
        lp = _posteriors(int(rng.integers(2, 8)), 4, rng, sharp=1.0)
        for lam in (0.0, 1.4):
            exact = ctc_beam_search(lp, _vocab(4), lm, BeamConfig(None, lam))[0].fused
            for k in (1, 2, 4, 8, 16):
                assert ctc_beam_search(lp, _vocab(4), lm, BeamConfig(k, lam))[0].fused <= exact + 1e-9


# T=3, V=4: beam 2 finds a better top-1 than beam 4. A wider beam keeps more
# parents at step 1, which lifts competing candidates at step 2 and prunes
# the eventual winner's ancestor.
NON_MONOTONE_GRID = [
    [-0.533644, -1.812631, -1.767047, -2.532314],
    [-2.926598, -3.014178, -0.158529, -3.125004],
    [-1.15919, -1.109511, -2.616487, -1.260611],
]


def test_wider_beam_can_lose_to_narrower_beam():
    lp = np.array(NON_MONOTONE_GRID)
    top = {k: ctc_beam_search(lp, _vocab(4), None, BeamConfig(k, 0.0))[0].fused for k in (2, 4, None)}
    assert top[2] > top[4] + 1e-3
    assert top[None] >= top[2]


def test_language_tag_reported_and_stripped():
    gv = build_grapheme_vocab({"TE": ["ab"]})
    te, a, b = gv.id_of("[TE]"), gv.id_of("a"), gv.id_of("b")
    lp = np.full((4, len(gv)), -20.0)
    for t, c in enumerate([te, a, 0, b]):
        lp[t, c] = 0.0
    lp -= np.logaddexp.reduce(lp, axis=1, keepdims=True)
    top = ctc_beam_search(lp, gv, None, BeamConfig(5, 0.0))[0]
    assert (top.language, top.text) == ("TE", "ab")
    d = top.to_json("u1")
    assert '"utt_id": "u1"' in d and '"language": "TE"' in d and "labels" not in d


def test_hypothesis_json_fields():
    h = Hypothesis((1,), "a", None, -1.0, -2.0, -3.8)
    assert set(json.loads(h.to_json("x"))) == {"utt_id", "language", "text", "log_p_ctc", "log_p_lm", "fused"}
