import math
import random

import pytest

from dualasr.lm import BOS, EOS, UNK, NGramLM, lm_score, lm_step, train_ngram

# corpus "a b a", vocabulary {a, b, </s>, <unk>}; all values worked by hand:
#   unigram counts a:2 b:1 </s>:1 (4 tokens, 3 types), base 1/4
#   P1(a) = (2 + 3/4) / 7, P1(b) = (1 + 3/4) / 7 = 1/4, P1(</s>) = 1/4
#   P(b|a)     = (1 + 2 * P1(b)) / (2 + 2)          = 0.375
#   P(b|<s> a) = (1 + 1 * P(b|a)) / (1 + 1)          = 0.6875
#   P(a|<s>)   = (1 + P1(a)) / 2                     = 9.75 / 14
#   P(a|a b)   = (1 + P(a|b)) / 2 = (1 + 9.75/14) / 2 = 23.75 / 28
#   P(</s>|b a) = (1 + P(</s>|a)) / 2 = (1 + 0.375) / 2 = 0.6875
P1_A = 2.75 / 7
P_B_GIVEN_A = 0.375
P_B_GIVEN_SA = 0.6875
SCORE_ABA = math.log(9.75 / 14) + math.log(0.6875) + math.log(23.75 / 28) + math.log(0.6875)


@pytest.fixture
def toy():
    return train_ngram([["a", "b", "a"]], order=3)


def test_fixture_values(toy):
    assert set(toy.vocab) == {"a", "b", EOS, UNK}
    assert abs(math.exp(toy.step([], "a")) - P1_A) <= 1e-9
    assert abs(math.exp(toy.step([], "b")) - 0.25) <= 1e-9
    assert abs(math.exp(toy.step(["zzz", "a"], "b")) - P_B_GIVEN_A) <= 1e-9
    assert abs(math.exp(toy.step([BOS, "a"], "b")) - P_B_GIVEN_SA) <= 1e-9
    # seen trigram context (b a) was only followed by </s>
    assert abs(math.exp(toy.step(["b", "a"], "b")) - 0.5 * P_B_GIVEN_A) <= 1e-9
    assert abs(toy.score(["a", "b", "a"]) - SCORE_ABA) <= 1e-9
    assert abs(lm_score(toy, ["a", "b", "a"]) - SCORE_ABA) <= 1e-9


def test_unseen_token_has_mass(toy):
    assert toy.step([BOS, "a"], "zzz") > -math.inf
    assert toy.step([BOS, "a"], "zzz") == toy.step([BOS, "a"], UNK)
    assert math.exp(toy.step([], UNK)) == pytest.approx(0.75 / 7)


def _normalisation_errors(lm):
    contexts = {h for (h, _) in lm.logprob} | set(lm.backoff)
    contexts |= {("x", "y"), ("a", "zzz"), (BOS, "zzz")}
    for h in contexts:
        total = sum(math.exp(lm.step(list(h), w)) for w in lm.vocab)
        yield h, abs(total - 1.0)


@pytest.mark.parametrize("seed", range(5))
def test_every_history_normalises(seed):
    rnd = random.Random(seed)
    sents = [[rnd.choice("abcde ") for _ in range(rnd.randint(0, 8))] for _ in range(30)]
    lm = train_ngram(sents, order=3, extra_vocab=["q"])
    for h, err in _normalisation_errors(lm):
        assert err <= 1e-6, h


def test_toy_normalises(toy):
    assert max(err for _, err in _normalisation_errors(toy)) <= 1e-9


def test_empty_sequence_scores_end_marker(toy):
    assert toy.score([]) == toy.step([BOS], EOS)


def test_score_is_sum_of_steps():
    rnd = random.Random(1)
    lm = train_ngram([[rnd.choice("abcd") for _ in range(rnd.randint(1, 6))] for _ in range(40)])
    for _ in range(1000):
        seq = [rnd.choice("abcdz") for _ in range(rnd.randint(0, 7))]
        hist, total = [BOS], 0.0
        for tok in seq + [EOS]:
            total += lm_step(lm, hist, tok)
            hist.append(tok)
        assert abs(total - lm.score(seq)) <= 1e-9


def test_history_longer_than_order_is_truncated(toy):
    assert toy.step(["q", "q", "b", "a"], "b") == toy.step(["b", "a"], "b")


def test_empty_corpus_rejected():
    with pytest.raises(ValueError):
        train_ngram([])


def test_serialisation_round_trip(tmp_path):
    rnd = random.Random(3)
    lm = train_ngram([[rnd.choice("abc") for _ in range(5)] for _ in range(10)], extra_vocab=["d"])
    lm.save(tmp_path / "lm.txt")
    back = NGramLM.load(tmp_path / "lm.txt")
    assert back.order == 3 and set(back.vocab) == set(lm.vocab)
    for _ in range(200):
        seq = [rnd.choice("abcdz") for _ in range(rnd.randint(0, 6))]
        assert back.score(seq) == lm.score(seq)
    assert back.dumps() == lm.dumps()


def test_bigram_order():
    lm = train_ngram([["a", "b", "a"]], order=2)
    assert abs(math.exp(lm.step(["x", "a"], "b")) - P_B_GIVEN_A) <= 1e-9
