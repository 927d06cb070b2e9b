import numpy as np
import pytest

from lmft import corpus as corpus_mod
from lmft import tokenizer as tok
from lmft.awd_lstm import LMConfig, init_lm_params
from lmft.datagen import make_lm_corpus


@pytest.fixture(scope="session")
def toy_docs():
    return tuple(corpus_mod.normalize_text(d)
                 for d in make_lm_corpus(seed=7, target_bytes=6000))


@pytest.fixture(scope="session")
def toy_corpus(toy_docs):
    return corpus_mod.RawCorpus(documents=toy_docs,
                                source_tags=("toy",) * len(toy_docs))


@pytest.fixture(scope="session")
def toy_vocab(toy_corpus):
    return tok.train_unigram(toy_corpus, target_size=160, max_seed_size=800)


@pytest.fixture()
def tiny_config(toy_vocab):
    # dropout off so forward passes are deterministic without an rng
    return LMConfig(vocab_size=len(toy_vocab.pieces), embedding_dim=12,
                    hidden_dim=16, p_out=0.0, p_hid=0.0, p_emb=0.0,
                    p_inp=0.0, p_wdrop=0.0, bptt_len=8, batch_size=4)


@pytest.fixture()
def tiny_params(tiny_config):
    return init_lm_params(tiny_config, np.random.default_rng(0))
