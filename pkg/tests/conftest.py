import numpy as np
import pytest

from lencap.autodiff import Tape, zero_grads
from lencap.corpus import (CorpusSpec, GrammarConfig, build_vocabulary,
                           generate_corpus, uniform_histogram)
from lencap.decoder import CaptionModel, ModelConfig


def finite_diff(f, x: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar function, coordinate-wise."""
    g = np.zeros_like(x)
    flat = x.ravel()
    out = g.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        up = f()
        flat[i] = orig - eps
        down = f()
        flat[i] = orig
        out[i] = (up - down) / (2 * eps)
    return g


def assert_grad_matches(build_loss, tensors, rtol: float = 1e-4,
                        eps: float = 1e-5, atol: float = 1e-7) -> None:
    """Backward grads vs central finite differences for every tensor."""
    zero_grads({str(i): t for i, t in enumerate(tensors)})
    with Tape() as tape:
        loss = build_loss()
    tape.backward(loss)
    for t in tensors:
        fd = finite_diff(lambda: float(build_loss().data), t.data, eps)
        got = t.grad if t.grad is not None else np.zeros_like(t.data)
        np.testing.assert_allclose(got, fd, rtol=rtol, atol=atol)


@pytest.fixture(scope="session")
def grammar():
    return GrammarConfig()


@pytest.fixture(scope="session")
def vocab(grammar):
    return build_vocabulary(grammar, 320)


@pytest.fixture(scope="session")
def tiny_corpus(grammar, vocab):
    spec = CorpusSpec(24, uniform_histogram(6, 14), 6, 14, seed=5, grammar=grammar)
    return generate_corpus(spec, vocab)


def tiny_model(vocab, scheme="ordinal", seed=0, K=16, d=32, layers=2, heads=4,
               d_ff=64, max_seq_len=48, d_cond=None, mlp_hidden=(16, 24)):
    config = ModelConfig(
        vocab_size=vocab.size, layers=layers, heads=heads, d=d, d_ff=d_ff,
        max_seq_len=max_seq_len,
        d_cond=d_cond if d_cond is not None else GrammarConfig().condition_dim,
        scheme=scheme, K=K, mlp_hidden=mlp_hidden)
    return CaptionModel(config, np.random.default_rng(seed),
                        vocab_hash=vocab.content_hash())


@pytest.fixture
def model(vocab):
    return tiny_model(vocab)
