import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sbka import formats as fmt
from sbka.cluster import EmConfig, fit_subspace_codebook
from sbka.encoder import init_params
from sbka.errors import DimensionError, FormatError
from sbka.numerics import make_rng


def f32(a):
    return np.asarray(a, dtype=np.float32).astype(np.float64)


def emb_data(seed=0, n=7, d=3):
    rng = make_rng(seed)
    return f32(rng.standard_normal((n, d))), rng.integers(0, 5, n), rng.integers(0, 2, n)


def codebook(seed=0):
    g = f32(make_rng(seed).standard_normal((12, 4)))
    return fit_subspace_codebook(g, 2, 3, EmConfig(seed=seed))


def samples():
    x, y, m = emb_data()
    return {
        "emb": (lambda: fmt.encode_embeddings(x, y, m), fmt.decode_embeddings,
                lambda v: fmt.encode_embeddings(*v), fmt.EMB_MAGIC),
        "ckpt": (lambda: fmt.encode_checkpoint(init_params(3, 4, 2, 2, 3, seed=1)), fmt.decode_checkpoint,
                 fmt.encode_checkpoint, fmt.MDL_MAGIC),
        "cbk": (lambda: fmt.encode_codebook(codebook()), fmt.decode_codebook, fmt.encode_codebook, fmt.CBK_MAGIC),
    }


# --- round trips -----------------------------------------------------------------

def test_embedding_layout():
    x, y, m = emb_data()
    buf = fmt.encode_embeddings(x, y, m)
    assert buf[:8] == b"SBKAEMB1"
    assert struct.unpack("<IQ", buf[8:20]) == (3, 7)
    assert len(buf) == 8 + 4 + 8 + 4 * 7 * 3 + 4 * 7 + 7
    x2, y2, m2 = fmt.decode_embeddings(buf)
    assert np.array_equal(x2, x) and np.array_equal(y2, y) and np.array_equal(m2, m)


@settings(max_examples=30)
@given(seed=st.integers(0, 2**32), n=st.integers(0, 9), d=st.integers(1, 5))
def test_embedding_round_trip_bytes(seed, n, d, tmp_path_factory):
    x, y, m = emb_data(seed, n, d)
    p = tmp_path_factory.mktemp("e") / "a.emb"
    fmt.write_embeddings(p, x, y, m)
    first = p.read_bytes()
    fmt.write_embeddings(p, *fmt.read_embeddings(p))
    assert p.read_bytes() == first


def test_checkpoint_round_trip(tmp_path):
    params = init_params(5, 4, 3, 2, 6, seed=7).map(lambda a: a.astype(np.float32).astype(np.float64))
    p = tmp_path / "m.ckpt"
    fmt.write_checkpoint(p, params)
    back = fmt.read_checkpoint(p)
    assert back.equals(params)
    first = p.read_bytes()
    fmt.write_checkpoint(p, back)
    assert p.read_bytes() == first
    assert struct.unpack("<5I", first[8:28]) == (5, 4, 3, 2, 6)


def test_codebook_round_trip(tmp_path):
    cb = codebook(3)
    p = tmp_path / "c.cbk"
    fmt.write_codebook(p, cb)
    first = p.read_bytes()
    assert struct.unpack("<IIIQ", first[8:28]) == (2, 3, 2, 12)
    back = fmt.read_codebook(p)
    assert np.array_equal(back.assignments, cb.assignments)
    for a, b in zip(back.gmms, cb.gmms):
        assert np.array_equal(a.means, f32(b.means))
    fmt.write_codebook(p, back)
    assert p.read_bytes() == first


def test_assignments_item_major():
    cb = codebook()
    buf = fmt.encode_codebook(cb)
    tail = np.frombuffer(buf[-4 * cb.assignments.size:], "<u4")
    assert tail.tolist() == cb.assignments.reshape(-1).tolist()


def test_prior_round_trip(tmp_path):
    prior = make_rng(0).standard_normal((3, 4))
    p = tmp_path / "prior.txt"
    fmt.write_prior(p, prior)
    back = fmt.read_prior(p, 3, 4)
    assert np.array_equal(back, prior)
    first = p.read_bytes()
    fmt.write_prior(p, back)
    assert p.read_bytes() == first


# --- rejection ----------------------------------------------------------------------

@pytest.mark.parametrize("kind", ["emb", "ckpt", "cbk"])
def test_bad_magic_rejected(kind):
    enc, dec, _, magic = samples()[kind]
    buf = bytearray(enc())
    buf[3] ^= 0xFF
    with pytest.raises(FormatError, match=r"expected magic .*%s.* offset 0" % magic.decode()):
        dec(bytes(buf))


@pytest.mark.parametrize("kind", ["emb", "ckpt", "cbk"])
def test_truncation_rejected(kind):
    enc, dec, _, _ = samples()[kind]
    buf = enc()
    for cut in (0, 5, 8, 13, len(buf) // 2, len(buf) - 1):
        with pytest.raises(FormatError, match="offset|magic"):
            dec(buf[:cut])


@pytest.mark.parametrize("kind", ["emb", "ckpt", "cbk"])
def test_trailing_bytes_rejected(kind):
    enc, dec, _, _ = samples()[kind]
    with pytest.raises(FormatError, match="trailing"):
        dec(enc() + b"\0")


def test_embedding_validation():
    x, y, m = emb_data()
    with pytest.raises(FormatError):
        fmt.encode_embeddings(x, y, m + 2)
    with pytest.raises(DimensionError):
        fmt.encode_embeddings(x, y[:-1], m)
    with pytest.raises(FormatError):
        fmt.encode_embeddings(x * np.nan, y, m)
    with pytest.raises(FormatError, match="class count"):
        fmt.decode_embeddings(fmt.encode_embeddings(x, y, m), n_classes=int(y.max()))
    buf = bytearray(fmt.encode_embeddings(x, y, m))
    buf[-1] = 7
    with pytest.raises(FormatError, match="modality"):
        fmt.decode_embeddings(bytes(buf))


def test_codebook_bad_assignment_rejected():
    cb = codebook()
    buf = bytearray(fmt.encode_codebook(cb))
    buf[-4:] = struct.pack("<I", 99)
    with pytest.raises(FormatError, match="assignment"):
        fmt.decode_codebook(bytes(buf))


def test_prior_validation():
    with pytest.raises(FormatError, match="line 2"):
        fmt.parse_prior("1 2\n3 x\n")
    with pytest.raises(FormatError):
        fmt.parse_prior("1 2\n3\n")
    with pytest.raises(FormatError):
        fmt.parse_prior("")
    with pytest.raises(FormatError):
        fmt.parse_prior("1 nan\n")
    with pytest.raises(FormatError, match="K_train"):
        fmt.parse_prior("1 2\n", k_train=2)
    with pytest.raises(FormatError, match="K_src"):
        fmt.parse_prior("1 2\n", k_src=3)


def test_missing_file(tmp_path):
    with pytest.raises(FormatError, match="cannot read"):
        fmt.read_checkpoint(tmp_path / "nope")
