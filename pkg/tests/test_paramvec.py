import numpy as np
import pytest

from pkd.paramvec import CheckpointError, ParamVector
from pkd.rng import substream


@pytest.fixture
def vec():
    rng = substream(0, "paramvec-test")
    return ParamVector.from_arrays(
        {
            "layer0.w": rng.standard_normal((3, 2)),
            "layer0.b": rng.standard_normal(3),
            "out.w": np.array([[1e-300, -0.0], [np.pi, 1.0 + 2**-52]]),
        }
    )


def test_views_share_storage(vec):
    vec.view("layer0.b")[1] = 42.0
    assert vec.values[vec._index["layer0.b"].offset + 1] == 42.0


def test_segment_of_maps_flat_indices(vec):
    assert vec.segment_of(0) == "layer0.w"
    assert vec.segment_of(vec.size - 1) == "out.w"
    with pytest.raises(IndexError):
        vec.segment_of(vec.size)


def test_replaced_keeps_layout_and_copy_is_deep(vec):
    other = vec.replaced(np.zeros(vec.size))
    assert other.names() == vec.names()
    assert not np.shares_memory(other.values, vec.values)
    dup = vec.copy()
    dup.values[0] += 1.0
    assert dup.values[0] != vec.values[0]


def test_save_load_save_is_byte_identical(vec, tmp_path):
    p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
    vec.save(p1)
    loaded = ParamVector.load(p1)
    assert loaded == vec
    assert np.array_equal(loaded.values, vec.values)  # exact, incl. -0.0 sign
    loaded.save(p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_load_rejects_garbage(tmp_path):
    bad = tmp_path / "bad.ckpt"
    bad.write_text("not a checkpoint\n")
    with pytest.raises(CheckpointError):
        ParamVector.load(bad)


def test_load_rejects_truncated_data(vec, tmp_path):
    path = tmp_path / "trunc.ckpt"
    vec.save(path)
    lines = path.read_text().splitlines()
    path.write_text("\n".join(lines[:-2]) + "\n")
    with pytest.raises(CheckpointError):
        ParamVector.load(path)
