import json

import numpy as np
import pytest

from ampcap.controls import ControlSpec, parse_control_space, validate_controls
from ampcap.dataset import (
    Dataset,
    DatasetError,
    ExampleTriple,
    condition_concat,
    minibatch_iter,
    random_split,
    read_manifest,
    write_manifest,
)


def make_dataset(n=3, s=16, k=2, seed=0):
    rng = np.random.default_rng(seed)
    specs = [ControlSpec(f"c{i}") for i in range(k)]
    ex = [ExampleTriple(f"e{i}", rng.uniform(-1, 1, s).astype(np.float32),
                        rng.uniform(-1, 1, s).astype(np.float32), rng.random(k)) for i in range(n)]
    return Dataset(8000, s, specs, ex)


def test_manifest_roundtrip_bit_exact(tmp_path):
    ds = make_dataset(2)
    ds.examples[0].controls = np.array([0.1 + 0.2, 1.0 / 3.0])  # values without short decimal forms
    ds.examples[0].split = "train"
    path = write_manifest(ds, tmp_path / "m.jsonl")
    back = read_manifest(path)
    assert back.sample_rate == ds.sample_rate and back.segment_length == ds.segment_length
    assert back.control_names == ds.control_names
    for a, b in zip(ds.examples, back.examples):
        assert a.id == b.id and a.split == b.split
        assert np.array_equal(a.input, b.input) and np.array_equal(a.target, b.target)
        assert np.array_equal(a.controls, b.controls)


def test_manifest_missing_audio_named(tmp_path):
    path = write_manifest(make_dataset(2), tmp_path / "m.jsonl")
    (tmp_path / "audio" / "e1_out.wav").unlink()
    with pytest.raises(DatasetError, match="e1_out.wav"):
        read_manifest(path)


def test_manifest_rejects_out_of_range_control(tmp_path):
    path = write_manifest(make_dataset(2), tmp_path / "m.jsonl")
    lines = path.read_text().splitlines()
    rec = json.loads(lines[1])
    rec["controls"][0] = 1.3
    lines[1] = json.dumps(rec)
    path.write_text("\n".join(lines))
    with pytest.raises(DatasetError, match="outside"):
        read_manifest(path)


def test_manifest_geometry_mismatch(tmp_path):
    path = write_manifest(make_dataset(2), tmp_path / "m.jsonl")
    lines = path.read_text().splitlines()
    header = json.loads(lines[0])
    header["segment_length"] = 17
    lines[0] = json.dumps(header)
    path.write_text("\n".join(lines))
    with pytest.raises(DatasetError, match="17"):
        read_manifest(path)


def test_manifest_unknown_version(tmp_path):
    path = write_manifest(make_dataset(1), tmp_path / "m.jsonl")
    lines = path.read_text().splitlines()
    header = json.loads(lines[0])
    header["version"] = 2
    lines[0] = json.dumps(header)
    path.write_text("\n".join(lines))
    with pytest.raises(DatasetError, match="version"):
        read_manifest(path)


def test_split_deterministic_and_disjoint():
    ds = make_dataset(10)
    a = random_split(ds, 8, 2, seed=7)
    b = random_split(ds, 8, 2, seed=7)
    assert [e.split for e in a.examples] == [e.split for e in b.examples]
    assert len(a.train) == 8 and len(a.val) == 2
    assert not {e.id for e in a.train} & {e.id for e in a.val}


def test_split_all_train():
    ds = random_split(make_dataset(10), 10, 0, seed=1)
    assert len(ds.train) == 10 and not ds.val


def test_split_seeds_differ():
    ds = make_dataset(10)
    partitions = {tuple(e.split for e in random_split(ds, 8, 2, seed=s).examples) for s in range(100)}
    assert len(partitions) >= 2


def test_split_too_many():
    with pytest.raises(DatasetError):
        random_split(make_dataset(5), 4, 2, seed=0)


def test_minibatch_covers_epoch():
    ds = random_split(make_dataset(3), 3, 0, seed=0)
    batches = list(minibatch_iter(ds, 1, seed=0, epochs=1))
    assert len(batches) == 3
    assert sorted(i for b in batches for i in b.ids) == ["e0", "e1", "e2"]


def test_minibatch_partial_final_batch():
    ds = random_split(make_dataset(3), 3, 0, seed=0)
    sizes = [len(b.ids) for b in minibatch_iter(ds, 2, seed=0, epochs=2)]
    assert sizes == [2, 1, 2, 1]


def test_minibatch_seeded_order():
    ds = random_split(make_dataset(9), 9, 0, seed=0)
    a = [b.ids for b in minibatch_iter(ds, 2, seed=5, epochs=3)]
    b = [b.ids for b in minibatch_iter(ds, 2, seed=5, epochs=3)]
    assert a == b


def test_minibatch_every_epoch_visits_all():
    ds = random_split(make_dataset(7), 7, 0, seed=0)
    it = minibatch_iter(ds, 3, seed=2)
    for _ in range(4):
        ids = [i for _ in range(3) for i in next(it).ids]
        assert sorted(ids) == sorted(e.id for e in ds.train)


def test_minibatch_errors():
    ds = make_dataset(3)
    with pytest.raises(DatasetError):
        next(minibatch_iter(ds, 1, seed=0))  # no train split assigned
    with pytest.raises(DatasetError):
        next(minibatch_iter(random_split(ds, 3, 0, 0), 0, seed=0))


def test_condition_concat_example():
    out = condition_concat(np.array([0.5, -0.5]), np.array([0.0, 1.0]))
    np.testing.assert_array_equal(out, [[0.5, 0, 1], [-0.5, 0, 1]])


def test_condition_concat_no_controls():
    x = np.array([0.1, 0.2, 0.3], np.float32)
    out = condition_concat(x, np.zeros(0))
    assert out.shape == (3, 1) and np.array_equal(out[:, 0], x)


def test_condition_concat_batched_keeps_audio():
    rng = np.random.default_rng(0)
    x = rng.uniform(-1, 1, (4, 10)).astype(np.float32)
    c = rng.random((4, 3))
    out = condition_concat(x, c)
    assert out.shape == (4, 10, 4)
    assert np.array_equal(out[:, :, 0], x)
    assert np.all(out[:, :, 1:] == c[:, None, :].astype(np.float32))


def test_switch_levels_and_parsing():
    specs = parse_control_space("gain, mode:3")
    assert specs[1].levels == 3
    validate_controls([0.2, 0.5], specs)
    with pytest.raises(ValueError):
        validate_controls([0.2, 0.4], specs)
    with pytest.raises(ValueError):
        parse_control_space("a,a")
    with pytest.raises(ValueError):
        parse_control_space("a,b:1")
