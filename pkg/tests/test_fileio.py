import json
import struct
from dataclasses import replace

import numpy as np
import pytest

from softer import sampler as S
from softer.fileio import (
    ChecksumError,
    DataError,
    VersionError,
    apply_transform,
    dataset_checksum,
    load_chain,
    load_checkpoint,
    load_dataset,
    read_manifest,
    read_tensor_file,
    read_tensors,
    save_chain,
    write_manifest,
    write_tensor_csv,
    write_tensor_file,
)
from softer.model import Dataset, default_config
from softer.symmetric import SymmetryError
from softer.tensor import ShapeError

from conftest import make_problem


def write_y(path, y):
    np.savetxt(path, y, fmt="%.17g", header="y", comments="")
    return path


class TestTensorFiles:
    def test_binary_header(self, tmp_path, rng):
        X = rng.standard_normal((3, 2, 4))
        write_tensor_file(tmp_path / "x.soft", X, symmetry="semi-symmetric")
        raw = (tmp_path / "x.soft").read_bytes()
        assert raw[:6] == b"SOFT1<"
        tag, K = struct.unpack_from("<BI", raw, 6)
        assert K == 2 and struct.unpack_from("<3Q", raw, 11) == (2, 4, 3)
        assert len(raw) - (11 + 24) == 3 * 8 * 8
        arr, sym = read_tensor_file(tmp_path / "x.soft")
        np.testing.assert_array_equal(arr, X)
        assert sym == "semi-symmetric"

    def test_binary_and_csv_agree(self, tmp_path, rng):
        X = rng.standard_normal((3, 2, 3, 2))
        write_tensor_file(tmp_path / "x.soft", X)
        write_tensor_csv(tmp_path / "x.csv", X)
        assert (tmp_path / "x.csv").read_text().splitlines()[0] == "dims=2x3x2"
        y = write_y(tmp_path / "y.csv", [1.0, 2.0, 3.0])
        a, _ = load_dataset(y, tmp_path / "x.soft")
        b, _ = load_dataset(y, tmp_path / "x.csv")
        assert a.n == 3 and a.dims == (2, 3, 2)
        np.testing.assert_array_equal(a.predictors, b.predictors)
        assert dataset_checksum(a) == dataset_checksum(b)

    def test_truncated_binary(self, tmp_path, rng):
        write_tensor_file(tmp_path / "x.soft", rng.standard_normal((2, 2, 2)))
        raw = (tmp_path / "x.soft").read_bytes()
        (tmp_path / "x.soft").write_bytes(raw[:-8])
        with pytest.raises(DataError):
            read_tensors(tmp_path / "x.soft")

    def test_bad_csv(self, tmp_path):
        (tmp_path / "a.csv").write_text("2,2\n1,2,3,4\n")
        with pytest.raises(DataError):
            read_tensors(tmp_path / "a.csv")
        (tmp_path / "b.csv").write_text("dims=2x2\n1,2,3\n")
        with pytest.raises(DataError):
            read_tensors(tmp_path / "b.csv")


class TestLoadDataset:
    def test_nan_coordinates(self, tmp_path, rng):
        X = rng.standard_normal((3, 2, 2))
        X[1, 0, 1] = np.nan
        write_tensor_csv(tmp_path / "x.csv", X)
        with pytest.raises(DataError, match=r"record 2, entry \(1, 2\)"):
            load_dataset(write_y(tmp_path / "y.csv", [0.0, 1.0, 2.0]), tmp_path / "x.csv")

    def test_nan_outcome(self, tmp_path, rng):
        write_tensor_csv(tmp_path / "x.csv", rng.standard_normal((2, 2, 2)))
        (tmp_path / "y.csv").write_text("y\n1.0\nnan\n")
        with pytest.raises(DataError, match="row 2"):
            load_dataset(tmp_path / "y.csv", tmp_path / "x.csv")

    def test_count_mismatch(self, tmp_path, rng):
        write_tensor_csv(tmp_path / "x.csv", rng.standard_normal((2, 2, 2)))
        with pytest.raises(ShapeError):
            load_dataset(write_y(tmp_path / "y.csv", [0.0, 1.0, 2.0]), tmp_path / "x.csv")

    def test_symmetry_checked(self, tmp_path, rng):
        write_tensor_csv(tmp_path / "x.csv", rng.standard_normal((2, 3, 3)))
        with pytest.raises(SymmetryError):
            load_dataset(write_y(tmp_path / "y.csv", [0.0, 1.0]), tmp_path / "x.csv", symmetry="symmetric")

    def test_standardize_and_reapply(self, tmp_path, rng):
        X = 3 * rng.standard_normal((40, 2, 2))
        C = 5 + 2 * rng.standard_normal((40, 2))
        write_tensor_csv(tmp_path / "x.csv", X)
        np.savetxt(tmp_path / "c.csv", C, delimiter=",")
        y = write_y(tmp_path / "y.csv", 10 + rng.standard_normal(40))
        ds, tf = load_dataset(y, tmp_path / "x.csv", tmp_path / "c.csv", standardize=True)
        assert abs(ds.y.mean()) < 1e-12 and ds.y.std() == pytest.approx(1.0)
        np.testing.assert_allclose(ds.covariates.std(axis=0), 1.0)
        assert ds.predictors.std() == pytest.approx(1.0)
        raw, _ = load_dataset(y, tmp_path / "x.csv", tmp_path / "c.csv")
        again = apply_transform(raw, json.loads(json.dumps(tf)))
        np.testing.assert_allclose(again.covariates, ds.covariates)

    def test_no_outcomes(self, tmp_path, rng):
        write_tensor_csv(tmp_path / "x.csv", rng.standard_normal((4, 2, 2)))
        ds, _ = load_dataset(None, tmp_path / "x.csv")
        np.testing.assert_array_equal(ds.y, np.zeros(4))


def _chain(rng, **kwargs):
    config, ds = make_problem(rng, n=20, **kwargs)
    config = replace(config, sampler=replace(config.sampler, iterations=20, burn_in=5, seed=4))
    return config, ds, S.run_chain(config, ds)


class TestChainFiles:
    @pytest.mark.parametrize("kwargs", [{}, {"dims": (4, 4), "symmetry": "symmetric"}])
    def test_round_trip_byte_equal(self, tmp_path, rng, kwargs):
        _, _, ch = _chain(rng, **kwargs)
        save_chain(ch, tmp_path / "a.chn")
        back = load_chain(tmp_path / "a.chn")
        for key, value in ch.arrays().items():
            np.testing.assert_array_equal(back.arrays()[key], value)
        assert back.meta() == ch.meta()
        save_chain(back, tmp_path / "b.chn")
        assert (tmp_path / "a.chn").read_bytes() == (tmp_path / "b.chn").read_bytes()

    def test_corruption_detected(self, tmp_path, rng):
        _, _, ch = _chain(rng)
        save_chain(ch, tmp_path / "a.chn")
        raw = bytearray((tmp_path / "a.chn").read_bytes())
        raw[-3] ^= 0xFF
        (tmp_path / "a.chn").write_bytes(bytes(raw))
        with pytest.raises(ChecksumError):
            load_chain(tmp_path / "a.chn")

    def test_version_mismatch(self, tmp_path, rng):
        _, _, ch = _chain(rng)
        save_chain(ch, tmp_path / "a.chn")
        raw = (tmp_path / "a.chn").read_bytes()
        (tmp_path / "a.chn").write_bytes(raw.replace(b'"version":1', b'"version":9', 1))
        with pytest.raises(VersionError):
            load_chain(tmp_path / "a.chn")

    def test_wrong_file_type(self, tmp_path):
        (tmp_path / "a.chn").write_bytes(b"not a chain")
        with pytest.raises(DataError):
            load_chain(tmp_path / "a.chn")


class TestCheckpoints:
    def test_refuses_mismatch(self, tmp_path, rng):
        config, ds = make_problem(rng, n=20)
        config = replace(config, sampler=replace(config.sampler, iterations=20, burn_in=5, checkpoint_every=5))
        ck = tmp_path / "c.ckp"
        S.run_chain(config, ds, 0, checkpoint_path=ck, stop_after=10)
        good = dataset_checksum(ds)
        assert load_checkpoint(ck, config, good, 0)["iteration"] == 10
        other = replace(config, sampler=replace(config.sampler, seed=99))
        with pytest.raises(ChecksumError):
            load_checkpoint(ck, other, good, 0)
        with pytest.raises(ChecksumError):
            load_checkpoint(ck, config, "0" * 64, 0)
        with pytest.raises(ChecksumError):
            load_checkpoint(ck, config, good, 1)
        changed = Dataset(ds.y + 1, ds.predictors, ds.covariates)
        with pytest.raises(ChecksumError):
            S.run_chain(config, changed, 0, checkpoint_path=ck, resume=True)

    def test_resume_without_file(self, tmp_path, rng):
        config, ds = make_problem(rng)
        with pytest.raises(FileNotFoundError):
            S.run_chain(config, ds, 0, checkpoint_path=tmp_path / "none.ckp", resume=True)


class TestManifest:
    def test_round_trip(self, tmp_path):
        config = default_config((3, 3))
        write_manifest(tmp_path / "m.json", config, {"outcomes": "ab"}, ["chain0.chn"], None)
        doc = read_manifest(tmp_path / "m.json")
        assert doc["config_hash"] == config.model_hash() and doc["chains"] == ["chain0.chn"]
        doc["format_version"] = 0
        (tmp_path / "m.json").write_text(json.dumps(doc))
        with pytest.raises(VersionError):
            read_manifest(tmp_path / "m.json")
