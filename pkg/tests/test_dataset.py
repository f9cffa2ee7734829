"""Dataset pipeline tests: grid enumeration, file format round-trips,
resume/crash behavior, and batch streaming."""
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import topoforge.dataset as ds
from topoforge import DensityField, GridSpec, enumerate_grid, generate_dataset, read_grid, write_grid
from topoforge.dataset import DatasetManifest, load_batches, sample_id
from topoforge.errors import DatasetError, ParameterError


class TestEnumerateGrid:
    def test_default_grid_has_3024_points(self):
        assert GridSpec().cardinality() == 3024
        assert len(enumerate_grid(GridSpec())) == 3024

    def test_volfrac_axis(self):
        vols, penals, rmins = GridSpec().axes()
        assert len(vols) == 9
        assert vols[0] == 0.30 and vols[-1] == 0.70
        assert len(penals) == 21 and penals[0] == 2.0 and penals[-1] == 4.0
        assert len(rmins) == 16 and rmins[0] == 1.5 and rmins[-1] == 3.0

    def test_lexicographic_order(self):
        grid = enumerate_grid(GridSpec())
        keys = [(p.volfrac, p.penal, p.rmin) for p in grid]
        assert keys == sorted(keys)

    def test_singleton_grid(self):
        spec = GridSpec(
            volfrac_range=(0.5, 0.5, 0.1),
            penal_range=(3.0, 3.0, 0.1),
            rmin_range=(2.0, 2.0, 0.1),
        )
        grid = enumerate_grid(spec)
        assert len(grid) == 1
        assert (grid[0].volfrac, grid[0].penal, grid[0].rmin) == (0.5, 3.0, 2.0)

    def test_degenerate_range_rejected(self):
        with pytest.raises(ParameterError):
            enumerate_grid(GridSpec(volfrac_range=(0.7, 0.3, 0.05)))
        with pytest.raises(ParameterError):
            enumerate_grid(GridSpec(penal_range=(2.0, 4.0, 0.0)))

    @given(
        st.integers(1, 9), st.integers(1, 9), st.integers(1, 9),
        st.floats(0.01, 0.08), st.floats(0.05, 0.5), st.floats(0.05, 0.5),
    )
    @settings(max_examples=40, deadline=None)
    def test_cardinality_formula(self, nv, np_, nr, sv, sp, sr):
        spec = GridSpec(
            volfrac_range=(0.1, 0.1 + (nv - 1) * sv, sv),
            penal_range=(2.0, 2.0 + (np_ - 1) * sp, sp),
            rmin_range=(1.5, 1.5 + (nr - 1) * sr, sr),
        )
        grid = enumerate_grid(spec)
        # independent counting loop
        count = 0
        for _ in spec.axes()[0]:
            for _ in spec.axes()[1]:
                for _ in spec.axes()[2]:
                    count += 1
        assert len(grid) == count == nv * np_ * nr

    def test_desk_profile(self):
        spec = GridSpec.profile("desk")
        assert spec.cardinality() == 9 * 5 * 4 == 180
        assert spec.resolution == (48, 48)


class TestGridFiles:
    def test_round_trip_bitwise(self, tmp_path):
        rng = np.random.default_rng(0)
        f = DensityField(5, 3, rng.random((3, 5)))
        p = tmp_path / "a.topo"
        write_grid(p, f)
        g = read_grid(p)
        assert (g.nelx, g.nely) == (5, 3)
        # stored as float32: reading back then rewriting is exact
        np.testing.assert_array_equal(g.values, f.values.astype(np.float32).astype(np.float64))
        p2 = tmp_path / "b.topo"
        write_grid(p2, g)
        assert p.read_bytes() == p2.read_bytes()

    def test_header_layout(self, tmp_path):
        f = DensityField(2, 1, np.array([[0.25, 0.75]]))
        p = tmp_path / "h.topo"
        write_grid(p, f)
        raw = p.read_bytes()
        assert raw[:4] == b"TOPO" and raw[4] == 1
        assert int.from_bytes(raw[5:9], "little") == 1   # nely first
        assert int.from_bytes(raw[9:13], "little") == 2  # then nelx
        assert len(raw) == 13 + 4 * 2

    def test_corrupt_magic(self, tmp_path):
        p = tmp_path / "bad.topo"
        p.write_bytes(b"JUNKxxxxxxxxxxxxx")
        with pytest.raises(DatasetError, match="bad.topo"):
            read_grid(p)

    def test_truncated(self, tmp_path):
        f = DensityField(4, 4, np.zeros((4, 4)))
        p = tmp_path / "t.topo"
        write_grid(p, f)
        p.write_bytes(p.read_bytes()[:-5])
        with pytest.raises(DatasetError, match="truncated"):
            read_grid(p)


TINY = GridSpec(
    volfrac_range=(0.4, 0.5, 0.1),
    penal_range=(3.0, 3.0, 0.1),
    rmin_range=(1.2, 1.2, 0.1),
    resolution=(8, 6),
)


@pytest.fixture(scope="module")
def tiny_dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("tiny-ds")
    manifest = generate_dataset(TINY, out, workers=1)
    return out, manifest


class TestGenerateDataset:
    def test_cardinality_and_files(self, tiny_dataset):
        out, manifest = tiny_dataset
        assert len(manifest.records) == 2
        for rec in manifest.records:
            assert (out / "grids" / rec.grid_file).exists()
            assert rec.converged

    def test_mean_density_matches_label(self, tiny_dataset):
        out, manifest = tiny_dataset
        for rec in manifest.records:
            g = read_grid(out / "grids" / rec.grid_file)
            assert abs(g.mean() - rec.volfrac) <= 1e-3

    def test_resume_is_idempotent(self, tiny_dataset):
        out, _ = tiny_dataset
        before = (out / "manifest.jsonl").read_bytes()
        runs = []
        orig = ds._run_sample

        def spy(args):
            runs.append(args)
            return orig(args)

        ds._run_sample = spy
        try:
            generate_dataset(TINY, out, workers=1, resume=True)
        finally:
            ds._run_sample = orig
        assert runs == []  # zero new SIMP runs
        assert (out / "manifest.jsonl").read_bytes() == before

    def test_crash_leaves_valid_manifest(self, tmp_path):
        spec = GridSpec(
            volfrac_range=(0.3, 0.6, 0.1),
            penal_range=(3.0, 3.0, 0.1),
            rmin_range=(1.2, 1.2, 0.1),
            resolution=(6, 4),
        )

        class Boom(RuntimeError):
            pass

        count = [0]
        orig = ds._run_sample

        def explode(args):
            if count[0] == 2:
                raise Boom()
            count[0] += 1
            return orig(args)

        ds._run_sample = explode
        try:
            with pytest.raises(Boom):
                generate_dataset(spec, tmp_path, workers=1, manifest_batch=1)
        finally:
            ds._run_sample = orig
        # partial manifest loads and contains the completed samples
        manifest = DatasetManifest.load(tmp_path / "manifest.jsonl")
        assert len(manifest.records) == 2
        # resume completes the remaining points without redoing finished ones
        done_before = manifest.ids
        manifest2 = generate_dataset(spec, tmp_path, workers=1, resume=True)
        assert len(manifest2.records) == 4
        assert done_before <= manifest2.ids

    def test_ids_stable(self):
        from topoforge import OptimizationParams

        p = OptimizationParams(volfrac=0.4, penal=3.0, rmin=1.5)
        assert sample_id(p, 48, 48) == sample_id(p, 48, 48)
        assert sample_id(p, 48, 48) != sample_id(p, 48, 32)


class TestLoadBatches:
    def test_single_batch_covers_everything(self, tiny_dataset):
        out, manifest = tiny_dataset
        batches = list(load_batches(manifest, out, batch_size=100, shuffle_seed=1))
        assert len(batches) == 1
        grids, labels = batches[0]
        assert grids.shape == (2, 6, 8)
        assert labels.shape == (2, 1)

    def test_seeded_determinism(self, tiny_dataset):
        out, manifest = tiny_dataset
        a = list(load_batches(manifest, out, batch_size=1, shuffle_seed=7, epochs=2))
        b = list(load_batches(manifest, out, batch_size=1, shuffle_seed=7, epochs=2))
        assert len(a) == len(b) == 4
        for (ga, la), (gb, lb) in zip(a, b):
            assert ga.tobytes() == gb.tobytes() and la.tobytes() == lb.tobytes()

    def test_epoch_covers_all_labels(self, tiny_dataset):
        out, manifest = tiny_dataset
        seen = []
        for grids, labels in load_batches(manifest, out, batch_size=1, shuffle_seed=3):
            seen.extend(labels.ravel().tolist())
        assert sorted(np.round(seen, 6)) == sorted(
            round(r.volfrac, 6) for r in manifest.records
        )

    def test_corrupt_grid_file_named(self, tiny_dataset, tmp_path):
        out, manifest = tiny_dataset
        import shutil

        broken = tmp_path / "broken"
        shutil.copytree(out, broken)
        victim = manifest.records[0].grid_file
        (broken / "grids" / victim).write_bytes(b"garbage")
        with pytest.raises(DatasetError, match=victim):
            list(load_batches(manifest, broken, batch_size=2, shuffle_seed=0))


class TestParallelGeneration:
    def test_worker_pool_matches_serial(self, tmp_path):
        """Grid points are independent; a 2-worker pool must produce the same
        grids and manifest as the serial path."""
        spec = GridSpec(
            volfrac_range=(0.4, 0.6, 0.2),
            penal_range=(3.0, 3.0, 0.1),
            rmin_range=(1.2, 1.2, 0.1),
            resolution=(6, 4),
        )
        serial = tmp_path / "serial"
        pooled = tmp_path / "pooled"
        m1 = generate_dataset(spec, serial, workers=1)
        m2 = generate_dataset(spec, pooled, workers=2)
        assert [r.id for r in m1.records] == [r.id for r in m2.records]
        for r1, r2 in zip(m1.records, m2.records):
            assert r1.compliance == r2.compliance
            b1 = (serial / "grids" / r1.grid_file).read_bytes()
            b2 = (pooled / "grids" / r2.grid_file).read_bytes()
            assert b1 == b2
