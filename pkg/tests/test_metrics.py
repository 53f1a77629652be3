import numpy as np
import pytest

from thor import metrics as MM
from thor.rng import Rng


def random_rotation(rng):
    a = np.asarray(rng.normal((3, 3)))
    q, r = np.linalg.qr(a)
    q *= np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] *= -1
    return q


class TestMpjpe:
    def test_identical_zero(self):
        p = Rng(0).normal((21, 3))
        assert MM.mpjpe(p, p) == 0.0

    def test_single_joint_offset(self):
        gt = np.zeros((21, 3))
        pred = gt.copy()
        pred[7] = [3.0, 4.0, 0.0]
        assert abs(MM.mpjpe(pred, gt) - 5.0 / 21.0) < 1e-15

    def test_uniform_translation(self):
        rng = Rng(1)
        gt = np.asarray(rng.normal((10, 3)))
        pred = gt + np.array([10.0, 0.0, 0.0])
        assert abs(MM.mpjpe(pred, gt) - 10.0) < 1e-12
        assert MM.aligned_mpjpe(pred, gt) < 1e-9

    def test_count_mismatch(self):
        with pytest.raises(MM.MetricsError):
            MM.mpjpe(np.zeros((3, 3)), np.zeros((4, 3)))


class TestProcrustes:
    def test_exact_similarity_recovery(self):
        for seed in range(10):
            rng = Rng(100 + seed)
            pred = np.asarray(rng.normal((12, 3)))
            rot = random_rotation(rng)
            gt = 2.5 * pred @ rot.T + np.asarray(rng.normal((3,), std=4.0))
            aligned, (s, r, t) = MM.procrustes_align(pred, gt)
            assert np.max(np.linalg.norm(aligned - gt, axis=1)) < 1e-9
            assert abs(s - 2.5) < 1e-9

    def test_identity_on_equal_sets(self):
        p = np.asarray(Rng(5).normal((8, 3)))
        aligned, (s, r, t) = MM.procrustes_align(p, p)
        assert abs(s - 1.0) < 1e-12
        assert np.max(np.abs(r - np.eye(3))) < 1e-12
        assert np.max(np.abs(t)) < 1e-12

    def test_reflection_not_recovered(self):
        # mirrored set: an unconstrained orthogonal fit would be exact, the
        # det(R) = +1 constraint must leave positive residual
        rng = Rng(9)
        pred = np.asarray(rng.normal((10, 3)))
        mirror = pred.copy()
        mirror[:, 0] *= -1
        aligned, (s, r, t) = MM.procrustes_align(pred, mirror)
        constrained = MM.mpjpe(aligned, mirror)
        # unconstrained SVD oracle (reflection allowed)
        xp = pred - pred.mean(axis=0)
        xg = mirror - mirror.mean(axis=0)
        u, sv, vt = np.linalg.svd(xg.T @ xp / len(pred))
        r_free = u @ vt
        s_free = sv.sum() / (xp ** 2).sum() * len(pred)
        free_res = np.linalg.norm(
            s_free * xp @ r_free.T - xg, axis=1).mean()
        assert np.linalg.det(r) > 0
        assert free_res < 1e-9
        assert constrained > 1e-3

    def test_alignment_never_hurts(self):
        for seed in range(10):
            rng = Rng(200 + seed)
            pred = np.asarray(rng.normal((15, 3)))
            gt = np.asarray(rng.normal((15, 3)))
            assert MM.aligned_mpjpe(pred, gt) <= MM.mpjpe(pred, gt) + 1e-12

    def test_degenerate_rejected(self):
        line = np.outer(np.arange(5.0), np.array([1.0, 0.0, 0.0]))
        with pytest.raises(MM.MetricsError):
            MM.procrustes_align(line, line)

    def test_too_few_points(self):
        with pytest.raises(MM.MetricsError):
            MM.procrustes_align(np.zeros((2, 3)), np.zeros((2, 3)))

    def test_planar_grid_matches_rotation_grid_oracle(self):
        # 4-point planar case: brute-force search over in-plane rotation
        # angle with closed-form scale/translation per angle
        rng = Rng(42)
        pred2 = np.asarray(rng.normal((4, 2)))
        angle = 0.7
        rot2 = np.array([[np.cos(angle), -np.sin(angle)],
                         [np.sin(angle), np.cos(angle)]])
        gt2 = 1.3 * pred2 @ rot2.T + np.array([0.2, -0.4])
        gt2 += np.asarray(rng.normal((4, 2), std=0.05))  # noise so the fit is nontrivial

        def embed(x):
            return np.concatenate([x, np.zeros((len(x), 1))], axis=1)

        aligned, _ = MM.procrustes_align(embed(pred2), embed(gt2))
        residual = np.mean(np.sum((aligned - embed(gt2)) ** 2, axis=1))

        best = np.inf
        xp = pred2 - pred2.mean(axis=0)
        xg = gt2 - gt2.mean(axis=0)
        thetas = np.linspace(0, 2 * np.pi, 400001)
        cos_t, sin_t = np.cos(thetas), np.sin(thetas)
        # rotate, fit least-squares scale per angle, track best squared error
        xr_all = np.einsum("nd,tde->tne",
                           xp, np.stack([np.stack([cos_t, -sin_t], -1),
                                         np.stack([sin_t, cos_t], -1)], -2))
        s_all = (xr_all * xg).sum(axis=(1, 2)) / (xr_all ** 2).sum(axis=(1, 2))
        res_all = ((s_all[:, None, None] * xr_all - xg) ** 2).sum(axis=2).mean(axis=1)
        best = res_all.min()
        assert abs(residual - best) < 1e-6


class TestPcv:
    def test_simple_fraction(self):
        curve = MM.pcv_curve([1.0, 2.0, 3.0], [2.0])
        assert curve == [(2.0, 2.0 / 3.0)]

    def test_extremes(self):
        curve = MM.pcv_curve([1.0, 2.0, 3.0], [0.5, 10.0])
        assert curve[0][1] == 0.0 and curve[1][1] == 1.0

    def test_monotone(self):
        rng = Rng(3)
        errs = np.abs(np.asarray(rng.normal((100,), std=3)))
        curve = MM.pcv_curve(errs, np.linspace(0, 10, 50))
        fracs = [f for _, f in curve]
        assert all(b >= a for a, b in zip(fracs, fracs[1:]))
        assert all(0 <= f <= 1 for f in fracs)

    def test_empty_rejected(self):
        with pytest.raises(MM.MetricsError):
            MM.pcv_curve([], [1.0])

    def test_unsorted_thresholds_rejected(self):
        with pytest.raises(MM.MetricsError):
            MM.pcv_curve([1.0], [2.0, 1.0])

    def test_csv_emission(self, tmp_path):
        curve = MM.pcv_curve([1.0, 2.0], [1.0, 2.0, 3.0])
        path = tmp_path / "pcv.csv"
        MM.write_pcv_csv(path, curve)
        rows = path.read_text().strip().splitlines()
        assert rows[0] == "threshold_mm,fraction"
        assert len(rows) == 4


def test_metric_report_round_trip(tmp_path):
    rep = MM.MetricReport(
        mpjpe_parts={"hand": 1.5}, aligned_mpjpe_parts={"hand": 1.0},
        vertex_error_parts={"object": 2.0}, aligned_vertex_error_parts={"object": 1.2},
        pcv=[(1.0, 0.5)])
    rep.save(tmp_path, "r")
    import json
    obj = json.loads((tmp_path / "r.json").read_text())
    assert obj["pose_error"]["hand"] == 1.5
    assert (tmp_path / "r_pcv.csv").exists()
