import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from graspview.errors import MissingLabel
from graspview.geometry import PointCloud, Pose, TriangleMesh, compose, rot_x, rot_z, transform_points
from graspview.grasping import (
    CandidateParams,
    GraspHypothesis,
    HandGeometry,
    ScorerKind,
    ScorerSpec,
    Variant,
    check_hand_collision,
    closing_region_points,
    evaluate_force_closure,
    generate_candidates,
    hand_boxes,
    label_grasps,
    read_candidates_jsonl,
    score_candidate,
    transform_grasp,
    write_candidates_jsonl,
)
from graspview.harness.corpus import make_box, make_cylinder
from graspview.simcam import CameraModel, ViewpointSpec, render_cloud, viewpoint_to_pose

from oracles import brute_force_closure, world_triangles

HAND = HandGeometry()
# Hand large enough to hold a unit cube.
BIG_HAND = HandGeometry(aperture=1.2, finger_depth=0.4, finger_width=0.05, hand_height=0.3)
seeds = st.integers(0, 2 ** 32 - 1)


def uv_sphere(radius, n_lat=24, n_lon=48):
    verts = [[0, 0, radius]]
    for i in range(1, n_lat):
        th = math.pi * i / n_lat
        for j in range(n_lon):
            ph = 2 * math.pi * j / n_lon
            verts.append([radius * math.sin(th) * math.cos(ph), radius * math.sin(th) * math.sin(ph),
                          radius * math.cos(th)])
    verts.append([0, 0, -radius])
    bottom = len(verts) - 1

    def ring(i, j):
        return 1 + (i - 1) * n_lon + j % n_lon

    tris = [(0, ring(1, j), ring(1, j + 1)) for j in range(n_lon)]
    for i in range(1, n_lat - 1):
        for j in range(n_lon):
            a, b, c, d = ring(i, j), ring(i, j + 1), ring(i + 1, j), ring(i + 1, j + 1)
            tris += [(a, c, d), (a, d, b)]
    tris += [(bottom, ring(n_lat - 1, j + 1), ring(n_lat - 1, j)) for j in range(n_lon)]
    return TriangleMesh(np.array(verts, dtype=float), np.array(tris))


def grasp_at(rotation, position):
    return GraspHypothesis(Pose(np.asarray(rotation, dtype=float), np.asarray(position, dtype=float)))


def test_hand_validation():
    with pytest.raises(ValueError):
        HandGeometry(aperture=0.01, finger_width=0.01)
    with pytest.raises(ValueError):
        HandGeometry(hand_height=0.0)


def test_score_range_validated():
    with pytest.raises(ValueError):
        grasp_at(np.eye(3), np.zeros(3)).with_score(1.5)


class TestRegions:
    def test_empty_cloud(self):
        empty = PointCloud(np.zeros((0, 3)))
        g = grasp_at(np.eye(3), np.zeros(3))
        assert closing_region_points(g, empty, HAND) == []
        assert check_hand_collision(g, empty, HAND) is False

    def test_origin_point(self):
        cloud = PointCloud(np.array([[0.1, 0.2, 0.3]]))
        g = grasp_at(rot_z(0.7), [0.1, 0.2, 0.3])
        assert closing_region_points(g, cloud, HAND) == [0]
        assert not check_hand_collision(g, cloud, HAND)

    def test_point_in_finger(self):
        y = 0.5 * HAND.aperture + 0.5 * HAND.finger_width
        cloud = PointCloud(np.array([[0.0, y, 0.0]]))
        assert check_hand_collision(grasp_at(np.eye(3), np.zeros(3)), cloud, HAND)

    def test_point_in_palm(self):
        x = 0.5 * HAND.finger_depth + 0.5 * HAND.base_depth
        cloud = PointCloud(np.array([[x, 0.0, 0.0]]))
        assert check_hand_collision(grasp_at(np.eye(3), np.zeros(3)), cloud, HAND)

    @given(seeds)
    def test_match_brute_force(self, seed):
        rng = np.random.default_rng(seed)
        pose = Pose.random(rng, 0.05)
        pts = rng.uniform(-0.08, 0.08, (300, 3))
        g = GraspHypothesis(pose)
        local = [pose.rotation.T @ (p - pose.translation) for p in pts]
        fd, ap, hh = HAND.finger_depth, HAND.aperture, HAND.hand_height
        want = [i for i, q in enumerate(local)
                if abs(q[0]) <= fd / 2 and abs(q[1]) <= ap / 2 and abs(q[2]) <= hh / 2]
        cloud = PointCloud(pts)
        assert closing_region_points(g, cloud, HAND) == want
        hit = any(all(lo[k] <= q[k] <= hi[k] for k in range(3)) for q in local for lo, hi in hand_boxes(HAND))
        assert check_hand_collision(g, cloud, HAND) == hit


def side_cloud(radius=0.03, seed=0):
    mesh = make_cylinder(radius, 0.12)
    cam_pose = viewpoint_to_pose(ViewpointSpec(0.2, 0.15))
    return mesh, render_cloud([(mesh, Pose.identity())], CameraModel(), cam_pose, seed)


class TestCandidates:
    def test_cylinder_diameter_grasp(self):
        mesh, cloud = side_cloud()
        hand = HandGeometry(aperture=0.08)
        gs = generate_candidates(cloud, hand, CandidateParams(), seed=1)
        assert gs

        def diameter_error(g):
            # a diameter direction is horizontal and passes through the axis
            y = g.closing
            horiz = math.degrees(math.asin(min(1.0, abs(y[2]))))
            p = g.position[:2]
            radial = p - (p @ y[:2]) * y[:2] / max(np.linalg.norm(y[:2]) ** 2, 1e-12)
            off_axis = math.degrees(math.atan2(np.linalg.norm(radial), 0.03))
            return max(horiz, off_axis)

        assert min(diameter_error(g) for g in gs) <= 15.0

    def test_wide_face_has_no_candidates(self):
        # A 0.30 m face larger than the cloud: the jaws fit nowhere on it. The
        # hand can only wrap the artificial border where the sampled sheet
        # ends, so interior seeds yield nothing and every candidate touches
        # the border.
        xs, ys = np.meshgrid(np.linspace(-0.15, 0.15, 100), np.linspace(-0.15, 0.15, 100))
        pts = np.column_stack([xs.ravel(), ys.ravel(), np.zeros(xs.size)])
        normals = np.tile([0.0, 0.0, 1.0], (len(pts), 1))
        cloud = PointCloud(pts, normals, [0.0, 0.0, 0.4])
        hand = HandGeometry(aperture=0.08)
        interior = generate_candidates(cloud, hand, CandidateParams(n_samples=400), seed=0,
                                       region=(np.zeros(3), 0.03))
        assert interior == []
        for g in generate_candidates(cloud, hand, CandidateParams(), seed=0):
            held = pts[closing_region_points(g, cloud, hand)]
            assert np.abs(held[:, :2]).max() == 0.15

    def test_deterministic(self):
        _, cloud = side_cloud()
        a = generate_candidates(cloud, HAND, CandidateParams(), seed=5)
        b = generate_candidates(cloud, HAND, CandidateParams(), seed=5)
        assert [g.pose.to_row12() for g in a] == [g.pose.to_row12() for g in b]

    @pytest.mark.parametrize("variant", list(Variant))
    def test_constraints_hold(self, variant, backend):
        mesh, cloud = side_cloud(seed=3)
        params = CandidateParams(variant=variant)
        gs = generate_candidates(cloud, HAND, params, seed=2)
        assert len(gs) > 10
        for g in gs:
            assert not check_hand_collision(g, cloud, HAND)
            assert len(closing_region_points(g, cloud, HAND)) >= params.min_points_in_closing_region

    def test_variants_differ(self):
        _, cloud = side_cloud()
        a = generate_candidates(cloud, HAND, CandidateParams(variant=Variant.CURVATURE_AXIS), seed=0)
        b = generate_candidates(cloud, HAND, CandidateParams(variant=Variant.NORMAL_AXIS), seed=0)
        assert {tuple(g.pose.to_row12()) for g in a} != {tuple(g.pose.to_row12()) for g in b}

    def test_region_restriction(self):
        _, cloud = side_cloud()
        center = cloud.points[0]
        gs = generate_candidates(cloud, HAND, CandidateParams(), seed=0, region=(center, 0.01))
        assert gs
        far = generate_candidates(cloud, HAND, CandidateParams(), seed=0, region=(center + 1.0, 0.01))
        assert far == []

    def test_empty_cloud(self):
        assert generate_candidates(PointCloud(np.zeros((0, 3))), HAND, CandidateParams(), 0) == []

    def test_rigid_invariance(self):
        mesh, cloud = side_cloud()
        gs = generate_candidates(cloud, HAND, CandidateParams(), seed=0)
        motion = Pose.random(np.random.default_rng(8), 0.5)
        moved = PointCloud(transform_points(motion, cloud.points), cloud.normals @ motion.rotation.T,
                           transform_points(motion, cloud.view_origin)[0])
        for g in gs[:40]:
            h = transform_grasp(motion, g)
            assert closing_region_points(h, moved, HAND) == closing_region_points(g, cloud, HAND)
            assert check_hand_collision(h, moved, HAND) == check_hand_collision(g, cloud, HAND)


class TestForceClosure:
    def test_cube_opposite_faces(self):
        cube = make_box(1.0, 1.0, 1.0)
        assert evaluate_force_closure(cube, Pose.identity(), grasp_at(np.eye(3), np.zeros(3)), BIG_HAND, 0.5)

    def test_cube_oblique(self):
        cube = make_box(1.0, 1.0, 1.0)
        g = grasp_at(rot_z(math.radians(40)), np.zeros(3))
        assert math.degrees(math.atan(0.3)) == pytest.approx(16.7, abs=0.05)
        assert not evaluate_force_closure(cube, Pose.identity(), g, BIG_HAND, 0.3)
        label, _ = brute_force_closure(world_triangles(cube, Pose.identity()), g.pose.rotation.tolist(),
                                       g.pose.translation.tolist(), BIG_HAND, 0.3)
        assert label is False

    @pytest.mark.parametrize("mu", [0.05, 0.5, 2.0])
    def test_sphere_through_centre(self, mu):
        sphere = uv_sphere(0.03)
        for k in range(5):
            r = Pose.random(np.random.default_rng(k)).rotation
            assert evaluate_force_closure(sphere, Pose.identity(), grasp_at(r, np.zeros(3)), HAND, mu)

    def test_no_contact(self):
        cube = make_box(0.05, 0.05, 0.05)
        g = grasp_at(np.eye(3), [1.0, 0.0, 0.0])
        assert evaluate_force_closure(cube, Pose.identity(), g, HAND) is False

    def test_finger_inside_object(self):
        # jaws narrower than the box: both fingers start inside it
        box = make_box(0.05, 0.2, 0.05)
        assert not evaluate_force_closure(box, Pose.identity(), grasp_at(np.eye(3), np.zeros(3)), HAND)

    def test_mu_must_be_positive(self):
        cube = make_box(0.05, 0.05, 0.05)
        with pytest.raises(ValueError):
            evaluate_force_closure(cube, Pose.identity(), grasp_at(np.eye(3), np.zeros(3)), HAND, 0.0)

    def test_cone_boundary(self):
        # rotated about the height axis by just under / over the cone half-angle
        box = make_box(0.04, 0.04, 0.04)
        cone = math.degrees(math.atan(0.5))
        inside = grasp_at(rot_z(math.radians(cone - 1)), np.zeros(3))
        outside = grasp_at(rot_z(math.radians(cone + 1)), np.zeros(3))
        assert evaluate_force_closure(box, Pose.identity(), inside, HAND)
        assert not evaluate_force_closure(box, Pose.identity(), outside, HAND)

    @given(seeds)
    def test_finger_swap_symmetry(self, seed):
        rng = np.random.default_rng(seed)
        mesh = make_cylinder(0.03, 0.1, segments=24) if seed % 2 else make_box(0.05, 0.07, 0.1)
        g = GraspHypothesis(Pose.random(rng, 0.03))
        a = evaluate_force_closure(mesh, Pose.identity(), g, HAND)
        assert evaluate_force_closure(mesh, Pose.identity(), g.finger_swapped(), HAND) == a

    @given(seeds)
    def test_rigid_invariance(self, seed):
        rng = np.random.default_rng(seed)
        mesh = make_box(0.05, 0.07, 0.1)
        g = GraspHypothesis(Pose.random(rng, 0.02))
        motion = Pose.random(rng, 1.0)
        a = evaluate_force_closure(mesh, Pose.identity(), g, HAND)
        assert evaluate_force_closure(mesh, motion, transform_grasp(motion, g), HAND) == a

    def test_batch_matches_single(self):
        rng = np.random.default_rng(0)
        mesh = make_cylinder(0.03, 0.1)
        gs = [GraspHypothesis(Pose.random(rng, 0.03)) for _ in range(30)]
        batch = label_grasps(mesh, Pose.identity(), gs, HAND)
        assert batch == [evaluate_force_closure(mesh, Pose.identity(), g, HAND) for g in gs]
        assert label_grasps(mesh, Pose.identity(), [], HAND) == []


class TestScoring:
    def test_noisy_oracle_needs_label(self):
        g = grasp_at(np.eye(3), np.zeros(3))
        with pytest.raises(MissingLabel):
            score_candidate(g, PointCloud(np.zeros((0, 3))), HAND, ScorerSpec(), 0)

    def test_noisy_oracle_positive_rate(self):
        g = grasp_at(np.eye(3), np.zeros(3)).with_label(True)
        empty = PointCloud(np.zeros((0, 3)))
        scores = np.array([score_candidate(g, empty, HAND, ScorerSpec(), s) for s in range(10000)])
        expected = stats.beta(8, 2).sf(0.5)
        assert expected == pytest.approx(0.98, abs=0.001)
        assert abs(np.mean(scores > 0.5) - expected) <= 0.01

    def test_noisy_oracle_negative_rate(self):
        g = grasp_at(np.eye(3), np.zeros(3)).with_label(False)
        empty = PointCloud(np.zeros((0, 3)))
        scores = np.array([score_candidate(g, empty, HAND, ScorerSpec(), s) for s in range(10000)])
        assert abs(np.mean(scores < 0.5) - stats.beta(2, 8).cdf(0.5)) <= 0.01

    def test_deterministic_under_seed(self):
        g = grasp_at(np.eye(3), np.zeros(3)).with_label(True)
        empty = PointCloud(np.zeros((0, 3)))
        assert score_candidate(g, empty, HAND, ScorerSpec(), 4) == score_candidate(g, empty, HAND, ScorerSpec(), 4)

    def test_geometric_empty_region_is_bias_only(self):
        spec = ScorerSpec(kind=ScorerKind.GEOMETRIC)
        g = grasp_at(np.eye(3), np.zeros(3))
        s = score_candidate(g, PointCloud(np.zeros((0, 3))), HAND, spec, 0)
        assert s == 1.0 / (1.0 + math.exp(-spec.bias))

    def test_geometric_scores_in_range(self):
        _, cloud = side_cloud()
        spec = ScorerSpec(kind=ScorerKind.GEOMETRIC)
        for g in generate_candidates(cloud, HAND, CandidateParams(), 0):
            assert 0.0 <= score_candidate(g, cloud, HAND, spec, 0) <= 1.0

    def test_ident_distinguishes_kinds(self):
        assert ScorerSpec().ident != ScorerSpec(kind="geometric").ident


def test_jsonl_round_trip(tmp_path):
    gs = [grasp_at(rot_x(0.3), [0.1, 0.2, 0.3]).with_score(0.25).with_label(True),
          grasp_at(np.eye(3), np.zeros(3))]
    write_candidates_jsonl(gs, tmp_path / "g.jsonl")
    back = read_candidates_jsonl(tmp_path / "g.jsonl")
    assert [(b.score, b.label) for b in back] == [(0.25, True), (None, None)]
    assert back[0].pose.allclose(gs[0].pose, 0.0)


def test_transform_grasp_composes():
    g = grasp_at(rot_z(0.2), [0.01, 0.0, 0.0])
    m = Pose.random(np.random.default_rng(1))
    assert transform_grasp(m, g).pose.allclose(compose(m, g.pose), 1e-12)


def test_geometric_accuracy_on_corpus():
    # Held out from the corpus the weights were fitted on.
    from graspview.harness.corpus import CorpusSpec, build_corpus
    from graspview.simcam import sample_view_sphere

    spec = ScorerSpec(kind=ScorerKind.GEOMETRIC)
    correct = total = 0
    for i, mesh in enumerate(build_corpus(CorpusSpec(n_box=10, n_cylinder=10, seed=77))):
        for v in sample_view_sphere(2, seed=1000 + i):
            cloud = render_cloud([(mesh, Pose.identity())], CameraModel(), viewpoint_to_pose(v), i)
            gs = generate_candidates(cloud, HAND, CandidateParams(), i)
            for g, label in zip(gs, label_grasps(mesh, Pose.identity(), gs, HAND)):
                correct += (score_candidate(g, cloud, HAND, spec, 0) >= 0.5) == label
                total += 1
    assert total > 1000
    assert 0.70 <= correct / total <= 0.95
