import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from perspcam.body_model import (BodyModel, canonical_rotvec, load_model, load_obj,
                                 make_default_model, rodrigues, save_model, save_obj, synthesize)
from perspcam.errors import InvalidArgumentError, ModelFormatError

finite = st.floats(-2, 2, allow_nan=False)
betas = arrays(float, 10, elements=finite)
rotvec = arrays(float, 3, elements=st.floats(-3, 3, allow_nan=False))


def zero_pose(model):
    return np.zeros((model.joint_count, 3))


def test_default_model_dimensions(model):
    assert model.joint_count == 16
    assert model.num_betas == 10
    assert model.vertex_count == 1056
    assert model.faces.shape == (2048, 3)
    np.testing.assert_allclose(model.skinning_weights.sum(axis=1), 1.0, atol=1e-9)
    np.testing.assert_allclose(model.joint_regressor.sum(axis=1), 1.0, atol=1e-9)
    assert model.parents[0] == -1


def test_default_model_is_deterministic(model):
    again = make_default_model(8, 4)
    assert again == model
    for name in ("template_vertices", "shape_blendshapes", "skinning_weights"):
        assert getattr(again, name).tobytes() == getattr(model, name).tobytes()


@pytest.mark.parametrize("segments, rings", [(2, 4), (8, 1), (3.5, 4)])
def test_default_model_rejects_bad_resolution(segments, rings):
    with pytest.raises(InvalidArgumentError):
        make_default_model(segments, rings)


def test_rest_pose_is_recentred_template(model):
    mesh = synthesize(model, np.zeros(10), zero_pose(model))
    pelvis = model.joint_regressor[0] @ model.template_vertices
    np.testing.assert_allclose(mesh.vertices, model.template_vertices - pelvis, atol=1e-12)
    assert np.linalg.norm(mesh.joints[0]) < 1e-9


def test_shape_is_linear_in_first_blendshape(model):
    base = synthesize(model, np.zeros(10), zero_pose(model))
    beta = np.zeros(10)
    beta[0] = 2.0
    mesh = synthesize(model, beta, zero_pose(model))
    shaped = model.template_vertices + 2 * model.shape_blendshapes[0]
    pelvis = model.joint_regressor[0] @ shaped
    np.testing.assert_allclose(mesh.vertices, shaped - pelvis, atol=1e-12)
    assert not np.allclose(mesh.vertices, base.vertices)


def test_root_half_turn_about_y(model):
    base = synthesize(model, np.zeros(10), zero_pose(model))
    pose = zero_pose(model)
    pose[0] = [0.0, np.pi, 0.0]
    mesh = synthesize(model, np.zeros(10), pose)
    flip = np.array([-1.0, 1.0, -1.0])
    np.testing.assert_allclose(mesh.vertices, base.vertices * flip, atol=1e-9)
    np.testing.assert_allclose(mesh.joints, base.joints * flip, atol=1e-9)


@given(b1=betas, b2=betas)
def test_shape_linearity(model, b1, b2):
    def offsets(beta):
        # undo recentring by adding back the regressed pelvis
        mesh = synthesize(model, beta, zero_pose(model))
        shaped_pelvis = model.joint_regressor[0] @ (
            model.template_vertices + np.tensordot(beta, model.shape_blendshapes, axes=1))
        return mesh.vertices + shaped_pelvis - model.template_vertices

    np.testing.assert_allclose(offsets(b1 + b2), offsets(b1) + offsets(b2), atol=1e-9)


@given(beta=betas, root=rotvec)
def test_root_rotation_equivariance(model, beta, root):
    pose = zero_pose(model)
    base = synthesize(model, beta, pose)
    pose[0] = root
    mesh = synthesize(model, beta, pose)
    rot = rodrigues(root)
    np.testing.assert_allclose(mesh.vertices, base.vertices @ rot.T, atol=1e-9)


@given(beta=betas, pose=arrays(float, (16, 3), elements=st.floats(-1, 1, allow_nan=False)))
def test_pelvis_at_origin(model, beta, pose):
    mesh = synthesize(model, beta, pose)
    assert np.linalg.norm(mesh.joints[0]) < 1e-9


@given(d=arrays(float, 3, elements=st.floats(-10, 10, allow_nan=False)))
def test_skinning_partition_of_unity(model, d):
    # a translation shared by every joint transform moves each vertex by exactly d
    rng = np.random.default_rng(0)
    joint_t = rng.normal(size=(model.joint_count, 3))
    w = model.skinning_weights
    np.testing.assert_allclose(w @ (joint_t + d) - w @ joint_t, np.broadcast_to(d, (len(w), 3)),
                               atol=1e-12)


def test_synthesize_rejects_wrong_dimensions(model):
    with pytest.raises(InvalidArgumentError):
        synthesize(model, np.zeros(9), zero_pose(model))
    with pytest.raises(InvalidArgumentError):
        synthesize(model, np.zeros(10), np.zeros((15, 3)))


def test_rodrigues_matches_scipy():
    from scipy.spatial.transform import Rotation

    rv = np.random.default_rng(3).normal(size=(50, 3))
    np.testing.assert_allclose(rodrigues(rv), Rotation.from_rotvec(rv).as_matrix(), atol=1e-12)
    np.testing.assert_array_equal(rodrigues(np.zeros(3)), np.eye(3))


@given(v=rotvec)
def test_canonical_rotvec_same_rotation(v):
    c = canonical_rotvec(v)
    assert np.linalg.norm(c) <= np.pi + 1e-12
    np.testing.assert_allclose(rodrigues(c), rodrigues(v), atol=1e-9)


def test_model_round_trip(model, tmp_path):
    path = tmp_path / "model.json"
    save_model(model, path)
    assert load_model(path) == model
    assert json.loads(path.read_text())["format_version"] == 1


def test_truncated_model_file(model, tmp_path):
    path = tmp_path / "model.json"
    save_model(model, path)
    path.write_text(path.read_text()[:5000])
    with pytest.raises(ModelFormatError, match="line 1 column"):
        load_model(path)


def test_bad_skinning_row_is_named(model, tmp_path):
    path = tmp_path / "model.json"
    save_model(model, path)
    doc = json.loads(path.read_text())
    k = model.joint_count
    data = doc["skinning_weights"]["data"]
    row = 7
    data[row * k: (row + 1) * k] = [0.9 * x for x in data[row * k: (row + 1) * k]]
    path.write_text(json.dumps(doc))
    with pytest.raises(ModelFormatError, match="skinning_weights row 7"):
        load_model(path)


def test_missing_field_is_named(model, tmp_path):
    path = tmp_path / "model.json"
    save_model(model, path)
    doc = json.loads(path.read_text())
    del doc["faces"]
    path.write_text(json.dumps(doc))
    with pytest.raises(ModelFormatError, match="'faces'"):
        load_model(path)


def test_cyclic_parents_rejected(model):
    parents = np.array(model.parents)
    parents[2] = 5
    with pytest.raises(ModelFormatError, match=r"parents\[2\]"):
        BodyModel(model.template_vertices, model.shape_blendshapes, model.joint_regressor,
                  model.skinning_weights, parents, model.faces)


def test_obj_round_trip(rest_mesh, tmp_path):
    path = tmp_path / "body.obj"
    save_obj(rest_mesh, path)
    v, f = load_obj(path)
    np.testing.assert_array_equal(f, rest_mesh.faces)
    np.testing.assert_allclose(v, rest_mesh.vertices, rtol=1e-8, atol=1e-12)


def test_obj_quad_is_fan_triangulated(tmp_path):
    path = tmp_path / "quad.obj"
    path.write_text("# quad\nv 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n")
    _, f = load_obj(path)
    np.testing.assert_array_equal(f, [[0, 1, 2], [0, 2, 3]])
