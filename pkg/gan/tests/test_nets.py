#!/usr/bin/env python3
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent.parent))

from cgan.errors import ContractError, LabelError, ShapeError
from cgan.nets import (
    GLEASON_SCORES,
    N_CLASSES,
    GleasonLabel,
    build_discriminator,
    build_generator,
    forward_discriminator,
    forward_generator,
    init_weights,
    label_planes,
    one_hot_batch,
    sample_labels,
)
from cgan.tensor_core import Tensor

G_WIDTHS = (16, 8, 4)
D_WIDTHS = (4, 8, 16)
Z_DIM = 12


@pytest.fixture
def generator():
    return build_generator(Z_DIM, rng=np.random.default_rng(5), widths=G_WIDTHS)


@pytest.fixture
def discriminator():
    return build_discriminator(rng=np.random.default_rng(6), widths=D_WIDTHS)


def noise(n, seed=0):
    return Tensor(np.random.default_rng(seed).uniform(-1, 1, size=(n, Z_DIM)).astype(np.float32))


def test_score_index_round_trip():
    for index, score in enumerate(GLEASON_SCORES):
        label = GleasonLabel(score)
        assert label.class_index == index
        assert GleasonLabel.from_index(index) == label
    assert N_CLASSES == 9


@pytest.mark.parametrize('score', [1, 10, -1, True, 2.5])
def test_invalid_scores_rejected(score):
    with pytest.raises(LabelError):
        GleasonLabel(score)


def test_label_error_message():
    with pytest.raises(LabelError, match="score 1 not in label set"):
        GleasonLabel(1)


def test_from_index_out_of_range():
    with pytest.raises(ContractError):
        GleasonLabel.from_index(9)


def test_one_hot():
    vector = GleasonLabel(9).one_hot()
    assert vector.shape == (9,)
    assert vector[8] == 1 and vector.sum() == 1
    batch = one_hot_batch([0, 9, GleasonLabel(5)])
    np.testing.assert_array_equal(batch.argmax(axis=1), [0, 8, 4])


def test_sample_labels_covers_all_classes():
    labels = sample_labels(2000, np.random.default_rng(0))
    counts = np.bincount([label.class_index for label in labels], minlength=N_CLASSES)
    assert counts.min() > 150


def test_default_parameter_counts():
    assert build_generator(rng=np.random.default_rng(0)).parameter_count() == 1_108_033
    assert build_discriminator(rng=np.random.default_rng(0)).parameter_count() == 670_913


def test_init_weight_statistics():
    w = init_weights((1000, 1000), np.random.default_rng(42)).data
    assert abs(w.mean()) < 5e-4
    assert abs(w.std() - 0.02) < 5e-4


def test_init_weights_follow_the_seed():
    a = init_weights((100, 100), np.random.default_rng(1)).data
    assert np.array_equal(a, init_weights((100, 100), np.random.default_rng(1)).data)
    b = init_weights((100, 100), np.random.default_rng(2)).data
    assert np.mean(a != b) > 0.99


def test_same_seed_builds_identical_networks():
    g1 = build_generator(Z_DIM, rng=np.random.default_rng(5), widths=G_WIDTHS)
    g2 = build_generator(Z_DIM, rng=np.random.default_rng(5), widths=G_WIDTHS)
    for (name, p1), (_, p2) in zip(g1.named_parameters(), g2.named_parameters()):
        assert np.array_equal(p1.data, p2.data), name


def test_generator_parameter_names(generator):
    names = [name for name, _ in generator.named_parameters()]
    assert names[0] == 'dense.weight'
    assert generator.params['dense.weight'].shape == (Z_DIM + N_CLASSES, G_WIDTHS[0] * 16)
    assert generator.params['deconv3.weight'].shape == (G_WIDTHS[2], 1, 4, 4)
    assert set(generator.running) == {'bn0', 'bn1', 'bn2'}


@pytest.mark.parametrize('n', [1, 2, 64])
def test_generator_output_shape_and_range(generator, n):
    labels = sample_labels(n, np.random.default_rng(n))
    out = forward_generator(generator, noise(n), labels).data
    assert out.shape == (n, 1, 32, 32)
    assert out.min() >= -1.0 and out.max() <= 1.0


@pytest.mark.parametrize('n', [1, 2, 64])
def test_discriminator_output_shape_and_range(discriminator, n):
    labels = sample_labels(n, np.random.default_rng(n))
    images = Tensor(np.random.default_rng(n).uniform(-1, 1, size=(n, 1, 32, 32)).astype(np.float32))
    out = forward_discriminator(discriminator, images, labels).data
    assert out.shape == (n, 1)
    assert np.all((out > 0) & (out < 1))


def test_generator_eval_mode_is_deterministic(generator):
    labels = [GleasonLabel(s) for s in (0, 6, 9)]
    first = forward_generator(generator, noise(3), labels, mode='eval').data
    second = forward_generator(generator, noise(3), labels, mode='eval').data
    assert np.array_equal(first, second)


def test_generator_label_changes_output(generator):
    a = forward_generator(generator, noise(2), [0, 0], mode='eval').data
    b = forward_generator(generator, noise(2), [9, 9], mode='eval').data
    assert np.abs(a - b).sum() > 0


def test_generator_zero_weights_give_zero_image(generator):
    for p in generator.parameters():
        if p.data.ndim > 1:
            p.data = np.zeros_like(p.data)
    z = Tensor(np.zeros((2, Z_DIM), dtype=np.float32))
    out = forward_generator(generator, z, [0, 9], mode='eval').data
    assert np.all(out == 0.0)


def test_generator_label_count_mismatch(generator):
    with pytest.raises(ContractError):
        forward_generator(generator, noise(2), [0])


def test_generator_running_stats_only_updated_on_request(generator):
    before = generator.running['bn1'].mean.copy()
    forward_generator(generator, noise(4), [0, 2, 3, 4], update_stats=False)
    assert np.array_equal(generator.running['bn1'].mean, before)
    forward_generator(generator, noise(4), [0, 2, 3, 4])
    assert not np.array_equal(generator.running['bn1'].mean, before)


def test_discriminator_rejects_wrong_size(discriminator):
    with pytest.raises(ShapeError):
        forward_discriminator(discriminator, Tensor(np.zeros((2, 1, 28, 28), dtype=np.float32)), [0, 9])


def test_discriminator_zero_head_gives_half(discriminator):
    discriminator.params['head.weight'].data[:] = 0
    images = Tensor(np.random.default_rng(1).uniform(-1, 1, size=(3, 1, 32, 32)).astype(np.float32))
    out = forward_discriminator(discriminator, images, [0, 5, 9]).data
    assert np.all(out == 0.5)


def test_discriminator_permutation_equivariant_in_eval_mode(discriminator):
    rng = np.random.default_rng(3)
    images = rng.uniform(-1, 1, size=(5, 1, 32, 32)).astype(np.float32)
    labels = sample_labels(5, rng)
    order = rng.permutation(5)
    out = forward_discriminator(discriminator, Tensor(images), labels, mode='eval').data
    permuted = forward_discriminator(discriminator, Tensor(images[order]), [labels[i] for i in order], mode='eval').data
    np.testing.assert_allclose(permuted, out[order], rtol=1e-5, atol=1e-7)


def test_label_planes_are_constant():
    planes = label_planes([GleasonLabel(3)])
    assert planes.shape == (1, 9, 32, 32)
    assert np.all(planes[0, 2] == 1) and planes.sum() == 32 * 32


def test_state_round_trip(generator):
    other = build_generator(Z_DIM, rng=np.random.default_rng(99), widths=G_WIDTHS)
    other.load_state(generator.named_state())
    z = noise(2)
    a = forward_generator(generator, z, [2, 7], mode='eval').data
    b = forward_generator(other, z, [2, 7], mode='eval').data
    assert np.array_equal(a, b)


def test_load_state_reports_missing_entries(generator):
    state = generator.named_state()
    del state['bn0.running_mean']
    with pytest.raises(ContractError):
        generator.load_state(state)
