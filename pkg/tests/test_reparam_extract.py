"""Canonical/generalized extraction and trajectory recording."""

import numpy as np
import pytest

import eoslab as el
from eoslab.errors import DegenerateReparamError, DomainError
from eoslab.network_core import output_gradients
from eoslab.reparam_extract import ReparamSpec, TrainingRunSpec

LOGCOSH = el.scalar_loss("log-cosh")
TANH = el.activation("tanh")
LINEAR = el.activation("linear")


class TestCanonical:
    def test_two_layer_linear_closed_form(self):
        params = el.init_xavier([4, 6, 1], LINEAR, 1.5, 2)
        U, v = params.weights
        x = np.zeros(4)
        x[0] = 1.0
        eta = 0.01
        pt = el.canonical(params, x, 0.0, eta)
        Ux = U @ x
        assert pt.p == pytest.approx(float(v @ Ux), rel=1e-12)
        assert pt.q == pytest.approx(2.0 / (eta * float(Ux @ Ux + v @ v)), rel=1e-12)

    def test_definitional_identity(self):
        params = el.init_xavier([5, 8, 1], TANH, 2.0, 9)
        x = np.linspace(-1, 1, 5)
        eta = 0.02
        pt = el.canonical(params, x, 0.3, eta)
        g = output_gradients(params, x[None, :])[0]
        assert pt.q * eta * float(g @ g) / 2.0 == pytest.approx(1.0, rel=1e-12)

    def test_single_neuron_at_origin_matches_reduced_map(self):
        # f = w phi(u x): at x = 0 the gradient is (0, phi(0)=0) in u and
        # phi(u*0) .. only the output weight path survives via phi'(0) = 1
        params = el.MlpParams((np.array([[1.3]]), np.array([2.5])), TANH)
        eta = 0.005
        pt = el.canonical(params, np.array([0.0]), 0.0, eta)
        w = 2.5
        assert pt.q == pytest.approx(2.0 / (eta * w * w), rel=1e-12)

    def test_degenerate_gradient_raises(self):
        params = el.init_xavier([3, 4, 1], LINEAR, 0.0, 0)
        with pytest.raises(DegenerateReparamError):
            el.canonical(params, np.ones(3), 0.0, 0.01)

    def test_extraction_is_read_only(self):
        params = el.init_xavier([3, 4, 1], TANH, 1.0, 4)
        before = [w.copy() for w in params.weights]
        el.canonical(params, np.ones(3), 0.5, 0.01)
        for a, b in zip(before, params.weights):
            np.testing.assert_array_equal(a, b)


class TestGeneralized:
    def test_reduces_to_canonical_at_n_one(self):
        params = el.init_xavier([4, 6, 1], TANH, 1.5, 7)
        batch = el.single_point_batch(4, 0.5)
        eta = 0.01
        a = el.canonical(params, batch.inputs[0], 0.5, eta)
        b = el.generalized(params, batch, eta, el.Aggregator("mean"))
        assert a.p == b.p and a.q == b.q  # bitwise identical

    def test_l2_of_scalar_folds_sign(self):
        params = el.init_xavier([4, 6, 1], TANH, 1.5, 7)
        batch = el.single_point_batch(4, 5.0)  # residual negative
        pt = el.generalized(params, batch, 0.01, el.Aggregator("l2-norm"))
        can = el.canonical(params, batch.inputs[0], 5.0, 0.01)
        assert pt.p == pytest.approx(abs(can.p), rel=1e-14)

    def test_q_matches_hand_built_gram(self):
        params = el.init_xavier([3, 5, 1], LINEAR, 1.0, 11)
        batch = el.gaussian_batch(3, 3, 5)
        eta = 0.02
        Phi = output_gradients(params, batch.inputs)
        G = Phi @ Phi.T
        lam = float(np.linalg.eigvalsh(G)[-1])
        pt = el.generalized(params, batch, eta, el.Aggregator("mean"))
        assert pt.q == pytest.approx(2.0 * 3 / (eta * lam), rel=1e-12)

    def test_unknown_aggregator(self):
        with pytest.raises(DomainError):
            el.Aggregator("median")


class TestExtractTrajectory:
    def test_records_match_canonical_after_each_step(self):
        params = el.init_xavier([4, 8, 1], LINEAR, 3.0, 5)
        batch = el.single_point_batch(4, 0.0)
        eta = 0.01
        run = TrainingRunSpec(params, batch, LOGCOSH, eta, steps=1)
        traj = el.extract_trajectory(run)
        stepped = el.gd_step(params, batch, LOGCOSH, eta)
        expect = el.canonical(stepped, batch.inputs[0], 0.0, eta)
        assert len(traj) == 2
        assert traj.p[1] == expect.p and traj.q[1] == expect.q

    def test_gradient_flow_regime_keeps_q_above_one(self):
        # small init scale: q0 > 1 and stays there
        params = el.init_xavier([10, 64, 1], LINEAR, 1.0, 1)
        batch = el.single_point_batch(10, 1.0)
        run = TrainingRunSpec(params, batch, LOGCOSH, 0.01, steps=400)
        traj = el.extract_trajectory(run)
        assert traj.q[0] > 1.0
        assert np.all(traj.q > 1.0)

    def test_eos_regime_approaches_alignment(self):
        params = el.init_xavier([10, 256, 1], LINEAR, 10.0, 0)
        batch = el.single_point_batch(10, 0.0)
        run = TrainingRunSpec(params, batch, LOGCOSH, 0.01, steps=600)
        traj = el.extract_trajectory(run)
        assert traj.q[0] < 1.0
        assert abs(traj.s[-1] - 1.0) < 0.01

    def test_sharpness_cadence(self):
        params = el.init_xavier([4, 8, 1], LINEAR, 3.0, 5)
        batch = el.single_point_batch(4, 0.0)
        run = TrainingRunSpec(params, batch, LOGCOSH, 0.01, steps=20)
        traj = el.extract_trajectory(run, ReparamSpec(sharpness_every=5))
        sampled = ~np.isnan(traj.sharpness)
        assert np.array_equal(traj.t[sampled], np.array([0, 5, 10, 15, 20]))

    def test_sharpness_at_minimum_ties_to_q(self):
        # at the global minimum: sharpness = l''(0) * 2/(eta q)
        params = el.init_xavier([4, 6, 1], LINEAR, 1.0, 1)
        batch = el.single_point_batch(4, 0.0)
        U, v = params.weights
        x = batch.inputs[0]
        U = U - np.outer(v, x) * (v @ U @ x) / (v @ v)
        params = params.with_weights([U, v])
        eta = 0.01
        pt = el.canonical(params, x, 0.0, eta)
        lam = float(el.sharpness(params, batch, LOGCOSH))
        assert lam == pytest.approx(LOGCOSH.d2(0.0) * 2.0 / (eta * pt.q), rel=1e-9)


class TestAlignmentResidual:
    def test_pinned_trajectory_gives_zero(self, r_logcosh):
        traj = el.Trajectory.from_columns(
            [0, 1, 2], [0.0, 0.0, 0.0], [1.0, 1.0, 1.0], [1.0] * 3, [0.0] * 3,
            eta=0.01, model_tag="linear/log-cosh")
        res = el.alignment_residual(traj, r_logcosh)
        np.testing.assert_array_equal(res, 0.0)

    def test_matches_direct_computation(self, r_logcosh):
        stepper = el.LinearStepper(r_logcosh, 0.02)
        traj = el.simulate(stepper, el.ReparamPoint(1.0, 0.9), 0.02, 200)
        res = el.alignment_residual(traj, r_logcosh)
        direct = np.abs(traj.q / np.array([r_logcosh.eval(p) for p in traj.p]) - 1.0)
        np.testing.assert_allclose(res, direct, rtol=1e-12)
