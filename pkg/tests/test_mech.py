import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hardgap import mech
from hardgap.ca_core import named_rule, pattern_bits
from hardgap.circuits import build_single_block
from hardgap.data import HiddenSet, generate_dataset

PARITY01 = [sum(pattern_bits(p, 1)) % 2 for p in range(8)]


@pytest.fixture(scope="module")
def circuit_case():
    c = build_single_block(150, 11)
    ds = generate_dataset(named_rule("150"), HiddenSet(1, (2,)), width=11, n_samples=300, seed=0)
    return mech.LoadedModel(c.params, c.cfg), ds


def test_polyfit_parity_zero_one_labels():
    c = mech.fit_polynomial_values(PARITY01).coefficients
    assert c["LCR"] == pytest.approx(4) and c["1"] == pytest.approx(0)
    assert all(c[k] == pytest.approx(-2) for k in ("LC", "LR", "CR"))
    assert all(c[k] == pytest.approx(1) for k in ("L", "C", "R"))


def test_polyfit_parity_pm_one_logits():
    c = mech.fit_polynomial_values([2 * v - 1 for v in PARITY01]).coefficients
    assert c["1"] == pytest.approx(-1) and c["LCR"] == pytest.approx(8)
    assert all(c[k] == pytest.approx(2) for k in ("L", "C", "R"))
    assert all(c[k] == pytest.approx(-4) for k in ("LC", "LR", "CR"))


def test_polyfit_constant():
    fit = mech.fit_polynomial_values([3.5] * 8)
    assert fit.coefficients["1"] == pytest.approx(3.5)
    assert all(abs(v) < 1e-12 for k, v in fit.coefficients.items() if k != "1")
    assert not fit.sign_pattern_ok()


@settings(max_examples=50, deadline=None)
@given(vals=st.lists(st.floats(-100, 100), min_size=8, max_size=8))
def test_polyfit_matches_mobius_oracle(vals):
    fit = mech.fit_polynomial_values(vals)
    assert fit.residual < 1e-8
    oracle = mech.mobius_coefficients(vals)
    assert all(abs(fit.coefficients[k] - oracle[k]) < 1e-8 for k in mech.BASIS)


def test_circuit_polyfit_sign_pattern(circuit_case):
    model, _ = circuit_case
    fit = mech.fit_degree3_polynomial(model)
    assert fit.sign_pattern_ok() and fit.coefficients["1"] < 0
    assert all(fit.coefficients[k] > 0 for k in ("L", "C", "R"))


def test_ablation_and_lens_on_circuit(circuit_case):
    model, ds = circuit_case
    assert mech.holdout_accuracy(model, ds) == 1.0
    assert mech.holdout_accuracy(model, ds, ablate=()) == 1.0
    assert mech.layer_ablation(model, ds, 0) == 0.0
    lens = mech.logit_lens(model, ds)
    assert lens["layer0"]["holdout_acc"] == 1.0 and lens["layer0"]["supervised_acc"] == 1.0


def test_input_level_has_eight_patterns(circuit_case):
    model, ds = circuit_case
    d = mech.extract_representations(model, ds, levels=("input",))
    assert np.unique(d.levels["input"], axis=0).shape == (8, 3)
    with pytest.raises(ValueError):
        mech.extract_representations(model, ds, levels=("nowhere",))


def test_level_sweep_on_circuit(circuit_case):
    model, ds = circuit_case
    rows = mech.representation_level_sweep(mech.extract_representations(model, ds))
    acc = {(r["level"], r["method"]): r["accuracy"] for r in rows}
    assert all(acc[("input", m)] == 0.0 for m in ("knn", "gp", "rbf_svm", "rf"))
    assert all(acc[("single_hidden", m)] == 100.0 for m in ("knn", "gp", "rbf_svm", "rf"))


def test_probes_on_circuit(circuit_case):
    model, ds = circuit_case
    d = mech.extract_representations(model, ds, levels=("single_embedding", "single_hidden"), balance_holdout=False)
    assert mech.linear_probe(d, "C", "single_embedding") >= 0.99
    assert abs(mech.linear_probe(d, "XOR", "single_embedding") - 0.5) < 0.08
    assert mech.linear_probe(d, "XOR", "single_hidden") >= 0.95
    assert abs(mech.linear_probe(d, "XOR", "single_hidden", shuffle=True) - 0.5) <= 0.05
    with pytest.raises(ValueError):
        mech.probe_labels(d, "AND")


def test_patching_on_circuit(circuit_case):
    model, ds = circuit_case
    res = {r["site"]: r for r in mech.patching_suite(model, ds, max_rows=100)}
    assert res[None]["patched_acc"] == res[None]["corrupt_acc"] == 0.0
    assert res["embedding"]["patched_acc"] == 1.0 and res["layer0"]["patched_acc"] == 1.0
    with pytest.raises(ValueError):
        mech.activation_patch(model, ds.states[:2, 0], [[1], [2]], "layer9", targets=ds.states[:2, 1])


def test_parity_neurons_constant_input():
    c = build_single_block(150, 9)
    ds = generate_dataset(named_rule("150"), HiddenSet(1, (2,)), width=9, n_samples=5, seed=0)
    ds = dataclasses.replace(ds, states=np.zeros_like(ds.states))
    rows = mech.parity_neurons((c.params, c.cfg), ds)
    assert all(r["gap"] == 0 for r in rows)


def test_run_suite_keys(circuit_case, tmp_path):
    model, ds = circuit_case
    rep = mech.run_suite(model, ds, max_rows=200)
    assert rep["polyfit_sign_ok"] and rep["lens_final"] == 1.0 and rep["holdout_acc"] == 1.0
    mech.write_rows_csv(tmp_path / "p.csv", rep["patching"], "circuit", "patching")
    assert (tmp_path / "p.csv").read_text().startswith("model_id,analysis,")
