import math

import numpy as np
import pytest

from app.errors import DomainError
from app.models import MechanismKind, MechanismSpec, QueryDatabasePair, Side
from app.services import divergence
from app.services.data_loader import load_category_catalog, load_mechanism_catalog, load_pairs
from app.services.mechanisms import (
    GEOMETRIC_MAX,
    SymbolDictionary,
    binned_laplace_pmf,
    binned_noisy_max_pmf,
    compatible_pairs,
    dictionary_for,
    draw_outputs,
    exact_output_pmf,
    sample_mechanism,
    validate_pair,
)
from app.services.sampling import make_rng


def spec(kind: str, **kwargs) -> MechanismSpec:
    return MechanismSpec(kind=MechanismKind(kind), epsilon0=kwargs.pop("epsilon0", 0.5), **kwargs)


def pair(name: str) -> QueryDatabasePair:
    return load_category_catalog().get(name)


def test_catalog_ships_every_mechanism_and_category():
    assert set(load_mechanism_catalog().list_ids()) == {kind.value for kind in MechanismKind}
    assert len(load_category_catalog().categories) == 7
    with pytest.raises(KeyError):
        load_mechanism_catalog().get("laplace")


@pytest.mark.parametrize("kind", ["rna-lap", "rna-exp"])
def test_report_noisy_argmax_returns_indices(kind):
    outputs = draw_outputs(spec(kind), pair("One Above"), Side.DPRIME, 2000, make_rng(3))
    assert outputs.min() >= 0 and outputs.max() <= 4
    assert np.bincount(outputs).argmax() == 0


def test_sampling_is_deterministic_per_seed():
    mechanism = spec("rnm-lap")
    first = sample_mechanism(mechanism, pair("X Shape"), Side.D, seed=21)
    assert first == sample_mechanism(mechanism, pair("X Shape"), Side.D, seed=21)
    assert isinstance(first, float)


def test_noiseless_argmax_breaks_ties_on_lowest_index():
    mechanism = spec("rna-lap", epsilon0=float("inf"))
    assert sample_mechanism(mechanism, pair("One Below"), Side.D, seed=0) == 0


def test_sparse_vector_stops_after_bound():
    mechanism = spec("svt", bound=1, threshold=1.0)
    for seed in range(50):
        answers = sample_mechanism(mechanism, pair("Half Half"), Side.DPRIME, seed=seed)
        assert all(isinstance(a, bool) for a in answers)
        assert sum(answers) <= 1
        assert len(answers) <= 5
        if sum(answers) == 1:
            assert answers[-1] is True


def test_unbounded_variants_answer_every_query():
    outputs = draw_outputs(spec("isvt1", threshold=1.0), pair("One Above"), Side.D, 500, make_rng(1))
    assert outputs.shape == (500, 5)
    assert set(np.unique(outputs).tolist()) <= {0, 1}


@pytest.mark.parametrize("kind", ["tgm", "mtgm"])
def test_geometric_outputs_follow_exact_pmf(kind):
    mechanism = spec(kind, delta0=0.2)
    outputs = draw_outputs(mechanism, pair("One Above"), Side.DPRIME, 200_000, make_rng(17))
    assert outputs.min() >= 0 and outputs.max() <= GEOMETRIC_MAX
    empirical = np.bincount(outputs, minlength=GEOMETRIC_MAX + 1) / outputs.size
    assert np.allclose(empirical, exact_output_pmf(mechanism, 2), atol=0.01)


@pytest.mark.parametrize("answer", range(GEOMETRIC_MAX + 1))
def test_exact_pmf_is_normalised(answer):
    for kind in ("tgm", "mtgm"):
        pmf = exact_output_pmf(spec(kind, delta0=0.2), answer)
        assert math.fsum(pmf.tolist()) == pytest.approx(1.0, abs=1e-12)
        assert np.all(pmf > 0)
    assert exact_output_pmf(spec("mtgm", delta0=0.2), answer)[answer] >= 0.2


def test_exact_pmf_rejects_other_mechanisms():
    with pytest.raises(DomainError):
        exact_output_pmf(spec("rna-lap"), 1)
    with pytest.raises(DomainError):
        exact_output_pmf(spec("tgm"), 4)


def test_binned_laplace_mass():
    pmf = binned_laplace_pmf(0.5, 1.0, 0.1, 0.0, 1.0)
    assert math.fsum(pmf.tolist()) == pytest.approx(1.0)
    assert pmf[5] == pytest.approx(0.5 * (1.0 - math.exp(-0.1)))
    assert pmf[0] > pmf[1]


def test_histogram_needs_single_unit_difference():
    with pytest.raises(DomainError):
        validate_pair(spec("histogram"), pair("One Above Rest Below"))
    names = [p.category for p in compatible_pairs(spec("histogram"), load_category_catalog().categories)]
    assert names == ["One Above", "One Below"]


def test_geometric_needs_adjacent_counts():
    far = QueryDatabasePair(category="far", answers_d=[1, 1, 1, 1, 1], answers_dprime=[3, 1, 1, 1, 1])
    with pytest.raises(DomainError):
        sample_mechanism(spec("tgm"), far, Side.D, seed=0)


def test_dictionary_bins_continuous_outputs():
    dictionary = SymbolDictionary(bin_width=0.1)
    ids = dictionary.symbolize(np.array([0.05, 0.15, -0.05, 0.07]))
    assert ids.tolist() == [1, 2, 0, 1]
    assert dictionary.lookup(0.12) == 2
    assert len(dictionary) == 3
    assert dictionary.describe(0) == "[-0.1,0)"


def test_dictionary_projects_histograms_onto_differing_coordinate():
    dictionary = dictionary_for(spec("histogram"), pair("One Above"))
    assert dictionary.coordinates == (0,)
    ids = dictionary.symbolize(np.array([[0.05, 9.0, 1.0, 1.0, 1.0], [0.06, -3.0, 0.0, 2.0, 5.0]]))
    assert ids[0] == ids[1]
    assert dictionary.describe(int(ids[0])) == "([0,0.1))"


def test_discrete_outputs_are_not_binned():
    dictionary = dictionary_for(spec("svt"), pair("One Above"))
    assert dictionary.bin_width is None
    ids = dictionary.symbolize(np.array([[0, 1, -1, -1, -1], [0, 1, -1, -1, -1], [1, -1, -1, -1, -1]]))
    assert ids.tolist() == [0, 0, 1]


def test_ten_query_categories_are_padded():
    padded = load_pairs(["One Above"], query_count=10)[0]
    assert padded.query_count == 10
    assert padded.category == "One Above (10 queries)"
    assert padded.answers_dprime[:2] == [2, 1]
    assert padded.answers_d[5:] == [1] * 5
    validate_pair(spec("histogram"), padded)


def exact_noisy_max_deltas(kind: str, query_count: int, eps: float = 0.5) -> dict:
    mechanism = spec(kind)
    deltas = {}
    for candidate in load_pairs(query_count=query_count):
        d = binned_noisy_max_pmf(mechanism, candidate.answers(Side.D), 0.1, -60.0, 80.0)
        dprime = binned_noisy_max_pmf(mechanism, candidate.answers(Side.DPRIME), 0.1, -60.0, 80.0)
        assert math.fsum(d.tolist()) == pytest.approx(1.0)
        deltas[candidate.category] = max(divergence.d_eps(d, dprime, eps), divergence.d_eps(dprime, d, eps))
    return deltas


@pytest.mark.parametrize("kind", ["rnm-lap", "rnm-exp"])
def test_noisy_max_value_divergence_peaks_on_uniform_shift(kind):
    five = exact_noisy_max_deltas(kind, 5)
    worst = max(five, key=five.get)
    assert worst == "All Above & All Below"
    assert five[worst] == pytest.approx(0.0336, abs=1e-3)
    ten = exact_noisy_max_deltas(kind, 10)
    assert max(ten.values()) < five[worst]
    assert all(name.endswith("(10 queries)") for name in ten)


def test_noisy_max_pmf_rejects_other_mechanisms():
    with pytest.raises(DomainError):
        binned_noisy_max_pmf(spec("rna-lap"), [1, 1], 0.1, -10.0, 10.0)


def test_several_query_counts_are_loaded_together():
    pairs = load_pairs(["One Above"], query_count=[5, 10])
    assert [p.category for p in pairs] == ["One Above", "One Above (10 queries)"]
    assert [p.query_count for p in pairs] == [5, 10]
