import numpy as np
import pytest

from sacebart.data import ClusterRecord, IndividualRecord, TrialDataset
from sacebart.estimands import (
    always_survivor_probabilities,
    compute_csace,
    compute_sace,
    format_estimate,
    likely_always_survivors,
    stratum_proportions,
    summarize,
    summary_text,
    write_csace_csv,
)
from sacebart.gibbs import PosteriorStore

from _oracles import equal_tailed_interval_sorted

NEVER, PROT, ALWAYS = 0, 2, 3


def make_store(labels, yhat1=None, yhat0=None):
    labels = np.asarray(labels, dtype=np.int8)
    D, n = labels.shape
    always = labels == ALWAYS
    if yhat1 is None:
        yhat1 = np.where(always, 1.0, np.nan)
    if yhat0 is None:
        yhat0 = np.where(always, 0.0, np.nan)
    counts = np.column_stack([
        (labels == NEVER).sum(axis=1),
        (labels == PROT).sum(axis=1),
        (labels == ALWAYS).sum(axis=1)])
    return PosteriorStore(
        labels=labels,
        yhat1=np.asarray(yhat1, dtype=np.float32),
        yhat0=np.asarray(yhat0, dtype=np.float32),
        stratum_counts=counts,
        resid_vars=np.ones((D, 3)),
        intercept_vars=np.ones((D, 5)),
        chain_id=np.zeros(D, dtype=np.int16),
        loglik=np.zeros((1, D)),
        chain_labels=(0,),
        n_iter=D, burn_in=0, thin=1,
    )


def tiny_dataset(n=4):
    clusters = [ClusterRecord("t", 1, n // 2), ClusterRecord("c", 0, n - n // 2)]
    individuals = []
    for i in range(n // 2):
        individuals.append(IndividualRecord("t", (float(i),), 1, 1, 1, 1.0))
    for i in range(n - n // 2):
        individuals.append(IndividualRecord("c", (float(i),), 1, 1, 1, 1.0))
    return TrialDataset(clusters, individuals, ["x"])


class TestComputeSace:
    def test_identical_counterfactuals_give_zero_effect(self):
        labels = np.full((10, 4), ALWAYS)
        yhat1 = np.full((10, 4), 3.3, dtype=np.float32)
        est = compute_sace(make_store(labels, yhat1, yhat1))
        assert est.mean == 0.0
        assert est.cri == (0.0, 0.0)

    def test_within_draw_average_then_across_draws(self):
        labels = np.array([[ALWAYS, ALWAYS, NEVER],
                           [ALWAYS, NEVER, NEVER]], dtype=np.int8)
        yhat1 = np.array([[2.0, 4.0, np.nan], [6.0, np.nan, np.nan]])
        yhat0 = np.zeros((2, 3))
        yhat0[labels != ALWAYS] = np.nan
        est = compute_sace(make_store(labels, yhat1, yhat0))
        # draw means: (2+4)/2 = 3 and 6 -> posterior mean 4.5
        assert est.mean == pytest.approx(4.5)
        assert est.n_draws_used == 2

    def test_zero_always_survivor_draws_skipped_and_counted(self):
        labels = np.array([[ALWAYS, PROT], [NEVER, PROT]], dtype=np.int8)
        est = compute_sace(make_store(labels))
        assert est.n_draws_used == 1
        assert est.n_draws_skipped == 1

    def test_weighted_identity_with_csace(self):
        rng = np.random.default_rng(0)
        D, n = 200, 30
        labels = rng.choice([NEVER, PROT, ALWAYS], size=(D, n),
                            p=[0.2, 0.1, 0.7]).astype(np.int8)
        labels[:, 0] = ALWAYS  # ensure no empty draw
        always = labels == ALWAYS
        yhat1 = np.where(always, rng.normal(2.0, 1.0, (D, n)), np.nan)
        yhat0 = np.where(always, rng.normal(0.0, 1.0, (D, n)), np.nan)
        store = make_store(labels, yhat1, yhat0)
        est = compute_sace(store)
        # independent reconstruction: weight each (draw, individual) pair
        # by that draw's membership count
        delta = store.yhat1.astype(float) - store.yhat0.astype(float)
        counts = np.isfinite(delta).sum(axis=1).astype(float)
        acc = 0.0
        for i in range(n):
            col = delta[:, i]
            ok = np.isfinite(col)
            acc += float((col[ok] / counts[ok]).sum())
        assert est.mean == pytest.approx(acc / D, abs=1e-9)

    def test_format_reference(self):
        assert format_estimate(-0.568, -3.580, 2.532) == \
            "-0.568 [-3.580, 2.532]"


class TestComputeCsace:
    def test_individual_never_always_absent(self):
        labels = np.array([[ALWAYS, NEVER], [ALWAYS, PROT]], dtype=np.int8)
        table = compute_csace(make_store(labels))
        assert table.individual.tolist() == [0]

    def test_per_individual_means(self):
        labels = np.full((4, 2), ALWAYS, dtype=np.int8)
        yhat1 = np.array([[1.0, 5.0]] * 4)
        yhat0 = np.array([[0.0, 1.0]] * 4)
        table = compute_csace(make_store(labels, yhat1, yhat0))
        assert table.mean.tolist() == [1.0, 4.0]
        assert table.n_draws.tolist() == [4, 4]

    def test_percentiles_match_sorted_oracle(self):
        rng = np.random.default_rng(1)
        D = 400
        labels = np.full((D, 1), ALWAYS, dtype=np.int8)
        draws = rng.normal(1.0, 2.0, (D, 1))
        table = compute_csace(make_store(labels, draws, np.zeros((D, 1))))
        lo, hi = equal_tailed_interval_sorted(draws[:, 0].astype(np.float32)
                                              .astype(float))
        assert table.cri_lo[0] == pytest.approx(lo, abs=1e-9)
        assert table.cri_hi[0] == pytest.approx(hi, abs=1e-9)


class TestStratumProportions:
    def test_degenerate_all_always(self):
        labels = np.full((6, 5), ALWAYS, dtype=np.int8)
        props = stratum_proportions(make_store(labels))
        assert props["always_survivor"] == (1.0, 1.0, 1.0)
        assert props["never_survivor"] == (0.0, 0.0, 0.0)
        assert props["protected"] == (0.0, 0.0, 0.0)

    def test_fractions_average(self):
        labels = np.array([[ALWAYS, ALWAYS, NEVER, PROT],
                           [ALWAYS, NEVER, NEVER, PROT]], dtype=np.int8)
        props = stratum_proportions(make_store(labels))
        assert props["always_survivor"][0] == pytest.approx(0.375)
        assert props["never_survivor"][0] == pytest.approx(0.375)
        assert props["protected"][0] == pytest.approx(0.25)

    def test_intervals_inside_unit_range(self):
        rng = np.random.default_rng(2)
        labels = rng.choice([NEVER, PROT, ALWAYS], size=(50, 20),
                            p=[0.3, 0.2, 0.5]).astype(np.int8)
        labels[:, 0] = ALWAYS
        for mean, lo, hi in stratum_proportions(make_store(labels)).values():
            assert 0.0 <= lo <= mean <= hi <= 1.0


class TestLikelyAlwaysSurvivors:
    def test_union_rule(self):
        dataset = tiny_dataset(4)
        # columns: two treated, two control; all observed survivors
        labels = np.tile([ALWAYS, PROT, ALWAYS, NEVER], (10, 1)).astype(np.int8)
        labels[:2, 1] = ALWAYS   # treated #1 always-survivor in 2/10 draws
        store = make_store(labels)
        flags = likely_always_survivors(store, dataset, threshold=0.8)
        # treated always-survivor: prob 1 -> flagged by threshold
        assert flags[0]
        # treated with prob 0.2 -> not flagged
        assert not flags[1]
        # control observed survivors flagged regardless of probability
        assert flags[2] and flags[3]

    def test_threshold_boundaries(self):
        dataset = tiny_dataset(4)
        labels = np.full((100, 4), PROT, dtype=np.int8)
        labels[:81, 0] = ALWAYS   # prob 0.81
        labels[:79, 1] = ALWAYS   # prob 0.79
        labels[:50, 2] = ALWAYS
        labels[:99, 3] = ALWAYS
        store = make_store(labels)
        flags = likely_always_survivors(store, dataset, threshold=0.8)
        assert flags[0]
        assert not flags[1]

    def test_monotone_in_threshold_for_treated(self):
        dataset = tiny_dataset(4)
        rng = np.random.default_rng(3)
        labels = rng.choice([PROT, ALWAYS], size=(100, 4)).astype(np.int8)
        store = make_store(labels)
        treated = dataset.z_individual == 1
        prev = None
        for threshold in (0.2, 0.5, 0.8, 0.95):
            flags = likely_always_survivors(store, dataset, threshold)
            count = int(flags[treated].sum())
            if prev is not None:
                assert count <= prev
            prev = count


class TestSummaryOutputs:
    def test_summary_block_layout(self):
        dataset = tiny_dataset(4)
        labels = np.full((20, 4), ALWAYS, dtype=np.int8)
        store = make_store(labels)
        text = summary_text(summarize(store, dataset))
        lines = text.strip().splitlines()
        assert lines[1].startswith("proportion_always_survivors\t")
        assert lines[2].startswith("proportion_protected\t")
        assert lines[3].startswith("proportion_never_survivors\t")
        assert lines[4].startswith("sace\t")

    def test_summary_invariants_validate(self):
        dataset = tiny_dataset(4)
        rng = np.random.default_rng(4)
        labels = rng.choice([NEVER, PROT, ALWAYS], size=(60, 4),
                            p=[0.25, 0.25, 0.5]).astype(np.int8)
        labels[:, 0] = ALWAYS
        summary = summarize(make_store(labels), dataset)
        total = sum(v[0] for v in summary.stratum_props.values())
        assert total == pytest.approx(1.0, abs=1e-9)

    def test_csace_csv_columns(self, tmp_path):
        dataset = tiny_dataset(4)
        labels = np.full((10, 4), ALWAYS, dtype=np.int8)
        labels[:, 3] = NEVER
        summary = summarize(make_store(labels), dataset)
        path = tmp_path / "csace.csv"
        write_csace_csv(path, summary)
        rows = path.read_text().strip().splitlines()
        assert rows[0] == \
            "individual,always_survivor_prob,csace_mean,cri_lo,cri_hi,flagged"
        assert len(rows) == 5
        # individual 3 was never an always-survivor: empty effect fields
        assert rows[4].split(",")[2] == ""

    def test_always_survivor_probabilities(self):
        labels = np.array([[ALWAYS, PROT], [ALWAYS, ALWAYS]], dtype=np.int8)
        probs = always_survivor_probabilities(make_store(labels))
        assert probs.tolist() == [1.0, 0.5]


@pytest.fixture(scope="module")
def hetero_fit():
    from sacebart.dgp import generate, preset_heterogeneous
    from sacebart.gibbs import GibbsSampler, SamplerConfig
    dataset, truth = generate(preset_heterogeneous(seed=31))
    cfg = SamplerConfig(n_iter=800, burn_in=400, n_chains=1, seed=77,
                        k_trees=50)
    return dataset, truth, GibbsSampler(dataset, cfg).run()


@pytest.fixture(scope="module")
def constant_fit():
    from sacebart.dgp import generate, preset_constant_effect
    from sacebart.gibbs import GibbsSampler, SamplerConfig
    dataset, truth = generate(preset_constant_effect(seed=32, tau=5.0))
    cfg = SamplerConfig(n_iter=800, burn_in=400, n_chains=1, seed=78,
                        k_trees=50)
    return dataset, truth, GibbsSampler(dataset, cfg).run()


class TestCsaceRecoveryDeskScale:
    """Simulation-oracle checks of the CSACE summaries on small fits."""

    def test_step_effect_separates_groups(self, hetero_fit):
        # truth: effect 4 * 1[deprivation > 15] among always-survivors
        dataset, truth, store = hetero_fit
        table = compute_csace(store)
        dep = dataset.covariate_matrix[
            table.individual, list(dataset.covariate_names).index("deprivation")]
        high = table.mean[dep > 15.0]
        low = table.mean[dep <= 15.0]
        assert high.size > 50 and low.size > 50
        assert 2.5 <= high.mean() - low.mean() <= 5.5

    def test_homogeneous_effect_keeps_csace_tight(self, constant_fit):
        # common effect: individual CSACE means cluster around it with
        # spread well below one outcome SD (10)
        dataset, truth, store = constant_fit
        table = compute_csace(store)
        assert table.mean.std() < 10.0
        assert table.mean.mean() == pytest.approx(5.0, abs=2.5)
