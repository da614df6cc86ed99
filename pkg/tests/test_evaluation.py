"""Metric arithmetic and the leave-one-out harness."""

import pytest

from vismine import evaluation as ev
from vismine.corpus import PaperRecord, load_labeled_pool
from vismine.errors import EvaluationError
from vismine.evidence import FigureEvidence
from vismine.gateway import Gateway, KeywordStubBackend, StubRules
from vismine.library import CodedFigure, CodedPaper
from vismine.vocab import default_vocabulary, FrameworkLabels

VOCAB = default_vocabulary()


def counts(tp=0, fp=0, fn=0, tn=0):
    return ev.ConfusionCounts(tp=tp, fp=fp, fn=fn, tn=tn)


class TestMetricArithmetic:
    def test_precision_consensus_row(self):
        assert ev.precision(counts(tp=31, fp=2)) == pytest.approx(0.939, abs=1e-3)

    def test_f1_examples(self):
        assert ev.f1(counts(tp=61, fp=3, fn=44)) == pytest.approx(0.722, abs=1e-3)
        assert ev.f1(counts(tp=73, fp=5, fn=32)) == pytest.approx(0.798, abs=1e-3)

    def test_degenerate_precision_flagged_zero(self):
        zero = counts()
        assert ev.precision(zero) == 0.0
        assert not ev.metric_defined(zero, "precision")

    def test_recall(self):
        assert ev.recall(counts(tp=3, fn=1)) == 0.75
        assert ev.recall(counts()) == 0.0

    def test_f1_harmonic_mean_identity(self):
        c = counts(tp=9, fp=4, fn=2)
        p, r = ev.precision(c), ev.recall(c)
        assert ev.f1(c) == pytest.approx(2 * p * r / (p + r))


class TestMultilabelCounts:
    def test_set_arithmetic(self):
        c = ev.multilabel_counts({"a", "b", "c"}, {"a", "b", "d"}, {"a", "b", "c", "d"})
        assert (c.tp, c.fp, c.fn) == (2, 1, 1)
        assert c.tn is None

    def test_identity(self):
        c = ev.multilabel_counts({"a"}, {"a"}, {"a"})
        assert (c.tp, c.fp, c.fn) == (1, 0, 0)

    def test_empty_prediction(self):
        c = ev.multilabel_counts({"a"}, set(), {"a"})
        assert (c.tp, c.fp, c.fn) == (0, 0, 1)

    def test_outside_vocabulary_rejected(self):
        with pytest.raises(EvaluationError):
            ev.multilabel_counts({"a"}, {"zzz"}, {"a", "b"})


class TestMicroF1:
    def test_micro_f1_reference_rows(self):
        assert ev.micro_f1([counts(tp=106, fp=16, fn=22, tn=None)]) == pytest.approx(
            0.848, abs=1e-3
        )
        assert ev.micro_f1([counts(tp=55, fp=18, fn=18, tn=None)]) == pytest.approx(
            0.753, abs=1e-3
        )

    def test_single_figure(self):
        assert ev.micro_f1([counts(tp=2, fp=1, fn=1)]) == pytest.approx(0.667, abs=1e-3)

    def test_equals_f1_of_summed_counts(self):
        import random

        rng = random.Random(17)
        for _ in range(50):
            parts = [
                counts(tp=rng.randint(0, 5), fp=rng.randint(0, 5), fn=rng.randint(0, 5))
                for _ in range(rng.randint(1, 8))
            ]
            assert ev.micro_f1(parts) == ev.f1(ev.sum_counts(parts))

    def test_all_zero_flagged(self):
        zeros = [counts(), counts()]
        assert ev.micro_f1(zeros) == 0.0
        assert not ev.metric_defined(ev.sum_counts(zeros), "micro_f1")

    def test_empty_list_rejected(self):
        with pytest.raises(EvaluationError):
            ev.micro_f1([])


def tiered_pool(tiers):
    records = []
    assignments = []
    filler = 0
    for paper_id, label, tf in tiers:
        fillers = []
        for _ in range(8 - tf):
            fillers.append(f"filler{filler:03d}")
            filler += 1
        records.append(
            PaperRecord(paper_id=paper_id, title=" ".join(["saliency"] * tf + fillers))
        )
        assignments.append((paper_id, label))
    return load_labeled_pool(records, assignments)


class TestBaseline:
    TARGET = PaperRecord(paper_id="target", title="saliency saliency probe")

    def test_majority_positive(self):
        pool = tiered_pool(
            [("p1", "positive", 3), ("p2", "positive", 2), ("n1", "negative", 1)]
        )
        assert ev.bm25_majority_baseline(self.TARGET, pool, k=3) == "positive"

    def test_majority_negative(self):
        pool = tiered_pool(
            [("n1", "negative", 5), ("n2", "negative", 4), ("n3", "negative", 3),
             ("p1", "positive", 2), ("p2", "positive", 1)]
        )
        assert ev.bm25_majority_baseline(self.TARGET, pool, k=5) == "negative"

    def test_tie_resolves_positive(self):
        pool = tiered_pool([("p1", "positive", 2), ("n1", "negative", 2)])
        assert ev.bm25_majority_baseline(self.TARGET, pool, k=2) == "positive"

    def test_no_neighbors_resolves_positive(self):
        pool = tiered_pool([("p1", "positive", 0), ("n1", "negative", 0)])
        assert ev.bm25_majority_baseline(self.TARGET, pool, k=2) == "positive"


def dual_stub_gateway():
    return Gateway(
        {
            "primary": KeywordStubBackend("primary", StubRules(screen_keywords=("saliency",))),
            "secondary": KeywordStubBackend("secondary", StubRules(screen_keywords=("model",))),
        }
    )


def screening_pool():
    records = [
        PaperRecord(paper_id="A1", title="saliency model alpha view", label="positive"),
        PaperRecord(paper_id="A2", title="saliency model beta view", label="positive"),
        PaperRecord(paper_id="A3", title="saliency model gamma view", label="positive"),
        PaperRecord(paper_id="B1", title="treemap layout delta", label="negative"),
        PaperRecord(paper_id="B2", title="cartogram atlas epsilon", label="negative"),
        PaperRecord(paper_id="B3", title="volume render zeta", label="negative"),
    ]
    return load_labeled_pool(records, [(r.paper_id, r.label) for r in records])


class TestStage1Loo:
    def test_fold_count_matches_pool(self):
        report = ev.run_stage1_loo(
            screening_pool(), dual_stub_gateway(), ["primary", "secondary"], shots=(0,)
        )
        assert report.fold_counts["stage1"] == 6

    def test_hand_traced_counts(self):
        # Stub consensus agrees with every gold label (positives carry both
        # keywords, negatives neither), so all LLM rows are perfect. The
        # BM25 baseline finds neighbors only for positives; negatives get
        # the empty-neighborhood tie -> positive, giving three FPs.
        report = ev.run_stage1_loo(
            screening_pool(), dual_stub_gateway(), ["primary", "secondary"], shots=(0, 6)
        )
        by_key = {(r.method, r.model): r for r in report.rows}
        consensus_row = by_key[("0-shot", "consensus")]
        assert (consensus_row.counts.tp, consensus_row.counts.fp,
                consensus_row.counts.tn, consensus_row.counts.fn) == (3, 0, 3, 0)
        assert consensus_row.score == 1.0
        six_shot = by_key[("6-shot", "consensus")]
        assert (six_shot.counts.tp, six_shot.counts.fp) == (3, 0)
        baseline = by_key[("majority_vote", "bm25")]
        assert (baseline.counts.tp, baseline.counts.fp,
                baseline.counts.tn, baseline.counts.fn) == (3, 3, 0, 0)
        assert baseline.score == pytest.approx(0.5)

    def test_no_leakage(self):
        report = ev.run_stage1_loo(
            screening_pool(), dual_stub_gateway(), ["primary", "secondary"], shots=(0, 6)
        )
        assert ev.find_leakage(report) == []

    def test_too_small_pool_rejected(self):
        records = [PaperRecord(paper_id="only", title="t", label="positive")]
        pool = load_labeled_pool(records, [("only", "positive")])
        with pytest.raises(EvaluationError):
            ev.run_stage1_loo(pool, dual_stub_gateway(), ["primary"])


def figure_gateway():
    rules = StubRules(
        figure_keywords=("accuracy", "gradient"),
        listener_rules=(("accuracy", "output results"), ("gradient", "transient state")),
        data_type_rules=(("accuracy", "one-dimensional quantitative"),),
        vis_type_rules=(("chart", "statistical chart"), ("heatmap", "heatmap")),
        purpose_rules=(("accuracy", "performance evaluation"),),
    )
    return Gateway({"primary": KeywordStubBackend("primary", rules)})


def coded_fixture():
    def gold(paper_id, listeners, data, vis, purpose):
        return FrameworkLabels(
            paper_id=paper_id,
            base_figure_id="Figure 1",
            listeners=listeners,
            data_types=data,
            vis_type=vis,
            vis_purpose=purpose,
            confidences={},
            evidence={},
        )

    papers = [
        CodedPaper(
            record=PaperRecord(paper_id="C1", title="saliency paper one"),
            figures=(
                CodedFigure(
                    "Figure 1", relevant=True,
                    labels=gold("C1", ("output results",), ("one-dimensional quantitative",),
                                "statistical chart", "performance evaluation"),
                ),
                CodedFigure("Figure 2", relevant=False),
            ),
        ),
        CodedPaper(
            record=PaperRecord(paper_id="C2", title="saliency paper two"),
            figures=(
                CodedFigure(
                    "Figure 1", relevant=True,
                    labels=gold("C2", ("transient state", "model structure"),
                                ("multi-dimensional quantitative",), "heatmap", "distribution"),
                ),
                CodedFigure("Figure 2", relevant=False),
            ),
        ),
        CodedPaper(
            record=PaperRecord(paper_id="C3", title="saliency paper three"),
            figures=(
                CodedFigure("Figure 1", relevant=True),
                CodedFigure("Figure 2", relevant=False),
            ),
        ),
    ]
    captions = {
        ("C1", "Figure 1"): "Figure 1: accuracy chart by class for the model.",
        ("C1", "Figure 2"): "Figure 2: flowers photographed outside the venue.",
        ("C2", "Figure 1"): "Figure 1: gradient heatmap across layers shown.",
        ("C2", "Figure 2"): "Figure 2: accuracy sidebar from the appendix.",
        ("C3", "Figure 1"): "Figure 1: training montage without keywords.",
        ("C3", "Figure 2"): "Figure 2: palette options for the interface.",
    }

    def lookup(paper_id, figure_id):
        caption = captions.get((paper_id, figure_id))
        if caption is None:
            return None
        return FigureEvidence(
            paper_id=paper_id, figure_id=figure_id, base_figure_id=figure_id,
            caption=caption, context=(),
        )

    return papers, lookup


class TestStage2Loo:
    def test_hand_traced_counts(self):
        # Stub says relevant iff the caption mentions accuracy or gradient:
        # C1F1 TP, C1F2 quiet, C2F1 TP, C2F2 FP, C3F1 FN, C3F2 quiet.
        papers, lookup = coded_fixture()
        report = ev.run_stage2_loo(papers, lookup, figure_gateway(), "primary", shots=(0, 5))
        for row in report.rows:
            assert (row.counts.tp, row.counts.fp, row.counts.fn) == (2, 1, 1)
            assert row.counts.tn is None
            assert row.score == pytest.approx(2 * 2 / (4 + 1 + 1))
        assert report.fold_counts["stage2"] == 3

    def test_no_leakage(self):
        papers, lookup = coded_fixture()
        report = ev.run_stage2_loo(papers, lookup, figure_gateway(), "primary")
        assert ev.find_leakage(report) == []


class TestStage3Loo:
    def test_hand_traced_per_field_counts(self):
        # C1F1 predictions match gold on all fields. C2F1: listener catches
        # transient state but misses model structure; data falls back to
        # nominal (fp+fn); heatmap matches; purpose falls back to other
        # (fp+fn). C3 has no labeled fields and contributes nothing.
        papers, lookup = coded_fixture()
        report = ev.run_stage3_loo(
            papers, lookup, VOCAB, figure_gateway(), "primary", shots=(0, 10)
        )
        expected = {
            "model_listener": (2, 0, 1),
            "data_type": (1, 1, 1),
            "visualization_type": (2, 0, 0),
            "visualization_purpose": (1, 1, 1),
        }
        assert len(report.rows) == 8  # four fields x two shot settings
        for row in report.rows:
            assert (row.counts.tp, row.counts.fp, row.counts.fn) == expected[row.target]
        by_key = {(r.method, r.target): r for r in report.rows}
        assert by_key[("10-shot", "model_listener")].score == pytest.approx(0.8)
        assert by_key[("10-shot", "visualization_type")].score == 1.0

    def test_no_leakage(self):
        papers, lookup = coded_fixture()
        report = ev.run_stage3_loo(papers, lookup, VOCAB, figure_gateway(), "primary")
        assert ev.find_leakage(report) == []


class TestRunLoo:
    def test_all_stages_combined(self):
        papers, lookup = coded_fixture()
        report = ev.run_loo(
            pool=screening_pool(),
            coded=papers,
            evidence_lookup=lookup,
            vocab=VOCAB,
            gateway=dual_stub_gateway_with_figures(),
            stage1_backends=["primary", "secondary"],
            figure_backend="primary",
            stages=(1, 2, 3),
            stage1_shots=(0,),
            stage2_shots=(0,),
            stage3_shots=(0,),
        )
        assert {r.stage for r in report.rows} == {"stage1", "stage2", "stage3"}
        assert report.fold_counts == {"stage1": 6, "stage2": 3, "stage3": 2}
        assert ev.find_leakage(report) == []

    def test_gateway_required(self):
        with pytest.raises(EvaluationError):
            ev.run_loo(pool=screening_pool(), gateway=None)


def dual_stub_gateway_with_figures():
    figure_rules = StubRules(
        screen_keywords=("saliency",),
        figure_keywords=("accuracy", "gradient"),
        listener_rules=(("accuracy", "output results"), ("gradient", "transient state")),
        data_type_rules=(("accuracy", "one-dimensional quantitative"),),
        vis_type_rules=(("chart", "statistical chart"), ("heatmap", "heatmap")),
        purpose_rules=(("accuracy", "performance evaluation"),),
    )
    return Gateway(
        {
            "primary": KeywordStubBackend("primary", figure_rules),
            "secondary": KeywordStubBackend("secondary", StubRules(screen_keywords=("model",))),
        }
    )


class TestFindLeakage:
    def test_detects_planted_violations(self):
        report = ev.LooReport()
        report.folds.append(
            ev.FoldLog(stage="stage1", method="6-shot", held_out="P9", neighbors=["P9", "P2"])
        )
        report.folds.append(
            ev.FoldLog(stage="stage3", method="10-shot", held_out="P7",
                       exemplars=["P7::Figure 1"])
        )
        violations = ev.find_leakage(report)
        assert len(violations) == 2
