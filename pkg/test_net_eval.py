import pytest

from errors import DataValidationError
from net_eval import (
    GoldStandard,
    evaluate_network,
    filter_to_intersection,
    fscore_area,
    load_gold_standard,
    rank_and_truncate,
)

GENES = {"A", "B", "C", "D"}


def _gold(*edges):
    return GoldStandard(frozenset(edges))


def test_area_hand_computed():
    gold = _gold(("A", "B"), ("C", "D"))
    report = fscore_area([("A", "B", 0.9), ("B", "C", 0.8), ("C", "D", 0.7)], gold)
    assert report.area == pytest.approx(0.5 + (2 / 3) * 0.5)
    assert [p.hit for p in report.points] == [True, False, True]
    assert report.points[-1].recall == 1.0


def test_area_perfect_ranking_is_one():
    gold = _gold(("A", "B"), ("C", "D"))
    report = fscore_area([("A", "B", 0.9), ("C", "D", 0.8), ("B", "C", 0.1)], gold)
    assert report.area == pytest.approx(1.0)


def test_area_without_hits_is_zero():
    assert fscore_area([("B", "C", 0.9)], _gold(("A", "B"))).area == 0.0


def test_area_capped_by_recall():
    report = fscore_area([("A", "B", 0.9)], _gold(("A", "B"), ("C", "D")))
    assert report.area == pytest.approx(0.5)


def test_area_requires_gold():
    with pytest.raises(DataValidationError):
        fscore_area([], _gold())


def test_area_depends_only_on_order():
    gold = _gold(("A", "B"), ("C", "D"), ("B", "D"))
    inferred = {("A", "B"): 0.3, ("B", "C"): 0.9, ("C", "D"): 0.5, ("B", "D"): 0.1}
    cubed = {k: v ** 3 for k, v in inferred.items()}
    a = evaluate_network(inferred, gold, GENES).area
    assert evaluate_network(cubed, gold, GENES).area == pytest.approx(a)


def test_non_gold_edge_at_end_or_front():
    gold = _gold(("A", "B"), ("C", "D"))
    base = [("A", "B", 0.9), ("C", "D", 0.5)]
    area = fscore_area(base, gold).area
    assert fscore_area(base + [("D", "A", 0.1)], gold).area == area
    assert fscore_area([("D", "A", 1.0)] + base, gold).area <= area


def test_recall_nondecreasing_and_precision_bounded():
    gold = _gold(("A", "B"), ("C", "D"))
    report = fscore_area([("B", "C", 0.9), ("A", "B", 0.8), ("D", "A", 0.7), ("C", "D", 0.6)], gold)
    recalls = [p.recall for p in report.points]
    assert recalls == sorted(recalls)
    assert all(0.0 <= p.precision <= 1.0 for p in report.points)


def test_rank_ties_are_lexicographic():
    ranked = rank_and_truncate({("B", "A"): 0.5, ("A", "C"): 0.5, ("Z", "Z"): 0.9})
    assert [(a, b) for a, b, _ in ranked] == [("Z", "Z"), ("A", "C"), ("B", "A")]


def test_rank_truncation_and_empty():
    inferred = {("A", "B"): 0.9, ("B", "C"): 0.5, ("C", "D"): 0.1}
    assert len(rank_and_truncate(inferred, 2)) == 2
    assert rank_and_truncate({}) == []
    with pytest.raises(DataValidationError):
        rank_and_truncate(inferred, -1)


def test_filter_all_shared_is_identity():
    inferred = {("A", "B"): 0.9}
    gold = _gold(("A", "B"), ("C", "D"))
    net, filtered = filter_to_intersection(inferred, gold, GENES)
    assert net == inferred and filtered == gold


def test_filter_drops_unexpressed_gold_endpoint():
    gold = _gold(("A", "B"), ("C", "X"))
    _, filtered = filter_to_intersection({}, gold, GENES)
    assert filtered.edges == {("A", "B")}


def test_filter_drops_inferred_edges_outside_gold_genes():
    net, _ = filter_to_intersection({("A", "B"): 0.9, ("C", "D"): 0.4}, _gold(("A", "B")), GENES)
    assert net == {("A", "B"): 0.9}


def test_filter_nothing_to_evaluate():
    with pytest.raises(DataValidationError, match="nothing to evaluate"):
        filter_to_intersection({}, _gold(("X", "Y")), GENES)


def test_undirected_matches_reversed_edges():
    gold = _gold(("A", "B"))
    assert evaluate_network({("B", "A"): 0.9}, gold, GENES).area == 0.0
    assert evaluate_network({("B", "A"): 0.9}, gold, GENES, undirected=True).area == 1.0


def test_gold_header_detected(tmp_path):
    (tmp_path / "g.tsv").write_text("regulator_gene\ttarget_gene\nA\tB\nC\tD\nA\tB\n")
    assert load_gold_standard(tmp_path / "g.tsv").edges == {("A", "B"), ("C", "D")}


@pytest.mark.parametrize("header", ["TF\tTarget", "Source\tTarget", "regulator\ttarget_gene"])
def test_gold_common_header_names_detected(tmp_path, header):
    (tmp_path / "g.tsv").write_text(f"{header}\nA\tB\n")
    assert load_gold_standard(tmp_path / "g.tsv").edges == {("A", "B")}


def test_gold_empty_name_reports_file_line(tmp_path):
    (tmp_path / "g.tsv").write_text("TF\tTarget\nA\tB\nC\t \n")
    with pytest.raises(DataValidationError) as exc:
        load_gold_standard(tmp_path / "g.tsv")
    assert exc.value.line == 3


def test_gold_without_header(tmp_path):
    (tmp_path / "g.tsv").write_text("A\tB\n")
    assert load_gold_standard(tmp_path / "g.tsv").edges == {("A", "B")}


def test_gold_single_column_rejected(tmp_path):
    (tmp_path / "g.tsv").write_text("A\nB\n")
    with pytest.raises(DataValidationError):
        load_gold_standard(tmp_path / "g.tsv")
