import pytest
from hypothesis import given, strategies as st

from dermflow.config import data_dir
from dermflow.exceptions import NotFoundError, OntologyStructureError, ValidationError
from dermflow.ontology import build_ontology, load_ontology, query_ontology, trigram_similarity, trigrams

TAXONOMY = load_ontology(data_dir() / "taxonomy.json")


def brute_jaccard(a, b):
    def grams(s):
        s = "  " + " ".join(s.casefold().split()) + " "
        return {s[i:i + 3] for i in range(len(s) - 2)}

    ga, gb = grams(a), grams(b)
    return len(ga & gb) / len(ga | gb)


class TestLoad:
    def test_chain_depth(self):
        idx = load_ontology({"name": "root", "children": [{"name": "A", "children": [{"name": "B"}]}]})
        assert idx.lookup("b").depth == 2
        assert [n.name for n in idx.lookup("B").path()] == ["root", "A", "B"]

    def test_cycle(self):
        recs = [{"id": "r", "name": "root", "parent": None},
                {"id": "a", "name": "A", "parent": "b"},
                {"id": "b", "name": "B", "parent": "a"}]
        with pytest.raises(OntologyStructureError, match="cycle"):
            build_ontology(recs)

    def test_casefold_duplicate(self):
        doc = {"name": "root", "children": [{"name": "Eczema"}, {"name": "eczema", "id": "e2"}]}
        with pytest.raises(OntologyStructureError, match="duplicate"):
            load_ontology(doc)

    def test_alias_clash(self):
        doc = {"name": "root", "children": [{"name": "A", "aliases": ["x"]}, {"name": "B", "aliases": ["X"]}]}
        with pytest.raises(OntologyStructureError):
            load_ontology(doc)

    def test_duplicate_id(self):
        recs = [{"id": "r", "name": "root", "parent": None}, {"id": "r", "name": "other", "parent": None}]
        with pytest.raises(OntologyStructureError):
            build_ontology(recs)

    def test_unknown_parent_and_two_roots(self):
        with pytest.raises(OntologyStructureError, match="unknown parent"):
            build_ontology([{"id": "r", "name": "root", "parent": None}, {"id": "a", "name": "A", "parent": "zz"}])
        with pytest.raises(OntologyStructureError, match="single root"):
            build_ontology([{"id": "r", "name": "root", "parent": None}, {"id": "a", "name": "A", "parent": None}])

    def test_json_text(self):
        assert len(load_ontology('{"name": "root", "children": [{"name": "a"}]}')) == 2


class TestFixtureTaxonomy:
    def test_size(self, ontology):
        assert 45 <= len(ontology) <= 55
        assert ontology.root.name == "skin disease"
        for node in ontology.nodes:
            if node is not ontology.root:
                assert node.parent is not None and node in node.parent.children

    def test_hierarchy(self, ontology):
        assert query_ontology("hierarchy", "granuloma annulare", ontology) == [
            "skin disease", "inflammatory", "granulomatous", "granuloma annulare"]

    def test_children(self, ontology):
        assert query_ontology("children", "granulomatous", ontology) == [
            "granuloma annulare", "sarcoidosis", "necrobiosis lipoidica"]
        assert query_ontology("children", "melanoma", ontology) == []

    def test_siblings(self, ontology):
        assert query_ontology("siblings", "eczema", ontology) == ["contact dermatitis", "seborrheic dermatitis"]
        assert query_ontology("siblings", "urticaria", ontology) == []  # only child
        assert query_ontology("siblings", "skin disease", ontology) == []

    def test_alias_resolution(self, ontology):
        payload = ontology.query("hierarchy", "GA")
        assert payload["name"] == "granuloma annulare" and payload["match_score"] == 1.0
        assert ontology.canonical("Atopic Dermatitis") == "eczema"
        assert ontology.canonical("not a disease") == "not a disease"

    def test_typo_search(self, ontology):
        hits = query_ontology("search", "granuloma anulare", ontology)
        assert hits[0][0] == "granuloma annulare"
        assert hits[0][1] >= 0.7
        assert hits[0][1] == pytest.approx(brute_jaccard("granuloma anulare", "granuloma annulare"))
        assert [s for _, s in hits] == sorted((s for _, s in hits), reverse=True)

    def test_typo_hierarchy_uses_fuzzy(self, ontology):
        payload = ontology.query("hierarchy", "granuloma anulare")
        assert payload["results"][-1] == "granuloma annulare"
        assert payload["match_score"] == pytest.approx(trigram_similarity("granuloma anulare", "granuloma annulare"))

    def test_exact_casefold(self, ontology):
        assert query_ontology("search", "MELANOMA", ontology)[0] == ("melanoma", 1.0)

    def test_no_match(self, ontology):
        assert query_ontology("search", "xyzzy", ontology) == []
        with pytest.raises(NotFoundError) as err:
            ontology.query("children", "xyzzy")
        assert len(err.value.candidates) <= 3

    def test_bad_mode(self, ontology):
        with pytest.raises(ValidationError):
            ontology.query("cousins", "eczema")

    def test_search_matches_brute_force(self, ontology):
        for q in ["psoriasis", "tinea", "nevus blue", "carcinoma", "herpes", "acne"]:
            expected = []
            for node in ontology.nodes:
                s = max(brute_jaccard(q, f) for f in [node.name, *node.aliases])
                if s >= 0.4:
                    expected.append((node.name, s))
            expected.sort(key=lambda p: (-p[1], p[0]))
            got = query_ontology("search", q, ontology)
            assert [n for n, _ in got] == [n for n, _ in expected]
            assert [s for _, s in got] == pytest.approx([s for _, s in expected])


@given(st.text(max_size=20), st.text(max_size=20))
def test_similarity_symmetric_and_bounded(a, b):
    s = trigram_similarity(a, b)
    assert s == trigram_similarity(b, a)
    assert 0.0 <= s <= 1.0


@given(st.text(min_size=1, max_size=20))
def test_self_similarity(a):
    assert trigram_similarity(a, a) == 1.0
    assert trigrams(a) == trigrams(a.casefold())


@given(st.sampled_from(["eczema", "psoriasis", "melanoma", "vitiligo", "acne", "nevus", "granulomatous"]))
def test_siblings_never_contain_self(name):
    node, _ = TAXONOMY.resolve(name)
    assert node.name not in query_ontology("siblings", name, TAXONOMY)
