import pytest

from kgaudit.dataset import (
    ClassDataset,
    ClassSpec,
    EmptyNegativePool,
    InsufficientClasses,
    InsufficientPositives,
    LabeledExample,
    SchemaVersionMismatch,
    build_dataset,
    content_hash,
    dataset_to_json,
    keyed_sample,
    load_dataset,
    sample_classes,
    sample_examples,
    save_dataset,
)
from kgaudit.rdf import InMemoryGraph, triple

from conftest import EX, INSTANCE_OF, SUBCLASS_OF, client_for, labeled, make_dataset, toy_graph
from oracles import brute_force_extension


def simple_definitions(iri: str, label: str) -> str:
    return f"any entity that counts as a {label} for testing purposes"


class TestKeyedSample:
    def test_deterministic_and_order_independent(self):
        items = [f"{EX}e{i}" for i in range(50)]
        a = keyed_sample(items, 10, seed=42)
        b = keyed_sample(list(reversed(items)), 10, seed=42)
        assert a == b
        assert keyed_sample(items, 10, seed=43) != a

    def test_k_larger_than_population(self):
        assert len(keyed_sample(["a", "b"], 10, seed=1)) == 2

    def test_salt_changes_selection(self):
        items = [f"{EX}e{i}" for i in range(50)]
        assert keyed_sample(items, 5, 1, salt="pos") != keyed_sample(items, 5, 1, salt="neg")


class TestTypes:
    def test_class_spec_requires_distinct_iris(self):
        with pytest.raises(ValueError):
            ClassSpec(class_iri=EX + "c", superclass_iri=EX + "c", label="c", definition="d")

    def test_class_spec_requires_definition(self):
        with pytest.raises(ValueError):
            ClassSpec(class_iri=EX + "c", superclass_iri=EX + "d", label="c", definition="")

    def test_example_gold_vocabulary(self):
        with pytest.raises(ValueError):
            LabeledExample(entity_iri=EX + "e", label="e", description="d", gold="unsure")

    def test_dataset_rejects_overlapping_examples(self):
        dataset = make_dataset()
        with pytest.raises(ValueError):
            ClassDataset(
                spec=dataset.spec,
                positives=dataset.positives,
                negatives=dataset.negatives
                + (
                    LabeledExample(
                        entity_iri=dataset.positives[0].entity_iri,
                        label="dup",
                        description="d",
                        gold="negative",
                    ),
                ),
                sampling_seed=1,
                kg_name="toy",
                created_at="now",
            )

    def test_dataset_rejects_wrong_gold_side(self):
        dataset = make_dataset()
        with pytest.raises(ValueError):
            ClassDataset(
                spec=dataset.spec,
                positives=dataset.negatives,  # gold=negative on the positive side
                negatives=(),
                sampling_seed=1,
                kg_name="toy",
                created_at="now",
            )


class TestSampleClasses:
    def test_eligible_classes_found(self, serve_graph):
        client = client_for(serve_graph(toy_graph()))
        specs = sample_classes(client, n=2, seed=5, definition_for=simple_definitions, min_instances=2)
        pairs = {(s.class_iri, s.superclass_iri) for s in specs}
        assert pairs == {(EX + "widget", EX + "thing"), (EX + "gadget", EX + "widget")}
        for s in specs:
            assert s.definition

    def test_deterministic_given_seed(self, serve_graph):
        client_a = client_for(serve_graph(toy_graph()))
        client_b = client_for(serve_graph(toy_graph()))
        a = sample_classes(client_a, n=2, seed=9, definition_for=simple_definitions, min_instances=2)
        b = sample_classes(client_b, n=2, seed=9, definition_for=simple_definitions, min_instances=2)
        assert a == b

    def test_insufficient_classes(self, serve_graph):
        client = client_for(serve_graph(toy_graph()))
        with pytest.raises(InsufficientClasses):
            sample_classes(client, n=3, seed=5, definition_for=simple_definitions, min_instances=2)

    def test_min_instances_filters(self, serve_graph):
        client = client_for(serve_graph(toy_graph()))
        specs = sample_classes(client, n=1, seed=5, definition_for=simple_definitions, min_instances=5)
        assert specs[0].class_iri == EX + "widget"  # gadget has only 2 instances

    def test_unlabeled_class_is_ineligible(self, serve_graph):
        graph = InMemoryGraph()
        graph.add(triple(EX + "anon", SUBCLASS_OF, EX + "thing"))
        graph.add(triple(EX + "e", INSTANCE_OF, EX + "anon"))
        client = client_for(serve_graph(graph))
        with pytest.raises(InsufficientClasses):
            sample_classes(client, n=1, seed=5, definition_for=simple_definitions, min_instances=1)

    def test_missing_definition_is_ineligible(self, serve_graph):
        client = client_for(serve_graph(toy_graph()))
        with pytest.raises(InsufficientClasses):
            sample_classes(client, n=1, seed=5, definition_for=lambda i, l: None, min_instances=1)


class TestSampleExamples:
    def spec(self) -> ClassSpec:
        return ClassSpec(
            class_iri=EX + "widget",
            superclass_iri=EX + "thing",
            label="widget",
            definition="a tested artifact",
        )

    def test_negatives_come_from_set_difference(self, serve_graph):
        graph = toy_graph()
        client = client_for(serve_graph(graph))
        sampled = sample_examples(client, self.spec(), k=3, seed=11)
        ext_c = brute_force_extension(list(graph.triples), EX + "widget", INSTANCE_OF, SUBCLASS_OF)
        ext_d = brute_force_extension(list(graph.triples), EX + "thing", INSTANCE_OF, SUBCLASS_OF)
        assert set(sampled.positives) <= ext_c
        assert set(sampled.negatives) <= (ext_d - ext_c)
        assert len(sampled.positives) == 3
        assert len(sampled.negatives) == 3
        assert sampled.negative_shortfall == 0

    def test_negative_shortfall_flagged(self, serve_graph):
        client = client_for(serve_graph(toy_graph()))
        # ext(thing) \ ext(widget) = {t1, t2, t3}; ask for 5
        sampled = sample_examples(client, self.spec(), k=5, seed=11)
        assert len(sampled.positives) == 5
        assert len(sampled.negatives) == 3
        assert sampled.negative_shortfall == 2

    def test_empty_negative_pool(self, serve_graph):
        graph = InMemoryGraph()
        graph.add(triple(EX + "c", SUBCLASS_OF, EX + "d"))
        graph.add(triple(EX + "e1", INSTANCE_OF, EX + "c"))
        client = client_for(serve_graph(graph))
        spec = ClassSpec(
            class_iri=EX + "c", superclass_iri=EX + "d", label="c", definition="def"
        )
        with pytest.raises(EmptyNegativePool):
            sample_examples(client, spec, k=1, seed=1)

    def test_insufficient_positives(self, serve_graph):
        client = client_for(serve_graph(toy_graph()))
        with pytest.raises(InsufficientPositives):
            sample_examples(client, self.spec(), k=100, seed=1)

    def test_direct_positives_mode(self, serve_graph):
        client = client_for(serve_graph(toy_graph()))
        sampled = sample_examples(client, self.spec(), k=5, seed=1, positives_from="direct")
        assert set(sampled.positives) <= {EX + f"w{i}" for i in range(1, 6)}


class TestBuildDataset:
    def spec(self) -> ClassSpec:
        return ClassSpec(
            class_iri=EX + "widget",
            superclass_iri=EX + "thing",
            label="widget",
            definition="a tested artifact",
        )

    def test_examples_carry_labels_and_descriptions(self, serve_graph):
        client = client_for(serve_graph(toy_graph()))
        dataset = build_dataset(
            client, self.spec(), k=2, seed=3, describer=simple_definitions, kg_name="toy"
        )
        assert len(dataset.positives) == 2
        assert all(e.description for e in dataset.examples)
        assert all(e.label for e in dataset.examples)
        assert dataset.kg_name == "toy"
        assert dataset.sampler == "sha256-keyed-order-v1"

    def test_failed_verbalization_is_flagged_not_dropped(self, serve_graph):
        client = client_for(serve_graph(toy_graph()))

        def patchy(iri: str, label: str) -> str | None:
            return None if iri.endswith("w1") or iri.endswith("t1") else f"about {label}"

        dataset = build_dataset(
            client, self.spec(), k=5, seed=3, describer=patchy, kg_name="toy"
        )
        flagged = [e for e in dataset.examples if e.description_missing]
        assert flagged  # w1 is always drawn since k covers the whole extension side
        assert all(e.description == "" for e in flagged)
        assert len(dataset.positives) == 5

    def test_minimal_k1_dataset(self, serve_graph):
        client = client_for(serve_graph(toy_graph()))
        dataset = build_dataset(
            client, self.spec(), k=1, seed=3, describer=simple_definitions, kg_name="toy"
        )
        assert len(dataset.examples) == 2

    def test_identical_inputs_identical_datasets(self, serve_graph):
        client_a = client_for(serve_graph(toy_graph()))
        client_b = client_for(serve_graph(toy_graph()))
        a = build_dataset(client_a, self.spec(), k=3, seed=8, describer=simple_definitions, kg_name="toy")
        b = build_dataset(client_b, self.spec(), k=3, seed=8, describer=simple_definitions, kg_name="toy")
        assert content_hash(a) == content_hash(b)


class TestPersistence:
    def test_round_trip_identity(self, tmp_path):
        dataset = make_dataset()
        path = tmp_path / "ds.json"
        save_dataset(dataset, path)
        assert load_dataset(path) == dataset

    def test_empty_negatives_survive_round_trip(self, tmp_path):
        dataset = make_dataset(n_neg=0)
        path = tmp_path / "ds.json"
        save_dataset(dataset, path)
        loaded = load_dataset(path)
        assert loaded.negatives == ()
        assert loaded == dataset

    def test_schema_version_mismatch(self, tmp_path):
        dataset = make_dataset()
        payload = dataset_to_json(dataset)
        payload["schema_version"] = 99
        path = tmp_path / "ds.json"
        import json

        path.write_text(json.dumps(payload))
        with pytest.raises(SchemaVersionMismatch):
            load_dataset(path)

    def test_content_hash_ignores_created_at(self):
        a = make_dataset()
        b = ClassDataset(
            spec=a.spec,
            positives=a.positives,
            negatives=a.negatives,
            sampling_seed=a.sampling_seed,
            kg_name=a.kg_name,
            created_at="2030-01-01T00:00:00+00:00",
        )
        assert content_hash(a) == content_hash(b)
