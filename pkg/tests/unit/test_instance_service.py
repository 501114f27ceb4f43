import json

import numpy as np
import pytest

from app.core.exceptions import InstanceParseError, InstanceValidationError
from app.services.instance_service import (
    InstanceService,
    canonical_hash,
    instance_service,
    load_instance,
    save_instance,
    validate_instance,
)
from tests.fixtures.mock_files import write_json, write_returns_csv, write_text
from tests.fixtures.sample_data import INVALID_DOCUMENTS, T1_DOCUMENT, t1_instance


class TestInstanceParsing:
    """Unit tests for reading instance documents."""

    @pytest.mark.unit
    def test_parse_t1_document(self, t1):
        instance = instance_service.parse_instance(json.dumps(T1_DOCUMENT))
        assert instance == t1
        assert instance.m == 1

    @pytest.mark.unit
    def test_infinity_tokens(self):
        doc = {**T1_DOCUMENT, "region": {"bounds": {"l": ["-inf"], "u": ["+infinity"]}}}
        instance = instance_service.parse_instance(json.dumps(doc))
        assert instance.region.lower[0] == -np.inf
        assert instance.region.upper[0] == np.inf

    @pytest.mark.unit
    def test_malformed_json(self):
        with pytest.raises(InstanceParseError):
            instance_service.parse_instance("{not json")

    @pytest.mark.unit
    def test_schema_mismatch_lists_paths(self):
        doc = {key: value for key, value in T1_DOCUMENT.items() if key != "risk"}
        with pytest.raises(InstanceParseError) as exc_info:
            instance_service.parse_instance(json.dumps(doc))
        assert any(finding.startswith("risk") for finding in exc_info.value.details["findings"])

    @pytest.mark.unit
    def test_ragged_pieces(self):
        doc = json.loads(json.dumps(T1_DOCUMENT))
        doc["scenarios"]["pieces"][2].append({"lin": [1.0], "offset": 0.0})
        with pytest.raises(InstanceValidationError) as exc_info:
            instance_service.parse_instance(json.dumps(doc))
        assert exc_info.value.findings[0].path == "scenarios.pieces"

    @pytest.mark.unit
    def test_wrong_vector_length(self):
        doc = {**T1_DOCUMENT, "objective": {"c": [1.0, 2.0]}}
        with pytest.raises(InstanceValidationError) as exc_info:
            instance_service.parse_instance(json.dumps(doc))
        assert "objective.c must have 1 entries" in exc_info.value.details["findings"][0]


class TestInstanceValidation:
    """Unit tests for invariant checks and the phase-one program."""

    @pytest.mark.unit
    def test_valid_instance_has_no_findings(self, t1, example1):
        assert validate_instance(t1).is_empty
        assert validate_instance(example1).is_empty

    @pytest.mark.unit
    @pytest.mark.parametrize("name", sorted(INVALID_DOCUMENTS))
    def test_invalid_documents_are_reported(self, name, temp_dir):
        doc, expected = INVALID_DOCUMENTS[name]
        path = write_json(temp_dir, f"{name}.json", doc)
        with pytest.raises(InstanceValidationError) as exc_info:
            load_instance(path)
        messages = [str(f) for f in exc_info.value.findings]
        assert any(expected in message for message in messages), messages

    @pytest.mark.unit
    def test_findings_are_sorted_by_path(self):
        doc = {
            **T1_DOCUMENT,
            "objective": {"Q": [[-1.0]], "c": [-1.0]},
            "region": {"bounds": {"l": [1.0], "u": [0.0]}},
        }
        report = validate_instance(instance_service.parse_instance(json.dumps(doc)))
        paths = [f.path for f in report.findings]
        assert paths == sorted(paths)
        assert len(paths) == 2

    @pytest.mark.unit
    def test_phase_one_tau(self, t1):
        assert instance_service.phase_one(t1.region) == pytest.approx(0.5)

    @pytest.mark.unit
    def test_psd_shift_tolerates_round_off(self):
        service = InstanceService()
        assert service._psd_finding(np.array([[1.0, 1.0], [1.0, 1.0]]) - 1e-13 * np.eye(2)) is None


class TestInstanceFiles:
    """Unit tests for saving, loading, hashing and CSV import."""

    @pytest.mark.unit
    def test_save_then_load(self, t1, temp_dir):
        path = save_instance(t1, f"{temp_dir}/nested/t1.json")
        assert load_instance(path) == t1

    @pytest.mark.unit
    def test_missing_file(self, temp_dir):
        with pytest.raises(InstanceParseError):
            load_instance(f"{temp_dir}/absent.json")

    @pytest.mark.unit
    def test_canonical_hash_is_stable(self, t1):
        assert canonical_hash(t1) == canonical_hash(t1_instance())
        assert canonical_hash(t1) != canonical_hash(t1_instance(alpha=0.1))
        assert len(canonical_hash(t1)) == 64

    @pytest.mark.unit
    def test_canonical_text_sorts_keys(self, t1):
        text = instance_service.canonical_text(t1)
        assert text.index('"d"') < text.index('"name"') < text.index('"risk"')

    @pytest.mark.unit
    def test_import_scenario_csv_drops_non_numeric_columns(self, temp_dir):
        path = write_returns_csv(temp_dir, S=12, n=3)
        returns = instance_service.import_scenario_csv(path)
        assert returns.shape == (12, 3)

    @pytest.mark.unit
    def test_import_scenario_csv_rejects_gaps(self, temp_dir):
        path = write_text(temp_dir, "gaps.csv", "a,b\n0.1,0.2\n0.3,\n")
        with pytest.raises(InstanceParseError):
            instance_service.import_scenario_csv(path)

    @pytest.mark.unit
    def test_resolve_reference_names(self, t1, t1_file):
        assert instance_service.resolve_instance("t1") == t1
        assert instance_service.resolve_instance(t1_file) == t1
        assert instance_service.resolve_instance(t1) is t1
