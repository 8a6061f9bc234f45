import io

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gpdtail.design import (Exceedances, IndividualRecord, ModelSpec, contingency_summary,
                            decode_profile, encode_profile, load_records, parse_schema,
                            resolve_references, to_exceedances, write_records)
from gpdtail.errors import DataError, UnknownCategoryError

HEADER = "entry_age,exit_age,event,civ,edu,hht,org,sex"


def _csv(*rows):
    return [HEADER, *rows]


class TestLoadRecords:
    def test_parse_row(self, study_schema):
        (r,) = load_records(_csv("90.0,101.3,1,widowed,primary,collective,native,female"),
                            study_schema)
        assert r.entry_age == 90.0 and r.exit_age == 101.3 and r.event
        ex = to_exceedances([r], ModelSpec(100, study_schema))
        assert ex.y[0] == pytest.approx(1.3)
        assert ex.a[0] == 0.0

    def test_exit_before_entry_rejected_with_row(self, study_schema):
        with pytest.raises(DataError, match="row 3"):
            load_records(_csv("90,101,1,widowed,primary,collective,native,female",
                              "99,98,0,widowed,primary,collective,native,female"), study_schema)

    def test_truncated_censored(self, study_schema):
        recs = load_records(_csv("102.4,104.0,0,widowed,primary,collective,native,female"),
                            study_schema)
        ex = to_exceedances(recs, ModelSpec(100, study_schema))
        assert ex.a[0] == pytest.approx(2.4)
        assert ex.y[0] == pytest.approx(4.0)
        assert not ex.event[0]

    def test_malformed_number(self, study_schema):
        with pytest.raises(DataError, match="row 2: malformed"):
            load_records(_csv("ninety,101,1,widowed,primary,collective,native,female"),
                         study_schema)

    def test_unknown_category(self, study_schema):
        with pytest.raises(UnknownCategoryError) as info:
            load_records(_csv("90,101,1,widowed,primary,castle,native,female"), study_schema)
        assert info.value.covariate == "hht" and info.value.label == "castle"
        assert info.value.row == 2

    def test_missing_column(self, study_schema):
        with pytest.raises(DataError, match="missing column"):
            load_records(["entry_age,event,civ", "90,1,widowed"])
        with pytest.raises(DataError, match="missing covariate"):
            load_records(["entry_age,exit_age,event,civ", "90,101,1,widowed"], study_schema)

    def test_bad_event(self, study_schema):
        with pytest.raises(DataError, match="event"):
            load_records(_csv("90,101,2,widowed,primary,collective,native,female"), study_schema)

    def test_missing_label_rejected(self, study_schema):
        with pytest.raises(DataError, match="missing label"):
            load_records(_csv("90,101,1,widowed,,collective,native,female"), study_schema)

    def test_roundtrip_through_writer(self, study_schema):
        recs = [IndividualRecord(100.0 + i / 7, 101.0 + i / 3, i % 2 == 0,
                                 dict(civ="widowed", edu="primary", hht="single", org="native",
                                      sex="male"), period=2000 + i)
                for i in range(5)]
        buf = io.StringIO()
        write_records(recs, buf, study_schema.names)
        buf.seek(0)
        back = load_records(buf, study_schema)
        assert [(r.entry_age, r.exit_age, r.event, r.period) for r in back] == \
            [(r.entry_age, r.exit_age, r.event, r.period) for r in recs]


class TestSchema:
    def test_parse(self):
        s = parse_schema("sex = female*,male\n# comment\nhht = a,b*,c\n")
        assert s.names == ("sex", "hht")
        assert s["hht"].reference == "b"
        assert s.columns == ("intercept", "sex:male", "hht:a", "hht:c")

    def test_roundtrip_text(self, study_schema):
        assert parse_schema(study_schema.to_text()) == study_schema

    @pytest.mark.parametrize("text", ["sex = a*,b*", "sex = a,a", "sex a,b", "sex = A,b"])
    def test_invalid(self, text):
        with pytest.raises(DataError):
            parse_schema(text)

    def test_reference_defaults_to_max_exposure(self):
        schema = parse_schema("sex = female,male")
        recs = [IndividualRecord(100, 103, True, {"sex": "male"}),
                IndividualRecord(100, 101, True, {"sex": "female"}),
                IndividualRecord(100, 101.5, True, {"sex": "female"})]
        assert resolve_references(schema, recs, 100)["sex"].reference == "male"
        # counted above the threshold only
        assert resolve_references(schema, recs, 102.5)["sex"].reference == "male"


class TestExceedances:
    @pytest.mark.parametrize("entry,exit_,expected", [
        (90, 99.5, None), (90, 101, (0.0, 1.0)), (103, 105.2, (3.0, 5.2)), (90, 100.0, None)])
    def test_examples(self, study_schema, entry, exit_, expected):
        rec = IndividualRecord(entry, exit_, True, dict(
            civ="widowed", edu="primary", hht="collective", org="native", sex="female"))
        ex = to_exceedances([rec], ModelSpec(100, study_schema))
        if expected is None:
            assert len(ex) == 0 and ex.n_dropped == 1
        else:
            assert (ex.a[0], ex.y[0]) == pytest.approx(expected)

    def test_conservation_and_invariants(self, small_cfg):
        from gpdtail.simulate import simulate_population
        recs = simulate_population(small_cfg)
        for u in (99.0, 100.5, 102.0):
            ex = to_exceedances(recs, ModelSpec(u, small_cfg.schema))
            assert len(ex) + ex.n_dropped == len(recs)
            assert np.all(ex.y > 0) and np.all(ex.a < ex.y) and np.all(ex.a >= 0)
            assert set(np.unique(ex.Z)) <= {0.0, 1.0}

    def test_container_rejects_bad_rows(self):
        with pytest.raises(ValueError):
            Exceedances([1.0], [1.0], [True], [[1.0]])
        with pytest.raises(ValueError):
            Exceedances([0.0], [0.0], [True], [[1.0]])

    def test_list_view(self):
        ex = Exceedances([1.0, 2.0], [0.0, 0.5], [True, False], [[1, 0], [1, 1]])
        items = list(ex)
        assert items[1].a == 0.5 and not items[1].event
        back = Exceedances.from_list(items)
        np.testing.assert_array_equal(back.Z, ex.Z)


class TestEncoding:
    def test_reference_profile(self, study_schema):
        row = encode_profile(study_schema.reference_profile(), study_schema)
        assert row[0] == 1 and not row[1:].any()

    def test_id9(self, study_schema):
        row = encode_profile(dict(civ="widowed", edu="tertiary", hht="single", org="native",
                                  sex="female"), study_schema)
        set_cols = {study_schema.columns[j] for j in np.flatnonzero(row[1:]) + 1}
        assert set_cols == {"edu:tertiary", "hht:single"}

    def test_row_length(self, study_schema):
        assert study_schema.n_columns == 1 + 3 + 3 + 4 + 2 + 1
        assert len(study_schema.columns) == study_schema.n_columns

    def test_unknown_label(self, study_schema):
        prof = dict(study_schema.reference_profile(), hht="castle")
        with pytest.raises(UnknownCategoryError):
            encode_profile(prof, study_schema)

    def test_injective_and_roundtrip(self, study_schema):
        rows = {}
        for prof in study_schema.profiles():
            row = encode_profile(prof, study_schema)
            assert decode_profile(row, study_schema) == prof
            rows[row.tobytes()] = prof
        assert len(rows) == 4 * 4 * 5 * 3 * 2

    @given(st.data())
    def test_roundtrip_property(self, data):
        schema = parse_schema("a = x*,y,z\nb = p,q*\nc = only*")
        prof = {c.name: data.draw(st.sampled_from(c.categories)) for c in schema.covariates}
        assert decode_profile(encode_profile(prof, schema), schema) == prof


class TestContingency:
    def _rec(self, age, period=None):
        return IndividualRecord(90.0, age, True, {}, period)

    def test_single_record(self):
        t = contingency_summary([self._rec(101)], [100, 105])
        assert t.total == 1 and t.row_totals().tolist() == [1] and t.column_totals().tolist() == [1]

    def test_boundary_goes_to_lower_band(self):
        # hand-classified: (90,100] gets 95 and 100; (100,110] gets 100.5 and 110
        recs = [self._rec(a) for a in (95.0, 100.0, 100.5, 110.0)]
        t = contingency_summary(recs, [90, 100, 110])
        assert t.counts[:, 0].tolist() == [2, 2]

    def test_periods(self):
        recs = [self._rec(101, 1995), self._rec(101, 1999), self._rec(106, 2000),
                self._rec(106, 2022)]
        t = contingency_summary(recs, [100, 105, 110], [1995, 2000, 2023])
        assert t.counts.tolist() == [[2, 0], [0, 2]]
        assert t.period_bands == ("1995-1999", "2000-2022")

    def test_conservation(self, small_cfg):
        from dataclasses import replace

        from gpdtail.simulate import simulate_population
        recs = simulate_population(replace(small_cfg, n_individuals=1000, period_range=(1995, 2022)))
        t = contingency_summary(recs, [100, 105, 110, 130], [1995, 2005, 2015, 2023])
        assert t.total == 1000 and t.outside == 0
        assert t.row_totals().sum() == t.column_totals().sum() == 1000

    def test_breaks_must_increase(self):
        with pytest.raises(ValueError):
            contingency_summary([], [100, 100])
