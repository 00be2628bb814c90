import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chiselforge.dataset import (
    compute_stats,
    mix,
    record_tokens,
    split_quota,
    stats,
    to_chat_records,
)
from conftest import write_jsonl


def rec(i, prefix="c", n_tokens=10):
    # prompt of exactly n_tokens whitespace-separated words
    return {
        "sample_id": f"{prefix}{i}",
        "prompt_text": " ".join(f"w{j}" for j in range(n_tokens)),
        "think_text": "",
        "answer_code": "",
    }


def pools(tmp_path, n_completion=500, n_decompile=900):
    c = write_jsonl(tmp_path / "c.jsonl", [rec(i, "c") for i in range(n_completion)])
    d = write_jsonl(tmp_path / "d.jsonl", [rec(i, "d") for i in range(n_decompile)])
    return c, d


class TestSplitQuota:
    def test_ratio_3_7_total_1000(self):
        assert split_quota(1000, 3, 7) == (300, 700)

    def test_ratio_3_7_total_10(self):
        assert split_quota(10, 3, 7) == (3, 7)

    def test_quotas_sum_to_total(self):
        for total in (1, 7, 99, 1234):
            for ratio in ((3, 7), (1, 1), (5, 2), (0, 1)):
                c, d = split_quota(total, *ratio)
                assert c + d == total

    def test_invalid_inputs(self):
        with pytest.raises(ValueError):
            split_quota(0, 3, 7)
        with pytest.raises(ValueError):
            split_quota(10, 0, 0)

    @settings(max_examples=200)
    @given(total=st.integers(1, 10_000), c=st.integers(0, 20), d=st.integers(0, 20))
    def test_largest_remainder_property(self, total, c, d):
        if c + d == 0:
            return
        cq, dq = split_quota(total, c, d)
        assert cq + dq == total
        exact = total * c / (c + d)
        assert abs(cq - exact) <= 0.5 + 1e-9


class TestMix:
    def test_exact_quota(self, tmp_path):
        c, d = pools(tmp_path)
        chosen, manifest = mix(c, d, (3, 7), 1000, seed=1)
        ids = [r["sample_id"] for r in chosen]
        assert sum(1 for i in ids if i.startswith("c")) == 300
        assert sum(1 for i in ids if i.startswith("d")) == 700
        assert manifest.records == 1000
        assert manifest.shortfalls == {}

    def test_seeded_rerun_byte_identical(self, tmp_path):
        c, d = pools(tmp_path)
        out1, out2 = tmp_path / "m1.jsonl", tmp_path / "m2.jsonl"
        mix(c, d, (3, 7), 1000, seed=42, out_path=out1)
        mix(c, d, (3, 7), 1000, seed=42, out_path=out2)
        assert out1.read_bytes() == out2.read_bytes()

    def test_different_seed_differs(self, tmp_path):
        c, d = pools(tmp_path)
        a, _ = mix(c, d, (3, 7), 1000, seed=1)
        b, _ = mix(c, d, (3, 7), 1000, seed=2)
        assert [r["sample_id"] for r in a] != [r["sample_id"] for r in b]

    def test_no_duplicates(self, tmp_path):
        c, d = pools(tmp_path)
        chosen, _ = mix(c, d, (3, 7), 1000, seed=5)
        ids = [r["sample_id"] for r in chosen]
        assert len(set(ids)) == len(ids)

    def test_shortfall_recorded(self, tmp_path):
        c, d = pools(tmp_path, n_completion=100, n_decompile=900)
        chosen, manifest = mix(c, d, (3, 7), 1000, seed=1)
        assert manifest.shortfalls == {"completion": 200}
        assert sum(1 for r in chosen if r["sample_id"].startswith("c")) == 100

    def test_empty_pool_errors(self, tmp_path):
        c = write_jsonl(tmp_path / "c.jsonl", [])
        d = write_jsonl(tmp_path / "d.jsonl", [rec(0, "d")])
        with pytest.raises(ValueError):
            mix(c, d, (3, 7), 10, seed=1)

    def test_bad_total_errors(self, tmp_path):
        c, d = pools(tmp_path, 5, 5)
        with pytest.raises(ValueError):
            mix(c, d, (3, 7), 0, seed=1)


class TestStats:
    def test_two_record_arithmetic(self):
        st_ = compute_stats([rec(0, n_tokens=100), rec(1, n_tokens=300)])
        assert st_.mean == 200
        assert st_.median == 200
        assert st_.max == 300

    def test_single_record_degenerate(self):
        st_ = compute_stats([rec(0, n_tokens=42)])
        assert st_.mean == st_.median == st_.p95 == st_.max == 42

    def test_record_tokens_counts_all_fields(self):
        r = {"prompt_text": "a b", "think_text": "c d e", "answer_code": "f"}
        assert record_tokens(r) == 6

    def test_decompile_fixture_mean_near_9000(self, tmp_path):
        # fixture constructed to target a 9000-token mean; oracle is
        # direct summation over the written records
        records = [rec(i, n_tokens=8500 + (i % 2) * 1000) for i in range(40)]
        path = write_jsonl(tmp_path / "d.jsonl", records)
        expected_mean = sum(record_tokens(r) for r in records) / len(records)
        assert abs(expected_mean - 9000) / 9000 < 0.01
        st_ = stats(path)
        assert abs(st_.mean - 9000) / 9000 < 0.01
        assert st_.mean == pytest.approx(expected_mean)

    def test_malformed_line_names_line_number(self, tmp_path):
        p = tmp_path / "bad.jsonl"
        p.write_text('{"prompt_text": "x"}\n{oops\n')
        with pytest.raises(ValueError, match=":2"):
            stats(p)


class TestChatExport:
    def test_think_inlined_into_assistant_turn(self):
        out = to_chat_records([{"prompt_text": "p", "think_text": "t", "answer_code": "c"}])
        msgs = out[0]["messages"]
        assert [m["role"] for m in msgs] == ["user", "assistant"]
        assert "<think>" in msgs[1]["content"]
        assert "```scala" in msgs[1]["content"]
