import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gazeid.corpus import (
    NEGATIVE,
    POSITIVE,
    CorpusError,
    Fixation,
    MalformedScanpathError,
    SaccadeType,
    Scanpath,
    StructuralInfeasibilityError,
    TextLine,
    classify_saccade,
    decompose,
    load_corpus,
    save_corpus,
    truncation_interval,
)

TWO_WORDS = TextLine("t", ((0, 5), (7, 12)))
THREE_WORDS = TextLine("t", ((0, 5), (7, 12), (14, 20)))


class TestTextLine:
    def test_rejects_empty(self):
        with pytest.raises(CorpusError):
            TextLine("t", ())

    def test_rejects_inverted_word(self):
        with pytest.raises(CorpusError):
            TextLine("t", ((5, 0),))

    def test_rejects_overlap(self):
        with pytest.raises(CorpusError):
            TextLine("t", ((0, 5), (4, 9)))

    def test_extent(self):
        assert THREE_WORDS.left == 0 and THREE_WORDS.right == 20


class TestClassify:
    def test_refixation(self):
        assert classify_saccade(2, 4, TWO_WORDS) is SaccadeType.REFIXATION

    def test_next_word(self):
        assert classify_saccade(2, 9, TWO_WORDS) is SaccadeType.NEXT_WORD

    def test_forward_skip(self):
        assert classify_saccade(2, 16, THREE_WORDS) is SaccadeType.FORWARD_SKIP

    def test_regression(self):
        assert classify_saccade(9, 3, THREE_WORDS) is SaccadeType.REGRESSION

    def test_gap_landing_attributed_to_nearest(self):
        # 5.5 is nearer to word 0's center, 6.9 to word 1's
        assert classify_saccade(2, 5.5, TWO_WORDS) is SaccadeType.REFIXATION
        assert classify_saccade(2, 6.9, TWO_WORDS) is SaccadeType.NEXT_WORD

    @given(
        prev=st.floats(-2, 22),
        new=st.floats(-2, 22),
    )
    def test_classification_is_a_partition(self, prev, new):
        u = classify_saccade(prev, new, THREE_WORDS)
        assert u in list(SaccadeType)


class TestTruncationInterval:
    def test_next_word(self):
        assert truncation_interval(SaccadeType.NEXT_WORD, None, 2, TWO_WORDS) == (5, 10)

    def test_refixation_positive(self):
        assert truncation_interval(
            SaccadeType.REFIXATION, POSITIVE, 2, TWO_WORDS
        ) == (0, 3)

    def test_refixation_negative(self):
        assert truncation_interval(
            SaccadeType.REFIXATION, NEGATIVE, 2, TWO_WORDS
        ) == (-2, 0)

    def test_regression(self):
        l, r = truncation_interval(SaccadeType.REGRESSION, None, 9, TWO_WORDS)
        assert l == -math.inf and r == -2

    def test_forward_skip(self):
        l, r = truncation_interval(SaccadeType.FORWARD_SKIP, None, 2, THREE_WORDS)
        assert (l, r) == (10, math.inf)

    def test_next_word_at_last_word_fails(self):
        with pytest.raises(StructuralInfeasibilityError):
            truncation_interval(SaccadeType.NEXT_WORD, None, 9, TWO_WORDS)

    def test_refixation_brackets_zero(self):
        l, r = truncation_interval(SaccadeType.REFIXATION, POSITIVE, 2, TWO_WORDS)
        assert l == 0 and r > 0
        l, r = truncation_interval(SaccadeType.REFIXATION, NEGATIVE, 2, TWO_WORDS)
        assert r == 0 and l < 0


def _scanpath(positions, durations=None):
    durations = durations or [100.0] * len(positions)
    return Scanpath(
        reader_id="r", text_id="t",
        fixations=tuple(Fixation(p, d) for p, d in zip(positions, durations)),
    )


class TestDecompose:
    def test_single_fixation(self):
        initial, events = decompose(_scanpath([2.0]), TWO_WORDS)
        assert initial == (2.0, 100.0)
        assert events == []

    def test_next_word_event(self):
        initial, events = decompose(
            _scanpath([2.0, 9.0], [180.0, 200.0]), TWO_WORDS
        )
        assert initial == (2.0, 180.0)
        (ev,) = events
        assert ev.type is SaccadeType.NEXT_WORD
        assert ev.amplitude == 7.0
        assert ev.duration == 200.0
        assert (ev.trunc_left, ev.trunc_right) == (5.0, 10.0)

    def test_amplitude_always_inside_interval(self):
        sp = _scanpath([2.0, 6.2, 1.0, 16.0, 15.0])
        _, events = decompose(sp, THREE_WORDS)
        for ev in events:
            assert ev.trunc_left <= ev.amplitude <= ev.trunc_right
            if ev.type in (SaccadeType.NEXT_WORD, SaccadeType.FORWARD_SKIP):
                assert ev.amplitude > 0
            if ev.type is SaccadeType.REGRESSION:
                assert ev.amplitude < 0

    def test_out_of_margin_rejected(self):
        with pytest.raises(MalformedScanpathError):
            decompose(_scanpath([2.0, 40.0]), TWO_WORDS)

    @given(data=st.data())
    @settings(max_examples=100, deadline=None)
    def test_roundtrip_against_position_accumulator(self, data):
        n_words = data.draw(st.integers(1, 5))
        cursor, words = 0.0, []
        for _ in range(n_words):
            width = data.draw(st.floats(1, 8))
            gap = data.draw(st.floats(0.5, 3))
            words.append((cursor, cursor + width))
            cursor += width + gap
        text = TextLine("t", tuple(words))
        n_fix = data.draw(st.integers(1, 6))
        positions = [
            data.draw(st.floats(text.left - 1, text.right + 1)) for _ in range(n_fix)
        ]
        sp = _scanpath(positions)
        initial, events = decompose(sp, text)
        # independent oracle: re-accumulate positions from amplitudes
        acc = [initial[0]]
        for ev in events:
            acc.append(acc[-1] + ev.amplitude)
        assert acc == pytest.approx(positions, abs=1e-12)
        # re-applying the classifier reproduces every stored type
        for prev, new, ev in zip(acc, acc[1:], events):
            assert classify_saccade(prev, new, text) == ev.type


class TestCorpusIO:
    def test_empty_file(self, tmp_path):
        p = tmp_path / "c.jsonl"
        p.write_text("")
        assert load_corpus(p) == ([], [])

    def test_roundtrip(self, tmp_path):
        p = tmp_path / "c.jsonl"
        save_corpus(p, [THREE_WORDS], [_scanpath([2.0, 9.0])])
        texts, sps = load_corpus(p)
        assert texts == [THREE_WORDS]
        assert sps == [_scanpath([2.0, 9.0])]
        # save again: byte-identical
        p2 = tmp_path / "c2.jsonl"
        save_corpus(p2, texts, sps)
        assert p.read_bytes() == p2.read_bytes()

    def test_overlapping_words_rejected_with_line_number(self, tmp_path):
        p = tmp_path / "c.jsonl"
        p.write_text(
            json.dumps({"kind": "text", "text_id": "a", "words": [[0, 5]]})
            + "\n"
            + json.dumps({"kind": "text", "text_id": "b", "words": [[0, 5], [4, 9]]})
            + "\n"
        )
        with pytest.raises(CorpusError, match=":2:"):
            load_corpus(p)

    def test_dangling_text_reference(self, tmp_path):
        p = tmp_path / "c.jsonl"
        p.write_text(
            json.dumps(
                {"kind": "scanpath", "reader_id": "r", "text_id": "nope",
                 "fixations": [[1.0, 100.0]]}
            )
            + "\n"
        )
        with pytest.raises(CorpusError, match="nope"):
            load_corpus(p)

    def test_bad_json_line(self, tmp_path):
        p = tmp_path / "c.jsonl"
        p.write_text("{not json\n")
        with pytest.raises(CorpusError, match=":1:"):
            load_corpus(p)
