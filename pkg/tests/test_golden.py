import pytest

from golden_replay import TRANSCRIPTS, replay


def test_all_transcripts_present():
    assert TRANSCRIPTS == ["error_handling", "happy_path", "resume_after_kill", "skip_filled"]


@pytest.mark.parametrize("name", TRANSCRIPTS)
def test_transcript(tmp_path, name):
    assert replay(name, tmp_path) == []
