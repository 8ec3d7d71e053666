"""Software detection: probing, ordering, selection, and the env database."""

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import reef.detector as detector
from reef.detector import (
    DetectorRule,
    EnvironmentEntry,
    detect,
    load_envs,
    register_env,
    select_env,
)
from reef.errors import InvalidRule, MissingLocation, NoSatisfyingEnvironment
from reef.versions import Version, VersionReq


def _mock_exe(directory, name, output, exit_code=0, stream="stdout", sleep=0.0):
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / name
    lines = ["#!/bin/sh"]
    if sleep:
        lines.append(f"sleep {sleep}")
    redirect = " 1>&2" if stream == "stderr" else ""
    lines.append(f"printf '%s\\n' '{output}'{redirect}")
    lines.append(f"exit {exit_code}")
    path.write_text("\n".join(lines) + "\n")
    path.chmod(0o755)
    return path


def _rule(**overrides):
    kwargs = dict(
        software="mock-cc",
        candidates=("mock-cc",),
        version_command=("${exe}", "--version"),
        version_regex=r"mock-cc ([0-9]+(?:\.[0-9]+){0,2})",
    )
    kwargs.update(overrides)
    return DetectorRule(**kwargs)


def _entry(version, location, software="mock-cc"):
    return EnvironmentEntry(
        software=software,
        version=Version.parse(version),
        location=location,
        exports={},
        platform="linux-x86_64",
        detected_at="20260101T000000Z",
    )


# --- rule invariants ------------------------------------------------------------


def test_rule_rejects_empty_candidates():
    with pytest.raises(InvalidRule):
        _rule(candidates=())


def test_rule_rejects_wrong_group_count():
    with pytest.raises(InvalidRule):
        _rule(version_regex=r"(\d+)\.(\d+)")
    with pytest.raises(InvalidRule):
        _rule(version_regex=r"\d+\.\d+")


def test_rule_rejects_unparseable_pattern():
    with pytest.raises(InvalidRule):
        _rule(version_regex="(unclosed")


def test_rule_requires_exe_placeholder():
    with pytest.raises(InvalidRule):
        _rule(version_command=("mock-cc", "--version"))


def test_rule_rejects_unknown_placeholders():
    with pytest.raises(InvalidRule):
        _rule(version_command=("${exe}", "${flags}"))
    with pytest.raises(InvalidRule):
        _rule(exports={"CC": "${missing}"})


def test_rule_from_meta_round_trip():
    meta = {
        "software": "gcc",
        "candidates": ["gcc", "cc"],
        "search_dirs": ["/opt/toolchain/bin"],
        "version_command": ["${exe}", "--version"],
        "version_regex": r"([0-9]+\.[0-9]+\.[0-9]+)",
        "exports": {"CC": "${exe}"},
    }
    rule = DetectorRule.from_meta(meta)
    assert rule.software == "gcc"
    assert rule.candidates == ("gcc", "cc")
    assert rule.search_dirs == ("/opt/toolchain/bin",)
    assert rule.exports == {"CC": "${exe}"}


# --- detect ------------------------------------------------------------------


def test_detect_single_mock_compiler(tmp_path):
    _mock_exe(tmp_path / "bin", "mock-cc", "mock-cc 9.3.0")
    entries = detect(_rule(), [tmp_path / "bin"])
    assert len(entries) == 1
    assert str(entries[0].version) == "9.3.0"
    assert entries[0].location == str(tmp_path / "bin" / "mock-cc")
    assert entries[0].software == "mock-cc"
    assert entries[0].source == "detected"


def test_detect_empty_search_dirs():
    assert detect(_rule(), []) == []


def test_detect_orders_by_version_descending(tmp_path):
    _mock_exe(tmp_path / "a", "mock-cc", "mock-cc 9.3.0")
    _mock_exe(tmp_path / "b", "mock-cc", "mock-cc 11.1.0")
    entries = detect(_rule(), [tmp_path / "a", tmp_path / "b"])
    assert [str(e.version) for e in entries] == ["11.1.0", "9.3.0"]


def test_detect_breaks_version_ties_by_location(tmp_path):
    _mock_exe(tmp_path / "zz", "mock-cc", "mock-cc 9.3.0")
    _mock_exe(tmp_path / "aa", "mock-cc", "mock-cc 9.3.0")
    entries = detect(_rule(), [tmp_path / "zz", tmp_path / "aa"])
    assert [e.location for e in entries] == [
        str(tmp_path / "aa" / "mock-cc"),
        str(tmp_path / "zz" / "mock-cc"),
    ]


def test_detect_skips_non_matching_output(tmp_path):
    _mock_exe(tmp_path / "bin", "mock-cc", "usage: mock-cc [options]")
    assert detect(_rule(), [tmp_path / "bin"]) == []


def test_detect_skips_non_executable_files(tmp_path):
    bin_dir = tmp_path / "bin"
    bin_dir.mkdir()
    (bin_dir / "mock-cc").write_text("not a program")
    assert detect(_rule(), [bin_dir]) == []


def test_detect_reads_stderr_too(tmp_path):
    _mock_exe(tmp_path / "bin", "mock-cc", "mock-cc 9.3.0", stream="stderr")
    entries = detect(_rule(), [tmp_path / "bin"])
    assert [str(e.version) for e in entries] == ["9.3.0"]


def test_detect_tolerates_nonzero_exit(tmp_path):
    _mock_exe(tmp_path / "bin", "mock-cc", "mock-cc 9.3.0", exit_code=1)
    entries = detect(_rule(), [tmp_path / "bin"])
    assert [str(e.version) for e in entries] == ["9.3.0"]


def test_detect_zero_extends_short_versions(tmp_path):
    _mock_exe(tmp_path / "bin", "mock-cc", "mock-cc 9.3")
    diagnostics = []
    entries = detect(_rule(), [tmp_path / "bin"], diagnostics=diagnostics)
    assert [str(e.version) for e in entries] == ["9.3.0"]
    assert any("zero-extended" in note for note in diagnostics)


def test_detect_timeout_is_skipped_and_diagnosed(tmp_path, monkeypatch):
    monkeypatch.setattr(detector, "PROBE_TIMEOUT", 0.2)
    _mock_exe(tmp_path / "slow", "mock-cc", "mock-cc 9.3.0", sleep=5)
    _mock_exe(tmp_path / "fast", "mock-cc", "mock-cc 11.1.0")
    diagnostics = []
    entries = detect(_rule(), [tmp_path / "slow", tmp_path / "fast"], diagnostics=diagnostics)
    assert [str(e.version) for e in entries] == ["11.1.0"]
    assert any("timed out" in note for note in diagnostics)


def test_detect_same_path_via_two_dirs_counted_once(tmp_path):
    _mock_exe(tmp_path / "bin", "mock-cc", "mock-cc 9.3.0")
    entries = detect(_rule(), [tmp_path / "bin", tmp_path / "bin"])
    assert len(entries) == 1


def test_detect_uses_rule_search_dirs(tmp_path):
    _mock_exe(tmp_path / "extra", "mock-cc", "mock-cc 9.3.0")
    rule = _rule(search_dirs=(str(tmp_path / "extra"),))
    entries = detect(rule, [])
    assert [str(e.version) for e in entries] == ["9.3.0"]


def test_detect_renders_exports(tmp_path):
    _mock_exe(tmp_path / "bin", "mock-cc", "mock-cc 9.3.0")
    rule = _rule(exports={"CC": "${exe}", "CC_HOME": "${dir}", "CC_VERSION": "${version}"})
    entry = detect(rule, [tmp_path / "bin"])[0]
    assert entry.exports == {
        "CC": str(tmp_path / "bin" / "mock-cc"),
        "CC_HOME": str(tmp_path / "bin"),
        "CC_VERSION": "9.3.0",
    }


def test_detect_deterministic_for_fixed_tree(tmp_path):
    for name, version in [("a", "9.3.0"), ("b", "11.1.0"), ("c", "11.1.0")]:
        _mock_exe(tmp_path / name, "mock-cc", f"mock-cc {version}")
    dirs = [tmp_path / n for n in ("a", "b", "c")]
    first = detect(_rule(), dirs)
    for _ in range(3):
        assert detect(_rule(), dirs) == first


def test_detect_versions_round_trip_through_parser(tmp_path):
    _mock_exe(tmp_path / "bin", "mock-cc", "mock-cc 10.0.1")
    for entry in detect(_rule(), [tmp_path / "bin"]):
        assert Version.parse(str(entry.version)) == entry.version


# --- select_env -----------------------------------------------------------------


def test_select_env_prefers_highest_satisfying():
    entries = [_entry("9.3.0", "/a"), _entry("11.1.0", "/b")]
    assert select_env(entries, VersionReq(">=10.0")) is entries[1]


def test_select_env_single_entry_star():
    entries = [_entry("9.3.0", "/a")]
    assert select_env(entries, VersionReq("*")) is entries[0]


def test_select_env_no_match():
    with pytest.raises(NoSatisfyingEnvironment):
        select_env([_entry("9.3.0", "/a")], VersionReq("10.0.0"))
    with pytest.raises(NoSatisfyingEnvironment):
        select_env([], VersionReq("*"))


def test_select_env_tie_breaks_on_location():
    entries = [_entry("9.3.0", "/zz"), _entry("9.3.0", "/aa")]
    assert select_env(entries, VersionReq("*")).location == "/aa"


def test_select_env_ignores_caller_order():
    entries = [_entry("9.3.0", "/a"), _entry("11.1.0", "/b")]
    assert select_env(entries, VersionReq("*")) == select_env(entries[::-1], VersionReq("*"))


@settings(max_examples=150)
@given(
    st.lists(
        st.tuples(
            st.integers(0, 4), st.integers(0, 4), st.integers(0, 4),
            st.text(st.characters(min_codepoint=97, max_codepoint=122), min_size=1, max_size=4),
        ),
        min_size=1,
        max_size=8,
    ),
    st.integers(0, 4),
)
def test_select_env_matches_filter_max_oracle(raw, req_major):
    entries = [
        _entry(f"{a}.{b}.{c}", f"/opt/{path}/bin") for a, b, c, path in raw
    ]
    req = VersionReq(f">={req_major}.0.0")
    satisfying = [e for e in entries if req.satisfies(e.version)]
    if not satisfying:
        with pytest.raises(NoSatisfyingEnvironment):
            select_env(entries, req)
        return
    best_version = max(e.version for e in satisfying)
    best_location = min(e.location for e in satisfying if e.version == best_version)
    chosen = select_env(entries, req)
    assert chosen in entries
    assert req.satisfies(chosen.version)
    assert (chosen.version, chosen.location) == (best_version, best_location)


# --- env database ---------------------------------------------------------------


def test_register_then_load(tmp_path):
    exe = _mock_exe(tmp_path / "bin", "mock-cc", "mock-cc 9.3.0")
    entry = _entry("9.3.0", str(exe))
    entry_id = register_env(entry, tmp_path / "envs.jsonl")
    assert len(entry_id) == 64
    loaded = load_envs(tmp_path / "envs.jsonl")
    assert loaded == [entry]


def test_register_same_key_replaces(tmp_path):
    exe = _mock_exe(tmp_path / "bin", "mock-cc", "mock-cc 9.3.0")
    db = tmp_path / "envs.jsonl"
    register_env(_entry("9.3.0", str(exe)), db)
    register_env(_entry("9.3.0", str(exe)), db)
    assert len(load_envs(db)) == 1


def test_register_distinct_versions_both_kept(tmp_path):
    exe = _mock_exe(tmp_path / "bin", "mock-cc", "mock-cc 9.3.0")
    db = tmp_path / "envs.jsonl"
    register_env(_entry("9.3.0", str(exe)), db)
    register_env(_entry("11.1.0", str(exe)), db)
    assert len(load_envs(db)) == 2


def test_register_missing_location_rejected(tmp_path):
    with pytest.raises(MissingLocation):
        register_env(_entry("9.3.0", str(tmp_path / "nope")), tmp_path / "envs.jsonl")


def test_load_envs_filters_by_software(tmp_path):
    exe = _mock_exe(tmp_path / "bin", "mock-cc", "mock-cc 9.3.0")
    db = tmp_path / "envs.jsonl"
    register_env(_entry("9.3.0", str(exe)), db)
    register_env(_entry("3.8.0", str(exe), software="mock-py"), db)
    assert [e.software for e in load_envs(db, software="mock-py")] == ["mock-py"]


def test_entry_round_trips_through_doc():
    entry = _entry("9.3.0", "/usr/bin/cc")
    assert EnvironmentEntry.from_doc(entry.to_doc()) == entry
