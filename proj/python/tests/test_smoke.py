import json
import pathlib

import pytest

import derauth

DATA = pathlib.Path(__file__).resolve().parents[2] / "data"
PACK = str(DATA / "reference.pack")
SCENARIO = str(DATA / "reference.scenario")


def test_crc_check_value():
    assert derauth.crc16_dnp(b"123456789") == 0xEA82


def test_transform_round_trip():
    x = 0x0123456789ABCDEF
    for word in (0x0000, 0x4001, 0x8ABC, 0xFFFF):
        assert derauth.inverse_transform(derauth.transform(x, word), word) == x


def test_challenge_decode():
    c = derauth.decode_challenge(0x0003000000030000)
    assert c["polled_cells"] == [0, 1]
    assert c["auth_cells"] == [0, 1]
    with pytest.raises(ValueError):
        derauth.decode_challenge(0x0007000000030000)


def test_frame_round_trip():
    frame = derauth.encode_frame(2, 7, bytes(10))
    assert frame[:2] == b"\x05\x64"
    assert derauth.decode_frame(frame) == (2, 7, bytes(10))
    with pytest.raises(ValueError):
        derauth.decode_frame(frame[:-1] + bytes([frame[-1] ^ 1]))


def test_reference_models_hit_anchors():
    m1, m2 = derauth.reference_models()
    assert m1["B"] == pytest.approx(15.0)
    assert m1["A"] == pytest.approx(0.22, rel=0.05)
    curve = derauth.discharge_curve(PACK, 0, 0.4, 0.0001)
    assert curve[0][1] == pytest.approx(4.1, abs=1e-6)
    assert curve[2000][1] == pytest.approx(3.88, abs=1e-6)


def test_reference_simulation():
    r = derauth.simulate(PACK, SCENARIO)
    assert [x["verdict"] for x in r["rounds"]] == ["accepted"] * 4
    assert r["all_operations_applied"]
    assert r["tables_match"]
    for a, b in zip(r["initial_soc"], r["final_soc"]):
        assert abs(a - b) < 1.5
    assert json.loads(r["report_json"])


def test_replay_fault_is_rejected():
    r = derauth.simulate(PACK, SCENARIO, faults="replay_round2")
    assert r["rounds"][1]["verdict"] == "rejected"
    assert r["rounds"][1]["reason"] == "auth_block_mismatch"
    assert r["all_operations_applied"]


def test_bad_pack_raises(tmp_path):
    bad = tmp_path / "bad.pack"
    bad.write_text("bogus = 1\n")
    with pytest.raises(derauth.ParseError):
        derauth.extract_params(str(bad))
