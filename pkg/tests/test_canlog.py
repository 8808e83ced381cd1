import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from canids.canlog import (
    CanFrame,
    Label,
    format_car_hacking_row,
    parse_car_hacking_csv,
    parse_generic_labeled_csv,
    write_car_hacking_csv,
)
from canids.errors import ConfigError, ParseError


def write_lines(tmp_path, lines, name="log.csv"):
    p = tmp_path / name
    p.write_text("\n".join(lines) + "\n")
    return p


def test_parse_documented_row(tmp_path):
    p = write_lines(tmp_path, ["1478198376.389427,0316,8,05,21,68,09,21,21,00,6f,R"])
    [frame] = list(parse_car_hacking_csv(p))
    assert frame.can_id == 0x316 == 790
    assert frame.dlc == 8
    assert frame.payload == (0x05, 0x21, 0x68, 0x09, 0x21, 0x21, 0x00, 0x6F)
    assert frame.label == Label.BENIGN
    assert frame.timestamp == 1478198376.389427


def test_flag_t_maps_to_attack(tmp_path):
    p = write_lines(tmp_path, ["1.0,0316,2,aa,bb,T"])
    [frame] = list(parse_car_hacking_csv(p))
    assert frame.label == Label.ATTACK


def test_malformed_row_carries_line_number(tmp_path):
    p = write_lines(tmp_path, ["1.0,0316,0,R", "bad,row"])
    with pytest.raises(ParseError) as err:
        list(parse_car_hacking_csv(p))
    assert "line 2" in str(err.value)


@pytest.mark.parametrize(
    "row",
    [
        "1.0,zzzz,2,aa,bb,R",  # non-hex id
        "1.0,0316,9,aa,R",  # dlc out of range
        "1.0,0316,3,aa,bb,R",  # payload shorter than dlc
        "1.0,0316,1,aa,bb,R",  # payload longer than dlc
        "1.0,0316,1,aa,X",  # unknown flag
        "1.0,800,0,R",  # 0x800 = 2048 exceeds 11 bits
    ],
)
def test_bad_rows_rejected(tmp_path, row):
    p = write_lines(tmp_path, [row])
    with pytest.raises(ParseError):
        list(parse_car_hacking_csv(p))


def test_timestamp_regression_rejected(tmp_path):
    p = write_lines(tmp_path, ["2.0,0316,0,R", "1.0,0316,0,R"])
    with pytest.raises(ParseError) as err:
        list(parse_car_hacking_csv(p))
    assert err.value.line == 2


def test_generic_parse_and_column_errors(tmp_path):
    p = write_lines(tmp_path, ["0.5,316,2,aa,bb,x,x,x,x,x,x,T"])
    cmap = {"timestamp": 0, "id": 1, "dlc": 2, "data": 3, "label": 11}
    [frame] = list(parse_generic_labeled_csv(p, cmap))
    assert frame.can_id == 0x316 and frame.label == Label.ATTACK

    with pytest.raises(ConfigError):
        list(parse_generic_labeled_csv(p, {**cmap, "label": 99}))
    with pytest.raises(ConfigError):
        list(parse_generic_labeled_csv(p, {"timestamp": 0, "id": 1}))


def test_generic_custom_markers_and_base(tmp_path):
    p = write_lines(tmp_path, ["0.5,790,1,ff,attack", "0.6,790,1,7f,normal"])
    cmap = {"timestamp": 0, "id": 1, "dlc": 2, "data": 3, "label": 4}
    frames = list(
        parse_generic_labeled_csv(p, cmap, attack_markers=frozenset({"attack"}), id_base=10)
    )
    assert [f.label for f in frames] == [Label.ATTACK, Label.BENIGN]
    assert frames[0].can_id == 790


def test_generic_empty_file(tmp_path):
    p = write_lines(tmp_path, [])
    cmap = {"timestamp": 0, "id": 1, "dlc": 2, "data": 3, "label": 4}
    assert list(parse_generic_labeled_csv(p, cmap)) == []


def test_round_trip_write_parse(tmp_path):
    frames = [
        CanFrame(0.25, 0x7FF, 0, (), Label.BENIGN),
        CanFrame(0.5, 0x0, 3, (1, 128, 255), Label.ATTACK),
        CanFrame(1478198376.389427, 790, 8, (5, 33, 104, 9, 33, 33, 0, 111), Label.BENIGN),
    ]
    p = tmp_path / "out.csv"
    assert write_car_hacking_csv(frames, p) == 3
    assert list(parse_car_hacking_csv(p)) == frames


frame_strategy = st.builds(
    CanFrame,
    timestamp=st.floats(min_value=0, max_value=1e9, allow_nan=False),
    can_id=st.integers(min_value=0, max_value=2047),
    dlc=st.just(0),
    payload=st.just(()),
    label=st.sampled_from([Label.BENIGN, Label.ATTACK]),
).flatmap(
    lambda f: st.integers(min_value=0, max_value=8).flatmap(
        lambda dlc: st.tuples(*[st.integers(0, 255)] * dlc).map(
            lambda payload: CanFrame(f.timestamp, f.can_id, dlc, payload, f.label)
        )
    )
)


@given(st.lists(frame_strategy, min_size=1, max_size=40))
@settings(max_examples=60, deadline=None)
def test_parser_outputs_satisfy_frame_invariants(tmp_path_factory, frames):
    frames.sort(key=lambda f: f.timestamp)
    p = tmp_path_factory.mktemp("fuzz") / "log.csv"
    write_car_hacking_csv(frames, p)
    for frame in parse_car_hacking_csv(p):
        frame.validate()
        assert 0 <= frame.can_id <= 2047
        assert len(frame.payload) == frame.dlc


def test_format_row_matches_layout():
    row = format_car_hacking_row(CanFrame(1.5, 0x316, 2, (0x0A, 0xFF), Label.ATTACK))
    assert row == "1.5,0316,2,0a,ff,T"
