import math

import numpy as np
import pytest

from c3sl import accounting as acc, pipeline
from c3sl.transport import FeaturesPayload, GradientsPayload
from c3sl.errors import InvalidArgument


def test_c3sl_params_reference():
    assert acc.c3sl_params(16, 2048) == 32768
    assert acc.c3sl_params(2, 4096) == 8192


def test_c3sl_flops_reference():
    assert acc.c3sl_flops(64, 2048) == 536870912
    assert acc.c3sl_flops(64, 4096) == 2147483648


def test_c3sl_flops_independent_of_ratio():
    a = acc.c3sl_report(acc.CostInputs(B=64, C=512, H=2, W=2, R=2))
    b = acc.c3sl_report(acc.CostInputs(B=64, C=512, H=2, W=2, R=16))
    assert a.flops == b.flops


@pytest.mark.parametrize("C,R,want", [
    (512, 4, 2098176), (512, 8, 1049344), (512, 16, 524928),
    (1024, 4, 8390656), (1024, 8, 4195840), (1024, 16, 2098432),
])
def test_bottlenet_params_reference(C, R, want):
    assert acc.bottlenet_params(C, 2, R) == want


def test_bottlenet_params_at_r2_follow_formula():
    # the R=2 entries differ from a plain evaluation; the formula is kept as is
    assert acc.bottlenet_params(512, 2, 2) == 4195840
    assert acc.bottlenet_params(1024, 2, 2) == 16780288


@pytest.mark.parametrize("C,R,want_e9", [
    (512, 4, 0.67), (512, 8, 0.34), (512, 16, 0.17),
    (1024, 4, 2.68), (1024, 8, 1.34), (1024, 16, 0.67),
])
def test_bottlenet_flops_reference(C, R, want_e9):
    flops = acc.bottlenet_flops(64, C, 2, R, 2, 2, 1, 1)
    assert round(flops / 1e9, 2) == pytest.approx(want_e9)


def test_bottlenet_flops_by_hand():
    # B=1, C=4, k=1, R=4 -> 4 encoder filters, decoder fan-in 8, H=W=H'=W'=1
    assert acc.bottlenet_flops(1, 4, 1, 4, 1, 1, 1, 1) == (2 * 4 + 1) * 4 + (8 + 1) * 4


def test_notes_on_indivisible_channels():
    assert acc.bottlenet_notes(512, 16) == []
    assert acc.bottlenet_notes(5, 3)


@pytest.mark.parametrize("B,R", [(64, 1), (64, 16), (65, 16), (1, 4)])
def test_comm_bytes(B, R):
    assert acc.comm_bytes(B, 2048, R) == (math.ceil(B / R) * 2048 * 4,) * 2


def test_comm_bytes_reduced_by_r():
    base = acc.comm_bytes(64, 2048, 1)[0]
    for R in (2, 4, 8, 16):
        assert base / acc.comm_bytes(64, 2048, R)[0] == R


def test_cost_inputs_defaults():
    ci = acc.CostInputs(B=64, C=512, H=2, W=2, R=4)
    assert (ci.H_out, ci.W_out, ci.D) == (1, 1, 2048)


def test_rejects_bad_inputs():
    with pytest.raises(InvalidArgument):
        acc.c3sl_params(0, 10)
    with pytest.raises(InvalidArgument):
        acc.CostInputs(B=64, C=512, H=2, W=2, R=-1)
    with pytest.raises(InvalidArgument):
        acc.comm_bytes(64, 2048, 2.0)


def test_report_grid_and_table():
    rows = acc.report_grid(acc.RESNET50_CUT)
    assert len(rows) == 8
    assert {r.method for r in rows} == {"C3-SL", "BottleNet++"}
    c3 = [r for r in rows if r.method == "C3-SL"]
    assert [r.params for r in c3] == [2 * 4096, 4 * 4096, 8 * 4096, 16 * 4096]
    text = acc.format_table(rows)
    assert len(text.splitlines()) == 9
    assert rows[0].to_dict()["R"] == 2


def test_comm_bytes_small_example():
    assert acc.comm_bytes(5, 8, 2, 4) == (96, 96)


def test_comm_bytes_r1_is_vanilla():
    assert acc.comm_bytes(64, 2048, 1) == (64 * 2048 * 4, 64 * 2048 * 4)


@pytest.mark.parametrize("B,R,D", [(64, 16, 2048), (64, 4, 64), (10, 3, 8), (7, 1, 5)])
def test_comm_bytes_match_serialized_payloads(B, R, D):
    sizes = tuple(pipeline.group_sizes(B, R))
    data = np.zeros((len(sizes), D), np.float32)
    feats = FeaturesPayload(0, sizes, data, np.zeros(B)).encode()
    grads = GradientsPayload(0, data, 0.0).encode()
    fwd, bwd = acc.comm_bytes(B, D, R)
    # FEATURES = 12-byte head + group table + block + labels; GRADIENTS = id + block + loss
    assert len(feats) - 12 - 4 * len(sizes) - acc.label_bytes(B) == fwd
    assert len(grads) - 8 - 8 == bwd
