import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st
from torch import nn

from mvrppg.diffcore import (
    expect_shape,
    grad_check,
    load_checkpoint,
    make_adam,
    save_checkpoint,
    xavier_init_,
)
from mvrppg.errors import CorruptHeaderError, GraphError, MissingFileError, TruncatedPayloadError

torch.set_num_threads(1)


def _randn(*shape, seed=0):
    g = torch.Generator().manual_seed(seed)
    return torch.randn(*shape, generator=g, dtype=torch.float64)


def _module_check(module: nn.Module, x: torch.Tensor, tol=1e-4):
    module = module.double()
    x = x.clone().requires_grad_(True)
    w = _randn(*module(x).shape, seed=99)
    params = {"input": x, **dict(module.named_parameters())}
    return grad_check(lambda: (module(x) * w).sum(), params, tol=tol)


def test_linear_identity():
    lin = nn.Linear(5, 5)
    with torch.no_grad():
        lin.weight.copy_(torch.eye(5))
        lin.bias.zero_()
    x = torch.randn(3, 5)
    assert torch.equal(lin(x), x)


@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=40))
@settings(max_examples=60, deadline=None)
def test_softmax_is_distribution(vals):
    y = torch.softmax(torch.tensor(vals, dtype=torch.float32), 0)
    assert torch.all(torch.isfinite(y))
    assert abs(float(y.sum()) - 1) <= 1e-6
    assert torch.all(y >= 0) and torch.all(y <= 1)


@given(st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=40))
@settings(max_examples=60, deadline=None)
def test_layernorm_bounded(vals):
    x = torch.tensor(vals, dtype=torch.float32)[None]
    y = nn.functional.layer_norm(x, x.shape[-1:])
    assert torch.all(torch.isfinite(y))
    # a standardised vector of length n has |y_i| <= sqrt(n - 1)
    assert float(y.abs().max()) <= np.sqrt(x.shape[-1]) + 1e-3


OPERATORS = {
    "conv3d": (lambda: nn.Conv3d(2, 3, (3, 3, 3), stride=(1, 2, 2), padding=1), (1, 2, 4, 5, 5)),
    "conv_transpose3d": (lambda: nn.ConvTranspose3d(2, 2, (4, 1, 1), stride=(2, 1, 1), padding=(1, 0, 0)), (1, 2, 3, 2, 2)),
    "conv1d": (lambda: nn.Conv1d(3, 2, 3, padding=1), (2, 3, 7)),
    "linear": (lambda: nn.Linear(4, 3), (2, 4)),
    "avgpool3d": (lambda: nn.AdaptiveAvgPool3d((None, 2, 2)), (1, 2, 3, 4, 4)),
    "elu": (lambda: nn.ELU(), (3, 5)),
    "leaky_relu": (lambda: nn.LeakyReLU(0.2), (3, 5)),
    "sigmoid": (lambda: nn.Sigmoid(), (3, 5)),
    "softmax": (lambda: nn.Softmax(-1), (3, 5)),
    "layer_norm": (lambda: nn.GroupNorm(1, 3), (2, 3, 4)),
    "multihead_attention": (None, (2, 4, 8)),
    "transformer_layer": (
        lambda: nn.TransformerEncoderLayer(8, 2, 16, dropout=0.0, batch_first=True),
        (2, 4, 8),
    ),
}


class _MHA(nn.Module):
    def __init__(self):
        super().__init__()
        self.attn = nn.MultiheadAttention(8, 2, batch_first=True)

    def forward(self, x):
        return self.attn(x, x, x, need_weights=False)[0]


@pytest.mark.parametrize("name", sorted(OPERATORS))
def test_operator_grad_check(name):
    torch.manual_seed(0)
    factory, shape = OPERATORS[name]
    module = _MHA() if factory is None else factory()
    x = _randn(*shape, seed=1)
    if name in ("elu", "leaky_relu"):
        x = x + torch.sign(x) * 0.05  # keep away from the kink
    report = _module_check(module, x)
    assert report.passed, report.errors


def test_composed_graph_grad_check():
    torch.manual_seed(3)
    net = nn.Sequential(
        nn.Conv1d(2, 4, 3, padding=1),
        nn.GroupNorm(1, 4),
        nn.ELU(),
        nn.Conv1d(4, 2, 1),
    )
    assert sum(p.numel() for p in net.parameters()) <= 1000
    report = _module_check(net, _randn(2, 2, 9, seed=4))
    assert report.passed, report.errors
    assert set(report.errors) == {"input", "0.weight", "0.bias", "1.weight", "1.bias", "3.weight", "3.bias"}


class _BadSquare(torch.autograd.Function):
    @staticmethod
    def forward(ctx, x):
        ctx.save_for_backward(x)
        return x * x

    @staticmethod
    def backward(ctx, g):
        (x,) = ctx.saved_tensors
        return g * 3 * x  # wrong: should be 2x


def test_corrupted_backward_fails():
    x = _randn(6, seed=2)
    report = grad_check(lambda: _BadSquare.apply(x).sum(), {"x": x})
    assert not report.passed
    assert report.failures == ["x"]
    assert report.errors["x"] == pytest.approx(1 / 3, rel=1e-6)


class _NanGrad(torch.autograd.Function):
    @staticmethod
    def forward(ctx, x):
        return x.clone()

    @staticmethod
    def backward(ctx, g):
        return g * float("nan")


def test_nonfinite_gradient_named():
    a, b = _randn(3, seed=0), _randn(3, seed=1)
    report = grad_check(lambda: (a * a).sum() + _NanGrad.apply(b).sum(), {"alpha": a, "beta": b})
    assert report.failures == ["beta"]
    assert report.errors["alpha"] <= 1e-4


def test_grad_check_requires_float64():
    x = torch.ones(3)
    with pytest.raises(GraphError):
        grad_check(lambda: x.sum(), {"x": x})


def test_expect_shape_names_operator():
    with pytest.raises(GraphError, match="rhythm_stream"):
        expect_shape(torch.zeros(2, 3), (2, None, 4), "rhythm_stream")
    expect_shape(torch.zeros(2, 3, 4), (2, None, 4), "ok")


def test_xavier_init_bounds():
    torch.manual_seed(0)
    lin = xavier_init_(nn.Linear(50, 30))
    bound = np.sqrt(6 / (50 + 30))
    w = lin.weight.detach()
    assert float(w.abs().max()) <= bound
    assert float(w.abs().max()) > 0.8 * bound
    assert torch.all(lin.bias == 0)


# -- optimiser --------------------------------------------------------------------


def test_adam_zero_gradient_no_move():
    p = nn.Parameter(torch.tensor([1.0, -2.0]))
    opt = make_adam([p], lr=0.1)
    p.grad = torch.zeros_like(p)
    for _ in range(5):
        opt.step()
    assert torch.equal(p.data, torch.tensor([1.0, -2.0]))


def test_adam_constant_gradient_direction():
    p = nn.Parameter(torch.zeros(3))
    opt = make_adam([p], lr=1e-2)
    g = torch.tensor([2.0, -0.5, 1e-3])
    for _ in range(50):
        p.grad = g.clone()
        opt.step()
    assert torch.all(torch.sign(p.data) == -torch.sign(g))
    # bias-corrected Adam with a constant gradient moves ~lr per step
    np.testing.assert_allclose(p.data.abs().numpy(), 0.5, rtol=0.02)


def test_adam_quadratic_bowl():
    torch.manual_seed(0)
    target = torch.tensor([0.7, -0.3, 0.2])
    scales = torch.tensor([1.0, 4.0, 0.5])
    p = nn.Parameter(torch.zeros(3))
    opt = make_adam([p], lr=1e-2)

    def loss():
        return (scales * (p - target) ** 2).sum()

    start = loss().item()
    for _ in range(200):
        opt.zero_grad()
        l = loss()
        l.backward()
        opt.step()
    assert loss().item() <= 0.01 * start


def test_adam_deterministic():
    def run():
        torch.manual_seed(5)
        net = nn.Linear(4, 2)
        opt = make_adam(net.parameters(), lr=1e-2)
        x = torch.randn(8, 4)
        for _ in range(10):
            opt.zero_grad()
            net(x).pow(2).sum().backward()
            opt.step()
        return torch.cat([p.detach().flatten() for p in net.parameters()])

    assert torch.equal(run(), run())


# -- checkpoints ------------------------------------------------------------------


def test_checkpoint_roundtrip(tmp_path):
    torch.manual_seed(1)
    net = nn.Sequential(nn.Linear(3, 4), nn.Conv1d(4, 2, 3))
    net.register_parameter("beta", nn.Parameter(torch.tensor(0.0)))
    save_checkpoint(net, tmp_path / "p.mvp")
    raw = (tmp_path / "p.mvp").read_bytes()
    assert raw[:4] == b"MVP1" and int.from_bytes(raw[4:8], "little") == 5
    back = load_checkpoint(tmp_path / "p.mvp")
    assert list(back) == list(net.state_dict())
    for k, v in net.state_dict().items():
        assert back[k].shape == v.shape and torch.equal(back[k], v)
    net2 = nn.Sequential(nn.Linear(3, 4), nn.Conv1d(4, 2, 3))
    net2.register_parameter("beta", nn.Parameter(torch.tensor(1.0)))
    net2.load_state_dict(back)
    save_checkpoint(net2, tmp_path / "q.mvp")
    assert (tmp_path / "q.mvp").read_bytes() == raw


def test_checkpoint_first_param_layout(tmp_path):
    save_checkpoint({"w": torch.tensor([[1.0, 2.0, 3.0]])}, tmp_path / "p.mvp")
    raw = (tmp_path / "p.mvp").read_bytes()
    expected = (
        b"MVP1" + (1).to_bytes(4, "little") + (1).to_bytes(4, "little") + b"w"
        + (2).to_bytes(4, "little") + (1).to_bytes(4, "little") + (3).to_bytes(4, "little")
        + np.array([1, 2, 3], "<f4").tobytes()
    )
    assert raw == expected


def test_checkpoint_errors(tmp_path):
    save_checkpoint({"w": torch.ones(4)}, tmp_path / "p.mvp")
    raw = (tmp_path / "p.mvp").read_bytes()
    (tmp_path / "t.mvp").write_bytes(raw[:-2])
    with pytest.raises(TruncatedPayloadError):
        load_checkpoint(tmp_path / "t.mvp")
    (tmp_path / "m.mvp").write_bytes(b"MVPX" + raw[4:])
    with pytest.raises(CorruptHeaderError):
        load_checkpoint(tmp_path / "m.mvp")
    with pytest.raises(MissingFileError):
        load_checkpoint(tmp_path / "nope.mvp")
