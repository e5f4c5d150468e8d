"""Check every analytic derivative against finite differences.

The networks are trained by hand-written reverse-mode passes, so this
script is the trust anchor: parameter gradients, input gradients and the
full input Jacobian are all compared to central differences.

Run:  python3 demos/02_gradient_checking.py
"""
import numpy as np

from hlab import nn

H = 1e-5
rng = np.random.default_rng(42)


def fd_param_gradient(params, x, upstream):
    flat = params.flatten()
    probe = params.copy()
    out = np.zeros_like(flat)
    for k in range(flat.size):
        for sign in (1.0, -1.0):
            bumped = flat.copy()
            bumped[k] += sign * H
            probe.assign_flat(bumped)
            out[k] += sign * float(np.sum(upstream * nn.forward(probe, x)))
    return out / (2 * H)


worst = 0.0
for head in ("linear", "softmax"):
    for trial in range(10):
        in_dim = int(rng.integers(3, 9))
        out_dim = 5 if head == "softmax" else int(rng.integers(1, 4))
        params = nn.init_params(in_dim, (6, 4), out_dim, head, rng)
        x = rng.normal(size=in_dim)
        upstream = rng.normal(size=out_dim)

        got = nn.backward_params(params, x, upstream).flatten()
        want = fd_param_gradient(params, x, upstream)
        scale = max(1.0, float(np.abs(want).max()))
        err = float(np.abs(got - want).max()) / scale
        worst = max(worst, err)

        jac = nn.input_jacobian(params, x)
        fd_jac = np.zeros_like(jac)
        for c in range(in_dim):
            hi, lo = x.copy(), x.copy()
            hi[c] += H
            lo[c] -= H
            fd_jac[:, c] = (nn.forward(params, hi) - nn.forward(params, lo)) \
                / (2 * H)
        jerr = float(np.abs(jac - fd_jac).max()) / max(1.0,
                                                       float(np.abs(fd_jac).max()))
        worst = max(worst, jerr)
    print(f"{head:8s} head: 10 nets checked, running worst rel error "
          f"{worst:.2e}")

print("\nsoftmax Jacobian rows sum to zero (probability conservation):")
p = nn.init_params(6, (5,), 5, "softmax", rng)
jac = nn.input_jacobian(p, rng.normal(size=6))
print("  max |column sum| =", float(np.abs(jac.sum(axis=0)).max()))

print("\ngradient clipping: global norm capped at 0.5")
params = nn.init_params(4, (4,), 2, "linear", rng)
grads = nn.backward_params(params, rng.normal(size=4) * 100.0,
                           np.array([1e3, -1e3]))
opt = nn.OptimizerState.for_params(params, lr=0.01)
pre = nn.clip_and_apply(params, grads, opt, max_grad_norm=0.5)
print(f"  pre-clip norm {pre:.1f} -> applied at norm 0.5")
