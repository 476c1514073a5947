"""Adam with bias correction and the step learning-rate schedule."""
import numpy as np

from .errors import ConfigError


class Adam:
    def __init__(self, params, lr=1e-4, betas=(0.9, 0.999), eps=1e-8):
        if lr <= 0:
            raise ConfigError(f"learning rate must be > 0, got {lr}", "train.lr")
        self.params = list(params)
        names = [getattr(p, "name", "") for p in self.params]
        if len({id(p) for p in self.params}) != len(self.params):
            raise ConfigError("a parameter appears twice in the optimizer", "optimizer")
        if all(names) and len(set(names)) != len(names):
            raise ConfigError("duplicate parameter names", "optimizer")
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def set_lr(self, lr):
        if lr <= 0:
            raise ConfigError(f"learning rate must be > 0, got {lr}", "train.lr")
        self.lr = lr

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        self.step_count += 1
        t = self.step_count
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** t
        c2 = 1.0 - b2 ** t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            dt = p.data.dtype.type
            m *= dt(b1)
            m += dt(1.0 - b1) * g
            v *= dt(b2)
            v += dt(1.0 - b2) * (g * g)
            m_hat = m / dt(c1)
            v_hat = v / dt(c2)
            p.data -= dt(self.lr) * m_hat / (np.sqrt(v_hat) + dt(self.eps))

    def state(self):
        return {"step_count": self.step_count, "lr": self.lr,
                "betas": [self.beta1, self.beta2], "eps": self.eps}

    def load_state(self, state, m, v):
        self.step_count = int(state["step_count"])
        self.lr = float(state["lr"])
        self.beta1, self.beta2 = state["betas"]
        self.eps = float(state["eps"])
        self.m = [np.array(a, dtype=p.dtype) for a, p in zip(m, self.params)]
        self.v = [np.array(a, dtype=p.dtype) for a, p in zip(v, self.params)]


def adam_step(params, lr, optimizer=None, **kwargs):
    """Functional form: one Adam update of ``params`` from their ``.grad``."""
    opt = optimizer or Adam(params, lr=lr, **kwargs)
    opt.set_lr(lr)
    opt.step()
    return opt


def step_lr(epoch, base_lr=1e-4, decay_every=50, factor=0.1):
    """Learning rate for 1-based ``epoch``: multiplied by ``factor`` after
    every ``decay_every`` completed epochs."""
    if epoch < 1:
        raise ConfigError(f"epochs are 1-based, got {epoch}", "epoch")
    return base_lr * factor ** ((epoch - 1) // decay_every)
