"""Optimizers with checkpointable state."""

import numpy as np


class Optimizer:
    def __init__(self, params, lr):
        self.params = list(params)
        self.lr = float(lr)
        self.t = 0

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def state_dict(self):
        raise NotImplementedError

    def load_state_dict(self, state):
        raise NotImplementedError


class Adam(Optimizer):
    def __init__(self, params, lr, betas=(0.5, 0.999), eps=1e-8):
        super().__init__(params, lr)
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        self.t += 1
        b1c = 1.0 - self.beta1**self.t
        b2c = 1.0 - self.beta2**self.t
        for i, p in enumerate(self.params):
            if p.grad is None:
                continue
            g = p.grad
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g
            mhat = self.m[i] / b1c
            vhat = self.v[i] / b2c
            p.data = p.data - self.lr * mhat / (np.sqrt(vhat) + self.eps)

    def state_dict(self):
        return {
            "kind": "adam",
            "t": self.t,
            "lr": self.lr,
            "m": [a.copy() for a in self.m],
            "v": [a.copy() for a in self.v],
        }

    def load_state_dict(self, state):
        if state["kind"] != "adam":
            raise ValueError(f"optimizer kind mismatch: {state['kind']}")
        self.t = int(state["t"])
        self.lr = float(state["lr"])
        self.m = [np.asarray(a, dtype=np.float64).copy() for a in state["m"]]
        self.v = [np.asarray(a, dtype=np.float64).copy() for a in state["v"]]
        if len(self.m) != len(self.params):
            raise ValueError("optimizer state does not match parameter count")


class SGD(Optimizer):
    def __init__(self, params, lr, momentum=0.9, weight_decay=1e-4):
        super().__init__(params, lr)
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.buf = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        self.t += 1
        for i, p in enumerate(self.params):
            if p.grad is None:
                continue
            g = p.grad
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            self.buf[i] = self.momentum * self.buf[i] + g
            p.data = p.data - self.lr * self.buf[i]

    def state_dict(self):
        return {
            "kind": "sgd",
            "t": self.t,
            "lr": self.lr,
            "buf": [a.copy() for a in self.buf],
        }

    def load_state_dict(self, state):
        if state["kind"] != "sgd":
            raise ValueError(f"optimizer kind mismatch: {state['kind']}")
        self.t = int(state["t"])
        self.lr = float(state["lr"])
        self.buf = [np.asarray(a, dtype=np.float64).copy() for a in state["buf"]]
        if len(self.buf) != len(self.params):
            raise ValueError("optimizer state does not match parameter count")


class PlateauDecay:
    """Linear learning-rate decay to zero over the remaining epochs, armed
    once the monitored epoch-mean loss fails to improve for `patience`
    consecutive epochs.  Before the trigger the rate stays at lr0."""

    def __init__(self, lr0, patience, max_epochs):
        self.lr0 = lr0
        self.patience = patience
        self.max_epochs = max_epochs
        self.best = float("inf")
        self.bad_epochs = 0
        self.trigger_epoch = -1  # epochs completed when decay began

    def lr_for_epoch(self, epoch):
        if self.trigger_epoch < 0 or epoch < self.trigger_epoch:
            return self.lr0
        span = max(1, self.max_epochs - self.trigger_epoch)
        return self.lr0 * max(0.0, 1.0 - (epoch - self.trigger_epoch) / span)

    def observe(self, epoch_mean, epochs_done):
        if epoch_mean < self.best:
            self.best = epoch_mean
            self.bad_epochs = 0
        else:
            self.bad_epochs += 1
        if self.trigger_epoch < 0 and self.bad_epochs >= self.patience:
            self.trigger_epoch = epochs_done

    def state(self):
        return {
            "best": self.best,
            "bad_epochs": self.bad_epochs,
            "trigger_epoch": self.trigger_epoch,
        }

    def load(self, state):
        self.best = float(state["best"])
        self.bad_epochs = int(state["bad_epochs"])
        self.trigger_epoch = int(state["trigger_epoch"])
