"""Adam with one learning rate per scene parameter group."""

import numpy as np


class Adam:
    def __init__(self, scene, lrs, betas=(0.9, 0.999), eps=1e-15):
        # values may be arrays broadcasting against the parameter
        self.lrs = dict(lrs)
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.step_count = 0
        self.m = {name: np.zeros(arr.shape) for name, arr in scene.params().items()}
        self.v = {name: np.zeros(arr.shape) for name, arr in scene.params().items()}

    def step(self, scene, grads):
        """Update ``scene`` in place from a dict of gradients."""
        self.step_count += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1 ** self.step_count
        bc2 = 1.0 - b2 ** self.step_count
        for name, param in scene.params().items():
            lr = self.lrs.get(name, 0.0)
            g = grads[name]
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            if np.all(np.asarray(lr) == 0.0):
                continue
            update = lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            new = param.astype(np.float64) - update
            param[...] = new.astype(param.dtype)

    def remap(self, source):
        """Carry moments over after a refinement.

        ``source[i]`` is the old row that new row ``i`` inherits moments
        from, or -1 for a fresh row (zero moments).
        """
        source = np.asarray(source, dtype=np.int64)
        fresh = source < 0
        safe = np.where(fresh, 0, source)
        for store in (self.m, self.v):
            for name, arr in store.items():
                if arr.shape[0] == 0:
                    new = np.zeros((source.shape[0],) + arr.shape[1:])
                else:
                    new = arr[safe]
                    new[fresh] = 0.0
                store[name] = new

    def reset(self, name, rows=None):
        for store in (self.m, self.v):
            if rows is None:
                store[name][...] = 0.0
            else:
                store[name][rows] = 0.0

    def state_dict(self):
        out = {"step_count": np.array(self.step_count)}
        for name in self.m:
            out[f"m.{name}"] = self.m[name]
            out[f"v.{name}"] = self.v[name]
        return out

    def load_state_dict(self, state):
        self.step_count = int(state["step_count"])
        for name in list(self.m):
            self.m[name] = np.array(state[f"m.{name}"], dtype=np.float64)
            self.v[name] = np.array(state[f"v.{name}"], dtype=np.float64)
