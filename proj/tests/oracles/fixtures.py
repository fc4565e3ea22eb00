"""Deterministic fixtures mirrored by tests/support.hpp."""
import math

import numpy as np

M64 = (1 << 64) - 1


def hash64(x):
    x = (x + 0x9E3779B97F4A7C15) & M64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & M64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & M64
    return x ^ (x >> 31)


def hash_uniform(seed, i):
    return (hash64((seed * 1000003 + i) & M64) >> 11) * 2.0**-53


def hash_normal(seed, i):
    u1 = hash_uniform(seed, 2 * i) + 2.0**-54
    u2 = hash_uniform(seed, 2 * i + 1)
    return math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)


def fixture_frame(c, h, w):
    k, y, x = np.meshgrid(np.arange(c), np.arange(h), np.arange(w), indexing="ij")
    return 0.5 + 0.25 * np.sin(0.21 * x + 0.13 * y + k) + 0.15 * np.cos(0.17 * y - 0.11 * x + 2.0 * k)


def with_noise(f, sigma, seed):
    flat = f.ravel().copy()
    for i in range(flat.size):
        flat[i] += sigma * hash_normal(seed, i)
    return flat.reshape(f.shape)
