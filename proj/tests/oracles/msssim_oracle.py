"""Reference MS-SSIM (numpy/scipy) for the frozen values in test_metrics.cpp."""
import numpy as np
from scipy.signal import correlate2d

from fixtures import fixture_frame, with_noise

WEIGHTS = np.array([0.0448, 0.2856, 0.3001, 0.2363, 0.1333])


def gaussian(n=11, sigma=1.5):
    x = np.arange(n) - n // 2
    g = np.exp(-(x**2) / (2 * sigma**2))
    return g / g.sum()


def ssim_parts(x, y):
    g = gaussian()
    win = np.outer(g, g)
    f = lambda a: correlate2d(a, win, mode="valid")
    c1, c2 = 0.01**2, 0.03**2
    mx, my = f(x), f(y)
    sxx = f(x * x) - mx**2
    syy = f(y * y) - my**2
    sxy = f(x * y) - mx * my
    cs = (2 * sxy + c2) / (sxx + syy + c2)
    lum = (2 * mx * my + c1) / (mx**2 + my**2 + c1)
    return cs.mean(), (lum * cs).mean()


def pool(a):
    h, w = a.shape[0] // 2 * 2, a.shape[1] // 2 * 2
    return a[:h, :w].reshape(h // 2, 2, w // 2, 2).mean(axis=(1, 3))


def msssim_channel(x, y):
    side = min(x.shape)
    m = 1
    while m < 5 and side // (2**m) >= 16:
        m += 1
    w = WEIGHTS[:m] / WEIGHTS[:m].sum()
    vals = []
    for j in range(m):
        cs, ss = ssim_parts(x, y)
        vals.append(max(0.0, cs if j + 1 < m else ss))
        x, y = pool(x), pool(y)
    return float(np.prod(np.array(vals) ** w))


def msssim(a, b):
    return float(np.mean([msssim_channel(a[c], b[c]) for c in range(a.shape[0])]))


if __name__ == "__main__":
    ref = fixture_frame(3, 64, 64)
    for sigma in (0.01, 0.05, 0.1):
        print(f"64x64 sigma={sigma}: {msssim(with_noise(ref, sigma, 7), ref):.12f}")
    ref2 = fixture_frame(3, 40, 36)
    print(f"40x36 sigma=0.05: {msssim(with_noise(ref2, 0.05, 9), ref2):.12f}")
    ref3 = fixture_frame(1, 160, 176)
    print(f"1x160x176 sigma=0.05: {msssim(with_noise(ref3, 0.05, 11), ref3):.12f}")
    print(f"64x64 offset 0.1: {msssim(ref + 0.1, ref):.12f}")
