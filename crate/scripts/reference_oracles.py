"""Straight-line numpy reference used to freeze golden values in the Rust tests.

Run: python3 scripts/reference_oracles.py
"""
import math

import numpy as np

LUMA = np.array([0.27, 0.67, 0.06])


def gauss_kernel(size, sigma):
    r = size // 2
    k = np.array([[math.exp(-(x * x + y * y) / (2 * sigma * sigma))
                   for x in range(-r, r + 1)] for y in range(-r, r + 1)])
    return k / k.sum()


def blur(plane, size, sigma):
    # half-sample symmetric padding ("d c b a | a b c d")
    r = size // 2
    k = gauss_kernel(size, sigma)
    h, w = plane.shape
    out = np.zeros_like(plane)

    def refl(i, n):
        m = i % (2 * n)
        return 2 * n - 1 - m if m >= n else m

    for y in range(h):
        for x in range(w):
            acc = 0.0
            for dy in range(-r, r + 1):
                for dx in range(-r, r + 1):
                    acc += k[dy + r, dx + r] * plane[refl(y + dy, h), refl(x + dx, w)]
            out[y, x] = acc
    return out


def white_balance(img, w):
    return np.clip(img * np.asarray(w), 0.0, 1.0)


def gamma_correct(img, g):
    return np.clip(np.power(img, g), 0.0, 1.0)


def contrast(img, alpha):
    lum = img @ LUMA
    enl = 0.5 * (1.0 - np.cos(math.pi * lum))
    scale = np.where(lum < 1e-6, 0.0, enl / np.maximum(lum, 1e-300))
    en = img * scale[..., None]
    return np.clip(alpha * en + (1 - alpha) * img, 0.0, 1.0)


def sharpen(img, lam):
    g = np.stack([blur(img[..., c], 5, 1.0) for c in range(3)], axis=-1)
    return np.clip(img + lam * (img - g), 0.0, 1.0)


def pipeline(img, p):
    x = white_balance(img, p[0:3])
    x = gamma_correct(x, p[3])
    x = contrast(x, p[4])
    return sharpen(x, p[5])


def test_card():
    img = np.zeros((4, 4, 3))
    for y in range(4):
        for x in range(4):
            idx = x + 4 * y
            img[y, x] = [(1 + idx) / 17, (16 - idx) / 17, ((3 * x + 5 * y) % 7 + 1) / 8]
    return img


def vif_image():
    img = np.zeros((64, 64, 3))
    for y in range(64):
        for x in range(64):
            v = (0.5 + 0.22 * math.sin(0.31 * x + 0.17 * y)
                 + 0.12 * math.cos(0.73 * x - 0.41 * y) * math.sin(0.05 * x * y / 7.0)
                 + 0.08 * math.sin(1.9 * x + 2.3 * y))
            img[y, x] = [v, 0.9 * v + 0.05, 0.8 * v + 0.1]
    return np.clip(img, 0, 1)


def halve(p, axis):
    """Even indices on an odd axis; means of adjacent pairs on an even axis."""
    p = np.moveaxis(p, axis, 0)
    if p.shape[0] % 2:
        out = p[::2]
    else:
        out = 0.5 * (p[0::2] + p[1::2])
    return np.moveaxis(out, 0, axis)


def decimate(p):
    return halve(halve(p, 0), 1)


def vif(ref, dist):
    sigma_nsq = 2.0 / 255.0 ** 2
    eps = 1e-10
    a = ref @ LUMA
    b = dist @ LUMA
    num = den = 0.0
    for scale in range(4):
        if scale > 0:
            a = decimate(blur(a, 9, 1.8))
            b = decimate(blur(b, 9, 1.8))
        mu1 = blur(a, 9, 1.8)
        mu2 = blur(b, 9, 1.8)
        s1 = blur(a * a, 9, 1.8) - mu1 * mu1
        s2 = blur(b * b, 9, 1.8) - mu2 * mu2
        s12 = blur(a * b, 9, 1.8) - mu1 * mu2
        s1 = np.maximum(s1, 0)
        s2 = np.maximum(s2, 0)
        g = s12 / (s1 + eps)
        sv = s2 - g * s12
        m = s1 < eps
        g[m] = 0
        sv[m] = s2[m]
        s1[m] = 0
        m = s2 < eps
        g[m] = 0
        sv[m] = 0
        m = g < 0
        sv[m] = s2[m]
        g[m] = 0
        sv = np.maximum(sv, eps)
        num += np.sum(np.log2(1 + g * g * s1 / (sv + sigma_nsq)))
        den += np.sum(np.log2(1 + s1 / sigma_nsq))
    return num / den


def softmax2(a, b):
    return math.exp(a) / (math.exp(a) + math.exp(b))


if __name__ == "__main__":
    np.set_printoptions(precision=17)
    print("contrast(0.1 gray, alpha=1) =", repr(contrast(np.full((1, 1, 3), 0.1), 1.0)[0, 0, 0]))
    edge = np.zeros((1, 7, 3))
    edge[0, 3:] = 0.5
    edge[0, :3] = 0.25
    print("sharpen edge 1x7 [.25,.25,.25,.5,.5,.5,.5] lambda=1 ->", repr(sharpen(edge, 1.0)[0, :, 0]))
    card = test_card()
    out = pipeline(card, [1.2, 1.0, 0.9, 0.8, 0.5, 1.0])
    print("test card golden:")
    for v in out.reshape(-1):
        print("    %.17e," % v)
    ref = vif_image()
    dist = 0.5 * (ref - 0.5) + 0.5
    print("vif(card64, 0.5 contrast) =", repr(vif(ref, dist)))
    print("vif(card64, card64) =", repr(vif(ref, ref)))
    print("g(0.3, 0.7) =", repr(softmax2(0.3, 0.7)))
    print("g(1, 0) =", repr(softmax2(1.0, 0.0)))
    print("-ln g(1,0) =", repr(-math.log(softmax2(1.0, 0.0))))
    print("ehc(0.8; 0.8, 0.1) =", repr(-math.log(math.exp(0.8) / (math.exp(0.8) + math.exp(0.1)))))
    print("ssim const(0.5, 0.25) =", repr((2 * 0.5 * 0.25 + 1e-4) / (0.25 + 0.0625 + 1e-4)))
