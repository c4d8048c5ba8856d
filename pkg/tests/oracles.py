"""Arbitrary-precision reference implementations (mpmath, 50 digits).

Independent of torch: plain loops over Python lists.
"""

import mpmath as mp

mp.mp.dps = 50


def softmax(row, T=1):
    row = [mp.mpf(v) / mp.mpf(T) for v in row]
    m = max(row)
    ex = [mp.e ** (v - m) for v in row]
    s = mp.fsum(ex)
    return [e / s for e in ex]


def cross_entropy(probs_rows, labels):
    return mp.fsum(-mp.log(mp.mpf(r[y])) for r, y in zip(probs_rows, labels)) / len(labels)


def ce_logits(rows, labels):
    return mp.fsum(-mp.log(softmax(r)[y]) for r, y in zip(rows, labels)) / len(labels)


def kl(rows_a, rows_target, T=1, scale_T2=True):
    total = mp.mpf(0)
    for a, b in zip(rows_a, rows_target):
        q, p = softmax(a, T), softmax(b, T)
        total += mp.fsum(pi * (mp.log(pi) - mp.log(qi)) for pi, qi in zip(p, q))
    out = total / len(rows_a)
    return out * mp.mpf(T) ** 2 if scale_T2 else out


def soft_mse(rows_a, rows_b, T=1):
    total = mp.mpf(0)
    for a, b in zip(rows_a, rows_b):
        total += mp.fsum((x - y) ** 2 for x, y in zip(softmax(a, T), softmax(b, T)))
    return total / len(rows_a)


def logit_mse(rows_a, rows_b):
    total = mp.mpf(0)
    for a, b in zip(rows_a, rows_b):
        total += mp.fsum((mp.mpf(x) - mp.mpf(y)) ** 2 for x, y in zip(a, b)) / 2
    return total / len(rows_a)


def kd_objective(zs, zt, y, alpha, T):
    return (1 - mp.mpf(alpha)) * ce_logits(zs, y) + mp.mpf(alpha) * kl(zs, zt, T)


def center(rows):
    out = []
    for r in rows:
        m = mp.fsum(mp.mpf(v) for v in r) / len(r)
        out.append([mp.mpf(v) - m for v in r])
    return out


def sdb_terms(z_x, z_xt, y, z_pre, z_rand, omega, eta, t_dis, t_aug=None, centered=True):
    cls = ce_logits(z_x, y) + ce_logits(z_xt, y)
    dis = mp.mpf(omega) * (kl(z_x, z_xt, 1, scale_T2=False) - kl(z_x, z_pre, t_dis))
    main = soft_mse(z_xt, z_pre, t_dis)
    if t_aug is None:
        if centered:
            z_xt, z_pre, z_rand = center(z_xt), center(z_pre), center(z_rand)
        aug = logit_mse(z_xt, z_rand) - logit_mse(z_xt, z_pre)
    else:
        aug = kl(z_xt, z_rand, t_aug) - kl(z_xt, z_pre, t_aug)
    kp = main + mp.mpf(eta) * aug
    return dict(cls=cls, dis=dis, main=main, aug=aug, kp=kp, total=cls + dis + kp)
