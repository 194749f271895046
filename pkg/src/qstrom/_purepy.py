"""Pure-Python twins of the compiled kernels in ``_native.pyx``."""


def powmod(base, exp, mod):
    return pow(base, exp, mod)


def dual_powmod(a, x, b, y, mod):
    return pow(a, x, mod) * pow(b, y, mod) % mod


def _pairs(buy_prices, buy_energy, sell_prices, sell_energy, volume):
    """Yield (i, j, step) segments pairing the top-`volume` buy units, lowest
    first, with the cheapest `volume` sell units."""
    skip = sum(buy_energy) - volume
    i = len(buy_energy) - 1
    while volume and skip >= buy_energy[i]:
        skip -= buy_energy[i]
        i -= 1
    if not volume:
        return
    b_left, j, s_left = buy_energy[i] - skip, 0, sell_energy[0]
    while volume:
        step = min(b_left, s_left, volume)
        yield i, j, step
        volume -= step
        b_left -= step
        s_left -= step
        if not b_left and volume:
            i -= 1
            b_left = buy_energy[i]
        if not s_left and volume:
            j += 1
            s_left = sell_energy[j]


def _feasible(buy_prices, buy_energy, sell_prices, sell_energy, volume):
    return all(buy_prices[i] >= sell_prices[j]
               for i, j, _ in _pairs(buy_prices, buy_energy, sell_prices, sell_energy, volume))


def match_sorted(buy_prices, buy_energy, sell_prices, sell_energy):
    lo, hi = 0, min(sum(buy_energy), sum(sell_energy))
    while lo < hi:
        mid = (lo + hi + 1) // 2
        if _feasible(buy_prices, buy_energy, sell_prices, sell_energy, mid):
            lo = mid
        else:
            hi = mid - 1
    return [(i, j, step, (buy_prices[i] + sell_prices[j]) // 2)
            for i, j, step in _pairs(buy_prices, buy_energy, sell_prices, sell_energy, lo)]
